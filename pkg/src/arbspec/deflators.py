"""Martingale deflators: construction, composition and statistical tests."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .rng import STREAM_ORTHOGONAL, brownian

K_CAP = 50.0
Z_FLOOR = 1e-12
N_WINDOWS = 8
MIN_PATHS = 1000
ALPHA = 0.05
SUPER_Z = 3.0


@dataclass(frozen=True, eq=False)
class DeflatorPath:
    """Ensemble of a candidate deflator.

    Attributes
    ----------
    z : ndarray, shape (P, n + 1)
        Nonnegative with ``z[:, 0] = 1``; identically zero after absorption.
    hit_zero_at : ndarray of int, shape (P,)
        First absorbed step, or ``-1``.
    products : ndarray or None, shape (P, n + 1, d)
        ``z * S^i`` when prices were supplied.
    """

    z: np.ndarray
    hit_zero_at: np.ndarray
    products: np.ndarray | None = None

    @property
    def n_paths(self):
        return self.z.shape[0]

    @property
    def terminal(self):
        return self.z[:, -1]

    @property
    def absorbed(self):
        return self.hit_zero_at >= 0

    def with_products(self, prices):
        return DeflatorPath(self.z, self.hit_zero_at, self.z[..., None] * prices)


def _absorb(log_z, khat, k_cap, z_floor):
    """Exponentiate in place and absorb at 0 from the first breach of either threshold."""
    with np.errstate(over="ignore"):
        z = np.exp(log_z, out=log_z)
    breach = khat > k_cap
    breach |= z < z_floor
    breach |= ~np.isfinite(z)
    hit = np.where(breach.any(axis=1), breach.argmax(axis=1), -1)
    del breach
    for i in np.flatnonzero(hit >= 0):
        z[i, hit[i]:] = 0.0
    return z, hit


def martingale_increments(chars, bundle):
    """``dM = dS - a dt`` on every step, shape ``(P, n, d)``."""
    return bundle.increments - chars.a * bundle.grid.dt[None, :, None]


def log_deflator(chars, bundle, lambda_slope=None):
    """Unabsorbed ``log Zhat`` along the paths, shape ``(P, n + 1)``.

    ``log Zhat`` accumulates ``-lambda^T dM - lambda^T c lambda dt / 2``.
    When ``lambda_slope`` (``d lambda / d s`` per step, one-dimensional
    models only) is given, the second-order Ito-Taylor term
    ``-(slope / 2) (dM^2 - c dt)`` is added to every increment.
    """
    if chars.khat.shape != (bundle.n_paths, bundle.n_steps + 1):
        raise ValidationError("characteristics and paths are not aligned")
    dm = martingale_increments(chars, bundle)
    step = -np.einsum("pki,pki->pk", chars.lam, dm)
    step -= 0.5 * chars.khat_increment
    if lambda_slope is not None:
        if bundle.d != 1:
            raise ValidationError("the Ito-Taylor correction is one-dimensional")
        dt = bundle.grid.dt[None, :]
        step -= 0.5 * lambda_slope * (dm[..., 0] ** 2 - chars.c[..., 0, 0] * dt)
    del dm
    log_z = np.zeros((bundle.n_paths, bundle.n_steps + 1))
    np.cumsum(step, axis=1, out=log_z[:, 1:])
    return log_z


def minimal_deflator(chars, bundle, k_cap=K_CAP, z_floor=Z_FLOOR, lambda_slope=None,
                     with_products=False):
    """Minimal deflator ``Zhat = E(-lambda . M)`` along the paths.

    The path is absorbed at 0 once ``Khat`` exceeds ``k_cap`` or ``Zhat``
    drops below ``z_floor``.

    Parameters
    ----------
    chars : CharacteristicsPath
    bundle : PathBundle
    k_cap, z_floor : float
        Absorption thresholds.
    lambda_slope : ndarray, optional
        See :func:`log_deflator`.
    with_products : bool
        Also store ``Zhat * S``.
    """
    log_z = log_deflator(chars, bundle, lambda_slope)
    z, hit = _absorb(log_z, chars.khat, k_cap, z_floor)
    out = DeflatorPath(z, hit)
    return out.with_products(bundle.prices) if with_products else out


def realized_tradeoff(log_z):
    """Running realized quadratic variation of ``log Z``, shape ``(P, n + 1)``.

    For ``Z = E(-lambda . M)`` this estimates ``Khat`` without reference to
    the characteristics, which makes it usable after a change of numeraire.
    """
    inc = np.diff(log_z, axis=1) ** 2
    out = np.zeros(log_z.shape)
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def compose_deflator(zhat, theta_n, grid, master_seed, prices=None):
    """``Zhat E(N)`` with ``N = theta_n B`` for a Brownian motion ``B`` independent of the prices.

    ``B`` is drawn from a separate random stream keyed by ``master_seed``.
    """
    if not np.isfinite(theta_n):
        raise ValidationError("theta_n must be finite")
    if theta_n == 0:
        z = zhat.z.copy()
    else:
        b = brownian(grid, zhat.n_paths, master_seed, dim=1, stream=STREAM_ORTHOGONAL)[..., 0]
        z = zhat.z * np.exp(theta_n * b - 0.5 * theta_n**2 * grid.times[None, :])
    out = DeflatorPath(z, zhat.hit_zero_at.copy())
    return out if prices is None else out.with_products(prices)


# -- statistical tests -----------------------------------------------------


@dataclass(frozen=True)
class MartingaleVerdict:
    """Outcome of :func:`increment_test`."""

    kind: str
    mean_terminal: float
    se_terminal: float
    increment_test_pvalue: float
    window_means: np.ndarray
    window_ses: np.ndarray

    @property
    def initial_gap_in_se(self):
        """``(1 - mean_terminal) / se_terminal`` for processes started at 1."""
        return np.inf if self.se_terminal == 0 else (1.0 - self.mean_terminal) / self.se_terminal


def window_edges(grid, n_windows=N_WINDOWS):
    """Grid indices splitting ``[0, T]`` into ``n_windows`` equal time windows."""
    idx = [grid.index_at(grid.horizon * j / n_windows) for j in range(n_windows + 1)]
    idx[-1] = grid.n_steps
    return np.array(idx)


def increment_test(x, grid, n_windows=N_WINDOWS, alpha=ALPHA, min_paths=MIN_PATHS):
    """Test whether an ensemble has mean-zero increments.

    The horizon is split into ``n_windows`` windows; each window's mean
    increment is compared to 0 through its standard error and the
    two-sided p-values are combined with a Bonferroni correction. When the
    combined test rejects and no window shows a significantly positive mean,
    the process is classified ``'supermartingale-strict'``.

    Parameters
    ----------
    x : ndarray, shape (P, n + 1)
    grid : TimeGrid
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != grid.n_steps + 1:
        raise ValidationError("process and grid are not aligned")
    p = x.shape[0]
    if p < min_paths:
        raise ValidationError(f"increment test needs at least {min_paths} paths, got {p}")
    with np.errstate(invalid="ignore"):
        mean_t = float(np.mean(x[:, -1]))
        se_t = float(np.std(x[:, -1], ddof=1) / np.sqrt(p))
    edges = window_edges(grid, n_windows)
    with np.errstate(invalid="ignore"):
        inc = x[:, edges[1:]] - x[:, edges[:-1]]
        means = inc.mean(axis=0)
        ses = inc.std(axis=0, ddof=1) / np.sqrt(p)
    if np.all(ses == 0):
        kind = "martingale-consistent" if np.all(means == 0) else "rejected"
        return MartingaleVerdict(kind, mean_t, se_t, 1.0 if kind.startswith("m") else 0.0,
                                 means, ses)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(ses > 0, means / np.where(ses > 0, ses, 1.0),
                      np.where(means == 0, 0.0, np.sign(means) * np.inf))
    pvals = 2.0 * norm.sf(np.abs(zs))
    pval = float(min(1.0, n_windows * pvals.min()))
    if pval >= alpha:
        kind = "martingale-consistent"
    elif np.all(zs <= SUPER_Z) and means.sum() < 0:
        kind = "supermartingale-strict"
    else:
        kind = "rejected"
    return MartingaleVerdict(kind, mean_t, se_t, pval, means, ses)


@dataclass(frozen=True)
class TradabilityResult:
    """Per-path ``max_t |V_t(1, lambda/Zhat) - 1/Zhat_t|`` on the pre-absorption window."""

    max_error: np.ndarray
    terminal_inverse: np.ndarray
    truncated: np.ndarray

    @property
    def rms(self):
        return float(np.sqrt(np.mean(self.max_error**2)))

    @property
    def relative_rms(self):
        return self.rms / float(np.median(self.terminal_inverse))


def tradability_check(zhat, chars, bundle):
    """Compare the wealth of ``theta = lambda / Zhat`` with ``1 / Zhat``.

    Paths absorbed before ``T`` are checked up to the step before absorption
    and flagged in ``truncated``.
    """
    z = zhat.z
    n = bundle.n_steps
    hit = zhat.hit_zero_at
    end = np.where(hit >= 0, hit - 1, n)
    steps = np.arange(n + 1)[None, :]
    alive = steps <= end[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(alive, 1.0 / np.where(z > 0, z, 1.0), np.nan)
    theta = chars.lam / np.where(alive[:, :-1], z[:, :-1], 1.0)[..., None]
    theta = np.where(alive[:, :-1, None], theta, 0.0)
    gains = np.einsum("pki,pki->pk", theta, bundle.increments)
    v = np.zeros((bundle.n_paths, n + 1))
    np.cumsum(gains, axis=1, out=v[:, 1:])
    v += 1.0
    err = np.where(alive, np.abs(v - inv), 0.0)
    last = inv[np.arange(bundle.n_paths), np.maximum(end, 0)]
    return TradabilityResult(err.max(axis=1), last, end < n)


@dataclass(frozen=True, eq=False)
class NumeraireResult:
    """Transformed market ``(S/V, 1/V)`` and deflator ``Z V``."""

    bundle: object
    deflator: DeflatorPath | None
    flagged: np.ndarray


def numeraire_change(bundle, value, deflator=None, floor=0.0):
    """Express the market in units of the strictly positive value process ``value``.

    Parameters
    ----------
    bundle : PathBundle
    value : ndarray, shape (P, n + 1)
        Portfolio value ``V``; paths where it is not finite and above
        ``floor`` are flagged.
    deflator : DeflatorPath, optional
        Transformed to ``Z V``.
    """
    v = np.asarray(value, dtype=float)
    if v.shape != (bundle.n_paths, bundle.n_steps + 1):
        raise ValidationError("value process is not aligned with the paths")
    ok = np.isfinite(v) & (v > floor)
    flagged = ~np.all(ok, axis=1)
    safe = np.where(ok, v, np.nan)
    prices = np.concatenate([bundle.prices / safe[..., None], (1.0 / safe)[..., None]], axis=2)
    new = bundle.with_prices(prices)
    out = None
    if deflator is not None:
        zv = deflator.z * v
        out = DeflatorPath(zv, deflator.hit_zero_at.copy()).with_products(prices)
    return NumeraireResult(new, out, flagged)


def product_rule_residual(z, g):
    """``Z_T G_T - Z_0 G_0 - (sum Z dG + sum G dZ + sum dZ dG)`` per path."""
    dz, dg = np.diff(z, axis=1), np.diff(g, axis=1)
    rhs = np.sum(z[:, :-1] * dg + g[:, :-1] * dz + dz * dg, axis=1)
    return z[:, -1] * g[:, -1] - z[:, 0] * g[:, 0] - rhs


def write_verdicts_csv(path, rows):
    """CSV with columns ``model, process, kind, mean_terminal, SE, p-value``.

    ``rows`` is an iterable of ``(model, process, MartingaleVerdict)``.
    """
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["model", "process", "kind", "mean_terminal", "SE", "p-value"])
        for model, proc, v in rows:
            wr.writerow([model, proc, v.kind, f"{v.mean_terminal:.10g}",
                         f"{v.se_terminal:.10g}", f"{v.increment_test_pvalue:.6g}"])
