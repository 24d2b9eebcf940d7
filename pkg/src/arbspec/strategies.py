"""Trading strategies, discrete stochastic integration and explicit arbitrages.

A strategy stores, for every path and step ``k``, the position ``h[:, k]``
held over ``(t_k, t_{k+1}]``. Positions are computed from data up to and
including ``t_k``, so gains are left-point Riemann sums
``G_{k+1} = G_k + h_k^T (S_{k+1} - S_k)``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

from .errors import ValidationError

TOL_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class Strategy:
    """Predictable positions with a claimed admissibility floor.

    Attributes
    ----------
    h : ndarray, shape (P, n, d)
        Position held over each step.
    label : str
    admissibility_floor : float
        Claimed ``a >= 0`` with ``G >= -a`` on every path.
    """

    h: np.ndarray
    label: str
    admissibility_floor: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 3:
            raise ValidationError("positions must have shape (n_paths, n_steps, d)")
        if not np.all(np.isfinite(h)):
            raise ValidationError("positions must be finite")
        if self.admissibility_floor < 0:
            raise ValidationError("admissibility floor must be nonnegative")
        object.__setattr__(self, "h", h)

    def scaled(self, factor):
        """``factor * H`` with the floor scaled alike."""
        return Strategy(factor * self.h, f"{factor:g}*{self.label}",
                        abs(factor) * self.admissibility_floor)


@dataclass(frozen=True, eq=False)
class GainsReport:
    """Gains process ``G(H)`` of a strategy along an ensemble.

    Attributes
    ----------
    g : ndarray, shape (P, n + 1)
        ``g[:, 0] = 0``.
    floor : float
        Claimed admissibility floor.
    floor_violations : int
        Paths with ``min_t G_t < -floor - tol_floor``.
    tol_floor : float
    label : str
    """

    g: np.ndarray
    floor: float
    floor_violations: int
    tol_floor: float
    label: str = ""

    @property
    def n_paths(self):
        return self.g.shape[0]

    @property
    def terminal(self):
        return self.g[:, -1]

    @property
    def mean(self):
        return float(np.mean(self.terminal))

    @property
    def se(self):
        return float(np.std(self.terminal, ddof=1) / np.sqrt(self.n_paths))

    @property
    def min_gain(self):
        return float(self.g.min())

    def prob_above(self, eps=0.0):
        """Estimate of ``P(G_T > eps)``."""
        return float(np.mean(self.terminal > eps))

    def prob_at_least(self, level):
        """Estimate of ``P(G_T >= level)``."""
        return float(np.mean(self.terminal >= level))

    def quantiles(self, qs=(0.1, 0.5, 0.9)):
        return np.quantile(self.terminal, qs)

    def write_csv(self, path, eps=0.0):
        """Per-path terminal gains followed by a summary row."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["path", "G_T"])
            for i, v in enumerate(self.terminal):
                wr.writerow([i, f"{v:.10g}"])
            wr.writerow(["summary", "mean", "SE", f"P(G_T>{eps:g})", "P(G_T>=0)",
                         "floor_violations"])
            wr.writerow(["summary", f"{self.mean:.10g}", f"{self.se:.10g}",
                         f"{self.prob_above(eps):.6g}", f"{self.prob_at_least(0.0):.6g}",
                         self.floor_violations])


def integrate(strategy, bundle, tol_floor=TOL_FLOOR):
    """Left-point stochastic integral ``G(H) = H . S`` along every path."""
    h = strategy.h
    if h.shape != (bundle.n_paths, bundle.n_steps, bundle.d):
        raise ValidationError(
            f"strategy shape {h.shape} does not match paths "
            f"{(bundle.n_paths, bundle.n_steps, bundle.d)}")
    step = np.einsum("pki,pki->pk", h, bundle.increments)
    g = np.zeros((bundle.n_paths, bundle.n_steps + 1))
    np.cumsum(step, axis=1, out=g[:, 1:])
    bad = int(np.sum(g.min(axis=1) < -strategy.admissibility_floor - tol_floor))
    return GainsReport(g, strategy.admissibility_floor, bad, tol_floor, strategy.label)


def monotonicity_violations(g, tol):
    """Mean over paths of the fraction of steps with ``dG < -tol``."""
    dg = np.diff(np.asarray(g), axis=1)
    return float(np.mean(np.mean(dg < -np.asarray(tol), axis=1)))


# -- constructors ------------------------------------------------------------


def market_price_of_risk_strategy(chars, label="lambda", floor=0.0):
    """``H = lambda`` on ``(0, T]``."""
    return Strategy(np.array(chars.lam), label, floor)


def band_occupation_constant(c=1.0):
    """Limit of ``E[G_T] / E[L_T]`` for the band strategy with width ``c sqrt(dt)``.

    A step starting at ``x = u sqrt(dt)`` inside the band gains
    ``E|x + dW| - |x|`` on average. Integrating over the band gives
    ``int_{-c}^{c} (E|u + Z| - |u|) du`` per unit of local time, which tends
    to 1 as ``c`` grows.
    """
    def excess(u):
        return u * (2.0 * norm.cdf(u) - 1.0) + 2.0 * norm.pdf(u) - abs(u)

    return quad(excess, -c, c)[0]


def increasing_profit_strategy(bundle, eps_zero=None, c=1.0):
    """``H = 1`` while the auxiliary process ``N`` is within ``eps_zero`` of 0.

    Parameters
    ----------
    bundle : PathBundle
        Paths of ``|N|`` with ``N`` in ``aux['N']``.
    eps_zero : float or ndarray, optional
        Band width; defaults to ``c * sqrt(dt)`` per step.
    """
    if "N" not in bundle.aux:
        raise ValidationError("increasing-profit strategy needs the auxiliary process 'N'")
    if eps_zero is None:
        eps_zero = c * np.sqrt(bundle.grid.dt)
    eps = np.broadcast_to(np.asarray(eps_zero, float), (bundle.n_steps,))
    if np.any(eps <= 0):
        raise ValidationError("eps_zero must be positive")
    n_proc = bundle.aux["N"][:, :-1]
    h = (np.abs(n_proc) <= eps[None, :]).astype(float)[..., None]
    return Strategy(h, "1{N=0}", 0.0)


def van_der_corput(m, base=2):
    """First ``m`` terms of the van der Corput sequence in ``(0, 1)``."""
    out = np.empty(m)
    for i in range(m):
        k, denom, x = i + 1, 1.0, 0.0
        while k:
            k, r = divmod(k, base)
            denom *= base
            x += r / denom
        out[i] = x
    return out


def immediate_arbitrage_combination(h_strong, grid, tau_est, m, thetas=None):
    """``sum_n w_n H 1_{(tau, (tau + theta_n T) ^ T]}`` with ``w_n`` proportional to ``2^-n``.

    The weights are normalized to sum to one, so a single term with
    ``theta_1 = 1`` returns ``h_strong`` restricted to ``(tau, T]``.

    Parameters
    ----------
    h_strong : Strategy
        Zero-admissible strategy.
    grid : TimeGrid
    tau_est : float or ndarray, shape (P,)
        Start of the combination, per path.
    m : int
        Number of terms.
    thetas : sequence of float, optional
        Window lengths as fractions of ``T``; defaults to van der Corput.
    """
    if m < 1:
        raise ValidationError("m must be at least 1")
    if h_strong.admissibility_floor != 0:
        raise ValidationError("the combined strategy must be zero-admissible")
    thetas = van_der_corput(m) if thetas is None else np.asarray(thetas, float)[:m]
    if thetas.size != m or np.any(thetas <= 0) or np.any(thetas > 1):
        raise ValidationError("need m window lengths in (0, 1]")
    p = h_strong.h.shape[0]
    tau = np.broadcast_to(np.asarray(tau_est, float), (p,))
    left, right = grid.times[:-1], grid.times[1:]
    weights = 2.0 ** -np.arange(1, m + 1)
    weights /= weights.sum()
    mult = np.zeros((p, grid.n_steps))
    started = left[None, :] >= tau[:, None]
    for w, th in zip(weights, thetas):
        end = np.minimum(tau + th * grid.horizon, grid.horizon)
        mult += w * (started & (right[None, :] <= end[:, None]))
    return Strategy(h_strong.h * mult[..., None], f"combination[{h_strong.label}, m={m}]", 0.0)


@dataclass(frozen=True, eq=False)
class ProfitSequence:
    """Stopped strategies ``theta^n`` with their gains."""

    levels: tuple
    strategies: tuple
    reports: tuple
    reached: np.ndarray

    def medians(self):
        return np.array([np.median(r.terminal) for r in self.reports])

    def quantiles(self, qs=(0.1, 0.5, 0.9)):
        return np.array([r.quantiles(qs) for r in self.reports])


def _first_index(mask):
    """First ``True`` column per row, or the last column index if none."""
    n = mask.shape[1] - 1
    return np.where(mask.any(axis=1), mask.argmax(axis=1), n)


def unbounded_profit_sequence(chars, zhat, bundle, levels=(1, 2, 4, 8), tol_floor=TOL_FLOOR):
    """``theta^n = 1_{(0, tau_n]} lambda / Zhat`` with ``tau_n`` the first time ``Khat >= n``.

    Each ``theta^n`` is 1-admissible. A warning is issued when ``Khat``
    fails to reach the largest level on more than half the paths.
    """
    levels = tuple(float(n) for n in levels)
    if not levels or min(levels) <= 0:
        raise ValidationError("levels must be positive")
    z = zhat.z[:, :-1]
    alive = z > 0
    inv = np.where(alive, 1.0 / np.where(alive, z, 1.0), 0.0)
    steps = np.arange(bundle.n_steps)[None, :]
    strategies, reports, reached = [], [], []
    for n in levels:
        hit = chars.khat >= n
        stop = _first_index(hit)
        reached.append(float(np.mean(hit.any(axis=1))))
        active = (steps < stop[:, None]) & alive
        h = chars.lam * (inv * active)[..., None]
        s = Strategy(h, f"theta^{n:g}", 1.0)
        strategies.append(s)
        reports.append(integrate(s, bundle, tol_floor))
    reached = np.array(reached)
    if reached[-1] < 0.5:
        warnings.warn(f"Khat reaches {levels[-1]:g} on only {reached[-1]:.1%} of paths; "
                      "divergence may be too slow for this grid", RuntimeWarning, stacklevel=2)
    return ProfitSequence(levels, tuple(strategies), tuple(reports), reached)


@dataclass(frozen=True, eq=False)
class ApproximateArbitrage:
    """``H^n`` together with its gains and stopping indices."""

    strategy: Strategy
    report: GainsReport
    sigma_idx: np.ndarray
    rho_idx: np.ndarray
    k_const: float
    n: float

    def prob_nonnegative(self):
        return self.report.prob_at_least(0.0)

    def prob_target(self, rel=0.05):
        """``P(|G_T - (K - 1)| <= rel (K - 1))``."""
        target = self.k_const - 1.0
        return float(np.mean(np.abs(self.report.terminal - target) <= rel * target))


def approximate_arbitrage_sequence(zhat, chars, bundle, k_const, n, tol_floor=TOL_FLOOR):
    """``H^n = 1_[sigma_n, rho_n] (Zhat / Zhat_sigma_n)^-1 lambda``.

    ``sigma_n`` is the first grid time with ``Zhat <= 1/n`` and ``rho_n``
    the first later time with ``Zhat <= Zhat_sigma_n / K``, both capped at
    ``T``. On paths where both are hit the gain is ``K - 1`` up to
    discretization error.
    """
    if not k_const > 1:
        raise ValidationError("K must exceed 1")
    if not n > 0:
        raise ValidationError("n must be positive")
    z = zhat.z
    nsteps = bundle.n_steps
    sig_hit = z <= 1.0 / n
    if not sig_hit.any():
        raise ValidationError(f"Zhat never reaches 1/{n:g} on any path")
    sig = _first_index(sig_hit)
    rows = np.arange(bundle.n_paths)
    z_sig = z[rows, sig]
    idx = np.arange(nsteps + 1)[None, :]
    rho = _first_index((idx >= sig[:, None]) & (z <= z_sig[:, None] / k_const))
    left = z[:, :-1]
    steps = idx[:, :-1]
    active = (steps >= sig[:, None]) & (steps < rho[:, None]) & (left > 0)
    scale = np.where(active, z_sig[:, None] / np.where(left > 0, left, 1.0), 0.0)
    h = chars.lam * scale[..., None]
    s = Strategy(h, f"H^{n:g}(K={k_const:g})", 1.0)
    return ApproximateArbitrage(s, integrate(s, bundle, tol_floor), sig, rho, float(k_const), float(n))


def bessel_value(s, ttm):
    """``L = E[1/S_T | S_t = s] = (2 Phi(s / sqrt(T - t)) - 1) / s``; ``1/s`` at ``T``."""
    s = np.asarray(s, float)
    ttm = np.asarray(ttm, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = s / np.sqrt(ttm)
        val = np.where(ttm > 0, (2.0 * norm.cdf(x) - 1.0) / s, 1.0 / s)
    return val


def bessel_sensitivity(s, ttm):
    """``dL/ds = -(2 Phi(x) - 1) / s^2 + 2 phi(x) / (s sqrt(T - t))`` with ``x = s / sqrt(T - t)``."""
    s = np.asarray(s, float)
    ttm = np.asarray(ttm, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(ttm)
        x = s / r
        val = -(2.0 * norm.cdf(x) - 1.0) / s**2 + 2.0 * norm.pdf(x) / (s * r)
    return np.where(ttm > 0, val, -1.0 / s**2)


@dataclass(frozen=True, eq=False)
class BesselArbitrage:
    """Replication of the unit bond from ``E[Zhat_T]``."""

    strategy: Strategy
    report: GainsReport
    value: np.ndarray
    initial_cost: float


def bessel_arbitrage(bundle, tol_floor=TOL_FLOOR):
    """``phi = L + theta S`` for the power-volatility model with exponent ``-1``.

    ``theta = dL/ds`` is the Brownian integrand of ``L`` because the
    volatility of ``S`` is 1. The strategy is ``E[Zhat_T]``-admissible and
    its terminal gain is ``1 - E[Zhat_T]``.
    """
    spec = bundle.spec
    if spec is None or spec.kind != "PowerVol" or spec.mu_exp != -1:
        raise ValidationError("bessel_arbitrage needs PowerVol with mu_exp = -1")
    s = bundle.prices[..., 0]
    ttm = bundle.grid.ttm
    left = s[:, :-1]
    lval = bessel_value(left, ttm[None, :-1])
    theta = bessel_sensitivity(left, ttm[None, :-1])
    phi = lval + theta * left
    cost = float(bessel_value(spec.s0, bundle.grid.horizon))
    value = bessel_value(s, ttm[None, :]) * s
    strat = Strategy(phi[..., None], "bessel-replication", cost)
    return BesselArbitrage(strat, integrate(strat, bundle, tol_floor), value, cost)
