"""Semimartingale characteristics along simulated paths.

Evaluates the drift rate ``a`` and diffusion rate ``c`` (relative to
``dB = dt``), splits ``a = c lambda + nu``, accumulates the mean-variance
trade-off ``Khat``, tests empirically for a drift singular to ``d<S>`` and
locates blow-ups of ``Khat`` through coupled grid refinement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import linalg
from .errors import ValidationError

RHO_DIV = 1.8
CONSECUTIVE = 2
TIME_BINS = 8
STATE_BINS = 16
MIN_BIN_COUNT = 30
NU_GATE_PVALUE = 1e-3
NU_NOISE_Z = 3.0
KHAT_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class CharacteristicsPath:
    """Per-path, per-step characteristics of an ensemble.

    Attributes
    ----------
    a, lam, nu : ndarray, shape (P, n, d)
    c : ndarray, shape (P, n, d, d)
    khat_increment : ndarray, shape (P, n)
    khat : ndarray, shape (P, n + 1)
        Running trade-off, ``khat[:, 0] = 0``.
    """

    a: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    khat_increment: np.ndarray
    khat: np.ndarray
    grid: object = None

    @property
    def n_paths(self):
        return self.khat.shape[0]


def _accumulate(inc):
    out = np.zeros((inc.shape[0], inc.shape[1] + 1))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def extract(spec, bundle):
    """Closed-form characteristics of ``spec`` along the paths of ``bundle``.

    Raises
    ------
    StructuralModelError
        If the model has no closed-form characteristics; use
        :func:`empirical_nu_test` instead.
    """
    a, c = spec.characteristics(bundle.grid, bundle.prices, bundle.aux)
    lam, nu = linalg.decompose(a, c)
    inc = np.maximum(linalg.quadratic_form(lam, c), 0.0) * bundle.grid.dt[None, :]
    return CharacteristicsPath(a, c, lam, nu, inc, _accumulate(inc), bundle.grid)


def accumulate_khat(lam, c, grid):
    """Running ``int lambda^T c lambda dt`` for arbitrary ``lambda``."""
    inc = np.maximum(linalg.quadratic_form(lam, c), 0.0) * grid.dt[None, :]
    return _accumulate(inc)


# -- empirical singular-drift test ----------------------------------------


@dataclass(frozen=True)
class NuTestLevel:
    """Outcome of the binned regression on one grid."""

    n_steps: int
    residual_fraction: float
    bins_used: int
    bins_total: int
    drift_significant: bool

    @property
    def coverage(self):
        return self.bins_used / self.bins_total


@dataclass(frozen=True)
class NuTestResult:
    """Residual fractions across refinement levels, coarse to fine."""

    levels: tuple

    @property
    def fractions(self):
        return np.array([lv.residual_fraction for lv in self.levels])

    @property
    def finest(self):
        return self.levels[-1].residual_fraction


def _bin_sums(bundle, comp):
    grid = bundle.grid
    x = bundle.prices[:, :-1, comp]
    ds = np.diff(bundle.prices[:, :, comp], axis=1)
    times = grid.times[:-1]
    tb = np.minimum((times / grid.horizon * TIME_BINS).astype(int), TIME_BINS - 1)
    rows = []
    for b in range(TIME_BINS):
        cols = np.flatnonzero(tb == b)
        if cols.size == 0:
            continue
        xs = x[:, cols].ravel()
        dss = ds[:, cols].ravel()
        dts = np.broadcast_to(grid.dt[cols], x[:, cols].shape).ravel()
        edges = np.quantile(xs, np.linspace(0, 1, STATE_BINS + 1)[1:-1])
        sb = np.searchsorted(edges, xs, side="right")
        count = np.bincount(sb, minlength=STATE_BINS)
        drift = np.bincount(sb, weights=dss, minlength=STATE_BINS)
        qv = np.bincount(sb, weights=dss**2, minlength=STATE_BINS)
        tsum = np.bincount(sb, weights=dts, minlength=STATE_BINS)
        state = np.bincount(sb, weights=xs, minlength=STATE_BINS)
        for s in range(STATE_BINS):
            rows.append((b, count[s], drift[s], qv[s], tsum[s],
                         state[s] / max(count[s], 1)))
    return np.array(rows, dtype=float).reshape(-1, 6)


def residual_fraction(bundle):
    """Fraction of the drift variation not explained by an absolutely continuous drift.

    Steps are binned by time (8 bins) and by state quantile (16 bins per time
    bin). In each bin the drift increment ``sum dS`` and the realized
    quadratic-variation increment ``sum dS^2`` are formed. Within a time bin
    the bin drifts are regressed on the absolutely continuous family
    ``{sum dt, sum s dt}`` (a drift rate affine in the state ``s``), weighted
    by the noise variance, which ``sum dS^2`` estimates. The unexplained part is the noise-trimmed absolute residual
    ``sum max(|r_b| - z sd_b, 0)`` divided by the noise-trimmed absolute drift.
    If a chi-square test finds no drift at all, the fraction is 0.
    """
    rows = np.concatenate([_bin_sums(bundle, i) for i in range(bundle.d)])
    total_bins = rows.shape[0]
    ok = rows[:, 1] >= MIN_BIN_COUNT
    ok &= rows[:, 3] > 0
    rows = rows[ok]
    used = rows.shape[0]
    if used == 0:
        return NuTestLevel(bundle.n_steps, 0.0, 0, total_bins, False)
    drift, qv, tsum, state = rows[:, 2], rows[:, 3], rows[:, 4], rows[:, 5]
    sd = np.sqrt(qv)
    stat = float(np.sum(drift**2 / qv))
    significant = chi2.sf(stat, used) < NU_GATE_PVALUE
    if not significant:
        return NuTestLevel(bundle.n_steps, 0.0, used, total_bins, False)
    resid = np.empty_like(drift)
    for b in np.unique(rows[:, 0]):
        m = rows[:, 0] == b
        feats = np.column_stack([tsum[m], tsum[m] * state[m]])
        wts = 1.0 / sd[m]
        coef, *_ = np.linalg.lstsq(feats * wts[:, None], drift[m] * wts, rcond=None)
        resid[m] = drift[m] - feats @ coef
    unexplained = np.sum(np.maximum(np.abs(resid) - NU_NOISE_Z * sd, 0.0))
    total = np.sum(np.maximum(np.abs(drift) - NU_NOISE_Z * sd, 0.0))
    frac = 0.0 if total <= 0 else min(1.0, float(unexplained / total))
    return NuTestLevel(bundle.n_steps, frac, used, total_bins, True)


def empirical_nu_test(bundles):
    """Run :func:`residual_fraction` on bundles of increasing resolution.

    Parameters
    ----------
    bundles : sequence of PathBundle
        Same model, at least two refinement levels, coarse to fine.
    """
    bundles = list(bundles)
    if len(bundles) < 2:
        raise ValidationError("the nu-test needs at least two refinement levels")
    return NuTestResult(tuple(residual_fraction(b) for b in bundles))


# -- divergence detection --------------------------------------------------


@dataclass(frozen=True)
class DivergenceVerdict:
    """Where, if anywhere, the trade-off blows up under refinement.

    ``kind`` is ``'converged'``, ``'diverges_at_terminal'`` or
    ``'jumps_to_infinity_at'``; ``t_star`` is set for the last kind.
    """

    kind: str
    evidence: np.ndarray
    confidence: str
    t_star: float | None = None
    probe: float | None = None
    medians: np.ndarray = field(default=None, repr=False)

    def describe(self):
        if self.kind == "jumps_to_infinity_at":
            return f"jumps_to_infinity_at({self.t_star:g})"
        return self.kind


def probe_times(horizon, singular=(), n_offsets=4):
    """``T j / 16`` plus geometric offsets around each singular time."""
    pts = set(horizon * j / 16 for j in range(1, 17))
    base = horizon / 16
    for s in singular:
        for i in range(1, n_offsets + 1):
            off = base * 2.0**-i
            if s + off < horizon:
                pts.add(s + off)
            if s - off > 0:
                pts.add(s - off)
        if 0 < s < horizon:
            pts.add(s)
    return np.array(sorted(pts))


def _khat_at(khat, grid, t):
    idx = np.array([grid.index_at(x) for x in t])
    return khat[:, idx]


def _ratios(med, atol=0.0):
    """Consecutive ratios ``med[l+1] / med[l]`` with 0/0 read as 1.

    Medians not above ``atol`` count as 0.
    """
    med = np.where(med > atol, med, 0.0)
    num, den = med[1:], med[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                     np.where(num > 0, np.inf, 1.0))
    return r


def _diverges(r, rho, consecutive):
    run = 0
    for x in r:
        run = run + 1 if x >= rho else 0
        if run >= consecutive:
            return True
    return False


def detect_divergence(khats, grids, singular=(), rho=RHO_DIV, consecutive=CONSECUTIVE,
                      atol=KHAT_ATOL):
    """Classify the blow-up behaviour of ``Khat`` from a refinement ladder.

    Parameters
    ----------
    khats : sequence of ndarray, shape (P, n_l + 1)
        Running trade-off on each level, built from coupled noise.
    grids : sequence of TimeGrid
        Matching grids, coarse to fine.
    singular : sequence of float
        Declared singular times, used to place extra probes.
    rho : float
        Ratio threshold per refinement doubling.
    consecutive : int
        Number of consecutive exceedances required.
    atol : float
        Medians at or below this value are treated as exactly 0.

    Returns
    -------
    DivergenceVerdict
        Medians across paths are compared at every probe time. Divergence of
        ``Khat`` at a probe before ``T`` means a jump to infinity, localized
        at the left end of the first probe interval whose increment diverges.
        Divergence only at ``T`` means terminal divergence.
    """
    if len(khats) != len(grids) or len(khats) < 3:
        raise ValidationError("divergence detection needs at least 3 refinement levels")
    horizon = grids[0].horizon
    probes = probe_times(horizon, singular)
    med = np.array([np.median(_khat_at(k, g, probes), axis=0) for k, g in zip(khats, grids)])
    ratios = np.array([_ratios(med[:, j], atol) for j in range(probes.size)])
    div = np.array([_diverges(r, rho, consecutive) for r in ratios])

    def strength(r, diverging):
        ok = np.all(r >= rho) if diverging else np.all(r < 1.0 + (rho - 1.0) / 4)
        return "strong" if ok else "weak"

    interior = np.flatnonzero(div[:-1])
    if interior.size:
        starts = np.concatenate([[0.0], probes[:-1]])
        inc_med = []
        for k, g in zip(khats, grids):
            vals = _khat_at(k, g, probes)
            prev = np.concatenate([np.zeros((vals.shape[0], 1)), vals[:, :-1]], axis=1)
            inc_med.append(np.median(vals - prev, axis=0))
        inc = np.array(inc_med)
        inc_div = [j for j in range(probes.size)
                   if _diverges(_ratios(inc[:, j], atol), rho, consecutive)]
        j = inc_div[0] if inc_div else int(interior[0])
        r = ratios[j] if not inc_div else _ratios(inc[:, j], atol)
        return DivergenceVerdict("jumps_to_infinity_at", r, strength(r, True),
                                 t_star=float(starts[j]), probe=float(probes[j]), medians=med)
    if div[-1]:
        r = ratios[-1]
        return DivergenceVerdict("diverges_at_terminal", r, strength(r, True),
                                 probe=float(horizon), medians=med)
    r = ratios[-1]
    return DivergenceVerdict("converged", r, strength(r, False), probe=float(horizon), medians=med)


# -- export ----------------------------------------------------------------


def khat_quantiles(khat, grid, probes=None, qs=(0.1, 0.5, 0.9)):
    """Quantiles of ``Khat`` at probe times, shape ``(len(probes), len(qs))``."""
    probes = probe_times(grid.horizon) if probes is None else np.asarray(probes)
    vals = _khat_at(khat, grid, probes)
    return probes, np.quantile(vals, qs, axis=0).T


def write_khat_csv(path, khats, grids, probes=None):
    """CSV of ``Khat`` quantile curves with columns ``level, time, q10, q50, q90``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["level", "time", "q10", "q50", "q90"])
        for lvl, (k, g) in enumerate(zip(khats, grids)):
            t, q = khat_quantiles(k, g, probes)
            for ti, row in zip(t, q):
                wr.writerow([lvl, f"{ti:.10g}"] + [f"{v:.10g}" for v in row])
