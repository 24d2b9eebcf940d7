"""Combine evidence into verdicts on the four no-arbitrage conditions.

The conditions are nested, ``NFLVR => NA1 => NSA => NIP``. Each condition
first gets a verdict from its own evidence. A failure then propagates to the
stronger conditions and a success to the weaker ones, filling in
inconclusive verdicts. Evidence that contradicts the chain raises
:class:`ChainViolation`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ChainViolation, ValidationError

CONDITIONS = ("NIP", "NSA", "NA1", "NFLVR")
HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"
ANALYTIC, NUMERIC = "analytic", "numeric"

STRICT_LOCAL = "strict_local"
TRUE_MARTINGALE_CANDIDATE = "true_martingale_candidate"

EXPECTED = {
    "AbsLocalMartingale": (FAILS, FAILS, FAILS, FAILS),
    "MVTJump": (HOLDS, FAILS, FAILS, FAILS),
    "IntegratedRatio": (HOLDS, FAILS, FAILS, FAILS),
    "BridgeExp": (HOLDS, HOLDS, FAILS, FAILS),
    "PowerVol": (HOLDS, HOLDS, HOLDS, FAILS),
    "BlackScholes": (HOLDS, HOLDS, HOLDS, HOLDS),
}


@dataclass(frozen=True)
class Thresholds:
    """Gray zones of the numeric rules."""

    nip_fail: float = 0.3
    nip_hold: float = 0.05
    nu_atol: float = 1e-12
    nflvr_se: float = 3.0
    min_levels: int = 3


@dataclass(frozen=True, eq=False)
class Evidence:
    """Everything the classifier looks at.

    Attributes
    ----------
    levels : int
        Number of refinement levels the evidence was computed on.
    nu_max : float or None
        ``max |nu| / max |a|`` along the paths, for models with closed-form
        characteristics.
    nu_test : NuTestResult or None
        Empirical singular-drift test, for structural models.
    divergence : DivergenceVerdict or None
    martingale : MartingaleVerdict or None
        Increment test of the minimal deflator on the finest level.
    strategy_stats : dict
        Free-form summary of strategy experiments, reported only.
    """

    levels: int
    nu_max: float | None = None
    nu_test: object = None
    divergence: object = None
    martingale: object = None
    strategy_stats: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConditionVerdict:
    verdict: str
    basis: str
    note: str


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Verdicts on NIP, NSA, NA1 and NFLVR for one model."""

    model: str
    verdicts: dict
    evidence: Evidence

    def __getitem__(self, cond):
        return self.verdicts[cond]

    def row(self):
        return tuple(self.verdicts[c].verdict for c in CONDITIONS)

    def to_text(self):
        lines = [f"model: {self.model}"]
        for c in CONDITIONS:
            v = self.verdicts[c]
            lines.append(f"{c}: {v.verdict} [{v.basis}] {v.note}")
        ev = self.evidence
        lines.append(f"levels: {ev.levels}")
        if ev.nu_max is not None:
            lines.append(f"nu_max_relative: {ev.nu_max:.3e}")
        if ev.nu_test is not None:
            fr = ", ".join(f"{x:.4f}" for x in ev.nu_test.fractions)
            lines.append(f"nu_residual_fractions: [{fr}]")
        if ev.divergence is not None:
            r = ", ".join(f"{x:.3f}" for x in np.atleast_1d(ev.divergence.evidence))
            lines.append(f"divergence: {ev.divergence.describe()} ratios=[{r}] "
                         f"confidence={ev.divergence.confidence}")
        if ev.martingale is not None:
            m = ev.martingale
            lines.append(f"deflator: {m.kind} E[Z_T]={m.mean_terminal:.6f} SE={m.se_terminal:.6f} "
                         f"p={m.increment_test_pvalue:.4g}")
        for k in sorted(ev.strategy_stats):
            lines.append(f"strategy.{k}: {ev.strategy_stats[k]}")
        return "\n".join(lines) + "\n"

    def csv_row(self):
        """``model, NIP, NSA, NA1, NFLVR, basis`` with basis flags as ``A``/``N`` per condition."""
        flags = "".join("A" if self.verdicts[c].basis == ANALYTIC else "N" for c in CONDITIONS)
        return [self.model, *self.row(), flags]


CSV_HEADER = ["model", "NIP", "NSA", "NA1", "NFLVR", "basis"]


def write_spectrum_csv(reports):
    """CSV text with one row per report."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for r in reports:
        wr.writerow(r.csv_row())
    return buf.getvalue()


def nflvr_integral_test(mu_exp):
    """Feller-type test for the power-volatility model ``sigma(x) = x^mu_exp``.

    The integrand ``1 / (y sigma(1/y)^2)`` equals ``y^(2 mu_exp - 1)``, whose
    integral at infinity is finite exactly when ``2 mu_exp - 1 < -1``. A
    finite integral makes the minimal deflator a strict local martingale.
    """
    mu_exp = float(mu_exp)
    if not np.isfinite(mu_exp):
        raise ValidationError("mu_exp must be finite")
    return STRICT_LOCAL if 2.0 * mu_exp - 1.0 < -1.0 else TRUE_MARTINGALE_CANDIDATE


def _nip(spec, ev, th):
    if ev.nu_max is not None:
        if ev.nu_max <= th.nu_atol:
            return ConditionVerdict(HOLDS, ANALYTIC, "nu = 0 along the paths")
        return ConditionVerdict(FAILS, ANALYTIC, f"nu != 0 (relative size {ev.nu_max:.3g})")
    if ev.nu_test is not None:
        fr = ev.nu_test.fractions
        if np.min(fr) >= th.nip_fail:
            return ConditionVerdict(FAILS, NUMERIC, f"residual fraction >= {th.nip_fail} at every level")
        if np.max(fr) < th.nip_hold:
            return ConditionVerdict(HOLDS, NUMERIC, f"residual fraction < {th.nip_hold} at every level")
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, "residual fraction in the gray zone")
    return ConditionVerdict(INCONCLUSIVE, NUMERIC, "no drift evidence")


def _bounded(spec, horizon):
    b = spec.khat_bound(horizon) if horizon is not None else None
    return b is not None and np.isfinite(b)


def _nsa(spec, ev, horizon):
    if _bounded(spec, horizon):
        return ConditionVerdict(HOLDS, ANALYTIC, "Khat bounded")
    d = ev.divergence
    if d is None:
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, "no trade-off evidence")
    if d.kind == "jumps_to_infinity_at":
        if d.confidence == "strong":
            return ConditionVerdict(FAILS, NUMERIC, d.describe())
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, f"weak {d.describe()}")
    if d.confidence == "strong":
        return ConditionVerdict(HOLDS, NUMERIC, f"no jump to infinity ({d.kind})")
    return ConditionVerdict(INCONCLUSIVE, NUMERIC, f"weak {d.kind}")


def _na1(spec, ev, horizon):
    if _bounded(spec, horizon):
        return ConditionVerdict(HOLDS, ANALYTIC, "Khat bounded")
    d = ev.divergence
    if d is None:
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, "no trade-off evidence")
    if d.confidence != "strong":
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, f"weak {d.describe()}")
    if d.kind == "converged":
        return ConditionVerdict(HOLDS, NUMERIC, "Khat_T finite under refinement")
    return ConditionVerdict(FAILS, NUMERIC, d.describe())


def _nflvr(spec, ev, horizon, th):
    if spec.kind == "PowerVol" and nflvr_integral_test(spec.mu_exp) == STRICT_LOCAL:
        return ConditionVerdict(FAILS, ANALYTIC, "integral test: strict local martingale")
    if _bounded(spec, horizon):
        return ConditionVerdict(HOLDS, ANALYTIC, "Novikov: Khat bounded")
    m = ev.martingale
    if m is None or not spec.brownian_complete:
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, "no deflator evidence")
    gap = 1.0 - m.mean_terminal
    if m.kind == "supermartingale-strict" or gap > th.nflvr_se * m.se_terminal:
        return ConditionVerdict(FAILS, NUMERIC, f"E[Z_T] = {m.mean_terminal:.4f} < 1")
    if m.kind == "martingale-consistent" and abs(gap) <= th.nflvr_se * m.se_terminal:
        if m.se_terminal == 0:
            return ConditionVerdict(HOLDS, NUMERIC, "deflator is identically 1")
        return ConditionVerdict(INCONCLUSIVE, NUMERIC, "E[Z_T] within the gray zone of 1")
    return ConditionVerdict(INCONCLUSIVE, NUMERIC, f"deflator test {m.kind}")


def propagate(raw):
    """Fill inconclusive verdicts from the chain; raise on contradictions."""
    out = dict(raw)
    for i, c in enumerate(CONDITIONS):
        if out[c].verdict == FAILS:
            for d in CONDITIONS[i + 1:]:
                if out[d].verdict == HOLDS:
                    raise ChainViolation(f"{c} fails but {d} holds")
                if out[d].verdict == INCONCLUSIVE:
                    out[d] = ConditionVerdict(FAILS, out[c].basis, f"implied by {c}")
    for i in range(len(CONDITIONS) - 1, -1, -1):
        c = CONDITIONS[i]
        if out[c].verdict == HOLDS:
            for d in CONDITIONS[:i]:
                if out[d].verdict == FAILS:
                    raise ChainViolation(f"{c} holds but {d} fails")
                if out[d].verdict == INCONCLUSIVE:
                    out[d] = ConditionVerdict(HOLDS, out[c].basis, f"implied by {c}")
    check_chain(out)
    return out


def check_chain(verdicts):
    """Raise :class:`ChainViolation` unless failures only move up and successes only move down."""
    vals = [verdicts[c].verdict for c in CONDITIONS]
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            if vals[i] == FAILS and vals[j] == HOLDS:
                raise ChainViolation(f"{CONDITIONS[i]} fails but {CONDITIONS[j]} holds")


def classify(spec, evidence, horizon=None, thresholds=Thresholds()):
    """Verdicts for ``spec`` from ``evidence``.

    Parameters
    ----------
    spec : ModelSpec
    evidence : Evidence
        Must come from at least ``thresholds.min_levels`` refinement levels.
    horizon : float, optional
        Needed for analytic rules based on a bound on ``Khat``.
    """
    if evidence.levels < thresholds.min_levels:
        raise ValidationError(f"evidence needs at least {thresholds.min_levels} refinement levels")
    raw = {
        "NIP": _nip(spec, evidence, thresholds),
        "NSA": _nsa(spec, evidence, horizon),
        "NA1": _na1(spec, evidence, horizon),
        "NFLVR": _nflvr(spec, evidence, horizon, thresholds),
    }
    return SpectrumReport(spec.label(), propagate(raw), evidence)


def deviations(reports):
    """Differences between obtained rows and the expected table."""
    out = []
    for r in reports:
        kind = r.model.split("(")[0]
        exp = EXPECTED.get(kind)
        if exp is None:
            continue
        for c, want, got in zip(CONDITIONS, exp, r.row()):
            if want != got:
                out.append(f"{r.model}: {c} expected {want}, got {got}")
    return out


def summary_table(reports):
    """Plain-text table of verdicts, one row per model."""
    width = max([len("model")] + [len(r.model) for r in reports])
    head = f"{'model':<{width}}  " + "  ".join(f"{c:<12}" for c in CONDITIONS)
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.model:<{width}}  " + "  ".join(f"{v:<12}" for v in r.row()))
    return "\n".join(lines) + "\n"


def na1_numeraire_equivalence(spec, settings, value="inverse_deflator", original=None,
                              thresholds=Thresholds()):
    """Classify ``spec`` before and after expressing it in units of a portfolio.

    Parameters
    ----------
    spec : ModelSpec
    settings : RunSettings
    value : str
        Key of :data:`arbspec.evidence.VALUES`.
    original : SpectrumReport, optional
        Reused instead of classifying ``spec`` again.

    Returns
    -------
    NumeraireEquivalence
        ``identical_na1`` tells whether both NA1 verdicts agree.
    """
    from .evidence import VALUES, NumeraireEquivalence, gather, transformed_evidence

    if value not in VALUES:
        raise ValidationError(f"unknown value process {value!r}; choose from {sorted(VALUES)}")
    if original is None:
        ev, _ = gather(spec, settings)
        original = classify(spec, ev, settings.horizon, thresholds)
    market, ev_t, flagged, price_tests = transformed_evidence(spec, settings, VALUES[value], value)
    transformed = classify(market, ev_t, settings.horizon, thresholds)
    return NumeraireEquivalence(original, transformed, flagged, price_tests)
