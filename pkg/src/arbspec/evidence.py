"""Evidence gathering: simulate a refinement ladder and run every diagnostic on it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import characteristics as chx
from . import deflators as dfl
from .errors import ValidationError
from .grid import TimeGrid
from .models import ModelSpec, simulate

MIN_STAT_PATHS = 1000


@dataclass(frozen=True)
class RunSettings:
    """Numerical settings shared by all diagnostics.

    The divergence ladder has ``n_steps * 2^l`` uniform steps and
    ``depth * 2^l`` geometric layers of ``substeps`` pieces next to each
    singular time on level ``l``. The singular-drift test runs on uniform
    grids with ``nu_steps * 2^l`` steps and ``nu_paths`` paths.
    """

    horizon: float = 1.0
    n_steps: int = 1024
    levels: int = 3
    depth: int = 96
    substeps: int = 2
    n_paths: int = 2000
    master_seed: int = 20240611
    nu_paths: int = 10000
    nu_steps: int = 256
    k_cap: float = dfl.K_CAP
    z_floor: float = dfl.Z_FLOOR
    rho_div: float = chx.RHO_DIV
    consecutive: int = chx.CONSECUTIVE
    workers: int = 1

    def validate(self, statistical=True):
        if not self.horizon > 0:
            raise ValidationError("T must be positive")
        if self.n_steps < 2 or self.nu_steps < 2:
            raise ValidationError("n_steps must be at least 2")
        if self.levels < 1 or self.depth < 0 or self.substeps < 1:
            raise ValidationError("levels >= 1, depth >= 0 and substeps >= 1 required")
        if statistical and min(self.n_paths, self.nu_paths) < MIN_STAT_PATHS:
            raise ValidationError(f"statistical tasks need at least {MIN_STAT_PATHS} paths")
        if self.n_paths < 1:
            raise ValidationError("n_paths must be positive")


def ladder(spec, settings):
    """Nested grids for ``spec``, coarse to fine."""
    singular = spec.singular_times(settings.horizon)
    depth = settings.depth if singular else 0
    return TimeGrid.ladder(settings.horizon, settings.n_steps, settings.levels,
                           singular=singular, depth=depth, substeps=settings.substeps)


def nu_size(chars):
    """``max |nu| / max |a|`` over all paths and steps."""
    scale = float(np.max(np.abs(chars.a)))
    top = float(np.max(np.abs(chars.nu)))
    if scale == 0:
        return top
    return top / scale


@dataclass(eq=False)
class LadderRun:
    """Products of a ladder simulation kept for reporting."""

    grids: list
    khats: list
    bundle: object = None
    chars: object = None
    zhat: object = None
    log_z: object = None
    nu_max: float = 0.0


def run_ladder(spec, settings, keep_finest=True):
    """Simulate every level, extract characteristics and build the finest deflator."""
    grids = ladder(spec, settings)
    khats, nu_max = [], 0.0
    run = LadderRun(grids, khats)
    for i, g in enumerate(grids):
        b = simulate(spec, g, settings.n_paths, settings.master_seed, workers=settings.workers)
        ch = chx.extract(spec, b)
        khats.append(ch.khat)
        nu_max = max(nu_max, nu_size(ch))
        if keep_finest and i == len(grids) - 1:
            run.bundle, run.chars = b, ch
            run.log_z = dfl.log_deflator(ch, b)
            z, hit = dfl._absorb(run.log_z.copy(), ch.khat, settings.k_cap, settings.z_floor)
            run.zhat = dfl.DeflatorPath(z, hit)
        del b, ch
    run.nu_max = nu_max
    return run


def nu_bundles(spec, settings):
    """Bundles for the singular-drift test on uniform grids."""
    for lvl in range(settings.levels):
        g = TimeGrid.uniform(settings.horizon, settings.nu_steps * 2**lvl)
        yield simulate(spec, g, settings.nu_paths, settings.master_seed, workers=settings.workers)


def gather(spec, settings):
    """Evidence for :func:`arbspec.classifier.classify` plus the finest ladder products.

    Returns
    -------
    evidence : Evidence
    run : LadderRun or None
        ``None`` for structural models.
    """
    from .classifier import Evidence

    spec.validate()
    settings.validate()
    if spec.structural:
        res = chx.empirical_nu_test(nu_bundles(spec, settings))
        return Evidence(levels=settings.levels, nu_test=res), None
    run = run_ladder(spec, settings)
    div = chx.detect_divergence(run.khats, run.grids, spec.singular_times(settings.horizon),
                                settings.rho_div, settings.consecutive)
    mart = dfl.increment_test(run.zhat.z, run.bundle.grid)
    ev = Evidence(levels=settings.levels, nu_max=run.nu_max, divergence=div, martingale=mart)
    return ev, run


# -- change of numeraire ---------------------------------------------------


@dataclass(frozen=True)
class NumeraireMarket(ModelSpec):
    """The market ``(S / V, 1 / V)`` of a base model in units of a portfolio ``V``."""

    base: ModelSpec = None
    value_label: str = "V"
    kind: ClassVar[str] = "Numeraire"
    structural: ClassVar[bool] = True

    @property
    def brownian_complete(self):
        return self.base.brownian_complete

    def label(self):
        return f"{self.base.label()}/{self.value_label}"


def value_one(bundle, chars, log_z):
    """``V = 1``, held with no position."""
    return np.zeros_like(log_z), np.zeros_like(chars.lam)


def value_inverse_deflator(bundle, chars, log_z):
    """``V = 1 / Zhat``, the wealth of ``theta = lambda / Zhat``, so ``theta / V = lambda``."""
    return -log_z, np.array(chars.lam)


def value_buy_and_hold(bundle, chars, log_z):
    """``V = 1 + (S^1 - S^1_0)``, the wealth of one unit of the first asset."""
    s = bundle.prices[..., 0]
    v = 1.0 + s - s[:, :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_v = np.log(v)
        ratio = np.zeros_like(chars.lam)
        ratio[..., 0] = 1.0 / v[:, :-1]
    return log_v, ratio


VALUES = {
    "one": value_one,
    "inverse_deflator": value_inverse_deflator,
    "buy_and_hold": value_buy_and_hold,
}


@dataclass(frozen=True, eq=False)
class NumeraireEquivalence:
    """Verdicts before and after a change of numeraire."""

    original: object
    transformed: object
    flagged: int
    price_tests: tuple = field(default_factory=tuple)

    @property
    def identical_na1(self):
        return self.original["NA1"].verdict == self.transformed["NA1"].verdict


def transformed_evidence(spec, settings, value, value_label):
    """Evidence for the market in units of a portfolio ``V = V(1, theta)``.

    ``value(bundle, chars, log_z)`` returns ``log V`` and ``theta / V``. The
    deflator of the new market is ``Z' = Zhat V`` with
    ``dZ' / Z' = (theta / V - lambda)^T dM``, so its trade-off is
    ``int (lambda - theta / V)^T c (lambda - theta / V) dt``.
    """
    from .classifier import Evidence

    grids = ladder(spec, settings)
    khats, flagged = [], 0
    mart, price_tests = None, ()
    for i, g in enumerate(grids):
        b = simulate(spec, g, settings.n_paths, settings.master_seed, workers=settings.workers)
        ch = chx.extract(spec, b)
        log_z = dfl.log_deflator(ch, b)
        log_v, ratio = value(b, ch, log_z)
        bad = ~(np.all(np.isfinite(log_v), axis=1) & np.all(np.isfinite(ratio), axis=(1, 2)))
        keep = ~bad
        khat = chx.accumulate_khat(ch.lam[keep] - ratio[keep], ch.c[keep], g)
        khats.append(khat)
        if i == len(grids) - 1:
            flagged = int(bad.sum())
            zp, _ = dfl._absorb(log_z[keep] + log_v[keep], khat, settings.k_cap, settings.z_floor)
            mart = dfl.increment_test(zp, g)
            v = np.exp(log_v[keep])
            with np.errstate(divide="ignore", invalid="ignore"):
                sv, inv = b.prices[keep, :, 0] / v, 1.0 / v
            price_tests = (("S/V", dfl.increment_test(sv, g)),
                           ("1/V", dfl.increment_test(inv, g)))
        del b, ch, log_z, log_v, ratio
    if flagged > 0.01 * settings.n_paths:
        raise ValidationError(f"value process is not positive on {flagged} paths")
    div = chx.detect_divergence(khats, grids, spec.singular_times(settings.horizon),
                                settings.rho_div, settings.consecutive)
    ev = Evidence(levels=settings.levels, divergence=div, martingale=mart)
    return NumeraireMarket(base=spec, value_label=value_label), ev, flagged, price_tests
