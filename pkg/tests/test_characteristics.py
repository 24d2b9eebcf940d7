import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arbspec import characteristics as chx
from arbspec.errors import StructuralModelError, ValidationError
from arbspec.evidence import RunSettings, nu_bundles, run_ladder
from arbspec.grid import TimeGrid
from arbspec.linalg import range_project
from arbspec.models import (AbsLocalMartingale, BlackScholes, BridgeExp, IntegratedRatio, MVTJump,
                            simulate)

SMALL = RunSettings(n_paths=1000, master_seed=31)


def test_black_scholes_khat_closed_form():
    g = TimeGrid.uniform(1.0, 2**12)
    b = simulate(BlackScholes(mu=0.05, sigma=0.2), g, 50, 1)
    ch = chx.extract(BlackScholes(mu=0.05, sigma=0.2), b)
    np.testing.assert_allclose(ch.khat[:, -1], 0.0625, rtol=1e-6)
    np.testing.assert_allclose(ch.lam[..., 0], 0.05 / (0.04 * b.prices[:, :-1, 0]), rtol=1e-12)


def test_zero_drift():
    g = TimeGrid.uniform(1.0, 64)
    spec = BlackScholes(mu=0.0)
    ch = chx.extract(spec, simulate(spec, g, 20, 2))
    assert np.all(ch.lam == 0) and np.all(ch.nu == 0) and np.all(ch.khat == 0)


def test_structural_model_rejected():
    g = TimeGrid.uniform(1.0, 8)
    spec = AbsLocalMartingale()
    with pytest.raises(StructuralModelError):
        chx.extract(spec, simulate(spec, g, 5, 1))


@settings(max_examples=15)
@given(st.sampled_from([BlackScholes(), MVTJump(), IntegratedRatio(), BridgeExp()]),
       st.integers(0, 2**31))
def test_decomposition_identity_and_monotone_khat(spec, seed):
    g = TimeGrid.refined(1.0, 32, singular=spec.singular_times(1.0), depth=8, substeps=2)
    ch = chx.extract(spec, simulate(spec, g, 20, seed))
    na = np.linalg.norm(ch.a, axis=-1)
    resid = ch.a - np.einsum("pkij,pkj->pki", ch.c, ch.lam) - ch.nu
    assert np.all(np.linalg.norm(resid, axis=-1) <= 1e-10 * (1 + na))
    cnu = np.einsum("pkij,pkj->pki", ch.c, ch.nu)
    assert np.all(np.linalg.norm(cnu, axis=-1) <= 1e-10 * (1 + na))
    assert np.all(ch.khat_increment >= 0)
    assert np.all(np.diff(ch.khat, axis=1) >= 0)


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_minimality_transfer(seed):
    r = np.random.default_rng(seed)
    p, n, d = 4, 16, 3
    g = TimeGrid.uniform(1.0, n)
    root = r.standard_normal((p, n, d, 2))
    c = root @ np.swapaxes(root, -1, -2)
    lam = np.einsum("pkij,pkj->pki", c, r.standard_normal((p, n, d)))
    lam = range_project(c, lam)
    k = r.standard_normal((p, n, d))
    k = k - range_project(c, k)
    base = chx.accumulate_khat(lam, c, g)[:, -1]
    pert = chx.accumulate_khat(lam + k, c, g)[:, -1]
    assert np.all(pert >= base - 1e-10)


def test_nu_test_black_scholes():
    res = chx.empirical_nu_test(nu_bundles(BlackScholes(), SMALL))
    assert res.finest < 0.05


def test_nu_test_abs_local_martingale():
    res = chx.empirical_nu_test(nu_bundles(AbsLocalMartingale(), SMALL))
    assert np.all(res.fractions >= 0.5)
    assert all(lv.drift_significant for lv in res.levels)


def test_nu_test_zero_drift():
    res = chx.empirical_nu_test(nu_bundles(BlackScholes(mu=0.0), SMALL))
    assert np.all(res.fractions < 0.01)


def test_nu_test_needs_two_levels():
    b = simulate(BlackScholes(), TimeGrid.uniform(1.0, 16), 50, 1)
    with pytest.raises(ValidationError):
        chx.empirical_nu_test([b])


def test_nu_test_coverage():
    b = simulate(BlackScholes(), TimeGrid.uniform(1.0, 16), 40, 1)
    lv = chx.residual_fraction(b)
    assert lv.bins_used < lv.bins_total
    assert 0 <= lv.coverage < 1


def _verdict(spec, s=SMALL):
    run = run_ladder(spec, s, keep_finest=False)
    return chx.detect_divergence(run.khats, run.grids, spec.singular_times(s.horizon))


def test_divergence_black_scholes_converged():
    v = _verdict(BlackScholes())
    assert v.kind == "converged"
    assert len(v.evidence) == 2
    assert abs(v.evidence[-1] - 1) <= 0.02


def test_divergence_integrated_ratio():
    v = _verdict(IntegratedRatio())
    assert v.kind == "jumps_to_infinity_at" and v.t_star == 0.0
    assert np.all(v.evidence >= chx.RHO_DIV)


def test_divergence_mvt_jump():
    v = _verdict(MVTJump(beta=1.0, gamma=0.5, tau=0.0))
    assert v.describe() == "jumps_to_infinity_at(0)"


def test_divergence_bridge_terminal():
    v = _verdict(BridgeExp(K=1.0))
    assert v.kind == "diverges_at_terminal"
    assert np.all(np.isfinite(v.medians[:, :-1]))
    assert np.all(v.medians[-1, :-1] < 20)


def test_divergence_needs_three_levels():
    s = dataclasses.replace(SMALL, levels=2, n_paths=20)
    run = run_ladder(BlackScholes(), s, keep_finest=False)
    with pytest.raises(ValidationError):
        chx.detect_divergence(run.khats, run.grids)


def test_ratio_zero_over_zero():
    np.testing.assert_array_equal(chx._ratios(np.array([0.0, 1e-15, 0.0]), atol=1e-12), [1.0, 1.0])


def test_khat_csv(tmp_path):
    s = dataclasses.replace(SMALL, n_paths=20, n_steps=16)
    run = run_ladder(BlackScholes(), s, keep_finest=False)
    chx.write_khat_csv(tmp_path / "k.csv", run.khats, run.grids)
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "level,time,q10,q50,q90"
    assert len(lines) == 1 + 3 * 16
