import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arbspec.errors import InvalidPathsError, ValidationError
from arbspec.grid import TimeGrid
from arbspec.models import (AbsLocalMartingale, BlackScholes, BridgeExp, Diffusion, MVTJump,
                            PowerVol, bes3_reciprocal_mean, local_time_estimate, read_binary,
                            simulate, simulate_bes3, write_binary, write_csv)

# RMS agreement of the two local-time estimators is about 0.1-0.2 dt^(1/4)
# for 2^8 to 2^12 steps; C fixes the tolerance tol_lt = C dt^(1/4).
LOCAL_TIME_C = 0.25


def test_zero_vol_constant_paths():
    g = TimeGrid.uniform(1.0, 16)
    b = simulate(BlackScholes(mu=0.0, sigma=0.0), g, 5, 1)
    np.testing.assert_array_equal(b.prices, 1.0)


def test_black_scholes_terminal_mean():
    g = TimeGrid.uniform(1.0, 64)
    b = simulate(BlackScholes(mu=0.05, sigma=0.2), g, 10000, 2)
    st_ = b.prices[:, -1, 0]
    se = st_.std(ddof=1) / np.sqrt(st_.size)
    assert abs(st_.mean() - np.exp(0.05)) <= 3 * se


def test_bridge_exp_pinned():
    g = TimeGrid.refined(1.0, 64, singular=(1.0,), depth=60, substeps=2)
    b = simulate(BridgeExp(K=1.0), g, 200, 3)
    assert np.all(np.log(b.prices[:, -1, 0]) == 1.0)
    assert np.all(b.aux["gap"][:, -1] == 0.0)


def test_bridge_terminal_variance():
    g = TimeGrid.uniform(1.0, 4)
    b = simulate(BridgeExp(K=1.0), g, 20000, 4)
    x = b.aux["X"][:, 2]
    assert abs(x.mean() - 0.5) < 0.02
    assert abs(x.var() - 0.25) < 0.015


def test_bes3_moments():
    g = TimeGrid.uniform(1.0, 8)
    b = simulate_bes3(1.0, g, 20000, 5)
    r = b.prices[:, -1, 0]
    se2 = (r**2).std(ddof=1) / np.sqrt(r.size)
    assert abs((r**2).mean() - 4.0) <= 3 * se2
    inv = 1 / r
    assert abs(inv.mean() - bes3_reciprocal_mean(1.0, 1.0)) <= 3 * inv.std(ddof=1) / np.sqrt(r.size)
    assert bes3_reciprocal_mean(1.0, 1.0) == pytest.approx(0.6826894921, rel=1e-9)


def test_local_time_mean():
    g = TimeGrid.uniform(1.0, 1024)
    b = simulate(AbsLocalMartingale(), g, 4000, 6)
    lt = local_time_estimate(b).tanaka[:, -1]
    se = lt.std(ddof=1) / np.sqrt(lt.size)
    assert abs(lt.mean() - np.sqrt(2 / np.pi)) <= 3 * se


def test_local_time_zero_process():
    g = TimeGrid.uniform(1.0, 32)
    b = simulate(AbsLocalMartingale(vol=0.0), g, 10, 6)
    lt = local_time_estimate(b)
    assert np.all(lt.tanaka == 0) and np.all(lt.skorohod == 0)


@pytest.mark.parametrize("n", [256, 1024, 4096])
def test_local_time_estimators_agree(n):
    g = TimeGrid.uniform(1.0, n)
    b = simulate(AbsLocalMartingale(), g, 1000, 7)
    lt = local_time_estimate(b)
    rms = np.sqrt(np.mean((lt.tanaka - lt.skorohod) ** 2))
    assert rms <= LOCAL_TIME_C * (1.0 / n) ** 0.25
    assert np.all(lt.tanaka >= 0)


def test_quadratic_variation_consistency():
    g = TimeGrid.uniform(1.0, 2**12)
    b = simulate(BlackScholes(mu=0.05, sigma=0.2), g, 1000, 8)
    s = b.prices[..., 0]
    qv = np.sum(np.diff(s, axis=1) ** 2, axis=1)
    ic = np.sum(0.04 * s[:, :-1] ** 2 * g.dt, axis=1)
    assert np.quantile(np.abs(qv / ic - 1), 0.9) <= 0.05


def test_euler_strong_order():
    euler = Diffusion(drift=lambda t, s: 0.05 * s, vol=lambda t, s: 0.2 * s[..., None])
    errs = []
    for n in (256, 512, 1024, 2048):
        g = TimeGrid.uniform(1.0, n)
        ex = simulate(BlackScholes(), g, 1000, 9).prices[:, -1, 0]
        eu = simulate(euler, g, 1000, 9).prices[:, -1, 0]
        errs.append(np.sqrt(np.mean((ex - eu) ** 2)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios >= 1.3)


def test_reproducible_across_workers():
    g = TimeGrid.uniform(1.0, 32)
    a = simulate(MVTJump(), g, 40, 10, workers=1)
    b = simulate(MVTJump(), g, 40, 10, workers=3)
    np.testing.assert_array_equal(a.prices, b.prices)


def test_bundle_immutable():
    b = simulate(BlackScholes(), TimeGrid.uniform(1.0, 4), 3, 1)
    with pytest.raises(ValueError):
        b.prices[0, 0, 0] = 2.0


def test_powervol_floor_flags():
    b = simulate(PowerVol(mu_exp=-1.0, s_init=0.05), TimeGrid.uniform(1.0, 64), 500, 11)
    assert np.all(b.prices >= PowerVol().floor)
    absorbed = b.aux["absorbed"]
    assert np.all(b.prices[absorbed, -1, 0] == PowerVol().floor)


def test_invalid_path_limit():
    blowup = Diffusion(drift=lambda t, s: np.where(s > 0, 1e308 * s, 0.0) * 1e10,
                       vol=lambda t, s: np.ones(s.shape + (1,)))
    with pytest.raises(InvalidPathsError):
        simulate(blowup, TimeGrid.uniform(1.0, 8), 100, 12)


def test_validation():
    with pytest.raises(ValidationError):
        BlackScholes(s_init=-1.0).validate()
    with pytest.raises(ValidationError):
        MVTJump(beta=0.4).validate()
    with pytest.raises(ValidationError):
        simulate(BlackScholes(), TimeGrid.uniform(1.0, 4), 0, 1)


def test_binary_round_trip(tmp_path):
    b = simulate(BlackScholes(), TimeGrid.uniform(1.0, 8), 4, 2**40 + 3)
    write_binary(b, tmp_path / "p.bin")
    header, prices = read_binary(tmp_path / "p.bin")
    assert header == {"n_paths": 4, "n_steps": 8, "d": 1, "seed": 2**40 + 3}
    np.testing.assert_array_equal(prices, b.prices)


def test_csv_export(tmp_path):
    b = simulate(BlackScholes(), TimeGrid.uniform(1.0, 4), 2, 1)
    write_csv(b, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "n_paths,n_steps,d,seed"
    assert len(lines) == 3 + 2 * 5


@settings(max_examples=20)
@given(st.integers(0, 2**31), st.sampled_from([BlackScholes(), AbsLocalMartingale(), BridgeExp()]))
def test_seed_reproducibility(seed, spec):
    g = TimeGrid.uniform(1.0, 8)
    a, b = simulate(spec, g, 5, seed), simulate(spec, g, 5, seed, workers=2)
    np.testing.assert_array_equal(a.prices, b.prices)
