import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arbspec import characteristics as chx
from arbspec import deflators as dfl
from arbspec.errors import ValidationError
from arbspec.grid import TimeGrid
from arbspec.models import BlackScholes, PowerVol, simulate
from arbspec.strategies import Strategy, integrate


def _bs(n=256, paths=4000, seed=1, spec=BlackScholes(mu=0.05, sigma=0.2)):
    b = simulate(spec, TimeGrid.uniform(1.0, n), paths, seed)
    ch = chx.extract(spec, b)
    return b, ch


def test_zero_lambda_gives_unit_deflator():
    b, ch = _bs(paths=20, spec=BlackScholes(mu=0.0))
    z = dfl.minimal_deflator(ch, b)
    assert np.all(z.z == 1.0)
    tr = dfl.tradability_check(z, ch, b)
    assert np.all(tr.max_error == 0.0)


def test_black_scholes_true_martingale():
    b, ch = _bs()
    z = dfl.minimal_deflator(ch, b)
    assert np.all(z.z >= 0) and np.all(z.z[:, 0] == 1)
    v = dfl.increment_test(z.z, b.grid)
    assert abs(v.mean_terminal - 1) <= 3 * v.se_terminal
    assert v.kind == "martingale-consistent"


def test_products_are_martingales():
    b, ch = _bs()
    z = dfl.minimal_deflator(ch, b, with_products=True)
    v = dfl.increment_test(z.products[..., 0], b.grid)
    assert v.kind == "martingale-consistent"


def test_compose_zero_theta():
    b, ch = _bs(paths=20)
    z = dfl.minimal_deflator(ch, b)
    np.testing.assert_array_equal(dfl.compose_deflator(z, 0.0, b.grid, 3).z, z.z)


def test_compose_black_scholes():
    b, ch = _bs()
    z = dfl.minimal_deflator(ch, b)
    zc = dfl.compose_deflator(z, 0.5, b.grid, 3, prices=b.prices)
    t = zc.terminal
    assert abs(t.mean() - 1) <= 3 * t.std(ddof=1) / np.sqrt(t.size)
    plain = dfl.increment_test(z.with_products(b.prices).products[..., 0], b.grid)
    comp = dfl.increment_test(zc.products[..., 0], b.grid)
    assert comp.kind == plain.kind


def test_compose_rejects_nonfinite():
    b, ch = _bs(paths=5)
    with pytest.raises(ValidationError):
        dfl.compose_deflator(dfl.minimal_deflator(ch, b), np.inf, b.grid, 1)


def test_increment_test_constant():
    g = TimeGrid.uniform(1.0, 16)
    v = dfl.increment_test(np.ones((1000, 17)), g)
    assert v.kind == "martingale-consistent" and v.increment_test_pvalue == 1.0


def test_increment_test_detects_drift():
    g = TimeGrid.uniform(1.0, 16)
    x = np.random.default_rng(0).standard_normal((2000, 17)).cumsum(axis=1) * 0.01
    x -= 0.2 * g.times[None, :]
    assert dfl.increment_test(x, g).kind == "supermartingale-strict"
    assert dfl.increment_test(-x, g).kind == "rejected"


def test_increment_test_min_paths():
    g = TimeGrid.uniform(1.0, 4)
    with pytest.raises(ValidationError):
        dfl.increment_test(np.ones((10, 5)), g)


def test_powervol_supermartingale():
    spec = PowerVol(mu_exp=-1.0)
    b = simulate(spec, TimeGrid.uniform(1.0, 1024), 4000, 5)
    ch = chx.extract(spec, b)
    z = dfl.minimal_deflator(ch, b)
    v = dfl.increment_test(z.z, b.grid)
    assert v.kind == "supermartingale-strict"
    assert abs(v.mean_terminal - 0.6826894921) <= 3 * v.se_terminal
    assert np.all(v.window_means <= 3 * v.window_ses)
    prod = z.with_products(b.prices).products[..., 0]
    alive = ~z.absorbed
    assert np.median(np.abs(prod[alive, -1] - 1)) < 0.02


def test_tradability_black_scholes():
    b, ch = _bs(n=2**12, paths=1000)
    z = dfl.minimal_deflator(ch, b)
    tr = dfl.tradability_check(z, ch, b)
    assert tr.rms <= 5e-3 * np.median(tr.terminal_inverse)
    assert not tr.truncated.any()


def test_numeraire_unit_value():
    b, ch = _bs(paths=10)
    z = dfl.minimal_deflator(ch, b)
    res = dfl.numeraire_change(b, np.ones((10, 257)), z)
    np.testing.assert_array_equal(res.bundle.prices[..., 0], b.prices[..., 0])
    assert np.all(res.bundle.prices[..., 1] == 1.0)
    np.testing.assert_array_equal(res.deflator.z, z.z)
    assert not res.flagged.any()


def test_numeraire_product_identity():
    b, ch = _bs(paths=10)
    z = dfl.minimal_deflator(ch, b)
    v = 1.0 + b.prices[..., 0] - 1.0
    res = dfl.numeraire_change(b, v, z)
    lhs = (z.z * v) * (b.prices[..., 0] / v)
    np.testing.assert_allclose(lhs, z.z * b.prices[..., 0], rtol=1e-15)
    np.testing.assert_allclose(res.deflator.products[..., 0], z.z * b.prices[..., 0], rtol=1e-15)


def test_numeraire_flags_nonpositive():
    b, _ = _bs(paths=4)
    v = np.ones((4, 257))
    v[1, 5] = -1.0
    v[2, 7] = np.nan
    assert list(dfl.numeraire_change(b, v).flagged) == [False, True, True, False]
    with pytest.raises(ValidationError):
        dfl.numeraire_change(b, np.ones((4, 3)))


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_discrete_integration_by_parts(seed):
    r = np.random.default_rng(seed)
    z = np.exp(r.standard_normal((5, 33)).cumsum(axis=1) * 0.1)
    g = r.standard_normal((5, 33)).cumsum(axis=1)
    g[:, 0] = 0
    res = dfl.product_rule_residual(z, g)
    assert np.all(np.abs(res) <= 1e-12 * (1 + np.abs(z[:, -1] * g[:, -1])) * 33)


def test_absorption_rule():
    log_z = np.log(np.array([[1.0, 0.5, 1e-13, 0.2], [1.0, 0.9, 0.8, 0.7]]))
    khat = np.array([[0, 1, 2, 3], [0, 10, 60, 70]], float)
    z, hit = dfl._absorb(log_z, khat, 50.0, 1e-12)
    np.testing.assert_array_equal(hit, [2, 2])
    np.testing.assert_array_equal(z[:, 2:], 0.0)


def test_realized_tradeoff():
    log_z = np.array([[0.0, 0.1, -0.1]])
    np.testing.assert_allclose(dfl.realized_tradeoff(log_z), [[0.0, 0.01, 0.05]])


def test_verdicts_csv(tmp_path):
    g = TimeGrid.uniform(1.0, 16)
    v = dfl.increment_test(np.ones((1000, 17)), g)
    dfl.write_verdicts_csv(tmp_path / "v.csv", [("M", "Z", v)])
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "model,process,kind,mean_terminal,SE,p-value"
    assert lines[1].startswith("M,Z,martingale-consistent,1,0,")
