"""Model zoo and path simulation.

Every model is a frozen dataclass. Models with closed-form characteristics
implement :meth:`ModelSpec.characteristics`, returning the drift rate ``a``
and diffusion rate ``c`` evaluated at the left point of every step. The
drift returned is always consistent with the simulation scheme, so that
``S_{k+1} - S_k - a_k dt_k`` is the martingale increment of the scheme.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, ClassVar, Mapping

import numpy as np
from scipy.stats import norm

from .errors import InvalidPathsError, StructuralModelError, ValidationError
from .grid import TimeGrid
from .rng import STREAM_PRICE, brownian

INVALID_LIMIT = 0.01
POWERVOL_FLOOR = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Base class of the model zoo."""

    kind: ClassVar[str] = "abstract"
    structural: ClassVar[bool] = False
    brownian_complete: ClassVar[bool] = True

    @property
    def d(self):
        return 1

    @property
    def n_noise(self):
        return self.d

    @property
    def s0(self):
        raise NotImplementedError

    def validate(self):
        """Raise :class:`ValidationError` if the parameters are inadmissible."""

    def singular_times(self, horizon):
        """Times next to which the mean-variance trade-off may blow up."""
        return ()

    def khat_bound(self, horizon):
        """Deterministic bound on the terminal trade-off, if one is known."""
        return None

    def label(self):
        params = ", ".join(f"{k}={v:g}" for k, v in self.params().items()
                           if isinstance(v, (int, float)))
        return f"{self.kind}({params})" if params else self.kind

    def params(self):
        return {k: v for k, v in asdict(self).items()}

    def noise_grid(self, grid):
        """Grid on which the driving Brownian motion is sampled."""
        return grid

    def paths(self, grid, w):
        """Map Brownian paths ``w`` (sampled on ``noise_grid``) to ``(prices, noise, aux)``."""
        raise NotImplementedError

    def characteristics(self, grid, prices, aux):
        """Per-step ``(a, c)`` with shapes ``(P, n, d)`` and ``(P, n, d, d)``."""
        raise StructuralModelError(f"{self.kind} has no closed-form characteristics")


def _increments(grid, w):
    return np.diff(w, axis=1)


@dataclass(frozen=True)
class BlackScholes(ModelSpec):
    """Geometric Brownian motion, sampled exactly."""

    mu: float = 0.05
    sigma: float = 0.2
    s_init: float = 1.0
    kind: ClassVar[str] = "BlackScholes"

    @property
    def s0(self):
        return self.s_init

    def validate(self):
        if not self.s_init > 0:
            raise ValidationError("s0 must be positive")
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")

    def khat_bound(self, horizon):
        if self.sigma == 0:
            return 0.0
        return (self.mu / self.sigma) ** 2 * horizon

    def paths(self, grid, w):
        t = grid.times[None, :, None]
        s = self.s_init * np.exp((self.mu - 0.5 * self.sigma**2) * t + self.sigma * w)
        return s, _increments(grid, w), {}

    def characteristics(self, grid, prices, aux):
        s = prices[:, :-1, :]
        return self.mu * s, (self.sigma**2 * s**2)[..., None]


@dataclass(frozen=True)
class Diffusion(ModelSpec):
    """Generic Ito diffusion ``dS = mu(t, S) dt + sigma(t, S) dW``, Euler scheme.

    ``drift(t, s)`` maps a time and a ``(P, d)`` state to ``(P, d)``;
    ``vol(t, s)`` maps them to ``(P, d, m)`` where ``m`` is the number of
    driving Brownian motions.
    """

    drift: Callable = field(default=lambda t, s: np.zeros_like(s))
    vol: Callable = field(default=lambda t, s: np.ones(s.shape + (1,)))
    s_init: tuple = (1.0,)
    noise_dim: int = 1
    name: str = "Diffusion"
    kind: ClassVar[str] = "Diffusion"

    @property
    def d(self):
        return len(self.s_init)

    @property
    def n_noise(self):
        return self.noise_dim

    @property
    def s0(self):
        return np.asarray(self.s_init, dtype=float)

    def label(self):
        return self.name

    def params(self):
        return {"name": self.name, "s0": list(self.s_init), "noise_dim": self.noise_dim}

    def paths(self, grid, w):
        dw = _increments(grid, w)
        p, n = dw.shape[:2]
        s = np.empty((p, n + 1, self.d))
        s[:, 0] = self.s0
        times, dt = grid.times, grid.dt
        with np.errstate(all="ignore"):
            for k in range(n):
                sk = s[:, k]
                s[:, k + 1] = (sk + self.drift(times[k], sk) * dt[k]
                               + np.einsum("pij,pj->pi", self.vol(times[k], sk), dw[:, k]))
        return s, dw, {}

    def characteristics(self, grid, prices, aux):
        n = grid.n_steps
        a = np.empty(prices[:, :-1].shape)
        c = np.empty(a.shape + (self.d,))
        for k in range(n):
            sk = prices[:, k]
            a[:, k] = self.drift(grid.times[k], sk)
            v = self.vol(grid.times[k], sk)
            c[:, k] = v @ np.swapaxes(v, -1, -2)
        return a, c


@dataclass(frozen=True)
class AbsLocalMartingale(ModelSpec):
    """``S = |N|`` with ``N = n0 + vol * W`` a driftless diffusion.

    The drift of ``S`` is carried by the local time of ``N`` at zero, which
    is singular with respect to ``d<S>``; the model is therefore structural.
    """

    n0: float = 0.0
    vol: float = 1.0
    kind: ClassVar[str] = "AbsLocalMartingale"
    structural: ClassVar[bool] = True

    @property
    def s0(self):
        return abs(self.n0)

    def validate(self):
        if self.vol < 0:
            raise ValidationError("vol must be nonnegative")

    def paths(self, grid, w):
        n_proc = self.n0 + self.vol * w
        return np.abs(n_proc), _increments(grid, w), {"N": n_proc[..., 0]}


@dataclass(frozen=True)
class MVTJump(ModelSpec):
    """``S = M + <M>^beta_{. ^ tau} + (<M>_{. v tau} - <M>_tau)^gamma`` with ``M = W``.

    The drift rate is the exact step average of the deterministic drift, so
    the scheme reproduces the finite-variation part without error.
    """

    beta: float = 1.0
    gamma: float = 0.5
    tau: float = 0.0
    kind: ClassVar[str] = "MVTJump"

    @property
    def s0(self):
        return 0.0

    def validate(self):
        if not self.gamma <= 0.5 < self.beta:
            raise ValidationError("need gamma <= 1/2 < beta")
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if self.tau < 0:
            raise ValidationError("tau must be nonnegative")

    def singular_times(self, horizon):
        return (self.tau,) if self.tau < horizon else ()

    def drift_path(self, grid):
        e = grid.elapsed(self.tau)
        before = np.maximum(self.tau + np.minimum(e, 0.0), 0.0)
        after = np.maximum(e, 0.0)
        return before**self.beta + after**self.gamma

    def paths(self, grid, w):
        a = self.drift_path(grid)
        return w + a[None, :, None], _increments(grid, w), {}

    def characteristics(self, grid, prices, aux):
        p = prices.shape[0]
        a = np.diff(self.drift_path(grid)) / grid.dt
        a = np.broadcast_to(a[None, :, None], (p, grid.n_steps, 1)).copy()
        return a, np.ones((p, grid.n_steps, 1, 1))


@dataclass(frozen=True)
class IntegratedRatio(ModelSpec):
    """``S_t = W_t + int_0^t W_u / u du``; the integral starts at the first grid point."""

    kind: ClassVar[str] = "IntegratedRatio"

    @property
    def s0(self):
        return 0.0

    def singular_times(self, horizon):
        return (0.0,)

    def _rate(self, grid, w):
        t = grid.times[:-1]
        rate = np.zeros(w[:, :-1, 0].shape)
        rate[:, 1:] = w[:, 1:-1, 0] / t[None, 1:]
        return rate

    def paths(self, grid, w):
        rate = self._rate(grid, w)
        drift = np.zeros(w.shape[:2])
        np.cumsum(rate * grid.dt[None, :], axis=1, out=drift[:, 1:])
        return w + drift[..., None], _increments(grid, w), {"W": w[..., 0]}

    def characteristics(self, grid, prices, aux):
        w = aux["W"][..., None]
        a = self._rate(grid, w)[..., None]
        return a, np.ones(a.shape + (1,))


@dataclass(frozen=True)
class BridgeExp(ModelSpec):
    """``S = exp(X)`` with ``X`` a Brownian bridge from 0 to ``K`` on ``[0, T]``.

    The bridge is sampled exactly through its time reversal: the gap
    ``K - X_{T-s}`` is a Brownian bridge from 0 to ``K`` in ``s``, which keeps
    full relative precision next to the terminal time.
    """

    K: float = 1.0
    kind: ClassVar[str] = "BridgeExp"

    @property
    def s0(self):
        return 1.0

    def validate(self):
        if not self.K > 0:
            raise ValidationError("K must be positive")

    def singular_times(self, horizon):
        return (horizon,)

    def noise_grid(self, grid):
        return grid.reversed()

    def paths(self, grid, w):
        rev = grid.reversed()
        s = rev.times
        horizon = grid.horizon
        b = w[..., 0]
        gap_rev = b - (s / horizon)[None, :] * (b[:, -1:] - self.K)
        gap_rev[:, 0] = 0.0
        gap_rev[:, -1] = self.K
        gap = gap_rev[:, ::-1].copy()
        x = self.K - gap
        prices = np.exp(x)[..., None]
        noise = -np.diff(b[:, ::-1], axis=1)[..., None]
        return prices, noise, {"X": x, "gap": gap}

    def characteristics(self, grid, prices, aux):
        s = prices[:, :-1, :]
        rate = aux["gap"][:, :-1] / grid.ttm[None, :-1] + 0.5
        return s * rate[..., None], (s**2)[..., None]


@dataclass(frozen=True)
class PowerVol(ModelSpec):
    """``dS = S sigma(S)^2 dt + S sigma(S) dW`` with ``sigma(x) = x^mu_exp``, Euler scheme.

    Paths are absorbed at :data:`POWERVOL_FLOOR` and flagged in
    ``aux['absorbed']``.
    """

    mu_exp: float = -1.0
    s_init: float = 1.0
    floor: float = POWERVOL_FLOOR
    kind: ClassVar[str] = "PowerVol"

    @property
    def s0(self):
        return self.s_init

    def validate(self):
        if not self.s_init > 0:
            raise ValidationError("s0 must be positive")
        if not self.floor > 0:
            raise ValidationError("floor must be positive")

    def paths(self, grid, w):
        dw = _increments(grid, w)[..., 0]
        p, n = dw.shape
        mu = self.mu_exp
        s = np.empty((p, n + 1))
        s[:, 0] = self.s_init
        absorbed = np.zeros(p, dtype=bool)
        dt = grid.dt
        with np.errstate(all="ignore"):
            for k in range(n):
                sk = s[:, k]
                nxt = sk + sk ** (1 + 2 * mu) * dt[k] + sk ** (1 + mu) * dw[:, k]
                hit = absorbed | (nxt <= self.floor)
                absorbed = hit
                s[:, k + 1] = np.where(hit, self.floor, nxt)
        return s[..., None], dw[..., None], {"absorbed": absorbed}

    def characteristics(self, grid, prices, aux):
        s = prices[:, :-1, :]
        mu = self.mu_exp
        return s ** (1 + 2 * mu), (s ** (2 + 2 * mu))[..., None]


MODEL_KINDS = {cls.kind: cls for cls in
               (BlackScholes, Diffusion, AbsLocalMartingale, MVTJump,
                IntegratedRatio, BridgeExp, PowerVol)}


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Immutable ensemble of simulated price paths.

    Attributes
    ----------
    grid : TimeGrid
    prices : ndarray, shape (n_paths, n_steps + 1, d)
    noise_increments : ndarray, shape (n_paths, n_steps, m)
    aux : mapping of str to ndarray
    master_seed : int
    spec : ModelSpec or None
    n_invalid : int
        Paths dropped because of non-finite values.
    """

    grid: TimeGrid
    prices: np.ndarray
    noise_increments: np.ndarray
    aux: Mapping[str, np.ndarray]
    master_seed: int
    spec: ModelSpec | None = None
    n_invalid: int = 0

    def __post_init__(self):
        if self.prices.ndim != 3 or self.prices.shape[1] != self.grid.n_steps + 1:
            raise ValidationError("prices must have shape (n_paths, n_steps + 1, d)")
        for arr in (self.prices, self.noise_increments, *self.aux.values()):
            arr.setflags(write=False)

    @property
    def n_paths(self):
        return self.prices.shape[0]

    @property
    def n_steps(self):
        return self.grid.n_steps

    @property
    def d(self):
        return self.prices.shape[2]

    @property
    def increments(self):
        return np.diff(self.prices, axis=1)

    def with_prices(self, prices, spec=None, aux=None):
        """Copy with replaced prices (used by numeraire changes)."""
        return PathBundle(self.grid, np.asarray(prices, float), self.noise_increments,
                          dict(self.aux if aux is None else aux), self.master_seed,
                          spec if spec is not None else self.spec, self.n_invalid)


def simulate(spec, grid, n_paths, master_seed, workers=1, invalid_limit=INVALID_LIMIT):
    """Simulate ``n_paths`` paths of ``spec`` on ``grid``.

    The driving Brownian motion comes from :func:`arbspec.rng.brownian`, so
    bundles simulated on nested grids of one ladder share their noise.
    Paths with non-finite values are dropped; if more than ``invalid_limit``
    of them are dropped the run is rejected.
    """
    spec.validate()
    if grid.n_steps < 2:
        raise ValidationError("n_steps must be at least 2")
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    w = brownian(spec.noise_grid(grid), n_paths, master_seed, dim=spec.n_noise, stream=STREAM_PRICE,
                 workers=workers)
    prices, noise, aux = spec.paths(grid, w)
    del w
    return _finalize(spec, grid, prices, noise, aux, master_seed, invalid_limit)


def _finalize(spec, grid, prices, noise, aux, master_seed, invalid_limit):
    n_paths = prices.shape[0]
    valid = np.all(np.isfinite(prices), axis=(1, 2))
    n_invalid = int(n_paths - valid.sum())
    if n_invalid > invalid_limit * n_paths:
        raise InvalidPathsError(n_invalid, n_paths, invalid_limit)
    if n_invalid:
        prices, noise = prices[valid], noise[valid]
        aux = {k: v[valid] for k, v in aux.items()}
    return PathBundle(grid, prices, noise, aux, int(master_seed), spec, n_invalid)


def simulate_bes3(r0, grid, n_paths, seed, workers=1):
    """Three-dimensional Bessel process as the norm of a 3-d Brownian motion.

    The bundle is tagged with ``PowerVol(mu_exp=-1, s_init=r0)``, whose
    dynamics coincide with the Bessel-3 process.
    """
    if not r0 > 0:
        raise ValidationError("r0 must be positive")
    w = brownian(grid, n_paths, seed, dim=3, stream=STREAM_PRICE, workers=workers)
    w[..., 0] += r0
    r = np.sqrt(np.sum(w**2, axis=-1))[..., None]
    noise = np.diff(w, axis=1)
    del w
    spec = PowerVol(mu_exp=-1.0, s_init=float(r0))
    return _finalize(spec, grid, r, noise, {}, seed, INVALID_LIMIT)


def bes3_reciprocal_mean(r0, t):
    """``E[1 / R_t]`` for a Bessel-3 process started at ``r0``."""
    return (2.0 * norm.cdf(r0 / np.sqrt(t)) - 1.0) / r0


@dataclass(frozen=True)
class LocalTime:
    """Running local-time estimates at zero, each of shape ``(P, n + 1)``."""

    tanaka: np.ndarray
    skorohod: np.ndarray


def local_time_estimate(bundle):
    """Local time at zero of the auxiliary process ``N``.

    Returns the Tanaka residual ``|N_t| - |N_0| - sum sign(N_u) dN_u`` and the
    Skorohod reflection term ``sup_{s<=t} (-sum_{u<s} sign(N_u) dN_u)``, both
    clamped at zero. ``sign(0)`` is taken as 0.
    """
    if "N" not in bundle.aux:
        raise ValidationError("local time needs the auxiliary process 'N'")
    n_proc = bundle.aux["N"]
    dn = np.diff(n_proc, axis=1)
    integral = np.zeros(n_proc.shape)
    np.cumsum(np.sign(n_proc[:, :-1]) * dn, axis=1, out=integral[:, 1:])
    tanaka = np.abs(n_proc) - np.abs(n_proc[:, :1]) - integral
    skorohod = np.maximum.accumulate(np.maximum(-integral, 0.0), axis=1)
    return LocalTime(np.maximum(tanaka, 0.0), skorohod)


# -- export -------------------------------------------------------------

_HEADER = struct.Struct("<4q")


def write_binary(bundle, path):
    """Write prices as a header of four int64 followed by float64 values.

    Header: ``n_paths, n_steps, d, seed``; body in path-step-component order.
    """
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(bundle.n_paths, bundle.n_steps, bundle.d,
                              np.int64(np.uint64(bundle.master_seed & (2**64 - 1)))))
        fh.write(np.ascontiguousarray(bundle.prices, dtype="<f8").tobytes())


def read_binary(path):
    """Inverse of :func:`write_binary`; returns ``(header_dict, prices)``."""
    with open(path, "rb") as fh:
        n_paths, n_steps, d, seed = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    header = {"n_paths": n_paths, "n_steps": n_steps, "d": d,
              "seed": int(np.uint64(np.int64(seed)))}
    return header, data.reshape(n_paths, n_steps + 1, d)


def write_csv(bundle, path):
    """Write prices as CSV: a header row, then one row per path and step."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["n_paths", "n_steps", "d", "seed"])
        wr.writerow([bundle.n_paths, bundle.n_steps, bundle.d, bundle.master_seed])
        wr.writerow(["path", "step", "time"] + [f"s{i}" for i in range(bundle.d)])
        times = bundle.grid.times
        for i in range(bundle.n_paths):
            for k in range(bundle.n_steps + 1):
                wr.writerow([i, k, repr(float(times[k]))]
                            + [repr(float(v)) for v in bundle.prices[i, k]])
