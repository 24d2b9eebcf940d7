"""Time grids on ``[0, T]`` with optional geometric bunching.

Every grid point is stored as an ``(anchor, offset)`` pair whose sum is the
time. Points far from a singular time carry their own time as anchor and a
zero offset. Points bunched geometrically against a singular time ``s`` keep
``s`` as anchor and a tiny signed offset, so step sizes and distances to
``s`` stay exact even where ``s + offset`` rounds to ``s`` in floating point.
This is what allows refinement depths of several hundred halvings next to
the terminal time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


_FOLD_MIN = 2.0**-40


def _canonical(anchors, offsets):
    """Fold offsets into anchors where that is exact and the offset is not tiny.

    Tiny offsets stay attached to their anchor, so every point whose float
    time could tie with a neighbour shares that neighbour's anchor and is
    ordered by its offset.
    """
    t = anchors + offsets
    fold = ((t - anchors) == offsets) & (np.abs(offsets) >= _FOLD_MIN * np.maximum(1.0, np.abs(anchors)))
    return np.where(fold, t, anchors), np.where(fold, 0.0, offsets)


def _merge(anchors, offsets):
    anchors, offsets = _canonical(np.asarray(anchors, float), np.asarray(offsets, float))
    order = np.lexsort((offsets, anchors + offsets))
    anchors, offsets = anchors[order], offsets[order]
    keep = np.ones(anchors.size, dtype=bool)
    keep[1:] = (anchors[1:] != anchors[:-1]) | (offsets[1:] != offsets[:-1])
    return anchors[keep], offsets[keep]


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Discretization of ``[0, horizon]``.

    Attributes
    ----------
    horizon : float
        Terminal time ``T``.
    anchors, offsets : ndarray
        Exact representation of the grid points.
    level : int
        Refinement level inside a ladder (0 for a standalone grid).
    coarser : TimeGrid or None
        The next coarser grid of the ladder. Its points are a subset of this
        grid's points, which is what couples Brownian paths across levels.
    singular : tuple of float
        Declared singular times the grid was bunched against.
    """

    horizon: float
    anchors: np.ndarray
    offsets: np.ndarray
    level: int = 0
    coarser: "TimeGrid | None" = None
    singular: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=float)
        o = np.asarray(self.offsets, dtype=float)
        if a.shape != o.shape or a.ndim != 1:
            raise ValidationError("anchors and offsets must be 1-d and equal length")
        if a.size < 3:
            raise ValidationError("a grid needs at least 2 steps")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if a[0] + o[0] != 0.0 or a[-1] != self.horizon or o[-1] != 0.0:
            raise ValidationError("grid must start at 0 and end at the horizon")
        dt = np.diff(a) + np.diff(o)
        if not np.all(dt > 0):
            raise ValidationError("grid steps must be strictly positive")
        for arr in (a, o):
            arr.setflags(write=False)
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "offsets", o)
        if self.coarser is not None:
            missing = ~self.contains(self.coarser)
            if np.any(missing):
                raise ValidationError("coarser grid is not nested in this grid")

    # -- construction ---------------------------------------------------

    @classmethod
    def uniform(cls, horizon, n_steps):
        """Uniform grid with ``n_steps`` steps."""
        if n_steps < 2:
            raise ValidationError("n_steps must be at least 2")
        t = np.linspace(0.0, horizon, n_steps + 1)
        t[-1] = horizon
        return cls(float(horizon), t, np.zeros_like(t))

    @classmethod
    def refined(cls, horizon, n_steps, singular=(), depth=0, substeps=1,
                start=None, coarser=None, level=0):
        """Uniform grid plus geometric bunching next to singular times.

        Next to each singular time ``s`` the interval of length ``start``
        (default: one uniform step) is cut into ``depth`` dyadic layers
        ``[start 2^-(j+1), start 2^-j]`` measured from ``s``, each split into
        ``substeps`` equal pieces. Layers lie after ``s`` when ``s < T`` and
        before ``T`` when ``s == T``.
        """
        if n_steps < 2:
            raise ValidationError("n_steps must be at least 2")
        if depth < 0 or substeps < 1:
            raise ValidationError("depth must be >= 0 and substeps >= 1")
        horizon = float(horizon)
        t = np.linspace(0.0, horizon, n_steps + 1)
        t[-1] = horizon
        anchors = [t]
        offsets = [np.zeros_like(t)]
        h = horizon / n_steps if start is None else float(start)
        if depth and not 0 < h <= horizon:
            raise ValidationError("layer start must lie in (0, T]")
        if depth:
            j = np.arange(depth)
            lo = h * 2.0 ** -(j + 1)
            frac = np.arange(substeps) / substeps
            layer = (lo[:, None] * (1.0 + frac[None, :])).ravel()
            for s in singular:
                s = float(s)
                if not 0.0 <= s <= horizon:
                    raise ValidationError(f"singular time {s} outside [0, T]")
                if s < horizon:
                    if s + h > horizon:
                        raise ValidationError("bunching interval runs past T")
                    anchors.append(np.full(layer.size, s))
                    offsets.append(layer)
                    anchors.append(np.array([s + h]))
                    offsets.append(np.zeros(1))
                else:
                    anchors.append(np.full(layer.size, horizon))
                    offsets.append(-layer)
        a, o = np.concatenate(anchors), np.concatenate(offsets)
        if coarser is not None:
            a = np.concatenate([a, coarser.anchors])
            o = np.concatenate([o, coarser.offsets])
        a, o = _merge(a, o)
        return cls(horizon, a, o, level=level, coarser=coarser,
                   singular=tuple(float(s) for s in singular))

    @classmethod
    def ladder(cls, horizon, n_steps, levels, singular=(), depth=0, substeps=1,
               start=None):
        """Nested grids for a refinement study.

        Level ``l`` has ``n_steps * 2**l`` uniform steps and ``depth * 2**l``
        geometric layers, merged with every coarser level so that the grids
        are nested.
        """
        if levels < 1:
            raise ValidationError("levels must be >= 1")
        grids = []
        prev = None
        for lvl in range(levels):
            st = None if start is None else start
            g = cls.refined(horizon, n_steps * 2**lvl, singular=singular,
                            depth=depth * 2**lvl, substeps=substeps,
                            start=st, coarser=prev, level=lvl)
            grids.append(g)
            prev = g
        return grids

    # -- derived arrays -----------------------------------------------

    def _cached(self, key, fn):
        if key not in self._cache:
            val = fn()
            val.setflags(write=False)
            self._cache[key] = val
        return self._cache[key]

    @property
    def n_steps(self):
        return self.anchors.size - 1

    @property
    def times(self):
        """Grid times in floating point (may round near singular times)."""
        return self._cached("times", lambda: self.anchors + self.offsets)

    @property
    def dt(self):
        """Exact step sizes."""
        return self._cached("dt", lambda: np.diff(self.anchors) + np.diff(self.offsets))

    @property
    def ttm(self):
        """Exact time to maturity ``T - t``."""
        return self._cached("ttm", lambda: (self.horizon - self.anchors) - self.offsets)

    def elapsed(self, s):
        """Exact ``t - s`` for every grid point."""
        return (self.anchors - float(s)) + self.offsets

    @property
    def is_uniform(self):
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=1e-9, atol=0.0))

    def contains(self, other):
        """Boolean mask over ``other``'s points telling which are in ``self``."""
        idx = self.locate(other)
        return idx >= 0

    def locate(self, other):
        """Index in ``self`` of each point of ``other`` (``-1`` if absent)."""
        key_self = self.anchors + self.offsets
        key_other = other.anchors + other.offsets
        lo = np.searchsorted(key_self, key_other, side="left")
        hi = np.searchsorted(key_self, key_other, side="right")
        out = np.full(other.anchors.size, -1, dtype=np.int64)
        for i in range(other.anchors.size):
            for j in range(lo[i], hi[i]):
                if self.anchors[j] == other.anchors[i] and self.offsets[j] == other.offsets[i]:
                    out[i] = j
                    break
        return out

    def index_at(self, t):
        """Index of the last grid point not after time ``t``."""
        k = int(np.searchsorted(self.times, float(t), side="right")) - 1
        return max(0, min(k, self.n_steps))

    def reversed(self):
        """Grid of ``T - t`` with singular times mirrored."""
        src_a, src_o = self.anchors[::-1], self.offsets[::-1]
        a = self.horizon - src_a
        exact = (self.horizon - a) == src_a
        o = np.where(exact, -src_o, -(src_a + src_o))
        a = np.where(exact, a, self.horizon)
        a, o = _canonical(a, o)
        coarser = None if self.coarser is None else self.coarser.reversed()
        return TimeGrid(self.horizon, a, o, level=self.level, coarser=coarser,
                        singular=tuple(self.horizon - s for s in self.singular))
