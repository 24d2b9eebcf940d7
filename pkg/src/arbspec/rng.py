"""Counter-based random streams and coupled Brownian paths.

Each path owns a Philox stream whose key is derived from
``(master_seed, stream_tag, level, path_index)``. Within a stream the draw
for step ``k`` sits at a fixed counter position, so every value is a pure
function of ``(master_seed, stream_tag, level, path_index, k)`` and the
output does not depend on how paths are split across workers.

Brownian paths on a ladder of nested grids are built coarse to fine: the
coarsest level uses independent Gaussian increments and every finer level
only fills its new points with Brownian-bridge draws. Points shared with a
coarser level therefore carry identical values on every level.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ValidationError

STREAM_PRICE = 0
STREAM_ORTHOGONAL = 1
STREAM_AUX = 2


def _key(master_seed, stream, level, index):
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(stream), int(level), int(index)])
    return ss.generate_state(2, dtype=np.uint64)


def path_generator(master_seed, stream, level, index):
    """Generator for one path's stream."""
    return np.random.Generator(np.random.Philox(key=_key(master_seed, stream, level, index)))


def path_normals(master_seed, n_paths, size, stream=0, level=0, workers=1, start=0):
    """Standard normals of shape ``(n_paths,) + size``, one stream per path.

    Parameters
    ----------
    master_seed : int
    n_paths : int
    size : tuple of int
        Per-path shape.
    stream, level : int
        Stream tag and refinement level mixed into each path key.
    workers : int
        Number of threads. The result is identical for any value.
    start : int
        Index of the first path, for generating a slice of a larger ensemble.
    """
    size = tuple(int(s) for s in np.atleast_1d(size))
    out = np.empty((n_paths,) + size)

    def fill(lo, hi):
        for i in range(lo, hi):
            out[i] = path_generator(master_seed, stream, level, start + i).standard_normal(size)

    workers = max(1, int(workers))
    if workers == 1 or n_paths < 2 * workers:
        fill(0, n_paths)
    else:
        bounds = np.linspace(0, n_paths, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda b: fill(*b), zip(bounds[:-1], bounds[1:])))
    return out


def _interval_lengths(grid, left, right):
    """Exact distances between grid points ``left < right``."""
    return (grid.anchors[right] - grid.anchors[left]) + (grid.offsets[right] - grid.offsets[left])


def _fill_schedule(known):
    """Order in which unknown points are filled, as a list of index batches.

    Each batch fills the middle point of every run of unknown points, so a
    batch never contains two points of the same gap.
    """
    known = known.copy()
    batches = []
    while not known.all():
        idx = np.flatnonzero(~known)
        breaks = np.flatnonzero(np.diff(idx) > 1) + 1
        runs = np.split(idx, breaks)
        mids = np.array([r[(r.size - 1) // 2] for r in runs])
        batches.append(mids)
        known[mids] = True
    return batches


def brownian(grid, n_paths, master_seed, dim=1, stream=STREAM_PRICE, workers=1):
    """Brownian motion sampled on ``grid``, shape ``(n_paths, n_steps + 1, dim)``.

    If ``grid.coarser`` is set, the path restricted to the coarser grid equals
    ``brownian(grid.coarser, ...)`` exactly.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    if grid.coarser is None:
        z = path_normals(master_seed, n_paths, (grid.n_steps, dim), stream, grid.level, workers)
        z *= np.sqrt(grid.dt)[None, :, None]
        w = np.zeros((n_paths, grid.n_steps + 1, dim))
        np.cumsum(z, axis=1, out=w[:, 1:])
        return w

    coarse = brownian(grid.coarser, n_paths, master_seed, dim, stream, workers)
    pos = grid.locate(grid.coarser)
    w = np.zeros((n_paths, grid.n_steps + 1, dim))
    w[:, pos] = coarse
    del coarse
    known = np.zeros(grid.n_steps + 1, dtype=bool)
    known[pos] = True
    batches = _fill_schedule(known)
    n_new = sum(b.size for b in batches)
    z = path_normals(master_seed, n_paths, (n_new, dim), stream, grid.level, workers)
    col = 0
    for mids in batches:
        # nearest known neighbours of each new point
        kidx = np.flatnonzero(known)
        slot = np.searchsorted(kidx, mids)
        left, right = kidx[slot - 1], kidx[slot]
        a = _interval_lengths(grid, left, mids)
        b = _interval_lengths(grid, mids, right)
        frac = a / (a + b)
        sd = np.sqrt(a * b / (a + b))
        wl, wr = w[:, left], w[:, right]
        w[:, mids] = wl + frac[None, :, None] * (wr - wl) + sd[None, :, None] * z[:, col:col + mids.size]
        col += mids.size
        known[mids] = True
    return w
