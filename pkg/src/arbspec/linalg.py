"""Small dense symmetric linear algebra.

Pseudoinverses and range projections of symmetric positive semidefinite
matrices, in single-matrix and batched form. The batched routines work on
stacks shaped ``(..., d, d)`` and are what the characteristics pipeline uses
to compute the market price of risk ``lambda = c^+ a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

EPS = np.finfo(float).eps
PSD_REL_TOL = 1e-9


def _check_square(c):
    c = np.asarray(c, dtype=float)
    if c.ndim < 2 or c.shape[-1] != c.shape[-2]:
        raise ValidationError(f"expected square matrices, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValidationError("matrix contains non-finite entries")
    return c


def _psd_tolerance(c):
    tr = np.abs(np.trace(c, axis1=-2, axis2=-1))
    return PSD_REL_TOL * tr


def symmetrize(c, check=True):
    """Return ``(c + c.T) / 2`` after checking the asymmetry is roundoff.

    Parameters
    ----------
    c : array_like, shape (..., d, d)
    check : bool
        Reject inputs whose asymmetry exceeds ``tol_psd``.
    """
    c = _check_square(c)
    sym = 0.5 * (c + np.swapaxes(c, -1, -2))
    if check:
        skew = np.max(np.abs(c - sym), axis=(-2, -1))
        tol = np.maximum(_psd_tolerance(c), 1e3 * EPS * np.max(np.abs(c), axis=(-2, -1)))
        if np.any(skew > tol):
            raise ValidationError(
                f"matrix not symmetric: max asymmetry {float(np.max(skew)):.3e}"
            )
    return sym


def _clamped_eigh(c):
    """Eigendecomposition with the PSD check and rank cutoff applied."""
    c = symmetrize(c)
    w, v = np.linalg.eigh(c)
    tol = _psd_tolerance(c)
    most_negative = w[..., 0]
    if np.any(most_negative < -tol):
        raise ValidationError(
            f"matrix not positive semidefinite: eigenvalue {float(np.min(most_negative)):.3e}"
        )
    dim = c.shape[-1]
    wmax = np.max(w, axis=-1, keepdims=True)
    cutoff = dim * EPS * np.maximum(wmax, 0.0)
    keep = w > cutoff
    w = np.where(keep, w, 0.0)
    return w, v, keep


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Validated symmetric positive semidefinite matrix.

    The stored entries are exactly symmetric; eigenvalues in
    ``[-tol_psd, 0)`` are accepted and treated as zero downstream.
    """

    entries: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if c.ndim != 2:
            raise ValidationError("SymMatrix needs a 2-d array")
        c = symmetrize(c)
        _clamped_eigh(c)
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def dim(self):
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _as_array(c):
    return c.entries if isinstance(c, SymMatrix) else np.asarray(c, dtype=float)


def pinv(c):
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Parameters
    ----------
    c : SymMatrix or array_like, shape (..., d, d)

    Returns
    -------
    ndarray
        ``c^+`` with the same shape. Eigenvalues at or below
        ``d * eps * max_eigenvalue`` are treated as zero.

    Examples
    --------
    >>> pinv([[1.0, 1.0], [1.0, 1.0]])
    array([[0.25, 0.25],
           [0.25, 0.25]])
    """
    c = _as_array(c)
    if c.shape[-2:] == (1, 1):
        return _pinv_scalar(c)
    w, v, keep = _clamped_eigh(c)
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (v * inv[..., None, :]) @ np.swapaxes(v, -1, -2)


def _pinv_scalar(c):
    c = _check_square(c)
    x = c[..., 0, 0]
    if np.any(x < -PSD_REL_TOL * np.abs(x)):
        raise ValidationError(f"negative variance {float(np.min(x)):.3e}")
    keep = x > 0.0
    out = np.where(keep, 1.0 / np.where(keep, x, 1.0), 0.0)
    return out[..., None, None]


def range_projector(c):
    """Orthogonal projector ``c c^+`` onto the range of ``c``."""
    c = _as_array(c)
    if c.shape[-2:] == (1, 1):
        _check_square(c)
        return (c[..., 0, 0] > 0).astype(float)[..., None, None]
    _, v, keep = _clamped_eigh(c)
    vk = v * keep[..., None, :]
    return vk @ np.swapaxes(vk, -1, -2)


def range_project(c, x):
    """Project ``x`` onto the range of ``c``.

    Parameters
    ----------
    c : SymMatrix or array_like, shape (..., d, d)
    x : array_like, shape (..., d)

    Returns
    -------
    ndarray, shape (..., d)
    """
    c = _as_array(c)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != c.shape[-1]:
        raise ValidationError(
            f"dimension mismatch: matrix is {c.shape[-1]}, vector is {x.shape[-1]}"
        )
    proj = range_projector(c)
    return np.einsum("...ij,...j->...i", proj, x)


def decompose(a, c):
    """Split a drift into its range and kernel parts.

    Returns ``(lam, nu)`` with ``lam = c^+ a`` and ``nu = a - c lam``, so that
    ``nu`` lies in the kernel of ``c``.

    Parameters
    ----------
    a : array_like, shape (..., d)
    c : array_like, shape (..., d, d)
    """
    a = np.asarray(a, dtype=float)
    c = _as_array(c)
    if a.shape[-1] != c.shape[-1]:
        raise ValidationError("drift and diffusion dimensions differ")
    cp = pinv(c)
    lam = np.einsum("...ij,...j->...i", cp, a)
    nu = a - np.einsum("...ij,...j->...i", c, lam)
    return lam, nu


def quadratic_form(x, c):
    """Return ``x^T c x`` over the leading axes."""
    return np.einsum("...i,...ij,...j->...", x, c, x)
