"""Fourier fields on the flat torus cross-section S = T^(n-1).

Fields are stored as centered mode arrays over m in [-M, M]^d (period 2*pi,
modes e^{i m.x}).  Products convolve exactly up to the cutoff: operands are
lifted to a zero-padded spatial grid (at least 4M+1 points per axis, so the
linear convolution is alias-free), multiplied pointwise, and truncated back
to the retained band.
"""

import numpy as np

from .errors import InvalidParams, RankMismatch


class TorusModes:
    """Mode bookkeeping for T^d with cutoff M per axis."""

    def __init__(self, dim, mmax):
        if dim < 0:
            raise InvalidParams("dimension must be non-negative")
        self.dim = int(dim)
        self.mmax = int(mmax)
        self.size = 2 * self.mmax + 1
        self.shape = (self.size,) * self.dim
        self.pad = _next_fast_len(max(4 * self.mmax + 1, 1))
        # mode index along each axis, centered
        self.m_axis = np.arange(-self.mmax, self.mmax + 1)

    def key(self):
        return (self.dim, self.mmax)

    def zero_field(self, comp_shape=(), with_theta=None):
        shape = comp_shape + self.shape
        if with_theta is not None:
            shape = shape + (with_theta,)
        return np.zeros(shape, dtype=complex)

    def mode_index(self, m):
        """Array index of the integer multi-index m."""
        m = tuple(int(x) for x in np.atleast_1d(m))
        if len(m) != self.dim:
            raise InvalidParams(f"mode {m} has wrong dimension")
        if any(abs(x) > self.mmax for x in m):
            raise InvalidParams(f"mode {m} outside cutoff {self.mmax}")
        return tuple(x + self.mmax for x in m)

    def _mode_axes(self, arr, theta):
        off = 1 if theta else 0
        return tuple(range(arr.ndim - self.dim - off, arr.ndim - off))

    # ----- spatial lift -------------------------------------------------

    def to_spatial(self, arr, theta=True):
        """Mode array -> values on the padded torus grid (same axes)."""
        if self.dim == 0:
            return arr
        axes = self._mode_axes(arr, theta)
        P = self.pad
        shape = list(arr.shape)
        for ax in axes:
            shape[ax] = P
        emb = np.zeros(shape, dtype=complex)
        # place the centered block at the start, then roll mode 0 to index 0
        block = [slice(None)] * arr.ndim
        for ax in axes:
            block[ax] = slice(0, self.size)
        emb[tuple(block)] = arr
        for ax in axes:
            emb = np.roll(emb, -self.mmax, axis=ax)
        vals = np.fft.ifftn(emb, axes=axes) * (P**self.dim)
        return vals

    def from_spatial(self, vals, theta=True):
        """Padded spatial values -> truncated centered mode array."""
        if self.dim == 0:
            return vals
        axes = self._mode_axes(vals, theta)
        P = self.pad
        coef = np.fft.fftn(vals, axes=axes) / (P**self.dim)
        for ax in axes:
            coef = np.roll(coef, self.mmax, axis=ax)
        block = [slice(None)] * vals.ndim
        for ax in axes:
            block[ax] = slice(0, self.size)
        return np.ascontiguousarray(coef[tuple(block)])

    def pair(self, espec, A, B, theta=True):
        """Contraction of two mode arrays: einsum over component axes,
        exact mode convolution, pointwise in theta."""
        Asp = self.to_spatial(A, theta)
        Bsp = self.to_spatial(B, theta)
        Csp = np.einsum(espec, Asp, Bsp)
        return self.from_spatial(Csp, theta)

    # ----- calculus ------------------------------------------------------

    def derivative(self, arr, direction, theta=True):
        """d/dx^direction: multiplication by i*m along the mode axis."""
        if self.dim == 0:
            return np.zeros_like(arr)
        if not (0 <= direction < self.dim):
            raise InvalidParams(f"direction {direction} out of range")
        axes = self._mode_axes(arr, theta)
        ax = axes[direction]
        shape = [1] * arr.ndim
        shape[ax] = self.size
        m = self.m_axis.reshape(shape)
        return arr * (1j * m)

    def eval_at(self, arr, x, theta=True):
        """Evaluate the field at a point x in T^d (sums the modes)."""
        if self.dim == 0:
            return arr
        x = np.atleast_1d(np.asarray(x, dtype=float))
        axes = self._mode_axes(arr, theta)
        out = arr
        for d in range(self.dim - 1, -1, -1):
            ax = axes[d]
            phase = np.exp(1j * self.m_axis * x[d])
            out = np.tensordot(out, phase, axes=([ax], [0]))
        return out

    def conj_symmetry_defect(self, arr, theta=True):
        """Max |A(-m) - conj(A(m))| (zero for real-valued fields)."""
        if self.dim == 0:
            return float(np.max(np.abs(arr.imag))) if np.iscomplexobj(arr) else 0.0
        axes = self._mode_axes(arr, theta)
        flipped = arr
        for ax in axes:
            flipped = np.flip(flipped, axis=ax)
        return float(np.max(np.abs(flipped - np.conj(arr))))


def _next_fast_len(n):
    from scipy.fft import next_fast_len

    return int(next_fast_len(int(n)))
