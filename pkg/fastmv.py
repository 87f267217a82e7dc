#!/usr/bin/env python3
"""
FFT Matrix-Vector Products
Circulant embedding of the nine block-Toeplitz-with-Toeplitz-blocks (BTTB) pieces of
the parallelogram operator, and the projected product A v = B^T (A~ (B v)).

For a block with row grid R and column grid C (per axis) the generating array G holds
offsets pos_col - pos_row, so y[i] = sum_k G[k - i + R - 1] x[k]. With H[m] = G[R - 1 - m]
this is a convolution; H is wrapped into a circulant of size L >= R + C - 1.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft

from errors import DimensionError
from mesh import DOWN, NODE, UP

logger = logging.getLogger(__name__)

KINDS = (NODE, UP, DOWN)
SMOOTH_PRIMES = (2, 3, 5, 7)


def next_smooth_size(n):
    """Smallest m >= n whose prime factors are all <= 7"""
    m = max(int(n), 1)
    while True:
        r = m
        for p in SMOOTH_PRIMES:
            while r % p == 0:
                r //= p
        if r == 1:
            return m
        m += 1


def _embed(G, row_shape, col_shape, fft_shape):
    rx, ry = row_shape
    cx, cy = col_shape
    if G.shape != (rx + cx - 1, ry + cy - 1):
        raise DimensionError(f"Generating array {G.shape} does not match rows {row_shape} and columns {col_shape}")
    lx, ly = fft_shape
    if lx < rx + cx - 1 or ly < ry + cy - 1:
        raise DimensionError(f"FFT size {fft_shape} too small for rows {row_shape} and columns {col_shape}")
    c = np.zeros(fft_shape, dtype=complex)
    ix = (rx - 1 - np.arange(G.shape[0])) % lx
    iy = (ry - 1 - np.arange(G.shape[1])) % ly
    c[np.ix_(ix, iy)] = G
    return c


@dataclass(frozen=True, eq=False)
class BCCBSymbol:
    """Circulant embedding of one BTTB block and its 2D spectrum"""

    row_shape: tuple[int, int]
    col_shape: tuple[int, int]
    fft_shape: tuple[int, int]
    embedding: np.ndarray
    spectrum: np.ndarray

    @classmethod
    def from_generating(cls, G, row_shape, col_shape, fft_shape=None, workers=1):
        G = np.asarray(G, dtype=complex)
        if fft_shape is None:
            fft_shape = (next_smooth_size(row_shape[0] + col_shape[0] - 1),
                         next_smooth_size(row_shape[1] + col_shape[1] - 1))
        c = _embed(G, row_shape, col_shape, fft_shape)
        return cls(tuple(row_shape), tuple(col_shape), tuple(fft_shape), c, scipy.fft.fft2(c, workers=workers))

    @property
    def n_rows(self):
        return self.row_shape[0] * self.row_shape[1]

    @property
    def n_cols(self):
        return self.col_shape[0] * self.col_shape[1]

    def window(self):
        """Generating array recovered from the embedding"""
        rx, ry = self.row_shape
        gx = rx + self.col_shape[0] - 1
        gy = ry + self.col_shape[1] - 1
        ix = (rx - 1 - np.arange(gx)) % self.fft_shape[0]
        iy = (ry - 1 - np.arange(gy)) % self.fft_shape[1]
        return self.embedding[np.ix_(ix, iy)]


def bttb_matvec(symbol, v, workers=1):
    """Product of one BTTB block with a vector (column-grid order, b inner)"""
    v = np.asarray(v)
    if v.shape != (symbol.n_cols,):
        raise DimensionError(f"Vector of length {v.size} does not match block with {symbol.n_cols} columns")
    if symbol.n_rows == 0:
        return np.zeros(0, dtype=complex)
    pad = np.zeros(symbol.fft_shape, dtype=complex)
    pad[:symbol.col_shape[0], :symbol.col_shape[1]] = v.reshape(symbol.col_shape)
    out = scipy.fft.ifft2(symbol.spectrum * scipy.fft.fft2(pad, workers=workers), workers=workers)
    return out[:symbol.row_shape[0], :symbol.row_shape[1]].ravel()


def toeplitz_dense(G, row_shape, col_shape):
    """Dense BTTB block from its generating array"""
    rx, ry = row_shape
    cx, cy = col_shape
    ri, rj = np.meshgrid(np.arange(rx), np.arange(ry), indexing='ij')
    ci, cj = np.meshgrid(np.arange(cx), np.arange(cy), indexing='ij')
    di = ci.ravel()[None, :] - ri.ravel()[:, None] + rx - 1
    dj = cj.ravel()[None, :] - rj.ravel()[:, None] + ry - 1
    return np.asarray(G)[di, dj]


class MatvecScratch:
    """Reusable FFT buffers; one instance per concurrent caller"""

    def __init__(self, fft_shape):
        self.fft_shape = tuple(fft_shape)
        self.pad = np.zeros(self.fft_shape, dtype=complex)
        self.spectra = {kind: np.zeros(self.fft_shape, dtype=complex) for kind in KINDS}
        self.accum = np.zeros(self.fft_shape, dtype=complex)


class FastOperator:
    """Spectra of all nine blocks on one shared FFT grid, plus the DOF restriction"""

    def __init__(self, blocks, dofs, workers=1):
        if (blocks.nx, blocks.ny) != (dofs.nx, dofs.ny):
            raise DimensionError(f"Operator lattice {blocks.nx}x{blocks.ny} does not match DOF map {dofs.nx}x{dofs.ny}")
        self.blocks = blocks
        self.dofs = dofs
        self.workers = workers
        nx, ny = blocks.nx, blocks.ny
        self.fft_shape = (next_smooth_size(2 * nx - 1), next_smooth_size(2 * ny - 1))
        self.shapes = {kind: blocks.row_shape(kind) for kind in KINDS}
        self.symbols = {
            (r, c): BCCBSymbol.from_generating(blocks.generating[(r, c)], self.shapes[r], self.shapes[c],
                                               self.fft_shape, workers)
            for r in KINDS for c in KINDS
        }
        self.slices = dict(zip(KINDS, dofs.par_block_slices()))
        logger.info(f"🔁 FFT operator ready: grid {self.fft_shape}, {dofs.n_par} parallelogram DOFs")

    @property
    def shape(self):
        return (self.dofs.n_dofs, self.dofs.n_dofs)

    def new_scratch(self):
        return MatvecScratch(self.fft_shape)

    def storage_entries(self):
        """Complex numbers held for the operator (spectra and generating arrays)"""
        return sum(s.spectrum.size for s in self.symbols.values()) + self.blocks.n_entries()

    def matvec_parallelogram(self, w, scratch=None):
        """A~ w on the full parallelogram"""
        w = np.asarray(w)
        if w.shape != (self.dofs.n_par,):
            raise DimensionError(f"Parallelogram vector has length {w.size}, expected {self.dofs.n_par}")
        scratch = scratch or self.new_scratch()
        for c in KINDS:
            cx, cy = self.shapes[c]
            spec = scratch.spectra[c]
            if cx * cy == 0:
                spec[...] = 0.0
                continue
            scratch.pad[...] = 0.0
            scratch.pad[:cx, :cy] = w[self.slices[c]].reshape(cx, cy)
            spec[...] = scipy.fft.fft2(scratch.pad, workers=self.workers)
        out = np.empty(self.dofs.n_par, dtype=complex)
        for r in KINDS:
            rx, ry = self.shapes[r]
            if rx * ry == 0:
                continue
            scratch.accum[...] = 0.0
            for c in KINDS:
                scratch.accum += self.symbols[(r, c)].spectrum * scratch.spectra[c]
            y = scipy.fft.ifft2(scratch.accum, workers=self.workers, overwrite_x=True)
            out[self.slices[r]] = y[:rx, :ry].ravel()
        return out

    def matvec(self, v, scratch=None):
        return apply_A(self, self.dofs, v, scratch)

    __call__ = matvec

    def dense_parallelogram(self):
        """A~ as a dense matrix, built from the generating arrays"""
        n = self.dofs.n_par
        out = np.zeros((n, n), dtype=complex)
        for r in KINDS:
            for c in KINDS:
                out[self.slices[r], self.slices[c]] = toeplitz_dense(self.blocks.generating[(r, c)],
                                                                     self.shapes[r], self.shapes[c])
        return out


def build_symbols(blocks, dofs, workers=1):
    return FastOperator(blocks, dofs, workers)


def apply_A(op, dofs, v, scratch=None):
    """A v = B^T (A~ (B v))"""
    v = np.asarray(v)
    if v.shape != (dofs.n_dofs,):
        raise DimensionError(f"Vector of length {v.size} does not match {dofs.n_dofs} screen DOFs")
    w = dofs.scatter(v.astype(complex))
    return dofs.gather(op.matvec_parallelogram(w, scratch))
