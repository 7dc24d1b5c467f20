#  Copyright (c) 2026. The lapis developers
#  This file is part of the lapis project.
#  Please respect the license - more about this in the section (*) below.
#
#  lapis is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  lapis is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with lapis.  If not, see <http://www.gnu.org/licenses/>.
#
#  (*) Removing authorship by any means, e.g. by distribution of derived
#  works or verbatim, obfuscated, compiled or rewritten versions of any
#  part of this work is illegal and unethical regarding the effort and
#  time spent here.
"""Symmetric low-bit quantization and table-driven integer products

A real matrix is mapped onto the signed integer range of `bits` bits by its max-abs value `M`.
Products between two quantized operands are read from an exhaustive table instead of multiplied,
which is how the attention pre-selection ranks candidate keys without full precision arithmetic.

>>> import numpy as np
>>> K = np.array([[0.77, -0.2], [0.0, 0.41]])
>>> Kq = quantize(K, 4)
>>> Kq.values.tolist(), Kq.scheme.scale
([[7, -2], [0, 4]], 0.77)
>>> Qq = quantize(np.array([[1.0, 1.0]]), 4)
>>> approx_scores(Qq, Kq, build_product_lut(4)).tolist()
[[35, 28]]
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from lapis.misc.exception import EmptyMatrix, NonFinite, SchemeMismatch, ShapeMismatch, UnsupportedBits
from lapis.misc.math import round_half_away

SUPPORTED_BITS = (1, 2, 4, 8)


def check_bits(bits):
    """
    >>> check_bits(3)
    Traceback (most recent call last):
    ...
    lapis.misc.exception.UnsupportedBits: Unsupported precision: 3 bits; choose one of (1, 2, 4, 8)
    """
    if bits not in SUPPORTED_BITS:
        raise UnsupportedBits(f"Unsupported precision: {bits} bits; choose one of {SUPPORTED_BITS}")


@dataclass(frozen=True)
class QuantScheme:
    """
    Precision and scale factor of a quantized tensor.

    >>> QuantScheme(4, 0.77).levels, QuantScheme(8, 1.0).levels, QuantScheme(1, 1.0).codomain
    (7, 127, (-1, 1))
    """

    bits: int
    scale: float

    def __post_init__(self):
        check_bits(self.bits)
        if not (np.isfinite(self.scale) and self.scale >= 0):
            raise NonFinite(f"Scale must be a finite nonnegative number: {self.scale}")

    @property
    def levels(self):
        """Largest representable magnitude, 2^(b-1)-1 (zero for the sign-only 1-bit scheme)."""
        return 2 ** (self.bits - 1) - 1

    @property
    def codomain(self):
        """Smallest and largest quantized values."""
        if self.bits == 1:
            return -1, 1
        return -self.levels, self.levels

    @property
    def step(self):
        """Real value of one quantization level."""
        if self.bits == 1:
            return self.scale
        return self.scale / self.levels


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    """Integer image of a real matrix together with its scheme."""

    values: np.ndarray
    scheme: QuantScheme

    @property
    def shape(self):
        return self.values.shape

    def dequantize(self):
        """
        Real matrix represented by the quantized values.

        >>> quantize(np.array([[0.77, 0.2]]), 4).dequantize().round(3).tolist()
        [[0.77, 0.22]]
        """
        return self.values * self.scheme.step


def roundtrip_bound(scale, bits):
    """
    Largest possible |x - dequantize(quantize(x))| for |x| <= scale.

    For 1 bit the sign scheme keeps only the sign, so the bound is the scale itself.

    >>> round(roundtrip_bound(0.77, 4), 6)
    0.055
    >>> roundtrip_bound(2.0, 1)
    2.0
    """
    check_bits(bits)
    if bits == 1:
        return scale
    return scale / (2 * (2 ** (bits - 1) - 1))


def compute_scale(matrix):
    """
    Max-abs value of a matrix.

    >>> compute_scale([[-2.5, 1.0]])
    2.5
    >>> compute_scale(np.zeros((3, 3)))
    0.0

    Parameters
    ----------
    matrix
        Real 2d array-like

    Returns
    -------
        M >= 0
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or 0 in matrix.shape:
        raise EmptyMatrix(f"Cannot quantize an empty matrix: shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFinite("Matrix contains NaN or infinite entries.")
    return float(np.max(np.abs(matrix)))


def quantize(matrix, bits, scale=None):
    """
    Map a real matrix onto the signed integer range of `bits` bits.

    bits >= 2: x' = round(L/M * x), with L = 2^(b-1)-1 and ties rounded away from zero.
    bits == 1: x' = sign(x), with sign(0) = +1.
    An all-zero matrix (M = 0) quantizes to zeros for bits >= 2.

    >>> quantize([[0.77, 0.0, -0.3]], 4).values.tolist()
    [[7, 0, -3]]
    >>> quantize([[-0.3, 0.0, 0.5]], 1).values.tolist()
    [[-1, 1, 1]]
    >>> quantize(np.zeros((2, 2)), 8).values.tolist()
    [[0, 0], [0, 0]]

    Parameters
    ----------
    matrix
        Real 2d array-like
    bits
        One of SUPPORTED_BITS
    scale
        Externally fixed M; entries beyond it saturate. Default: the matrix max-abs.

    Returns
    -------
        QuantizedMatrix of the same shape
    """
    check_bits(bits)
    m = compute_scale(matrix)
    matrix = np.asarray(matrix, dtype=float)
    scheme = QuantScheme(bits, m if scale is None else float(scale))
    if bits == 1:
        values = np.where(matrix >= 0, 1, -1)
    elif scheme.scale == 0:
        values = np.zeros(matrix.shape, dtype=np.int64)
    else:
        L = scheme.levels
        values = np.clip(round_half_away(L / scheme.scale * matrix), -L, L)
    return QuantizedMatrix(values.astype(np.int64), scheme)


@dataclass(frozen=True, eq=False)
class ProductLut:
    """
    Exhaustive product table between two signed `bits`-bit operands.

    For bits >= 2 it covers the full two's complement range [-2^(b-1), 2^(b-1)-1] on each axis,
    for bits == 1 the two sign values.

    >>> lut = build_product_lut(4)
    >>> len(lut), lut[7, 7], lut[-8, 3]
    (256, 49, -24)
    >>> lut1 = build_product_lut(1)
    >>> len(lut1), lut1[-1, 1]
    (4, -1)
    """

    bits: int
    operands: tuple
    table: np.ndarray

    def index(self, x):
        """Table coordinate of quantized values."""
        x = np.asarray(x)
        if self.bits == 1:
            return (x + 1) // 2
        return x + 2 ** (self.bits - 1)

    def __getitem__(self, pair):
        a, c = pair
        return int(self.table[self.index(a), self.index(c)])

    def __len__(self):
        return self.table.size


@lru_cache
def build_product_lut(bits):
    """
    >>> build_product_lut(8).table.shape
    (256, 256)
    >>> build_product_lut(3)
    Traceback (most recent call last):
    ...
    lapis.misc.exception.UnsupportedBits: Unsupported precision: 3 bits; choose one of (1, 2, 4, 8)
    """
    check_bits(bits)
    if bits == 1:
        operands = (-1, 1)
    else:
        half = 2 ** (bits - 1)
        operands = tuple(range(-half, half))
    ops = np.array(operands, dtype=np.int64)
    table = np.outer(ops, ops)
    table.setflags(write=False)
    return ProductLut(bits, operands, table)


def approx_scores(Qq, Kq, lut):
    """
    Integer score matrix S' = Q'·K'^T with every scalar product read from the table.

    >>> from lapis.numerics import QuantizedMatrix, QuantScheme
    >>> q = QuantizedMatrix(np.array([[1, -1]]), QuantScheme(4, 1.0))
    >>> k = QuantizedMatrix(np.array([[1, 1], [1, -1]]), QuantScheme(4, 1.0))
    >>> approx_scores(q, k, build_product_lut(4)).tolist()
    [[0, 2]]

    Parameters
    ----------
    Qq
        Quantized queries, n × d
    Kq
        Quantized keys, m × d
    lut
        Table built for the same precision as both operands

    Returns
    -------
        Integer matrix n × m
    """
    if Qq.shape[1] != Kq.shape[1]:
        raise ShapeMismatch(f"Query and key widths differ: {Qq.shape} vs {Kq.shape}")
    if not Qq.scheme.bits == Kq.scheme.bits == lut.bits:
        raise SchemeMismatch(f"Precisions differ: Q {Qq.scheme.bits}, K {Kq.scheme.bits}, table {lut.bits} bits")
    qi, ki = lut.index(Qq.values), lut.index(Kq.values)
    scores = np.empty((Qq.shape[0], Kq.shape[0]), dtype=np.int64)
    for i in range(Qq.shape[0]):
        scores[i] = lut.table[qi[i][None, :], ki].sum(axis=1)
    return scores
