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
from itertools import product
from unittest import TestCase

import numpy as np
import pytest

from lapis.misc.exception import EmptyMatrix, NonFinite, SchemeMismatch, ShapeMismatch, UnsupportedBits
from lapis.numerics import (
    SUPPORTED_BITS,
    QuantizedMatrix,
    QuantScheme,
    approx_scores,
    build_product_lut,
    compute_scale,
    quantize,
    roundtrip_bound,
)


class TestNumerics(TestCase):
    def test_exceps(self):
        with pytest.raises(EmptyMatrix):
            compute_scale(np.zeros((0, 3)))
        with pytest.raises(NonFinite):
            compute_scale([[1.0, np.nan]])
        with pytest.raises(NonFinite):
            quantize([[np.inf]], 4)
        with pytest.raises(UnsupportedBits):
            quantize([[1.0]], 3)
        with pytest.raises(UnsupportedBits):
            build_product_lut(16)
        q4 = QuantizedMatrix(np.ones((2, 3), dtype=np.int64), QuantScheme(4, 1.0))
        q8 = QuantizedMatrix(np.ones((2, 3), dtype=np.int64), QuantScheme(8, 1.0))
        with pytest.raises(ShapeMismatch):
            approx_scores(q4, QuantizedMatrix(np.ones((2, 2), dtype=np.int64), QuantScheme(4, 1.0)), build_product_lut(4))
        with pytest.raises(SchemeMismatch):
            approx_scores(q4, q8, build_product_lut(4))
        with pytest.raises(SchemeMismatch):
            approx_scores(q4, q4, build_product_lut(8))

    def test_scale(self):
        self.assertEqual(0.77, compute_scale([[0.1, -0.77], [0.5, 0.3]]))
        self.assertEqual(0.0, compute_scale(np.zeros((3, 3))))
        self.assertEqual(2.5, compute_scale([[-2.5, 1.0]]))

    def test_quantize(self):
        K = np.array([[0.77, 0.0], [-0.77, 0.3]])
        self.assertEqual([[7, 0], [-7, 3]], quantize(K, 4).values.tolist())
        self.assertEqual([[1, 1], [-1, 0]], quantize([[2.0, 1.0], [-1.0, 0.0]], 2).values.tolist())  # ties away from zero
        self.assertEqual([[-1, 1, 1]], quantize([[-0.3, 0.0, 0.2]], 1).values.tolist())
        self.assertEqual(0, np.count_nonzero(quantize(np.zeros((3, 3)), 4).values))
        self.assertEqual((2, 2), quantize(K, 8).shape)
        # Saturation when the scale is fixed below the data range.
        self.assertEqual([[7, -7]], quantize([[2.0, -2.0]], 4, scale=1.0).values.tolist())

    def test_codomain(self):
        rnd = np.random.default_rng(0)
        for bits in SUPPORTED_BITS:
            q = quantize(rnd.normal(size=(16, 16)), bits)
            lo, hi = q.scheme.codomain
            self.assertTrue(np.all((lo <= q.values) & (q.values <= hi)))
            if bits == 1:
                self.assertEqual({-1, 1}, set(np.unique(q.values).tolist()))

    def test_monotonicity(self):
        rnd = np.random.default_rng(1)
        for bits in (2, 4, 8):
            x = np.sort(rnd.uniform(-3, 3, size=500))
            q = quantize(x[None, :], bits, scale=3.0).values[0]
            self.assertTrue(np.all(np.diff(q) >= 0))

    def test_roundtrip_bound(self):
        rnd = np.random.default_rng(2)
        for bits in (2, 4, 8):
            for _ in range(50):
                M = rnd.uniform(0.01, 10)
                x = rnd.uniform(-M, M, size=(4, 8))
                x[0, 0] = M
                q = quantize(x, bits, scale=M)
                err = np.max(np.abs(x - q.dequantize()))
                self.assertLessEqual(err, roundtrip_bound(M, bits) * (1 + 1e-12))

    def test_lut_exhaustive(self):
        for bits in SUPPORTED_BITS:
            lut = build_product_lut(bits)
            self.assertEqual(len(lut.operands) ** 2, len(lut))
            expected = np.array([[a * c for c in lut.operands] for a in lut.operands])
            self.assertTrue(np.array_equal(expected, lut.table))
            if bits <= 4:
                for a, c in product(lut.operands, repeat=2):
                    self.assertEqual(a * c, lut[a, c])
            if bits > 1:
                self.assertTrue(all(lut[0, c] == 0 for c in lut.operands))
        self.assertEqual(256, len(build_product_lut(4)))
        self.assertEqual(65536, len(build_product_lut(8)))
        self.assertEqual(49, build_product_lut(4)[7, 7])
        self.assertIs(build_product_lut(4), build_product_lut(4))

    def test_approx_scores(self):
        lut = build_product_lut(4)
        one = QuantizedMatrix(np.array([[1]]), QuantScheme(4, 1.0))
        self.assertEqual([[1]], approx_scores(one, one, lut).tolist())
        rnd = np.random.default_rng(3)
        for _ in range(1000):
            Q = rnd.integers(-7, 8, size=(8, 8))
            K = rnd.integers(-7, 8, size=(8, 8))
            Qq, Kq = QuantizedMatrix(Q, QuantScheme(4, 1.0)), QuantizedMatrix(K, QuantScheme(4, 1.0))
            self.assertTrue(np.array_equal(Q @ K.T, approx_scores(Qq, Kq, lut)))

    def test_approx_scores_other_precisions(self):
        rnd = np.random.default_rng(4)
        for bits in SUPPORTED_BITS:
            lut = build_product_lut(bits)
            Qq = quantize(rnd.normal(size=(6, 5)), bits)
            Kq = quantize(rnd.normal(size=(9, 5)), bits)
            self.assertTrue(np.array_equal(Qq.values @ Kq.values.T, approx_scores(Qq, Kq, lut)))
