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

"""
Exact arithmetic helpers shared by the graph and the simulator
"""
import math
from fractions import Fraction

import numpy as np


def exact(x):
    """
    Exact rational image of an int, float or Fraction.

    >>> exact(0.5)
    Fraction(1, 2)
    >>> exact(3)
    Fraction(3, 1)
    """
    return x if isinstance(x, Fraction) else Fraction(x)


def ceil_ratio(num, den):
    """
    Ceiling of num/den computed without floating point error.

    >>> ceil_ratio(7, 2), ceil_ratio(6, 2), ceil_ratio(1, 5)
    (4, 3, 1)
    >>> ceil_ratio(0.3, 0.1)  # 0.3/0.1 == 2.9999999999999996 in floats
    3

    Parameters
    ----------
    num
        Nonnegative numerator
    den
        Positive denominator

    Returns
    -------
        Smallest integer >= num/den
    """
    if den <= 0:  # pragma: no cover
        raise ZeroDivisionError(f"Nonpositive denominator: {den}")
    return math.ceil(exact(num) / exact(den))


def ceil_int(x):
    """
    >>> ceil_int(Fraction(21, 2)), ceil_int(10)
    (11, 10)
    """
    return math.ceil(exact(x))


def round_half_away(x):
    """
    Round to the nearest integer, ties away from zero.

    >>> round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -2.5, 0.49])).tolist()
    [1.0, 2.0, 3.0, -1.0, -3.0, 0.0]
    """
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
