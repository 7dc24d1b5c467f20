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
"""Exceptions created in this package.

They help writing complete tests."""


class LapisError(Exception):
    pass


class EmptyMatrix(LapisError):
    pass


class NonFinite(LapisError):
    pass


class UnsupportedBits(LapisError):
    pass


class ShapeMismatch(LapisError):
    pass


class SchemeMismatch(LapisError):
    pass


class AllMaskedRow(LapisError):
    pass


class EmptyCandidateSet(LapisError):
    pass


class ZeroMass(LapisError):
    pass


class InvalidK(LapisError):
    pass


class InvalidConfig(LapisError):
    pass


class CyclicGraph(LapisError):
    pass


class NodeExceedsBudget(LapisError):
    pass


class EmptyBatch(LapisError):
    pass


class EmptyTrace(LapisError):
    pass


class WorkloadMismatch(LapisError):
    pass


class InfeasibleStats(LapisError):
    pass


class EmissionError(LapisError):
    pass


class ParseError(LapisError):
    """Unreadable configuration or trace text.

    `line` is 1-based when known; `field` names the offending key when known."""

    def __init__(self, msg, line=None, field=None):
        super().__init__(msg)
        self.line = line
        self.field = field


class ValidationError(LapisError):
    """A parsed configuration violates an invariant; `field` names it."""

    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field
