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
"""Encoder model shapes and dataset length statistics used as experiment presets"""
from collections import namedtuple

Model = namedtuple("Model", "layers hidden heads")
"""Encoder stack shape"""

LengthStats = namedtuple("LengthStats", "avg max")
"""Token-length statistics of an evaluation dataset"""

models = {
    "distilbert": Model(6, 768, 12),
    "bert-base": Model(12, 768, 12),
    "roberta": Model(12, 768, 12),
    "bert-large": Model(24, 1024, 16),
}

datasets = {
    "squad": LengthStats(177, 821),
    "rte": LengthStats(68, 253),
    "mrpc": LengthStats(53, 86),
    "squad2": LengthStats(171, 975),
}

DEFAULT_K = 30
"""Top-k sweet point between sparsity and accuracy"""

DEFAULT_UNITS, DEFAULT_CLOCK_HZ = 3000, 200_000_000
"""DSP-equivalent units available to the encoder and their clock"""


def padding_overhead(stats):
    """
    Work ratio between padding every sequence to the maximum and processing true lengths.

    `stats` is a LengthStats or a batch of lengths.

    >>> padding_overhead([100, 50])
    1.3333333333333333

    >>> round(padding_overhead(datasets["squad"]), 1), round(padding_overhead(datasets["mrpc"]), 1)
    (4.6, 1.6)
    >>> round(padding_overhead(datasets["squad2"]), 1)
    5.7
    """
    if not isinstance(stats, LengthStats):
        stats = LengthStats(sum(stats) / len(stats), max(stats))
    return stats.max / stats.avg
