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
from typing import Union

from lapis.theme import BW, Format

GLOBAL = {"dark_theme": True, "format": BW, "tile": 64, "r_max": 8, "merge_run": 16, "window": "stage"}


def setup(
    dark_theme: bool = None,
    format: Union[Format, callable] = None,
    tile: int = None,
    r_max: int = None,
    merge_run: int = None,
    window: str = None,
):
    """
    Change global settings

    >>> from lapis.config import GLOBAL, setup
    >>> GLOBAL["tile"], GLOBAL["r_max"]
    (64, 8)
    >>> setup(tile=32)
    >>> GLOBAL["tile"]
    32
    >>> setup(tile=64, window="global")
    >>> GLOBAL["window"]
    'global'
    >>> setup(window="stage")
    >>> try:
    ...     setup(window="layer")
    ... except ValueError as e:
    ...     print(e)
    Unknown utilization window: layer

    Parameters
    ----------
    dark_theme
        Black or white background for colored summaries.
    format
        Plain text (BW); colored text (ANSI); or, colored text for the web (HTML)
    tile
        Cap on the inner parallelism (MACs per cycle) of one operator instance.
    r_max
        Largest stage replication factor tried by `enumerate_replication`.
    merge_run
        Length of the sorted runs merged by `topk_select`.
    window
        "stage": utilization over each stage's own [first start, last end];
        "global": over the whole trace span.
    """
    for name, value in [("tile", tile), ("r_max", r_max), ("merge_run", merge_run)]:
        if value is not None and value < 1:
            raise ValueError(f"'{name}' must be at least 1: {value}")
    if window is not None and window not in ("stage", "global"):
        raise ValueError(f"Unknown utilization window: {window}")
    if dark_theme is not None:
        GLOBAL["dark_theme"] = dark_theme
    if format is not None:
        GLOBAL["format"] = format
    if tile is not None:
        GLOBAL["tile"] = tile
    if r_max is not None:
        GLOBAL["r_max"] = r_max
    if merge_run is not None:
        GLOBAL["merge_run"] = merge_run
    if window is not None:
        GLOBAL["window"] = window
