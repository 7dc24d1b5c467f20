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
"""Output formats for summaries and allocation listings"""
import re
from dataclasses import dataclass


@dataclass(frozen=True)
class Format:
    """Rendering target: plain text (BW), terminal colors (ANSI) or web page (HTML)"""

    name: str
    i: int
    suffix: str

    def __repr__(self):
        return self.name


BW = Format("BW", 0, "txt")
ANSI = Format("ANSI", 1, "ans")
HTML = Format("HTML", 2, "html")
FORMATS = {f.name.lower(): f for f in (BW, ANSI, HTML)}


def decolorize(txt):
    """
    Strip ANSI escape sequences, e.g. before writing a colored summary to a plain file.

    >>> decolorize("\x1b[38;5;71m\x1b[1mstage 1\x1b[0m: 3 nodes")
    'stage 1: 3 nodes'
    >>> FORMATS["html"], HTML.suffix
    (HTML, 'html')
    """
    ansi_escape = re.compile(r"\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])")
    return ansi_escape.sub("", txt)
