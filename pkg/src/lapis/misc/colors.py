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
"""Functions to colorize summaries and Gantt lanes"""
from hashlib import md5

import colored
from ansi2html import Ansi2HTMLConverter
from bs4 import BeautifulSoup
from colored import stylize

from lapis.config import GLOBAL
from lapis.theme import ANSI, BW, HTML, decolorize


def lim(x):
    return min(255, max(0, x))


def task_rgb(task, ampl=0.6, margin=64):
    """
    Stable color of a task, derived from the md5 of its id.

    >>> task_rgb(3) == task_rgb(3)
    True
    >>> all(64 <= c <= 255 for c in task_rgb(0))
    True

    Returns
    -------
        [r, g, b] integers
    """
    numbers = md5(str(task).encode()).digest()
    return [int(lim(margin + numbers[i] * ampl)) for i in range(3)]


def hexcolor(rgb):
    """
    >>> hexcolor([255, 0, 16])
    '#ff0010'
    """
    return "#" + "".join(hex(c)[2:].rjust(2, "0") for c in rgb)


def paint(txt, rgb, dark=None):
    """
    Bold colored text over the theme background.

    >>> from lapis.theme import decolorize
    >>> decolorize(paint("4.62x", [200, 120, 64]))
    '4.62x'
    """
    if dark is None:
        dark = GLOBAL["dark_theme"]
    if not dark:
        rgb = [max(0, c - 130) for c in rgb]
    bgcolor = colored.bg("#000000") if dark else colored.bg("#FFFFFF")
    return stylize(txt, colored.fg(hexcolor(rgb)) + colored.attr("bold") + bgcolor)


def ansi2html(ansi, title="lapis"):
    """
    Standalone HTML page rendering an ANSI-colored text.

    >>> page = ansi2html(paint("saved", [64, 200, 64]), title="report")
    >>> page.startswith("<!DOCTYPE html>"), "saved" in page, "<title>report</title>" in page
    (True, True, True)
    """
    conv = Ansi2HTMLConverter(dark_bg=GLOBAL["dark_theme"], title=title)
    html = conv.convert(ansi, full=True, ensure_trailing_newline=True)
    soup = BeautifulSoup(html, "html.parser")
    style = soup.find("style").prettify()
    body = "".join(str(x) for x in soup.find("body").contents)
    return f'<!DOCTYPE html>\n<html>\n<head>\n<meta charset="utf-8">\n<title>{title}</title>\n{style}</head>\n<body>{body}</body>\n</html>\n'


def render(ansi, format=None, title="lapis"):
    """
    Convert a painted text to the requested output format (default: the global one).

    >>> render(paint("1.61x", [64, 64, 200]), BW)
    '1.61x'
    """
    format = GLOBAL["format"] if format is None else format
    if format == BW:
        return decolorize(ansi)
    elif format == ANSI:
        return ansi
    elif format == HTML:
        return ansi2html(ansi, title)
    elif callable(format):  # pragma: no cover
        return format(ansi)
    else:  # pragma: no cover
        raise Exception(f"Unknown format: {format}")
