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
"""Content digests and derived seeds

Everything lapis writes to disk is deterministic text; a blake3 digest of that text is the cheapest way
to tell whether two runs produced the same artifact."""

from blake3 import blake3


def digest(blob, nbytes=16):
    """
    Hexadecimal blake3 digest of a text or bytes object.

    Usage:

    >>> digest("stage 0 task 0") == digest(b"stage 0 task 0")
    True
    >>> len(digest(b"", nbytes=8))
    16

    Parameters
    ----------
    blob
        Text (utf-8 encoded before hashing) or bytes
    nbytes
        Number of bytes to keep from blake3

    Returns
    -------
        Textual digest
    """
    if isinstance(blob, str):
        blob = blob.encode()
    return blake3(blob).hexdigest(length=nbytes)


def derive_seed(seed, *labels):
    """
    Independent 63-bit seed for a named random stream.

    Streams drawn for different purposes (workload lengths, attention spot-checks) must not share
    a generator, otherwise changing one experiment knob would shift all other random draws.

    >>> derive_seed(0, "workload") == derive_seed(0, "workload")
    True
    >>> derive_seed(0, "workload") != derive_seed(0, "spot-check")
    True
    >>> 0 <= derive_seed(123, "a", 7) < 2 ** 63
    True
    """
    text = "/".join([str(seed)] + [str(label) for label in labels])
    return int.from_bytes(blake3(text.encode()).digest(length=8), byteorder="little") >> 1
