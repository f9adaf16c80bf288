#
# Random streams derived from a master seed
#
# Copyright (C) 2026  The depolab developers.  All rights reserved.
#
# This library is free software; you can redistribute it and/or
# modify it under the terms of the GNU Lesser General Public
# License as published by the Free Software Foundation; either
# version 2.1 of the License, or (at your option) any later version.
#
# This library is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public
# License along with this library; if not, write to the Free Software
# Foundation, Inc., 51 Franklin Street, Fifth Floor, Boston, MA  02110-1301
# USA
#
import zlib

import numpy as np

__all__ = [
    "get_stream_name",
    "get_stream_key",
    "get_stream"
]


def get_stream_name(*namespace):
    """Create a readable name of a random stream.

    :param namespace: a sequence of names and counters
    :return: a string like "rl/17/group/3"
    """
    return "/".join(str(part) for part in namespace)


def get_stream_key(*namespace):
    """Create a spawn key of a random stream.

    Names are hashed with CRC32, counters are used verbatim,
    so the key depends only on the namespace itself.

    :param namespace: a sequence of names and counters
    :return: a tuple of non-negative integers
    """
    key = []

    for part in namespace:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)) and part >= 0:
            key.append(int(part))
        else:
            raise ValueError("Invalid stream name '{}'.".format(part))

    return tuple(key)


def get_stream(seed, *namespace):
    """Return a random generator for the given namespace.

    The stream is counter-based: the same seed and namespace always
    produce the same draws, regardless of what else was drawn before
    or in which order the streams are created.

    :param seed: a master seed
    :param namespace: a sequence of names and counters
    :return: an instance of numpy.random.Generator
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=get_stream_key(*namespace)
    )
    return np.random.default_rng(sequence)
