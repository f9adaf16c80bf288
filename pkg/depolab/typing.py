#
# Type hints of configuration fields and their text codecs
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
import math
from typing import Dict, List, Tuple

__all__ = [
    "Bool",
    "Str",
    "Double",
    "Int",
    "Tuple",
    "List",
    "Dict",
    "Structure",
    "get_type_name",
    "parse_value",
    "format_value",
]

# Basic types.
Bool = bool
Double = float
Str = str
Int = int

# Container types.
# Use Structure for a flat map of field names and values.
Structure = Dict[Str, object]

# Accepted spellings of boolean values.
TRUE_WORDS = ("true", "yes", "on", "1")
FALSE_WORDS = ("false", "no", "off", "0")


def get_type_name(type_hint):
    """Return a readable name of a type hint.

    :param type_hint: a type hint
    :return: a string
    """
    return getattr(type_hint, "__name__", str(type_hint))


def parse_value(type_hint, text):
    """Convert a text to a value of the given type.

    Example:

    .. code-block:: python

        parse_value(Double, "0.05")   # 0.05
        parse_value(Bool, "yes")      # True

    :param type_hint: a type hint
    :param text: a string
    :return: a value of the given type
    :raise ValueError: if the text is not a valid value
    """
    text = text.strip()

    if type_hint is Bool:
        word = text.lower()

        if word in TRUE_WORDS:
            return True

        if word in FALSE_WORDS:
            return False

        raise ValueError("Invalid boolean value '{}'.".format(text))

    if type_hint is Int:
        return int(text, 0)

    if type_hint is Double:
        # Accept the lossless hexadecimal notation too.
        if text.lower().startswith(("0x", "-0x")):
            return float.fromhex(text)

        return float(text)

    if type_hint is Str:
        return text

    raise TypeError("Unsupported type '{}'.".format(get_type_name(type_hint)))


def format_value(type_hint, value):
    """Convert a value of the given type to a text.

    The conversion is lossless: parse_value(format_value(x)) == x.

    :param type_hint: a type hint
    :param value: a value
    :return: a string
    """
    if type_hint is Bool:
        return "true" if value else "false"

    if type_hint is Double:
        value = float(value)

        if not math.isfinite(value):
            raise ValueError("Invalid number '{}'.".format(value))

        return repr(value)

    if type_hint is Int:
        return str(int(value))

    if type_hint is Str:
        return str(value)

    raise TypeError("Unsupported type '{}'.".format(get_type_name(type_hint)))
