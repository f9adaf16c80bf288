#
# Support for declarative configuration data
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
from abc import ABCMeta
from typing import get_type_hints

from depolab.error import ConfigError
from depolab.typing import parse_value, format_value, get_type_name, \
    Bool, Double, Int, Str, Structure

__all__ = [
    "ConfigField",
    "ConfigData",
    "get_fields",
    "generate_string_from_data",
    "compare_data"
]


# Class attribute for config fields.
CONFIG_FIELDS_ATTRIBUTE = "__config_fields__"

# Supported types of config fields.
SUPPORTED_TYPES = (Bool, Int, Double, Str)


class ConfigField(object):
    """Description of a field in a config data class."""

    def __init__(self, name, type_hint, default):
        """Create a description of the field.

        :param name: a name of the field
        :param type_hint: a type hint
        :param default: a default value
        """
        self._name = name
        self._type_hint = type_hint
        self._default = default

    @property
    def name(self):
        """Name of the field."""
        return self._name

    @property
    def type_hint(self):
        """Type hint of the field."""
        return self._type_hint

    @property
    def default(self):
        """Default value of the field."""
        return self._default

    def convert(self, value):
        """Check and convert a value for this field.

        Integers are accepted for real fields. Booleans are never
        accepted for numeric fields.

        :param value: a value
        :return: a converted value
        :raise ConfigError: if the value has a wrong type
        """
        if self._type_hint is Double and isinstance(value, int) \
                and not isinstance(value, bool):
            return float(value)

        if isinstance(value, bool) and self._type_hint is not Bool:
            raise self._invalid_type(value)

        if not isinstance(value, self._type_hint):
            raise self._invalid_type(value)

        return value

    def _invalid_type(self, value):
        return ConfigError(
            "Field '{}' expects '{}', not '{}'.".format(
                self._name,
                get_type_name(self._type_hint),
                type(value).__name__
            )
        )

    def set_data(self, obj, value):
        """Set the data attribute.

        :param obj: a data object
        :param value: a value
        """
        setattr(obj, self._name, self.convert(value))

    def set_data_text(self, obj, text):
        """Set the data attribute from a text.

        :param obj: a data object
        :param text: a string
        """
        try:
            value = parse_value(self._type_hint, text)
        except ValueError:
            raise ConfigError(
                "Invalid value '{}' of field '{}'.".format(text, self._name)
            ) from None

        self.set_data(obj, value)

    def get_data(self, obj):
        """Get the data attribute.

        :param obj: a data object
        :return: a value
        """
        return getattr(obj, self._name)

    def get_data_text(self, obj):
        """Get the data attribute as a text.

        :param obj: a data object
        :return: a string
        """
        return format_value(self._type_hint, self.get_data(obj))


class ConfigData(metaclass=ABCMeta):
    """Object representation of configuration data.

    Classes derived from this class declare their fields as
    annotated class attributes with default values:

    .. code-block:: python

        class ClipConfig(ConfigData):
            eps_lo: Double = 0.2
            eps_hi: Double = 0.28

    Fields are collected through the whole class hierarchy, so a class
    that inherits several config classes has the union of their fields
    and can be used wherever any of the parents is expected.
    """

    def __init_subclass__(cls, *args, **kwargs):
        """Create a new data class."""
        super().__init_subclass__(*args, **kwargs)

        # Generate the config fields from the members of the class cls.
        setattr(
            cls,
            CONFIG_FIELDS_ATTRIBUTE,
            ConfigFieldFactory.generate_fields(cls)
        )

    def __init__(self, **values):
        """Create a data object with default values.

        :param values: values that override the defaults
        """
        for field in get_fields(self).values():
            field.set_data(self, field.default)

        self.update(values)

    def update(self, structure: Structure):
        """Update fields of this data object.

        :param structure: a map of field names and values
        :raise ConfigError: if a field doesn't exist
        """
        if not isinstance(structure, dict):
            raise TypeError(
                "Invalid type '{}'.".format(type(structure).__name__)
            )

        fields = get_fields(self)

        for name, value in structure.items():
            field = fields.get(name, None)

            if not field:
                raise ConfigError("Field '{}' doesn't exist.".format(name))

            field.set_data(self, value)

    def update_text(self, name, text):
        """Update one field of this data object from a text.

        :param name: a name of the field
        :param text: a string with the value
        :raise ConfigError: if a field doesn't exist
        """
        field = get_fields(self).get(name, None)

        if not field:
            raise ConfigError("Field '{}' doesn't exist.".format(name))

        field.set_data_text(self, text)

    def validate(self):
        """Check invariants of the data.

        :raise ConfigError: if an invariant is violated
        """
        pass

    def extract(self, data_type):
        """Create a data object of a parent type from this object.

        :param data_type: a subclass of ConfigData
        :return: an instance of data_type
        """
        structure = self.to_structure(self)
        fields = get_fields(data_type)

        return data_type.from_structure({
            name: value for name, value in structure.items()
            if name in fields
        })

    @classmethod
    def from_structure(cls, structure: Structure):
        """Convert a map of values to a data object.

        :param structure: a map of field names and values
        :return: a data object
        """
        data = cls()
        data.update(structure)
        return data

    @classmethod
    def to_structure(cls, data) -> Structure:
        """Convert a data object to a map of values.

        :return: a map of field names and values
        """
        if not isinstance(data, cls):
            raise TypeError(
                "Invalid type '{}'.".format(type(data).__name__)
            )

        return {
            name: field.get_data(data)
            for name, field in get_fields(cls).items()
        }

    @classmethod
    def from_text(cls, text):
        """Parse a data object from the flat key-value format.

        Every non-empty line has the form ``key = value``.
        Lines starting with ``#`` are comments.

        :param text: a string
        :return: a data object
        :raise ConfigError: if the text is malformed
        """
        data = cls()
        data.update_lines(text)
        return data

    def update_lines(self, text):
        """Update this data object from the flat key-value format.

        :param text: a string
        """
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()

            if not line or line.startswith("#"):
                continue

            if "=" not in line:
                raise ConfigError(
                    "Invalid line {}: '{}'.".format(number, line)
                )

            name, value = line.split("=", 1)
            self.update_text(name.strip(), value)

    @classmethod
    def to_text(cls, data):
        """Write a data object in the flat key-value format.

        :param data: a data object
        :return: a string
        """
        if not isinstance(data, cls):
            raise TypeError(
                "Invalid type '{}'.".format(type(data).__name__)
            )

        lines = [
            "{} = {}".format(name, field.get_data_text(data))
            for name, field in get_fields(cls).items()
        ]

        return "\n".join(lines) + "\n"

    def __repr__(self):
        """Convert this data object to a string."""
        return generate_string_from_data(self)

    def __eq__(self, other):
        """Compare data of two objects."""
        return compare_data(self, other)

    __hash__ = None


def get_fields(obj):
    """Return config fields of a data object or class.

    :param obj: a data object or class
    :return: a map of config fields
    """
    fields = getattr(obj, CONFIG_FIELDS_ATTRIBUTE, None)

    if fields is None:
        raise ConfigError(
            "Fields are not defined at '{}'.".format(CONFIG_FIELDS_ATTRIBUTE)
        )

    return fields


class ConfigFieldFactory(object):
    """A config field factory."""

    @classmethod
    def generate_fields(cls, data_class):
        """Generate config fields from annotations of a class.

        Public annotated class attributes with a default value are
        fields. The annotation defines the type of the field.

        :param data_class: a data class
        :return: a map of config fields

        :raise ConfigError: if the fields cannot be generated
        """
        fields = {}

        for name, type_hint in get_type_hints(data_class).items():
            if not cls._is_field(name):
                continue

            default = cls._get_default(data_class, name)
            cls._check_type(name, type_hint)
            fields[name] = ConfigField(name, type_hint, default)

        if not fields:
            raise ConfigError("No fields found.")

        return fields

    @classmethod
    def _is_field(cls, name):
        """Is the annotated name a config field?"""
        return not name.startswith("_")

    @classmethod
    def _get_default(cls, data_class, name):
        """Get the default value of a field."""
        if not hasattr(data_class, name):
            raise ConfigError(
                "Field '{}' has no default value.".format(name)
            )

        return getattr(data_class, name)

    @classmethod
    def _check_type(cls, name, type_hint):
        """Check the type of a field."""
        if type_hint not in SUPPORTED_TYPES:
            raise ConfigError(
                "Field '{}' has unsupported type '{}'.".format(
                    name, get_type_name(type_hint)
                )
            )


def generate_string_from_data(obj, skip=None, add=None):
    """Generate a string representation of a data object.

    The attributes in the string representation will be
    sorted alphabetically.

    :param obj: a data object
    :param skip: a list of names that should be skipped or None
    :param add: a dictionary of attributes to add or None
    :return: a string representation of the data object
    """
    dictionary = {}

    for field in get_fields(obj).values():
        dictionary[field.name] = field.get_data(obj)

    for name in skip or []:
        dictionary.pop(name, None)

    for name in add or {}:
        dictionary[name] = add[name]

    attributes = sorted([
        "{}={}".format(name, repr(value)) for name, value in dictionary.items()
    ])

    return "{}({})".format(obj.__class__.__name__, ", ".join(attributes))


def compare_data(obj, other):
    """Compare data of the given data objects.

    :param obj: a data object
    :param other: another data object
    :return: True if the data is equal, otherwise False
    """
    return isinstance(obj, ConfigData) \
        and isinstance(other, ConfigData) \
        and type(obj) is type(other) \
        and (obj.to_structure(obj) == other.to_structure(other))
