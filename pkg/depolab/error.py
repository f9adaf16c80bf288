#
# Errors of the laboratory and their exit statuses
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
from abc import ABCMeta, abstractmethod

__all__ = [
    "get_error_decorator",
    "DepolabError",
    "AbstractErrorRule",
    "ErrorRule",
    "DefaultErrorRule",
    "ErrorMapper",
    "EXIT_SUCCESS",
    "EXIT_FAILURE",
    "error_mapper",
    "cli_error",
    "UsageError",
    "ConfigError",
    "CheckpointError",
    "NumericalError",
]

# Exit statuses of the command line.
EXIT_SUCCESS = 0
EXIT_FAILURE = 1


def get_error_decorator(error_mapper):
    """Generate a decorator for laboratory errors.

    Create a function for decorating Python exception classes.
    The decorator will add a new rule to the given error mapper
    that will map the class and its subclasses to the specified
    exit status.

    Usage:

    .. code-block:: python

        error_mapper = ErrorMapper()
        cli_error = get_error_decorator(error_mapper)

        @cli_error(3)
        class ConfigError(DepolabError):
            pass

    :param error_mapper: an error mapper
    :return: a decorator
    """
    def decorator(exit_status):

        def decorated(cls):
            error_mapper.add_rule(ErrorRule(
                exception_type=cls,
                exit_status=exit_status
            ))
            return cls

        return decorated

    return decorator


class DepolabError(Exception):
    """A base error of the laboratory."""
    pass


class AbstractErrorRule(metaclass=ABCMeta):
    """Abstract rule for mapping a Python exception to an exit status."""

    __slots__ = []

    @abstractmethod
    def match_type(self, exception_type):
        """Is this rule matching the given exception type?

        :param exception_type: a type of the Python error
        :return: True or False
        """
        pass

    @abstractmethod
    def get_status(self, exception_type):
        """Get an exit status for the given exception type.

        :param exception_type: a type of the Python error
        :return: an integer
        """
        pass


class ErrorRule(AbstractErrorRule):
    """Rule for mapping an exception class and its subclasses."""

    __slots__ = [
        "_exception_type",
        "_exit_status"
    ]

    def __init__(self, exception_type, exit_status):
        """Create a new error rule.

        :param exception_type: a type of the Python error
        :param exit_status: an exit status of the command line
        """
        self._exception_type = exception_type
        self._exit_status = exit_status

    def match_type(self, exception_type):
        """Is this rule matching the given exception type?"""
        return issubclass(exception_type, self._exception_type)

    def get_status(self, exception_type):
        """Get an exit status for the given exception type."""
        return self._exit_status


class DefaultErrorRule(AbstractErrorRule):
    """Default rule matching every exception type."""

    __slots__ = ["_default_status"]

    def __init__(self, default_status):
        """Create a new default rule.

        :param default_status: a default exit status
        """
        self._default_status = default_status

    def match_type(self, exception_type):
        """Is this rule matching the given exception type?"""
        return True

    def get_status(self, exception_type):
        """Get an exit status for the given exception type."""
        return self._default_status


class ErrorMapper(object):
    """Class for mapping Python exceptions to exit statuses."""

    __slots__ = ["_error_rules"]

    def __init__(self):
        """Create a new error mapper."""
        self._error_rules = []
        self.reset_rules()

    def add_rule(self, rule: AbstractErrorRule):
        """Add a rule to the error mapper.

        The new rule will have a higher priority than
        the rules already contained in the error mapper.

        :param rule: an error rule
        """
        self._error_rules.append(rule)

    def reset_rules(self):
        """Reset rules in the error mapper.

        All rules will be replaced with the default one.
        """
        self._error_rules = []
        self.add_rule(DefaultErrorRule(default_status=EXIT_FAILURE))

    def get_exit_status(self, exception_type):
        """Get an exit status of the Python exception.

        The rules in the error mapper are processed in
        the reversed order to respect the priority of
        the rules.

        :param exception_type: a subclass of Exception
        :return: an exit status
        :raise LookupError: if no status is found
        """
        for rule in reversed(self._error_rules):
            if rule.match_type(exception_type):
                return rule.get_status(exception_type)

        raise LookupError(
            "No status found for '{}'.".format(exception_type.__name__)
        )


# The default mapper used by the command line.
error_mapper = ErrorMapper()
cli_error = get_error_decorator(error_mapper)


@cli_error(2)
class UsageError(DepolabError):
    """Invalid usage of the command line."""
    pass


@cli_error(3)
class ConfigError(DepolabError):
    """Invalid configuration."""
    pass


@cli_error(4)
class CheckpointError(DepolabError):
    """Invalid or incompatible checkpoint."""
    pass


@cli_error(5)
class NumericalError(DepolabError):
    """Numerical failure of a computation."""
    pass
