#
# Signals of metric rows and their sinks
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
import csv
import logging
import threading

log = logging.getLogger(__name__)

__all__ = [
    "Signal",
    "CsvSink",
    "RowRecorder",
    "write_csv"
]


class Signal(object):
    """A signal emitting metric rows to connected callbacks.

    Emissions are serialized, so callbacks never run concurrently.
    """

    __slots__ = [
        "_callbacks",
        "_lock",
        "__weakref__"
    ]

    def __init__(self):
        """Create a new signal."""
        self._callbacks = []
        self._lock = threading.Lock()

    def connect(self, callback):
        """Connect to a signal.

        :param callback: a function to register
        """
        self._callbacks.append(callback)

    def __call__(self, *args, **kwargs):
        """Emit a signal with the given arguments."""
        self.emit(*args, **kwargs)

    def emit(self, *args, **kwargs):
        """Emit a signal with the given arguments."""
        with self._lock:
            # The list of callbacks can be changed, so
            # use a copy of the list for the iteration.
            for callback in self._callbacks.copy():
                callback(*args, **kwargs)

    def disconnect(self, callback=None):
        """Disconnect from a signal.

        If no callback is specified, then all functions will
        be unregistered from the signal.

        If the specified callback isn't registered, do nothing.

        :param callback: a function to unregister or None
        """
        if callback is None:
            self._callbacks.clear()
            return

        try:
            self._callbacks.remove(callback)
        except ValueError:
            pass


class CsvSink(object):
    """Write metric rows to a CSV file.

    The header is written when the file is opened. Missing values
    are written as empty fields.
    """

    def __init__(self, path, columns):
        """Create a sink.

        :param path: a path of the CSV file
        :param columns: names of the columns in order
        """
        self._path = path
        self._columns = list(columns)
        self._file = None
        self._writer = None

    @property
    def path(self):
        return self._path

    def open(self):
        """Create the file and write the header."""
        if self._writer is not None:
            return

        log.debug("Writing rows to %s.", self._path)
        self._file = open(self._path, "w", newline="")
        self._writer = csv.DictWriter(
            self._file, fieldnames=self._columns, restval=""
        )
        self._writer.writeheader()
        self._file.flush()

    def __call__(self, row):
        """Write one row.

        :param row: a map of column names and values
        """
        self.open()
        self._writer.writerow(row)
        self._file.flush()

    def close(self):
        """Close the file."""
        if self._file is not None:
            self._file.close()
            self._file = None
            self._writer = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()


class RowRecorder(object):
    """Keep emitted rows in memory."""

    def __init__(self):
        self.rows = []

    def __call__(self, row):
        self.rows.append(dict(row))


def write_csv(path, columns, rows):
    """Write a whole table to a CSV file.

    :param path: a path of the CSV file
    :param columns: names of the columns in order
    :param rows: a list of maps of column names and values
    """
    with CsvSink(path, columns) as sink:
        sink.open()

        for row in rows:
            sink(row)
