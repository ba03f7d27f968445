"""
Converters from provider trace schemas to usage events.

Each provider module registers one or more ColumnMapping objects under a
name; 'preprocess --provider <name>' picks the mapping and reads the raw
CSV through it.  The canonical event CSV is registered as 'events'.
"""

import importlib

import numpy as np
import pandas as pd

from ..errors import TraceError
from ..ingest import UsageEvent, read_events_csv

__all__ = ['ColumnMapping', 'register', 'get_adapter', 'adapter_names']

_registry = {}

_provider_modules = ('google', 'alibaba')


class ColumnMapping(object):
    """Map the columns of a raw usage table onto usage events.

    Times are multiplied by time_scale to get epoch seconds, so that
    microsecond timestamps use time_scale=1e-6.  The resources dict maps
    cloudcast resource names onto raw column names.
    """

    def __init__(self, name, start, end, resources, time_scale=1.0,
                 header=True, columns=None):
        self.name = name
        self.start = start
        self.end = end
        self.resources = dict(resources)
        self.time_scale = time_scale
        self.header = header
        self.columns = columns

    def read(self, path):
        """Read a raw CSV file into a data frame."""
        if self.header:
            return pd.read_csv(path, encoding='utf-8')
        return pd.read_csv(path, header=None, names=self.columns,
                           encoding='utf-8')

    def to_events(self, frame):
        """Convert a raw data frame into usage events."""
        needed = [self.start, self.end] + list(self.resources.values())
        missing = [c for c in needed if c not in frame.columns]
        if missing:
            raise TraceError('%s table lacks columns: %s' % (
                self.name, ', '.join(missing)))
        frame = frame[needed].apply(pd.to_numeric, errors='coerce')
        starts = frame[self.start].to_numpy(float) * self.time_scale
        ends = frame[self.end].to_numpy(float) * self.time_scale
        names = list(self.resources)
        usage = np.column_stack([
            frame[self.resources[name]].to_numpy(float) for name in names])
        return [UsageEvent(start, end, dict(zip(names, row)))
                for start, end, row in zip(starts, ends, usage.tolist())]

    def read_events(self, path):
        """Read a raw CSV file into usage events."""
        return self.to_events(self.read(path))


def register(mapping):
    """Register a column mapping under its name."""
    _registry[mapping.name] = mapping
    return mapping


def _load_providers():
    for module in _provider_modules:
        importlib.import_module('%s.%s' % (__name__, module))


def get_adapter(name):
    """Get the column mapping registered under the given name."""
    _load_providers()
    try:
        return _registry[name]
    except KeyError:
        raise TraceError("unknown trace provider '%s'; valid are: %s" % (
            name, ', '.join(adapter_names())))


def adapter_names():
    """Get the names of all registered column mappings."""
    _load_providers()
    return sorted(_registry)


class EventsMapping(ColumnMapping):
    """The canonical event CSV: every column but the times is a resource."""

    def __init__(self):
        super().__init__('events', 'start_time', 'end_time', {})

    def read_events(self, path):
        return read_events_csv(path)


register(EventsMapping())
