"""
Turn usage events into cluster-level demand series.

Every event carries the average usage rate of some resources over its
execution interval.  The demand of a window is the sum over all events of
their rate weighted by the fraction of the window during which they ran.
Windows no event overlaps are interpolated from their neighbours and
remembered in a gap report.
"""

import math
import os

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import log
from .errors import TraceError
from .utils import read_json, write_json

WINDOW_SECONDS = 300  # five minutes

__all__ = [
    'UsageEvent', 'TraceSeries', 'GapReport', 'ValidationReport',
    'aggregate_events', 'validate_trace',
    'read_events_csv', 'read_trace_csv', 'write_trace_csv',
    'read_gap_report', 'write_gap_report']


@dataclass(frozen=True)
class UsageEvent:
    """Average resource usage of one task over [start_time, end_time)."""

    start_time: float
    end_time: float
    usage: Dict[str, float]

    def is_valid(self):
        """Check the event invariants."""
        if not (math.isfinite(self.start_time)
                and math.isfinite(self.end_time)):
            return False
        if self.end_time <= self.start_time:
            return False
        return all(math.isfinite(value) and value >= 0
                   for value in self.usage.values())


@dataclass
class GapReport:
    """Windows that were interpolated and records that were rejected."""

    cluster_id: str
    interpolated_indices: List[int] = field(default_factory=list)
    rejected_records: int = 0

    def to_dict(self):
        return dict(cluster_id=self.cluster_id,
                    interpolated_indices=list(self.interpolated_indices),
                    rejected_records=self.rejected_records)

    @classmethod
    def from_dict(cls, d):
        return cls(d['cluster_id'], list(d['interpolated_indices']),
                   int(d['rejected_records']))


@dataclass
class TraceSeries:
    """Uniformly spaced demand of one cluster for one or two resources.

    The values matrix has one row per timestamp and one column per
    resource, in raw (unscaled) units.
    """

    cluster_id: str
    resources: Sequence[str]
    window_seconds: int
    timestamps: np.ndarray
    values: np.ndarray
    gaps: Optional[GapReport] = None

    def __post_init__(self):
        self.resources = tuple(self.resources)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values

    def __len__(self):
        return len(self.timestamps)

    def column(self, resource):
        """Get the values of one resource as a vector."""
        return self.values[:, self.resource_index(resource)]

    def resource_index(self, resource):
        """Get the column index of a resource given by name or index."""
        if isinstance(resource, int):
            if not 0 <= resource < len(self.resources):
                raise TraceError('no resource #%d in %s' % (
                    resource, self.cluster_id))
            return resource
        try:
            return self.resources.index(resource)
        except ValueError:
            raise TraceError("no resource '%s' in %s (has %s)" % (
                resource, self.cluster_id, ', '.join(self.resources)))

    def with_values(self, values, resources=None):
        """Get a copy of this series with other values."""
        return replace(self, values=values,
                       resources=resources or self.resources)

    def check(self):
        """Raise a TraceError unless all series invariants hold."""
        report = validate_trace(self)
        if not report.ok:
            raise TraceError('invalid trace %s: %s' % (
                self.cluster_id, report.summary()))
        return self


@dataclass
class ValidationReport:
    """Problems found in a trace series."""

    cluster_id: str
    length: int
    spacing_violations: List[int]
    range_violations: List[int]
    nan_count: int
    negative_count: int
    duration_days: float
    shape_ok: bool = True
    resources_ok: bool = True

    @property
    def ok(self):
        return (self.shape_ok and self.resources_ok
                and not self.spacing_violations
                and not self.nan_count and not self.negative_count)

    def summary(self):
        """Describe the report in one line."""
        return ('%d points (%.2f days), %d spacing violations,'
                ' %d NaN, %d negative%s%s' % (
                    self.length, self.duration_days,
                    len(self.spacing_violations),
                    self.nan_count, self.negative_count,
                    '' if self.shape_ok else ', shape mismatch',
                    '' if self.resources_ok else ', need 1 or 2 resources'))

    def to_dict(self):
        return dict(
            cluster_id=self.cluster_id, length=self.length,
            spacing_violations=self.spacing_violations,
            range_violations=self.range_violations,
            nan_count=self.nan_count, negative_count=self.negative_count,
            duration_days=self.duration_days, ok=self.ok)


def _window_grid(window_seconds, t0, t1):
    """Check the window grid parameters and get the number of windows."""
    if window_seconds <= 0:
        raise TraceError('window must be positive, got %s' % (
            window_seconds,))
    if t1 <= t0:
        raise TraceError('empty time range [%s, %s)' % (t0, t1))
    if (t1 - t0) % window_seconds:
        raise TraceError('time range of %s s is not a multiple of %s s' % (
            t1 - t0, window_seconds))
    return int((t1 - t0) // window_seconds)


def _resource_names(events, resources):
    """Get the resource names in order of first appearance."""
    if resources is None:
        names = []
        for event in events:
            for name in event.usage:
                if name not in names:
                    names.append(name)
        resources = names
    resources = tuple(resources)
    if not 1 <= len(resources) <= 2:
        raise TraceError('need one or two resources, got %s' % (
            ', '.join(resources) or 'none',))
    return resources


def aggregate_events(events, window_seconds=WINDOW_SECONDS, t0=None, t1=None,
                     cluster_id='cluster', resources=None):
    """Aggregate usage events into a demand series.

    Each event adds usage * overlap / window_seconds to every window it
    overlaps.  Events with non-finite or negative usage are rejected and
    counted.  Windows without any overlapping event are filled by linear
    interpolation; the returned series carries a GapReport listing them.
    """
    events = list(events)
    if not events:
        raise TraceError('no data: no usage events for %s' % (cluster_id,))

    valid = [event for event in events if event.is_valid()]
    rejected = len(events) - len(valid)
    if rejected:
        log.warning('%s: rejected %d of %d usage records',
                    cluster_id, rejected, len(events))
    if not valid:
        raise TraceError('no data: all usage events of %s rejected' % (
            cluster_id,))

    if t0 is None:
        t0 = math.floor(min(e.start_time for e in valid) / window_seconds)
        t0 = int(t0 * window_seconds)
    if t1 is None:
        t1 = math.ceil(max(e.end_time for e in valid) / window_seconds)
        t1 = int(t1 * window_seconds)
    n_windows = _window_grid(window_seconds, t0, t1)
    resources = _resource_names(valid, resources)

    values = np.zeros((n_windows, len(resources)))
    covered = np.zeros(n_windows, dtype=bool)
    for event in valid:
        start = max(event.start_time, t0)
        end = min(event.end_time, t1)
        if end <= start:
            continue
        first = int((start - t0) // window_seconds)
        last = min(int(math.ceil((end - t0) / window_seconds)), n_windows)
        ks = np.arange(first, last)
        lower = t0 + ks * window_seconds
        overlap = (np.minimum(end, lower + window_seconds)
                   - np.maximum(start, lower))
        overlap = np.clip(overlap, 0, None)
        weights = overlap / window_seconds
        rates = np.array([event.usage.get(name, 0.0) for name in resources])
        values[ks] += weights[:, None] * rates[None, :]
        covered[ks[overlap > 0]] = True

    if not covered.any():
        raise TraceError('no data: no events of %s inside [%s, %s)' % (
            cluster_id, t0, t1))

    timestamps = t0 + np.arange(n_windows, dtype=np.int64) * window_seconds
    missing = np.flatnonzero(~covered)
    if len(missing):
        log.info('%s: interpolating %d empty windows of %d',
                 cluster_id, len(missing), n_windows)
        for j in range(values.shape[1]):
            values[missing, j] = np.interp(
                timestamps[missing], timestamps[covered], values[covered, j])

    gaps = GapReport(cluster_id, missing.tolist(), rejected)
    series = TraceSeries(cluster_id, resources, window_seconds,
                         timestamps, values, gaps)
    return series.check()


def validate_trace(series):
    """Report spacing and range problems of a series without raising."""
    timestamps = np.asarray(series.timestamps)
    values = np.asarray(series.values, dtype=float)
    steps = np.diff(timestamps)
    spacing = (np.flatnonzero(steps != series.window_seconds) + 1).tolist()
    nan = np.isnan(values)
    with np.errstate(invalid='ignore'):
        negative = values < 0
    bad = nan | negative
    if bad.ndim == 1:
        bad = bad[:, None]
    return ValidationReport(
        cluster_id=series.cluster_id,
        length=len(timestamps),
        spacing_violations=spacing,
        range_violations=np.flatnonzero(bad.any(axis=1)).tolist(),
        nan_count=int(nan.sum()),
        negative_count=int(negative.sum()),
        duration_days=len(timestamps) * series.window_seconds / 86400.0,
        shape_ok=values.ndim == 2 and values.shape[0] == len(timestamps),
        resources_ok=1 <= len(series.resources) <= 2)


def read_events_csv(path):
    """Read usage events from a CSV with start_time, end_time columns.

    All remaining columns are resource usage rates.  Unparseable values
    become NaN, so that aggregate_events rejects and counts the record.
    """
    frame = pd.read_csv(path, encoding='utf-8')
    for column in ('start_time', 'end_time'):
        if column not in frame.columns:
            raise TraceError("%s lacks the '%s' column" % (path, column))
    frame = frame.apply(pd.to_numeric, errors='coerce')
    resources = [c for c in frame.columns
                 if c not in ('start_time', 'end_time')]
    if not resources:
        raise TraceError('%s has no resource columns' % (path,))
    starts = frame['start_time'].to_numpy(float)
    ends = frame['end_time'].to_numpy(float)
    usage = frame[resources].to_numpy(float)
    return [UsageEvent(start, end, dict(zip(resources, row)))
            for start, end, row in zip(starts, ends, usage.tolist())]


def write_trace_csv(series, path):
    """Write a series as CSV with a timestamp column and one per resource."""
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    frame = pd.DataFrame(series.values, columns=list(series.resources))
    frame.insert(0, 'timestamp', series.timestamps)
    frame.to_csv(path, index=False, float_format='%.10g')


def read_trace_csv(path, cluster_id=None, window_seconds=None):
    """Read a series written by write_trace_csv.

    The cluster id defaults to the file name without extension and the
    window length to the spacing of the first two timestamps.
    """
    frame = pd.read_csv(path, encoding='utf-8')
    if 'timestamp' not in frame.columns:
        raise TraceError("%s lacks the 'timestamp' column" % (path,))
    if cluster_id is None:
        cluster_id = os.path.splitext(os.path.basename(path))[0]
    timestamps = frame['timestamp'].to_numpy(np.int64)
    resources = [c for c in frame.columns if c != 'timestamp']
    if window_seconds is None:
        window_seconds = int(timestamps[1] - timestamps[0]) \
            if len(timestamps) > 1 else WINDOW_SECONDS
    return TraceSeries(cluster_id, resources, window_seconds, timestamps,
                       frame[resources].to_numpy(float))


def write_gap_report(report, path):
    """Write a gap report as JSON."""
    write_json(path, report.to_dict())


def read_gap_report(path):
    """Read a gap report written by write_gap_report."""
    return GapReport.from_dict(read_json(path))
