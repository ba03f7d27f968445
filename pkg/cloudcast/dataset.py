"""
Scaling, windowing and splitting of demand series.

A sample is a window of input_len consecutive scaled observations and the
scaled demand horizon_steps windows after the last of them.  Samples are
kept as (series, start) pairs in a WindowSet and only turned into arrays
batch by batch.

The first train_fraction of every series feeds training and validation,
validation being the last val_fraction of those samples.  Test samples
come from the remaining points only, so no test target is ever seen in
training, and by default no test input either.
"""

import math
import os

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import log
from .errors import DataError
from .utils import read_json, write_json

INPUT_LEN = 288  # 24 hours of five-minute windows
HORIZON_STEPS = 2  # the window starting 10 minutes after the last input
TRAIN_FRACTION = 0.8
VAL_FRACTION = 0.2

BIVARIATE = 'bivariate'

__all__ = [
    'MinMaxScaler', 'WindowSample', 'WindowSet', 'SplitBundle',
    'TrainingStream', 'fit_scaler', 'scale', 'inverse_scale',
    'select_resources', 'make_windows', 'split', 'check_leak_free',
    'merge_shuffle', 'save_bundle', 'load_bundle']


@dataclass
class MinMaxScaler:
    """Per-resource affine map of [min, max] onto [0, 1]."""

    resources: Sequence[str]
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.resources = tuple(self.resources)
        self.min = np.asarray(self.min, dtype=float).reshape(-1)
        self.max = np.asarray(self.max, dtype=float).reshape(-1)
        if np.any(self.max <= self.min):
            raise DataError('degenerate scale for %s: max <= min' % (
                ', '.join(self.resources),))

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.min) / (
            self.max - self.min)

    def inverse_transform(self, values):
        return np.asarray(values, dtype=float) * (
            self.max - self.min) + self.min

    def inverse_std(self, stds):
        """Map standard deviations from scaled to raw units."""
        return np.asarray(stds, dtype=float) * (self.max - self.min)

    def select(self, resources):
        """Get the scaler restricted to some of its resources."""
        idx = [self.resources.index(r) for r in resources]
        return MinMaxScaler([self.resources[i] for i in idx],
                            self.min[idx], self.max[idx])

    def to_dict(self):
        return dict(resources=list(self.resources),
                    min=self.min.tolist(), max=self.max.tolist())

    @classmethod
    def from_dict(cls, d):
        return cls(d['resources'], d['min'], d['max'])


@dataclass
class WindowSample:
    """One input window and its target."""

    cluster_id: str
    input: np.ndarray
    target: np.ndarray
    target_index: int


class WindowSet(object):
    """Sliding windows over one or more scaled series.

    Each window is stored as the index of its source series and the
    index of its first input point.
    """

    def __init__(self, sources, source_index, starts,
                 input_len=INPUT_LEN, horizon_steps=HORIZON_STEPS):
        self.sources = list(sources)  # (cluster_id, values) pairs
        self.source_index = np.asarray(source_index, dtype=np.int64)
        self.starts = np.asarray(starts, dtype=np.int64)
        self.input_len = input_len
        self.horizon_steps = horizon_steps
        if len(self.source_index) != len(self.starts):
            raise DataError('window sources and starts differ in length')

    def __len__(self):
        return len(self.starts)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i):
        cluster_id, values = self.sources[self.source_index[i]]
        start = int(self.starts[i])
        end = start + self.input_len
        target_index = end + self.horizon_steps - 1
        return WindowSample(cluster_id, values[start:end].copy(),
                            values[target_index].copy(), target_index)

    @property
    def n_resources(self):
        return self.sources[0][1].shape[1] if self.sources else 0

    @property
    def target_index(self):
        return self.starts + self.input_len + self.horizon_steps - 1

    @property
    def cluster_ids(self):
        names = np.array([cluster_id for cluster_id, _ in self.sources],
                         dtype=object)
        return names[self.source_index]

    @property
    def inputs(self):
        return self.batch()[0]

    @property
    def targets(self):
        return self.batch()[1]

    def batch(self, idx=None, dtype=np.float64):
        """Materialize the inputs and targets of some windows.

        Return a (n, input_len, resources) input array and a
        (n, resources) target array.
        """
        if idx is None:
            idx = np.arange(len(self))
        idx = np.asarray(idx, dtype=np.int64)
        n_res = self.n_resources
        inputs = np.empty((len(idx), self.input_len, n_res), dtype=dtype)
        targets = np.empty((len(idx), n_res), dtype=dtype)
        offsets = np.arange(self.input_len)
        source_index = self.source_index[idx]
        starts = self.starts[idx]
        for s, (_, values) in enumerate(self.sources):
            mask = source_index == s
            if not mask.any():
                continue
            first = starts[mask]
            inputs[mask] = values[first[:, None] + offsets]
            targets[mask] = values[
                first + self.input_len + self.horizon_steps - 1]
        return inputs, targets

    def subset(self, idx):
        """Get a window set with the selected windows only."""
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.sources, self.source_index[idx],
                         self.starts[idx], self.input_len,
                         self.horizon_steps)

    def for_cluster(self, cluster_id):
        """Get the windows drawn from the series of one cluster."""
        return self.subset(np.flatnonzero(self.cluster_ids == cluster_id))

    @classmethod
    def concat(cls, sets):
        """Concatenate window sets with the same geometry."""
        sets = [s for s in sets if s is not None]
        if not sets:
            raise DataError('nothing to concatenate')
        first = sets[0]
        sources, source_index, starts = [], [], []
        for s in sets:
            if (s.input_len, s.horizon_steps) != (
                    first.input_len, first.horizon_steps):
                raise DataError('cannot mix window geometries')
            if s.sources and s.n_resources != first.n_resources:
                raise DataError('cannot mix %d and %d resources' % (
                    first.n_resources, s.n_resources))
            source_index.append(s.source_index + len(sources))
            sources.extend(s.sources)
            starts.append(s.starts)
        return cls(sources, np.concatenate(source_index),
                   np.concatenate(starts), first.input_len,
                   first.horizon_steps)


@dataclass
class SplitBundle:
    """Training, validation and test windows of one cluster."""

    cluster_id: str
    resources: Sequence[str]
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: MinMaxScaler
    split_indices: Tuple[int, int]
    input_len: int = INPUT_LEN
    horizon_steps: int = HORIZON_STEPS
    series_length: int = 0
    test_context: bool = False

    @property
    def n_resources(self):
        return len(self.resources)

    def counts(self):
        return dict(train=len(self.train), val=len(self.val),
                    test=len(self.test))


@dataclass
class TrainingStream:
    """Shuffled training windows of several clusters.

    Validation and test windows stay separate per cluster.
    """

    train: WindowSet
    val_sets: Dict[str, WindowSet]
    test_sets: Dict[str, WindowSet]
    scalers: Dict[str, MinMaxScaler]
    resources: Sequence[str]
    seed: int
    clusters: List[str] = field(default_factory=list)

    @property
    def val(self):
        return WindowSet.concat(list(self.val_sets.values()))

    @property
    def n_resources(self):
        return len(self.resources)


def fit_scaler(series, train_fraction=TRAIN_FRACTION):
    """Fit a MinMax scaler on the leading training portion of a series."""
    n = int(math.floor(train_fraction * len(series)))
    if n < 1:
        raise DataError('no training points to fit a scaler on in %s' % (
            series.cluster_id,))
    head = series.values[:n]
    lo, hi = head.min(axis=0), head.max(axis=0)
    flat = [r for r, a, b in zip(series.resources, lo, hi) if b <= a]
    if flat:
        raise DataError('degenerate scale: constant training portion of'
                        ' %s in %s' % (', '.join(flat), series.cluster_id))
    return MinMaxScaler(series.resources, lo, hi)


def scale(series, scaler):
    """Get a copy of a series mapped through a scaler."""
    if tuple(series.resources) != tuple(scaler.resources):
        scaler = scaler.select(series.resources)
    return series.with_values(scaler.transform(series.values))


def inverse_scale(values, scaler):
    """Map scaled values back to raw units."""
    return scaler.inverse_transform(values)


def select_resources(series, resource=None):
    """Restrict a series to the resources a prediction mode needs.

    None keeps all resources, 'bivariate' requires two, and a resource
    name or index selects a single column.
    """
    if resource is None:
        return series
    if resource == BIVARIATE:
        if len(series.resources) != 2:
            raise DataError('bivariate mode needs two resources, %s has %s'
                            % (series.cluster_id, ', '.join(
                                series.resources)))
        return series
    j = series.resource_index(resource)
    return series.with_values(series.values[:, j:j + 1],
                              resources=(series.resources[j],))


def make_windows(series, input_len=INPUT_LEN, horizon_steps=HORIZON_STEPS,
                 resource=None):
    """Cut a scaled series into all its sliding windows."""
    if input_len < 1 or horizon_steps < 1:
        raise DataError('input length and horizon must be positive')
    series = select_resources(series, resource)
    count = len(series) - input_len - horizon_steps + 1
    if count < 1:
        raise DataError(
            'series %s too short: %d points, need at least %d' % (
                series.cluster_id, len(series), input_len + horizon_steps))
    return WindowSet([(series.cluster_id, series.values)],
                     np.zeros(count, dtype=np.int64), np.arange(count),
                     input_len, horizon_steps)


def split(series, input_len=INPUT_LEN, horizon_steps=HORIZON_STEPS,
          resource=None, train_fraction=TRAIN_FRACTION,
          val_fraction=VAL_FRACTION, test_context=False):
    """Scale and window a series into training, validation and test sets.

    The scaler is fit on the first floor(train_fraction * T) points.  A
    window belongs to training or validation if its target lies before
    that cut.  It belongs to the test set if its whole input lies after
    the cut or, with test_context, if only its target does.
    """
    series = select_resources(series, resource)
    train_end = int(math.floor(train_fraction * len(series)))
    scaler = fit_scaler(series, train_fraction)
    windows = make_windows(scale(series, scaler), input_len, horizon_steps)

    targets = windows.target_index
    train_val = np.flatnonzero(targets < train_end)
    if test_context:
        test = np.flatnonzero(targets >= train_end)
    else:
        test = np.flatnonzero(windows.starts >= train_end)
    n_train = int(math.floor((1 - val_fraction) * len(train_val)))
    if n_train < 1 or n_train == len(train_val) or not len(test):
        raise DataError(
            'insufficient data in %s: %d points give %d training/validation'
            ' and %d test samples' % (series.cluster_id, len(series),
                                      len(train_val), len(test)))

    bundle = SplitBundle(
        cluster_id=series.cluster_id,
        resources=series.resources,
        train=windows.subset(train_val[:n_train]),
        val=windows.subset(train_val[n_train:]),
        test=windows.subset(test),
        scaler=scaler,
        split_indices=(train_end, int(windows.starts[test[0]])),
        input_len=input_len,
        horizon_steps=horizon_steps,
        series_length=len(series),
        test_context=test_context)
    log.debug('split %s: %s', series.cluster_id, bundle.counts())
    return check_leak_free(bundle)


def check_leak_free(bundle):
    """Raise a DataError if test information can reach training."""
    train_end, _ = bundle.split_indices
    seen = np.concatenate([bundle.train.target_index,
                           bundle.val.target_index])
    test_targets = bundle.test.target_index
    if len(seen) and seen.max() >= train_end:
        raise DataError('%s: training target beyond the cut at %d' % (
            bundle.cluster_id, train_end))
    if len(test_targets) and test_targets.min() < train_end:
        raise DataError('%s: test target before the cut at %d' % (
            bundle.cluster_id, train_end))
    if not bundle.test_context and len(bundle.test) \
            and bundle.test.starts.min() < train_end:
        raise DataError('%s: test input before the cut at %d' % (
            bundle.cluster_id, train_end))
    return bundle


def merge_shuffle(bundles, seed):
    """Concatenate the training windows of several clusters and shuffle.

    The permutation depends only on the seed and the bundle order.
    """
    bundles = list(bundles)
    if not bundles:
        raise DataError('no bundles to merge')
    first = bundles[0]
    for bundle in bundles[1:]:
        if bundle.n_resources != first.n_resources:
            raise DataError('cannot merge %s (%d resources) with %s (%d)' % (
                bundle.cluster_id, bundle.n_resources,
                first.cluster_id, first.n_resources))
        if (bundle.input_len, bundle.horizon_steps) != (
                first.input_len, first.horizon_steps):
            raise DataError('cannot merge %s with %s: window geometry'
                            ' differs' % (bundle.cluster_id,
                                          first.cluster_id))
    train = WindowSet.concat([bundle.train for bundle in bundles])
    rng = np.random.default_rng(seed)
    train = train.subset(rng.permutation(len(train)))
    return TrainingStream(
        train=train,
        val_sets={b.cluster_id: b.val for b in bundles},
        test_sets={b.cluster_id: b.test for b in bundles},
        scalers={b.cluster_id: b.scaler for b in bundles},
        resources=first.resources,
        seed=seed,
        clusters=[b.cluster_id for b in bundles])


_partitions = ('train', 'val', 'test')


def save_bundle(bundle, directory):
    """Persist a bundle as a directory.

    Besides scaler.json and meta.json the directory holds the scaled
    series (series.npy) and, per partition, a samples_<name>.npy matrix
    with one row per sample: the flattened input_len x resources input
    followed by the resources targets.
    """
    os.makedirs(directory, exist_ok=True)
    write_json(os.path.join(directory, 'scaler.json'),
               bundle.scaler.to_dict())
    values = bundle.train.sources[0][1]
    np.save(os.path.join(directory, 'series.npy'), values)
    partitions = {}
    for name in _partitions:
        windows = getattr(bundle, name)
        partitions[name] = [int(windows.starts[0]), len(windows)]
        inputs, targets = windows.batch(dtype=np.float32)
        np.save(os.path.join(directory, 'samples_%s.npy' % (name,)),
                np.hstack([inputs.reshape(len(windows), -1), targets]))
    write_json(os.path.join(directory, 'meta.json'), dict(
        cluster_id=bundle.cluster_id,
        resources=list(bundle.resources),
        input_len=bundle.input_len,
        horizon_steps=bundle.horizon_steps,
        split_indices=list(bundle.split_indices),
        series_length=bundle.series_length,
        test_context=bundle.test_context,
        partitions=partitions,
        counts=bundle.counts()))


def load_bundle(directory):
    """Load a bundle saved by save_bundle."""
    meta = read_json(os.path.join(directory, 'meta.json'))
    scaler = MinMaxScaler.from_dict(
        read_json(os.path.join(directory, 'scaler.json')))
    values = np.load(os.path.join(directory, 'series.npy'))
    sources = [(meta['cluster_id'], values)]
    sets = {}
    for name in _partitions:
        first, count = meta['partitions'][name]
        sets[name] = WindowSet(
            sources, np.zeros(count, dtype=np.int64),
            np.arange(first, first + count),
            meta['input_len'], meta['horizon_steps'])
    bundle = SplitBundle(
        cluster_id=meta['cluster_id'],
        resources=tuple(meta['resources']),
        scaler=scaler,
        split_indices=tuple(meta['split_indices']),
        input_len=meta['input_len'],
        horizon_steps=meta['horizon_steps'],
        series_length=meta['series_length'],
        test_context=meta['test_context'],
        **sets)
    return check_leak_free(bundle)


def resource_mode(resources):
    """Name the prediction mode for a tuple of resources."""
    return BIVARIATE if len(resources) == 2 else resources[0]
