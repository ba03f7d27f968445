"""
Runtime benchmarks: training time against training-set size, fine-tune
time against the number of newest samples, and single-sample inference
latency.

Every timed run is kept in a raw log, so that the reported means and
medians can be recomputed.  Times are wall-clock seconds from a
monotonic clock.
"""

import json
import math
import os
import tempfile
import time

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List

import numpy as np
import pandas as pd
import torch

from . import log
from .errors import DataError, ModelError
from .models import build_model, predict_distribution, train
from .scenarios import FineTuneOptions, fine_tune
from .utils import LockFile

FRACTIONS = (0.2, 0.4, 0.6, 0.8)
STEP_COUNTS = (6, 12, 18, 24)  # 30 to 120 minutes of newest data
REPETITIONS = 10

# shared by every run root on this machine
LOCK_PATH = os.path.join(tempfile.gettempdir(), 'cloudcast-bench.lock')

__all__ = ['RuntimeReport', 'bench_training', 'bench_finetune',
           'bench_inference', 'run_benchmarks', 'write_runtime_report',
           'read_raw_log']


@dataclass
class RuntimeReport:
    """Timings of one model, one row per benchmark cell."""

    label: str
    rows: List[Dict] = field(default_factory=list)
    raw: List[Dict] = field(default_factory=list)
    repetitions: int = REPETITIONS

    def frame(self):
        return pd.DataFrame(self.rows, columns=[
            'label', 'benchmark', 'cell', 'mean_s', 'std_s', 'median_s',
            'repetitions'])

    def add(self, benchmark, cell, times):
        """Summarize the times of one cell and keep them in the raw log."""
        times = np.asarray(times, dtype=float)
        if not len(times) or not np.all(times > 0):
            raise DataError('%s %s: times must be positive' % (
                benchmark, cell))
        self.rows.append(dict(
            label=self.label, benchmark=benchmark, cell=cell,
            mean_s=float(times.mean()),
            std_s=float(times.std(ddof=1)) if len(times) > 1 else 0.0,
            median_s=float(np.median(times)),
            repetitions=len(times)))
        self.raw.extend(dict(label=self.label, benchmark=benchmark,
                             cell=cell, run=i, seconds=float(s))
                        for i, s in enumerate(times))

    def extend(self, other):
        self.rows.extend(other.rows)
        self.raw.extend(other.raw)
        return self

    def to_dict(self):
        return asdict(self)


def _timed(func, *args, **kwargs):
    start = time.perf_counter()
    result = func(*args, **kwargs)
    return time.perf_counter() - start, result


def bench_training(config, bundle, fractions=FRACTIONS,
                   repetitions=REPETITIONS, max_epochs=10, patience=20,
                   seed=0, label=None):
    """Time training on the leading fractions of a bundle's training set."""
    report = RuntimeReport(label or config.kind.value,
                           repetitions=repetitions)
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise DataError('training fraction %s outside (0, 1]' % (
                fraction,))
        n = int(math.floor(fraction * len(bundle.train)))
        if n < 1:
            raise DataError('training fraction %s of %d windows is empty'
                            % (fraction, len(bundle.train)))
        data = replace(bundle, train=bundle.train.subset(np.arange(n)))
        times = []
        for rep in range(repetitions):
            torch.manual_seed(seed + rep)
            net = build_model(config)
            seconds, _ = _timed(train, net, data, max_epochs=max_epochs,
                                patience=patience, seed=seed + rep)
            times.append(seconds)
        report.add('training', '%d%%' % (round(100 * fraction),), times)
        log.info('training on %d%% (%d windows): %.3f s', 100 * fraction,
                 n, report.rows[-1]['mean_s'])
    return report


def bench_finetune(model, bundle, step_counts=STEP_COUNTS,
                   repetitions=REPETITIONS, epochs=1, label=None):
    """Time fine-tuning on the newest step_counts training windows.

    The benchmarked model keeps its weights.
    """
    report = RuntimeReport(label or model.label, repetitions=repetitions)
    before = model.weights_hash()
    available = len(bundle.train)
    opts = FineTuneOptions(epochs=epochs)
    for steps in step_counts:
        if not 0 < steps <= available:
            raise DataError('cannot fine-tune on %d of %d windows' % (
                steps, available))
        data = replace(bundle, train=bundle.train.subset(
            np.arange(available - steps, available)))
        times = [_timed(fine_tune, model, data, opts)[0]
                 for _ in range(repetitions)]
        report.add('finetune', '%d steps' % (steps,), times)
        log.info('fine-tuning on %d windows: %.3f s', steps,
                 report.rows[-1]['mean_s'])
    if model.weights_hash() != before:
        raise ModelError('fine-tune benchmark changed the model')
    return report


def bench_inference(model, bundle, calls=100, warmup=1, label=None):
    """Time predictions of one test window; report their median."""
    if calls < 1:
        raise DataError('need at least one call')
    inputs = bundle.test.subset([0]).batch(dtype=np.float32)[0]
    for _ in range(warmup):
        predict_distribution(model, inputs)
    times = [_timed(predict_distribution, model, inputs)[0]
             for _ in range(calls)]
    report = RuntimeReport(label or model.label, repetitions=calls)
    report.add('inference', '1 sample', times)
    log.info('inference: median %.6f s per sample',
             report.rows[-1]['median_s'])
    return report


def run_benchmarks(config, model, bundle, directory, fractions=FRACTIONS,
                   step_counts=STEP_COUNTS, repetitions=REPETITIONS,
                   max_epochs=10, calls=100, seed=0, label=None):
    """Run all three benchmarks under the machine-wide lock and write them.

    Another benchmark holding LOCK_PATH makes this fail at once.
    """
    label = label or model.label
    with LockFile(LOCK_PATH):
        report = bench_training(config, bundle, fractions, repetitions,
                                max_epochs, seed=seed, label=label)
        report.extend(bench_finetune(model, bundle, step_counts,
                                     repetitions, label=label))
        report.extend(bench_inference(model, bundle, calls, label=label))
    write_runtime_report(report, directory)
    return report


def write_runtime_report(report, directory):
    """Write runtime.csv and the raw runtime_log.jsonl."""
    os.makedirs(directory, exist_ok=True)
    report.frame().to_csv(os.path.join(directory, 'runtime.csv'),
                          index=False, float_format='%.6g')
    with open(os.path.join(directory, 'runtime_log.jsonl'), 'w',
              encoding='utf-8') as f:
        for entry in report.raw:
            f.write(json.dumps(entry, sort_keys=True) + '\n')


def read_raw_log(path):
    """Read a raw runtime log into a frame."""
    with open(path, encoding='utf-8') as f:
        return pd.DataFrame([json.loads(line) for line in f if line.strip()])
