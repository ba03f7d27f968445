"""Utility functions for testing cloudcast"""

import os

from io import StringIO

import numpy as np

import cloudcast

from cloudcast import dataset
from cloudcast.ingest import TraceSeries
from cloudcast.models import ModelConfig
from cloudcast.synth import SynthSpec, generate_trace

test_dir = os.path.dirname(__file__)
cloudcast_dir = os.path.dirname(cloudcast.__file__)
if os.path.dirname(test_dir) != os.path.dirname(cloudcast_dir):
    raise ImportError('cloudcast was not imported from the right directory')

INPUT_LEN = 24  # two hours, short enough for quick training
LENGTH = 400  # points of the synthetic test traces


def make_series(cluster_id='c0', length=LENGTH, resources=2, seed=0):
    """Get a synthetic demand series with a two-hour period."""
    return generate_trace(SynthSpec(
        length=length, resources=resources, seed=seed, period=INPUT_LEN,
        cross_correlation=0.5, cluster_id=cluster_id))


def ramp_series(length=100, cluster_id='ramp'):
    """Get a bivariate series whose values are 0, 1, 2, ... and twice that."""
    t = np.arange(length, dtype=float)
    return TraceSeries(cluster_id, ('cpu', 'memory'), 300, t * 300,
                       np.column_stack([t, 2 * t]))


def make_bundle(cluster_id='c0', resources=2, seed=0, resource=None):
    """Get the split bundle of a synthetic series."""
    return dataset.split(make_series(cluster_id, resources=resources,
                                     seed=seed),
                         INPUT_LEN, resource=resource)


def tiny_config(kind='distributional', resources=2, **kw):
    """Get a model configuration small enough to train in a second."""
    d = dict(kind=kind, conv_kernels=[[4, 3]], lstm_units=8,
             dense_stack=[8, 8], output_resources=resources,
             batch_size=64, epistemic_samples=10, input_len=INPUT_LEN)
    d.update(kw)
    return ModelConfig(**d).validate()


def execute_script(filename):
    """Execute the pipeline script with the given filename."""
    if filename != '-':
        filename = os.path.join(test_dir, filename)
    cloudcast.execute_file(filename)


def execute_shell(commands, fail_on_unknown=False):
    """Execute lines of commands using the shell."""
    cmd_inp = StringIO(commands + '\nquit\n')
    cmd_loop = cloudcast.shell.CommandLoop
    try:
        s = cmd_loop(stdin=cmd_inp, fail_on_unknown=fail_on_unknown)
        s.cmdloop()
    except SystemExit:
        pass
    finally:
        cmd_loop.reset()  # do not keep as singleton
