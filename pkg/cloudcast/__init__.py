"""cloudcast uncertainty-aware workload forecasting for cloud clusters.

Predicts the resource demand of a cluster cell 10 minutes ahead as a
Normal distribution, trains point, distributional and Bayesian-last-layer
recurrent models on one or many traces, and scores the predicted upper
bounds against QoS targets.
"""

import logging
import sys

__version__ = '1.0'

__all__ = [
    'execute_file', 'execute_string',
    'set_loglevel', 'set_output', 'shutdown',
    'script_ext', 'CommandLoop']


script_ext = '.ccast'  # file extension for pipeline scripts


loglevels = dict(
    CRITICAL=logging.CRITICAL,
    ERROR=logging.ERROR,
    WARNING=logging.WARNING,
    INFO=logging.INFO,
    DEBUG=logging.DEBUG,
    NOTSET=logging.NOTSET)

log = logging.getLogger('cloudcast')
handler = None


def set_loglevel(level=None):
    """Set the logging level.

    If no level is passed, use INFO as logging level.
    """
    if level is None:
        level = logging.INFO
    if isinstance(level, str):
        level = loglevels[level.upper()]
    log.setLevel(level)


def set_output(stream=None):
    """Set the stream the log is written to.

    If no stream is passed, use standard output.
    """
    global handler
    if stream is None:
        stream = sys.stdout
    if handler:
        log.removeHandler(handler)
    handler = logging.StreamHandler(stream)
    log.addHandler(handler)


def shutdown():
    """Shut down and flush the logging system."""
    sys.stdout.flush()
    sys.stderr.flush()
    logging.shutdown()


set_loglevel()
set_output()


# the two ways of driving cloudcast:
from .parse import execute_file, execute_string  # noqa: E402
from .shell import CommandLoop  # noqa: E402

# initialize global dict
from . import namespaces  # noqa: E402
namespaces.init_global_dict()
