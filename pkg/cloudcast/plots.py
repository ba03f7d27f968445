"""Figures of the report: TPR against SR, and calibration curves."""

import os

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402

from . import log  # noqa: E402

__all__ = ['plot_tpr_sr', 'plot_calibration', 'plot_curves']


def _save(fig, path):
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    log.debug('wrote %s', path)
    return path


def plot_tpr_sr(curves, path, title=None):
    """Plot total predicted resources against success rate.

    curves maps model labels to a frame with level, sr and tpr columns.
    """
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for label, curve in sorted(curves.items()):
        ax.plot(curve['sr'], curve['tpr'], marker='.', label=label)
    ax.set_xlabel('Success rate [%]')
    ax.set_ylabel('Total predicted resources')
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc='best', fontsize=8)
    return _save(fig, path)


def plot_calibration(curves, path, title=None):
    """Plot achieved success rate against the targeted confidence level."""
    fig, ax = plt.subplots(figsize=(5, 5), constrained_layout=True)
    lo = hi = None
    for label, curve in sorted(curves.items()):
        ax.plot(curve['level'], curve['sr'], marker='.', label=label)
        lo = min(curve['level'].min(), lo if lo is not None else 100)
        hi = max(curve['level'].max(), hi if hi is not None else 0)
    if lo is not None:
        ax.plot([lo, hi], [lo, hi], color='gray', linestyle='--',
                label='perfect calibration')
    ax.set_xlabel('Confidence level [%]')
    ax.set_ylabel('Success rate [%]')
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc='best', fontsize=8)
    return _save(fig, path)


def plot_curves(curves, directory, plot_format='png'):
    """Draw both figures for every scenario and resource.

    curves is the averaged curve frame of the aggregated report.
    """
    written = []
    for (scenario, resource), group in curves.groupby(
            ['scenario', 'resource'], sort=True):
        by_label = {label: frame.sort_values('level')
                    for label, frame in group.groupby('label')}
        title = '%s, %s' % (scenario, resource)
        written.append(plot_tpr_sr(by_label, os.path.join(
            directory, 'tpr_sr_%s_%s.%s' % (scenario, resource,
                                             plot_format)), title))
        written.append(plot_calibration(by_label, os.path.join(
            directory, 'calibration_%s_%s.%s' % (scenario, resource,
                                                  plot_format)), title))
    return written
