"""
Forecast evaluation: point accuracy, QoS of upper bounds, calibration,
statistical tests and the aggregated report.

Unless asked for raw units, everything is computed on scaled demand.
An actual equal to its upper bound counts as covered everywhere.
"""

import os

from dataclasses import asdict, dataclass
from typing import List

import numpy as np
import pandas as pd

from scipy.stats import chi2, t
from statsmodels.tsa.stattools import acovf

from . import log
from .errors import ArtifactError, DataError, DegenerateTestError
from .models import (
    ForecastDistribution, ModelKind, quantile_z, read_predictions)
from .scenarios import REPORT_EXCLUDED, calibrate_point_threshold
from .utils import read_json, write_json

LEVELS = (90.0, 99.5, 0.5)  # first, last and step of the calibration grid

__all__ = [
    'QoSReport', 'CalibrationCurve', 'point_metrics', 'qos_metrics',
    'confidence_levels', 'tpr_sr_curve', 'calibration_curve',
    'diebold_mariano', 'breusch_pagan', 'pearson', 'pinball_loss',
    'bounds', 'evaluate_run', 'compare_runs', 'aggregate_report',
    'write_report', 'find_runs', 'counterpart_run']


@dataclass
class QoSReport:
    """Quality of the upper bounds at one confidence level (percent)."""

    confidence: float
    sr: float
    op: float
    up: float
    tpr: float
    n: int

    def to_dict(self):
        return asdict(self)


@dataclass
class CalibrationCurve:
    """Targeted confidence levels against achieved success rates."""

    levels: List[float]
    achieved_sr: List[float]
    curve_mse: float
    curve_mae: float

    def to_dict(self):
        return asdict(self)


def _vectors(a, b):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(a) != len(b):
        raise DataError('length mismatch: %d and %d values' % (
            len(a), len(b)))
    if not len(a):
        raise DataError('no values')
    return a, b


def point_metrics(pred_mean, actual):
    """Get the MSE and MAE of predicted means."""
    pred_mean, actual = _vectors(pred_mean, actual)
    err = actual - pred_mean
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def qos_metrics(upper_bounds, actual, confidence):
    """Score upper bounds by success rate and over/under-prediction."""
    ub, actual = _vectors(upper_bounds, actual)
    covered = actual <= ub
    gap = ub - actual
    return QoSReport(
        confidence=float(confidence),
        sr=100.0 * covered.mean(),
        op=float(gap[covered].sum()),
        up=float(-gap[~covered].sum()),
        tpr=float(ub.sum()),
        n=len(ub))


def confidence_levels(first=LEVELS[0], last=LEVELS[1], step=LEVELS[2]):
    """Get the confidence levels, in percent, of the calibration grid."""
    count = int(round((last - first) / step)) + 1
    return np.round(first + step * np.arange(count), 10)


def bounds(dist, level, one_sided=False):
    """Upper bounds at a confidence level given in percent."""
    z = quantile_z(level / 100.0, one_sided)
    mean = dist.mean.reshape(-1)
    if dist.std is None:
        return mean * (1 + (dist.threshold or 0.0))
    return mean + z * dist.std.reshape(-1)


def tpr_sr_curve(dist, actual, levels=None, one_sided=False):
    """Get a QoSReport per confidence level, for TPR against SR plots."""
    levels = confidence_levels() if levels is None else levels
    return [qos_metrics(bounds(dist, level, one_sided), actual, level)
            for level in levels]


def calibration_curve(dist, actual, levels=None, one_sided=False):
    """Compare targeted and achieved success rates, in percent."""
    levels = np.asarray(confidence_levels() if levels is None else levels,
                        dtype=float)
    achieved = np.array([report.sr for report in tpr_sr_curve(
        dist, actual, levels, one_sided)])
    diff = achieved - levels
    return CalibrationCurve(
        levels=levels.tolist(), achieved_sr=achieved.tolist(),
        curve_mse=float(np.mean(diff ** 2)),
        curve_mae=float(np.mean(np.abs(diff))))


def pinball_loss(quantiles, actual, tau):
    """Mean quantile loss of predicted tau-quantiles."""
    q, actual = _vectors(quantiles, actual)
    diff = actual - q
    return float(np.mean(np.maximum(tau * diff, (tau - 1) * diff)))


def diebold_mariano(errors_a, errors_b, loss='squared', horizon=1):
    """Test whether two forecasts are equally accurate.

    The loss differential's long-run variance is the Newey-West
    estimate over lags up to horizon - 1, each lag k weighted by
    1 - k / horizon so that it stays non-negative.  The statistic gets
    the small-sample correction and is compared to a t distribution
    with n - 1 degrees of freedom.  A positive statistic means a is less
    accurate than b.  Return the statistic and the two-sided p-value.
    """
    errors_a, errors_b = _vectors(errors_a, errors_b)
    n = len(errors_a)
    if n < 10:
        raise DataError('need at least 10 errors, got %d' % (n,))
    if horizon < 1 or horizon >= n:
        raise DataError('horizon %d out of range' % (horizon,))
    if loss == 'squared':
        d = errors_a ** 2 - errors_b ** 2
    elif loss == 'absolute':
        d = np.abs(errors_a) - np.abs(errors_b)
    else:
        raise DataError("unknown loss '%s'; use squared or absolute" % (
            loss,))

    gamma = acovf(d, adjusted=False, demean=True, fft=False,
                  nlag=horizon - 1)
    weights = 1 - np.arange(1, horizon) / horizon
    variance = (gamma[0] + 2 * (weights * gamma[1:]).sum()) / n
    if np.ptp(d) == 0 or not variance > 0:
        raise DegenerateTestError(
            'degenerate test: loss differential has no variance')
    statistic = d.mean() / np.sqrt(variance)
    statistic *= np.sqrt((n + 1 - 2 * horizon
                          + horizon * (horizon - 1) / n) / n)
    return float(statistic), float(2 * t.sf(abs(statistic), df=n - 1))


def breusch_pagan(residuals, regressors):
    """Test residuals for heteroscedasticity.

    Squared residuals are regressed on a constant plus the regressors;
    LM = n * R^2 is chi-square with as many degrees of freedom as there
    are regressors.  Return LM and its p-value.
    """
    residuals = np.asarray(residuals, dtype=float).reshape(-1)
    regressors = np.asarray(regressors, dtype=float)
    if regressors.ndim == 1:
        regressors = regressors[:, None]
    n, k = regressors.shape
    if n != len(residuals):
        raise DataError('%d residuals but %d regressor rows' % (
            len(residuals), n))
    design = np.column_stack([np.ones(n), regressors])
    if np.linalg.matrix_rank(design) < k + 1:
        raise DataError('rank-deficient regressors')
    u2 = residuals ** 2
    centered = u2 - u2.mean()
    total = float(centered @ centered)
    if total <= 1e-300:
        return 0.0, 1.0
    coef = np.linalg.lstsq(design, u2, rcond=None)[0]
    resid = u2 - design @ coef
    r2 = 1 - float(resid @ resid) / total
    lm = n * r2
    return float(lm), float(chi2.sf(lm, k))


def pearson(x, y):
    """Sample Pearson correlation coefficient."""
    x, y = _vectors(x, y)
    if len(x) < 2:
        raise DataError('need at least two values')
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = np.sqrt(x @ x), np.sqrt(y @ y)
    if sx == 0 or sy == 0:
        raise DataError('zero variance')
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def _actuals(bundle, target_index):
    values = bundle.test.sources[0][1]
    return values[np.asarray(target_index, dtype=np.int64)]


def _resource_entry(dist, actual, val_dist, val_actual, levels, one_sided,
                    regressors, targets=None):
    mse, mae = point_metrics(dist.mean, actual)
    entry = dict(n=len(actual), mse=mse, mae=mae)

    grid = confidence_levels()
    if dist.std is None:
        targets = targets or {}
        wanted = {float(level): targets.get(float(level), float(level))
                  for level in sorted(set(grid) | set(levels))}
        thresholds = {
            level: calibrate_point_threshold(val_dist.mean, val_actual, sr)
            for level, sr in wanted.items()}
        entry['threshold'] = thresholds
        entry['threshold_target'] = wanted

        def at(level):
            return ForecastDistribution(dist.mean, None, dist.resources,
                                        thresholds[float(level)])
    else:
        def at(level):
            return dist

    def report(level):
        return qos_metrics(bounds(at(level), level, one_sided), actual,
                           level)

    entry['qos'] = [report(level).to_dict() for level in levels]
    curve = [report(level) for level in grid]
    achieved = np.array([r.sr for r in curve])
    entry['curve'] = dict(levels=grid.tolist(),
                          sr=achieved.tolist(),
                          tpr=[r.tpr for r in curve])
    diff = achieved - grid
    entry['calibration'] = CalibrationCurve(
        grid.tolist(), achieved.tolist(), float(np.mean(diff ** 2)),
        float(np.mean(np.abs(diff)))).to_dict()
    entry['pinball'] = {
        str(level): pinball_loss(
            bounds(at(level), level, one_sided), actual,
            level / 100.0 if one_sided else (1 + level / 100.0) / 2)
        for level in levels}
    try:
        lm, p_value = breusch_pagan(actual - dist.mean.reshape(-1),
                                    regressors)
        entry['breusch_pagan'] = dict(lm=lm, p_value=p_value)
    except DataError as e:
        log.warning('Breusch-Pagan test skipped: %s', e)
        entry['breusch_pagan'] = None
    return entry


def _metrics_name(raw):
    return 'metrics_raw.json' if raw else 'metrics.json'


def counterpart_run(run_dir, raw=False):
    """Find the evaluated probabilistic run a point run is compared with.

    It shares scenario, target, mode and seed with run_dir; an HBNN run
    is preferred over an LSTMD one.  Return its directory and metrics, or
    (None, None).
    """
    run = read_json(os.path.join(run_dir, 'run.json'))
    seed_dir = os.path.normpath(run_dir)
    group = os.path.dirname(os.path.dirname(seed_dir))
    for kind in (ModelKind.BAYESIAN_LAST_LAYER, ModelKind.DISTRIBUTIONAL):
        directory = os.path.join(group, '%s-%s' % (kind.value, run['mode']),
                                 os.path.basename(seed_dir))
        path = os.path.join(directory, _metrics_name(raw))
        if os.path.exists(path):
            return directory, read_json(path)
    return None, None


def _achieved_sr(metrics, cluster_id, resource):
    if metrics is None:
        return {}
    cluster = metrics['clusters'].get(cluster_id)
    entry = cluster and cluster['resources'].get(resource)
    if not entry:
        return {}
    sr = dict(zip(entry['curve']['levels'], entry['curve']['sr']))
    sr.update((report['confidence'], report['sr']) for report in entry['qos'])
    return {float(level): value for level, value in sr.items()}


def evaluate_run(run_dir, bundles, levels=(95, 97, 99), one_sided=False,
                 raw=False):
    """Compute the metrics of a scenario run and write them as JSON.

    bundles maps cluster ids to the SplitBundles the run predicted.  The
    metrics land in metrics.json, or metrics_raw.json for raw units.

    A point model's threshold at each level is calibrated on validation
    data to the success rate its evaluated counterpart achieved there,
    or to the level itself when there is no counterpart.

    Return the metrics document.
    """
    run = read_json(os.path.join(run_dir, 'run.json'))
    counterpart, counterpart_metrics = None, None
    if run['model_kind'] == ModelKind.POINT.value:
        counterpart, counterpart_metrics = counterpart_run(run_dir, raw)
        if counterpart is None:
            log.warning('%s seed %s: no evaluated counterpart, thresholds'
                        ' target the confidence levels', run['label'],
                        run['seed'])
    test = read_predictions(os.path.join(run_dir, 'predictions_test.csv'))
    val = read_predictions(os.path.join(run_dir, 'predictions_val.csv'))
    levels = [float(level) for level in levels]

    clusters = {}
    for cluster_id, (target_index, dist) in test.items():
        if cluster_id not in bundles:
            raise ArtifactError('no split bundle for %s' % (cluster_id,))
        bundle = bundles[cluster_id]
        val_index, val_dist = val[cluster_id]
        actual = _actuals(bundle, target_index)
        val_actual = _actuals(bundle, val_index)
        if raw:
            scaler = bundle.scaler.select(dist.resources)
            dist, val_dist = dist.to_raw(scaler), val_dist.to_raw(scaler)
            actual = scaler.inverse_transform(actual)
            val_actual = scaler.inverse_transform(val_actual)

        entry = {}
        for j, resource in enumerate(dist.resources):
            # the companion resource explains residual variance when
            # there is one, the predicted mean otherwise
            companion = actual[:, 1 - j] if actual.shape[1] == 2 \
                else dist.mean[:, j]
            entry[resource] = _resource_entry(
                dist.column(j), actual[:, j], val_dist.column(j),
                val_actual[:, j], levels, one_sided, companion,
                _achieved_sr(counterpart_metrics, cluster_id, resource))
        pair = None
        if actual.shape[1] == 2:
            try:
                pair = pearson(actual[:, 0], actual[:, 1])
            except DataError as e:
                log.warning('%s: no correlation: %s', cluster_id, e)
        clusters[cluster_id] = dict(resources=entry, pearson=pair)
        log.info('%s %s seed %s on %s: %s', run['label'],
                 run['scenario'], run['seed'], cluster_id, ', '.join(
                     '%s MSE %.5f' % (r, e['mse']) for r, e in entry.items()))

    metrics = dict(run=run, raw=raw, one_sided=one_sided, levels=levels,
                   clusters=clusters)
    if run['model_kind'] == ModelKind.POINT.value:
        metrics['counterpart'] = counterpart and dict(
            run_dir=counterpart, label=counterpart_metrics['run']['label'])
    write_json(os.path.join(run_dir, _metrics_name(raw)), metrics)
    return metrics


def compare_runs(run_a, run_b, bundles, loss='squared', horizon=None):
    """Diebold-Mariano test of two runs on their common test targets.

    Return a dict mapping (cluster, resource) names to statistic and
    p-value.
    """
    pred_a = read_predictions(os.path.join(run_a, 'predictions_test.csv'))
    pred_b = read_predictions(os.path.join(run_b, 'predictions_test.csv'))
    results = {}
    for cluster_id in sorted(set(pred_a) & set(pred_b)):
        index_a, dist_a = pred_a[cluster_id]
        index_b, dist_b = pred_b[cluster_id]
        common, ia, ib = np.intersect1d(index_a, index_b,
                                        return_indices=True)
        bundle = bundles[cluster_id]
        actual = _actuals(bundle, common)
        h = horizon or bundle.horizon_steps
        for resource in dist_a.resources:
            if resource not in dist_b.resources:
                continue
            j = bundle.resources.index(resource)
            ja = dist_a.resources.index(resource)
            jb = dist_b.resources.index(resource)
            stat, p_value = diebold_mariano(
                actual[:, j] - dist_a.mean[ia, ja],
                actual[:, j] - dist_b.mean[ib, jb], loss, h)
            results['%s/%s' % (cluster_id, resource)] = dict(
                statistic=stat, p_value=p_value,
                significant=bool(p_value < 0.05))
    if not results:
        raise ArtifactError('runs %s and %s share no predictions' % (
            run_a, run_b))
    return results


def find_runs(run_root):
    """Get all run directories below a run root, in sorted order."""
    runs = []
    for dirpath, dirnames, filenames in os.walk(run_root):
        dirnames.sort()
        if 'run.json' in filenames:
            runs.append(dirpath)
    return runs


def _metric_rows(metrics):
    run = metrics['run']
    for cluster_id, cluster in metrics['clusters'].items():
        for resource, entry in cluster['resources'].items():
            row = dict(
                scenario=run['scenario'], label=run['label'],
                model_kind=run['model_kind'], mode=run['mode'],
                target=run['target_cluster'], seed=run['seed'],
                config_hash=run['config_hash'], cluster=cluster_id,
                resource=resource, mse=entry['mse'], mae=entry['mae'],
                curve_mse=entry['calibration']['curve_mse'],
                curve_mae=entry['calibration']['curve_mae'],
                pearson=np.nan if cluster['pearson'] is None
                else cluster['pearson'])
            bp = entry['breusch_pagan']
            row['bp_p_value'] = bp['p_value'] if bp else np.nan
            for report in entry['qos']:
                level = '%g' % (report['confidence'],)
                for name in ('sr', 'op', 'up', 'tpr'):
                    row['%s_%s' % (name, level)] = report[name]
            for level, value in entry['pinball'].items():
                row['pinball_%g' % (float(level),)] = value
            yield row


def _curve_rows(metrics):
    run = metrics['run']
    for cluster in metrics['clusters'].values():
        for resource, entry in cluster['resources'].items():
            curve = entry['curve']
            for level, sr, tpr in zip(curve['levels'], curve['sr'],
                                      curve['tpr']):
                yield dict(scenario=run['scenario'], label=run['label'],
                           resource=resource, level=level, sr=sr, tpr=tpr)


group_columns = ['scenario', 'label', 'mode', 'resource']
lower_is_better = ('mse', 'mae', 'curve_mse', 'curve_mae')


def aggregate_report(run_root, raw=False, include_excluded=False,
                     allow_mixed=False):
    """Average the metrics of all runs below run_root.

    Rows are averaged over clusters and seeds per scenario, model label,
    mode and resource; the best value of every lower-is-better metric per
    scenario and resource is flagged.  Runs without metrics are listed
    and skipped.  Return the summary, the per-run rows, the averaged
    TPR/SR curves and the list of missing metric files.
    """
    name = _metrics_name(raw)
    rows, curves, missing = [], [], []
    for run_dir in find_runs(run_root):
        path = os.path.join(run_dir, name)
        if not os.path.exists(path):
            missing.append(path)
            continue
        metrics = read_json(path)
        if not include_excluded and \
                metrics['run']['scenario'] in REPORT_EXCLUDED:
            continue
        rows.extend(_metric_rows(metrics))
        curves.extend(_curve_rows(metrics))
    for path in missing:
        log.warning('missing metrics: %s', path)
    if not rows:
        raise ArtifactError(
            "no metrics under %s; run 'evaluate' first; missing: %s" % (
                run_root, ', '.join(missing) or 'no runs at all'))

    rows = pd.DataFrame(rows)
    hashes = rows.groupby(['scenario', 'label', 'mode'])[
        'config_hash'].nunique()
    mixed = hashes[hashes > 1]
    if len(mixed):
        text = ', '.join('/'.join(key) for key in mixed.index)
        if not allow_mixed:
            raise ArtifactError('runs of %s come from different configs'
                                % (text,))
        log.warning('mixing configs in %s', text)

    numeric = [c for c in rows.columns
               if c not in group_columns and c not in (
                   'model_kind', 'target', 'seed', 'config_hash', 'cluster')]
    summary = rows.groupby(group_columns, sort=True)[numeric].mean()
    summary['runs'] = rows.groupby(group_columns).size()
    summary = summary.reset_index()
    for metric in lower_is_better:
        best = summary.groupby(['scenario', 'resource'])[metric] \
            .transform('min')
        summary['best_' + metric] = summary[metric] == best

    curves = pd.DataFrame(curves).groupby(
        ['scenario', 'label', 'resource', 'level'], sort=True)[
            ['sr', 'tpr']].mean().reset_index()
    return summary, rows, curves, missing


def write_report(summary, rows, curves, directory):
    """Write the summary tables as CSV and as a text report."""
    os.makedirs(directory, exist_ok=True)
    keys = ['scenario', 'label', 'resource']
    qos = [c for c in summary.columns
           if c.split('_')[0] in ('sr', 'op', 'up', 'tpr')]
    tables = dict(
        point=keys + ['mse', 'mae', 'best_mse', 'best_mae', 'runs'],
        qos=keys + qos,
        calibration=keys + ['curve_mse', 'curve_mae', 'best_curve_mse',
                            'best_curve_mae'],
        tests=keys + ['pearson', 'bp_p_value'])
    written = []
    with open(os.path.join(directory, 'report.txt'), 'w',
              encoding='utf-8') as text:
        for name, columns in tables.items():
            table = summary[columns]
            path = os.path.join(directory, 'summary_%s.csv' % (name,))
            table.to_csv(path, index=False, float_format='%.6g')
            written.append(path)
            text.write('== %s ==\n%s\n\n' % (
                name, table.to_string(index=False, float_format='%.4f')))
    rows.to_csv(os.path.join(directory, 'runs.csv'), index=False,
                float_format='%.6g')
    curves.to_csv(os.path.join(directory, 'curves.csv'), index=False,
                  float_format='%.6g')
    return written
