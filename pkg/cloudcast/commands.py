"""
Implementation of all of the individual cloudcast commands available
through the cloudcast shell and pipeline scripts.

Artifacts live in two trees:

  <data_root>/traces/<cluster>.csv             demand series (+ .gaps.json)
  <data_root>/bundles/<mode>/<cluster>/        split bundles
  <run_root>/<scenario>/<target>/<kind>-<mode>/<seed>/   scenario runs
  <run_root>/search/, bench/, report/          search, benchmarks, report

Every command skips work whose outputs already exist, unless forced.
"""

import glob
import os

from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Union

from . import dataset, log, utils
from .adapters import get_adapter
from .bench import run_benchmarks
from .errors import CloudcastException, ConfigError, MissingArtifactError
from .evaluation import (
    aggregate_report, compare_runs, evaluate_run, find_runs, write_report)
from .ingest import (
    GapReport, aggregate_events, read_trace_csv, validate_trace,
    write_gap_report, write_trace_csv)
from .models import (
    ModelConfig, ModelKind, configure_determinism, load_checkpoint)
from .namespaces import get_glocals
from .parse import parse_int_list, parse_number_list
from .plots import plot_curves
from .scenarios import (
    HyperParamSpace, Scenario, ScenarioSpec, default_config, experiment_grid,
    run_scenario, search_hyperparams)
from .synth import SynthSpec, generate_trace, load_synth_spec

__all__ = [
    'bench', 'compare', 'config', 'echo', 'evaluate', 'exit', 'info',
    'preprocess', 'report', 'rf', 'runfile', 'scenario', 'search',
    'setglobal', 'setlocal', 'split', 'synth', 'train', 'use_config']

LAYOUT_VERSION = 1
PLOT_FORMATS = ('png', 'svg', 'pdf')


@dataclass
class RunConfig:
    """Paths, references and defaults shared by the pipeline commands.

    scenario and model are either inline dicts or paths to JSON files.
    """

    data_root: str = 'data'
    run_root: str = 'runs'
    scenario: Optional[Union[str, dict]] = None
    model: Optional[Union[str, dict]] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    confidence: List[float] = field(default_factory=lambda: [95, 97, 99])
    formats: List[str] = field(default_factory=lambda: ['png'])
    max_epochs: int = 500
    patience: int = 20
    layout_version: int = LAYOUT_VERSION

    def validate(self):
        """Raise a ConfigError unless the configuration is usable."""
        for name in ('scenario', 'model'):
            ref = getattr(self, name)
            if isinstance(ref, str) and not os.path.exists(ref):
                raise ConfigError("%s file '%s' does not exist" % (name, ref))
        if not self.seeds:
            raise ConfigError('no seeds')
        if not all(0 < c < 100 for c in self.confidence):
            raise ConfigError('confidence levels must lie in (0, 100)')
        bad = sorted(set(self.formats) - set(PLOT_FORMATS))
        if bad:
            raise ConfigError('unknown plot formats: %s' % (', '.join(bad),))
        if self.layout_version != LAYOUT_VERSION:
            raise ConfigError('run layout version %s, expected %s' % (
                self.layout_version, LAYOUT_VERSION))
        return self

    def _load(self, name):
        ref = getattr(self, name)
        if isinstance(ref, str):
            return utils.read_json(ref)
        return ref

    def model_config(self):
        d = self._load('model')
        return ModelConfig.from_dict(d) if d else None

    def scenario_spec(self):
        d = self._load('scenario')
        return ScenarioSpec.from_dict(d) if d else None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError('unknown run settings: %s' % (
                ', '.join(unknown),))
        return cls(**d)


def load_run_config(path):
    """Read and validate a RunConfig JSON file."""
    run_config = RunConfig.from_dict(utils.read_json(path))
    base = os.path.dirname(os.path.abspath(path))
    for name in ('scenario', 'model'):
        ref = getattr(run_config, name)
        if isinstance(ref, str) and not os.path.isabs(ref):
            setattr(run_config, name, os.path.join(base, ref))
    return run_config.validate()


run_config = RunConfig()  # the active run configuration


default_options = dict(
    force=False,
    jobs=1,
    deterministic=False,
    confidence='95,97,99',
    one_sided=False,
    plot_format='png')

options = default_options.copy()  # the global options dictionary


def reset_options():
    """Reset the options and the run configuration to their defaults."""
    global run_config
    options.clear()
    options.update(default_options)
    run_config = RunConfig()


def _force(force):
    return options['force'] if force is None else utils.make_boolean(force)


def _data_root(data_root):
    return data_root or run_config.data_root


def _run_root(run_root):
    return run_root or run_config.run_root


def _done(path, force, what):
    """Check whether an output exists and need not be redone."""
    if os.path.exists(path) and not force:
        log.info('%s already done (%s); use --force to redo it', what, path)
        return True
    return False


def _list(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return list(value)
    return [v for v in str(value).split(',') if v]


def _determinism():
    return configure_determinism(options['deterministic'] or None)


def trace_path(data_root, cluster_id):
    return os.path.join(data_root, 'traces', cluster_id + '.csv')


def gaps_path(data_root, cluster_id):
    return os.path.join(data_root, 'traces', cluster_id + '.gaps.json')


def bundle_dir(data_root, mode, cluster_id):
    return os.path.join(data_root, 'bundles', mode, cluster_id)


def list_clusters(data_root):
    """Get the ids of all clusters with a trace, in sorted order."""
    pattern = os.path.join(data_root, 'traces', '*.csv')
    clusters = sorted(os.path.splitext(os.path.basename(path))[0]
                      for path in glob.glob(pattern))
    if not clusters:
        raise MissingArtifactError(pattern, 'preprocess or synth')
    return clusters


def load_bundles(data_root, mode, clusters=None):
    """Load the split bundles of some or all clusters."""
    clusters = clusters or list_clusters(data_root)
    bundles = {}
    for cluster_id in clusters:
        directory = bundle_dir(data_root, mode, cluster_id)
        if not os.path.exists(os.path.join(directory, 'meta.json')):
            raise MissingArtifactError(directory, 'split --mode %s' % (mode,))
        bundles[cluster_id] = dataset.load_bundle(directory)
    return bundles


def preprocess(input, cluster=None, provider='events', data_root=None,
               window=300, force=None):
    """>> preprocess <raw csv> [--cluster <id>] [--provider <name>]

    Aggregate the usage records of a raw trace into a five-minute demand
    series, written with its gap report to <data_root>/traces/.  The
    provider names the raw schema; 'events' is a CSV with start_time,
    end_time and one column per resource.
    """
    data_root = _data_root(data_root)
    cluster = cluster or os.path.splitext(os.path.basename(input))[0]
    out = trace_path(data_root, cluster)
    if _done(out, _force(force), 'preprocess %s' % (cluster,)):
        return out
    if not os.path.exists(input):
        raise MissingArtifactError(input)
    events = get_adapter(provider).read_events(input)
    series = aggregate_events(events, window_seconds=utils.make_int(window),
                              cluster_id=cluster)
    write_trace_csv(series, out)
    write_gap_report(series.gaps, gaps_path(data_root, cluster))
    log.info('preprocessed %s: %s', cluster,
             validate_trace(series).summary())
    return out


def synth(spec=None, clusters='1', data_root=None, seed=None, length=None,
          resources=None, cross_correlation=None, force=None):
    """>> synth [--spec <json>] [--clusters <n or ids>] [--seed <int>]

    Generate synthetic traces: a daily sinusoid plus AR(1) noise.  With a
    number of clusters, ids are synth0, synth1, ...; each cluster gets
    the next seed.
    """
    data_root = _data_root(data_root)
    overrides = dict(
        seed=None if seed is None else utils.make_int(seed),
        length=None if length is None else utils.make_int(length),
        resources=None if resources is None else utils.make_int(resources),
        cross_correlation=None if cross_correlation is None
        else utils.make_float(cross_correlation))
    if spec:
        base = load_synth_spec(spec, **overrides)
    else:
        base = SynthSpec(**{k: v for k, v in overrides.items()
                            if v is not None}).validate()

    ids = _list(clusters)
    if len(ids) == 1 and ids[0].isdigit():
        ids = ['synth%d' % (i,) for i in range(int(ids[0]))]

    force = _force(force)
    written = []
    for i, cluster_id in enumerate(ids):
        out = trace_path(data_root, cluster_id)
        written.append(out)
        if _done(out, force, 'synth %s' % (cluster_id,)):
            continue
        series = generate_trace(replace(base, cluster_id=cluster_id,
                                        seed=base.seed + i))
        write_trace_csv(series, out)
        write_gap_report(GapReport(cluster_id),
                         gaps_path(data_root, cluster_id))
        log.info('generated %s: %d points of %s', cluster_id, len(series),
                 ', '.join(series.resources))
    return written


def split(mode=dataset.BIVARIATE, clusters=None, data_root=None,
          input_len=dataset.INPUT_LEN, horizon=dataset.HORIZON_STEPS,
          test_context=False, force=None):
    """>> split [--mode bivariate|<resource>] [--clusters <ids>]

    Scale, window and split the traces into training, validation and test
    windows, written to <data_root>/bundles/<mode>/<cluster>/.
    """
    data_root = _data_root(data_root)
    force = _force(force)
    written = []
    for cluster_id in _list(clusters) or list_clusters(data_root):
        directory = bundle_dir(data_root, mode, cluster_id)
        written.append(directory)
        if _done(os.path.join(directory, 'meta.json'), force,
                 'split %s' % (cluster_id,)):
            continue
        path = trace_path(data_root, cluster_id)
        if not os.path.exists(path):
            raise MissingArtifactError(path, 'preprocess or synth')
        series = read_trace_csv(path, cluster_id)
        bundle = dataset.split(
            series, utils.make_int(input_len), utils.make_int(horizon),
            resource=mode, test_context=utils.make_boolean(test_context))
        dataset.save_bundle(bundle, directory)
        log.info('split %s (%s): %s', cluster_id, mode, bundle.counts())
    return written


def _model_config(config, spec, run_root, input_len):
    """Pick the configuration of a scenario run.

    An explicit file wins, then the run configuration, then a searched
    configuration, then the desk-scale default.
    """
    if config:
        model_config = ModelConfig.from_dict(utils.read_json(config))
    else:
        model_config = run_config.model_config()
    if model_config is None:
        # transfer scenarios reuse the multi-dataset bivariate search
        scope = 'multi-%s-%s' % (
            spec.model_kind.value if not spec.scenario.transfer
            else ModelKind.BAYESIAN_LAST_LAYER.value,
            spec.mode if not spec.scenario.transfer else dataset.BIVARIATE)
        searched = os.path.join(run_root, 'search', scope, 'best_config.json')
        if os.path.exists(searched):
            log.info('using the searched configuration %s', searched)
            model_config = ModelConfig.from_dict(utils.read_json(searched))
    if model_config is None:
        model_config = default_config(spec)
    return replace(model_config, input_len=input_len)


def scenario(scenario=Scenario.ALL.value, target_cluster=None,
             model=ModelKind.BAYESIAN_LAST_LAYER.value,
             mode=dataset.BIVARIATE, seeds=None, config=None, spec=None,
             jobs=None, max_epochs=None, patience=None, data_root=None,
             run_root=None, force=None):
    """>> scenario [--scenario <name>] [--target-cluster <id>]
    [--model <kinds>] [--mode <modes>] [--seeds 0-9] [--config <model json>]
    [--spec <json>]

    Train, fine-tune and predict for a training scenario: single, multi,
    all, all_ft, all_but_one, all_but_one_ft, gc19, gc19_ft,
    gc19_but_one, gc19_but_one_ft or random.  Without a target cluster
    every eligible cluster is targeted in turn; models and modes may be
    comma-separated lists.
    """
    data_root, run_root = _data_root(data_root), _run_root(run_root)
    force = _force(force)
    jobs = utils.make_int(jobs or options['jobs'])
    max_epochs = utils.make_int(max_epochs or run_config.max_epochs)
    patience = utils.make_int(run_config.patience if patience is None
                              else patience)
    _determinism()

    if spec or run_config.scenario:
        specs = [ScenarioSpec.from_dict(utils.read_json(spec)) if spec
                 else run_config.scenario_spec()]
    else:
        universe = list_clusters(data_root)
        seed_list = parse_int_list(seeds) if seeds is not None \
            else list(run_config.seeds)
        targets = _list(target_cluster) \
            if target_cluster and target_cluster != 'all' else None
        specs = experiment_grid(
            universe, kinds=_list(model), seeds=seed_list,
            scenarios=[scenario], modes=_list(mode), targets=targets)

    directories = []
    for s in specs:
        s.validate()
        bundles = load_bundles(data_root, s.mode, s.cluster_universe)
        input_len = next(iter(bundles.values())).input_len
        model_config = _model_config(config, s, run_root, input_len)
        log.info('\n>> scenario %s, target %s, %s', s.scenario.value,
                 s.target_cluster, s.label)
        run_scenario(s, bundles, model_config, run_root, jobs=jobs,
                     max_epochs=max_epochs, patience=patience, force=force)
        directories.extend(
            os.path.join(run_root, s.scenario.value, s.target_cluster,
                         s.model_dir, str(seed)) for seed in s.seeds)
    return directories


def train(cluster, mode=dataset.BIVARIATE,
          model=ModelKind.DISTRIBUTIONAL.value, seeds=None, config=None,
          max_epochs=None, patience=None, data_root=None, run_root=None,
          force=None):
    """>> train <cluster> [--mode <mode>] [--model <kind>] [--seeds <list>]

    Train models on a single cluster and predict its test windows; the
    same as 'scenario --scenario single --target-cluster <cluster>'.
    """
    return scenario(Scenario.SINGLE.value, cluster, model, mode, seeds,
                    config, max_epochs=max_epochs, patience=patience,
                    data_root=data_root, run_root=run_root, force=force)


def search(cluster=None, mode=dataset.BIVARIATE,
           model=ModelKind.BAYESIAN_LAST_LAYER.value, space=None,
           budget=None, max_epochs=None, seed=None, data_root=None,
           run_root=None, force=None):
    """>> search [<cluster>] [--mode <mode>] [--model <kind>] [--space <json>]
    [--budget <trials>]

    Random hyperparameter search on one cluster, or on all clusters
    merged when no cluster is given.  Writes trials.csv and
    best_config.json to <run_root>/search/<single|multi>-<kind>-<mode>/.
    """
    data_root, run_root = _data_root(data_root), _run_root(run_root)
    scope = '%s-%s-%s' % ('single' if cluster else 'multi', model, mode)
    directory = os.path.join(run_root, 'search', scope)
    best_path = os.path.join(directory, 'best_config.json')
    if _done(best_path, _force(force), 'search %s' % (scope,)):
        return best_path
    _determinism()

    space = HyperParamSpace.from_dict(utils.read_json(space)) if space \
        else HyperParamSpace()
    if budget is not None:
        space.budget = utils.make_int(budget)
    if max_epochs is not None:
        space.max_epochs = utils.make_int(max_epochs)
    if seed is not None:
        space.seed = utils.make_int(seed)

    bundles = load_bundles(data_root, mode, _list(cluster))
    data = next(iter(bundles.values())) if cluster else \
        dataset.merge_shuffle(list(bundles.values()), space.seed)
    spec = ScenarioSpec(Scenario.SINGLE if cluster else Scenario.MULTI,
                        cluster, list(bundles), model, mode, [space.seed])
    base = replace(default_config(spec),
                   input_len=next(iter(bundles.values())).input_len)
    best = search_hyperparams(space, data, base,
                              os.path.join(directory, 'trials.csv'))
    utils.write_json(best_path, best.to_dict())
    log.info('best configuration of %s: %s', scope, best_path)
    return best_path


def _levels(confidence):
    return parse_number_list(confidence if confidence is not None
                             else options['confidence'])


def evaluate(run_dir=None, confidence=None, raw=False, one_sided=None,
             data_root=None, run_root=None, force=None):
    """>> evaluate [--run-dir <dir>] [--confidence 95,97,99] [--raw]

    Compute point, QoS, calibration and test metrics of scenario runs,
    written to metrics.json (metrics_raw.json with --raw) in every run.
    """
    data_root, run_root = _data_root(data_root), _run_root(run_root)
    force = _force(force)
    raw = utils.make_boolean(raw)
    one_sided = options['one_sided'] if one_sided is None \
        else utils.make_boolean(one_sided)
    levels = _levels(confidence)
    runs = [run_dir] if run_dir else find_runs(run_root)
    if not runs:
        raise MissingArtifactError(run_root, 'scenario')
    # point thresholds follow the success rates of their counterparts
    runs.sort(key=lambda d: os.path.basename(os.path.dirname(
        os.path.normpath(d))).startswith(ModelKind.POINT.value + '-'))

    evaluated = []
    for directory in runs:
        run_file = os.path.join(directory, 'run.json')
        if not os.path.exists(run_file):
            raise MissingArtifactError(run_file, 'scenario')
        name = 'metrics_raw.json' if raw else 'metrics.json'
        evaluated.append(os.path.join(directory, name))
        if _done(evaluated[-1], force, 'evaluate %s' % (directory,)):
            continue
        run = utils.read_json(run_file)
        bundles = load_bundles(data_root, run['mode'],
                               run['prediction_clusters'])
        evaluate_run(directory, bundles, levels, one_sided, raw)
    return evaluated


def compare(run_a, run_b, loss='squared', out=None, data_root=None):
    """>> compare <run dir a> <run dir b> [--loss squared|absolute]

    Diebold-Mariano test of the test-set accuracy of two runs, per
    cluster and resource.
    """
    data_root = _data_root(data_root)
    run = None
    for directory in (run_a, run_b):
        run_file = os.path.join(directory, 'run.json')
        if not os.path.exists(run_file):
            raise MissingArtifactError(run_file, 'scenario')
        run = run or utils.read_json(run_file)
    bundles = load_bundles(data_root, run['mode'], run['prediction_clusters'])
    results = compare_runs(run_a, run_b, bundles, loss)
    for name, result in sorted(results.items()):
        log.info('%s: DM %.4f, p-value %.4f%s', name, result['statistic'],
                 result['p_value'],
                 ' (significant)' if result['significant'] else '')
    if out:
        utils.write_json(out, results)
    return results


def bench(run_dir, repetitions=10, max_epochs=10, calls=100,
          fractions='0.2,0.4,0.6,0.8', steps='6,12,18,24', data_root=None,
          run_root=None, force=None):
    """>> bench <run dir> [--repetitions 10] [--max-epochs <n>]

    Time training on 20-80% of the training windows, fine-tuning on the
    newest 6-24 windows and single-sample inference, for the model of a
    scenario run.  Writes runtime.csv and runtime_log.jsonl to
    <run_root>/bench/<label>-<target>/.
    """
    data_root, run_root = _data_root(data_root), _run_root(run_root)
    run_file = os.path.join(run_dir, 'run.json')
    if not os.path.exists(run_file):
        raise MissingArtifactError(run_file, 'scenario')
    run = utils.read_json(run_file)
    directory = os.path.join(run_root, 'bench', '%s-%s' % (
        run['label'], run['target_cluster']))
    if _done(os.path.join(directory, 'runtime.csv'), _force(force),
             'bench %s' % (run['label'],)):
        return directory
    _determinism()

    model = load_checkpoint(os.path.join(run_dir, 'model'))
    cluster_id = run['prediction_clusters'][0]
    bundle = load_bundles(data_root, run['mode'], [cluster_id])[cluster_id]
    run_benchmarks(
        model.config, model, bundle, directory,
        fractions=parse_number_list(fractions),
        step_counts=parse_int_list(steps),
        repetitions=utils.make_int(repetitions),
        max_epochs=utils.make_int(max_epochs), calls=utils.make_int(calls),
        seed=run['seed'], label=run['label'])
    return directory


def report(out=None, raw=False, include_excluded=False, allow_mixed=False,
           plot_format=None, run_root=None, force=None):
    """>> report [--out <dir>] [--raw] [--include-excluded] [--allow-mixed]

    Average the persisted metrics over clusters and seeds into summary
    tables (CSV and text) and draw TPR-vs-SR and calibration figures.
    Runs of different model configurations are only mixed with
    --allow-mixed; the gc19_but_one scenarios only with
    --include-excluded.
    """
    run_root = _run_root(run_root)
    out = out or os.path.join(run_root, 'report')
    if _done(os.path.join(out, 'report.txt'), _force(force), 'report'):
        return out
    if not find_runs(run_root):
        raise MissingArtifactError(run_root, 'scenario')
    summary, rows, curves, missing = aggregate_report(
        run_root, utils.make_boolean(raw),
        utils.make_boolean(include_excluded),
        utils.make_boolean(allow_mixed))
    written = write_report(summary, rows, curves, out)
    formats = _list(plot_format or options['plot_format'])
    bad = sorted(set(formats) - set(PLOT_FORMATS))
    if bad:
        raise ConfigError('unknown plot formats: %s' % (', '.join(bad),))
    for fmt in formats:
        written.extend(plot_curves(curves, out, fmt))
    log.info('report: %d summary rows, %d files in %s%s', len(summary),
             len(written), out,
             ', %d runs lack metrics' % (len(missing),) if missing else '')
    return out


def use_config(path):
    """>> use_config <run config json>

    Load a run configuration: data and run roots, scenario and model
    references, seeds, confidence levels and plot formats.
    """
    global run_config
    run_config = load_run_config(path)
    options['confidence'] = ','.join('%g' % c for c in run_config.confidence)
    options['plot_format'] = ','.join(run_config.formats)
    log.info('using run configuration %s (%s)', path,
             utils.content_hash(run_config.to_dict()))
    return run_config


def config(key=None, value=None):
    """>> config [<key> [<value>]]

    Configure/report various options.  If no <value> is given, report
    the current key value; if no <key> given, report current settings.

    So far:

     * 'force', default False -- redo commands whose outputs exist
     * 'jobs', default 1 -- worker processes for scenario seeds
     * 'deterministic', default False -- deterministic torch algorithms
     * 'confidence', default '95,97,99' -- evaluated confidence levels
     * 'one_sided', default False -- one-sided instead of two-sided bounds
     * 'plot_format', default 'png' -- format of the report figures
    """
    info = log.info
    if key is None:
        keys = sorted(options)
        info('\nCurrent configuration:\n')
        for k in keys:
            info('\t%s : %s', k, options[k])
        info('')
    else:
        v = options.get(key)
        if v is None:
            log.error("no such configuration key '%s'", key)
            info("valid keys are: %s", ', '.join(sorted(options)))
            raise CloudcastException(
                "no such configuration key: '%s'" % (key,))
        elif value is None:
            info('\nkey %s: value %s\n', key, v)
        else:
            if isinstance(v, bool):
                value = utils.make_boolean(value)
            elif isinstance(v, int):
                value = utils.make_int(value)
            elif key == 'confidence':
                parse_number_list(value)
            options[key] = value


def info():
    """>> info

    Report the run configuration and the artifacts found so far.
    """
    info = log.info
    info('\tdata root: %s', run_config.data_root)
    info('\trun root: %s', run_config.run_root)
    try:
        clusters = list_clusters(run_config.data_root)
    except MissingArtifactError:
        clusters = []
    info('\ttraces: %s', ', '.join(clusters) or 'none')
    info('\truns: %d', len(find_runs(run_config.run_root)))
    info('')


def echo(*strs):
    """>> echo <list> <of> <strings>

    Echo the arguments to the log.
    """
    log.info(' '.join(map(str, strs)))


def exit(code='0'):
    """>> exit [<code>]

    Exit cloudcast, with the given exit code (defaults to 0, "no error").
    """
    raise SystemExit(int(code))


def runfile(*args):
    """>> runfile <file1> [<file2> ...]

    Execute the given pipeline scripts or directories of scripts.

    'runfile' is available as 'rf' as well.
    """
    from . import parse

    filenames = utils.gather_filenames(args)
    for filename in filenames:
        parse.execute_file(filename)


rf = runfile  # alias


def setglobal(name, value):
    """>> setglobal <name> <value>

    Sets the variable <name> to the value <value> in the global namespace.
    """
    global_dict, local_dict = get_glocals()
    global_dict[name] = value


def setlocal(name, value):
    """>> setlocal <name> <value>

    Sets the variable <name> to the value <value> in the local namespace.
    """
    global_dict, local_dict = get_glocals()
    local_dict[name] = value
