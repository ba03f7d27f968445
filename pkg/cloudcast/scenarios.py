"""
Training scenarios and the experiment grid.

A scenario decides which clusters a model is trained on and which
cluster it predicts:

* SINGLE and RANDOM train on the target cluster alone, starting from a
  random initialization.
* MULTI trains one model on all clusters and predicts every one of them.
* ALL, ALL_BUT_ONE, GC19 and GC19_BUT_ONE pretrain on all clusters, all
  but the target, the Google 2019 clusters, or those but the target; the
  _FT variants then fine-tune on the target's training data.

Every (scenario, target, model, seed) run owns the directory
<run_root>/<scenario>/<target>/<kind>-<mode>/<seed>/.
"""

import copy
import json
import os

from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import List, Optional

import numpy as np
import pandas as pd
import torch

from . import log
from .dataset import BIVARIATE, WindowSet, merge_shuffle
from .errors import (
    ConfigError, DataError, DivergenceError, ModelError, ScenarioError)
from .fork import run_jobs
from .models import (
    ModelConfig, ModelKind, build_model, load_checkpoint,
    predict_distribution, save_checkpoint, train, write_predictions)
from .utils import content_hash, write_json

GC19_PREFIX = 'gc19'
MULTI_TARGET = 'all'

__all__ = [
    'Scenario', 'ScenarioSpec', 'FineTuneOptions', 'HyperParamSpace',
    'training_clusters', 'prediction_clusters', 'run_scenario',
    'fine_tune', 'calibrate_point_threshold', 'search_hyperparams',
    'experiment_grid', 'default_config', 'run_directory',
    'assert_separation', 'model_label']


class Scenario(str, Enum):
    SINGLE = 'single'
    MULTI = 'multi'
    ALL = 'all'
    ALL_FT = 'all_ft'
    ALL_BUT_ONE = 'all_but_one'
    ALL_BUT_ONE_FT = 'all_but_one_ft'
    GC19 = 'gc19'
    GC19_FT = 'gc19_ft'
    GC19_BUT_ONE = 'gc19_but_one'
    GC19_BUT_ONE_FT = 'gc19_but_one_ft'
    RANDOM = 'random'

    @property
    def fine_tuned(self):
        return self.value.endswith('_ft')

    @property
    def pretrained(self):
        """Get the scenario without its fine-tuning step."""
        return Scenario(self.value[:-3]) if self.fine_tuned else self

    @property
    def transfer(self):
        return self not in (Scenario.SINGLE, Scenario.MULTI)

    @property
    def gc19(self):
        return self.value.startswith('gc19')

    @property
    def but_one(self):
        return '_but_one' in self.value


# trained but left out of default reports
REPORT_EXCLUDED = (Scenario.GC19_BUT_ONE.value, Scenario.GC19_BUT_ONE_FT.value)

_model_names = {
    ModelKind.POINT: 'LSTM',
    ModelKind.DISTRIBUTIONAL: 'LSTMD',
    ModelKind.BAYESIAN_LAST_LAYER: 'HBNN',
}


def model_label(kind, scenario=None, mode=None):
    """Get a short model name like LSTMD or M-B-HBNN."""
    name = _model_names[ModelKind(kind)]
    if scenario is None:
        return name
    scenario = Scenario(scenario)
    if scenario in (Scenario.SINGLE, Scenario.MULTI):
        return '%s-%s-%s' % (scenario.value[0].upper(),
                             'B' if mode == BIVARIATE else 'U', name)
    return '%s-%s' % (scenario.value.upper(), name)


@dataclass
class FineTuneOptions:
    """How to continue training on the target cluster."""

    epochs: int = 50
    lr_factor: float = 0.1
    patience: int = 10
    learning_rate: Optional[float] = None

    def validate(self):
        if self.epochs < 0 or self.patience < 0:
            raise ConfigError('fine-tune epochs and patience must not be'
                              ' negative')
        if self.lr_factor <= 0 or (self.learning_rate is not None
                                   and self.learning_rate <= 0):
            raise ConfigError('fine-tune learning rate must be positive')
        return self

    def rate(self, config):
        return self.learning_rate or config.learning_rate * self.lr_factor


@dataclass
class ScenarioSpec:
    """A scenario for one target cluster, model kind and prediction mode."""

    scenario: Scenario
    target_cluster: Optional[str]
    cluster_universe: List[str]
    model_kind: ModelKind = ModelKind.BAYESIAN_LAST_LAYER
    mode: str = BIVARIATE
    seeds: List[int] = field(default_factory=lambda: list(range(10)))
    fine_tune: Optional[FineTuneOptions] = None
    gc19_clusters: Optional[List[str]] = None

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        self.model_kind = ModelKind(self.model_kind)
        self.cluster_universe = list(self.cluster_universe)
        self.seeds = [int(seed) for seed in self.seeds]
        if isinstance(self.fine_tune, dict):
            self.fine_tune = FineTuneOptions(**self.fine_tune)
        if self.scenario is Scenario.MULTI and self.target_cluster is None:
            self.target_cluster = MULTI_TARGET

    @property
    def gc19_group(self):
        if self.gc19_clusters is not None:
            return list(self.gc19_clusters)
        return [c for c in self.cluster_universe
                if c.lower().startswith(GC19_PREFIX)]

    @property
    def label(self):
        return model_label(self.model_kind, self.scenario, self.mode)

    @property
    def model_dir(self):
        return '%s-%s' % (self.model_kind.value, self.mode)

    def validate(self):
        """Raise a ScenarioError unless the settings are consistent."""
        universe = self.cluster_universe
        if not universe:
            raise ScenarioError('empty cluster universe')
        if len(set(universe)) != len(universe):
            raise ScenarioError('duplicate clusters in the universe')
        if not self.seeds:
            raise ScenarioError('no seeds')
        if self.scenario is not Scenario.MULTI \
                and self.target_cluster not in universe:
            raise ScenarioError("target cluster '%s' is not in the universe"
                                % (self.target_cluster,))
        if self.scenario.fine_tuned:
            if self.fine_tune is None:
                raise ScenarioError('%s needs fine-tune options' % (
                    self.scenario.value,))
            self.fine_tune.validate()
        if self.scenario.gc19 and self.target_cluster not in self.gc19_group:
            raise ScenarioError(
                "%s needs a Google 2019 target, '%s' is not one of %s" % (
                    self.scenario.value, self.target_cluster,
                    ', '.join(self.gc19_group) or 'none'))
        if not training_clusters(self):
            raise ScenarioError('%s leaves no cluster to train on' % (
                self.scenario.value,))
        return self

    def to_dict(self):
        d = asdict(self)
        d['scenario'] = self.scenario.value
        d['model_kind'] = self.model_kind.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError('unknown scenario settings: %s' % (
                ', '.join(unknown),))
        d = dict(d)
        if Scenario(d['scenario']).fine_tuned and not d.get('fine_tune'):
            d['fine_tune'] = FineTuneOptions()
        return cls(**d)


def training_clusters(spec):
    """Get the clusters a scenario trains (or pretrains) on."""
    scenario = spec.scenario.pretrained
    universe = spec.cluster_universe
    if scenario in (Scenario.SINGLE, Scenario.RANDOM):
        return [spec.target_cluster]
    if scenario in (Scenario.MULTI, Scenario.ALL):
        return list(universe)
    if scenario is Scenario.ALL_BUT_ONE:
        return [c for c in universe if c != spec.target_cluster]
    group = spec.gc19_group
    if scenario is Scenario.GC19:
        return group
    return [c for c in group if c != spec.target_cluster]


def prediction_clusters(spec):
    """Get the clusters a scenario writes predictions for."""
    if spec.scenario is Scenario.MULTI:
        return list(spec.cluster_universe)
    return [spec.target_cluster]


def default_config(spec, input_len=None):
    """Get the desk-scale model configuration of a scenario.

    Transfer scenarios reuse the multi-dataset bivariate architecture.
    """
    n_res = 2 if spec.mode == BIVARIATE else 1
    if spec.scenario is Scenario.MULTI or spec.scenario.transfer:
        dense = [64, 64, 64] if n_res == 2 or spec.scenario.transfer \
            else [64, 64]
    else:
        dense = [64] if n_res == 1 else [64, 64]
    config = ModelConfig(kind=spec.model_kind, dense_stack=dense,
                         output_resources=n_res)
    if input_len:
        config.input_len = input_len
    return config.validate()


def _scenario_config(spec, config):
    n_res = 2 if spec.mode == BIVARIATE else 1
    return replace(config, kind=spec.model_kind,
                   output_resources=n_res).validate()


def run_directory(run_root, spec, seed):
    return os.path.join(run_root, spec.scenario.value, spec.target_cluster,
                        spec.model_dir, str(seed))


def assert_separation(spec, stream):
    """Raise a ScenarioError if the stream holds clusters it should not.

    Scans every training and validation window.
    """
    allowed = set(training_clusters(spec))
    present = set(stream.train.cluster_ids) | set(
        stream.val.cluster_ids)
    leaked = sorted(present - allowed)
    if leaked:
        raise ScenarioError('%s for %s: training stream holds windows of %s'
                            % (spec.scenario.value, spec.target_cluster,
                               ', '.join(leaked)))
    if spec.scenario.but_one and spec.target_cluster in present:
        raise ScenarioError('target %s leaked into its source domain' % (
            spec.target_cluster,))
    return stream


def _check_bundles(spec, bundles):
    needed = set(training_clusters(spec)) | set(prediction_clusters(spec))
    missing = sorted(needed - set(bundles))
    if missing:
        raise ScenarioError('missing split bundles for %s; run split first'
                            % (', '.join(missing),))
    for cluster_id in needed:
        resources = tuple(bundles[cluster_id].resources)
        wanted = len(resources) == 2 if spec.mode == BIVARIATE else \
            resources == (spec.mode,)
        if not wanted:
            raise ScenarioError('bundle %s holds %s, scenario needs %s' % (
                cluster_id, ', '.join(resources), spec.mode))


def fine_tune(model, bundle, opts=None, seed=None):
    """Continue training a model on one cluster's training windows.

    The given model is left untouched; test windows are never used.
    """
    opts = (opts or FineTuneOptions()).validate()
    if bundle.n_resources != model.config.output_resources:
        raise ModelError('shape mismatch: model predicts %d resources,'
                         ' %s has %d' % (model.config.output_resources,
                                         bundle.cluster_id,
                                         bundle.n_resources))
    return train(model, bundle, max_epochs=opts.epochs,
                 patience=opts.patience,
                 seed=model.seed if seed is None else seed,
                 learning_rate=opts.rate(model.config), phase='finetune')


def _predict_clusters(model, bundles, clusters, partition, path):
    windows = WindowSet.concat([getattr(bundles[c], partition)
                                for c in clusters])
    dist = predict_distribution(model, windows)
    write_predictions(path, dist, windows)


def run_seed(spec, bundles, config, seed, run_root, max_epochs=500,
             patience=20, force=False):
    """Train, optionally fine-tune and predict for one seed.

    A seed whose run.json exists is skipped unless force is set.
    """
    directory = run_directory(run_root, spec, seed)
    run_file = os.path.join(directory, 'run.json')
    if os.path.exists(run_file) and not force:
        log.info('%s seed %d already done in %s', spec.label, seed,
                 directory)
        return directory

    stream = assert_separation(spec, merge_shuffle(
        [bundles[c] for c in training_clusters(spec)], seed))
    torch.manual_seed(seed)
    net = build_model(config)
    log.info('%s for %s, seed %d: training on %s', spec.label,
             spec.target_cluster, seed, ', '.join(stream.clusters))
    model = train(net, stream, max_epochs=max_epochs, patience=patience,
                  seed=seed)
    pretrained = model
    if spec.scenario.fine_tuned:
        save_checkpoint(model, os.path.join(directory, 'pretrained'))
        model = fine_tune(model, bundles[spec.target_cluster],
                          spec.fine_tune, seed)
    save_checkpoint(model, os.path.join(directory, 'model'))

    clusters = prediction_clusters(spec)
    for partition in ('val', 'test'):
        _predict_clusters(model, bundles, clusters, partition,
                          os.path.join(directory,
                                       'predictions_%s.csv' % (partition,)))

    write_json(run_file, dict(
        scenario=spec.scenario.value,
        target_cluster=spec.target_cluster,
        model_kind=spec.model_kind.value,
        mode=spec.mode,
        label=spec.label,
        seed=seed,
        resources=list(model.resources),
        training_clusters=training_clusters(spec),
        prediction_clusters=clusters,
        config=config.to_dict(),
        config_hash=config.hash,
        spec_hash=content_hash(dict(spec.to_dict(), seeds=None)),
        pretrain_epochs=pretrained.stop_epoch,
        finetune_epochs=model.stop_epoch if model is not pretrained else 0,
        weights_hash=model.weights_hash()))
    return directory


def run_scenario(spec, bundles, config=None, run_root='runs', jobs=1,
                 max_epochs=500, patience=20, force=False):
    """Run a scenario for all its seeds, one model per seed.

    bundles maps cluster ids to SplitBundles.  Return the trained models
    in seed order.
    """
    spec.validate()
    _check_bundles(spec, bundles)
    config = _scenario_config(spec, config or default_config(spec))
    arglist = [(spec, bundles, config, seed, run_root, max_epochs, patience,
                force) for seed in spec.seeds]
    directories = run_jobs(run_seed, arglist, jobs)
    return [load_checkpoint(os.path.join(d, 'model')) for d in directories]


def calibrate_point_threshold(point_predictions, actuals, target_sr,
                              step=0.001, max_threshold=1.0):
    """Find the smallest relative threshold reaching a success rate.

    Bounds are predictions * (1 + threshold) on a grid from 0 to
    max_threshold; an actual equal to its bound counts as covered.  If
    no threshold reaches target_sr (in percent), the largest one is
    returned.
    """
    pred = np.asarray(point_predictions, dtype=float).reshape(-1)
    actual = np.asarray(actuals, dtype=float).reshape(-1)
    if not len(pred) or len(pred) != len(actual):
        raise DataError('need equally long nonempty vectors, got %d and %d'
                        % (len(pred), len(actual)))
    grid = np.round(np.arange(int(round(max_threshold / step)) + 1) * step,
                    12)
    bounds = pred[None, :] * (1 + grid[:, None])
    sr = 100.0 * (actual[None, :] <= bounds).mean(axis=1)
    reached = np.flatnonzero(sr >= target_sr)
    if not len(reached):
        log.warning('success rate %.2f%% unreachable, best is %.2f%% at'
                    ' threshold %g', target_sr, sr.max(), grid[-1])
        return float(grid[-1])
    return float(grid[reached[0]])


@dataclass
class HyperParamSpace:
    """Grids for a random hyperparameter search."""

    conv_blocks: List[int] = field(default_factory=lambda: [1, 2, 3])
    conv_filters: List[int] = field(default_factory=lambda: [16, 32, 64])
    conv_widths: List[int] = field(default_factory=lambda: [3, 5])
    lstm_units: List[int] = field(default_factory=lambda: [32, 64, 128])
    dense_layers: List[int] = field(default_factory=lambda: [1, 2, 3])
    dense_units: List[int] = field(default_factory=lambda: [32, 64, 128])
    batch_size: List[int] = field(default_factory=lambda: [64, 128, 256])
    activation: List[str] = field(default_factory=lambda: ['relu', 'tanh'])
    learning_rate: List[float] = field(
        default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4])
    adam_beta1: List[float] = field(default_factory=lambda: [0.9, 0.95])
    adam_beta2: List[float] = field(default_factory=lambda: [0.99, 0.999])
    weight_decay: List[float] = field(default_factory=lambda: [0.0, 1e-5])
    budget: int = 10
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    _grids = ('conv_blocks', 'conv_filters', 'conv_widths', 'lstm_units',
              'dense_layers', 'dense_units', 'batch_size', 'activation',
              'learning_rate', 'adam_beta1', 'adam_beta2', 'weight_decay')

    def validate(self):
        empty = [name for name in self._grids if not getattr(self, name)]
        if empty:
            raise ConfigError('empty search grids: %s' % (', '.join(empty),))
        if self.budget < 1:
            raise ConfigError('search budget must be at least 1')
        return self

    def sample(self, rng, base):
        """Draw one configuration, keeping base for what is not searched."""
        def pick(name):
            grid = getattr(self, name)
            return grid[int(rng.integers(len(grid)))]

        blocks = pick('conv_blocks')
        kernels = [[pick('conv_filters'), pick('conv_widths')]
                   for _ in range(blocks)]
        dense = [pick('dense_units') for _ in range(pick('dense_layers'))]
        return replace(
            base, conv_blocks=blocks, conv_kernels=kernels,
            lstm_units=pick('lstm_units'), dense_stack=dense,
            batch_size=pick('batch_size'), activation=pick('activation'),
            learning_rate=pick('learning_rate'),
            adam_beta1=pick('adam_beta1'), adam_beta2=pick('adam_beta2'),
            weight_decay=pick('weight_decay')).validate()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError('unknown search settings: %s' % (
                ', '.join(unknown),))
        return cls(**d)


def _search_params(config):
    d = config.to_dict()
    for name in ('kind', 'output_resources', 'input_len',
                 'epistemic_samples', 'kl_weight'):
        d.pop(name)
    return d


def search_hyperparams(space, data, base_config, log_path=None):
    """Random search for the configuration with the lowest validation loss.

    Each trial trains with the reduced epoch budget of the space.
    Diverging trials are logged with an infinite loss.  The trial log
    is written as CSV when log_path is given.
    """
    space.validate()
    rng = np.random.default_rng(space.seed)
    rows = []
    best, best_loss = None, float('inf')
    for trial in range(space.budget):
        config = space.sample(rng, base_config)
        torch.manual_seed(space.seed + trial)
        try:
            model = train(build_model(config), data,
                          max_epochs=space.max_epochs,
                          patience=space.patience, seed=space.seed + trial)
        except DivergenceError as e:
            log.warning('trial %d diverged: %s', trial, e)
            val_loss, epochs_ran = float('inf'), 0
        else:
            val_loss, epochs_ran = model.best_val_loss, model.stop_epoch
        log.info('trial %d: validation loss %.6f after %d epochs',
                 trial, val_loss, epochs_ran)
        rows.append(dict(trial=trial,
                         params_json=json.dumps(_search_params(config),
                                                sort_keys=True),
                         val_loss=val_loss, epochs_ran=epochs_ran))
        if val_loss < best_loss:
            best, best_loss = config, val_loss

    if log_path:
        dirname = os.path.dirname(log_path)
        if dirname:
            os.makedirs(dirname, exist_ok=True)
        pd.DataFrame(rows, columns=['trial', 'params_json', 'val_loss',
                                    'epochs_ran']).to_csv(log_path,
                                                          index=False)
    if best is None:
        raise ModelError('all %d search trials diverged' % (space.budget,))
    return copy.deepcopy(best)


def experiment_grid(universe, resources=(), kinds=None, seeds=None,
                    scenarios=(Scenario.SINGLE, Scenario.MULTI), modes=None,
                    targets=None):
    """Enumerate scenario specs over scenarios, modes and model kinds.

    Without explicit modes, univariate specs are made for every resource
    and bivariate ones when there are two.  Single-dataset and transfer
    scenarios get one spec per target cluster (every eligible one unless
    targets are given), MULTI one spec for the whole universe.
    """
    kinds = [ModelKind(k) for k in (kinds or list(ModelKind))]
    seeds = list(range(10)) if seeds is None else list(seeds)
    if modes is None:
        modes = list(resources) + (
            [BIVARIATE] if len(resources) == 2 else [])
    if not modes:
        raise ScenarioError('no prediction modes')
    specs = []
    for scenario in map(Scenario, scenarios):
        if scenario is Scenario.MULTI:
            chosen = [None]
        elif targets:
            chosen = list(targets)
        elif scenario.gc19:
            chosen = ScenarioSpec(scenario, None, universe).gc19_group
        else:
            chosen = list(universe)
        for mode in modes:
            for kind in kinds:
                for target in chosen:
                    specs.append(ScenarioSpec(
                        scenario, target, universe, kind, mode, seeds,
                        FineTuneOptions() if scenario.fine_tuned else None))
    return specs
