"""
Recurrent demand models and their predictive distributions.

All three architectures share the same feature extractor: one to three
1D convolutions over the input window, an LSTM whose last hidden state
feeds a stack of dense layers.  They differ in the head:

* POINT: a dense layer with one neuron per resource, trained with MSE.
* DISTRIBUTIONAL: a dense layer with two neurons per resource giving the
  mean and (through std_link) the standard deviation of a Normal
  distribution, trained with the Gaussian negative log-likelihood.
* BAYESIAN_LAST_LAYER: as DISTRIBUTIONAL, but the last dense layer of the
  stack is variational, with a mean-field Gaussian posterior over its
  weights and a standard Normal prior.  Predictions average over weight
  samples.
"""

import copy
import hashlib
import math
import os

from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from scipy.stats import norm
from torch import nn

from . import log
from .dataset import INPUT_LEN, MinMaxScaler, WindowSet
from .errors import ConfigError, DivergenceError, ModelError
from .utils import content_hash, read_json, write_json

STD_FLOOR = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)

DETERMINISTIC_ENV = 'CLOUDCAST_DETERMINISTIC'

__all__ = [
    'ModelKind', 'ModelConfig', 'ForecastDistribution', 'TrainedModel',
    'BayesianLinear', 'DemandNet', 'build_model', 'gaussian_nll',
    'std_link', 'kl_regularizer', 'train', 'predict_distribution',
    'predictive_samples', 'moment_match', 'upper_bound', 'quantile_z',
    'weights_hash', 'save_checkpoint', 'load_checkpoint',
    'write_predictions', 'read_predictions', 'configure_determinism']


class ModelKind(str, Enum):
    POINT = 'point'
    DISTRIBUTIONAL = 'distributional'
    BAYESIAN_LAST_LAYER = 'bayesian'


activations = dict(
    relu=nn.ReLU, tanh=nn.Tanh, elu=nn.ELU, selu=nn.SELU,
    sigmoid=nn.Sigmoid, gelu=nn.GELU)


@dataclass
class ModelConfig:
    """Architecture and optimizer settings of a demand model."""

    kind: ModelKind = ModelKind.DISTRIBUTIONAL
    conv_kernels: List[List[int]] = field(default_factory=lambda: [[32, 3]])
    conv_blocks: Optional[int] = None
    lstm_units: int = 64
    dense_stack: List[int] = field(default_factory=lambda: [64])
    output_resources: int = 1
    activation: str = 'relu'
    learning_rate: float = 1e-3
    batch_size: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 0.0
    kl_weight: float = 1.0
    epistemic_samples: int = 100
    input_len: int = INPUT_LEN

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        self.conv_kernels = [list(map(int, k)) for k in self.conv_kernels]
        self.dense_stack = [int(units) for units in self.dense_stack]
        if self.conv_blocks is None:
            self.conv_blocks = len(self.conv_kernels)

    def validate(self):
        """Raise a ModelError if the settings are inconsistent."""
        if not 1 <= self.conv_blocks <= 3:
            raise ModelError('need one to three conv blocks, got %d' % (
                self.conv_blocks,))
        if self.conv_blocks != len(self.conv_kernels):
            raise ModelError('%d conv blocks but %d kernel specs' % (
                self.conv_blocks, len(self.conv_kernels)))
        counts = [n for kernel in self.conv_kernels for n in kernel]
        counts += [self.lstm_units, self.batch_size, self.input_len,
                   self.epistemic_samples] + self.dense_stack
        if not self.dense_stack or min(counts) < 1:
            raise ModelError('layer sizes and counts must be positive')
        if self.output_resources not in (1, 2):
            raise ModelError('need one or two output resources, got %s' % (
                self.output_resources,))
        if self.activation not in activations:
            raise ModelError("unknown activation '%s'; valid are: %s" % (
                self.activation, ', '.join(sorted(activations))))
        if self.learning_rate <= 0:
            raise ModelError('learning rate must be positive')
        if self.kl_weight < 0 or self.weight_decay < 0:
            raise ModelError('KL weight and weight decay must not be'
                             ' negative')
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ModelError('Adam betas must lie in [0, 1)')
        return self

    @property
    def distributional(self):
        return self.kind is not ModelKind.POINT

    @property
    def hash(self):
        return content_hash(self.to_dict())

    def to_dict(self):
        d = asdict(self)
        d['kind'] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError('unknown model settings: %s' % (
                ', '.join(unknown),))
        return cls(**d)


def std_link(raw):
    """Map an unconstrained output onto a standard deviation."""
    return F.softplus(raw) + STD_FLOOR


def gaussian_nll(target, mean, std):
    """Negative log-likelihood of targets under independent Normals.

    The per-row loss sums over the last (resource) axis; rows are
    averaged, so a single row gives the plain sum.
    """
    target, mean, std = (torch.as_tensor(a, dtype=torch.float64)
                         if not torch.is_tensor(a) else a
                         for a in (target, mean, std))
    if bool((std <= 0).any()):
        raise ModelError('domain error: standard deviation must be positive')
    per = torch.log(std) + HALF_LOG_2PI + (target - mean) ** 2 / (
        2 * std ** 2)
    if per.dim() < 2:
        return per.sum()
    return per.sum(dim=-1).mean()


def kl_regularizer(mu, std):
    """KL divergence of factorized Normals N(mu, std) from N(0, 1).

    Summed over all weights.
    """
    mu, std = (torch.as_tensor(a, dtype=torch.float64)
               if not torch.is_tensor(a) else a for a in (mu, std))
    return (-torch.log(std) + 0.5 * (std ** 2 + mu ** 2) - 0.5).sum()


class BayesianLinear(nn.Module):
    """Dense layer with a mean-field Gaussian posterior over its weights.

    Every forward pass in sampling mode draws one weight matrix by the
    reparameterization trick; with sample=False the posterior means are
    used.
    """

    def __init__(self, in_features, out_features, init_rho=-5.0):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight_mu = nn.Parameter(torch.empty(out_features, in_features))
        self.weight_rho = nn.Parameter(
            torch.full((out_features, in_features), init_rho))
        self.bias_mu = nn.Parameter(torch.empty(out_features))
        self.bias_rho = nn.Parameter(torch.full((out_features,), init_rho))
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.kaiming_uniform_(self.weight_mu, a=math.sqrt(5))
        bound = 1 / math.sqrt(self.in_features)
        nn.init.uniform_(self.bias_mu, -bound, bound)

    @property
    def weight_std(self):
        return F.softplus(self.weight_rho)

    @property
    def bias_std(self):
        return F.softplus(self.bias_rho)

    def forward(self, x, sample=True, generator=None):
        if not sample:
            return F.linear(x, self.weight_mu, self.bias_mu)
        weight_eps = torch.randn(
            self.weight_mu.shape, generator=generator,
            dtype=self.weight_mu.dtype, device=self.weight_mu.device)
        bias_eps = torch.randn(
            self.bias_mu.shape, generator=generator,
            dtype=self.bias_mu.dtype, device=self.bias_mu.device)
        weight = self.weight_mu + self.weight_std * weight_eps
        bias = self.bias_mu + self.bias_std * bias_eps
        return F.linear(x, weight, bias)

    def kl(self):
        return (kl_regularizer(self.weight_mu, self.weight_std)
                + kl_regularizer(self.bias_mu, self.bias_std))


class DemandNet(nn.Module):
    """Convolution, LSTM and dense stack with a point or Gaussian head."""

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        activation = activations[config.activation]
        n_res = config.output_resources

        layers = []
        channels = n_res
        for filters, width in config.conv_kernels:
            layers += [nn.Conv1d(channels, filters, width,
                                 padding=width // 2), activation()]
            channels = filters
        self.conv = nn.Sequential(*layers)
        self.lstm = nn.LSTM(channels, config.lstm_units, batch_first=True)

        stack = list(config.dense_stack)
        bayes_units = None
        if config.kind is ModelKind.BAYESIAN_LAST_LAYER:
            bayes_units = stack.pop()
        layers = []
        width = config.lstm_units
        for units in stack:
            layers += [nn.Linear(width, units), activation()]
            width = units
        self.dense = nn.Sequential(*layers)

        if bayes_units:
            self.bayes = BayesianLinear(width, bayes_units)
            self.bayes_activation = activation()
            width = bayes_units
        else:
            self.bayes = None
        outputs = 2 * n_res if config.distributional else n_res
        self.head = nn.Linear(width, outputs)

    @property
    def kind(self):
        return self.config.kind

    def features(self, x):
        """Get the dense-stack features of a (batch, time, resource) input."""
        h = self.conv(x.transpose(1, 2)).transpose(1, 2)
        _, (h_n, _) = self.lstm(h)
        return self.dense(h_n[-1])

    def output(self, features, sample=True, generator=None):
        """Get the raw head outputs for given features."""
        if self.bayes is not None:
            features = self.bayes_activation(
                self.bayes(features, sample, generator))
        return self.head(features)

    def forward(self, x, sample=True, generator=None):
        return self.output(self.features(x), sample, generator)

    def split_output(self, raw):
        """Split raw distributional outputs into means and stds."""
        n_res = self.config.output_resources
        return raw[..., :n_res], std_link(raw[..., n_res:])


def build_model(config):
    """Build an untrained network for the given configuration."""
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    return DemandNet(config)


@dataclass
class ForecastDistribution:
    """Predicted Normal distributions, one row per prediction.

    Point models leave std unset; a relative threshold may be attached
    to turn their means into upper bounds.
    """

    mean: np.ndarray
    std: Optional[np.ndarray] = None
    resources: Sequence[str] = ()
    threshold: Optional[float] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        if self.mean.ndim == 1:
            self.mean = self.mean[:, None]
        if self.std is not None:
            self.std = np.asarray(self.std, dtype=float).reshape(
                self.mean.shape)
            if not np.all(self.std > 0) or not np.all(np.isfinite(self.std)):
                raise ModelError('predicted std must be finite and positive')
        self.resources = tuple(self.resources)

    def __len__(self):
        return len(self.mean)

    @property
    def is_point(self):
        return self.std is None

    def column(self, resource):
        """Get the distributions of a single resource."""
        j = resource if isinstance(resource, int) else \
            self.resources.index(resource)
        std = None if self.std is None else self.std[:, j:j + 1]
        names = self.resources[j:j + 1] if self.resources else ()
        return ForecastDistribution(self.mean[:, j:j + 1], std, names,
                                    self.threshold)

    def to_raw(self, scaler):
        """Map the distributions from scaled to raw units."""
        if self.resources:
            scaler = scaler.select(self.resources)
        std = None if self.std is None else scaler.inverse_std(self.std)
        return ForecastDistribution(scaler.inverse_transform(self.mean), std,
                                    self.resources, self.threshold)


@dataclass
class TrainedModel:
    """A trained network together with its training record."""

    config: ModelConfig
    net: DemandNet
    history: List[Dict]
    stop_epoch: int
    seed: int
    max_epochs: int
    resources: Sequence[str] = ()
    scalers: Dict[str, MinMaxScaler] = field(default_factory=dict)
    best_val_loss: float = float('nan')

    @property
    def kind(self):
        return self.config.kind

    @property
    def label(self):
        return self.config.kind.value

    def weights_hash(self):
        return weights_hash(self.net)


def weights_hash(net):
    """Get a digest of all parameters and buffers of a network."""
    digest = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        digest.update(name.encode('utf-8'))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()[:16]


def configure_determinism(enabled=None):
    """Switch torch into deterministic mode.

    If enabled is None, the CLOUDCAST_DETERMINISTIC environment variable
    decides.
    """
    if enabled is None:
        enabled = os.environ.get(DETERMINISTIC_ENV, '') not in (
            '', '0', 'false', 'off')
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.backends.cudnn.benchmark = False
    return enabled


def _objective(net, inputs, targets, kl_scale=0.0, sample=True):
    """Training loss of a batch."""
    raw = net(inputs, sample=sample)
    if net.kind is ModelKind.POINT:
        return F.mse_loss(raw, targets)
    mean, std = net.split_output(raw)
    loss = gaussian_nll(targets, mean, std)
    if sample and kl_scale and net.bayes is not None:
        loss = loss + kl_scale * net.bayes.kl()
    return loss


def _evaluate(net, windows, batch_size):
    """Mean validation loss of a window set, without weight sampling."""
    net.eval()
    total = 0.0
    with torch.no_grad():
        for first in range(0, len(windows), batch_size):
            idx = np.arange(first, min(first + batch_size, len(windows)))
            inputs, targets = windows.batch(idx, dtype=np.float32)
            loss = _objective(net, torch.from_numpy(inputs),
                              torch.from_numpy(targets), sample=False)
            total += float(loss) * len(idx)
    return total / len(windows)


def _check_data(config, windows, name):
    if not len(windows):
        raise ModelError('no %s samples' % (name,))
    if windows.n_resources != config.output_resources:
        raise ModelError('shape mismatch: model predicts %d resources,'
                         ' %s data has %d' % (config.output_resources, name,
                                              windows.n_resources))
    if windows.input_len != config.input_len:
        raise ModelError('shape mismatch: model takes %d inputs,'
                         ' %s windows have %d' % (config.input_len, name,
                                                  windows.input_len))


def _data_scalers(data):
    scalers = getattr(data, 'scalers', None)
    if scalers is not None:
        return dict(scalers)
    return {data.cluster_id: data.scaler}


def train(model, data, max_epochs=500, patience=20, seed=0,
          learning_rate=None, phase='train'):
    """Train a network on a SplitBundle or TrainingStream.

    Uses Adam on minibatches of the shuffled training windows and stops
    once the validation loss has not improved for more than patience
    epochs, restoring the best weights.  Passing a TrainedModel continues
    training from its weights and appends to its history.
    """
    if isinstance(model, TrainedModel):
        previous = model
        net = copy.deepcopy(model.net)
        history = [dict(row) for row in model.history]
    elif isinstance(model, DemandNet):
        previous = None
        net = model
        history = []
        if max_epochs < 1:
            raise ModelError('a new model needs at least one epoch')
    else:
        raise ModelError('cannot train %r' % (model,))
    config = net.config
    train_set, val_set = data.train, data.val
    _check_data(config, train_set, 'training')
    _check_data(config, val_set, 'validation')

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    lr = learning_rate or config.learning_rate
    optimizer = torch.optim.Adam(
        net.parameters(), lr=lr,
        betas=(config.adam_beta1, config.adam_beta2),
        weight_decay=config.weight_decay)
    kl_scale = config.kl_weight / len(train_set)
    batch_size = config.batch_size

    # the best weights are chosen among this phase's epochs only
    best_loss = float('inf') if max_epochs else \
        getattr(previous, 'best_val_loss', float('nan'))
    best_state = copy.deepcopy(net.state_dict())
    first_epoch = len(history) + 1
    wait = 0
    epochs = 0
    for epoch in range(first_epoch, first_epoch + max_epochs):
        net.train()
        order = rng.permutation(len(train_set))
        total = 0.0
        for first in range(0, len(order), batch_size):
            idx = order[first:first + batch_size]
            inputs, targets = train_set.batch(idx, dtype=np.float32)
            loss = _objective(net, torch.from_numpy(inputs),
                              torch.from_numpy(targets), kl_scale)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    'non-finite %s loss %s at epoch %d, batch %d'
                    ' (learning rate %g)' % (phase, float(loss), epoch,
                                             first // batch_size, lr))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(idx)
        epochs += 1
        train_loss = total / len(order)
        val_loss = _evaluate(net, val_set, batch_size)
        if not math.isfinite(val_loss):
            raise DivergenceError('non-finite validation loss at epoch %d'
                                  % (epoch,))
        history.append(dict(epoch=epoch, train_loss=train_loss,
                            val_loss=val_loss, phase=phase))
        log.debug('epoch %d: train %.6f, val %.6f', epoch, train_loss,
                  val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(net.state_dict())
            wait = 0
        else:
            wait += 1
            if wait > patience:
                break

    net.load_state_dict(best_state)
    net.eval()
    scalers = dict(previous.scalers) if previous else {}
    scalers.update(_data_scalers(data))
    log.info('%s %s model: %d epochs, best validation loss %.6f',
             'fine-tuned' if previous else 'trained', config.kind.value,
             epochs, best_loss)
    return TrainedModel(
        config=config, net=net, history=history, stop_epoch=epochs,
        seed=seed, max_epochs=max_epochs, resources=tuple(data.resources),
        scalers=scalers, best_val_loss=best_loss)


def _as_inputs(inputs):
    if isinstance(inputs, WindowSet):
        return inputs.batch(dtype=np.float32)[0]
    inputs = np.asarray(inputs, dtype=np.float32)
    if inputs.ndim == 2:
        inputs = inputs[None]
    return inputs


def _check_trained(model):
    if not isinstance(model, TrainedModel) or not model.history:
        raise ModelError('model has not been trained')


def _features(net, inputs, batch_size):
    net.eval()
    with torch.no_grad():
        return torch.cat([
            net.features(torch.from_numpy(inputs[i:i + batch_size]))
            for i in range(0, len(inputs), batch_size)])


def predictive_samples(model, inputs, samples=None, seed=None,
                       batch_size=1024):
    """Draw weight samples of a Bayesian-last-layer model.

    Return means and stds of shape (samples, rows, resources), one
    Gaussian per weight sample.
    """
    _check_trained(model)
    net = model.net
    if net.bayes is None:
        raise ModelError('%s models have no weight posterior' % (
            model.label,))
    samples = samples or model.config.epistemic_samples
    generator = torch.Generator().manual_seed(
        model.seed if seed is None else seed)
    inputs = _as_inputs(inputs)
    features = _features(net, inputs, batch_size)
    means, stds = [], []
    with torch.no_grad():
        for _ in range(samples):
            mean, std = net.split_output(
                net.output(features, sample=True, generator=generator))
            means.append(mean.double().numpy())
            stds.append(std.double().numpy())
    return np.stack(means), np.stack(stds)


def moment_match(means, stds):
    """Collapse equally weighted Gaussians into one per row.

    The mean is the mean of the means; the variance is the mean of the
    variances (aleatory) plus the variance of the means (epistemic).
    """
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    mean = means.mean(axis=0)
    variance = (stds ** 2).mean(axis=0) + means.var(axis=0)
    return mean, np.sqrt(variance)


def predict_distribution(model, inputs, samples=None, seed=None,
                         batch_size=1024):
    """Predict the demand distribution for (rows, input_len, R) inputs."""
    _check_trained(model)
    resources = model.resources
    if model.kind is ModelKind.BAYESIAN_LAST_LAYER:
        mean, std = moment_match(*predictive_samples(
            model, inputs, samples, seed, batch_size))
        return ForecastDistribution(mean, std, resources)

    net = model.net
    inputs = _as_inputs(inputs)
    features = _features(net, inputs, batch_size)
    with torch.no_grad():
        raw = net.output(features, sample=False)
        if model.kind is ModelKind.POINT:
            return ForecastDistribution(raw.double().numpy(), None,
                                        resources)
        mean, std = net.split_output(raw)
    return ForecastDistribution(mean.double().numpy(),
                                std.double().numpy(), resources)


def quantile_z(confidence, one_sided=False):
    """Standard Normal quantile bounding a confidence interval from above.

    Two-sided intervals use the (1 + confidence) / 2 quantile.
    """
    if not 0 < confidence < 1:
        raise ConfigError('confidence must lie in (0, 1), got %s' % (
            confidence,))
    return float(norm.ppf(confidence if one_sided else (1 + confidence) / 2))


def upper_bound(dist, confidence, one_sided=False):
    """Upper bound of the predicted interval at a confidence level.

    Point predictions give mean * (1 + threshold) instead.
    """
    z = quantile_z(confidence, one_sided)
    if dist.std is None:
        return dist.mean * (1 + (dist.threshold or 0.0))
    return dist.mean + z * dist.std


def save_checkpoint(model, directory):
    """Persist a trained model as a checkpoint directory."""
    os.makedirs(directory, exist_ok=True)
    write_json(os.path.join(directory, 'config.json'),
               model.config.to_dict())
    torch.save(model.net.state_dict(), os.path.join(directory, 'weights.pt'))
    pd.DataFrame(model.history,
                 columns=['epoch', 'train_loss', 'val_loss', 'phase']
                 ).to_csv(os.path.join(directory, 'history.csv'), index=False)
    write_json(os.path.join(directory, 'meta.json'), dict(
        seed=model.seed,
        stop_epoch=model.stop_epoch,
        max_epochs=model.max_epochs,
        best_val_loss=model.best_val_loss,
        resources=list(model.resources),
        scalers={k: v.to_dict() for k, v in model.scalers.items()},
        weights_hash=model.weights_hash(),
        config_hash=model.config.hash))


def load_checkpoint(directory):
    """Load a model saved by save_checkpoint."""
    config = ModelConfig.from_dict(
        read_json(os.path.join(directory, 'config.json')))
    meta = read_json(os.path.join(directory, 'meta.json'))
    net = build_model(config)
    net.load_state_dict(torch.load(os.path.join(directory, 'weights.pt')))
    net.eval()
    history = pd.read_csv(os.path.join(directory, 'history.csv'))
    model = TrainedModel(
        config=config, net=net, history=history.to_dict('records'),
        stop_epoch=meta['stop_epoch'], seed=meta['seed'],
        max_epochs=meta['max_epochs'], resources=tuple(meta['resources']),
        scalers={k: MinMaxScaler.from_dict(v)
                 for k, v in meta['scalers'].items()},
        best_val_loss=meta['best_val_loss'])
    if model.weights_hash() != meta['weights_hash']:
        raise ModelError('checkpoint %s: weights do not match their hash' % (
            directory,))
    return model


def write_predictions(path, dist, windows):
    """Write predictions as cluster_id, target_index, resource, mean, std.

    There is one row per window and resource; std stays empty for point
    models.
    """
    n, n_res = dist.mean.shape
    resources = dist.resources or tuple('r%d' % j for j in range(n_res))
    std = dist.std if dist.std is not None else np.full((n, n_res), np.nan)
    frame = pd.DataFrame(dict(
        cluster_id=np.repeat(windows.cluster_ids, n_res),
        target_index=np.repeat(windows.target_index, n_res),
        resource=np.tile(resources, n),
        mean=dist.mean.reshape(-1),
        std=std.reshape(-1)))
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.10g')


def read_predictions(path):
    """Read predictions into per-resource ForecastDistributions.

    Return a dict mapping cluster ids to (target indices, distribution).
    """
    frame = pd.read_csv(path)
    result = {}
    for cluster_id, group in frame.groupby('cluster_id', sort=False):
        resources = list(dict.fromkeys(group['resource']))
        wide = group.pivot(index='target_index', columns='resource')
        mean = wide['mean'][resources].to_numpy(float)
        std = wide['std'][resources].to_numpy(float)
        std = None if np.isnan(std).all() else std
        result[cluster_id] = (wide.index.to_numpy(np.int64),
                              ForecastDistribution(mean, std, resources))
    return result
