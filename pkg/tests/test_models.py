import json
import math

import numpy as np
import pytest
import torch

from pytest import approx, raises

from cloudcast import dataset, models
from cloudcast.dataset import MinMaxScaler, WindowSet
from cloudcast.errors import ConfigError, DivergenceError, ModelError
from cloudcast.evaluation import calibration_curve
from cloudcast.models import (
    BayesianLinear, ForecastDistribution, ModelConfig, ModelKind,
    build_model, gaussian_nll, kl_regularizer, moment_match,
    predict_distribution, quantile_z, std_link, train, upper_bound)
from cloudcast.synth import SynthSpec, generate_trace

from .utils import INPUT_LEN, make_bundle, tiny_config


def test_quantiles():
    assert quantile_z(0.95) == approx(1.959964, abs=1e-4)
    assert quantile_z(0.97) == approx(2.170090, abs=1e-4)
    assert quantile_z(0.99) == approx(2.575829, abs=1e-4)
    assert quantile_z(0.95, one_sided=True) == approx(1.644854, abs=1e-4)
    for bad in (0, 1, 1.5):
        with raises(ConfigError):
            quantile_z(bad)


def test_gaussian_nll():
    assert float(gaussian_nll([0.0], [0.0], [1.0])) == approx(0.9189385)
    assert float(gaussian_nll([2.0], [2.0], [3.0])) == approx(
        math.log(3.0) + 0.5 * math.log(2 * math.pi))
    one = float(gaussian_nll([1.0], [0.0], [2.0]))
    two = float(gaussian_nll([3.0], [1.0], [0.5]))
    both = float(gaussian_nll([[1.0, 3.0]], [[0.0, 1.0]], [[2.0, 0.5]]))
    assert both == approx(one + two)
    with raises(ModelError, match='domain'):
        gaussian_nll([0.0], [0.0], [0.0])


def test_gaussian_nll_gradients():
    rng = np.random.default_rng(11)
    eps = 1e-6

    def loss(t, m, r):
        return float(gaussian_nll(t, m, std_link(r)))

    for t, m, r in rng.uniform((-1, -1, -2), (1, 1, 2), (100, 3)):
        target = torch.tensor([t], dtype=torch.float64)
        mean = torch.tensor([m], dtype=torch.float64, requires_grad=True)
        raw = torch.tensor([r], dtype=torch.float64, requires_grad=True)
        gaussian_nll(target, mean, std_link(raw)).backward()

        s = float(std_link(torch.tensor(r, dtype=torch.float64)))
        assert mean.grad.item() == approx(-(t - m) / s ** 2, rel=1e-9)
        assert raw.grad.item() == approx(
            (1 / s - (t - m) ** 2 / s ** 3) / (1 + math.exp(-r)), rel=1e-9)

        target, m_, r_ = (torch.tensor([v], dtype=torch.float64)
                          for v in (t, m, r))
        numeric_mean = (loss(target, m_ + eps, r_)
                        - loss(target, m_ - eps, r_)) / (2 * eps)
        numeric_raw = (loss(target, m_, r_ + eps)
                       - loss(target, m_, r_ - eps)) / (2 * eps)
        assert mean.grad.item() == approx(numeric_mean, rel=1e-5, abs=1e-8)
        assert raw.grad.item() == approx(numeric_raw, rel=1e-5, abs=1e-8)


def test_std_link():
    assert float(std_link(torch.tensor(0.0))) == approx(0.6931472)
    raw = torch.linspace(-10, 10, 21)
    out = std_link(raw)
    assert bool((out > 0).all())
    assert bool((out[1:] > out[:-1]).all())
    assert float(std_link(torch.tensor(50.0))) == approx(50.0)


def test_kl_regularizer():
    assert float(kl_regularizer([0.0, 0.0], [1.0, 1.0])) == approx(0.0)
    assert float(kl_regularizer([1.0], [1.0])) == approx(0.5)
    assert float(kl_regularizer([0.0], [2.0])) == approx(
        -math.log(2.0) + 1.5)


def test_moment_match():
    means = np.array([[[1.0]], [[3.0]]])
    stds = np.ones((2, 1, 1))
    mean, std = moment_match(means, stds)
    assert mean.tolist() == [[2.0]]
    assert std[0, 0] == approx(math.sqrt(2.0))
    mean, std = moment_match(np.full((5, 3, 2), 0.4), np.full((5, 3, 2), 0.1))
    assert mean == approx(0.4)
    assert std == approx(0.1)


def test_moment_match_monte_carlo():
    rng = np.random.default_rng(12)
    means = rng.normal(0.5, 0.2, (5, 1, 1))
    stds = rng.uniform(0.05, 0.3, (5, 1, 1))
    mean, std = moment_match(means, stds)
    component = rng.integers(0, 5, 10 ** 5)
    draws = rng.normal(means[component, 0, 0], stds[component, 0, 0])
    assert draws.mean() == approx(mean[0, 0], abs=0.01)
    assert draws.var() == approx(std[0, 0] ** 2, rel=0.02)


def test_upper_bound():
    dist = ForecastDistribution([[1.0]], [[0.5]], ('cpu',))
    assert upper_bound(dist, 0.95)[0, 0] == approx(1.0 + 0.5 * 1.959964,
                                                   abs=1e-4)
    point = ForecastDistribution([[10.0]], None, ('cpu',), threshold=0.1)
    assert upper_bound(point, 0.99)[0, 0] == approx(11.0)
    assert point.is_point
    with raises(ModelError):
        ForecastDistribution([[1.0]], [[0.0]])


def test_distribution_columns():
    scaler_dist = ForecastDistribution([[0.5, 0.25]], [[0.1, 0.2]],
                                       ('cpu', 'memory'))
    memory = scaler_dist.column('memory')
    assert memory.resources == ('memory',)
    assert memory.mean.tolist() == [[0.25]]
    raw = scaler_dist.to_raw(MinMaxScaler(('cpu', 'memory'), [0, 10],
                                          [2, 30]))
    assert raw.mean.tolist() == [[1.0, 15.0]]
    assert raw.std == approx(np.array([[0.2, 4.0]]))


def test_config():
    config = ModelConfig()
    assert config.conv_blocks == 1
    assert config.validate() is config
    assert ModelConfig.from_dict(config.to_dict()) == config
    assert config.hash == ModelConfig().hash
    assert config.hash != ModelConfig(lstm_units=32).hash
    for bad in (dict(conv_kernels=[[8, 3]] * 4), dict(conv_blocks=2),
                dict(output_resources=3), dict(activation='swish'),
                dict(learning_rate=0), dict(dense_stack=[])):
        with raises(ModelError):
            ModelConfig(**bad).validate()
    with raises(ConfigError, match='units'):
        ModelConfig.from_dict(dict(units=3))


def test_heads():
    x = torch.zeros((4, INPUT_LEN, 2))
    point = build_model(tiny_config('point'))
    assert point(x).shape == (4, 2)
    assert point.head.out_features == 2
    assert point.bayes is None
    dist = build_model(tiny_config('distributional'))
    assert dist(x).shape == (4, 4)
    bayes = build_model(tiny_config('bayesian'))
    assert bayes(x).shape == (4, 4)
    assert bayes.bayes is not None
    assert len(bayes.dense) == 2  # one plain dense layer and its activation
    uni = build_model(tiny_config('point', resources=1, dense_stack=[8]))
    assert uni(torch.zeros((1, INPUT_LEN, 1))).shape == (1, 1)


def test_bayesian_linear():
    torch.manual_seed(0)
    layer = BayesianLinear(3, 2)
    x = torch.ones((1, 3))
    mean = layer(x, sample=False)
    assert torch.equal(mean, layer(x, sample=False))
    a = layer(x, generator=torch.Generator().manual_seed(1))
    b = layer(x, generator=torch.Generator().manual_seed(1))
    c = layer(x, generator=torch.Generator().manual_seed(2))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    assert float(layer.kl()) > 0

    # a collapsed posterior is a plain dense layer
    with torch.no_grad():
        layer.weight_rho.fill_(-60.0)
        layer.bias_rho.fill_(-60.0)
    assert layer(x).detach().numpy() == approx(mean.detach().numpy(),
                                               abs=1e-12)


def test_train_and_predict():
    bundle = make_bundle()
    model = train(build_model(tiny_config('distributional')), bundle,
                  max_epochs=2, seed=0)
    assert model.stop_epoch == 2
    assert [row['epoch'] for row in model.history] == [1, 2]
    assert model.best_val_loss == min(row['val_loss']
                                      for row in model.history)
    assert model.resources == ('cpu', 'memory')
    assert set(model.scalers) == {'c0'}
    dist = predict_distribution(model, bundle.test)
    assert dist.mean.shape == (len(bundle.test), 2)
    assert np.all(dist.std > 0)


def test_train_deterministic():
    bundle = make_bundle()
    runs = []
    for _ in range(2):
        torch.manual_seed(3)
        runs.append(train(build_model(tiny_config('point')), bundle,
                          max_epochs=2, seed=3))
    assert runs[0].weights_hash() == runs[1].weights_hash()
    assert runs[0].history == runs[1].history


def test_patience_zero(monkeypatch):
    losses = iter([0.5, 0.6, 0.4, 0.3])
    monkeypatch.setattr(models, '_evaluate', lambda *args: next(losses))
    model = train(build_model(tiny_config('point')), make_bundle(),
                  max_epochs=4, patience=0)
    assert model.stop_epoch == 2
    assert model.best_val_loss == 0.5


def test_constant_series_is_learnt():
    values = np.full((200, 1), 0.5)
    windows = WindowSet([('flat', values)], np.zeros(150, dtype=int),
                        np.arange(150), INPUT_LEN, 2)

    class Data:
        train = windows.subset(np.arange(120))
        val = windows.subset(np.arange(120, 150))
        resources = ('cpu',)
        scalers = {}

    torch.manual_seed(0)
    config = tiny_config('point', resources=1, dense_stack=[8],
                         learning_rate=1e-2)
    model = train(build_model(config), Data, max_epochs=200, patience=200)
    dist = predict_distribution(model, Data.val)
    assert np.abs(dist.mean - 0.5).max() < 0.01


def test_divergence(monkeypatch):
    monkeypatch.setattr(models, '_objective',
                        lambda *args, **kw: torch.tensor(float('nan')))
    with raises(DivergenceError, match='non-finite'):
        train(build_model(tiny_config()), make_bundle(), max_epochs=1)


def test_shape_mismatch():
    with raises(ModelError, match='shape mismatch'):
        train(build_model(tiny_config(resources=1, dense_stack=[8])),
              make_bundle(), max_epochs=1)
    with raises(ModelError, match='at least one epoch'):
        train(build_model(tiny_config()), make_bundle(), max_epochs=0)


def test_untrained():
    with raises(ModelError, match='not been trained'):
        predict_distribution(build_model(tiny_config()), np.zeros(
            (1, INPUT_LEN, 2)))


def test_continue_training():
    bundle = make_bundle()
    model = train(build_model(tiny_config('bayesian')), bundle,
                  max_epochs=1)
    tuned = train(model, bundle, max_epochs=2, learning_rate=1e-4,
                  phase='finetune')
    assert len(model.history) == 1
    assert [row['phase'] for row in tuned.history] == [
        'train', 'finetune', 'finetune']
    assert tuned.weights_hash() != model.weights_hash()
    assert tuned.net is not model.net


def test_bayesian_prediction():
    bundle = make_bundle()
    model = train(build_model(tiny_config('bayesian')), bundle,
                  max_epochs=1)
    a = predict_distribution(model, bundle.test, seed=1)
    b = predict_distribution(model, bundle.test, seed=1)
    assert np.array_equal(a.mean, b.mean)
    means, stds = models.predictive_samples(model, bundle.test, samples=5)
    assert means.shape == (5, len(bundle.test), 2)
    with raises(ModelError, match='no weight posterior'):
        models.predictive_samples(
            train(build_model(tiny_config()), bundle, max_epochs=1),
            bundle.test)


def test_checkpoint(tmp_path):
    bundle = make_bundle()
    model = train(build_model(tiny_config('bayesian')), bundle,
                  max_epochs=1)
    directory = str(tmp_path / 'model')
    models.save_checkpoint(model, directory)
    loaded = models.load_checkpoint(directory)
    assert loaded.weights_hash() == model.weights_hash()
    assert loaded.config == model.config
    assert loaded.resources == model.resources
    assert loaded.history[0]['phase'] == 'train'
    assert np.array_equal(predict_distribution(loaded, bundle.test).mean,
                          predict_distribution(model, bundle.test).mean)

    meta = tmp_path / 'model' / 'meta.json'
    d = json.loads(meta.read_text())
    d['weights_hash'] = '0' * 16
    meta.write_text(json.dumps(d))
    with raises(ModelError, match='hash'):
        models.load_checkpoint(directory)


def test_prediction_files(tmp_path):
    bundle = make_bundle()
    model = train(build_model(tiny_config()), bundle, max_epochs=1)
    dist = predict_distribution(model, bundle.test)
    path = str(tmp_path / 'predictions_test.csv')
    models.write_predictions(path, dist, bundle.test)
    index, again = models.read_predictions(path)['c0']
    assert index.tolist() == bundle.test.target_index.tolist()
    assert again.resources == ('cpu', 'memory')
    assert again.mean == approx(dist.mean, rel=1e-8)
    assert again.std == approx(dist.std, rel=1e-8)


def test_determinism_switch(monkeypatch):
    monkeypatch.setenv(models.DETERMINISTIC_ENV, '0')
    assert models.configure_determinism() is False
    assert models.configure_determinism(False) is False


def test_kind_names():
    assert ModelKind('bayesian') is ModelKind.BAYESIAN_LAST_LAYER
    assert not ModelConfig(kind='point').distributional


def test_bayesian_variance_decomposition():
    bundle = make_bundle()
    torch.manual_seed(0)
    model = train(build_model(tiny_config('bayesian')), bundle,
                  max_epochs=1)
    rows = bundle.test.subset(np.arange(3))
    means, stds = models.predictive_samples(model, rows, samples=20,
                                            seed=4)
    mean, std = moment_match(means, stds)
    aleatory = (stds ** 2).mean(axis=0)
    assert np.all(std ** 2 >= aleatory)
    assert std ** 2 == approx(aleatory + means.var(axis=0), abs=1e-9)

    rng = np.random.default_rng(13)
    component = rng.integers(0, 20, 10 ** 5)
    draws = rng.normal(means[component, 0, 0], stds[component, 0, 0])
    assert draws.var() == approx(std[0, 0] ** 2, rel=0.02)


def test_collapsed_posterior_tracks_distributional():
    bundle = make_bundle()
    losses = {}
    for kind in ('distributional', 'bayesian'):
        torch.manual_seed(5)
        net = build_model(tiny_config(kind, kl_weight=0.0))
        if net.bayes is not None:
            for rho in (net.bayes.weight_rho, net.bayes.bias_rho):
                rho.requires_grad_(False)
                with torch.no_grad():
                    rho.fill_(-30.0)
        losses[kind] = train(net, bundle, max_epochs=3,
                             seed=5).best_val_loss
    reference = losses['distributional']
    assert abs(losses['bayesian'] - reference) < 0.1 * abs(reference)


@pytest.mark.slow
def test_calibration_recovery():
    series = generate_trace(SynthSpec(seed=21))
    assert len(series) == 8352
    bundle = dataset.split(series, INPUT_LEN)
    torch.manual_seed(21)
    config = tiny_config('distributional', resources=1, lstm_units=16,
                         dense_stack=[16], learning_rate=3e-3)
    model = train(build_model(config), bundle, max_epochs=30, patience=5,
                  seed=21)
    dist = predict_distribution(model, bundle.test)
    _, actual = bundle.test.batch()
    curve = calibration_curve(dist, actual[:, 0], one_sided=True)
    assert curve.levels[0] == 90.0 and curve.levels[-1] == 99.5
    assert curve.curve_mae <= 3.0
