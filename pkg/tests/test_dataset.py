import numpy as np

from pytest import approx, raises

from cloudcast import dataset
from cloudcast.errors import DataError
from cloudcast.ingest import TraceSeries

from .utils import INPUT_LEN, make_bundle, ramp_series


def test_scaler_uses_training_portion():
    series = ramp_series(100)
    scaler = dataset.fit_scaler(series)
    assert scaler.min.tolist() == [0.0, 0.0]
    assert scaler.max.tolist() == [79.0, 158.0]
    scaled = dataset.scale(series, scaler)
    assert scaled.values[:80].min() == 0.0
    assert scaled.values[:80].max() == 1.0
    assert scaled.values[99, 0] == approx(99 / 79.0)
    assert dataset.inverse_scale(scaled.values, scaler) == approx(
        series.values)


def test_scaler_ignores_test_spike():
    series = ramp_series(100)
    spiked = series.with_values(series.values.copy())
    spiked.values[95] = 1e6
    a, b = dataset.fit_scaler(series), dataset.fit_scaler(spiked)
    assert a.to_dict() == b.to_dict()


def test_scaler_inverse_std():
    scaler = dataset.MinMaxScaler(('cpu', 'memory'), [1.0, 0.0], [3.0, 10.0])
    assert scaler.inverse_std([[0.5, 0.1]]).tolist() == [[1.0, 1.0]]
    assert scaler.select(['memory']).to_dict() == dict(
        resources=['memory'], min=[0.0], max=[10.0])
    with raises(DataError, match='degenerate'):
        dataset.MinMaxScaler(('cpu',), [1.0], [1.0])


def test_constant_training_portion():
    series = TraceSeries('flat', ('cpu',), 300, np.arange(100) * 300,
                         np.r_[np.ones(80), np.arange(20.0)])
    with raises(DataError, match='degenerate scale'):
        dataset.fit_scaler(series)


def test_make_windows():
    windows = dataset.make_windows(ramp_series(100), 10, 2)
    assert len(windows) == 100 - 10 - 2 + 1
    first = windows[0]
    assert first.input[:, 0].tolist() == list(range(10))
    assert first.target.tolist() == [11.0, 22.0]
    assert first.target_index == 11
    inputs, targets = windows.batch()
    assert inputs.shape == (89, 10, 2)
    assert targets.shape == (89, 2)
    assert windows.target_index[-1] == 99


def test_window_reconstruction():
    series = ramp_series(50)
    windows = dataset.make_windows(series, 10, 2)
    inputs = windows.inputs
    rebuilt = np.concatenate([inputs[:, 0], inputs[-1, 1:]])
    assert np.array_equal(rebuilt, series.values[:len(rebuilt)])


def test_too_short():
    with raises(DataError, match='too short'):
        dataset.make_windows(ramp_series(11), 10, 2)


def test_select_resources():
    series = ramp_series(20)
    cpu = dataset.select_resources(series, 'cpu')
    assert cpu.resources == ('cpu',)
    assert cpu.values.shape == (20, 1)
    assert dataset.select_resources(series, 1).resources == ('memory',)
    assert dataset.select_resources(series, dataset.BIVARIATE) is series
    with raises(DataError, match='two resources'):
        dataset.select_resources(cpu, dataset.BIVARIATE)


def test_split():
    bundle = dataset.split(ramp_series(100), 10, 2)
    assert bundle.split_indices == (80, 80)
    assert bundle.counts() == dict(train=55, val=14, test=9)
    train = set(bundle.train.target_index)
    val = set(bundle.val.target_index)
    test = set(bundle.test.target_index)
    assert not (train | val) & test
    assert max(train | val) < 80
    assert min(bundle.test.starts) >= 80
    # validation targets are the last training targets
    assert sorted(val) == list(range(max(train) + 1, max(train) + 15))


def test_split_full_length():
    series = TraceSeries('long', ('cpu',), 300, np.arange(8352) * 300,
                         np.sin(np.arange(8352.0)) + 2)
    bundle = dataset.split(series)
    assert bundle.split_indices[0] == 6681
    assert bundle.test.target_index.min() >= 6681
    assert bundle.input_len == dataset.INPUT_LEN


def test_split_test_context():
    bundle = dataset.split(ramp_series(100), 10, 2, test_context=True)
    assert len(bundle.test) == 20
    assert bundle.test.target_index.min() == 80
    assert bundle.test.starts.min() < 80
    assert dataset.check_leak_free(bundle) is bundle


def test_split_univariate():
    bundle = dataset.split(ramp_series(100), 10, 2, resource='memory')
    assert bundle.resources == ('memory',)
    assert bundle.scaler.resources == ('memory',)
    assert bundle.test.n_resources == 1


def test_split_insufficient():
    with raises(DataError, match='insufficient data'):
        dataset.split(ramp_series(30), 10, 2)


def test_leak_detection():
    bundle = dataset.split(ramp_series(100), 10, 2)
    bundle.test = dataset.WindowSet(bundle.test.sources, [0], [60], 10, 2)
    with raises(DataError, match='before the cut'):
        dataset.check_leak_free(bundle)


def test_merge_shuffle():
    a = make_bundle('a', seed=1)
    b = make_bundle('b', seed=2)
    stream = dataset.merge_shuffle([a, b], seed=7)
    assert len(stream.train) == len(a.train) + len(b.train)
    assert stream.clusters == ['a', 'b']
    assert sorted(set(stream.train.cluster_ids)) == ['a', 'b']
    assert set(stream.val_sets) == {'a', 'b'}
    assert len(stream.val) == len(a.val) + len(b.val)
    again = dataset.merge_shuffle([a, b], seed=7)
    assert np.array_equal(stream.train.starts, again.train.starts)
    assert np.array_equal(stream.train.cluster_ids, again.train.cluster_ids)
    other = dataset.merge_shuffle([a, b], seed=8)
    assert not np.array_equal(stream.train.starts, other.train.starts)
    inputs, targets = stream.train.batch([0, 1, 2])
    assert inputs.shape == (3, INPUT_LEN, 2)


def test_merge_single_bundle():
    a = make_bundle('a')
    stream = dataset.merge_shuffle([a], seed=0)
    assert sorted(stream.train.starts) == sorted(a.train.starts)


def test_merge_mixed_resources():
    with raises(DataError, match='cannot merge'):
        dataset.merge_shuffle([make_bundle('a'),
                               make_bundle('b', resource='cpu')], seed=0)
    with raises(DataError):
        dataset.merge_shuffle([], seed=0)


def test_bundle_files(tmp_path):
    bundle = make_bundle('c3')
    directory = str(tmp_path / 'c3')
    dataset.save_bundle(bundle, directory)
    loaded = dataset.load_bundle(directory)
    assert loaded.cluster_id == 'c3'
    assert loaded.resources == bundle.resources
    assert loaded.counts() == bundle.counts()
    assert loaded.split_indices == bundle.split_indices
    for name in ('train', 'val', 'test'):
        assert np.array_equal(getattr(loaded, name).target_index,
                              getattr(bundle, name).target_index)
    assert np.array_equal(loaded.test.inputs, bundle.test.inputs)
    samples = np.load(str(tmp_path / 'c3' / 'samples_val.npy'))
    assert samples.shape == (len(bundle.val), INPUT_LEN * 2 + 2)
    assert samples[:, -2:] == approx(bundle.val.targets, abs=1e-6)
    assert dataset.resource_mode(loaded.resources) == dataset.BIVARIATE
    assert dataset.resource_mode(('cpu',)) == 'cpu'
