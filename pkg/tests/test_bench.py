import os

from pytest import raises

from cloudcast import bench
from cloudcast.errors import CloudcastException, DataError
from cloudcast.models import build_model, train
from cloudcast.utils import LockFile

from .utils import make_bundle, tiny_config


def trained():
    bundle = make_bundle('bench')
    return train(build_model(tiny_config()), bundle, max_epochs=1), bundle


def test_training_cells():
    bundle = make_bundle('bench')
    report = bench.bench_training(tiny_config(), bundle, repetitions=2,
                                  max_epochs=1, label='M-B-LSTMD')
    frame = report.frame()
    assert frame['cell'].tolist() == ['20%', '40%', '60%', '80%']
    assert (frame['repetitions'] == 2).all()
    assert (frame['mean_s'] > 0).all()
    assert len(report.raw) == 8
    with raises(DataError, match='outside'):
        bench.bench_training(tiny_config(), bundle, fractions=[1.5])


def test_finetune_keeps_model():
    model, bundle = trained()
    before = model.weights_hash()
    report = bench.bench_finetune(model, bundle, step_counts=[6, 12],
                                  repetitions=2)
    assert model.weights_hash() == before
    assert report.frame()['cell'].tolist() == ['6 steps', '12 steps']
    with raises(DataError, match='cannot fine-tune on 0'):
        bench.bench_finetune(model, bundle, step_counts=[0])
    with raises(DataError):
        bench.bench_finetune(model, bundle,
                             step_counts=[len(bundle.train) + 1])


def test_inference():
    model, bundle = trained()
    report = bench.bench_inference(model, bundle, calls=5)
    row = report.rows[0]
    assert row['benchmark'] == 'inference'
    assert row['median_s'] > 0
    assert row['repetitions'] == 5
    with raises(DataError):
        bench.bench_inference(model, bundle, calls=0)


def test_report_add():
    report = bench.RuntimeReport('x')
    report.add('training', '20%', [1.0, 2.0, 4.0])
    row = report.rows[0]
    assert row['mean_s'] == 7 / 3.0
    assert row['median_s'] == 2.0
    with raises(DataError, match='positive'):
        report.add('training', '40%', [1.0, 0.0])


def test_run_benchmarks(tmp_path, bench_lock):
    model, bundle = trained()
    directory = str(tmp_path / 'bench')
    report = bench.run_benchmarks(
        tiny_config(), model, bundle, directory, fractions=[0.5],
        step_counts=[6], repetitions=2, max_epochs=1, calls=3)
    assert report.frame()['benchmark'].tolist() == [
        'training', 'finetune', 'inference']
    assert not os.path.exists(bench_lock)

    raw = bench.read_raw_log(os.path.join(directory, 'runtime_log.jsonl'))
    assert len(raw) == 2 + 2 + 3
    means = raw.groupby('benchmark')['seconds'].mean()
    frame = report.frame().set_index('benchmark')
    for name in ('training', 'finetune'):
        assert abs(means[name] - frame.loc[name, 'mean_s']) < 1e-9
    assert os.path.exists(os.path.join(directory, 'runtime.csv'))


def test_lock_is_machine_wide(tmp_path, bench_lock):
    model, bundle = trained()
    with LockFile(bench_lock):
        for label in ('S-B-LSTM', 'M-B-HBNN'):
            with raises(CloudcastException, match='held by another process'):
                bench.run_benchmarks(
                    tiny_config(), model, bundle,
                    str(tmp_path / 'bench' / label), fractions=[0.5],
                    step_counts=[6], repetitions=1, max_epochs=1, calls=1,
                    label=label)
    assert not os.path.exists(str(tmp_path / 'bench' / 'S-B-LSTM'))
    assert bench.LOCK_PATH == bench_lock
