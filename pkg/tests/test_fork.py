from pytest import raises

from cloudcast.errors import CloudcastException
from cloudcast.fork import run_jobs
from cloudcast.utils import make_int


def test_serial_jobs():
    assert run_jobs(make_int, [('1',), ('2',), ('3',)]) == [1, 2, 3]
    assert run_jobs(make_int, []) == []
    with raises(CloudcastException, match='at least one job'):
        run_jobs(make_int, [('1',)], jobs=0)


def test_process_jobs():
    assert run_jobs(make_int, [('4',), ('5',)], jobs=2) == [4, 5]
    with raises(CloudcastException, match="'x' into an int"):
        run_jobs(make_int, [('x',), ('5',)], jobs=2)
