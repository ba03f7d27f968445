"""cloudcast multiprocess execution of independent jobs."""

import multiprocessing
import os
import time

from concurrent.futures import ProcessPoolExecutor

from . import log
from .errors import CloudcastException


def _timed_call(func, args):
    start_time = time.perf_counter()
    result = func(*args)
    return result, time.perf_counter() - start_time, os.getpid()


def run_jobs(func, arglist, jobs=1):
    """Call func once per argument tuple, in up to jobs worker processes.

    Workers are spawned, not forked, so func must be a module-level
    function and its arguments picklable.  Results come back in the order
    of arglist.  A failing job does not stop the others; once all are
    done, the first failure is raised again.
    """
    arglist = [tuple(args) for args in arglist]
    if jobs < 1:
        raise CloudcastException('need at least one job, got %d' % (jobs,))

    if jobs == 1 or len(arglist) < 2:
        results = []
        for args in arglist:
            result, this_time, _ = _timed_call(func, args)
            log.debug('job %s done in %.2f s', args, this_time)
            results.append(result)
        return results

    jobs = min(jobs, len(arglist))
    log.info('running %d jobs in %d processes', len(arglist), jobs)
    context = multiprocessing.get_context('spawn')
    results = [None] * len(arglist)
    failures = []
    total_time = 0.0
    with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:
        futures = [pool.submit(_timed_call, func, args) for args in arglist]
        for i, future in enumerate(futures):
            try:
                results[i], this_time, pid = future.result()
            except Exception as e:
                log.error('job %d FAILED: %s', i, e)
                failures.append(e)
            else:
                log.debug('job %d done by process %d in %.2f s',
                          i, pid, this_time)
                total_time += this_time

    log.info('%d of %d jobs completed, total time %.2f s',
             len(arglist) - len(failures), len(arglist), total_time)
    if failures:
        raise failures[0]
    return results
