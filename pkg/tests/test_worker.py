import pytest

from burstfuse.worker import BenchJob, BenchWorker, TooManyFailures


def _handler(payload):
    if payload < 0:
        raise RuntimeError("bad image")
    return [{'value': payload}]


def test_rows_follow_job_key_order():
    jobs = [BenchJob('c', 3), BenchJob('a', 1), BenchJob('b', 2)]
    worker = BenchWorker(_handler)
    assert [row['value'] for row in worker.run(jobs)] == [1, 2, 3]
    assert worker.summary() == {'completed': 3, 'failed': 0}


def test_threaded_run_matches_sequential():
    jobs = [BenchJob(f"img{i:02d}", i) for i in range(8)]
    assert BenchWorker(_handler, threads=4).run(jobs) == BenchWorker(_handler).run(jobs)


def test_failed_jobs_are_isolated():
    worker = BenchWorker(_handler)
    rows = worker.run([BenchJob('a', 1), BenchJob('b', -1), BenchJob('c', 3)])
    assert [row['value'] for row in rows] == [1, 3]
    assert worker.summary() == {'completed': 2, 'failed': 1}


def test_consecutive_failures_stop_the_run():
    jobs = [BenchJob(f"img{i}", -1) for i in range(4)]
    with pytest.raises(TooManyFailures):
        BenchWorker(_handler, max_consecutive_errors=3).run(jobs)


def test_worker_id_from_environment(monkeypatch):
    monkeypatch.setenv('BURSTFUSE_WORKER_ID', 'node-7')
    assert BenchWorker(_handler).worker_id == 'node-7'
