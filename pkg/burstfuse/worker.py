"""
Bench Worker - runs per-image bench jobs sequentially or on a thread pool
"""
import os
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from burstfuse.errors import BurstFuseError

logger = logging.getLogger(__name__)

WORKER_ID_ENV_VAR = 'BURSTFUSE_WORKER_ID'


@dataclass(frozen=True)
class BenchJob:
    key: str
    payload: object


class TooManyFailures(BurstFuseError):
    """Raised when consecutive bench jobs keep failing"""


class BenchWorker:
    """Runs bench jobs, logging progress and isolating per-job failures"""

    def __init__(self, handler: Callable[[object], List[Dict]], threads: int = 1,
                 max_consecutive_errors: int = 5):
        self.handler = handler
        self.threads = max(1, threads)
        self.max_consecutive_errors = max_consecutive_errors
        self.worker_id = os.getenv(WORKER_ID_ENV_VAR, 'bench')
        self.completed = 0
        self.failed = 0

    def process_job(self, job: BenchJob) -> Optional[List[Dict]]:
        """Run a single job; returns its rows, or None when it failed"""
        try:
            logger.info(f"[{self.worker_id}] Processing {job.key}")
            rows = self.handler(job.payload)
            logger.info(f"[{self.worker_id}] Completed {job.key} ({len(rows)} rows)")
            return rows
        except Exception as e:
            logger.error(f"[{self.worker_id}] Failed {job.key}: {e}", exc_info=True)
            return None

    def _record(self, outcomes: Sequence[Tuple[BenchJob, Optional[List[Dict]]]]) -> List[Dict]:
        rows = []
        consecutive_errors = 0
        for job, result in outcomes:
            if result is None:
                self.failed += 1
                consecutive_errors += 1
                if consecutive_errors >= self.max_consecutive_errors:
                    logger.critical(f"[{self.worker_id}] Too many consecutive errors, stopping")
                    raise TooManyFailures(f"{consecutive_errors} consecutive bench jobs failed (last: {job.key})")
            else:
                self.completed += 1
                consecutive_errors = 0
                rows.extend(result)
        return rows

    def run(self, jobs: Sequence[BenchJob]) -> List[Dict]:
        """Process every job and return all rows in job-key order"""
        jobs = sorted(jobs, key=lambda j: j.key)
        logger.info(f"[{self.worker_id}] Bench run started: {len(jobs)} jobs on {self.threads} thread(s)")

        if self.threads == 1:
            outcomes = []
            consecutive = 0
            for job in jobs:
                result = self.process_job(job)
                outcomes.append((job, result))
                consecutive = consecutive + 1 if result is None else 0
                if consecutive >= self.max_consecutive_errors:
                    break
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                futures = [executor.submit(self.process_job, job) for job in jobs]
                outcomes = [(job, future.result()) for job, future in zip(jobs, futures)]

        rows = self._record(outcomes)
        logger.info(f"[{self.worker_id}] Bench run finished: {self.completed} completed, {self.failed} failed")
        return rows

    def summary(self) -> Dict[str, int]:
        return {'completed': self.completed, 'failed': self.failed}
