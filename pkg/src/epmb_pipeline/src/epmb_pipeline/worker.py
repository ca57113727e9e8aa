"""Worker pool shared by the parallel stages of the pipeline."""

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from types import TracebackType
from typing import Self, TypeVar

from epmb_pipeline.config import bench_config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    """Ordered parallel map over a thread pool.

    Results always come back in input order, so reductions over them do not depend
    on the number of threads. A pool of one thread runs everything inline.
    """

    def __init__(self, threads: int | None = None) -> None:
        self.threads = max(1, threads if threads is not None else bench_config.threads)
        self._executor: ThreadPoolExecutor | None = None

    def __enter__(self) -> Self:
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="epmb")
        return self

    def __exit__(
        self, exc_type: type[BaseException] | None, exc: BaseException | None, tb: TracebackType | None
    ) -> None:
        self.shutdown()

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` to every item and return the results in input order."""
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(item) for item in items]
        if self._executor is None:
            with ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="epmb") as executor:
                return list(executor.map(fn, items))
        return list(self._executor.map(fn, items))


def default_pool(pool: WorkerPool | None) -> WorkerPool:
    """Return ``pool``, or a pool sized from the settings."""
    return pool if pool is not None else WorkerPool()
