# /superlab/utils/parallel.py

from multiprocessing import Pool
from typing import Callable, Iterable, TypeVar

from config import logger, PATH_CHUNK_SIZE

T = TypeVar("T")
R = TypeVar("R")


def chunk_indices(start: int, stop: int, chunk_size: int = PATH_CHUNK_SIZE) -> list[range]:
    """Fixed-size index chunks. The partition never depends on the worker count."""
    return [range(lo, min(lo + chunk_size, stop)) for lo in range(start, stop, chunk_size)]


def ordered_map(fn: Callable[[T], R], tasks: Iterable[T], workers: int = 1) -> list[R]:
    """Map fn over tasks and return the results in task order; a process pool when workers > 1."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    n_procs = min(workers, len(tasks))
    logger.debug(f"PARALLEL: {len(tasks)} tasks on {n_procs} worker processes.")
    with Pool(processes=n_procs) as pool:
        return pool.map(fn, tasks, chunksize=1)
