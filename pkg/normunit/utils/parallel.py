# normunit/utils/parallel.py
import logging
from multiprocessing import Pool

from normunit.utils.validators import validate_workers

logger = logging.getLogger(__name__)


def parallel_map(fn, items, workers=1):
    """
    Order-preserving map, inline for one worker, else over a process pool.

    ``fn`` must be a picklable top-level callable and every item must carry
    its own seed, so results do not depend on the worker count.

    Args:
        fn: Function of one argument
        items: Iterable of arguments
        workers: Process count

    Returns:
        List of results in input order
    """
    items = list(items)
    workers = validate_workers(workers)
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    workers = min(workers, len(items))
    logger.info(f"Mapping {len(items)} items over {workers} workers")
    with Pool(workers) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers)))
