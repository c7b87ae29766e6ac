"""Order-preserving parallel map and deterministic seed substreams."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# keys that separate independent uses of the same master seed
STAGE1_TAG = 1
STAGE2_TAG = 2
BOOT_TAG = 3
SIM_NET_TAG = 4
SIM_DATA_TAG = 5


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("SEMFORGE_THREADS")
        threads = int(env) if env else 1
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int | None = 1) -> list[R]:
    """``list(map(fn, items))``, optionally on a thread pool; output order is input order."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(fn, items))


def substream_seed(master: int, *keys: int) -> int:
    """A 63-bit seed that depends only on ``(master, *keys)``."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))


def substream_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]))
