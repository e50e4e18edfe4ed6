"""Replica sharding, seeded random streams and the worker pool.

Every Monte Carlo estimator splits its replicas into shards of a fixed size.
A shard draws from its own Generator, derived from the experiment seed, the
estimator's purpose and the shard index, so a shard's output does not depend on
how many workers run or in which order they finish.  Shard accumulators are
merged in index order.
"""

import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, List, Optional, TypeVar

import numpy as np

from .accumulators import EstimatorAccumulator, merge_all
from .exceptions import ConfigError

logger = logging.getLogger("mbpre")

THREADS_ENV = "MBPRE_THREADS"
DEFAULT_SHARD_SIZE = 10_000

T = TypeVar("T")


def purpose_key(purpose: str) -> int:
    """Stable integer tag for a named random stream."""
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """
    Independent Generator for (seed, purpose, indices).

    Equivalent to SeedSequence(seed, spawn_key=(purpose,)).spawn(...)[index]
    without having to know the number of children up front.
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(purpose_key(purpose),) + tuple(indices)
    )
    return np.random.default_rng(sequence)


@dataclass(frozen=True)
class Shard:
    """A contiguous block of replicas with its own random stream."""

    index: int
    start: int
    size: int
    seed: int
    purpose: str

    @property
    def spawn_key(self) -> tuple:
        return (purpose_key(self.purpose), self.index)

    def rng(self) -> np.random.Generator:
        return stream(self.seed, self.purpose, self.index)


def plan_shards(replicas: int, shard_size: int, seed: int, purpose: str) -> List[Shard]:
    """
    Cut replicas into shards of shard_size (the last one may be smaller).

    Raises:
        ConfigError: If replicas < 1 or shard_size < 1
    """
    if replicas < 1:
        raise ConfigError(f"replicas must be at least 1, got {replicas}")
    if shard_size < 1:
        raise ConfigError(f"shard_size must be at least 1, got {shard_size}")
    return [
        Shard(index=k, start=start, size=min(shard_size, replicas - start),
              seed=seed, purpose=purpose)
        for k, start in enumerate(range(0, replicas, shard_size))
    ]


def resolve_threads(threads: Optional[int] = None) -> int:
    """Worker count from the argument, else MBPRE_THREADS, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw.strip() == "":
            return 1
        try:
            threads = int(raw)
        except ValueError as e:
            raise ConfigError(
                f"{THREADS_ENV} must be an integer, got {raw!r}", original_exception=e
            )
    if threads < 1:
        raise ConfigError(f"threads must be at least 1, got {threads}")
    return threads


class ReplicaPool:
    """
    Runs shard functions in-process or on a process pool.

    Shard functions must be importable module-level callables taking a Shard
    plus keyword arguments, so they can be shipped to worker processes.

    Attributes:
        threads: Number of worker processes (1 runs everything in-process)
        shard_size: Replicas per shard
    """

    def __init__(
        self, threads: Optional[int] = None, shard_size: int = DEFAULT_SHARD_SIZE
    ) -> None:
        """
        Initialize the pool.

        Args:
            threads: Worker count; None falls back to MBPRE_THREADS, then 1
            shard_size: Replicas per shard. Changing it changes the random
                streams, the worker count never does.

        Raises:
            ConfigError: If threads or shard_size is less than 1
        """
        if shard_size < 1:
            raise ConfigError("shard_size must be at least 1")

        self.threads = resolve_threads(threads)
        self.shard_size = shard_size

        logger.debug(
            f"Created ReplicaPool with threads={self.threads}, "
            f"shard_size={self.shard_size}"
        )

    def map(self, fn: Callable[..., T], shards: List[Shard], **kwargs: Any) -> List[T]:
        """Apply fn to every shard; results come back in shard order."""
        task = partial(fn, **kwargs)
        if self.threads == 1 or len(shards) < 2:
            return [task(shard) for shard in shards]
        workers = min(self.threads, len(shards))
        logger.debug(f"Dispatching {len(shards)} shards to {workers} workers")
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(task, shards))

    def reduce(
        self,
        fn: Callable[..., EstimatorAccumulator],
        replicas: int,
        seed: int,
        purpose: str,
        **kwargs: Any,
    ) -> EstimatorAccumulator:
        """
        Run fn over all shards of replicas and merge the accumulators.

        Args:
            fn: Shard function returning an EstimatorAccumulator
            replicas: Total number of replicas
            seed: Experiment seed
            purpose: Name of the random stream family
            **kwargs: Passed through to fn

        Returns:
            The merged accumulator, with every shard's spawn key recorded
        """
        shards = plan_shards(replicas, self.shard_size, seed, purpose)
        parts = self.map(fn, shards, **kwargs)
        for shard, part in zip(shards, parts):
            part.seeds = [(int(seed),) + shard.spawn_key]
        merged = merge_all(parts)
        logger.debug(
            f"Merged {len(parts)} shards for {purpose} ({merged.count} replicas)"
        )
        return merged
