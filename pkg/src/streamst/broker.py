"""In-process topic broker with sticky per-session partitioning.

Every message of a session lands in the same partition of a topic, and each
partition is owned by exactly one worker of the consuming group, so session
state can live in that worker.
"""

from __future__ import annotations

import logging
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .core import Message, SessionId

logger = logging.getLogger(__name__)


class UnknownTopic(KeyError):
    pass


def assign_partition(session: SessionId, n_partitions: int) -> int:
    """Stable session -> partition mapping (CRC32, independent of PYTHONHASHSEED)."""
    if n_partitions < 1:
        raise ValueError("n_partitions must be >= 1")
    key = f"{type(session).__name__}:{session}".encode()
    return zlib.crc32(key) % n_partitions


class _Partition:
    def __init__(self) -> None:
        self.queue: deque[Message] = deque()
        self.lock = threading.Lock()
        self.high_water = 0


@dataclass
class ConsumerGroup:
    """Partition -> worker assignment for one topic.

    Partition ``p`` is owned by worker ``workers[p % len(workers)]``; the map
    only changes through :meth:`Broker.set_workers`.
    """

    topic: str
    workers: list[str]
    assignment: dict[int, str] = field(default_factory=dict)

    def partitions_of(self, worker: str) -> list[int]:
        return [p for p, w in sorted(self.assignment.items()) if w == worker]


class Topic:
    def __init__(self, name: str, partitions: int, soft_limit: int | None = None) -> None:
        if partitions < 1:
            raise ValueError("partitions must be >= 1")
        self.name = name
        self.partitions = [_Partition() for _ in range(partitions)]
        self.soft_limit = soft_limit
        self.soft_limit_hits = 0

    @property
    def n_partitions(self) -> int:
        return len(self.partitions)

    def depth(self) -> int:
        return sum(len(p.queue) for p in self.partitions)


class Broker:
    """Thread-safe in-process broker; each partition queue has its own lock."""

    def __init__(self) -> None:
        self.topics: dict[str, Topic] = {}
        self.groups: dict[str, ConsumerGroup] = {}
        self._listeners: dict[str, list[Callable[[str, int], None]]] = {}
        self._lock = threading.Lock()

    def create_topic(
        self,
        name: str,
        partitions: int = 1,
        workers: list[str] | None = None,
        soft_limit: int | None = None,
    ) -> Topic:
        with self._lock:
            if name in self.topics:
                return self.topics[name]
            if workers:
                partitions = max(partitions, len(workers))
            topic = Topic(name, partitions, soft_limit)
            self.topics[name] = topic
            self._listeners.setdefault(name, [])
            workers = workers or ["w0"]
            self.groups[name] = ConsumerGroup(
                name, list(workers),
                {p: workers[p % len(workers)] for p in range(partitions)},
            )
            return topic

    def has_topic(self, name: str) -> bool:
        return name in self.topics

    def set_workers(self, topic: str, workers: list[str]) -> None:
        group = self._group(topic)
        with self._lock:
            group.workers = list(workers)
            n = self.topics[topic].n_partitions
            group.assignment = {p: workers[p % len(workers)] for p in range(n)}

    def subscribe(self, topic: str, callback: Callable[[str, int], None]) -> None:
        """Register ``callback(worker, partition)``, called after each publish."""
        self._topic(topic)
        self._listeners[topic].append(callback)

    def publish(self, topic: str, message: Message) -> int:
        """Append ``message`` to its session's partition; returns the partition."""
        t = self._topic(topic)
        p = assign_partition(message.session, t.n_partitions)
        part = t.partitions[p]
        with part.lock:
            part.queue.append(message)
            depth = len(part.queue)
            part.high_water = max(part.high_water, depth)
        if t.soft_limit is not None and depth > t.soft_limit:
            t.soft_limit_hits += 1
        worker = self.groups[topic].assignment[p]
        for cb in self._listeners[topic]:
            cb(worker, p)
        return p

    def worker_for(self, topic: str, session: SessionId) -> str:
        t = self._topic(topic)
        return self.groups[topic].assignment[assign_partition(session, t.n_partitions)]

    def poll_pending(self, worker: str, topic: str) -> list[Message]:
        """Remove and return everything queued on ``worker``'s partitions."""
        group = self._group(topic)
        if worker not in group.workers:
            raise KeyError(f"{worker!r} is not a member of the group for {topic!r}")
        t = self.topics[topic]
        out: list[Message] = []
        for p in group.partitions_of(worker):
            part = t.partitions[p]
            with part.lock:
                out.extend(part.queue)
                part.queue.clear()
        return out

    def pending(self, worker: str, topic: str) -> int:
        group = self._group(topic)
        t = self.topics[topic]
        return sum(len(t.partitions[p].queue) for p in group.partitions_of(worker))

    def _topic(self, name: str) -> Topic:
        try:
            return self.topics[name]
        except KeyError:
            raise UnknownTopic(name) from None

    def _group(self, name: str) -> ConsumerGroup:
        self._topic(name)
        return self.groups[name]
