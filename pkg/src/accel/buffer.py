"""Level replay buffer with threshold insertion and rank/staleness prioritized sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from accel.core import Level, RegretScore, encode_level


@dataclass(frozen=True)
class BufferConfig:
    capacity: int = 4000
    temperature: float = 0.3
    staleness_coef: float = 0.5
    fill_ratio: float = 0.0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 <= self.staleness_coef <= 1:
            raise ValueError("staleness coefficient must lie in [0, 1]")
        if not 0 <= self.fill_ratio <= 1:
            raise ValueError("fill ratio must lie in [0, 1]")


@dataclass
class BufferEntry:
    level: Level
    score: RegretScore
    insert_time: int = 0
    last_replayed: Optional[int] = None
    metrics: dict = field(default_factory=dict)

    @property
    def staleness_anchor(self) -> int:
        return self.insert_time if self.last_replayed is None else self.last_replayed


class EmptyBufferError(LookupError):
    pass


class LevelBuffer:
    """Bounded set of scored levels.

    The clock advances once per ``sample`` call; staleness of an entry is the
    clock minus its last replay (or its insertion, if never replayed).
    """

    def __init__(self, config: BufferConfig):
        self.config = config
        self.entries: list[BufferEntry] = []
        self._index: dict[int, int] = {}
        self.clock = 0
        self.last_evicted: Optional[BufferEntry] = None
        self._cdf: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[BufferEntry]:
        return iter(self.entries)

    def __contains__(self, level_id: int) -> bool:
        return level_id in self._index

    def get(self, level_id: int) -> BufferEntry:
        try:
            return self.entries[self._index[level_id]]
        except KeyError:
            raise KeyError(f"level {level_id} is not in the buffer") from None

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.config.capacity

    def scores(self) -> np.ndarray:
        return np.array([e.score.value for e in self.entries], dtype=np.float64)

    def min_index(self) -> int:
        return int(np.argmin(self.scores()))

    def insert(self, entry: BufferEntry) -> bool:
        """Threshold insertion: accept under capacity, else only by beating the minimum.

        The evicted entry (if any) is left in ``last_evicted``.
        """
        if entry.level.id in self._index:
            raise ValueError(f"level {entry.level.id} is already in the buffer")
        self.last_evicted = None
        self._cdf = None
        entry.insert_time = self.clock
        if not self.full:
            self._index[entry.level.id] = len(self.entries)
            self.entries.append(entry)
            return True
        i = self.min_index()
        victim = self.entries[i]
        if not entry.score.value > victim.score.value:
            return False
        del self._index[victim.level.id]
        self.entries[i] = entry
        self._index[entry.level.id] = i
        self.last_evicted = victim
        return True

    def update_score(self, level_id: int, score: RegretScore) -> None:
        self.get(level_id).score = score
        self._cdf = None

    def ranks(self) -> np.ndarray:
        """1-based rank per entry, 1 = highest score; ties keep entry order."""
        order = np.argsort(-self.scores(), kind="stable")
        ranks = np.empty(len(order), dtype=np.int64)
        ranks[order] = np.arange(1, len(order) + 1)
        return ranks

    def distribution(self) -> np.ndarray:
        """Exact sampling probabilities, in entry order."""
        if not self.entries:
            raise EmptyBufferError("buffer is empty")
        cfg = self.config
        w = self.ranks().astype(np.float64) ** (-1.0 / cfg.temperature)
        p_score = w / w.sum()
        if cfg.staleness_coef == 0:
            return p_score
        stale = np.array([self.clock - e.staleness_anchor for e in self.entries], dtype=np.float64)
        total = stale.sum()
        p_stale = stale / total if total > 0 else np.full(len(stale), 1.0 / len(stale))
        return (1.0 - cfg.staleness_coef) * p_score + cfg.staleness_coef * p_stale

    def sample(self, rng: np.random.Generator, touch: bool = True) -> Level:
        """Draw a level from ``distribution()``.

        With ``touch`` (the default) the clock advances and the drawn entry's
        staleness resets; ``touch=False`` leaves the distribution unchanged.
        """
        if self._cdf is None:
            self._cdf = np.cumsum(self.distribution())
        cdf = self._cdf
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)
        if touch:
            self.clock += 1
            self.entries[i].last_replayed = self.clock
            self._cdf = None
        return self.entries[i].level

    def snapshot_lines(self) -> list[str]:
        return [
            f"{encode_level(e.level)}\t{e.score.value!r}\t{self.clock - e.staleness_anchor}"
            for e in self.entries
        ]
