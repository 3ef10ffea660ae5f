"""Traffic source models.

Every source owns its RNG stream (split from the run seed at construction),
so the order in which sources are stepped can never change anyone's draws.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

UL = "ul"
DL = "dl"

_packet_ids = itertools.count()


def next_packet_id() -> int:
    """Fresh process-wide packet id (engine-created packets share the pool)."""
    return next(_packet_ids)


@dataclass
class Packet:
    packet_id: int
    ue_id: int
    direction: str
    bits: int
    arrival_ms: int
    budget_ms: int | None = None     # None = no delivery deadline
    remaining_bits: int = 0          # not yet handed to a transport block
    acked_bits: int = 0              # delivered in acknowledged blocks
    delivered_ms: int | None = None
    dropped_ms: int | None = None    # a carrying block exhausted its attempts
    violated_ms: int | None = None   # abandoned: budget unreachable

    def __post_init__(self):
        self.remaining_bits = self.bits

    @property
    def deadline_ms(self) -> int | None:
        if self.budget_ms is None:
            return None
        return self.arrival_ms + self.budget_ms


@dataclass(frozen=True)
class BurstyConfig:
    """Sparse reporting: one small packet per reading, hard minimum gap."""
    packet_bits: int = 1000
    min_interarrival_ms: float = 2500.0
    mean_interarrival_ms: float = 10000.0
    direction: str = UL

    def __post_init__(self):
        if self.mean_interarrival_ms <= self.min_interarrival_ms:
            raise ConfigError("mean inter-arrival must exceed the minimum gap")
        if self.packet_bits <= 0:
            raise ConfigError("packet_bits must be positive")
        if self.direction not in (UL, DL):
            raise ConfigError(f"direction must be ul or dl, got {self.direction!r}")


@dataclass(frozen=True)
class VoipConfig:
    """Two-way AMR-style voice: exponential talk/silence alternation, voice
    packets every 20 ms while talking, comfort noise (SID) every 160 ms from
    whichever end is silent."""
    voice_bits: int = 320
    voice_interval_ms: int = 20
    sid_bits: int = 120
    sid_interval_ms: int = 160
    mean_talk_ms: float = 2000.0
    mean_silence_ms: float = 2000.0
    budget_ms: int = 200

    def __post_init__(self):
        if min(self.voice_bits, self.sid_bits, self.voice_interval_ms,
               self.sid_interval_ms) <= 0:
            raise ConfigError("voip sizes and intervals must be positive")
        if self.mean_talk_ms <= 0 or self.mean_silence_ms <= 0:
            raise ConfigError("voip spurt means must be positive")


class BurstySource:
    def __init__(self, ue_id: int, cfg: BurstyConfig, rng: np.random.Generator):
        self.ue_id = ue_id
        self.cfg = cfg
        self.rng = rng
        self._next_ms = self._draw(0.0)

    def _draw(self, now: float) -> float:
        gap = self.cfg.min_interarrival_ms + self.rng.exponential(
            self.cfg.mean_interarrival_ms - self.cfg.min_interarrival_ms)
        return now + gap

    def peek_ms(self) -> float:
        return self._next_ms

    def pop_due(self, now_ms: int) -> list[Packet]:
        out = []
        while self._next_ms <= now_ms:
            out.append(Packet(next(_packet_ids), self.ue_id, self.cfg.direction,
                              self.cfg.packet_bits, int(self._next_ms)))
            self._next_ms = self._draw(self._next_ms)
        return out


class VoipSource:
    """Generates the device's own voice/SID uplink and the mirrored
    downlink of its (implicit) conversation partner.

    Time is tiled into alternating talk/silence spurts with exponential
    lengths.  Within a spurt [start, end) the UL emits at start + k*step
    while that stays inside the spurt (strict), step = 20 ms voice when
    talking, 160 ms SID when silent; the DL runs the complementary stream
    (partner silent while we talk and vice versa).
    """

    def __init__(self, ue_id: int, cfg: VoipConfig, rng: np.random.Generator):
        self.ue_id = ue_id
        self.cfg = cfg
        self.rng = rng
        self.talking = bool(rng.integers(0, 2))
        self.spurt_start_ms = 0.0
        self.spurt_end_ms = self._draw_end()
        self._ul_next = 0.0
        self._dl_next = 0.0

    def _draw_end(self) -> float:
        mean = self.cfg.mean_talk_ms if self.talking else self.cfg.mean_silence_ms
        return self.spurt_start_ms + float(self.rng.exponential(mean))

    def _steps(self) -> tuple[int, int, int, int]:
        c = self.cfg
        if self.talking:
            return c.voice_interval_ms, c.voice_bits, c.sid_interval_ms, c.sid_bits
        return c.sid_interval_ms, c.sid_bits, c.voice_interval_ms, c.voice_bits

    def peek_ms(self) -> float:
        return min(self._ul_next, self._dl_next, self.spurt_end_ms)

    def pop_due(self, now_ms: int) -> list[Packet]:
        out = []
        while True:
            nxt = min(self._ul_next, self._dl_next)
            if self.spurt_end_ms <= nxt:
                if self.spurt_end_ms > now_ms:
                    break
                self.spurt_start_ms = self.spurt_end_ms
                self.talking = not self.talking
                self.spurt_end_ms = self._draw_end()
                self._ul_next = self.spurt_start_ms
                self._dl_next = self.spurt_start_ms
                continue
            if nxt > now_ms:
                break
            ul_step, ul_bits, dl_step, dl_bits = self._steps()
            if self._ul_next <= self._dl_next and self._ul_next < self.spurt_end_ms:
                out.append(Packet(next(_packet_ids), self.ue_id, UL, ul_bits,
                                  int(self._ul_next), budget_ms=self.cfg.budget_ms))
                self._ul_next += ul_step
            elif self._dl_next < self.spurt_end_ms:
                out.append(Packet(next(_packet_ids), self.ue_id, DL, dl_bits,
                                  int(self._dl_next), budget_ms=self.cfg.budget_ms))
                self._dl_next += dl_step
        return out


class FullBufferSource:
    """Always-backlogged marker source; the scheduler keeps the queue
    topped up instead of popping timed arrivals."""

    def __init__(self, ue_id: int, direction: str = UL, block_bits: int = 1000):
        self.ue_id = ue_id
        self.direction = direction
        self.block_bits = block_bits

    def peek_ms(self) -> float:
        return math.inf

    def pop_due(self, now_ms: int) -> list[Packet]:
        return []
