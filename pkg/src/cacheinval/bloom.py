"""Fixed-configuration bloom filters plus the analytic false-positive model.

All filters that are compared against each other (query-side and
update-side) must share one :class:`BloomConfig`, so containment reduces
to a bitwise test. Bit positions come from a double-hashing scheme:
``position_i = (h1 + i * h2) mod m_bits`` with two 64-bit mixes of the key.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable

from .exceptions import ConfigMismatch

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    """splitmix64 finalizer; full-avalanche 64-bit mix."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class BloomConfig:
    """Shared filter parameters; a mismatch makes containment meaningless."""

    m_bits: int = 128
    k_hashes: int = 9
    seed: int = 0x5CA1AB1E
    keys_per_filter: int = 10
    max_filters_per_query: int = 64

    def __post_init__(self):
        if self.m_bits <= 0 or self.m_bits % 64 != 0:
            raise ValueError("m_bits must be a positive multiple of 64")
        if self.k_hashes < 1:
            raise ValueError("k_hashes must be >= 1")
        if self.keys_per_filter < 1:
            raise ValueError("keys_per_filter must be >= 1")

    def fingerprint(self) -> tuple:
        return (self.m_bits, self.k_hashes, self.seed)

    def key_mask(self, key: int) -> int:
        """Bit pattern the key sets: k positions via double hashing."""
        h1 = _mix64((key & _MASK64) ^ self.seed)
        h2 = _mix64(h1 ^ 0xD6E8FEB86659FD93) | 1
        m = self.m_bits
        bits = 0
        pos = h1
        for _ in range(self.k_hashes):
            bits |= 1 << (pos % m)
            pos += h2
        return bits

    @staticmethod
    def with_optimal_k(m_bits: int, n_keys: int, **kwargs) -> "BloomConfig":
        return BloomConfig(m_bits=m_bits, k_hashes=optimal_k(m_bits, n_keys),
                           keys_per_filter=n_keys, **kwargs)


class BloomFilter:
    """Bit array plus insert count; bits held in one Python int."""

    __slots__ = ("config", "bits", "count")

    def __init__(self, config: BloomConfig, bits: int = 0, count: int = 0):
        self.config = config
        self.bits = bits
        self.count = count

    def insert(self, key: int) -> None:
        self.bits |= self.config.key_mask(key)
        self.count += 1

    def contains(self, key: int) -> bool:
        mask = self.config.key_mask(key)
        return self.bits & mask == mask

    def __eq__(self, other):
        return (
            isinstance(other, BloomFilter)
            and self.config.fingerprint() == other.config.fingerprint()
            and self.bits == other.bits
            and self.count == other.count
        )

    def __repr__(self):
        return f"BloomFilter(count={self.count}, popcount={bin(self.bits).count('1')})"

    def to_bytes(self) -> bytes:
        """(m_bits, k, seed, count, little-endian bit words)."""
        cfg = self.config
        words = cfg.m_bits // 64
        head = struct.pack("<IIQI", cfg.m_bits, cfg.k_hashes, cfg.seed, self.count)
        return head + self.bits.to_bytes(words * 8, "little")

    @staticmethod
    def from_bytes(raw: bytes, keys_per_filter: int = 10) -> "BloomFilter":
        m_bits, k, seed, count = struct.unpack_from("<IIQI", raw)
        cfg = BloomConfig(m_bits=m_bits, k_hashes=k, seed=seed,
                          keys_per_filter=keys_per_filter)
        bits = int.from_bytes(raw[20:20 + m_bits // 8], "little")
        return BloomFilter(cfg, bits, count)


def bf_insert(f: BloomFilter, key: int) -> None:
    f.insert(key)


def bf_contains_filter(haystack: BloomFilter, needle: BloomFilter) -> bool:
    """True iff every bit set in the needle is set in the haystack."""
    if haystack.config.fingerprint() != needle.config.fingerprint():
        raise ConfigMismatch(
            f"haystack {haystack.config.fingerprint()} vs needle {needle.config.fingerprint()}"
        )
    return haystack.bits & needle.bits == needle.bits


def fp_rate(m: int, k: int, n: int) -> float:
    """Analytic false-positive probability (1 - e^(-k*n/m))^k."""
    if m < 1 or k < 1 or n < 1:
        raise ValueError("m, k, n must all be >= 1")
    return (1.0 - math.exp(-k * n / m)) ** k


def optimal_k(m: int, n: int) -> int:
    """Hash count minimizing fp_rate for m bits and n keys, clamped >= 1."""
    return max(1, round(math.log(2) * m / n))


def segmented_build(keys: Iterable[int], cfg: BloomConfig) -> list[BloomFilter]:
    """Pack keys into filters of at most ``keys_per_filter`` in arrival order.

    Once ``max_filters_per_query`` filters exist, remaining keys overflow
    into the last filter: bounded space at the price of its fp rate.
    """
    filters: list[BloomFilter] = []
    current: BloomFilter | None = None
    for key in keys:
        if current is None or (
            current.count >= cfg.keys_per_filter
            and len(filters) < cfg.max_filters_per_query
        ):
            current = BloomFilter(cfg)
            filters.append(current)
        current.insert(key)
    return filters
