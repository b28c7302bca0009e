"""Stochastic inputs for one training sample.

Tube masks over patch positions, chronologically spaced transcript segments
with a shuffle, and TSN-style frame times over the segments' span. All
functions are pure given their numpy ``Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tvts.errors import ConfigError, SampleError, ValidationError


@dataclass(frozen=True)
class TubeMask:
    masked_positions: tuple[int, ...]
    rho: float
    N: int
    T: int

    @property
    def visible_positions(self) -> np.ndarray:
        keep = np.ones(self.N, dtype=bool)
        keep[list(self.masked_positions)] = False
        return np.flatnonzero(keep)

    @property
    def n_visible(self) -> int:
        """Visible spatial positions per frame."""
        return self.N - len(self.masked_positions)

    @property
    def n_visible_tokens(self) -> int:
        """Visible non-[CLS] tokens across the clip."""
        return self.T * self.n_visible

    def frame_mask(self, frame: int) -> np.ndarray:
        """Boolean [N] array, True where the patch of ``frame`` is dropped."""
        if not 0 <= frame < self.T:
            raise IndexError(frame)
        out = np.zeros(self.N, dtype=bool)
        out[list(self.masked_positions)] = True
        return out


def masked_count(N: int, rho: float) -> int:
    # Python's round() is round-half-to-even
    return int(round(rho * N))


def sample_tube_mask(N: int, T: int, rho: float, rng: np.random.Generator) -> TubeMask:
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1), got {rho}")
    n_mask = masked_count(N, rho)
    if n_mask >= N:
        raise ConfigError(f"mask ratio {rho} masks all {N} positions")
    picked = rng.choice(N, size=n_mask, replace=False) if n_mask else np.empty(0, dtype=int)
    return TubeMask(tuple(sorted(int(i) for i in picked)), float(rho), N, T)


def no_mask(N: int, T: int) -> TubeMask:
    return TubeMask((), 0.0, N, T)


@dataclass
class TranscriptTrack:
    words: list[tuple[str, float]]
    duration: float

    def __post_init__(self):
        prev = -np.inf
        for i, (_, a) in enumerate(self.words):
            if a < prev:
                raise ValidationError(f"timestamps decrease at word {i}: {a} < {prev}")
            if not 0.0 <= a <= self.duration:
                raise ValidationError(f"timestamp {a} of word {i} outside [0, {self.duration}]")
            prev = a

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def times(self) -> np.ndarray:
        return np.array([a for _, a in self.words], dtype=float)


def segment_span(K: int, l: float) -> float:
    """Seconds covered from the first window start to the last window end."""
    return K * (l + 1) - 1


def window_starts(L_start: float, K: int, l: float) -> np.ndarray:
    return L_start + np.arange(K) * (l + 1)


@dataclass
class ShuffledSegments:
    K: int
    l: float
    L_start: float
    segments: list[list[str]]
    # order[i] is the 1-based chronological rank of shuffled slot i
    order: tuple[int, ...]
    chronological: list[list[str]] = field(repr=False, default_factory=list)

    @property
    def targets(self) -> np.ndarray:
        """0-based chronological class per shuffled slot."""
        return np.asarray(self.order, dtype=np.int64) - 1

    @property
    def starts(self) -> np.ndarray:
        return window_starts(self.L_start, self.K, self.l)

    @property
    def interval(self) -> tuple[float, float]:
        return self.L_start, self.L_start + segment_span(self.K, self.l)


def shuffle_permutation(K: int, rng: np.random.Generator | None) -> np.ndarray:
    """Uniform permutation of ``range(K)``; ``rng=None`` gives the identity."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if rng is None:
        return np.arange(K)
    return rng.permutation(K)


def segment_words(track: TranscriptTrack, start: float, l: float) -> list[str]:
    """Words whose timestamps fall in the closed window ``[start, start + l]``."""
    return [w for w, a in track.words if start <= a <= start + l]


def sample_segments(track: TranscriptTrack, K: int, l: float, rng: np.random.Generator | None,
                    L_start: float | None = None, shuffle: bool = True) -> ShuffledSegments:
    """Cut ``K`` windows of ``l`` seconds, 1 s apart, and shuffle them.

    ``L_start`` is drawn uniformly from its feasible range unless given.
    """
    span = segment_span(K, l)
    slack = track.duration - span
    if slack < 0:
        raise SampleError(f"transcript of {track.duration}s is shorter than the {span}s needed "
                          f"for K={K}, l={l}")
    if L_start is None:
        L_start = float(rng.uniform(0.0, slack)) if (rng is not None and slack > 0) else 0.0
    elif not 0.0 <= L_start <= slack:
        raise SampleError(f"L_start={L_start} outside [0, {slack}]")
    chrono = [segment_words(track, s, l) for s in window_starts(L_start, K, l)]
    perm = shuffle_permutation(K, rng if shuffle else None)
    return ShuffledSegments(
        K=K, l=l, L_start=float(L_start),
        segments=[chrono[j] for j in perm],
        order=tuple(int(j) + 1 for j in perm),
        chronological=chrono,
    )


@dataclass
class FramePlan:
    T: int
    interval: tuple[float, float]
    times: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        lo, hi = self.interval
        return lo + (hi - lo) * np.arange(self.T + 1) / self.T


def tsn_frames(interval: tuple[float, float], T: int, rng: np.random.Generator | None) -> FramePlan:
    """One time per equal sub-interval; ``rng=None`` picks the midpoints."""
    lo, hi = float(interval[0]), float(interval[1])
    if not hi > lo:
        raise ConfigError(f"frame interval must have positive length, got [{lo}, {hi}]")
    width = (hi - lo) / T
    offsets = np.full(T, 0.5) if rng is None else rng.uniform(0.0, 1.0, size=T)
    times = lo + (np.arange(T) + offsets) * width
    return FramePlan(T, (lo, hi), times)
