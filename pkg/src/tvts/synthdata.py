"""Procedural (video, timestamped transcript) pairs and their on-disk formats.

Each second of a clip carries one event: a coloured glyph (one of eight
shapes, designed on an 8x8 grid and drawn at 16x16) sliding in one of four
directions. The transcript says the shape
name a quarter second into the event and the motion name three quarters in.

Formats (all little-endian):

* frames file: ``b"TVF1"``, u32 ``n_frames, C, H, W``, then f32 row-major pixels
* transcript file: one ``"{a:.2f}\\t{word}"`` line per word
* manifest: ``id\\tframes_path\\ttranscript_path[\\tcaption]`` per line
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from tvts.errors import ConfigError, FormatError, ValidationError
from tvts.sampling import TranscriptTrack, segment_span

SHAPES = ("square", "circle", "triangle", "cross", "diamond", "ring", "bar", "dot")
MOTIONS = ("left", "right", "up", "down")
PROMPT_WORDS = ("a", "clip", "showing")
# (dx, dy) in pixels per unit of motion; y grows downwards
DIRECTIONS = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}
SPEED = 6.0          # pixels per second
LEAD = 2.0           # pixels the glyph starts ahead of the anchor each second
GLYPH = 16          # drawn size; bitmaps are designed on an 8x8 grid and upscaled
_BASE = 8
FRAMES_MAGIC = b"TVF1"
_HEADER = struct.Struct("<4s4I")

COLORS = np.array([
    [0.95, 0.20, 0.20],
    [0.20, 0.90, 0.25],
    [0.25, 0.35, 0.95],
    [0.95, 0.90, 0.20],
    [0.90, 0.25, 0.90],
    [0.20, 0.90, 0.90],
    [0.98, 0.60, 0.15],
    [0.97, 0.97, 0.97],
])


def _bitmaps() -> np.ndarray:
    r = np.arange(_BASE)
    yy, xx = np.meshgrid(r, r, indexing="ij")
    cy = cx = (_BASE - 1) / 2
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    maps = [
        np.ones((_BASE, _BASE)),                                        # square
        dist <= 3.6,                                                    # circle
        (yy >= 1) & (np.abs(xx - cx) <= (yy - 1) * 0.55 + 0.3),         # triangle
        (np.abs(yy - cy) <= 1) | (np.abs(xx - cx) <= 1),                # cross
        np.abs(yy - cy) + np.abs(xx - cx) <= 4,                         # diamond
        (dist <= 3.8) & (dist >= 2.2),                                  # ring
        (yy >= 2) & (yy <= 5),                                          # bar
        dist <= 1.8,                                                    # dot
    ]
    scale = np.ones((GLYPH // _BASE, GLYPH // _BASE), dtype=np.float32)
    return np.stack([np.kron(np.asarray(m, dtype=np.float32), scale) for m in maps])


BITMAPS = _bitmaps()


def vocabulary_words() -> list[str]:
    return list(SHAPES) + list(MOTIONS) + list(PROMPT_WORDS)


@dataclass
class EventScript:
    duration: int
    shapes: np.ndarray
    motions: np.ndarray

    def __post_init__(self):
        self.shapes = np.asarray(self.shapes, dtype=np.int64)
        self.motions = np.asarray(self.motions, dtype=np.int64)
        if self.shapes.shape != (self.duration,) or self.motions.shape != (self.duration,):
            raise ValidationError("script needs exactly one (shape, motion) event per second")

    def event(self, second: int) -> tuple[str, str]:
        return SHAPES[self.shapes[second]], MOTIONS[self.motions[second]]

    def center(self, t: float, H: int = 32, W: int = 32) -> tuple[float, float]:
        """Glyph centre (x, y) at time ``t``; the anchor resets every second."""
        s = min(int(np.floor(t)), self.duration - 1)
        dx, dy = DIRECTIONS[int(self.motions[s])]
        off = LEAD + SPEED * (t - s)
        half = GLYPH / 2
        x = float(np.clip(W / 2 + dx * off, half, W - half))
        y = float(np.clip(H / 2 + dy * off, half, H - half))
        return x, y

    def trajectory(self, fps: int, H: int = 32, W: int = 32) -> np.ndarray:
        n = self.duration * fps
        return np.array([self.center(f / fps, H, W) for f in range(n)])


def generate_script(duration: int, rng: np.random.Generator, K: int = 4, l: float = 5) -> EventScript:
    need = segment_span(K, l)
    if duration < need:
        raise ConfigError(f"duration {duration}s is below the {need}s required for K={K}, l={l}")
    return EventScript(int(duration), rng.integers(0, len(SHAPES), duration),
                       rng.integers(0, len(MOTIONS), duration))


def background(H: int, W: int, cell: int = 4) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(H) // cell, np.arange(W) // cell, indexing="ij")
    checker = np.where((yy + xx) % 2 == 0, 0.08, 0.14).astype(np.float32)
    return np.broadcast_to(checker, (3, H, W)).copy()


@dataclass
class RenderedClip:
    fps: int
    frames: np.ndarray   # [n_frames, 3, H, W] in [0, 1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def render(script: EventScript, fps: int = 2, H: int = 32, W: int = 32) -> RenderedClip:
    if H < GLYPH or W < GLYPH:
        raise ConfigError(f"frame {H}x{W} cannot hold an {GLYPH}x{GLYPH} glyph")
    bg = background(H, W)
    n = script.duration * fps
    frames = np.empty((n, 3, H, W), dtype=np.float32)
    for f in range(n):
        t = f / fps
        s = min(int(np.floor(t)), script.duration - 1)
        x, y = script.center(t, H, W)
        x0 = int(np.floor(x - GLYPH / 2 + 0.5))
        y0 = int(np.floor(y - GLYPH / 2 + 0.5))
        frame = bg.copy()
        shape = int(script.shapes[s])
        m = BITMAPS[shape].astype(bool)
        patch = frame[:, y0:y0 + GLYPH, x0:x0 + GLYPH]
        patch[:, m] = COLORS[shape][:, None]
        frames[f] = frame
    return RenderedClip(fps, frames)


def emit_transcript(script: EventScript) -> TranscriptTrack:
    words = []
    for s in range(script.duration):
        shape, motion = script.event(s)
        words.append((shape, s + 0.25))
        words.append((motion, s + 0.75))
    return TranscriptTrack(words, float(script.duration))


def frame_indices(times: Iterable[float], fps: int, n_frames: int) -> np.ndarray:
    """Nearest rendered frame for each continuous time."""
    idx = np.rint(np.asarray(list(times), dtype=float) * fps).astype(np.int64)
    return np.clip(idx, 0, n_frames - 1)


def dominant_shape(track: TranscriptTrack, times: Iterable[float], fps: int) -> int:
    """Most frequent shape among the events shown at ``times``; ties go to the lower id."""
    by_second = {int(np.floor(a)): SHAPES.index(w) for w, a in track.words if w in SHAPES}
    counts = np.zeros(len(SHAPES), dtype=np.int64)
    for t in times:
        s = int(np.floor(np.rint(t * fps) / fps))
        s = min(max(s, 0), int(track.duration) - 1)
        if s in by_second:
            counts[by_second[s]] += 1
    return int(np.argmax(counts))


# -- files ------------------------------------------------------------------------
def write_frames(path: str | Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise ValueError(f"frames must be [n, C, H, W], got {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FRAMES_MAGIC, *frames.shape))
        fh.write(frames.tobytes())


def read_frames(path: str | Path, mmap: bool = False) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(head)}")
    magic, n, c, h, w = _HEADER.unpack(head)
    if magic != FRAMES_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    expected = _HEADER.size + 4 * n * c * h * w
    size = path.stat().st_size
    if size != expected:
        raise FormatError(f"{path}: payload ends at byte offset {size}, expected {expected}")
    if mmap:
        return np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size, shape=(n, c, h, w))
    return np.fromfile(path, dtype="<f4", offset=_HEADER.size).reshape(n, c, h, w)


def write_transcript(path: str | Path, track: TranscriptTrack) -> None:
    lines = [f"{a:.2f}\t{w}" for w, a in track.words]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_transcript(path: str | Path, duration: float) -> TranscriptTrack:
    words = []
    offset = 0
    raw = Path(path).read_bytes()
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'time<TAB>word' at byte offset {offset}")
        try:
            a = float(parts[0])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad timestamp {parts[0]!r} at byte offset {offset}") from None
        words.append((parts[1], a))
        offset += len(line.encode("utf-8")) + 1
    return TranscriptTrack(words, duration)


@dataclass
class SampleRecord:
    sample_id: str
    frames_path: str
    transcript_path: str
    caption: str | None = None

    def to_line(self) -> str:
        cols = [self.sample_id, self.frames_path, self.transcript_path]
        if self.caption is not None:
            cols.append(self.caption)
        return "\t".join(cols)

    @classmethod
    def from_line(cls, line: str) -> "SampleRecord":
        cols = line.rstrip("\n").split("\t")
        if len(cols) not in (3, 4):
            raise FormatError(f"manifest line needs 3 or 4 tab-separated fields, got {len(cols)}")
        return cls(*cols)


def write_manifest(path: str | Path, records: Iterable[SampleRecord]) -> None:
    Path(path).write_text("".join(r.to_line() + "\n" for r in records), encoding="utf-8")


def read_manifest(path: str | Path) -> list[SampleRecord]:
    path = Path(path)
    root = path.parent
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = SampleRecord.from_line(line)
        rec.frames_path = str(root / rec.frames_path)
        rec.transcript_path = str(root / rec.transcript_path)
        out.append(rec)
    return out


@dataclass
class Sample:
    record: SampleRecord
    frames: np.ndarray
    fps: int
    transcript: TranscriptTrack
    caption: str | None = None

    @property
    def has_timestamps(self) -> bool:
        return self.caption is None

    def frames_at(self, times: Iterable[float]) -> np.ndarray:
        return np.asarray(self.frames[frame_indices(times, self.fps, self.frames.shape[0])])


def load_sample(record: SampleRecord, fps: int = 2, mmap: bool = True) -> Sample:
    """Materialise one record; caption-only samples expose ``caption``."""
    frames = read_frames(record.frames_path, mmap=mmap)
    duration = frames.shape[0] / fps
    track = read_transcript(record.transcript_path, duration)
    return Sample(record, frames, fps, track, record.caption)


def sample_seed(base_seed: int, sample_id: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), zlib.crc32(sample_id.encode("utf-8"))])


@dataclass
class DatasetSpec:
    n: int
    seed: int = 0
    duration: int = 23
    fps: int = 2
    H: int = 32
    W: int = 32
    K: int = 4
    l: float = 5
    caption_fraction: float = 0.1
    prefix: str = "s"
    extra: dict = field(default_factory=dict)


def generate_dataset(out_dir: str | Path, spec: DatasetSpec) -> list[SampleRecord]:
    """Write ``spec.n`` samples plus ``manifest.tsv`` under ``out_dir``."""
    if spec.duration < segment_span(spec.K, spec.l):
        raise ConfigError(f"duration {spec.duration}s is below the {segment_span(spec.K, spec.l)}s "
                          f"required for K={spec.K}, l={spec.l}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(spec.n):
        sid = f"{spec.prefix}{i:05d}"
        rng = np.random.default_rng(sample_seed(spec.seed, sid))
        script = generate_script(spec.duration, rng, spec.K, spec.l)
        clip = render(script, spec.fps, spec.H, spec.W)
        track = emit_transcript(script)
        caption = None
        if rng.random() < spec.caption_fraction:
            caption = " ".join(w for w, _ in track.words)
        write_frames(out_dir / f"{sid}.tvf", clip.frames)
        write_transcript(out_dir / f"{sid}.txt", track)
        records.append(SampleRecord(sid, f"{sid}.tvf", f"{sid}.txt", caption))
    write_manifest(out_dir / "manifest.tsv", records)
    return records
