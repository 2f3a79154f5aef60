"""Frame-level RMS event feature, its power variant, gain scaling and block pooling."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .wavio import Waveform

DEFAULT_WINDOW = 512
DEFAULT_HOP = 128
FEATURE_MAGIC = b"EVF1"


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class EventFeature:
    values: np.ndarray
    window: int = DEFAULT_WINDOW
    hop: int = DEFAULT_HOP
    source_rate: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"feature values must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("feature values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.frame_count

    def same_geometry(self, other: "EventFeature") -> bool:
        return (self.frame_count, self.window, self.hop) == (other.frame_count, other.window, other.hop)


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """Number of windows lying fully inside ``n_samples`` samples."""
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def rms_frames(x: np.ndarray, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> np.ndarray:
    """RMS of ``window``-sample frames taken every ``hop`` samples along the last axis.

    Works on any leading batch shape. Frame ``i`` covers samples
    ``[i*hop, i*hop + window)``; the tail that does not fill a window is dropped.
    """
    if window < 1 or hop < 1:
        raise ValueError(f"window and hop must be >= 1, got W={window}, h={hop}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < window:
        raise SignalTooShortError(f"signal of {x.shape[-1]} samples is shorter than window {window}")
    frames = sliding_window_view(x * x, window, axis=-1)[..., ::hop, :]
    return np.sqrt(frames.mean(axis=-1))


def extract_rms(w: Waveform, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> EventFeature:
    return EventFeature(rms_frames(w.samples, window, hop), window, hop, w.sample_rate)


def extract_power(w: Waveform, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> EventFeature:
    rms = rms_frames(w.samples, window, hop)
    return EventFeature(rms * rms, window, hop, w.sample_rate)


def scale_gain(f: EventFeature, gain: float) -> EventFeature:
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    return replace(f, values=f.values * gain)


def pad_to_blocks(length: int, n_blocks: int) -> np.ndarray:
    """Index map that right-pads ``length`` to a multiple of ``n_blocks`` by repeating the last index."""
    if n_blocks < 1:
        raise ValueError(f"block count must be >= 1, got {n_blocks}")
    if n_blocks > length:
        raise ValueError(f"block count {n_blocks} exceeds length {length}")
    padded = -(-length // n_blocks) * n_blocks
    return np.minimum(np.arange(padded), length - 1)


def block_pool(f: EventFeature | np.ndarray, n_blocks: int) -> np.ndarray:
    """Max of each of ``n_blocks`` equal contiguous blocks (last value repeated as padding)."""
    values = f.values if isinstance(f, EventFeature) else np.asarray(f, dtype=np.float64)
    idx = pad_to_blocks(values.shape[-1], n_blocks)
    blocks = values[..., idx].reshape(values.shape[:-1] + (n_blocks, -1))
    return blocks.max(axis=-1)


def write_feature_csv(f: EventFeature, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value"])
        for v in f.values:
            writer.writerow([repr(float(v))])


def read_feature_csv(path, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> EventFeature:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and rows[0][0] == "value":
        rows = rows[1:]
    return EventFeature(np.array([float(r[0]) for r in rows if r]), window, hop)


def encode_feature(f: EventFeature) -> bytes:
    header = FEATURE_MAGIC + struct.pack("<III", f.window, f.hop, f.frame_count)
    return header + f.values.astype("<f4").tobytes()


def decode_feature(data: bytes) -> EventFeature:
    if len(data) < 16 or data[:4] != FEATURE_MAGIC:
        raise ValueError("not an event-feature file (bad magic)")
    window, hop, count = struct.unpack("<III", data[4:16])
    body = data[16:]
    if len(body) != 4 * count:
        raise ValueError(f"feature file holds {len(body)} bytes, header promises {4 * count}")
    return EventFeature(np.frombuffer(body, dtype="<f4").astype(np.float64), window, hop)


def write_feature(f: EventFeature, path) -> None:
    Path(path).write_bytes(encode_feature(f))


def read_feature(path) -> EventFeature:
    return decode_feature(Path(path).read_bytes())
