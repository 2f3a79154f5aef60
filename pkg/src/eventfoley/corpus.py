"""Labeled clips: a synthetic Foley-like generator, directory loading, splitting and batching."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import DEFAULT_HOP, DEFAULT_WINDOW, frame_count, rms_frames
from .nn.params import random_source
from .wavio import Waveform, WavFormatError, read_wav, validate_training_format, write_wav

log = logging.getLogger(__name__)

ARCHETYPES = ("impulsive", "repeated", "stationary")
CARRIERS = ("noise", "sine", "chirp")
TOY_CLASSES = (("GunShot", "impulsive", "noise"), ("Footstep", "repeated", "sine"), ("Rain", "stationary", "noise"))


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic clip.

    ``events`` are onset times in seconds (peak times for ``stationary``
    swells), ``gains`` their peak envelope levels, ``decay`` the exponential
    decay constant (impulsive/repeated) or swell half-width (stationary).
    """

    archetype: str
    events: tuple[float, ...] = ()
    gains: tuple[float, ...] = ()
    decay: float = 0.08
    carrier: str = "noise"
    freq: float = 440.0
    seed: int = 0

    def key(self) -> str:
        return hashlib.sha1(repr(self).encode()).hexdigest()


@dataclass(frozen=True)
class LabeledClip:
    waveform: Waveform
    class_id: int
    class_name: str
    source: str

    @property
    def key(self) -> str:
        return self.source


def event_frame(time_s: float, sample_rate: int, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> int:
    """Frame whose window is centred closest to ``time_s``."""
    return int(round((time_s * sample_rate - window / 2) / hop))


def _envelope(spec: SynthSpec, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    env = np.zeros(n)
    gains = spec.gains or (0.5,) * len(spec.events)
    attack = 0.002
    for onset, gain in zip(spec.events, gains):
        if spec.archetype == "stationary":
            d = np.clip((t - onset) / spec.decay, -1.0, 1.0)
            shape = 0.5 * (1.0 + np.cos(np.pi * d))
        else:
            dt = t - onset
            shape = np.where(dt < 0, 0.0, np.minimum(dt / attack, 1.0) * np.exp(-np.maximum(dt - attack, 0) / spec.decay))
        env = np.maximum(env, gain * shape)
    return env


def _carrier(spec: SynthSpec, n: int, sample_rate: int, rng) -> np.ndarray:
    t = np.arange(n) / sample_rate
    if spec.carrier == "noise":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), n)
    if spec.carrier == "sine":
        return np.sqrt(2.0) * np.sin(2 * np.pi * spec.freq * t + rng.uniform(0, 2 * np.pi))
    if spec.carrier == "chirp":
        f1 = 2.0 * spec.freq
        phase = 2 * np.pi * (spec.freq * t + 0.5 * (f1 - spec.freq) * t * t / max(t[-1], 1e-9))
        return np.sqrt(2.0) * np.sin(phase)
    raise ValueError(f"unknown carrier {spec.carrier!r}")


def synth_waveform(spec: SynthSpec, sample_rate: int, duration: float) -> Waveform:
    if spec.archetype not in ARCHETYPES:
        raise ValueError(f"unknown archetype {spec.archetype!r}; expected one of {ARCHETYPES}")
    for e in spec.events:
        if not 0.0 <= e < duration:
            raise ValueError(f"event at {e} s lies outside the {duration} s clip")
    n = int(round(sample_rate * duration))
    rng = random_source(spec.seed)
    x = _envelope(spec, n, sample_rate) * _carrier(spec, n, sample_rate, rng)
    return Waveform(np.clip(x, -1.0, 1.0), sample_rate)


def synth_clip(spec: SynthSpec, sample_rate: int = 8000, duration: float = 1.0,
               class_id: int = 0, class_name: str | None = None) -> LabeledClip:
    w = synth_waveform(spec, sample_rate, duration)
    return LabeledClip(w, class_id, class_name or spec.archetype, f"synth:{spec.key()}")


def random_spec(archetype: str, carrier: str, duration: float, rng: np.random.Generator, seed: int,
                window_s: float = DEFAULT_WINDOW / 8000) -> SynthSpec:
    """Random event layout for one archetype, with events at least a window apart."""
    lo, hi = window_s, duration - 2 * window_s
    if archetype == "impulsive":
        count, decay, min_gap = int(rng.integers(1, 3)), float(rng.uniform(0.03, 0.12)), 0.3
    elif archetype == "repeated":
        count, decay, min_gap = int(rng.integers(2, 5)), float(rng.uniform(0.015, 0.04)), 0.15
    else:
        count, decay, min_gap = int(rng.integers(1, 3)), float(rng.uniform(0.08, 0.18)), 0.35
    events: list[float] = []
    for _ in range(50 * count):
        if len(events) == count:
            break
        e = float(rng.uniform(lo, hi))
        if all(abs(e - o) >= min_gap for o in events):
            events.append(e)
    events.sort()
    gains = tuple(float(g) for g in rng.uniform(0.2, 0.55, len(events)))
    freq = float(rng.uniform(200.0, 1200.0))
    return SynthSpec(archetype, tuple(round(e, 4) for e in events), gains, round(decay, 4), carrier,
                     round(freq, 2), seed)


def make_synth_corpus(clips_per_class: int = 200, sample_rate: int = 8000, duration: float = 1.0,
                      seed: int = 0, classes=TOY_CLASSES) -> list[LabeledClip]:
    """Deterministic toy corpus: ``clips_per_class`` clips of each ``(name, archetype, carrier)``."""
    rng = random_source(np.random.SeedSequence([seed, 11]))
    clips = []
    window_s = DEFAULT_WINDOW / sample_rate
    for cid, (name, archetype, carrier) in enumerate(classes):
        for k in range(clips_per_class):
            spec = random_spec(archetype, carrier, duration, rng, seed=int(rng.integers(2**31)), window_s=window_s)
            clips.append(synth_clip(spec, sample_rate, duration, cid, name))
    return clips


def write_corpus(clips: list[LabeledClip], root) -> Path:
    """Write clips as ``root/<class>/<nnnnn>.wav`` plus ``root/manifest.csv``."""
    root = Path(root)
    rows = []
    for i, clip in enumerate(clips):
        d = root / clip.class_name
        d.mkdir(parents=True, exist_ok=True)
        p = d / f"{i:05d}.wav"
        write_wav(clip.waveform, p)
        rows.append((p.relative_to(root).as_posix(), clip.class_name))
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "class_name"])
        w.writerows(rows)
    return root


@dataclass
class CorpusLoad:
    clips: list[LabeledClip] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)


def load_directory(root, manifest=None, expected_rate: int | None = None,
                   expected_len: int | None = None) -> CorpusLoad:
    """Load ``root/<class>/*.wav`` (or the rows of a ``path,class_name`` manifest).

    Classes are the sorted folder (or manifest) names; files load in
    lexicographic order. Undecodable or mis-formatted files are listed in
    ``errors`` and skipped.
    """
    root = Path(root)
    out = CorpusLoad()
    entries: list[tuple[Path, str]] = []
    if manifest is not None:
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append((root / row["path"], row["class_name"]))
        names = sorted({c for _, c in entries})
    else:
        names = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
        for name in names:
            files = sorted((root / name).glob("*.wav"))
            if not files:
                out.warnings.append(f"class {name!r} has no WAV files")
            entries.extend((f, name) for f in files)
    if not entries:
        out.warnings.append(f"no audio found under {root}")
    out.class_names = names
    ids = {n: i for i, n in enumerate(names)}
    for path, name in sorted(entries, key=lambda e: (e[1], e[0].as_posix())):
        try:
            w = read_wav(path)
            if expected_rate is not None and expected_len is not None:
                validate_training_format(w, expected_rate, expected_len)
        except (OSError, ValueError, WavFormatError) as exc:
            out.errors.append(f"{path}: {exc}")
            continue
        out.clips.append(LabeledClip(w, ids[name], name, str(path)))
    for msg in out.warnings + out.errors:
        log.warning(msg)
    return out


def split(clips: list[LabeledClip], val_fraction: float, seed: int):
    """Stratified, seeded train/validation partition; returns ``(train, val)``."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = random_source(np.random.SeedSequence([seed, 13]))
    by_class: dict[int, list[LabeledClip]] = {}
    for c in clips:
        by_class.setdefault(c.class_id, []).append(c)
    train, val = [], []
    for cid in sorted(by_class):
        items = by_class[cid]
        if len(items) < 2:
            log.warning("class %d has %d item(s); keeping all for training", cid, len(items))
            train.extend(items)
            continue
        order = rng.permutation(len(items))
        n_val = min(max(int(round(len(items) * val_fraction)), 1), len(items) - 1)
        val.extend(items[i] for i in sorted(order[:n_val]))
        train.extend(items[i] for i in sorted(order[n_val:]))
    return train, val


class FeatureCache:
    """RMS features keyed by ``(clip key, window, hop)``, computed on first use."""

    def __init__(self, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP):
        self.window = window
        self.hop = hop
        self._store: dict[tuple[str, int, int], np.ndarray] = {}

    def __call__(self, clip: LabeledClip) -> np.ndarray:
        key = (clip.key, self.window, self.hop)
        if key not in self._store:
            self._store[key] = rms_frames(clip.waveform.samples, self.window, self.hop)
        return self._store[key]

    def __len__(self):
        return len(self._store)

    def frames(self, n_samples: int) -> int:
        return frame_count(n_samples, self.window, self.hop)


def batches(clips: list[LabeledClip], batch_size: int, rng: np.random.Generator, cache: FeatureCache | None = None):
    """Yield shuffled ``(x0 [B, L], class_id [B], feature [B, frames])``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if cache is None:
        cache = FeatureCache()
    order = rng.permutation(len(clips))
    for start in range(0, len(clips), batch_size):
        chunk = [clips[i] for i in order[start:start + batch_size]]
        x0 = np.stack([c.waveform.samples for c in chunk])
        cls = np.array([c.class_id for c in chunk])
        feat = np.stack([cache(c) for c in chunk])
        yield x0, cls, feat
