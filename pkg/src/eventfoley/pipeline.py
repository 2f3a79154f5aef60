"""Composite steps shared by the command line and the acceptance experiments.

Each function is a thin composition of the library modules: train a model on
a list of clips, generate clips for given conditions, score them with E-L1,
and run the block-count sweep.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from .corpus import FeatureCache, LabeledClip, batches
from .diffusion import SamplerConfig, TrainConfig, sample
from .features import rms_frames
from .metrics import event_l1
from .training import FitResult, fit
from .unet import ModelConfig, UNet

log = logging.getLogger(__name__)

# largest value a 16-bit PCM file can hold, so "as written" audio is what a WAV round trip returns
PCM_MAX = 32767 / 32768


def corpus_fingerprint(clips: list[LabeledClip]) -> str:
    h = hashlib.sha256()
    for c in sorted(clips, key=lambda c: (c.class_name, c.source)):
        h.update(f"{c.class_name}\0{c.source}\0{c.waveform.sample_rate}\0".encode())
        h.update(np.ascontiguousarray(c.waveform.samples, dtype="<f8").tobytes())
    return h.hexdigest()


def as_written(x: np.ndarray) -> np.ndarray:
    """Clamp generated audio the way :func:`eventfoley.wavio.write_wav` does."""
    return np.clip(x, -1.0, PCM_MAX)


def train_model(clips: list[LabeledClip], model_cfg: ModelConfig, train_cfg: TrainConfig, checkpoint=None,
                resume: bool = False, max_seconds: float | None = None, on_epoch=None) -> tuple[UNet, FitResult]:
    model = UNet(model_cfg)
    cache = FeatureCache(model_cfg.feature_window, model_cfg.feature_hop)
    result = fit(model, lambda rng: batches(clips, train_cfg.batch_size, rng, cache), train_cfg,
                 checkpoint=checkpoint, resume=resume, max_seconds=max_seconds, on_epoch=on_epoch)
    return model, result


def condition_arrays(clips: list[LabeledClip], cfg: ModelConfig):
    """``(class_ids [B], features [B, frames])`` taken from reference clips."""
    cls = np.array([c.class_id for c in clips])
    feats = np.stack([rms_frames(c.waveform.samples, cfg.feature_window, cfg.feature_hop) for c in clips])
    return cls, feats


def generate(model: UNet, class_ids, features, sampler_cfg: SamplerConfig, batch_size: int = 32) -> np.ndarray:
    """Sample one clip per condition row, in chunks of ``batch_size``; returns clamped audio."""
    features = None if features is None else np.asarray(features)
    n = len(class_ids) if class_ids is not None else len(features)
    out = []
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        cfg = SamplerConfig(sampler_cfg.steps, sampler_cfg.guidance, sampler_cfg.seed + start, sampler_cfg.noise)
        out.append(sample(model, None if class_ids is None else np.asarray(class_ids)[sl],
                          None if features is None else features[sl], cfg,
                          n=min(batch_size, n - start)))
    return as_written(np.concatenate(out))


def feature_l1(features: np.ndarray, audio: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Per-item E-L1 between conditioning features and the features of generated audio."""
    return np.atleast_1d(event_l1(features, rms_frames(audio, cfg.feature_window, cfg.feature_hop)))


def time_per_sample(model: UNet, class_ids, features, sampler_cfg: SamplerConfig, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall-clock seconds to generate one clip (batch of one)."""
    best = float("inf")
    for r in range(repeats):
        t0 = time.perf_counter()
        sample(model, np.asarray(class_ids)[:1], np.asarray(features)[:1], sampler_cfg, n=1)
        best = min(best, time.perf_counter() - t0)
    return best


@dataclass
class SweepRow:
    n_blocks: int
    e_l1: float
    seconds_per_sample: float
    params: int


def sweep_blocks(train_clips, eval_clips, base_cfg: ModelConfig, train_cfg: TrainConfig, blocks,
                 sampler_cfg: SamplerConfig, timing_repeats: int = 3, on_model=None) -> list[SweepRow]:
    """Train one model per block count with shared seeds and score it on ``eval_clips``.

    ``on_model(n_blocks, model, audio)`` is called after each model is scored,
    which lets callers keep checkpoints or reuse the trained models.
    """
    rows = []
    for n in blocks:
        cfg = base_cfg.replace(n_blocks=int(n))
        log.info("sweep: training N=%d", n)
        model, _ = train_model(train_clips, cfg, train_cfg)
        cls, feats = condition_arrays(eval_clips, cfg)
        audio = generate(model, cls, feats, sampler_cfg)
        score = float(np.mean(feature_l1(feats, audio, cfg)))
        secs = time_per_sample(model, cls, feats, sampler_cfg, timing_repeats)
        rows.append(SweepRow(int(n), score, secs, model.param_count()))
        log.info("sweep: N=%d E-L1=%.5f %.3f s/sample", n, score, secs)
        if on_model is not None:
            on_model(int(n), model, audio)
    return rows
