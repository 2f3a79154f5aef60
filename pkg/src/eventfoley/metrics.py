"""Objective metrics: event-envelope L1, Frechet distance on embeddings, Inception Score."""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import DEFAULT_HOP, DEFAULT_WINDOW, EventFeature, extract_rms, read_feature
from .nn.gradcheck import NumericError
from .wavio import read_wav

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"EMB1"
REPORT_COLUMNS = ("class", "E-L1", "FAD", "IS", "n_items", "n_missing")


def event_l1(target, generated) -> float:
    """Mean absolute difference between two event features of identical geometry."""
    if isinstance(target, EventFeature) and isinstance(generated, EventFeature):
        if not target.same_geometry(generated):
            raise ValueError(
                f"feature geometry mismatch: {target.frame_count} frames W={target.window} h={target.hop} vs "
                f"{generated.frame_count} frames W={generated.window} h={generated.hop}")
        a, b = target.values, generated.values
    else:
        a = getattr(target, "values", target)
        b = getattr(generated, "values", generated)
        a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"feature length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b), axis=-1)) if a.ndim == 1 else np.mean(np.abs(a - b), axis=-1)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(cov)
    lam = _clamp_eigs(lam)
    return (vec * np.sqrt(lam)) @ vec.T


def _clamp_eigs(lam: np.ndarray) -> np.ndarray:
    tol = 1e-8 * max(1.0, float(np.max(np.abs(lam))) if lam.size else 1.0)
    if np.any(lam < -tol):
        raise NumericError(f"covariance product is not PSD (min eigenvalue {lam.min():.3g})")
    return np.clip(lam, 0.0, None)


def frechet_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits (unbiased covariance) of two embedding sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("each embedding set needs at least 2 items")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    root_a = _psd_sqrt(cov_a)
    mid = root_a @ cov_b @ root_a
    lam = _clamp_eigs(np.linalg.eigvalsh(0.5 * (mid + mid.T)))
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sum(np.sqrt(lam)))
    return max(d, 0.0)


def inception_score(p: np.ndarray, splits: int = 1) -> float:
    """Mean over ``splits`` of ``exp(E_x KL(p(y|x) || p(y)))`` for a row-stochastic matrix."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability matrix must be 2-D, non-negative, with rows summing to 1")
    if not 1 <= splits <= p.shape[0]:
        raise ValueError(f"splits must lie in [1, {p.shape[0]}], got {splits}")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(np.exp(terms.sum(axis=1).mean()))
    return float(np.mean(scores))


def write_embeddings(matrix: np.ndarray, path) -> None:
    m = np.asarray(matrix, dtype="<f4")
    Path(path).write_bytes(EMBEDDING_MAGIC + struct.pack("<III", m.shape[0], m.shape[1], 0) + m.tobytes())


def read_embeddings(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: not an embedding file")
    items, dim, _ = struct.unpack("<III", data[4:16])
    m = np.frombuffer(data[16:], dtype="<f4")
    if m.size != items * dim:
        raise ValueError(f"{path}: {m.size} values, header promises {items}x{dim}")
    return m.reshape(items, dim).astype(np.float64)


def read_prob_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows])


@dataclass
class EvalConfig:
    window: int = DEFAULT_WINDOW
    hop: int = DEFAULT_HOP
    is_splits: int = 1


@dataclass
class ClassRow:
    name: str
    e_l1: float | None
    fad: float | None = None
    inception: float | None = None
    n_items: int = 0
    n_missing: int = 0


@dataclass
class EvalReport:
    rows: list[ClassRow] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    per_item: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> ClassRow:
        return self.rows[-1]

    def to_csv(self, path) -> None:
        def fmt(v):
            return "n/a" if v is None else f"{v:.8g}"

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r.name, fmt(r.e_l1), fmt(r.fad), fmt(r.inception), r.n_items, r.n_missing])


def read_report(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _condition_feature(path: Path, cfg: EvalConfig) -> EventFeature:
    if path.suffix.lower() == ".wav":
        return extract_rms(read_wav(path), cfg.window, cfg.hop)
    if path.suffix.lower() == ".csv":
        from .features import read_feature_csv
        return read_feature_csv(path, cfg.window, cfg.hop)
    return read_feature(path)


def _pairs_from_dirs(generated: Path, reference: Path):
    gens = {p.relative_to(generated).as_posix(): p for p in sorted(generated.rglob("*.wav"))}
    refs = {p.relative_to(reference).as_posix(): p for p in sorted(reference.rglob("*.wav"))}
    pairs, missing = [], []
    for rel in sorted(set(gens) | set(refs)):
        if rel in gens and rel in refs:
            cls = rel.split("/")[0] if "/" in rel else "all"
            pairs.append((rel, cls, gens[rel], refs[rel]))
        else:
            missing.append(rel)
    return pairs, missing


def _pairs_from_manifest(generated: Path, manifest: Path):
    """Manifest columns: ``generated,class_name,condition`` (paths relative to the manifest)."""
    base = manifest.parent
    pairs, missing = [], []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            g = generated / row["generated"]
            c = base / row["condition"]
            if g.exists() and c.exists():
                pairs.append((row["generated"], row["class_name"], g, c))
            else:
                missing.append(row["generated"])
    return pairs, missing


def _per_class(source, classes):
    """Resolve an optional embedding/probability source into ``{class or '__all__': path}``."""
    if source is None:
        return {}
    source = Path(source)
    if source.is_dir():
        return {c: p for c in classes for p in source.glob(f"{c}.*")}
    return {"__all__": source}


def evaluate_run(generated_dir, reference, cfg: EvalConfig | None = None, gen_embeddings=None,
                 ref_embeddings=None, gen_probs=None) -> EvalReport:
    """Compare generated clips with their targets, class by class.

    ``reference`` is a directory mirroring ``generated_dir`` (pairs matched by
    relative path, class = first path component) or a CSV manifest of
    ``generated,class_name,condition``. The mean row averages the per-class
    scores. Embedding/probability sources may be a single file (whole-run
    score) or a directory holding one ``<class>.*`` file per class.
    """
    cfg = cfg or EvalConfig()
    generated_dir = Path(generated_dir)
    reference = Path(reference)
    if reference.is_file():
        pairs, missing = _pairs_from_manifest(generated_dir, reference)
    else:
        pairs, missing = _pairs_from_dirs(generated_dir, reference)
    report = EvalReport(missing=missing)
    by_class: dict[str, list[float]] = {}
    for rel, cls, gen_path, cond_path in pairs:
        try:
            target = _condition_feature(cond_path, cfg)
            produced = extract_rms(read_wav(gen_path), cfg.window, cfg.hop)
            score = event_l1(target, produced)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", rel, exc)
            report.missing.append(rel)
            continue
        report.per_item[rel] = score
        by_class.setdefault(cls, []).append(score)
    if report.missing:
        log.warning("%d unmatched or unreadable item(s) skipped", len(report.missing))

    classes = sorted(by_class)
    ge = _per_class(gen_embeddings, classes)
    re_ = _per_class(ref_embeddings, classes)
    gp = _per_class(gen_probs, classes)

    def fad_for(key):
        if key in ge and key in re_:
            return frechet_distance(read_embeddings(ge[key]), read_embeddings(re_[key]))
        return None

    def is_for(key):
        if key in gp:
            p = read_prob_matrix(gp[key])
            return inception_score(p, min(cfg.is_splits, p.shape[0]))
        return None

    for cls in classes:
        scores = by_class[cls]
        report.rows.append(ClassRow(cls, float(np.mean(scores)), fad_for(cls), is_for(cls), len(scores)))

    def mean_of(values, whole):
        vals = [v for v in values if v is not None]
        if whole is not None:
            return whole
        return float(np.mean(vals)) if vals else None

    report.rows.append(ClassRow(
        "mean",
        float(np.mean([r.e_l1 for r in report.rows])) if report.rows else None,
        mean_of([r.fad for r in report.rows], fad_for("__all__")),
        mean_of([r.inception for r in report.rows], is_for("__all__")),
        sum(r.n_items for r in report.rows),
        len(report.missing),
    ))
    return report
