"""Command line: extract | synth-corpus | train | generate | eval | sweep-blocks | describe.

Every flag can also be given in a ``--config`` file of ``key = value`` lines
(dashes or underscores in keys). Flags on the command line win over the file.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import load_directory, make_synth_corpus, split, write_corpus
from .diffusion import SamplerConfig, TrainConfig
from .features import (
    EventFeature,
    extract_rms,
    read_feature,
    read_feature_csv,
    scale_gain,
    write_feature,
    write_feature_csv,
)
from .metrics import EvalConfig, evaluate_run
from .nn.gradcheck import NumericError
from .nn.params import load_checkpoint, save_checkpoint
from .nn.ops import ShapeError
from .pipeline import corpus_fingerprint, generate, sweep_blocks, train_model
from .unet import ModelConfig, UNet, describe, parse_config_values, parse_key_values
from .wavio import Waveform, read_wav, write_wav

log = logging.getLogger("eventfoley")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    checkpoint: str | None = None
    corpus_fingerprint: str | None = None
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# -- argument wiring -------------------------------------------------------------------


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _model_flags(p: argparse.ArgumentParser) -> None:
    d = ModelConfig()
    g = p.add_argument_group("model")
    g.add_argument("--sample-len", type=int, default=d.sample_len)
    g.add_argument("--sample-rate", type=int, default=d.sample_rate)
    g.add_argument("--channels", type=_int_list, default=d.channels)
    g.add_argument("--strides", type=_int_list, default=d.strides)
    g.add_argument("--kernel", type=int, default=d.kernel)
    g.add_argument("--bottleneck-hidden", type=int, default=d.bottleneck_hidden)
    g.add_argument("--class-embed-dim", type=int, default=d.class_embed_dim)
    g.add_argument("--sigma-embed-dim", type=int, default=d.sigma_embed_dim)
    g.add_argument("--embed-dim", type=int, default=d.embed_dim)
    g.add_argument("--cond-mode", choices=("none", "film", "tfilm", "bfilm"), default=d.cond_mode)
    g.add_argument("--n-blocks", type=int, default=d.n_blocks)
    g.add_argument("--temporal-hidden", type=int, default=d.temporal_hidden)
    g.add_argument("--temporal-placement", choices=("every_block", "latter_levels"), default=d.temporal_placement)
    g.add_argument("--window", type=int, default=d.feature_window, help="event-feature window W")
    g.add_argument("--hop", type=int, default=d.feature_hop, help="event-feature hop h")
    g.add_argument("--activation", choices=("silu", "tanh", "linear"), default=d.activation)
    g.add_argument("--class-count", type=int, default=d.class_count,
                   help="only used by describe; training takes it from the corpus")


def _train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--lr-decay", choices=("none", "cosine"), default=d.lr_decay)
    g.add_argument("--batch", type=int, default=d.batch_size)
    g.add_argument("--cond-drop-p", type=float, default=d.cond_drop_p)
    g.add_argument("--grad-clip", type=float, default=d.grad_clip)
    g.add_argument("--checkpoint-every", type=int, default=d.checkpoint_every)
    g.add_argument("--max-minutes", type=float, default=None, help="stop after the epoch that crosses this budget")
    g.add_argument("--val-fraction", type=float, default=0.05)


def _corpus_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("corpus")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--corpus", type=Path, help="folder-per-class directory of WAVs")
    src.add_argument("--synth", action="store_true", help="train on the built-in synthetic corpus")
    g.add_argument("--manifest", type=Path, help="CSV of path,class_name (relative to --corpus)")
    g.add_argument("--clips-per-class", type=int, default=200)


def _sampler_flags(p: argparse.ArgumentParser) -> None:
    d = SamplerConfig()
    g = p.add_argument_group("sampling")
    g.add_argument("--steps", type=int, default=d.steps)
    g.add_argument("--guidance", type=float, default=d.guidance)
    g.add_argument("--noise", choices=("iid", "brownian"), default=d.noise)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", type=Path, help="key = value file mirroring the flags")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="eventfoley", parents=[common],
                                     description="Temporal-event-guided Foley synthesis with waveform diffusion.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="RMS event feature of an audio file")
    p.add_argument("audio", type=Path)
    p.add_argument("--window", type=int, default=512)
    p.add_argument("--hop", type=int, default=128)
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "evf"), default="csv")
    p.add_argument("--output", type=Path, help="output file (default: <out>/<audio stem>.<format>)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth-corpus", parents=[common], help="write the synthetic toy corpus as WAVs")
    p.add_argument("--clips-per-class", type=int, default=200)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--sample-len", type=int, default=8000)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("train", parents=[common], help="train a model; writes model.ckpt, model.cfg, loss.csv")
    _corpus_flags(p)
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from <out>/train_state.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample clips for a class and an event condition")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--class", dest="class_name", help="class name (omit for the unconditional class)")
    cond = p.add_mutually_exclusive_group()
    cond.add_argument("--condition", type=Path, help="WAV, feature CSV or .evf file of the target event feature")
    cond.add_argument("--from-audio", type=Path,
                      help="any recording (e.g. a vocal imitation); trimmed or padded to the model length")
    p.add_argument("--gain", type=float, default=1.0, help="scale the event feature before conditioning")
    p.add_argument("--n", type=int, default=1, help="number of clips")
    _sampler_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", parents=[common], help="E-L1 (and FAD/IS from supplied files) of generated clips")
    p.add_argument("generated", type=Path)
    p.add_argument("--reference", type=Path,
                   help="reference directory or condition manifest (default: <generated>/generate_manifest.csv)")
    p.add_argument("--gen-embeddings", type=Path)
    p.add_argument("--ref-embeddings", type=Path)
    p.add_argument("--gen-probs", type=Path)
    p.add_argument("--window", type=int, default=512)
    p.add_argument("--hop", type=int, default=128)
    p.add_argument("--is-splits", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-blocks", parents=[common], help="train and score one model per block count")
    _corpus_flags(p)
    _model_flags(p)
    _train_flags(p)
    _sampler_flags(p)
    p.add_argument("--blocks", type=_int_list, default=(4, 8, 16, 32))
    p.add_argument("--n-eval", type=int, default=24, help="validation clips generated per model")
    p.add_argument("--timing-repeats", type=int, default=3)
    p.set_defaults(func=cmd_sweep_blocks)

    p = sub.add_parser("describe", parents=[common], help="architecture summary and parameter count")
    _model_flags(p)
    p.set_defaults(func=cmd_describe)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Turn ``--config`` entries into parser defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    values = parse_key_values(known.config.read_text())
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    all_dests = {a.dest for sp in subparsers.choices.values() for a in sp._actions}
    unknown = sorted(set(values) - all_dests - {"config"})
    if unknown:
        raise ValueError(f"{known.config}: unknown key(s) {', '.join(unknown)}")
    for sp in subparsers.choices.values():
        actions = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in values.items():
            action = actions.get(key)
            if action is None:
                continue
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    defaults[key] = action.type(value)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise ValueError(f"{known.config}: bad value for {key}: {exc}") from None
            else:
                defaults[key] = value
            if action.choices is not None and defaults[key] not in action.choices:
                raise ValueError(f"{known.config}: {key} must be one of {sorted(action.choices)}")
        sp.set_defaults(**defaults)


def _model_config(args, class_count: int | None = None) -> ModelConfig:
    return ModelConfig(
        sample_len=args.sample_len, sample_rate=args.sample_rate, channels=args.channels, strides=args.strides,
        kernel=args.kernel, bottleneck_hidden=args.bottleneck_hidden,
        class_count=class_count if class_count is not None else args.class_count,
        class_embed_dim=args.class_embed_dim, sigma_embed_dim=args.sigma_embed_dim, embed_dim=args.embed_dim,
        cond_mode=args.cond_mode, n_blocks=args.n_blocks, temporal_hidden=args.temporal_hidden,
        temporal_placement=args.temporal_placement, feature_window=args.window, feature_hop=args.hop,
        activation=args.activation, init_seed=args.seed)


def _train_config(args) -> TrainConfig:
    return TrainConfig(cond_drop_p=args.cond_drop_p, epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                       grad_clip=args.grad_clip, seed=args.seed, checkpoint_every=args.checkpoint_every,
                       lr_decay=args.lr_decay)


def _load_corpus(args):
    """Clips and class names from ``--corpus`` (or the synthetic corpus)."""
    if args.corpus is not None:
        load = load_directory(args.corpus, args.manifest, args.sample_rate, args.sample_len)
        if not load.clips:
            raise ValueError(f"no usable clips under {args.corpus}: " + "; ".join(load.errors + load.warnings))
        if load.errors:
            log.warning("%d file(s) skipped", len(load.errors))
        return load.clips, load.class_names
    clips = make_synth_corpus(args.clips_per_class, args.sample_rate, args.sample_len / args.sample_rate, args.seed)
    names = []
    for c in clips:
        if c.class_name not in names:
            names.append(c.class_name)
    return clips, names


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- subcommands ----------------------------------------------------------------------


def cmd_extract(args) -> int:
    feature = scale_gain(extract_rms(read_wav(args.audio), args.window, args.hop), args.gain)
    out = args.output or args.out / f"{args.audio.stem}.{args.format}"
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        write_feature_csv(feature, out)
    else:
        write_feature(feature, out)
    print(f"{out}: {feature.frame_count} frames (W={feature.window}, h={feature.hop}, gain={args.gain})")
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    clips = make_synth_corpus(args.clips_per_class, args.sample_rate, args.sample_len / args.sample_rate, args.seed)
    root = write_corpus(clips, args.out)
    print(f"wrote {len(clips)} clips to {root}")
    return EXIT_OK


def save_model(model: UNet, class_names, directory: Path) -> Path:
    """Weights to ``model.ckpt`` and the exact config (plus class names) to ``model.cfg``."""
    directory.mkdir(parents=True, exist_ok=True)
    ckpt = directory / "model.ckpt"
    save_checkpoint(model.store, ckpt)
    (directory / "model.cfg").write_text(model.cfg.to_text() + f"class_names = {','.join(class_names)}\n")
    return ckpt


def load_model(checkpoint: Path) -> tuple[UNet, list[str]]:
    cfg_path = checkpoint.with_suffix(".cfg")
    values = parse_key_values(cfg_path.read_text())
    names = [n for n in values.pop("class_names", "").split(",") if n]
    model = UNet(ModelConfig(**parse_config_values(ModelConfig, values)))
    load_checkpoint(model.store, checkpoint)
    return model, names


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    clips, names = _load_corpus(args)
    cfg = _model_config(args, class_count=len(names))
    tcfg = _train_config(args)
    train, val = split(clips, args.val_fraction, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_csv(args.out / "val.csv", ["source", "class_name"], [(c.source, c.class_name) for c in val])
    state = args.out / "train_state.ckpt"
    loss_path = args.out / "loss.csv"
    kept = []
    if args.resume and loss_path.exists():
        with open(loss_path, newline="") as fh:
            kept = [(int(r["epoch"]), r["loss"]) for r in csv.DictReader(fh)]
    log_fh = open(loss_path, "w", newline="")
    writer = csv.writer(log_fh)
    writer.writerow(["epoch", "loss"])
    resumed_at = 0
    if args.resume and state.exists():
        from .training import load_training_state

        resumed_at = load_training_state(state, UNet(cfg))
    writer.writerows(r for r in kept if r[0] <= resumed_at)

    def on_epoch(epoch, loss):
        writer.writerow([epoch, f"{loss:.8g}"])
        log_fh.flush()
        log.info("epoch %d/%d loss %.5f", epoch, tcfg.epochs, loss)

    max_s = None if args.max_minutes is None else 60.0 * args.max_minutes
    try:
        model, result = train_model(train, cfg, tcfg, checkpoint=state, resume=args.resume, max_seconds=max_s,
                                    on_epoch=on_epoch)
    finally:
        log_fh.close()
    ckpt = save_model(model, names, args.out)
    RunManifest("train", args.seed, {"model": asdict(cfg), "train": asdict(tcfg)}, str(ckpt),
                corpus_fingerprint(clips),
                {"final_loss": result.losses[-1] if result.losses else None, "epochs_done": result.epochs_done,
                 "params": model.param_count(), "train_clips": len(train), "val_clips": len(val)},
                {"train_seconds": result.seconds, "total_seconds": time.perf_counter() - t0}).write(
        args.out / "run.json")
    print(f"trained {result.epochs_done} epoch(s); checkpoint {ckpt}")
    return EXIT_OK


def _fit_to_length(w: Waveform, cfg: ModelConfig, path: Path) -> Waveform:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"{path}: {w.sample_rate} Hz audio, model expects {cfg.sample_rate} Hz")
    x = w.samples[: cfg.sample_len]
    if len(x) < cfg.sample_len:
        log.warning("%s: %d samples, zero-padding to %d", path, len(x), cfg.sample_len)
        x = np.concatenate([x, np.zeros(cfg.sample_len - len(x))])
    elif len(w.samples) > cfg.sample_len:
        log.warning("%s: %d samples, trimming to %d", path, len(w.samples), cfg.sample_len)
    return Waveform(x, w.sample_rate)


def _condition_feature(args, cfg: ModelConfig) -> EventFeature | None:
    if args.from_audio is not None:
        return extract_rms(_fit_to_length(read_wav(args.from_audio), cfg, args.from_audio),
                           cfg.feature_window, cfg.feature_hop)
    if args.condition is None:
        return None
    suffix = args.condition.suffix.lower()
    if suffix == ".wav":
        return extract_rms(read_wav(args.condition), cfg.feature_window, cfg.feature_hop)
    if suffix == ".csv":
        return read_feature_csv(args.condition, cfg.feature_window, cfg.feature_hop)
    return read_feature(args.condition)


def cmd_generate(args) -> int:
    model, names = load_model(args.checkpoint)
    cfg = model.cfg
    if args.class_name is None:
        class_id = -1
    elif args.class_name in names:
        class_id = names.index(args.class_name)
    else:
        raise ValueError(f"unknown class {args.class_name!r}; valid names: {', '.join(names)}")
    feature = _condition_feature(args, cfg)
    if feature is not None:
        if (feature.window, feature.hop, feature.frame_count) != (cfg.feature_window, cfg.feature_hop, cfg.frames):
            raise ValueError(f"condition has {feature.frame_count} frames (W={feature.window}, h={feature.hop}); "
                             f"model expects {cfg.frames} frames (W={cfg.feature_window}, h={cfg.feature_hop})")
        feature = scale_gain(feature, args.gain)
    sampler = SamplerConfig(args.steps, args.guidance, args.seed, args.noise)
    feats = None if feature is None else np.tile(feature.values, (args.n, 1))
    t0 = time.perf_counter()
    audio = generate(model, np.full(args.n, class_id), feats, sampler)
    seconds = time.perf_counter() - t0

    label = args.class_name or "unconditional"
    source = args.from_audio or args.condition
    stem = source.stem if source is not None else "free"
    out_dir = args.out / label
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    cond_rel = None
    if feature is not None:
        cond_rel = f"conditions/{stem}.evf"
        (args.out / "conditions").mkdir(exist_ok=True)
        write_feature(feature, args.out / cond_rel)
    for k, x in enumerate(audio):
        rel = f"{label}/{stem}_{k:03d}.wav"
        write_wav(Waveform(x, cfg.sample_rate), args.out / rel)
        rows.append((rel, label, cond_rel or ""))
    manifest = args.out / "generate_manifest.csv"
    existing = []
    if manifest.exists():
        with open(manifest, newline="") as fh:
            existing = [tuple(r.values()) for r in csv.DictReader(fh)]
    merged = {r[0]: r for r in existing}
    merged.update({r[0]: r for r in rows if r[2]})
    _write_csv(manifest, ["generated", "class_name", "condition"], [merged[k] for k in sorted(merged)])
    print(f"wrote {len(rows)} clip(s) to {out_dir} in {seconds:.1f} s")
    return EXIT_OK


def cmd_eval(args) -> int:
    reference = args.reference or args.generated / "generate_manifest.csv"
    if not reference.exists():
        raise FileNotFoundError(f"reference {reference} does not exist")
    report = evaluate_run(args.generated, reference, EvalConfig(args.window, args.hop, args.is_splits),
                          args.gen_embeddings, args.ref_embeddings, args.gen_probs)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "report.csv"
    report.to_csv(path)
    print(path.read_text(), end="")
    if report.missing:
        print(f"{len(report.missing)} item(s) missing or unreadable", file=sys.stderr)
    return EXIT_OK


def cmd_sweep_blocks(args) -> int:
    clips, names = _load_corpus(args)
    base = _model_config(args, class_count=len(names))
    too_many = [n for n in args.blocks if n < 1 or n > base.frames or n > min(base.level_lengths)]
    if too_many:
        raise ValueError(f"block counts {too_many} outside [1, {min(base.frames, min(base.level_lengths))}] "
                         f"for {base.frames} feature frames and level lengths {base.level_lengths}")
    train, val = split(clips, args.val_fraction, args.seed)
    val = val[: args.n_eval]
    tcfg = _train_config(args)
    sampler = SamplerConfig(args.steps, args.guidance, args.seed, args.noise)
    args.out.mkdir(parents=True, exist_ok=True)

    def keep(n, model, audio):
        save_model(model, names, args.out / f"N{n}")

    rows = sweep_blocks(train, val, base, tcfg, args.blocks, sampler, args.timing_repeats, on_model=keep)
    _write_csv(args.out / "sweep.csv", ["N", "E-L1", "inference_seconds", "params"],
               [(r.n_blocks, f"{r.e_l1:.8g}", f"{r.seconds_per_sample:.6f}", r.params) for r in rows])
    RunManifest("sweep-blocks", args.seed, {"model": asdict(base), "train": asdict(tcfg), "blocks": list(args.blocks)},
                None, corpus_fingerprint(clips), {"rows": [asdict(r) for r in rows]}).write(args.out / "run.json")
    print((args.out / "sweep.csv").read_text(), end="")
    return EXIT_OK


def cmd_describe(args) -> int:
    text, _ = describe(_model_config(args))
    print(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors already printed
        return EXIT_VALIDATION if exc.code else EXIT_OK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
