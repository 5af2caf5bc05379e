"""``droneguard`` command line: augment, train, detect, eval, bench.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
inputs), 2 runtime failure. Every failure prints one JSON line to stderr
(``{"error": ..., "type": ..., "message": ...}``) followed by human detail.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import traceback
from pathlib import Path

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
THREADS_ENV = "DRONEGUARD_THREADS"

log = logging.getLogger("droneguard")


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; we need 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="key = value config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override one config key (repeatable)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="droneguard", description="Acoustic drone detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("augment", parents=[common], help="mix every background with every drone event")
    p.add_argument("--backgrounds", required=True, metavar="DIR")
    p.add_argument("--events", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", parents=[common], help="train a gmm, cnn or rnn detector")
    p.add_argument("kind", choices=["gmm", "cnn", "rnn"])
    p.add_argument("--manifest", required=True, metavar="FILE")
    p.add_argument("--val-split", type=float, default=None)
    p.add_argument("--out", required=True, metavar="MODEL")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--history", metavar="CSV", help="write per-epoch loss and validation accuracy (cnn/rnn)")

    p = sub.add_parser("detect", parents=[common], help="write a detection timeline CSV for one clip")
    p.add_argument("--model", required=True, metavar="MODEL")
    p.add_argument("--input", required=True, metavar="WAV")
    p.add_argument("--out", required=True, metavar="CSV")

    p = sub.add_parser("eval", parents=[common], help="frame-level metrics over a manifest")
    p.add_argument("--model", required=True, metavar="MODEL")
    p.add_argument("--manifest", required=True, metavar="FILE")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--out", required=True, metavar="JSON")

    p = sub.add_parser("bench", parents=[common], help="time each stage on a 60 s clip")
    p.add_argument("--clip", required=True, metavar="WAV")
    p.add_argument("--models", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="JSON")
    p.add_argument("--reps", type=int, default=5)
    return parser


def _fail(kind: str, exc: BaseException, detail: str | None = None) -> None:
    line = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    if detail:
        print(detail, file=sys.stderr)


def _parse_overrides(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _require(path, kind="file"):
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise ValidationError(f"{kind} not found: {path}")
    return p


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _out(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _wavs(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")


# --- subcommands -----------------------------------------------------------

def cmd_augment(args, cfg) -> int:
    from .augment import build_manifest

    bgs = _wavs(_require(args.backgrounds, "dir"))
    evs = _wavs(_require(args.events, "dir"))
    if not bgs or not evs:
        raise ValidationError("need at least one background and one event WAV")
    pairs = [(b, e) for b in bgs for e in evs]
    manifest = build_manifest(pairs, cfg.augment_spec(), args.out, cfg.sample_rate_hz, cfg.config_hash())
    n_err = sum(1 for line in open(manifest) if '"status": "error"' in line)
    print(f"wrote {len(pairs) - n_err} clips ({n_err} failed) to {manifest}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    from .augment import read_manifest
    from .pipeline import save_model, train_gmm, train_nn

    rows = read_manifest(_require(args.manifest))
    if args.kind == "gmm":
        det = train_gmm(rows, cfg)
        save_model(det, args.out)
        print(f"saved gmm detector to {args.out} (theta={det.model.theta:.4f})")
        return EXIT_OK
    det, history = train_nn(args.kind, rows, cfg)
    save_model(det, args.out)
    if args.history:
        history.to_csv(_out(args.history))
    if history.interrupted:
        _fail("interrupted", KeyboardInterrupt("training interrupted"),
              f"best-so-far checkpoint (epoch {history.best_epoch}) saved to {args.out}")
        return EXIT_RUNTIME
    print(f"saved {args.kind} detector to {args.out} (best epoch {history.best_epoch}, "
          f"val acc {max(history.val_accuracy, default=0):.4f})")
    return EXIT_OK


def cmd_detect(args, cfg) -> int:
    from .audio_io import read_wav
    from .pipeline import load_model

    det = load_model(_require(args.model))
    clip = read_wav(_require(args.input))
    timeline = det.predict(clip)
    timeline.to_csv(_out(args.out), cfg.config_hash())
    print(f"wrote {len(timeline.spans)} spans to {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .augment import read_manifest
    from .evaluation import evaluate_run
    from .pipeline import load_model

    if args.reps < 1:
        raise ValidationError("--reps must be >= 1")
    det = load_model(_require(args.model))
    rows = read_manifest(_require(args.manifest))
    meta = {"config_hash": cfg.config_hash(), "model": det.kind, "model_config_hash": det.config_hash}
    result = evaluate_run(det, rows, args.reps, cfg.positive_label, cfg.seed, meta)
    _out(args.out).write_text(result.to_json())
    sys.stdout.write(result.to_text())
    return EXIT_OK


def cmd_bench(args, cfg) -> int:
    from .container import peek_magic
    from .evaluation import benchmark
    from .gmm import GMM_MAGIC
    from .neural.detector import NN_MAGIC
    from .pipeline import load_model

    clip = _require(args.clip)
    if args.reps < 5:
        raise ValidationError("--reps must be >= 5")
    models = {}
    for p in sorted(_require(args.models, "dir").iterdir()):
        if p.is_file() and peek_magic(p) in (GMM_MAGIC, NN_MAGIC):
            models[p.stem] = load_model(p)
    if not models:
        raise ValidationError(f"no model files in {args.models}")
    report = benchmark(clip, models, args.reps)
    d = report.to_dict()
    d["config_hash"] = cfg.config_hash()
    _out(args.out).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(report.to_text())
    return EXIT_OK


COMMANDS = {"augment": cmd_augment, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "bench": cmd_bench}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        _fail("validation", exc, "run with --help for usage")
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")

    from .config import ConfigError, load_config

    try:
        overrides = _parse_overrides(args.overrides)
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        if getattr(args, "val_split", None) is not None:
            overrides["val_split"] = args.val_split
        if args.config:
            _require(args.config)
        cfg = load_config(args.config, overrides)
        limit = _thread_limit()
    except (ValidationError, ConfigError) as exc:
        _fail("validation", exc)
        return EXIT_VALIDATION

    try:
        with limit:
            return COMMANDS[args.command](args, cfg)
    except (ValidationError, ConfigError) as exc:
        _fail("validation", exc)
        return EXIT_VALIDATION
    except KeyboardInterrupt as exc:
        _fail("interrupted", exc)
        return EXIT_RUNTIME
    except Exception as exc:
        _fail("runtime", exc, traceback.format_exc() if args.log_level == "DEBUG" else None)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
