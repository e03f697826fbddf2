"""
Command-line entry point: ``textslider {train,apply,compose,sweep,gradcheck,inspect}``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 numerical abort.
Every command writes a run manifest (JSON) next to its output, or to
``--manifest``; commands without an output file print it to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .artifact import SliderArtifact
from .container import dumps_json
from .encoder import EncoderConfig, load_encoder
from .errors import ConfigurationError, ContainerError, ContractError, NumericalError
from .evaluation import FIVE_LEVELS, sweep
from .gradcheck import TOLERANCE, corrupted, gradcheck_toy
from .lora import compose
from .runtime import DEFAULT_GATE, ConditioningRequest, GateSchedule, condition, conditioning_bytes
from .tokenizer import Vocab
from .trainer import PromptSpec, TrainConfig, config_dict, train_slider, write_loss_csv

log = logging.getLogger("textslider")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def parse_slider_arg(text: str) -> tuple[str, float]:
    """``path:alpha`` -> (path, alpha); a bare path means alpha 1.0."""
    path, sep, alpha = text.rpartition(":")
    if not sep:
        return text, 1.0
    try:
        return path, float(alpha)
    except ValueError:
        raise ConfigurationError(f"--slider: cannot read multiplier from {text!r} (expected path:alpha)") from None


def _load_sliders(specs: list[str]) -> list[tuple[SliderArtifact, float]]:
    out = []
    for text in specs:
        path, alpha = parse_slider_arg(text)
        out.append((SliderArtifact.load(path), alpha))
    return out


def _manifest(args, resolved: dict, started: float, outputs: list[str]) -> None:
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "config": resolved,
        "inputs": {k: v for k, v in resolved.items() if k in ("spec", "encoder", "vocab", "slider", "config_path")},
        "outputs": outputs,
        "seed": resolved.get("seed", 0),
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True)
    target = args.manifest or (outputs[0] + ".manifest.json" if outputs else None)
    if target:
        Path(target).write_text(text + "\n", encoding="utf-8")
    else:
        print(text, file=sys.stderr)


def cmd_train(args) -> int:
    spec = PromptSpec.from_json(args.spec)
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        rank=args.rank,
        q_mode=args.q_mode,
        seed=args.seed,
        weight_decay=args.weight_decay,
        mask_pad=args.mask_pad,
        augment=args.augment,
    )
    encoders = [load_encoder(e) for e in args.encoder]
    vocab = Vocab.from_file(args.vocab)
    result = train_slider(encoders, vocab, spec, cfg)
    result.artifact.save(args.out)
    loss_csv = args.loss_csv or args.out + ".loss.csv"
    write_loss_csv(loss_csv, result.loss_history)
    print(f"trained {len(encoders)} encoder(s), loss {result.loss_history[0]:.6g} -> {result.final_loss:.6g}")
    return _done(args, {**config_dict(cfg), "spec": args.spec, "encoder": args.encoder, "vocab": args.vocab},
                 [args.out, loss_csv])


def cmd_apply(args) -> int:
    encoders = [load_encoder(e) for e in args.encoder]
    vocab = Vocab.from_file(args.vocab)
    request = ConditioningRequest(args.prompt, _load_sliders(args.slider), args.timestep)
    schedule = GateSchedule(args.gate)
    outputs = condition(request, encoders, vocab, schedule)
    Path(args.out).write_bytes(conditioning_bytes(outputs, request, encoders, schedule))
    return _done(args, {"prompt": args.prompt, "slider": args.slider, "timestep": args.timestep, "gate": args.gate,
                        "encoder": args.encoder, "vocab": args.vocab}, [args.out])


def cmd_compose(args) -> int:
    sliders = _load_sliders(args.slider)
    fps = sliders[0][0].encoder_fingerprints
    for s, _ in sliders:
        if s.encoder_fingerprints != fps:
            raise ConfigurationError(f"{s.name} targets encoder(s) {s.encoder_fingerprints}, expected {fps}")
    sets = [compose([s.adapter_sets[e] for s, _ in sliders], [a for _, a in sliders]) for e in range(len(fps))]
    header = {
        "composed_from": [{"name": s.name, "alpha": a, "rank": s.rank} for s, a in sliders],
        "rank": max(s.rank for s, _ in sliders),
    }
    SliderArtifact(sets, header).save(args.out)
    return _done(args, {"slider": args.slider}, [args.out])


def cmd_sweep(args) -> int:
    slider = SliderArtifact.load(args.slider)
    spec = PromptSpec.from_json(args.spec)
    encoders = [load_encoder(e) for e in args.encoder]
    vocab = Vocab.from_file(args.vocab)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else list(FIVE_LEVELS)
    report = sweep(slider, spec, alphas, encoders, vocab)
    report.write_csv(args.out)
    print(f"projection {report.projection}; monotone={report.monotone}")
    return _done(args, {"slider": args.slider, "spec": args.spec, "alphas": alphas, "encoder": args.encoder,
                        "vocab": args.vocab}, [args.out])


def cmd_gradcheck(args) -> int:
    config = EncoderConfig.from_json(args.config) if args.config else None
    if args.corrupt:
        with corrupted(args.corrupt):
            report = gradcheck_toy(args.seed, config, args.rank)
    else:
        report = gradcheck_toy(args.seed, config, args.rank)
    print(f"max relative error {report.max_error:.3e} (worst: {report.worst})")
    _done(args, {"seed": args.seed, "config_path": args.config, "rank": args.rank, "corrupt": args.corrupt}, [])
    if not report.passed(TOLERANCE):
        print(f"gradient check FAILED: {report.worst} has relative error {report.max_error:.3e} >= {TOLERANCE}",
              file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_inspect(args) -> int:
    slider = SliderArtifact.load(args.slider)
    print(dumps_json(slider.metadata()) if args.compact else json.dumps(slider.metadata(), indent=2, sort_keys=True))
    _done(args, {"slider": args.slider}, [])
    return EXIT_OK


def _done(args, resolved, outputs) -> int:
    _manifest(args, resolved, args.started, outputs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textslider", description="Train, apply and evaluate text sliders.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_encoder=True):
        p.add_argument("--manifest", help="where to write the run manifest")
        if with_encoder:
            p.add_argument("--encoder", "--encoders", action="append", required=True,
                           help="encoder weight file or init:<config.json>; repeat for dual-encoder sliders")
            p.add_argument("--vocab", required=True, help="vocab file (one token per line)")

    p = sub.add_parser("train", help="train a slider")
    common(p)
    p.add_argument("--spec", required=True, help="prompt spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--q-mode", choices=["sum", "mean"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--mask-pad", action="store_true", help="leave padding positions out of the tokenwise loss")
    p.add_argument("--augment", action="store_true", help="sample the trainee prompt from {target} + {[target, q]}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("apply", help="encode a prompt with sliders applied")
    common(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--slider", action="append", default=[], metavar="PATH:ALPHA",
                   help="slider file and multiplier, e.g. age.tsl:0.3; repeatable")
    p.add_argument("--timestep", type=int)
    p.add_argument("--gate", type=int, default=DEFAULT_GATE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("compose", help="merge several sliders into one artifact")
    common(p, with_encoder=False)
    p.add_argument("--slider", action="append", required=True, metavar="PATH:ALPHA")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("sweep", help="alpha sweep along the concept direction, as CSV")
    common(p)
    p.add_argument("--slider", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--alphas", help="comma-separated, ascending (default 0,0.1,0.2,0.3,0.4)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of slider gradients on a toy encoder")
    common(p, with_encoder=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="encoder config JSON (default: 2 layers, d_model 32, 4 heads)")
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--corrupt", metavar="OP", help="negative control: scale the backward rule of OP by 1.1")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print a slider header as JSON")
    common(p, with_encoder=False)
    p.add_argument("slider")
    p.add_argument("--compact", action="store_true")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    args.started = time.perf_counter()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ContractError, ContainerError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
