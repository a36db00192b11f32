"""Command-line entry point: ``hsipatch <synth|sample|train|eval|sweep|gradcheck>``.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 gradcheck failure.
Errors are printed to stderr as a single JSON object.
"""

import argparse
import json
import sys
from pathlib import Path

from .config import MODES, load_config, synth_spec_from_file
from .diagnostics import TOLERANCE, run_gradcheck
from .exceptions import ConfigurationError, InputError, SceneLoadError
from .metrics import report_json
from .patching import sample, split, write_manifest
from .pipeline import (
    format_sampling_table,
    jsonable,
    run_eval,
    run_sweep,
    run_train,
    sampling_summary,
    write_eval_outputs,
)
from .sceneio import load_scene, save_scene, synth_scene
from .schemes import SCHEMES

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer: {text}")
    return value


def _schemes(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in SCHEMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"schemes must be a comma list drawn from {SCHEMES}")
    return names


def _load_experiment(args):
    if args.config is None:
        raise CliError("--config is required for this command")
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out,
                              mode=getattr(args, "mode", None))


def cmd_synth(args):
    if args.config is None:
        raise CliError("synth needs --config pointing at a SynthSpec TOML file")
    spec = synth_spec_from_file(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out) if args.out else Path(spec.name)
    if args.out and (out.is_dir() or args.out.endswith("/")):
        out = out / spec.name
    scene, labels = synth_scene(spec)
    header = save_scene(scene, labels, out)
    print(json.dumps({"scene": header.as_posix(), "height": scene.height, "width": scene.width,
                      "bands": scene.bands, "class_count": scene.class_count}))


def cmd_sample(args):
    if args.scene is None:
        raise CliError("sample needs a scene path")
    mode = args.mode or "multi"
    scene, labels = load_scene(args.scene)
    patch_set = sample(scene, labels, mode)
    assignment = split(len(patch_set), args.seed) if args.seed is not None and len(patch_set) \
        else None
    if args.out:
        out = Path(args.out)
        manifest = out / "patches.json" if out.suffix != ".json" else out
        write_manifest(manifest, patch_set, args.scene, assignment)
    print(format_sampling_table(sampling_summary(patch_set), scene.name), end="")


def cmd_train(args):
    cfg = _load_experiment(args)
    if cfg.output_dir is None:
        raise CliError("no output directory: set [output].dir or pass --out")
    report = run_train(cfg)
    summary = {"out": cfg.output_dir.as_posix(), "config_hash": report["config_hash"],
               "test": report["metrics"]["test"]}
    print(json.dumps(jsonable(summary)))


def cmd_eval(args):
    if args.checkpoint is None or args.manifest is None:
        raise CliError("eval needs --checkpoint and --manifest")
    if args.mode is not None:
        raise CliError("eval reads the sampling mode from the manifest; drop --mode")
    report, class_names = run_eval(
        args.checkpoint, args.manifest, split_tag=args.split, uniform_only=args.filter_uniform,
        topk=args.topk, exclude_background=args.exclude_background, reference=args.reference,
    )
    if args.out:
        write_eval_outputs(report, class_names, args.out)
    print(report_json(report), end="")


def cmd_sweep(args):
    cfg = _load_experiment(args)
    if cfg.output_dir is None:
        raise CliError("no output directory: set [output].dir or pass --out")
    summary = run_sweep(cfg, args.schemes or list(SCHEMES))
    print((cfg.output_dir / "comparison.csv").read_text(encoding="utf-8"), end="")
    if summary["errors"]:
        for scheme, message in summary["errors"].items():
            print(json.dumps({"scheme": scheme, "error": message}), file=sys.stderr)
        raise CliError("one or more schemes failed", EXIT_RUNTIME)


def cmd_gradcheck(args):
    results, elapsed = run_gradcheck(seed=args.seed or 0)
    width = max(len(name) for name, _, _ in results)
    for name, err, ok in results:
        print(f"{name:{width}}  max_rel_err={err:.3e}  {'PASS' if ok else 'FAIL'}")
    failed = [name for name, _, ok in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks within {TOLERANCE:g} "
          f"in {elapsed:.2f}s")
    if failed:
        raise CliError(f"gradient check failed: {', '.join(failed)}", EXIT_GRADCHECK)


COMMANDS = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hsipatch",
        description="Hyperspectral patch classification: sample, train, evaluate, compare schemes.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML (synth: a SynthSpec TOML)")
    common.add_argument("--seed", type=_u64, help="overrides the config seed")
    common.add_argument("--out", help="output directory (or scene path for synth)")
    common.add_argument("--mode", choices=MODES, help="sampling mode")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic scene")

    p = sub.add_parser("sample", parents=[common], help="sample patches and print counts")
    p.add_argument("scene", nargs="?", help="scene header or base path")

    sub.add_parser("train", parents=[common], help="run one experiment")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", help="model base path or .manifest.json")
    p.add_argument("--manifest", help="patch manifest (patches.json)")
    p.add_argument("--split", choices=("train", "valid", "test", "all"),
                   help="manifest split to score (default: test when recorded)")
    p.add_argument("--filter-uniform", action="store_true", help="score uniform patches only")
    p.add_argument("--topk", action="store_true",
                   help="top-k extended evaluation of a single-label checkpoint")
    p.add_argument("--reference", help="multi-label checkpoint that sets k per patch for --topk")
    p.add_argument("--exclude-background", action="store_true",
                   help="drop the background class from multi-label scoring")

    p = sub.add_parser("sweep", parents=[common], help="train every scheme on one split")
    p.add_argument("--schemes", type=_schemes, help=f"comma list from {','.join(SCHEMES)}")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    return parser


def _fail(code, kind, message, **extra):
    print(json.dumps({"error": kind, "message": str(message), "exit_code": code, **extra}),
          file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        kind = {EXIT_GRADCHECK: "gradcheck", EXIT_RUNTIME: "runtime"}.get(exc.code, "validation")
        return _fail(exc.code, kind, exc)
    except (ConfigurationError, InputError) as exc:
        return _fail(EXIT_VALIDATION, "validation", exc, type=type(exc).__name__)
    except SceneLoadError as exc:
        return _fail(EXIT_RUNTIME, "load", exc, field=exc.field)
    except Exception as exc:
        return _fail(EXIT_RUNTIME, "runtime", exc, type=type(exc).__name__)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
