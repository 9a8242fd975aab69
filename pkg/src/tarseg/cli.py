"""Command-line interface.

Subcommands: ``refine``, ``pipeline``, ``eval``, ``bench``, ``gradcheck``,
``synth``, ``init-weights``.  Every subcommand accepts ``--config FILE`` plus a
flag per configuration key (``--iters1 2``, ``--kernel-radius 1``, ...); flags
win over the file.  The effective configuration is echoed in every report
(``threads`` excepted, so reports do not depend on it).

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .contrastive import gradcheck
from .corpus import read_corpus, write_corpus
from .imageio import read_features, read_gray, read_rgb, write_json, write_mask, write_soft
from .pipeline import file_tag, run_pipeline
from .pyramid import ConfigError, check_input_size, extract_pyramid, fuse
from .recognizer import load_symbol_table
from .synth import EvalError, bench_table, check_scene, eval_table, make_corpus, run_bench, run_eval
from .tar import binarize, normalize, two_stage_refine
from .tensor import F32, resize_bilinear
from .weights import MissingWeight, ModelWeights

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3


class CheckFailed(Exception):
    def __init__(self, failures):
        super().__init__("; ".join(failures))
        self.failures = list(failures)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None


def _config_from_args(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    if getattr(args, "size", None) is not None:
        overrides["height"], overrides["width"] = args.size
    return load_config(args.config, overrides)


def _emit(args, report: dict, text: str) -> None:
    if args.json:
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def _weights(path, cfg: RunConfig) -> tuple[ModelWeights, str]:
    if path is not None:
        return ModelWeights.load(path), str(path)
    w = ModelWeights.random(cfg.channels, cfg.hidden, cfg.att, cfg.embed, cfg.num_classes,
                            cfg.seg_channels, cfg.proj_dim, seed=cfg.rng_seed)
    return w, f"random(seed={cfg.rng_seed})"


def _stage1_guidance(args, cfg: RunConfig, image) -> np.ndarray:
    h, w = image.shape[1:]
    if args.features is not None:
        feat = read_features(args.features)
        return feat if feat.shape[1:] == (h, w) else resize_bilinear(feat, h, w)
    check_input_size(h, w)
    weights, _ = _weights(args.weights, cfg)
    pyr = fuse(extract_pyramid(image, weights.backbone), weights.fusion)
    return resize_bilinear(pyr.fused[cfg.guidance_level], h, w)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_refine(args, cfg: RunConfig) -> int:
    image = read_rgb(args.image)
    seed = read_gray(args.seed)
    if seed.shape != image.shape[1:]:
        raise ConfigError(f"seed shape {seed.shape} does not match image {image.shape[1:]}")
    rc = cfg.refine_config()
    seed = normalize(seed).astype(F32)
    feat = _stage1_guidance(args, cfg, image) if rc.iters_stage1 else image
    soft = two_stage_refine(seed, feat, image, rc)
    mask = binarize(soft, rc.binarize_threshold)
    write_mask(args.out, mask)
    if args.soft_out:
        write_soft(args.soft_out, soft)
    report = {
        "command": "refine",
        "config": cfg.report_dict(),
        "image": str(args.image),
        "seed": str(args.seed),
        "out": str(args.out),
        "input_size": list(seed.shape),
        "foreground_pixels": int(mask.sum()),
    }
    _emit(args, report, f"wrote {args.out} ({int(mask.sum())} foreground pixels)")
    return EXIT_OK


def cmd_pipeline(args, cfg: RunConfig) -> int:
    image = read_rgb(args.image)
    weights, source = _weights(args.weights, cfg)
    table = load_symbol_table(args.symbols) if args.symbols else None
    result = run_pipeline(image, weights, cfg.max_steps, cfg.refine_config(), cfg.ensemble, cfg.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    summary = result.summary(table) if table else result.summary()
    for inst, rec in zip(result.instances, summary["instances"]):
        tag = file_tag(inst.symbol, table) if table else file_tag(inst.symbol)
        if args.emit in ("masks", "both"):
            rec["mask"] = f"{stem}_{inst.index}_{tag}.png"
            write_mask(out / rec["mask"], inst.mask)
        if args.emit in ("pseudo", "both"):
            rec["pseudo"] = f"{stem}_{inst.index}_{tag}_pseudo.png"
            write_mask(out / rec["pseudo"], inst.pseudo)
    report = {"command": "pipeline", "config": cfg.report_dict(), "image": stem, "weights": source,
              "emit": args.emit, **summary}
    trace_path = out / f"{stem}_trace.json"
    write_json(trace_path, report)
    chars = "".join(summary["chars"]) or "(none)"
    _emit(args, report, f"{len(result.instances)} instances [{chars}]; trace in {trace_path}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    if args.manifest:
        corpus = read_corpus(args.manifest)
        source = str(args.manifest)
    else:
        corpus = make_corpus(cfg.scenes, cfg.rng_seed, cfg.scene_config())
        source = f"synthetic(n={cfg.scenes}, rng_seed={cfg.rng_seed})"
    failures = []
    scene_cfg = cfg.scene_config()
    for i, scene in enumerate(corpus):
        failures += [f"scene {i}: {p}" for p in check_scene(scene, scene_cfg)]
    result = run_eval(corpus, cfg.eval_config(), cfg.threads)
    s = result.summary
    report = {
        "command": "eval",
        "config": cfg.report_dict(),
        "corpus": source,
        **result.to_dict(timings=args.timings),
        "comparisons": {
            "two_stage_above_seed": s["fiou_two_stage"]["mean"] > s["fiou_seed"]["mean"],
            "two_stage_at_least_rgb_only": s["fiou_two_stage"]["mean"] >= s["fiou_rgb_only"]["mean"],
        },
        "checks": {"generator_invariants": not failures},
        "failures": failures,
    }
    if args.out:
        write_json(args.out, report)
    _emit(args, report, eval_table(result))
    if failures:
        raise CheckFailed(failures)
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    report = run_bench((cfg.height, cfg.width), (cfg.iters1, cfg.iters2), cfg.repeats, cfg.channels,
                       cfg.meanfield_iters, cfg.meanfield_repeats, cfg.rng_seed, cfg.refine_config(),
                       cfg.meanfield_config())
    report = {"command": "bench", "config": cfg.report_dict(), **report}
    _emit(args, report, bench_table(report))
    if not report["checks"]["tar_faster_than_meanfield"]:
        raise CheckFailed([f"TAR median {report['tar_ms']:.3f} ms is not below the mean-field "
                           f"median {report['meanfield_ms']:.3f} ms"])
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    res = gradcheck(cfg.batches, cfg.rng_seed, cfg.tau, cfg.include_positive)
    bad = [r for r in res["per_batch"] if r["max_rel_err"] > cfg.grad_tolerance]
    report = {"command": "gradcheck", "config": cfg.report_dict(), "tolerance": cfg.grad_tolerance,
              "passed": not bad, **res}
    _emit(args, report, f"max relative error {res['max_rel_err']:.3e} over {res['batches']} batches "
                        f"(tolerance {cfg.grad_tolerance:g})")
    if bad:
        raise CheckFailed([f"batch {r['batch']}: relative error {r['max_rel_err']:.3e}" for r in bad])
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    corpus = make_corpus(cfg.scenes, cfg.rng_seed, cfg.scene_config())
    path = write_corpus(corpus, args.out_dir)
    report = {"command": "synth", "config": cfg.report_dict(), "manifest": str(path), "scenes": len(corpus),
              "instances": sum(len(s.instances) for s in corpus)}
    _emit(args, report, f"wrote {len(corpus)} scenes to {path}")
    return EXIT_OK


def cmd_init_weights(args, cfg: RunConfig) -> int:
    weights, source = _weights(None, cfg)
    weights.save(args.out)
    report = {"command": "init-weights", "config": cfg.report_dict(), "out": str(args.out), "weights": source,
              "entries": len(weights.to_dict())}
    _emit(args, report, f"wrote {report['entries']} tensors to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="key=value configuration file")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    group = p.add_argument_group("configuration keys (override --config)")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                           metavar=str(f.type).upper(), help=f"default: {f.default}")
    group.add_argument("--size", type=_parse_size, metavar="HxW", help="shorthand for --height/--width")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="tarseg", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", parents=[common], help="two-stage TAR refinement of one seed map")
    p.add_argument("--image", required=True, help="RGB image (PNG/PGM/TSR)")
    p.add_argument("--seed", required=True, help="seed soft label (grayscale image or TSR)")
    p.add_argument("--out", required=True, help="binary mask output (PNG or PGM)")
    p.add_argument("--features", help="stage-one guidance tensor [C,H,W] (TSR)")
    p.add_argument("--weights", help="weight archive for stage-one guidance")
    p.add_argument("--soft-out", help="also write the refined soft label")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("pipeline", parents=[common], help="full inference on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", help="weight archive (default: seeded random weights)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--emit", choices=("masks", "pseudo", "both"), default="both")
    p.add_argument("--symbols", help="symbol table, one entry per line")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", parents=[common], help="refinement accuracy on a synthetic corpus")
    p.add_argument("--manifest", help="corpus manifest (default: generate from --rng-seed)")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="TAR against the mean-field comparator")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", parents=[common], help="contrastive gradients against finite differences")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus and manifest")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-weights", parents=[common], help="write a seeded random weight archive")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return args.func(args, cfg)
    except CheckFailed as exc:
        for line in exc.failures:
            print(f"check failed: {line}", file=sys.stderr)
        return EXIT_CHECK
    except EvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, MissingWeight) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
