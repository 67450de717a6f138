"""Command-line interface.

Subcommands mirror the pipeline stages::

    octpad synth       generate a labeled synthetic corpus
    octpad preprocess  denoise + dilate + threshold one scan to a mask
    octpad patches     extract patches from a scan given its mask
    octpad train       train the patch classifier from a manifest
    octpad score       score every scan in a manifest with a trained model
    octpad fixate      evidence heatmap for one patch
    octpad eval        metrics from a scores CSV
    octpad xval        end-to-end k-fold cross-validation

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from octpad import config as cfgmod
from octpad import evaluation, fixations, pipeline, synth
from octpad.cnn.model import CnnModel
from octpad.cnn.train import train
from octpad.errors import OctpadError
from octpad.imagecore import load_scan, parse_manifest, save_image
from octpad.patches import extract_patches, find_candidates, select_candidates


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="octpad", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config file (flags override it)")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-bonafide", type=int, default=600)
    p.add_argument("--n-pa", type=int, default=300)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--materials", type=str, default=None,
                   help="comma-separated material tags (default: built-in 8)")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--speckle-sigma", type=float, default=None)
    p.add_argument("--duct-count", type=int, default=None)
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    add_common(p)

    p = sub.add_parser("preprocess", help="scan -> binary depth-profile mask")
    p.add_argument("--in", dest="infile", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--template", type=int, default=None)
    p.add_argument("--search", type=int, default=None)
    p.add_argument("--dilate", dest="dilate_kernel", type=int, default=None)
    p.add_argument("--backend", choices=("compiled", "python"), default=None)
    add_common(p)

    p = sub.add_parser("patches", help="extract patches from scan + mask")
    p.add_argument("--scan", type=Path, required=True)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--min-nonzero", type=int, default=None)
    p.add_argument("--max-patches", type=int, default=None)
    add_common(p)

    p = sub.add_parser("train", help="train the patch classifier")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr-start", type=float, default=None)
    p.add_argument("--lr-end", type=float, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--train-patches-per-scan", type=int, default=None)
    p.add_argument("--backend", choices=("compiled", "python"), default=None)
    add_common(p)

    p = sub.add_parser("score", help="score a manifest with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--backend", choices=("compiled", "python"), default=None)
    add_common(p)

    p = sub.add_parser("fixate", help="evidence heatmap for one patch image")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--patch", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--csv", type=Path, default=None,
                   help="points CSV path (default: <out>.csv)")
    add_common(p)

    p = sub.add_parser("eval", help="metrics from a scores CSV")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--fdr", type=float, default=None)
    add_common(p)

    p = sub.add_parser("xval", help="k-fold cross-validated evaluation")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--fdr", type=float, default=None)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--train-patches-per-scan", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--backend", choices=("compiled", "python"), default=None)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel fold workers (capped by OCTPAD_THREADS)")
    p.add_argument("--progress", action="store_true")
    add_common(p)

    return parser


def _cmd_synth(args) -> int:
    cfgmod.load_config_file(args.config)  # validated for typos even if unused here
    overrides = {
        "height": args.height,
        "width": args.width,
        "speckle_sigma": args.speckle_sigma,
        "duct_count": args.duct_count,
    }
    base = replace(
        synth.PhantomParams(),
        **{k: v for k, v in overrides.items() if v is not None},
    )
    materials = (
        tuple(m.strip() for m in args.materials.split(",") if m.strip())
        if args.materials
        else synth.DEFAULT_MATERIALS
    )
    manifest = synth.generate_corpus(
        args.n_bonafide, args.n_pa, materials, base, args.out_dir,
        corpus_seed=args.seed, image_format=args.format,
    )
    cfgmod.write_provenance(
        args.out_dir, "synth", {},
        extras={
            "n_bonafide": args.n_bonafide, "n_pa": args.n_pa, "seed": args.seed,
            "materials": list(materials), "height": base.height, "width": base.width,
            "speckle_sigma": base.speckle_sigma, "duct_count": base.duct_count,
            "format": args.format,
        },
    )
    print(manifest)
    return 0


def _cmd_preprocess(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    pre = cfgmod.resolve_section("preprocess", file_cfg, {
        "h": args.h, "template": args.template, "search": args.search,
        "dilate_kernel": args.dilate_kernel,
    })
    from octpad.preprocess import preprocess_pipeline

    scan = load_scan(args.infile)
    mask = preprocess_pipeline(scan, pre, backend=args.backend)
    save_image(mask.astype(np.uint8) * 255, args.out)
    return 0


def _cmd_patches(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    pcfg = cfgmod.resolve_section("patches", file_cfg, {
        "stride": args.stride, "window": args.window,
        "min_nonzero": args.min_nonzero, "max_patches": args.max_patches,
    })
    scan = load_scan(args.scan)
    mask_img = load_scan(args.mask)
    mask = mask_img.pixels > 0
    cands = find_candidates(mask, pcfg)
    selected = select_candidates(cands, pcfg.max_patches)
    out = extract_patches(scan, selected, pcfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, patch in enumerate(out):
        cand = patch.candidate
        name = f"{scan.scan_id}_{k}_{cand.row}_{cand.col}.png"
        save_image(patch.pixels, args.out_dir / name)
        lines.append(
            f'{{"path": "{name}", "scan_id": "{scan.scan_id}", '
            f'"patch_index": {k}, "row": {cand.row}, "col": {cand.col}}}'
        )
    (args.out_dir / "patches.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    cfgmod.write_provenance(args.out_dir, "patches", {"patches": pcfg})
    print(f"{len(out)} patches")
    return 0


def _cmd_train(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    pre = cfgmod.resolve_section("preprocess", file_cfg, {})
    pcfg = cfgmod.resolve_section("patches", file_cfg, {})
    tcfg = cfgmod.resolve_section("train", file_cfg, {
        "epochs": args.epochs, "seed": args.seed, "batch_size": args.batch,
        "lr_start": args.lr_start, "lr_end": args.lr_end,
        "augment": False if args.no_augment else None,
    })
    eval_params = cfgmod.resolve_section("eval", file_cfg, {
        "train_patches_per_scan": args.train_patches_per_scan,
    })
    records = parse_manifest(args.manifest)
    x, y = pipeline.build_patch_dataset(
        records, pre, pcfg, per_scan_cap=eval_params.train_patches_per_scan,
        backend=args.backend,
    )
    model, history = train(x, y, tcfg,
                           input_shape=(pcfg.patch_h, pcfg.patch_w, 1))
    model.save(args.out)
    for h in history:
        print(f"epoch {h.epoch}: loss={h.loss:.4f} accuracy={h.accuracy:.4f}")
    return 0


def _cmd_score(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    pre = cfgmod.resolve_section("preprocess", file_cfg, {})
    pcfg = cfgmod.resolve_section("patches", file_cfg, {})
    model = CnnModel.load(args.model)
    records = parse_manifest(args.manifest)
    score_records = evaluation.score_manifest(model, records, pre, pcfg,
                                              backend=args.backend)
    evaluation.write_scores_csv(score_records, args.out)
    return 0


def _cmd_fixate(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    hcfg = cfgmod.resolve_section("heatmap", file_cfg, {
        "kde_sigma": args.sigma, "top_k_fc": args.topk,
    })
    model = CnnModel.load(args.model)
    patch_img = load_scan(args.patch)
    fix = fixations.backtrack_fixations(model, patch_img.pixels, hcfg)
    heat = fixations.fixation_heatmap(fix, patch_img.pixels.shape, hcfg)
    save_image(heat, args.out)
    csv_path = args.csv or args.out.with_suffix(".csv")
    Path(csv_path).write_text(fixations.fixations_to_csv(fix))
    print(f"{len(fix.points)} fixation points, predicted {fix.predicted_class.value}")
    return 0


def _cmd_eval(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    eval_params = cfgmod.resolve_section("eval", file_cfg, {"fdr_max": args.fdr})
    records = evaluation.read_scores_csv(args.scores)
    curve = evaluation.roc(records)
    tdr, tau = evaluation.tdr_at_fdr(records, eval_params.fdr_max)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_roc_csv(curve, args.out_dir / "roc.csv")
    import json as _json

    (args.out_dir / "metrics.json").write_text(_json.dumps({
        "fdr_max": eval_params.fdr_max, "tdr": tdr, "tau": tau,
        "n_records": len(records),
    }, indent=2) + "\n")
    cfgmod.write_provenance(args.out_dir, "eval", {"eval": eval_params})
    print(f"tdr={tdr:.4f} @ fdr<={eval_params.fdr_max} (tau={tau:.4f})")
    return 0


def _cmd_xval(args) -> int:
    file_cfg = cfgmod.load_config_file(args.config)
    pre = cfgmod.resolve_section("preprocess", file_cfg, {})
    pcfg = cfgmod.resolve_section("patches", file_cfg, {})
    tcfg = cfgmod.resolve_section("train", file_cfg, {
        "epochs": args.epochs, "seed": args.seed, "batch_size": args.batch,
        "augment": False if args.no_augment else None,
    })
    eval_params = cfgmod.resolve_section("eval", file_cfg, {
        "k": args.k, "fdr_max": args.fdr,
        "train_patches_per_scan": args.train_patches_per_scan,
    })
    records = parse_manifest(args.manifest)
    result = evaluation.cross_validate(
        records, pre, pcfg, tcfg,
        k=eval_params.k, seed=args.seed, fdr_max=eval_params.fdr_max,
        train_patches_per_scan=eval_params.train_patches_per_scan,
        out_dir=args.out_dir, backend=args.backend, jobs=args.jobs,
        progress=args.progress,
    )
    cfgmod.write_provenance(
        args.out_dir, "xval",
        {"preprocess": pre, "patches": pcfg, "train": tcfg, "eval": eval_params},
        extras={"seed": args.seed},
    )
    for fold in result.folds:
        print(f"fold {fold.fold}: tdr={fold.tdr:.4f} (tau={fold.tau:.4f})")
    print(f"mean tdr={result.mean_tdr:.4f} sd={result.sd_tdr:.4f} "
          f"@ fdr<={result.fdr_max} in {result.elapsed_seconds:.0f}s")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "patches": _cmd_patches,
    "train": _cmd_train,
    "score": _cmd_score,
    "fixate": _cmd_fixate,
    "eval": _cmd_eval,
    "xval": _cmd_xval,
}


def run_cli(argv=None) -> int:
    """Parse and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except OctpadError as exc:
        print(f"octpad: error: {exc}", file=sys.stderr)
        return 2


def main() -> int:
    return run_cli()


if __name__ == "__main__":
    sys.exit(main())
