"""Score aggregation, detection metrics, and stratified cross-validation.

Decision rule: a scan with global score >= tau is classified as a
presentation attack.  TDR(tau) is the flagged fraction of PA scans and
FDR(tau) the flagged fraction of bonafide scans; the operating point reports
the best TDR reachable while keeping FDR at or below a bound.

A scan that yields zero patch candidates cannot be decided by the classifier;
it is recorded as unscorable with a global score of 1.0 so segmentation
failures always cost the system (a bonafide rejection) instead of being
silently dropped.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from octpad.cnn.model import CnnModel
from octpad.cnn.train import TrainConfig, train
from octpad.errors import DataError, EvaluationError
from octpad.imagecore import Label, ScanRecord, load_scan
from octpad.patches import PatchConfig
from octpad.pipeline import scan_patch_stack, score_patch_stack, subsample_stack
from octpad.preprocess import PreprocessConfig

UNSCORABLE_SCORE = 1.0


@dataclass(frozen=True)
class ScoreRecord:
    """Per-scan result: patch scores and their mean (global spoofness)."""

    scan_id: str
    label: Label
    material: str | None
    patch_scores: tuple[float, ...]
    global_score: float
    unscorable: bool = False


def global_score(patch_scores) -> float:
    """Arithmetic mean of per-patch spoofness scores."""
    scores = list(patch_scores)
    if not scores:
        raise DataError("no patches scored")
    return float(np.mean(scores))


def make_score_record(scan_id: str, label: Label, material: str | None,
                      patch_scores) -> ScoreRecord:
    scores = tuple(float(s) for s in patch_scores)
    if scores:
        return ScoreRecord(scan_id, label, material, scores, global_score(scores))
    return ScoreRecord(scan_id, label, material, (), UNSCORABLE_SCORE, unscorable=True)


@dataclass(frozen=True)
class RocPoint:
    tau: float
    fdr: float
    tdr: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]  # sorted by tau descending


# sentinel threshold above any possible score, so the curve starts at (0, 0)
_TAU_SENTINEL = 2.0


def _split_scores(records) -> tuple[np.ndarray, np.ndarray]:
    pa = np.array([r.global_score for r in records if r.label is Label.PA])
    bona = np.array([r.global_score for r in records if r.label is Label.BONAFIDE])
    if len(pa) == 0 or len(bona) == 0:
        raise EvaluationError("single-label input: need both PA and bonafide records")
    return pa, bona


def rates_at(records, tau: float) -> tuple[float, float]:
    """(fdr, tdr) of the >=-tau decision rule at one threshold."""
    pa, bona = _split_scores(records)
    return float((bona >= tau).mean()), float((pa >= tau).mean())


def roc(records) -> RocCurve:
    """Sweep tau over the distinct global scores (plus a high sentinel)."""
    pa, bona = _split_scores(records)
    taus = sorted(set(np.concatenate([pa, bona]).tolist()), reverse=True)
    points = [RocPoint(_TAU_SENTINEL, 0.0, 0.0)]
    for tau in taus:
        fdr = float((bona >= tau).mean())
        tdr = float((pa >= tau).mean())
        points.append(RocPoint(float(tau), fdr, tdr))
    return RocCurve(tuple(points))


def tdr_at_fdr(records, fdr_max: float) -> tuple[float, float]:
    """Best TDR over thresholds with FDR <= fdr_max; ties pick the largest tau."""
    curve = roc(records)
    best_tdr = -1.0
    best_tau = _TAU_SENTINEL
    for p in curve.points:  # tau descending: first strict improvement keeps max tau
        if p.fdr <= fdr_max and p.tdr > best_tdr:
            best_tdr = p.tdr
            best_tau = p.tau
    return best_tdr, best_tau


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict  # scan_id -> fold index


def kfold_split(records: list[ScanRecord], k: int = 5, seed: int = 7) -> FoldPlan:
    """Material-stratified fold assignment.

    Within each (label, material) stratum the records are shuffled by the
    seed and dealt round-robin from a random starting fold, so per-stratum
    fold counts differ by at most one and strata smaller than k appear in
    exactly their own number of folds.
    """
    if k < 2:
        raise EvaluationError("k must be >= 2")
    n_bona = sum(1 for r in records if r.label is Label.BONAFIDE)
    if k > n_bona:
        raise EvaluationError(
            f"k exceeds stratum: {k} folds but only {n_bona} bonafide scans"
        )
    strata: dict[tuple[str, str], list[ScanRecord]] = {}
    for rec in records:
        strata.setdefault((rec.label.value, rec.material or ""), []).append(rec)
    rng = np.random.default_rng(seed)
    assignments: dict[str, int] = {}
    for key in sorted(strata):
        group = strata[key]
        order = rng.permutation(len(group))
        start = int(rng.integers(k))
        for slot, idx in enumerate(order):
            assignments[group[idx].scan_id] = (start + slot) % k
    return FoldPlan(k=k, assignments=assignments)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    tdr: float
    tau: float
    records: tuple[ScoreRecord, ...]
    curve: RocCurve
    n_train_patches: int


@dataclass(frozen=True)
class CrossValResult:
    folds: tuple[FoldResult, ...]
    mean_tdr: float
    sd_tdr: float
    fdr_max: float
    plan: FoldPlan
    elapsed_seconds: float


def _fold_train_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, dtype=np.uint64)[0])


def _run_fold(fold: int, records, plan, cache, patch_cfg, train_cfg, fdr_max,
              train_patches_per_scan, arch) -> FoldResult:
    """Train on the other folds' patches and score this fold's scans."""
    train_x = []
    train_y = []
    for rec in records:
        if plan.assignments[rec.scan_id] == fold:
            continue
        stack = cache[rec.scan_id]
        if stack is None:
            continue
        if train_patches_per_scan:
            stack = subsample_stack(stack, train_patches_per_scan)
        train_x.append(stack)
        train_y.append(
            np.full(stack.shape[0], 0 if rec.label is Label.BONAFIDE else 1)
        )
    x = np.concatenate(train_x)
    y = np.concatenate(train_y).astype(np.int64)
    cfg = replace(train_cfg, seed=_fold_train_seed(train_cfg.seed, fold))
    model, _ = train(x, y, cfg, arch=arch,
                     input_shape=(patch_cfg.patch_h, patch_cfg.patch_w, 1))

    fold_records = []
    for rec in records:
        if plan.assignments[rec.scan_id] != fold:
            continue
        stack = cache[rec.scan_id]
        scores = () if stack is None else tuple(score_patch_stack(model, stack).tolist())
        fold_records.append(
            make_score_record(rec.scan_id, rec.label, rec.material, scores)
        )
    tdr, tau = tdr_at_fdr(fold_records, fdr_max)
    return FoldResult(fold, tdr, tau, tuple(fold_records), roc(fold_records),
                      n_train_patches=int(x.shape[0]))


# fold context inherited by forked workers (set only around the pool lifetime)
_FOLD_CTX = None


def _run_fold_from_ctx(fold: int) -> FoldResult:
    return _run_fold(fold, *_FOLD_CTX)


def _effective_jobs(jobs: int, k: int) -> int:
    cap = os.environ.get("OCTPAD_THREADS")
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, min(jobs, k))


def cross_validate(records: list[ScanRecord],
                   pre_cfg: PreprocessConfig = PreprocessConfig(),
                   patch_cfg: PatchConfig = PatchConfig(),
                   train_cfg: TrainConfig = TrainConfig(epochs=3),
                   k: int = 5, seed: int = 7, fdr_max: float = 0.002,
                   train_patches_per_scan: int = 4,
                   arch=None, out_dir: str | Path | None = None,
                   backend: str | None = None,
                   jobs: int = 1,
                   progress: bool = False) -> CrossValResult:
    """k-fold cross-validated end-to-end evaluation.

    Every scan is preprocessed once and its patch stack cached; each fold then
    trains on the other folds' patches (subsampled to ``train_patches_per_scan``
    per scan when positive) and scores its own held-out scans with all
    extracted patches.

    ``jobs`` > 1 runs folds in parallel worker processes (fork platforms
    only); the OCTPAD_THREADS environment variable caps it.  Results are
    identical to the sequential run.
    """
    t_start = time.perf_counter()
    plan = kfold_split(records, k=k, seed=seed)

    cache: dict[str, np.ndarray | None] = {}
    for i, rec in enumerate(records):
        scan = load_scan(rec.path, rec)
        cache[rec.scan_id] = scan_patch_stack(scan, pre_cfg, patch_cfg, backend=backend)
        if progress and (i + 1) % 100 == 0:
            print(f"  preprocessed {i + 1}/{len(records)} scans", flush=True)

    ctx = (records, plan, cache, patch_cfg, train_cfg, fdr_max,
           train_patches_per_scan, arch)
    jobs = _effective_jobs(jobs, k)
    use_pool = jobs > 1 and multiprocessing.get_start_method(allow_none=False) == "fork"
    if use_pool:
        global _FOLD_CTX
        _FOLD_CTX = ctx
        try:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                folds = list(pool.map(_run_fold_from_ctx, range(k)))
        finally:
            _FOLD_CTX = None
    else:
        folds = []
        for fold in range(k):
            folds.append(_run_fold(fold, *ctx))
            if progress:
                f = folds[-1]
                print(f"  fold {f.fold}: tdr={f.tdr:.4f} @ fdr<={fdr_max} "
                      f"(tau={f.tau:.4f})", flush=True)

    tdrs = np.array([f.tdr for f in folds])
    result = CrossValResult(
        folds=tuple(folds),
        mean_tdr=float(tdrs.mean()),
        sd_tdr=float(tdrs.std()),  # population sd over the folds
        fdr_max=fdr_max,
        plan=plan,
        elapsed_seconds=time.perf_counter() - t_start,
    )
    if out_dir is not None:
        write_crossval_artifacts(result, Path(out_dir))
    return result


# -- artifact writers ------------------------------------------------------


def write_scores_csv(records, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scan_id", "label", "material", "n_patches", "global_score"])
        for r in records:
            writer.writerow(
                [r.scan_id, r.label.value, r.material or "", len(r.patch_scores),
                 repr(r.global_score)]
            )


def read_scores_csv(path: str | Path) -> list[ScoreRecord]:
    """Reload a scores CSV into records (per-patch scores are not stored)."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            n = int(row["n_patches"])
            score = float(row["global_score"])
            out.append(
                ScoreRecord(
                    scan_id=row["scan_id"],
                    label=Label.parse(row["label"]),
                    material=row["material"] or None,
                    patch_scores=(),
                    global_score=score,
                    unscorable=n == 0,
                )
            )
    return out


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tau", "fdr", "tdr"])
        for p in curve.points:
            writer.writerow([repr(p.tau), repr(p.fdr), repr(p.tdr)])


def _tdr_on_grid(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """Best TDR available at each FDR grid value (step interpolation)."""
    fdrs = np.array([p.fdr for p in curve.points])
    tdrs = np.array([p.tdr for p in curve.points])
    out = np.zeros_like(grid)
    for i, g in enumerate(grid):
        ok = fdrs <= g
        out[i] = tdrs[ok].max() if ok.any() else 0.0
    return out


def plot_roc_svg(curves: list[RocCurve], path: str | Path) -> None:
    """Per-fold curves, their mean, and a +/- 1 sd band."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = np.linspace(0.0, 1.0, 401)
    per_fold = np.stack([_tdr_on_grid(c, grid) for c in curves])
    mean = per_fold.mean(axis=0)
    sd = per_fold.std(axis=0)

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for i, row in enumerate(per_fold):
        ax.plot(grid, row, color="0.6", linewidth=0.8, label="folds" if i == 0 else None)
    ax.fill_between(grid, np.clip(mean - sd, 0, 1), np.clip(mean + sd, 0, 1),
                    color="0.85", label="±1 s.d.")
    ax.plot(grid, mean, color="red", linewidth=1.6, label="mean")
    ax.set_xlabel("False detection rate")
    ax.set_ylabel("True detection rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_crossval_artifacts(result: CrossValResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for fold in result.folds:
        write_scores_csv(fold.records, out_dir / f"scores_fold{fold.fold}.csv")
        write_roc_csv(fold.curve, out_dir / f"roc_fold{fold.fold}.csv")
    grid = np.linspace(0.0, 1.0, 401)
    per_fold = np.stack([_tdr_on_grid(f.curve, grid) for f in result.folds])
    with open(out_dir / "roc_mean.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fdr", "tdr_mean", "tdr_sd"])
        for g, m, s in zip(grid, per_fold.mean(axis=0), per_fold.std(axis=0)):
            writer.writerow([repr(float(g)), repr(float(m)), repr(float(s))])
    plot_roc_svg([f.curve for f in result.folds], out_dir / "roc.svg")
    metrics = {
        "k": result.plan.k,
        "fdr_max": result.fdr_max,
        "folds": [
            {
                "fold": f.fold,
                "tdr": f.tdr,
                "tau": f.tau,
                "n_test": len(f.records),
                "n_unscorable": sum(1 for r in f.records if r.unscorable),
                "n_train_patches": f.n_train_patches,
            }
            for f in result.folds
        ],
        "mean_tdr": result.mean_tdr,
        "sd_tdr": result.sd_tdr,
        "elapsed_seconds": result.elapsed_seconds,
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")


def score_manifest(model: CnnModel, records: list[ScanRecord],
                   pre_cfg: PreprocessConfig = PreprocessConfig(),
                   patch_cfg: PatchConfig = PatchConfig(),
                   backend: str | None = None) -> list[ScoreRecord]:
    """Score every scan in a manifest with a trained model."""
    out = []
    for rec in records:
        scan = load_scan(rec.path, rec)
        stack = scan_patch_stack(scan, pre_cfg, patch_cfg, backend=backend)
        scores = () if stack is None else tuple(score_patch_stack(model, stack).tolist())
        out.append(make_score_record(rec.scan_id, rec.label, rec.material, scores))
    return out
