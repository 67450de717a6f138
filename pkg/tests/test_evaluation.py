"""Metric and fold-plan tests, with an exhaustive-sweep oracle for the
operating-point search."""

from pathlib import Path

import numpy as np
import pytest

from octpad.errors import DataError, EvaluationError
from octpad.evaluation import (
    FoldPlan,
    ScoreRecord,
    global_score,
    kfold_split,
    make_score_record,
    rates_at,
    read_scores_csv,
    roc,
    tdr_at_fdr,
    write_scores_csv,
)
from octpad.imagecore import Label, ScanRecord


def _rec(scan_id, label, score, material=None):
    return ScoreRecord(scan_id, label, material, (score,), score)


def _records(pa_scores, bona_scores):
    out = [_rec(f"p{i}", Label.PA, s) for i, s in enumerate(pa_scores)]
    out += [_rec(f"b{i}", Label.BONAFIDE, s) for i, s in enumerate(bona_scores)]
    return out


def tdr_at_fdr_oracle(records, fdr_max):
    """Brute force: evaluate the decision rule at every distinct score plus a
    sentinel above the range; keep the best feasible TDR at the largest tau."""
    taus = sorted({r.global_score for r in records} | {2.0}, reverse=True)
    pa = [r.global_score for r in records if r.label is Label.PA]
    bona = [r.global_score for r in records if r.label is Label.BONAFIDE]
    best = (-1.0, None)
    for tau in taus:
        fdr = sum(s >= tau for s in bona) / len(bona)
        tdr = sum(s >= tau for s in pa) / len(pa)
        if fdr <= fdr_max and tdr > best[0]:
            best = (tdr, tau)
    return best


# --- global score ------------------------------------------------------------


def test_global_score_mean():
    assert global_score([0.2, 0.4, 0.6]) == pytest.approx(0.4)


def test_global_score_singleton():
    assert global_score([0.7]) == pytest.approx(0.7)


def test_global_score_empty_errors():
    with pytest.raises(DataError, match="no patches scored"):
        global_score([])


def test_global_score_bounded_and_permutation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = rng.random(int(rng.integers(1, 9))).tolist()
        g = global_score(scores)
        assert min(scores) <= g <= max(scores)
        assert g == pytest.approx(global_score(scores[::-1]))


def test_unscorable_record_flagged_at_max_score():
    rec = make_score_record("s", Label.BONAFIDE, None, ())
    assert rec.unscorable and rec.global_score == 1.0


# --- roc -----------------------------------------------------------------------


def test_roc_perfectly_separated():
    records = _records([0.9, 0.8], [0.1, 0.2])
    curve = roc(records)
    perfect = [p for p in curve.points if p.fdr == 0.0 and p.tdr == 1.0]
    assert perfect and perfect[0].tau == pytest.approx(0.8)


def test_roc_all_equal_degenerate():
    records = _records([0.5, 0.5], [0.5, 0.5])
    curve = roc(records)
    assert [(p.fdr, p.tdr) for p in curve.points] == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_hand_example_rates():
    records = _records([0.9, 0.6, 0.4], [0.5, 0.3, 0.1])
    fdr, tdr = rates_at(records, 0.55)
    assert fdr == 0.0
    assert tdr == pytest.approx(2 / 3)


def test_roc_monotone_and_endpoints():
    rng = np.random.default_rng(1)
    for _ in range(50):
        records = _records(
            rng.random(int(rng.integers(1, 20))).tolist(),
            rng.random(int(rng.integers(1, 20))).tolist(),
        )
        curve = roc(records)
        taus = [p.tau for p in curve.points]
        assert taus == sorted(taus, reverse=True)
        fdrs = [p.fdr for p in curve.points]
        tdrs = [p.tdr for p in curve.points]
        assert all(a <= b for a, b in zip(fdrs, fdrs[1:]))
        assert all(a <= b for a, b in zip(tdrs, tdrs[1:]))
        assert (fdrs[0], tdrs[0]) == (0.0, 0.0)
        assert (fdrs[-1], tdrs[-1]) == (1.0, 1.0)


def test_roc_single_label_errors():
    with pytest.raises(EvaluationError, match="single-label"):
        roc([_rec("p", Label.PA, 0.5)])


# --- tdr at fdr -------------------------------------------------------------------


def test_tdr_at_fdr_perfect():
    records = _records([0.9, 0.8], [0.1, 0.2])
    tdr, tau = tdr_at_fdr(records, 0.002)
    assert tdr == 1.0
    assert tau == pytest.approx(0.8)


def test_tdr_at_fdr_hand_example_zero_bound():
    records = _records([0.9, 0.6, 0.4], [0.5, 0.3, 0.1])
    tdr, tau = tdr_at_fdr(records, 0.0)
    assert tdr == pytest.approx(2 / 3)
    assert tau == pytest.approx(0.6)  # largest distinct sweep point


def test_tdr_at_fdr_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        records = _records(
            np.round(rng.random(int(rng.integers(1, 15))), 2).tolist(),
            np.round(rng.random(int(rng.integers(1, 15))), 2).tolist(),
        )
        for fdr_max in (0.0, 0.002, 0.1, 0.5, 1.0):
            tdr, tau = tdr_at_fdr(records, fdr_max)
            otdr, otau = tdr_at_fdr_oracle(records, fdr_max)
            assert tdr == pytest.approx(otdr)
            assert tau == pytest.approx(otau)


def test_tdr_at_fdr_monotone_in_bound():
    rng = np.random.default_rng(3)
    records = _records(rng.random(20).tolist(), rng.random(20).tolist())
    values = [tdr_at_fdr(records, f)[0] for f in (0.0, 0.05, 0.1, 0.5, 1.0)]
    assert all(a <= b for a, b in zip(values, values[1:]))


# --- fold plans -----------------------------------------------------------------


def _manifest(n_bona, pa_by_material):
    records = [
        ScanRecord(Path(f"b{i}.png"), f"b{i}", Label.BONAFIDE)
        for i in range(n_bona)
    ]
    for material, count in pa_by_material.items():
        for i in range(count):
            records.append(
                ScanRecord(Path(f"{material}{i}.png"), f"{material}{i}",
                           Label.PA, material=material)
            )
    return records


TABLE3 = {
    "ballistic_gelatin": 34,
    "clear_ecoflex": 7,
    "tan_ecoflex": 49,
    "yellow_pigmented_silicone": 57,
    "flesh_pigmented_ecoflex": 36,
    "nusil_conductive_silicone": 128,
    "flesh_pigmented_pdms": 42,
    "elmers_glue": 1,
    "bandaid": 3,
}


def test_bonafide_fold_sizes_3413():
    records = _manifest(3413, {})
    plan = kfold_split(records, k=5, seed=1)
    sizes = sorted(
        sum(1 for f in plan.assignments.values() if f == i) for i in range(5)
    )
    assert sizes == [682, 682, 683, 683, 683]


def test_material_strata_balanced_and_small_strata_partial():
    records = _manifest(3413, TABLE3)
    plan = kfold_split(records, k=5, seed=1)
    by_id = {r.scan_id: r for r in records}
    for material, count in TABLE3.items():
        folds = [
            plan.assignments[r.scan_id]
            for r in records
            if by_id[r.scan_id].material == material
        ]
        counts = np.bincount(folds, minlength=5)
        assert counts.max() - counts.min() <= 1
        assert np.count_nonzero(counts) == min(count, 5)
    # Elmer's Glue (1 scan) in exactly 1 fold; Bandaid (3) in exactly 3
    assert sum(TABLE3[m] for m in ("elmers_glue", "bandaid")) == 4


def test_two_scan_material_in_exactly_two_folds():
    records = _manifest(10, {"playdoh": 2})
    plan = kfold_split(records, k=5, seed=0)
    folds = {plan.assignments[r.scan_id] for r in records if r.material == "playdoh"}
    assert len(folds) == 2


def test_kfold_partition_and_determinism():
    records = _manifest(23, {"m1": 6, "m2": 3})
    p1 = kfold_split(records, k=5, seed=9)
    p2 = kfold_split(records, k=5, seed=9)
    assert p1 == p2
    assert set(p1.assignments) == {r.scan_id for r in records}
    assert all(0 <= f < 5 for f in p1.assignments.values())
    p3 = kfold_split(records, k=5, seed=10)
    assert p3 != p1  # overwhelmingly likely


def test_kfold_errors():
    with pytest.raises(EvaluationError):
        kfold_split(_manifest(10, {}), k=1)
    with pytest.raises(EvaluationError, match="k exceeds stratum"):
        kfold_split(_manifest(4, {"m": 5}), k=5)


def test_cross_validate_rejects_small_bonafide_stratum():
    from octpad.evaluation import cross_validate

    with pytest.raises(EvaluationError, match="k exceeds stratum"):
        cross_validate(_manifest(4, {"m": 5}), k=5)


def test_tdr_oracle_equivalence_large_record_set():
    rng = np.random.default_rng(44)
    records = _records(
        np.round(rng.random(500), 3).tolist(), np.round(rng.random(500), 3).tolist()
    )
    for fdr_max in (0.0, 0.002, 0.01, 0.2):
        tdr, tau = tdr_at_fdr(records, fdr_max)
        otdr, otau = tdr_at_fdr_oracle(records, fdr_max)
        assert tdr == pytest.approx(otdr) and tau == pytest.approx(otau)


def test_effective_jobs_env_cap(monkeypatch):
    from octpad.evaluation import _effective_jobs

    monkeypatch.delenv("OCTPAD_THREADS", raising=False)
    assert _effective_jobs(4, k=5) == 4
    assert _effective_jobs(9, k=5) == 5  # never more workers than folds
    monkeypatch.setenv("OCTPAD_THREADS", "2")
    assert _effective_jobs(4, k=5) == 2
    monkeypatch.setenv("OCTPAD_THREADS", "not-a-number")
    assert _effective_jobs(4, k=5) == 4
    monkeypatch.setenv("OCTPAD_THREADS", "1")
    assert _effective_jobs(8, k=5) == 1


# --- scores csv -----------------------------------------------------------------


def test_scores_csv_roundtrip(tmp_path):
    records = [
        make_score_record("a", Label.BONAFIDE, None, (0.1, 0.2)),
        make_score_record("b", Label.PA, "gel", (0.9,)),
        make_score_record("c", Label.BONAFIDE, None, ()),
    ]
    path = tmp_path / "scores.csv"
    write_scores_csv(records, path)
    loaded = read_scores_csv(path)
    assert [r.scan_id for r in loaded] == ["a", "b", "c"]
    assert loaded[0].global_score == pytest.approx(0.15000000000000002)
    assert loaded[1].material == "gel"
    assert loaded[2].unscorable and loaded[2].global_score == 1.0
