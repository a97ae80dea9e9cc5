"""End-to-end acceptance gate.

Every test here certifies one headline property of the engine at desk
scale (8x8 single-channel images, synthetic classifiers) and prints a
single PASS/FAIL line saying what was measured.  Run with ``pytest -s``
to see the lines on success.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage

from causemap.cli import main as cli_main
from causemap.core import Config, Image, Partition, Region
from causemap.exactref import exact_min_explanation, truth_table
from causemap.extract import explain, rank_pixels
from causemap.metrics import deletion_curve, insertion_curve
from causemap.mutagen import apply_pixel_mask
from causemap.oracle import (
    ConstantClassifier,
    CountThresholdClassifier,
    LinearClassifier,
    OracleSession,
    PixelThresholdClassifier,
    ledger_check,
)
from causemap.responsibility import superpixel_responsibility

BLACK = (0.0,)
ALL_PIXELS = [(r, c) for r in range(8) for c in range(8)]
CALL_BOUND = 16 * 64 * 20


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def reverifies(x: Image, clf, result) -> bool:
    """Fresh classifier call on the masked-complement image, no cache."""
    e = result.explanation
    keep = np.zeros((x.height, x.width), dtype=bool)
    for r, c in e.pixels:
        keep[r, c] = True
    masked = apply_pixel_mask(x, keep, BLACK)
    return clf.classify(masked[None])[0].label == result.original.label


# -- corpora ----------------------------------------------------------------


def agreement_case(seed: int):
    """A random image plus a random monotone rule.

    Masking toward black can only push these rules from "fires" to "does
    not", so a mask set keeps the label iff all its subsets do, and the
    engine's witness conditions accept exactly the same witnesses as the
    exhaustive subset-closed check.  Count rules force nonempty witnesses,
    so fractional responsibilities get compared too, not just 0 and 1.
    """
    rng = np.random.default_rng(seed)
    x = Image.from_array(rng.uniform(0.0, 1.0, (8, 8, 1)))
    k = int(rng.integers(1, 4)) if seed % 2 == 0 else int(rng.integers(2, 8))
    idx = rng.choice(64, size=k, replace=False)
    tests = tuple((int(i) // 8, int(i) % 8, float(rng.uniform(0.05, 0.95))) for i in idx)
    if seed % 2 == 0:
        return x, PixelThresholdClassifier(tests)
    return x, CountThresholdClassifier(tests, need=int(rng.integers(1, k + 1)))


def conjunct_case(seed: int):
    """Dim image with k bright pixels the label provably depends on.

    Threshold cases need every bright pixel (exact minimum k); every fifth
    case is a linear model where any single bright pixel clears the bias
    (exact minimum 1).
    """
    rng = np.random.default_rng(1000 + seed)
    k = seed % 4 + 1
    data = rng.uniform(0.0, 0.4, (8, 8, 1))
    idx = rng.choice(64, size=k, replace=False)
    pixels = [(int(i) // 8, int(i) % 8) for i in idx]
    for r, c in pixels:
        data[r, c, 0] = 1.0
    x = Image.from_array(data)
    if seed % 5 == 4:
        w = np.zeros((8, 8, 1))
        for r, c in pixels:
            w[r, c, 0] = 6.0
        return x, LinearClassifier(w, bias=-5.0), 1
    return x, PixelThresholdClassifier(tuple((r, c, 0.5) for r, c in pixels)), k


@pytest.fixture(scope="module")
def minimality_runs():
    records = []
    for seed in range(50):
        x, clf, k_min = conjunct_case(seed)
        # certify the exact minimum: nothing smaller passes, the bright set does
        assert exact_min_explanation(x, clf, BLACK, ALL_PIXELS, max_size=k_min - 1) == []
        cfg = Config(min_superpixel_px=1, iterations=20, extraction_chunk=1, seed=seed)
        result = explain(x, clf, cfg)
        assert result.status == "ok"
        records.append((x, clf, cfg, result, k_min))
    return records


@pytest.fixture(scope="module")
def linear_ranking_runs():
    records = []
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        x = Image.from_array(rng.uniform(0.0, 1.0, (8, 8, 1)))
        clf = LinearClassifier(rng.normal(0.0, 2.0, (8, 8, 1)), bias=float(rng.normal()))
        cfg = Config(min_superpixel_px=1, iterations=20, seed=seed)
        result = explain(x, clf, cfg)
        assert result.status == "ok"
        engine = insertion_curve(x, rank_pixels(result.map), OracleSession(clf), Config())
        shuffled = [ALL_PIXELS[i] for i in np.random.default_rng(9000 + seed).permutation(64)]
        random = insertion_curve(x, shuffled, OracleSession(clf), Config())
        records.append((x, clf, cfg, result, engine.normalized_auc, random.normalized_auc))
    return records


@pytest.fixture(scope="module")
def single_pixel_run():
    x = Image.from_array(np.where(np.arange(64).reshape(8, 8, 1) == 9, 1.0, 0.0))
    clf = PixelThresholdClassifier(((1, 1, 0.5),))
    cfg = Config(min_superpixel_px=1, iterations=20, seed=2)
    result = explain(x, clf, cfg)
    assert result.status == "ok"
    return x, clf, cfg, result


@pytest.fixture(scope="module")
def degenerate_run():
    x = Image.from_array(np.random.default_rng(3).uniform(0.0, 1.0, (8, 8, 1)))
    clf = ConstantClassifier(3)
    cfg = Config(min_superpixel_px=1, iterations=20, seed=4)
    result = explain(x, clf, cfg)
    assert result.status == "ok"
    return x, clf, cfg, result


# -- the criteria ------------------------------------------------------------


def test_responsibility_agrees_with_exhaustive_witness_search():
    quadrants = Partition(Region(0, 0, 8, 8), 4, 4)
    start = time.perf_counter()
    matches = 0
    for seed in range(50):
        x, clf = agreement_case(seed)
        session = OracleSession(clf)
        session.seed_cache(frozenset(), BLACK, session.classify_image(x))
        got = superpixel_responsibility(x, quadrants, frozenset(), session, BLACK).values
        table = truth_table(x, clf, BLACK, quadrants.children)
        want = tuple(table.responsibility(child) for child in quadrants.children)
        matches += got == want
    elapsed = time.perf_counter() - start
    report(
        "exact-oracle agreement",
        matches == 50 and elapsed < 10.0,
        f"{matches}/50 partitions scored identically to the witness-set oracle, {elapsed:.2f}s (limit 10s)",
    )


def test_every_sufficient_explanation_reverifies(
    minimality_runs, linear_ranking_runs, single_pixel_run, degenerate_run
):
    runs = [(x, clf, result) for x, clf, _, result, *_ in minimality_runs + linear_ranking_runs]
    runs.append(single_pixel_run[:2] + (single_pixel_run[3],))
    runs.append(degenerate_run[:2] + (degenerate_run[3],))
    checked = verified = 0
    for x, clf, result in runs:
        assert result.explanation is not None and result.explanation.sufficient
        checked += 1
        verified += reverifies(x, clf, result)
    report(
        "sufficiency",
        checked == verified == len(runs),
        f"{verified}/{checked} explanations re-verified by a fresh classifier call",
    )


def test_explanations_near_minimal(minimality_runs):
    within, sufficient = 0, 0
    worst = 0.0
    for x, clf, _, result, k_min in minimality_runs:
        sufficient += reverifies(x, clf, result)
        ratio = result.explanation.size / k_min
        worst = max(worst, ratio)
        within += ratio <= 2.0
    report(
        "near-minimality",
        within >= 45 and sufficient == 50,
        f"{within}/50 within 2x the exact minimum (need 45), worst ratio {worst:.2f}, "
        f"{sufficient}/50 sufficient (need 50)",
    )


def test_call_budget_never_exceeds_partition_bound(
    minimality_runs, linear_ranking_runs, single_pixel_run, degenerate_run
):
    runs = [(cfg, result) for _, _, cfg, result, *_ in minimality_runs + linear_ranking_runs]
    runs.append((single_pixel_run[2], single_pixel_run[3]))
    runs.append((degenerate_run[2], degenerate_run[3]))
    ok = sum(ledger_check(result.session.ledger, 64, cfg) for cfg, result in runs)
    peak = max(result.session.ledger.calls_made for _, result in runs)
    report(
        "call-count bound",
        ok == len(runs),
        f"{ok}/{len(runs)} runs within 2^s*n*N = {CALL_BOUND} calls (peak {peak})",
    )


def test_artifacts_byte_identical_across_reruns_and_jobs(tmp_path):
    arr = np.random.default_rng(12).integers(0, 200, size=(8, 8), dtype=np.uint8)
    arr[1, 1] = arr[6, 6] = 255
    img = tmp_path / "in.png"
    PILImage.fromarray(arr, mode="L").save(img)
    outs = [tmp_path / name for name in ("one", "two", "jobs4")]
    for out, jobs in zip(outs, ("1", "1", "4")):
        code = cli_main([
            "explain",
            "--image", str(img),
            "--model", "builtin:threshold@1,1,0.5;6,6,0.5",
            "--out", str(out),
            "--seed", "11",
            "--iterations", "20",
            "--min-superpixel", "1",
            "--jobs", jobs,
        ])
        assert code == 0
    maps = [(out / "map.rexmap").read_bytes() for out in outs]
    masks = [(out / "explanation.rxe1").read_bytes() for out in outs]
    ok = maps[0] == maps[1] == maps[2] and masks[0] == masks[1] == masks[2]
    report(
        "artifact determinism",
        ok,
        "REXMAP and RXE1 byte-identical across two reruns and --jobs 1 vs 4",
    )


def test_engine_ranking_beats_random_and_nails_single_pixel(
    linear_ranking_runs, single_pixel_run
):
    wins = sum(engine >= random for *_, engine, random in linear_ranking_runs)
    x, clf, _, result = single_pixel_run
    ranking = rank_pixels(result.map)
    ins = insertion_curve(x, ranking, OracleSession(clf), Config()).normalized_auc
    rev = insertion_curve(x, list(reversed(ranking)), OracleSession(clf), Config()).normalized_auc
    ok = wins >= 95 and ins >= 0.99 and rev <= 0.02
    report(
        "ranking quality",
        ok,
        f"engine >= random in {wins}/100 linear trials (need 95); single-pixel insertion "
        f"AUC {ins:.4f} (need >= 0.99), reversed {rev:.4f} (need <= 0.02)",
    )


def test_constant_classifier_degenerates_cleanly(degenerate_run):
    x, clf, _, result = degenerate_run
    zero_map = not np.any(result.map.values)
    e = result.explanation
    ranking = rank_pixels(result.map)
    ins = insertion_curve(x, ranking, OracleSession(clf), Config()).normalized_auc
    dele = deletion_curve(x, ranking, OracleSession(clf), Config()).normalized_auc
    flat = abs(ins - 1.0) <= 1e-9 and abs(dele - 1.0) <= 1e-9
    ok = zero_map and e.degenerate_empty and e.sufficient and e.size == 0 and flat
    report(
        "degenerate handling",
        ok,
        f"all-zero map, empty sufficient explanation, curve AUCs {ins:.12f}/{dele:.12f} (need 1 +/- 1e-9)",
    )
