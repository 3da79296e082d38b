"""Acceptance gate: one test per published claim about the toolkit.

Each test here is a self-contained pass/fail check of a user-facing
guarantee, with its tolerance and time budget pinned in the assertion.
Unit-level edge cases live in the per-module suites; this file only
answers "does the shipped behavior hold at the advertised scale".
"""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from segevo.campaign import CampaignConfig, cmd_attack, cmd_replay
from segevo.dataset_io import load_manifest, manifest_differences, write_demo_corpus
from segevo.errors import ProtocolError
from segevo.evolution import GaConfig, evolve, fitness_score
from segevo.imaging import Image, LabelMap, iou, mse, psnr
from segevo.oracle import PaletteSegmenter
from segevo.stats import PairedSamples, cohens_d, wilcoxon_signed_rank
from segevo.transforms import (
    DistortionKind,
    DistortionParams,
    region_dropout,
    salt_pepper,
    spatial_gaussian,
)
from segevo.wire import decode_frame, encode_error, encode_request, encode_response

from reference_impls import (
    iou_by_counting,
    mse_by_loops,
    psnr_from_mse,
    wilcoxon_by_enumeration,
)

FIXTURES = Path(__file__).parent / "fixtures" / "frames"


def test_metric_implementations_match_brute_force():
    """PSNR/MSE/IoU agree with loop-based reference code on 500 random inputs."""
    rng = np.random.default_rng(2024)
    started = time.monotonic()
    for trial in range(500):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        if trial % 2 == 0:
            c = int(rng.choice((1, 3)))
            a = rng.integers(0, 256, size=(h, w, c)).astype(np.uint8)
            b = rng.integers(0, 256, size=(h, w, c)).astype(np.uint8)
            expected_mse = mse_by_loops(a, b)
            got_mse = mse(Image(a), Image(b))
            assert got_mse == pytest.approx(expected_mse, rel=1e-9, abs=0.0) or (
                expected_mse == 0.0 and got_mse == 0.0
            )
            expected_psnr = psnr_from_mse(expected_mse)
            got_psnr = psnr(Image(a), Image(b))
            if math.isinf(expected_psnr):
                assert math.isinf(got_psnr)
            else:
                assert got_psnr == pytest.approx(expected_psnr, rel=1e-9, abs=0.0)
        else:
            n_classes = int(rng.integers(1, 6))
            x = rng.integers(0, n_classes, size=(h, w)).astype(np.uint16)
            y = rng.integers(0, n_classes, size=(h, w)).astype(np.uint16)
            per_class_ref, mean_ref = iou_by_counting(x, y)
            report = iou(LabelMap(x), LabelMap(y))
            assert report.mean_iou == mean_ref
            assert dict(report.per_class) == per_class_ref
    assert time.monotonic() - started < 10.0


def test_distortion_statistics_match_parameters():
    """Altered-pixel fractions and noise moments sit inside 3-sigma bands."""
    started = time.monotonic()
    n = 256 * 256
    base = np.full((256, 256), 128, dtype=np.uint8)
    base[0, 0] = 0  # pin the per-image extremes away from the fill value
    base[0, 1] = 255
    img = Image(base)

    p_drop = DistortionParams(kind=DistortionKind.REGION_DROPOUT,
                              p_min=0.06, p_max=0.04)
    p_sp = DistortionParams(kind=DistortionKind.SALT_PEPPER,
                            p_salt=0.05, p_pepper=0.07)
    p_noise = DistortionParams(kind=DistortionKind.SPATIAL_GAUSSIAN,
                               mu=4.0, sigma=12.0)

    # A single correct draw lands outside 3 sigma ~0.3% of the time, so the
    # 3-sigma band applies to the pooled count over all 20 seeds; a loose
    # per-seed band still catches gross parameter misuse.
    totals = {"drop": 0, "sp": 0}
    for seed in range(20):
        for key, fn, params, rate in (("drop", region_dropout, p_drop, 0.10),
                                      ("sp", salt_pepper, p_sp, 0.12)):
            out = fn(img, params, seed)
            altered = int(np.count_nonzero(out.samples != img.samples))
            totals[key] += altered
            sigma = math.sqrt(n * rate * (1.0 - rate))
            assert abs(altered - n * rate) <= 5.0 * sigma + 2.0

        noisy = spatial_gaussian(img, p_noise, seed)
        delta = noisy.samples.astype(np.float64) - img.samples.astype(np.float64)
        assert abs(delta.mean() - 4.0) <= 3.0 * 12.0 / math.sqrt(n) + 0.5  # +-0.5 rounding
        assert abs(delta.std() - 12.0) <= 1.0

    for key, rate in (("drop", 0.10), ("sp", 0.12)):
        pooled_sigma = math.sqrt(20 * n * rate * (1.0 - rate))
        # the two pinned pixels can only shrink each count, by <= 2
        assert abs(totals[key] - 20 * n * rate) <= 3.0 * pooled_sigma + 40.0
    assert time.monotonic() - started < 30.0


def test_fitness_gate_and_scaling_formula():
    """Fitness is 0 below the 20 dB gate, (1-IoU)*min(PSNR/20, cap) above it."""
    cfg = GaConfig()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        iou_value = float(rng.uniform(0.0, 1.0))
        psnr_value = float(rng.uniform(0.0, 60.0))
        got = fitness_score(iou_value, psnr_value, cfg)
        if psnr_value < 20.0:
            assert got == 0.0
        else:
            expected = (1.0 - iou_value) * min(psnr_value / 20.0, cfg.psnr_factor_cap)
            assert got == pytest.approx(expected, abs=1e-12)
    assert fitness_score(0.5, math.inf, cfg) == 0.5 * cfg.psnr_factor_cap


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk-corpus")
    write_demo_corpus(root, count=10, height=64, width=64, seed=11)
    return root


def test_attack_degrades_segmentation_at_desk_scale(desk_corpus, tmp_path):
    """Default-parameter attacks halve mIoU on a clean-perfect 10-image corpus.

    Success bar: adversarial mIoU < 0.5 with every export above 20 dB, in at
    least 9 of 10 master seeds, all inside a five-minute budget.
    """
    started = time.monotonic()
    successes = 0
    for seed in range(1, 11):
        cfg = CampaignConfig(
            dataset_root=desk_corpus,
            out_root=tmp_path / f"seed{seed}",
            ga=GaConfig(master_seed=seed),
            parallel_workers=4,
        )
        manifest = cmd_attack(cfg, quiet=True)
        assert manifest.summary["clean_miou"] == 1.0
        if manifest.failures:
            continue
        if not all(entry["psnr"] > 20.0 for entry in manifest.entries):
            continue
        if manifest.summary["adversarial_miou"] < 0.5:
            successes += 1
    elapsed = time.monotonic() - started
    assert successes >= 9, f"only {successes} of 10 seeds degraded mIoU below 0.5"
    assert elapsed < 300.0, f"took {elapsed:.1f} s"


def test_best_fitness_is_monotone_and_stagnation_stops_the_run(desk_corpus):
    """Elitism keeps the best-fitness series non-decreasing; a flat landscape
    terminates after exactly the configured stagnation window."""
    from segevo.dataset_io import load_dataset, load_image, load_labels

    entry = load_dataset(desk_corpus).entries[0]
    image = load_image(entry.image_path)
    truth = load_labels(entry.label_path)

    cfg = GaConfig(population_size=16, max_generations=25, master_seed=3)
    _, trace = evolve(image, truth, PaletteSegmenter(), cfg)
    series = trace.best_fitness_series()
    assert all(b >= a for a, b in zip(series, series[1:]))

    class _Perfect:
        def segment(self, img):
            return truth

    flat_cfg = GaConfig(population_size=8, max_generations=100, master_seed=3)
    _, flat = evolve(image, truth, _Perfect(), flat_cfg)
    assert flat.termination_reason == "stagnation"
    assert flat.generations_run == flat_cfg.stagnation_window == 15


def _normalized_manifest_lines(path: Path) -> list[str]:
    lines = []
    for raw in path.read_text().splitlines():
        record = json.loads(raw)
        record.pop("started_at", None)
        record.pop("finished_at", None)
        lines.append(json.dumps(record, sort_keys=True))
    return lines


def _png_tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.png"))}


def test_runs_are_deterministic_and_replayable(tmp_path):
    """Same config and seed give byte-identical outputs across repeat runs and
    worker counts (wall-clock stamps aside); replay confirms zero drift."""
    corpus = tmp_path / "corpus"
    write_demo_corpus(corpus, count=4, height=48, width=48, seed=21)
    ga = GaConfig(population_size=12, max_generations=8, master_seed=42)

    outs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / name
        cmd_attack(CampaignConfig(dataset_root=corpus, out_root=out, ga=ga,
                                  parallel_workers=workers), quiet=True)
        outs.append(out)

    reference_lines = _normalized_manifest_lines(outs[0] / "manifest.jsonl")
    reference_tree = _png_tree(outs[0])
    for out in outs[1:]:
        assert _normalized_manifest_lines(out / "manifest.jsonl") == reference_lines
        assert _png_tree(out) == reference_tree
        assert manifest_differences(load_manifest(outs[0] / "manifest.jsonl"),
                                    load_manifest(out / "manifest.jsonl")) == []

    report = cmd_replay(outs[0] / "manifest.jsonl", corpus)
    assert report.checked == 4 and report.verified == 4


def test_wilcoxon_enumeration_and_effect_size_properties():
    """Exact signed-rank p-values equal full enumeration for n <= 10; the
    textbook 5-pair fixture gives p = 0.0625; antisymmetry and Cohen's d
    invariances hold to 1e-12."""
    rng = np.random.default_rng(99)
    for n in range(1, 11):
        for _ in range(12):
            diffs = rng.integers(-8, 9, size=n).astype(np.float64)
            diffs += np.where(diffs == 0, 0.0, rng.choice((0.0, 0.5), size=n))
            if not np.any(diffs != 0.0):
                diffs[0] = 1.0
            # max(d,0)/max(-d,0) reproduces each difference exactly in floats
            pairs = PairedSamples(a=tuple(np.maximum(diffs, 0.0)),
                                  b=tuple(np.maximum(-diffs, 0.0)))
            result = wilcoxon_signed_rank(pairs, mode_policy="exact")
            w_ref, p_ref = wilcoxon_by_enumeration(diffs)
            assert result.statistic == pytest.approx(w_ref, abs=1e-12)
            assert result.p_value == pytest.approx(p_ref, abs=1e-12)

            flipped = wilcoxon_signed_rank(pairs.swapped(), mode_policy="exact")
            n_eff = result.n_effective
            assert flipped.statistic == pytest.approx(
                n_eff * (n_eff + 1) / 2.0 - result.statistic, abs=1e-12)
            assert flipped.p_value == result.p_value

    five = wilcoxon_signed_rank(
        PairedSamples(a=(1.0, 2.0, 3.0, 4.0, 5.0), b=(1.5, 2.5, 3.5, 4.5, 5.5)),
        mode_policy="exact")
    assert five.statistic == 0.0
    assert five.p_value == 0.0625

    x = rng.normal(0.0, 1.0, size=30)
    y = rng.normal(0.7, 1.2, size=30)
    d = cohens_d(x, y)
    assert cohens_d(y, x).d == pytest.approx(-d.d, abs=1e-12)
    assert cohens_d(3.0 * x, 3.0 * y).d == pytest.approx(d.d, abs=1e-12)
    assert cohens_d(x + 5.0, y + 5.0).d == pytest.approx(d.d, abs=1e-12)


def test_frame_codec_round_trips_and_survives_fuzzing():
    """Golden frames re-encode byte-for-byte; 100k fuzzed inputs only ever
    raise ProtocolError."""
    goldens = {
        "request_2x3_rgb.bin": encode_request(
            np.arange(18, dtype=np.uint8).reshape(2, 3, 3)),
        "request_1x1_gray.bin": encode_request(
            np.array([[[200]]], dtype=np.uint8)),
        "response_2x3.bin": encode_response(
            np.array([[0, 1, 2], [3, 500, 65535]], dtype=np.uint16)),
        "error.bin": encode_error("backend unavailable: out of memory ×4"),
    }
    for name, encoded in goldens.items():
        frozen = (FIXTURES / name).read_bytes()
        assert encoded == frozen
        decode_frame(frozen)  # must parse cleanly

    rng = np.random.default_rng(1234)
    valid = list(goldens.values())
    crashes = 0
    for i in range(100_000):
        if i % 2 == 0:
            blob = rng.integers(0, 256, size=int(rng.integers(0, 64))).astype(np.uint8).tobytes()
        else:
            base = bytearray(valid[i % len(valid)])
            op = i % 3
            if op == 0 and base:
                base[int(rng.integers(0, len(base)))] ^= int(rng.integers(1, 256))
            elif op == 1:
                base = base[: int(rng.integers(0, len(base) + 1))]
            else:
                base += bytes([int(rng.integers(0, 256))])
            blob = bytes(base)
        try:
            decode_frame(blob)
        except ProtocolError:
            pass
        except Exception:  # noqa: BLE001 - the whole point of the fuzz
            crashes += 1
    assert crashes == 0


class TestBridgeConformance:
    """The standalone bridge package speaks the same bytes as this toolkit."""

    def test_bridge_codec_reproduces_golden_frames(self):
        codec = pytest.importorskip(
            "segbridge.codec", reason="bridge package not installed")
        assert codec.encode_request(
            np.arange(18, dtype=np.uint8).reshape(2, 3, 3)
        ) == (FIXTURES / "request_2x3_rgb.bin").read_bytes()
        assert codec.encode_response(
            np.array([[0, 1, 2], [3, 500, 65535]], dtype=np.uint16)
        ) == (FIXTURES / "response_2x3.bin").read_bytes()
        assert codec.encode_error(
            "backend unavailable: out of memory ×4"
        ) == (FIXTURES / "error.bin").read_bytes()
        frame = codec.decode_frame((FIXTURES / "request_1x1_gray.bin").read_bytes())
        assert frame.pixels.shape == (1, 1, 1) and frame.pixels[0, 0, 0] == 200

    def test_demo_backend_matches_builtin_segmenter(self):
        demo = pytest.importorskip(
            "segbridge.demo", reason="bridge package not installed")
        segmenter = PaletteSegmenter()
        rng = np.random.default_rng(8)
        backend = demo.DemoSegmenter()
        for _ in range(100):
            h = int(rng.integers(1, 33))
            w = int(rng.integers(1, 33))
            pixels = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
            theirs = backend.segment(pixels)
            ours = segmenter.segment(Image(pixels)).labels
            assert theirs.dtype == np.uint16
            assert np.array_equal(theirs, ours)

    def test_bridged_attack_equals_builtin_attack(self, tmp_path):
        pytest.importorskip("segbridge", reason="bridge package not installed")
        corpus = tmp_path / "corpus"
        write_demo_corpus(corpus, count=3, height=48, width=48, seed=33)
        ga = GaConfig(population_size=10, max_generations=6, master_seed=5)

        builtin = cmd_attack(CampaignConfig(
            dataset_root=corpus, out_root=tmp_path / "builtin", ga=ga), quiet=True)
        bridged = cmd_attack(CampaignConfig(
            dataset_root=corpus, out_root=tmp_path / "bridged", ga=ga,
            oracle=f"cmd:{sys.executable} -m segbridge serve --backend demo",
            oracle_timeout=30.0), quiet=True)

        assert bridged.failures == []
        assert manifest_differences(builtin, bridged, ignore_oracle=True) == []
        assert _png_tree(tmp_path / "builtin") == _png_tree(tmp_path / "bridged")
