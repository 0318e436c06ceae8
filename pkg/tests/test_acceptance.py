"""Acceptance suite: one test per release criterion, each at its stated
tolerance, each printing a PASS/FAIL line (run with ``pytest -s`` to see
the lines as they happen).
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

import factories
import oracles
from test_tensor_ops import random_conv_case

from scorecam.engine import score_masked_batch, scorecam
from scorecam.evaluate import (
    average_drop,
    average_increase,
    deletion_curve,
    energy_pointing,
    insertion_curve,
)
from scorecam.formats import load_image, load_model, save_model, write_pgm, write_ppm
from scorecam.model import graphs_equal
from scorecam.sanity import cascading_test
from scorecam.tensor_ops import (
    bilinear_resize,
    conv2d,
    dense,
    maxpool2d,
    minmax_normalize,
    softmax,
)


@contextmanager
def criterion(number, description):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE FAIL [{number:02d}] {description}")
        raise
    print(f"ACCEPTANCE PASS [{number:02d}] {description}")


def test_c01_kernel_oracle_suite():
    """Each kernel matches its naive oracle on 1000 random small instances
    (dims <= 8) to 1e-5 absolute, in under 30 seconds total."""
    with criterion(1, "kernel oracles: 6 kernels x 1000 randomized instances, atol 1e-5, <30s"):
        started = time.perf_counter()
        rng = np.random.default_rng(2024)

        for _ in range(1000):
            x, spec = random_conv_case(rng)
            np.testing.assert_allclose(conv2d(x, spec), oracles.conv2d_scalar(x, spec), atol=1e-5)

        for _ in range(1000):
            k, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            x = rng.normal(0, 1, d).astype(np.float32)
            w = rng.normal(0, 1, (k, d)).astype(np.float32)
            b = rng.normal(0, 1, k).astype(np.float32)
            np.testing.assert_allclose(dense(x, w, b), oracles.dense_scalar(x, w, b), atol=1e-5)

        for _ in range(1000):
            window = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 4))
            c = int(rng.integers(1, 4))
            h = int(rng.integers(window, 9))
            w = int(rng.integers(window, 9))
            x = rng.normal(0, 1, (c, h, w)).astype(np.float32)
            np.testing.assert_allclose(
                maxpool2d(x, window, stride), oracles.maxpool2d_scalar(x, window, stride), atol=1e-5
            )

        for _ in range(1000):
            c = int(rng.integers(1, 3))
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            th, tw = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            x = rng.normal(0, 1, (c, h, w)).astype(np.float32)
            got = bilinear_resize(x, th, tw)
            for ci in range(c):
                np.testing.assert_allclose(got[ci], oracles.bilinear_scalar(x[ci], th, tw), atol=1e-5)

        for _ in range(1000):
            x = rng.normal(0, 4, int(rng.integers(1, 9))).astype(np.float32)
            np.testing.assert_allclose(softmax(x), oracles.softmax_direct(x), atol=1e-5)

        for _ in range(1000):
            rank = int(rng.integers(1, 4))
            shape = tuple(int(rng.integers(1, 9)) for _ in range(rank))
            x = rng.normal(0, 2, shape).astype(np.float32)
            if rng.random() < 0.1:
                x = np.full(shape, float(rng.normal()), np.float32)
            np.testing.assert_allclose(minmax_normalize(x), oracles.minmax_scan(x), atol=1e-5)

        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"kernel oracle suite took {elapsed:.1f}s"


def test_c02_end_to_end_matches_straight_line_reference():
    """On the bundled small CNN the full pipeline agrees with an independent
    straight-line transcription to 1e-6 per pixel and runs in under 1s."""
    with criterion(2, "end-to-end map matches straight-line reference to 1e-6/pixel, <1s"):
        model = factories.make_tiny_cnn()
        x = np.random.default_rng(2).normal(0, 1, (3, 32, 32)).astype(np.float32)
        layer = model.last_conv_index
        assert model.output_shapes[layer][0] <= 16

        started = time.perf_counter()
        saliency = scorecam(model, x, target_layer=layer, target_class=4)
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0, f"saliency computation took {elapsed:.2f}s"

        reference = oracles.scorecam_reference(model, x, layer, 4)
        np.testing.assert_allclose(saliency.values[0], reference, atol=1e-6)


def test_c03_weights_always_sum_to_one():
    """Channel weights sum to 1 within 1e-6 on every run."""
    with criterion(3, "channel weights sum to 1 +/- 1e-6 across 50 random models"):
        for seed in range(50):
            model = factories.make_random_cnn(seed)
            x = factories.random_input(seed + 1000)
            saliency = scorecam(model, x, target_class=seed % model.class_count)
            assert abs(float(saliency.meta["weights"].sum()) - 1.0) <= 1e-6


def test_c04_baseline_offset_invariance():
    """Weights and final maps agree to 1e-6 with and without the baseline
    subtraction, across 50 randomized models and inputs."""
    with criterion(4, "baseline-offset invariance of weights and maps (1e-6, 50 models)"):
        for seed in range(50):
            model = factories.make_random_cnn(seed)
            x = factories.random_input(seed + 2000)
            cls = seed % model.class_count
            with_sub = scorecam(model, x, target_class=cls, subtract_baseline=True)
            without = scorecam(model, x, target_class=cls, subtract_baseline=False)
            np.testing.assert_allclose(
                with_sub.meta["weights"], without.meta["weights"], atol=1e-6
            )
            np.testing.assert_allclose(with_sub.values, without.values, atol=1e-6)


def test_c05_batch_and_worker_invariance():
    """Raw channel scores and final maps are identical across batch sizes
    {1, 4, K} and worker counts {1, 4}."""
    with criterion(5, "batch sizes {1,4,K} and workers {1,4} leave scores and maps unchanged"):
        model = factories.make_random_cnn(7, channels=6)
        x = factories.random_input(77)
        from scorecam.engine import build_masks, forward_with_capture

        capture = forward_with_capture(model, x, model.last_conv_index)
        masks = build_masks(capture.activation, 8, 8)
        k = masks.shape[0]
        reference_raw = None
        reference_map = None
        for batch_size in (1, 4, k):
            for workers in (1, 4):
                raw = score_masked_batch(
                    model, x, masks, 2, batch_size=batch_size, n_workers=workers
                )
                saliency = scorecam(
                    model, x, target_class=2, batch_size=batch_size, n_workers=workers
                )
                if reference_raw is None:
                    reference_raw, reference_map = raw, saliency.values
                np.testing.assert_array_equal(raw, reference_raw)
                np.testing.assert_array_equal(saliency.values, reference_map)


def test_c06_localization_on_known_regions():
    """Across 20 seeded region instances the map concentrates in the true
    region: its energy share beats the region's area share in >= 18, and
    the pointing score exceeds 0.5 in >= 18."""
    with criterion(6, "localization beats uniform in >=18/20 and pointing > 0.5 in >=18/20"):
        beats_area = 0
        beats_half = 0
        for seed in range(20):
            model, x, region = factories.make_region_instance(seed)
            saliency = scorecam(model, x, target_class=0)
            proportion = energy_pointing(saliency, region)
            _, _, rw, rh = region
            if proportion > rw * rh / 256:
                beats_area += 1
            if proportion > 0.5:
                beats_half += 1
        assert beats_area >= 18, f"beat uniform only {beats_area}/20 times"
        assert beats_half >= 18, f"pointing > 0.5 only {beats_half}/20 times"


def test_c07_curve_directionality_and_endpoints():
    """The map's deletion AUC undercuts (and insertion AUC exceeds) a
    random permutation of itself in >= 18/20 seeded trials; all curve
    endpoints equal the unperturbed / zero-image probabilities exactly."""
    with criterion(7, "curves beat permuted saliency >=18/20; endpoints exact"):
        deletion_wins = 0
        insertion_wins = 0
        for seed in range(20):
            model, x, _ = factories.make_region_instance(seed)
            saliency = scorecam(model, x, target_class=0)
            values = saliency.values[0]
            perm = np.random.default_rng(seed + 500).permutation(values.reshape(-1))
            permuted = perm.reshape(values.shape)

            del_cam = deletion_curve(model, x, values, 0)
            del_perm = deletion_curve(model, x, permuted, 0)
            ins_cam = insertion_curve(model, x, values, 0)
            ins_perm = insertion_curve(model, x, permuted, 0)

            full = float(model.run(x).probabilities[0])
            blank = float(model.run(np.zeros_like(x)).probabilities[0])
            assert del_cam.probabilities[0] == full
            assert del_cam.probabilities[-1] == blank
            assert ins_cam.probabilities[0] == blank
            assert ins_cam.probabilities[-1] == full

            if del_cam.auc < del_perm.auc:
                deletion_wins += 1
            if ins_cam.auc > ins_perm.auc:
                insertion_wins += 1
        assert deletion_wins >= 18, f"deletion won only {deletion_wins}/20"
        assert insertion_wins >= 18, f"insertion won only {insertion_wins}/20"


def test_c08_class_discrimination_left_right():
    """On a model whose class 0 reads only the left half and class 1 only
    the right, the class maps separate accordingly for 10/10 seeds under
    post-softmax scoring."""
    with criterion(8, "class-0 map favors left half, class-1 map right half, 10/10 seeds"):
        model = factories.make_split_model(16, 16)
        for seed in range(10):
            x = factories.split_input(16, 16, np.random.default_rng(seed), noise=0.05)
            left_map = scorecam(model, x, target_class=0, score_mode="post_softmax").values[0]
            right_map = scorecam(model, x, target_class=1, score_mode="post_softmax").values[0]
            assert float(left_map[:, :8].sum()) > float(left_map[:, 8:].sum())
            assert float(right_map[:, 8:].sum()) > float(right_map[:, :8].sum())


def test_c09_randomization_sanity_check():
    """Cascading weight randomization destroys the map's rank structure:
    final-stage Spearman similarity < 0.9 for >= 4/5 seeds, and stage 0 is
    exactly 1.0."""
    with criterion(9, "full randomization drops similarity below 0.9 in >=4/5 seeds"):
        model, x, _ = factories.make_region_instance(100)
        broken = 0
        for seed in range(5):
            report = cascading_test(model, x, seed=seed, target_class=0)
            assert report.stages[0].similarity == 1.0
            if report.stages[-1].similarity < 0.9:
                broken += 1
        assert broken >= 4, f"similarity dropped below 0.9 in only {broken}/5 seeds"


def test_c10_format_round_trips(tmp_path):
    """Model files round-trip byte-exactly; image writers quantize exactly
    as documented (round-half-up on 255*v)."""
    with criterion(10, "model save/load byte-exact; PGM/PPM payloads match quantization"):
        for seed in range(3):
            model = factories.make_random_cnn(seed)
            first = tmp_path / f"m{seed}a.scam"
            second = tmp_path / f"m{seed}b.scam"
            save_model(model, first)
            loaded = load_model(first)
            assert graphs_equal(model, loaded)
            save_model(loaded, second)
            assert first.read_bytes() == second.read_bytes()

        rng = np.random.default_rng(10)
        gray = rng.random((5, 7)).astype(np.float32)
        pgm = tmp_path / "map.pgm"
        write_pgm(gray, pgm)
        payload = pgm.read_bytes().split(b"\n255\n", 1)[1]
        expected = np.floor(gray.astype(np.float64) * 255 + 0.5).astype(np.uint8)
        assert payload == expected.tobytes()

        pixels = rng.random((3, 4, 6)).astype(np.float32)
        ppm = tmp_path / "img.ppm"
        write_ppm(pixels, ppm)
        back = load_image(ppm).pixels
        expected = np.floor(pixels.astype(np.float64) * 255 + 0.5) / 255
        np.testing.assert_allclose(back, expected, atol=1e-7)


def test_c11_recognition_metric_arithmetic():
    """Drop/increase reproduce hand-computed values exactly on a four-image
    fixture."""
    with criterion(11, "average drop/increase match hand-computed fixture exactly"):
        assert average_drop([(0.8, 0.4)]) == 50.0
        pairs = [(0.8, 0.4), (0.5, 0.5), (0.4, 0.8), (1.0, 0.25)]
        # drops: 50, 0, 0 (clamped), 75 -> mean 31.25; one increase of four
        assert average_drop(pairs) == 31.25
        assert average_increase(pairs) == 25.0
