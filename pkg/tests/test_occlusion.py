import numpy as np
import pytest

from domainness.classifier import TrainConfig, train_binary
from domainness.errors import DataError
from domainness.extractor import BuiltinExtractor, builtin_extract
from domainness.occlusion import (
    MapConfig,
    accumulate_map,
    build_map,
    discrepancy,
    make_grid,
    occlude,
    rescale_map,
)

EX = BuiltinExtractor()


def oracle_map(img, u, patch, stride, fill):
    """Brute-force per-pixel reference: loop pixels, average covering occluders."""
    h, w = img.shape[:2]
    grid = make_grid(h, w, patch, stride)
    f_orig = builtin_extract(img)
    dvals = []
    for pos in grid.positions:
        f_occ = builtin_extract(occlude(img, pos, patch, fill))
        dvals.append(discrepancy(f_orig, f_occ, u))
    raw = np.zeros((h, w))
    covered = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            hits = [
                d for (r, c), d in zip(grid.positions, dvals)
                if r <= i < r + patch and c <= j < c + patch
            ]
            if hits:
                raw[i, j] = np.mean(hits)
                covered[i, j] = True
    vals = raw[covered]
    scores = np.zeros((h, w))
    if covered.any() and vals.max() > vals.min():
        scores[covered] = (raw[covered] - vals.min()) / (vals.max() - vals.min())
    return raw, covered, scores


def train_toy_domain_model(rng, dim=224):
    X = rng.standard_normal((20, dim))
    y = np.repeat([0.0, 1.0], 10)
    return train_binary(X, y, TrainConfig(epochs=30))


class TestMakeGrid:
    def test_canonical_961_positions(self):
        grid = make_grid(256, 256, 16, 8)
        assert len(grid.positions) == 961
        assert grid.positions[0] == (0, 0)
        assert grid.positions[-1] == (240, 240)

    def test_single_position(self):
        assert make_grid(16, 16, 16, 8).positions == [(0, 0)]

    def test_floor_arithmetic(self):
        assert make_grid(17, 16, 16, 8).positions == [(0, 0)]
        assert make_grid(24, 16, 16, 8).positions == [(0, 0), (8, 0)]

    def test_patch_too_large(self):
        with pytest.raises(DataError, match="exceeds"):
            make_grid(15, 32, 16, 8)


class TestOcclude:
    def test_fill_equal_to_region_is_identity(self):
        img = np.full((16, 16, 3), 0.25)
        out = occlude(img, (0, 0), 8, (0.25, 0.25, 0.25))
        assert np.array_equal(out, img)

    def test_whole_image_occlusion(self):
        rng = np.random.default_rng(0)
        img = rng.random((16, 16, 3))
        out = occlude(img, (0, 0), 16, (0.5, 0.5, 0.5))
        assert np.all(out == 0.5)

    def test_locality(self):
        rng = np.random.default_rng(1)
        img = rng.random((32, 32, 3))
        a = occlude(img, (0, 0), 8, (0.0, 0.0, 0.0))
        b = occlude(img, (16, 16), 8, (0.0, 0.0, 0.0))
        assert np.sum(np.any(a != img, axis=2)) == 64
        assert np.sum(np.any(b != img, axis=2)) == 64

    def test_out_of_bounds(self):
        with pytest.raises(DataError, match="out of bounds"):
            occlude(np.zeros((16, 16, 3)), (10, 0), 8, (0, 0, 0))


class TestDiscrepancy:
    def test_identical_features_zero(self):
        f = np.array([0.3, 0.7, 0.1])
        assert discrepancy(f, f, np.ones(3)) == 0.0

    def test_unit_difference(self):
        assert discrepancy(np.array([1.0, 0.0]), np.zeros(2), np.ones(2)) == 1.0

    def test_three_four_five(self):
        assert discrepancy(np.array([3.0, 4.0]), np.zeros(2), np.ones(2)) == 5.0

    def test_weighting(self):
        d = discrepancy(np.array([1.0, 1.0]), np.zeros(2), np.array([0.0, 2.0]))
        assert d == 2.0

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            discrepancy(np.zeros(3), np.zeros(4), np.ones(3))


class TestRescale:
    def test_affine_rescale(self):
        raw = np.array([[0.2, 0.4, 0.6]])
        out = rescale_map(raw, np.ones_like(raw, dtype=bool))
        np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]], atol=1e-12)

    def test_degenerate_zeroed(self):
        raw = np.full((2, 2), 0.8)
        out = rescale_map(raw, np.ones((2, 2), dtype=bool))
        assert np.all(out == 0.0)

    def test_uncovered_stays_zero(self):
        raw = np.array([[0.5, 0.0], [1.0, 0.0]])
        covered = np.array([[True, False], [True, False]])
        out = rescale_map(raw, covered)
        assert out[0, 1] == 0.0 and out[1, 1] == 0.0
        assert out[0, 0] == 0.0 and out[1, 0] == 1.0


class TestBuildMap:
    def test_matches_bruteforce_oracle_weighted(self):
        rng = np.random.default_rng(2)
        model = train_toy_domain_model(rng)
        for trial in range(4):
            h = int(rng.integers(24, 49))
            w = int(rng.integers(24, 49))
            img = rng.integers(0, 256, size=(h, w, 3)).astype(np.float64) / 255.0
            fill = tuple(rng.random(3))
            cfg = MapConfig(patch=16, stride=8, fill=fill, weighting="abs-w")
            got = build_map(img, EX, model, cfg).astype(np.float64)
            from domainness.classifier import domain_weighting
            _, _, want = oracle_map(img, domain_weighting(model), 16, 8, fill)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_matches_bruteforce_oracle_unweighted(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(24, 24, 3)).astype(np.float64) / 255.0
        fill = (0.5, 0.5, 0.5)
        cfg = MapConfig(patch=16, stride=8, fill=fill, weighting="none")
        got = build_map(img, EX, None, cfg).astype(np.float64)
        raw, covered, want = oracle_map(img, np.ones(224), 16, 8, fill)
        np.testing.assert_allclose(got, want, atol=1e-6)
        # 24x24, patch 16, stride 8: the center 8x8 is covered by all 4 occluders
        grid = make_grid(24, 24, 16, 8)
        assert len(grid.positions) == 4
        total = np.zeros((24, 24))
        count = np.zeros((24, 24), dtype=int)
        for r, c in grid.positions:
            count[r:r + 16, c:c + 16] += 1
        assert count[8:16, 8:16].min() == 4
        assert count[0, 0] == 1 and count[0, 23] == 1

    def test_image_equal_to_fill_gives_zero_map(self):
        img = np.full((32, 32, 3), 0.5)
        cfg = MapConfig(patch=16, stride=8, fill=(0.5, 0.5, 0.5), weighting="none")
        out = build_map(img, EX, None, cfg)
        assert np.all(out == 0.0)

    def test_single_position_degenerate(self):
        rng = np.random.default_rng(4)
        img = rng.random((16, 16, 3))
        cfg = MapConfig(patch=16, stride=8, fill=(0.0, 0.0, 0.0), weighting="none")
        out = build_map(img, EX, None, cfg)
        assert np.all(out == 0.0)

    def test_scores_in_unit_range_with_extremes(self):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, size=(40, 40, 3)).astype(np.float64) / 255.0
        cfg = MapConfig(patch=16, stride=8, fill=(0.3, 0.3, 0.3), weighting="none")
        out = build_map(img, EX, None, cfg)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.max() == 1.0  # non-degenerate random image

    def test_jobs_do_not_change_bytes(self):
        rng = np.random.default_rng(6)
        model = train_toy_domain_model(rng)
        img = rng.integers(0, 256, size=(48, 40, 3)).astype(np.float64) / 255.0
        cfg = MapConfig(patch=16, stride=8, fill=(0.5, 0.4, 0.3), weighting="abs-w")
        a = build_map(img, EX, model, cfg, jobs=1)
        b = build_map(img, EX, model, cfg, jobs=8)
        assert np.array_equal(a, b)

    def test_fill_matching_pixels_zero_discrepancy(self):
        rng = np.random.default_rng(7)
        img = rng.random((32, 32, 3))
        img[0:16, 0:16, :] = 0.25
        occluded = occlude(img, (0, 0), 16, (0.25, 0.25, 0.25))
        d = discrepancy(builtin_extract(img), builtin_extract(occluded), np.ones(224))
        assert d == 0.0

    def test_uncovered_border_excluded_from_rescale(self):
        # 20x20 with patch 16 stride 8: only position (0,0); cols/rows 16..19 uncovered
        rng = np.random.default_rng(8)
        img = rng.random((20, 20, 3))
        cfg = MapConfig(patch=16, stride=8, fill=(0.9, 0.9, 0.9), weighting="none")
        out = build_map(img, EX, None, cfg)
        assert np.all(out[16:, :] == 0)
        assert np.all(out[:, 16:] == 0)

    def test_stride_validation(self):
        with pytest.raises(DataError, match="stride"):
            build_map(np.zeros((32, 32, 3)), EX, None, MapConfig(patch=8, stride=9, weighting="none"))


class TestAccumulate:
    def test_overlap_average(self):
        grid = make_grid(24, 24, 16, 8)
        d = np.array([1.0, 2.0, 3.0, 4.0])
        raw, covered = accumulate_map(24, 24, grid, d)
        assert covered.all()
        assert raw[0, 0] == 1.0
        assert raw[12, 12] == pytest.approx(2.5)
        assert raw[0, 23] == 2.0
        assert raw[23, 0] == 3.0
