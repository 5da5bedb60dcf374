import numpy as np
import pytest

from domainness import adaptation
from domainness.adaptation import apply_transform, fit_second_order, identity_transform
from domainness.errors import DataError


def population_cov(X):
    c = X - X.mean(axis=0)
    return c.T @ c / X.shape[0]


class TestFit:
    def test_same_samples_identity(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((200, 6))
        t = fit_second_order(X, X, eps=1e-3)
        np.testing.assert_allclose(t.matrix, np.eye(6), atol=1e-8)
        out = apply_transform(t, X)
        np.testing.assert_allclose(out, X, atol=1e-4)

    def test_1d_variance_scaling(self):
        rng = np.random.default_rng(1)
        src = (rng.standard_normal((4000, 1)) * 2.0)
        tgt = rng.standard_normal((4000, 1))
        # relative ridge cancels in 1-D: factor is sqrt(var_t / var_s) exactly
        t = fit_second_order(src, tgt, eps=1e-6)
        want = np.sqrt(population_cov(tgt)[0, 0] / population_cov(src)[0, 0])
        assert t.matrix[0, 0] == pytest.approx(want, rel=1e-6)
        assert t.matrix[0, 0] == pytest.approx(0.5, abs=0.05)

    def test_5d_covariance_match(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((5, 5))
        B = rng.standard_normal((5, 5))
        src = rng.standard_normal((500, 5)) @ A + 2.0
        tgt = rng.standard_normal((500, 5)) @ B - 1.0
        t = fit_second_order(src, tgt, eps=1e-3)
        moved = apply_transform(t, src)
        Ct = population_cov(tgt)
        Cm = population_cov(moved)
        rel = np.linalg.norm(Cm - Ct) / np.linalg.norm(Ct)
        assert rel <= 0.1
        np.testing.assert_allclose(moved.mean(axis=0), tgt.mean(axis=0), atol=1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        src = rng.standard_normal((50, 4))
        tgt = rng.standard_normal((60, 4))
        t1 = fit_second_order(src, tgt)
        t2 = fit_second_order(src.copy(), tgt.copy())
        assert np.array_equal(t1.matrix, t2.matrix)

    def test_errors(self):
        with pytest.raises(DataError, match="dim mismatch"):
            fit_second_order(np.zeros((5, 3)), np.zeros((5, 4)))
        with pytest.raises(DataError, match="2 samples"):
            fit_second_order(np.zeros((1, 3)), np.zeros((5, 3)))
        with pytest.raises(DataError, match="eps"):
            fit_second_order(np.zeros((5, 3)), np.zeros((5, 3)), eps=0.0)


class TestApply:
    def test_identity_unchanged(self):
        rng = np.random.default_rng(4)
        f = rng.standard_normal(7)
        t = identity_transform(7)
        assert np.array_equal(apply_transform(t, f), f)

    def test_source_mean_maps_to_target_mean(self):
        rng = np.random.default_rng(5)
        src = rng.standard_normal((100, 3)) + 5.0
        tgt = rng.standard_normal((100, 3)) - 2.0
        t = fit_second_order(src, tgt)
        out = apply_transform(t, src.mean(axis=0))
        np.testing.assert_allclose(out, tgt.mean(axis=0), atol=1e-10)

    def test_affine_superposition(self):
        rng = np.random.default_rng(6)
        src = rng.standard_normal((50, 4))
        tgt = rng.standard_normal((50, 4)) * 2
        t = fit_second_order(src, tgt)
        f, g = rng.standard_normal(4), rng.standard_normal(4)
        for alpha in (0.0, 0.25, 0.8, 1.0):
            lhs = apply_transform(t, alpha * f + (1 - alpha) * g)
            rhs = alpha * apply_transform(t, f) + (1 - alpha) * apply_transform(t, g)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            apply_transform(identity_transform(3), np.zeros(5))


class TestIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        src = rng.standard_normal((40, 3))
        tgt = rng.standard_normal((40, 3))
        t = fit_second_order(src, tgt)
        p = tmp_path / "t.atfm"
        adaptation.save(t, p)
        again = adaptation.load(p)
        assert again.kind == "second-order"
        np.testing.assert_allclose(again.matrix, t.matrix, atol=1e-5)
        f = rng.standard_normal(3)
        np.testing.assert_allclose(apply_transform(again, f), apply_transform(t, f), atol=1e-4)
