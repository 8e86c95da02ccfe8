import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aldi.ensemble import (
    AffineMap,
    ParticleEnsemble,
    apply_affine,
    cross_covariance,
    empirical_mean,
    empirical_stats,
    min_eigenvalue_sym,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def state_matrices(max_d=5, max_n=7):
    return st.tuples(
        st.integers(1, max_d), st.integers(1, max_n)
    ).flatmap(lambda dn: arrays(np.float64, dn, elements=finite))


class TestParticleEnsemble:
    def test_shape_and_dims(self):
        ens = ParticleEnsemble(np.arange(6.0).reshape(2, 3))
        assert (ens.dim_d, ens.dim_n) == (2, 3)

    @pytest.mark.parametrize("bad", [np.zeros(3), np.zeros((2, 3, 1)), np.zeros((0, 3))])
    def test_rejects_bad_shapes(self, bad):
        with pytest.raises(ValueError):
            ParticleEnsemble(bad)

    def test_rejects_non_finite(self):
        states = np.ones((2, 3))
        states[1, 2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ParticleEnsemble(states)

    def test_coerces_to_float(self):
        ens = ParticleEnsemble(np.array([[1, 2], [3, 4]]))
        assert ens.states.dtype == np.float64


class TestEmpiricalStats:
    @given(state_matrices())
    @settings(max_examples=50, deadline=None)
    def test_matches_direct_formulas(self, states):
        ens = ParticleEnsemble(states)
        stats = empirical_stats(ens)
        d, n = states.shape
        mean = states.mean(axis=1)
        dev = states - mean[:, None]
        np.testing.assert_allclose(stats.mean, mean)
        np.testing.assert_allclose(stats.deviations, dev)
        # 1/N covariance convention, matching np.cov with bias=True
        if n > 1:
            np.testing.assert_allclose(
                stats.covariance,
                np.atleast_2d(np.cov(states, bias=True)),
                atol=1e-8 * max(1.0, np.max(np.abs(states)) ** 2),
            )
        np.testing.assert_allclose(
            stats.covariance, dev @ dev.T / n, rtol=1e-12, atol=1e-12
        )

    @given(state_matrices())
    @settings(max_examples=50, deadline=None)
    def test_sqrt_factor_squares_to_covariance(self, states):
        stats = empirical_stats(ParticleEnsemble(states))
        np.testing.assert_allclose(
            stats.sqrt_factor @ stats.sqrt_factor.T,
            stats.covariance,
            rtol=1e-12,
            atol=1e-10 * max(1.0, np.max(np.abs(states)) ** 2),
        )
        assert stats.sqrt_factor.shape == states.shape

    def test_empirical_mean(self, rng):
        states = rng.standard_normal((3, 5))
        np.testing.assert_allclose(
            empirical_mean(ParticleEnsemble(states)), states.mean(axis=1)
        )


class TestCrossCovariance:
    def test_matches_direct_sum(self, rng):
        states = rng.standard_normal((3, 6))
        images = rng.standard_normal((4, 6))
        ens = ParticleEnsemble(states)
        expected = np.zeros((3, 4))
        mu = states.mean(axis=1)
        mg = images.mean(axis=1)
        for i in range(6):
            expected += np.outer(states[:, i] - mu, images[:, i] - mg)
        expected /= 6
        np.testing.assert_allclose(cross_covariance(ens, images), expected, rtol=1e-12)

    def test_affine_images_give_c_gt(self, rng):
        # for affine images g_i = G u_i + c the cross-covariance is exactly C G^T
        states = rng.standard_normal((3, 8))
        g = rng.standard_normal((5, 3))
        ens = ParticleEnsemble(states)
        images = g @ states + rng.standard_normal(5)[:, None]
        stats = empirical_stats(ens)
        np.testing.assert_allclose(
            cross_covariance(ens, images), stats.covariance @ g.T, rtol=1e-10, atol=1e-12
        )

    def test_rejects_mismatched_images(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((3, 6)))
        with pytest.raises(ValueError, match="images"):
            cross_covariance(ens, rng.standard_normal((4, 5)))


class TestAffineMap:
    def test_inverse_roundtrip(self, rng):
        amap = AffineMap(rng.standard_normal((3, 3)) + 3 * np.eye(3), rng.standard_normal(3))
        inv = amap.inverse()
        np.testing.assert_allclose(inv.matrix @ amap.matrix, np.eye(3), atol=1e-12)
        v = rng.standard_normal(3)
        u = amap.matrix @ v + amap.shift
        np.testing.assert_allclose(inv.matrix @ u + inv.shift, v, atol=1e-12)

    def test_rejects_singular(self):
        with pytest.raises(ValueError, match="singular"):
            AffineMap(np.zeros((2, 2)), np.zeros(2))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            AffineMap(np.eye(2), np.zeros(3))
        with pytest.raises(ValueError):
            AffineMap(np.zeros((2, 3)), np.zeros(2))

    def test_apply_affine(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((2, 4)))
        amap = AffineMap(rng.standard_normal((2, 2)) + 2 * np.eye(2), rng.standard_normal(2))
        out = apply_affine(ens, amap)
        np.testing.assert_allclose(
            out.states, amap.matrix @ ens.states + amap.shift[:, None]
        )

    def test_apply_affine_dim_mismatch(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((3, 4)))
        amap = AffineMap(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError, match="dimension"):
            apply_affine(ens, amap)

    def test_covariance_transforms_congruently(self, rng):
        # C(MU + b) = M C(U) M^T, the identity behind affine invariance
        states = rng.standard_normal((3, 7))
        m = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        amap = AffineMap(m, rng.standard_normal(3))
        ens = ParticleEnsemble(states)
        c_before = empirical_stats(ens).covariance
        c_after = empirical_stats(apply_affine(ens, amap)).covariance
        np.testing.assert_allclose(c_after, m @ c_before @ m.T, rtol=1e-10, atol=1e-12)


class TestMinEigenvalueSym:
    def test_matches_eigvalsh(self, rng):
        a = rng.standard_normal((4, 4))
        mat = a @ a.T
        assert min_eigenvalue_sym(mat) == pytest.approx(np.linalg.eigvalsh(mat)[0])

    def test_rejects_asymmetric(self, rng):
        mat = np.eye(3)
        mat[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            min_eigenvalue_sym(mat)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError, match="square"):
            min_eigenvalue_sym(np.zeros((2, 3)))

    def test_zero_matrix(self):
        assert min_eigenvalue_sym(np.zeros((3, 3))) == 0.0
