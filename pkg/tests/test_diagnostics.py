import numpy as np
import pytest

from aldi.diagnostics import (
    WindowSpec,
    bias,
    pooled_moments,
    spread,
    subspace_residual,
)
from aldi.ensemble import ParticleEnsemble
from aldi.samplers import RunRecord, SamplerConfig, run
from aldi.targets import gaussian_target


def make_record(snapshots, seed=0):
    config = SamplerConfig(family="aldi", step_size=0.01, num_steps=1, seed=seed)
    return RunRecord(
        snapshots=snapshots,
        min_eig_series=[(t, 0.0) for t, _ in snapshots],
        seed=seed,
        config_echo=config,
    )


class TestWindowSpec:
    def test_defaults(self):
        w = WindowSpec()
        assert (w.tau, w.horizon) == (12.0, 8.0)
        assert w.mesh_h == pytest.approx(2 * np.pi / 50)

    def test_validation(self):
        with pytest.raises(ValueError, match="tau"):
            WindowSpec(tau=-1.0)
        with pytest.raises(ValueError, match="horizon"):
            WindowSpec(horizon=0.0)


class TestBiasSpread:
    def test_constant_snapshots_give_pointwise_values(self, rng):
        # for a time-constant ensemble the averages reduce to single-snapshot
        # formulas: bias = |m - truth|^2 and spread = h * trace(C)
        states = rng.standard_normal((3, 5))
        ens = ParticleEnsemble(states)
        times = np.arange(0.0, 4.0 + 1e-12, 0.5)
        record = make_record([(t, ens) for t in times])
        window = WindowSpec(tau=1.0, horizon=2.0, mesh_h=0.25)
        truth = rng.standard_normal(3)
        mean = states.mean(axis=1)
        dev = states - mean[:, None]
        cov = dev @ dev.T / 5
        assert bias(record, truth, window) == pytest.approx(
            float((mean - truth) @ (mean - truth))
        )
        assert spread(record, window) == pytest.approx(0.25 * np.trace(cov))

    def test_left_riemann_average(self, rng):
        # two different snapshots covering the window in equal halves
        e1 = ParticleEnsemble(rng.standard_normal((2, 4)))
        e2 = ParticleEnsemble(rng.standard_normal((2, 4)))
        record = make_record([(0.0, e1), (1.0, e2), (2.0, e1)])
        window = WindowSpec(tau=0.0, horizon=2.0, mesh_h=1.0)
        truth = np.zeros(2)

        def sq(e):
            m = e.states.mean(axis=1)
            return float(m @ m)

        def tr(e):
            d = e.states - e.states.mean(axis=1, keepdims=True)
            return float(np.sum(d * d)) / 4

        assert bias(record, truth, window) == pytest.approx(0.5 * (sq(e1) + sq(e2)))
        assert spread(record, window) == pytest.approx(0.5 * (tr(e1) + tr(e2)))

    def test_record_must_cover_window(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((2, 4)))
        record = make_record([(0.0, ens), (1.0, ens)])
        with pytest.raises(ValueError, match="window"):
            bias(record, np.zeros(2), WindowSpec(tau=0.5, horizon=1.0))

    def test_nonuniform_spacing_rejected(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((2, 4)))
        record = make_record([(0.0, ens), (0.3, ens), (0.4, ens), (2.0, ens)])
        with pytest.raises(ValueError, match="uniform"):
            spread(record, WindowSpec(tau=0.0, horizon=1.0))

    def test_metrics_from_actual_run(self, rng):
        target = gaussian_target(np.zeros(2), np.eye(2))
        initial = ParticleEnsemble(rng.standard_normal((2, 8)))
        config = SamplerConfig(family="aldi", step_size=0.01, num_steps=100, seed=4)
        record = run(initial, config, target, snapshot_stride=1)
        window = WindowSpec(tau=0.5, horizon=0.5, mesh_h=1.0)
        b = bias(record, np.zeros(2), window)
        s = spread(record, window)
        assert b >= 0 and s > 0

    def test_dense_window_recording_suffices(self, rng):
        # stride-100 run with a dense window still yields stride-1 metrics
        target = gaussian_target(np.zeros(2), np.eye(2))
        initial = ParticleEnsemble(rng.standard_normal((2, 8)))
        config = SamplerConfig(family="aldi", step_size=0.01, num_steps=100, seed=4)
        sparse = run(
            initial, config, target, snapshot_stride=100, dense_window=(0.5, 1.0)
        )
        dense = run(initial, config, target, snapshot_stride=1)
        window = WindowSpec(tau=0.5, horizon=0.5, mesh_h=1.0)
        assert bias(sparse, np.zeros(2), window) == pytest.approx(
            bias(dense, np.zeros(2), window)
        )
        assert spread(sparse, window) == pytest.approx(spread(dense, window))


class TestPooledMoments:
    def test_matches_manual_concatenation(self, rng):
        snaps = [(float(t), ParticleEnsemble(rng.standard_normal((2, 3)))) for t in range(5)]
        record = make_record(snaps)
        mean, cov = pooled_moments(record, burn_in_time=2.0)
        pooled = np.concatenate([e.states for t, e in snaps if t >= 2.0], axis=1)
        np.testing.assert_allclose(mean, pooled.mean(axis=1))
        dev = pooled - pooled.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(cov, dev @ dev.T / pooled.shape[1])

    def test_burn_in_past_end_rejected(self, rng):
        snaps = [(float(t), ParticleEnsemble(rng.standard_normal((2, 3)))) for t in range(3)]
        with pytest.raises(ValueError, match="burn_in_time"):
            pooled_moments(make_record(snaps), burn_in_time=5.0)


class TestSubspaceResidual:
    def test_zero_on_subspace(self, rng):
        basis, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        anchor = rng.standard_normal(5)
        coeffs = rng.standard_normal((2, 6))
        ens = ParticleEnsemble(anchor[:, None] + basis @ coeffs)
        assert subspace_residual(ens, basis, anchor) < 1e-12

    def test_measures_offset(self, rng):
        basis = np.eye(3)[:, :2]
        anchor = np.zeros(3)
        states = np.zeros((3, 2))
        states[2, 1] = 0.7
        assert subspace_residual(ParticleEnsemble(states), basis, anchor) == pytest.approx(0.7)

    def test_rejects_non_orthonormal_basis(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((3, 4)))
        with pytest.raises(ValueError, match="orthonormal"):
            subspace_residual(ens, np.ones((3, 2)), np.zeros(3))

    def test_rejects_bad_shapes(self, rng):
        ens = ParticleEnsemble(rng.standard_normal((3, 4)))
        with pytest.raises(ValueError, match="basis"):
            subspace_residual(ens, np.eye(4)[:, :2], np.zeros(3))
