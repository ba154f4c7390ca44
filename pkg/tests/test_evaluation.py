"""Error metrics against the strong reference, reconstruction, diagnostics.

The baseline columns have a closed form for the linear example (the gap
between x0 + sigma W and the Ornstein-Uhlenbeck solution is Gaussian with
computable variance); those values are frozen here and checked at Monte
Carlo tolerance.
"""

import io
import types

import numpy as np
import pytest

from spinn.evaluation import (
    baseline_predictor,
    err_metrics,
    reconstruct_x,
    trajectory_dump,
    write_error_csv,
)
from spinn.paths import TimeGrid, Wiener, derive_seed, sample_levy_path, subsample_path
from spinn.sde import LinearMeanReversion, SdeSpec
from spinn.solvers import euler_maruyama_stack
from spinn.training import TrainConfig, train

# closed-form errors of the no-training predictor x0 + sigma W for Example 1:
#   E|gap(t)|^2 = 0.49 (1 - e^{-5t})^2 + 0.3721 * int_0^t (1 - e^{-5u})^2 du
BASELINE_ERR_TIME = 0.6667720800565703
BASELINE_ERR_TERMINAL = 0.8630702431473566


def example1():
    return SdeSpec(LinearMeanReversion(5.0, 0.4), 0.61, -0.3, 1.0, Wiener(1))


@pytest.fixture(scope="module")
def tiny_model():
    cfg = TrainConfig(
        sde=example1(), grid=TimeGrid(8, 1.0), epochs=2, batch_size=4, seed=5, width_cap=8
    )
    return train(cfg)


def metric_shell(n=512):
    """err_metrics only needs .sde and .grid when a predict_fn is supplied."""
    return types.SimpleNamespace(sde=example1(), grid=TimeGrid(n, 1.0))


class TestErrMetrics:
    def test_feeding_the_reference_back_gives_zero(self):
        report = err_metrics(
            metric_shell(64),
            paths=6,
            seed=11,
            ref_exponent=10,
            predict_fn=lambda ts, feats, l, x_ref: x_ref,
        )
        assert report.err_time == 0.0
        assert report.err_terminal == 0.0
        assert report.baseline_err_time > 0.0
        assert report.baseline_err_terminal > 0.0

    def test_aggregates_match_per_path_arrays(self, tiny_model):
        report = err_metrics(tiny_model, paths=7, seed=3, ref_exponent=10)
        assert report.err_time == pytest.approx(
            np.sqrt(report.per_path_time_sq.mean()), rel=1e-12
        )
        assert report.err_terminal == pytest.approx(
            np.sqrt(report.per_path_terminal_sq.mean()), rel=1e-12
        )
        assert report.paths == 7 == report.per_path_time_sq.size
        assert report.n == tiny_model.grid.n

    def test_chunk_size_does_not_change_anything(self, tiny_model):
        a = err_metrics(tiny_model, paths=10, seed=4, ref_exponent=10, chunk_size=3)
        b = err_metrics(tiny_model, paths=10, seed=4, ref_exponent=10, chunk_size=64)
        assert a.err_time == b.err_time
        assert a.err_terminal == b.err_terminal
        assert a.baseline_err_time == b.baseline_err_time
        np.testing.assert_array_equal(a.per_path_time_sq, b.per_path_time_sq)

    def test_per_path_contribution_matches_documented_formula(self, tiny_model):
        """Replicate path 0 of the report by hand from the public pieces."""
        seed = 21
        report = err_metrics(tiny_model, paths=3, seed=seed, ref_exponent=10)
        sde = tiny_model.sde
        ref_grid = TimeGrid(1024, 1.0)
        fine = sample_levy_path(sde.noise, ref_grid, derive_seed(seed, 0))
        keep = np.arange(0, 1025, 1024 // 8)
        x_ref = euler_maruyama_stack(sde, fine.values[None], ref_grid, keep=keep)[0]
        mesh = subsample_path(fine, tiny_model.grid)
        x_model = tiny_model.predict_values(tiny_model.grid.points, mesh) + mesh.values @ sde.sigma.T
        gap_sq = np.sum((x_model - x_ref) ** 2, axis=1)
        assert report.per_path_time_sq[0] == pytest.approx((1.0 / 8) * gap_sq[1:].sum(), rel=1e-12)
        assert report.per_path_terminal_sq[0] == pytest.approx(gap_sq[-1], rel=1e-12)

    def test_baseline_matches_closed_form(self):
        """Frozen oracle; Monte Carlo tolerance ~3 standard errors at M=3000."""
        report = err_metrics(
            metric_shell(512),
            paths=3000,
            seed=2,
            ref_exponent=12,
            chunk_size=512,
            predict_fn=lambda ts, feats, l_eval, x_ref: example1().x0 + l_eval @ example1().sigma.T,
        )
        assert report.baseline_err_time == pytest.approx(BASELINE_ERR_TIME, rel=0.035)
        assert report.baseline_err_terminal == pytest.approx(BASELINE_ERR_TERMINAL, rel=0.035)
        # the fed-in predictor IS the baseline, so the model columns agree exactly
        assert report.err_time == report.baseline_err_time
        assert report.err_terminal == report.baseline_err_terminal

    def test_coarser_evaluation_grid(self, tiny_model):
        report = err_metrics(
            tiny_model, paths=4, seed=9, eval_grid=TimeGrid(4, 1.0), ref_exponent=10
        )
        assert report.n == 4
        assert np.isfinite(report.err_time)

    def test_rejects_grids_outside_the_reference_mesh(self, tiny_model):
        with pytest.raises(ValueError, match="does not divide"):
            err_metrics(tiny_model, paths=2, seed=0, eval_grid=TimeGrid(2048, 1.0), ref_exponent=10)

    def test_rejects_information_mesh_finer_than_reference(self):
        shell = metric_shell(2048)
        with pytest.raises(ValueError, match="does not divide"):
            err_metrics(shell, paths=2, seed=0, ref_exponent=10, predict_fn=lambda *a: a[-1])


class TestReconstruction:
    def test_mesh_point_reconstruction(self, tiny_model):
        sde = tiny_model.sde
        path = sample_levy_path(sde.noise, tiny_model.grid, seed=31)
        t = tiny_model.grid.points[3]
        got = reconstruct_x(tiny_model, path, t)
        want = tiny_model.predict_values(np.array([t]), path)[0] + sde.sigma @ path.values[3]
        np.testing.assert_array_equal(got, want)

    def test_starts_at_x0(self, tiny_model):
        path = sample_levy_path(tiny_model.sde.noise, tiny_model.grid, seed=32)
        np.testing.assert_allclose(reconstruct_x(tiny_model, path, 0.0), [-0.3], atol=1e-7)

    def test_off_mesh_needs_opt_in(self, tiny_model):
        path = sample_levy_path(tiny_model.sde.noise, tiny_model.grid, seed=33)
        with pytest.raises(ValueError, match="interpolate"):
            reconstruct_x(tiny_model, path, 0.0625)

    def test_off_mesh_uses_bridge_mean_noise(self, tiny_model):
        sde = tiny_model.sde
        path = sample_levy_path(sde.noise, tiny_model.grid, seed=34)
        t = 0.1875  # halfway between mesh points 1/8 and 2/8
        got = reconstruct_x(tiny_model, path, t, interpolate=True)
        l_mid = 0.5 * (path.values[1] + path.values[2])
        want = tiny_model.predict_values(np.array([t]), path)[0] + sde.sigma @ l_mid
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_wrong_mesh_rejected(self, tiny_model):
        path = sample_levy_path(tiny_model.sde.noise, TimeGrid(16, 1.0), seed=35)
        with pytest.raises(ValueError, match="mesh"):
            reconstruct_x(tiny_model, path, 0.5)

    def test_baseline_predictor_values(self):
        sde = example1()
        path = sample_levy_path(sde.noise, TimeGrid(8, 1.0), seed=36)
        t = path.grid.points[5]
        want = sde.x0 + sde.sigma @ path.values[5]
        np.testing.assert_array_equal(baseline_predictor(sde, path, t), want)
        np.testing.assert_allclose(baseline_predictor(sde, path, 0.0), [-0.3], rtol=1e-15)
        with pytest.raises(ValueError, match="interpolate"):
            baseline_predictor(sde, path, 0.3)


class TestReportFiles:
    def test_error_csv_round_trips(self, tiny_model):
        report = err_metrics(tiny_model, paths=3, seed=8, ref_exponent=10)
        buf = io.StringIO()
        write_error_csv(report, buf)
        lines = buf.getvalue().strip().split("\n")
        assert lines[0] == "# seed=8"
        assert lines[1] == "n,M,err_time,err_terminal,baseline_err_time,baseline_err_terminal"
        fields = lines[2].split(",")
        assert int(fields[0]) == report.n
        assert int(fields[1]) == 3
        assert float(fields[2]) == report.err_time
        assert float(fields[5]) == report.baseline_err_terminal

    def test_trajectory_dump_columns(self, tiny_model):
        buf = io.StringIO()
        trajectory_dump(tiny_model, path_index=2, seed=13, stream=buf)
        lines = buf.getvalue().strip().split("\n")
        assert lines[0] == "# seed=13 path=2"
        assert lines[1] == "t,f_expected,dn_dt,x_model,x_ref"
        assert len(lines) == 2 + tiny_model.grid.n + 1
        first = [float(v) for v in lines[2].split(",")]
        # at t = 0 the head pins everything: dn/dt = f(0, x0, 0) and both
        # trajectories start at x0 (single-precision network, so ~1e-7)
        assert first[0] == 0.0
        assert first[1] == pytest.approx(first[2], rel=1e-6)  # f_expected == dn_dt
        assert first[3] == pytest.approx(-0.3, abs=1e-7)
        assert first[4] == pytest.approx(-0.3, abs=1e-15)
        last = [float(v) for v in lines[-1].split(",")]
        assert last[0] == 1.0

    def test_trajectory_dump_reproducible(self, tiny_model):
        a, b = io.StringIO(), io.StringIO()
        trajectory_dump(tiny_model, 0, 5, a)
        trajectory_dump(tiny_model, 0, 5, b)
        assert a.getvalue() == b.getvalue()
