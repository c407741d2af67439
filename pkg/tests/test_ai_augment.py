"""Surrogate delayed acceptance and the mixture independence proposal."""

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mcmclab.ai_augment import (
    MixtureProposal,
    SurrogateFitError,
    build_surrogate_from_warmup,
    delayed_acceptance_step,
    fit_gmm,
    fit_mixture_from_overdispersed,
    fit_surrogate,
    gaussian_walk_proposal,
    independence_proposal_step,
    refine_surrogate,
    surrogate_as_target,
    surrogate_grid_error,
    surrogate_low_confidence,
    surrogate_predict,
    training_distance,
)
from mcmclab.classic import RwmConfig, rwm_step
from mcmclab.core import CountingTarget, RngStream, make_state, run_chain
from mcmclab.diagnostics import ess
from mcmclab.targets import make_bimodal_mixture, make_standard_gaussian


def lattice_200():
    g14 = np.linspace(-3.0, 3.0, 14)
    pts = np.stack(np.meshgrid(g14, g14), -1).reshape(-1, 2)
    extra = np.array([[1.5, 1.5], [-1.5, 1.5], [1.5, -1.5], [-1.5, -1.5]])
    return np.vstack([pts, extra])


class TestFitSurrogate:
    def test_two_point_linear_interpolation(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([2.0, 5.0])
        model = fit_surrogate(x, y, bandwidth=1.0, ridge=1e-10)
        assert surrogate_predict(model, x[0]) == pytest.approx(2.0, abs=1e-6)
        assert surrogate_predict(model, x[1]) == pytest.approx(5.0, abs=1e-6)

    def test_residual_invariant_holds(self):
        t = make_standard_gaussian(2)
        pts = lattice_200()
        vals = np.array([t.log_density(p) for p in pts])
        model = fit_surrogate(pts, vals, bandwidth=0.8, ridge=1e-4)
        gram_pred = np.array([surrogate_predict(model, p) for p in pts])
        resid = np.max(np.abs(gram_pred - vals))
        assert resid <= 10.0 * model.ridge * np.max(np.abs(vals))

    def test_grid_error_on_gaussian_box(self):
        t = make_standard_gaussian(2)
        pts = lattice_200()
        vals = np.array([t.log_density(p) for p in pts])
        model = fit_surrogate(pts, vals, bandwidth=0.8, ridge=1e-4)
        axis = np.linspace(-3.0, 3.0, 21)
        grid = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
        assert surrogate_grid_error(model, t, grid) < 0.1

    def test_flat_kernel_limit_is_ridge_weighted_mean(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([1.0, 3.0])
        ridge = 0.5
        model = fit_surrogate(x, y, bandwidth=1e8, ridge=ridge)
        expected = (y[0] + y[1]) / (2.0 + ridge)
        assert surrogate_predict(model, np.array([0.4])) == pytest.approx(
            expected, abs=1e-6
        )

    def test_rejects_single_point_and_duplicates(self):
        with pytest.raises(ValueError):
            fit_surrogate(np.array([[0.0]]), np.array([1.0]), 1.0, 1e-6)
        with pytest.raises(ValueError, match="duplicate"):
            fit_surrogate(
                np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]),
                np.array([1.0, 1.0, 2.0]),
                1.0,
                1e-6,
            )

    def test_ill_conditioned_fit_suggests_larger_ridge(self):
        # nearly coincident points at a vanishing ridge
        x = np.array([[0.0], [1e-7], [1.0], [2.0]])
        y = np.array([0.0, 5.0, 1.0, 2.0])
        with pytest.raises(SurrogateFitError, match="ridge"):
            fit_surrogate(x, y, bandwidth=1.0, ridge=1e-14)


class TestSurrogatePredict:
    def _model(self):
        t = make_standard_gaussian(2)
        pts = lattice_200()
        vals = np.array([t.log_density(p) for p in pts])
        return fit_surrogate(pts, vals, bandwidth=0.8, ridge=1e-4)

    def test_far_field_decays_to_zero(self):
        model = self._model()
        far = np.array([80.0, -80.0])
        assert abs(surrogate_predict(model, far)) < 1e-6
        assert surrogate_low_confidence(model, far)
        assert not surrogate_low_confidence(model, np.zeros(2))

    def test_eval_counter_disjoint_from_true_counter(self):
        t = make_standard_gaussian(2)
        counting = CountingTarget(t)
        model = self._model()
        before = model.n_evals
        surrogate_predict(model, np.zeros(2))
        assert model.n_evals == before + 1
        assert counting.n_target_evals == 0

    def test_continuity_spot_check(self):
        model = self._model()
        # SE kernel gradient is bounded by exp(-1/2)/bandwidth per unit weight
        lip = np.sum(np.abs(model.weights)) * math.exp(-0.5) / model.bandwidth
        x = np.array([0.3, -0.7])
        f0 = surrogate_predict(model, x)
        for step in (1e-3, 1e-4):
            delta = np.array([step, -step]) / math.sqrt(2.0)
            f1 = surrogate_predict(model, x + delta)
            assert abs(f1 - f0) <= lip * step * (1.0 + 1e-6) + 1e-12


class _ExactSurrogate:
    """Stub surrogate that equals the true log-density."""

    def __init__(self, target):
        self._target = target
        self.n_evals = 0

    def predict(self, x):
        self.n_evals += 1
        return self._target.log_density(x)


class _ConstantSurrogate:
    def __init__(self, value):
        self._value = value
        self.n_evals = 0

    def predict(self, x):
        self.n_evals += 1
        return self._value


class TestDelayedAcceptance:
    def test_exact_surrogate_second_stage_always_accepts(self):
        t = make_standard_gaussian(2)
        surrogate = _ExactSurrogate(t)
        propose = gaussian_walk_proposal(1.5)
        state = make_state(t, np.zeros(2), with_grad=False)
        rng = RngStream(70, 1)
        n_pass = n_accept = 0
        for _ in range(2000):
            state, info = delayed_acceptance_step(state, propose, surrogate, t, rng)
            n_pass += bool(info.stage1_pass)
            n_accept += info.accepted
        assert n_pass > 0
        assert n_accept == n_pass  # stage-2 ratio is exactly 1

    def test_constant_surrogate_screens_nothing(self):
        t = make_standard_gaussian(2)
        surrogate = _ConstantSurrogate(3.7)
        propose = gaussian_walk_proposal(1.5)
        state = make_state(t, np.zeros(2), with_grad=False)
        rec, _ = run_chain(
            lambda s, r: delayed_acceptance_step(s, propose, surrogate, t, r),
            state, 5000, RngStream(71, 1),
        )
        assert rec.n_stage1_pass == 5000
        # with a constant screen the kernel is plain MH; moments must match
        assert np.max(np.abs(rec.samples.mean(axis=0))) < 0.1
        assert np.max(np.abs(rec.samples.var(axis=0) - 1.0)) < 0.12

    def test_pipeline_eval_reduction_and_exactness(self):
        t = make_standard_gaussian(2)
        rng = RngStream(72, 1)
        model, _ = build_surrogate_from_warmup(
            t, make_state(t, np.zeros(2), with_grad=False), rng,
            n_train=200, bandwidth=0.8, ridge=1e-3, inner_sigma=1.5,
            warmup_steps=2000,
        )
        counting = CountingTarget(t)
        propose = gaussian_walk_proposal(1.5)
        state = make_state(counting, np.zeros(2), with_grad=False)
        frozen_blob = model.inputs.tobytes() + model.weights.tobytes()
        rec, _ = run_chain(
            lambda s, r: delayed_acceptance_step(s, propose, model, counting, r),
            state, 10_000, rng, counting=counting,
            surrogate_counter=lambda: model.n_evals,
        )
        assert rec.n_target_evals == rec.n_stage1_pass
        assert rec.n_target_evals <= 0.6 * rec.n_samples
        assert rec.n_surrogate_evals == 2 * rec.n_samples
        assert np.max(np.abs(rec.samples.mean(axis=0))) < 0.1
        # the frozen surrogate is untouched by the post-warmup kernel
        assert model.inputs.tobytes() + model.weights.tobytes() == frozen_blob

    def test_approximate_mode_never_touches_target(self):
        t = make_standard_gaussian(2)
        rng = RngStream(73, 1)
        model, _ = build_surrogate_from_warmup(
            t, make_state(t, np.zeros(2), with_grad=False), rng,
            n_train=150, bandwidth=0.8, ridge=1e-3, inner_sigma=1.5,
            warmup_steps=1500,
        )
        counting = CountingTarget(t)
        approx = surrogate_as_target(model, 2)
        cfg = RwmConfig(sigma=1.5)
        state = make_state(approx, np.zeros(2), with_grad=False)
        rec, _ = run_chain(
            lambda s, r: rwm_step(s, cfg, approx, r), state, 2000, rng,
            counting=counting, surrogate_counter=lambda: model.n_evals,
        )
        assert rec.n_target_evals == 0
        assert rec.n_surrogate_evals > 0


class TestRefineSurrogate:
    def _setup(self):
        t = make_standard_gaussian(2)
        rng = RngStream(74, 1)
        cfg = RwmConfig(sigma=1.5)
        state = make_state(t, np.zeros(2), with_grad=False)
        record, _ = run_chain(
            lambda s, r: rwm_step(s, cfg, t, r), state, 3000, rng
        )
        coarse_idx = np.linspace(0, 2999, 40).astype(int)
        pts, keep = np.unique(record.samples[coarse_idx], axis=0, return_index=True)
        vals = record.logpi[coarse_idx][keep]
        model = fit_surrogate(pts, vals, bandwidth=0.8, ridge=1e-3)
        return t, model, record

    def test_zero_refinement_is_identity(self):
        t, model, record = self._setup()
        assert refine_surrogate(model, record, t, 0) is model

    def test_added_point_residual_drops(self):
        t, model, record = self._setup()
        refined = refine_surrogate(model, record, t, 20)
        assert refined.n_train > model.n_train
        new_points = refined.inputs[model.n_train :]
        new_values = refined.values[model.n_train :]
        tol = 10.0 * refined.ridge * np.max(np.abs(refined.values))
        for p, v in zip(new_points, new_values):
            assert abs(surrogate_predict(refined, p) - v) <= tol

    def test_grid_error_improves(self):
        t, model, record = self._setup()
        axis = np.linspace(-2.0, 2.0, 11)
        grid = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
        before = surrogate_grid_error(model, t, grid)
        refined = refine_surrogate(model, record, t, 60)
        after = surrogate_grid_error(refined, t, grid)
        assert after < before


class TestFitGmm:
    def test_single_component_maximum_likelihood(self):
        gen = np.random.Generator(np.random.Philox(key=80))
        x = gen.standard_normal((500, 2)) * np.array([1.0, 2.0]) + np.array(
            [3.0, -1.0]
        )
        mix = fit_gmm(x, 1, RngStream(80, 1))
        assert np.allclose(mix.means[0], x.mean(axis=0), atol=1e-8)
        assert np.allclose(mix.variances[0], x.var(axis=0), atol=1e-6)
        assert mix.weights[0] == pytest.approx(1.0)

    def test_two_cluster_recovery(self):
        gen = np.random.Generator(np.random.Philox(key=81))
        a = gen.standard_normal((1000, 1)) - 10.0
        b = gen.standard_normal((1000, 1)) + 10.0
        x = np.vstack([a, b])
        mix = fit_gmm(x, 2, RngStream(81, 1))
        centers = np.sort(mix.means[:, 0])
        assert abs(centers[0] + 10.0) < 0.5
        assert abs(centers[1] - 10.0) < 0.5
        assert np.max(np.abs(mix.weights - 0.5)) < 0.1

    def test_loglik_non_decreasing(self):
        gen = np.random.Generator(np.random.Philox(key=82))
        x = np.vstack(
            [gen.standard_normal((300, 2)) - 3, gen.standard_normal((300, 2)) + 3]
        )
        mix = fit_gmm(x, 2, RngStream(82, 1))
        diffs = np.diff(mix.loglik_trace)
        assert np.all(diffs >= -1e-9)

    def test_weights_form_simplex(self):
        gen = np.random.Generator(np.random.Philox(key=83))
        x = gen.standard_normal((400, 3))
        for k in (1, 2, 4):
            mix = fit_gmm(x, k, RngStream(83, k))
            assert mix.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(mix.weights >= 0.0)
            assert np.all(mix.variances > 0.0)

    def test_empty_component_reseeded(self):
        gen = np.random.Generator(np.random.Philox(key=84))
        x = gen.standard_normal((200, 1))
        # force one component far outside the data so its mass underflows
        mix = fit_gmm(
            x, 2, RngStream(84, 1), init_means=np.array([[0.0], [1e8]])
        )
        assert np.all(np.abs(mix.means[:, 0]) < 10.0)
        assert mix.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_sample_size_guard(self):
        with pytest.raises(ValueError):
            fit_gmm(np.zeros((19, 1)), 2, RngStream(0))


class TestMixtureProposal:
    def test_log_density_matches_scipy(self):
        mix = MixtureProposal(
            weights=np.array([0.3, 0.7]),
            means=np.array([[0.0, 0.0], [2.0, -1.0]]),
            variances=np.array([[1.0, 4.0], [0.25, 1.0]]),
        )
        gen = np.random.Generator(np.random.Philox(key=85))
        for _ in range(20):
            x = gen.normal(size=2) * 2
            expected = np.logaddexp(
                math.log(0.3)
                + multivariate_normal.logpdf(x, [0, 0], np.diag([1.0, 4.0])),
                math.log(0.7)
                + multivariate_normal.logpdf(x, [2, -1], np.diag([0.25, 1.0])),
            )
            assert mix.log_density(x) == pytest.approx(expected, abs=1e-10)

    def test_sampling_respects_weights(self):
        mix = MixtureProposal(
            weights=np.array([0.2, 0.8]),
            means=np.array([[-20.0], [20.0]]),
            variances=np.ones((2, 1)),
        )
        rng = RngStream(86, 1)
        draws = np.array([mix.sample(rng)[0] for _ in range(5000)])
        assert np.mean(draws > 0) == pytest.approx(0.8, abs=0.02)


class TestIndependenceProposal:
    def test_mixture_equal_to_target_always_accepts(self):
        sep, w = 8.0, 0.5
        target = make_bimodal_mixture(2, sep, w)
        mix = MixtureProposal(
            weights=np.array([w, 1.0 - w]),
            means=np.array([[-4.0, 0.0], [4.0, 0.0]]),
            variances=np.ones((2, 2)),
        )
        state = make_state(target, np.array([4.0, 0.0]), with_grad=False)
        rec, _ = run_chain(
            lambda s, r: independence_proposal_step(s, mix, target, r),
            state, 2000, RngStream(87, 1),
        )
        assert rec.acceptance_rate == 1.0

    def test_zero_density_current_state_rejects_without_error(self):
        target = make_standard_gaussian(1)
        mix = MixtureProposal(
            weights=np.array([1.0]),
            means=np.array([[1000.0]]),
            variances=np.array([[1e-6]]),
        )
        state = make_state(target, np.zeros(1), with_grad=False)
        new, info = independence_proposal_step(
            state, mix, target, RngStream(88, 1)
        )
        assert not info.accepted
        assert np.array_equal(new.position, state.position)

    def test_frozen_proposal_constant_over_run(self):
        target = make_bimodal_mixture(2, 8.0, 0.5)
        mix = fit_mixture_from_overdispersed(
            target, RngStream(89, 1), n_chains=4, warmup_steps=800,
            sigma=1.0, k=2,
        )
        gen_before = mix.generation
        blob_before = (
            mix.weights.tobytes() + mix.means.tobytes() + mix.variances.tobytes()
        )
        state = make_state(target, np.array([4.0, 0.0]), with_grad=False)
        run_chain(
            lambda s, r: independence_proposal_step(s, mix, target, r),
            state, 3000, RngStream(89, 2),
        )
        assert mix.generation == gen_before
        blob_after = (
            mix.weights.tobytes() + mix.means.tobytes() + mix.variances.tobytes()
        )
        assert blob_after == blob_before
