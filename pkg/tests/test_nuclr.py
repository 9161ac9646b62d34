"""
Unit tests for NUCLR: minibatch estimators, gradients, steps and training.
"""

from itertools import combinations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dpmis.core.nuclr import (
    BimodalWorld,
    NuclrError,
    NuclrState,
    batch_phi_estimates,
    check_batch,
    grad_w,
    grad_zeta,
    minibatch_phi,
    nuclr_step,
    pair_weights,
    phi_full,
    psi_full,
    psi_full_gradient,
    recall_at_1,
    scheduled_lr,
    train,
    update_u,
    zero_shot_classify,
    zeta_gradient,
)
from dpmis.core.popularity import SimilarityMatrix, phi_gradient
from dpmis.core.similarity import GroundTruthBilinear, LinearCosine
from dpmis.models.config import NuclrConfig
from dpmis.utils.rng import make_rng

TAU = 0.1


@pytest.fixture
def toy():
    """16 toy pairs in 4 dimensions and a linear cosine model with latent dimension 3."""
    world = BimodalWorld.create(make_rng(1), latent_dim=3, data_dim=4)
    sample = world.sample(16, make_rng(2), TAU)
    model = LinearCosine.initialize(4, 4, 3, make_rng(3))
    return sample, model


def _matrix(model, sample):
    return model.similarity_matrix(sample.anchors, sample.targets)


def _exact_u(state, K, tau):
    """Set every track's u to the exact full-batch phi."""
    state.forward.u = pair_weights(K, state.forward.zeta, tau).sum(axis=1)
    if state.reverse is not None:
        state.reverse.u = pair_weights(K.T, state.reverse.zeta, tau).sum(axis=1)


def _sogclr_reference(params, u, touched, velocity, batch, model, sample, config):
    """Plain SogCLR step with momentum, in the same operation order as nuclr_step."""
    B = len(batch)
    n = sample.n
    current = model.with_params(params)
    K = current.similarity_matrix(sample.anchors[batch], sample.targets[batch])
    e = np.exp((K - np.diag(K)[:, None]) / config.tau)
    np.fill_diagonal(e, 0.0)
    scale = (n - 1) / (B - 1)
    estimates = scale * e.sum(axis=1)
    u = u.copy()
    touched = touched.copy()
    weight = np.where(touched[batch], config.gamma, 1.0)
    u[batch] = (1.0 - weight) * u[batch] + weight * estimates
    touched[batch] = True
    a = scale / (B * (1.0 + u[batch]))
    C = a[:, None] * e
    C[np.diag_indices(B)] = -a * e.sum(axis=1)
    g = current.weighted_similarity_grad(sample.anchors[batch], sample.targets[batch], C)
    velocity = config.momentum_w * velocity + g
    return params - config.lr_w * velocity, u, touched, velocity


class TestMinibatchPhi:
    """Test the minibatch estimate of phi_i."""

    def test_full_batch_is_exact(self, toy):
        """Test that the full batch gives phi_i exactly."""
        sample, model = toy
        config = NuclrConfig(tau=TAU)
        state = NuclrState.initial(model.params, sample.n, config)
        state.forward.zeta = make_rng(4).normal(scale=0.1, size=sample.n)
        exact = pair_weights(_matrix(model, sample), state.forward.zeta, TAU).sum(axis=1)
        batch = np.arange(sample.n)
        for i in (0, 5, 15):
            assert minibatch_phi(i, batch, state, model, sample, TAU) == exact[i]

    def test_reverse_direction(self, toy):
        """Test the y -> x estimate on the transposed matrix."""
        sample, model = toy
        state = NuclrState.initial(model.params, sample.n, NuclrConfig(tau=TAU))
        exact = pair_weights(_matrix(model, sample).T, state.reverse.zeta, TAU).sum(axis=1)
        value = minibatch_phi(3, np.arange(sample.n), state, model, sample, TAU, reverse=True)
        assert_allclose(value, exact[3], rtol=1e-15)

    def test_enumeration_unbiased(self):
        """Test that the mean over all size-B batches containing i equals phi_i."""
        rng = make_rng(8)
        n, B = 7, 3
        model = LinearCosine.initialize(2, 2, 3, rng)
        world = BimodalWorld.create(rng, latent_dim=2, data_dim=2)
        sample = world.sample(n, rng, TAU)
        state = NuclrState.initial(model.params, n, NuclrConfig(tau=TAU, batch_size=B))
        state.forward.zeta = rng.normal(scale=0.2, size=n)
        exact = pair_weights(_matrix(model, sample), state.forward.zeta, TAU).sum(axis=1)
        for i in range(n):
            values = [
                minibatch_phi(i, batch, state, model, sample, TAU)
                for batch in combinations(range(n), B)
                if i in batch
            ]
            assert abs(np.mean(values) - exact[i]) <= 1e-12 * exact[i]

    def test_constant_similarity(self):
        """Test phi_hat = n - 1 for constant E and zeta = 0."""
        estimates = batch_phi_estimates(np.full((4, 4), 0.3), np.zeros(4), 10, TAU)
        assert_allclose(estimates, 9.0, rtol=1e-14)

    def test_index_not_in_batch(self, toy):
        """Test that i must belong to the batch."""
        sample, model = toy
        state = NuclrState.initial(model.params, sample.n, NuclrConfig(tau=TAU))
        with pytest.raises(NuclrError, match="not in the minibatch"):
            minibatch_phi(9, [0, 1, 2], state, model, sample, TAU)

    def test_no_reverse_track(self, toy):
        """Test that unidirectional states have no reverse estimate."""
        sample, model = toy
        state = NuclrState.initial(
            model.params, sample.n, NuclrConfig(tau=TAU, mode="unidirectional")
        )
        with pytest.raises(NuclrError, match="reverse"):
            minibatch_phi(0, [0, 1], state, model, sample, TAU, reverse=True)


class TestBatchValidation:
    """Test minibatch validation."""

    @pytest.mark.parametrize(
        "batch, match",
        [
            ([3], "at least 2"),
            ([0, 0, 1], "distinct"),
            ([0, 16], r"\[0, 16\)"),
            ([-1, 2], "lie in"),
        ],
    )
    def test_invalid(self, batch, match):
        """Test single-pair, duplicate and out-of-range batches."""
        with pytest.raises(NuclrError, match=match):
            check_batch(batch, 16)

    def test_phi_estimate_needs_two(self):
        """Test that B = 1 is rejected by the estimator."""
        with pytest.raises(NuclrError):
            batch_phi_estimates(np.zeros((1, 1)), np.zeros(1), 5, TAU)


class TestUpdateU:
    """Test the moving-average update."""

    def test_gamma_one(self):
        """Test u = phi_hat for gamma = 1."""
        u, touched = update_u(
            np.array([1.0, 2.0, 3.0]), np.ones(3, dtype=bool), np.array([0, 2]),
            np.array([5.0, 7.0]), 1.0,
        )
        assert_allclose(u, [5.0, 2.0, 7.0])
        assert touched.all()

    def test_moving_average(self):
        """Test (1 - 0.8) * 1.0 + 0.8 * 2.0 = 1.8."""
        u, _ = update_u(np.array([1.0]), np.array([True]), np.array([0]), np.array([2.0]), 0.8)
        assert_allclose(u, [1.8], rtol=1e-15)

    def test_first_touch_and_untouched(self):
        """Test gamma = 1 on first touch and no change outside the batch."""
        u0 = np.zeros(4)
        touched0 = np.zeros(4, dtype=bool)
        u, touched = update_u(u0, touched0, np.array([1, 3]), np.array([2.0, 4.0]), 0.8)
        np.testing.assert_array_equal(u, [0.0, 2.0, 0.0, 4.0])
        np.testing.assert_array_equal(touched, [False, True, False, True])
        assert not touched0.any() and not u0.any()

    @pytest.mark.parametrize("gamma", [0.0, 1.5])
    def test_invalid_gamma(self, gamma):
        """Test that gamma outside (0, 1] is rejected."""
        with pytest.raises(NuclrError, match="gamma"):
            update_u(np.zeros(2), np.zeros(2, dtype=bool), np.array([0]), np.array([1.0]), gamma)


class TestGradients:
    """Test the stochastic zeta and w gradients against full-batch references."""

    def test_zeta_gradient_full_batch(self, toy):
        """Test G(zeta) with B = n and exact u against phi_gradient."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, mode="unidirectional")
        state = NuclrState.initial(model.params, sample.n, config)
        state.forward.zeta = make_rng(6).normal(scale=0.1, size=sample.n)
        K = _matrix(model, sample)
        _exact_u(state, K, TAU)
        G = grad_zeta(state, np.arange(sample.n), model, sample, config)
        expected = phi_gradient(state.forward.zeta, SimilarityMatrix(K, TAU))
        assert np.max(np.abs(G - expected)) <= 1e-10

    def test_zeta_gradient_constant_is_stationary(self):
        """Test G = 0 for constant E, zeta = 0, full batch and exact u."""
        n = 6
        K = np.full((n, n), 0.5)
        u = np.full(n, n - 1.0)
        assert np.max(np.abs(zeta_gradient(K, np.zeros(n), u, n, TAU))) <= 1e-15

    def test_zeta_gradient_finite_differences(self, toy):
        """Test G(zeta) against central differences of the full-batch Phi."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, mode="unidirectional")
        state = NuclrState.initial(model.params, sample.n, config)
        state.forward.zeta = make_rng(7).normal(scale=0.1, size=sample.n)
        _exact_u(state, _matrix(model, sample), TAU)
        G = grad_zeta(state, np.arange(sample.n), model, sample, config)
        numeric = np.empty(sample.n)
        for j in range(sample.n):
            plus, minus = state.copy(), state.copy()
            plus.forward.zeta[j] += 1e-6
            minus.forward.zeta[j] -= 1e-6
            numeric[j] = (
                phi_full(model, sample, plus, TAU) - phi_full(model, sample, minus, TAU)
            ) / 2e-6
        assert np.max(np.abs(G - numeric)) / np.max(np.abs(G)) < 1e-6

    def test_reverse_zeta_gradient(self, toy):
        """Test the reverse-track gradient on the transposed matrix."""
        sample, model = toy
        config = NuclrConfig(tau=TAU)
        state = NuclrState.initial(model.params, sample.n, config)
        K = _matrix(model, sample)
        _exact_u(state, K, TAU)
        G = grad_zeta(state, np.arange(sample.n), model, sample, config, reverse=True)
        expected = phi_gradient(state.reverse.zeta, SimilarityMatrix(K.T, TAU))
        assert np.max(np.abs(G - expected)) <= 1e-10

    @pytest.mark.parametrize("mode", ["unidirectional", "symmetric"])
    def test_w_gradient_full_batch(self, toy, mode):
        """Test G(w) with zeta = 0, xi = 0, B = n and exact u against the full Psi gradient."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, mode=mode)
        state = NuclrState.initial(model.params, sample.n, config)
        _exact_u(state, _matrix(model, sample), TAU)
        G = grad_w(state, np.arange(sample.n), model, sample, config)
        expected = psi_full_gradient(model, sample, state, TAU)
        assert_allclose(G, expected, rtol=1e-10, atol=1e-13)

    def test_w_gradient_without_xi(self, toy):
        """Test G(w) at random zeta with the unmodified positive-pair weight."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, use_xi=False)
        state = NuclrState.initial(model.params, sample.n, config)
        state.forward.zeta = make_rng(9).normal(scale=0.1, size=sample.n)
        state.reverse.zeta = make_rng(10).normal(scale=0.1, size=sample.n)
        _exact_u(state, _matrix(model, sample), TAU)
        G = grad_w(state, np.arange(sample.n), model, sample, config)
        assert_allclose(G, psi_full_gradient(model, sample, state, TAU), rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("mode", ["unidirectional", "symmetric"])
    def test_psi_gradient_finite_differences(self, toy, mode):
        """Test the full Psi gradient against central differences in w."""
        sample, model = toy
        state = NuclrState.initial(model.params, sample.n, NuclrConfig(tau=TAU, mode=mode))
        state.forward.zeta = make_rng(11).normal(scale=0.1, size=sample.n)
        analytic = psi_full_gradient(model, sample, state, TAU)
        params = model.params
        numeric = np.empty_like(params)
        for k in range(params.size):
            step = np.zeros_like(params)
            step[k] = 1e-6
            plus = psi_full(model.with_params(params + step), sample, state, TAU)
            minus = psi_full(model.with_params(params - step), sample, state, TAU)
            numeric[k] = (plus - minus) / 2e-6
        assert np.max(np.abs(analytic - numeric)) / np.max(np.abs(analytic)) < 1e-6

    def test_psi_relation(self, toy):
        """Test Psi = Phi - mean(zeta) per direction."""
        sample, model = toy
        state = NuclrState.initial(model.params, sample.n, NuclrConfig(tau=TAU))
        state.forward.zeta = make_rng(12).normal(size=sample.n)
        expected = phi_full(model, sample, state, TAU) - np.mean(state.forward.zeta)
        assert_allclose(psi_full(model, sample, state, TAU), expected, rtol=1e-12)

    def test_parameter_free_model(self, toy):
        """Test that grad_w requires a parameterized model."""
        sample, _ = toy
        model = GroundTruthBilinear()
        state = NuclrState.initial(model.params, sample.n, NuclrConfig(tau=TAU))
        with pytest.raises(NuclrError, match="parameterized"):
            grad_w(state, [0, 1], model, sample, NuclrConfig(tau=TAU))

    def test_single_pair_batch(self, toy):
        """Test that a one-pair batch is rejected."""
        sample, model = toy
        config = NuclrConfig(tau=TAU)
        state = NuclrState.initial(model.params, sample.n, config)
        with pytest.raises(NuclrError, match="at least 2"):
            grad_w(state, [4], model, sample, config)


class TestNuclrStep:
    """Test single iterations."""

    def test_does_not_mutate_input(self, toy):
        """Test that the input state is left unchanged."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4)
        state = NuclrState.initial(model.params, sample.n, config)
        before = state.copy()
        new = nuclr_step(state, [0, 3, 5, 7], model, sample, config)
        np.testing.assert_array_equal(state.params, before.params)
        np.testing.assert_array_equal(state.forward.u, before.forward.u)
        assert new.step == 1 and state.step == 0

    def test_freeze(self, toy):
        """Test that a frozen step leaves zeta and xi but updates u and w."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4)
        state = NuclrState.initial(model.params, sample.n, config)
        new = nuclr_step(state, [1, 2, 3, 4], model, sample, config, freeze_zeta=True)
        for old, track in zip(state.tracks, new.tracks):
            np.testing.assert_array_equal(track.zeta, old.zeta)
            assert track.xi == old.xi
            assert np.all(track.u[[1, 2, 3, 4]] > 0)
            assert track.touched.sum() == 4
        assert not np.array_equal(new.params, state.params)

    def test_zeta_moves_on_batch_only(self, toy):
        """Test that an unfrozen step changes zeta only on batch coordinates."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4)
        state = NuclrState.initial(model.params, sample.n, config)
        batch = [0, 6, 9, 12]
        new = nuclr_step(state, batch, model, sample, config)
        changed = np.flatnonzero(new.forward.zeta != state.forward.zeta)
        assert set(changed) <= set(batch)
        assert changed.size > 0

    def test_xi_monotone(self, toy):
        """Test that xi never decreases and bounds |zeta|_inf after each step."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4, lr_zeta=0.5)
        state = NuclrState.initial(model.params, sample.n, config)
        rng = make_rng(13)
        for _ in range(30):
            new = nuclr_step(state, rng.permutation(sample.n)[:4], model, sample, config)
            for old, track in zip(state.tracks, new.tracks):
                assert track.xi >= old.xi
                assert track.xi >= np.max(np.abs(track.zeta))
            state = new
        assert state.xi > 0

    def test_sogclr_reference(self, toy):
        """Test that zeta = 0, xi = 0 reproduces a direct SogCLR update over 50 steps."""
        sample, model = toy
        config = NuclrConfig(
            tau=TAU, batch_size=5, mode="unidirectional", schedule="constant", sogclr=True
        )
        state = NuclrState.initial(model.params, sample.n, config)
        params = model.params
        u = np.zeros(sample.n)
        touched = np.zeros(sample.n, dtype=bool)
        velocity = np.zeros_like(params)
        rng = make_rng(14)
        for _ in range(50):
            batch = rng.permutation(sample.n)[:5]
            state = nuclr_step(state, batch, model, sample, config)
            params, u, touched, velocity = _sogclr_reference(
                params, u, touched, velocity, batch, model, sample, config
            )
            np.testing.assert_array_equal(state.params, params)
            np.testing.assert_array_equal(state.forward.u, u)
        assert not state.forward.zeta.any()
        assert state.xi == 0.0

    def test_momentum_first_step(self, toy):
        """Test that the first momentum step is a plain gradient step."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4)
        batch = [2, 5, 8, 11]
        state = NuclrState.initial(model.params, sample.n, config)
        new = nuclr_step(state, batch, model, sample, config, freeze_zeta=True)
        probe = new.copy()
        probe.params = state.params.copy()
        g = grad_w(probe, batch, model, sample, config)
        assert_allclose(new.params, state.params - config.lr_w * g, rtol=1e-13, atol=1e-15)

    def test_adamw_first_step(self, toy):
        """Test the bias-corrected first AdamW step with decoupled weight decay."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4, w_optimizer="adamw", lr_w=0.01)
        batch = [2, 5, 8, 11]
        state = NuclrState.initial(model.params, sample.n, config)
        new = nuclr_step(state, batch, model, sample, config, freeze_zeta=True)
        probe = new.copy()
        probe.params = state.params.copy()
        g = grad_w(probe, batch, model, sample, config)
        expected = state.params - config.lr_w * (
            g / (np.abs(g) + config.adam_eps) + config.weight_decay * state.params
        )
        assert_allclose(new.params, expected, rtol=1e-10, atol=1e-12)

    def test_alternating_gradient_descent(self, toy):
        """Test that gamma = 1 and B = n reproduce full-batch alternating gradient descent."""
        sample, model = toy
        n = sample.n
        config = NuclrConfig(
            tau=TAU, batch_size=n, gamma=1.0, momentum_w=0.0, momentum_zeta=0.0,
            schedule="constant", use_xi=False, mode="unidirectional", lr_w=0.05, lr_zeta=0.05,
        )
        state = NuclrState.initial(model.params, n, config)
        params = model.params
        zeta = np.zeros(n)
        for _ in range(10):
            current = model.with_params(params)
            g_zeta = phi_gradient(zeta, SimilarityMatrix(_matrix(current, sample), TAU))
            reference = NuclrState.initial(params, n, config)
            reference.forward.zeta = zeta.copy()
            g_w = psi_full_gradient(current, sample, reference, TAU)
            zeta = zeta - config.lr_zeta * g_zeta
            params = params - config.lr_w * g_w
            state = nuclr_step(state, np.arange(n), model, sample, config)
            assert_allclose(state.forward.zeta, zeta, rtol=1e-9, atol=1e-12)
            assert_allclose(state.params, params, rtol=1e-9, atol=1e-12)


class TestSchedule:
    """Test learning-rate schedules."""

    def test_constant(self):
        """Test that the constant schedule ignores the step."""
        assert scheduled_lr(0.3, 50, 100, "constant") == 0.3

    def test_cosine(self):
        """Test cosine decay endpoints and midpoint."""
        assert scheduled_lr(0.4, 0, 100, "cosine") == 0.4
        assert_allclose(scheduled_lr(0.4, 50, 100, "cosine"), 0.2, rtol=1e-15)
        assert abs(scheduled_lr(0.4, 100, 100, "cosine")) < 1e-17
        assert abs(scheduled_lr(0.4, 150, 100, "cosine")) < 1e-17

    def test_no_total(self):
        """Test that an unknown run length keeps the base rate."""
        assert scheduled_lr(0.4, 10, 0, "cosine") == 0.4


class TestTrain:
    """Test the training loop."""

    def test_zero_epochs(self, toy):
        """Test that T = 0 returns the initial model."""
        sample, model = toy
        result = train(sample, model, NuclrConfig(tau=TAU, batch_size=4, epochs=0), make_rng(0))
        assert result.model is model
        assert result.metrics == []
        assert result.state.step == 0

    def test_metrics_and_steps(self, toy):
        """Test one metrics row per epoch and n // B steps per epoch."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=5, epochs=3, freeze_epochs=1)
        result = train(sample, model, config, make_rng(0))
        assert [row.epoch for row in result.metrics] == [0, 1, 2]
        assert result.state.step == 3 * (16 // 5)
        assert all(np.isfinite(row.psi_full) for row in result.metrics)
        assert result.metrics[0].xi == 0.0

    def test_deterministic(self, toy):
        """Test identical metrics and parameters for identical seeds."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4, epochs=3, freeze_epochs=1)
        first = train(sample, model, config, make_rng(21))
        second = train(sample, model, config, make_rng(21))
        assert [m.model_dump() for m in first.metrics] == [m.model_dump() for m in second.metrics]
        np.testing.assert_array_equal(first.model.params, second.model.params)

    def test_sogclr_matches_frozen_epochs(self, toy):
        """Test that NUCLR equals SogCLR while zeta is frozen at 0."""
        sample, model = toy
        common = dict(tau=TAU, batch_size=4, epochs=2)
        nuclr = train(sample, model, NuclrConfig(freeze_epochs=2, **common), make_rng(3))
        sogclr = train(sample, model, NuclrConfig(sogclr=True, **common), make_rng(3))
        np.testing.assert_array_equal(nuclr.model.params, sogclr.model.params)

    def test_metrics_skipped_for_large_n(self, toy):
        """Test nan full-batch objectives above the full-batch limit."""
        sample, model = toy
        config = NuclrConfig(tau=TAU, batch_size=4, epochs=1, full_batch_limit=8)
        row = train(sample, model, config, make_rng(0)).metrics[0]
        assert np.isnan(row.phi_full) and np.isnan(row.psi_full)
        assert 0.0 <= row.recall_at_1 <= 1.0

    def test_small_step_descends_psi(self):
        """Test that full-batch training with eta_w = 1e-3 decreases Psi monotonically."""
        world = BimodalWorld.create(make_rng(31), latent_dim=4, data_dim=8)
        sample = world.sample(32, make_rng(32), TAU)
        model = LinearCosine.initialize(8, 8, 8, make_rng(33))
        config = NuclrConfig(
            tau=TAU, batch_size=32, epochs=20, gamma=1.0, lr_w=1e-3, momentum_w=0.0,
            schedule="constant", learn_zeta=False, use_xi=False, mode="unidirectional",
        )
        psi = [row.psi_full for row in train(sample, model, config, make_rng(34)).metrics]
        assert np.all(np.diff(psi) <= 0.0)

    def test_requires_full_batch(self, toy):
        """Test that n < B is rejected."""
        sample, model = toy
        with pytest.raises(NuclrError, match="batch_size"):
            train(sample, model, NuclrConfig(tau=TAU, batch_size=32), make_rng(0))

    def test_requires_parameters(self, toy):
        """Test that parameter-free models cannot be trained."""
        sample, _ = toy
        with pytest.raises(NuclrError, match="parameterized"):
            train(sample, GroundTruthBilinear(), NuclrConfig(tau=TAU, batch_size=4), make_rng(0))

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_toy_recall(self, seed):
        """Test validation recall@1 of at least 20x chance on the toy task."""
        world = BimodalWorld.create(make_rng(seed, 0), latent_dim=4, data_dim=8)
        sample = world.sample(2048, make_rng(seed, 1), TAU)
        eval_sample = world.sample(256, make_rng(seed, 2), TAU)
        model = LinearCosine.initialize(8, 8, 8, make_rng(seed, 3))
        result = train(sample, model, NuclrConfig(tau=TAU), make_rng(seed, 4), eval_sample)
        assert result.metrics[-1].recall_at_1 >= 20 / 256


class TestRetrieval:
    """Test recall@1 and zero-shot classification."""

    def test_recall_perfect(self):
        """Test recall 1 when every pair is its own nearest neighbour."""
        model = LinearCosine(np.eye(2), np.eye(2))
        points = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        assert recall_at_1(model, points, points) == 1.0

    def test_recall_ties_to_lowest_index(self):
        """Test that tied scores retrieve the lowest index."""
        model = LinearCosine(np.eye(2), np.eye(2))
        points = np.array([[1.0, 0.0], [2.0, 0.0]])
        assert recall_at_1(model, points, points) == 0.5

    def test_single_prototype(self, rng):
        """Test that one prototype always wins."""
        x, prototype = rng.normal(size=(2, 2))
        assert zero_shot_classify(GroundTruthBilinear(), x, [prototype]) == 0

    def test_nearest_prototype(self):
        """Test x=(1, 0) against prototypes (1, 0) and (0, 1)."""
        prototypes = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        assert zero_shot_classify(GroundTruthBilinear(), np.array([1.0, 0.0]), prototypes) == 0

    def test_embedding_scale_invariance(self, rng):
        """Test that scaling the anchor projection leaves the argmax unchanged."""
        model = LinearCosine.initialize(3, 3, 4, rng)
        scaled = LinearCosine(3.0 * model.w1, model.w2)
        prototypes = list(rng.normal(size=(5, 3)))
        for x in rng.normal(size=(10, 3)):
            assert zero_shot_classify(model, x, prototypes) == zero_shot_classify(
                scaled, x, prototypes
            )

    def test_no_prototypes(self):
        """Test that an empty prototype list is rejected."""
        with pytest.raises(NuclrError, match="prototype"):
            zero_shot_classify(GroundTruthBilinear(), np.zeros(2), [])


class TestBimodalWorld:
    """Test the toy paired world."""

    def test_shapes(self):
        """Test sample shapes and determinism."""
        world = BimodalWorld.create(make_rng(0), latent_dim=3, data_dim=5)
        assert (world.latent_dim, world.data_dim) == (3, 5)
        a = world.sample(10, make_rng(1), TAU)
        b = world.sample(10, make_rng(1), TAU)
        assert a.anchors.shape == (10, 5) and a.targets.shape == (10, 5)
        np.testing.assert_array_equal(a.anchors, b.anchors)

    def test_noise_free_pairs_share_latent(self):
        """Test that noise-free pairs come from the same latent."""
        world = BimodalWorld.create(make_rng(0), latent_dim=2, data_dim=2, noise=0.0)
        sample = world.sample(5, make_rng(1), TAU)
        z_x = np.linalg.solve(world.proj_x, sample.anchors.T).T
        z_y = np.linalg.solve(world.proj_y, sample.targets.T).T
        assert_allclose(z_x, z_y, atol=1e-10)
        assert_allclose(np.linalg.norm(z_x, axis=1), 1.0, rtol=1e-10)

    def test_invalid(self):
        """Test invalid dimensions and sizes."""
        with pytest.raises(NuclrError, match="dimensions"):
            BimodalWorld.create(make_rng(0), latent_dim=1)
        with pytest.raises(NuclrError, match="at least 1"):
            BimodalWorld.create(make_rng(0)).sample(0, make_rng(1), TAU)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
