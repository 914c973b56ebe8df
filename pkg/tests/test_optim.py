"""Optimizer tests: gradient bundles, geodesic steps, finite differences, fit."""
import math

import numpy as np
import pytest

from oblique_fewshot import errors, geometry, optim
from oblique_fewshot.classifier import (
    AnchorSet,
    ClassifierConfig,
    Episode,
    WeightFn,
    init_anchors,
    init_weights,
    posterior_stack,
    WeightSet,
    weight_profile,
)
from oblique_fewshot.geometry import GeometryMode, OMPoint, project_to_om
from oblique_fewshot.optim import (
    FitReport,
    GradientBundle,
    _grad_z,
    _losses_from_post,
    euclidean_gradients,
    fit,
    riemannian_gradients,
    rsgd_step,
)


def make_episode(ways=2, shots=2, queries=3, n=4, p=2, seed=0):
    rng = np.random.default_rng(seed)
    support = np.abs(rng.standard_normal((ways * shots, n, p))) + 0.2
    query = np.abs(rng.standard_normal((ways * queries, n, p))) + 0.2
    return Episode(
        ways=ways, shots=shots, queries=queries,
        support=support, support_labels=np.repeat(np.arange(ways), shots),
        query=query, query_labels=np.repeat(np.arange(ways), queries),
    )


def loss_of_stacks(episode, k_stack, w_stack, config):
    """Loss with ambient stacks re-projected column-wise, the convention the
    returned gradients are defined against."""
    samples = optim._episode_stacks(episode)
    k = np.stack([project_to_om(m).data for m in k_stack])
    w = np.stack([project_to_om(m).data for m in w_stack])
    post, _, _ = posterior_stack(samples, k, w, config.gamma, config.geometry)
    total, _ = _losses_from_post(
        post, episode.support_labels, episode.n_support, config
    )
    return total


def fd_bundle(episode, anchors, weights, config, step=1e-5):
    k0, w0 = anchors.stacked(), weights.stacked()
    dw = np.zeros_like(w0)
    dk = np.zeros_like(k0)
    for stack, out in ((w0, dw), (k0, dk)):
        it = np.nditer(stack, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus, minus = stack.copy(), stack.copy()
            plus[idx] += step
            minus[idx] -= step
            if stack is w0:
                hi = loss_of_stacks(episode, k0, plus, config)
                lo = loss_of_stacks(episode, k0, minus, config)
            else:
                hi = loss_of_stacks(episode, plus, w0, config)
                lo = loss_of_stacks(episode, minus, w0, config)
            out[idx] = (hi - lo) / (2 * step)
    return dw, dk


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) and np.max(np.abs(a - b) / denom))


class TestBundles:
    def test_rejects_nonfinite(self):
        with pytest.raises(errors.NonFinite):
            GradientBundle(np.array([[[np.nan]]]), np.zeros((1, 1, 1)))

    def test_riemannian_projection_frozen(self):
        w = WeightSet((OMPoint(np.array([[1.0], [0.0]])),))
        k = AnchorSet((OMPoint(np.array([[0.0], [1.0]])),))
        bundle = GradientBundle(
            np.array([[[5.0], [3.0]]]), np.array([[[2.0], [4.0]]])
        )
        tangent = riemannian_gradients(bundle, k, w)
        assert np.allclose(tangent.dW[0][:, 0], [0.0, 3.0], atol=1e-15)
        assert np.allclose(tangent.dK[0][:, 0], [2.0, 0.0], atol=1e-15)

    def test_riemannian_idempotent(self):
        ep = make_episode(seed=1)
        cfg = ClassifierConfig(tau=1, iterations=1)
        anchors, weights = init_anchors(ep, 1), init_weights(ep)
        g = euclidean_gradients(ep, anchors, weights, cfg)
        once = riemannian_gradients(g, anchors, weights)
        twice = riemannian_gradients(once, anchors, weights)
        assert np.allclose(once.dW, twice.dW, atol=1e-15)
        assert np.allclose(once.dK, twice.dK, atol=1e-15)

    def test_tau_mismatch(self):
        ep = make_episode(seed=2)
        cfg = ClassifierConfig(tau=3, iterations=1)
        with pytest.raises(errors.ShapeMismatch):
            euclidean_gradients(ep, init_anchors(ep, 1), init_weights(ep), cfg)

    def test_shape_mismatch_in_projection(self):
        ep = make_episode(seed=3)
        anchors, weights = init_anchors(ep, 1), init_weights(ep)
        bad = GradientBundle(np.zeros((5, 4, 2)), np.zeros((2, 4, 2)))
        with pytest.raises(errors.ShapeMismatch):
            riemannian_gradients(bad, anchors, weights)


class TestRsgdStep:
    def test_frozen_rotation(self):
        # stepping against a unit tangent toward e2 lands at (cos lr, -sin lr)
        lr = 0.25
        w = WeightSet((OMPoint(np.array([[1.0], [0.0]])),))
        k = AnchorSet((OMPoint(np.array([[1.0], [0.0]])),))
        bundle = GradientBundle(
            np.array([[[0.0], [1.0]]]), np.array([[[0.0], [0.0]]])
        )
        new_w, new_k = rsgd_step(w, k, bundle, lr)
        assert np.allclose(
            new_w.points[0].data[:, 0], [math.cos(lr), -math.sin(lr)], atol=1e-12
        )
        assert np.allclose(new_k.points[0].data, k.points[0].data, atol=1e-15)

    def test_rejects_non_tangent(self):
        w = WeightSet((OMPoint(np.array([[1.0], [0.0]])),))
        k = AnchorSet((OMPoint(np.array([[1.0], [0.0]])),))
        bundle = GradientBundle(
            np.array([[[1.0], [0.0]]]), np.array([[[0.0], [0.0]]])
        )
        with pytest.raises(errors.NotTangent):
            rsgd_step(w, k, bundle, 0.1)

    def test_stays_on_manifold_both_modes(self):
        ep = make_episode(seed=4)
        cfg = ClassifierConfig(tau=2, iterations=1)
        anchors, weights = init_anchors(ep, 2), init_weights(ep)
        bundle = euclidean_gradients(ep, anchors, weights, cfg)
        for mode in GeometryMode:
            new_w, new_k = rsgd_step(weights, anchors, bundle, 0.1, mode)
            for pt in (*new_w.points, *new_k.points):
                norms = np.linalg.norm(pt.data, axis=0)
                assert np.abs(norms - 1.0).max() < 1e-12


class TestLogitGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        ways, n_support, n_query, tau = 3, 4, 5, 1
        labels = np.array([0, 1, 2, 0])
        z = rng.standard_normal((tau + 1, n_support + n_query, ways))
        cfg = ClassifierConfig(tau=tau, iterations=1)
        mu = weight_profile(tau, cfg.weight_fn)

        def loss_of(zz):
            e = np.exp(zz - zz.max(axis=-1, keepdims=True))
            post = e / e.sum(axis=-1, keepdims=True)
            return _losses_from_post(post, labels, n_support, cfg)[0]

        e = np.exp(z - z.max(axis=-1, keepdims=True))
        post = e / e.sum(axis=-1, keepdims=True)
        grad = _grad_z(post, labels, n_support, cfg, mu)
        step = 1e-6
        fd = np.zeros_like(z)
        it = np.nditer(z, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus, minus = z.copy(), z.copy()
            plus[idx] += step
            minus[idx] -= step
            fd[idx] = (loss_of(plus) - loss_of(minus)) / (2 * step)
        assert rel_err(grad, fd) < 1e-5

    def test_pure_inductive_zeroes_query_rows(self):
        rng = np.random.default_rng(8)
        labels = np.array([0, 1])
        z = rng.standard_normal((1, 5, 2))
        e = np.exp(z)
        post = e / e.sum(axis=-1, keepdims=True)
        cfg = ClassifierConfig(tau=0, pure_inductive=True, iterations=1)
        grad = _grad_z(post, labels, 2, cfg, weight_profile(0, cfg.weight_fn))
        assert np.all(grad[:, 2:, :] == 0.0)


class TestGradientsVsFiniteDifferences:
    @pytest.mark.parametrize("mode", list(GeometryMode))
    @pytest.mark.parametrize("seed", [0, 1])
    def test_small_configs(self, mode, seed):
        # 2-shot keeps supports off the prototypes; 1-shot saturates the
        # cross-entropy term and its true gradient collapses below FD noise
        ep = make_episode(ways=2, shots=2, queries=2, n=4, p=2, seed=seed)
        cfg = ClassifierConfig(tau=1, geometry=mode, iterations=1)
        anchors, weights = init_anchors(ep, 1), init_weights(ep)
        got = euclidean_gradients(ep, anchors, weights, cfg)
        dw, dk = fd_bundle(ep, anchors, weights, cfg)
        assert rel_err(got.dW, dw) < 1e-4
        assert rel_err(got.dK, dk) < 1e-4

    def test_saturated_configuration_is_stationary(self):
        # supports and queries sit exactly on orthogonal prototypes, so the
        # posteriors saturate and every gradient is numerically zero
        eye = np.eye(4)
        support = np.stack([eye[:, :1], eye[:, 1:2]])
        query = np.stack([eye[:, :1], eye[:, 1:2]])
        ep = Episode(
            ways=2, shots=1, queries=1,
            support=support, support_labels=np.array([0, 1]),
            query=query, query_labels=np.array([0, 1]),
        )
        cfg = ClassifierConfig(tau=1, iterations=1)
        g = euclidean_gradients(ep, init_anchors(ep, 1), init_weights(ep), cfg)
        assert np.abs(g.dW).max() < 1e-6
        assert np.abs(g.dK).max() < 1e-6


class TestFit:
    def test_deterministic(self):
        ep = make_episode(ways=3, shots=2, queries=4, n=6, p=2, seed=9)
        cfg = ClassifierConfig(tau=2, iterations=20)
        a, b = fit(ep, cfg), fit(ep, cfg)
        assert a.losses == b.losses
        assert a.residuals == b.residuals
        assert np.array_equal(a.predictions, b.predictions)

    def test_single_iteration_trace(self):
        ep = make_episode(seed=10)
        report = fit(ep, ClassifierConfig(tau=1, iterations=1))
        assert len(report.losses) == 1
        assert len(report.residuals) == 1
        assert report.predictions.shape == (ep.n_query,)
        assert report.duration_s > 0

    def test_loss_decreases(self):
        ep = make_episode(ways=3, shots=3, queries=5, n=8, p=2, seed=11)
        report = fit(ep, ClassifierConfig(tau=2, iterations=30))
        assert report.losses[-1] < report.losses[0]

    def test_residuals_stay_tiny_both_modes(self):
        ep = make_episode(ways=2, shots=2, queries=3, n=5, p=3, seed=12)
        for mode in GeometryMode:
            report = fit(ep, ClassifierConfig(tau=2, iterations=15, geometry=mode))
            assert max(report.residuals) < 1e-9

    def test_random_inits_seeded(self):
        from oblique_fewshot.classifier import AnchorInit, WeightInit

        ep = make_episode(seed=13)
        cfg = ClassifierConfig(
            tau=1, iterations=5,
            anchor_init=AnchorInit.RANDOM, weight_init=WeightInit.RANDOM, seed=42,
        )
        a, b = fit(ep, cfg), fit(ep, cfg)
        assert a.losses == b.losses
        other = fit(ep, ClassifierConfig(
            tau=1, iterations=5,
            anchor_init=AnchorInit.RANDOM, weight_init=WeightInit.RANDOM, seed=43,
        ))
        assert a.losses != other.losses

    def test_abort_wraps_iteration(self, monkeypatch):
        def boom(*args, **kwargs):
            raise errors.NonFinite("synthetic failure")

        monkeypatch.setattr(optim, "_loss_and_grads", boom)
        ep = make_episode(seed=14)
        with pytest.raises(errors.FitAborted, match="iteration 0"):
            fit(ep, ClassifierConfig(tau=1, iterations=3))

    def test_pure_inductive_runs(self):
        ep = make_episode(seed=15)
        report = fit(ep, ClassifierConfig(tau=1, iterations=5, pure_inductive=True))
        assert len(report.losses) == 5

    def test_uniform_weight_fn_runs(self):
        ep = make_episode(seed=16)
        report = fit(
            ep, ClassifierConfig(tau=2, iterations=5, weight_fn=WeightFn.UNIFORM)
        )
        assert len(report.losses) == 5
