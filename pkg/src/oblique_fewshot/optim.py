"""Riemannian SGD over classifier weights and anchors.

Gradients of the blended episode loss are computed in closed form: softmax
and entropy terms are differentiated directly, the squared tangent
distances chain through the log map's derivative with respect to both its
target and its base point, and the resulting ambient gradients are
restricted to the tangent spaces column by column. Because the loss is
evaluated on column-normalized parameters, the tangent-restricted gradient
equals the ambient gradient of the re-projected loss, which is exactly what
central finite differences over ambient perturbations measure.

Updates follow the geodesic: X <- Exp_X(-lr * grad), with anchors and
weights sharing one learning rate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import geometry
from .classifier import (
    LOG_FLOOR,
    WEIGHT_SUM_FLOOR,
    AnchorInit,
    AnchorSet,
    ClassifierConfig,
    Episode,
    WeightInit,
    WeightSet,
    init_anchors,
    init_weights,
    posterior_stack,
    project_samples,
    random_anchors,
    random_weights,
    weight_profile,
)
from .errors import FitAborted, NotTangent, OMError, ShapeMismatch, ZeroWeightSum
from .geometry import GeometryMode, OMPoint


@dataclass(frozen=True)
class GradientBundle:
    """Euclidean (or tangent-restricted) gradients for weights and anchors."""

    dW: np.ndarray  # (ways, n, p)
    dK: np.ndarray  # (tau+1, n, p)

    def __post_init__(self) -> None:
        dw = np.asarray(self.dW, dtype=np.float64)
        dk = np.asarray(self.dK, dtype=np.float64)
        geometry.check_finite(dw, "weight gradient")
        geometry.check_finite(dk, "anchor gradient")
        object.__setattr__(self, "dW", dw)
        object.__setattr__(self, "dK", dk)


@dataclass(frozen=True)
class FitReport:
    """Optimization trace: per-iteration losses and manifold residuals,
    final query predictions, and wall-clock duration."""

    losses: tuple[float, ...]
    residuals: tuple[float, ...]
    predictions: np.ndarray
    duration_s: float


def _losses_from_post(
    post: np.ndarray,
    support_labels: np.ndarray,
    n_support: int,
    config: ClassifierConfig,
) -> tuple[float, np.ndarray]:
    """Total loss and the weight profile, from posteriors shaped (T, M, c)."""
    mu = weight_profile(config.tau, config.weight_fn)
    denom = float(mu.sum())
    if denom < WEIGHT_SUM_FLOOR:
        raise ZeroWeightSum("anchor weight factors sum to zero")
    sup = post[:, :n_support, :]
    picked = sup[:, np.arange(n_support), support_labels]
    ce = -config.lam * np.log(np.maximum(picked, LOG_FLOOR)).mean(axis=1)
    if config.pure_inductive or post.shape[1] == n_support:
        mi = np.zeros(post.shape[0])
    else:
        qry = post[:, n_support:, :]
        cond = (qry * np.log(np.maximum(qry, LOG_FLOOR))).sum(axis=2).mean(axis=1)
        marg = qry.mean(axis=1)
        mi = -config.alpha * cond + (marg * np.log(np.maximum(marg, LOG_FLOOR))).sum(axis=1)
    total = float((mu * ce + (1.0 - mu) * mi).sum() / denom)
    return total, mu


def _grad_z(
    post: np.ndarray,
    support_labels: np.ndarray,
    n_support: int,
    config: ClassifierConfig,
    mu: np.ndarray,
) -> np.ndarray:
    """d(total loss)/d(logits) with logits z = -gamma * d^2, shape (T, M, c)."""
    big_t, big_m, ways = post.shape
    n_query = big_m - n_support
    denom = float(mu.sum())
    out = np.zeros_like(post)

    sup = post[:, :n_support, :]
    picked = sup[:, np.arange(n_support), support_labels]
    onehot = np.zeros((n_support, ways))
    onehot[np.arange(n_support), support_labels] = 1.0
    # Clamped log has zero derivative below the floor.
    alive = (picked > LOG_FLOOR)[:, :, None]
    w_ce = (mu / denom * config.lam / n_support)[:, None, None]
    out[:, :n_support, :] = w_ce * alive * (sup - onehot[None, :, :])

    if n_query and not config.pure_inductive:
        qry = post[:, n_support:, :]
        logq = np.log(np.maximum(qry, LOG_FLOOR))
        a = logq + (qry > LOG_FLOOR)
        marg = qry.mean(axis=1)
        logm = np.log(np.maximum(marg, LOG_FLOOR))
        b = logm + (marg > LOG_FLOOR)
        # softmax pullback of sum_k u_k p_k: p_j (u_j - sum_k p_k u_k)
        inner_a = np.einsum("tqk,tqk->tq", qry, a)
        inner_b = np.einsum("tqk,tk->tq", qry, b)
        w_mi = ((1.0 - mu) / denom)[:, None, None]
        grad_cond = qry * (a - inner_a[:, :, None])
        grad_marg = qry * (b[:, None, :] - inner_b[:, :, None])
        out[:, n_support:, :] = w_mi * (
            -config.alpha / n_query * grad_cond + grad_marg / n_query
        )
    return out


def _loss_and_grads(
    samples: np.ndarray,
    support_labels: np.ndarray,
    n_support: int,
    anchor_stack: np.ndarray,
    weight_stack: np.ndarray,
    config: ClassifierConfig,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """One forward/backward pass on raw stacks.

    Returns (total loss, dW (c,n,p), dK (T,n,p), posteriors (T,M,c)); the
    gradients are ambient but already tangent column by column.
    """
    mode = config.geometry
    post, h, hw = posterior_stack(samples, anchor_stack, weight_stack, config.gamma, mode)
    loss, mu = _losses_from_post(post, support_labels, n_support, config)
    dz = _grad_z(post, support_labels, n_support, config, mu)
    dd2 = -config.gamma * dz

    row = dd2.sum(axis=2)  # (T, M)
    col = dd2.sum(axis=1)  # (T, c)
    g_h = 2.0 * row[:, :, None, None] * h - 2.0 * np.einsum("tmk,tkij->tmij", dd2, hw)
    g_hw = 2.0 * col[:, :, None, None] * hw - 2.0 * np.einsum("tmk,tmij->tkij", dd2, h)

    kk = anchor_stack[:, None]
    _, gk_samples = geometry.log_batch_vjp(kk, samples[None], g_h, mode, need_x=False)
    gx_w, gk_w = geometry.log_batch_vjp(kk, weight_stack[None], g_hw, mode)

    dw = geometry.tangent_project_batch(weight_stack, gx_w.sum(axis=0))
    dk = geometry.tangent_project_batch(
        anchor_stack, gk_samples.sum(axis=1) + gk_w.sum(axis=1)
    )
    geometry.check_finite(np.array(loss), "loss")
    geometry.check_finite(dw, "weight gradient")
    geometry.check_finite(dk, "anchor gradient")
    return loss, dw, dk, post


def _episode_stacks(episode: Episode) -> np.ndarray:
    return project_samples(np.concatenate([episode.support, episode.query]))


def euclidean_gradients(
    episode: Episode,
    anchors: AnchorSet,
    weights: WeightSet,
    config: ClassifierConfig,
) -> GradientBundle:
    """Gradients of the total episode loss w.r.t. every weight and anchor.

    Defined through the re-projected loss, so each returned matrix is
    already orthogonal to its base point column by column and matches
    central finite differences over ambient perturbations.
    """
    if anchors.tau != config.tau:
        raise ShapeMismatch(f"anchor set has tau={anchors.tau}, config.tau={config.tau}")
    samples = _episode_stacks(episode)
    _, dw, dk, _ = _loss_and_grads(
        samples, episode.support_labels, episode.n_support,
        anchors.stacked(), weights.stacked(), config,
    )
    return GradientBundle(dw, dk)


def riemannian_gradients(
    bundle: GradientBundle, anchors: AnchorSet, weights: WeightSet
) -> GradientBundle:
    """Restrict a Euclidean gradient bundle to the tangent spaces."""
    if bundle.dW.shape != (weights.ways, *weights.points[0].data.shape):
        raise ShapeMismatch("weight gradient shape mismatch")
    if bundle.dK.shape != (anchors.tau + 1, *anchors.points[0].data.shape):
        raise ShapeMismatch("anchor gradient shape mismatch")
    return GradientBundle(
        geometry.tangent_project_batch(weights.stacked(), bundle.dW),
        geometry.tangent_project_batch(anchors.stacked(), bundle.dK),
    )


def rsgd_step(
    weights: WeightSet,
    anchors: AnchorSet,
    bundle: GradientBundle,
    lr: float,
    mode: GeometryMode = GeometryMode.EXACT,
) -> tuple[WeightSet, AnchorSet]:
    """Geodesic step against the gradient; requires a tangent bundle."""
    w_stack, k_stack = weights.stacked(), anchors.stacked()
    for base, grad, what in ((w_stack, bundle.dW, "dW"), (k_stack, bundle.dK, "dK")):
        resid = np.abs(np.einsum("...ij,...ij->...j", base, grad))
        if resid.size and float(resid.max()) >= geometry.TANGENT_ARG_TOL:
            raise NotTangent(f"{what} is not tangent (residual {float(resid.max()):.3e})")
    new_w = geometry.exp_batch(w_stack, -lr * bundle.dW, mode)
    new_k = geometry.exp_batch(k_stack, -lr * bundle.dK, mode)
    return (
        WeightSet(tuple(OMPoint(m) for m in new_w)),
        AnchorSet(tuple(OMPoint(m) for m in new_k)),
    )


def _initial_stacks(
    episode: Episode, config: ClassifierConfig
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed)))
    if config.anchor_init is AnchorInit.PSEUDO_KARCHER:
        k = init_anchors(episode, config.tau).stacked()
    else:
        k = random_anchors(rng, config.tau, episode.n, episode.p).stacked()
    if config.weight_init is WeightInit.PROTOTYPE:
        w = init_weights(episode).stacked()
    else:
        w = random_weights(rng, episode.ways, episode.n, episode.p).stacked()
    return k, w


def _column_residual(stack: np.ndarray) -> float:
    norms = np.sqrt(np.einsum("...ij,...ij->...j", stack, stack))
    return float(np.abs(norms - 1.0).max())


def fit(episode: Episode, config: ClassifierConfig) -> FitReport:
    """Iteratively refine anchors and weights, then classify the queries.

    Each iteration evaluates the blended loss on the current parameters,
    records it, and takes one RSGD step on both parameter groups. The loss
    trace therefore holds the pre-update loss of every iteration.
    """
    start = time.perf_counter()
    samples = _episode_stacks(episode)
    k_stack, w_stack = _initial_stacks(episode, config)
    losses: list[float] = []
    residuals: list[float] = []
    post = None
    for it in range(config.iterations):
        try:
            loss, dw, dk, post = _loss_and_grads(
                samples, episode.support_labels, episode.n_support,
                k_stack, w_stack, config,
            )
        except OMError as err:
            raise FitAborted(f"iteration {it}: {err}") from err
        losses.append(loss)
        try:
            w_stack = geometry.exp_batch(w_stack, -config.lr * dw, config.geometry)
            k_stack = geometry.exp_batch(k_stack, -config.lr * dk, config.geometry)
        except OMError as err:
            raise FitAborted(f"iteration {it}: {err}") from err
        residuals.append(max(_column_residual(w_stack), _column_residual(k_stack)))
    try:
        post, _, _ = posterior_stack(samples, k_stack, w_stack, config.gamma, config.geometry)
    except OMError as err:
        raise FitAborted(f"final posterior evaluation: {err}") from err
    mu = weight_profile(config.tau, config.weight_fn)
    qpost = post[:, episode.n_support :, :]
    if config.tau == 0:
        scores = qpost[0]
    else:
        scores = np.einsum("tqk,t->qk", qpost, 1.0 - mu)
    preds = np.argmax(scores, axis=1)
    return FitReport(
        losses=tuple(losses),
        residuals=tuple(residuals),
        predictions=preds,
        duration_s=time.perf_counter() - start,
    )
