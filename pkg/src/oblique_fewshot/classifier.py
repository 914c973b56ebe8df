"""Distance-based classification in the tangent spaces of anchor points.

An episode supplies labeled support and unlabeled query feature matrices.
The classifier maintains a chain of tau+1 anchor points interpolating
between the support mean and the query mean, plus one weight point per
class. Every sample and every weight is mapped into the tangent space at
each anchor; class posteriors are a softmax over negative squared tangent
distances scaled by a temperature. Support rows feed a cross-entropy term,
query rows feed a mutual-information term, and a polynomial weight factor
blends the two across the anchor chain.

Everything here is a pure function; the optimizer drives the updates.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import (
    DegenerateColumn,
    InsufficientData,
    NonFinite,
    OutOfRange,
    ShapeMismatch,
    ZeroWeightSum,
)
from .geometry import GeometryMode, OMPoint

LOG_FLOOR = 1e-30          # posteriors below this are clamped inside logs
WEIGHT_SUM_FLOOR = 1e-12   # smallest admissible sum of anchor weight factors


class WeightFn(enum.Enum):
    """Anchor weight-factor profile mu(t) on t = 0..tau."""

    POLY = "paper"          # (-t(2t-tau)^2 + tau^3) / tau^3
    UNIFORM = "uniform"     # 1/2
    LINEAR = "linear"       # 1 - t/tau
    QUADRATIC = "quadratic" # 1 - (t/tau)^2


class AnchorInit(enum.Enum):
    PSEUDO_KARCHER = "pseudokm"
    RANDOM = "random"


class WeightInit(enum.Enum):
    PROTOTYPE = "prototype"
    RANDOM = "random"


@dataclass(frozen=True)
class Episode:
    """One c-way few-shot task with stacked feature arrays.

    support: (c*shots, n, p); query: (c*queries, n, p). Labels are class
    indices in 0..ways-1; query labels are kept only for scoring.
    """

    ways: int
    shots: int
    queries: int
    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        sup = np.ascontiguousarray(np.asarray(self.support, dtype=np.float64))
        qry = np.ascontiguousarray(np.asarray(self.query, dtype=np.float64))
        sl = np.asarray(self.support_labels, dtype=np.int64)
        if self.ways < 1 or self.shots < 1 or self.queries < 0:
            raise OutOfRange("ways and shots must be >= 1, queries >= 0")
        if sup.ndim != 3 or qry.ndim != 3 or sup.shape[1:] != qry.shape[1:]:
            raise ShapeMismatch(
                f"support {sup.shape} and query {qry.shape} must be stacks of equal n x p matrices"
            )
        if not (np.all(np.isfinite(sup)) and np.all(np.isfinite(qry))):
            raise NonFinite("episode features contain non-finite entries")
        if sup.shape[0] != self.ways * self.shots or sl.shape != (sup.shape[0],):
            raise ShapeMismatch("support stack must hold ways*shots labeled matrices")
        if qry.shape[0] != self.ways * self.queries:
            raise ShapeMismatch("query stack must hold ways*queries matrices")
        counts = np.bincount(sl, minlength=self.ways) if sl.size else np.zeros(self.ways)
        if sl.size and (sl.min() < 0 or sl.max() >= self.ways):
            raise OutOfRange("support labels out of range")
        if not np.all(counts == self.shots):
            raise InsufficientData("every class needs exactly `shots` support samples")
        ql = self.query_labels
        if ql is not None:
            ql = np.asarray(ql, dtype=np.int64)
            if ql.shape != (qry.shape[0],):
                raise ShapeMismatch("query label count mismatch")
            if ql.size and (ql.min() < 0 or ql.max() >= self.ways):
                raise OutOfRange("query labels out of range")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "query", qry)
        object.__setattr__(self, "support_labels", sl)
        object.__setattr__(self, "query_labels", ql)

    @property
    def n(self) -> int:
        return self.support.shape[1]

    @property
    def p(self) -> int:
        return self.support.shape[2]

    @property
    def n_support(self) -> int:
        return self.support.shape[0]

    @property
    def n_query(self) -> int:
        return self.query.shape[0]


@dataclass(frozen=True)
class ClassifierConfig:
    """All fit hyperparameters; defaults are the reference operating point."""

    tau: int = 14
    pyramid: int = 11
    gamma: float = 7.5
    alpha: float = 0.1
    lam: float = 0.1
    lr: float = 0.1
    iterations: int = 100
    geometry: GeometryMode = GeometryMode.EXACT
    weight_fn: WeightFn = WeightFn.POLY
    anchor_init: AnchorInit = AnchorInit.PSEUDO_KARCHER
    weight_init: WeightInit = WeightInit.PROTOTYPE
    pure_inductive: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise OutOfRange(f"tau must be >= 0, got {self.tau}")
        if self.pyramid < 1:
            raise OutOfRange(f"pyramid must be >= 1, got {self.pyramid}")
        if not self.gamma > 0:
            raise OutOfRange(f"gamma must be > 0, got {self.gamma}")
        if self.alpha < 0 or self.lam < 0:
            raise OutOfRange("alpha and lambda must be >= 0")
        if not self.lr > 0:
            raise OutOfRange(f"lr must be > 0, got {self.lr}")
        if self.iterations < 1:
            raise OutOfRange(f"iterations must be >= 1, got {self.iterations}")
        if not 0 <= int(self.seed) < 2**64:
            raise OutOfRange("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class AnchorSet:
    """tau+1 anchor points ordered from the support end to the query end."""

    points: tuple[OMPoint, ...]

    def __post_init__(self) -> None:
        if not self.points:
            raise ShapeMismatch("anchor set cannot be empty")
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def tau(self) -> int:
        return len(self.points) - 1

    def stacked(self) -> np.ndarray:
        return np.stack([pt.data for pt in self.points])


@dataclass(frozen=True)
class WeightSet:
    """One weight point per class, indexed by class."""

    points: tuple[OMPoint, ...]

    def __post_init__(self) -> None:
        if not self.points:
            raise ShapeMismatch("weight set cannot be empty")
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def ways(self) -> int:
        return len(self.points)

    def stacked(self) -> np.ndarray:
        return np.stack([pt.data for pt in self.points])


@dataclass(frozen=True)
class PosteriorTensor:
    """Class posteriors p[sample][t][k]; support rows first, then query rows."""

    values: np.ndarray
    n_support: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeMismatch(f"posteriors must be (samples, anchors, classes), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("posteriors contain non-finite entries")
        if arr.size:
            sums = arr.sum(axis=-1)
            if float(np.abs(sums - 1.0).max()) >= 1e-9 or arr.min() < -1e-12:
                raise OutOfRange("posterior rows must be distributions summing to 1")
        if not 0 <= self.n_support <= arr.shape[0]:
            raise OutOfRange("n_support outside sample range")
        object.__setattr__(self, "values", arr)

    @property
    def support_rows(self) -> np.ndarray:
        return self.values[: self.n_support]

    @property
    def query_rows(self) -> np.ndarray:
        return self.values[self.n_support :]


def project_samples(stack: np.ndarray) -> np.ndarray:
    """Column-normalize a stack of feature matrices onto the manifold."""
    norms = np.sqrt(np.einsum("...ij,...ij->...j", stack, stack))
    if np.any(norms < geometry.DEGENERATE_NORM):
        raise DegenerateColumn("a sample feature matrix has a near-zero column")
    return stack / norms[..., None, :]


def posterior_stack(
    samples: np.ndarray,
    anchor_stack: np.ndarray,
    weight_stack: np.ndarray,
    gamma: float,
    mode: GeometryMode,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posteriors for on-manifold sample/anchor/weight stacks.

    samples (M,n,p), anchors (T,n,p), weights (c,n,p) ->
    (posteriors (T,M,c), sample tangents H (T,M,n,p), weight tangents HW (T,c,n,p)).
    Raises AntipodalColumn when any log map is undefined.
    """
    geometry._check_antipodal(
        np.einsum("tij,mij->tmj", anchor_stack, samples).min(axis=1)
    )
    geometry._check_antipodal(
        np.einsum("tij,kij->tkj", anchor_stack, weight_stack).min(axis=1)
    )
    h = geometry.log_batch(anchor_stack[:, None], samples[None, :], mode)
    hw = geometry.log_batch(anchor_stack[:, None], weight_stack[None, :], mode)
    hh = np.einsum("tmij,tmij->tm", h, h)
    ww = np.einsum("tkij,tkij->tk", hw, hw)
    cross = np.einsum("tmij,tkij->tmk", h, hw)
    d2 = hh[:, :, None] + ww[:, None, :] - 2.0 * cross
    logits = -gamma * d2
    logits -= logits.max(axis=-1, keepdims=True)
    expd = np.exp(logits)
    post = expd / expd.sum(axis=-1, keepdims=True)
    return post, h, hw


def class_posteriors(
    x: OMPoint,
    anchors: AnchorSet,
    weights: WeightSet,
    gamma: float,
    mode: GeometryMode = GeometryMode.EXACT,
) -> np.ndarray:
    """Posterior matrix (tau+1, ways) for a single sample point."""
    if not gamma > 0:
        raise OutOfRange(f"gamma must be > 0, got {gamma}")
    post, _, _ = posterior_stack(
        x.data[None], anchors.stacked(), weights.stacked(), gamma, mode
    )
    return post[:, 0, :]


def posteriors_for_episode(
    episode: Episode,
    anchors: AnchorSet,
    weights: WeightSet,
    gamma: float,
    mode: GeometryMode = GeometryMode.EXACT,
) -> PosteriorTensor:
    """Posteriors for every episode sample (support rows first)."""
    samples = project_samples(np.concatenate([episode.support, episode.query]))
    post, _, _ = posterior_stack(samples, anchors.stacked(), weights.stacked(), gamma, mode)
    return PosteriorTensor(post.transpose(1, 0, 2), episode.n_support)


def init_anchors(episode: Episode, tau: int, mode: GeometryMode = GeometryMode.EXACT) -> AnchorSet:
    """Anchor chain from Euclidean interpolation between support and query means.

    Anchor t averages raw features with weights (tau-t) on support and t on
    query, then projects onto the manifold; the endpoints are the projected
    support mean and the projected query mean. The geometry mode does not
    enter (projection is metric-independent); it is accepted for signature
    symmetry with the other anchor-space operations.
    """
    del mode
    if tau < 0:
        raise OutOfRange(f"tau must be >= 0, got {tau}")
    if episode.n_support == 0:
        raise InsufficientData("anchor initialization needs support samples")
    ssum = episode.support.sum(axis=0)
    if tau == 0:
        return AnchorSet((geometry.project_to_om(ssum / episode.n_support),))
    if episode.n_query == 0:
        raise InsufficientData("tau > 0 anchor initialization needs query samples")
    qsum = episode.query.sum(axis=0)
    pts = []
    for t in range(tau + 1):
        num = (tau - t) * ssum + t * qsum
        den = (tau - t) * episode.n_support + t * episode.n_query
        pts.append(geometry.project_to_om(num / den))
    return AnchorSet(tuple(pts))


def init_weights(episode: Episode) -> WeightSet:
    """Projected per-class means of the raw support features."""
    pts = []
    for k in range(episode.ways):
        rows = episode.support[episode.support_labels == k]
        pts.append(geometry.project_to_om(rows.mean(axis=0)))
    return WeightSet(tuple(pts))


def random_anchors(rng: np.random.Generator, tau: int, n: int, p: int) -> AnchorSet:
    """Unit-Gaussian anchor chain, one draw per anchor, projected."""
    if tau < 0:
        raise OutOfRange(f"tau must be >= 0, got {tau}")
    return AnchorSet(tuple(geometry.random_point(rng, n, p) for _ in range(tau + 1)))


def random_weights(rng: np.random.Generator, ways: int, n: int, p: int) -> WeightSet:
    """Unit-Gaussian class weights, one draw per class, projected."""
    if ways < 1:
        raise OutOfRange(f"ways must be >= 1, got {ways}")
    return WeightSet(tuple(geometry.random_point(rng, n, p) for _ in range(ways)))


def weight_factor(t: int, tau: int, variant: WeightFn = WeightFn.POLY) -> float:
    """Blend factor mu(t) in [0, 1]; all variants return 1 when tau = 0."""
    if tau < 0 or t < 0 or t > tau:
        raise OutOfRange(f"need 0 <= t <= tau, got t={t}, tau={tau}")
    if tau == 0:
        return 1.0
    if variant is WeightFn.POLY:
        return float(-t * (2 * t - tau) ** 2 + tau**3) / float(tau**3)
    if variant is WeightFn.UNIFORM:
        return 0.5
    if variant is WeightFn.LINEAR:
        return 1.0 - t / tau
    return 1.0 - (t / tau) ** 2


def weight_profile(tau: int, variant: WeightFn = WeightFn.POLY) -> np.ndarray:
    """mu(0..tau) as a vector."""
    return np.array([weight_factor(t, tau, variant) for t in range(tau + 1)])


def _clamped_log(arr: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(arr, LOG_FLOOR))


def _check_anchor_axis(post: PosteriorTensor, t: int) -> None:
    if not 0 <= t < post.values.shape[1]:
        raise OutOfRange(f"anchor index {t} outside 0..{post.values.shape[1] - 1}")


def ce_loss(post: PosteriorTensor, episode: Episode, t: int, lam: float) -> float:
    """Scaled cross-entropy of support rows at anchor t."""
    _check_anchor_axis(post, t)
    rows = post.support_rows[:, t, :]
    if rows.shape != (episode.n_support, episode.ways):
        raise ShapeMismatch("posterior support block does not match the episode")
    picked = rows[np.arange(episode.n_support), episode.support_labels]
    return float(-lam * _clamped_log(picked).mean())


def mi_loss(post: PosteriorTensor, episode: Episode, t: int, alpha: float) -> float:
    """Scaled conditional entropy minus marginal entropy of query rows at anchor t."""
    _check_anchor_axis(post, t)
    rows = post.query_rows[:, t, :]
    if rows.shape != (episode.n_query, episode.ways):
        raise ShapeMismatch("posterior query block does not match the episode")
    cond = float((rows * _clamped_log(rows)).sum(axis=1).mean())
    marginal = rows.mean(axis=0)
    return -alpha * cond + float((marginal * _clamped_log(marginal)).sum())


def total_loss(post: PosteriorTensor, episode: Episode, config: ClassifierConfig) -> float:
    """Weight-factor blend of per-anchor CE and MI, normalized by sum(mu)."""
    if post.values.shape[1] != config.tau + 1:
        raise ShapeMismatch(
            f"posteriors cover {post.values.shape[1]} anchors, config.tau+1 = {config.tau + 1}"
        )
    mu = weight_profile(config.tau, config.weight_fn)
    denom = float(mu.sum())
    if denom < WEIGHT_SUM_FLOOR:
        raise ZeroWeightSum("anchor weight factors sum to zero")
    total = 0.0
    for t in range(config.tau + 1):
        total += mu[t] * ce_loss(post, episode, t, config.lam)
        if not config.pure_inductive:
            total += (1.0 - mu[t]) * mi_loss(post, episode, t, config.alpha)
    return total / denom


def predict(post: PosteriorTensor, config: ClassifierConfig) -> np.ndarray:
    """Class index per query row; ties resolve to the lowest index."""
    if post.values.shape[1] != config.tau + 1:
        raise ShapeMismatch(
            f"posteriors cover {post.values.shape[1]} anchors, config.tau+1 = {config.tau + 1}"
        )
    rows = post.query_rows
    if config.tau == 0:
        scores = rows[:, 0, :]
    else:
        inv = 1.0 - weight_profile(config.tau, config.weight_fn)
        scores = np.einsum("qtk,t->qk", rows, inv)
    return np.argmax(scores, axis=1)
