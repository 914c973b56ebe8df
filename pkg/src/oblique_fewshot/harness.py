"""Episodic evaluation: sampling, scoring, aggregation, ablation sweeps.

Episodes are sampled from a feature store, fitted with the tangent-space
classifier, and scored against the hidden query labels. Per-episode RNG
streams derive from (master seed, episode index), so reports are a pure
function of the store bytes, the config, and the seed at any thread count;
parallel workers only change wall-clock time.
"""
from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .classifier import ClassifierConfig, Episode
from .errors import (
    EvaluationAborted,
    InsufficientData,
    OMError,
    OutOfRange,
    PyramidTooDeep,
    StoreCompatError,
)
from .optim import fit
from .pyramid import region_features
from .store import FeatureStore


@dataclass(frozen=True)
class Protocol:
    """Episode shape: ways-way, shots-shot, `queries` query samples per class."""

    ways: int = 5
    shots: int = 5
    queries: int = 15

    def __post_init__(self) -> None:
        if self.ways < 1 or self.shots < 1 or self.queries < 1:
            raise OutOfRange("ways, shots and queries must all be >= 1")


@dataclass(frozen=True)
class EvalReport:
    """Aggregated evaluation results plus the configuration echo."""

    config: dict
    episodes: int
    mean_accuracy: float
    ci95: float
    per_episode: tuple[float, ...]
    seed: int
    failures: int
    duration_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "episodes": self.episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "per_episode": list(self.per_episode),
            "seed": self.seed,
            "failures": self.failures,
            "duration_s": self.duration_s,
        }


def pooled_view(store: FeatureStore, pyramid: int) -> FeatureStore:
    """Region-feature view of a store at the requested pyramid depth.

    Pre-pooled stores are returned unchanged (their p is fixed at export
    time). Raw stores are pooled once up front so repeated episode sampling
    does not recompute the transform; the view lives only in memory.
    """
    if store.pooled:
        return store
    if pyramid > min(store.h, store.w):
        raise PyramidTooDeep(
            f"pyramid {pyramid} exceeds map size {store.h}x{store.w}"
        )
    records = [
        [region_features(rec.astype(np.float64), pyramid) for rec in recs]
        for recs in store.records
    ]
    return FeatureStore(
        n=store.n, h=0, w=0, p=pyramid, pooled=True, split=store.split,
        classes=list(store.classes), records=records,
    )


def sample_episode(
    store: FeatureStore,
    ways: int,
    shots: int,
    queries: int,
    rng_seed,
    pyramid: int | None = None,
) -> Episode:
    """Draw one episode without replacement; deterministic under the seed.

    ``rng_seed`` is an integer seed or a ready np.random.Generator. For raw
    stores ``pyramid`` selects the region-feature depth; pre-pooled stores
    use their stored p. Split-pool stores draw support and query samples
    from their respective pools.
    """
    if ways < 1 or shots < 1 or queries < 0:
        raise OutOfRange("ways and shots must be >= 1, queries >= 0")
    if ways > len(store.classes):
        raise InsufficientData(
            f"episode needs {ways} classes, store has {len(store.classes)}"
        )
    if not store.pooled:
        if pyramid is None:
            raise OutOfRange("raw stores need an explicit pyramid depth")
        store = pooled_view(store, pyramid)
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(np.random.SeedSequence(int(rng_seed)))
    )
    chosen = rng.choice(len(store.classes), size=ways, replace=False)
    support, query = [], []
    for cls in chosen:
        recs = store.records[cls]
        pool = store.support_pool_size(cls)
        if store.split:
            if shots > pool or queries > len(recs) - pool:
                raise InsufficientData(
                    f"class {store.classes[cls]!r} pools ({pool}/{len(recs) - pool}) "
                    f"cannot supply {shots} support + {queries} query samples"
                )
            sup_idx = rng.choice(pool, size=shots, replace=False)
            qry_idx = pool + rng.choice(len(recs) - pool, size=queries, replace=False)
        else:
            if shots + queries > len(recs):
                raise InsufficientData(
                    f"class {store.classes[cls]!r} has {len(recs)} records, "
                    f"episode needs {shots + queries}"
                )
            perm = rng.permutation(len(recs))
            sup_idx, qry_idx = perm[:shots], perm[shots : shots + queries]
        support.extend(np.asarray(recs[i], dtype=np.float64) for i in sup_idx)
        query.extend(np.asarray(recs[i], dtype=np.float64) for i in qry_idx)
    labels = np.repeat(np.arange(ways), shots)
    qlabels = np.repeat(np.arange(ways), queries)
    return Episode(
        ways=ways,
        shots=shots,
        queries=queries,
        support=np.stack(support),
        support_labels=labels,
        query=np.stack(query) if query else np.empty((0, store.n, store.p)),
        query_labels=qlabels,
    )


def _config_echo(config: ClassifierConfig, protocol: Protocol, threads: int) -> dict:
    return {
        "tau": config.tau,
        "pyramid": config.pyramid,
        "gamma": config.gamma,
        "alpha": config.alpha,
        "lambda": config.lam,
        "lr": config.lr,
        "iterations": config.iterations,
        "geometry": config.geometry.value,
        "weight_fn": config.weight_fn.value,
        "anchor_init": config.anchor_init.value,
        "weight_init": config.weight_init.value,
        "inductive": config.pure_inductive,
        "seed": config.seed,
        "ways": protocol.ways,
        "shots": protocol.shots,
        "queries": protocol.queries,
        "threads": threads,
    }


def _episode_seed(master: int, index: int) -> int:
    return int(
        np.random.SeedSequence((int(master), int(index), 1)).generate_state(
            1, np.uint64
        )[0]
    )


def confidence_interval(accuracies) -> float:
    """Normal-approximation 95% half-width, 1.96 * stddev / sqrt(N).

    Sample stddev (ddof=1); a single value has zero width by convention.
    """
    accs = np.asarray(accuracies, dtype=np.float64)
    if accs.size < 2:
        return 0.0
    return float(1.96 * np.std(accs, ddof=1) / np.sqrt(accs.size))


def evaluate(
    store: FeatureStore,
    config: ClassifierConfig,
    episodes: int,
    protocol: Protocol = Protocol(),
    threads: int = 1,
) -> EvalReport:
    """Fit and score `episodes` sampled tasks; aggregate mean and 95% CI.

    Individual episode failures are counted and excluded; more than 1%
    failures aborts the run.
    """
    if episodes < 1:
        raise OutOfRange(f"episodes must be >= 1, got {episodes}")
    if threads < 1:
        raise OutOfRange(f"threads must be >= 1, got {threads}")
    if protocol.ways > len(store.classes):
        raise InsufficientData(
            f"episode needs {protocol.ways} classes, store has {len(store.classes)}"
        )
    start = time.perf_counter()
    view = pooled_view(store, config.pyramid)

    def run_one(idx: int) -> float:
        rng = np.random.default_rng(
            np.random.SeedSequence((int(config.seed), int(idx)))
        )
        episode = sample_episode(
            view, protocol.ways, protocol.shots, protocol.queries, rng
        )
        report = fit(episode, replace(config, seed=_episode_seed(config.seed, idx)))
        return float(np.mean(report.predictions == episode.query_labels))

    results: dict[int, float] = {}
    failures: list[tuple[int, str]] = []
    if threads == 1:
        for idx in range(episodes):
            try:
                results[idx] = run_one(idx)
            except OMError as err:
                failures.append((idx, str(err)))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {idx: pool.submit(run_one, idx) for idx in range(episodes)}
            for idx, fut in futures.items():
                try:
                    results[idx] = fut.result()
                except OMError as err:
                    failures.append((idx, str(err)))
    if len(failures) > 0.01 * episodes:
        idx, msg = failures[0]
        raise EvaluationAborted(
            f"{len(failures)} of {episodes} episodes failed; first failure "
            f"(episode {idx}): {msg}"
        )
    accs = [results[idx] for idx in sorted(results)]
    mean = float(np.mean(accs))
    ci = confidence_interval(accs)
    return EvalReport(
        config=_config_echo(config, protocol, threads),
        episodes=episodes,
        mean_accuracy=mean,
        ci95=ci,
        per_episode=tuple(accs),
        seed=config.seed,
        failures=len(failures),
        duration_s=time.perf_counter() - start,
    )


@dataclass(frozen=True)
class SweepAxes:
    """Optional value lists per swept field; None means keep the base value."""

    tau: tuple[int, ...] | None = None
    pyramid: tuple[int, ...] | None = None
    weight_fn: tuple | None = None
    anchor_init: tuple | None = None
    weight_init: tuple | None = None


def sweep(
    store: FeatureStore,
    base_config: ClassifierConfig,
    axes: SweepAxes,
    episodes: int,
    protocol: Protocol = Protocol(),
    threads: int = 1,
) -> list[EvalReport]:
    """Evaluate the Cartesian product of the axes; reports in product order.

    Axis order (outer to inner): tau, pyramid, weight_fn, anchor_init,
    weight_init. Pyramid sweeps need a raw store; pre-pooled stores have a
    fixed p.
    """
    taus = axes.tau or (base_config.tau,)
    pyramids = axes.pyramid or (base_config.pyramid,)
    weight_fns = axes.weight_fn or (base_config.weight_fn,)
    anchor_inits = axes.anchor_init or (base_config.anchor_init,)
    weight_inits = axes.weight_init or (base_config.weight_init,)
    if store.pooled and any(p != store.p for p in pyramids):
        raise StoreCompatError(
            f"pyramid sweep over {list(pyramids)} impossible: store is pre-pooled at p={store.p}"
        )
    reports = []
    for tau, pyr, wf, ai, wi in itertools.product(
        taus, pyramids, weight_fns, anchor_inits, weight_inits
    ):
        cfg = replace(
            base_config, tau=tau, pyramid=pyr, weight_fn=wf, anchor_init=ai,
            weight_init=wi,
        )
        reports.append(evaluate(store, cfg, episodes, protocol, threads))
    return reports
