"""Multilevel Monte Carlo estimation of cost and gradient.

The estimator at optimization level k telescopes over discretization
levels 0..k: the level-0 term is a plain MC average, each level l >= 1
contributes the average of coupled differences

    Y_l(omega) = Q_l(u_l, omega) - P Q_{l-1}(u_{l-1}, omega),

where both members share the stochastic realization omega, u_l are the
successive restrictions of the input control, and P is prolongation.  The
deterministic regularization gradient alpha*u passes through the telescoping
unchanged, so it is added once at the output level.  The matching cost
estimate is accumulated from the same samples, which makes the returned
gradient the exact gradient of the returned cost functional.

Sample counts per level follow the variance-optimal allocation

    n_l = ceil( 1/(theta eps^2) * sqrt(V_l / C_l) * sum_i sqrt(V_i C_i) ),

and coarser optimization levels retain a fraction q^(K-k) of the samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import InsufficientSamples, InvalidQ, LevelMismatch
from .grids import LevelVector, norm
from .problems import ControlProblem
from .random_fields import RngStream

# Purposes carving up the stream id space; combined with the cycle index
# they keep warmup, optimization and confirmation sample sets disjoint.
PURPOSE_OPT = 0
PURPOSE_WARMUP = 1
PURPOSE_CONFIRM = 2
PURPOSE_STATE = 3
PURPOSE_USER = 4


def make_set_id(cycle: int, purpose: int) -> int:
    if not 0 <= purpose < 8:
        raise ValueError("purpose outside [0, 8)")
    if not 0 <= cycle < (1 << 13):
        raise ValueError("cycle outside [0, 2^13)")
    return (cycle << 3) | purpose


@dataclass
class SolveLedger:
    """Record of sample evaluations for cost accounting.

    One unit is a full gradient sample (forward + adjoint solve) at some
    discretization level; cost-only samples weigh 0.5.
    """

    events: list = dataclass_field(default_factory=list)

    def add(self, level: int, n: int, weight: float = 1.0) -> None:
        if n > 0:
            self.events.append((level, n, weight))

    def merge(self, other: "SolveLedger") -> None:
        self.events.extend(other.events)

    def sample_counts(self) -> dict:
        out: dict = {}
        for level, n, weight in self.events:
            out[level] = out.get(level, 0.0) + n * weight
        return out


def equivalent_fine_solves(events, finest_level: int, kappa: float,
                           cost_per_level=None) -> float:
    """Total cost in units of one finest-level sample evaluation.

    ``events`` is a :class:`SolveLedger` or an iterable of
    ``(level, n[, weight])`` tuples.  By default a level-l sample costs
    ``2**(kappa*(l - L))`` fine-solve units; passing measured per-level
    costs overrides the model.
    """
    if isinstance(events, SolveLedger):
        events = events.events
    total = 0.0
    for ev in events:
        level, n, weight = ev if len(ev) == 3 else (*ev, 1.0)
        if cost_per_level is not None:
            unit = cost_per_level[level] / cost_per_level[finest_level]
        else:
            unit = 2.0 ** (kappa * (level - finest_level))
        total += weight * n * unit
    return total


@dataclass(frozen=True)
class LevelStats:
    """Per-level variance/cost estimates and fitted decay rates.

    ``V[l]`` integrates the pointwise sample variance of Y_l over the
    domain; ``C[l]`` is the per-sample cost in relative units 2**(kappa*l).
    ``phi``/``kappa``/``rho`` are fitted decay exponents (variance, cost,
    bias); a rate is None when not measurable.
    """

    levels: tuple
    V: np.ndarray
    C: np.ndarray
    n_used: np.ndarray
    mean_norms: np.ndarray
    phi: float | None = None
    kappa: float | None = None
    rho: float | None = None


@dataclass(frozen=True)
class SampleAllocation:
    eps: float
    theta: float
    n: tuple
    finest: int


@dataclass(frozen=True)
class MgoptSampleSets:
    """Sample sets Omega_{l,k} for every optimization level k.

    Level k uses MLMC levels 0..k with counts ceil(q**(K-k) * n_l), clamped
    to at least one sample.  Streams for different MLMC levels l never
    coincide (the level enters the stream key); when ``nested`` the sets of
    level k are prefixes of those of level k+1.
    """

    K: int
    counts: tuple  # counts[k][l], l <= k
    q: float
    nested: bool
    global_seed: int
    set_id: int

    def count(self, k: int, level: int) -> int:
        return self.counts[k][level]

    @staticmethod
    def stream_set_id(set_id: int, nested: bool, k: int) -> int:
        return (set_id << 8) | (0 if nested else k + 1)

    def _effective_set_id(self, k: int) -> int:
        return self.stream_set_id(self.set_id, self.nested, k)

    def streams(self, k: int, level: int) -> list:
        sid = self._effective_set_id(k)
        return [
            RngStream(self.global_seed, sid, level, i)
            for i in range(self.count(k, level))
        ]


def build_sample_sets(K: int, allocation: SampleAllocation, q: float,
                      nested: bool, global_seed: int,
                      set_id: int = PURPOSE_USER) -> MgoptSampleSets:
    """Scale the finest-level allocation down the optimization hierarchy."""
    if not 0.0 < q < 0.5:
        raise InvalidQ(f"q={q} outside (0, 1/2)")
    if allocation.finest != K or len(allocation.n) != K + 1:
        raise LevelMismatch("allocation does not match the requested K")
    counts = []
    for k in range(K + 1):
        scale = q ** (K - k)
        counts.append(tuple(
            max(1, math.ceil(scale * allocation.n[level] - 1e-9))
            for level in range(k + 1)
        ))
    return MgoptSampleSets(
        K=K, counts=tuple(counts), q=q, nested=nested,
        global_seed=global_seed, set_id=set_id,
    )


def optimal_allocation(stats: LevelStats, eps: float, theta: float,
                       floor=None) -> SampleAllocation:
    """Evaluate the variance-optimal sample counts with upward rounding.

    Levels with zero variance are clamped to one sample so their bias
    correction still enters the telescoped estimate.  ``floor`` raises the
    count per level, typically to the warm-up count so that warm-up samples
    are never discarded.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    V = np.asarray(stats.V, dtype=float)
    C = np.asarray(stats.C, dtype=float)
    s = float(np.sum(np.sqrt(V * C)))
    n = []
    for level, (v, c) in enumerate(zip(V, C)):
        if v <= 0.0 or s == 0.0:
            n_l = 1
        else:
            n_l = max(1, math.ceil(np.sqrt(v / c) * s / (theta * eps**2) - 1e-9))
        if floor is not None:
            n_l = max(n_l, int(floor[level]))
        n.append(n_l)
    return SampleAllocation(eps=eps, theta=theta, n=tuple(n), finest=len(n) - 1)


def _restriction_chain(problem: ControlProblem, u_k: LevelVector) -> dict:
    u_at = {u_k.level: u_k}
    for level in range(u_k.level - 1, -1, -1):
        u_at[level] = problem.hierarchy.restrict(u_at[level + 1])
    return u_at


def _coupled_gradient_sample(problem, u_at, stream, level):
    """(tracking-cost difference, Y_l values) for one realization."""
    if level == 0:
        f = problem.field(stream, 0)
        jt, q = problem.tracking_cost_grad(u_at[0], f)
        return jt, q.values
    f_fine, f_coarse = problem.field_pair(stream, level)
    jt_f, q_f = problem.tracking_cost_grad(u_at[level], f_fine)
    jt_c, q_c = problem.tracking_cost_grad(u_at[level - 1], f_coarse)
    y = q_f - problem.hierarchy.prolong(q_c)
    return jt_f - jt_c, y.values


def _coupled_cost_sample(problem, u_at, stream, level):
    if level == 0:
        f = problem.field(stream, 0)
        return problem.tracking_cost(u_at[0], f)
    f_fine, f_coarse = problem.field_pair(stream, level)
    return (problem.tracking_cost(u_at[level], f_fine)
            - problem.tracking_cost(u_at[level - 1], f_coarse))


def _map_in_order(fn, items, workers: int):
    """Evaluate fn over items; results always in input order."""
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class GradientEstimate:
    """MLMC gradient at an optimization level with its matched cost."""

    value: LevelVector
    cost_value: float
    stats: LevelStats
    eps_used: float | None
    set_ids: tuple
    prefix: dict | None = None

    @property
    def level(self) -> int:
        return self.value.level

    @property
    def gradient_norm(self) -> float:
        return norm(self.value)


def mlmc_gradient(problem: ControlProblem, u_k: LevelVector,
                  sets: MgoptSampleSets, k: int, *,
                  ledger: SolveLedger | None = None,
                  eps_used: float | None = None,
                  prefix_counts: tuple | None = None,
                  sample_cache: dict | None = None,
                  workers: int = 1) -> GradientEstimate:
    """Estimate cost and gradient at optimization level k.

    ``prefix_counts`` (the level-(k-1) counts of nested sets) asks for
    running-sum snapshots after that many samples per level, from which
    :func:`subestimate_from_prefix` assembles the level-(k-1) estimate at
    the restricted control without further solves.  Any failed sample
    propagates; nothing is silently dropped or resampled.

    ``sample_cache`` maps (level, index) to already-computed sample values
    for the *same* control; cached samples are reused without solves or
    ledger charges.  Callers must only pass caches collected at u_k.
    """
    if u_k.level != k:
        raise LevelMismatch(f"control lives on level {u_k.level}, expected {k}")
    hier = problem.hierarchy
    u_at = _restriction_chain(problem, u_k)
    if prefix_counts is not None and len(prefix_counts) < k:
        raise LevelMismatch("prefix_counts must cover levels 0..k-1")

    acc = None
    cost_track = 0.0
    v_hat, counts, mean_norms = [], [], []
    prefix_data: dict = {}
    for level in range(k + 1):
        streams = sets.streams(k, level)
        n = len(streams)
        if prefix_counts is not None and level < k and prefix_counts[level] > n:
            raise LevelMismatch("prefix counts exceed available samples")

        def eval_or_cached(item):
            i, stream = item
            if sample_cache is not None and (level, i) in sample_cache:
                return sample_cache[(level, i)]
            return _coupled_gradient_sample(problem, u_at, stream, level)

        hits = (sum(1 for i in range(n) if (level, i) in sample_cache)
                if sample_cache is not None else 0)
        results = _map_in_order(eval_or_cached, list(enumerate(streams)), workers)
        sum_y = np.zeros(hier.shape(level, problem.control_role))
        sum_sq = np.zeros_like(sum_y)
        sum_jt = 0.0
        for i, (jt, yv) in enumerate(results):
            sum_y += yv
            sum_sq += yv * yv
            sum_jt += jt
            if (prefix_counts is not None and level < k
                    and i + 1 == prefix_counts[level]):
                prefix_data[level] = (sum_y.copy(), sum_jt)
        mean_y = sum_y / n
        cost_track += sum_jt / n
        weight = hier.h(level) ** mean_y.ndim
        if n >= 2:
            pointwise_var = (sum_sq - n * mean_y**2) / (n - 1)
            v_hat.append(weight * float(np.sum(np.clip(pointwise_var, 0.0, None))))
        else:
            v_hat.append(np.nan)
        counts.append(n)
        mv = hier.vector(level, mean_y, problem.control_role)
        mean_norms.append(norm(mv))
        acc = mv if acc is None else hier.prolong(acc) + mv
        if ledger is not None:
            ledger.add(level, n - hits, 1.0)
            if level > 0:
                ledger.add(level - 1, n - hits, 1.0)

    grad = acc + problem.alpha * u_k
    cost = cost_track + problem.regularization(u_k)
    kappa = problem.kappa_default
    stats = LevelStats(
        levels=tuple(range(k + 1)),
        V=np.asarray(v_hat),
        C=2.0 ** (kappa * np.arange(k + 1)),
        n_used=np.asarray(counts),
        mean_norms=np.asarray(mean_norms),
        kappa=kappa,
    )
    return GradientEstimate(
        value=grad, cost_value=cost, stats=stats, eps_used=eps_used,
        set_ids=(sets.global_seed, sets._effective_set_id(k)),
        prefix=prefix_data if prefix_counts is not None else None,
    )


def subestimate_from_prefix(problem: ControlProblem, estimate: GradientEstimate,
                            sets: MgoptSampleSets, k_minus_1: int,
                            u_km1: LevelVector) -> GradientEstimate:
    """Assemble the level-(k-1) estimate from a nested level-k evaluation.

    Valid because nested sets make Omega_{l,k-1} the prefix of Omega_{l,k}
    and the control restrictions compose; zero additional solves are spent.
    """
    if not sets.nested:
        raise LevelMismatch("prefix reuse requires nested sample sets")
    if estimate.prefix is None:
        raise LevelMismatch("the level-k estimate kept no prefix sums")
    if u_km1.level != k_minus_1:
        raise LevelMismatch("restricted control has the wrong level")
    hier = problem.hierarchy
    acc = None
    cost_track = 0.0
    for level in range(k_minus_1 + 1):
        n = sets.count(k_minus_1, level)
        sum_y, sum_jt = estimate.prefix[level]
        mv = hier.vector(level, sum_y / n, problem.control_role)
        cost_track += sum_jt / n
        acc = mv if acc is None else hier.prolong(acc) + mv
    grad = acc + problem.alpha * u_km1
    cost = cost_track + problem.regularization(u_km1)
    return GradientEstimate(
        value=grad, cost_value=cost, stats=estimate.stats,
        eps_used=estimate.eps_used, set_ids=estimate.set_ids,
    )


def mlmc_cost(problem: ControlProblem, u_k: LevelVector, sets: MgoptSampleSets,
              k: int, *, ledger: SolveLedger | None = None,
              workers: int = 1) -> float:
    """Cost-only MLMC estimate from the same sample sets (forward solves)."""
    if u_k.level != k:
        raise LevelMismatch(f"control lives on level {u_k.level}, expected {k}")
    u_at = _restriction_chain(problem, u_k)
    total = 0.0
    for level in range(k + 1):
        streams = sets.streams(k, level)
        results = _map_in_order(
            lambda s: _coupled_cost_sample(problem, u_at, s, level),
            streams, workers,
        )
        total += sum(results) / len(streams)
        if ledger is not None:
            ledger.add(level, len(streams), 0.5)
            if level > 0:
                ledger.add(level - 1, len(streams), 0.5)
    return total + problem.regularization(u_k)


def _fit_log2_decay(levels, values):
    """Least-squares slope of log2(values) against level; None if unusable."""
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        return None
    slope = np.polyfit(levels[keep], np.log2(values[keep]), 1)[0]
    return float(slope)


def estimate_level_stats(problem: ControlProblem, u: LevelVector,
                         warmup_n: int, levels, *,
                         global_seed: int, set_id: int,
                         stream_factory=None,
                         kappa: float | None = None,
                         extrapolate_finest: int = 2,
                         phi_fallback: float = 2.0,
                         ledger: SolveLedger | None = None,
                         collect: dict | None = None,
                         workers: int = 1) -> LevelStats:
    """Warm-up variance estimation with extrapolation on the finest levels.

    Levels must be contiguous from 0; the control ``u`` lives on the finest
    of them.  The last ``extrapolate_finest`` levels are not sampled: their
    variance follows the fitted decay of the measured ones (at least two
    levels stay measured; ``phi_fallback`` is used when the fit has fewer
    than two difference levels to work with).

    ``stream_factory(level, index)`` overrides stream construction, letting
    warm-up samples share the streams of a subsequent estimator.  When
    ``collect`` is a dict, the per-sample values are stored under
    ``(level, index)`` for reuse as a sample cache at the same control.
    """
    levels = tuple(levels)
    if levels != tuple(range(len(levels))):
        raise LevelMismatch("levels must be 0..L contiguous")
    if warmup_n < 2:
        raise InsufficientSamples("need at least 2 warm-up samples per level")
    if u.level != levels[-1]:
        raise LevelMismatch("control must live on the finest requested level")
    hier = problem.hierarchy
    u_at = _restriction_chain(problem, u)
    n_extrapolated = min(max(extrapolate_finest, 0), max(len(levels) - 2, 0))
    measured = levels[: len(levels) - n_extrapolated]
    if stream_factory is None:
        stream_factory = lambda level, i: RngStream(global_seed, set_id, level, i)

    V = np.zeros(len(levels))
    mean_norms = np.zeros(len(levels))
    n_used = np.zeros(len(levels), dtype=int)
    for level in measured:
        streams = [stream_factory(level, i) for i in range(warmup_n)]
        results = _map_in_order(
            lambda s: _coupled_gradient_sample(problem, u_at, s, level),
            streams, workers,
        )
        if collect is not None:
            for i, res in enumerate(results):
                collect[(level, i)] = res
        ys = np.stack([yv for _, yv in results])
        weight = hier.h(level) ** (ys.ndim - 1)
        V[level] = weight * float(np.sum(np.var(ys, axis=0, ddof=1)))
        mean_vec = hier.vector(level, ys.mean(axis=0), problem.control_role)
        mean_norms[level] = norm(mean_vec)
        n_used[level] = warmup_n
        if ledger is not None:
            ledger.add(level, warmup_n, 1.0)
            if level > 0:
                ledger.add(level - 1, warmup_n, 1.0)

    fit_levels = [l for l in measured if l >= 1]
    slope = _fit_log2_decay(fit_levels, V[fit_levels]) if len(fit_levels) >= 2 else None
    phi = -slope if slope is not None and slope < 0 else None
    last = measured[-1]
    for level in levels[len(measured):]:
        if V[last] == 0.0:
            V[level] = 0.0
        else:
            rate = phi if phi is not None else phi_fallback
            V[level] = V[last] * 2.0 ** (-rate * (level - last))

    kappa = problem.kappa_default if kappa is None else kappa
    C = 2.0 ** (kappa * np.asarray(levels, dtype=float))
    rho_slope = (_fit_log2_decay(fit_levels, mean_norms[fit_levels])
                 if len(fit_levels) >= 2 else None)
    rho = -rho_slope if rho_slope is not None and rho_slope < 0 else None
    return LevelStats(
        levels=levels, V=V, C=C, n_used=n_used, mean_norms=mean_norms,
        phi=phi, kappa=kappa, rho=rho,
    )


def refresh_level_stats(stats: LevelStats, sample_stats: LevelStats,
                        only_levels=None) -> LevelStats:
    """Overwrite variance estimates with fresher ones where available.

    ``sample_stats`` usually comes from a gradient estimate's own samples;
    levels with fewer than two samples (NaN variance) keep the old value.
    ``only_levels`` limits the replacement, e.g. to levels whose current
    value is merely extrapolated.
    """
    V = np.asarray(stats.V, dtype=float).copy()
    n_used = np.asarray(stats.n_used).copy()
    eligible = set(stats.levels if only_levels is None else only_levels)
    for level in sample_stats.levels:
        if level >= len(V) or level not in eligible:
            continue
        v_new = sample_stats.V[level]
        if np.isfinite(v_new) and sample_stats.n_used[level] >= 2:
            V[level] = v_new
            n_used[level] = sample_stats.n_used[level]
    return LevelStats(
        levels=stats.levels, V=V, C=stats.C, n_used=n_used,
        mean_norms=stats.mean_norms, phi=stats.phi, kappa=stats.kappa,
        rho=stats.rho,
    )


def predicted_gradient_cost(sets: MgoptSampleSets, k: int, kappa: float) -> float:
    """Model cost of one gradient evaluation at level k, in fine-solve units.

    Each level-l coupled sample solves at levels l and l-1.
    """
    total = 0.0
    for level in range(k + 1):
        n = sets.count(k, level)
        total += n * 2.0 ** (kappa * (level - sets.K))
        if level > 0:
            total += n * 2.0 ** (kappa * (level - 1 - sets.K))
    return total
