"""MG/OPT V-cycle with tau-correction and a Dai-Yuan NCG smoother.

Each optimization level k carries the shifted functional

    J_k(u) = Jhat_k(u) - <tau_k, u>_k,

where Jhat_k is the sampled (MLMC) cost at level k and tau_k aligns the
coarse problem with the fine one: after presmoothing to v_{k,1} the
correction

    tau_{k-1} = I tau_k + grad Jhat_{k-1}(v_{k-1}) - I grad Jhat_k(v_{k,1})

makes the coarse shifted gradient match the restricted fine one exactly.
The prolonged coarse update is applied through a backtracking line search
(descent required, starting at s = 1), then postsmoothing runs.  Sample
sets stay fixed for the whole cycle.

The smoother is nonlinear conjugate gradient with the Dai-Yuan direction
mix.  On fixed-sample quadratic problems it performs the exact line search
from one extra gradient evaluation and propagates gradients by affine
combination, which makes it step-for-step equivalent to classical CG on
the sampled optimality system.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import LevelMismatch, LineSearchFailure, StabilityViolation
from .grids import LevelVector, inner_product, norm
from .mlmc import (
    GradientEstimate,
    MgoptSampleSets,
    SolveLedger,
    equivalent_fine_solves,
    mlmc_cost,
    mlmc_gradient,
    subestimate_from_prefix,
)
from .problems import ControlProblem


@dataclass(frozen=True)
class SmoothingSchedule:
    """Pre/postsmoothing step counts per optimization level.

    ``nu[k]``/``mu[k]`` apply at level k for k >= 1; the coarsest level runs
    ``coarsest_steps`` smoother iterations (or an exact solve of the sampled
    quadratic when ``coarsest_exact``).
    """

    nu: tuple
    mu: tuple
    coarsest_steps: int
    coarsest_exact: bool = False

    def __post_init__(self):
        if len(self.nu) != len(self.mu):
            raise ValueError("nu and mu must cover the same levels")
        if any(x < 0 for x in self.nu + self.mu) or self.coarsest_steps < 0:
            raise ValueError("smoothing counts must be >= 0")

    @property
    def levels(self) -> int:
        return len(self.nu)

    @staticmethod
    def default(K: int) -> "SmoothingSchedule":
        """No presmoothing at level K, counts doubling toward the coarse end.

        Total smoothing work at level k is 2**(K-k) steps: one postsmoothing
        step at level K, nu = mu = 2**(K-1-k) in between, and a combined
        2**K steps on the coarsest level.
        """
        nu = [0] * (K + 1)
        mu = [0] * (K + 1)
        if K >= 0:
            mu[K] = 1
        for k in range(1, K):
            nu[k] = mu[k] = 2 ** (K - 1 - k)
        return SmoothingSchedule(
            nu=tuple(nu), mu=tuple(mu), coarsest_steps=max(1, 2**K)
        )


class LevelObjective:
    """Sampled shifted functional J_k = Jhat_k - <tau_k, .> at one level."""

    def __init__(self, problem: ControlProblem, sets: MgoptSampleSets, k: int,
                 tau: LevelVector | None = None,
                 ledger: SolveLedger | None = None, workers: int = 1):
        self.problem = problem
        self.sets = sets
        self.k = k
        self.tau = tau
        self.ledger = ledger
        self.workers = workers
        self.quadratic = getattr(problem, "is_quadratic", False)
        self.last_estimate: GradientEstimate | None = None

    def _shift(self, u: LevelVector, jhat: float, ghat: LevelVector):
        if self.tau is None:
            return jhat, ghat
        return jhat - inner_product(self.tau, u), ghat - self.tau

    def evaluate(self, u: LevelVector):
        est = self.evaluate_unshifted(u)
        return self._shift(u, est.cost_value, est.value)

    def evaluate_unshifted(self, u: LevelVector, prefix_counts=None,
                           sample_cache=None) -> GradientEstimate:
        est = mlmc_gradient(self.problem, u, self.sets, self.k,
                            ledger=self.ledger, workers=self.workers,
                            prefix_counts=prefix_counts,
                            sample_cache=sample_cache)
        self.last_estimate = est
        return est

    def cost(self, u: LevelVector) -> float:
        j = mlmc_cost(self.problem, u, self.sets, self.k,
                      ledger=self.ledger, workers=self.workers)
        return j if self.tau is None else j - inner_product(self.tau, u)

    def step_cap(self, u: LevelVector, d: LevelVector) -> float:
        cap = getattr(self.problem, "initial_step_cap", None)
        return cap(u, d) if cap is not None else np.inf


def dai_yuan_beta(g: LevelVector, g_prev: LevelVector, d_prev: LevelVector) -> float:
    denom = inner_product(d_prev, g - g_prev)
    if denom <= 0.0:
        return 0.0  # degenerate curvature: restart with steepest descent
    return inner_product(g, g) / denom


@dataclass
class SmootherResult:
    v: LevelVector
    J: float | None
    g: LevelVector | None
    J_initial: float | None
    g_initial: LevelVector | None
    evaluations: float
    iterates: list
    steps_taken: int = 0


def ncg_smooth(objective: LevelObjective, v: LevelVector, steps: int, *,
               initial=None, gradient_tol: float = 0.0,
               armijo_c: float = 1e-4, backtrack_factor: float = 4.0,
               max_backtracks: int = 30, explicit_gradients: bool = True,
               record_iterates: bool = False) -> SmootherResult:
    """Run NCG steps on the level objective from v.

    ``initial`` may carry an already-evaluated (J, g) pair at v.  The result
    always holds a valid (J, g) at the final point.

    On quadratic objectives the line search is exact from one extra gradient
    at v + d (secant step), and the gradient at the accepted point is the
    affine combination (1-s) g(v) + s g(v+d).  With ``explicit_gradients``
    (the default) that gradient is recomputed by a fresh evaluation instead,
    so every smoothing step costs two gradient evaluations uniformly across
    the quadratic and nonquadratic problems; the affine value and the
    recomputed one agree to solver accuracy.
    """
    if steps == 0 and initial is None:
        return SmootherResult(v, None, None, None, None, 0, [])
    evals = 0.0
    if initial is None:
        J, g = objective.evaluate(v)
        evals += 1
    else:
        J, g = initial
    J0, g0 = J, g
    iterates = [(v, J, g)] if record_iterates else []
    d_prev = None
    g_prev = None
    steps_taken = 0

    for _ in range(steps):
        gnorm = norm(g)
        if gnorm == 0.0 or gnorm <= gradient_tol:
            break
        d = -g if d_prev is None else -g + dai_yuan_beta(g, g_prev, d_prev) * d_prev
        gd = inner_product(g, d)
        if gd >= 0.0:
            d = -g
            gd = inner_product(g, d)
        g_prev, d_prev = g, d

        if objective.quadratic:
            Jt, gt = objective.evaluate(v + d)
            evals += 1
            curv = inner_product(gt - g, d)
            if curv <= 0.0:
                if Jt < J:
                    v, J, g = v + d, Jt, gt
                    steps_taken += 1
                    if record_iterates:
                        iterates.append((v, J, g))
                    continue
                break
            s = -gd / curv
            v = v + s * d
            if explicit_gradients:
                J, g = objective.evaluate(v)
                evals += 1
            else:
                g = (1.0 - s) * g + s * gt
                J = J + s * gd + 0.5 * s * s * curv
        else:
            v, J, g, used = _nonquadratic_step(
                objective, v, J, g, d, gd,
                armijo_c=armijo_c, backtrack_factor=backtrack_factor,
                max_backtracks=max_backtracks,
            )
            evals += used
        steps_taken += 1
        if record_iterates:
            iterates.append((v, J, g))
    return SmootherResult(v, J, g, J0, g0, evals, iterates, steps_taken)


def _nonquadratic_step(objective, v, J, g, d, gd, *, armijo_c,
                       backtrack_factor, max_backtracks):
    """Quadratic-model trial step with stability-capped Armijo fallback."""

    def try_full(point):
        try:
            return objective.evaluate(point)
        except StabilityViolation:
            return None

    def try_cost(point):
        try:
            return objective.cost(point)
        except StabilityViolation:
            return None

    used = 0
    cap = objective.step_cap(v, d)
    sigma0 = min(1.0, cap)
    probe = try_full(v + sigma0 * d)
    used += 1
    if probe is not None:
        Jt, gt = probe
        curv = inner_product(gt - g, d) / sigma0
        if curv > 0.0:
            s_star = -gd / curv
            if 0.0 < s_star <= cap:
                if abs(s_star - sigma0) <= 1e-12 * sigma0:
                    if Jt <= J + armijo_c * sigma0 * gd:
                        return v + sigma0 * d, Jt, gt, used
                else:
                    trial = try_full(v + s_star * d)
                    used += 1
                    if trial is not None and trial[0] <= J + armijo_c * s_star * gd:
                        return v + s_star * d, trial[0], trial[1], used
        if Jt <= J + armijo_c * sigma0 * gd:
            return v + sigma0 * d, Jt, gt, used

    s = sigma0 / backtrack_factor
    for _ in range(max_backtracks):
        Jb = try_cost(v + s * d)
        used += 0.5
        if Jb is not None and Jb <= J + armijo_c * s * gd:
            Jn, gn = objective.evaluate(v + s * d)
            used += 1
            return v + s * d, Jn, gn, used
        s /= backtrack_factor
    raise LineSearchFailure(
        f"no Armijo step after {max_backtracks} backtracks (gd={gd:.3e})"
    )


def coarse_correction_linesearch(objective: LevelObjective, v: LevelVector,
                                 d: LevelVector, J_v: float, g_v: LevelVector,
                                 *, max_backtracks: int = 30):
    """Backtrack from s = 1 until the prolonged correction gives descent.

    Returns ``(s, v_new, carried, backtracks)`` where ``carried`` is a
    (J, g) pair at ``v_new`` when one is available for reuse by the
    postsmoother (always for the s=1 accept and on quadratic objectives).
    A degenerate search returns s = 0 and the incoming point.
    """
    if norm(d) == 0.0:
        return 1.0, v, (J_v, g_v), 0

    def reject_to_zero():
        return 0.0, v, (J_v, g_v), max_backtracks

    try:
        Jt, gt = objective.evaluate(v + d)
    except StabilityViolation:
        Jt, gt = None, None
    if Jt is not None and Jt < J_v:
        return 1.0, v + d, (Jt, gt), 0

    gd = inner_product(g_v, d)
    if objective.quadratic and Jt is not None:
        # the sampled problem is exactly quadratic along d
        curv = inner_product(gt - g_v, d)
        s = 0.5
        for b in range(1, max_backtracks + 1):
            Js = J_v + s * gd + 0.5 * s * s * curv
            if Js < J_v:
                gs = (1.0 - s) * g_v + s * gt
                return s, v + s * d, (Js, gs), b
            s *= 0.5
        return reject_to_zero()

    s = 0.5
    for b in range(1, max_backtracks + 1):
        try:
            Js = objective.cost(v + s * d)
        except StabilityViolation:
            Js = None
        if Js is not None and Js < J_v:
            return s, v + s * d, None, b
        s *= 0.5
    return reject_to_zero()


@dataclass
class VCycleReport:
    """Start/end cost and gradient norm at the entry level, plus diagnostics."""

    J0: float
    J: float
    g0_norm: float
    g_norm: float
    solves: float
    backtracks: int = 0
    events: list = dataclass_field(default_factory=list)
    level_stats: object = None  # sample statistics of the last top-level estimate


def vcycle(problem: ControlProblem, v: LevelVector, tau: LevelVector | None,
           k: int, sets: MgoptSampleSets, schedule: SmoothingSchedule, *,
           ledger: SolveLedger | None = None,
           verify_coherence: bool = True, coherence_tol: float = 1e-10,
           workers: int = 1, events: list | None = None,
           initial_sample_cache: dict | None = None):
    """One V-cycle at level k; returns (v', (J, g) at v', events).

    Entered from the top as ``vcycle(problem, v_K, None, K, ...)``; the
    sample sets stay fixed throughout.  ``initial_sample_cache`` holds
    sample values precomputed at the entry point v (e.g. by warm-up
    estimation on the same streams); it is consulted only by the entry
    evaluation when no presmoothing moves the point.
    """
    if v.level != k:
        raise LevelMismatch(f"iterate on level {v.level}, expected {k}")
    if schedule.levels < k + 1:
        raise LevelMismatch("schedule does not cover the requested levels")
    if events is None:
        events = []
    obj = LevelObjective(problem, sets, k, tau, ledger, workers)

    if k == 0:
        steps = schedule.coarsest_steps
        tol = 0.0
        if schedule.coarsest_exact and obj.quadratic:
            steps = int(np.prod(v.values.shape)) + 5
            tol = 1e-13
        res = ncg_smooth(obj, v, steps, gradient_tol=tol)
        if res.J is not None:
            events.append({
                "level": 0, "kind": "summary",
                "start": (res.J_initial, norm(res.g_initial)),
                "end": (res.J, norm(res.g)),
            })
        return res.v, (res.J, res.g), events

    hier = problem.hierarchy
    nu = schedule.nu[k]
    start_pair = None
    prefix_est = None

    if nu > 0:
        res = ncg_smooth(obj, v, nu)
        v1, J1, gJ1 = res.v, res.J, res.g
        start_pair = (res.J_initial, res.g_initial)
        ghat1 = gJ1 if tau is None else gJ1 + tau
    else:
        v1 = v
        prefix = sets.counts[k - 1] if sets.nested else None
        est = obj.evaluate_unshifted(v1, prefix_counts=prefix,
                                     sample_cache=initial_sample_cache)
        prefix_est = est if prefix is not None else None
        ghat1 = est.value
        J1, gJ1 = obj._shift(v1, est.cost_value, est.value)
        start_pair = (J1, gJ1)

    v_coarse = hier.restrict(v1)
    if prefix_est is not None:
        est_coarse = subestimate_from_prefix(problem, prefix_est, sets, k - 1, v_coarse)
    else:
        est_coarse = mlmc_gradient(problem, v_coarse, sets, k - 1,
                                   ledger=ledger, workers=workers)
    ghat_coarse = est_coarse.value
    tau_coarse = ghat_coarse - hier.restrict(ghat1)
    if tau is not None:
        tau_coarse = hier.restrict(tau) + tau_coarse

    if verify_coherence:
        lhs = hier.restrict(gJ1)
        rhs = ghat_coarse - tau_coarse
        dev = norm(rhs - lhs) / (1.0 + norm(gJ1))
        events.append({"level": k, "kind": "coherence", "value": dev})
        if dev > coherence_tol:
            raise AssertionError(
                f"coarse gradient deviates from the restricted fine gradient: "
                f"{dev:.3e} > {coherence_tol:.1e} at level {k}"
            )

    v_coarse_new, _, _ = vcycle(
        problem, v_coarse, tau_coarse, k - 1, sets, schedule,
        ledger=ledger, verify_coherence=verify_coherence,
        coherence_tol=coherence_tol, workers=workers, events=events,
    )
    d = hier.prolong(v_coarse_new - v_coarse)

    J_coarse_before = est_coarse.cost_value - inner_product(tau_coarse, v_coarse)
    s, v2, carried, backtracks = coarse_correction_linesearch(obj, v1, d, J1, gJ1)
    events.append({
        "level": k, "kind": "linesearch", "s": s, "backtracks": backtracks,
        "carried": carried is not None,
        "direction_inner": inner_product(gJ1, d),
        "coarse_J_before": J_coarse_before,
    })

    res = ncg_smooth(obj, v2, schedule.mu[k], initial=carried)
    final_pair = (res.J, res.g)
    if final_pair[0] is None:
        final_pair = (J1, gJ1) if s == 0.0 else (carried if carried else obj.evaluate(res.v))
    events.append({
        "level": k, "kind": "summary",
        "start": (start_pair[0], norm(start_pair[1])),
        "end": (final_pair[0], norm(final_pair[1])),
    })
    if obj.last_estimate is not None:
        events.append({
            "level": k, "kind": "level_stats", "stats": obj.last_estimate.stats,
        })
    return res.v, final_pair, events


def run_vcycle(problem: ControlProblem, v: LevelVector, sets: MgoptSampleSets,
               schedule: SmoothingSchedule, *,
               ledger: SolveLedger | None = None, workers: int = 1,
               verify_coherence: bool = True,
               initial_sample_cache: dict | None = None) -> tuple:
    """Top-level V-cycle call; returns (v', VCycleReport)."""
    K = v.level
    cycle_ledger = SolveLedger()
    events: list = []
    v_new, final_pair, events = vcycle(
        problem, v, None, K, sets, schedule,
        ledger=cycle_ledger, workers=workers,
        verify_coherence=verify_coherence, events=events,
        initial_sample_cache=initial_sample_cache,
    )
    start = next(e for e in events if e["kind"] == "summary" and e["level"] == K)
    backtracks = sum(e["backtracks"] for e in events if e["kind"] == "linesearch")
    solves = equivalent_fine_solves(cycle_ledger, K, problem.kappa_default)
    if ledger is not None:
        ledger.merge(cycle_ledger)
    top_stats = [e["stats"] for e in events
                 if e["kind"] == "level_stats" and e["level"] == K]
    report = VCycleReport(
        J0=start["start"][0], J=final_pair[0],
        g0_norm=start["start"][1], g_norm=norm(final_pair[1]),
        solves=solves, backtracks=backtracks, events=events,
        level_stats=top_stats[-1] if top_stats else None,
    )
    return v_new, report
