"""Policy execution and evaluation.

Episodes draw relay trajectories from the scenario chains, apply the stored
policy through the execution rule (budget-feasible reward argmax over the
epoch's pairs at the current belief), and accumulate discounted reward,
cost, and energy efficiency. Episode randomness derives from a master seed
through spawned child sequences, so runs are reproducible and independent
of execution order; metric reductions use compensated summation.

The multi-user entry point supports a centralized mode (one joint greedy
solve, a relay observed when any UE selects it, budgets per UE) and a
distributed mode (independent single-UE solves and private beliefs in a
shared world).
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .belief import FactoredBelief, Observation, advance_belief
from .errors import CapExceededError, ValidationError
from .mobility import MarkovChain, chains_for_scenario
from .model import (
    EMPTY_ACTION,
    Action,
    JointState,
    ScenarioConfig,
    cost_vector,
    reward_vector,
    with_single_ue,
)
from .solvers import (
    PolicySolution,
    _budget_tol,
    _pareto_indices,
    select_pair,
    solve_gcpbvi,
)


@dataclass
class EpochRecord:
    epoch: int
    action: Action
    state: JointState
    observation: Observation
    reward: float
    cost: float


@dataclass
class EpisodeTrace:
    records: list[EpochRecord]
    cum_reward: float
    cum_cost: float
    cum_ee: float

    def __post_init__(self):
        for t, rec in enumerate(self.records, start=1):
            if rec.epoch != t:
                raise ValidationError("trace epochs must be 1..T in order")


@dataclass
class SimulationMetrics:
    runs: int
    horizon: int
    gamma: float
    avg_cum_reward: float
    avg_cum_cost: float
    avg_cum_ee: float
    stderr_reward: float
    stderr_cost: float
    per_epoch: list[dict] = field(default_factory=list)
    per_ue: list[dict] = field(default_factory=list)


@dataclass
class StaticPolicy:
    """Plays one fixed action every epoch (the cellular baseline uses {0})."""

    action: Action
    horizon: int
    gamma: float


class _SimContext:
    def __init__(self, scenario: ScenarioConfig, chains: list[MarkovChain], ue: int = 0):
        self.scenario = scenario
        self.chains = chains
        self.ue = ue
        self.r_vecs = {
            i: reward_vector(scenario, i, ue) for i in range(1, scenario.n_relays + 1)
        }
        self.c_vecs = {i: cost_vector(scenario, i) for i in range(1, scenario.n_relays + 1)}
        self.cum_rows = [np.cumsum(c.matrix, axis=1) for c in chains]

    def reward(self, state: JointState, action: Action) -> float:
        total = self.scenario.direct_reward(self.ue) if 0 in action else 0.0
        for i in action.relays:
            total += float(self.r_vecs[i][state[i - 1]])
        return total

    def cost(self, state: JointState, action: Action) -> float:
        total = self.scenario.direct_cost() if 0 in action else 0.0
        for i in action.relays:
            total += float(self.c_vecs[i][state[i - 1]])
        return total

    def step_states(self, state: JointState, rng: np.random.Generator) -> JointState:
        draws = rng.random(len(state))
        return tuple(
            int(np.searchsorted(self.cum_rows[i][s], draws[i], side="right"))
            for i, s in enumerate(state)
        )


def _observe(state: JointState, action: Action, k: int) -> Observation:
    z: list[int | None] = [None] * k
    for i in action.relays:
        z[i - 1] = state[i - 1]
    return tuple(z)


def _policy_action(
    policy, epoch: int, fb: FactoredBelief, cursor, cache: dict | None = None
) -> tuple[Action, object]:
    if isinstance(policy, StaticPolicy):
        return policy.action, cursor
    if policy.tree is not None:
        node = cursor
        return (node.action if node is not None else EMPTY_ACTION), node
    if cache is None:
        return select_pair(policy, epoch, fb)[1], cursor
    key = (epoch, fb.key())
    if key not in cache:
        cache[key] = select_pair(policy, epoch, fb)[1]
    return cache[key], cursor


def run_episode(
    policy,
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
    seed: int | np.random.SeedSequence = 0,
    context: _SimContext | None = None,
    action_cache: dict | None = None,
) -> EpisodeTrace:
    """One seeded episode; identical seeds produce identical traces.

    ``action_cache`` memoises the execution rule per (epoch, belief); safe
    because the selection is a pure function of those two.
    """
    chains = chains if chains is not None else chains_for_scenario(scenario)
    horizon = getattr(policy, "horizon", scenario.horizon)
    if horizon != scenario.horizon:
        raise ValidationError(
            f"policy horizon {horizon} does not match scenario horizon {scenario.horizon}"
        )
    ctx = context or _SimContext(scenario, chains)
    rng = np.random.default_rng(seed)
    gamma = scenario.gamma
    state = scenario.initial_states
    fb = FactoredBelief.one_hot(state, scenario.n_regions)
    cursor = policy.tree if isinstance(policy, PolicySolution) and policy.tree is not None else None

    records = []
    cum_r = cum_c = cum_ee = 0.0
    for epoch in range(1, horizon + 1):
        action, cursor = _policy_action(policy, epoch, fb, cursor, action_cache)
        reward = ctx.reward(state, action)
        cost = ctx.cost(state, action)
        obs = _observe(state, action, scenario.n_relays)
        records.append(EpochRecord(epoch, action, state, obs, reward, cost))
        cum_r += gamma ** (epoch - 1) * reward
        cum_c += gamma ** (epoch - 1) * cost
        cum_ee += gamma ** (horizon - epoch) * (reward / cost if cost > 0 else 0.0)
        if cursor is not None:
            cursor = cursor.children.get(obs)
        fb = advance_belief(fb, chains, action, obs)
        state = ctx.step_states(state, rng)
    return EpisodeTrace(records=records, cum_reward=cum_r, cum_cost=cum_c, cum_ee=cum_ee)


def monte_carlo(
    policy,
    scenario: ScenarioConfig,
    n_runs: int,
    seed: int = 0,
    chains: list[MarkovChain] | None = None,
    threads: int = 1,
) -> SimulationMetrics:
    """Averages over independent seeded episodes."""
    if n_runs < 1:
        raise ValidationError(f"n_runs must be >= 1, got {n_runs}")
    chains = chains if chains is not None else chains_for_scenario(scenario)
    ctx = _SimContext(scenario, chains)
    seeds = np.random.SeedSequence(seed).spawn(n_runs)
    action_cache: dict = {}

    def one(child_seed):
        return run_episode(
            policy, scenario, chains, child_seed, context=ctx, action_cache=action_cache
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(one, seeds))
    else:
        traces = [one(s) for s in seeds]
    return _reduce_traces(traces, scenario.horizon, scenario.gamma)


def _reduce_traces(traces: list[EpisodeTrace], horizon: int, gamma: float) -> SimulationMetrics:
    n = len(traces)
    rewards = [t.cum_reward for t in traces]
    costs = [t.cum_cost for t in traces]
    ees = [t.cum_ee for t in traces]
    per_epoch = []
    for e in range(1, horizon + 1):
        cr = [
            math.fsum(gamma ** (rec.epoch - 1) * rec.reward for rec in t.records[:e])
            for t in traces
        ]
        cc = [
            math.fsum(gamma ** (rec.epoch - 1) * rec.cost for rec in t.records[:e])
            for t in traces
        ]
        cee = [
            math.fsum(
                gamma ** (horizon - rec.epoch) * (rec.reward / rec.cost if rec.cost > 0 else 0.0)
                for rec in t.records[:e]
            )
            for t in traces
        ]
        per_epoch.append(
            {
                "epoch": e,
                "avg_cum_reward": math.fsum(cr) / n,
                "avg_cum_cost": math.fsum(cc) / n,
                "avg_cum_ee": math.fsum(cee) / n,
                "stderr_reward": _stderr(cr),
            }
        )
    return SimulationMetrics(
        runs=n,
        horizon=horizon,
        gamma=gamma,
        avg_cum_reward=math.fsum(rewards) / n,
        avg_cum_cost=math.fsum(costs) / n,
        avg_cum_ee=math.fsum(ees) / n,
        stderr_reward=_stderr(rewards),
        stderr_cost=_stderr(costs),
        per_epoch=per_epoch,
    )


def _stderr(values) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def baseline_cellular(
    scenario: ScenarioConfig,
    n_runs: int,
    seed: int = 0,
    chains: list[MarkovChain] | None = None,
) -> SimulationMetrics:
    """Always plays the direct link; the with/without comparison reference."""
    policy = StaticPolicy(action=Action((0,)), horizon=scenario.horizon, gamma=scenario.gamma)
    return monte_carlo(policy, scenario, n_runs, seed, chains)


def exact_policy_value(
    policy,
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
) -> tuple[float, float]:
    """Expected cumulative discounted (reward, cost) of executing a policy,
    by exhaustive enumeration of observation paths (capped instances only).

    The belief doubles as the true conditional state distribution, so one
    recursion covers both filtering and probability weighting.
    """
    chains = chains if chains is not None else chains_for_scenario(scenario)
    horizon = scenario.horizon
    gamma = scenario.gamma
    k = scenario.n_relays
    if scenario.n_regions**k > 4096:
        raise CapExceededError("exact policy evaluation needs |S|^K <= 4096")
    ctx = _SimContext(scenario, chains)

    def recurse(epoch: int, fb: FactoredBelief, cursor) -> tuple[float, float]:
        if epoch > horizon:
            return 0.0, 0.0
        action, cursor = _policy_action(policy, epoch, fb, cursor)
        r = scenario.direct_reward() if 0 in action else 0.0
        c = scenario.direct_cost() if 0 in action else 0.0
        for i in action.relays:
            r += float(fb.per_relay[i - 1] @ ctx.r_vecs[i])
            c += float(fb.per_relay[i - 1] @ ctx.c_vecs[i])
        total_r, total_c = r, c
        sel = action.relays
        # with no selected relays the product yields the single empty branch
        supports = [np.flatnonzero(fb.per_relay[i - 1] > 0.0) for i in sel]
        for combo in itertools.product(*supports):
            p_z = 1.0
            for i, region in zip(sel, combo):
                p_z *= float(fb.per_relay[i - 1][region])
            obs = _observe_combo(sel, combo, k)
            child = cursor.children.get(obs) if cursor is not None else None
            nxt = advance_belief(fb, chains, action, obs)
            fr, fc = recurse(epoch + 1, nxt, child)
            total_r += gamma * p_z * fr
            total_c += gamma * p_z * fc
        return total_r, total_c

    state = scenario.initial_states
    fb0 = FactoredBelief.one_hot(state, scenario.n_regions)
    cursor = policy.tree if isinstance(policy, PolicySolution) and policy.tree is not None else None
    return recurse(1, fb0, cursor)


def _observe_combo(sel: tuple[int, ...], combo, k: int) -> Observation:
    z: list[int | None] = [None] * k
    for i, region in zip(sel, combo):
        z[i - 1] = int(region)
    return tuple(z)


# --- multi-user ---------------------------------------------------------------


@dataclass
class _MultiPair:
    alpha_r: np.ndarray
    alpha_cs: np.ndarray  # (N, flat)
    assignment: tuple[tuple[int, ...], ...]  # per-UE selected options


def _flat_eval(vecs: np.ndarray, fb: FactoredBelief) -> np.ndarray:
    """Contract stacked joint-space vectors with a factored belief."""
    t = vecs.reshape((len(vecs),) + tuple(b.shape[0] for b in fb.per_relay))
    for b in fb.per_relay:
        t = np.tensordot(t, b, axes=(1, 0))
    return t


def solve_centralized(
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
    h: int | None = None,
    eps: float | None = None,
    cap: int = 64,
) -> tuple[list[list[_MultiPair]], "object"]:
    """Joint greedy solve over (UE, option) elements with per-UE budgets.

    Element candidates are scored like the single-user greedy (branch
    frontier over the element's own observations; the cost side tracks the
    charged UE). Continuation choices for the assembled joint action use the
    per-branch rule with all-UE feasibility; a pair that still breaks some
    UE's budget drops its latest elements until it fits.
    """
    from .solvers import _resolve_belief_set

    chains = chains if chains is not None else chains_for_scenario(scenario)
    belief_set = _resolve_belief_set(scenario, chains, None, eps, h, cap)
    n_ues = scenario.n_ues
    k = scenario.n_relays
    n = scenario.n_regions
    flat = n**k
    shape = (n,) * k
    gamma = scenario.gamma
    c_th = scenario.c_th
    tol = _budget_tol(c_th)
    horizon = scenario.horizon

    r_vecs = {
        (u, e): reward_vector(scenario, e, u) for u in range(n_ues) for e in range(1, k + 1)
    }
    c_vecs = {e: cost_vector(scenario, e) for e in range(1, k + 1)}

    def predict(stack: np.ndarray) -> np.ndarray:
        t = stack.reshape((-1,) + shape)
        for axis, chain in enumerate(chains):
            t = np.moveaxis(
                np.tensordot(chain.matrix, np.moveaxis(t, axis + 1, 0), axes=(1, 0)),
                0,
                axis + 1,
            )
        return gamma * t.reshape(len(stack), -1)

    def branch_scores(g: np.ndarray, fb: FactoredBelief, sel_axes: tuple[int, ...]) -> np.ndarray:
        t = g.reshape((-1,) + shape)
        for ax in sorted(set(range(k)) - set(sel_axes), reverse=True):
            t = np.tensordot(t, fb.per_relay[ax], axes=(ax + 1, 0))
        m = len(sel_axes)
        for pos, ax in enumerate(sel_axes):
            t = t * fb.per_relay[ax].reshape((1,) * (pos + 1) + (-1,) + (1,) * (m - pos - 1))
        return t.reshape(len(g), -1)

    def element_merge(rho_r, rho_c, wr, wc):
        """Best ratio point of one element's branch frontier at a belief."""
        if rho_c > c_th + tol:
            return None
        if wr is None:
            return rho_r, rho_c
        r = np.array([rho_r])
        c = np.array([rho_c])
        for z in range(wr.shape[1]):
            cand = _pareto_indices(wr[:, z], wc[:, z])
            r = (r[:, None] + wr[cand, z][None, :]).ravel()
            c = (c[:, None] + wc[cand, z][None, :]).ravel()
            ok = c <= c_th + tol
            if not ok.any():
                return None
            keep = _pareto_indices(r[ok], c[ok])[:512]
            r, c = r[ok][keep], c[ok][keep]
        zero = 1e-12 * max(1.0, c_th)
        ratios = np.where(c > zero, r / np.maximum(c, zero), np.where(r > zero, np.inf, 0.0))
        best = int(np.lexsort((c, -r, -ratios))[0])
        return float(r[best]), float(c[best])

    def imm_tensors(assignment):
        alpha_r = np.zeros(shape)
        alpha_cs = np.zeros((n_ues, flat))
        for u, options in enumerate(assignment):
            acc = np.zeros(shape)
            for e in options:
                if e == 0:
                    alpha_r += scenario.direct_reward(u)
                    acc += scenario.direct_cost(u)
                else:
                    vec_r = r_vecs[(u, e)].reshape((1,) * (e - 1) + (-1,) + (1,) * (k - e))
                    vec_c = c_vecs[e].reshape((1,) * (e - 1) + (-1,) + (1,) * (k - e))
                    alpha_r += vec_r
                    acc += vec_c
            alpha_cs[u] = acc.reshape(-1)
        return alpha_r.reshape(-1), alpha_cs

    def assemble(fb, assignment, gr, gcs):
        observed = sorted({e for options in assignment for e in options if e >= 1})
        sel_axes = tuple(e - 1 for e in observed)
        imm_r, imm_cs = imm_tensors(assignment)
        if gr is None:
            pair = _MultiPair(imm_r, imm_cs, assignment)
        else:
            wr = branch_scores(gr, fb, sel_axes)
            wcs = np.stack([branch_scores(gcs[u], fb, sel_axes) for u in range(n_ues)])
            p = np.ones(1)
            for ax in sel_axes:
                p = np.kron(p, fb.per_relay[ax])
            budget = gamma * p * c_th + tol
            feasible = (wcs <= budget[None, None, :]).all(axis=0)
            masked = np.where(feasible, wr, -np.inf)
            sigma = np.argmax(masked, axis=0)
            orphan = ~feasible.any(axis=0)
            if orphan.any():
                sigma[orphan] = np.argmin(wcs.sum(axis=0)[:, orphan], axis=0)
            dims = tuple(n if ax in sel_axes else 1 for ax in range(k))
            sig_full = np.broadcast_to(sigma.reshape(dims), shape).reshape(-1)
            cells = np.arange(flat)
            alpha_r = imm_r + gr[sig_full, cells]
            alpha_cs = imm_cs + np.stack([gcs[u][sig_full, cells] for u in range(n_ues)])
            pair = _MultiPair(alpha_r, alpha_cs, assignment)
        costs = _flat_eval(pair.alpha_cs, fb)
        if np.max(costs) > c_th + tol:
            return None
        return pair

    epochs: list[list[_MultiPair] | None] = [None] * horizon
    v: list[_MultiPair] = []
    for tau in range(1, horizon + 1):
        gr = gcs = gcs_stacked = None
        if v:
            gr = predict(np.array([p.alpha_r for p in v]))
            gcs = [predict(np.array([p.alpha_cs[u] for p in v])) for u in range(n_ues)]
            gcs_stacked = np.concatenate(gcs, axis=0)
        new_v = []
        for fb in belief_set.points:
            scored = []
            for e in range(k + 1):
                sel_axes = () if e == 0 else (e - 1,)
                wr = wc_all = None
                if gr is not None:
                    wr = branch_scores(gr, fb, sel_axes)
                    wc_all = branch_scores(gcs_stacked, fb, sel_axes)
                n_pairs = len(v)
                for u in range(n_ues):
                    if e == 0:
                        rho_r, rho_c = scenario.direct_reward(u), scenario.direct_cost(u)
                    else:
                        rho_r = float(fb.per_relay[e - 1] @ r_vecs[(u, e)])
                        rho_c = float(fb.per_relay[e - 1] @ c_vecs[e])
                    wc = wc_all[u * n_pairs : (u + 1) * n_pairs] if wc_all is not None else None
                    got = element_merge(rho_r, rho_c, wr, wc)
                    if got is None:
                        continue
                    r, c = got
                    zero = 1e-12 * max(1.0, c_th)
                    if c <= zero:
                        if r <= zero:
                            continue
                        scored.append(((0, -r, 0.0, u, e), u, e, c))
                    else:
                        scored.append(((1, -r / c, -r, u, e), u, e, c))
            scored.sort(key=lambda item: item[0])
            v_sums = [0.0] * n_ues
            admitted: list[tuple[int, int]] = []
            for _, u, e, c in scored:
                if v_sums[u] + c < c_th:
                    admitted.append((u, e))
                    v_sums[u] += c
            pair = None
            while True:
                assignment = tuple(
                    tuple(sorted(e for uu, e in admitted if uu == u)) for u in range(n_ues)
                )
                pair = assemble(fb, assignment, gr, gcs)
                if pair is not None or not admitted:
                    break
                admitted.pop()
            if pair is None:
                pair = _MultiPair(
                    np.zeros(flat), np.zeros((n_ues, flat)),
                    tuple(() for _ in range(n_ues)),
                )
            new_v.append(pair)
        v = new_v
        epochs[horizon - tau] = v
    return epochs, belief_set


def _select_multi(
    epoch_pairs: list[_MultiPair], fb: FactoredBelief, c_th: float
) -> _MultiPair | None:
    tol = _budget_tol(c_th)
    best = None
    best_key = None
    for pair in epoch_pairs:
        costs = _flat_eval(pair.alpha_cs, fb)
        if np.max(costs) > c_th + tol:
            continue
        r = float(_flat_eval(pair.alpha_r[None, :], fb)[0])
        key = (-r, float(costs.sum()), pair.assignment)
        if best_key is None or key < best_key:
            best, best_key = pair, key
    return best


def run_multiuser(
    scenario: ScenarioConfig,
    mode: str,
    n_runs: int = 100,
    seed: int = 0,
    chains: list[MarkovChain] | None = None,
    h: int | None = None,
    eps: float | None = None,
    cap: int = 64,
) -> SimulationMetrics:
    """Simulate N UEs sharing one relay pool, centralized or distributed.

    Reward aggregates over UEs; the budget holds per UE. With a single UE
    both modes reduce to the single-user pipeline.
    """
    if mode not in ("centralized", "distributed"):
        raise ValidationError(f"mode must be centralized or distributed, got {mode!r}")
    chains = chains if chains is not None else chains_for_scenario(scenario)
    n_ues = scenario.n_ues
    horizon = scenario.horizon
    gamma = scenario.gamma
    k = scenario.n_relays

    if mode == "centralized":
        epochs, _ = solve_centralized(scenario, chains, h=h, eps=eps, cap=cap)
        policies = None
    else:
        policies = [
            solve_gcpbvi(with_single_ue(scenario, u), chains, h=h, eps=eps, cap=cap)
            for u in range(n_ues)
        ]
        epochs = None

    contexts = [_SimContext(with_single_ue(scenario, u), chains) for u in range(n_ues)]
    seeds = np.random.SeedSequence(seed).spawn(n_runs)
    totals_r, totals_c, totals_ee = [], [], []
    per_ue_r = [[] for _ in range(n_ues)]
    per_ue_c = [[] for _ in range(n_ues)]
    per_ue_ee = [[] for _ in range(n_ues)]
    cache: dict = {}

    def centralized_assignment(epoch, fb):
        key = (epoch, fb.key())
        if key not in cache:
            pair = _select_multi(epochs[epoch - 1], fb, scenario.c_th)
            cache[key] = (
                pair.assignment if pair is not None else tuple(() for _ in range(n_ues))
            )
        return cache[key]

    def distributed_assignment(u, epoch, fb):
        key = (u, epoch, fb.key())
        if key not in cache:
            cache[key] = select_pair(policies[u], epoch, fb)[1].selected
        return cache[key]

    for child in seeds:
        rng = np.random.default_rng(child)
        state = scenario.initial_states
        shared_fb = FactoredBelief.one_hot(state, scenario.n_regions)
        ue_fbs = [shared_fb] * n_ues
        run_r = [0.0] * n_ues
        run_c = [0.0] * n_ues
        run_ee = [0.0] * n_ues
        for epoch in range(1, horizon + 1):
            if mode == "centralized":
                assignment = centralized_assignment(epoch, shared_fb)
            else:
                assignment = tuple(
                    distributed_assignment(u, epoch, ue_fbs[u]) for u in range(n_ues)
                )
            for u in range(n_ues):
                act = Action(assignment[u])
                r = contexts[u].reward(state, act)
                c = contexts[u].cost(state, act)
                run_r[u] += gamma ** (epoch - 1) * r
                run_c[u] += gamma ** (epoch - 1) * c
                run_ee[u] += gamma ** (horizon - epoch) * (r / c if c > 0 else 0.0)
            if mode == "centralized":
                observed = {e for options in assignment for e in options if e >= 1}
                joint = Action(tuple(sorted(observed)))
                obs = _observe(state, joint, k)
                shared_fb = advance_belief(shared_fb, chains, joint, obs)
            else:
                for u in range(n_ues):
                    act = Action(assignment[u])
                    obs = _observe(state, act, k)
                    ue_fbs[u] = advance_belief(ue_fbs[u], chains, act, obs)
            state = contexts[0].step_states(state, rng)
        totals_r.append(math.fsum(run_r))
        totals_c.append(math.fsum(run_c))
        totals_ee.append(math.fsum(run_ee))
        for u in range(n_ues):
            per_ue_r[u].append(run_r[u])
            per_ue_c[u].append(run_c[u])
            per_ue_ee[u].append(run_ee[u])

    n = len(seeds)
    per_ue = [
        {
            "ue": u,
            "avg_cum_reward": math.fsum(per_ue_r[u]) / n,
            "avg_cum_cost": math.fsum(per_ue_c[u]) / n,
            "avg_cum_ee": math.fsum(per_ue_ee[u]) / n,
            "stderr_cost": _stderr(per_ue_c[u]),
        }
        for u in range(n_ues)
    ]
    return SimulationMetrics(
        runs=n,
        horizon=horizon,
        gamma=gamma,
        avg_cum_reward=math.fsum(totals_r) / n,
        avg_cum_cost=math.fsum(totals_c) / n,
        avg_cum_ee=math.fsum(totals_ee) / n,
        stderr_reward=_stderr(totals_r),
        stderr_cost=_stderr(totals_c),
        per_ue=per_ue,
    )


# --- complexity model ----------------------------------------------------------


def complexity_log10(method: str, k: int, sizes: dict | None = None) -> float:
    """log10 of the closed-form per-iteration operation-count estimate.

    ``sizes`` may carry ``S`` (regions), ``B`` (belief points), ``Z``
    (observation branches, default ``S**K``), ``V`` (stored pairs, default
    ``B``) and ``N`` (UEs). The enumerated methods are doubly exponential,
    so the estimates are kept in log space; they are order-of-magnitude
    models meant for ratios and trend plots. Measured operation counters
    live in each PolicySolution's stats for empirical cross-checks.
    """
    sizes = dict(sizes or {})
    s = max(1, sizes.get("S", 16))
    b = max(1, sizes.get("B", 32))
    z = max(1, sizes.get("Z", s**k))
    v = max(1, sizes.get("V", b))
    n = max(1, sizes.get("N", 1))
    lg = math.log10
    if method == "exact":
        return k * lg(2) + z * lg(v)
    if method == "cpbvi":
        return k * lg(2) + z * lg(b)
    if method == "gcpbvi":
        return 2 * lg(k) + lg(s) + s * lg(b)
    if method == "centralized":
        return 2 * lg(n * k) + lg(n) + lg(s) + s * lg(b)
    if method == "distributed":
        return lg(n) + 2 * lg(k) + lg(s) + s * lg(b)
    raise ValidationError(f"unknown method {method!r}")


def complexity_model(method: str, k: int, sizes: dict | None = None) -> float:
    """Operation-count estimate; inf when it exceeds float range."""
    lg = complexity_log10(method, k, sizes)
    return float("inf") if lg > 300 else 10.0**lg


def complexity_ratio(method_a: str, method_b: str, k: int, sizes: dict | None = None) -> float:
    """Common-factor-cancelling ratio of two methods' estimates.

    The CPBVI/GCPBVI ratio reduces to ``2**K / K**2``; the centralized /
    distributed ratio reduces to ``N**2``.
    """
    if {method_a, method_b} == {"cpbvi", "gcpbvi"}:
        ratio = 2**k / k**2
        return ratio if method_a == "cpbvi" else 1.0 / ratio
    if {method_a, method_b} == {"centralized", "distributed"}:
        n = (sizes or {}).get("N", k)
        ratio = float(n**2)
        return ratio if method_a == "centralized" else 1.0 / ratio
    a = complexity_model(method_a, k, sizes)
    b = complexity_model(method_b, k, sizes)
    return a / b


# --- tabular output -------------------------------------------------------------


METRIC_COLUMNS = [
    "scenario_id",
    "method",
    "epoch",
    "avg_cum_reward",
    "avg_cum_cost",
    "avg_cum_ee",
    "stderr_reward",
    "runs",
]


def metrics_rows(metrics: SimulationMetrics, scenario_id: str, method: str) -> list[dict]:
    rows = []
    if metrics.per_epoch:
        for entry in metrics.per_epoch:
            rows.append(
                {
                    "scenario_id": scenario_id,
                    "method": method,
                    "epoch": entry["epoch"],
                    "avg_cum_reward": entry["avg_cum_reward"],
                    "avg_cum_cost": entry["avg_cum_cost"],
                    "avg_cum_ee": entry["avg_cum_ee"],
                    "stderr_reward": entry["stderr_reward"],
                    "runs": metrics.runs,
                }
            )
    else:
        rows.append(
            {
                "scenario_id": scenario_id,
                "method": method,
                "epoch": metrics.horizon,
                "avg_cum_reward": metrics.avg_cum_reward,
                "avg_cum_cost": metrics.avg_cum_cost,
                "avg_cum_ee": metrics.avg_cum_ee,
                "stderr_reward": metrics.stderr_reward,
                "runs": metrics.runs,
            }
        )
    return rows


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in METRIC_COLUMNS) + "\n")
