"""Planners for the constrained relay-selection problem.

Three solvers share one backup engine:

* exact value iteration (enumerated cross-sums, safe dominance pruning),
* CPBVI (point-based backups anchored to a finite belief set),
* GCPBVI (the action argmax replaced by ratio-greedy element addition).

plus a brute-force oracle (observation-contingent plan enumeration by
multi-objective dynamic programming over forward-filtered distributions,
sharing no code with the alpha-vector machinery) and the error-bound
calculators.

Cumulative values weight the epoch-t term by ``gamma**(t-1)``; the budget
constrains the same discounted sum. Point-based backups never materialise
cross-sums: for each anchor belief the per-branch continuation choices are
optimised jointly under the budget (a Pareto merge over branches), which
selects exactly the element of the full cross-sum the printed per-point
argmax would pick. Actions whose branch count exceeds ``root_branch_cap``
fall back to per-branch locally-feasible choices; the stats record when
that happens.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import (
    BeliefSet,
    FactoredBelief,
    Observation,
    build_h_belief_set,
    density_bound,
    epsilon_belief_set,
)
from .errors import CapExceededError, SpectralError, ValidationError
from .mobility import MarkovChain, chains_for_scenario
from .model import (
    EMPTY_ACTION,
    Action,
    JointState,
    ScenarioConfig,
    all_actions,
    cost_vector,
    reward_vector,
)
from .alpha import AlphaPair, cost_tensor, reward_tensor

ORACLE_STATE_CAP = 64
ORACLE_HORIZON_CAP = 3
ORACLE_RELAY_CAP = 2
EXACT_ACTION_CAP = 64
ROOT_BRANCH_CAP = 1024
FRONTIER_CAP = 2048


@dataclass
class QEvaluation:
    belief: FactoredBelief
    action: Action
    epoch: int
    q_r: float
    q_c: float


@dataclass
class PolicySolution:
    """Per-epoch value-function sets plus everything needed to execute them.

    ``epochs[e-1]`` holds the pairs used at decision epoch ``e`` (so index 0
    carries the full-lookahead set). Oracle solutions store an explicit
    observation-contingent plan in ``tree`` instead of alpha pairs.
    """

    method: str
    horizon: int
    gamma: float
    c_th: float
    chains: list[MarkovChain]
    scenario_fingerprint: str
    initial_state: JointState
    epochs: list[list[AlphaPair]] | None = None
    belief_set: BeliefSet | None = None
    tree: "OracleTree | None" = None
    stats: dict = field(default_factory=dict)

    def planned_value(self, fb: FactoredBelief | None = None) -> tuple[float, float]:
        """Expected cumulative discounted (reward, cost) at the initial belief."""
        if self.tree is not None:
            return self.stats["oracle_value_r"], self.stats["oracle_value_c"]
        if fb is None:
            fb = FactoredBelief.one_hot(self.initial_state, self.chains[0].size)
        pair, _ = select_pair(self, 1, fb)
        if pair is None:
            return 0.0, 0.0
        return pair.evaluate(fb)


@dataclass
class OracleTree:
    action: Action
    children: dict[Observation, "OracleTree"] = field(default_factory=dict)


def _budget_tol(c_th: float) -> float:
    return 1e-9 * max(1.0, abs(c_th))


def select_pair(
    policy: PolicySolution, epoch: int, fb: FactoredBelief
) -> tuple[AlphaPair | None, Action]:
    """Execution rule: budget-feasible pair with the best reward at ``fb``.

    Ties break toward lower cost, then the lexicographically smallest action.
    Returns ``(None, empty action)`` when no stored pair is feasible.
    """
    pairs = policy.epochs[epoch - 1]
    tol = _budget_tol(policy.c_th)
    best = None
    best_key = None
    for pair in pairs:
        r, c = pair.evaluate(fb)
        if c > policy.c_th + tol:
            continue
        key = (-r, c, pair.action.selected)
        if best_key is None or key < best_key:
            best, best_key = pair, key
    if best is None:
        return None, EMPTY_ACTION
    return best, best.action


def _pareto_indices(r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Indices of the (max reward, min cost) Pareto frontier, cost-ascending."""
    order = np.lexsort((np.arange(len(r)), -r, c))
    keep = []
    best = -np.inf
    for i in order:
        if r[i] > best + 1e-15:
            keep.append(i)
            best = r[i]
    return np.asarray(keep, dtype=int)


class _Engine:
    """Shared per-solve state: tensors, branch scoring, selection, assembly."""

    def __init__(
        self,
        scenario: ScenarioConfig,
        chains: list[MarkovChain],
        gamma: float | None = None,
        c_th: float | None = None,
        root_branch_cap: int = ROOT_BRANCH_CAP,
        frontier_cap: int = FRONTIER_CAP,
    ):
        self.scenario = scenario
        self.chains = chains
        self.gamma = scenario.gamma if gamma is None else gamma
        self.c_th = scenario.c_th if c_th is None else c_th
        self.k = scenario.n_relays
        self.n = scenario.n_regions
        self.shape = (self.n,) * self.k
        self.flat = self.n**self.k
        self.root_branch_cap = root_branch_cap
        self.frontier_cap = frontier_cap
        self.counters = {
            "predictions": 0,
            "pair_evaluations": 0,
            "branch_merges": 0,
            "frontier_cap_hits": 0,
            "local_mode_selections": 0,
        }
        self._reward_flat: dict[tuple, np.ndarray] = {}
        self._cost_flat: dict[tuple, np.ndarray] = {}
        self.r_vecs = {i: reward_vector(scenario, i) for i in range(1, self.k + 1)}
        self.c_vecs = {i: cost_vector(scenario, i) for i in range(1, self.k + 1)}

    def reward_flat(self, action: Action) -> np.ndarray:
        key = action.selected
        if key not in self._reward_flat:
            self._reward_flat[key] = reward_tensor(self.scenario, action)
        return self._reward_flat[key]

    def cost_flat(self, action: Action) -> np.ndarray:
        key = action.selected
        if key not in self._cost_flat:
            self._cost_flat[key] = cost_tensor(self.scenario, action)
        return self._cost_flat[key]

    def rho(self, action: Action, fb: FactoredBelief) -> tuple[float, float]:
        r = self.scenario.direct_reward() if 0 in action else 0.0
        c = self.scenario.direct_cost() if 0 in action else 0.0
        for i in action.relays:
            r += float(fb.per_relay[i - 1] @ self.r_vecs[i])
            c += float(fb.per_relay[i - 1] @ self.c_vecs[i])
        return r, c

    def predict_stack(self, pairs: list[AlphaPair]) -> tuple[np.ndarray, np.ndarray]:
        """``gamma * T @ alpha`` for both vectors of every pair, stacked."""
        vecs = np.array([p.alpha_r for p in pairs] + [p.alpha_c for p in pairs])
        t = vecs.reshape((-1,) + self.shape)
        for axis, chain in enumerate(self.chains):
            t = np.moveaxis(
                np.tensordot(chain.matrix, np.moveaxis(t, axis + 1, 0), axes=(1, 0)),
                0,
                axis + 1,
            )
        flat = self.gamma * t.reshape(len(vecs), -1)
        self.counters["predictions"] += len(vecs)
        return flat[: len(pairs)], flat[len(pairs) :]

    def branch_scores(
        self, g: np.ndarray, fb: FactoredBelief, sel_axes: tuple[int, ...]
    ) -> np.ndarray:
        """Belief-weighted branch contributions of predicted vectors.

        Entry ``[j, z]`` is the term the cross-sum element choosing source
        ``j`` at observation branch ``z`` adds to the value at ``fb``.
        """
        t = g.reshape((-1,) + self.shape)
        for ax in sorted(set(range(self.k)) - set(sel_axes), reverse=True):
            t = np.tensordot(t, fb.per_relay[ax], axes=(ax + 1, 0))
        m = len(sel_axes)
        for pos, ax in enumerate(sel_axes):
            t = t * fb.per_relay[ax].reshape((1,) * (pos + 1) + (-1,) + (1,) * (m - pos - 1))
        out = t.reshape(len(g), -1)
        self.counters["pair_evaluations"] += out.size
        return out

    def branch_probs(self, fb: FactoredBelief, sel_axes: tuple[int, ...]) -> np.ndarray:
        p = np.ones(1)
        for ax in sel_axes:
            p = np.kron(p, fb.per_relay[ax])
        return p

    def select(
        self,
        action: Action,
        fb: FactoredBelief,
        gr: np.ndarray | None,
        gc: np.ndarray | None,
    ):
        """Best budget-feasible continuation assignment for ``action`` at ``fb``.

        Returns ``(r, c, sigma)`` or None when the action cannot stay within
        the budget at this belief; ``sigma`` is None when there is no future.
        """
        rho_r, rho_c = self.rho(action, fb)
        tol = _budget_tol(self.c_th)
        if gr is None:
            if rho_c > self.c_th + tol:
                return None
            return rho_r, rho_c, None
        sel_axes = tuple(i - 1 for i in action.relays)
        wr = self.branch_scores(gr, fb, sel_axes)
        wc = self.branch_scores(gc, fb, sel_axes)
        n_branches = wr.shape[1]
        if n_branches <= self.root_branch_cap:
            return self._root_select(rho_r, rho_c, wr, wc)
        self.counters["local_mode_selections"] += 1
        p = self.branch_probs(fb, sel_axes)
        return self._local_select(rho_r, rho_c, wr, wc, p)

    def _root_select(self, rho_r, rho_c, wr, wc):
        tol = _budget_tol(self.c_th)
        if rho_c > self.c_th + tol:
            return None
        r = np.array([rho_r])
        c = np.array([rho_c])
        trace: list[tuple[np.ndarray, np.ndarray]] = []
        for z in range(wr.shape[1]):
            col_r, col_c = wr[:, z], wc[:, z]
            cand = _pareto_indices(col_r, col_c)
            rr = (r[:, None] + col_r[cand][None, :]).ravel()
            cc = (c[:, None] + col_c[cand][None, :]).ravel()
            parents = np.repeat(np.arange(len(r)), len(cand))
            choices = np.tile(cand, len(r))
            ok = cc <= self.c_th + tol
            if not ok.any():
                return None
            rr, cc, parents, choices = rr[ok], cc[ok], parents[ok], choices[ok]
            keep = _pareto_indices(rr, cc)
            if len(keep) > self.frontier_cap:
                self.counters["frontier_cap_hits"] += 1
                sub = np.unique(np.linspace(0, len(keep) - 1, self.frontier_cap).round().astype(int))
                keep = keep[sub]
            r, c = rr[keep], cc[keep]
            trace.append((parents[keep], choices[keep]))
            self.counters["branch_merges"] += 1
        best = int(np.lexsort((c, -r))[0])
        sigma = np.zeros(len(trace), dtype=int)
        idx = best
        for z in range(len(trace) - 1, -1, -1):
            parents, choices = trace[z]
            sigma[z] = choices[idx]
            idx = int(parents[idx])
        return float(r[best]), float(c[best]), sigma

    def _local_select(self, rho_r, rho_c, wr, wc, p):
        tol = _budget_tol(self.c_th)
        if rho_c > self.c_th + tol:
            return None
        budget = self.gamma * p * self.c_th + tol
        feasible = wc <= budget[None, :]
        masked = np.where(feasible, wr, -np.inf)
        sigma = np.argmax(masked, axis=0)
        orphan = ~feasible.any(axis=0)
        if orphan.any():
            sigma[orphan] = np.argmin(wc[:, orphan], axis=0)
        cols = np.arange(wr.shape[1])
        r = rho_r + float(wr[sigma, cols].sum())
        c = rho_c + float(wc[sigma, cols].sum())
        if c > self.c_th + tol:
            return None
        return r, c, sigma

    def assemble(
        self,
        action: Action,
        sigma: np.ndarray | None,
        gr: np.ndarray | None,
        gc: np.ndarray | None,
        epoch: int,
    ) -> AlphaPair:
        """Materialise the joint-space pair for an action and branch choices."""
        alpha_r = self.reward_flat(action).copy()
        alpha_c = self.cost_flat(action).copy()
        if sigma is not None:
            sel_axes = tuple(i - 1 for i in action.relays)
            dims = tuple(self.n if ax in sel_axes else 1 for ax in range(self.k))
            sig_full = np.broadcast_to(sigma.reshape(dims), self.shape).reshape(-1)
            cells = np.arange(self.flat)
            alpha_r += gr[sig_full, cells]
            alpha_c += gc[sig_full, cells]
        return AlphaPair(alpha_r=alpha_r, alpha_c=alpha_c, action=action, epoch=epoch)

    def zero_pair(self, epoch: int) -> AlphaPair:
        return AlphaPair(
            alpha_r=np.zeros(self.flat),
            alpha_c=np.zeros(self.flat),
            action=EMPTY_ACTION,
            epoch=epoch,
        )


# --- point-based backups ---------------------------------------------------


def cpbvi_backup(
    v_next: list[AlphaPair],
    belief_set: BeliefSet,
    scenario: ScenarioConfig,
    chains: list[MarkovChain],
    epoch: int = 0,
    engine: _Engine | None = None,
) -> list[AlphaPair]:
    """One point-based iteration: per anchor belief, the best feasible action
    with its budget-coupled continuation choices. Always returns one pair per
    anchor (the zero pair of the empty action when nothing is feasible)."""
    engine = engine or _Engine(scenario, chains)
    gr = gc = None
    if v_next:
        gr, gc = engine.predict_stack(v_next)
    actions = all_actions(engine.k)
    if len(actions) > EXACT_ACTION_CAP:
        raise CapExceededError(
            f"{len(actions)} candidate actions; use the greedy solver for K > 5"
        )
    out = []
    for fb in belief_set.points:
        best = None
        best_key = None
        for action in actions:
            picked = engine.select(action, fb, gr, gc)
            if picked is None:
                continue
            r, c, sigma = picked
            key = (-r, c, action.selected)
            if best_key is None or key < best_key:
                best_key = key
                best = (action, sigma)
        if best is None:
            out.append(engine.zero_pair(epoch))
        else:
            out.append(engine.assemble(best[0], best[1], gr, gc, epoch))
    return out


def _element_candidates(
    engine: _Engine,
    fb: FactoredBelief,
    gr: np.ndarray | None,
    gc: np.ndarray | None,
):
    """Best ratio-scored candidate per selectable element at ``fb``.

    Element candidates come from the element's own observation-branch
    frontier; zero-cost positive-reward candidates rank ahead of every
    finite ratio, and zero-cost zero-reward elements are dropped as no-ops.
    """
    ranked = []
    tol = 1e-12 * max(1.0, engine.c_th)
    for e in range(engine.k + 1):
        action = Action((e,))
        picked = _element_frontier_best(engine, action, fb, gr, gc)
        if picked is None:
            continue
        r, c = picked
        if c <= tol:
            if r <= tol:
                continue
            ranked.append(((0, -r, 0.0, e), e, r, c))
        else:
            ranked.append(((1, -r / c, -r, e), e, r, c))
    ranked.sort(key=lambda item: item[0])
    return [(e, r, c) for _, e, r, c in ranked]


def _element_frontier_best(engine, action, fb, gr, gc):
    """Max-ratio point of one element's own branch frontier at ``fb``."""
    rho_r, rho_c = engine.rho(action, fb)
    tol = _budget_tol(engine.c_th)
    if rho_c > engine.c_th + tol:
        return None
    if gr is None:
        return rho_r, rho_c
    sel_axes = tuple(i - 1 for i in action.relays)
    wr = engine.branch_scores(gr, fb, sel_axes)
    wc = engine.branch_scores(gc, fb, sel_axes)
    r = np.array([rho_r])
    c = np.array([rho_c])
    for z in range(wr.shape[1]):
        cand = _pareto_indices(wr[:, z], wc[:, z])
        r = (r[:, None] + wr[cand, z][None, :]).ravel()
        c = (c[:, None] + wc[cand, z][None, :]).ravel()
        ok = c <= engine.c_th + tol
        if not ok.any():
            return None
        keep = _pareto_indices(r[ok], c[ok])
        if len(keep) > engine.frontier_cap:
            sub = np.unique(np.linspace(0, len(keep) - 1, engine.frontier_cap).round().astype(int))
            keep = keep[sub]
        r, c = r[ok][keep], c[ok][keep]
    zero = 1e-12 * max(1.0, engine.c_th)
    ratios = np.where(c > zero, r / np.maximum(c, zero), np.where(r > zero, np.inf, 0.0))
    best = int(np.lexsort((c, -r, -ratios))[0])
    return float(r[best]), float(c[best])


def greedy_constrained_argmax(
    per_relay_gammas: dict[int, list[AlphaPair]],
    fb: FactoredBelief,
    c_th: float,
    strict: bool = True,
) -> tuple[AlphaPair, Action]:
    """Ratio-greedy selection over per-element pair sets at one belief.

    Iteratively admits the element whose best pair maximises the
    reward/cost ratio at ``fb``; a candidate that would break the budget is
    skipped and its element permanently removed. Admitted pairs accumulate
    additively. The budget test is strict (``<``) by default, matching the
    printed algorithm; pass ``strict=False`` for the ``<=`` variant.
    """
    scored = []
    tol = 1e-12 * max(1.0, abs(c_th))
    shape = None
    for e, pairs in per_relay_gammas.items():
        if not pairs:
            raise ValidationError(f"element {e} has an empty pair set")
        best = None
        for pair in pairs:
            r, c = pair.evaluate(fb)
            shape = pair.alpha_r.shape
            if c <= tol:
                key = (0, -r, 0.0) if r > tol else (2, 0.0, 0.0)
            else:
                key = (1, -r / c, -r)
            if best is None or key < best[0]:
                best = (key, pair, r, c)
        key, pair, r, c = best
        if key[0] == 2:
            continue
        scored.append((key + (e,), e, pair, r, c))
    scored.sort(key=lambda item: item[0])

    v_sum = 0.0
    total_r = np.zeros(shape) if shape is not None else np.zeros(1)
    total_c = np.zeros_like(total_r)
    admitted: list[int] = []
    for _, e, pair, r, c in scored:
        fits = v_sum + c < c_th if strict else v_sum + c <= c_th + tol
        if fits:
            admitted.append(e)
            v_sum += c
            total_r = total_r + pair.alpha_r
            total_c = total_c + pair.alpha_c
    action = Action(tuple(sorted(admitted)))
    return AlphaPair(alpha_r=total_r, alpha_c=total_c, action=action), action


def gcpbvi_backup(
    v_next: list[AlphaPair],
    belief_set: BeliefSet,
    scenario: ScenarioConfig,
    chains: list[MarkovChain],
    epoch: int = 0,
    engine: _Engine | None = None,
    strict: bool = True,
) -> list[AlphaPair]:
    """Greedy point-based iteration: per anchor belief, pick the action by
    ratio-greedy element addition (never enumerating the 2^K action set),
    then materialise that action's pair with budget-coupled continuations.
    """
    engine = engine or _Engine(scenario, chains)
    gr = gc = None
    if v_next:
        gr, gc = engine.predict_stack(v_next)
    tol = _budget_tol(engine.c_th)
    out = []
    for fb in belief_set.points:
        candidates = _element_candidates(engine, fb, gr, gc)
        v_sum = 0.0
        admitted: list[int] = []
        for e, r, c in candidates:
            fits = v_sum + c < engine.c_th if strict else v_sum + c <= engine.c_th + tol
            if fits:
                admitted.append(e)
                v_sum += c
        pair = None
        while admitted:
            action = Action(tuple(sorted(admitted)))
            picked = engine.select(action, fb, gr, gc)
            if picked is not None:
                pair = engine.assemble(action, picked[2], gr, gc, epoch)
                break
            admitted.pop()
        out.append(pair if pair is not None else engine.zero_pair(epoch))
    return out


# --- exact solver ------------------------------------------------------------


def exact_backup(
    v_t: list[AlphaPair],
    scenario: ScenarioConfig,
    chains: list[MarkovChain],
    epoch: int = 0,
    engine: _Engine | None = None,
    cross_cap: int = 100_000,
    prune: str = "dominance",
    grid_resolution: int = 21,
    state_cap: int = 4096,
) -> list[AlphaPair]:
    """One enumerated dynamic-programming update over all actions.

    Pruning: exact duplicates and pointwise-dominated pairs are removed per
    observation branch and again after the action union; this never changes
    the constrained maximum at any belief. ``prune="grid"`` additionally
    keeps only pairs that are feasible and best somewhere on a deterministic
    belief grid (approximate, off by default).
    """
    engine = engine or _Engine(scenario, chains)
    if engine.flat > state_cap:
        raise CapExceededError(
            f"joint space {engine.flat} exceeds the exact-solver cap {state_cap}; "
            "use cpbvi or gcpbvi"
        )
    actions = all_actions(engine.k)
    if len(actions) > EXACT_ACTION_CAP:
        raise CapExceededError("too many actions for the exact solver; use gcpbvi")

    gr = gc = None
    if v_t:
        gr, gc = engine.predict_stack(v_t)

    out: list[AlphaPair] = []
    for action in actions:
        if gr is None:
            out.append(
                AlphaPair(
                    alpha_r=engine.reward_flat(action).copy(),
                    alpha_c=engine.cost_flat(action).copy(),
                    action=action,
                    epoch=epoch,
                    children={},
                )
            )
            continue
        sel_axes = tuple(i - 1 for i in action.relays)
        branch_states = list(itertools.product(range(engine.n), repeat=len(sel_axes)))
        branch_choices: list[np.ndarray] = []
        tensor_shape = (-1,) + engine.shape
        gr_t = gr.reshape(tensor_shape)
        gc_t = gc.reshape(tensor_shape)
        for combo in branch_states:
            index = (slice(None),) + tuple(
                combo[sel_axes.index(ax)] if ax in sel_axes else slice(None)
                for ax in range(engine.k)
            )
            slice_r = gr_t[index].reshape(len(v_t), -1)
            slice_c = gc_t[index].reshape(len(v_t), -1)
            branch_choices.append(_pointwise_undominated(slice_r, slice_c))
        n_combos = math.prod(len(c) for c in branch_choices)
        if n_combos > cross_cap:
            raise CapExceededError(
                f"action {action.selected} cross-sum would produce {n_combos} pairs "
                f"(cap {cross_cap}); reduce the horizon or use a point-based solver"
            )
        dims = tuple(engine.n if ax in sel_axes else 1 for ax in range(engine.k))
        cells = np.arange(engine.flat)
        for sigma in itertools.product(*branch_choices):
            sig = np.asarray(sigma, dtype=int)
            sig_full = np.broadcast_to(sig.reshape(dims), engine.shape).reshape(-1)
            children = {
                _branch_obs(action, combo, engine.k): v_t[j]
                for combo, j in zip(branch_states, sigma)
            }
            out.append(
                AlphaPair(
                    alpha_r=engine.reward_flat(action) + gr[sig_full, cells],
                    alpha_c=engine.cost_flat(action) + gc[sig_full, cells],
                    action=action,
                    epoch=epoch,
                    children=children,
                )
            )

    out = _dedup_pairs(out)
    keep = _pointwise_undominated(
        np.array([p.alpha_r for p in out]), np.array([p.alpha_c for p in out])
    )
    out = [out[i] for i in keep]
    if prune == "grid":
        out = _grid_prune(out, engine, grid_resolution)
    return out


def _branch_obs(action: Action, combo: tuple[int, ...], k: int) -> Observation:
    z: list[int | None] = [None] * k
    for rel, region in zip(action.relays, combo):
        z[rel - 1] = region
    return tuple(z)


def _dedup_pairs(pairs: list[AlphaPair]) -> list[AlphaPair]:
    seen = set()
    out = []
    for pair in sorted(pairs, key=lambda p: p.action.selected):
        key = pair.key()
        if key[1:] not in seen:
            seen.add(key[1:])
            out.append(pair)
    return out


def _pointwise_undominated(r: np.ndarray, c: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Indices not pointwise-dominated by any other row pair.

    Row j dominates row i when ``r[j] >= r[i]`` and ``c[j] <= c[i]``
    everywhere; among identical rows the lowest index survives.
    """
    m = len(r)
    if m <= 1:
        return np.arange(m)
    dominated = np.zeros(m, dtype=bool)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        ge = (r[None, :, :] >= r[start:stop, None, :]).all(-1)
        le = (c[None, :, :] <= c[start:stop, None, :]).all(-1)
        dom = ge & le
        block = np.arange(start, stop)
        equal = (r[None, :, :] == r[start:stop, None, :]).all(-1) & (
            c[None, :, :] == c[start:stop, None, :]
        ).all(-1)
        strict = dom & ~equal
        earlier_equal = equal & (np.arange(m)[None, :] < block[:, None])
        dominated[block] = (strict | earlier_equal).any(axis=1)
    return np.flatnonzero(~dominated)


def _belief_grid(engine: _Engine, resolution: int, cap: int = 20_000) -> np.ndarray:
    """Deterministic product grid over the per-relay simplices, flattened."""
    n = engine.n
    steps = resolution - 1
    compositions = [
        np.array(c, dtype=float) / steps
        for c in itertools.product(range(steps + 1), repeat=n - 1)
        if sum(c) <= steps
    ] if n > 1 else [np.array([])]
    per_relay = [np.concatenate([c, [1.0 - c.sum()]]) for c in compositions]
    points = []
    for combo in itertools.product(per_relay, repeat=engine.k):
        flat = np.ones(1)
        for b in combo:
            flat = np.kron(flat, b)
        points.append(flat)
        if len(points) >= cap:
            break
    return np.array(points)


def _grid_prune(pairs: list[AlphaPair], engine: _Engine, resolution: int) -> list[AlphaPair]:
    grid = _belief_grid(engine, resolution)
    r = np.array([p.alpha_r for p in pairs]) @ grid.T
    c = np.array([p.alpha_c for p in pairs]) @ grid.T
    tol = _budget_tol(engine.c_th)
    feasible = c <= engine.c_th + tol
    r_masked = np.where(feasible, r, -np.inf)
    winners = set()
    for col in range(grid.shape[0]):
        if np.isfinite(r_masked[:, col]).any():
            winners.add(int(np.argmax(r_masked[:, col])))
    keep = sorted(winners)
    return [pairs[i] for i in keep] if keep else pairs[:1]


# --- top-level solves --------------------------------------------------------


def _resolve_belief_set(scenario, chains, belief_set, eps, h, cap) -> BeliefSet:
    if belief_set is not None:
        return belief_set
    s0 = scenario.initial_states
    if eps is not None:
        return epsilon_belief_set(s0, eps, scenario, chains, cap=cap)
    return build_h_belief_set(s0, h if h is not None else scenario.horizon, chains, cap=cap)


def _finish_stats(engine: _Engine, stats: dict, started: float) -> dict:
    stats.update(engine.counters)
    stats["wall_time_s"] = round(time.perf_counter() - started, 6)
    return stats


def solve_exact(
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
    horizon: int | None = None,
    prune: str = "dominance",
    cross_cap: int = 100_000,
) -> PolicySolution:
    started = time.perf_counter()
    chains = chains if chains is not None else chains_for_scenario(scenario)
    horizon = horizon or scenario.horizon
    engine = _Engine(scenario, chains)
    epochs: list[list[AlphaPair] | None] = [None] * horizon
    v: list[AlphaPair] = []
    for tau in range(1, horizon + 1):
        v = exact_backup(
            v, scenario, chains, epoch=horizon - tau + 1, engine=engine,
            cross_cap=cross_cap, prune=prune,
        )
        epochs[horizon - tau] = v
    stats = {"pairs_per_epoch": [len(e) for e in epochs]}
    return PolicySolution(
        method="exact",
        horizon=horizon,
        gamma=engine.gamma,
        c_th=engine.c_th,
        chains=chains,
        scenario_fingerprint=scenario.fingerprint(),
        initial_state=scenario.initial_states,
        epochs=epochs,
        stats=_finish_stats(engine, stats, started),
    )


def _solve_point_based(
    method: str,
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None,
    belief_set: BeliefSet | None,
    eps: float | None,
    h: int | None,
    cap: int,
    strict: bool,
    root_branch_cap: int,
    frontier_cap: int,
) -> PolicySolution:
    started = time.perf_counter()
    chains = chains if chains is not None else chains_for_scenario(scenario)
    belief_set = _resolve_belief_set(scenario, chains, belief_set, eps, h, cap)
    engine = _Engine(
        scenario, chains, root_branch_cap=root_branch_cap, frontier_cap=frontier_cap
    )
    horizon = scenario.horizon
    epochs: list[list[AlphaPair] | None] = [None] * horizon
    v: list[AlphaPair] = []
    for tau in range(1, horizon + 1):
        if method == "cpbvi":
            v = cpbvi_backup(v, belief_set, scenario, chains, epoch=horizon - tau + 1, engine=engine)
        else:
            v = gcpbvi_backup(
                v, belief_set, scenario, chains, epoch=horizon - tau + 1,
                engine=engine, strict=strict,
            )
        epochs[horizon - tau] = v

    stats = {"belief_points": len(belief_set), "belief_h": belief_set.h}
    try:
        bound = density_bound(chains, belief_set.h)
        r_range, c_range = _value_ranges(scenario)
        eta_r, eta_c = pbvi_error_bound(bound, scenario.gamma, horizon, r_range, c_range)
        stats.update(density_bound=bound, eta_r_bound=eta_r, eta_c_bound=eta_c)
    except SpectralError:
        # immobile or otherwise non-ergodic chains have no mixing guarantee
        stats.update(density_bound=None, eta_r_bound=None, eta_c_bound=None)
    return PolicySolution(
        method=method,
        horizon=horizon,
        gamma=scenario.gamma,
        c_th=scenario.c_th,
        chains=chains,
        scenario_fingerprint=scenario.fingerprint(),
        initial_state=scenario.initial_states,
        epochs=epochs,
        belief_set=belief_set,
        stats=_finish_stats(engine, stats, started),
    )


def solve_cpbvi(
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
    belief_set: BeliefSet | None = None,
    eps: float | None = None,
    h: int | None = None,
    cap: int = 5000,
    root_branch_cap: int = ROOT_BRANCH_CAP,
    frontier_cap: int = FRONTIER_CAP,
) -> PolicySolution:
    return _solve_point_based(
        "cpbvi", scenario, chains, belief_set, eps, h, cap, True,
        root_branch_cap, frontier_cap,
    )


def solve_gcpbvi(
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
    belief_set: BeliefSet | None = None,
    eps: float | None = None,
    h: int | None = None,
    cap: int = 5000,
    strict_budget_test: bool = True,
    root_branch_cap: int = ROOT_BRANCH_CAP,
    frontier_cap: int = FRONTIER_CAP,
) -> PolicySolution:
    return _solve_point_based(
        "gcpbvi", scenario, chains, belief_set, eps, h, cap, strict_budget_test,
        root_branch_cap, frontier_cap,
    )


def _value_ranges(scenario: ScenarioConfig) -> tuple[float, float]:
    """Spread between the best and worst one-epoch total reward and cost."""
    r_hi = max(
        scenario.direct_reward(u)
        + sum(float(reward_vector(scenario, i, u).max()) for i in range(1, scenario.n_relays + 1))
        for u in range(scenario.n_ues)
    )
    c_hi = scenario.direct_cost() + sum(
        float(cost_vector(scenario, i).max()) for i in range(1, scenario.n_relays + 1)
    )
    return r_hi, c_hi


def pbvi_error_bound(
    eps_b: float, gamma: float, h: int, r_range: float, c_range: float
) -> tuple[float, float]:
    """Worst-case point-based value error for a belief set of density eps_b.

    Undiscounted problems use the ``h(h+1)/2`` form; discounted ones divide
    by ``(1-gamma)^2``.
    """
    if eps_b < 0:
        raise ValidationError(f"eps_b must be >= 0, got {eps_b}")
    if gamma == 1.0:
        factor = h * (h + 1) / 2.0
    else:
        factor = 1.0 / (1.0 - gamma) ** 2
    return factor * r_range * eps_b, factor * c_range * eps_b


# --- brute-force oracle -------------------------------------------------------


def brute_force_oracle(
    scenario: ScenarioConfig,
    chains: list[MarkovChain] | None = None,
    horizon: int | None = None,
) -> PolicySolution:
    """Exact constrained optimum over deterministic observation-contingent
    plans, by multi-objective DP on forward-filtered state distributions.

    Kept independent of the alpha-vector machinery on purpose: it filters
    distributions forward, enumerates per-branch Pareto sets of achievable
    (reward, cost) outcomes, and composes them bottom-up.
    """
    started = time.perf_counter()
    chains = chains if chains is not None else chains_for_scenario(scenario)
    horizon = horizon or scenario.horizon
    k = scenario.n_relays
    n = scenario.n_regions
    flat = n**k
    if flat > ORACLE_STATE_CAP or horizon > ORACLE_HORIZON_CAP or k > ORACLE_RELAY_CAP:
        raise CapExceededError(
            f"oracle caps: |S|^K <= {ORACLE_STATE_CAP}, T <= {ORACLE_HORIZON_CAP}, "
            f"K <= {ORACLE_RELAY_CAP} (got {flat}, {horizon}, {k})"
        )

    t_joint = np.ones((1, 1))
    for chain in chains:
        t_joint = np.kron(t_joint, chain.matrix)
    actions = all_actions(k)
    r_flat = {a.selected: reward_tensor(scenario, a) for a in actions}
    c_flat = {a.selected: cost_tensor(scenario, a) for a in actions}
    gamma = scenario.gamma
    c_th = scenario.c_th
    tol = _budget_tol(c_th)
    shape = (n,) * k

    memo: dict[tuple[int, bytes], list] = {}
    frontier_cap = 200_000

    def plans(epoch: int, dist: np.ndarray) -> list:
        """Pareto set of (reward, cost, plan) achievable from this context.

        The budget binds the root expectation only, so subtree sets are
        pruned purely by Pareto dominance: a subtree whose local cost
        exceeds the threshold can still be admissible once scaled by its
        reach probability and discount.
        """
        if epoch > horizon:
            return [(0.0, 0.0, None)]
        key = (epoch, np.round(dist, 12).tobytes())
        if key in memo:
            return memo[key]
        pool: list = []
        for action in actions:
            r0 = float(r_flat[action.selected] @ dist)
            c0 = float(c_flat[action.selected] @ dist)
            combos = [(r0, c0, {})]
            dist_t = dist.reshape(shape)
            sel_axes = tuple(i - 1 for i in action.relays)
            for combo in itertools.product(*(range(n) for _ in sel_axes)):
                index = tuple(
                    combo[sel_axes.index(ax)] if ax in sel_axes else slice(None)
                    for ax in range(k)
                )
                masked = np.zeros(shape)
                masked[index] = dist_t[index]
                p_z = float(masked.sum())
                if p_z <= 0.0:
                    continue
                nxt = (masked.reshape(-1) / p_z) @ t_joint
                obs = _branch_obs(action, combo, k)
                children = plans(epoch + 1, nxt)
                merged = []
                for r_acc, c_acc, plan_acc in combos:
                    for er, ec, child in children:
                        branch_plans = dict(plan_acc)
                        branch_plans[obs] = child
                        merged.append(
                            (r_acc + gamma * p_z * er, c_acc + gamma * p_z * ec, branch_plans)
                        )
                combos = _pareto_plans(merged)
                if len(combos) > frontier_cap:
                    raise CapExceededError(
                        "oracle Pareto frontier exceeded "
                        f"{frontier_cap} plans; shrink the instance"
                    )
            for r_acc, c_acc, plan_acc in combos:
                pool.append((r_acc, c_acc, OracleTree(action=action, children={
                    z: sub for z, sub in plan_acc.items() if sub is not None
                })))
        result = _pareto_plans(pool)
        memo[key] = result
        return result

    dist0 = np.zeros(flat)
    dist0[int(np.ravel_multi_index(scenario.initial_states, shape))] = 1.0
    frontier = plans(1, dist0)
    feasible = [(r, c, plan) for r, c, plan in frontier if c <= c_th + tol]
    if not feasible:
        best = (0.0, 0.0, OracleTree(action=EMPTY_ACTION))
    else:
        best = max(feasible, key=lambda item: (item[0], -item[1]))
    stats = {
        "oracle_value_r": best[0],
        "oracle_value_c": best[1],
        "contexts": len(memo),
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    return PolicySolution(
        method="oracle",
        horizon=horizon,
        gamma=gamma,
        c_th=c_th,
        chains=chains,
        scenario_fingerprint=scenario.fingerprint(),
        initial_state=scenario.initial_states,
        tree=best[2],
        stats=stats,
    )


def _pareto_plans(items: list) -> list:
    if not items:
        return []
    items = sorted(items, key=lambda it: (it[1], -it[0]))
    out = []
    best = -np.inf
    for r, c, plan in items:
        if r > best + 1e-15:
            out.append((r, c, plan))
            best = r
    return out


# --- Q evaluation and discrete derivatives -----------------------------------


def evaluate_q(
    scenario: ScenarioConfig,
    chains: list[MarkovChain],
    policy: PolicySolution,
    fb: FactoredBelief,
    epoch: int,
    action: Action,
) -> QEvaluation:
    """Exact Q of taking ``action`` at ``fb`` and following ``policy`` after,
    by full enumeration of observation branches down to the horizon."""
    from .belief import advance_belief, belief_cost, belief_reward

    horizon = policy.horizon
    gamma = policy.gamma

    def follow(e: int, b: FactoredBelief) -> tuple[float, float]:
        if e > horizon:
            return 0.0, 0.0
        _, act = select_pair(policy, e, b)
        return q_of(e, b, act)

    def q_of(e: int, b: FactoredBelief, act: Action) -> tuple[float, float]:
        r = belief_reward(b, act, scenario)
        c = belief_cost(b, act, scenario)
        if e == horizon:
            return r, c
        sel = act.relays
        supports = [np.flatnonzero(b.per_relay[i - 1] > 0.0) for i in sel]
        for combo in itertools.product(*supports):
            p_z = 1.0
            for i, region in zip(sel, combo):
                p_z *= float(b.per_relay[i - 1][region])
            obs = _branch_obs(act, tuple(int(x) for x in combo), scenario.n_relays)
            nxt = advance_belief(b, chains, act, obs)
            fr, fc = follow(e + 1, nxt)
            r += gamma * p_z * fr
            c += gamma * p_z * fc
        return r, c

    q_r, q_c = q_of(epoch, fb, action)
    return QEvaluation(belief=fb, action=action, epoch=epoch, q_r=q_r, q_c=q_c)


def discrete_derivative(
    scenario: ScenarioConfig,
    chains: list[MarkovChain],
    policy: PolicySolution,
    fb: FactoredBelief,
    epoch: int,
    element: int,
    base: Action,
) -> tuple[float, float]:
    """Marginal Q gain of adding ``element`` to ``base`` at ``fb``."""
    if element in base.selected:
        raise ValidationError(f"element {element} already in the base action {base.selected}")
    with_e = Action(tuple(sorted(base.selected + (element,))))
    q1 = evaluate_q(scenario, chains, policy, fb, epoch, with_e)
    q0 = evaluate_q(scenario, chains, policy, fb, epoch, base)
    return q1.q_r - q0.q_r, q1.q_c - q0.q_c


# --- persistence --------------------------------------------------------------


def _obs_key(z: Observation) -> str:
    return ",".join("-" if v is None else str(v) for v in z)


def _obs_from_key(key: str) -> Observation:
    if key == "":
        return ()
    return tuple(None if part == "-" else int(part) for part in key.split(","))


def _tree_to_dict(tree: OracleTree) -> dict:
    return {
        "action": list(tree.action.selected),
        "children": {_obs_key(z): _tree_to_dict(sub) for z, sub in tree.children.items()},
    }


def _tree_from_dict(data: dict) -> OracleTree:
    return OracleTree(
        action=Action(tuple(data["action"])),
        children={
            _obs_from_key(key): _tree_from_dict(sub)
            for key, sub in data.get("children", {}).items()
        },
    )


def policy_to_dict(policy: PolicySolution) -> dict:
    out = {
        "method": policy.method,
        "horizon": policy.horizon,
        "gamma": policy.gamma,
        "c_th": policy.c_th,
        "scenario_fingerprint": policy.scenario_fingerprint,
        "initial_state": list(policy.initial_state),
        "chains": [chain.matrix.tolist() for chain in policy.chains],
        "stats": _plain(policy.stats),
    }
    if policy.epochs is not None:
        out["epochs"] = [
            [
                {
                    "action": list(pair.action.selected),
                    "alpha_r": pair.alpha_r.tolist(),
                    "alpha_c": pair.alpha_c.tolist(),
                }
                for pair in epoch_pairs
            ]
            for epoch_pairs in policy.epochs
        ]
    if policy.belief_set is not None:
        out["belief_set"] = {
            "h": policy.belief_set.h,
            "source_state": list(policy.belief_set.source_state),
            "points": [
                [vec.tolist() for vec in fb.per_relay] for fb in policy.belief_set.points
            ],
        }
    if policy.tree is not None:
        out["tree"] = _tree_to_dict(policy.tree)
    return out


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def policy_from_dict(data: dict) -> PolicySolution:
    chains = [MarkovChain(np.array(m)) for m in data["chains"]]
    epochs = None
    if "epochs" in data:
        epochs = [
            [
                AlphaPair(
                    alpha_r=np.array(p["alpha_r"]),
                    alpha_c=np.array(p["alpha_c"]),
                    action=Action(tuple(p["action"])),
                    epoch=e + 1,
                )
                for p in epoch_pairs
            ]
            for e, epoch_pairs in enumerate(data["epochs"])
        ]
    belief_set = None
    if "belief_set" in data:
        bs = data["belief_set"]
        points = [
            FactoredBelief(tuple(np.array(v) for v in vecs)) for vecs in bs["points"]
        ]
        belief_set = BeliefSet(
            points=points, h=bs["h"], source_state=tuple(bs["source_state"])
        )
    tree = _tree_from_dict(data["tree"]) if "tree" in data else None
    return PolicySolution(
        method=data["method"],
        horizon=data["horizon"],
        gamma=data["gamma"],
        c_th=data["c_th"],
        chains=chains,
        scenario_fingerprint=data["scenario_fingerprint"],
        initial_state=tuple(data["initial_state"]),
        epochs=epochs,
        belief_set=belief_set,
        tree=tree,
        stats=data.get("stats", {}),
    )


def save_policy(policy: PolicySolution, path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy_to_dict(policy), fh)
        fh.write("\n")


def load_policy(path) -> PolicySolution:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))
