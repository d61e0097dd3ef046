"""Belief-state machinery: factored filters, belief sets, coverage bounds.

Beliefs factor per relay: the joint belief is the outer product of the
per-relay location distributions. Observation timing follows the filter
recursion of the underlying model: selecting a relay reveals its *current*
region, so the belief carried into the next epoch is the corresponding
transition-matrix row for observed relays and the one-step prediction
``b P`` for the rest. Every belief reachable from a known start is therefore
either the initial one-hot or a row of some matrix power, which is exactly
the family the h-belief set enumerates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapExceededError, ValidationError
from .mobility import MarkovChain
from .model import Action, JointState, ScenarioConfig

# Per-relay entry of an observation vector: a region index for selected
# relays, None for unselected ones (their only observation is "nothing").
Observation = tuple[int | None, ...]

DEDUP_TOL = 1e-9
JOINT_CAP = 10**6
PRODUCT_CAP = 5000


def _frozen(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True)
class FactoredBelief:
    """Per-relay location distributions whose product is the joint belief."""

    per_relay: tuple[np.ndarray, ...]

    def __post_init__(self):
        vecs = []
        for i, b in enumerate(self.per_relay):
            b = np.asarray(b, dtype=float)
            if b.ndim != 1:
                raise ValidationError(f"belief factor {i} must be a vector")
            if np.any(b < -1e-12):
                raise ValidationError(f"belief factor {i} has negative entries")
            if abs(b.sum() - 1.0) > DEDUP_TOL:
                raise ValidationError(f"belief factor {i} sums to {b.sum()}, expected 1")
            vecs.append(_frozen(np.clip(b, 0.0, None)))
        object.__setattr__(self, "per_relay", tuple(vecs))

    @property
    def n_relays(self) -> int:
        return len(self.per_relay)

    def key(self, decimals: int = 12) -> bytes:
        return b"".join(np.round(b, decimals).tobytes() for b in self.per_relay)

    @staticmethod
    def one_hot(state: JointState, n_regions: int) -> "FactoredBelief":
        vecs = []
        for s in state:
            v = np.zeros(n_regions)
            v[s] = 1.0
            vecs.append(v)
        return FactoredBelief(tuple(vecs))


def update_relay_belief(
    belief: np.ndarray, chain: MarkovChain, selected: bool, obs: int | None
) -> np.ndarray:
    """One relay's filter step: prediction if unselected, row-reset if observed."""
    if selected and obs is None:
        raise ValidationError("selected relay must come with an observation")
    if not selected and obs is not None:
        raise ValidationError("unselected relay cannot have an observation")
    if selected:
        return chain.matrix[obs].copy()
    return np.asarray(belief) @ chain.matrix


def advance_belief(
    fb: FactoredBelief, chains: list[MarkovChain], action: Action, obs: Observation
) -> FactoredBelief:
    """Apply one epoch of filtering for all relays under ``action``/``obs``."""
    relays = set(action.relays)
    vecs = []
    for i, (b, chain) in enumerate(zip(fb.per_relay, chains)):
        selected = (i + 1) in relays
        vecs.append(update_relay_belief(b, chain, selected, obs[i] if selected else None))
    return FactoredBelief(tuple(vecs))


def joint_belief(fb: FactoredBelief, cap: int = JOINT_CAP) -> np.ndarray:
    """Outer product of the factors, flattened in row-major relay order."""
    size = math.prod(b.shape[0] for b in fb.per_relay)
    if size > cap:
        raise CapExceededError(
            f"joint belief would have {size} entries (cap {cap}); "
            "keep the factored form instead"
        )
    out = np.ones(1)
    for b in fb.per_relay:
        out = np.kron(out, b)
    return out


def belief_reward(fb: FactoredBelief, action: Action, scenario: ScenarioConfig, ue: int = 0) -> float:
    """Expected immediate reward, computed factored: sum of per-option means."""
    from .model import reward_vector  # local import avoids cycle at module load

    total = 0.0
    for i in action:
        if i == 0:
            total += scenario.direct_reward(ue)
        else:
            total += float(fb.per_relay[i - 1] @ reward_vector(scenario, i, ue))
    return total


def belief_cost(fb: FactoredBelief, action: Action, scenario: ScenarioConfig) -> float:
    from .model import cost_vector

    total = 0.0
    for i in action:
        if i == 0:
            total += scenario.direct_cost()
        else:
            total += float(fb.per_relay[i - 1] @ cost_vector(scenario, i))
    return total


def observation_prob(z: Observation, action: Action, fb: FactoredBelief) -> float:
    """Probability of observation vector ``z`` when taking ``action`` at ``fb``.

    Selected relays report their current region, so each contributes its
    belief mass at the reported region; unselected relays contribute 1
    through their single empty observation.
    """
    relays = set(action.relays)
    prob = 1.0
    for i, b in enumerate(fb.per_relay):
        if (i + 1) in relays:
            if z[i] is None:
                raise ValidationError(f"relay {i + 1} is selected but has no observation")
            prob *= float(b[z[i]])
        elif z[i] is not None:
            raise ValidationError(f"relay {i + 1} is unselected but has observation {z[i]}")
    return prob


def enumerate_observations(action: Action, n_regions: int) -> list[Observation]:
    """All observation vectors consistent with an action, in index order."""
    relays = action.relays
    out = []
    for combo in itertools.product(range(n_regions), repeat=len(relays)):
        z: list[int | None] = [None] * _obs_len(action)
        for rel, region in zip(relays, combo):
            z[rel - 1] = region
        out.append(tuple(z))
    return out


def _obs_len(action: Action) -> int:
    return max(action.relays, default=0)


@dataclass
class BeliefSet:
    """A finite set of factored beliefs used by the point-based solvers."""

    points: list[FactoredBelief]
    h: int
    source_state: JointState
    target_eps: float | None = None
    per_relay_families: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.points:
            raise ValidationError("belief set must be non-empty")

    def __len__(self):
        return len(self.points)


def _relay_family(chain: MarkovChain, s0: int, h: int, tol: float) -> list[tuple[int, np.ndarray]]:
    """Attainable-belief family for one relay: (earliest epoch, vector) pairs.

    Contains the initial one-hot plus the rows ``P^n(S_j, :)`` for every
    power ``1 <= n <= h`` and every state observable from the start state
    (an observed relay's next belief is always such a row). Powers run to
    ``h`` for all observable states so that any deeper row stays within
    ``2 * d(h)`` of the family, which is what the coverage bound guarantees.
    Entries are tagged with the earliest epoch the belief can occur at and
    deduplicated in L1.
    """
    n = chain.size
    one_hot = np.zeros(n)
    one_hot[s0] = 1.0
    family: list[tuple[int, np.ndarray]] = [(0, one_hot)]

    powers = [np.eye(n)]
    for _ in range(h):
        powers.append(powers[-1] @ chain.matrix)

    steps = _observable_steps(chain, s0)
    for s in range(n):
        if steps[s] < 0:
            continue
        t_obs = 1 + steps[s]
        for n_pow in range(1, h + 1):
            family.append((t_obs + n_pow, powers[n_pow][s]))

    family.sort(key=lambda item: item[0])
    kept: list[tuple[int, np.ndarray]] = []
    for epoch, vec in family:
        if all(np.abs(vec - v).sum() > tol for _, v in kept):
            kept.append((epoch, vec))
    return kept


def _observable_steps(chain: MarkovChain, s0: int) -> np.ndarray:
    """Shortest transition count from ``s0`` to each state (-1: unreachable).

    The relay sits at ``s0`` during epoch 1, so a state with step count d is
    first observable at epoch 1 + d.
    """
    adjacency = chain.matrix > 0
    steps = np.full(chain.size, -1, dtype=int)
    steps[s0] = 0
    frontier = [s0]
    level = 0
    while frontier:
        level += 1
        nxt = []
        for s in frontier:
            for s2 in np.flatnonzero(adjacency[s]):
                if steps[s2] < 0:
                    steps[s2] = level
                    nxt.append(int(s2))
        frontier = nxt
    return steps


def build_h_belief_set(
    s0: JointState,
    h: int,
    chains: list[MarkovChain],
    cap: int = PRODUCT_CAP,
    dedup_tol: float = DEDUP_TOL,
) -> BeliefSet:
    """Depth-h belief set anchored at a known start state.

    Joint points are Cartesian products of per-relay attainable-belief
    families (matrix-power rows up to depth ``h`` plus the initial one-hot),
    kept in order of earliest attainable epoch and truncated at ``cap``
    points so the earliest (most backup-relevant) beliefs survive. The
    initial one-hot belief is always the first point.
    """
    if h < 1:
        raise ValidationError(f"h must be >= 1, got {h}")
    if len(s0) != len(chains):
        raise ValidationError("initial state length must match the number of relays")
    families = [_relay_family(chain, s, h, dedup_tol) for chain, s in zip(chains, s0)]

    total = math.prod(len(f) for f in families)
    if total > 10**12:
        raise CapExceededError(
            f"h-belief set would productize to {total} points; use a smaller h"
        )
    ordered = _smallest_products(families, min(cap, total))

    points = [
        FactoredBelief(tuple(families[i][j][1] for i, j in enumerate(idx)))
        for idx in ordered
    ]
    return BeliefSet(
        points=points,
        h=h,
        source_state=tuple(s0),
        per_relay_families=[[vec for _, vec in fam] for fam in families],
    )


def _smallest_products(
    families: list[list[tuple[int, np.ndarray]]], count: int
) -> list[tuple[int, ...]]:
    """Index tuples of the ``count`` lowest epoch-sum products, best-first.

    Each family is sorted by epoch, so successors of a popped tuple (one
    coordinate advanced) are the only candidates that can follow it.
    """
    import heapq

    start = (0,) * len(families)
    heap = [(sum(f[0][0] for f in families), start)]
    seen = {start}
    out: list[tuple[int, ...]] = []
    while heap and len(out) < count:
        score, idx = heapq.heappop(heap)
        out.append(idx)
        for i, fam in enumerate(families):
            j = idx[i] + 1
            if j < len(fam):
                nxt = idx[:i] + (j,) + idx[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (score - fam[j - 1][0] + fam[j][0], nxt))
    return out


def density_bound(chains: list[MarkovChain], h: int) -> float:
    """Coverage guarantee of an h-belief set: ``2 * sum_i slem_i^h / pi_min_i``."""
    if h < 1:
        raise ValidationError(f"h must be >= 1, got {h}")
    total = 0.0
    for chain in chains:
        total += 2.0 * chain.slem**h / float(chain.stationary.min())
    return total


def attainable_beliefs(
    chain: MarkovChain, s0: int, n_max: int
) -> list[np.ndarray]:
    """Every belief one relay's filter can attain, up to power ``n_max``.

    These are the initial one-hot, its predictions, and the rows
    ``P^n(S_j, :)`` for ``n >= 1`` and every observable state (an observed
    relay's next belief is such a row); beyond ``n_max`` consecutive rows
    differ by a geometrically vanishing amount, so the truncation loses
    nothing measurable.
    """
    observable = np.flatnonzero(_observable_steps(chain, s0) >= 0)
    out = [np.eye(chain.size)[s0]]
    power = chain.matrix.copy()
    for _ in range(n_max):
        out.extend(power[s].copy() for s in observable)
        power = power @ chain.matrix
    return out


def empirical_density(
    belief_set: BeliefSet,
    chains: list[MarkovChain],
    n_max: int | None = None,
    sample_cap: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Measured coverage of a belief set over the attainable-belief family.

    Distance between two factored beliefs is the sum of per-relay L1
    distances, the quantity the coverage bound controls. The probe family is
    the attainable beliefs (initial one-hot plus all matrix-power rows up to
    ``n_max``), subsampled if it exceeds ``sample_cap``. Used in validation
    only, never on the solver path.
    """
    n_max = n_max if n_max is not None else belief_set.h + 40
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for i, chain in enumerate(chains):
        probes = attainable_beliefs(chain, belief_set.source_state[i], n_max)
        if len(probes) > sample_cap:
            idx = rng.choice(len(probes), size=sample_cap, replace=False)
            probes = [probes[j] for j in idx]
        family = np.array(belief_set.per_relay_families[i])
        probe_arr = np.array(probes)
        dists = np.abs(probe_arr[:, None, :] - family[None, :, :]).sum(axis=2).min(axis=1)
        worst += float(dists.max())
    return worst


def horizon_for_target(
    target_eps: float,
    gamma: float,
    t: int,
    k: int,
    lam: float,
    pi_min: float,
    r_range: float,
    c_range: float,
) -> int:
    """Smallest h whose coverage guarantee pushes both value errors below
    ``target_eps``; clamps to 1 when the chains mix immediately or the
    target is already met at h=1."""
    if target_eps <= 0:
        raise ValidationError(f"target_eps must be > 0, got {target_eps}")
    if lam <= 0.0:
        return 1

    def f(span: float) -> float:
        if span <= 0:
            return 0.0
        if gamma == 1.0:
            return math.log(target_eps * pi_min / (2 * k * t * span))
        return math.log(target_eps * pi_min * (1 - gamma) ** 2 / (2 * k * span))

    h = math.ceil(min(f(r_range), f(c_range)) / math.log(lam))
    return max(1, h)


def horizon_for_eps(
    target_eps: float, scenario: ScenarioConfig, chains: list[MarkovChain]
) -> int:
    """Belief-set horizon needed for a value-error target on a scenario."""
    from .model import cost_vector, reward_vector

    lam = max(chain.slem for chain in chains)
    if lam <= 0.0:
        return 1
    pi_min = min(float(chain.stationary.min()) for chain in chains)
    k = len(chains)
    r_range = max(
        scenario.direct_reward(ue)
        + sum(float(reward_vector(scenario, i, ue).max()) for i in range(1, k + 1))
        for ue in range(scenario.n_ues)
    )
    c_range = scenario.direct_cost() + sum(
        float(cost_vector(scenario, i).max()) for i in range(1, k + 1)
    )
    return horizon_for_target(
        target_eps, scenario.gamma, scenario.horizon, k, lam, pi_min, r_range, c_range
    )


def epsilon_belief_set(
    s0: JointState,
    target_eps: float,
    scenario: ScenarioConfig,
    chains: list[MarkovChain],
    cap: int = PRODUCT_CAP,
) -> BeliefSet:
    """h-belief set sized so the point-based value error is within target_eps."""
    h = horizon_for_eps(target_eps, scenario, chains)
    out = build_h_belief_set(s0, h, chains, cap=cap)
    out.target_eps = target_eps
    return out
