"""Auxiliary MDP over rectangular clusters: states, actions, kernel rows and rewards."""
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, FrozenSet, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .errors import ActionNotAvailable, InvalidParams, InvalidState, NoSusceptibleBond, NotReducible
from .lattice import OrientedBond, SiteConfig, apply_bond, rectangle, susceptible_bonds
from .models import AuxAction, Boundary, KernelVariant, RewardKind
from .schemas import ModelParams, RewardSpec

logger = logging.getLogger(__name__)

MIN_SIDE = 6

# Canonical action order used for MDP indexing and exports
ACTION_ORDER: Tuple[AuxAction, ...] = (AuxAction.B1, AuxAction.B2, AuxAction.B1C, AuxAction.B2C, AuxAction.STAY)

_TRANSPOSED = {
    AuxAction.B1: AuxAction.B2,
    AuxAction.B2: AuxAction.B1,
    AuxAction.B1C: AuxAction.B2C,
    AuxAction.B2C: AuxAction.B1C,
    AuxAction.STAY: AuxAction.STAY,
}


class AuxState(NamedTuple):
    i: int
    j: int

    def transposed(self) -> "AuxState":
        return AuxState(self.j, self.i)

    def __str__(self) -> str:
        return f"({self.i},{self.j})"


@dataclass(frozen=True)
class TransitionRow:
    """Exact distribution over next states, merged and sorted by state"""
    entries: Tuple[Tuple[AuxState, Fraction], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("transition row has no entries")
        if any(p <= 0 for _, p in self.entries):
            raise ValueError(f"transition probabilities must be positive: {self}")
        if sum(p for _, p in self.entries) != 1:
            raise ValueError(f"transition row does not sum to 1: {self}")

    @classmethod
    def of(cls, weights: Mapping[Tuple[int, int], Fraction]) -> "TransitionRow":
        merged: Dict[AuxState, Fraction] = {}
        for state, p in weights.items():
            state = AuxState(*state)
            merged[state] = merged.get(state, Fraction(0)) + Fraction(p)
        return cls(tuple(sorted(merged.items())))

    def as_dict(self) -> Dict[AuxState, Fraction]:
        return dict(self.entries)

    def probability(self, state: Tuple[int, int]) -> Fraction:
        return self.as_dict().get(AuxState(*state), Fraction(0))

    def transposed(self) -> "TransitionRow":
        return TransitionRow.of({s.transposed(): p for s, p in self.entries})

    def __str__(self) -> str:
        return "{" + ", ".join(f"{s}: {p}" for s, p in self.entries) + "}"


@dataclass(frozen=True)
class GeometricRow:
    """Kernel row rebuilt on the lattice

    `entries` carry the mass of susceptible bonds that relax to an admissible
    rectangle; `unresolved` is the mass of the bonds whose relaxation does not.
    """
    entries: Tuple[Tuple[AuxState, Fraction], ...]
    unresolved: Fraction
    bonds: int

    @property
    def complete(self) -> bool:
        return self.unresolved == 0

    def as_row(self) -> Optional[TransitionRow]:
        return TransitionRow(self.entries) if self.complete else None

    def matches(self, row: TransitionRow) -> bool:
        return self.complete and self.entries == row.entries

    def __str__(self) -> str:
        parts = [f"{s}: {p}" for s, p in self.entries]
        if self.unresolved:
            parts.append(f"unresolved: {self.unresolved}")
        return "{" + ", ".join(parts) + "}"


def side_values(L: int) -> List[int]:
    """Admissible rectangle sides 2..L-2 and L"""
    return [*range(2, L - 1), L]


def states(L: int) -> List[AuxState]:
    check_side(L)
    values = side_values(L)
    return [AuxState(i, j) for i in values for j in values]


def check_side(L: int) -> None:
    if L < MIN_SIDE:
        raise InvalidParams(f"the auxiliary model needs L >= {MIN_SIDE}, got {L}")


def validate_state(s: Tuple[int, int], L: int) -> AuxState:
    state = AuxState(*s)
    allowed = side_values(L)
    if state.i not in allowed or state.j not in allowed:
        raise InvalidState(f"state {state} is not in the state space for L={L}")
    return state


def action_set(s: Tuple[int, int], L: int) -> FrozenSet[AuxAction]:
    i, j = validate_state(s, L)
    if i == L and j == L:
        return frozenset({AuxAction.STAY})
    if i == L:
        return frozenset({AuxAction.B1})
    if j == L:
        return frozenset({AuxAction.B2})
    if i == 2 and j == 2:
        return frozenset({AuxAction.B1C, AuxAction.B2C})
    if i == 2:
        return frozenset({AuxAction.B1C, AuxAction.B2, AuxAction.B2C})
    if j == 2:
        return frozenset({AuxAction.B1, AuxAction.B1C, AuxAction.B2C})
    return frozenset({AuxAction.B1, AuxAction.B2, AuxAction.B1C, AuxAction.B2C})


def available_actions(s: Tuple[int, int], L: int) -> List[AuxAction]:
    allowed = action_set(s, L)
    return [a for a in ACTION_ORDER if a in allowed]


def _require_action(s: AuxState, a: AuxAction, L: int) -> None:
    if a not in action_set(s, L):
        raise ActionNotAvailable(f"action {a.value} is not available in state {s}")


def kernel(s: Tuple[int, int], a: AuxAction, L: int,
           variant: KernelVariant = KernelVariant.FULL) -> TransitionRow:
    state = validate_state(s, L)
    a = AuxAction(a)
    _require_action(state, a, L)
    return _kernel_row(state, a, L, KernelVariant(variant))


@lru_cache(maxsize=None)
def _kernel_row(s: AuxState, a: AuxAction, L: int, variant: KernelVariant) -> TransitionRow:
    i, j = s
    if a == AuxAction.STAY:
        return TransitionRow.of({s: Fraction(1)})
    if a in (AuxAction.B2, AuxAction.B2C):
        return _kernel_row(s.transposed(), _TRANSPOSED[a], L, variant).transposed()
    if a == AuxAction.B1:
        if j == L - 2:
            return TransitionRow.of({s: Fraction(1, 7), (i, L): Fraction(6, 7)})
        return TransitionRow.of({s: Fraction(2, 7), (i, j + 1): Fraction(5, 7)})
    # B1C
    if j == L - 2:
        return TransitionRow.of({s: Fraction(1, 3), (i, L): Fraction(2, 3)})
    if j >= i or variant == KernelVariant.NO_SLIDE:
        return TransitionRow.of({s: Fraction(1, 2), (i, j + 1): Fraction(1, 2)})
    return TransitionRow.of({s: Fraction(1, 2), (i, j + 1): Fraction(1, 3), (i - 1, j + 1): Fraction(1, 6)})


def kernel_rows(L: int, variant: KernelVariant = KernelVariant.FULL) -> Iterator[Tuple[AuxState, AuxAction, TransitionRow]]:
    """Every (state, action, row) in canonical order"""
    for s in states(L):
        for a in available_actions(s, L):
            yield s, a, kernel(s, a, L, variant)


def reward(s: Tuple[int, int], a: AuxAction, spec: RewardSpec, L: int) -> float:
    state = validate_state(s, L)
    a = AuxAction(a)
    _require_action(state, a, L)
    if spec.kind == RewardKind.R1:
        return 1.0 if state == (L, L) else 0.0
    if a in (AuxAction.B1, AuxAction.B2):
        return -3.0 * spec.U
    if a in (AuxAction.B1C, AuxAction.B2C):
        return -2.0 * spec.U
    return 0.0


def corner_adjacent(s: Tuple[int, int], a: AuxAction) -> bool:
    """Rows whose detached particle ends up next to a rectangle corner"""
    i, j = s
    return ((a == AuxAction.B1 and i < 5)
            or (a == AuxAction.B2 and j < 5)
            or (a == AuxAction.B1C and i == 2)
            or (a == AuxAction.B2C and j == 2))


def rectangle_origin(s: Tuple[int, int], L: int) -> Tuple[int, int]:
    i, j = s
    return (L - i) // 2, (L - j) // 2


def post_decision_config(s: Tuple[int, int], a: AuxAction, params: ModelParams) -> SiteConfig:
    """Centred i x j rectangle on the torus with one particle detached by action a"""
    L = params.L
    check_side(L)
    state = validate_state(s, L)
    a = AuxAction(a)
    _require_action(state, a, L)
    if a == AuxAction.STAY:
        raise ActionNotAvailable("STAY has no post-decision configuration")
    params = params.with_boundary(Boundary.PERIODIC)

    i, j = state
    x0, y0 = rectangle_origin(state, L)
    top = y0 + j - 1
    if a == AuxAction.B1:
        column = x0 + math.ceil(i / 2) - 1
        moved, target = (column, top), (column, top + 1)
    elif a == AuxAction.B2:
        row = y0 + math.ceil(j / 2) - 1
        moved, target = (x0, row), (x0 - 1, row)
    elif a == AuxAction.B1C:
        moved, target = (x0, top), (x0, top + 1)
    else:
        moved, target = (x0, top), (x0 - 1, top)
    return rectangle(params, i, j, origin=(x0, y0)).with_sites(occupy=[target], vacate=[moved])


def admissible(s: Tuple[int, int], L: int) -> bool:
    allowed = side_values(L)
    return s[0] in allowed and s[1] in allowed


def geometric_outcomes(s: Tuple[int, int], a: AuxAction,
                       params: ModelParams) -> List[Tuple[OrientedBond, Optional[AuxState]]]:
    """Relaxed outcome of every susceptible bond of the post-decision configuration

    The outcome is None when relaxation does not end in a robust rectangle of
    the state space.
    """
    from .kawasaki import relax_to_robust

    cfg = post_decision_config(s, a, params)
    bonds = susceptible_bonds(cfg)
    if not bonds:
        raise NoSusceptibleBond(f"post-decision configuration of {a.value} at {s} has no susceptible bond")
    outcomes = []
    for bond in bonds:
        try:
            outcome = relax_to_robust(apply_bond(cfg, bond))
        except NotReducible as e:
            logger.debug(f"{s} {a.value}: bond {bond} is unresolved: {e}")
            outcomes.append((bond, None))
            continue
        if not admissible(outcome, params.L):
            logger.debug(f"{s} {a.value}: bond {bond} relaxes to {outcome}, outside the state space")
            outcome = None
        else:
            logger.debug(f"{s} {a.value}: bond {bond} relaxes to {outcome}")
        outcomes.append((bond, outcome))
    return outcomes


@lru_cache(maxsize=None)
def derive_kernel_geometric(s: Tuple[int, int], a: AuxAction, params: ModelParams) -> GeometricRow:
    """Kernel row rebuilt from the lattice: uniform over susceptible bonds, then relaxation"""
    outcomes = geometric_outcomes(s, a, params)
    total = len(outcomes)
    counts = Counter(state for _, state in outcomes)
    unresolved = Fraction(counts.pop(None, 0), total)
    entries = tuple(sorted((state, Fraction(n, total)) for state, n in counts.items()))
    return GeometricRow(entries, unresolved, total)


def build_mdp(L: int, lam: float, spec: RewardSpec, variant: KernelVariant = KernelVariant.FULL):
    """Assemble the auxiliary MDP as a FiniteMdp with float kernel rows"""
    from .solver import FiniteMdp

    check_side(L)
    if not (0.0 < lam < 1.0):
        raise InvalidParams(f"lambda must lie in (0,1), got {lam}")
    state_list = states(L)
    actions, rows, rewards = [], [], []
    for s in state_list:
        labels = available_actions(s, L)
        actions.append(labels)
        rows.append([{t: float(p) for t, p in kernel(s, a, L, variant).entries} for a in labels])
        rewards.append([reward(s, a, spec, L) for a in labels])
    mdp = FiniteMdp.from_rows(state_list, actions, rows, rewards, lam)
    logger.debug(f"Built auxiliary MDP L={L} reward={spec.kind.value} variant={variant.value}: "
                 f"{mdp.n_states} states, {mdp.n_pairs} state-action pairs")
    return mdp


def geometric_closure(starts: Sequence[Tuple[int, int]], table: Mapping[AuxState, AuxAction],
                      params: ModelParams) -> Tuple[List[AuxState], List[Tuple[AuxState, AuxAction, GeometricRow]]]:
    """States reached under the decision rule on lattice-derived rows, and the reached rows left unresolved"""
    L = params.L
    queue = deque()
    seen = set()
    for start in starts:
        start = validate_state(start, L)
        if start not in seen:
            seen.add(start)
            queue.append(start)
    order, unresolved = [], []
    while queue:
        s = queue.popleft()
        order.append(s)
        a = table[s]
        if a == AuxAction.STAY:
            continue
        derived = derive_kernel_geometric(s, a, params)
        if not derived.complete:
            unresolved.append((s, a, derived))
        for t, _ in derived.entries:
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return order, unresolved


def build_geometric_chain(starts: Sequence[Tuple[int, int]], table: Mapping[AuxState, AuxAction], lam: float,
                          spec: RewardSpec, params: ModelParams):
    """Single-action MDP of the decision rule with lattice-derived rows in place of the kernel

    Raises NotReducible when a reached row has unresolved mass.
    """
    from .solver import FiniteMdp

    order, unresolved = geometric_closure(starts, table, params)
    if unresolved:
        raise NotReducible("lattice rows with unresolved mass: "
                           + ", ".join(f"{s} {a.value} ({row.unresolved})" for s, a, row in unresolved))
    rows, rewards = [], []
    for s in order:
        a = table[s]
        if a == AuxAction.STAY:
            rows.append([{s: 1.0}])
        else:
            rows.append([{t: float(p) for t, p in derive_kernel_geometric(s, a, params).entries}])
        rewards.append([reward(s, a, spec, params.L)])
    return FiniteMdp.from_rows(order, [[table[s]] for s in order], rows, rewards, lam)


def policy_table(mdp, policy) -> Dict[AuxState, AuxAction]:
    """Map a solver policy (action index per state) to state -> action"""
    return {s: mdp.actions[k][int(policy[k])] for k, s in enumerate(mdp.states)}


def reachable_states(start: Tuple[int, int], table: Mapping[AuxState, AuxAction], L: int,
                     variant: KernelVariant = KernelVariant.FULL) -> List[AuxState]:
    """States reachable from start under the fixed decision rule, breadth first"""
    start = validate_state(start, L)
    seen = {start}
    queue = deque([start])
    order = []
    while queue:
        s = queue.popleft()
        order.append(s)
        for t, _ in kernel(s, table[s], L, variant).entries:
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return order


def transpose_policy(table: Mapping[AuxState, AuxAction]) -> Dict[AuxState, AuxAction]:
    return {s.transposed(): _TRANSPOSED[a] for s, a in table.items()}


def parse_state(text: str) -> AuxState:
    """Parse 'i,j' into an AuxState"""
    try:
        i, j = (int(part) for part in text.split(","))
    except ValueError:
        raise InvalidState(f"expected a state of the form i,j, got {text!r}")
    return AuxState(i, j)


def default_params(L: int, params: Optional[ModelParams] = None) -> ModelParams:
    """Periodic lattice parameters of side L, energies taken from params when given"""
    if params is None:
        return ModelParams(L=L, boundary=Boundary.PERIODIC)
    return ModelParams(U=params.U, delta=params.delta, beta=params.beta, L=L, boundary=Boundary.PERIODIC)
