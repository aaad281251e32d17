"""Finite discounted MDPs: value iteration, exact policy evaluation, policy iteration."""
import itertools
import logging
import time
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import spsolve

from .errors import InvalidParams
from .models import SolveMethod
from .schemas import SolveReport

logger = logging.getLogger(__name__)

ValueFn = np.ndarray
Policy = np.ndarray

IMPROVEMENT_TOL = 1e-12
ROW_SUM_TOL = 1e-12


class FiniteMdp:
    """Discounted MDP with (state, action) pairs grouped by state

    P is a CSR matrix of shape (pairs, states); the actions of state k occupy
    rows offsets[k]:offsets[k+1]. States and actions carry optional labels.
    """

    def __init__(self, P, reward: Sequence[float], offsets: Sequence[int], lam: float,
                 states: Optional[Sequence[Any]] = None, actions: Optional[Sequence[Sequence[Any]]] = None):
        if not (0.0 < lam < 1.0):
            raise InvalidParams(f"lambda must lie in (0,1), got {lam}")
        self.P = csr_matrix(P, dtype=np.float64)
        self.reward = np.asarray(reward, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.lam = float(lam)

        n_states = len(self.offsets) - 1
        counts = np.diff(self.offsets)
        if n_states < 1 or self.offsets[0] != 0 or (counts < 1).any():
            raise InvalidParams("every state needs at least one action")
        if self.P.shape != (self.offsets[-1], n_states) or self.reward.shape != (self.offsets[-1],):
            raise InvalidParams(f"kernel shape {self.P.shape} does not match {self.offsets[-1]} pairs "
                                f"over {n_states} states")
        if self.P.nnz and self.P.data.min() < 0:
            raise InvalidParams("transition probabilities must be non-negative")
        sums = np.asarray(self.P.sum(axis=1)).ravel()
        if np.abs(sums - 1.0).max() > ROW_SUM_TOL:
            raise InvalidParams(f"kernel rows must sum to 1 (worst {sums[np.abs(sums - 1.0).argmax()]!r})")

        self.states = list(states) if states is not None else list(range(n_states))
        if actions is None:
            actions = [list(range(c)) for c in counts]
        self.actions = [list(labels) for labels in actions]
        if len(self.states) != n_states or [len(a) for a in self.actions] != counts.tolist():
            raise InvalidParams("state and action labels do not match the kernel layout")
        self.pair_state = np.repeat(np.arange(n_states), counts)
        self._index = {s: k for k, s in enumerate(self.states)}

    @classmethod
    def from_rows(cls, states: Sequence[Any], actions: Sequence[Sequence[Any]],
                  rows: Sequence[Sequence[Mapping[Any, float]]], rewards: Sequence[Sequence[float]],
                  lam: float) -> "FiniteMdp":
        """Build from per-state lists of {target label: probability} rows"""
        index = {s: k for k, s in enumerate(states)}
        data, cols, indptr, flat_rewards, offsets = [], [], [0], [], [0]
        for state_rows, state_rewards in zip(rows, rewards):
            for row, r in zip(state_rows, state_rewards):
                for target, p in sorted(row.items(), key=lambda item: index[item[0]]):
                    cols.append(index[target])
                    data.append(float(p))
                indptr.append(len(data))
                flat_rewards.append(float(r))
            offsets.append(len(flat_rewards))
        P = csr_matrix((data, cols, indptr), shape=(len(flat_rewards), len(states)))
        return cls(P, flat_rewards, offsets, lam, states=states, actions=actions)

    @classmethod
    def from_dense(cls, transitions: np.ndarray, rewards: np.ndarray, lam: float,
                   available: Optional[np.ndarray] = None) -> "FiniteMdp":
        """Build from (S, A, S) transitions and (S, A) rewards, optionally masking actions"""
        n_states, n_actions, _ = transitions.shape
        if available is None:
            available = np.ones((n_states, n_actions), dtype=bool)
        pairs = [(s, a) for s in range(n_states) for a in range(n_actions) if available[s, a]]
        P = np.array([transitions[s, a] for s, a in pairs])
        reward = np.array([rewards[s, a] for s, a in pairs])
        offsets = np.concatenate([[0], np.cumsum(available.sum(axis=1))])
        actions = [list(np.flatnonzero(available[s])) for s in range(n_states)]
        return cls(P, reward, offsets, lam, actions=actions)

    @property
    def n_states(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_pairs(self) -> int:
        return int(self.offsets[-1])

    def index(self, state: Any) -> int:
        return self._index[state]

    def n_actions(self, k: int) -> int:
        return int(self.offsets[k + 1] - self.offsets[k])

    def pairs_of(self, policy: Policy) -> np.ndarray:
        policy = np.asarray(policy, dtype=np.int64)
        if policy.shape != (self.n_states,) or (policy < 0).any() or (policy >= np.diff(self.offsets)).any():
            raise InvalidParams("policy must pick one available action per state")
        return self.offsets[:-1] + policy


def q_values(mdp: FiniteMdp, v: ValueFn) -> np.ndarray:
    return mdp.reward + mdp.lam * (mdp.P @ np.asarray(v, dtype=np.float64))


def bellman_operator(mdp: FiniteMdp, v: ValueFn) -> ValueFn:
    return np.maximum.reduceat(q_values(mdp, v), mdp.offsets[:-1])


def bellman_residual(mdp: FiniteMdp, v: ValueFn) -> float:
    return float(np.abs(bellman_operator(mdp, v) - v).max())


def greedy_policy(mdp: FiniteMdp, v: ValueFn) -> Policy:
    """First maximising action in every state"""
    q = q_values(mdp, v)
    return np.array([int(np.argmax(q[mdp.offsets[k]:mdp.offsets[k + 1]])) for k in range(mdp.n_states)])


def value_iteration(mdp: FiniteMdp, tol: float = 1e-10, max_iterations: int = 1_000_000,
                    v0: Optional[ValueFn] = None) -> Tuple[ValueFn, SolveReport]:
    if tol <= 0:
        raise InvalidParams("tol must be positive")
    start_time = time.time()
    threshold = tol * (1.0 - mdp.lam) / (2.0 * mdp.lam)
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    norms: List[float] = []
    for _ in range(max_iterations):
        updated = bellman_operator(mdp, v)
        norms.append(float(np.abs(updated - v).max()))
        v = updated
        if norms[-1] <= threshold:
            break
    else:
        logger.warning(f"Value iteration stopped after {max_iterations} iterations (update {norms[-1]:.3e})")

    residual = bellman_residual(mdp, v)
    elapsed = time.time() - start_time
    logger.info(f"Value iteration converged in {len(norms)} iterations (residual {residual:.1e})")
    return v, SolveReport(method=SolveMethod.VALUE_ITERATION, iterations=len(norms),
                          residual=residual, wallclock=elapsed, update_norms=norms)


def policy_evaluation(mdp: FiniteMdp, policy: Policy) -> ValueFn:
    """Solve (I - lambda P_pi) v = r_pi with a sparse direct solver"""
    pairs = mdp.pairs_of(policy)
    system = (identity(mdp.n_states, format="csc") - mdp.lam * mdp.P[pairs]).tocsc()
    v = spsolve(system, mdp.reward[pairs])
    return np.atleast_1d(np.asarray(v, dtype=np.float64))


def policy_iteration(mdp: FiniteMdp, policy: Optional[Policy] = None,
                     max_rounds: Optional[int] = None) -> Tuple[Policy, ValueFn, SolveReport]:
    start_time = time.time()
    policy = np.zeros(mdp.n_states, dtype=np.int64) if policy is None else np.array(policy, dtype=np.int64)
    max_rounds = max_rounds or mdp.n_pairs + 1
    rounds = 0
    while True:
        rounds += 1
        v = policy_evaluation(mdp, policy)
        q = q_values(mdp, v)
        changed = 0
        for k in range(mdp.n_states):
            segment = q[mdp.offsets[k]:mdp.offsets[k + 1]]
            best = int(np.argmax(segment))
            current = segment[policy[k]]
            scale = max(abs(current), abs(segment[best]))
            if segment[best] - current > IMPROVEMENT_TOL * scale:
                policy[k] = best
                changed += 1
        logger.debug(f"Policy iteration round {rounds}: {changed} states improved")
        if not changed:
            break
        if rounds >= max_rounds:
            logger.warning(f"Policy iteration stopped after {rounds} rounds with {changed} states still changing")
            break

    residual = bellman_residual(mdp, v)
    elapsed = time.time() - start_time
    logger.info(f"Policy iteration converged in {rounds} rounds (residual {residual:.1e})")
    return policy, v, SolveReport(method=SolveMethod.POLICY_ITERATION, iterations=rounds,
                                  residual=residual, wallclock=elapsed)


def solve(mdp: FiniteMdp, method: SolveMethod = SolveMethod.POLICY_ITERATION,
          tol: float = 1e-10) -> Tuple[Policy, ValueFn, SolveReport]:
    """Optimal (policy, values, report) by the chosen method"""
    if SolveMethod(method) == SolveMethod.VALUE_ITERATION:
        v, report = value_iteration(mdp, tol)
        return greedy_policy(mdp, v), v, report
    return policy_iteration(mdp)


def _tie_band(best: float, tie_tol: float) -> float:
    return tie_tol * abs(best) if best != 0 else tie_tol


def greedy_actions(mdp: FiniteMdp, v: ValueFn, tie_tol: float = 1e-9) -> List[List[int]]:
    """Per state, every action whose Q-value lies within tie_tol (relative) of the best"""
    if tie_tol <= 0:
        raise InvalidParams("tie_tol must be positive")
    q = q_values(mdp, v)
    sets = []
    for k in range(mdp.n_states):
        segment = q[mdp.offsets[k]:mdp.offsets[k + 1]]
        best = segment.max()
        sets.append([int(a) for a in np.flatnonzero(segment >= best - _tie_band(best, tie_tol))])
    return sets


def q_gaps(mdp: FiniteMdp, v: ValueFn, greedy: Sequence[Sequence[int]]) -> np.ndarray:
    """Smallest (max Q - Q) over the actions outside each greedy set; inf when none is excluded"""
    q = q_values(mdp, v)
    gaps = np.full(mdp.n_states, np.inf)
    for k in range(mdp.n_states):
        segment = q[mdp.offsets[k]:mdp.offsets[k + 1]]
        excluded = [a for a in range(len(segment)) if a not in set(greedy[k])]
        if excluded:
            gaps[k] = float(segment.max() - segment[excluded].max())
    return gaps


def greedy_labels(mdp: FiniteMdp, v: ValueFn, tie_tol: float = 1e-9) -> Dict[Any, List[Any]]:
    """greedy_actions keyed by state label, with action labels"""
    return {mdp.states[k]: [mdp.actions[k][a] for a in acts]
            for k, acts in enumerate(greedy_actions(mdp, v, tie_tol))}


def enumerate_policies(mdp: FiniteMdp) -> Iterator[Policy]:
    for choice in itertools.product(*(range(mdp.n_actions(k)) for k in range(mdp.n_states))):
        yield np.array(choice, dtype=np.int64)


def brute_force_optimum(mdp: FiniteMdp, limit: int = 1_000_000) -> Tuple[Policy, ValueFn]:
    """Exhaustive search over stationary deterministic policies; keeps the pointwise-largest values"""
    count = int(np.prod(np.diff(mdp.offsets)))
    if count > limit:
        raise InvalidParams(f"{count} policies exceed the enumeration limit {limit}")
    best_policy, best_v = None, None
    for policy in enumerate_policies(mdp):
        v = policy_evaluation(mdp, policy)
        if best_v is None or v.sum() > best_v.sum():
            best_policy, best_v = policy, v
    return best_policy, best_v


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, lam: float) -> FiniteMdp:
    """Dense random MDP with 1..n_actions actions per state and Dirichlet rows"""
    counts = rng.integers(1, n_actions + 1, size=n_states)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    P = rng.dirichlet(np.ones(n_states), size=int(offsets[-1]))
    P /= P.sum(axis=1, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=int(offsets[-1]))
    return FiniteMdp(P, reward, offsets, lam)
