"""Kawasaki-Metropolis chain, first interchange, relaxation and controlled rollouts."""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .auxmdp import (AuxState, admissible, geometric_outcomes, kernel, post_decision_config, reward,
                     validate_state)
from .config import STEP_BUDGET
from .errors import InvalidParams, MaxEpochsExceeded, NoSusceptibleBond, NotReducible, StepBudgetExceeded
from .lattice import (Energy, OrientedBond, SiteConfig, apply_bond, bond_energies,
                      bond_table, classify_robust, clusters, cyclic_window,
                      susceptible_indices)
from .models import AuxAction, Dynamics, InterchangeMode, KernelVariant
from .schemas import EpochRecord, ModelParams, RewardSpec, Trajectory

logger = logging.getLogger(__name__)

Policy = Union[Mapping[AuxState, AuxAction], Callable[[AuxState], AuxAction]]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: one per trajectory, keyed by (seed, stream_id)"""
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(sequence))


def _acceptance(cfg: SiteConfig, mode: InterchangeMode) -> np.ndarray:
    """Acceptance probability of every dynamic bond, zero where the bond is not effective"""
    if mode == InterchangeMode.ZERO_T:
        accept = np.zeros(len(cfg.lattice.bonds))
        accept[susceptible_indices(cfg)] = 1.0
        return accept
    return _finite_beta_acceptance(cfg)


@lru_cache(maxsize=4096)
def _finite_beta_acceptance(cfg: SiteConfig) -> np.ndarray:
    effective, delta = bond_energies(cfg)
    accept = np.where(effective, np.exp(-cfg.params.beta * np.maximum(delta, 0.0)), 0.0)
    accept.setflags(write=False)
    return accept


def metropolis_step(cfg: SiteConfig, rng: np.random.Generator,
                    mode: InterchangeMode = InterchangeMode.FINITE_BETA) -> SiteConfig:
    """One step of the discrete-time chain: uniform bond proposal, Metropolis acceptance"""
    bonds = cfg.lattice.bonds
    n = int(rng.integers(len(bonds)))
    if rng.random() < _acceptance(cfg, mode)[n]:
        return apply_bond(cfg, bonds[n])
    return cfg


def transition_row(cfg: SiteConfig) -> Tuple[Dict[SiteConfig, Tuple[int, Energy]], int]:
    """Exact off-diagonal row: target -> (number of proposing bonds, energy change), and |bonds|"""
    bonds = cfg.lattice.bonds
    effective, delta_u, delta_n = bond_table(cfg)
    row: Dict[SiteConfig, Tuple[int, Energy]] = {}
    for n in np.flatnonzero(effective):
        target = apply_bond(cfg, bonds[n])
        count, _ = row.get(target, (0, None))
        row[target] = (count + 1, Energy(int(delta_u[n]), int(delta_n[n])))
    return row, len(bonds)


def transition_probabilities(cfg: SiteConfig) -> Dict[SiteConfig, float]:
    """Full Metropolis row including the stay mass"""
    row, size = transition_row(cfg)
    beta = cfg.params.beta
    probabilities = {
        target: count / size * np.exp(-beta * max(delta.value(cfg.params), 0.0))
        for target, (count, delta) in row.items()
    }
    probabilities[cfg] = 1.0 - sum(probabilities.values())
    return probabilities


def first_interchange(cfg: SiteConfig, rng: np.random.Generator,
                      mode: InterchangeMode = InterchangeMode.ZERO_T,
                      budget: Optional[int] = None) -> Tuple[OrientedBond, SiteConfig]:
    """Run the chain until the configuration first changes; return the fired bond and result"""
    bonds = cfg.lattice.bonds
    if mode == InterchangeMode.ZERO_T:
        candidates = susceptible_indices(cfg)
        if candidates.size == 0:
            raise NoSusceptibleBond(f"no susceptible bond in {cfg!r}")
        bond = bonds[int(candidates[rng.integers(candidates.size)])]
        return bond, apply_bond(cfg, bond)

    budget = STEP_BUDGET if budget is None else budget
    accept = _finite_beta_acceptance(cfg)
    if not accept.any():
        raise NoSusceptibleBond(f"no effective bond in {cfg!r}")
    used = 0
    batch = 256
    while used < budget:
        size = min(batch, budget - used)
        proposals = rng.integers(len(bonds), size=size)
        fired = np.flatnonzero(rng.random(size) < accept[proposals])
        if fired.size:
            bond = bonds[int(proposals[fired[0]])]
            logger.debug(f"First interchange after {used + int(fired[0]) + 1} proposals: {bond}")
            return bond, apply_bond(cfg, bond)
        used += size
        batch = min(batch * 2, 1 << 20)
    raise StepBudgetExceeded(f"no interchange within {budget} proposals")


def _to_local(sites, x0: int, y0: int, side: int, periodic: bool):
    if periodic:
        return {((x - x0) % side, (y - y0) % side) for x, y in sites}
    return {(x - x0, y - y0) for x, y in sites}


def _to_global(local, x0: int, y0: int, side: int, periodic: bool):
    if periodic:
        return [((u + x0) % side, (v + y0) % side) for u, v in local]
    return [(u + x0, v + y0) for u, v in local]


def _slide(cfg: SiteConfig) -> SiteConfig:
    """Slide a side bar around the corner it sticks out of, when it is shorter than the receiving side"""
    lat = cfg.lattice
    sites = cfg.sites()
    window_x = cyclic_window((x for x, _ in sites), lat.side, lat.periodic)
    window_y = cyclic_window((y for _, y in sites), lat.side, lat.periodic)
    if window_x is None or window_y is None:
        return cfg
    (x0, width), (y0, height) = window_x, window_y
    local = _to_local(sites, x0, y0, lat.side, lat.periodic)

    # (axis of the line coordinate, line position, inward step, extent across the side)
    sides = (
        (0, 0, 1, width),
        (0, width - 1, -1, width),
        (1, 0, 1, height),
        (1, height - 1, -1, height),
    )
    for axis, line, inward, across in sides:
        bar = sorted(site[1 - axis] for site in local if site[axis] == line)
        rest = [site for site in local if site[axis] != line]
        if not bar or not rest:
            continue
        along = [site[1 - axis] for site in rest]
        cross = [site[axis] for site in rest]
        lo, hi = min(along), max(along)
        if len(rest) != (hi - lo + 1) * (max(cross) - min(cross) + 1) or len(bar) != hi - lo + 1:
            continue
        sticks_high = hi + 1 in bar and set(bar) <= set(range(lo, hi + 2))
        sticks_low = lo - 1 in bar and set(bar) <= set(range(lo - 1, hi + 1))
        if sticks_high == sticks_low:
            continue
        if len(bar) >= across:
            return cfg
        new_line = hi + 1 if sticks_high else lo - 1
        moved = []
        for step in range(1, len(bar) + 1):
            position = [0, 0]
            position[axis] = line + inward * step
            position[1 - axis] = new_line
            moved.append(tuple(position))
        logger.debug(f"Sliding a bar of {len(bar)} around the corner onto line {new_line}")
        kept = _to_global(rest, x0, y0, lat.side, lat.periodic)
        return SiteConfig.from_sites(cfg.params, kept + _to_global(moved, x0, y0, lat.side, lat.periodic))
    return cfg


def _fill(cfg: SiteConfig) -> SiteConfig:
    """Occupy every empty site with at least two occupied neighbours, until none is left"""
    neighbours = cfg.lattice.neighbours
    valid = neighbours >= 0
    occ = cfg.occ.copy()
    while True:
        counts = (np.where(valid, occ[np.maximum(neighbours, 0)], False)).sum(axis=1)
        candidates = ~occ & (counts >= 2)
        if not candidates.any():
            return SiteConfig(cfg.params, occ)
        occ |= candidates


def relax_to_robust(cfg: SiteConfig) -> AuxState:
    """Deterministic zero-temperature relaxation of a post-interchange configuration"""
    groups = clusters(cfg)
    if not groups:
        raise NotReducible("configuration is empty")
    current = SiteConfig.from_sites(cfg.params, groups[0])
    current = _fill(_slide(current))
    descriptor = classify_robust(current)
    if descriptor is None:
        raise NotReducible(f"relaxation of {cfg!r} did not end in a robust rectangle")
    return AuxState(descriptor.width, descriptor.height)


@lru_cache(maxsize=None)
def zero_t_outcomes(s: AuxState, a: AuxAction, params: ModelParams) -> Tuple[Optional[AuxState], ...]:
    """Relaxed state for each susceptible bond of the post-decision configuration, None where unresolved"""
    return tuple(outcome for _, outcome in geometric_outcomes(s, a, params))


def _sample_row(s: AuxState, a: AuxAction, L: int, variant: KernelVariant, rng: np.random.Generator) -> AuxState:
    entries = kernel(s, a, L, variant).entries
    cumulative = np.cumsum([float(p) for _, p in entries])
    k = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return entries[min(k, len(entries) - 1)][0]


def next_state(s: AuxState, a: AuxAction, params: ModelParams, rng: np.random.Generator,
               mode: InterchangeMode = InterchangeMode.ZERO_T,
               dynamics: Dynamics = Dynamics.LATTICE,
               variant: KernelVariant = KernelVariant.FULL) -> AuxState:
    """One decision epoch after the action: interchange and relaxation, or a kernel draw

    Raises NotReducible when the lattice leaves the rectangle states.
    """
    if dynamics == Dynamics.KERNEL:
        return _sample_row(s, a, params.L, variant, rng)
    if mode == InterchangeMode.ZERO_T:
        outcomes = zero_t_outcomes(s, a, params)
        k = int(rng.integers(len(outcomes)))
        if outcomes[k] is None:
            raise NotReducible(f"susceptible bond {k} of {a.value} at {s} does not relax to an admissible rectangle")
        return outcomes[k]
    cfg = _post_decision_cached(s, a, params)
    bond, moved = first_interchange(cfg, rng, InterchangeMode.FINITE_BETA)
    outcome = relax_to_robust(moved)
    if not admissible(outcome, params.L):
        raise NotReducible(f"interchange along {bond} from {s} relaxes to {outcome}, outside the state space")
    return outcome


@lru_cache(maxsize=1024)
def _post_decision_cached(s: AuxState, a: AuxAction, params: ModelParams) -> SiteConfig:
    return post_decision_config(s, a, params)


def _decide(policy: Policy, s: AuxState) -> AuxAction:
    return policy(s) if callable(policy) else policy[s]


def simulate_controlled(policy: Policy, start: Tuple[int, int], lam: float, spec: RewardSpec,
                        rng: np.random.Generator, params: ModelParams,
                        mode: InterchangeMode = InterchangeMode.ZERO_T,
                        max_epochs: Optional[int] = None,
                        dynamics: Dynamics = Dynamics.LATTICE,
                        variant: KernelVariant = KernelVariant.FULL,
                        record: bool = True, truncate: bool = False) -> Trajectory:
    """Roll out a decision rule from start until absorption at (L, L)

    With truncate set, running out of epochs returns the partial trajectory
    with hit_target False instead of raising MaxEpochsExceeded. An epoch whose
    relaxation leaves the rectangle states ends the trajectory with
    unresolved set.
    """
    L = params.L
    if not (0.0 < lam < 1.0):
        raise InvalidParams(f"lambda must lie in (0,1), got {lam}")
    max_epochs = 50 * L if max_epochs is None else max_epochs
    state = validate_state(start, L)
    target = AuxState(L, L)
    total = 0.0
    discount = 1.0
    epochs: List[EpochRecord] = []
    steps = 0
    while state != target:
        if steps >= max_epochs:
            if truncate:
                return Trajectory(epochs=epochs, discounted_return=total, hit_target=False, steps=steps)
            raise MaxEpochsExceeded(f"no absorption at {target} within {max_epochs} epochs from {start}")
        action = _decide(policy, state)
        r = reward(state, action, spec, L)
        if record:
            epochs.append(EpochRecord(state=tuple(state), action=action, reward=r, discount=discount))
        total += discount * r
        discount *= lam
        steps += 1
        try:
            state = next_state(state, action, params, rng, mode, dynamics, variant)
        except NotReducible as e:
            logger.debug(f"Trajectory from {start} unresolved after {steps} epochs: {e}")
            return Trajectory(epochs=epochs, discounted_return=total, hit_target=False, steps=steps,
                              unresolved=True)

    # STAY forever at the target, summed as a geometric series
    r = reward(target, AuxAction.STAY, spec, L)
    total += discount * r / (1.0 - lam)
    if record:
        epochs.append(EpochRecord(state=tuple(target), action=AuxAction.STAY, reward=r, discount=discount))
    return Trajectory(epochs=epochs, discounted_return=total, hit_target=True, steps=steps)
