"""Energy-landscape diagnostics: communication heights, stability levels, small-cluster robustness."""
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from heapq import heappop, heappush
from typing import Callable, Dict, Hashable, Iterator, List, Optional, Tuple

import numpy as np

from .errors import BoundsExceeded, InvalidParams
from .lattice import (Energy, Lattice, SiteConfig, apply_bond, classify_robust,
                      cyclic_window, effective_moves, hamiltonian)
from .models import Boundary
from .schemas import ModelParams, SearchBounds, VerificationReport

logger = logging.getLogger(__name__)

Cells = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Barrier:
    """Outcome of a bottleneck search

    level is the exact minimax energy along the best path; height is that
    level as a float, taken relative to the start energy for stability levels.
    """
    level: Energy
    height: float
    bottleneck: SiteConfig
    path_length: int
    states_explored: int


def _max_energy(a: Energy, b: Energy, params: ModelParams) -> Energy:
    return a if a.exact(params) >= b.exact(params) else b


@lru_cache(maxsize=16)
def _translations(lat: Lattice) -> np.ndarray:
    """(n_sites, n_sites) table: row t maps every site to its image under translation t"""
    side = lat.side
    xs = np.arange(lat.n_sites) % side
    ys = np.arange(lat.n_sites) // side
    rows = [((ys + dy) % side) * side + (xs + dx) % side for dy in range(side) for dx in range(side)]
    return np.array(rows, dtype=np.int64)


def canonical_key(cfg: SiteConfig) -> bytes:
    """Translation-invariant key on the torus; the raw occupation elsewhere"""
    lat = cfg.lattice
    if not lat.periodic:
        return cfg.occ.tobytes()
    images = np.zeros((lat.n_sites, lat.n_sites), dtype=bool)
    translations = _translations(lat)
    occupied = np.flatnonzero(cfg.occ)
    images[np.arange(lat.n_sites)[:, None], translations[:, occupied]] = True
    return min(np.packbits(row).tobytes() for row in images)


def _search(start: SiteConfig, is_goal: Callable[[SiteConfig, Energy], bool],
            key: Callable[[SiteConfig], Hashable], bounds: SearchBounds) -> Optional[Tuple[Energy, SiteConfig, int, int]]:
    """Best-first search ordered by the path maximum of the energy"""
    params = start.params
    h0 = hamiltonian(start)
    ceiling = h0.value(params) + bounds.max_energy_above_start
    reservoir = start.lattice.periodic
    counter = itertools.count()

    best: Dict[Hashable, float] = {key(start): h0.value(params)}
    heap = [(h0.value(params), next(counter), start, h0, h0, start, 0)]
    explored = 0
    while heap:
        priority, _, cfg, energy, level, peak, depth = heappop(heap)
        if priority > best.get(key(cfg), np.inf):
            continue
        explored += 1
        if explored > bounds.max_states_explored:
            raise BoundsExceeded(f"search from {start!r} explored more than {bounds.max_states_explored} states")
        if is_goal(cfg, energy):
            logger.debug(f"Bottleneck search reached its goal after {explored} states at level {level}")
            return level, peak, depth, explored

        particles = cfg.n_particles
        for bond, delta in effective_moves(cfg, reservoir=reservoir):
            if particles + delta.delta > bounds.max_particles:
                continue
            moved_energy = energy + delta
            if moved_energy.value(params) > ceiling + 1e-12:
                continue
            moved = apply_bond(cfg, bond)
            moved_level = _max_energy(level, moved_energy, params)
            moved_priority = moved_level.value(params)
            moved_key = key(moved)
            if moved_priority < best.get(moved_key, np.inf):
                best[moved_key] = moved_priority
                moved_peak = moved if moved_level is moved_energy else peak
                heappush(heap, (moved_priority, next(counter), moved, moved_energy, moved_level, moved_peak, depth + 1))
    logger.debug(f"Bottleneck search from {start!r} exhausted after {explored} states")
    return None


def communication_height(a: SiteConfig, b: SiteConfig, bounds: SearchBounds) -> Optional[Barrier]:
    """Minimax path energy from a to b, or None when b is not reached within bounds"""
    if a.params.L != b.params.L or a.params.boundary != b.params.boundary:
        raise InvalidParams("configurations live on different lattices")
    target = b.occ.tobytes()
    found = _search(a, lambda cfg, _: cfg.occ.tobytes() == target, lambda cfg: cfg.occ.tobytes(), bounds)
    if found is None:
        return None
    level, peak, depth, explored = found
    return Barrier(level=level, height=level.value(a.params), bottleneck=peak,
                   path_length=depth, states_explored=explored)


def stability_level(eta: SiteConfig, bounds: SearchBounds) -> Optional[Barrier]:
    """Barrier from eta to the first configuration with strictly lower energy"""
    params = eta.params
    h0 = hamiltonian(eta)
    threshold = h0.exact(params)
    found = _search(eta, lambda cfg, energy: energy.exact(params) < threshold, canonical_key, bounds)
    if found is None:
        return None
    level, peak, depth, explored = found
    barrier = Barrier(level=level, height=(level - h0).value(params), bottleneck=peak,
                      path_length=depth, states_explored=explored)
    logger.info(f"Stability level {barrier.height:.6g} found after {explored} states (path length {depth})")
    return barrier


def _normalise(cells) -> Cells:
    min_x = min(x for x, _ in cells)
    min_y = min(y for _, y in cells)
    return tuple(sorted((x - min_x, y - min_y) for x, y in cells))


def _free_form(cells: Cells) -> Cells:
    images = []
    for flip in (False, True):
        for turns in range(4):
            shape = [(-x, y) if flip else (x, y) for x, y in cells]
            for _ in range(turns):
                shape = [(-y, x) for x, y in shape]
            images.append(_normalise(shape))
    return min(images)


def free_polyominoes(max_cells: int, window: int) -> Iterator[Cells]:
    """Free polyominoes up to max_cells that fit in a window x window box, smallest first"""
    level = {((0, 0),)}
    for n in range(1, max_cells + 1):
        yield from sorted(level)
        if n == max_cells:
            return
        grown = set()
        for cells in level:
            occupied = set(cells)
            for x, y in cells:
                for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
                    extra = (x + dx, y + dy)
                    if extra in occupied:
                        continue
                    shape = _free_form(cells + (extra,))
                    if max(x for x, _ in shape) < window and max(y for _, y in shape) < window:
                        grown.add(shape)
        level = grown


def circumscribed_min_side(cfg: SiteConfig) -> int:
    lat = cfg.lattice
    sites = cfg.sites()
    sides = []
    for axis in (0, 1):
        window = cyclic_window((site[axis] for site in sites), lat.side, lat.periodic)
        sides.append(lat.side if window is None else window[1])
    return min(sides)


def is_robust(cfg: SiteConfig, barrier: Optional[Barrier], bounds: SearchBounds) -> Optional[bool]:
    """Robust iff V > 2U, or V = 2U and the circumscribed rectangle has minimal side 2

    A missing barrier only means V exceeds the search ceiling, so the answer is
    None (undetermined) when that ceiling lies below 2U.
    """
    params = cfg.params
    if barrier is None:
        if bounds.max_energy_above_start < 2 * params.U:
            return None
        return True
    excess = (barrier.level - hamiltonian(cfg) - Energy(u=2)).sign(params)
    return excess > 0 or (excess == 0 and circumscribed_min_side(cfg) == 2)


def _render(cells: Cells) -> str:
    width = max(x for x, _ in cells) + 1
    height = max(y for _, y in cells) + 1
    occupied = set(cells)
    return "/".join("".join("#" if (x, y) in occupied else "." for x in range(width))
                    for y in reversed(range(height)))


def verify_lemma_small(L_small: int, bounds: SearchBounds, params: ModelParams) -> VerificationReport:
    """Check that robustness coincides with being a rectangle of minimal side >= 2, for every small cluster"""
    if bounds.max_energy_above_start < 2 * params.U:
        raise InvalidParams("the energy ceiling must be at least 2U to separate V = 2U from V > 2U")
    torus = ModelParams(U=params.U, delta=params.delta, beta=params.beta, L=L_small, boundary=Boundary.PERIODIC)
    report = VerificationReport()
    per_size: Dict[int, List[bool]] = {}
    for cells in free_polyominoes(bounds.max_particles, L_small - 2):
        cfg = SiteConfig.from_sites(torus, ((x + 1, y + 1) for x, y in cells))
        n = len(cells)
        capped = SearchBounds(max_particles=n + 1,
                              max_energy_above_start=bounds.max_energy_above_start,
                              max_states_explored=bounds.max_states_explored)
        barrier = stability_level(cfg, capped)
        robust = is_robust(cfg, barrier, capped)
        rectangle = classify_robust(cfg) is not None
        per_size.setdefault(n, []).append(robust == rectangle)
        if robust != rectangle:
            report.record(
                f"lemma shape {_render(cells)}", False,
                measured=None if barrier is None else barrier.height, expected=2 * params.U,
                detail=f"robust={robust} rectangle={rectangle}",
            )
    for n, agreements in sorted(per_size.items()):
        report.record(f"lemma {n} cells", all(agreements), measured=float(sum(agreements)),
                      expected=float(len(agreements)),
                      detail=f"{sum(agreements)}/{len(agreements)} shapes agree")
    return report
