import json
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BondNotApplicable
from .models import BondClass, Boundary
from .schemas import ModelParams

logger = logging.getLogger(__name__)

Site = Tuple[int, int]

# E, N, W, S; y grows to the north
DIRECTIONS: Tuple[Site, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))

_KIND_CODES = {BondClass.INTERNAL: 0, BondClass.IN: 1, BondClass.OUT: 2}


@dataclass(frozen=True)
class Energy:
    """Exact energy u*U + delta*Delta with integer coefficients"""
    u: int = 0
    delta: int = 0

    def __add__(self, other: "Energy") -> "Energy":
        return Energy(self.u + other.u, self.delta + other.delta)

    def __sub__(self, other: "Energy") -> "Energy":
        return Energy(self.u - other.u, self.delta - other.delta)

    def __neg__(self) -> "Energy":
        return Energy(-self.u, -self.delta)

    def exact(self, params: ModelParams) -> Fraction:
        return self.u * Fraction(params.U) + self.delta * Fraction(params.delta)

    def value(self, params: ModelParams) -> float:
        return float(self.exact(params))

    def sign(self, params: ModelParams) -> int:
        level = self.exact(params)
        return (level > 0) - (level < 0)

    def __str__(self) -> str:
        return f"{self.u}U{self.delta:+d}Δ"


@dataclass(frozen=True)
class OrientedBond:
    src: Site
    dst: Site
    kind: BondClass = BondClass.INTERNAL

    def __str__(self) -> str:
        return f"{self.src}->{self.dst} [{self.kind.value}]"


@dataclass(frozen=True)
class RectangleDescriptor:
    origin: Site
    width: int
    height: int

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError(f"rectangle sides must be at least 2, got {self.width}x{self.height}")

    @property
    def min_side(self) -> int:
        return min(self.width, self.height)


@dataclass(frozen=True)
class Lattice:
    """Square box {0..L}^2 (OPEN) or L x L torus (PERIODIC), sites indexed row-major"""
    L: int
    boundary: Boundary

    @property
    def periodic(self) -> bool:
        return self.boundary == Boundary.PERIODIC

    @property
    def side(self) -> int:
        return self.L if self.periodic else self.L + 1

    @property
    def n_sites(self) -> int:
        return self.side * self.side

    def contains(self, site: Site) -> bool:
        if self.periodic:
            return True
        x, y = site
        return 0 <= x < self.side and 0 <= y < self.side

    def wrap(self, site: Site) -> Site:
        if self.periodic:
            return site[0] % self.side, site[1] % self.side
        return site

    def index(self, site: Site) -> int:
        x, y = self.wrap(site)
        if not (0 <= x < self.side and 0 <= y < self.side):
            raise IndexError(f"site {site} is outside the box")
        return y * self.side + x

    def site(self, k: int) -> Site:
        return k % self.side, k // self.side

    def step(self, site: Site, direction: Site) -> Site:
        return self.wrap((site[0] + direction[0], site[1] + direction[1]))

    def adjacent(self, a: Site, b: Site) -> bool:
        return any(self.step(a, d) == self.wrap(b) for d in DIRECTIONS)

    @cached_property
    def neighbours(self) -> np.ndarray:
        """(n_sites, 4) neighbour indices in E,N,W,S order, -1 outside the box"""
        table = np.full((self.n_sites, 4), -1, dtype=np.int64)
        for k in range(self.n_sites):
            site = self.site(k)
            for d, direction in enumerate(DIRECTIONS):
                other = self.step(site, direction)
                if self.contains(other):
                    table[k, d] = self.index(other)
        return table

    @cached_property
    def interior(self) -> np.ndarray:
        """Mask of Λ₀; every site on the torus"""
        if self.periodic:
            return np.ones(self.n_sites, dtype=bool)
        xs = np.arange(self.n_sites) % self.side
        ys = np.arange(self.n_sites) // self.side
        return (xs >= 1) & (xs <= self.L - 1) & (ys >= 1) & (ys <= self.L - 1)

    @cached_property
    def inner_boundary(self) -> np.ndarray:
        """Mask of the interior boundary ∂⁻Λ; empty on the torus"""
        return (self.neighbours < 0).any(axis=1)

    @cached_property
    def bonded(self) -> np.ndarray:
        """(n_sites, 4) mask of neighbour pairs that carry binding energy"""
        exists = self.neighbours >= 0
        if self.periodic:
            return exists
        partner = self.interior[np.maximum(self.neighbours, 0)]
        return exists & partner & self.interior[:, None]

    @cached_property
    def bonds(self) -> Tuple[OrientedBond, ...]:
        """Oriented bonds of the dynamics in canonical order"""
        return tuple(bond for bond, _ in self._bond_listing)

    @cached_property
    def _bond_listing(self) -> List[Tuple[OrientedBond, bool]]:
        listing = []
        for k in range(self.n_sites):
            site = self.site(k)
            first_outward = True
            for direction in DIRECTIONS:
                other = self.step(site, direction)
                if self.contains(other):
                    listing.append((OrientedBond(site, other, BondClass.INTERNAL), True))
                else:
                    listing.append((OrientedBond(site, other, BondClass.OUT), first_outward))
                    listing.append((OrientedBond(other, site, BondClass.IN), first_outward))
                    first_outward = False
        return listing

    @cached_property
    def bond_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, kind, primary, pair_bonded) over `bonds`; outside endpoints are -1"""
        size = len(self._bond_listing)
        src = np.full(size, -1, dtype=np.int64)
        dst = np.full(size, -1, dtype=np.int64)
        kind = np.zeros(size, dtype=np.int8)
        primary = np.zeros(size, dtype=bool)
        pair_bonded = np.zeros(size, dtype=bool)
        for n, (bond, is_primary) in enumerate(self._bond_listing):
            kind[n] = _KIND_CODES[bond.kind]
            primary[n] = is_primary
            if self.contains(bond.src):
                src[n] = self.index(bond.src)
            if self.contains(bond.dst):
                dst[n] = self.index(bond.dst)
            if bond.kind == BondClass.INTERNAL:
                d = DIRECTIONS.index(_direction(self, bond.src, bond.dst))
                pair_bonded[n] = self.bonded[src[n], d]
        return src, dst, kind, primary, pair_bonded

    def reservoir_bonds(self) -> Iterator[OrientedBond]:
        """Creation (IN) and annihilation (OUT) bonds acting directly on torus sites"""
        if not self.periodic:
            return
        west, east = DIRECTIONS[2], DIRECTIONS[0]
        for k in range(self.n_sites):
            site = self.site(k)
            yield OrientedBond(self.step(site, west), site, BondClass.IN)
            yield OrientedBond(site, self.step(site, east), BondClass.OUT)


@lru_cache(maxsize=64)
def lattice(L: int, boundary: Boundary) -> Lattice:
    if boundary == Boundary.PERIODIC and L < 3:
        raise ValueError("a periodic lattice needs L >= 3")
    return Lattice(L, Boundary(boundary))


def _direction(lat: Lattice, a: Site, b: Site) -> Site:
    for direction in DIRECTIONS:
        if lat.step(a, direction) == lat.wrap(b):
            return direction
    raise BondNotApplicable(f"sites {a} and {b} are not nearest neighbours")


class SiteConfig:
    """Immutable occupation field on the sites of a lattice"""
    __slots__ = ("params", "occ", "_key")

    def __init__(self, params: ModelParams, occ: Sequence[bool]):
        lat = lattice(params.L, params.boundary)
        arr = np.array(occ, dtype=bool).reshape(-1)
        if arr.size != lat.n_sites:
            raise ValueError(f"expected {lat.n_sites} sites, got {arr.size}")
        arr.setflags(write=False)
        self.params = params
        self.occ = arr
        self._key = (params, arr.tobytes())

    @classmethod
    def empty(cls, params: ModelParams) -> "SiteConfig":
        return cls(params, np.zeros(lattice(params.L, params.boundary).n_sites, dtype=bool))

    @classmethod
    def from_sites(cls, params: ModelParams, sites: Iterable[Site]) -> "SiteConfig":
        lat = lattice(params.L, params.boundary)
        occ = np.zeros(lat.n_sites, dtype=bool)
        for site in sites:
            occ[lat.index(site)] = True
        return cls(params, occ)

    @property
    def lattice(self) -> Lattice:
        return lattice(self.params.L, self.params.boundary)

    @property
    def n_particles(self) -> int:
        return int(self.occ.sum())

    def sites(self) -> List[Site]:
        lat = self.lattice
        return [lat.site(int(k)) for k in np.flatnonzero(self.occ)]

    def is_occupied(self, site: Site) -> bool:
        return bool(self.occ[self.lattice.index(site)])

    def with_sites(self, occupy: Iterable[Site] = (), vacate: Iterable[Site] = ()) -> "SiteConfig":
        lat = self.lattice
        occ = self.occ.copy()
        for site in vacate:
            occ[lat.index(site)] = False
        for site in occupy:
            occ[lat.index(site)] = True
        return SiteConfig(self.params, occ)

    def grid(self) -> np.ndarray:
        """Occupation as a (y, x) array"""
        side = self.lattice.side
        return self.occ.reshape(side, side)

    def __eq__(self, other) -> bool:
        return isinstance(other, SiteConfig) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"SiteConfig(L={self.params.L}, boundary={self.params.boundary.value}, particles={self.n_particles})"

    def to_text(self) -> str:
        rows = ["".join("#" if cell else "." for cell in row) for row in self.grid()[::-1]]
        return "\n".join([f"L={self.params.L} boundary={self.params.boundary.value}", *rows]) + "\n"

    @classmethod
    def from_text(cls, text: str, params: Optional[ModelParams] = None) -> "SiteConfig":
        lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
        if not lines:
            raise ValueError("empty configuration text")
        match = re.fullmatch(r"L=(\d+)\s+boundary=(open|periodic)", lines[0])
        if not match:
            raise ValueError(f"bad configuration header: {lines[0]!r}")
        params = _params_for(params, int(match.group(1)), Boundary(match.group(2)))
        side = lattice(params.L, params.boundary).side
        rows = lines[1:]
        if len(rows) != side or any(len(row) != side or set(row) - {".", "#"} for row in rows):
            raise ValueError(f"expected {side} rows of {side} characters from '.#'")
        grid = np.array([[cell == "#" for cell in row] for row in reversed(rows)], dtype=bool)
        return cls(params, grid.reshape(-1))

    def to_json(self) -> str:
        payload = {
            "L": self.params.L,
            "boundary": self.params.boundary.value,
            "sites": [list(site) for site in self.sites()],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str, params: Optional[ModelParams] = None) -> "SiteConfig":
        payload = json.loads(text)
        params = _params_for(params, int(payload["L"]), Boundary(payload["boundary"]))
        return cls.from_sites(params, (tuple(site) for site in payload["sites"]))


def _params_for(params: Optional[ModelParams], L: int, boundary: Boundary) -> ModelParams:
    if params is None:
        return ModelParams(L=L, boundary=boundary)
    return ModelParams(U=params.U, delta=params.delta, beta=params.beta, L=L, boundary=boundary)


def rectangle(params: ModelParams, width: int, height: int, origin: Optional[Site] = None) -> SiteConfig:
    """Configuration holding exactly one filled width x height rectangle"""
    if origin is None:
        lat = lattice(params.L, params.boundary)
        origin = ((lat.side - width) // 2, (lat.side - height) // 2)
    x0, y0 = origin
    return SiteConfig.from_sites(params, ((x0 + a, y0 + b) for a in range(width) for b in range(height)))


def hamiltonian(cfg: SiteConfig) -> Energy:
    """H = -U * (occupied bonds inside Λ₀, or on the whole torus) + Δ * particles"""
    lat = cfg.lattice
    grid = cfg.grid()
    if lat.periodic:
        bonds = (grid & np.roll(grid, -1, axis=1)).sum() + (grid & np.roll(grid, -1, axis=0)).sum()
    else:
        inner = grid & lat.interior.reshape(grid.shape)
        bonds = (inner[:, :-1] & inner[:, 1:]).sum() + (inner[:-1, :] & inner[1:, :]).sum()
    return Energy(u=-int(bonds), delta=int(grid.sum()))


def gibbs_weight(cfg: SiteConfig) -> float:
    """Unnormalised grand-canonical weight exp(-beta H)"""
    return math.exp(-cfg.params.beta * hamiltonian(cfg).value(cfg.params))


def _bonded_count(cfg: SiteConfig, k: int, exclude: int = -1) -> int:
    lat = cfg.lattice
    count = 0
    for d in range(4):
        other = lat.neighbours[k, d]
        if other >= 0 and other != exclude and lat.bonded[k, d] and cfg.occ[other]:
            count += 1
    return count


def _is_isolated(cfg: SiteConfig, k: int) -> bool:
    neighbours = cfg.lattice.neighbours[k]
    return not any(cfg.occ[other] for other in neighbours if other >= 0 and other != k)


def _check_applicable(cfg: SiteConfig, b: OrientedBond) -> None:
    lat = cfg.lattice
    if b.kind == BondClass.INTERNAL:
        if not (lat.contains(b.src) and lat.contains(b.dst)):
            raise BondNotApplicable(f"internal bond {b} leaves the box")
        _direction(lat, b.src, b.dst)
        return
    _direction(lat, b.src, b.dst)
    if lat.periodic:
        site = b.dst if b.kind == BondClass.IN else b.src
        if b.kind == BondClass.IN and lat.wrap(b.src) != lat.step(site, DIRECTIONS[2]):
            raise BondNotApplicable(f"creation bond {b} must come from the west neighbour")
        if b.kind == BondClass.OUT and lat.wrap(b.dst) != lat.step(site, DIRECTIONS[0]):
            raise BondNotApplicable(f"annihilation bond {b} must point to the east neighbour")
        k = lat.index(site)
        if cfg.occ[k] == (b.kind == BondClass.OUT) and not _is_isolated(cfg, k):
            raise BondNotApplicable(f"reservoir move {b} needs a site without occupied neighbours")
        return
    inside, outside = (b.dst, b.src) if b.kind == BondClass.IN else (b.src, b.dst)
    if lat.contains(outside) or not lat.contains(inside) or not lat.inner_boundary[lat.index(inside)]:
        raise BondNotApplicable(f"boundary bond {b} must join ∂⁻Λ to the outside")


def apply_bond(cfg: SiteConfig, b: OrientedBond) -> SiteConfig:
    """T_b: swap along internal bonds, annihilate on OUT, create on IN"""
    _check_applicable(cfg, b)
    lat = cfg.lattice
    occ = cfg.occ.copy()
    if b.kind == BondClass.INTERNAL:
        s, t = lat.index(b.src), lat.index(b.dst)
        occ[s], occ[t] = cfg.occ[t], cfg.occ[s]
    elif b.kind == BondClass.OUT:
        occ[lat.index(b.src)] = False
    else:
        occ[lat.index(b.dst)] = True
    return SiteConfig(cfg.params, occ)


def energy_delta(cfg: SiteConfig, b: OrientedBond) -> Energy:
    """H(T_b cfg) - H(cfg) from the local neighbourhood of b"""
    _check_applicable(cfg, b)
    lat = cfg.lattice
    if b.kind == BondClass.INTERNAL:
        s, t = lat.index(b.src), lat.index(b.dst)
        if cfg.occ[s] == cfg.occ[t]:
            return Energy()
        if not cfg.occ[s]:
            s, t = t, s
        gained = _bonded_count(cfg, t, exclude=s)
        lost = _bonded_count(cfg, s, exclude=t)
        return Energy(u=-(gained - lost))
    if b.kind == BondClass.OUT:
        s = lat.index(b.src)
        if not cfg.occ[s]:
            return Energy()
        return Energy(u=_bonded_count(cfg, s), delta=-1)
    t = lat.index(b.dst)
    if cfg.occ[t]:
        return Energy()
    return Energy(u=-_bonded_count(cfg, t), delta=1)


def is_effective(cfg: SiteConfig, b: OrientedBond) -> bool:
    """True when b proposes a configuration different from cfg, counted once per target"""
    lat = cfg.lattice
    if b.kind == BondClass.INTERNAL:
        return bool(cfg.occ[lat.index(b.src)] and not cfg.occ[lat.index(b.dst)])
    site = b.dst if b.kind == BondClass.IN else b.src
    k = lat.index(site)
    wanted = b.kind == BondClass.OUT
    if bool(cfg.occ[k]) != wanted:
        return False
    if lat.periodic:
        return _is_isolated(cfg, k)
    outward = b.dst if b.kind == BondClass.OUT else b.src
    direction = (outward[0] - site[0], outward[1] - site[1])
    first = next(d for d in DIRECTIONS if not lat.contains(lat.step(site, d)))
    return direction == first


def bond_table(cfg: SiteConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised (effective, delta_u, delta_n) over `cfg.lattice.bonds`

    delta_u and delta_n are the integer coefficients of U and Δ in the energy change
    of each bond; they are only meaningful where `effective` is set.
    """
    lat = cfg.lattice
    occ = cfg.occ
    src, dst, kind, primary, pair_bonded = lat.bond_arrays
    occupied_neighbours = np.where(lat.neighbours >= 0, occ[np.maximum(lat.neighbours, 0)], False)
    counts = (occupied_neighbours & lat.bonded).sum(axis=1).astype(np.int64)

    s = np.maximum(src, 0)
    t = np.maximum(dst, 0)
    internal = kind == 0
    incoming = kind == 1
    outgoing = kind == 2

    effective = np.zeros(len(kind), dtype=bool)
    delta_u = np.zeros(len(kind), dtype=np.int64)
    delta_n = np.zeros(len(kind), dtype=np.int64)

    effective[internal] = occ[s[internal]] & ~occ[t[internal]]
    gained = counts[t[internal]] - pair_bonded[internal].astype(np.int64)
    delta_u[internal] = -(gained - counts[s[internal]])

    effective[outgoing] = occ[s[outgoing]] & primary[outgoing]
    delta_u[outgoing] = counts[s[outgoing]]
    delta_n[outgoing] = -1

    effective[incoming] = ~occ[t[incoming]] & primary[incoming]
    delta_u[incoming] = -counts[t[incoming]]
    delta_n[incoming] = 1
    return effective, delta_u, delta_n


def bond_energies(cfg: SiteConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(effective mask, float energy change) over `cfg.lattice.bonds`"""
    effective, delta_u, delta_n = bond_table(cfg)
    return effective, delta_u * cfg.params.U + delta_n * cfg.params.delta


def _downhill(params: ModelParams, delta_u: np.ndarray, delta_n: np.ndarray) -> np.ndarray:
    """Exact ΔH <= 0 test; only boundary moves mix U and Δ"""
    downhill = (delta_n == 0) & (delta_u <= 0)
    for n in np.flatnonzero(delta_n != 0):
        downhill[n] = Energy(int(delta_u[n]), int(delta_n[n])).sign(params) <= 0
    return downhill


def susceptible_indices(cfg: SiteConfig) -> np.ndarray:
    effective, delta_u, delta_n = bond_table(cfg)
    return np.flatnonzero(effective & _downhill(cfg.params, delta_u, delta_n))


def susceptible_bonds(cfg: SiteConfig) -> List[OrientedBond]:
    """Effective bonds of the dynamics with ΔH <= 0, in canonical order"""
    bonds = cfg.lattice.bonds
    return [bonds[n] for n in susceptible_indices(cfg)]


def effective_moves(cfg: SiteConfig, reservoir: bool = False) -> Iterator[Tuple[OrientedBond, Energy]]:
    """Every effective move with its exact energy change"""
    bonds = cfg.lattice.bonds
    effective, delta_u, delta_n = bond_table(cfg)
    for n in np.flatnonzero(effective):
        yield bonds[n], Energy(int(delta_u[n]), int(delta_n[n]))
    if reservoir:
        for bond in cfg.lattice.reservoir_bonds():
            if is_effective(cfg, bond):
                yield bond, energy_delta(cfg, bond)


def clusters(cfg: SiteConfig) -> List[frozenset]:
    """Connected components of occupied sites, largest first"""
    lat = cfg.lattice
    occupied = np.flatnonzero(cfg.occ)
    if occupied.size == 0:
        return []
    rows, cols = [], []
    for d in (0, 1):
        partner = lat.neighbours[occupied, d]
        linked = (partner >= 0) & cfg.occ[np.maximum(partner, 0)]
        rows.append(occupied[linked])
        cols.append(partner[linked])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(lat.n_sites, lat.n_sites))
    _, labels = connected_components(graph, directed=False)
    groups = {}
    for k in occupied:
        groups.setdefault(int(labels[k]), []).append(int(k))
    ordered = sorted(groups.values(), key=lambda members: (-len(members), min(members)))
    return [frozenset(lat.site(k) for k in members) for members in ordered]


def cyclic_window(values: Iterable[int], side: int, periodic: bool) -> Optional[Tuple[int, int]]:
    """Smallest (start, length) window covering the values, cyclic on the torus

    Returns None when the values cover every coordinate of a periodic axis.
    """
    ordered = sorted(set(values))
    if not ordered:
        raise ValueError("no coordinates")
    if not periodic:
        return ordered[0], ordered[-1] - ordered[0] + 1
    if len(ordered) == side:
        return None
    gaps = [((ordered[(n + 1) % len(ordered)] - ordered[n]) % side) or side for n in range(len(ordered))]
    widest = max(range(len(gaps)), key=lambda n: (gaps[n], -n))
    start = ordered[(widest + 1) % len(ordered)]
    return start, side - gaps[widest] + 1


def _axis_span(values: Sequence[int], side: int, periodic: bool) -> Optional[Tuple[int, int]]:
    window = cyclic_window(values, side, periodic)
    if window is None:
        return 0, side
    if window[1] != len(set(values)):
        return None
    return window


def classify_robust(cfg: SiteConfig) -> Optional[RectangleDescriptor]:
    """Descriptor of the single i x j rectangle with min(i, j) >= 2, or None"""
    sites = cfg.sites()
    if not sites:
        return None
    lat = cfg.lattice
    span_x = _axis_span([x for x, _ in sites], lat.side, lat.periodic)
    span_y = _axis_span([y for _, y in sites], lat.side, lat.periodic)
    if span_x is None or span_y is None:
        return None
    (x0, width), (y0, height) = span_x, span_y
    if width * height != len(sites) or min(width, height) < 2:
        return None
    return RectangleDescriptor(origin=(x0, y0), width=width, height=height)
