import math

import numpy as np
import pytest

from metastable_mdp.errors import BondNotApplicable
from metastable_mdp.lattice import (Energy, OrientedBond, RectangleDescriptor, SiteConfig, apply_bond,
                                    bond_table, classify_robust, clusters, cyclic_window, effective_moves,
                                    energy_delta, gibbs_weight, hamiltonian, is_effective, lattice, rectangle,
                                    susceptible_bonds)
from metastable_mdp.models import BondClass, Boundary
from metastable_mdp.schemas import ModelParams


def test_energy_sign_is_exact(torus6):
    assert Energy(u=-2, delta=1).sign(torus6) == -1
    assert Energy(u=7, delta=-4).sign(torus6) == 0
    assert (Energy(u=1) + Energy(delta=1)).value(torus6) == pytest.approx(2.75)
    assert -Energy(u=1, delta=-1) == Energy(u=-1, delta=1)


def test_model_params_reject_delta_outside_regime():
    with pytest.raises(ValueError, match="delta must lie"):
        ModelParams(U=1.0, delta=2.5)


def test_open_box_geometry(open4):
    lat = lattice(open4.L, open4.boundary)
    assert lat.side == 5
    assert lat.n_sites == 25
    assert lat.interior.sum() == 9
    assert lat.inner_boundary.sum() == 16
    # 80 directed internal bonds plus an IN/OUT pair for each of the 20 outward directions
    assert len(lat.bonds) == 120


def test_periodic_lattice_needs_three_sites():
    with pytest.raises(ValueError):
        lattice(2, Boundary.PERIODIC)
    assert len(lattice(4, Boundary.PERIODIC).bonds) == 64


def test_hamiltonian_of_square_on_torus(torus6):
    assert hamiltonian(rectangle(torus6, 2, 2)) == Energy(u=-4, delta=4)
    assert hamiltonian(rectangle(torus6, 3, 2)) == Energy(u=-7, delta=6)


def test_hamiltonian_ignores_bonds_outside_interior(open4):
    on_edge = SiteConfig.from_sites(open4, [(0, 0), (1, 0)])
    inside = SiteConfig.from_sites(open4, [(1, 1), (2, 1)])
    assert hamiltonian(on_edge) == Energy(u=0, delta=2)
    assert hamiltonian(inside) == Energy(u=-1, delta=2)


@pytest.mark.parametrize("boundary", [Boundary.PERIODIC, Boundary.OPEN])
def test_energy_delta_matches_hamiltonian_difference(boundary):
    params = ModelParams(L=6, boundary=boundary)
    cfg = SiteConfig.from_sites(params, [(0, 0), (1, 1), (2, 1), (2, 2), (4, 3), (6 if boundary == Boundary.OPEN else 5, 2)])
    moves = list(effective_moves(cfg))
    assert moves
    for bond, delta in moves:
        assert energy_delta(cfg, bond) == delta
        assert hamiltonian(apply_bond(cfg, bond)) - hamiltonian(cfg) == delta


def test_bond_table_flags_only_moves_that_change_the_configuration(torus6):
    cfg = rectangle(torus6, 2, 2)
    effective, _, _ = bond_table(cfg)
    bonds = cfg.lattice.bonds
    for n, bond in enumerate(bonds):
        assert effective[n] == (cfg.is_occupied(bond.src) and not cfg.is_occupied(bond.dst))


def test_open_corner_counts_only_first_outward_direction(open4):
    cfg = SiteConfig.from_sites(open4, [(0, 0)])
    west = OrientedBond((0, 0), (-1, 0), BondClass.OUT)
    south = OrientedBond((0, 0), (0, -1), BondClass.OUT)
    assert is_effective(cfg, west)
    assert not is_effective(cfg, south)
    assert apply_bond(cfg, south).n_particles == 0


def test_boundary_bond_must_touch_inner_boundary(open4):
    cfg = SiteConfig.empty(open4)
    with pytest.raises(BondNotApplicable):
        apply_bond(cfg, OrientedBond((2, 2), (2, 3), BondClass.IN))


def test_reservoir_moves_need_isolated_sites(torus6):
    cfg = SiteConfig.from_sites(torus6, [(2, 2)])
    create_far = OrientedBond((3, 4), (4, 4), BondClass.IN)
    create_next = OrientedBond((2, 3), (3, 3), BondClass.IN)
    assert apply_bond(cfg, create_far).n_particles == 2
    assert energy_delta(cfg, create_far) == Energy(u=0, delta=1)
    with pytest.raises(BondNotApplicable):
        apply_bond(cfg, OrientedBond((2, 2), (3, 2), BondClass.IN))
    assert is_effective(cfg, OrientedBond((2, 2), (3, 2), BondClass.OUT))
    with pytest.raises(BondNotApplicable):
        apply_bond(rectangle(torus6, 2, 2), OrientedBond((2, 2), (3, 2), BondClass.OUT))
    assert not is_effective(SiteConfig.from_sites(torus6, [(3, 2)]), create_next)


def test_internal_move_swaps_occupation(torus6):
    cfg = SiteConfig.from_sites(torus6, [(1, 1)])
    moved = apply_bond(cfg, OrientedBond((1, 1), (2, 1)))
    assert moved.sites() == [(2, 1)]
    # periodic wrap across the seam
    wrapped = apply_bond(SiteConfig.from_sites(torus6, [(5, 0)]), OrientedBond((5, 0), (0, 0)))
    assert wrapped.sites() == [(0, 0)]


def test_stable_square_has_no_susceptible_bond(params8):
    assert susceptible_bonds(rectangle(params8, 3, 3)) == []


def test_site_config_text_round_trip(torus6):
    cfg = SiteConfig.from_sites(torus6, [(0, 0), (1, 0), (5, 5)])
    text = cfg.to_text()
    assert text.splitlines()[0] == "L=6 boundary=periodic"
    assert text.splitlines()[1] == ".....#"
    assert SiteConfig.from_text(text, torus6) == cfg
    assert SiteConfig.from_json(cfg.to_json(), torus6) == cfg


def test_site_config_rejects_malformed_text(torus6):
    with pytest.raises(ValueError):
        SiteConfig.from_text("L=6 boundary=periodic\n...\n", torus6)


def test_clusters_are_sorted_largest_first(torus6):
    cfg = SiteConfig.from_sites(torus6, [(0, 3), (2, 2), (3, 2), (3, 3)])
    groups = clusters(cfg)
    assert [len(group) for group in groups] == [3, 1]
    assert groups[1] == frozenset({(0, 3)})


def test_clusters_join_across_the_seam(torus6):
    cfg = SiteConfig.from_sites(torus6, [(5, 1), (0, 1)])
    assert len(clusters(cfg)) == 1


def test_cyclic_window():
    assert cyclic_window([0, 5], 6, periodic=True) == (5, 2)
    assert cyclic_window([0, 5], 6, periodic=False) == (0, 6)
    assert cyclic_window(range(6), 6, periodic=True) is None


def test_classify_robust(torus6):
    assert classify_robust(rectangle(torus6, 3, 2)) == RectangleDescriptor(origin=(1, 2), width=3, height=2)
    wrapped = SiteConfig.from_sites(torus6, [(5, 0), (0, 0), (5, 1), (0, 1)])
    assert classify_robust(wrapped) == RectangleDescriptor(origin=(5, 0), width=2, height=2)
    assert classify_robust(SiteConfig.from_sites(torus6, [(1, 1), (2, 1), (3, 1)])) is None
    assert classify_robust(SiteConfig.from_sites(torus6, [(1, 1), (2, 1), (1, 2)])) is None
    assert classify_robust(SiteConfig.empty(torus6)) is None


def test_rectangle_descriptor_rejects_thin_sides():
    with pytest.raises(ValueError):
        RectangleDescriptor(origin=(0, 0), width=1, height=4)


def test_gibbs_weight(torus6):
    assert gibbs_weight(SiteConfig.empty(torus6)) == 1.0
    single = SiteConfig.from_sites(torus6, [(2, 2)])
    assert gibbs_weight(single) == pytest.approx(math.exp(-torus6.beta * torus6.delta))


def _random_configs(params, count, seed=0, density=0.35):
    rng = np.random.default_rng(seed)
    n_sites = lattice(params.L, params.boundary).n_sites
    return [SiteConfig(params, rng.random(n_sites) < density) for _ in range(count)]


def test_reservoir_bonds_change_the_particle_count_by_one(open4):
    seen = set()
    for cfg in _random_configs(open4, 20):
        n = cfg.n_particles
        for bond, delta in effective_moves(cfg):
            moved = apply_bond(cfg, bond)
            step = {BondClass.IN: 1, BondClass.OUT: -1, BondClass.INTERNAL: 0}[bond.kind]
            assert moved.n_particles == n + step
            assert delta.delta == step
            seen.add(bond.kind)
    assert seen == {BondClass.IN, BondClass.OUT, BondClass.INTERNAL}
