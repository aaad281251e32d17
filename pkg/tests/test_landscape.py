import pytest

from metastable_mdp.errors import BoundsExceeded, InvalidParams
from metastable_mdp.landscape import (canonical_key, circumscribed_min_side, communication_height,
                                      free_polyominoes, is_robust, stability_level, verify_lemma_small)
from metastable_mdp.lattice import Energy, SiteConfig, hamiltonian, rectangle
from metastable_mdp.schemas import SearchBounds


def test_free_polyomino_counts():
    sizes = [len(cells) for cells in free_polyominoes(5, 5)]
    assert [sizes.count(n) for n in range(1, 6)] == [1, 1, 2, 5, 12]


def test_window_limits_polyominoes():
    shapes = list(free_polyominoes(4, 2))
    assert max(len(cells) for cells in shapes) == 4
    assert [len(cells) for cells in shapes].count(3) == 1


def test_canonical_key_ignores_translation(torus6):
    a = rectangle(torus6, 2, 2, origin=(0, 0))
    b = rectangle(torus6, 2, 2, origin=(5, 3))
    c = rectangle(torus6, 3, 2)
    assert canonical_key(a) == canonical_key(b)
    assert canonical_key(a) != canonical_key(c)


def test_communication_height_to_itself(torus6):
    cfg = rectangle(torus6, 2, 2)
    barrier = communication_height(cfg, cfg, SearchBounds())
    assert barrier.level == hamiltonian(cfg)
    assert barrier.path_length == 0


def test_communication_height_of_a_single_hop(torus6):
    a = SiteConfig.from_sites(torus6, [(1, 1), (2, 1)])
    b = SiteConfig.from_sites(torus6, [(1, 1), (3, 1)])
    barrier = communication_height(a, b, SearchBounds(max_particles=2))
    assert barrier.level == hamiltonian(b)
    assert barrier.height == pytest.approx(3.5)


def test_communication_height_is_a_symmetric_ultrametric(torus6):
    configs = [
        SiteConfig.empty(torus6),
        SiteConfig.from_sites(torus6, [(0, 0)]),
        SiteConfig.from_sites(torus6, [(1, 1), (2, 1)]),
        SiteConfig.from_sites(torus6, [(1, 1), (1, 2)]),
        SiteConfig.from_sites(torus6, [(3, 3), (4, 3)]),
    ]
    bounds = SearchBounds(max_particles=2, max_energy_above_start=4.0)
    n = len(configs)
    height = [[communication_height(configs[a], configs[b], bounds).level.exact(torus6) for b in range(n)]
              for a in range(n)]
    for a in range(n):
        for b in range(n):
            assert height[a][b] >= max(hamiltonian(configs[a]).exact(torus6), hamiltonian(configs[b]).exact(torus6))
            assert height[a][b] == height[b][a]
            for c in range(n):
                assert height[a][c] <= max(height[a][b], height[b][c])


def test_stability_level_of_two_by_two_square(torus6):
    cfg = rectangle(torus6, 2, 2)
    bounds = SearchBounds(max_particles=5)
    barrier = stability_level(cfg, bounds)
    assert barrier is not None
    assert barrier.level - hamiltonian(cfg) == Energy(u=2)
    assert barrier.height == pytest.approx(2.0)
    assert is_robust(cfg, barrier, bounds) is True


def test_single_particle_is_not_robust(torus6):
    cfg = SiteConfig.from_sites(torus6, [(2, 2)])
    bounds = SearchBounds(max_particles=2)
    barrier = stability_level(cfg, bounds)
    assert barrier.height == pytest.approx(0.0)
    assert is_robust(cfg, barrier, bounds) is False


def test_search_bounds_are_enforced(torus6):
    with pytest.raises(BoundsExceeded):
        stability_level(rectangle(torus6, 2, 2), SearchBounds(max_states_explored=1))


def test_unreached_below_the_robustness_threshold_is_undetermined(torus6):
    bar = SiteConfig.from_sites(torus6, [(2, 2), (3, 2)])
    low = SearchBounds(max_particles=3, max_energy_above_start=0.5)
    assert stability_level(bar, low) is None
    assert is_robust(bar, None, low) is None
    high = SearchBounds(max_particles=3)
    barrier = stability_level(bar, high)
    assert barrier.height == pytest.approx(1.0)
    assert is_robust(bar, barrier, high) is False

    square = rectangle(torus6, 2, 2)
    assert is_robust(square, stability_level(square, SearchBounds(max_energy_above_start=1.0)),
                     SearchBounds(max_energy_above_start=1.0)) is None
    assert is_robust(square, None, SearchBounds(max_energy_above_start=2.0)) is True


def test_circumscribed_min_side(torus6):
    cfg = SiteConfig.from_sites(torus6, [(1, 1), (2, 1), (3, 1), (3, 2)])
    assert circumscribed_min_side(cfg) == 2


def test_lemma_check_needs_a_high_enough_ceiling(torus6):
    with pytest.raises(InvalidParams):
        verify_lemma_small(6, SearchBounds(max_particles=3, max_energy_above_start=1.5), torus6)


@pytest.mark.slow
def test_lemma_on_small_clusters(torus6):
    report = verify_lemma_small(6, SearchBounds(max_particles=4), torus6)
    assert report.all_passed
    assert [check.name for check in report.checks] == [f"lemma {n} cells" for n in range(1, 5)]


@pytest.mark.slow
def test_stability_level_of_three_by_three_square(params8):
    cfg = rectangle(params8, 3, 3)
    bounds = SearchBounds()
    barrier = stability_level(cfg, bounds)
    assert barrier is None or (barrier.level - hamiltonian(cfg) - Energy(u=2)).sign(params8) > 0
    assert is_robust(cfg, barrier, bounds) is True
