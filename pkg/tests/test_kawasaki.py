import numpy as np
import pytest
from scipy.stats import chisquare

from metastable_mdp.auxmdp import AuxState, build_mdp, post_decision_config
from metastable_mdp.errors import (InvalidParams, MaxEpochsExceeded, NoSusceptibleBond, NotReducible,
                                   StepBudgetExceeded)
from metastable_mdp.kawasaki import (RngStream, first_interchange, metropolis_step, next_state,
                                     relax_to_robust, simulate_controlled, transition_probabilities, transition_row,
                                     zero_t_outcomes)
from metastable_mdp.lattice import SiteConfig, gibbs_weight, hamiltonian, lattice, rectangle, susceptible_bonds
from metastable_mdp.models import AuxAction, Dynamics, InterchangeMode, RewardKind
from metastable_mdp.schemas import RewardSpec
from metastable_mdp.solver import policy_iteration
from metastable_mdp.verify import mc_policy


def test_rng_streams_are_reproducible_and_independent():
    a = RngStream(42, 3).generator().random(5)
    b = RngStream(42, 3).generator().random(5)
    c = RngStream(42, 4).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_relaxation_completes_a_row(params8):
    cfg = rectangle(params8, 4, 3, origin=(2, 2)).with_sites(occupy=[(3, 5)])
    assert relax_to_robust(cfg) == AuxState(4, 4)


def test_relaxation_keeps_the_largest_cluster(params8):
    cfg = rectangle(params8, 3, 3, origin=(1, 1)).with_sites(occupy=[(6, 6)])
    assert relax_to_robust(cfg) == AuxState(3, 3)


def test_relaxation_of_empty_configuration_fails(params8):
    with pytest.raises(NotReducible):
        relax_to_robust(SiteConfig.empty(params8))


def test_first_interchange_at_zero_temperature_uses_susceptible_bonds(params8):
    cfg = post_decision_config((5, 4), AuxAction.B1, params8)
    allowed = set(susceptible_bonds(cfg))
    rng = RngStream(1).generator()
    for _ in range(20):
        bond, moved = first_interchange(cfg, rng)
        assert bond in allowed
        assert moved.n_particles == cfg.n_particles


def test_first_interchange_without_susceptible_bond(params8):
    with pytest.raises(NoSusceptibleBond):
        first_interchange(rectangle(params8, 3, 3), RngStream(0).generator())


def test_first_interchange_respects_the_step_budget(params8):
    with pytest.raises(StepBudgetExceeded):
        first_interchange(rectangle(params8, 3, 3), RngStream(0).generator(),
                          InterchangeMode.FINITE_BETA, budget=10)


def test_metropolis_step_on_empty_torus_stays(params8):
    cfg = SiteConfig.empty(params8)
    assert metropolis_step(cfg, RngStream(0).generator()) == cfg


def test_transition_probabilities_sum_to_one(params8):
    cfg = post_decision_config((5, 4), AuxAction.B1, params8)
    probabilities = transition_probabilities(cfg)
    assert sum(probabilities.values()) == pytest.approx(1.0)
    assert all(p >= 0 for p in probabilities.values())


def test_zero_temperature_outcomes_of_b1(params8):
    outcomes = zero_t_outcomes(AuxState(5, 4), AuxAction.B1, params8)
    assert len(outcomes) == 7
    assert sorted(set(outcomes)) == [AuxState(5, 4), AuxState(5, 5)]
    assert outcomes.count(AuxState(5, 5)) == 5


def test_next_state_on_lattice_and_kernel(params8):
    rng = RngStream(3).generator()
    for dynamics in Dynamics:
        for _ in range(10):
            s = next_state(AuxState(5, 4), AuxAction.B1, params8, rng, dynamics=dynamics)
            assert s in (AuxState(5, 4), AuxState(5, 5))


def test_rollout_from_target_adds_the_geometric_tail(params8, r1):
    trajectory = simulate_controlled({}, (8, 8), 0.9, r1, RngStream(0).generator(), params8)
    assert trajectory.hit_target
    assert trajectory.steps == 0
    assert trajectory.discounted_return == pytest.approx(10.0)


def test_rollout_along_the_edge(params8, r2):
    policy = {AuxState(8, j): AuxAction.B1 for j in (2, 3, 4, 5, 6)}
    trajectory = simulate_controlled(policy, (8, 6), 0.9, r2, RngStream(5).generator(), params8,
                                     dynamics=Dynamics.KERNEL)
    assert trajectory.hit_target
    assert trajectory.epochs[0].state == (8, 6)
    assert trajectory.epochs[0].reward == -3.0
    assert trajectory.epochs[-1].action == AuxAction.STAY
    assert trajectory.discounted_return == pytest.approx(-3.0 * sum(0.9 ** k for k in range(trajectory.steps)))


def test_rollout_epoch_cap(params8, r1):
    policy = {AuxState(2, 2): AuxAction.B1C}
    with pytest.raises(MaxEpochsExceeded):
        simulate_controlled(policy, (2, 2), 0.9, r1, RngStream(0).generator(), params8, max_epochs=0)
    truncated = simulate_controlled(policy, (2, 2), 0.9, r1, RngStream(0).generator(), params8,
                                    max_epochs=0, truncate=True)
    assert not truncated.hit_target
    assert truncated.discounted_return == 0.0


def test_rollout_rejects_bad_discount(params8, r1):
    for lam in (0.0, 1.0):
        with pytest.raises(InvalidParams, match="lambda must lie in"):
            simulate_controlled({}, (8, 8), lam, r1, RngStream(0).generator(), params8)


def test_transition_row_energy_changes(torus6):
    cfg = rectangle(torus6, 2, 2, origin=(2, 2))
    row, size = transition_row(cfg)
    assert size == len(cfg.lattice.bonds)
    assert cfg not in row
    assert sum(count for count, _ in row.values()) <= size
    for target, (count, delta) in row.items():
        assert count >= 1
        assert delta == hamiltonian(target) - hamiltonian(cfg)


def test_metropolis_rows_satisfy_detailed_balance(open4):
    rng = np.random.default_rng(11)
    n_sites = lattice(open4.L, open4.boundary).n_sites
    pairs = 0
    for _ in range(15):
        cfg = SiteConfig(open4, rng.random(n_sites) < 0.35)
        forward = transition_probabilities(cfg)
        for target, p in forward.items():
            if target == cfg:
                continue
            backward = transition_probabilities(target)[cfg]
            assert gibbs_weight(cfg) * p == pytest.approx(gibbs_weight(target) * backward, rel=1e-9)
            pairs += 1
    assert pairs > 100


def test_zero_temperature_first_interchange_is_uniform(params8):
    cfg = post_decision_config((5, 4), AuxAction.B1, params8)
    bonds = susceptible_bonds(cfg)
    position = {bond: k for k, bond in enumerate(bonds)}
    counts = np.zeros(len(bonds), dtype=np.int64)
    rng = RngStream(17).generator()
    for _ in range(7000):
        bond, _ = first_interchange(cfg, rng)
        counts[position[bond]] += 1
    assert chisquare(counts).pvalue > 1e-3


def test_unresolved_bonds_are_reported_not_stayed(params8):
    outcomes = zero_t_outcomes(AuxState(2, 2), AuxAction.B1C, params8)
    assert None in outcomes
    rng = RngStream(2).generator()
    resolved, unresolved = set(), 0
    for _ in range(200):
        try:
            resolved.add(next_state(AuxState(2, 2), AuxAction.B1C, params8, rng))
        except NotReducible:
            unresolved += 1
    assert unresolved > 0
    assert resolved <= set(outcomes) - {None}


def test_rollout_marks_unresolved_epochs(params8, r1):
    policy = {AuxState(2, 2): AuxAction.B1C}
    flagged = []
    for seed in range(200):
        trajectory = simulate_controlled(policy, (2, 2), 0.9, r1, RngStream(seed).generator(), params8,
                                         max_epochs=1, truncate=True)
        assert not trajectory.hit_target
        assert trajectory.steps == 1
        if trajectory.unresolved:
            flagged.append(trajectory)
    assert flagged
    assert all(len(trajectory.epochs) == 1 for trajectory in flagged)

    kernel_runs = [simulate_controlled(policy, (2, 2), 0.9, r1, RngStream(seed).generator(), params8,
                                       max_epochs=1, truncate=True, dynamics=Dynamics.KERNEL)
                   for seed in range(50)]
    assert not any(trajectory.unresolved for trajectory in kernel_runs)


@pytest.mark.parametrize("kind", [RewardKind.R1, RewardKind.R2])
@pytest.mark.parametrize("start", [AuxState(8, 8), AuxState(10, 8)])
def test_optimal_rule_absorbs_on_the_lattice(params10, kind, start):
    spec = RewardSpec(kind=kind)
    mdp = build_mdp(10, 0.9, spec)
    _, v, _ = policy_iteration(mdp)
    table = mc_policy(mdp, v, params10, 1e-9)
    for seed in range(20):
        trajectory = simulate_controlled(table, start, 0.9, spec, RngStream(seed).generator(), params10)
        assert trajectory.hit_target
        assert not trajectory.unresolved
        assert trajectory.steps <= 50 * 10
