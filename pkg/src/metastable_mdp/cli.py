import functools
import logging
import os
import sys
from typing import Optional

import click
import numpy as np
from pydantic import ValidationError

from .auxmdp import (build_geometric_chain, build_mdp, corner_adjacent, derive_kernel_geometric, kernel, parse_state,
                     policy_table)
from .config import configure_logging, resolve_seed
from .errors import MetastableMdpError, NotReducible
from .export import value_rows, write_kernel_csv, write_report, write_values
from .landscape import is_robust, stability_level
from .lattice import SiteConfig, hamiltonian
from .models import AuxAction, Dynamics, ExportKind, InterchangeMode, KernelVariant, OutputFormat, RewardKind, SolveMethod
from .schemas import RunConfig, SearchBounds, describe_validation_error
from .solver import greedy_labels, policy_evaluation, solve as solve_mdp
from .verify import OPT_IN_SUITES, SUITES, mc_policy, run_suite
from .worker import EpisodeWorker

logger = logging.getLogger(__name__)


def _choices(enum):
    return click.Choice([member.value for member in enum])


def model_options(func):
    """Options shared by every subcommand that builds the auxiliary MDP"""
    options = [
        click.option("--L", "L", default=10, show_default=True, help="Torus side length (>= 6)"),
        click.option("--lambda", "lam", default=0.9, show_default=True, help="Discount factor in (0,1)"),
        click.option("--reward", default=RewardKind.R1.value, show_default=True, type=_choices(RewardKind),
                     help="r1: reach the full torus; r2: energy cost of the actions"),
        click.option("--U", "U", default=1.0, show_default=True, help="Binding energy"),
        click.option("--delta", default=1.75, show_default=True, help="Activation energy, inside (1.5U, 2U)"),
        click.option("--beta", default=8.0, show_default=True, help="Inverse temperature"),
        click.option("--tol", default=1e-10, show_default=True, help="Value iteration tolerance"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _config(**values) -> RunConfig:
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise click.UsageError(describe_validation_error(e))


def _seed(seed: int) -> int:
    try:
        seed = resolve_seed(seed)
    except ValueError as e:
        raise click.UsageError(str(e))
    click.echo(f"Seed: {seed}", err=True)
    return seed


def _fail(message: str):
    click.echo(click.style(f"✗ {message}", fg="red"), err=True)
    sys.exit(1)


def _done(message: str, to_stderr: bool = False):
    click.echo(click.style(f"✓ {message}", fg="green"), err=to_stderr)


def handle_errors(action: str):
    """Turn library errors into a red status line and exit code 1"""
    def decorate(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except (click.ClickException, click.exceptions.Exit, SystemExit):
                raise
            except (MetastableMdpError, OSError, ValueError) as e:
                _fail(f"Error {action}: {e}")
        return wrapper
    return decorate


def _solved(config: RunConfig, method: SolveMethod = SolveMethod.POLICY_ITERATION,
            variant: KernelVariant = KernelVariant.FULL):
    mdp = build_mdp(config.L, config.lam, config.reward_spec(), variant)
    policy, v, report = solve_mdp(mdp, method, config.tol)
    return mdp, policy, v, report


def _meta(config: RunConfig, **extra):
    meta = {"L": config.L, "lambda": config.lam, "reward": config.reward.value, "U": config.U,
            "delta": config.delta, "beta": config.beta}
    meta.update(extra)
    return meta


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level")
def cli(verbose):
    """Controlled Kawasaki dynamics: solve, verify and simulate the auxiliary MDP"""
    configure_logging("DEBUG" if verbose else None)


@cli.command()
@model_options
@click.option("--method", default=SolveMethod.POLICY_ITERATION.value, show_default=True, type=_choices(SolveMethod),
              help="vi: value iteration, pi: policy iteration")
@click.option("--kernel", "variant", default=KernelVariant.FULL.value, show_default=True,
              type=_choices(KernelVariant), help="Kernel with or without corner slides")
@click.option("--format", "output_format", default=OutputFormat.TABLE.value, show_default=True,
              type=_choices(OutputFormat))
@click.option("--output", "output_path", default=None, help="Write to this file instead of stdout")
@click.option("--tie-tol", default=1e-9, show_default=True, help="Relative tolerance for greedy ties")
@handle_errors("solving")
def solve(L, lam, reward, U, delta, beta, tol, method, variant, output_format, output_path, tie_tol):
    """Solve the auxiliary MDP and print values with the greedy action sets"""
    config = _config(L=L, lam=lam, reward=reward, U=U, delta=delta, beta=beta, tol=tol,
                     output_format=output_format, output_path=output_path)
    mdp, _, v, report = _solved(config, SolveMethod(method), KernelVariant(variant))
    labels = greedy_labels(mdp, v, tie_tol)
    rows = value_rows(mdp.states, v, [labels[s] for s in mdp.states])
    with click.open_file(output_path or "-", "w") as stream:
        write_values(rows, stream, config.output_format,
                     _meta(config, method=report.method.value, kernel=variant, iterations=report.iterations))
    _done(f"Solved {mdp.n_states} states by {report.method.value} in {report.iterations} iterations "
          f"(residual {report.residual:.1e})", to_stderr=config.output_format != OutputFormat.TABLE)


@cli.command()
@model_options
@click.option("--suite", default="all", show_default=True,
              type=click.Choice(["all", "extended", *SUITES, *OPT_IN_SUITES]))
@click.option("--episodes", default=100_000, show_default=True,
              help="Monte Carlo episodes per start state (1e5 puts three standard errors near 1% of the value)")
@click.option("--seed", default=0, show_default=True, help="Base seed; METASTABLE_MDP_SEED overrides it")
@click.option("--threads", default=None, type=int, help="Worker processes (default: all cores)")
@click.option("--tie-tol", default=1e-9, show_default=True, help="Relative tolerance for greedy ties")
@click.option("--format", "output_format", default=OutputFormat.TABLE.value, show_default=True,
              type=click.Choice([OutputFormat.TABLE.value, OutputFormat.JSON.value]))
@click.option("--output", "output_path", default=None, help="Write the report to this file")
@handle_errors("verifying")
def verify(L, lam, reward, U, delta, beta, tol, suite, episodes, seed, threads, tie_tol, output_format, output_path):
    """Run a verification suite; exits 1 when any check fails"""
    config = _config(L=L, lam=lam, reward=reward, U=U, delta=delta, beta=beta, tol=tol, seed=seed,
                     threads=threads, output_format=output_format, output_path=output_path)
    seed = _seed(config.seed)
    report = run_suite(suite, config.L, config.lam, config.U, episodes=episodes, seed=seed, tie_tol=tie_tol,
                       tol=config.tol, threads=config.threads, params=config.model_params())
    with click.open_file(output_path or "-", "w") as stream:
        write_report(report, stream, config.output_format)
    counts = report.counts()
    if not report.all_passed:
        _fail(f"{counts['fail']} of {len(report.checks)} checks failed")
    _done(f"All {counts['pass']} checks passed ({counts['note']} notes)", to_stderr=True)


def _simulation_policy(config: RunConfig, tie_tol: float):
    mdp, _, v, _ = _solved(config)
    table = mc_policy(mdp, v, config.model_params(), tie_tol)
    exact = policy_evaluation(mdp, [mdp.actions[k].index(table[s]) for k, s in enumerate(mdp.states)])
    return mdp, table, exact


@cli.command()
@model_options
@click.option("--start", default="2,2", show_default=True, help="Start state i,j")
@click.option("--mode", default=InterchangeMode.ZERO_T.value, show_default=True, type=_choices(InterchangeMode))
@click.option("--dynamics", default=Dynamics.LATTICE.value, show_default=True, type=_choices(Dynamics),
              help="lattice: relax on the torus; kernel: sample the kernel rows")
@click.option("--episodes", default=1000, show_default=True)
@click.option("--max-epochs", default=None, type=int, help="Epoch cap per episode (default 50L)")
@click.option("--seed", default=0, show_default=True, help="Base seed; METASTABLE_MDP_SEED overrides it")
@click.option("--threads", default=None, type=int, help="Worker processes (default: all cores)")
@click.option("--trajectories", "trajectory_path", default=None, help="Append JSON-lines trajectories to this file")
@click.option("--tie-tol", default=1e-9, show_default=True, help="Relative tolerance for greedy ties")
@handle_errors("simulating")
def simulate(L, lam, reward, U, delta, beta, tol, start, mode, dynamics, episodes, max_epochs, seed, threads,
             trajectory_path, tie_tol):
    """Roll out the optimal policy and compare the mean return with the exact value"""
    config = _config(L=L, lam=lam, reward=reward, U=U, delta=delta, beta=beta, tol=tol, seed=seed,
                     threads=threads)
    start_state = parse_state(start)
    seed = _seed(config.seed)
    mdp, table, exact = _simulation_policy(config, tie_tol)
    expected = float(exact[mdp.index(start_state)])

    worker = EpisodeWorker(config.threads)
    batch = worker.run(table, start_state, config.lam, config.reward_spec(), config.model_params(), episodes, seed,
                       mode=InterchangeMode(mode), dynamics=Dynamics(dynamics), max_epochs=max_epochs,
                       trajectory_path=trajectory_path)
    click.echo(f"Start: {start_state}")
    click.echo(f"Episodes: {batch.episodes} ({batch.absorbed} absorbed)")
    click.echo(f"Mean return: {batch.mean:.12g} ± {batch.stderr:.3g}")
    click.echo(f"Exact value: {expected:.12g}")
    if Dynamics(dynamics) == Dynamics.LATTICE and InterchangeMode(mode) == InterchangeMode.ZERO_T:
        try:
            chain = build_geometric_chain([start_state], table, config.lam, config.reward_spec(),
                                          config.model_params())
            lattice_value = float(policy_evaluation(chain, np.zeros(chain.n_states, dtype=np.int64))[0])
            click.echo(f"Lattice-derived value: {lattice_value:.12g}")
        except NotReducible as e:
            click.echo(click.style(f"Lattice-derived value: undefined ({e})", fg="yellow"))
    if batch.unresolved:
        click.echo(click.style(f"Unresolved: {batch.unresolved} episodes relaxed outside the rectangle states",
                               fg="yellow"))
    capped = batch.episodes - batch.absorbed - batch.unresolved
    if capped:
        click.echo(click.style(f"{capped} episodes hit the epoch cap", fg="yellow"))
    _done("Simulation finished")


@cli.command("derive-kernel")
@click.option("--L", "L", default=10, show_default=True, help="Torus side length (>= 6)")
@click.option("--state", "state_text", required=True, help="State i,j")
@click.option("--action", required=True, type=click.Choice([a.value for a in AuxAction if a != AuxAction.STAY]))
@click.option("--U", "U", default=1.0, show_default=True)
@click.option("--delta", default=1.75, show_default=True)
@click.option("--beta", default=8.0, show_default=True)
@click.option("--kernel", "variant", default=KernelVariant.FULL.value, show_default=True,
              type=_choices(KernelVariant))
@handle_errors("deriving kernel row")
def derive_kernel(L, state_text, action, U, delta, beta, variant):
    """Rebuild one kernel row from the lattice and compare it with the closed-form row"""
    config = _config(L=L, U=U, delta=delta, beta=beta)
    s = parse_state(state_text)
    a = AuxAction(action)
    row = kernel(s, a, config.L, KernelVariant(variant))
    derived = derive_kernel_geometric(s, a, config.model_params())
    click.echo(f"Kernel:  {row}")
    click.echo(f"Lattice: {derived}")
    if not derived.complete:
        click.echo(click.style(f"Unresolved: {derived.unresolved} of {derived.bonds} bonds relax outside "
                               f"the rectangle states", fg="yellow"))
    if derived.matches(row):
        _done(f"Row {s} {a.value} matches exactly")
    elif corner_adjacent(s, a):
        click.echo(click.style(f"• Row {s} {a.value} differs next to a rectangle corner", fg="yellow"))
    else:
        _fail(f"Row {s} {a.value} does not match")


@cli.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--U", "U", default=1.0, show_default=True)
@click.option("--delta", default=1.75, show_default=True)
@click.option("--beta", default=8.0, show_default=True)
@click.option("--max-particles", default=14, show_default=True)
@click.option("--max-energy", default=3.0, show_default=True, help="Energy ceiling above the start")
@click.option("--max-states", default=10_000_000, show_default=True)
@handle_errors("computing stability level")
def stability(config_file, U, delta, beta, max_particles, max_energy, max_states):
    """Stability level of the configuration in CONFIG_FILE (text grid or JSON)"""
    try:
        bounds = SearchBounds(max_particles=max_particles, max_energy_above_start=max_energy,
                              max_states_explored=max_states)
        params = _config(U=U, delta=delta, beta=beta).model_params()
    except ValidationError as e:
        raise click.UsageError(describe_validation_error(e))
    with open(config_file) as handle:
        text = handle.read()
    if os.path.splitext(config_file)[1].lower() == ".json":
        cfg = SiteConfig.from_json(text, params)
    else:
        cfg = SiteConfig.from_text(text, params)

    click.echo(f"Particles: {cfg.n_particles}")
    click.echo(f"Energy: {hamiltonian(cfg).value(cfg.params):.12g}")
    barrier = stability_level(cfg, bounds)
    if barrier is None:
        click.echo(f"Stability level: above {max_energy:g} (unreached within bounds)")
    else:
        click.echo(f"Stability level: {barrier.height:.12g}")
        click.echo(f"Path length: {barrier.path_length}")
        click.echo(f"States explored: {barrier.states_explored}")
        click.echo("Bottleneck:")
        click.echo(barrier.bottleneck.to_text().rstrip())
    robust = is_robust(cfg, barrier, bounds)
    if robust is None:
        click.echo(click.style(f"Robust: undetermined (raise --max-energy to at least {2 * U:g})", fg="yellow"))
    else:
        click.echo(f"Robust: {'yes' if robust else 'no'}")


def _export_kernel(L: int, variant: KernelVariant, output_path: Optional[str]):
    with click.open_file(output_path or "-", "w") as stream:
        lines = write_kernel_csv(L, stream, variant)
    _done(f"Exported {lines} kernel entries for L={L}", to_stderr=True)


@cli.command()
@model_options
@click.option("--kind", required=True, type=_choices(ExportKind))
@click.option("--kernel", "variant", default=KernelVariant.FULL.value, show_default=True,
              type=_choices(KernelVariant))
@click.option("--format", "output_format", default=OutputFormat.CSV.value, show_default=True,
              type=click.Choice([OutputFormat.CSV.value, OutputFormat.JSON.value]))
@click.option("--output", "output_path", default=None, help="Output file (required for trajectories)")
@click.option("--start", default="2,2", show_default=True, help="Start state for trajectories")
@click.option("--episodes", default=100, show_default=True, help="Episodes for trajectories")
@click.option("--seed", default=0, show_default=True, help="Base seed; METASTABLE_MDP_SEED overrides it")
@click.option("--tie-tol", default=1e-9, show_default=True, help="Relative tolerance for greedy ties")
@handle_errors("exporting")
def export(L, lam, reward, U, delta, beta, tol, kind, variant, output_format, output_path, start, episodes, seed,
           tie_tol):
    """Write kernel rows, values, optimal policies or trajectories in a stable format"""
    config = _config(L=L, lam=lam, reward=reward, U=U, delta=delta, beta=beta, tol=tol, seed=seed,
                     output_format=output_format, output_path=output_path)
    kind = ExportKind(kind)
    variant = KernelVariant(variant)
    if kind == ExportKind.KERNEL:
        _export_kernel(config.L, variant, output_path)
        return

    if kind == ExportKind.TRAJECTORIES:
        if output_path is None:
            raise click.UsageError("--output is required for trajectory exports")
        seed = _seed(config.seed)
        start_state = parse_state(start)
        mdp, table, _ = _simulation_policy(config, tie_tol)
        # truncate first so that repeated exports are byte-identical
        open(output_path, "w").close()
        batch = EpisodeWorker(1).run(table, start_state, config.lam, config.reward_spec(), config.model_params(),
                                     episodes, seed, trajectory_path=output_path)
        _done(f"Exported {batch.episodes} trajectories to {output_path}", to_stderr=True)
        return

    mdp, policy, v, report = _solved(config, variant=variant)
    if kind == ExportKind.VALUES:
        labels = greedy_labels(mdp, v, tie_tol)
        rows = value_rows(mdp.states, v, [labels[s] for s in mdp.states])
        header = "actions"
    else:
        labels = greedy_labels(mdp, v, tie_tol)
        chosen = policy_table(mdp, policy)
        rows = value_rows(mdp.states, v, [[chosen[s]] + [a for a in labels[s] if a != chosen[s]]
                                          for s in mdp.states])
        header = "policy"
    with click.open_file(output_path or "-", "w") as stream:
        write_values(rows, stream, config.output_format, _meta(config, kernel=variant.value), action_header=header)
    _done(f"Exported {kind.value} for {mdp.n_states} states", to_stderr=True)


@cli.command("export-kernel")
@click.option("--L", "L", default=10, show_default=True, help="Torus side length (>= 6)")
@click.option("--kernel", "variant", default=KernelVariant.FULL.value, show_default=True,
              type=_choices(KernelVariant))
@click.option("--output", "output_path", default=None)
@handle_errors("exporting kernel")
def export_kernel(L, variant, output_path):
    """Write every kernel row as exact rationals"""
    config = _config(L=L)
    _export_kernel(config.L, KernelVariant(variant), output_path)


def run(argv=None) -> int:
    """Invoke the CLI and return its exit code instead of exiting"""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    return 0


if __name__ == "__main__":
    cli()
