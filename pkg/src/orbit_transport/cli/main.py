"""CLI entry point using Click + Rich."""

import functools
import logging
import math
import sys
import time
from pathlib import Path

import click
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from orbit_transport.errors import OrbitTransportError

console = Console()
logger = logging.getLogger(__name__)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    datefmt="%H:%M:%S",
)


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.10g}"


def handle_errors(func):
    """Input problems exit with code 2 and a red message."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except OrbitTransportError as e:
            console.print(f"[bold red]{type(e).__name__}:[/] {e}")
            sys.exit(2)

    return wrapper


def _save_run(report):
    from orbit_transport.db import session_scope
    from orbit_transport.models.verification_run import VerificationRun

    with session_scope() as session:
        session.add(VerificationRun(
            command=report.command,
            digest=report.digest,
            n_checks=len(report.checks),
            n_failed=report.n_failed,
            passed=report.passed,
            wall_time=report.wall_time,
            checks=report.payload()["checks"],
        ))


def _finish(report, started: float, out: str | None, save: bool, timing: bool, max_rows: int = 40):
    """Print, write and record a report, then exit 1 if any check failed."""
    from orbit_transport.services.files import write_json

    report.wall_time = time.perf_counter() - started

    if report.checks:
        failed = [c for c in report.checks if not c.passed]
        shown = failed[:max_rows] if failed else report.checks[:max_rows]
        table = Table(title=f"{len(report.checks)} checks", show_lines=False)
        table.add_column("Check", style="cyan")
        table.add_column("LHS", justify="right")
        table.add_column("RHS", justify="right")
        table.add_column("Diff", justify="right")
        table.add_column("Tol", justify="right", style="dim")
        table.add_column("Pass", justify="center")
        for c in shown:
            table.add_row(
                c.name, _fmt(c.lhs), _fmt(c.rhs), f"{c.diff:.2e}", f"{c.tolerance:.0e}",
                "[green]✓[/]" if c.passed else "[red]✗[/]",
            )
        console.print(table)

    status = "[bold green]PASS[/]" if report.passed else f"[bold red]FAIL ({report.n_failed} checks)[/]"
    console.print(Panel(f"{status}  |  {report.wall_time:.2f}s", title=report.command))

    if out:
        write_json(out, report.payload(timing=timing))
    if save:
        _save_run(report)
    if not report.passed:
        sys.exit(1)


def report_options(func):
    func = click.option("--timing", is_flag=True, help="Include wall time in the JSON report")(func)
    func = click.option("--no-save", "no_save", is_flag=True, help="Do not record the run in the history database")(func)
    func = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the JSON report here")(func)
    return func


@click.group()
def cli():
    """Optimal transport and curvature on finite spaces with symmetry."""
    pass


# ── Quotients ──────────────────────────────────────────────────

@cli.command("quotient")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.argument("group", type=click.Path(exists=True, dir_okay=False))
@click.option("--what", type=click.Choice(["space", "graph", "chain"]), default="space", show_default=True)
@click.option("--chain", "chain_file", type=click.Path(exists=True, dir_okay=False), help="Chain file (with --what chain)")
@click.option("--emit", type=click.Path(dir_okay=False), default=None, help="Write the quotient artifact here")
@report_options
@handle_errors
def quotient_cmd(source, group, what, chain_file, emit, out, no_save, timing):
    """Quotient a space, graph or Markov chain by a permutation group."""
    from orbit_transport.config import settings
    from orbit_transport.services import files
    from orbit_transport.services.core_spaces import build_group, check_metric_foliation, check_submetry, orbit_partition, quotient
    from orbit_transport.services.reports import Check, RunReport, digest_file

    started = time.perf_counter()
    generators = files.read_generators(group)
    report = RunReport(command=f"quotient:{what}", digests={"source": digest_file(source), "group": digest_file(group)})

    if what == "graph":
        from orbit_transport.services.graph_calculus import quotient_graph, verify_quotient_hop_metric

        G = files.read_graph(source)
        qg = quotient_graph(G, generators)
        payload = files.graph_payload(qg.graph)
        if G.n_components == 1:
            report.checks.append(verify_quotient_hop_metric(G, generators))
        report.results = {"orbits": [list(o) for o in qg.orbits], "group_order": len(qg.elements)}
    else:
        space = files.read_space(source)
        q = quotient(build_group(space, generators))
        report.results = {"orbits": [list(o) for o in q.orbits], "group_order": q.base.order}
        if what == "space":
            payload = files.space_payload(q.qspace)
            report.checks.append(Check.from_result("projection is a submetry", check_submetry(q.space, q.qspace, q.proj), 0.0))
            report.checks.append(Check.from_result("orbits form a metric foliation", check_metric_foliation(orbit_partition(q)), 0.0))
        else:
            from orbit_transport.services.ollivier import quotient_chain, quotient_chain_residual

            if not chain_file:
                raise click.UsageError("--what chain needs --chain")
            chain = files.read_chain(chain_file, space)
            report.digests["chain"] = digest_file(chain_file)
            payload = {"space": files.space_payload(q.qspace), **files.chain_payload(quotient_chain(chain, q))}
            report.checks.append(Check.equality("quotient rows representative-independent", quotient_chain_residual(chain, q), 0.0, settings.metric_tol * 10))

    console.print(f"[bold]{len(report.results['orbits'])}[/] orbits under a group of order {report.results['group_order']}")
    if emit:
        files.write_json(emit, payload)
    else:
        console.print_json(data=payload)
    _finish(report, started, out, not no_save, timing)


# ── Verification suites ────────────────────────────────────────

@cli.command("verify")
@click.option("--suite", type=click.Choice(["lift", "ollivier", "cd", "flow", "all"]), default="all", show_default=True)
@click.option("--space", "space_file", type=click.Path(exists=True, dir_okay=False), help="Space file (lift, ollivier)")
@click.option("--graph", "graph_file", type=click.Path(exists=True, dir_okay=False), help="Graph file (cd)")
@click.option("--chain", "chain_file", type=click.Path(exists=True, dir_okay=False), help="Reversible chain file (flow)")
@click.option("--group", "group_file", type=click.Path(exists=True, dir_okay=False), help="Group file for the supplied instance")
@click.option("--seed", type=int, default=None, help="Random seed")
@click.option("--trials", type=int, default=None, help="Random draws per suite")
@click.option("--grid", type=int, default=None, help="Time steps for flow solves")
@click.option("--K", "K", type=float, default=None, help="Pin the curvature parameter of the CD transfer checks")
@click.option("--N", "N", type=float, default=None, help="Pin the dimension parameter (CD transfer and quotient curvature)")
@click.option("--t", "t", type=float, default=None, help="Pin the interpolation time of the CD transfer checks")
@report_options
@handle_errors
def verify_cmd(suite, space_file, graph_file, chain_file, group_file, seed, trials, grid, K, N, t, out, no_save, timing):
    """Run randomized verification suites, on random instances or a supplied one."""
    from orbit_transport.config import settings
    from orbit_transport.services import files
    from orbit_transport.services.core_spaces import build_group
    from orbit_transport.services.reports import RunReport, digest_file
    from orbit_transport.services.suites import run_suite

    started = time.perf_counter()
    seed = settings.default_seed if seed is None else seed
    trials = settings.default_trials if trials is None else trials
    instance, digests = {"grid": grid, "N": N, "cd_params": (K, N, t)}, {}
    if any((space_file, graph_file, chain_file)) and not group_file:
        raise click.UsageError("a supplied instance needs --group")
    if group_file:
        generators = files.read_generators(group_file)
        instance["generators"] = generators
        digests["group"] = digest_file(group_file)
        if space_file:
            instance["action"] = build_group(files.read_space(space_file), generators)
            digests["space"] = digest_file(space_file)
        if graph_file:
            instance["graph"] = files.read_graph(graph_file)
            digests["graph"] = digest_file(graph_file)
        if chain_file:
            instance["chain"] = files.read_reversible_chain(chain_file)
            digests["chain"] = digest_file(chain_file)

    console.print(f"[bold]Running {suite} suite[/] (seed {seed}, {trials} trials)...")
    checks = run_suite(suite, seed, trials, **instance)
    report = RunReport(command=f"verify:{suite}", digests=digests, checks=checks, results={"seed": seed, "trials": trials})
    _finish(report, started, out, not no_save, timing)


# ── Curvature ──────────────────────────────────────────────────

@cli.command("curvature")
@click.argument("graph", type=click.Path(exists=True, dir_okay=False))
@click.option("--N", "N", type=float, default=math.inf, show_default=True, help="Dimension parameter (inf allowed)")
@click.option("--vertices", default="all", show_default=True, help="'all' or a comma-separated list of indices")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Write vertex,N,K rows here")
@report_options
@handle_errors
def curvature_cmd(graph, N, vertices, csv_path, out, no_save, timing):
    """Bakry-Émery CD(K, N) curvature per vertex."""
    import pandas as pd

    from orbit_transport.services import files
    from orbit_transport.services.graph_calculus import cd_curvature_profile
    from orbit_transport.services.reports import Check, RunReport, digest_file

    started = time.perf_counter()
    G = files.read_graph(graph)
    if vertices == "all":
        chosen = list(range(G.size))
    else:
        try:
            chosen = [int(v) for v in vertices.split(",")]
        except ValueError:
            raise click.BadParameter(f"cannot parse vertex list {vertices!r}")
        if any(not 0 <= v < G.size for v in chosen):
            raise click.BadParameter(f"vertex list {vertices!r} leaves 0..{G.size - 1}")

    values = cd_curvature_profile(G, N, chosen)
    ceiling = cd_curvature_profile(G, math.inf, chosen)
    df = pd.DataFrame({"vertex": [G.labels[v] for v in chosen], "N": N, "K": values})

    table = Table(title=f"CD curvature, N = {_fmt(N)}")
    table.add_column("Vertex", style="cyan")
    table.add_column("K", justify="right")
    for label, k in zip(df["vertex"], df["K"]):
        table.add_row(str(label), _fmt(k))
    console.print(table)

    if csv_path:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(csv_path, index=False)
        console.print(f"Saved curvature table to {csv_path}")

    checks = [
        Check.lower_bound(f"K({G.labels[v]}, inf) >= K({G.labels[v]}, N)", hi, lo, 1e-9)
        for v, lo, hi in zip(chosen, values, ceiling)
    ]
    report = RunReport(
        command="curvature",
        digests={"graph": digest_file(graph)},
        checks=checks,
        results={"N": N, "vertices": [G.labels[v] for v in chosen], "K": values, "min": float(values.min()) if len(values) else math.inf},
    )
    _finish(report, started, out, not no_save, timing)


# ── Transport ──────────────────────────────────────────────────

@cli.command("wasserstein")
@click.argument("space", type=click.Path(exists=True, dir_okay=False))
@click.argument("mu0", type=click.Path(exists=True, dir_okay=False))
@click.argument("mu1", type=click.Path(exists=True, dir_okay=False))
@click.option("--p", "p", type=float, default=None, help="Cost exponent (default from settings)")
@report_options
@handle_errors
def wasserstein_cmd(space, mu0, mu1, p, out, no_save, timing):
    """Exact W_p between two measures, with coupling and dual potentials."""
    from orbit_transport.config import settings
    from orbit_transport.errors import BudgetExceeded
    from orbit_transport.services import files
    from orbit_transport.services.reports import Check, RunReport, digest_file
    from orbit_transport.services.transport import check_cyclical_monotonicity, check_potentials, wasserstein

    started = time.perf_counter()
    p = settings.default_p if p is None else p
    X = files.read_space(space)
    m0, m1 = files.read_measure(mu0, X), files.read_measure(mu1, X)
    result = wasserstein(m0, m1, p)

    primal = result.coupling.cost()
    dual = result.potentials.objective(m0, m1)
    support = result.coupling.support
    checks = [
        Check.equality("strong duality", primal, dual, settings.solver_tol, relative=True),
        Check.lower_bound("potentials admissible", -check_potentials(X, result.potentials, p), 0.0, settings.solver_tol),
    ]
    try:
        checks.append(Check.from_result("support cyclically monotone", check_cyclical_monotonicity(X, support, p), settings.solver_tol))
    except BudgetExceeded as e:
        logger.warning(f"Skipped cyclical monotonicity: {e}")

    console.print(Panel(f"W_{p:g} = [bold]{result.value:.12g}[/]", title="Wasserstein"))
    report = RunReport(
        command="wasserstein",
        digests={"space": digest_file(space), "mu0": digest_file(mu0), "mu1": digest_file(mu1)},
        checks=checks,
        results={
            "p": p,
            "value": result.value,
            "coupling": files.coupling_payload(result.coupling),
            "phi": result.potentials.phi,
            "psi": result.potentials.psi,
        },
    )
    _finish(report, started, out, not no_save, timing)


@cli.command("ollivier")
@click.argument("space", type=click.Path(exists=True, dir_okay=False))
@click.argument("chain", type=click.Path(exists=True, dir_okay=False))
@click.option("--group", "group_file", type=click.Path(exists=True, dir_okay=False), help="Check preservation under this quotient")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Write pairwise curvature rows here")
@report_options
@handle_errors
def ollivier_cmd(space, chain, group_file, csv_path, out, no_save, timing):
    """Ollivier coarse Ricci curvature of a Markov chain."""
    import numpy as np
    import pandas as pd

    from orbit_transport.services import files
    from orbit_transport.services.core_spaces import build_group, quotient
    from orbit_transport.services.ollivier import pairwise_curvature, verify_ollivier_preservation
    from orbit_transport.services.reports import RunReport, digest_file

    started = time.perf_counter()
    X = files.read_space(space)
    mc = files.read_chain(chain, X)
    table = pairwise_curvature(mc)
    k = float(np.nanmin(table)) if X.size > 1 else math.inf
    console.print(Panel(f"min κ = [bold]{_fmt(k)}[/]", title="Ollivier curvature"))

    if csv_path:
        xs, ys = np.nonzero(~np.isnan(table))
        df = pd.DataFrame({"x": [X.labels[i] for i in xs], "y": [X.labels[j] for j in ys], "kappa": table[xs, ys]})
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(csv_path, index=False)
        console.print(f"Saved pairwise curvature to {csv_path}")

    report = RunReport(command="ollivier", digests={"space": digest_file(space), "chain": digest_file(chain)}, results={"min_kappa": k})
    if group_file:
        q = quotient(build_group(X, files.read_generators(group_file)))
        report.digests["group"] = digest_file(group_file)
        report.checks += verify_ollivier_preservation(mc, q)
    _finish(report, started, out, not no_save, timing)


@cli.command("flow")
@click.argument("chain", type=click.Path(exists=True, dir_okay=False))
@click.argument("rho0", type=click.Path(exists=True, dir_okay=False))
@click.argument("rho1", type=click.Path(exists=True, dir_okay=False))
@click.option("--group", "group_file", type=click.Path(exists=True, dir_okay=False), help="Densities live on the quotient; check the isometry")
@click.option("--grid", type=int, default=None, help="Time steps (default from settings)")
@click.option("--tol", type=float, default=None, help="Constraint residual tolerance")
@click.option("--refine/--no-refine", default=True, show_default=True, help="Also solve at half and double the grid")
@report_options
@handle_errors
def flow_cmd(chain, rho0, rho1, group_file, grid, tol, refine, out, no_save, timing):
    """Discrete transport distance between two densities of a reversible chain."""
    from orbit_transport.config import settings
    from orbit_transport.services import files
    from orbit_transport.services.discrete_flow import entropy_convexity_diagnostic, verify_w_isometry, w_distance
    from orbit_transport.services.reports import Check, RunReport, digest_file

    started = time.perf_counter()
    grid = settings.flow_grid if grid is None else grid
    tol = settings.flow_tol if tol is None else tol
    mc = files.read_reversible_chain(chain)
    r0, r1 = files.read_density(rho0), files.read_density(rho1)
    digests = {"chain": digest_file(chain), "rho0": digest_file(rho0), "rho1": digest_file(rho1)}
    report = RunReport(command="flow", digests=digests)

    if group_file:
        report.digests["group"] = digest_file(group_file)
        report.checks += verify_w_isometry(mc, files.read_generators(group_file), r0, r1, grid=grid)
        console.print(f"Isometry: quotient {report.checks[0].lhs:.10g}, base {report.checks[0].rhs:.10g}")
    else:
        result = w_distance(mc, r0, r1, grid=grid, tol=tol)
        report.results = {
            "value": result.value,
            "grid": grid,
            "residual": result.residual,
            "mollified": result.mollified,
            "entropy_convexity_K": entropy_convexity_diagnostic(mc, result.path, result.value),
        }
        report.checks.append(Check.equality("continuity residual", result.residual, 0.0, tol))
        console.print(Panel(f"𝒲 = [bold]{result.value:.10g}[/] (grid {grid})", title="Discrete transport"))
        if refine and grid >= 2:
            series = [(g, w_distance(mc, r0, r1, grid=g, tol=tol).value) for g in (grid // 2, grid, 2 * grid)]
            report.results["refinement"] = series
            for (g_lo, v_lo), (g_hi, v_hi) in zip(series, series[1:]):
                report.checks.append(Check.lower_bound(f"refinement {g_lo} -> {g_hi} does not increase", v_lo, v_hi, 1e-6))
    _finish(report, started, out, not no_save, timing)


# ── History and examples ───────────────────────────────────────

@cli.command("history")
@click.option("--limit", default=20, show_default=True, help="Number of runs to show")
def history_cmd(limit):
    """List recorded verification runs."""
    from orbit_transport.db import session_scope
    from orbit_transport.models.verification_run import VerificationRun

    with session_scope() as session:
        runs = session.query(VerificationRun).order_by(VerificationRun.id.desc()).limit(limit).all()
        if not runs:
            console.print("[yellow]No runs recorded yet.[/]")
            return
        table = Table(title=f"Last {len(runs)} runs")
        table.add_column("#", style="dim")
        table.add_column("When")
        table.add_column("Command", style="cyan")
        table.add_column("Checks", justify="right")
        table.add_column("Failed", justify="right")
        table.add_column("Time", justify="right")
        table.add_column("Result")
        for r in runs:
            table.add_row(
                str(r.id),
                r.created_at.strftime("%Y-%m-%d %H:%M:%S"),
                r.command,
                str(r.n_checks),
                str(r.n_failed),
                f"{r.wall_time:.2f}s" if r.wall_time is not None else "-",
                "[green]pass[/]" if r.passed else "[red]fail[/]",
            )
        console.print(table)


EXAMPLES = ("cycle4", "cycle6", "cube3", "k2", "lazy-walk")


@cli.command("example")
@click.argument("name", type=click.Choice(EXAMPLES))
@click.option("--dir", "directory", type=click.Path(file_okay=False), default=".", show_default=True)
@handle_errors
def example_cmd(name, directory):
    """Write a built-in instance as input files."""
    import numpy as np

    from orbit_transport.services import files, instances
    from orbit_transport.services.graph_calculus import graph_metric_space

    root = Path(directory)
    written = []

    def emit(stem: str, payload: dict):
        path = root / f"{name}.{stem}.json"
        files.write_json(path, payload)
        written.append(path)

    if name in ("cycle4", "cycle6"):
        n = int(name[-1])
        emit("space", files.space_payload(instances.cycle_space(n)))
        emit("group", files.group_payload([instances.rotation(n, n // 2)]))
        emit("graph", files.graph_payload(instances.cycle_graph(n)))
        emit("chain", files.chain_payload(instances.lazy_cycle_chain(n)))
    elif name == "cube3":
        G = instances.hypercube_graph(3)
        emit("space", files.space_payload(graph_metric_space(G)))
        emit("graph", files.graph_payload(G))
        emit("group", files.group_payload(instances.coordinate_swaps(3)))
    elif name == "k2":
        emit("graph", files.graph_payload(instances.complete_graph(2)))
        emit("group", files.group_payload([(1, 0)]))
        emit("chain", files.chain_payload(instances.two_state_chain()))
        emit("rho0", {"rho": [1.1, 0.9]})
        emit("rho1", {"rho": [0.9, 1.1]})
    else:
        space = instances.cycle_space(4)
        emit("space", files.space_payload(space))
        emit("group", files.group_payload([instances.rotation(4, 2)]))
        emit("chain", {"kernel": instances.lazy_cycle_chain(4).kernel.tolist()})
        emit("rho0", {"rho": np.array([1.5, 0.5, 1.5, 0.5]).tolist()})
        emit("rho1", {"rho": np.array([0.5, 1.5, 0.5, 1.5]).tolist()})

    for path in written:
        console.print(f"  [green]wrote[/] {path}")


if __name__ == "__main__":
    cli()
