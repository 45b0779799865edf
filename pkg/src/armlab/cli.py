"""Command-line front end: exponent tables, SLE/FK arm-probability runs,
trace and configuration dumps.

Every run is fully determined by (command options, seed); each output row
embeds a config hash, the package version, and the provenance fields
needed to reproduce it. Exit codes: 0 success, 2 usage, 3 numeric/domain,
4 I/O.
"""

from __future__ import annotations

import hashlib
import json
import math
import os

import click
import numpy as np

from . import __version__
from . import rng as rng_mod
from .arm_events import (
    BoundaryEventSpec,
    BoundaryFamily,
    InteriorEventSpec,
    InteriorFamily,
    estimate_event_probability,
)
from .errors import ArmlabError, DomainError, FitError, GeometryError
from .estimation import ProbabilitySeries, compare_to_theory, loglog_fit
from .exponents import (
    ExponentFamily,
    boundary_exponent,
    exponent_table,
    interior_exponent,
    pattern_word,
)
from .fk import (
    ArmPattern,
    BoundaryCondition,
    Region,
    estimate_arm_probability,
    sample_sw,
    sample_glauber,
)
from .loewner import HullMap, trace
from .sle import simulate_plain

EXIT_DOMAIN = 3
EXIT_IO = 4

_BOUNDARY_CHOICES = {
    "alpha-odd": BoundaryFamily.ALPHA_ODD,
    "beta-even": BoundaryFamily.BETA_EVEN,
    "gamma-odd": BoundaryFamily.GAMMA_ODD,
    "alpha-even": BoundaryFamily.ALPHA_EVEN,
    "beta-odd": BoundaryFamily.BETA_ODD,
    "gamma-even": BoundaryFamily.GAMMA_EVEN,
}
_INTERIOR_CHOICES = {
    "int-alpha": InteriorFamily.ALPHA,
    "int-beta": InteriorFamily.BETA,
    "int-gamma": InteriorFamily.GAMMA,
}
_FAMILY_TO_EXPONENT = {
    BoundaryFamily.ALPHA_ODD: ExponentFamily.BOUNDARY_ALPHA_ODD,
    BoundaryFamily.BETA_EVEN: ExponentFamily.BOUNDARY_BETA_EVEN,
    BoundaryFamily.GAMMA_ODD: ExponentFamily.BOUNDARY_GAMMA_ODD,
    BoundaryFamily.ALPHA_EVEN: ExponentFamily.BOUNDARY_ALPHA_EVEN,
    BoundaryFamily.BETA_ODD: ExponentFamily.BOUNDARY_BETA_ODD,
    BoundaryFamily.GAMMA_EVEN: ExponentFamily.BOUNDARY_GAMMA_EVEN,
    InteriorFamily.ALPHA: ExponentFamily.INTERIOR_ALPHA,
    InteriorFamily.BETA: ExponentFamily.INTERIOR_BETA,
    InteriorFamily.GAMMA: ExponentFamily.INTERIOR_GAMMA,
}


def _config_hash(d: dict) -> str:
    payload = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _emit(rows, out_path):
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if out_path:
        try:
            with open(out_path, "w") as f:
                f.write(text)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            raise SystemExit(EXIT_IO)
    else:
        click.echo(text, nl=False)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ARMLAB_WORKERS", "1")))
    except ValueError:
        return 1


@click.group()
@click.version_option(__version__)
def main():
    """Arm-exponent laboratory: formulas, simulations, estimates."""


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------

@main.command("exponents")
@click.option("--kappa", type=float, default=None, help="kappa in (4, 8)")
@click.option("--q", type=float, default=None, help="cluster weight in (0, 4)")
@click.option("--jmax", type=int, default=3, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]),
              default="table", show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_exponents(kappa, q, jmax, fmt, out):
    """Closed-form exponent table for every family at one kappa (or q)."""
    if (kappa is None) == (q is None):
        raise click.UsageError("give exactly one of --kappa or --q")
    if kappa is not None and not 4.0 < kappa < 8.0:
        raise click.UsageError(f"--kappa must lie in (4, 8), got {kappa}")
    if q is not None and not 0.0 < q < 4.0:
        raise click.UsageError(f"--q must lie in (0, 4), got {q}")
    if jmax < 1:
        raise click.UsageError("--jmax must be >= 1")
    try:
        rows = exponent_table(kappa=kappa, q=q, j_max=jmax)
    except DomainError as exc:
        click.echo(f"domain error: {exc}", err=True)
        raise SystemExit(EXIT_DOMAIN)
    if fmt == "json":
        payload = [dict(family=r.family, j=r.j, arms=r.arms, pattern=r.pattern,
                        bc=r.bc, value=r.value) for r in rows]
        _emit(payload, out)
        return
    lines = ["family,j,pattern,bc,value"]
    for r in rows:
        lines.append(f"{r.family},{r.j},{r.pattern},{r.bc},{r.value:.12g}")
    text = "\n".join(lines) + "\n"
    if fmt == "table":
        widths = [30, 3, 10, 4, 18]
        hdr = ["family", "j", "pattern", "bc", "value"]
        text = "".join(h.ljust(w) for h, w in zip(hdr, widths)) + "\n"
        for r in rows:
            cells = [r.family, str(r.j), r.pattern, r.bc, f"{r.value:.12g}"]
            text += "".join(c.ljust(w) for c, w in zip(cells, widths)) + "\n"
    if out:
        try:
            with open(out, "w") as f:
                f.write(text)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            raise SystemExit(EXIT_IO)
    else:
        click.echo(text, nl=False)


# ---------------------------------------------------------------------------
# sle-armprob
# ---------------------------------------------------------------------------

@main.command("sle-armprob")
@click.option("--kappa", type=float, required=True)
@click.option("--family", type=click.Choice(sorted(list(_BOUNDARY_CHOICES)
                                                   + list(_INTERIOR_CHOICES))),
              required=True)
@click.option("--j", type=int, default=1, show_default=True)
@click.option("--eps", "eps_list", type=str, required=True,
              help="comma-separated epsilon grid, e.g. 0.25,0.125,0.0625")
@click.option("--x", type=float, default=1.0, show_default=True)
@click.option("--y", type=float, default=-1.0, show_default=True)
@click.option("--u", type=float, default=None)
@click.option("--z-angle", type=float, default=90.0, show_default=True,
              help="interior point angle on the unit circle, degrees")
@click.option("--replicas", type=int, default=1000, show_default=True)
@click.option("--dt", type=float, default=None,
              help="uniform capacity step; default adaptive")
@click.option("--horizon", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--filter-delta", type=float, default=0.1, show_default=True)
@click.option("--conf-radius", type=float, default=4.0, show_default=True)
@click.option("--hit-factor", type=float, default=1.0, show_default=True)
@click.option("--detector", type=click.Choice(["tracker", "trace"]),
              default="tracker", show_default=True)
@click.option("--block-size", type=int, default=4096, show_default=True)
@click.option("--workers", type=int, default=None,
              help="default from ARMLAB_WORKERS or 1")
@click.option("--fit/--no-fit", default=False)
@click.option("--filtered/--unfiltered", "fit_filtered", default=True,
              help="which probability series the fit uses")
@click.option("--out", type=click.Path(), default=None)
def cmd_sle_armprob(kappa, family, j, eps_list, x, y, u, z_angle, replicas,
                    dt, horizon, seed, filter_delta, conf_radius, hit_factor,
                    detector, block_size, workers, fit, fit_filtered, out):
    """Monte Carlo arm-event probabilities on an epsilon grid."""
    if not 4.0 < kappa < 8.0:
        raise click.UsageError(f"--kappa must lie in (4, 8), got {kappa}")
    try:
        eps_values = [float(s) for s in eps_list.split(",") if s.strip()]
    except ValueError:
        raise click.UsageError(f"cannot parse --eps {eps_list!r}")
    if not eps_values:
        raise click.UsageError("empty --eps grid")
    if j < 1:
        raise click.UsageError("--j must be >= 1")
    workers = workers if workers is not None else _default_workers()

    interior = family in _INTERIOR_CHOICES
    rows = []
    estimates = []
    for eps in eps_values:
        try:
            if interior:
                z = complex(math.cos(math.radians(z_angle)),
                            math.sin(math.radians(z_angle)))
                spec = InteriorEventSpec(_INTERIOR_CHOICES[family], j, eps, z, y)
            else:
                spec = BoundaryEventSpec(_BOUNDARY_CHOICES[family], j, eps, x,
                                         y, u)
        except GeometryError as exc:
            raise click.UsageError(str(exc))
        try:
            est = estimate_event_probability(
                spec, kappa, replicas, dt=dt, horizon=horizon, seed=seed,
                filter_delta=filter_delta, conf_radius=conf_radius,
                hit_factor=hit_factor, detector=detector,
                block_size=block_size, workers=workers)
        except ArmlabError as exc:
            click.echo(f"estimation error: {exc}", err=True)
            raise SystemExit(EXIT_DOMAIN)
        estimates.append(est)
        meta = {
            "schema": "armlab-sle-armprob/1",
            "version": __version__,
            "family": family, "j": j, "x": x, "y": y, "u": u,
            "z_angle": z_angle if interior else None,
            "workers": workers,
        }
        row = est.to_json_dict(**meta)
        row["config_hash"] = _config_hash(
            {k: v for k, v in row.items() if k not in ("occurred", "p_hat",
                                                       "se", "total")})
        rows.append(row)

    if fit:
        if fit_filtered:
            series = ProbabilitySeries(
                [e.epsilon for e in estimates],
                [e.f_occurred for e in estimates],
                [max(e.f_determinate, 1) for e in estimates])
        else:
            series = ProbabilitySeries(
                [e.epsilon for e in estimates],
                [e.occurred for e in estimates],
                [max(e.determinate, 1) for e in estimates])
        try:
            f = loglog_fit(series)
        except FitError as exc:
            click.echo(f"fit error: {exc}", err=True)
            raise SystemExit(EXIT_DOMAIN)
        fam_enum = _FAMILY_TO_EXPONENT[_INTERIOR_CHOICES[family] if interior
                                       else _BOUNDARY_CHOICES[family]]
        if interior:
            theory = interior_exponent(fam_enum, j, kappa)
        else:
            theory = boundary_exponent(fam_enum, j, kappa)
        cmp_ = compare_to_theory(f, theory)
        rows.append(f.to_json_dict(
            schema="armlab-fit/1", version=__version__, kind="epsilon",
            exponent_hat=f.slope, theory=theory, z=cmp_.z,
            verdict=cmp_.verdict, filtered=fit_filtered))
    _emit(rows, out)


# ---------------------------------------------------------------------------
# fk-armprob
# ---------------------------------------------------------------------------

@main.command("fk-armprob")
@click.option("--q", type=float, required=True)
@click.option("--pattern", type=str, required=True, help="0/1 word, e.g. 01")
@click.option("--n", type=int, default=4, show_default=True)
@click.option("--N", "n_outer", type=str, required=True,
              help="comma-separated outer radii, e.g. 8,16,32")
@click.option("--bc", type=click.Choice(["11", "01", "free"]), default="11",
              show_default=True)
@click.option("--kind", type=click.Choice(["semi", "full"]), default="semi",
              show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--burn-in", type=int, default=1000, show_default=True)
@click.option("--gap", type=int, default=10, show_default=True)
@click.option("--margin", type=int, default=2, show_default=True,
              help="region side m = margin * N")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--fit/--no-fit", default=False)
@click.option("--out", type=click.Path(), default=None)
def cmd_fk_armprob(q, pattern, n, n_outer, bc, kind, samples, burn_in, gap,
                   margin, seed, fit, out):
    """Lattice arm-event probabilities for a grid of outer radii."""
    if q < 1.0:
        raise click.UsageError(f"--q must be >= 1, got {q}")
    try:
        pat = ArmPattern(pattern)
    except DomainError as exc:
        raise click.UsageError(str(exc))
    if n < 2 * len(pat):
        raise click.UsageError(
            f"need n >= 2j: n={n}, pattern length {len(pat)}")
    try:
        N_values = [int(s) for s in n_outer.split(",") if s.strip()]
    except ValueError:
        raise click.UsageError(f"cannot parse --N {n_outer!r}")
    if not N_values:
        raise click.UsageError("empty --N grid")
    try:
        points = estimate_arm_probability(
            q, pat, n, N_values, bc_label=bc, semi=(kind == "semi"),
            samples=samples, burn_in=burn_in, gap=gap, seed=seed,
            margin=margin)
    except GeometryError as exc:
        raise click.UsageError(str(exc))
    except ArmlabError as exc:
        click.echo(f"domain error: {exc}", err=True)
        raise SystemExit(EXIT_DOMAIN)
    rows = []
    for pt in points:
        row = pt.to_json_dict(schema="armlab-fk-armprob/1", version=__version__)
        row["config_hash"] = _config_hash(
            {k: v for k, v in row.items() if k not in ("occurred", "p_hat",
                                                       "se", "total")})
        rows.append(row)
    if fit:
        series = ProbabilitySeries([p.N for p in points],
                                   [p.occurred for p in points],
                                   [p.samples for p in points])
        try:
            f = loglog_fit(series)
        except FitError as exc:
            click.echo(f"fit error: {exc}", err=True)
            raise SystemExit(EXIT_DOMAIN)
        theory = _lattice_theory(pat, bc, kind == "semi", q)
        extra = {}
        if theory is not None:
            cmp_ = compare_to_theory(f, -theory)
            extra = {"theory": theory, "z": cmp_.z, "verdict": cmp_.verdict}
        rows.append(f.to_json_dict(
            schema="armlab-fit/1", version=__version__, kind="N",
            exponent_hat=-f.slope, **extra))
    _emit(rows, out)


def _lattice_theory(pat: ArmPattern, bc: str, semi: bool, q: float):
    """Theorem exponent matching (pattern, bc, geometry) when one exists."""
    from .exponents import kappa_from_q

    kappa = kappa_from_q(q)
    if kappa <= 4.0 or kappa >= 8.0:
        return None
    if semi:
        fams = [f for f in _FAMILY_TO_EXPONENT if isinstance(f, BoundaryFamily)]
    else:
        fams = [f for f in _FAMILY_TO_EXPONENT if isinstance(f, InteriorFamily)]
    for fam in fams:
        ef = _FAMILY_TO_EXPONENT[fam]
        from .exponents import BC_LABEL

        if semi and BC_LABEL[ef] != bc:
            continue
        for j in range(1, 5):
            if pattern_word(ef, j) == pat.word:
                if semi:
                    return boundary_exponent(ef, j, kappa)
                return interior_exponent(ef, j, kappa)
    return None


# ---------------------------------------------------------------------------
# sle-trace / fk-sample
# ---------------------------------------------------------------------------

@main.command("sle-trace")
@click.option("--kappa", type=float, default=6.0, show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--T", "horizon", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--points", type=int, default=512, show_default=True)
@click.option("--zero-driving", is_flag=True, default=False)
@click.option("--rho-left", type=float, default=0.0, show_default=True)
@click.option("--rho-right", type=float, default=0.0, show_default=True)
@click.option("--x-left", type=float, default=0.0, show_default=True)
@click.option("--x-right", type=float, default=0.0, show_default=True)
@click.option("--driving-out", type=click.Path(), default=None,
              help="also dump the driving/force-point paths as CSV")
@click.option("--out", type=click.Path(), default=None)
def cmd_sle_trace(kappa, dt, horizon, seed, points, zero_driving, rho_left,
                  rho_right, x_left, x_right, driving_out, out):
    """Dump a traced curve as CSV (t, Re, Im).

    With --rho-left/--rho-right the driving follows the force-point
    process; --driving-out writes (t, W, VL, VR, Re VI, Im VI).
    """
    if kappa < 0:
        raise click.UsageError("--kappa must be >= 0")
    try:
        from .loewner import DrivingPath
        from .sle import SleParams, simulate_with_force_points

        if zero_driving:
            driving = DrivingPath.zero(dt, horizon)
            run = None
        elif rho_left or rho_right:
            params = SleParams(kappa=kappa, rho_left=rho_left,
                               rho_right=rho_right, x_left=x_left,
                               x_right=x_right)
            run = simulate_with_force_points(params, dt, horizon,
                                             rng_mod.stream(seed, 0))
            driving = run.driving
        else:
            driving = simulate_plain(kappa, dt, horizon,
                                     rng_mod.stream(seed, 0))
            run = None
        if driving_out:
            from .sle import ForcePointRun

            dump = run if run is not None else ForcePointRun(driving=driving)
            try:
                with open(driving_out, "w") as f:
                    f.write(dump.to_csv())
            except OSError as exc:
                click.echo(f"I/O error: {exc}", err=True)
                raise SystemExit(EXIT_IO)
        hull = HullMap.from_driving(driving)
        n = len(hull.dts)
        ks = np.unique(np.linspace(1, n, min(points, n)).astype(int))
        ts, pts = trace(hull, ks)
    except ArmlabError as exc:
        click.echo(f"domain error: {exc}", err=True)
        raise SystemExit(EXIT_DOMAIN)
    lines = ["t,re,im"]
    for t, p in zip(ts, pts):
        lines.append(f"{t:.12g},{p.real:.12g},{p.imag:.12g}")
    text = "\n".join(lines) + "\n"
    if out:
        try:
            with open(out, "w") as f:
                f.write(text)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            raise SystemExit(EXIT_IO)
    else:
        click.echo(text, nl=False)


@main.command("fk-sample")
@click.option("--q", type=float, default=2.0, show_default=True)
@click.option("--m", type=int, default=8, show_default=True)
@click.option("--kind", type=click.Choice(["box", "semi"]), default="box",
              show_default=True)
@click.option("--bc", type=click.Choice(["11", "01", "free"]), default="free",
              show_default=True)
@click.option("--sweeps", type=int, default=100, show_default=True)
@click.option("--p", "p_edge", type=float, default=None,
              help="override the critical edge weight")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_fk_sample(q, m, kind, bc, sweeps, p_edge, seed, out):
    """Sample one configuration and dump the versioned snapshot (JSON)."""
    if q < 1.0:
        raise click.UsageError(f"--q must be >= 1, got {q}")
    try:
        region = Region.box(m) if kind == "box" else Region.semi_box(m)
        if bc == "11":
            bcond = BoundaryCondition.wired(region)
        elif bc == "01":
            bcond = BoundaryCondition.mixed_01(region)
        else:
            bcond = BoundaryCondition.free()
        gen = rng_mod.stream(seed, 0)
        if abs(q - 2.0) < 1e-12:
            config = sample_sw(region, bcond, sweeps, gen, p=p_edge)
        else:
            config = sample_glauber(region, bcond, q, sweeps, gen, p=p_edge)
    except ArmlabError as exc:
        click.echo(f"domain error: {exc}", err=True)
        raise SystemExit(EXIT_DOMAIN)
    d = config.to_json_dict()
    d["version"] = __version__
    d["seed"] = seed
    d["sweeps"] = sweeps
    d["config_hash"] = _config_hash(d)
    text = json.dumps(d, sort_keys=True) + "\n"
    if out:
        try:
            with open(out, "w") as f:
                f.write(text)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            raise SystemExit(EXIT_IO)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
