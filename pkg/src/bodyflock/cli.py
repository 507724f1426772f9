"""Command-line front end.

One binary with subcommands ``coeffs``, ``sample``, ``ibm``, ``pde``, and
``validate``.  Runs are described by a sectioned key=value config file; every
key can be overridden with ``--set section.key=value`` and the common flags
(``--seed``, ``--out``, ``--threads``, ``--format``) are shortcuts for the
corresponding keys.  Flags win over the file.

Exit codes: 0 success, 2 configuration error, 3 validation failure,
4 numerical failure at runtime.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import equilibria as eq
from . import gci, ibm, io, parallel, pde, plots
from .config import RunConfig
from .errors import BodyflockError, ConfigError, ValidationFailure
from .validate import report_payload, run_checks

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyflock",
        description="Body-attitude alignment toolkit: transport coefficients, "
        "equilibrium sampling, particle runs, macroscopic runs, validation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("coeffs", "tabulate transport coefficients over a noise grid"),
        ("sample", "draw equilibrium attitudes and histogram the angle"),
        ("ibm", "run the agent-based simulator"),
        ("pde", "integrate the macroscopic equations"),
        ("validate", "run the cross-level validation suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="sectioned key=value run file")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", type=Path, help="override run.out")
        p.add_argument("--threads", type=int, help="worker count inside operations")
        p.add_argument("--format", choices=("csv", "json"), help="tabular output format")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
        p.add_argument(
            "--set",
            metavar="SECTION.KEY=VALUE",
            action="append",
            default=[],
            help="override any config key (repeatable)",
        )
        if name == "validate":
            p.add_argument("--quick", action="store_true", help="smoke-test scale")
            p.add_argument("--checks", help="comma-separated check names")
            p.add_argument("--psi0-cache", type=Path, help="profile table to validate")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.defaults()
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set needs SECTION.KEY=VALUE, got {item!r}")
        dotted, value = item.split("=", 1)
        overrides[dotted.strip()] = value.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.out is not None:
        overrides["run.out"] = str(args.out)
    if args.threads is not None:
        overrides["run.threads"] = str(args.threads)
    if args.format is not None:
        overrides["run.format"] = args.format
    if args.no_plots:
        overrides["run.plots"] = "false"
    overrides["run.mode"] = args.command
    if args.command == "validate":
        if args.quick:
            overrides["validate.quick"] = "true"
        if args.checks:
            overrides["validate.checks"] = args.checks
        if args.psi0_cache:
            overrides["validate.psi0_cache"] = str(args.psi0_cache)
    cfg.apply_overrides(overrides)
    return cfg


def _write_table(cfg: RunConfig, name: str, header, rows) -> Path:
    out = cfg.out_dir
    if cfg.output_format == "json":
        payload = {"columns": list(header), "rows": [list(map(_plain, r)) for r in rows]}
        return io.write_json(out / f"{name}.json", payload)
    return io.write_csv(out / f"{name}.csv", list(header), rows)


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def cmd_coeffs(cfg: RunConfig) -> int:
    out = cfg.out_dir
    n_profile = cfg.profile_nodes()
    rows = []
    coeff_sets = []
    table_rows = []
    for d in cfg.d_grid():
        params = cfg.equilibrium_params(d)
        cs = gci.coefficients(params, gci.solve_psi0(params, n_profile))
        coeff_sets.append(cs)
        rows.append(cs.as_dict())
        m = params.m_scaled(cs.gci.theta)
        nu_theta = np.asarray(params.nu.nu(0.5 + np.cos(cs.gci.theta)))
        mtilde = nu_theta * np.sin(cs.gci.theta) ** 2 * m * cs.gci.values
        for t, psi, mv, mtv in zip(cs.gci.theta, cs.gci.values, m, mtilde):
            table_rows.append([d, t, psi, mv, mtv])
    io.write_json(out / "coeffs.json", {"rows": rows})
    io.write_csv(out / "psi0.csv", ["d", "theta", "psi0", "m", "mtilde"], table_rows)
    if cfg.plots:
        plots.profile_figure(coeff_sets, out / "psi0_profile.png")
        if len(rows) > 1:
            plots.coefficients_figure(rows, out / "coefficients_vs_d.png")
    print(f"wrote {out / 'coeffs.json'} and {out / 'psi0.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    out = cfg.out_dir
    opts = cfg.sample_options()
    params = cfg.equilibrium_params()
    table = eq.ThetaDensityTable.build(params)
    rng = np.random.default_rng(cfg.seed)
    draws = eq.sample(params, np.eye(3), rng, size=opts["n_samples"], table=table)
    theta = so3_angles(draws)
    edges = np.linspace(0.0, np.pi, opts["bins"] + 1)
    counts, _ = np.histogram(theta, bins=edges)
    analytic = table.bin_probabilities(edges)
    rows = [
        [lo, hi, int(c), p]
        for lo, hi, c, p in zip(edges[:-1], edges[1:], counts, analytic)
    ]
    _write_table(cfg, "theta_histogram", ["bin_left", "bin_right", "count", "probability"], rows)
    if cfg.plots:
        plots.angle_histogram_figure(theta, table, out / "theta_histogram.png", opts["bins"])
    print(f"sampled {opts['n_samples']} attitudes at d={params.d:g}")
    return EXIT_OK


def so3_angles(rotations) -> np.ndarray:
    from . import so3

    return so3.rotation_angle(rotations)


def cmd_ibm(cfg: RunConfig) -> int:
    out = cfg.out_dir
    params = cfg.ibm_params()
    init, init_path = cfg.ibm_init()
    opts = cfg.ibm_run_options()
    record = ibm.run(
        params,
        init=init,
        t_end=opts["t_end"],
        sample_every=opts["sample_every"],
        snapshot_every=opts["snapshot_every"],
        init_path=init_path,
    )
    rows = [
        [t, c, *omega, int(fb)]
        for t, c, omega, fb in zip(
            record.times, record.c1_hat, record.direction, record.fallback_counts
        )
    ]
    _write_table(
        cfg,
        "timeseries",
        ["t", "c1_hat", "omega_1", "omega_2", "omega_3", "det_fallbacks"],
        rows,
    )
    for index, (t, snap) in enumerate(record.snapshots):
        io.write_json(out / f"snapshot_{index:04d}.json", io.ensemble_to_payload(snap))
    io.write_json(out / "snapshot_final.json", io.ensemble_to_payload(record.final))
    if cfg.plots:
        plots.order_parameter_figure(record.times, record.c1_hat, out / "order_parameter.png")
    print(
        f"ran {record.params.n_agents} agents to t={record.final.time:g} "
        f"(final order {record.c1_hat[-1]:.4f})"
    )
    return EXIT_OK


def _pde_initial(cfg: RunConfig, coeffs) -> pde.FrameField:
    shape = cfg.pde_shape()
    dx = cfg._float("pde", "dx")
    rho0 = cfg._float("pde", "rho0")
    amp = cfg._float("pde", "amplitude")
    kind = cfg.raw("pde", "init").strip()
    field = pde.FrameField.uniform(shape, dx=dx, rho0=rho0)
    if kind == "uniform":
        return field
    length = dx * shape[0]
    x = dx * np.arange(shape[0]) / length
    if kind == "density-sine":
        bump = rho0 * (1.0 + amp * np.sin(2.0 * np.pi * x))
        field.rho = np.broadcast_to(
            bump.reshape((shape[0],) + (1,) * (len(shape) - 1)), shape
        ).copy()
        return field
    if kind == "twist":
        twist_amp = amp * length / (2.0 * np.pi)

        def twist(*coords):
            s = np.sin(2.0 * np.pi * coords[0] / length)
            b = np.zeros(coords[0].shape + (3,))
            b[..., 0] = twist_amp * s
            return b

        return pde.FrameField.from_twist(shape, dx, rho=rho0, twist=twist)
    raise ConfigError(f"pde.init must be uniform, density-sine, or twist, got {kind!r}")


def cmd_pde(cfg: RunConfig) -> int:
    out = cfg.out_dir
    eq_params = cfg.equilibrium_params()
    coeff_set = gci.coefficients(eq_params, gci.solve_psi0(eq_params, cfg.profile_nodes()))
    coeffs = pde.SohbCoeffs.from_object(coeff_set)
    params = cfg.pde_params(coeffs)
    opts = cfg.pde_run_options()
    field = _pde_initial(cfg, coeffs)
    record = pde.run(field, params, t_end=opts["t_end"], snapshot_every=opts["snapshot_every"])

    header = io.frame_field_header(record.final.ndim)
    _write_table(cfg, "final_state", header, io.frame_field_rows(record.final))
    for index, (t, snap) in enumerate(record.snapshots):
        io.write_csv(out / f"state_{index:04d}.csv", header, io.frame_field_rows(snap))
    io.write_json(
        out / "metadata.json",
        {
            "coeffs": coeff_set.as_dict(),
            "grid": list(record.final.shape),
            "dx": record.final.dx,
            "dt": params.resolved_dt(),
            "t_end": opts["t_end"],
            "mass_initial": record.mass[0],
            "mass_final": record.mass[-1],
            "max_orthonormality_defect": record.max_defect,
            "min_handedness": record.min_handedness,
            "vacuum_cell_steps": int(record.vacuum_counts.sum()),
        },
    )
    if cfg.plots:
        plots.density_snapshots_figure(record.snapshots, out / "density.png")
        plots.mass_drift_figure(record.times, record.mass, out / "mass_drift.png")
    print(
        f"integrated {record.final.shape} cells to t={record.final.time:g} "
        f"(mass drift {abs(record.mass[-1] - record.mass[0]):.3e})"
    )
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    out = cfg.out_dir
    opts = cfg.validate_options()

    def progress(result):
        marker = "PASS" if result.passed else "FAIL"
        print(f"[{marker}] {result.name}")

    results = run_checks(
        names=opts["checks"],
        quick=opts["quick"],
        psi0_cache=opts["psi0_cache"],
        progress=progress,
    )
    payload = report_payload(results)
    io.write_json(out / "report.json", payload)
    print(f"wrote {out / 'report.json'}")
    if not payload["passed"]:
        raise ValidationFailure(
            ", ".join(r.name for r in results if not r.passed) + " failed"
        )
    return EXIT_OK


COMMANDS = {
    "coeffs": cmd_coeffs,
    "sample": cmd_sample,
    "ibm": cmd_ibm,
    "pde": cmd_pde,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        parallel.set_default_workers(cfg.threads)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BodyflockError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
