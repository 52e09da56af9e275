"""Command-line front end.

Subcommands:
  simulate        run a trajectory ensemble; write observables CSV, figure,
                  optional dumps, and a manifest for byte-exact reproduction
  oracle-compare  run an ensemble and check the reconstructed density matrix
                  against a brute-force reference solver
  basis-info      print per-order operator-basis counts and recurrence checks
  noise-test      run the noise-moment 3-sigma suite

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 comparison or moment-suite failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .config import (
    RunConfig,
    initial_to_state,
    load_config,
    parse_observable_name,
)
from .correlations import DiscreteModes, OrnsteinUhlenbeck, moment_suite
from .ensemble import run_ensemble, worker_count
from .errors import (
    BasisIncompleteError,
    BasisMismatchError,
    ClosureDivergedError,
    ConfigError,
    InvalidCorrelationError,
    InvalidStateError,
    KernelBlowupError,
    NmqsdError,
    ResourceLimitError,
    TrajectoryDivergedError,
    TruncationError,
)
from .kernels import propagate_kernels
from .models import (
    ModelSpec,
    build_angular_model,
    build_ncavity_model,
    build_nqubit_model,
)
from .obasis import build_basis, qubit_table_counts
from .observables import (
    coherence,
    fidelity_with_stderr,
    population,
    trace_distance_series,
)
from .oracles import (
    markov_rate_ou,
    solve_discrete_modes,
    solve_lindblad,
    solve_pseudomode_ou,
)
from . import reporting

_NUMERICAL_ERRORS = (
    KernelBlowupError,
    TrajectoryDivergedError,
    TruncationError,
    ClosureDivergedError,
    BasisIncompleteError,
    BasisMismatchError,
    ResourceLimitError,
    InvalidCorrelationError,
    InvalidStateError,
)


def _add_common(sp: argparse.ArgumentParser, config_required: bool):
    sp.add_argument("--config", required=config_required,
                    help="path to a JSON run configuration")
    sp.add_argument("--out", help="output directory (overrides output.directory)")
    sp.add_argument("--threads", type=int,
                    help="worker processes for the ensemble (results unaffected)")
    sp.add_argument("--seed-override", type=int, help="replace sim.seed")
    sp.add_argument("--fidelity-ref",
                    help="JSON file with an initial-state object used as the "
                         "fidelity reference (default: the run's initial state)")
    sp.add_argument("--literal-paper-ode", action="store_true",
                    help="use the verbatim published cavity kernel ODE variant "
                         "(known not to converge; kept for comparison)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmqsd",
        description="Non-Markovian quantum state diffusion with exact "
                    "time-local O-operators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run an ensemble and write artifacts")
    _add_common(sp, config_required=True)

    sp = sub.add_parser("oracle-compare",
                        help="check an ensemble against a reference solver")
    _add_common(sp, config_required=True)

    sp = sub.add_parser("noise-test", help="run the noise-moment 3-sigma suite")
    _add_common(sp, config_required=True)

    sp = sub.add_parser("basis-info",
                        help="print operator-basis counts and recurrence checks")
    _add_common(sp, config_required=False)
    sp.add_argument("--family", choices=("nqubit", "angular", "ncavity"),
                    help="model family when no --config is given")
    sp.add_argument("--n", type=int, help="site count (nqubit/ncavity)")
    sp.add_argument("--l", type=float, help="angular momentum quantum number")
    sp.add_argument("--omega", type=float, help="level splitting (nqubit/angular)")
    sp.add_argument("--omegas", help="comma-separated cavity frequencies")
    sp.add_argument("--lambdas", help="comma-separated hopping strengths")
    sp.add_argument("--n-max", type=int, default=2, help="photon cutoff per cavity")
    sp.add_argument("--topology", choices=("ring", "chain"), default="ring")
    sp.add_argument("--csv", help="also dump the basis matrices to this CSV file")
    return parser


@dataclass
class _Setup:
    """Everything a run command needs, resolved from config plus flags."""

    cfg: RunConfig
    model: ModelSpec
    basis: object
    corr: object
    grid: object
    k_trunc: int
    seed: int
    psi0: np.ndarray | None
    rho0: np.ndarray | None
    out_dir: str
    workers: int
    fid_ref: np.ndarray | None


def _load_fidelity_ref(path: str, model: ModelSpec) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"fidelity reference file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an initial-state object")
    psi, rho = initial_to_state(data, model)
    return rho if rho is not None else np.outer(psi, psi.conj())


def _build_setup(args) -> _Setup:
    cfg = load_config(args.config)
    model = cfg.build_model()
    basis = build_basis(model)
    k = cfg.sim.get("K_trunc")
    k_trunc = basis.k_max if k is None else int(k)
    if k_trunc > basis.k_max:
        raise ConfigError(
            f"sim.K_trunc: model closes at order {basis.k_max}, got {k_trunc}"
        )
    corr = cfg.build_corr()
    grid = cfg.build_grid()
    seed = cfg.sim["seed"] if args.seed_override is None else args.seed_override
    psi0, rho0 = cfg.initial_state(model)
    out_dir = args.out or cfg.output.get("directory") or "."
    fid_ref = None
    if args.fidelity_ref:
        fid_ref = _load_fidelity_ref(args.fidelity_ref, model)
    return _Setup(
        cfg=cfg, model=model, basis=basis, corr=corr, grid=grid,
        k_trunc=k_trunc, seed=seed, psi0=psi0, rho0=rho0, out_dir=out_dir,
        workers=worker_count(args.threads), fid_ref=fid_ref,
    )


def _reference_state(setup: _Setup) -> np.ndarray:
    if setup.fid_ref is not None:
        return setup.fid_ref
    if setup.rho0 is not None:
        return setup.rho0
    return np.outer(setup.psi0, setup.psi0.conj())


def _write_manifest(out_dir: str, command: str, started: float,
                    artifacts: list[str], config: dict, **extra):
    from . import __version__

    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "artifacts": artifacts,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _observable_columns(setup: _Setup, result) -> tuple[dict, dict]:
    """Resolve configured observable names to value and 3-sigma-band columns."""
    names = setup.cfg.output.get("observables")
    if not names:
        names = [f"pop_{i}" for i in range(1, setup.model.dim + 1)]
    cols: dict[str, np.ndarray] = {}
    errs: dict[str, np.ndarray | None] = {}
    for name in names:
        parsed = parse_observable_name(name)
        if parsed[0] == "pop":
            s = population(result.rho, parsed[1], grid=result.grid)
            cols[s.name] = s.values
            errs[s.name] = result.stderr_elem[:, parsed[1] - 1, parsed[1] - 1]
        elif parsed[0] == "coh":
            s = coherence(result.rho, parsed[1], parsed[2], grid=result.grid)
            cols[s.name] = s.values
            errs[s.name] = result.stderr_elem[:, parsed[1] - 1, parsed[2] - 1]
        else:
            series, stderr = fidelity_with_stderr(result, _reference_state(setup))
            cols[series.name] = series.values
            errs[series.name] = stderr
    return cols, errs


def _run_ensemble(setup: _Setup, args):
    kernels = propagate_kernels(
        setup.model, setup.basis, setup.corr, setup.grid,
        k_trunc=setup.k_trunc, literal_ode=args.literal_paper_ode,
    )
    result = run_ensemble(
        kernels, setup.cfg.sim["n_traj"], setup.seed,
        psi0=setup.psi0, rho0=setup.rho0,
        mode=setup.cfg.sim.get("mode", "nonlinear"), workers=setup.workers,
    )
    result.validate()
    return kernels, result


def _cmd_simulate(args) -> int:
    started = time.perf_counter()
    setup = _build_setup(args)
    os.makedirs(setup.out_dir, exist_ok=True)
    kernels, result = _run_ensemble(setup, args)

    cols, errs = _observable_columns(setup, result)
    times = setup.grid.times
    artifacts = ["observables.csv", "observables.png"]
    reporting.write_observables_csv(
        os.path.join(setup.out_dir, "observables.csv"), times, cols)
    reporting.plot_observables(
        os.path.join(setup.out_dir, "observables.png"), times, cols, errs)

    for dump in setup.cfg.output.get("dumps", []):
        name = f"{dump}.csv"
        path = os.path.join(setup.out_dir, name)
        if dump == "density":
            reporting.write_density_csv(path, times, result.rho)
        elif dump == "stderr":
            reporting.write_density_csv(
                path, times, result.stderr_elem.astype(complex))
        elif dump == "noise":
            sample = setup.corr.sample_path(setup.grid, setup.seed, 0)
            reporting.write_noise_csv(path, times, sample.samples)
        elif dump == "kernels":
            reporting.write_kernel_csv(path, kernels)
        elif dump == "basis":
            reporting.write_basis_csv(path, setup.basis)
        artifacts.append(name)

    extra = {
        "seed": setup.seed,
        "k_trunc": setup.k_trunc,
        "mode": setup.cfg.sim.get("mode", "nonlinear"),
        "n_traj": result.n_traj,
        "workers": setup.workers,
        "literal_ode": bool(args.literal_paper_ode),
    }
    if result.norm_drift_max is not None:
        extra["norm_drift_max"] = float(result.norm_drift_max)
    if result.norm_mean is not None:
        extra["final_norm_sq_mean"] = float(result.norm_mean[-1])
    _write_manifest(setup.out_dir, "simulate", started,
                    artifacts + ["manifest.json"], setup.cfg.raw, **extra)

    print(f"simulate: {result.n_traj} trajectories on {len(times)} grid points")
    for name in artifacts:
        print(f"wrote {os.path.join(setup.out_dir, name)}")
    return 0


def _oracle_density(setup: _Setup, kind: str, oracle_cfg: dict) -> np.ndarray:
    bath = setup.cfg.bath
    if kind == "pseudomode":
        if bath["kind"] != "ou":
            raise ConfigError("oracle.kind: pseudomode needs an OU bath")
        return solve_pseudomode_ou(
            setup.model, bath["gamma"], setup.grid,
            psi0=setup.psi0, rho0=setup.rho0,
            n_ph_max=oracle_cfg.get("n_ph_max"),
            substeps=oracle_cfg.get("substeps"),
        )
    if kind == "discrete_modes":
        if bath["kind"] != "discrete_modes":
            raise ConfigError("oracle.kind: discrete_modes needs a mode bath")
        return solve_discrete_modes(
            setup.model, setup.corr, setup.grid,
            psi0=setup.psi0, rho0=setup.rho0,
        )
    if bath["kind"] != "ou":
        raise ConfigError("oracle.kind: lindblad is the OU Markov limit")
    rho0 = setup.rho0
    if rho0 is None:
        rho0 = np.outer(setup.psi0, setup.psi0.conj())
    return solve_lindblad(
        setup.model.hamiltonian,
        [(markov_rate_ou(), setup.model.coupling)],
        rho0, setup.grid, substeps=oracle_cfg.get("substeps", 1),
    )


def _cmd_oracle_compare(args) -> int:
    started = time.perf_counter()
    setup = _build_setup(args)
    oracle_cfg = setup.cfg.oracle
    if not oracle_cfg:
        raise ConfigError("oracle: section required for oracle-compare")
    tol = float(oracle_cfg["tolerance"])
    default_kind = ("pseudomode" if setup.cfg.bath["kind"] == "ou"
                    else "discrete_modes")
    kind = oracle_cfg.get("kind", default_kind)

    os.makedirs(setup.out_dir, exist_ok=True)
    _, result = _run_ensemble(setup, args)
    reference = _oracle_density(setup, kind, oracle_cfg)

    distance = trace_distance_series(result.rho, reference)
    allowed = np.maximum(tol, 3.0 * result.stderr_scale)
    times = setup.grid.times
    reporting.write_comparison_csv(
        os.path.join(setup.out_dir, "comparison.csv"), times, distance, allowed)
    reporting.plot_comparison(
        os.path.join(setup.out_dir, "comparison.png"), times, distance, tol,
        allowed=allowed)

    bad = distance > allowed
    passed = not bool(bad.any())
    _write_manifest(
        setup.out_dir, "oracle-compare", started,
        ["comparison.csv", "comparison.png", "manifest.json"], setup.cfg.raw,
        seed=setup.seed, k_trunc=setup.k_trunc, oracle=kind,
        tolerance=tol, max_trace_distance=float(distance.max()),
        passed=passed,
    )
    if passed:
        print(f"PASS: max trace distance {distance.max():.4g} vs {kind} "
              f"(allowed up to {allowed.max():.4g})")
        return 0
    worst = int(np.argmax(distance - allowed))
    print(f"FAIL: trace distance {distance[worst]:.4g} exceeds allowed "
          f"{allowed[worst]:.4g} at t={times[worst]:.4g} vs {kind}")
    return 4


def _cmd_noise_test(args) -> int:
    started = time.perf_counter()
    setup = _build_setup(args)
    os.makedirs(setup.out_dir, exist_ok=True)
    checks = moment_suite(setup.corr, setup.grid,
                          n_paths=setup.cfg.sim["n_traj"], seed=setup.seed)
    reporting.write_moments_csv(
        os.path.join(setup.out_dir, "moments.csv"), checks)
    reporting.plot_moments(
        os.path.join(setup.out_dir, "moments.png"), checks)
    _write_manifest(
        setup.out_dir, "noise-test", started,
        ["moments.csv", "moments.png", "manifest.json"], setup.cfg.raw,
        seed=setup.seed, n_paths=setup.cfg.sim["n_traj"],
        passed=all(c.passed for c in checks),
    )
    n_pass = sum(c.passed for c in checks)
    print(f"moment checks: {n_pass}/{len(checks)} passed (3 sigma)")
    for c in checks:
        if not c.passed:
            dev = abs(c.estimate - c.target) / max(c.stderr, 1e-300)
            print(f"  FAIL {c.label}: {dev:.2f} sigma")
    return 0 if n_pass == len(checks) else 4


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated numbers")


def _basis_info_model(args) -> ModelSpec:
    if args.config:
        return load_config(args.config).build_model()
    if args.family is None:
        raise ConfigError("basis-info: give --config or --family plus model flags")
    if args.family == "nqubit":
        if args.n is None or args.omega is None:
            raise ConfigError("basis-info: nqubit needs --n and --omega")
        return build_nqubit_model(args.n, args.omega)
    if args.family == "angular":
        if args.l is None or args.omega is None:
            raise ConfigError("basis-info: angular needs --l and --omega")
        return build_angular_model(args.l, args.omega)
    if args.n is None or args.omegas is None or args.lambdas is None:
        raise ConfigError("basis-info: ncavity needs --n, --omegas, --lambdas")
    return build_ncavity_model(
        args.n,
        _parse_floats(args.omegas, "--omegas"),
        _parse_floats(args.lambdas, "--lambdas"),
        n_max=args.n_max,
        topology=args.topology,
    )


def _cmd_basis_info(args) -> int:
    model = _basis_info_model(args)
    basis = build_basis(model)
    print(f"family {basis.family}, dimension {basis.dim}")
    for k, count in enumerate(basis.counts):
        print(f"order {k}: {count} operators")
    print(f"closes at order {basis.k_max}; counts {basis.counts}")
    if basis.table_counts != basis.counts:
        print(f"symmetry-reduced span dimensions {basis.table_counts}")
    if basis.family == "nqubit":
        n = model.params["n"]
        print(f"closed-form table row N={n}: {qubit_table_counts(n)}")
        if n >= 2:
            prev = qubit_table_counts(n - 1)
            ok = all(basis.table_counts[k] == prev[k - 1]
                     for k in range(1, len(basis.table_counts)))
            print(f"recurrence m(N,k) = m(N-1,k-1) for k >= 1: "
                  f"{'ok' if ok else 'VIOLATED'}")
        if n >= 3:
            prev2 = qubit_table_counts(n - 2)
            ok = basis.table_counts[0] == prev2[0] + n
            print(f"recurrence m(N,0) = m(N-2,0) + N: "
                  f"{'ok' if ok else 'VIOLATED'}")
    if model.dim <= 4:
        for k, ops in enumerate(basis.raw_orders):
            for idx, op in enumerate(ops):
                print(f"order {k}, operator {idx + 1}:")
                print(np.array2string(op, precision=4, suppress_small=True))
    if args.csv:
        reporting.write_basis_csv(args.csv, basis)
        print(f"wrote {args.csv}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    commands = {
        "simulate": _cmd_simulate,
        "oracle-compare": _cmd_oracle_compare,
        "noise-test": _cmd_noise_test,
        "basis-info": _cmd_basis_info,
    }
    try:
        return commands[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except NmqsdError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
