"""Command-line front end: configuration, runs, serialized outputs.

Exit codes: 0 success, 1 condition-check failure, 2 usage or configuration
error.  Outputs are deterministic; CSV floats are printed with 17 significant
digits so two runs with the same config are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adjoint as adj
from . import examples as ex
from . import mpcheck
from .catchup import catchup_simulate
from .integrate import ControlSignal, integrate_forward, run_family
from .penalty import PenaltySchedule
from .problem import AssumptionError, ProbeGrid, validate_assumptions


class ConfigError(ValueError):
    """Bad configuration file or flag combination."""


@dataclass
class RunConfig:
    problem: str = "example1"
    mu_ctrl: float = 0.05
    sigma_drift: float = 0.05
    beta: float = 0.01
    schedule_k: int = 8
    sigma_ratio: float = 1.0 / 3.0
    margin: float = 0.5
    tol: float = 1e-8
    oracle_steps: int = 20000
    switch_points: int = 120
    switch_steps: int = 4000
    probe_t: int = 64
    probe_x: int = 64
    probe_u: int = 5
    seed: int = 42
    out_dir: str = "out"

    def validate(self) -> None:
        for key in ("beta", "tol", "mu_ctrl", "sigma_drift", "sigma_ratio",
                    "margin"):
            if getattr(self, key) <= 0.0:
                raise ConfigError(f"config key {key!r} must be positive")
        if self.schedule_k < 1 or self.oracle_steps < 100:
            raise ConfigError("schedule_k >= 1 and oracle_steps >= 100 required")

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        data: dict = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
            unknown = set(raw) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            data.update(raw)
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            data[k] = v
        cfg = cls(**data)
        cfg.validate()
        return cfg


def _problem_overrides(cfg: RunConfig) -> dict:
    if cfg.problem == "example1":
        return {"mu_ctrl": cfg.mu_ctrl}
    if cfg.problem == "example2":
        return {"mu_ctrl": cfg.mu_ctrl, "sigma_drift": cfg.sigma_drift}
    return {}


def _build(cfg: RunConfig):
    try:
        return ex.get_problem(cfg.problem, **_problem_overrides(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_control(spec: str | None, u_const: float | None, p) -> ControlSignal:
    """--control 't0:v0,t1:v1,...' (piecewise constant) or --u-const V."""
    if spec is not None:
        pieces = []
        for chunk in spec.split(","):
            t_s, v_s = chunk.split(":")
            pieces.append((float(t_s), float(v_s)))
        pieces.sort()
        if not pieces or pieces[0][0] != 0.0:
            raise ConfigError("--control must start with a segment at t=0")
        grid = [t for t, _ in pieces] + [p.horizon]
        values = [[v] for _, v in pieces]
        return ControlSignal(np.array(grid), np.array(values))
    value = 1.0 if u_const is None else u_const
    return ControlSignal.constant(value, p.horizon)


def _x0(args, p) -> np.ndarray:
    if getattr(args, "x0", None):
        return np.array([float(v) for v in args.x0.split(",")])
    return p.c0.representative()


def _schedule(cfg: RunConfig, p) -> tuple[PenaltySchedule, object]:
    grid = ProbeGrid(n_t=cfg.probe_t, n_x=cfg.probe_x, n_u=cfg.probe_u)
    report = validate_assumptions(p, grid, beta=cfg.beta)
    sched = PenaltySchedule.default(report.mu, report.eta, k=cfg.schedule_k,
                                    sigma_ratio=cfg.sigma_ratio,
                                    margin=cfg.margin)
    return sched, report


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_validate(cfg: RunConfig, args) -> int:
    p = _build(cfg)
    grid = ProbeGrid(n_t=cfg.probe_t, n_x=cfg.probe_x, n_u=cfg.probe_u)
    try:
        report = validate_assumptions(p, grid, beta=cfg.beta)
    except AssumptionError as exc:
        print(f"assumption check failed: {exc}")
        return 1
    out = _outdir(cfg)
    _dump_json(out / "assumptions.json", report.to_dict())
    for key, val in report.checks.items():
        print(f"{key:28s} {'pass' if val else 'FAIL'}")
    print(f"M={report.M:.6g} eta={report.eta:.6g} mu={report.mu:.6g} "
          f"star={report.star:.6g}")
    print(f"wrote {out / 'assumptions.json'}")
    return 0 if report.ok else 1


def _cmd_simulate(cfg: RunConfig, args) -> int:
    if args.gamma is not None and args.gamma <= 0:
        raise ConfigError("--gamma must be positive")
    if args.sigma is not None and args.sigma <= 0:
        raise ConfigError("--sigma must be positive")
    p = _build(cfg)
    u = _parse_control(args.control, args.u_const, p)
    x0 = _x0(args, p)
    out = _outdir(cfg)
    if args.scheme == "catchup":
        traj = catchup_simulate(p, u, x0, cfg.oracle_steps)
    else:
        if args.gamma is None or args.sigma is None:
            raise ConfigError("penalty simulation needs --gamma and --sigma")
        traj = integrate_forward(p, u, args.gamma, args.sigma, x0, cfg.tol)
    path = out / "trajectory.csv"
    traj.write_csv(path)
    print(f"wrote {path} ({traj.grid.size} nodes)")
    return 0


def _cmd_converge(cfg: RunConfig, args) -> int:
    p = _build(cfg)
    sched, report = _schedule(cfg, p)
    u = _parse_control(args.control, args.u_const, p)
    x0 = _x0(args, p)
    ks = list(range(1, (args.k_max or len(sched)) + 1))
    fam = run_family(p, u, sched, x0, tol=cfg.tol,
                     oracle_steps=cfg.oracle_steps, ks=ks)
    out = _outdir(cfg)
    fam.oracle.write_csv(out / "oracle.csv")
    for k, traj in zip(fam.ks, fam.trajectories):
        if traj is not None:
            traj.write_csv(out / f"penalty_k{k}.csv")
    payload = fam.to_dict()
    payload["star"] = report.star
    _dump_json(out / "family.json", payload)
    for k, g, e in zip(fam.ks, fam.sup_gaps, fam.eps):
        print(f"k={k:2d} gamma={fam.gammas[k - ks[0]]:12.1f} "
              f"sup_gap={g:.6g} eps={e:.6g}")
    print(f"monotone={fam.monotone}")
    return 0 if fam.monotone and not fam.failures else 1


def _candidate(args) -> tuple[float, np.ndarray]:
    lam = args.lam if args.lam is not None else 1.0
    pT = np.array([float(v) for v in args.pT.split(",")]) \
        if args.pT else np.zeros(2)
    return lam, pT


def _cmd_adjoint(cfg: RunConfig, args) -> int:
    p = _build(cfg)
    sched, _ = _schedule(cfg, p)
    k = min(max(args.k or len(sched), 1), len(sched))
    gamma, sigma = sched.gammas[k - 1], sched.sigmas[k - 1]
    u = _parse_control(args.control, args.u_const, p)
    traj = integrate_forward(p, u, gamma, sigma, _x0(args, p), cfg.tol,
                             mu_k=sched.mus[k - 1])
    lam, pT = _candidate(args)
    lam, pT = mpcheck.normalize_candidate(lam, pT)
    arc = adj.integrate_adjoint_backward(p, traj, pT, lam, gamma, sigma)
    out = _outdir(cfg)
    arc.write_csv(out / "adjoint.csv")
    _dump_json(out / "adjoint_summary.json",
               {"lam": arc.lam, "gamma": gamma, "sigma": sigma, **arc.info})
    print(f"wrote {out / 'adjoint.csv'}; K0={arc.info['K0']:.4g} "
          f"growth={arc.info['growth_ratio']:.4g} "
          f"eta_tv={arc.info['eta_tv']:.4g}")
    return 0


def _cmd_check_mp(cfg: RunConfig, args) -> int:
    p = _build(cfg)
    lam_raw, pT_raw = _candidate(args)
    try:
        lam, pT = mpcheck.normalize_candidate(lam_raw, pT_raw)
    except ValueError:
        # degenerate multipliers: report the nontriviality failure directly
        out = _outdir(cfg)
        _dump_json(out / "mp_report.json", {
            "nontriviality": {"lam": lam_raw, "value": 0.0,
                              "tolerance": 1e-9, "pass": False},
            "passed": False,
            "notes": ["candidate has lam + |pT| = 0"],
        })
        print("nontriviality failure: lam + |p(T)| = 0")
        return 1
    sched, report = _schedule(cfg, p)
    k = min(max(args.k or len(sched), 1), len(sched))
    gamma, sigma = sched.gammas[k - 1], sched.sigmas[k - 1]
    u = _parse_control(args.control, args.u_const, p)
    traj = integrate_forward(p, u, gamma, sigma, _x0(args, p), cfg.tol,
                             mu_k=sched.mus[k - 1])
    arc = adj.integrate_adjoint_backward(p, traj, pT, lam, gamma, sigma)
    rep = mpcheck.assemble_report(p, traj, arc, alpha=args.alpha,
                                  star=report.star)
    out = _outdir(cfg)
    _dump_json(out / "mp_report.json", rep.to_dict())
    for cond, ok in rep.verdicts.items():
        print(f"{cond:16s} {'pass' if ok else 'FAIL'}")
    print(f"wrote {out / 'mp_report.json'}")
    return 0 if rep.passed else 1


def _cmd_example1(cfg: RunConfig, args) -> int:
    params = ex.example1_params(cfg.mu_ctrl)
    p = ex.build_example1(cfg.mu_ctrl)
    out = _outdir(cfg)
    _dump_json(out / "example1_params.json", params.to_dict())
    for key, val in params.to_dict().items():
        print(f"{key:8s} {val:.12g}")

    u = ex.optimal_control_example1(params)
    traj = catchup_simulate(p, u, p.c0.representative(), cfg.oracle_steps)
    traj.write_csv(out / "example1_trajectory.csv")

    xT, yT = traj.terminal_state
    cert = mpcheck.make_candidate_arc(traj, np.array([0.0, -yT / xT]), 1.0)
    report = mpcheck.assemble_report(p, traj, cert)
    _dump_json(out / "example1_mp_report.json", report.to_dict())
    print(f"terminal |x| = {float(np.hypot(xT, yT)):.9g} (rT = {params.rT:.9g})")
    print(f"mp conditions passed: {report.passed}")
    print(f"wrote {out / 'example1_trajectory.csv'}")
    return 0 if report.passed else 1


def _cmd_example2(cfg: RunConfig, args) -> int:
    p = ex.build_example2(cfg.mu_ctrl, cfg.sigma_drift)
    res = ex.example2_search(p, cfg.switch_points, steps=cfg.switch_steps,
                             seed=cfg.seed)
    out = _outdir(cfg)
    _dump_json(out / "example2_search.json", res.to_dict())
    with open(out / "example2_cost_curve.csv", "w", encoding="utf-8") as fh:
        fh.write("switch,cost,admissible\n")
        for row in res.cost_curve:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    u = ControlSignal.bang_bang(1.0, -cfg.mu_ctrl, res.best_switch, p.horizon)
    traj = catchup_simulate(p, u, p.c0.representative(), cfg.oracle_steps)
    traj.write_csv(out / "example2_trajectory.csv")
    print(f"best switch {res.best_switch:.6g}, cost {res.best_cost:.6g}, "
          f"{res.n_admissible} admissible candidates, "
          f"{len(res.adversary_costs)} adversaries all worse")
    print(f"wrote {out / 'example2_cost_curve.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sweepmp",
        description="Penalty approximation of controlled sweeping processes "
                    "and maximum-principle verification.")
    ap.add_argument("--config", help="JSON config file (flags override it)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", help="example1 | example2 | static-disc")
        sp.add_argument("-o", "--out-dir", help="output directory")
        sp.add_argument("--mu-ctrl", type=float, dest="mu_ctrl",
                        help="control lower-bound magnitude")
        sp.add_argument("--sigma-drift", type=float, dest="sigma_drift")
        sp.add_argument("--beta", type=float)
        sp.add_argument("--tol", type=float, help="integrator tolerance")
        sp.add_argument("--seed", type=int)

    def control_opts(sp):
        sp.add_argument("--u-const", type=float, dest="u_const",
                        help="constant control value (default 1)")
        sp.add_argument("--control",
                        help="piecewise control 't0:v0,t1:v1,...'")
        sp.add_argument("--x0", help="initial state 'x1,x2' "
                                     "(default: start-set representative)")

    sp = sub.add_parser("validate", help="measure constants, check assumptions")
    common(sp)

    sp = sub.add_parser("simulate", help="one forward run, trajectory CSV")
    common(sp)
    control_opts(sp)
    sp.add_argument("--scheme", choices=["penalty", "catchup"],
                    default="penalty")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--sigma", type=float)

    sp = sub.add_parser("converge", help="penalty family vs catch-up oracle")
    common(sp)
    control_opts(sp)
    sp.add_argument("--k-max", type=int, dest="k_max",
                    help="use schedule entries 1..k_max")

    sp = sub.add_parser("adjoint", help="backward costate run, arc CSV")
    common(sp)
    control_opts(sp)
    sp.add_argument("--k", type=int, help="schedule entry (default: last)")
    sp.add_argument("--lambda", type=float, dest="lam")
    sp.add_argument("--pT", help="terminal costate 'p1,p2'")

    sp = sub.add_parser("check-mp", help="score a candidate against the "
                                         "maximum-principle conditions")
    common(sp)
    control_opts(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--lambda", type=float, dest="lam")
    sp.add_argument("--pT", help="terminal costate 'p1,p2'")
    sp.add_argument("--alpha", type=float, default=0.0,
                    help="control-perturbation weight in the maximization")

    sp = sub.add_parser("example1", help="parameter table, optimal "
                                         "trajectory, certificate report")
    common(sp)

    sp = sub.add_parser("example2", help="switch-time search for the "
                                         "drifted problem")
    common(sp)
    sp.add_argument("--switch-points", type=int, dest="switch_points")

    return ap


_HANDLERS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "converge": _cmd_converge,
    "adjoint": _cmd_adjoint,
    "check-mp": _cmd_check_mp,
    "example1": _cmd_example1,
    "example2": _cmd_example2,
}

_CFG_FLAGS = ("problem", "out_dir", "mu_ctrl", "sigma_drift", "beta", "tol",
              "seed", "switch_points")


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.command == "example1":
        default_problem = "example1"
    elif args.command == "example2":
        default_problem = "example2"
    else:
        default_problem = None
    overrides = {k: getattr(args, k, None) for k in _CFG_FLAGS}
    if overrides.get("problem") is None and default_problem:
        overrides["problem"] = default_problem
    try:
        cfg = RunConfig.load(args.config, overrides)
        return _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
