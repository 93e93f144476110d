"""Command-line front end.

Every option can also be set in an INI file given by ``--config``, in a
section named after the command (or ``[common]`` for all commands).
Precedence: command-line flag, then the command's section, then
``[common]``, then the built-in default.

Exit status: 0 success, 2 invalid configuration, 3 numerical
non-convergence, 4 input/output failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, DomainError, IntegrationError, MeasurementError

COMMANDS = ("simulate", "calibrate", "treat", "ocp", "prcc", "fatvol")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


# (flag, dest, type, default, commands)
OPTIONS = [
    ("--diet", "diet", str, "CD", ("simulate", "treat", "ocp", "prcc")),
    ("--scenario", "scenario", str, "I-a", ("simulate", "treat", "ocp")),
    ("--model", "model", str, "extended", ("simulate",)),
    ("--plan", "plan", str, "none", ("treat",)),
    ("--t_f", "t_f", float, None, ("simulate", "treat", "ocp")),
    ("--w_S", "w_S", float, 1.0, ("ocp",)),
    ("--w_R", "w_R", float, 1.0, ("ocp",)),
    ("--w_u", "w_u", float, 1.0, ("ocp",)),
    ("--u_a", "u_a", float, 0.0, ("ocp",)),
    ("--u_b", "u_b", float, 0.99, ("ocp",)),
    ("--N", "N", int, 2001, ("ocp",)),
    ("--max_iter", "max_iter", int, 500, ("ocp",)),
    ("--rtol", "rtol", float, 1e-8, ("simulate", "treat", "ocp")),
    ("--atol", "atol", float, 1e-10, ("simulate", "treat", "ocp")),
    ("--data", "data", str, None, ("calibrate",)),
    ("--starts", "starts", int, 10, ("calibrate",)),
    ("--n", "n_samples", int, 1000, ("prcc",)),
    ("--days", "days", _floats, (5.0, 15.0, 25.0), ("prcc",)),
    ("--n", "n_cells", float, None, ("fatvol",)),
    ("--d", "d", float, None, ("fatvol",)),
    ("--V", "V", float, None, ("fatvol",)),
    ("--seed", "seed", int, None, COMMANDS),
    ("--threads", "threads", int, 1, COMMANDS),
    ("--label", "label", str, None, COMMANDS),
    ("--out", "out", str, "out", COMMANDS),
]
SEED_DEFAULTS = {"calibrate": 20240611, "prcc": 7}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)  # dest -> flag | file | default

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def output_dir(self) -> str:
        label = self.values.get("label") or _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        return os.path.join(self.values.get("out") or "out", self.command, label)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="estrogen-ocp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None, help="INI file with [common] and [%s]" % cmd)
        for flag, dest, typ, _, cmds in OPTIONS:
            if cmd in cmds:
                p.add_argument(flag, dest=dest, type=str, default=None,
                               help=f"({typ.__name__.lstrip('_')})")
    return parser


def _read_config_file(path, command):
    if not os.path.isfile(path):
        raise ConfigError([f"config file not found: {path}"])
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError([f"config file {path}: {exc}"]) from None
    merged = {}
    for section in ("common", command):
        if cp.has_section(section):
            merged.update(cp.items(section))
    return merged


def parse_config(argv=None) -> RunConfig:
    """Merge flags, config file and defaults; raise ConfigError listing every problem."""
    args = build_parser().parse_args(argv)
    cmd = args.command
    from_file = _read_config_file(args.config, cmd) if args.config else {}
    values, sources, problems = {}, {}, []
    for flag, dest, typ, default, cmds in OPTIONS:
        if cmd not in cmds:
            continue
        raw, src = getattr(args, dest), "flag"
        if raw is None:
            key = flag.lstrip("-")
            raw = from_file.get(key.lower(), from_file.get(dest.lower()))
            src = "file"
        if raw is None:
            values[dest], sources[dest] = default, "default"
            continue
        try:
            values[dest] = typ(raw)
        except ValueError:
            problems.append(f"{flag}: cannot read {raw!r} as {typ.__name__.lstrip('_')}")
            continue
        sources[dest] = src
    if values.get("seed") is None and cmd in SEED_DEFAULTS:
        values["seed"] = SEED_DEFAULTS[cmd]
    cfg = RunConfig(cmd, values, sources)
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    from .model import DIETS
    from .treatment import SCENARIOS, TreatmentPlan

    v, out = cfg.values, []
    if "diet" in v and v["diet"] not in DIETS:
        out.append(f"--diet must be one of {DIETS}")
    if "scenario" in v and v["scenario"] not in SCENARIOS:
        out.append(f"--scenario must be one of {sorted(SCENARIOS)}")
    if "model" in v and v["model"] not in ("basic", "extended"):
        out.append("--model must be basic or extended")
    if "plan" in v:
        try:
            TreatmentPlan.parse(v["plan"])
        except DomainError as exc:
            out.append(f"--plan: {exc}")
    if v.get("t_f") is not None and not v["t_f"] > 0:
        out.append("--t_f must be > 0")
    for name in ("w_S", "w_R", "w_u"):
        if name in v and not v[name] > 0:
            out.append(f"--{name} must be > 0")
    if "u_b" in v and not 0 <= v["u_a"] <= v["u_b"] < 1:
        out.append("need 0 <= u_a <= u_b < 1")
    if "N" in v and v["N"] < 3:
        out.append("--N must be >= 3")
    if "max_iter" in v and v["max_iter"] < 1:
        out.append("--max_iter must be >= 1")
    for name in ("rtol", "atol"):
        if name in v and not v[name] > 0:
            out.append(f"--{name} must be > 0")
    if v.get("data") is not None and not os.path.isfile(v["data"]):
        out.append(f"--data file not found: {v['data']}")
    if "starts" in v and v["starts"] < 1:
        out.append("--starts must be >= 1")
    if "n_samples" in v and v["n_samples"] < 3:
        out.append("--n must be >= 3")
    if "days" in v and (not v["days"] or min(v["days"]) <= 0):
        out.append("--days must be positive")
    if cfg.command == "fatvol":
        for name, flag in (("n_cells", "--n"), ("d", "--d"), ("V", "--V")):
            if v.get(name) is None:
                out.append(f"{flag} is required")
        if v.get("d") is not None and not v["d"] > 0:
            out.append("--d must be > 0")
        for name, flag in (("n_cells", "--n"), ("V", "--V")):
            if v.get(name) is not None and v[name] < 0:
                out.append(f"{flag} must be >= 0")
    if v.get("threads", 1) < 1:
        out.append("--threads must be >= 1")
    return out


# -- commands -----------------------------------------------------------------

def _integrator(cfg):
    from .integrate import IntegratorConfig

    return IntegratorConfig(rtol=cfg.rtol, atol=cfg.atol)


def _cmd_simulate(cfg, outdir, lines):
    from .model import DietInit, ModelParams, simulate_basic
    from .treatment import TreatmentPlan, get_scenario, simulate_treated, write_trajectory_csv

    if cfg.model == "basic":
        t_f = cfg.t_f or 15.0
        init = DietInit.default(cfg.diet)
        grid = np.linspace(0.0, t_f, int(round(t_f / 0.01)) + 1)
        tr = simulate_basic(ModelParams(), init, t_f, output_grid=grid, config=_integrator(cfg))
        path = os.path.join(outdir, "trajectory.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,T,E,F\n")
            for t, x in zip(tr.times, tr.states):
                fh.write(",".join("%.9g" % v for v in (t, *x)) + "\n")
        lines.append(f"final tumor volume: {tr.final[0]:.6g} mm^3")
        return EXIT_OK
    preset = get_scenario(cfg.scenario)
    tr = simulate_treated(preset.params(), preset.init(cfg.diet), TreatmentPlan.none(),
                          cfg.t_f or 25.0, config=_integrator(cfg))
    write_trajectory_csv(tr, os.path.join(outdir, "trajectory.csv"))
    t_tr = tr.meta["t_tr"]
    lines.append("t_tr: " + ("none" if t_tr is None else f"{t_tr:.6f}"))
    lines.append(f"final tumor burden S+R: {tr.final[0] + tr.final[1]:.6g} mm^3")
    return EXIT_OK


def _cmd_treat(cfg, outdir, lines):
    from .treatment import TreatmentPlan, run_scenario, write_trajectory_csv

    plan = TreatmentPlan.parse(cfg.plan)
    tr, s = run_scenario(cfg.scenario, cfg.diet, plan, cfg.t_f or 25.0, config=_integrator(cfg))
    write_trajectory_csv(tr, os.path.join(outdir, "trajectory.csv"))
    lines += ["t_tr: " + ("none" if s.t_tr is None else f"{s.t_tr:.6f}"),
              f"final S: {s.S_final:.6g}", f"final R: {s.R_final:.6g}",
              f"final tumor burden S+R: {s.burden_final:.6g} mm^3",
              f"eradicated: {s.eradicated}"]
    return EXIT_OK


def _cmd_ocp(cfg, outdir, lines):
    from .ocp import OcpWeights, solve_scenario, write_ocp_report, write_ocp_trajectory

    run = solve_scenario(cfg.scenario, cfg.diet, OcpWeights(cfg.w_S, cfg.w_R, cfg.w_u),
                         t_f=cfg.t_f or 25.0, n=cfg.N, bounds=(cfg.u_a, cfg.u_b),
                         max_iter=cfg.max_iter)
    if run.traj is not None:
        write_ocp_trajectory(run.traj, os.path.join(outdir, "ocp_trajectory.csv"))
        write_ocp_report(run.report, os.path.join(outdir, "ocp_report.csv"))
    lines.append("t_tr: " + ("none" if run.t_tr is None else f"{run.t_tr:.6f}"))
    if run.report is None:
        lines.append("tumor never reaches the treatment threshold; nothing to optimize")
        return EXIT_OK
    X = run.traj.final
    lines += [f"J: {run.report.J_history[-1]:.10g}",
              f"final tumor burden S+R: {X[0] + X[1]:.6g} mm^3",
              f"converged: {run.report.converged}",
              f"iterations: {run.report.iterations}",
              f"final relative error: {run.report.final_rel_error:.3e}"]
    return EXIT_OK if run.report.converged else EXIT_NUMERIC


def _cmd_calibrate(cfg, outdir, lines):
    from .calibration import (calibrate, load_measurements, synthetic_measurements,
                              write_measurements)

    if cfg.data is None:
        data = synthetic_measurements()
        write_measurements(data, os.path.join(outdir, "synthetic_input.csv"))
        lines.append("data: synthetic (basic model at default parameters)")
    else:
        data = load_measurements(cfg.data)
    res = calibrate(data, seed=cfg.seed, n_starts=cfg.starts)
    with open(os.path.join(outdir, "calibration.csv"), "w", encoding="utf-8") as fh:
        fh.write("name,value\n")
        for name, value in res.as_rows():
            fh.write(f"{name},{value:.9g}\n")
    lines += [f"{name}: {value:.6g}" for name, value in res.as_rows()]
    if res.step1.at_bounds or res.step2.at_bounds:
        lines.append(f"at bounds: {res.step1.at_bounds + res.step2.at_bounds}")
    return EXIT_OK


def _cmd_prcc(cfg, outdir, lines):
    from .sensitivity import run_prcc_study, write_prcc_csv

    rep = run_prcc_study(diet=cfg.diet, days=cfg.days, n=cfg.n_samples, seed=cfg.seed,
                         threads=cfg.threads)
    write_prcc_csv(rep, os.path.join(outdir, f"prcc_{cfg.diet}.csv"))
    lines += [f"samples: {rep.n_samples}, used: {rep.n_effective}, failures: {len(rep.failures)}"]
    for d in rep.days:
        top = sorted(((abs(rep.value(p, "S", d)), p) for p in rep.names
                      if not np.isnan(rep.value(p, "S", d))), reverse=True)[:3]
        lines.append(f"day {d:g}, strongest on S: " + ", ".join(
            f"{p} {rep.value(p, 'S', d):+.3f}" for _, p in top))
    return EXIT_OK


def _cmd_fatvol(cfg, outdir, lines):
    from .model import AdipocyteGeometry, fat_volume_estimate

    value = fat_volume_estimate(AdipocyteGeometry(cfg.n_cells, cfg.d, cfg.V))
    lines.append("%.12g" % value)
    return EXIT_OK


HANDLERS = {"simulate": _cmd_simulate, "treat": _cmd_treat, "ocp": _cmd_ocp,
            "calibrate": _cmd_calibrate, "prcc": _cmd_prcc, "fatvol": _cmd_fatvol}


def run(cfg: RunConfig, stdout=None) -> int:
    """Execute a parsed configuration; returns the exit status."""
    stdout = stdout or sys.stdout
    lines = [f"command: {cfg.command}"]
    lines += [f"{k} = {cfg.values[k]} ({cfg.sources.get(k, 'default')})"
              for k in sorted(cfg.values) if cfg.values[k] is not None]
    outdir = None
    try:
        if cfg.command != "fatvol":
            outdir = cfg.output_dir()
            os.makedirs(outdir, exist_ok=True)
        status = HANDLERS[cfg.command](cfg, outdir, lines)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MeasurementError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CalibrationError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.command == "fatvol":
        print(lines[-1], file=stdout)
        return status
    if outdir is not None:
        lines.append(f"output: {outdir}")
        try:
            with open(os.path.join(outdir, "summary.txt"), "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
    print("\n".join(lines), file=stdout)
    return status


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
