"""Command-line harness: config-driven experiments with reproducible outputs.

Every subcommand reads a strict INI config (unknown sections or keys are
errors, so typos in schedule exponents cannot pass silently), seeds all
randomness from one place, and writes CSV files atomically together with
a manifest of content hashes. Reruns with the same config and seed are
byte-identical; there is nothing interactive here.

Exit codes: 0 on success, 2 for configuration problems, 1 for runtime
failures (instability, blow-up, divergence).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import os
import sys
import tempfile
from importlib import resources

import numpy as np

from rdlearn.consistency import WrapperSchedule, rate_preservation_study, wrap
from rdlearn.learn import MeasurementOperator, identification_sweep, make_schedule
from rdlearn.quasipos import BoundaryLayer, BoundaryMeasure, nonlinear_volume_report, sample_members
from rdlearn.rdsolve import DiffusionSpec, SpaceTimeGrid, manufactured_convergence, solve
from rdlearn.reaction import AnalyticReaction, MLPReaction, make_reaction, save_params
from rdlearn.transition import TransitionFunction, default_kernel


class ConfigError(ValueError):
    """A config file problem; the message names the offending key."""


_SCHEMA = {
    "domain": {"extent", "species", "initial", "initials"},
    "grid": {"nodes", "horizon", "steps"},
    "reaction": {"name", "diffusion", "weights", "box", "widths"},
    "wrapper": {"eps", "delta"},
    "schedule": {"alpha", "beta", "gamma", "q", "r", "lam0", "mu0", "nu0", "levels"},
    "measurement": {"kind", "strides", "modes"},
    "noise": {"delta_rule"},
    "optimizer": {"step", "max_iters", "sup_points"},
    "output": {"prefix"},
}


class ExperimentConfig:
    """Parsed strict-INI experiment description."""

    def __init__(self, sections: dict):
        self.sections = sections

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        sections = {}
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            sections[section] = {}
            for key, value in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                sections[section][key] = value.strip()
        return cls(sections)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def serialize(self) -> str:
        out = []
        for section, keys in self.sections.items():
            out.append(f"[{section}]")
            for key, value in keys.items():
                out.append(f"{key} = {value}")
            out.append("")
        return "\n".join(out)

    # typed getters; every failure names section.key for the user

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section: str, key: str) -> str:
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"missing required config key {section}.{key}")
        return value

    def getfloat(self, section, key, default=None, minimum=None) -> float:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required config key {section}.{key}")
            return float(default)
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from None
        if minimum is not None and not value > minimum:
            raise ConfigError(f"{section}.{key} must be > {minimum}, got {value}")
        return value

    def getint(self, section, key, default=None, minimum=None) -> int:
        value = self.getfloat(section, key, default=default, minimum=minimum)
        if value != int(value):
            raise ConfigError(f"{section}.{key} must be an integer, got {value}")
        return int(value)

    def getfloats(self, section, key, default=None) -> list:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required config key {section}.{key}")
            return list(default)
        try:
            return [float(part) for part in raw.split(",")]
        except ValueError:
            raise ConfigError(
                f"{section}.{key} must be comma-separated numbers, got {raw!r}"
            ) from None

    def getints(self, section, key, default=None) -> list:
        vals = self.getfloats(section, key, default=default)
        if any(v != int(v) for v in vals):
            raise ConfigError(f"{section}.{key} must be integers, got {vals}")
        return [int(v) for v in vals]


# ---------------------------------------------------------------------------
# output plumbing


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


class OutputDir:
    """Collects written files and finishes with a hash manifest."""

    def __init__(self, root: str, prefix: str = ""):
        os.makedirs(root, exist_ok=True)
        self.root = root
        self.prefix = prefix
        self.written = []

    def path(self, name: str) -> str:
        return os.path.join(self.root, self.prefix + name)

    def write_csv(self, name: str, header, rows) -> str:
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        path = self.path(name)
        _atomic_write(path, buf.getvalue().encode("utf-8"))
        self.written.append(self.prefix + name)
        return path

    def note(self, name: str) -> None:
        self.written.append(self.prefix + name)

    def finish(self) -> str:
        lines = []
        for name in sorted(self.written):
            digest = hashlib.sha256()
            with open(os.path.join(self.root, name), "rb") as fh:
                digest.update(fh.read())
            lines.append(f"{digest.hexdigest()}  {name}")
        path = self.path("manifest.txt")
        _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
        return path


# ---------------------------------------------------------------------------
# config interpretation


def _build_grid(cfg: ExperimentConfig) -> SpaceTimeGrid:
    extent = cfg.getfloats("domain", "extent")
    nodes = cfg.getints("grid", "nodes")
    horizon = cfg.getfloat("grid", "horizon", minimum=0.0)
    steps = cfg.getint("grid", "steps", minimum=0)
    try:
        return SpaceTimeGrid(tuple(extent), tuple(nodes), horizon, steps)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _profile_values(text: str, grid: SpaceTimeGrid) -> np.ndarray:
    """One named initial profile evaluated on the grid."""
    name, _, args = text.strip().partition(":")
    vals = []
    if args:
        try:
            vals = [float(a) for a in args.split(",")]
        except ValueError:
            raise ConfigError(f"initial profile arguments must be numbers: {text!r}") from None
    axes = [grid.axis(k) / grid.extents[k] for k in range(grid.ndim)]
    if name == "constant":
        if len(vals) != 1:
            raise ConfigError(f"constant profile takes one value, got {text!r}")
        return np.full(grid.shape, vals[0])
    if name == "ramp":
        if len(vals) != 2:
            raise ConfigError(f"ramp profile takes base,slope, got {text!r}")
        base, slope = vals
        out = base + slope * axes[0]
        if grid.ndim == 2:
            out = np.broadcast_to(out[:, None], grid.shape).copy()
        return out
    if name == "cosine":
        if len(vals) != 3:
            raise ConfigError(f"cosine profile takes base,amp,modes, got {text!r}")
        base, amp, k = vals
        wave = np.cos(np.pi * k * axes[0])
        if grid.ndim == 2:
            wave = np.outer(wave, np.cos(np.pi * k * axes[1]))
        return base + amp * wave
    raise ConfigError(f"unknown initial profile {name!r} (constant, ramp, cosine)")


def _initial_state(cfg: ExperimentConfig, grid: SpaceTimeGrid, n: int) -> np.ndarray:
    raw = cfg.require("domain", "initial")
    parts = [p for p in raw.split("|")]
    if len(parts) != n:
        raise ConfigError(
            f"domain.initial needs {n} '|'-separated profiles, got {len(parts)}"
        )
    return np.stack([_profile_values(p, grid) for p in parts])


def _build_reaction(cfg: ExperimentConfig, n: int):
    name = cfg.get("reaction", "name", "none")
    if name == "none":
        return None
    try:
        f = make_reaction(name)
    except ValueError as exc:
        raise ConfigError(f"reaction.name: {exc}") from exc
    if f.n_species != n:
        raise ConfigError(
            f"reaction.name {name!r} has {f.n_species} species, domain.species says {n}"
        )
    return f


def _maybe_wrap(cfg: ExperimentConfig, f):
    eps = cfg.get("wrapper", "eps")
    if eps is None:
        return f
    if f is None:
        raise ConfigError("wrapper.eps given but reaction.name is 'none'")
    eps = cfg.getfloat("wrapper", "eps", minimum=0.0)
    delta = cfg.getfloat("wrapper", "delta", default=eps / 2.0, minimum=0.0)
    return wrap(f, TransitionFunction(eps, delta, default_kernel()))


def _parse_levels(text: str) -> list:
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(f"levels range must be int..int, got {text!r}") from None
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"levels must be ints, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(cfg: ExperimentConfig, out: OutputDir, seed: int) -> int:
    grid = _build_grid(cfg)
    n = cfg.getint("domain", "species", minimum=0)
    f = _maybe_wrap(cfg, _build_reaction(cfg, n))
    diffusion = cfg.getfloats("reaction", "diffusion")
    if len(diffusion) == 1 and n > 1:
        diffusion = diffusion * n
    weights = cfg.getfloats("reaction", "weights", default=[1.0] * n)
    u0 = _initial_state(cfg, grid, n)
    D = DiffusionSpec(tuple(diffusion))

    traj = solve(f, D, u0, grid, c=np.asarray(weights))

    times = grid.times()
    species_cols = [f"species_{i + 1}" for i in range(n)]
    if grid.ndim == 1:
        x = grid.axis(0)
        header = ["t", "x"] + species_cols
        rows = ((t, x[i]) + tuple(traj.values[:, k, i])
                for k, t in enumerate(times) for i in range(grid.nodes[0]))
    else:
        x, y = grid.axis(0), grid.axis(1)
        header = ["t", "x", "y"] + species_cols
        rows = ((t, x[i], y[j]) + tuple(traj.values[:, k, i, j])
                for k, t in enumerate(times)
                for i in range(grid.nodes[0]) for j in range(grid.nodes[1]))
    out.write_csv("trajectory.csv", header, rows)

    masses = traj.masses
    out.write_csv(
        "diagnostics.csv", ["t", "min_u", "mass_weighted"],
        ((t, float(traj.values[:, k].min()), masses[k]) for k, t in enumerate(times)),
    )
    manifest = out.finish()
    print(f"simulated {n} species for {grid.steps} steps; wrote {manifest}")
    return 0


def _cmd_check(cfg: ExperimentConfig, out: OutputDir, seed: int) -> int:
    from rdlearn.reaction import check_conditions

    n = cfg.getint("domain", "species", minimum=0)
    f = _maybe_wrap(cfg, _build_reaction(cfg, n))
    if f is None:
        raise ConfigError("check needs reaction.name")
    box = cfg.getfloats("reaction", "box", default=[0.0, 2.0])
    if len(box) != 2 or box[0] >= box[1]:
        raise ConfigError(f"reaction.box must be lo,hi with lo < hi, got {box}")
    weights = cfg.getfloats("reaction", "weights", default=[1.0] * n)
    report = check_conditions(f, [box[0]] * n, [box[1]] * n,
                              samples=20_000, c=np.asarray(weights), seed=seed)
    rows = [("quasipositivity", int(report.quasipos_ok))]
    if report.mass_ok is not None:
        rows.append(("mass_control", int(report.mass_ok)))
    if report.growth_ok is not None:
        rows.append(("growth", int(report.growth_ok)))
    out.write_csv("conditions.csv", ["condition", "ok"], rows)
    out.finish()
    print(report.summary())
    return 0 if all(ok for _, ok in rows) else 1


def _cmd_wrap_rates(cfg: ExperimentConfig, out: OutputDir, seed: int) -> int:
    alpha = cfg.getfloat("schedule", "alpha", default=2.0, minimum=1.0)
    beta = cfg.getfloat("schedule", "beta", default=1.0, minimum=0.0)
    gamma = cfg.getfloat("schedule", "gamma", default=0.5, minimum=0.0)
    levels = _parse_levels(cfg.get("schedule", "levels", "4,8,16,32,64"))
    try:
        sched = WrapperSchedule(alpha=alpha, beta=beta, gamma=gamma)
    except ValueError as exc:
        raise ConfigError(f"schedule.gamma: {exc}") from exc

    target = AnalyticReaction("cubic-target", 1, lambda u: -(u ** 2) * (1.0 - u))

    def family(m):
        return AnalyticReaction(
            "cubic-shift", 1, lambda u, m=m: -(u ** 2) * (1.0 - u) + 1.0 / m
        )

    study = rate_preservation_study(target, family, sched, [0.0], [1.0],
                                    levels, seed=seed)
    out.write_csv("rates.csv", ["m", "eps", "sup_raw", "sup_wrapped", "fitted_slope"],
                  study.rows())
    out.finish()
    print(f"fitted slope {study.fitted_slope:.4f} "
          f"(preserved rate {study.preserved_rate:.4f})")
    return 0


def _cmd_quasipos(cfg: ExperimentConfig, out: OutputDir, seed: int) -> int:
    dim = cfg.getint("domain", "species", default=2, minimum=0)
    rows = []
    cube = BoundaryMeasure((1.0,) * dim, samples=100_000, seed=seed)
    for x in (0.1, 0.25, 0.5):
        est, hw = cube.estimate(x)
        rows.append(("unit_cube_layer", x, est, cube.measure(x), 3.0 * hw))
    for eps in (0.5, 0.1):
        layer = BoundaryLayer(eps, mode="nonlinear", dim=dim)
        members = sample_members(layer, 2_000, seed=seed)
        rows.append(("distance_bound", eps,
                     float(members.min(axis=1).max()), eps ** (2.0 / dim), 0.0))
    if dim == 2:
        report = nonlinear_volume_report(2, samples=100_000, seed=seed)
        for box, est, hw in report.rows():
            rows.append(("plane_volume", box, est, 5.0 / 3.0, 3.0 * hw))
    out.write_csv("quasipos.csv",
                  ["experiment", "parameter", "value", "reference", "slack"], rows)
    out.finish()
    print(f"wrote {len(rows)} boundary-layer checks for dimension {dim}")
    return 0


def _cmd_transition(cfg: ExperimentConfig, out: OutputDir, seed: int) -> int:
    eps = cfg.getfloat("wrapper", "eps", default=0.1, minimum=0.0)
    delta = cfg.getfloat("wrapper", "delta", default=eps / 2.0, minimum=0.0)
    chi = TransitionFunction(eps, delta, default_kernel())
    xs = np.linspace(0.0, 1.25 * (eps + delta), 257)
    out.write_csv("transition.csv", ["x", "value", "derivative"],
                  ((x, chi(x), chi.derivative(x)) for x in xs))
    out.finish()
    print(f"certified slope bound {chi.slope_bound:.6g} "
          f"(product with eps: {eps * chi.slope_bound:.6g})")
    return 0


def _cmd_learn(cfg: ExperimentConfig, out: OutputDir, seed: int,
               levels_flag: str | None) -> int:
    n = cfg.getint("domain", "species", minimum=0)
    grid = _build_grid(cfg)
    if grid.ndim != 1:
        raise ConfigError("learn requires a one-dimensional domain.extent")
    f_true = _build_reaction(cfg, n)
    if f_true is None:
        raise ConfigError("learn needs reaction.name (the ground truth)")
    diffusion = cfg.getfloats("reaction", "diffusion")
    widths = tuple(cfg.getints("reaction", "widths", default=[n, 16, n]))
    if widths[0] != n or widths[-1] != n:
        raise ConfigError(f"reaction.widths must start and end with {n}, got {widths}")
    box = cfg.getfloats("reaction", "box", default=[0.0, 1.2])
    if len(box) != 2 or box[0] >= box[1]:
        raise ConfigError(f"reaction.box must be lo,hi with lo < hi, got {box}")

    raw = cfg.require("domain", "initials")
    u0s = np.stack([
        np.stack([_profile_values(p, grid) for p in traj.split("|")])
        for traj in raw.split(";")
    ])
    if u0s.shape[1] != n:
        raise ConfigError(f"each trajectory in domain.initials needs {n} profiles")

    levels_text = levels_flag or cfg.get("schedule", "levels", "1,2,3")
    levels = _parse_levels(levels_text)
    rule_name = cfg.get("noise", "delta_rule", "pow2")
    if rule_name == "pow2":
        delta_rule = lambda m: 2.0 ** -m
    elif rule_name == "pow4":
        delta_rule = lambda m: 4.0 ** -m
    else:
        raise ConfigError(f"noise.delta_rule must be pow2 or pow4, got {rule_name!r}")
    try:
        scheds = make_schedule(
            cfg.getfloat("schedule", "alpha", minimum=1.0),
            cfg.getfloat("schedule", "beta", minimum=0.0),
            cfg.getfloat("schedule", "gamma", minimum=0.0),
            levels=levels,
            q=cfg.getfloat("schedule", "q", default=2.0, minimum=1.0),
            r=cfg.getfloat("schedule", "r", default=2.0, minimum=1.0),
            delta_rule=delta_rule,
            lam0=cfg.getfloat("schedule", "lam0", default=1.0, minimum=0.0),
            mu0=cfg.getfloat("schedule", "mu0", default=1.0, minimum=0.0),
            nu0=cfg.getfloat("schedule", "nu0", default=1.0, minimum=0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"schedule.gamma: {exc}") from exc

    kind = cfg.get("measurement", "kind", "full")
    if kind == "subsample":
        strides = cfg.getints("measurement", "strides")
        if len(strides) != len(levels):
            raise ConfigError(
                f"measurement.strides needs one entry per level, got {strides}"
            )
        ops = [MeasurementOperator("subsample", stride=s) for s in strides]
    elif kind == "full":
        ops = [MeasurementOperator("full") for _ in levels]
    elif kind == "fourier":
        modes = cfg.getints("measurement", "modes")
        if len(modes) != len(levels):
            raise ConfigError(f"measurement.modes needs one entry per level, got {modes}")
        ops = [MeasurementOperator("fourier", modes=k) for k in modes]
    else:
        raise ConfigError(f"measurement.kind must be full, subsample or fourier")

    rows, results = identification_sweep(
        f_true, diffusion[0], u0s, grid, scheds, ops, widths,
        box_lo=[box[0]] * n, box_hi=[box[1]] * n, seed=seed,
        step=cfg.getfloat("optimizer", "step", default=0.05, minimum=0.0),
        max_iters=cfg.getint("optimizer", "max_iters", default=8000, minimum=0),
        sup_points=cfg.getint("optimizer", "sup_points", default=1024, minimum=0),
    )
    out.write_csv(
        "results.csv",
        ["m", "objective", "residual_term", "misfit_term", "sup_error_f", "D_error"],
        (row.as_tuple() for row in rows),
    )
    for sched, res in zip(scheds, results):
        mlp = MLPReaction(widths, res.theta, level=sched.m)
        name = f"params_m{sched.m}.txt"
        tmp = out.path(name) + ".tmp"
        save_params(tmp, mlp, seed=seed, eps=sched.eps)
        os.replace(tmp, out.path(name))
        out.note(name)
    out.finish()
    for row, res in zip(rows, results):
        print(f"level {row.m}: sup error {row.sup_error:.4f}, "
              f"objective {row.objective:.4f}, "
              f"state containment {res.state_containment:.3f}")
    return 0


def _cmd_convergence(cfg: ExperimentConfig, out: OutputDir, seed: int) -> int:
    study = manufactured_convergence(
        diffusion=cfg.getfloat("reaction", "diffusion", default=0.7, minimum=0.0),
        extent=cfg.getfloat("domain", "extent", default=1.0, minimum=0.0),
        horizon=cfg.getfloat("grid", "horizon", default=0.5, minimum=0.0),
    )
    out.write_csv("convergence.csv", ["kind", "spacing", "error"], study.rows())
    out.write_csv("orders.csv", ["direction", "order"],
                  [("space", study.spatial_order), ("time", study.temporal_order)])
    out.finish()
    print(f"spatial order {study.spatial_order:.3f}, "
          f"temporal order {study.temporal_order:.3f}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def shipped_config(name: str) -> str:
    """Path of a config file distributed with the package."""
    return str(resources.files("rdlearn").joinpath("configs", name))


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdlearn",
        description="Reaction-diffusion consistency, simulation and learning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in [
        ("simulate", True), ("check", True), ("wrap-rates", False),
        ("quasipos", False), ("transition", False), ("learn", True),
        ("convergence-study", False),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config,
                       help="experiment config file (strict INI)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="global random seed")
        if name == "learn":
            p.add_argument("--levels", default=None,
                           help="levels to run, e.g. 1..3 or 1,2,3")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = (ExperimentConfig.load(args.config) if args.config
               else ExperimentConfig({}))
        out = OutputDir(args.out, prefix=cfg.get("output", "prefix", ""))
        if args.command == "simulate":
            return _cmd_simulate(cfg, out, args.seed)
        if args.command == "check":
            return _cmd_check(cfg, out, args.seed)
        if args.command == "wrap-rates":
            return _cmd_wrap_rates(cfg, out, args.seed)
        if args.command == "quasipos":
            return _cmd_quasipos(cfg, out, args.seed)
        if args.command == "transition":
            return _cmd_transition(cfg, out, args.seed)
        if args.command == "learn":
            return _cmd_learn(cfg, out, args.seed, args.levels)
        if args.command == "convergence-study":
            return _cmd_convergence(cfg, out, args.seed)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
