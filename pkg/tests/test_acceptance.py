"""Acceptance suite: one test per shipped guarantee, budgets enforced.

Every test prints a single pass line with the measured quantities, so a
verbose run reads as a checklist. Failures abort with the offending
numbers in the assert message. The level sweep of the learning problem
is the long pole (about eight minutes on one core) and runs last; all
other tests finish in seconds. Budgets are asserted, not aspirational.
"""

import os
import time

import numpy as np
import pytest

from rdlearn.cli import main
from rdlearn.consistency import WrapperSchedule, rate_preservation_study, wrap
from rdlearn.learn import (
    AllAtOnceProblem,
    MeasurementOperator,
    identification_sweep,
    make_schedule,
)
from rdlearn.quasipos import (
    BoundaryLayer,
    BoundaryMeasure,
    approximation_experiment,
    sample_members,
)
from rdlearn.rdsolve import (
    DiffusionSpec,
    SpaceTimeGrid,
    estimate_mass_tolerance,
    manufactured_convergence,
    mass_audit,
    solve,
)
from rdlearn.reaction import AnalyticReaction, MLPReaction, make_reaction
from rdlearn.transition import build_mollified_heaviside, default_kernel, derivative_bound


def _report(number, detail):
    print(f"criterion {number}: PASS - {detail}")


def test_criterion_1_wrapped_terms_exactly_quasipositive():
    """100 random networks x 1000 boundary states per face, no tolerance."""
    start = time.perf_counter()
    chi = build_mollified_heaviside(0.2)
    rng = np.random.default_rng(2026)
    checked = 0
    for seed in range(100):
        g = wrap(MLPReaction.from_seed((2, 8, 2), seed=seed, scale=1.5), chi)
        for face in range(2):
            pts = rng.uniform(0.0, 3.0, size=(1000, 2))
            pts[:, face] = 0.0
            vals = g.eval(pts)[:, face]
            assert np.all(vals >= 0.0), (seed, face, vals.min())
            checked += 1000
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"budget 10 s exceeded: {elapsed:.1f} s"
    _report(1, f"zero violations in {checked} exact boundary checks "
               f"({elapsed:.1f}s)")


def test_criterion_2_cutoff_slope_sandwich():
    """Measured sup|chi'| between 1/eps and 4 sup|eta'|/eps, stable product."""
    start = time.perf_counter()
    kernel = default_kernel()
    products = []
    for eps in (1.0, 1e-1, 1e-2, 1e-3, 1e-4):
        chi = build_mollified_heaviside(eps, kernel)
        measured = derivative_bound(chi)
        assert measured >= 1.0 / eps
        assert measured <= 4.0 * kernel.sup_abs_derivative / eps
        products.append(eps * measured)
    spread = max(products) / min(products)
    assert spread < 2.0, f"product spread {spread:.3f}"
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"budget 5 s exceeded: {elapsed:.1f} s"
    _report(2, f"slope in [1/eps, 4 sup|eta'|/eps] for five decades, "
               f"product spread {spread:.3f} ({elapsed:.1f}s)")


def test_criterion_3_wrapper_preserves_approximation_rate():
    """Synthetic rate-1 family keeps slope -1 within [-1.15, -0.85]."""
    start = time.perf_counter()
    target = AnalyticReaction("cubic", 1, lambda u: -(u ** 2) * (1.0 - u))

    def family(m):
        return AnalyticReaction("cubic-shift", 1,
                                lambda u, m=m: -(u ** 2) * (1.0 - u) + 1.0 / m)

    study = rate_preservation_study(
        target, family, WrapperSchedule(alpha=2.0, beta=1.0, gamma=0.5),
        [0.0], [1.0], (4, 8, 16, 32, 64), seed=0)
    assert -1.15 <= study.fitted_slope <= -0.85, study.fitted_slope
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"budget 60 s exceeded: {elapsed:.1f} s"
    _report(3, f"fitted slope {study.fitted_slope:.4f} in [-1.15, -0.85] "
               f"({elapsed:.1f}s)")


def test_criterion_4_gradient_matches_finite_differences():
    """All-at-once gradient vs central differences, 20 directions."""
    start = time.perf_counter()
    grid = SpaceTimeGrid(1.0, 8, 0.1, 5)
    sched = make_schedule(2.0, 1.0, 0.5)[0]
    rng = np.random.default_rng(7)
    op = MeasurementOperator("subsample", stride=2)
    data = rng.standard_normal((1, 3, 4))
    prob = AllAtOnceProblem(grid, (1, 8, 1), build_mollified_heaviside(1.0),
                            sched, op, data, sup_points=128, l2_nodes=65)
    x = prob.initial_iterate(seed=1)
    x += 0.1 * rng.standard_normal(x.size)
    x[:1] = np.abs(x[:1]) + 0.05
    g = prob.gradient(x)
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        v = rng.standard_normal(x.size)
        v /= np.linalg.norm(v)
        fd = (prob.objective(x + h * v) - prob.objective(x - h * v)) / (2.0 * h)
        worst = max(worst, abs(fd - float(g @ v)) / max(1.0, abs(fd)))
    assert worst <= 1e-5, worst
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"budget 10 s exceeded: {elapsed:.1f} s"
    _report(4, f"max relative gradient error {worst:.2e} <= 1e-5 "
               f"({elapsed:.1f}s)")


def test_criterion_5_solver_convergence_orders():
    """Manufactured solution: second order in space, first in time."""
    start = time.perf_counter()
    study = manufactured_convergence()
    assert study.spatial_order == pytest.approx(2.0, abs=0.2)
    assert study.temporal_order == pytest.approx(1.0, abs=0.2)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"budget 60 s exceeded: {elapsed:.1f} s"
    _report(5, f"orders space {study.spatial_order:.3f}, "
               f"time {study.temporal_order:.3f} ({elapsed:.1f}s)")


def test_criterion_6_wrapped_networks_stay_nonnegative_with_bounded_mass():
    """Ten random wrapped networks on a 200x2000 grid: nonnegative states
    and mass growth within the certified constants plus discretization."""
    start = time.perf_counter()
    chi = build_mollified_heaviside(0.25)
    grid = SpaceTimeGrid(1.0, 200, 1.0, 2000)

    def u0_builder(g, seed):
        x = g.axis(0)
        rng = np.random.default_rng(seed)
        rows = []
        for _ in range(2):
            a = rng.uniform(0.3, 0.8)
            b = a * rng.uniform(0.2, 0.8)
            k = rng.integers(1, 4)
            rows.append(a + b * np.cos(k * np.pi * x / g.extents[0]))
        return np.array(rows)

    worst_min = np.inf
    for seed in range(10):
        wrapped = wrap(MLPReaction.from_seed((2, 16, 2), seed=seed, scale=1.0),
                       chi)
        cc = wrapped.consistency_constants()
        D = DiffusionSpec.uniform(0.1, 2)
        traj = solve(wrapped, D, u0_builder(grid, seed), grid)
        assert traj.min_value >= -1e-8, (seed, traj.min_value)
        worst_min = min(worst_min, traj.min_value)
        tol = estimate_mass_tolerance(wrapped, D,
                                      lambda g, s=seed: u0_builder(g, s),
                                      grid, K0=cc.K0, K1=cc.K1)
        audit = mass_audit(traj, K0=cc.K0, K1=cc.K1, tol=tol)
        assert audit.passed, (seed, audit.worst, tol)
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"budget 120 s exceeded: {elapsed:.1f} s"
    _report(6, f"10 seeds, worst trajectory minimum {worst_min:.3e}, "
               f"all mass audits within tolerance ({elapsed:.1f}s)")


def test_criterion_8_boundary_layer_geometry():
    """Modified approximants exact on faces; layer measure and distance
    bounds match their closed forms."""
    start = time.perf_counter()

    # (a) strongly quasipositive target, alternating approximants
    layer = BoundaryLayer(eps=0.5, mode="metric", hi=(1.0,))

    def family(m):
        return lambda p, m=m: p[:, 0] + ((-1.0) ** m) / m

    levels = range(1, 7)
    study = approximation_experiment(
        lambda p: p[:, 0], family,
        [0.4 / m for m in levels], [0.2 / m for m in levels], layer)
    assert np.all(study.boundary_min >= 0.0)
    assert np.all(np.diff(study.modified_error) < 0.0)
    assert study.modified_error[-1] < study.modified_error[0] / 4.0

    # (b) unit-cube layer measure: closed form vs Monte Carlo, 3 sigma
    for dim in (2, 3):
        cube = BoundaryMeasure((1.0,) * dim)
        for x in (0.1, 0.25, 0.5):
            est, hw = cube.estimate(x)
            closed = 1.0 - (1.0 - min(x, 1.0)) ** dim
            assert abs(est - closed) <= 3.0 * hw, (dim, x, est, closed)

    # (c) nonlinear-section members sit within eps^(2/dim) of a face
    for dim in (2, 3):
        for eps in (0.5, 0.1):
            members = sample_members(
                BoundaryLayer(eps=eps, mode="nonlinear", dim=dim),
                10_000, seed=0)
            worst = float(members.min(axis=1).max())
            bound = eps ** (2.0 / dim)
            assert worst <= bound * (1.0 + 1e-12), (dim, eps, worst, bound)

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"budget 60 s exceeded: {elapsed:.1f} s"
    _report(8, f"exact face repair, cube measure within 3 sigma, distance "
               f"bound for 10^4 members at two widths ({elapsed:.1f}s)")


SIM_CFG = """\
[domain]
extent = 2.0
species = 1
initial = cosine:0.5,0.4,1

[grid]
nodes = 31
horizon = 0.5
steps = 60

[reaction]
name = fisher-kpp
diffusion = 0.05

[wrapper]
eps = 0.2
"""

LEARN_CFG = """\
[domain]
extent = 1.0
species = 1
initials = ramp:0.1,1.1; constant:0.4

[grid]
nodes = 21
horizon = 0.2
steps = 16

[reaction]
name = fisher-kpp
diffusion = 0.02
widths = 1,4,1

[schedule]
alpha = 2.0
beta = 1.0
gamma = 0.5
lam0 = 10.0
levels = 2

[measurement]
kind = subsample
strides = 2

[optimizer]
step = 0.05
max_iters = 30
sup_points = 64
"""

RATES_CFG = "[schedule]\nlevels = 4,8,16\n"


def test_criterion_9_cli_reruns_are_byte_identical(tmp_path):
    """Each subcommand, run twice with the same config and seed, writes
    the same bytes into every CSV."""
    start = time.perf_counter()
    sim = tmp_path / "sim.cfg"
    sim.write_text(SIM_CFG)
    lrn = tmp_path / "learn.cfg"
    lrn.write_text(LEARN_CFG)
    rts = tmp_path / "rates.cfg"
    rts.write_text(RATES_CFG)

    commands = {
        "simulate": ["simulate", "--config", str(sim)],
        "check": ["check", "--config", str(sim)],
        "wrap-rates": ["wrap-rates", "--config", str(rts)],
        "quasipos": ["quasipos"],
        "transition": ["transition"],
        "learn": ["learn", "--config", str(lrn)],
        "convergence-study": ["convergence-study"],
    }
    compared = 0
    for name, argv in commands.items():
        out1 = tmp_path / f"{name}-a"
        out2 = tmp_path / f"{name}-b"
        assert main(argv + ["--out", str(out1), "--seed", "0"]) == 0, name
        assert main(argv + ["--out", str(out2), "--seed", "0"]) == 0, name
        files = sorted(os.listdir(out1))
        assert files == sorted(os.listdir(out2)), name
        assert any(f.endswith(".csv") for f in files), name
        for fname in files:
            b1 = (out1 / fname).read_bytes()
            b2 = (out2 / fname).read_bytes()
            assert b1 == b2, f"{name}/{fname} differs between reruns"
            compared += 1
    elapsed = time.perf_counter() - start
    _report(9, f"7 subcommands, {compared} files byte-identical on rerun "
               f"({elapsed:.1f}s)")


def test_criterion_7_identification_error_shrinks_across_levels():
    """Fisher-KPP toy with three trajectories covering the reaction box:
    sup error of the learned term is nonincreasing over the levels and
    ends below 0.05. This is the long test; the three level solves take
    about eight minutes together."""
    start = time.perf_counter()
    fisher = make_reaction("fisher-kpp")
    grid = SpaceTimeGrid(1.0, 41, 0.75, 60)
    x = grid.axis(0)
    u0s = np.stack([
        (0.1 + 1.1 * x)[None],
        np.full((1, 41), 0.05),
        np.full((1, 41), 1.3),
    ])
    scheds = make_schedule(2.0, 1.0, 0.5, levels=(1, 2, 3),
                           lam0=300.0, mu0=10.0)
    ops = [MeasurementOperator("subsample", stride=s) for s in (4, 2, 1)]
    rows, _ = identification_sweep(
        fisher, 0.02, u0s, grid, scheds, ops, (1, 16, 1),
        seed=0, step=0.05, max_iters=8000, sup_points=1024, lipschitz=3.0)
    sups = [row.sup_error for row in rows]
    assert all(b <= a for a, b in zip(sups, sups[1:])), sups
    assert sups[-1] < 0.05, sups
    elapsed = time.perf_counter() - start
    assert elapsed < 1800.0, f"budget 30 min exceeded: {elapsed:.0f} s"
    _report(7, "sup errors " + " -> ".join(f"{s:.4f}" for s in sups)
               + f", final < 0.05 ({elapsed:.0f}s)")
