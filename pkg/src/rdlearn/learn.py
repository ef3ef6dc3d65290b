"""Learning reaction terms from indirect, noisy trajectory measurements.

The problem is all-at-once: diffusion coefficients, the full space-time
state, the initial condition, and the network parameters are decision
variables simultaneously, with the PDE entering as a penalized residual
(same forward-difference / mirror-ghost stencils as the simulator, so a
simulated trajectory inserted as the state has residual zero up to
rounding). Regularization weights follow per-level schedules whose
products vanish along the level list; measurement data lives behind
linear operators with explicit adjoints.

Gradients are assembled by hand from the reverse-mode passes of the
wrapped network (value and Jacobian cotangents) plus the adjoints of the
linear pieces. Nonsmooth spots use fixed one-sided conventions: the
negative-part kink contributes nothing at zero, the parameter norm has
gradient zero at the origin, and the sampled sup picks the lowest argmax
index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from rdlearn._sampling import as_box, box_quadrature, halton_box
from rdlearn.consistency import ConsistentReaction, wrap
from rdlearn.rdsolve import SpaceTimeGrid, StateField
from rdlearn.reaction import MLPReaction


class OptimizationDiverged(RuntimeError):
    """Objective rose past 10x its initial value; `history` holds the trace."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = np.asarray(history)


# ---------------------------------------------------------------------------
# measurement operators


@lru_cache(maxsize=8)
def _cosine_basis(grid: SpaceTimeGrid, modes: int) -> np.ndarray:
    x = grid.axis(0)
    j = np.arange(modes)
    return np.cos(np.outer(x, j) * np.pi / grid.extents[0])


@dataclass(frozen=True)
class MeasurementOperator:
    """Linear observation map on trajectories.

    kind "full" returns the grid state unchanged; "subsample" keeps every
    stride-th node and time step; "fourier" projects each time sample onto
    the first `modes` cosine modes (weighted inner products, so the map
    stays linear and its adjoint is explicit).
    """

    kind: str = "full"
    stride: int = 1
    modes: int | None = None

    def __post_init__(self):
        if self.kind not in ("full", "subsample", "fourier"):
            raise ValueError(
                f"kind must be 'full', 'subsample' or 'fourier', got {self.kind!r}"
            )
        if self.kind == "subsample":
            if int(self.stride) < 1:
                raise ValueError(f"stride must be a positive integer, got {self.stride}")
            object.__setattr__(self, "stride", int(self.stride))
        elif self.stride != 1:
            raise ValueError(f"stride applies to subsample operators only")
        if self.kind == "fourier":
            if self.modes is None or int(self.modes) < 1:
                raise ValueError("fourier operators need modes >= 1")
            object.__setattr__(self, "modes", int(self.modes))
        elif self.modes is not None:
            raise ValueError("modes apply to fourier operators only")

    def apply(self, u: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
        """Measure one trajectory, shape (species, steps+1, nodes)."""
        if self.kind == "full":
            return np.array(u)
        if self.kind == "subsample":
            return np.array(u[:, :: self.stride, :: self.stride])
        phi = _cosine_basis(grid, self.modes)
        return (u * grid.quadrature_weights()) @ phi

    def adjoint(self, y: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
        """Transpose of apply, back onto the full grid."""
        if self.kind == "full":
            return np.array(y)
        if self.kind == "subsample":
            out = np.zeros((y.shape[0], grid.steps + 1, grid.nodes[0]))
            out[:, :: self.stride, :: self.stride] = y
            return out
        phi = _cosine_basis(grid, self.modes)
        return (y @ phi.T) * grid.quadrature_weights()

    def reconstruct(self, y: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
        """Cheap full-grid guess from data, for optimizer warm starts."""
        if self.kind == "full":
            return np.array(y)
        if self.kind == "subsample":
            s = self.stride
            K, M = grid.steps, grid.nodes[0]
            t_obs = np.arange(0, K + 1, s)
            x_obs = np.arange(0, M, s)
            out = np.empty((y.shape[0], K + 1, M))
            for n in range(y.shape[0]):
                tmp = np.empty((len(t_obs), M))
                for a, row in enumerate(y[n]):
                    tmp[a] = np.interp(np.arange(M), x_obs, row)
                for i in range(M):
                    out[n, :, i] = np.interp(np.arange(K + 1), t_obs, tmp[:, i])
            return out
        phi = _cosine_basis(grid, self.modes)
        gram = phi.T @ (grid.quadrature_weights()[:, None] * phi)
        coeff = np.linalg.solve(gram, y.reshape(-1, self.modes).T)
        return (phi @ coeff).T.reshape(y.shape[:-1] + (grid.nodes[0],))


def generate_measurements(truth: StateField, operator: MeasurementOperator,
                          delta: float, seed: int = 0) -> np.ndarray:
    """Measure a trajectory and add Gaussian noise of norm exactly 0.9 delta.

    The rescaling keeps the noise strictly inside the radius the theory
    budgets for, never on it; delta = 0 returns the clean measurement.
    """
    if delta < 0:
        raise ValueError(f"noise radius must be nonnegative, got {delta}")
    clean = operator.apply(truth.values, truth.grid)
    if delta == 0.0:
        return clean
    noise = np.random.default_rng(seed).standard_normal(clean.shape)
    noise *= 0.9 * delta / np.linalg.norm(noise)
    return clean + noise


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class LevelSchedule:
    """Regularization weights and cutoff width for one level m."""

    m: int
    eps: float
    lam: float
    mu: float
    nu: float
    delta: float
    psi: float
    alpha: float
    beta: float
    gamma: float
    q: float = 2.0
    r: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"level must be >= 1, got {self.m}")
        for name in ("eps", "lam", "mu", "psi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.nu < 0 or self.delta < 0:
            raise ValueError("nu and delta must be nonnegative")
        if not (self.q > 1 and self.r > 1):
            raise ValueError(f"exponents q, r must exceed 1, got q={self.q}, r={self.r}")
        if self.q > self.p:
            raise ValueError(f"need q <= p, got q={self.q}, p={self.p}")

    @property
    def preserved_rate(self) -> float:
        return min(self.alpha * self.gamma, self.beta)


def make_schedule(alpha: float, beta: float, gamma: float, levels=(1, 2, 3),
                  q: float = 2.0, r: float = 2.0, p: float = 2.0,
                  delta_rule=None, psi_rule=None,
                  lam0: float = 1.0, mu0: float = 1.0,
                  nu0: float = 1.0) -> list[LevelSchedule]:
    """One admissible weight schedule per level.

    lam grows like m to the power preserved-rate * q / 2, mu like the
    inverse noise radius to the r/2, nu decays at least like 1/m and
    faster once the parameter-bound rule psi grows. The vanishing-product
    requirements are checked numerically: each product must strictly
    decrease along the levels and end below half its initial value.
    The prefactors lam0/mu0/nu0 tune constants the theory leaves free.
    """
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    if not 0 < gamma < beta:
        raise ValueError(
            f"gamma must satisfy 0 < gamma < beta, got gamma={gamma}, beta={beta}"
        )
    levels = [int(m) for m in levels]
    if len(levels) < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    if levels[0] < 1:
        raise ValueError("levels start at 1")
    if delta_rule is None:
        delta_rule = lambda m: 2.0 ** -m
    if psi_rule is None:
        psi_rule = lambda m: float(m * m)
    rate = min(alpha * gamma, beta)
    out = []
    for m in levels:
        delta = float(delta_rule(m))
        if delta <= 0:
            raise ValueError(
                f"delta_rule must return positive noise radii, got {delta} at "
                f"level {m}; the data-misfit weight scales like delta^(-r/2)"
            )
        psi = float(psi_rule(m))
        out.append(LevelSchedule(
            m=m, eps=float(m) ** -gamma,
            lam=lam0 * float(m) ** (rate * q / 2.0),
            mu=mu0 * delta ** (-r / 2.0),
            nu=nu0 * min(1.0 / m, 1.0 / (psi * m)),
            delta=delta, psi=psi,
            alpha=alpha, beta=beta, gamma=gamma, q=q, r=r, p=p,
        ))
    if len(out) > 1:
        products = {
            "lam * m^(-rate q)": [s.lam * s.m ** (-rate * q) for s in out],
            "mu * delta^r": [s.mu * s.delta ** r for s in out],
            "nu * psi": [s.nu * s.psi for s in out],
        }
        for name, vals in products.items():
            if any(b >= a for a, b in zip(vals, vals[1:])) or not vals[-1] < 0.5 * vals[0]:
                raise ValueError(f"schedule product {name} does not vanish: {vals}")
        if any(b.lam <= a.lam or b.mu <= a.mu or b.nu >= a.nu
               for a, b in zip(out, out[1:])):
            raise ValueError("weights must have lam, mu increasing and nu decreasing")
    return out


# ---------------------------------------------------------------------------
# discrete operators shared with the residual


def _laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """Mirror-ghost second difference along the last axis."""
    out = np.empty_like(u)
    out[..., 1:-1] = u[..., :-2] - 2.0 * u[..., 1:-1] + u[..., 2:]
    out[..., 0] = 2.0 * (u[..., 1] - u[..., 0])
    out[..., -1] = 2.0 * (u[..., -2] - u[..., -1])
    return out / h ** 2


def _laplacian_adjoint(w: np.ndarray, h: float) -> np.ndarray:
    """Transpose of _laplacian (the mirror rows make it nonsymmetric)."""
    out = np.zeros_like(w)
    out[..., 1:-1] = w[..., :-2] - 2.0 * w[..., 1:-1] + w[..., 2:]
    out[..., 1] += w[..., 0]
    out[..., -2] += w[..., -1]
    out[..., 0] = -2.0 * w[..., 0] + w[..., 1]
    out[..., -1] = w[..., -2] - 2.0 * w[..., -1]
    return out / h ** 2


def _powered(s: float, half_exponent: float):
    """(s^e, e s^(e-1)) with the 0^negative convention fixed to zero."""
    if s <= 0.0:
        return 0.0, 0.0
    return s ** half_exponent, half_exponent * s ** (half_exponent - 1.0)


# ---------------------------------------------------------------------------
# the problem


class AllAtOnceProblem:
    """Objective and gradient of the discretized joint recovery problem.

    Decision variables, packed flat in this order: diffusion coefficients
    D (trajectories x species, clipped to d_min from below by the
    optimizer), states u (trajectories x species x time x nodes), initial
    conditions u0, network parameters theta. Everything else (data,
    operator, schedule, quadrature rules on the reaction box) is fixed.
    """

    def __init__(self, grid: SpaceTimeGrid, widths, chi, schedule: LevelSchedule,
                 operator: MeasurementOperator, data, *, c=None,
                 box_lo=None, box_hi=None, d_min: float = 1e-6,
                 l2_nodes: int = 129, sup_points: int | None = None,
                 sup_seed: int = 0):
        if grid.ndim != 1:
            raise ValueError("learning problems are posed on 1D grids")
        self.grid = grid
        self.widths = tuple(int(w) for w in widths)
        self.n_species = self.widths[0]
        self.chi = chi
        self.schedule = schedule
        self.operator = operator
        self.d_min = float(d_min)

        data = np.asarray(data, dtype=float)
        single = operator.apply(
            np.zeros((self.n_species, grid.steps + 1, grid.nodes[0])), grid
        ).shape
        if data.shape == single:
            data = data[None]
        if data.shape[1:] != single:
            raise ValueError(
                f"data shape {data.shape} does not end with one measurement {single}"
            )
        self.data = data
        self.n_traj = data.shape[0]

        self.c = np.ones(self.n_species) if c is None else np.asarray(c, dtype=float)
        if self.c.shape != (self.n_species,) or np.any(self.c <= 0):
            raise ValueError("weights c must be positive, one per species")

        lo = np.zeros(self.n_species) if box_lo is None else box_lo
        hi = np.full(self.n_species, 1.2) if box_hi is None else box_hi
        self.box_lo, self.box_hi = as_box(lo, hi, self.n_species)
        self._l2_pts, self._l2_w = box_quadrature(
            self.box_lo, self.box_hi, nodes_per_dim=l2_nodes
        )
        count = (4096 * self.n_species) if sup_points is None else int(sup_points)
        self._sup_pts = halton_box(count, self.box_lo, self.box_hi, seed=sup_seed)

        self._mlp = MLPReaction(self.widths,
                                np.zeros(MLPReaction.parameter_count(self.widths)))
        K, M = grid.steps, grid.nodes[0]
        L, N = self.n_traj, self.n_species
        self._shapes = ((L, N), (L, N, K + 1, M), (L, N, M),
                        (self._mlp.theta.size,))
        self._sizes = [int(np.prod(s)) for s in self._shapes]

    # ------------------------------------------------------------- packing

    @property
    def n_variables(self) -> int:
        return sum(self._sizes)

    def pack(self, D, u, u0, theta) -> np.ndarray:
        parts = [np.asarray(a, dtype=float).reshape(-1)
                 for a in (D, u, u0, theta)]
        for part, size in zip(parts, self._sizes):
            if part.size != size:
                raise ValueError(f"variable block of size {part.size}, expected {size}")
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_variables,):
            raise ValueError(f"expected {self.n_variables} packed variables, got {x.shape}")
        out, start = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            out.append(x[start:start + size].reshape(shape))
            start += size
        return tuple(out)

    def reaction(self, theta) -> ConsistentReaction:
        return wrap(self._mlp.with_theta(np.asarray(theta, dtype=float)), self.chi,
                    c=self.c)

    def initial_iterate(self, seed: int = 0) -> np.ndarray:
        """Defaults: data-driven state, floor diffusion, small random theta."""
        L, N = self.n_traj, self.n_species
        u = np.stack([self.operator.reconstruct(self.data[l], self.grid)
                      for l in range(L)])
        u0 = u[:, :, 0].copy()
        D = np.full((L, N), self.d_min)
        theta = 0.05 * np.random.default_rng(seed).standard_normal(self._sizes[3])
        return self.pack(D, u, u0, theta)

    # ----------------------------------------------------------- objective

    def objective(self, x) -> float:
        return float(sum(self.objective_terms(x).values()))

    def objective_terms(self, x) -> dict:
        terms, _ = self._terms(x, want_grad=False)
        return terms

    def gradient(self, x) -> np.ndarray:
        _, grad = self._terms(x, want_grad=True)
        return grad

    def _terms(self, x, want_grad: bool):
        D, u, u0, theta = self.unpack(x)
        sched = self.schedule
        grid = self.grid
        dt, h = grid.dt, grid.h[0]
        K, M = grid.steps, grid.nodes[0]
        L, N = self.n_traj, self.n_species
        w = grid.quadrature_weights()
        tw = np.full(K + 1, dt)
        tw[0] = tw[-1] = dt / 2.0
        fbar = self.reaction(theta)

        gD = np.zeros_like(D)
        gu = np.zeros_like(u)
        gu0 = np.zeros_like(u0)
        gth = np.zeros_like(theta)
        terms = {}

        # base regularization R0 = |D|^2 + |u|_V^p + |u0|_H^2
        terms["diffusion_reg"] = float(np.sum(D * D))
        diff = np.diff(u, axis=-1)
        s_v = float(np.einsum("k,lnkm,m->", tw, u * u, w)
                    + np.einsum("k,lnkm->", tw, diff * diff) / h)
        v_val, v_slope = _powered(s_v, sched.p / 2.0)
        terms["state_reg"] = v_val
        terms["initial_reg"] = float(np.einsum("lnm,m->", u0 * u0, w))
        if want_grad:
            gD += 2.0 * D
            gu += v_slope * 2.0 * tw[None, None, :, None] * u * w
            dadj = np.zeros_like(u)
            dadj[..., :-1] -= diff
            dadj[..., 1:] += diff
            gu += v_slope * 2.0 * tw[None, None, :, None] * dadj / h
            gu0 += 2.0 * u0 * w

        # nu |theta|
        tn = float(np.linalg.norm(theta))
        terms["theta_reg"] = sched.nu * tn
        if want_grad and tn > 0.0:
            gth += sched.nu * theta / tn

        # |fbar|^2 on the reaction box, fixed trapezoid rule
        fq = fbar.eval(self._l2_pts)
        terms["reaction_l2"] = float(np.sum(self._l2_w * np.sum(fq * fq, axis=1)))
        if want_grad:
            tg, _ = fbar.value_vjp(self._l2_pts, 2.0 * self._l2_w[:, None] * fq)
            gth += tg

        # sampled sup of |grad fbar| on the box (Frobenius, lowest argmax)
        J = fbar.jacobian(self._sup_pts)
        norms = np.sqrt(np.sum(J * J, axis=(1, 2)))
        idx = int(np.argmax(norms))
        terms["reaction_grad_sup"] = float(norms[idx])
        if want_grad and norms[idx] > 0.0:
            gth += fbar.jac_vjp(self._sup_pts[idx][None], (J[idx] / norms[idx])[None])

        # trajectory blocks
        res_total = 0.0
        init_total = 0.0
        mis_total = 0.0
        for l in range(L):
            ul = u[l]
            pts = ul[:, :-1].reshape(N, K * M).T
            fvals = fbar.eval(pts).T.reshape(N, K, M)
            lap_next = _laplacian(ul[:, 1:], h)
            res = (ul[:, 1:] - ul[:, :-1]) / dt - D[l][:, None, None] * lap_next - fvals
            s_res = float(dt * np.einsum("nkm,m->", res * res, w))
            r_val, r_slope = _powered(s_res, sched.q / 2.0)
            res_total += sched.lam * r_val

            d0 = ul[:, 0] - u0[l]
            init_total += sched.lam * float(np.einsum("nm,m->", d0 * d0, w))

            ku = self.operator.apply(ul, grid)
            dmis = ku - self.data[l]
            s_y = float(np.sum(dmis * dmis))
            y_val, y_slope = _powered(s_y, sched.r / 2.0)
            mis_total += sched.mu * y_val

            if want_grad:
                G = sched.lam * r_slope * 2.0 * dt * res * w
                gu[l][:, 1:] += G / dt - D[l][:, None, None] * _laplacian_adjoint(G, h)
                gu[l][:, :-1] -= G / dt
                tg, ug = fbar.value_vjp(pts, -G.reshape(N, K * M).T)
                gth += tg
                gu[l][:, :-1] += ug.T.reshape(N, K, M)
                gD[l] -= np.einsum("nkm,nkm->n", G, lap_next)

                gu[l][:, 0] += 2.0 * sched.lam * d0 * w
                gu0[l] -= 2.0 * sched.lam * d0 * w

                gy = sched.mu * y_slope * 2.0 * dmis
                gu[l] += self.operator.adjoint(gy, grid)

        terms["residual"] = res_total
        terms["init_misfit"] = init_total
        terms["data_misfit"] = mis_total

        for name, value in terms.items():
            if not math.isfinite(value):
                raise FloatingPointError(f"objective term '{name}' is not finite")
        if not want_grad:
            return terms, None
        return terms, self.pack(gD, gu, gu0, gth)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class LevelResult:
    """Outcome of one level solve.

    state_containment is the fraction of recovered state values inside the
    reaction box; the learned term is only identified where states visit,
    so values well below 1 flag an extrapolating fit.
    """

    x: np.ndarray = field(repr=False)
    D: np.ndarray
    u: np.ndarray = field(repr=False)
    u0: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    history: np.ndarray = field(repr=False)
    terms: dict
    converged: bool
    state_containment: float

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    @property
    def objective(self) -> float:
        return float(self.history[-1])


def solve_level(prob: AllAtOnceProblem, x0=None, *, step: float = 0.02,
                max_iters: int = 5000, tol: float = 1e-8, patience: int = 50,
                seed: int = 0, keep_terms: bool = False) -> LevelResult:
    """Minimize one level with adaptive-moment steps and a monotone guard.

    Every proposed step is backtracked (halving) until the objective does
    not increase by more than 1e-12, diffusion coefficients are projected
    onto [d_min, inf) and the parameter vector onto the psi ball after
    every accepted step. Stops when the relative decrease over `patience`
    iterations falls below `tol`, when the step underflows, or at
    max_iters; an objective above 10x its initial value aborts.
    """
    x = prob.initial_iterate(seed) if x0 is None else np.array(x0, dtype=float)
    obj = prob.objective(x)
    history = [obj]
    terms_history = [prob.objective_terms(x)] if keep_terms else None
    b1, b2, tiny = 0.9, 0.999, 1e-8
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    d_size = prob._sizes[0]
    converged = False

    for it in range(1, max_iters + 1):
        g = prob.gradient(x)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        direction = (m / (1.0 - b1 ** it)) / (np.sqrt(v / (1.0 - b2 ** it)) + tiny)
        s = step
        stalled = False
        while True:
            x_new = x - s * direction
            x_new[:d_size] = np.maximum(x_new[:d_size], prob.d_min)
            th = x_new[-prob._sizes[3]:]
            tn = np.linalg.norm(th)
            if tn > prob.schedule.psi:
                th *= prob.schedule.psi / tn
            obj_new = prob.objective(x_new)
            if obj_new <= obj + 1e-12:
                break
            s *= 0.5
            if s < step * 2.0 ** -40:
                stalled = True
                break
        if stalled:
            break
        x, obj = x_new, obj_new
        history.append(obj)
        if keep_terms:
            terms_history.append(prob.objective_terms(x))
        if obj > 10.0 * history[0]:
            raise OptimizationDiverged(
                f"objective rose to {obj:.4g}, over 10x its initial value", history
            )
        if it > patience:
            past = history[-patience - 1]
            if past - obj < tol * max(1.0, abs(past)):
                converged = True
                break

    D, u, u0, theta = prob.unpack(x)
    inside = ((u >= prob.box_lo[None, :, None, None])
              & (u <= prob.box_hi[None, :, None, None]))
    result = LevelResult(x=x, D=D, u=u, u0=u0, theta=theta,
                         history=np.asarray(history),
                         terms=prob.objective_terms(x), converged=converged,
                         state_containment=float(inside.mean()))
    if keep_terms:
        result.terms_history = terms_history
    return result


# ---------------------------------------------------------------------------
# the identifiable-toy level sweep


@dataclass
class SweepRow:
    """Per-level summary of an identification sweep."""

    m: int
    objective: float
    residual_term: float
    misfit_term: float
    sup_error: float
    d_error: float

    def as_tuple(self):
        return (self.m, self.objective, self.residual_term,
                self.misfit_term, self.sup_error, self.d_error)


def identification_sweep(f_true, d_true: float, u0_profiles, grid: SpaceTimeGrid,
                         schedules, operators, widths, *, box_lo=None,
                         box_hi=None, seed: int = 0, step: float = 0.05,
                         max_iters: int = 8000, sup_points: int = 1024,
                         error_nodes: int = 481, chi_builder=None,
                         lipschitz=None):
    """Recover a known scalar reaction at increasing measurement quality.

    For each level: simulate the truth from every initial profile, measure
    through that level's operator, perturb with noise of radius delta(m),
    solve the all-at-once problem over all trajectories jointly, and score
    the learned wrapped reaction against the true one in sup norm over the
    reaction box. Good recovery across the whole box needs the trajectory
    family to cover it; a single profile identifies the reaction only on
    the states it visits. Returns (rows, results).
    """
    from rdlearn.rdsolve import DiffusionSpec, solve
    from rdlearn.transition import build_mollified_heaviside

    if chi_builder is None:
        chi_builder = build_mollified_heaviside
    if len(schedules) != len(operators):
        raise ValueError("one operator per schedule level")
    n = widths[0]
    u0_profiles = np.asarray(u0_profiles, dtype=float)
    if u0_profiles.ndim == 2:
        u0_profiles = u0_profiles[None]
    D_true = DiffusionSpec.uniform(d_true, n)
    truths = [solve(f_true, D_true, u0, grid, lipschitz=lipschitz)
              for u0 in u0_profiles]

    lo = np.zeros(n) if box_lo is None else np.asarray(box_lo, dtype=float)
    hi = np.full(n, 1.2) if box_hi is None else np.asarray(box_hi, dtype=float)
    probe = np.linspace(lo[0], hi[0], error_nodes)[:, None] if n == 1 else \
        halton_box(4096 * n, lo, hi, seed=1)
    true_vals = f_true.eval(probe)

    rows, results = [], []
    for sched, op in zip(schedules, operators):
        y = np.stack([
            generate_measurements(t, op, sched.delta, seed=seed + sched.m + 977 * l)
            for l, t in enumerate(truths)
        ])
        prob = AllAtOnceProblem(grid, widths, chi_builder(sched.eps), sched, op, y,
                                box_lo=lo, box_hi=hi, sup_points=sup_points)
        res = solve_level(prob, step=step, max_iters=max_iters, seed=seed)
        learned = prob.reaction(res.theta)
        sup_err = float(np.max(np.abs(learned.eval(probe) - true_vals)))
        d_err = float(np.max(np.abs(res.D - d_true)))
        rows.append(SweepRow(sched.m, res.objective, res.terms["residual"],
                             res.terms["data_misfit"], sup_err, d_err))
        results.append(res)
    return rows, results
