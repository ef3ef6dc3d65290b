"""Wrapping Lipschitz reaction terms into physically consistent ones.

The wrapped term replaces each component f_n by

    fbar_n(u) = (P_+(f_n(u)) - f_n(u)) * chi(u_n) + f_n(u)
              = f_n(u) - P_-(f_n(u)) * chi(u_n),

where P_+ / P_- are the positive/negative parts (f = P_+ f + P_- f) and
chi is a smooth cutoff equal to 1 on [0, eps - delta] and 0 above
eps + delta. On the face u_n = 0 the cutoff is exactly 1, so
fbar_n = P_+(f_n) there: quasipositivity holds by construction, with no
tolerance. Away from the cutoff support fbar_n = f_n bit-exactly.

The construction keeps the other consistency conditions with explicit
constants (weights c_n supplied, default all ones, L a Lipschitz bound of
the base term, beta_n = |f_n(0)|):

    mass control   K_0 = sum_n c_n P_+(f_n(0)),  K_1 = L sqrt(N) sum_n c_n,
    growth         K   = 4 max(L, max_n |f_n(0)|),
    local Lipschitz on a ball of radius M:
                   L_M = (L M + max_n beta_n) sup|chi'| + 2 L.

The almost-everywhere gradient of the wrapped term is

    grad fbar_n = -1_{f_n(u) < 0} chi(u_n) grad f_n
                  - P_-(f_n(u)) chi'(u_n) e_n^T + grad f_n,

with the convention that the indicator is false at the kink f_n(u) = 0.

Level-indexed schedules eps_m = m^{-gamma} keep approximation rates: if
the target is strictly quasipositive with rate alpha (sup of |P_- f_n|
over the layer {|u_n| <= eps} decays like eps^alpha) and the raw
approximants converge like m^{-beta}, the wrapped approximants converge
like m^{-min(alpha*gamma, beta)}; gamma = beta/alpha recovers the full
rate beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rdlearn._sampling import as_box, sup_sample
from rdlearn.reaction import MLPReaction, ReactionTerm, _atleast_batch
from rdlearn.transition import TransitionFunction, build_mollified_heaviside


@dataclass(frozen=True)
class ConsistencyConstants:
    """Derived mass-control and growth constants of a wrapped term."""

    K0: float
    K1: float | None
    growth_K: float | None
    lipschitz: float | None
    label: str  # "certified" | "sampled" | "unavailable"


class ConsistentReaction(ReactionTerm):
    """A reaction term wrapped for physical consistency.

    Use `wrap` to construct. `chi` may be one TransitionFunction shared by
    all components or a sequence of one per component.
    """

    def __init__(self, base: ReactionTerm, chi, c=None, lipschitz=None,
                 lipschitz_label=None):
        self.base = base
        self.n_species = base.n_species
        self.variant = base.variant
        if isinstance(chi, TransitionFunction):
            self.chi_list = (chi,) * self.n_species
        else:
            self.chi_list = tuple(chi)
            if len(self.chi_list) != self.n_species:
                raise ValueError(
                    f"need one cutoff per species ({self.n_species}), "
                    f"got {len(self.chi_list)}"
                )
        self.chi = self.chi_list[0]
        self.c = np.ones(self.n_species) if c is None else np.asarray(c, dtype=float)
        if self.c.shape != (self.n_species,) or np.any(self.c <= 0):
            raise ValueError("weights c must be positive, one per species")
        if lipschitz is not None:
            self._lip = float(lipschitz)
            self._lip_label = lipschitz_label or "sampled"
        else:
            cert = base.lipschitz_bound()
            self._lip = cert
            self._lip_label = "certified" if cert is not None else "unavailable"

    # -- evaluation ----------------------------------------------------

    def chi_values(self, u) -> np.ndarray:
        """chi(u_n) per component, matching the batch shape of u."""
        ub, single = _atleast_batch(u, self.n_species)
        out = np.column_stack([chi(ub[:, n]) for n, chi in enumerate(self.chi_list)])
        return out[0] if single else out

    def chi_derivatives(self, u) -> np.ndarray:
        ub, single = _atleast_batch(u, self.n_species)
        out = np.column_stack(
            [chi.derivative(ub[:, n]) for n, chi in enumerate(self.chi_list)]
        )
        return out[0] if single else out

    def eval(self, u):
        ub, single = _atleast_batch(u, self.n_species)
        f = self.base.eval(ub)
        chi_u = self.chi_values(ub)
        out = f - np.minimum(f, 0.0) * chi_u
        return out[0] if single else out

    def jacobian(self, u):
        """Almost-everywhere gradient of the wrapped term.

        Row n is (1 - 1_{f_n<0} chi(u_n)) * grad f_n, with the extra
        rank-one piece -P_-(f_n) chi'(u_n) on the diagonal.
        """
        ub, single = _atleast_batch(u, self.n_species)
        f = self.base.eval(ub)
        J = self.base.jacobian(ub)
        chi_u = self.chi_values(ub)
        dchi = self.chi_derivatives(ub)
        neg = f < 0.0
        scale = 1.0 - neg * chi_u
        out = scale[:, :, None] * J
        diag = np.arange(self.n_species)
        out[:, diag, diag] -= np.minimum(f, 0.0) * dchi
        return out[0] if single else out

    # -- reverse-mode helpers for parameterized bases -------------------

    def value_vjp(self, u, cotangent):
        """(theta_grad, u_grad) of <cotangent, fbar(u)> for an MLP base."""
        self._require_param()
        ub, _ = _atleast_batch(u, self.n_species)
        cot, _ = _atleast_batch(cotangent, self.n_species)
        f = self.base.eval(ub)
        chi_u = self.chi_values(ub)
        scale = 1.0 - (f < 0.0) * chi_u
        theta_grad, u_grad = self.base.vjp(ub, cot * scale)
        u_grad = u_grad - cot * np.minimum(f, 0.0) * self.chi_derivatives(ub)
        return theta_grad, u_grad

    def jac_vjp(self, u, cot_jac, cot_val=None):
        """theta-gradient of <cot_jac, grad fbar(u)> + <cot_val, fbar(u)>."""
        self._require_param()
        ub, single = _atleast_batch(u, self.n_species)
        cot_jac = np.asarray(cot_jac, dtype=float)
        if single:
            cot_jac = cot_jac[None]
        f = self.base.eval(ub)
        chi_u = self.chi_values(ub)
        dchi = self.chi_derivatives(ub)
        neg = f < 0.0
        scale = 1.0 - neg * chi_u
        base_cot_jac = scale[:, :, None] * cot_jac
        diag = np.arange(self.n_species)
        base_cot_val = -(neg * dchi * cot_jac[:, diag, diag])
        if cot_val is not None:
            cv, _ = _atleast_batch(cot_val, self.n_species)
            base_cot_val = base_cot_val + cv * scale
        return self.base.jac_vjp(ub, base_cot_jac, base_cot_val)

    def _require_param(self):
        if not isinstance(self.base, MLPReaction):
            raise TypeError("reverse-mode helpers need a parameterized base")

    # -- derived constants ----------------------------------------------

    @property
    def sup_chi_slope(self) -> float:
        return max(chi.slope_bound for chi in self.chi_list)

    def consistency_constants(self, c=None) -> ConsistencyConstants:
        c = self.c if c is None else np.asarray(c, dtype=float)
        f0 = np.abs(self.base.eval(np.zeros(self.n_species)))
        K0 = float(np.sum(c * np.maximum(self.base.eval(np.zeros(self.n_species)), 0.0)))
        if self._lip is None:
            return ConsistencyConstants(K0, None, None, None, "unavailable")
        L = self._lip
        K1 = float(L * math.sqrt(self.n_species) * np.sum(c))
        K = float(4.0 * max(L, float(np.max(f0))))
        return ConsistencyConstants(K0, K1, K, L, self._lip_label)

    def local_lipschitz(self, M: float) -> float | None:
        """Certified Lipschitz profile of the wrapped term on a ball."""
        if self._lip is None:
            return None
        beta_max = float(np.max(np.abs(self.base.eval(np.zeros(self.n_species)))))
        return (self._lip * M + beta_max) * self.sup_chi_slope + 2.0 * self._lip

    def lipschitz_bound(self, lo=None, hi=None):
        """Local certified bound on a box (via the ball containing it)."""
        if self._lip is None or lo is None or hi is None:
            return None
        lo, hi = as_box(lo, hi, self.n_species)
        M = float(max(np.linalg.norm(lo), np.linalg.norm(hi)))
        return self.local_lipschitz(M)

    def __repr__(self):
        return f"ConsistentReaction(base={self.base!r}, chi={self.chi!r})"


def wrap(f: ReactionTerm, chi, c=None, lipschitz=None) -> ConsistentReaction:
    """Wrap a Lipschitz reaction term into a physically consistent one.

    Parameters
    ----------
    f : ReactionTerm
        Base term; must be (globally) Lipschitz for the derived constants
        to mean anything. A certified bound is taken from the term when it
        has one (parameterized family); otherwise pass `lipschitz` or the
        constants are flagged unavailable.
    chi : TransitionFunction or sequence
        Cutoff, shared or per component.
    c : array, optional
        Positive mass-control weights c_n, default all ones.
    lipschitz : float, optional
        Externally supplied Lipschitz bound (labelled "sampled").
    """
    return ConsistentReaction(f, chi, c=c, lipschitz=lipschitz)


def wrap_gradient(g: ConsistentReaction, u) -> np.ndarray:
    """Almost-everywhere gradient of a wrapped term at u."""
    return g.jacobian(u)


@dataclass(frozen=True)
class WrapperSchedule:
    """Level-indexed cutoff schedule eps_m = m^(-gamma).

    alpha > 1 is the strict-quasipositivity rate of the target, beta > 0
    the raw approximation rate, gamma in (0, beta] the cutoff exponent.
    The preserved rate is min(alpha*gamma, beta); gamma = beta/alpha
    recovers beta. The general admissibility condition (cutoff slope times
    approximation error vanishing) is strictly wider, but only this
    power-law instantiation is shipped.
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0.0 < self.gamma <= self.beta:
            raise ValueError(
                f"gamma must lie in (0, beta] = (0, {self.beta}], got {self.gamma}"
            )

    def eps(self, m: int) -> float:
        if m < 1:
            raise ValueError(f"level index must be >= 1, got {m}")
        return float(m) ** (-self.gamma)

    def chi(self, m: int, kernel=None) -> TransitionFunction:
        return build_mollified_heaviside(self.eps(m), kernel)

    @property
    def preserved_rate(self) -> float:
        return min(self.alpha * self.gamma, self.beta)


@dataclass
class RateStudy:
    """Per-level sup errors of raw and wrapped approximants."""

    levels: np.ndarray
    eps: np.ndarray
    sup_raw: np.ndarray
    sup_wrapped: np.ndarray
    fitted_slope: float
    preserved_rate: float

    def rows(self):
        for i in range(self.levels.size):
            yield (int(self.levels[i]), float(self.eps[i]),
                   float(self.sup_raw[i]), float(self.sup_wrapped[i]),
                   self.fitted_slope)


def _sup_error(a: ReactionTerm, b: ReactionTerm, points) -> float:
    return float(np.max(np.abs(a.eval(points) - b.eval(points))))


def rate_preservation_study(f_target: ReactionTerm, approx_family,
                            sched: WrapperSchedule, lo, hi, levels,
                            points_per_dim: int = 10_000,
                            seed: int = 0) -> RateStudy:
    """Sup errors of raw vs wrapped approximants across levels.

    approx_family maps a level index m to a ReactionTerm with raw rate
    beta. The fitted least-squares slope of log sup_wrapped against log m
    should not fall short of -min(alpha*gamma, beta) by more than the
    sampling slack.
    """
    levels = [int(m) for m in levels]
    if len(levels) < 3:
        raise ValueError(f"need at least 3 levels for a rate fit, got {len(levels)}")
    lo, hi = as_box(lo, hi, f_target.n_species)
    points = sup_sample(lo, hi, points_per_dim, seed=seed)
    eps = np.array([sched.eps(m) for m in levels])
    raw = np.empty(len(levels))
    wrapped = np.empty(len(levels))
    for i, m in enumerate(levels):
        fm = approx_family(m)
        raw[i] = _sup_error(f_target, fm, points)
        wrapped[i] = _sup_error(f_target, wrap(fm, sched.chi(m)), points)
    keep = wrapped > 1e-14
    if np.count_nonzero(keep) < 2:
        raise ValueError("wrapped sup errors below floor at all levels; nothing to fit")
    slope = float(np.polyfit(np.log(np.array(levels, dtype=float)[keep]),
                             np.log(wrapped[keep]), 1)[0])
    return RateStudy(np.array(levels), eps, raw, wrapped, slope,
                     sched.preserved_rate)


def strict_rate_estimate(f: ReactionTerm, lo, hi, component: int,
                         eps_list, samples: int = 10_000,
                         seed: int = 0) -> float:
    """Fitted strict-quasipositivity rate alpha of one component.

    For each eps, samples the layer {u in box : |u_n| <= eps} densely and
    records sup |P_-(f_n)|; returns the least-squares slope of log sup
    against log eps, ignoring levels whose sup is below 1e-14. If every
    level is below the floor the component is nonnegative near its face
    and the rate is +inf.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise ValueError(f"need at least 3 eps levels, got {len(eps_list)}")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    lo, hi = as_box(lo, hi, f.n_species)
    n = int(component)
    if not 0 <= n < f.n_species:
        raise ValueError(f"component {n} out of range for N={f.n_species}")
    sups = []
    for eps in eps_list:
        clo, chi_ = lo.copy(), hi.copy()
        clo[n] = max(lo[n], -eps)
        chi_[n] = min(hi[n], eps)
        if not clo[n] < chi_[n]:
            sups.append(0.0)
            continue
        pts = sup_sample(clo, chi_, samples, seed=seed)
        sups.append(float(np.max(-np.minimum(f.eval(pts)[:, n], 0.0))))
    sups = np.array(sups)
    keep = sups > 1e-14
    if not np.any(keep):
        return math.inf
    if np.count_nonzero(keep) < 2:
        return math.inf
    return float(np.polyfit(np.log(np.array(eps_list)[keep]), np.log(sups[keep]), 1)[0])
