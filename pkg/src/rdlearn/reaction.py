"""Reaction terms f: R^N -> R^N and physical-consistency condition checks.

Two families are provided. The analytic catalog carries classic models
(logistic growth, predator-prey, an activator-substrate system) with exact
Jacobians. The parameterized family is a fully connected tanh network with
an explicit flat parameter vector; value, Jacobian, and the reverse-mode
accumulation passes needed by the learning module are written out by hand
(no autodiff framework), including the second-order pass that
backpropagates a cotangent of the Jacobian itself to the parameters.

Condition checks are sampling-based and report falsifiable verdicts:

    (L) Lipschitz: max difference quotient over sampled pairs, plus a
        certified layer-norm product bound for the parameterized family,
    (Q) quasipositivity: f_n(u) >= 0 on sampled faces {u >= 0, u_n = 0},
        checked with no tolerance,
    (M) mass control: sum_n c_n f_n(u) <= K_0 + K_1 sum_n u_n on the
        nonnegative orthant,
    (G) growth: ||f(u)|| <= K (1 + ||u||^2).

A sampling verdict is "no violation found", never a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rdlearn._sampling import as_box, halton_box


def _atleast_batch(u, n_species):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        if u.shape[0] != n_species:
            raise ValueError(f"expected point in R^{n_species}, got shape {u.shape}")
        return u[None, :], True
    if u.ndim == 2:
        if u.shape[1] != n_species:
            raise ValueError(
                f"expected batch of points in R^{n_species}, got shape {u.shape}"
            )
        return u, False
    raise ValueError(f"expected 1D point or 2D batch, got shape {u.shape}")


class ReactionTerm:
    """Base type: species count, evaluation rule, optional Jacobian rule.

    Subclasses set `variant` to "analytic" or "parameterized". `eval` and
    `jacobian` accept a single point (N,) or a batch (S, N) and return
    matching shapes ((N,)/(S, N) and (N, N)/(S, N, N)).
    """

    n_species: int
    variant: str = "analytic"

    def eval(self, u):
        raise NotImplementedError

    def __call__(self, u):
        return self.eval(u)

    def jacobian(self, u):
        """Central-difference fallback, step 1e-5 * (1 + |u_j|) per column."""
        ub, single = _atleast_batch(u, self.n_species)
        steps = 1e-5 * (1.0 + np.abs(ub))
        cols = []
        for j in range(self.n_species):
            e = np.zeros_like(ub)
            e[:, j] = steps[:, j]
            cols.append((self.eval(ub + e) - self.eval(ub - e)) / (2.0 * steps[:, j:j + 1]))
        jac = np.stack(cols, axis=-1)
        return jac[0] if single else jac

    def lipschitz_bound(self, lo=None, hi=None):
        """Certified Lipschitz bound if one is available, else None."""
        return None

    def sampled_lipschitz(self, lo, hi, samples: int = 10_000, seed: int = 0) -> float:
        """Max difference quotient over quasi-random point pairs in a box."""
        lo, hi = as_box(lo, hi, self.n_species)
        pts = halton_box(2 * samples, lo, hi, seed=seed)
        u, v = pts[:samples], pts[samples:]
        num = np.linalg.norm(self.eval(u) - self.eval(v), axis=1)
        den = np.linalg.norm(u - v, axis=1)
        keep = den > 1e-12
        return float(np.max(num[keep] / den[keep]))


class AnalyticReaction(ReactionTerm):
    """Catalog entry with closed-form value and Jacobian rules."""

    variant = "analytic"

    def __init__(self, name, n_species, fn, jac=None):
        self.name = name
        self.n_species = n_species
        self._fn = fn
        self._jac = jac

    def eval(self, u):
        ub, single = _atleast_batch(u, self.n_species)
        out = self._fn(ub)
        return out[0] if single else out

    def jacobian(self, u):
        if self._jac is None:
            return super().jacobian(u)
        ub, single = _atleast_batch(u, self.n_species)
        out = self._jac(ub)
        return out[0] if single else out

    def __repr__(self):
        return f"AnalyticReaction({self.name!r}, N={self.n_species})"


def _fisher_kpp():
    def fn(u):
        return u * (1.0 - u)

    def jac(u):
        return (1.0 - 2.0 * u)[:, :, None]

    return AnalyticReaction("fisher-kpp", 1, fn, jac)


def _lotka_volterra():
    def fn(u):
        u1, u2 = u[:, 0], u[:, 1]
        return np.stack([u1 * (1.0 - u2), u2 * (u1 - 1.0)], axis=1)

    def jac(u):
        u1, u2 = u[:, 0], u[:, 1]
        out = np.empty((u.shape[0], 2, 2))
        out[:, 0, 0] = 1.0 - u2
        out[:, 0, 1] = -u1
        out[:, 1, 0] = u2
        out[:, 1, 1] = u1 - 1.0
        return out

    return AnalyticReaction("lotka-volterra", 2, fn, jac)


def _gray_scott(feed=0.04, kill=0.06):
    def fn(u):
        a, s = u[:, 0], u[:, 1]
        r = a * s * s
        return np.stack([-r + feed * (1.0 - a), r - (feed + kill) * s], axis=1)

    def jac(u):
        a, s = u[:, 0], u[:, 1]
        out = np.empty((u.shape[0], 2, 2))
        out[:, 0, 0] = -s * s - feed
        out[:, 0, 1] = -2.0 * a * s
        out[:, 1, 0] = s * s
        out[:, 1, 1] = 2.0 * a * s - (feed + kill)
        return out

    return AnalyticReaction("gray-scott", 2, fn, jac)


_CATALOG = {
    "fisher-kpp": _fisher_kpp,
    "lotka-volterra": _lotka_volterra,
    "gray-scott": _gray_scott,
}


def make_reaction(name: str, **params) -> ReactionTerm:
    """Catalog lookup by name: fisher-kpp | lotka-volterra | gray-scott.

    gray-scott accepts feed/kill rate overrides.
    """
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise ValueError(
            f"unknown reaction {name!r}; catalog: {sorted(_CATALOG)}"
        ) from None
    return factory(**params)


class MLPReaction(ReactionTerm):
    """Fully connected tanh network u -> f(u) with a flat parameter vector.

    Widths run input to output and both ends must equal the species count.
    The last layer is linear; hidden activations are tanh, so every
    instance is globally Lipschitz with certified constant
    prod_i ||W_i||_2 (tanh slope bound 1).

    Parameters
    ----------
    widths : sequence of int
        Layer widths, e.g. (N, 16, 16, N).
    theta : ndarray
        Flat parameter vector, weights then bias per layer.
    level : int, optional
        Level index m when the instance belongs to a level-indexed family.
    psi_bound : float, optional
        Parameter-norm bound psi(m). When `bound_active` is set,
        construction enforces ||theta|| <= psi_bound.
    """

    variant = "parameterized"

    def __init__(self, widths, theta, level=None, psi_bound=None, bound_active=False):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        if widths[0] != widths[-1]:
            raise ValueError(
                f"reaction maps R^N to R^N; widths {widths} have mismatched ends"
            )
        if any(w < 1 for w in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        self.widths = widths
        self.n_species = widths[0]
        theta = np.ascontiguousarray(np.asarray(theta, dtype=float).ravel())
        if theta.size != self.parameter_count(widths):
            raise ValueError(
                f"theta has {theta.size} entries, architecture {widths} needs "
                f"{self.parameter_count(widths)}"
            )
        theta.flags.writeable = False
        self.theta = theta
        self.level = level
        self.psi_bound = psi_bound
        self.bound_active = bound_active
        if bound_active:
            if psi_bound is None:
                raise ValueError("bound_active requires psi_bound")
            norm = float(np.linalg.norm(theta))
            if norm > psi_bound:
                raise ValueError(
                    f"||theta|| = {norm:.6g} exceeds declared bound psi = {psi_bound:.6g}"
                )
        self._layers = self._unpack(theta)

    @staticmethod
    def parameter_count(widths) -> int:
        return sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))

    def _unpack(self, theta):
        layers = []
        off = 0
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            W = theta[off:off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            b = theta[off:off + n_out]
            off += n_out
            layers.append((W, b))
        return layers

    @classmethod
    def from_seed(cls, widths, seed, scale=1.0, **kw):
        """Random instance: weights ~ N(0, scale^2/fan_in), zero biases."""
        widths = tuple(int(w) for w in widths)
        rng = np.random.default_rng(seed)
        parts = []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            parts.append(rng.normal(0.0, scale / np.sqrt(n_in), size=n_in * n_out))
            parts.append(np.zeros(n_out))
        return cls(widths, np.concatenate(parts), **kw)

    def with_theta(self, theta) -> "MLPReaction":
        """Same architecture and metadata, new parameters."""
        return MLPReaction(self.widths, theta, level=self.level,
                           psi_bound=self.psi_bound, bound_active=False)

    def _forward(self, U):
        acts = [U]
        a = U
        last = len(self._layers) - 1
        for i, (W, b) in enumerate(self._layers):
            z = a @ W.T + b
            if i < last:
                a = np.tanh(z)
                acts.append(a)
        return z, acts

    def eval(self, u):
        ub, single = _atleast_batch(u, self.n_species)
        out, _ = self._forward(ub)
        return out[0] if single else out

    def jacobian(self, u):
        ub, single = _atleast_batch(u, self.n_species)
        _, _, J = self._value_jac_state(ub)[:3]
        return J[0] if single else J

    def value_and_jacobian(self, u):
        ub, single = _atleast_batch(u, self.n_species)
        f, _, J = self._value_jac_state(ub)[:3]
        if single:
            return f[0], J[0]
        return f, J

    def _value_jac_state(self, U):
        """Forward pass carrying df/du alongside the activations.

        Returns (f, acts, J, A_list, Z_list) where A_list[i] = da_i/du and
        Z_list[i] = dz_{i+1}/du; the lists feed the reverse pass below.
        """
        S, N = U.shape
        acts = [U]
        A = np.broadcast_to(np.eye(N), (S, N, N)).copy()
        A_list = [A]
        Z_list = []
        a = U
        last = len(self._layers) - 1
        for i, (W, b) in enumerate(self._layers):
            z = a @ W.T + b
            Z = np.einsum("oi,sij->soj", W, A)
            Z_list.append(Z)
            if i < last:
                a = np.tanh(z)
                acts.append(a)
                s = 1.0 - a * a
                A = s[:, :, None] * Z
                A_list.append(A)
        return z, acts, Z_list[-1], A_list, Z_list

    def vjp(self, u, cotangent):
        """Reverse pass for the value: returns (theta_grad, u_grad).

        theta_grad is d<cotangent, f(u)>/dtheta (flat), u_grad the same
        quantity differentiated in u, shape of the batch.
        """
        ub, single = _atleast_batch(u, self.n_species)
        cot, _ = _atleast_batch(cotangent, self.n_species)
        _, acts = self._forward(ub)
        gW = [None] * len(self._layers)
        gb = [None] * len(self._layers)
        delta = cot
        u_grad = None
        for i in reversed(range(len(self._layers))):
            W, _ = self._layers[i]
            gW[i] = delta.T @ acts[i]
            gb[i] = delta.sum(axis=0)
            a_hat = delta @ W
            if i > 0:
                delta = a_hat * (1.0 - acts[i] ** 2)
            else:
                u_grad = a_hat
        theta_grad = self._pack(gW, gb)
        return theta_grad, (u_grad[0] if single else u_grad)

    def jac_vjp(self, u, cot_jac, cot_val=None):
        """Reverse pass through value and Jacobian simultaneously.

        Computes d(<cot_jac, df/du(u)> + <cot_val, f(u)>)/dtheta. This is
        the second-order pass behind the gradient of sup-norm terms on the
        wrapped Jacobian: the Jacobian forward recursion
        A_{i+1} = (1 - a_{i+1}^2) * (W_i A_i) is itself differentiated in
        reverse, which costs one extra product chain per layer.
        """
        ub, single = _atleast_batch(u, self.n_species)
        if ub.shape[0] == 0:
            return np.zeros_like(self.theta)
        cot_jac = np.asarray(cot_jac, dtype=float)
        if single:
            cot_jac = cot_jac[None]
        if cot_val is None:
            cot_val = np.zeros_like(ub)
        else:
            cot_val, _ = _atleast_batch(cot_val, self.n_species)
        _, acts, _, A_list, Z_list = self._value_jac_state(ub)
        L = len(self._layers)
        gW = [None] * L
        gb = [None] * L
        z_hat = cot_val
        Z_hat = cot_jac
        for i in reversed(range(L)):
            W, _ = self._layers[i]
            gW[i] = z_hat.T @ acts[i] + np.einsum("soj,sij->oi", Z_hat, A_list[i])
            gb[i] = z_hat.sum(axis=0)
            a_hat = z_hat @ W
            A_hat = np.einsum("oi,soj->sij", W, Z_hat)
            if i > 0:
                a_i = acts[i]
                s = 1.0 - a_i * a_i
                Z_prev = Z_list[i - 1]
                z_hat = a_hat * s + np.einsum("sij,sij->si", A_hat, Z_prev) * (-2.0 * a_i * s)
                Z_hat = s[:, :, None] * A_hat
        return self._pack(gW, gb)

    def _pack(self, gW, gb):
        parts = []
        for W_g, b_g in zip(gW, gb):
            parts.append(W_g.ravel())
            parts.append(b_g)
        return np.concatenate(parts)

    def lipschitz_bound(self, lo=None, hi=None) -> float:
        """Certified global bound: product of layer spectral norms."""
        out = 1.0
        for W, _ in self._layers:
            out *= np.linalg.norm(W, 2)
        return float(out)

    def __repr__(self):
        return (f"MLPReaction(widths={self.widths}, level={self.level}, "
                f"params={self.theta.size})")


def save_params(path, mlp: MLPReaction, seed=0, eps=None):
    """Write an MLPReaction to a flat-list text file with an 8-line header."""
    lines = [
        "# reaction parameter file",
        f"# species: {mlp.n_species}",
        f"# widths: {','.join(str(w) for w in mlp.widths)}",
        f"# level: {mlp.level if mlp.level is not None else 0}",
        f"# seed: {seed}",
        f"# eps: {eps if eps is not None else 0.0:.17g}",
        f"# count: {mlp.theta.size}",
        "# values: float64 text, one per line",
    ]
    body = "\n".join(f"{v:.17g}" for v in mlp.theta)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n" + body + "\n")


def load_params(path):
    """Read a parameter file, returning (MLPReaction, metadata dict)."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    header = raw[:8]
    if len(header) < 8 or any(not h.startswith("#") for h in header):
        raise ValueError(f"{path}: expected an 8-line '#' header")
    meta = {}
    for line in header[1:7]:
        key, _, val = line.lstrip("# ").partition(":")
        meta[key.strip()] = val.strip()
    widths = tuple(int(w) for w in meta["widths"].split(","))
    theta = np.array([float(v) for v in raw[8:] if v.strip()], dtype=float)
    if theta.size != int(meta["count"]):
        raise ValueError(
            f"{path}: header promises {meta['count']} values, found {theta.size}"
        )
    level = int(meta["level"]) or None
    mlp = MLPReaction(widths, theta, level=level)
    return mlp, {"seed": int(meta["seed"]), "eps": float(meta["eps"]),
                 "species": int(meta["species"])}


@dataclass
class ConditionReport:
    """Sampling-based verdicts for the four consistency conditions."""

    samples: int
    ball_radius: float
    lipschitz_estimate: float
    lipschitz_certified: float | None
    quasipos_violations: list = field(default_factory=list)
    mass_weights: np.ndarray | None = None
    mass_K0: float | None = None
    mass_K1: float | None = None
    mass_margin: float | None = None
    growth_K: float | None = None
    growth_worst_ratio: float = np.nan
    constants_label: str = "sampled"

    @property
    def quasipos_ok(self) -> bool:
        return not self.quasipos_violations

    @property
    def mass_ok(self) -> bool | None:
        if self.mass_margin is None:
            return None
        return self.mass_margin <= 0.0

    @property
    def growth_ok(self) -> bool | None:
        if self.growth_K is None:
            return None
        return self.growth_worst_ratio <= self.growth_K

    def summary(self) -> str:
        lines = [
            f"samples per check: {self.samples}",
            f"(L) Lipschitz estimate on ball radius {self.ball_radius:.6g}: "
            f"{self.lipschitz_estimate:.6g}"
            + (f" (certified bound {self.lipschitz_certified:.6g})"
               if self.lipschitz_certified is not None else ""),
            f"(Q) quasipositivity: "
            + ("no violation found" if self.quasipos_ok
               else f"{len(self.quasipos_violations)} violations, "
                    f"worst {min(v[2] for v in self.quasipos_violations):.6g}"),
        ]
        if self.mass_margin is None:
            lines.append("(M) mass control: constants unavailable")
        else:
            lines.append(
                f"(M) mass control [{self.constants_label}]: K0={self.mass_K0:.6g}, "
                f"K1={self.mass_K1:.6g}, worst margin {self.mass_margin:.6g} "
                + ("(holds)" if self.mass_ok else "(VIOLATED)")
            )
        if self.growth_K is None:
            lines.append("(G) growth: constant unavailable, "
                         f"worst ratio {self.growth_worst_ratio:.6g}")
        else:
            lines.append(
                f"(G) growth [{self.constants_label}]: K={self.growth_K:.6g}, "
                f"worst ratio {self.growth_worst_ratio:.6g} "
                + ("(holds)" if self.growth_ok else "(VIOLATED)")
            )
        return "\n".join(lines)


def check_conditions(f: ReactionTerm, lo, hi, samples: int = 10_000,
                     c=None, seed: int = 0) -> ConditionReport:
    """Sample-based check of (L), (Q), (M), (G) on an axis-aligned box.

    (Q) is evaluated on the faces {u in box, u >= 0, u_n = 0} that the box
    actually reaches (components with lo_n <= 0), with no tolerance. (M)
    and (G) margins use the derived constants: certified when the term
    carries a certified Lipschitz bound, sampled otherwise.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    N = f.n_species
    lo, hi = as_box(lo, hi, N)
    c = np.ones(N) if c is None else np.asarray(c, dtype=float)
    if c.shape != (N,) or np.any(c <= 0):
        raise ValueError("weights c must be positive, one per species")

    corners_norm = max(np.linalg.norm(lo), np.linalg.norm(hi))
    L_est = f.sampled_lipschitz(lo, hi, samples=samples, seed=seed)
    L_cert = f.lipschitz_bound(lo, hi)

    f0 = f.eval(np.zeros(N))
    L_const = L_cert if L_cert is not None else L_est
    label = "certified" if L_cert is not None else "sampled"
    K0 = float(np.sum(c * np.maximum(f0, 0.0)))
    K1 = float(L_const * np.sqrt(N) * np.sum(c))
    K = float(4.0 * max(L_const, np.max(np.abs(f0))))

    # (Q) on reachable boundary faces of the nonnegative orthant
    orth_lo, orth_hi = np.maximum(lo, 0.0), hi
    orthant_ok = bool(np.all(orth_lo < orth_hi))
    violations = []
    for n in range(N if orthant_ok else 0):
        if lo[n] > 0.0 or orth_hi[n] < 0.0:
            continue
        pts = halton_box(samples, orth_lo, orth_hi, seed=seed + 1000 + n)
        pts[:, n] = 0.0
        vals = f.eval(pts)[:, n]
        bad = np.flatnonzero(vals < 0.0)
        violations.extend(
            (tuple(pts[i]), n, float(vals[i])) for i in bad[:100]
        )

    # (M) on the orthant part of the box
    mass_margin = None
    if orthant_ok:
        pts = halton_box(samples, orth_lo, orth_hi, seed=seed + 1)
        fu = f.eval(pts)
        margin = fu @ c - (K0 + K1 * pts.sum(axis=1))
        mass_margin = float(np.max(margin))

    # (G) on the whole box
    pts = halton_box(samples, lo, hi, seed=seed + 2)
    fu = f.eval(pts)
    ratio = np.linalg.norm(fu, axis=1) / (1.0 + np.sum(pts * pts, axis=1))
    worst_ratio = float(np.max(ratio))

    return ConditionReport(
        samples=samples,
        ball_radius=float(corners_norm),
        lipschitz_estimate=L_est,
        lipschitz_certified=L_cert,
        quasipos_violations=violations,
        mass_weights=c,
        mass_K0=K0,
        mass_K1=K1,
        mass_margin=mass_margin,
        growth_K=K,
        growth_worst_ratio=worst_ratio,
        constants_label=label,
    )
