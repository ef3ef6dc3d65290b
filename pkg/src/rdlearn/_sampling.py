"""Deterministic low-discrepancy sampling and box quadrature helpers."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def as_box(lo, hi, dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Normalize box bounds to float arrays, broadcasting scalars.

    Raises ValueError if any lower bound is not strictly below the
    corresponding upper bound.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if dim is not None:
        if lo.size == 1:
            lo = np.full(dim, lo[0])
        if hi.size == 1:
            hi = np.full(dim, hi[0])
    if lo.shape != hi.shape:
        raise ValueError(f"box bounds have mismatched shapes {lo.shape} and {hi.shape}")
    if not np.all(lo < hi):
        raise ValueError("box requires lo < hi in every coordinate")
    return lo, hi


def halton_box(n: int, lo, hi, seed: int = 0) -> np.ndarray:
    """n quasi-random points in the box [lo, hi], shape (n, dim)."""
    lo, hi = as_box(lo, hi)
    sampler = qmc.Halton(d=lo.size, scramble=True, seed=seed)
    pts = sampler.random(n)
    return lo + pts * (hi - lo)


def sup_sample(lo, hi, points_per_dim: int = 10_000, seed: int = 0) -> np.ndarray:
    """Dense deterministic sample of a box for sup-norm estimation.

    Uses points_per_dim * dim quasi-random points plus the box corners, so
    extremes attained on the boundary are not missed entirely.
    """
    lo, hi = as_box(lo, hi)
    dim = lo.size
    pts = halton_box(points_per_dim * dim, lo, hi, seed=seed)
    corners = np.stack(np.meshgrid(*[(l, h) for l, h in zip(lo, hi)], indexing="ij"), axis=-1)
    return np.vstack([pts, corners.reshape(-1, dim)])


def box_quadrature(lo, hi, nodes_per_dim: int = 129, seed: int = 0,
                   mc_points: int = 32_768) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points and weights for integration over a box.

    Tensor-product trapezoid up to dimension 2; quasi-Monte-Carlo with equal
    weights above that. Returns (points (P, dim), weights (P,)) with
    sum(weights) equal to the box volume.
    """
    lo, hi = as_box(lo, hi)
    dim = lo.size
    if dim <= 2:
        axes, wts = [], []
        for d in range(dim):
            x = np.linspace(lo[d], hi[d], nodes_per_dim)
            w = np.full(nodes_per_dim, x[1] - x[0])
            w[0] *= 0.5
            w[-1] *= 0.5
            axes.append(x)
            wts.append(w)
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        weight = wts[0]
        for w in wts[1:]:
            weight = np.multiply.outer(weight, w)
        return pts, weight.ravel()
    vol = float(np.prod(hi - lo))
    pts = halton_box(mc_points, lo, hi, seed=seed)
    return pts, np.full(mc_points, vol / mc_points)
