"""Index functions, Hamiltonian, and closed-form optimal control selection.

At each instant the maximum-principle control maximises a linear objective
sum(gamma_i * u_i) over the box 0 <= u <= 1 with sum(u) <= m.  That linear
program always has a binary optimal vertex: activate the (at most m) largest
strictly positive indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Coeffs, FrmabInstance, StateCostatePoint, coeff_arrays, mixed_arrays
from .errors import InfeasibleControl


@dataclass
class IndexVector:
    """Per-project priority indices gamma_i at a fixed time."""

    gamma: np.ndarray


def index_kernel(c: Coeffs, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """gamma = R1(x) - R0(x) + y * (phi1(x) - phi0(x)), vectorised."""
    dr = c.r1 - c.r0
    dc = c.c1 - c.c0
    da = c.alpha1 - c.alpha0
    db = c.beta1 - c.beta0
    dphi = np.where(c.quad, da * x + db * x * x, da + db * x)
    return dr * x - dc + y * dphi


def index_values(inst: FrmabInstance, point: StateCostatePoint) -> IndexVector:
    x = np.asarray(point.x, dtype=float)
    y = np.asarray(point.y, dtype=float)
    if x.shape != (inst.n,) or y.shape != (inst.n,):
        raise ValueError(f"point dimensions must match n={inst.n}")
    return IndexVector(gamma=index_kernel(coeff_arrays(inst), x, y))


def select_kernel(gamma: np.ndarray, m: int) -> np.ndarray:
    """Row-wise top-m strictly positive selection on a (B, n) index array.

    Ties at the cutoff go to the lowest project index (stable sort order).
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    u = np.zeros(gamma.shape, dtype=np.int8)
    if m <= 0:
        return u
    order = np.argsort(-gamma, axis=1, kind="stable")
    take = order[:, :m]
    rows = np.arange(gamma.shape[0])[:, None]
    u[rows, take] = gamma[rows, take] > 0.0
    return u


def select_control(gamma, m: int) -> np.ndarray:
    """Binary control activating the at-most-m largest strictly positive indices."""
    g = gamma.gamma if isinstance(gamma, IndexVector) else np.asarray(gamma, dtype=float)
    if m >= g.shape[-1]:
        raise ValueError(f"budget m={m} must be smaller than n={g.shape[-1]}")
    return select_kernel(g, m)[0]


def _check_control(u: np.ndarray, n: int, m: int) -> np.ndarray:
    u = np.asarray(u)
    if u.shape != (n,) or not np.isin(u, (0, 1)).all():
        raise InfeasibleControl(f"control must be a binary vector of length {n}")
    if int(u.sum()) > m:
        raise InfeasibleControl(f"control activates {int(u.sum())} > m={m} projects")
    return u.astype(float)


def hamiltonian(inst: FrmabInstance, point: StateCostatePoint, u) -> float:
    """Instantaneous reward plus costate-weighted drift under control u."""
    uf = _check_control(u, inst.n, inst.budget)
    c = coeff_arrays(inst)
    x = np.asarray(point.x, dtype=float)
    y = np.asarray(point.y, dtype=float)
    alpha, beta, r, cost = mixed_arrays(c, uf)
    reward = r * x - cost
    drift = np.where(c.quad, alpha * x + beta * x * x, alpha + beta * x)
    return float(np.sum(reward + y * drift))


def costate_rhs(inst: FrmabInstance, point: StateCostatePoint, u) -> np.ndarray:
    """Time derivative of the costate under control u (negative state-gradient
    of the Hamiltonian)."""
    uf = _check_control(u, inst.n, inst.budget)
    c = coeff_arrays(inst)
    x = np.asarray(point.x, dtype=float)
    y = np.asarray(point.y, dtype=float)
    alpha, beta, r, _ = mixed_arrays(c, uf)
    return np.where(c.quad, -r - y * (alpha + 2.0 * beta * x), -r - beta * y)
