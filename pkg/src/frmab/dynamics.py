"""Data model and exact constant-control propagation for fluid bandit arms.

Each arm ("project") evolves by a scalar autonomous ODE whose drift is either
affine (``a + b*x``) or quadratic without intercept (``a*x + b*x**2``), with
one coefficient set per binary control level and reward rates affine in the
state.  Within an interval of constant control both the state and the costate
ODEs admit closed-form solutions; this module evaluates them directly and also
provides a fixed-step RK4 integrator as an independent numerical cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonPositiveState

# Branch thresholds: the exact formulas switch on b == 0 (affine) and on
# a + b*x == 0 (quadratic equilibrium); floating point needs a tolerance.
BETA_ZERO_TOL = 1e-12
EQUILIBRIUM_TOL = 1e-12


class Family(str, Enum):
    AFFINE = "affine"
    QUADRATIC = "quadratic"


@dataclass
class ProjectDynamics:
    """Coefficients of one arm: drift, state slope, reward slope/intercept per control."""

    family: Family
    alpha0: float
    alpha1: float
    beta0: float
    beta1: float
    r0: float
    r1: float
    c0: float
    c1: float
    h_bound: float = math.inf

    def __post_init__(self):
        self.family = Family(self.family)
        if not self.h_bound > 0:
            raise ValueError(f"h_bound must be positive, got {self.h_bound}")
        if self.family is Family.QUADRATIC:
            if self.alpha0 == 0.0 or self.alpha1 == 0.0 or self.beta0 == 0.0 or self.beta1 == 0.0:
                raise ValueError("quadratic drift requires nonzero alpha and beta for both controls")
            if self.beta0 >= 0.0 or self.beta1 >= 0.0:
                raise ValueError("quadratic drift must be concave: beta0 < 0 and beta1 < 0")


@dataclass
class FrmabInstance:
    """A full problem: n projects, horizon, effort budget and solver tolerances."""

    projects: list[ProjectDynamics]
    horizon: float
    budget: int
    eps: float = 1e-5
    delta: float = 1e-4
    family_meta: dict | None = None

    def __post_init__(self):
        n = len(self.projects)
        if n < 1:
            raise ValueError("need at least one project")
        if not (0 < self.budget < n):
            raise ValueError(f"budget must satisfy 0 < m < n, got m={self.budget}, n={n}")
        if not self.eps > 0 or not self.delta > 0:
            raise ValueError("eps and delta must be positive")
        if self.delta > self.horizon:
            raise ValueError("delta must not exceed the horizon")
        families = {p.family for p in self.projects}
        if len(families) != 1:
            raise ValueError("all projects in an instance must share one dynamics family")

    @property
    def n(self) -> int:
        return len(self.projects)

    @property
    def family(self) -> Family:
        return self.projects[0].family


@dataclass
class StateCostatePoint:
    """State and costate sampled at one time."""

    t: float
    x: np.ndarray
    y: np.ndarray


@dataclass
class Coeffs:
    """Instance coefficients flattened to arrays for vectorised kernels."""

    alpha0: np.ndarray
    alpha1: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    h: np.ndarray
    quad: np.ndarray  # bool mask, True where drift is quadratic


def coeff_arrays(inst: FrmabInstance) -> Coeffs:
    ps = inst.projects
    get = lambda name: np.array([getattr(p, name) for p in ps], dtype=float)
    return Coeffs(
        alpha0=get("alpha0"), alpha1=get("alpha1"),
        beta0=get("beta0"), beta1=get("beta1"),
        r0=get("r0"), r1=get("r1"), c0=get("c0"), c1=get("c1"),
        h=get("h_bound"),
        quad=np.array([p.family is Family.QUADRATIC for p in ps]),
    )


def mix_coeffs(d: ProjectDynamics, u: int) -> tuple[float, float, float]:
    """Interpolate (alpha, beta, r) between the two control levels."""
    if u not in (0, 1):
        raise ValueError(f"control must be 0 or 1, got {u}")
    alpha = d.alpha0 + u * (d.alpha1 - d.alpha0)
    beta = d.beta0 + u * (d.beta1 - d.beta0)
    r = d.r0 + u * (d.r1 - d.r0)
    return alpha, beta, r


def mixed_arrays(c: Coeffs, u: np.ndarray):
    """Per-project (alpha, beta, r, cost) under a binary control vector."""
    u = np.asarray(u, dtype=float)
    alpha = c.alpha0 + u * (c.alpha1 - c.alpha0)
    beta = c.beta0 + u * (c.beta1 - c.beta0)
    r = c.r0 + u * (c.r1 - c.r0)
    cost = c.c0 + u * (c.c1 - c.c0)
    return alpha, beta, r, cost


# ---------------------------------------------------------------------------
# closed-form kernels (broadcast over numpy arrays)

def _costate_step_affine(beta, r, y, tau):
    # y' = -r - beta*y  =>  y(tau) = y + (-r/beta - y) * (1 - exp(-beta*tau))
    bnz = np.abs(beta) >= BETA_ZERO_TOL
    bsafe = np.where(bnz, beta, 1.0)
    y_nz = y + (-r / bsafe - y) * -np.expm1(-beta * tau)
    y_lin = y - r * tau
    return np.where(bnz, y_nz, y_lin)


def _step_affine(alpha, beta, r, x, y, tau):
    """Advance (x, y) by tau under affine drift x' = alpha + beta*x."""
    bnz = np.abs(beta) >= BETA_ZERO_TOL
    bsafe = np.where(bnz, beta, 1.0)
    x_nz = x + (-alpha / bsafe - x) * -np.expm1(beta * tau)
    x_lin = x + alpha * tau
    x_new = np.where(bnz, x_nz, x_lin)
    return x_new, _costate_step_affine(beta, r, y, tau)


def _x_integral_affine(alpha, beta, x, tau):
    """Exact integral of x(s) over s in [0, tau] under affine drift."""
    bnz = np.abs(beta) >= BETA_ZERO_TOL
    bsafe = np.where(bnz, beta, 1.0)
    a_off = -alpha / bsafe - x
    int_nz = (x + a_off) * tau - a_off * np.expm1(beta * tau) / bsafe
    int_lin = x * tau + 0.5 * alpha * tau * tau
    return np.where(bnz, int_nz, int_lin)


def quad_segment_constants(alpha, beta, r, x, y):
    """Constants (K, G) of the closed-form quadratic solution, with the
    segment clock starting at zero.  Inverts the trajectory expressions at
    tau = 0 so that evaluating them there reproduces (x, y)."""
    K = x / (alpha + beta * x)
    d0 = 1.0 - K * beta  # = alpha / (alpha + beta*x)
    G = (y + r / (K * alpha * beta) * d0) / (d0 * d0)
    return K, G


def quad_eval(alpha, beta, r, K, G, tau):
    """Evaluate the quadratic-drift closed form at elapsed time tau."""
    e = np.exp(alpha * tau)
    d = 1.0 - K * beta * e
    x = K * alpha * e / d
    y = G * d * d / e - r / (K * alpha * beta) * d / e
    return x, y


def _step_quad(alpha, beta, r, x, y, tau):
    """Advance (x, y) by tau under quadratic drift x' = alpha*x + beta*x^2.

    Near the drift equilibrium alpha + beta*x = 0 the constants above are
    singular; there x is held fixed and the costate ODE, which is then linear
    with slope -(alpha + 2*beta*x), is integrated exactly.
    """
    eq = np.abs(alpha + beta * x) < EQUILIBRIUM_TOL
    denom = np.where(eq, 1.0, alpha + beta * x)
    K = x / denom
    d0 = 1.0 - K * beta
    G = (y + r / (K * alpha * beta) * d0) / (d0 * d0)
    e = np.exp(alpha * tau)
    d = 1.0 - K * beta * e
    x_n = K * alpha * e / d
    y_n = G * d * d / e - r / (K * alpha * beta) * d / e
    y_eq = _costate_step_affine(alpha + 2.0 * beta * x, r, y, tau)
    return np.where(eq, x, x_n), np.where(eq, y_eq, y_n)


def _x_integral_quad(alpha, beta, x, tau):
    """Exact integral of x(s) over s in [0, tau] under quadratic drift."""
    eq = np.abs(alpha + beta * x) < EQUILIBRIUM_TOL
    denom = np.where(eq, 1.0, alpha + beta * x)
    K = x / denom
    d0 = 1.0 - K * beta
    d = 1.0 - K * beta * np.exp(alpha * tau)
    int_n = -np.log(d / d0) / beta
    return np.where(eq, x * tau, int_n)


# ---------------------------------------------------------------------------
# public per-project operations

def propagate_affine(d: ProjectDynamics, x_s: float, y_s: float, u: int, dt: float):
    """Closed-form (x, y) at elapsed time dt under constant control, affine drift."""
    if d.family is not Family.AFFINE:
        raise ValueError("propagate_affine requires an affine-family project")
    alpha, beta, r = mix_coeffs(d, u)
    x, y = _step_affine(alpha, beta, r, float(x_s), float(y_s), float(dt))
    return float(x), float(y)


def propagate_quadratic(d: ProjectDynamics, x_s: float, y_s: float, u: int, dt: float):
    """Closed-form (x, y) at elapsed time dt under constant control, quadratic drift."""
    if d.family is not Family.QUADRATIC:
        raise ValueError("propagate_quadratic requires a quadratic-family project")
    if not x_s > 0:
        raise NonPositiveState(f"quadratic propagation needs x > 0, got {x_s}")
    alpha, beta, r = mix_coeffs(d, u)
    x, y = _step_quad(alpha, beta, r, float(x_s), float(y_s), float(dt))
    return float(x), float(y)


def propagate(d: ProjectDynamics, x_s: float, y_s: float, u: int, dt: float):
    if d.family is Family.AFFINE:
        return propagate_affine(d, x_s, y_s, u, dt)
    return propagate_quadratic(d, x_s, y_s, u, dt)


def step_from(c: Coeffs, x_s: np.ndarray, y_s: np.ndarray, u: np.ndarray, taus: np.ndarray):
    """Propagate all projects from one start point to several elapsed times.

    Returns arrays of shape (len(taus), n).  The control is held constant, so
    every requested time is reached by a single closed-form evaluation from
    the start point rather than by accumulating grid steps.
    """
    alpha, beta, r, _ = mixed_arrays(c, u)
    taus = np.asarray(taus, dtype=float)[:, None]
    n = x_s.shape[0]
    x_new = np.empty((taus.shape[0], n))
    y_new = np.empty_like(x_new)
    aff = ~c.quad
    if aff.any():
        x_new[:, aff], y_new[:, aff] = _step_affine(
            alpha[aff], beta[aff], r[aff], x_s[aff], y_s[aff], taus)
    if c.quad.any():
        q = c.quad
        x_new[:, q], y_new[:, q] = _step_quad(
            alpha[q], beta[q], r[q], x_s[q], y_s[q], taus)
    return x_new, y_new


def reward_stretch(c: Coeffs, x_s: np.ndarray, u: np.ndarray, tau: float) -> float:
    """Exact reward integral over [0, tau] from x_s under constant control u."""
    alpha, beta, r, cost = mixed_arrays(c, u)
    xint = np.empty_like(x_s)
    aff = ~c.quad
    if aff.any():
        xint[aff] = _x_integral_affine(alpha[aff], beta[aff], x_s[aff], tau)
    if c.quad.any():
        q = c.quad
        xint[q] = _x_integral_quad(alpha[q], beta[q], x_s[q], tau)
    return float(np.sum(r * xint - cost * tau))


# ---------------------------------------------------------------------------
# RK4 verification oracle

def rk4_batch(alpha, beta, r, quad, x, y, dt, step):
    """Fixed-step classical RK4 on the coupled state/costate ODEs.

    All arguments broadcast; `quad` selects the drift family elementwise.
    Each element is integrated with its own substep dt/ceil(dt/step) <= step.
    """
    alpha, beta, r, quad, x, y, dt = np.broadcast_arrays(
        np.asarray(alpha, float), np.asarray(beta, float), np.asarray(r, float),
        quad, np.asarray(x, float), np.asarray(y, float), np.asarray(dt, float))
    x = x.copy()
    y = y.copy()
    nsub = np.maximum(1, np.ceil(dt / step)).astype(np.int64)
    h_full = dt / nsub

    def rhs(xv, yv):
        fx = np.where(quad, alpha * xv + beta * xv * xv, alpha + beta * xv)
        fy = np.where(quad, -r - yv * (alpha + 2.0 * beta * xv), -r - beta * yv)
        return fx, fy

    for k in range(int(nsub.max())):
        h = np.where(k < nsub, h_full, 0.0)
        k1x, k1y = rhs(x, y)
        k2x, k2y = rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
        k3x, k3y = rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
        k4x, k4y = rhs(x + h * k3x, y + h * k3y)
        x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    return x, y


def rk4_oracle(d: ProjectDynamics, x_s: float, y_s: float, u: int, dt: float, step: float):
    """RK4 reference solution for one project; used to verify the closed forms."""
    if not step > 0:
        raise ValueError("step must be positive")
    alpha, beta, r = mix_coeffs(d, u)
    x, y = rk4_batch(alpha, beta, r, d.family is Family.QUADRATIC,
                     float(x_s), float(y_s), float(dt), float(step))
    return float(x), float(y)


# ---------------------------------------------------------------------------
# JSON serialization

_PROJECT_FIELDS = ("alpha0", "alpha1", "beta0", "beta1", "r0", "r1", "c0", "c1", "h_bound")


def instance_to_dict(inst: FrmabInstance) -> dict:
    doc = {
        "family": inst.family.value,
        "projects": [
            {f: (None if f == "h_bound" and math.isinf(getattr(p, f)) else getattr(p, f))
             for f in _PROJECT_FIELDS}
            for p in inst.projects
        ],
        "horizon": inst.horizon,
        "budget": inst.budget,
        "eps": inst.eps,
        "delta": inst.delta,
    }
    if inst.family_meta is not None:
        doc["family_meta"] = inst.family_meta
    return doc


def instance_from_dict(doc: dict) -> FrmabInstance:
    family = Family(doc["family"])
    projects = []
    for p in doc["projects"]:
        kw = dict(p)
        if kw.get("h_bound") is None:
            kw["h_bound"] = math.inf
        projects.append(ProjectDynamics(family=family, **kw))
    return FrmabInstance(
        projects=projects,
        horizon=float(doc["horizon"]),
        budget=int(doc["budget"]),
        eps=float(doc.get("eps", 1e-5)),
        delta=float(doc.get("delta", 1e-4)),
        family_meta=doc.get("family_meta"),
    )


def save_instance(inst: FrmabInstance, path):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> FrmabInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
