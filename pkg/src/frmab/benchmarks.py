"""Benchmark problem generators: machine maintenance, epidemic control,
fisheries control, and admission/routing to parallel infinite-server queues.

Each generator samples raw model parameters with a seeded PCG64 stream per
project (stream i is spawned from SeedSequence(seed), child i), maps them to
drift/reward coefficients, and keeps the raw draws in ``family_meta`` for
reporting.  Cost-minimisation problems are stored in maximisation form with
negated rewards so the solver and the metrics are sign-agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import Family, FrmabInstance, ProjectDynamics
from .pmp import select_control


class BenchmarkFamily(str, Enum):
    MACHINE = "machine"
    EPIDEMIC = "epidemic"
    FISHERIES = "fisheries"
    ROUTING = "routing"


@dataclass
class BenchmarkSpec:
    family: BenchmarkFamily
    n: int
    horizon: float
    seed: int
    budget: int | None = None

    def __post_init__(self):
        self.family = BenchmarkFamily(self.family)
        if self.n < 2:
            raise ValueError("need at least two projects")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def default_budget(n: int) -> int:
    """30% of the projects, rounded down, but at least one."""
    return max(1, int(math.floor(0.3 * n + 1e-9)))


def _project_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(child))
            for child in np.random.SeedSequence(seed).spawn(n)]


def _resolve_budget(spec: BenchmarkSpec) -> int:
    return spec.budget if spec.budget is not None else default_budget(spec.n)


# ---------------------------------------------------------------------------
# machine maintenance (affine): state = cumulative failure probability

def machine_project(h: float, C: float, L: float, R: float) -> ProjectDynamics:
    """Failure rate h, maintenance cost C, junk value L, revenue R.

    Idling lets failure progress at rate h*(1-x); full maintenance freezes it.
    Reward rates: R - C*h when maintaining, R + L*h*(1-x) when idle.
    """
    return ProjectDynamics(
        family=Family.AFFINE,
        alpha0=h, alpha1=0.0, beta0=-h, beta1=0.0,
        r0=-L * h, r1=0.0,
        c0=-(R + L * h), c1=-(R - C * h),
        h_bound=1.0,
    )


def gen_machine(spec: BenchmarkSpec) -> FrmabInstance:
    h, C, L, R = [], [], [], []
    for rng in _project_streams(spec.seed, spec.n):
        h.append(rng.uniform(0.0, 0.5))
        C.append(rng.uniform(1.0, 3.0))
        L.append(rng.uniform(2.0, 4.0))
        R.append(rng.uniform(2.0, 4.0))
    projects = [machine_project(*p) for p in zip(h, C, L, R)]
    return FrmabInstance(
        projects=projects, horizon=spec.horizon, budget=_resolve_budget(spec),
        family_meta={"family": "machine", "seed": spec.seed,
                     "h": h, "C": C, "L": L, "R": R})


# ---------------------------------------------------------------------------
# epidemic control (quadratic): state = infected fraction of a subpopulation

def epidemic_project(C: float, P: float, lam1: float, lam0: float,
                     mu1: float, mu0: float) -> ProjectDynamics:
    """SIS-type infection dynamics with transmission lam_u and recovery mu_u.

    Cost rate C*x + P*u is stored negated (maximisation form).
    """
    return ProjectDynamics(
        family=Family.QUADRATIC,
        alpha0=lam0 - mu0, alpha1=lam1 - mu1,
        beta0=-lam0, beta1=-lam1,
        r0=-C, r1=-C, c0=0.0, c1=P,
        h_bound=1.0,
    )


def gen_epidemic(spec: BenchmarkSpec) -> FrmabInstance:
    cols = {k: [] for k in ("C", "P", "lam1", "lam0", "mu1", "mu0")}
    for rng in _project_streams(spec.seed, spec.n):
        while True:
            C = rng.uniform(0.0, 1.0)
            P = C * rng.uniform(0.0, 1.0)
            lam1 = rng.uniform(2.0, 4.0)
            mu0 = rng.uniform(2.0, 4.0)
            mu1 = lam1 + rng.uniform(0.0, 0.5)
            lam0 = mu0 + rng.uniform(0.0, 0.5)
            # exact-zero drift slopes are a measure-zero draw but would break
            # the quadratic closed form; resample
            if lam1 != mu1 and lam0 != mu0:
                break
        for k, v in zip(cols, (C, P, lam1, lam0, mu1, mu0)):
            cols[k].append(v)
    projects = [epidemic_project(*p) for p in zip(*cols.values())]
    return FrmabInstance(
        projects=projects, horizon=spec.horizon, budget=_resolve_budget(spec),
        family_meta={"family": "epidemic", "seed": spec.seed, **cols})


# ---------------------------------------------------------------------------
# fisheries control (quadratic): state = population size, logistic growth

def fisheries_project(r: float, H: float, q: float, p: float, C: float) -> ProjectDynamics:
    """Growth rate r, capacity H, catchability q, fish price p, effort cost C."""
    return ProjectDynamics(
        family=Family.QUADRATIC,
        alpha0=r, alpha1=r - q,
        beta0=-r / H, beta1=-r / H,
        r0=0.0, r1=p * q, c0=0.0, c1=C,
        h_bound=H,
    )


def gen_fisheries(spec: BenchmarkSpec) -> FrmabInstance:
    cols = {k: [] for k in ("r", "H", "q", "p", "C")}
    for rng in _project_streams(spec.seed, spec.n):
        while True:
            r = rng.uniform(0.0, 0.15)
            H = rng.uniform(1.0, 6.0)
            q = rng.uniform(0.0, 0.15)
            p = rng.uniform(0.0, 2.0)
            C = rng.uniform(0.0, 0.1)
            if r != 0.0 and r != q:  # rejected draws: zero drift slope
                break
        for k, v in zip(cols, (r, H, q, p, C)):
            cols[k].append(v)
    projects = [fisheries_project(*p) for p in zip(*cols.values())]
    return FrmabInstance(
        projects=projects, horizon=spec.horizon, budget=_resolve_budget(spec),
        family_meta={"family": "fisheries", "seed": spec.seed, **cols})


# ---------------------------------------------------------------------------
# admission and routing to parallel infinite-server queues (affine)

def routing_project(lam: float, mu: float, C: float, R: float) -> ProjectDynamics:
    """Queue with arrival rate lam, service rate mu, holding cost C,
    rejection cost R; objective stored in maximisation form."""
    if not mu > 0:
        raise ValueError("service rate must be positive")
    return ProjectDynamics(
        family=Family.AFFINE,
        alpha0=0.0, alpha1=lam, beta0=-mu, beta1=-mu,
        r0=-C, r1=-C, c0=0.0, c1=-R * lam,
        h_bound=math.inf,
    )


def gen_routing(n: int, lam: float, mu, C, R: float, horizon: float,
                eps: float = 1e-5, delta: float = 1e-4) -> FrmabInstance:
    mu = [float(v) for v in mu]
    C = [float(v) for v in C]
    if len(mu) != n or len(C) != n:
        raise ValueError("mu and C must have length n")
    projects = [routing_project(lam, mu[i], C[i], R) for i in range(n)]
    return FrmabInstance(
        projects=projects, horizon=horizon, budget=1, eps=eps, delta=delta,
        family_meta={"family": "routing", "lam": lam, "mu": mu, "C": C, "R": R})


#: Queue parameters of the two-queue reference configuration whose optimal
#: policy is a single switch at 10 - ln 9.
PAPER_ROUTING = dict(n=2, lam=1.0, mu=(0.5, 1.0), C=(1.0, 1.5), R=3.0, horizon=10.0)


def paper_routing_instance(eps: float = 1e-5, delta: float = 1e-4) -> FrmabInstance:
    return gen_routing(eps=eps, delta=delta, **PAPER_ROUTING)


def sample_routing(spec: BenchmarkSpec) -> FrmabInstance:
    """Seeded random routing configuration; test/benchmark plumbing only
    (the routing model itself fixes no sampling distribution)."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.n + 1)
    root = np.random.Generator(np.random.PCG64(children[0]))
    lam = float(root.uniform(0.5, 1.5))
    R = float(root.uniform(2.0, 4.0))
    mu, C = [], []
    for child in children[1:]:
        rng = np.random.Generator(np.random.PCG64(child))
        mu.append(float(rng.uniform(0.5, 2.0)))
        C.append(float(rng.uniform(0.5, 2.0)))
    return gen_routing(spec.n, lam, mu, C, R, spec.horizon)


def routing_index(inst: FrmabInstance, t: float) -> np.ndarray:
    """Closed-form routing indices R - C*(lam/mu)*(1 - exp(-mu*(T - t)))."""
    meta = inst.family_meta
    if meta is None or meta.get("family") != "routing":
        raise ValueError("instance is not a routing benchmark")
    mu = np.asarray(meta["mu"], dtype=float)
    C = np.asarray(meta["C"], dtype=float)
    lam, R, T = meta["lam"], meta["R"], inst.horizon
    return R - C * (lam / mu) * -np.expm1(-mu * (T - t))


def analytic_routing_policy(inst: FrmabInstance, t: float) -> np.ndarray:
    """Optimal routing control from the closed-form indices (budget 1)."""
    return select_control(routing_index(inst, t), 1)


# ---------------------------------------------------------------------------

_SAMPLERS = {
    BenchmarkFamily.MACHINE: gen_machine,
    BenchmarkFamily.EPIDEMIC: gen_epidemic,
    BenchmarkFamily.FISHERIES: gen_fisheries,
    BenchmarkFamily.ROUTING: sample_routing,
}


def generate_instance(spec: BenchmarkSpec) -> FrmabInstance:
    """Sample an instance of the requested family (seeded, reproducible)."""
    return _SAMPLERS[spec.family](spec)
