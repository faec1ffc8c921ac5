"""Policy evaluation: imitation accuracy, closed-loop suboptimality against
fresh solves, and solver-vs-inference speed-up measurement.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import dataset as dset
from . import dynamics as dyn
from . import shooting
from .dataset import AugmentationPlan, LabeledDataset
from .errors import EmptyDataset, StateBoundViolation
from .tree import ObliquePolicyTree

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    accuracy: float
    max_subopt: float
    mean_subopt: float
    speedup: float
    n_test_points: int
    n_test_instances: int
    timing: dict
    extras: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "max_subopt": self.max_subopt,
            "mean_subopt": self.mean_subopt,
            "speedup": self.speedup,
            "n_test_points": self.n_test_points,
            "n_test_instances": self.n_test_instances,
            "timing": self.timing,
            **self.extras,
        }


def default_dt_eval(inst: dyn.FrmabInstance) -> float:
    return max(inst.delta, inst.horizon / 10_000.0)


# ---------------------------------------------------------------------------
# policies

def make_policy(tree: ObliquePolicyTree, plan: AugmentationPlan | None = None):
    """Feedback policy (x, t) -> control; features computed from the stored
    augmentation plan exactly as during training."""
    if plan is None:
        if "augmentation" not in tree.train_meta:
            raise ValueError("model carries no augmentation plan; pass one explicitly")
        plan = AugmentationPlan.from_jsonable(tree.train_meta["augmentation"])
    terms = plan.terms
    n_terms = len(terms)
    recip_pos = [k for k, t in enumerate(terms) if t.kind in ("inv", "inv_pole")]
    sq_pos = [k for k, t in enumerate(terms) if t.kind == "sq"]
    recip_idx = np.array([terms[k].project for k in recip_pos], dtype=np.int64)
    recip_off = np.array([terms[k].offset for k in recip_pos])
    sq_idx = np.array([terms[k].project for k in sq_pos], dtype=np.int64)
    recip_dst = 1 + np.array(recip_pos, dtype=np.int64)
    sq_dst = 1 + np.array(sq_pos, dtype=np.int64)
    table = [np.array(lab, dtype=np.int8) for lab in tree.class_table]

    def policy(x: np.ndarray, t: float) -> np.ndarray:
        n = x.shape[0]
        f = np.empty(1 + n + n_terms)
        f[0] = t
        f[1:n + 1] = x
        if recip_idx.size:
            v = x[recip_idx] + recip_off
            small = np.abs(v) < dset._POLE_CLAMP
            if small.any():
                out = np.empty_like(v)
                out[~small] = 1.0 / v[~small]
                out[small] = np.where(v[small] < 0.0, -dset._CLAMP_VALUE, dset._CLAMP_VALUE)
                f[n + recip_dst] = out
            else:
                f[n + recip_dst] = 1.0 / v
        if sq_idx.size:
            f[n + sq_dst] = x[sq_idx] * x[sq_idx]
        return table[tree.predict_class(f)]

    return policy


def replay_policy(traj: shooting.PiecewiseTrajectory):
    """Policy that replays a solved trajectory's control schedule by time."""
    starts = np.array([s.t_start for s in traj.segments])
    controls = [s.control for s in traj.segments]

    def policy(x, t):
        k = int(np.searchsorted(starts, t, side="right")) - 1
        return controls[min(max(k, 0), len(controls) - 1)]

    return policy


# ---------------------------------------------------------------------------
# metrics

def accuracy(tree: ObliquePolicyTree, heldout: LabeledDataset) -> float:
    """Fraction of held-out samples whose predicted control equals the label."""
    if len(heldout) == 0:
        raise EmptyDataset("held-out dataset is empty")
    ids = tree.predict_class_many(heldout.features)
    pred = np.array([tree.class_table[i] for i in ids], dtype=np.int8)
    return float(np.mean(np.all(pred == heldout.labels, axis=1)))


def closed_loop_objective(inst: dyn.FrmabInstance, x0, policy, dt_eval: float | None = None) -> float:
    """Simulate the policy with a zero-order hold on a dt_eval grid.

    The state advances by the exact constant-control solution each step and
    the reward integral is accumulated exactly per step, so the only
    discretisation is the hold on the policy queries.
    """
    if dt_eval is None:
        dt_eval = default_dt_eval(inst)
    if not dt_eval > 0:
        raise ValueError("dt_eval must be positive")
    c = dyn.coeff_arrays(inst)
    ts = shooting.grid_times(inst.horizon, dt_eval)
    x = np.asarray(x0, dtype=float).copy()
    objective = 0.0
    zeros = np.zeros_like(x)
    for k in range(len(ts) - 1):
        u = np.asarray(policy(x, float(ts[k])))
        tau = float(ts[k + 1] - ts[k])
        objective += dyn.reward_stretch(c, x, u, tau)
        x, _ = dyn.step_from(c, x, zeros, u, np.array([tau]))
        x = x[0]
        if not np.isfinite(x).all() or (x <= -1e-9).any() or (x >= c.h + 1e-9).any():
            raise StateBoundViolation(f"closed-loop state left (0, H) at t={ts[k + 1]:.6g}")
    return objective


def _suboptimality_stats(inst, policy, n_instances, seed, x0_box=10.0, dt_eval=None,
                         time_solver=False, tree=None):
    """Fresh-initial-state suboptimality sweep; optionally times the solver
    and single tree queries on the same instances."""
    children = np.random.SeedSequence(seed).spawn(n_instances + 1)
    rng = np.random.Generator(np.random.PCG64(children[0]))
    subopts, solve_times, infer_times = [], [], []
    for j in range(n_instances):
        x0 = dset.sample_x0(inst, rng, x0_box)
        t0 = time.perf_counter()
        traj = shooting.solve(inst, x0, seed=np.random.SeedSequence(children[j + 1].entropy))
        t1 = time.perf_counter()
        if time_solver:
            solve_times.append(t1 - t0)
            t2 = time.perf_counter()
            policy(x0, 0.0)
            t3 = time.perf_counter()
            infer_times.append(t3 - t2)
        j_pol = closed_loop_objective(inst, x0, policy, dt_eval)
        if abs(j_pol) < 1e-12:
            log.warning("instance %d skipped: |policy objective| < 1e-12", j)
            continue
        s = (traj.objective - j_pol) / abs(j_pol)
        if -1e-9 <= s < 0.0:
            s = 0.0
        subopts.append(s)
    if not subopts:
        raise EmptyDataset("no instance produced a usable policy objective")
    return subopts, solve_times, infer_times


def max_suboptimality(inst: dyn.FrmabInstance, tree: ObliquePolicyTree,
                      n_instances: int = 100, seed: int = 0, x0_box: float = 10.0,
                      dt_eval: float | None = None) -> float:
    """Worst relative objective gap (J_opt - J_policy) / |J_policy| over
    fresh initial states."""
    if n_instances < 1:
        raise ValueError("n_instances must be at least 1")
    policy = make_policy(tree)
    subopts, _, _ = _suboptimality_stats(inst, policy, n_instances, seed, x0_box, dt_eval)
    return float(max(subopts))


def speedup(inst: dyn.FrmabInstance, tree: ObliquePolicyTree, n_instances: int = 100,
            seed: int = 0, x0_box: float = 10.0) -> float:
    """Mean solve wall time divided by mean single-query inference wall time
    (feature computation included), over the same instances."""
    policy = make_policy(tree)
    policy(dset.sample_x0(inst, np.random.default_rng(seed), x0_box), 0.0)  # warm-up
    children = np.random.SeedSequence(seed).spawn(n_instances + 1)
    rng = np.random.Generator(np.random.PCG64(children[0]))
    solve_times, infer_times = [], []
    for j in range(n_instances):
        x0 = dset.sample_x0(inst, rng, x0_box)
        t0 = time.perf_counter()
        shooting.solve(inst, x0, seed=np.random.SeedSequence(children[j + 1].entropy))
        t1 = time.perf_counter()
        t2 = time.perf_counter()
        policy(x0, 0.0)
        t3 = time.perf_counter()
        solve_times.append(t1 - t0)
        infer_times.append(t3 - t2)
    return float(np.mean(solve_times) / np.mean(infer_times))


def make_heldout(inst: dyn.FrmabInstance, plan: AugmentationPlan, n_points: int,
                 seed: int, per_segment: int = 10, x0_box: float = 10.0) -> LabeledDataset:
    """Labelled samples from fresh solves, augmented with the training plan."""
    children = np.random.SeedSequence(seed).spawn(4096)
    rng = np.random.Generator(np.random.PCG64(children[0]))
    chunks = []
    total = 0
    j = 0
    while total < n_points:
        j += 1
        if j >= len(children):
            raise EmptyDataset("could not collect enough held-out points")
        x0 = dset.sample_x0(inst, rng, x0_box)
        try:
            traj = shooting.solve(inst, x0, seed=np.random.SeedSequence(children[j].entropy))
        except Exception as exc:  # skip rare failed solves, mirror generation
            log.warning("held-out solve failed: %s", exc)
            continue
        raw = dset.extract([traj], per_segment=per_segment)
        chunks.append(raw)
        total += len(raw)
    raw = dset.RawSamples(
        np.concatenate([r.t for r in chunks])[:n_points],
        np.vstack([r.x for r in chunks])[:n_points],
        np.vstack([r.u for r in chunks])[:n_points])
    ds = dset.augment(raw, plan)
    ds.instance = inst
    return ds


def evaluate(inst: dyn.FrmabInstance, tree: ObliquePolicyTree, n_instances: int = 100,
             n_heldout: int = 1000, seed: int = 0, dt_eval: float | None = None,
             x0_box: float = 10.0, per_segment: int = 10, extras: dict | None = None) -> EvalReport:
    """Full report: held-out accuracy, closed-loop suboptimality, speed-up.

    The solver runs once per test instance; its wall time and the matching
    single-query inference time give the speed-up.
    """
    plan = (AugmentationPlan.from_jsonable(tree.train_meta["augmentation"])
            if "augmentation" in tree.train_meta else None)
    if plan is None:
        raise ValueError("model has no augmentation plan recorded")
    heldout_seed, sweep_seed = [int(s.generate_state(1)[0])
                                for s in np.random.SeedSequence(seed).spawn(2)]
    heldout = make_heldout(inst, plan, n_heldout, heldout_seed,
                           per_segment=per_segment, x0_box=x0_box)
    acc = accuracy(tree, heldout)
    policy = make_policy(tree, plan)
    policy(dset.sample_x0(inst, np.random.default_rng(0), x0_box), 0.0)  # warm-up
    subopts, solve_times, infer_times = _suboptimality_stats(
        inst, policy, n_instances, sweep_seed, x0_box, dt_eval, time_solver=True)
    return EvalReport(
        accuracy=acc,
        max_subopt=float(max(subopts)),
        mean_subopt=float(np.mean(subopts)),
        speedup=float(np.mean(solve_times) / np.mean(infer_times)),
        n_test_points=len(heldout),
        n_test_instances=n_instances,
        timing={"solver_mean_s": float(np.mean(solve_times)),
                "inference_mean_s": float(np.mean(infer_times))},
        extras=extras or {},
    )


def report_table(reports: list[EvalReport]) -> str:
    """Fixed-width summary, one row per report."""
    header = (f"{'family':<12}{'n':>4}{'T':>8}{'train_time':>14}{'speed-up':>12}"
              f"{'accuracy':>10}{'max_subopt':>12}")
    lines = [header, "-" * len(header)]
    for r in reports:
        fam = str(r.extras.get("family", "-"))
        n = r.extras.get("n", "-")
        T = r.extras.get("horizon", "-")
        tt = r.extras.get("training_time_s")
        tt = f"{tt:.1f}s" if isinstance(tt, (int, float)) else "-"
        lines.append(
            f"{fam:<12}{n!s:>4}{T!s:>8}{tt:>14}{r.speedup:>12.3g}"
            f"{r.accuracy:>10.4f}{r.max_subopt:>12.4f}")
    return "\n".join(lines) + "\n"
