"""Training-set construction: solve many initial states, mine (t, x) -> u
pairs from the constant-control segments, and append the pole/square/
reciprocal feature transforms that make switching curves linearly separable.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import shooting
from .dynamics import Family, FrmabInstance, instance_from_dict, instance_to_dict, mix_coeffs
from .errors import FrmabError, TooManyFailures

log = logging.getLogger(__name__)

_POLE_CLAMP = 1e-9
_CLAMP_VALUE = 1e9


@dataclass
class AugTerm:
    """One engineered feature: inv_pole -> 1/(x_i + offset), inv -> 1/x_i, sq -> x_i^2."""

    kind: str
    project: int
    offset: float = 0.0

    def name(self) -> str:
        i = self.project + 1
        if self.kind == "inv_pole":
            return f"inv(x_{i}{self.offset:+.12g})"
        if self.kind == "inv":
            return f"inv(x_{i})"
        if self.kind == "sq":
            return f"sq(x_{i})"
        raise ValueError(f"unknown term kind {self.kind!r}")


@dataclass
class AugmentationPlan:
    terms: list[AugTerm]

    def names(self) -> list[str]:
        return [t.name() for t in self.terms]

    def to_jsonable(self) -> list[dict]:
        return [{"kind": t.kind, "project": t.project, "offset": t.offset} for t in self.terms]

    @classmethod
    def from_jsonable(cls, doc) -> "AugmentationPlan":
        return cls([AugTerm(d["kind"], int(d["project"]), float(d.get("offset", 0.0))) for d in doc])


@dataclass
class Sample:
    t: float
    x: np.ndarray
    features: np.ndarray
    label: np.ndarray


@dataclass
class RawSamples:
    """Extracted (t, x, u) rows prior to feature augmentation."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for k in range(len(self.t)):
            yield float(self.t[k]), self.x[k], self.u[k]


@dataclass
class LabeledDataset:
    features: np.ndarray          # (N, F)
    labels: np.ndarray            # (N, n) binary control vectors
    class_ids: np.ndarray         # (N,) index into class_table
    feature_names: list[str]
    class_table: list[tuple[int, ...]]
    flags: np.ndarray             # (N,) True where a pole term was clamped
    plan: AugmentationPlan | None = None
    instance: FrmabInstance | None = field(default=None, repr=False)

    def __len__(self):
        return self.features.shape[0]

    @property
    def samples(self) -> list[Sample]:
        n = self.labels.shape[1]
        return [Sample(t=float(self.features[k, 0]), x=self.features[k, 1:n + 1],
                       features=self.features[k], label=self.labels[k])
                for k in range(len(self))]


# ---------------------------------------------------------------------------
# data generation

def sample_x0(inst: FrmabInstance, rng: np.random.Generator, x0_box: float = 10.0) -> np.ndarray:
    """Uniform initial state in prod (0, H_i); unbounded projects use (0, x0_box)."""
    hi = np.array([p.h_bound if np.isfinite(p.h_bound) else x0_box for p in inst.projects])
    while True:
        x0 = rng.uniform(0.0, hi)
        if np.all(x0 > 0.0) and np.all(x0 < hi):
            return x0


def _solve_task(args):
    inst_doc, x0, seed_entropy = args
    inst = instance_from_dict(inst_doc)
    try:
        traj = shooting.solve(inst, x0, seed=np.random.SeedSequence(seed_entropy))
        return traj
    except FrmabError as exc:
        return exc


def generate(inst: FrmabInstance, M: int, seed: int, x0_box: float = 10.0,
             jobs: int = 1) -> list[shooting.PiecewiseTrajectory]:
    """Solve M instances with fresh uniform initial states.

    Failed solves are logged and skipped; more than 5% failures aborts.
    Deterministic for a fixed seed regardless of the worker count.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    children = np.random.SeedSequence(seed).spawn(M + 1)
    rng = np.random.Generator(np.random.PCG64(children[0]))
    x0s = [sample_x0(inst, rng, x0_box) for _ in range(M)]
    tasks = [(instance_to_dict(inst), x0s[j], children[j + 1].entropy) for j in range(M)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_task, tasks, chunksize=8))
    else:
        results = [_solve_task(t) for t in tasks]
    trajs, failures = [], 0
    for j, res in enumerate(results):
        if isinstance(res, Exception):
            failures += 1
            log.warning("solve %d/%d failed: %s", j + 1, M, res)
        else:
            trajs.append(res)
    if failures > 0.05 * M:
        raise TooManyFailures(f"{failures}/{M} solves failed (>5%)")
    return trajs


def extract(trajectories, per_segment: int = 10) -> RawSamples:
    """Per constant-control segment, take per_segment equally spaced grid
    points spanning [t_start, t_end) (left-inclusive); shorter segments
    contribute every grid point they have."""
    if per_segment < 1:
        raise ValueError("per_segment must be at least 1")
    ts, xs, us = [], [], []
    for traj in trajectories:
        for seg in traj.segments:
            s = int(np.searchsorted(traj.t, seg.t_start))
            e = int(np.searchsorted(traj.t, seg.t_end))
            count = e - s
            if count <= 0:
                continue
            if count <= per_segment:
                idx = np.arange(s, e)
            else:
                idx = s + np.round(np.linspace(0, count - 1, per_segment)).astype(int)
            ts.append(traj.t[idx])
            xs.append(traj.x[idx])
            us.append(traj.u[idx])
    if not ts:
        return RawSamples(np.empty(0), np.empty((0, 0)), np.empty((0, 0), dtype=np.int8))
    return RawSamples(np.concatenate(ts), np.vstack(xs), np.vstack(us))


# ---------------------------------------------------------------------------
# feature augmentation

def plan_augmentation(dataset_labels, inst: FrmabInstance) -> AugmentationPlan:
    """Choose extra feature terms from the control values observed per project.

    Affine projects: an observed control level with nonzero state slope
    contributes the pole term 1/(x + alpha/beta); a slope-free level with a
    nonzero reward slope contributes x^2.  Quadratic projects contribute 1/x
    plus the pole term per observed level.  Duplicate (project, pole) pairs
    are emitted once.
    """
    labels = np.asarray(dataset_labels)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise ValueError("need at least one label vector")
    terms: list[AugTerm] = []
    seen = set()

    def add(term: AugTerm):
        key = (term.kind, term.project, term.offset)
        if key not in seen:
            seen.add(key)
            terms.append(term)

    for i, proj in enumerate(inst.projects):
        observed = sorted(set(int(v) for v in labels[:, i]))
        if proj.family is Family.AFFINE:
            for u in observed:
                alpha, beta, r = mix_coeffs(proj, u)
                if beta != 0.0:
                    add(AugTerm("inv_pole", i, alpha / beta))
                elif r != 0.0:
                    add(AugTerm("sq", i))
        else:
            add(AugTerm("inv", i))
            for u in observed:
                alpha, beta, _ = mix_coeffs(proj, u)
                add(AugTerm("inv_pole", i, alpha / beta))
    return AugmentationPlan(terms)


def compute_features(t, x, plan: AugmentationPlan):
    """Feature matrix (t, x_1..x_n, plan terms) for raw states.

    Pole terms whose denominator is within 1e-9 of zero are clamped to
    +/-1e9; the second return value flags the affected rows.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rows, n = x.shape
    feats = np.empty((rows, 1 + n + len(plan.terms)))
    feats[:, 0] = t
    feats[:, 1:n + 1] = x
    flags = np.zeros(rows, dtype=bool)
    for k, term in enumerate(plan.terms):
        col = x[:, term.project]
        if term.kind == "sq":
            feats[:, 1 + n + k] = col * col
            continue
        v = col + term.offset if term.kind == "inv_pole" else col.copy()
        small = np.abs(v) < _POLE_CLAMP
        if small.any():
            flags |= small
            sign = np.where(v[small] < 0.0, -1.0, 1.0)
            out = np.empty_like(v)
            out[~small] = 1.0 / v[~small]
            out[small] = sign * _CLAMP_VALUE
            feats[:, 1 + n + k] = out
        else:
            feats[:, 1 + n + k] = 1.0 / v
    return feats, flags


def feature_names(n: int, plan: AugmentationPlan) -> list[str]:
    return ["t"] + [f"x_{i + 1}" for i in range(n)] + plan.names()


def augment(samples, plan: AugmentationPlan) -> LabeledDataset:
    """Attach plan features and class ids to extracted samples."""
    if isinstance(samples, RawSamples):
        raw = samples
    else:
        rows = list(samples)
        raw = RawSamples(np.array([r[0] for r in rows]),
                         np.array([r[1] for r in rows]),
                         np.array([r[2] for r in rows], dtype=np.int8))
    feats, flags = compute_features(raw.t, raw.x, plan)
    labels = raw.u.astype(np.int8)
    table = sorted({tuple(int(v) for v in row) for row in labels})
    lookup = {lab: k for k, lab in enumerate(table)}
    ids = np.array([lookup[tuple(int(v) for v in row)] for row in labels], dtype=np.int64)
    return LabeledDataset(
        features=feats, labels=labels, class_ids=ids,
        feature_names=feature_names(raw.x.shape[1], plan),
        class_table=table, flags=flags, plan=plan)


def generate_dataset(inst: FrmabInstance, M: int, seed: int, per_segment: int = 10,
                     x0_box: float = 10.0, jobs: int = 1) -> LabeledDataset:
    """Full pipeline: solve M initial states, extract, plan, augment."""
    trajs = generate(inst, M, seed, x0_box=x0_box, jobs=jobs)
    raw = extract(trajs, per_segment=per_segment)
    plan = plan_augmentation(raw.u, inst)
    ds = augment(raw, plan)
    ds.instance = inst
    return ds


# ---------------------------------------------------------------------------
# on-disk format: CSV of feature rows plus a JSON sidecar

def write_csv(ds: LabeledDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ds.feature_names + ["label"])
        for k in range(len(ds)):
            w.writerow([repr(float(v)) for v in ds.features[k]] + [int(ds.class_ids[k])])


def sidecar_dict(ds: LabeledDataset, **meta) -> dict:
    doc = {
        "feature_names": ds.feature_names,
        "class_table": [list(lab) for lab in ds.class_table],
        "plan": ds.plan.to_jsonable() if ds.plan is not None else [],
        "n_samples": len(ds),
        "n_flagged": int(ds.flags.sum()),
    }
    if ds.instance is not None:
        doc["instance"] = instance_to_dict(ds.instance)
    doc.update(meta)
    return doc


def write_sidecar(ds: LabeledDataset, path, **meta):
    with open(path, "w") as fh:
        json.dump(sidecar_dict(ds, **meta), fh, indent=2)
        fh.write("\n")


def read_csv(csv_path, sidecar_path) -> LabeledDataset:
    with open(sidecar_path) as fh:
        side = json.load(fh)
    table = [tuple(int(v) for v in lab) for lab in side["class_table"]]
    names = side["feature_names"]
    rows, ids = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != names + ["label"]:
            raise ValueError("dataset CSV header does not match its sidecar")
        for row in reader:
            rows.append([float(v) for v in row[:-1]])
            ids.append(int(row[-1]))
    feats = np.array(rows) if rows else np.empty((0, len(names)))
    ids = np.array(ids, dtype=np.int64)
    labels = (np.array([table[i] for i in ids], dtype=np.int8)
              if len(ids) else np.empty((0, 0), dtype=np.int8))
    plan = AugmentationPlan.from_jsonable(side.get("plan", []))
    inst = instance_from_dict(side["instance"]) if "instance" in side else None
    return LabeledDataset(
        features=feats, labels=labels, class_ids=ids, feature_names=names,
        class_table=table, flags=np.zeros(len(ids), dtype=bool), plan=plan, instance=inst)
