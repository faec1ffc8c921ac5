"""Fluid restless multi-armed bandits: exact shooting-method solver and
interpretable oblique-tree feedback policies learned by imitation."""

from .dynamics import (
    Family,
    FrmabInstance,
    ProjectDynamics,
    StateCostatePoint,
    load_instance,
    mix_coeffs,
    propagate,
    propagate_affine,
    propagate_quadratic,
    rk4_oracle,
    save_instance,
)
from .pmp import IndexVector, costate_rhs, hamiltonian, index_values, select_control
from .shooting import PiecewiseTrajectory, Segment, rollout, solve, terminal_residual
from .benchmarks import (
    BenchmarkFamily,
    BenchmarkSpec,
    analytic_routing_policy,
    gen_epidemic,
    gen_fisheries,
    gen_machine,
    gen_routing,
    generate_instance,
    paper_routing_instance,
)
from .dataset import (
    AugmentationPlan,
    LabeledDataset,
    augment,
    extract,
    generate,
    generate_dataset,
    plan_augmentation,
)
from .tree import ObliquePolicyTree, TrainConfig, load, save, train
from .evaluation import (
    EvalReport,
    accuracy,
    closed_loop_objective,
    evaluate,
    make_policy,
    max_suboptimality,
    speedup,
)

__version__ = "0.1.0"
