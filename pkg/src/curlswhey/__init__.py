"""curlswhey: black-box adversarial attacks with query budgets.

Core pieces: a dual-trajectory iterative attack that mixes gradient descent
and ascent on a substitute model, a post-hoc noise squeezer, the classic
iterative baselines in L2 form, desk-scale numpy classifiers, and an
experiment harness that reproduces transfer-attack evaluation protocols in
miniature.
"""

from .baselines import BaselineConfig, fgsm, i_fgsm, mi_fgsm, vr_igsm
from .core import (
    Image,
    clip_to_ball,
    gaussian_like,
    l2_distance,
    linf_distance,
    load_tensor,
    make_rng,
    save_tensor,
    spawn_rng,
    unit_direction,
)
from .curls import CurlsConfig, MeanDirection, RoundTrace, binary_search_refine, curls_attack, curls_round
from .harness import (
    AttackConfig,
    ResultRow,
    ResultTable,
    build_zoo,
    emit_report,
    median_average,
    run_matrix,
    run_single_attack,
    run_sweep,
)
from .models import (
    Classifier,
    Dataset,
    cross_entropy,
    forward,
    input_gradient,
    load_model,
    make_blob_dataset,
    save_model,
    train,
    train_adversarial,
)
from .oracles import BudgetExhausted, QueryLedger, SubstituteOracle, TargetOracle
from .results import AttackResult
from .targeted import TargetedGoal, interpolation_seed, targeted_attack, targeted_boost_step
from .whey import WheyConfig, group_squeeze, stochastic_squeeze, value_groups, whey

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "BaselineConfig", "BudgetExhausted", "Classifier",
    "CurlsConfig", "Dataset", "Image", "MeanDirection", "QueryLedger", "ResultRow",
    "ResultTable", "RoundTrace", "SubstituteOracle", "TargetOracle", "TargetedGoal",
    "WheyConfig", "binary_search_refine", "build_zoo", "clip_to_ball", "cross_entropy",
    "curls_attack", "curls_round", "emit_report", "fgsm", "forward", "gaussian_like",
    "group_squeeze", "i_fgsm", "input_gradient", "interpolation_seed", "l2_distance",
    "linf_distance", "load_model", "load_tensor", "make_blob_dataset", "make_rng",
    "median_average", "mi_fgsm", "run_matrix", "run_single_attack", "run_sweep",
    "save_model", "save_tensor", "spawn_rng", "stochastic_squeeze", "targeted_attack",
    "targeted_boost_step", "train", "train_adversarial", "unit_direction",
    "value_groups", "vr_igsm", "whey",
]
