"""Reference iterative attacks in their L2 (unit-direction) variants.

All four attacks replace the classic sign() update with whole-tensor L2
normalisation, so step length is alpha in euclidean norm. Iterative variants
query the target once per step and stop at the first confirmed flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, as_vector, clip_to_ball, l2_distance, linf_distance, unit_direction
from .models import Classifier, input_gradient
from .oracles import BudgetExhausted, SubstituteOracle, TargetOracle
from .results import AttackResult


@dataclass(frozen=True)
class BaselineConfig:
    """Knobs shared by the iterative baselines.

    eps: per-pixel ball radius; alpha: L2 step size (defaults to 1/(2T));
    T: iteration count; mu: momentum decay; s: gradient-smoothing std;
    m: smoothing sample count.
    """

    eps: float = 0.3
    alpha: float | None = None
    T: int = 10
    mu: float = 1.0
    s: float = 1.0
    m: int = 8

    def __post_init__(self):
        if self.eps <= 0 or self.T < 1 or self.mu < 0 or self.s < 0 or self.m < 1:
            raise ValueError("invalid baseline configuration")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def step(self) -> float:
        return self.alpha if self.alpha is not None else 1.0 / (2 * self.T)


def fgsm_batch(model: Classifier, X, y, eps: float) -> np.ndarray:
    """Single-step unit-gradient-direction examples for a training batch.

    Used by adversarial training; crafted against `model` itself, clamped to
    the eps box around each row and to [0, 1]. eps = 0 returns the rows
    unchanged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        g = input_gradient(model, X[i], int(y[i]))
        stepped = X[i] + eps * unit_direction(g)
        out[i] = np.clip(stepped, np.maximum(X[i] - eps, 0.0), np.minimum(X[i] + eps, 1.0))
    return out


def _result(success, candidate, x: Image, queries, trace) -> AttackResult:
    if not success:
        return AttackResult(False, None, float("nan"), float("nan"), queries, trace)
    return AttackResult(True, candidate, l2_distance(candidate, x), linf_distance(candidate, x),
                        queries, trace)


def fgsm(x: Image, y: int, sub: SubstituteOracle, target: TargetOracle,
         eps: float) -> AttackResult:
    """One full-strength step along the substitute gradient direction."""
    start = target.ledger.used
    g = sub.gradient(x, y)
    candidate = clip_to_ball(x.data + eps * unit_direction(g), x, eps).data
    try:
        label = target.query_label(candidate)
    except BudgetExhausted:
        return _result(False, None, x, target.ledger.used - start, [])
    return _result(label != y, candidate, x, target.ledger.used - start, [])


def _run_iterative(x: Image, y: int, target: TargetOracle, cfg: BaselineConfig,
                   direction_fn) -> AttackResult:
    """Shared engine: step, clip, query, exit on first flip.

    direction_fn(iterate, step_index) -> unit-scale update direction.
    """
    start = target.ledger.used
    xt = x.data.copy()
    trace = []
    for t in range(cfg.T):
        xt = clip_to_ball(xt + cfg.step * direction_fn(xt, t), x, cfg.eps).data
        try:
            label = target.query_label(xt)
        except BudgetExhausted:
            return _result(False, None, x, target.ledger.used - start, trace)
        trace.append({"step": t, "label": label, "iterate": xt.copy()})
        if label != y:
            return _result(True, xt, x, target.ledger.used - start, trace)
    return _result(False, None, x, target.ledger.used - start, trace)


def i_fgsm(x: Image, y: int, sub: SubstituteOracle, target: TargetOracle,
           cfg: BaselineConfig) -> AttackResult:
    """Iterative unit-gradient ascent with per-step ball clipping."""

    def direction(xt, _t):
        return unit_direction(sub.gradient(xt, y))

    return _run_iterative(x, y, target, cfg, direction)


def mi_fgsm(x: Image, y: int, sub: SubstituteOracle, target: TargetOracle,
            cfg: BaselineConfig) -> AttackResult:
    """Momentum variant: accumulate normalised gradients, step along the mean.

    mu = 0 reduces algebraically to i_fgsm (the momentum buffer holds exactly
    the current normalised gradient), and is special-cased so the reduction
    is bit-exact rather than within re-normalisation rounding.
    """
    momentum = np.zeros(x.size)

    def direction(xt, _t):
        g = sub.gradient(xt, y)
        if cfg.mu == 0:
            return unit_direction(g)
        nonlocal momentum
        momentum = cfg.mu * momentum + unit_direction(g)
        return unit_direction(momentum)

    return _run_iterative(x, y, target, cfg, direction)


def vr_igsm(x: Image, y: int, sub: SubstituteOracle, target: TargetOracle,
            cfg: BaselineConfig, rng: np.random.Generator) -> AttackResult:
    """i_fgsm with the raw gradient replaced by its gaussian-smoothed mean."""

    def direction(xt, _t):
        return unit_direction(sub.smoothed_gradient(xt, y, cfg.s, cfg.m, rng))

    return _run_iterative(x, y, target, cfg, direction)
