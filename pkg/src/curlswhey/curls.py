"""Dual-trajectory curls iteration.

Each round walks two trajectories from the same start under gaussian-jittered
substitute gradients. Trajectory B always climbs the substitute loss;
trajectory A first descends it and permanently switches to ascent the first
time the target-model loss stops dropping (the one-way "downhill" flag).
Confirmed flips fold their unit noise direction into a running mean that
biases every later gradient evaluation point. Rounds end with a bisection
refinement toward the original image, and the attack shrinks its search
radius after every round that lands an adversarial.

Query accounting: one target query per trajectory per step (trajectory A's
query returns the full score vector, so its loss read costs nothing extra),
plus one per bisection step, plus a single score read of the original image
at attack start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Image,
    as_vector,
    clip_to_ball,
    gaussian_like,
    l2_distance,
    linf_distance,
    unit_direction,
)
from .oracles import BudgetExhausted, SubstituteOracle, TargetOracle
from .results import AttackResult

EPS_SHRINK = 0.9  # radius contraction applied after a round finds an adversarial


@dataclass(frozen=True)
class CurlsConfig:
    """Round structure: T0 rounds of T steps, bs bisections per round.

    eps0 is the initial per-pixel radius, alpha the L2 step size (default
    1/(2T)), s the std of the gaussian jitter on gradient evaluation points.
    """

    T0: int = 10
    T: int = 4
    bs: int = 2
    eps0: float = 0.3
    alpha: float | None = None
    s: float = 1.0

    def __post_init__(self):
        if self.T0 < 1 or self.T < 1 or self.bs < 0:
            raise ValueError("T0, T must be >= 1 and bs >= 0")
        if self.eps0 <= 0 or self.s < 0:
            raise ValueError("eps0 must be positive and s nonnegative")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def step(self) -> float:
        return self.alpha if self.alpha is not None else 1.0 / (2 * self.T)

    @property
    def round_query_cap(self) -> int:
        return 2 * self.T + self.bs


class MeanDirection:
    """Running mean of unit noise directions of confirmed adversarials."""

    def __init__(self, size: int):
        self.total = np.zeros(size)
        self.count = 0

    def update(self, x, x_adv) -> "MeanDirection":
        """Fold unit_direction(x_adv - x) into the mean; errors if x_adv == x."""
        noise = as_vector(x_adv) - as_vector(x)
        if not np.any(noise):
            raise ValueError("x_adv equals x; nothing adversarial to fold in")
        self.total += unit_direction(noise)
        self.count += 1
        return self

    @property
    def value(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.total)
        return self.total / self.count


@dataclass
class RoundTrace:
    """Per-round diagnostics emitted into the harness result stream."""

    eps: float
    losses_a: list = field(default_factory=list)
    downhill_flags: list = field(default_factory=list)
    step_successes: list = field(default_factory=list)
    queries: int = 0
    candidate_l2: float | None = None
    refined_l2: float | None = None
    exhausted: bool = False
    iterates_a: list = field(default_factory=list)
    iterates_b: list = field(default_factory=list)


def binary_search_refine(x: Image, y: int, x_adv, target: TargetOracle, bs: int,
                         success=None) -> np.ndarray:
    """Bisect between x and a confirmed adversarial, keeping the flipped side.

    Runs bs midpoint queries; the returned point is always adversarial (it is
    either x_adv itself or a queried midpoint that flipped) and never farther
    from x than x_adv. Budget exhaustion stops early with the current point.
    """
    if bs < 0:
        raise ValueError("bs must be nonnegative")
    ok = success if success is not None else (lambda lab: lab != y)
    left = x.data.copy()
    right = as_vector(x_adv).copy()
    d0 = l2_distance(right, x)
    for _ in range(bs):
        mid = (left + right) / 2.0
        try:
            label = target.query_label(mid)
        except BudgetExhausted:
            break
        if ok(label):
            right = mid
        else:
            left = mid
    assert l2_distance(right, x) <= d0 + 1e-9
    return right


def _round_engine(x: Image, grad_label: int, monitor_label: int, success_fn, sign_a_fn,
                  sign_b: float, sub: SubstituteOracle, target: TargetOracle,
                  cfg: CurlsConfig, md: MeanDirection, rng: np.random.Generator,
                  eps: float, initial_loss: float, on_confirmed=None, start=None,
                  record_iterates: bool = False):
    """One dual-trajectory round; shared by untargeted and targeted modes.

    Returns (refined candidate vector or None, RoundTrace). Every confirmed
    flip is folded into md and reported through on_confirmed; the refined
    endpoint goes through on_confirmed only.
    """
    alpha = cfg.step
    confirm = on_confirmed if on_confirmed is not None else (lambda vec: None)
    xa = x.data.copy() if start is None else as_vector(start).copy()
    xb = xa.copy()
    trace = RoundTrace(eps=eps)
    queries0 = target.ledger.used
    prev_loss_a = initial_loss
    downhill = True
    label_a = label_b = None

    def fold(vec):
        md.update(x.data, vec)
        confirm(vec)

    try:
        for _t in range(cfg.T):
            xi_a = gaussian_like(x.size, cfg.s, rng)
            xi_b = gaussian_like(x.size, cfg.s, rng)
            rbar = md.value
            g_a = sub.gradient(xa + xi_a + alpha * rbar, grad_label)
            g_b = sub.gradient(xb + xi_b + alpha * rbar, grad_label)
            xa = clip_to_ball(xa + sign_a_fn(downhill) * alpha * unit_direction(g_a), x, eps).data
            xb = clip_to_ball(xb + sign_b * alpha * unit_direction(g_b), x, eps).data

            scores_a = target.query_scores(xa)
            label_a = target.label_of(scores_a)
            loss_a = target.loss_of(scores_a, monitor_label)
            if downhill and loss_a > prev_loss_a:
                downhill = False
            prev_loss_a = loss_a
            label_b = target.query_label(xb)

            hit = False
            if success_fn(label_a):
                fold(xa)
                hit = True
            if success_fn(label_b):
                fold(xb)
                hit = True
            trace.losses_a.append(loss_a)
            trace.downhill_flags.append(downhill)
            trace.step_successes.append(hit)
            if record_iterates:
                trace.iterates_a.append(xa.copy())
                trace.iterates_b.append(xb.copy())
    except BudgetExhausted:
        trace.exhausted = True
        trace.queries = target.ledger.used - queries0
        return None, trace

    # endpoint selection: among adversarial endpoints take the closer, prefer A on ties
    candidate = None
    if label_a is not None and success_fn(label_a):
        candidate = xa
    if label_b is not None and success_fn(label_b):
        if candidate is None or l2_distance(xb, x) < l2_distance(candidate, x):
            candidate = xb
    if candidate is None:
        trace.queries = target.ledger.used - queries0
        return None, trace

    trace.candidate_l2 = l2_distance(candidate, x)
    refined = binary_search_refine(x, monitor_label, candidate, target, cfg.bs,
                                   success=success_fn)
    if target.ledger.remaining == 0:
        trace.exhausted = True
    confirm(refined)
    trace.refined_l2 = l2_distance(refined, x)
    trace.queries = target.ledger.used - queries0
    return refined, trace


def curls_round(x: Image, y: int, sub: SubstituteOracle, target: TargetOracle,
                cfg: CurlsConfig, md: MeanDirection, rng: np.random.Generator,
                eps: float | None = None, loss_at_x: float = float("inf"),
                on_confirmed=None, record_iterates: bool = False):
    """One untargeted round: descend-then-ascend trajectory A, ascent-only B.

    loss_at_x seeds the downhill comparison for the first step; callers that
    have not measured the target loss at x may leave it at +inf, which simply
    keeps the flag up through step one.
    """
    return _round_engine(
        x, grad_label=y, monitor_label=y, success_fn=lambda lab: lab != y,
        sign_a_fn=lambda downhill: -1.0 if downhill else 1.0, sign_b=1.0,
        sub=sub, target=target, cfg=cfg, md=md, rng=rng,
        eps=cfg.eps0 if eps is None else eps, initial_loss=loss_at_x,
        on_confirmed=on_confirmed, record_iterates=record_iterates,
    )


def curls_attack(x: Image, y: int, sub: SubstituteOracle, target: TargetOracle,
                 cfg: CurlsConfig, rng: np.random.Generator,
                 record_iterates: bool = False) -> AttackResult:
    """Full attack: T0 rounds under a shrinking radius, best flip wins.

    The radius starts at eps0 and contracts to 0.9x the best candidate's
    max per-pixel noise after every round that produces one, forcing later
    rounds to search strictly closer to x. The mean noise direction threads
    across rounds. Returns the minimum-L2 confirmed adversarial.
    """
    start_used = target.ledger.used
    best: dict = {"vec": None, "l2": float("inf")}

    def confirm(vec):
        d = l2_distance(vec, x)
        if d < best["l2"]:
            best["vec"] = vec.copy()
            best["l2"] = d

    traces: list[RoundTrace] = []
    try:
        scores0 = target.query_scores(x)
    except BudgetExhausted:
        return AttackResult(False, None, float("nan"), float("nan"),
                            target.ledger.used - start_used, traces)
    if target.label_of(scores0) != y:
        # already misclassified; nothing to attack
        return AttackResult(True, x.data.copy(), 0.0, 0.0,
                            target.ledger.used - start_used, traces)
    loss_at_x = target.loss_of(scores0, y)

    md = MeanDirection(x.size)
    eps = cfg.eps0
    for _round in range(cfg.T0):
        candidate, trace = curls_round(
            x, y, sub, target, cfg, md, rng, eps=eps, loss_at_x=loss_at_x,
            on_confirmed=confirm, record_iterates=record_iterates,
        )
        traces.append(trace)
        if candidate is not None:
            eps = EPS_SHRINK * linf_distance(candidate, x)
        if trace.exhausted:
            break

    queries = target.ledger.used - start_used
    if best["vec"] is None:
        return AttackResult(False, None, float("nan"), float("nan"), queries, traces)
    return AttackResult(True, best["vec"], best["l2"],
                        linf_distance(best["vec"], x), queries, traces)
