"""Attack-facing oracle boundary.

TargetOracle wraps the attacked model (or an ensemble) behind a strictly
counted query interface: every score read costs exactly one unit from its
QueryLedger, whether the caller wants the label, the loss, or the full
probability vector. SubstituteOracle wraps the attacker's local model and
hands out gradients for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_vector, gaussian_like
from .models import Classifier, input_gradient, PROB_FLOOR


class BudgetExhausted(RuntimeError):
    """Signal that the target-query budget is spent; attacks return best-so-far."""


@dataclass
class QueryLedger:
    """Monotone query counter with an optional hard budget."""

    budget: int | None = None
    used: int = 0

    def __post_init__(self):
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be positive (or None for unlimited)")

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.used

    def charge(self) -> None:
        if self.budget is not None and self.used >= self.budget:
            raise BudgetExhausted(f"query budget of {self.budget} exhausted")
        self.used += 1


class TargetOracle:
    """Counted score access to one classifier or the mean of an ensemble."""

    def __init__(self, models, budget: int | None = None, ledger: QueryLedger | None = None):
        if isinstance(models, Classifier):
            models = [models]
        self.models = list(models)
        if not self.models:
            raise ValueError("oracle needs at least one model")
        k = self.models[0].n_classes
        if any(m.n_classes != k for m in self.models):
            raise ValueError("ensemble members disagree on class count")
        self.n_classes = k
        self.ledger = ledger if ledger is not None else QueryLedger(budget)

    def _mean_probs(self, x) -> np.ndarray:
        v = as_vector(x)
        probs = self.models[0].forward_batch(v[None, :])[0]
        for m in self.models[1:]:
            probs = probs + m.forward_batch(v[None, :])[0]
        return probs / len(self.models)

    def query_scores(self, x) -> np.ndarray:
        """Full class-probability vector; costs one query."""
        self.ledger.charge()
        return self._mean_probs(x)

    def query_label(self, x) -> int:
        """Predicted class; ties broken toward the lowest index. Costs one query."""
        return int(np.argmax(self.query_scores(x)))

    def query_loss(self, x, y: int) -> float:
        """Cross-entropy of the (ensemble-mean) scores against y. Costs one query."""
        if not 0 <= y < self.n_classes:
            raise ValueError(f"label {y} outside [0, {self.n_classes})")
        p = self.query_scores(x)
        return float(-np.log(max(p[y], PROB_FLOOR)))

    @staticmethod
    def label_of(scores) -> int:
        return int(np.argmax(scores))

    @staticmethod
    def loss_of(scores, y: int) -> float:
        return float(-np.log(max(scores[y], PROB_FLOOR)))


class SubstituteOracle:
    """Uncounted gradient access to the attacker's local model."""

    def __init__(self, model: Classifier):
        self.model = model

    def gradient(self, x, y: int) -> np.ndarray:
        """Input gradient of the substitute's cross-entropy loss at (x, y)."""
        return input_gradient(self.model, x, y)

    def smoothed_gradient(self, x, y: int, s: float, m: int,
                          rng: np.random.Generator) -> np.ndarray:
        """Mean input gradient over m gaussian-jittered copies of x.

        s == 0 short-circuits to the plain gradient without touching the rng,
        making zero-noise runs bit-identical to their unsmoothed counterparts.
        """
        if m < 1:
            raise ValueError("m must be at least 1")
        if s < 0:
            raise ValueError("s must be nonnegative")
        v = as_vector(x)
        if s == 0:
            return self.gradient(v, y)
        total = np.zeros_like(v)
        for _ in range(m):
            total += self.gradient(v + gaussian_like(v.size, s, rng), y)
        return total / m
