"""Result record shared by every attack entry point."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AttackResult:
    """Outcome of one attack on one image.

    `adversarial` is the flat candidate that triggered `success`, or None on
    failure. `queries` counts target-oracle charges attributable to this
    attack. `trace` holds per-round/per-step diagnostics (attack specific).
    """

    success: bool
    adversarial: np.ndarray | None
    l2: float
    linf: float
    queries: int
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.success and self.adversarial is None:
            raise ValueError("successful result must carry an adversarial example")
        if self.success and self.l2 < 0:
            raise ValueError("distance must be nonnegative")
