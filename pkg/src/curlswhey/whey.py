"""Post-hoc noise squeezing.

Works on the noise tensor z = x_adv - x. Step one sweeps the distinct pixel
values of z in descending magnitude order and halves each group, keeping the
change only if the target stays fooled. Step two zeroes random pixels with a
small per-pixel probability under the same keep-or-revert rule. Both steps
spend exactly one target query per attempt, so a full run costs T1 + T2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, as_vector
from .oracles import BudgetExhausted, TargetOracle


@dataclass(frozen=True)
class WheyConfig:
    """T1 group-halving attempts, T2 stochastic attempts, delta zero probability."""

    T1: int = 40
    T2: int = 40
    delta: float = 0.01

    def __post_init__(self):
        if self.T1 < 0 or self.T2 < 0:
            raise ValueError("attempt counts must be nonnegative")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


def value_groups(z) -> list[float]:
    """Distinct values of z ordered by descending absolute value.

    Equal-magnitude pairs (+v, -v) order negative first so the sweep is
    deterministic.
    """
    distinct = np.unique(as_vector(z))
    return sorted((float(v) for v in distinct), key=lambda v: (-abs(v), v))


def _candidate_image(x_vec: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.clip(x_vec + z, 0.0, 1.0)


def group_squeeze(x: Image, y: int, z, target: TargetOracle, T1: int,
                  success=None) -> np.ndarray:
    """Halve noise pixels one value group at a time, reverting failed attempts.

    Groups are swept largest magnitude first; when the sweep runs out of
    groups before the attempt allowance is spent, the (now changed) value set
    is recomputed and the sweep restarts from the top.
    """
    if T1 < 0:
        raise ValueError("T1 must be nonnegative")
    ok = success if success is not None else (lambda lab: lab != y)
    z = as_vector(z).copy()
    groups = value_groups(z)
    i = 0
    for _attempt in range(T1):
        if i >= len(groups):
            groups = value_groups(z)
            i = 0
        p = groups[i]
        i += 1
        candidate = z.copy()
        candidate[candidate == p] /= 2.0
        try:
            label = target.query_label(_candidate_image(x.data, candidate))
        except BudgetExhausted:
            break
        if ok(label):
            z = candidate
    return z


def stochastic_squeeze(x: Image, y: int, z, target: TargetOracle, T2: int,
                       delta: float, rng: np.random.Generator,
                       success=None) -> np.ndarray:
    """Zero each noise pixel with probability delta, reverting failed attempts."""
    if T2 < 0:
        raise ValueError("T2 must be nonnegative")
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    ok = success if success is not None else (lambda lab: lab != y)
    z = as_vector(z).copy()
    for _attempt in range(T2):
        mask = (rng.random(z.size) > delta).astype(np.float64)
        candidate = z * mask
        try:
            label = target.query_label(_candidate_image(x.data, candidate))
        except BudgetExhausted:
            break
        if ok(label):
            z = candidate
    return z


def whey(x: Image, y: int, x_adv, target: TargetOracle, cfg: WheyConfig,
         rng: np.random.Generator, success=None) -> Image:
    """Squeeze x_adv's noise: group halving, then stochastic zeroing.

    The output is never farther from x than the input and is adversarial
    whenever the input was: kept changes were each confirmed by a query, and
    if nothing changed the input is returned bit-exact.
    """
    adv_vec = as_vector(x_adv)
    z0 = adv_vec - x.data
    z = group_squeeze(x, y, z0, target, cfg.T1, success=success)
    z = stochastic_squeeze(x, y, z, target, cfg.T2, cfg.delta, rng, success=success)
    if np.array_equal(z, z0):
        return x_adv if isinstance(x_adv, Image) else x.like(adv_vec)
    return x.like(_candidate_image(x.data, z))
