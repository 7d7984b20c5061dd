"""Virtual environments via graded additive Gaussian noise.

Environment e carries noise coefficient alpha1 * e; environment 0 is the
clean input itself. Noise for each environment comes from a counter-based
stream keyed on (seed, environment), so regenerating any single variant is
independent of draw order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import stream
from .tensor import Tensor


@dataclass
class NoiseSchedule:
    K: int
    alpha1: float
    coefficients: list[float] = field(init=False)

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("environment count K must be >= 1")
        if self.alpha1 < 0:
            raise ConfigError("base noise coefficient must be nonnegative")
        self.coefficients = [self.alpha1 * e for e in range(1, self.K + 1)]


@dataclass
class EnvironmentBatch:
    variants: list[Tensor]  # index 0 is the untouched input
    env_ids: list[int]
    rng_seed: int


def make_schedule(K: int, alpha1: float) -> NoiseSchedule:
    return NoiseSchedule(K=K, alpha1=alpha1)


def perturb(X: Tensor, schedule: NoiseSchedule, seed: int) -> EnvironmentBatch:
    variants = [X]
    for e in range(1, schedule.K + 1):
        coeff = schedule.coefficients[e - 1]
        noise = stream(seed, "env-noise", e).standard_normal(X.shape)
        variants.append(X + Tensor(coeff * noise))
    return EnvironmentBatch(
        variants=variants, env_ids=list(range(schedule.K + 1)), rng_seed=seed
    )


def pair_indices(K: int) -> list[tuple[int, int]]:
    """All unordered pairs over the K+1 variant indices; length K(K+1)/2."""
    if K < 1:
        raise ConfigError("environment count K must be >= 1")
    return [(i, j) for i in range(K + 1) for j in range(i + 1, K + 1)]
