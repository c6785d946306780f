"""Gradient sanitization and Renyi-DP accounting.

The sanitizer clips the gradient that crosses from the discriminator into
the generator to L2 norm C/B and adds Gaussian noise of scale (C/B)*sigma.
Each sanitized generator update is charged (lambda, 2*B*lambda/sigma^2)
Renyi differential privacy; T composed updates convert to (epsilon, delta)
via the standard minimization over an integer order grid:

    epsilon = min_lambda [ T * 2*B*lambda / sigma^2 + ln(1/delta) / (lambda - 1) ]

Noise is generated with a Box-Muller transform driven by the caller's
seeded generator, so a run's privacy noise is reproducible from its seed.
Deployments that need fresh entropy should seed from the OS instead (the
CLI exposes this as ``--os-entropy``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonPrivateRunError

__all__ = [
    "SanitizerConfig",
    "PrivacyLedger",
    "gaussian_noise",
    "sanitize",
    "record_update",
    "epsilon",
    "calibrate_sigma",
    "DEFAULT_LAMBDA_GRID",
    "DEFAULT_DELTA",
]

DEFAULT_LAMBDA_GRID = tuple(range(2, 129))
DEFAULT_DELTA = 1e-5
SIGMA_CEILING = 1e6


@dataclass(frozen=True)
class SanitizerConfig:
    """Clip norm C, batch size B and noise multiplier sigma."""

    clip: float
    batch: int
    sigma: float

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError(f"clip norm must be positive, got {self.clip}")
        if self.batch < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch}")
        if self.sigma < 0:
            raise ValueError(f"noise multiplier must be >= 0, got {self.sigma}")

    @property
    def bound(self) -> float:
        """Per-batch gradient norm bound C/B."""
        return self.clip / self.batch


@dataclass
class PrivacyLedger:
    """Counts sanitized generator updates and converts them to epsilon(delta)."""

    config: SanitizerConfig
    updates: int = 0
    lambda_grid: tuple[int, ...] = DEFAULT_LAMBDA_GRID
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if any(l < 2 for l in self.lambda_grid):
            raise ValueError("lambda grid entries must be >= 2")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


def gaussian_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal draws via the Box-Muller transform on ``rng`` uniforms."""
    n_pairs = (size + 1) // 2
    u1 = 1.0 - rng.random(n_pairs)  # (0, 1], keeps the log finite
    u2 = rng.random(n_pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:size]


def sanitize(g_in: np.ndarray, config: SanitizerConfig,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Clip ``g_in`` to L2 norm C/B as one flat vector, then add Gaussian noise.

    The scaling coefficient is min((C/B) / ||g||, 1); a zero-norm guard
    floors the denominator at 1e-10 without perturbing non-degenerate
    inputs. With sigma > 0 an ``rng`` is required; noise has per-coordinate
    standard deviation (C/B) * sigma.
    """
    g = np.asarray(g_in, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("sanitize: input gradient has non-finite entries")
    norm = float(np.sqrt(np.sum(g * g)))
    bound = config.bound
    coef = min(bound / max(norm, 1e-10), 1.0)
    out = coef * g
    if config.sigma > 0:
        if rng is None:
            raise ValueError("sanitize: sigma > 0 requires an rng")
        noise = gaussian_noise(rng, g.size).reshape(g.shape)
        out = out + bound * config.sigma * noise
    return out


def record_update(ledger: PrivacyLedger) -> PrivacyLedger:
    """Charge one sanitized generator update to the ledger."""
    if ledger.config.sigma == 0:
        raise NonPrivateRunError("sigma = 0 runs are non-private and are not accounted")
    ledger.updates += 1
    return ledger


def _epsilon_at(order: int, updates: int, batch: int, sigma: float, delta: float) -> float:
    rdp = updates * 2.0 * batch * order / (sigma * sigma)
    return rdp + math.log(1.0 / delta) / (order - 1)


def epsilon(ledger: PrivacyLedger) -> tuple[float, int]:
    """Best (epsilon, order) over the ledger's lambda grid."""
    if ledger.updates < 1:
        raise ValueError("epsilon: no updates recorded")
    if ledger.config.sigma <= 0:
        raise NonPrivateRunError("epsilon is undefined for sigma = 0")
    if not ledger.lambda_grid:
        raise ValueError("epsilon: empty lambda grid")
    best = None
    best_order = None
    for order in ledger.lambda_grid:
        eps = _epsilon_at(order, ledger.updates, ledger.config.batch,
                          ledger.config.sigma, ledger.delta)
        if best is None or eps < best:
            best, best_order = eps, order
    return best, best_order


def calibrate_sigma(target_epsilon: float, delta: float, updates: int, batch: int,
                    lambda_grid: tuple[int, ...] = DEFAULT_LAMBDA_GRID) -> float:
    """Smallest sigma whose epsilon stays at or below ``target_epsilon``.

    Bisects to 1e-3 relative width. Raises ConfigError when no sigma up to
    1e6 reaches the target (the conversion term alone can exceed it).
    """
    if target_epsilon <= 0:
        raise ConfigError("target epsilon must be positive")

    def eps_of(sigma: float) -> float:
        ledger = PrivacyLedger(SanitizerConfig(1.0, batch, sigma), updates,
                               tuple(lambda_grid), delta)
        return epsilon(ledger)[0]

    if eps_of(SIGMA_CEILING) > target_epsilon:
        raise ConfigError(
            f"target epsilon {target_epsilon} is unreachable with T={updates}, "
            f"B={batch}, delta={delta} for sigma up to {SIGMA_CEILING:g}"
        )
    lo, hi = 1e-9, SIGMA_CEILING
    if eps_of(lo) <= target_epsilon:
        return lo
    while (hi - lo) > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if eps_of(mid) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi
