"""Two-block design with group-structured joint scores and sparse joint loadings.

Subjects in the first half get joint score -1 and the rest +1. Block 1 loads
on the joint score through its second half of features, block 2 through its
last 20%. Individual structure:

- block 1: one component whose scores split subjects into two groups
  (alternating, so the split differs from the joint halves);
- block 2: two components with standard Gaussian scores.

Individual loadings are built to have zero inner product with the joint
loading of their block. All signal matrices enter with unit scale. Gaussian
scores and noise are centered over subjects; the group scores already are
for even n.
"""

from __future__ import annotations

import logging

import numpy as np

from projive.core.data import FloatArray
from projive.core.errors import ShapeError
from projive.simulation.calibration import ScaleConstants
from projive.simulation.scenarios import SimTruth, assemble_truth, center_subjects

logger = logging.getLogger(__name__)


#: Smallest block size accepted.
MIN_FEATURES = 10


def _signs(length: int) -> FloatArray:
    """+1, -1, +1, ... of the given length."""
    return np.where(np.arange(length) % 2 == 0, 1.0, -1.0)


def _orthogonal_to(column: FloatArray, joint: FloatArray) -> FloatArray:
    """Zero the last joint-support entry when the column is not orthogonal to joint."""
    out = column.copy()
    if float(out @ joint) != 0.0:
        support = np.flatnonzero(joint)
        out[support[-1]] = 0.0
    return out


def feng_joint_loadings(p: int, zero_count: int) -> FloatArray:
    """Joint loading vector: zero_count zeros followed by ones, shape (p, 1)."""
    w = np.zeros((p, 1))
    w[zero_count:, 0] = 1.0
    return w


def generate_feng(
    n: int = 100,
    p1: int = 100,
    p2: int = 1000,
    noise_sd: float = 1.0,
    seed: int = 0,
) -> SimTruth:
    """Generate the two-block design with ranks r_J = 1 and r_I = (1, 2).

    Args:
        n: Subjects; must be even.
        p1: Features in block 1 (at least 10).
        p2: Features in block 2 (at least 10).
        noise_sd: Standard deviation of the Gaussian noise; 0 gives noiseless blocks.
        seed: Seed for the Gaussian scores of block 2 and the noise.

    Returns:
        The simulated truth. `scale_constants` are all (1, 1).

    Raises:
        ShapeError: If n is odd or a block has fewer than 10 features.
        ValueError: If noise_sd is negative.
    """
    if n % 2 or n < 2:
        msg = f"n must be a positive even number, got {n}"
        raise ShapeError(msg)
    if min(p1, p2) < MIN_FEATURES:
        msg = f"Both blocks need at least {MIN_FEATURES} features, got ({p1}, {p2})"
        raise ShapeError(msg)
    if noise_sd < 0 or not np.isfinite(noise_sd):
        msg = f"noise_sd must be finite and non-negative, got {noise_sd}"
        raise ValueError(msg)

    rng = np.random.default_rng(seed)
    half = n // 2
    z = np.concatenate([-np.ones(half), np.ones(half)])[:, None]

    wj1 = feng_joint_loadings(p1, p1 // 2)
    zeros2 = (4 * p2) // 5
    wj2 = feng_joint_loadings(p2, zeros2)

    wi1 = _orthogonal_to(_signs(p1), wj1[:, 0])[:, None]
    block_pattern = np.zeros(p2)
    block_pattern[: zeros2 // 2] = 1.0
    block_pattern[zeros2 // 2 : zeros2] = -1.0
    wi2 = np.column_stack([_orthogonal_to(_signs(p2), wj2[:, 0]), block_pattern])

    b1 = _signs(n)[:, None]
    b2 = center_subjects(rng.standard_normal((n, 2)), axis=0)
    e1 = noise_sd * center_subjects(rng.standard_normal((p1, n)), axis=1)
    e2 = noise_sd * center_subjects(rng.standard_normal((p2, n)), axis=1)

    unit = ScaleConstants(d=1.0, c=1.0)
    truth = assemble_truth(
        z,
        [b1, b2],
        [wj1, wj2],
        [wi1, wi2],
        [e1, e2],
        [unit, unit],
        noise_sd=noise_sd,
        label="feng",
        seed=seed,
    )
    logger.debug("Generated feng design n=%d p=(%d, %d) noise_sd=%s", n, p1, p2, noise_sd)
    return truth
