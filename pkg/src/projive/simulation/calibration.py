"""Scale constants that give simulated blocks a target signal share.

A block is assembled as X = d J + c A + E. With the trace coefficients

    a = tr(J J^T)   b = tr(A A^T)   e = tr(E E^T)
    je = tr(J E^T)  ae = tr(A E^T)  ja = tr(J A^T)

its total variation is

    T(d, c) = d^2 a + c^2 b + e + 2 d je + 2 c ae + 2 d c ja

and the joint and individual shares are R2_J = d^2 a / T and R2_I = c^2 b / T.
For simulated J, A, E the cross terms are small but not zero, so (d, c) is
found numerically: alternating sweeps, each solving one share equation for
its own constant with the other held fixed. For fixed c, d^2 a - t_J T(d, c)
is a quadratic in d that is negative at 0, so the positive root is unique.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from projive.core.data import FloatArray
from projive.core.errors import CalibrationError

logger = logging.getLogger(__name__)

#: Largest allowed |achieved - target| for either share.
CALIBRATION_TOLERANCE = 1e-10

#: Alternating sweeps before giving up.
MAX_SWEEPS = 200


@dataclass(frozen=True)
class TraceCoefficients:
    """Trace coefficients of the share equations."""

    a: float
    b: float
    e: float
    je: float
    ae: float
    ja: float

    @classmethod
    def from_matrices(cls, j: FloatArray, a: FloatArray, e: FloatArray) -> TraceCoefficients:
        """Coefficients of the three component matrices of one block."""
        return cls(
            a=float(np.sum(j * j)),
            b=float(np.sum(a * a)),
            e=float(np.sum(e * e)),
            je=float(np.sum(j * e)),
            ae=float(np.sum(a * e)),
            ja=float(np.sum(j * a)),
        )

    def total(self, d: float, c: float) -> float:
        """T(d, c) = ||d J + c A + E||_F^2."""
        return (
            d * d * self.a
            + c * c * self.b
            + self.e
            + 2.0 * d * self.je
            + 2.0 * c * self.ae
            + 2.0 * d * c * self.ja
        )

    def shares(self, d: float, c: float) -> tuple[float, float]:
        """(R2_J, R2_I) at the given constants."""
        total = self.total(d, c)
        return d * d * self.a / total, c * c * self.b / total


@dataclass(frozen=True)
class ScaleConstants:
    """Multipliers of the joint (d) and individual (c) matrices of a block."""

    d: float
    c: float


def r2_ratios(j: FloatArray, a: FloatArray, e: FloatArray, d: float, c: float) -> tuple[float, float]:
    """Joint and individual shares of X = d J + c A + E from the matrices."""
    x = d * j + c * a + e
    total = float(np.sum(x * x))
    return float(np.sum((d * j) ** 2)) / total, float(np.sum((c * a) ** 2)) / total


def _positive_root(own: float, target: float, linear: float, rest: float) -> float:
    """Positive root of own (1 - t) s^2 - 2 t linear s - t rest = 0.

    Args:
        own: Squared norm of the scaled matrix (a or b).
        target: Target share t.
        linear: Cross term multiplying s (e.g. je + c ja).
        rest: Remaining variation, ||other + E||^2.
    """

    def f(s: float) -> float:
        return own * (1.0 - target) * s * s - 2.0 * target * linear * s - target * rest

    alpha = own * (1.0 - target)
    hi = 2.0 * target * abs(linear) / alpha + math.sqrt(target * max(rest, 0.0) / alpha) + 1e-12
    while f(hi) <= 0:
        hi *= 2.0
        if not math.isfinite(hi):
            msg = "No positive root for the scale constant"
            raise CalibrationError(msg)
    root: float = optimize.brentq(f, 0.0, hi, xtol=np.finfo(float).tiny, rtol=4 * np.finfo(float).eps, maxiter=500)
    return root


def solve_scale_constants(
    j: FloatArray,
    a: FloatArray,
    e: FloatArray,
    target_r2_j: float,
    target_r2_i: float,
    *,
    tol: float = CALIBRATION_TOLERANCE,
    max_sweeps: int = MAX_SWEEPS,
) -> ScaleConstants:
    """Solve for (d, c) so that X = d J + c A + E has the target shares.

    A zero target pins its constant at 0 (used for blocks without joint or
    individual structure); its matrix may then be zero.

    Args:
        j: Unscaled joint signal matrix.
        a: Unscaled individual signal matrix.
        e: Noise matrix.
        target_r2_j: Target joint share in [0, 1).
        target_r2_i: Target individual share in [0, 1).
        tol: Residual tolerance on both shares.
        max_sweeps: Alternating sweeps allowed.

    Returns:
        The scale constants.

    Raises:
        ValueError: If targets are out of range.
        CalibrationError: If no positive solution is found; carries the trace
            coefficients and the last iterate as diagnostics.
    """
    if not (0 <= target_r2_j < 1 and 0 <= target_r2_i < 1 and target_r2_j + target_r2_i < 1):
        msg = f"Targets must lie in [0, 1) and sum below 1, got {target_r2_j} and {target_r2_i}"
        raise ValueError(msg)

    coef = TraceCoefficients.from_matrices(j, a, e)
    diagnostics: dict[str, float | int] = dict(asdict(coef))
    for name, norm, target in (("J", coef.a, target_r2_j), ("A", coef.b, target_r2_i)):
        if target > 0 and norm == 0:
            msg = f"Target share {target} requested for a zero {name} matrix"
            raise CalibrationError(msg, diagnostics)
    if coef.e == 0 and coef.a * target_r2_j == 0 and coef.b * target_r2_i == 0:
        msg = "Noise matrix is zero and no signal is requested"
        raise CalibrationError(msg, diagnostics)

    slack = 1.0 - target_r2_j - target_r2_i
    d = math.sqrt(target_r2_j * coef.e / (coef.a * slack)) if target_r2_j > 0 else 0.0
    c = math.sqrt(target_r2_i * coef.e / (coef.b * slack)) if target_r2_i > 0 else 0.0

    for sweep in range(max_sweeps + 1):
        r2_j, r2_i = coef.shares(d, c)
        residual = max(abs(r2_j - target_r2_j), abs(r2_i - target_r2_i))
        if residual < tol:
            logger.debug("Calibrated d=%.6g c=%.6g after %d sweeps", d, c, sweep)
            return ScaleConstants(d=d, c=c)
        if sweep == max_sweeps:
            break
        if target_r2_j > 0:
            d = _positive_root(
                coef.a, target_r2_j, coef.je + c * coef.ja, c * c * coef.b + coef.e + 2.0 * c * coef.ae
            )
        if target_r2_i > 0:
            c = _positive_root(
                coef.b, target_r2_i, coef.ae + d * coef.ja, d * d * coef.a + coef.e + 2.0 * d * coef.je
            )

    diagnostics.update(d=d, c=c, residual=residual, sweeps=max_sweeps)
    msg = (
        f"Scale constants did not reach the target shares ({target_r2_j}, {target_r2_i}) "
        f"within {max_sweeps} sweeps (residual {residual:.3g})"
    )
    raise CalibrationError(msg, diagnostics)
