"""
Analysis Service - error norms and convergence rates.
"""
from typing import Iterable, Optional

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import PreconditionError, RegressionError

logger = structlog.get_logger(__name__)


def discrete_l2_norm(values: np.ndarray, H: float) -> float:
    """sqrt(H^d sum v^2) for a d-dimensional grid array."""
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(H**values.ndim * np.sum(values * values)))


def relative_l2_error(values: np.ndarray, reference: np.ndarray, H: float) -> float:
    """Discrete L2 distance relative to the reference norm."""
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if values.shape != reference.shape:
        raise PreconditionError(f"shapes differ: {values.shape} vs {reference.shape}")
    scale = discrete_l2_norm(reference, H)
    if scale == 0.0:
        raise PreconditionError("reference has zero norm")
    return discrete_l2_norm(values - reference, H) / scale


def fit_loglog_slope(
    pairs: Iterable[tuple[float, float]],
    noise_floor: Optional[float] = None,
) -> float:
    """
    Least-squares slope of log(error) against log(epsilon).

    Points with error below ``noise_floor`` (SLOPE_NOISE_FLOOR by default)
    are dropped.

    Raises:
        RegressionError: Fewer than 3 usable points
    """
    floor = settings.SLOPE_NOISE_FLOOR if noise_floor is None else noise_floor
    usable = [(x, e) for x, e in pairs if x > 0 and np.isfinite(e) and e >= floor]
    if len(usable) < 3:
        raise RegressionError(f"only {len(usable)} points above the noise floor {floor:g}")
    x, e = np.array(usable).T
    slope, _ = np.polyfit(np.log(x), np.log(e), 1)
    logger.debug("slope_fitted", points=len(usable), slope=float(slope))
    return float(slope)


def fit_envelope_slope(
    pairs: Iterable[tuple[float, float]],
    bins: int,
    noise_floor: Optional[float] = None,
) -> float:
    """
    Log-log slope through the largest error of each epsilon bin.

    The sweep is sorted by epsilon and split into ``bins`` contiguous groups;
    each group contributes its worst point. Upscaling errors oscillate in
    epsilon under an algebraic envelope, and this fit follows the envelope.

    Raises:
        RegressionError: Fewer than 3 bins, or fewer than 3 usable maxima
    """
    if bins < 3:
        raise RegressionError(f"need at least 3 bins, got {bins}")
    ordered = sorted((x, e) for x, e in pairs if x > 0 and np.isfinite(e))
    if len(ordered) < bins:
        raise RegressionError(f"{len(ordered)} points cannot fill {bins} bins")
    peaks = [max(group, key=lambda pair: pair[1]) for group in np.array_split(np.array(ordered), bins)]
    return fit_loglog_slope([(float(x), float(e)) for x, e in peaks], noise_floor)
