"""
Kernel Service - construction of averaging kernels and weighted averages.

Kernels live in the family P(t^2)(1 - t^2)^(q+1). The even polynomial P is
fixed by the moment conditions, all integrals of the form
int t^(2n) (1 - t^2)^(q+1) dt being Beta functions. Averages are
trapezoidal sums on uniform grids with kernel weights normalized to unit sum.
"""
from typing import Sequence

import numpy as np
import structlog
from scipy.special import beta

from app.core.exceptions import KernelConstructionError, PreconditionError
from app.models.kernel import Kernel

logger = structlog.get_logger(__name__)

UNIFORM_RTOL = 1e-9
COVERAGE_RTOL = 1e-9


def build_kernel(p: int, q: int) -> Kernel:
    """
    Build the kernel with p vanishing moments and smoothness q.

    Args:
        p: Vanishing moment count, p >= 1
        q: Smoothness order, q >= 0

    Returns:
        Kernel with unit mass and moments 1..p equal to zero

    Raises:
        KernelConstructionError: Bad (p, q) or singular moment system
    """
    if p < 1 or q < 0:
        raise KernelConstructionError(f"need p >= 1 and q >= 0, got p={p}, q={q}")
    m = p // 2
    k = np.arange(m + 1)
    # M[k, j] = int_{-1}^{1} t^(2k) t^(2j) (1 - t^2)^(q+1) dt
    moments = beta(k[:, None] + k[None, :] + 0.5, q + 2)
    rhs = np.zeros(m + 1)
    rhs[0] = 1.0
    try:
        coeffs = np.linalg.solve(moments, rhs)
    except np.linalg.LinAlgError as exc:
        raise KernelConstructionError(f"singular moment system for p={p}, q={q}") from exc
    if not np.all(np.isfinite(coeffs)):
        raise KernelConstructionError(f"non-finite kernel coefficients for p={p}, q={q}")
    logger.debug("kernel_built", p=p, q=q, coeffs=coeffs.tolist())
    return Kernel(p=p, q=q, coeffs=tuple(float(c) for c in coeffs))


def eval_scaled(kernel: Kernel, eta: float, x) -> np.ndarray:
    """K_eta(x) = K(x / eta) / eta, zero for |x| > eta."""
    if not eta > 0:
        raise PreconditionError("eta must be positive")
    return kernel(np.asarray(x, dtype=float) / eta) / eta


def kernel_weights(kernel: Kernel, eta: float, nodes: np.ndarray, center: float) -> np.ndarray:
    """
    Trapezoidal weights of K_eta(x - center) on uniform nodes, summing to one.

    Args:
        kernel: Averaging kernel
        eta: Kernel half-width
        nodes: Uniform, increasing sample positions covering [center - eta, center + eta]
        center: Window center

    Raises:
        PreconditionError: Fewer than 3 nodes, non-uniform nodes or a window
            not covered by the nodes
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 3:
        raise PreconditionError("need at least 3 uniform samples")
    steps = np.diff(nodes)
    h = float(steps.mean())
    if h <= 0 or not np.allclose(steps, h, rtol=UNIFORM_RTOL, atol=0.0):
        raise PreconditionError("samples must lie on a uniform increasing grid")
    slack = COVERAGE_RTOL * max(eta, h)
    if nodes[0] > center - eta + slack or nodes[-1] < center + eta - slack:
        raise PreconditionError(
            f"samples [{nodes[0]:.6g}, {nodes[-1]:.6g}] do not cover the window "
            f"[{center - eta:.6g}, {center + eta:.6g}]"
        )
    weights = eval_scaled(kernel, eta, nodes - center) * h
    weights[0] *= 0.5
    weights[-1] *= 0.5
    total = weights.sum()
    if not total > 0:
        raise PreconditionError("window too coarse: kernel weights vanish")
    return weights / total


def weighted_average(
    kernel: Kernel,
    eta: float,
    nodes: np.ndarray,
    samples: np.ndarray,
    center: float = 0.0,
) -> float:
    """Trapezoidal approximation of int K_eta(x - c) f(x) dx."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != np.shape(nodes):
        raise PreconditionError("samples and nodes differ in shape")
    return float(kernel_weights(kernel, eta, nodes, center) @ samples)


def contract(values: np.ndarray, weights: Sequence[np.ndarray]) -> np.ndarray:
    """Contract the trailing axes of ``values`` with per-axis weights, last axis first."""
    result = np.asarray(values, dtype=float)
    for w in reversed(weights):
        result = result @ w
    return result


def weighted_average_nd(
    kernel: Kernel,
    eta: float,
    axes: Sequence[np.ndarray],
    samples: np.ndarray,
    center: Sequence[float],
) -> float:
    """Tensor-product average with K_eta(x_1) ... K_eta(x_d)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != tuple(len(a) for a in axes) or len(center) != len(axes):
        raise PreconditionError("samples do not match the axis grids")
    weights = [kernel_weights(kernel, eta, a, c) for a, c in zip(axes, center)]
    return float(contract(samples, weights))


def space_time_average(
    kernel_space: Kernel,
    kernel_time: Kernel,
    eta: float,
    tau: float,
    times: np.ndarray,
    axes: Sequence[np.ndarray],
    samples: np.ndarray,
    center: Sequence[float],
    t_center: float = 0.0,
) -> float:
    """
    Space-time kernel average of samples[t, x_1, ..., x_d].

    Space is contracted first at every time level, then time.

    Args:
        eta: Spatial kernel half-width
        tau: Temporal kernel half-width
        times: Uniform time nodes covering [t_center - tau, t_center + tau]
        axes: Uniform spatial nodes per axis
        samples: Field values, shape (len(times), len(axes[0]), ...)
        center: Spatial window center
        t_center: Temporal window center

    Raises:
        PreconditionError: Shapes disagree or the window is not covered
    """
    samples = np.asarray(samples, dtype=float)
    expected = (len(times),) + tuple(len(a) for a in axes)
    if samples.shape != expected or len(center) != len(axes):
        raise PreconditionError(f"samples of shape {samples.shape}, expected {expected}")
    space_weights = [kernel_weights(kernel_space, eta, a, c) for a, c in zip(axes, center)]
    time_weights = kernel_weights(kernel_time, tau, times, t_center)
    return float(contract(samples, space_weights) @ time_weights)
