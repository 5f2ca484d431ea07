"""
Upscale Service - upscaled fluxes from micro simulations.

F(x_I, hess) is the space-time kernel average of A : grad^2 u over the
window x_I + [-eta/2, eta/2]^d and t in [-tau/2, tau/2]. Flux providers
wrap either this computation or a known homogenized tensor behind one
interface used by the macro solver.
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Protocol, TypeVar, Union

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import PreconditionError, UpscalingError
from app.models.coefficient import CoefficientField
from app.models.enums import ReusePolicy
from app.models.kernel import Kernel
from app.models.macro import QuadraticFitBatch
from app.models.micro import MicroProblemSpec, QuadraticPoly
from app.models.reference import HomogenizedTensor
from app.services.coefficient_service import sup_norm
from app.services.kernel_service import contract, kernel_weights, space_time_average
from app.services.micro_service import (
    MicroSolver,
    build_micro_spec,
    mirror_in_time,
    quadratic_terms,
    solve_micro,
)

logger = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class UpscaleConfig:
    """Averaging parameters of the upscaling step.

    Attributes:
        kernel_space: Spatial kernel
        kernel_time: Temporal kernel
        eta: Spatial window width, the window is x_I + [-eta/2, eta/2]^d
        tau: Temporal window width, the window is [-tau/2, tau/2]
        reuse_policy: Flux reuse across macro steps
        points_per_wavelength: Micro resolution, defaults per dimension from settings
    """

    kernel_space: Kernel
    kernel_time: Kernel
    eta: float
    tau: float
    reuse_policy: ReusePolicy = ReusePolicy.EFFECTIVE_TENSOR_CACHE
    points_per_wavelength: Optional[int] = None

    def __post_init__(self) -> None:
        if not (self.eta > 0 and self.tau > 0):
            raise PreconditionError("eta and tau must be positive")
        if self.points_per_wavelength is not None and self.points_per_wavelength < 10:
            raise PreconditionError("points_per_wavelength must be at least 10")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> list[R]:
    """Map in a thread pool, results in input order."""
    items = list(items)
    workers = settings.WORKERS if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check_window(field: CoefficientField, cfg: UpscaleConfig) -> None:
    if cfg.eta < field.epsilon or cfg.tau < field.epsilon:
        raise PreconditionError(
            f"averaging window (eta={cfg.eta}, tau={cfg.tau}) must not be smaller "
            f"than epsilon={field.epsilon}"
        )


def average_flux(spec: MicroProblemSpec, cfg: UpscaleConfig) -> float:
    """Stream a micro solve and average its flux integrand."""
    try:
        space = kernel_weights(cfg.kernel_space, 0.5 * cfg.eta, spec.window_offsets(), 0.0)
        times = spec.dt_micro * np.arange(-spec.steps, spec.steps + 1)
        time = kernel_weights(cfg.kernel_time, 0.5 * cfg.tau, times, 0.0)
    except PreconditionError as exc:
        raise UpscalingError(f"micro window does not cover the averaging window: {exc}") from exc
    weights = [space] * spec.dim
    series = np.array(
        [contract(integrand, weights) for _, _, integrand in MicroSolver(spec).iterate()]
    )
    return float(mirror_in_time(series) @ time)


def upscale_flux(field: CoefficientField, uhat: QuadraticPoly, cfg: UpscaleConfig) -> float:
    """
    Upscaled flux F(x_I, hess) at the expansion point of ``uhat``.

    Args:
        field: Medium
        uhat: Lifted macro data
        cfg: Averaging parameters

    Returns:
        The averaged flux

    Raises:
        PreconditionError: Window narrower than epsilon or non-finite data
        UpscalingError: Window coverage failure
    """
    _check_window(field, cfg)
    if not (np.all(np.isfinite(uhat.hess)) and np.all(np.isfinite(uhat.grad))):
        raise PreconditionError("uhat has non-finite coefficients")
    spec = build_micro_spec(field, uhat, cfg.eta, cfg.tau, cfg.points_per_wavelength)
    return average_flux(spec, cfg)


def consistency_defect(field: CoefficientField, uhat: QuadraticPoly, cfg: UpscaleConfig) -> float:
    """
    |(K * u)(0, x_I) - uhat(x_I)| for the micro solution u.

    In a periodic medium u holds the corrector eps^2 chi(x/eps) minus a free wave
    started from it. They average to eps^2 mean(chi) and eps^2 int(chi rho), so the
    defect levels off at eps^2 |mean(chi) - int(chi rho)| instead of decaying like
    (eps/eta)^(q+2).
    """
    _check_window(field, cfg)
    spec = build_micro_spec(field, uhat, cfg.eta, cfg.tau, cfg.points_per_wavelength)
    micro = solve_micro(spec)
    average = space_time_average(
        cfg.kernel_space,
        cfg.kernel_time,
        0.5 * cfg.eta,
        0.5 * cfg.tau,
        micro.times,
        micro.axes,
        micro.u,
        micro.center,
    )
    return abs(average - uhat.c0)


def reference_flux(a0: Union[HomogenizedTensor, np.ndarray], uhat: QuadraticPoly) -> float:
    """F_hat = sum_ij A0_ij hess_ij."""
    tensor = a0.a0 if isinstance(a0, HomogenizedTensor) else np.atleast_2d(np.asarray(a0, dtype=float))
    if not np.array_equal(tensor, tensor.T):
        raise PreconditionError("a0 must be symmetric")
    return float(np.sum(tensor * uhat.hess))


def effective_tensor_probe(field: CoefficientField, cfg: UpscaleConfig, x_I) -> np.ndarray:
    """
    Effective tensor at x_I from d(d+1)/2 probe fluxes.

    The probe x_i^2 has hess_ii = 2 and the probe x_i x_j has
    hess_ij = hess_ji = 1; in both cases a_eff,ij = F / 2.
    """
    center = np.atleast_1d(np.asarray(x_I, dtype=float))
    dim = field.dim
    a_eff = np.zeros((dim, dim))
    for i, j in quadratic_terms(dim):
        hess = np.zeros((dim, dim))
        if i == j:
            hess[i, i] = 2.0
        else:
            hess[i, j] = hess[j, i] = 1.0
        value = 0.5 * upscale_flux(field, QuadraticPoly.from_hessian(hess, center), cfg)
        a_eff[i, j] = a_eff[j, i] = value
    return a_eff


class FluxProvider(Protocol):
    """Supplies F at every fitted macro node."""

    def flux(self, batch: QuadraticFitBatch) -> np.ndarray:
        ...

    def speed_bound(self, points: np.ndarray) -> float:
        ...


class TensorFluxProvider:
    """
    Flux of a known tensor, F = m(x) A0 : hess.

    Args:
        tensor: Homogenized tensor
        modulation: Optional slow scalar factor m(x), e.g. for locally
            periodic media
    """

    def __init__(
        self,
        tensor: HomogenizedTensor,
        modulation: Optional[Callable[..., np.ndarray]] = None,
    ):
        self.tensor = tensor
        self.modulation = modulation

    def flux(self, batch: QuadraticFitBatch) -> np.ndarray:
        values = np.einsum("ij,nij->n", self.tensor.a0, batch.hess)
        if self.modulation is not None:
            values = self.modulation(*batch.points.T) * values
        return values

    def speed_bound(self, points: np.ndarray) -> float:
        bound = self.tensor.spectral_norm
        if self.modulation is not None:
            bound *= float(np.max(np.abs(self.modulation(*points.T))))
        return bound


class EffectiveTensorCache:
    """Thread-safe map from macro node to probed effective tensor.

    Concurrent fills of the same key compute the same value; the first one
    stored wins.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[tuple[float, ...], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: tuple[float, ...]) -> Optional[np.ndarray]:
        with self._lock:
            return self._data.get(key)

    def put(self, key: tuple[float, ...], value: np.ndarray) -> np.ndarray:
        with self._lock:
            return self._data.setdefault(key, value)


class EFAFluxProvider:
    """
    Flux from micro simulations.

    With ``ReusePolicy.PER_CALL`` every node runs a fresh micro problem on
    every call. With ``ReusePolicy.EFFECTIVE_TENSOR_CACHE`` each node is
    probed once and later fluxes are a_eff : hess.
    """

    def __init__(self, field: CoefficientField, cfg: UpscaleConfig, workers: Optional[int] = None):
        _check_window(field, cfg)
        self.field = field
        self.cfg = cfg
        self.workers = workers
        self.cache = EffectiveTensorCache()
        self.micro_solves = 0

    def _tensor_at(self, point: np.ndarray) -> np.ndarray:
        key = tuple(float(c) for c in point)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        return self.cache.put(key, effective_tensor_probe(self.field, self.cfg, point))

    def tensors(self, points: np.ndarray) -> np.ndarray:
        """Effective tensors at the given nodes, shape (n, d, d)."""
        before = len(self.cache)
        tensors = np.array(parallel_map(self._tensor_at, list(points), self.workers))
        probed = len(self.cache) - before
        if probed:
            self.micro_solves += probed * len(quadratic_terms(self.field.dim))
            logger.info("effective_tensors_probed", nodes=probed, total=len(self.cache))
        return tensors

    def flux(self, batch: QuadraticFitBatch) -> np.ndarray:
        if self.cfg.reuse_policy is ReusePolicy.EFFECTIVE_TENSOR_CACHE:
            return np.einsum("nij,nij->n", self.tensors(batch.points), batch.hess)
        values = parallel_map(
            lambda k: upscale_flux(self.field, batch.poly(k), self.cfg),
            range(len(batch)),
            self.workers,
        )
        self.micro_solves += len(batch)
        return np.array(values)

    def speed_bound(self, points: np.ndarray) -> float:
        if self.cfg.reuse_policy is ReusePolicy.EFFECTIVE_TENSOR_CACHE:
            return float(max(np.linalg.norm(a, 2) for a in self.tensors(points)))
        return sup_norm(self.field)
