"""
Experiment Service - upscaling sweeps and solution comparisons.

Every experiment writes deterministic CSV files into one output directory:
``<name>_errors.csv`` (epsilon, p, q, error), snapshot files and a
``summary.csv`` of fitted slopes and auxiliary results.
"""
import csv
import math
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import ConfigurationError, EFAError, RegressionError
from app.models.coefficient import CoefficientField
from app.models.enums import BoundaryCondition, ExperimentKind, InitialProfile
from app.models.macro import Trajectory
from app.models.micro import QuadraticPoly
from app.models.reference import HomogenizedTensor
from app.schemas.experiment import ErrorReport, ErrorRow, ExperimentConfig, SlopeRow
from app.services import stencil
from app.services.analysis_service import (
    discrete_l2_norm,
    fit_envelope_slope,
    fit_loglog_slope,
    relative_l2_error,
)
from app.services.coefficient_service import builtin_coefficient
from app.services.kernel_service import build_kernel
from app.services.macro_service import init_macro, macro_time_step_limit, run_macro
from app.services.reference_service import (
    local_average_field,
    reference_provider,
    reference_tensor,
    solve_dns,
)
from app.services.upscale_service import (
    EFAFluxProvider,
    UpscaleConfig,
    parallel_map,
    reference_flux,
    upscale_flux,
)

logger = structlog.get_logger(__name__)

Row = Sequence[Union[str, int, float]]


def format_value(value: Union[str, int, float, None]) -> str:
    """Shortest round-trip text of a number; CSV output must not depend on locale or width."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Row]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.info("csv_written", path=str(path))
    return path


def write_grid_snapshots(path: Path, trajectory: Trajectory) -> Path:
    """2D snapshots: one '# t=<time> nx=<N> ny=<N>' header per block, then rows of values."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for snap in trajectory.snapshots:
            nx, ny = snap.values.shape
            handle.write(f"# t={format_value(snap.t)} nx={nx} ny={ny}\n")
            for row in snap.values:
                writer.writerow([format_value(v) for v in row])
    logger.info("csv_written", path=str(path))
    return path


def _eps_tag(epsilon: float) -> str:
    return format_value(epsilon)


def initial_data(cfg: ExperimentConfig) -> tuple[Callable[..., np.ndarray], Optional[Callable[..., np.ndarray]]]:
    """Initial value g and velocity h from the [initial] section."""
    init, dim, length = cfg.initial, cfg.macro.dim, cfg.macro.length
    velocity = init.velocity

    def h(*x: np.ndarray) -> np.ndarray:
        return np.full(np.shape(x[0]), velocity)

    if init.profile is InitialProfile.ZERO:
        return (lambda *x: np.zeros(np.shape(x[0]))), (h if velocity else None)

    if init.profile is InitialProfile.STANDING_WAVE:
        k = 2.0 * np.pi / length

        def g(*x: np.ndarray) -> np.ndarray:
            value = np.sin(k * x[0])
            for coord in x[1:]:
                value = value * np.cos(k * coord)
            return value

        return g, h

    center = list(init.center)
    if len(center) == 1:
        center = center * dim
    if len(center) != dim:
        raise ConfigurationError(f"[initial] center needs {dim} coordinates, got {len(init.center)}")
    width = 2.0 * init.sigma**2

    def gaussian(*x: np.ndarray) -> np.ndarray:
        r2 = sum((coord - c) ** 2 for coord, c in zip(x, center))
        return np.exp(-r2 / width)

    return gaussian, h


class ExperimentService:
    """
    Runs one experiment file.

    Args:
        cfg: Validated experiment
        out_dir: Output directory, overriding [output] directory and settings.OUTPUT_DIR
        workers: Thread pool size for independent jobs
    """

    def __init__(self, cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None, workers: Optional[int] = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir or cfg.output.directory or settings.OUTPUT_DIR)
        self.workers = settings.WORKERS if workers is None else workers
        self.log = logger.bind(experiment=cfg.experiment.name)

    @property
    def name(self) -> str:
        return self.cfg.experiment.name

    def run(self) -> ErrorReport:
        kind = self.cfg.experiment.kind
        if kind is ExperimentKind.UPSCALING:
            return self.run_upscaling_sweep()
        if kind is ExperimentKind.SOLUTION1D:
            return self.run_solution_comparison_1d()
        return self.run_solution_comparison_2d()

    def sweep(self) -> ErrorReport:
        if self.cfg.experiment.kind is not ExperimentKind.UPSCALING:
            raise ConfigurationError(f"sweep needs an upscaling experiment, got {self.cfg.experiment.kind.value}")
        return self.run_upscaling_sweep()

    # ------------------------------------------------------------------
    # Shared pieces
    # ------------------------------------------------------------------

    def field(self, epsilon: float) -> CoefficientField:
        return builtin_coefficient(self.cfg.coefficient.name, epsilon, **self.cfg.coefficient.params)

    def reference(self, field: CoefficientField) -> HomogenizedTensor:
        return reference_tensor(field, self.cfg.reference.ratio, self.cfg.reference.a0)

    def upscale_config(self, p: int, q: int) -> UpscaleConfig:
        avg = self.cfg.averaging
        kernel = build_kernel(p, q)
        return UpscaleConfig(
            kernel_space=kernel,
            kernel_time=kernel,
            eta=avg.eta,
            tau=avg.tau,
            reuse_policy=avg.reuse_policy,
            points_per_wavelength=avg.points_per_wavelength,
        )

    def _jobs(self) -> list[tuple[int, int, float]]:
        return [(p, q, eps) for p, q in self.cfg.averaging.kernels for eps in self.cfg.averaging.epsilons]

    def _guarded(self, fn: Callable[[tuple[int, int, float]], float]) -> Callable[[tuple[int, int, float]], float]:
        def run(job: tuple[int, int, float]) -> float:
            p, q, eps = job
            try:
                return fn(job)
            except EFAError as exc:
                self.log.error("sweep_point_failed", p=p, q=q, epsilon=eps, error=str(exc))
                raise
        return run

    def _fit_slopes(self, report: ErrorReport) -> None:
        bins = self.cfg.averaging.slope_bins
        for p, q in self.cfg.averaging.kernels:
            try:
                slope: Optional[float] = fit_loglog_slope(report.pairs(p, q))
            except RegressionError as exc:
                self.log.info("slope_fit_skipped", p=p, q=q, reason=str(exc))
                slope = None
            envelope: Optional[float] = None
            if bins is not None:
                try:
                    envelope = fit_envelope_slope(report.pairs(p, q), bins)
                except RegressionError as exc:
                    self.log.info("envelope_fit_skipped", p=p, q=q, reason=str(exc))
            report.slopes = report.slopes + [SlopeRow(p=p, q=q, slope=slope, envelope_slope=envelope)]
            self.log.info("slope_fitted", p=p, q=q, slope=slope, envelope_slope=envelope)

    def _write_report(self, report: ErrorReport) -> None:
        write_csv(
            self.out_dir / f"{self.name}_errors.csv",
            ("epsilon", "p", "q", "error"),
            ((row.epsilon, row.p, row.q, row.error) for row in report.rows),
        )
        rows: list[Row] = [(self.name, "slope", s.p, s.q, format_value(s.slope)) for s in report.slopes]
        rows += [
            (self.name, "envelope_slope", s.p, s.q, format_value(s.envelope_slope))
            for s in report.slopes
            if s.envelope_slope is not None
        ]
        rows += [(self.name, key, "", "", value) for key, value in sorted(report.extras.items())]
        write_csv(self.out_dir / "summary.csv", ("experiment", "quantity", "p", "q", "value"), rows)

    # ------------------------------------------------------------------
    # Upscaling error sweep
    # ------------------------------------------------------------------

    def run_upscaling_sweep(self) -> ErrorReport:
        """|F - F_hat| for u_hat = x_1^2 at the origin, per (p, q) and epsilon."""
        dim = self.field(self.cfg.averaging.epsilons[0]).dim
        hess = np.zeros((dim, dim))
        hess[0, 0] = 2.0
        uhat = QuadraticPoly.from_hessian(hess, np.zeros(dim))
        tensor = self.reference(self.field(self.cfg.averaging.epsilons[0]))

        def error_at(job: tuple[int, int, float]) -> float:
            p, q, eps = job
            field = self.field(eps)
            modulation = 1.0 if field.slow is None else float(field.slow(*uhat.center))
            flux = upscale_flux(field, uhat, self.upscale_config(p, q))
            error = abs(flux - modulation * reference_flux(tensor, uhat))
            self.log.info("upscaling_error", p=p, q=q, epsilon=eps, flux=flux, error=error)
            return error

        jobs = self._jobs()
        errors = parallel_map(self._guarded(error_at), jobs, self.workers)
        report = ErrorReport(
            name=self.name,
            norm="absolute",
            rows=[ErrorRow(epsilon=eps, p=p, q=q, error=err) for (p, q, eps), err in zip(jobs, errors)],
        )
        self._fit_slopes(report)
        self._write_report(report)
        return report

    # ------------------------------------------------------------------
    # Solution comparisons
    # ------------------------------------------------------------------

    def run_solution_comparison_1d(self) -> ErrorReport:
        return self._run_solution_comparison()

    def run_solution_comparison_2d(self) -> ErrorReport:
        return self._run_solution_comparison()

    def time_step(self, speed: float) -> float:
        """Configured dt, or cfl_fraction of the limit, shrunk so that it divides T."""
        macro = self.cfg.macro
        H = macro.length / macro.n_cells
        dt = macro.dt or macro.cfl_fraction * macro_time_step_limit(H, macro.dim, speed)
        if macro.T > 0:
            dt = macro.T / max(1, math.ceil(macro.T / dt - 1e-9))
        return dt

    def _macro_run(self, provider, g, h, dt: float) -> Trajectory:
        macro = self.cfg.macro
        state = init_macro(
            g, h, None, provider,
            length=macro.length,
            n_cells=macro.n_cells,
            dim=macro.dim,
            dt=dt,
            bc=macro.bc,
            stencil_kind=macro.stencil,
        )
        times = sorted(set(macro.snapshot_times) | {macro.T})
        return run_macro(state, provider, macro.T, None, times, macro.stencil)

    def _run_solution_comparison(self) -> ErrorReport:
        """EFA against the homogenized solution at T for every (p, q) and epsilon."""
        macro = self.cfg.macro
        field0 = self.field(self.cfg.averaging.epsilons[0])
        if field0.dim != macro.dim:
            raise ConfigurationError(f"{field0.name} is {field0.dim}D but the macro grid is {macro.dim}D")
        g, h = initial_data(self.cfg)
        ref = reference_provider(field0, self.cfg.reference.ratio, self.cfg.reference.a0)
        axes = stencil.grid_axes(macro.length, macro.n_cells, macro.dim, macro.bc)
        points = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        dt = self.time_step(ref.speed_bound(points))
        H = macro.length / macro.n_cells

        homogenized = self._macro_run(ref, g, h, dt)
        self._write_snapshots("homogenized", homogenized)

        trajectories: dict[tuple[int, int, float], Trajectory] = {}
        rows = []
        for job in self._jobs():
            p, q, eps = job
            efa = self._guarded(lambda j: self._efa_run(j, g, h, dt))(job)
            trajectories[job] = efa
            error = discrete_l2_norm(efa.final.values - homogenized.final.values, H)
            self.log.info("solution_error", p=p, q=q, epsilon=eps, error=error)
            rows.append(ErrorRow(epsilon=eps, p=p, q=q, error=error))
            self._write_snapshots(f"efa_p{p}q{q}_eps{_eps_tag(eps)}", efa, homogenized)

        report = ErrorReport(name=self.name, rows=rows)
        self._fit_slopes(report)
        if self.cfg.dns.enabled:
            report.extras = self._dns_comparison(trajectories, homogenized, g, h, dt)
        self._write_report(report)
        return report

    def _efa_run(self, job: tuple[int, int, float], g, h, dt: float) -> Trajectory:
        p, q, eps = job
        provider = EFAFluxProvider(self.field(eps), self.upscale_config(p, q), workers=self.workers)
        trajectory = self._macro_run(provider, g, h, dt)
        self.log.info("efa_run_finished", p=p, q=q, epsilon=eps, micro_solves=provider.micro_solves)
        return trajectory

    def _write_snapshots(self, label: str, trajectory: Trajectory, reference: Optional[Trajectory] = None) -> None:
        if trajectory.dim == 2:
            write_grid_snapshots(self.out_dir / f"{self.name}_{label}.csv", trajectory)
            return
        if reference is None:
            return
        x = trajectory.axes[0]
        rows = []
        for snap, ref in zip(trajectory.snapshots, reference.snapshots):
            rows.extend((snap.t, xi, u, r) for xi, u, r in zip(x, snap.values, ref.values))
        write_csv(self.out_dir / f"{self.name}_{label}.csv", ("t", "x", "efa", "homogenized"), rows)

    def _dns_comparison(
        self,
        trajectories: dict[tuple[int, int, float], Trajectory],
        homogenized: Trajectory,
        g,
        h,
        dt: float,
    ) -> dict[str, float]:
        """Relative distance of EFA and homogenized runs to the local average of a resolved run."""
        macro, avg, dns = self.cfg.macro, self.cfg.averaging, self.cfg.dns
        p, q = avg.kernels[0]
        eps = dns.epsilon
        job = (p, q, eps)
        efa = trajectories.get(job) or self._efa_run(job, g, h, dt)

        field = self.field(eps)
        n_cells = math.ceil(macro.length * dns.points_per_wavelength / eps - 1e-9)
        half_tau = 0.5 * avg.tau
        resolved = solve_dns(
            field, g, h, None,
            length=macro.length,
            n_cells=n_cells,
            bc=macro.bc,
            T=macro.T,
            frame_windows=[(macro.T - half_tau, macro.T + half_tau)],
        )

        H = macro.length / macro.n_cells
        mask = stencil.interior_mask(efa.final.values.shape, macro.bc)
        if macro.bc is BoundaryCondition.DIRICHLET_ZERO:
            # windows must stay inside the domain
            mesh = np.meshgrid(*efa.axes, indexing="ij")
            for coord in mesh:
                mask &= (coord >= 0.5 * avg.eta) & (coord <= macro.length - 0.5 * avg.eta)
        multi = np.argwhere(mask)
        nodes = [(macro.T, H * idx.astype(float)) for idx in multi]
        kernel = build_kernel(p, q)
        averaged = local_average_field(resolved, kernel, kernel, avg.eta, avg.tau, nodes)

        efa_values = efa.final.values[mask]
        hom_values = homogenized.final.values[mask]
        extras = {
            "dns_epsilon": float(eps),
            "dns_distance_efa": relative_l2_error(efa_values, averaged, H),
            "dns_distance_homogenized": relative_l2_error(hom_values, averaged, H),
        }
        if dns.tolerance is not None:
            extras["dns_within_tolerance"] = float(extras["dns_distance_efa"] <= dns.tolerance)
        self.log.info("dns_comparison", p=p, q=q, **extras)

        if macro.dim == 1:
            rows = [
                (float(H * i[0]), e, r, a)
                for i, e, r, a in zip(multi, efa_values, hom_values, averaged)
            ]
            write_csv(self.out_dir / f"{self.name}_dns.csv", ("x", "efa", "homogenized", "dns_average"), rows)
        else:
            grid = np.full(efa.final.values.shape, np.nan)
            grid[mask] = averaged
            snapshot = Trajectory(axes=efa.axes, dt=dt, bc=macro.bc)
            snapshot.record(macro.T, grid)
            write_grid_snapshots(self.out_dir / f"{self.name}_dns_average.csv", snapshot)
        return extras


def run_upscaling_sweep(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> ErrorReport:
    if cfg.experiment.kind is not ExperimentKind.UPSCALING:
        raise ConfigurationError("run_upscaling_sweep needs kind = upscaling")
    return ExperimentService(cfg, out_dir, workers).run_upscaling_sweep()


def run_solution_comparison_1d(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> ErrorReport:
    if cfg.experiment.kind is not ExperimentKind.SOLUTION1D:
        raise ConfigurationError("run_solution_comparison_1d needs kind = solution1d")
    return ExperimentService(cfg, out_dir, workers).run_solution_comparison_1d()


def run_solution_comparison_2d(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> ErrorReport:
    if cfg.experiment.kind is not ExperimentKind.SOLUTION2D:
        raise ConfigurationError("run_solution_comparison_2d needs kind = solution2d")
    return ExperimentService(cfg, out_dir, workers).run_solution_comparison_2d()
