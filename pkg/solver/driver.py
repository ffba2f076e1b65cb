"""Adaptive backward-Euler time stepping around the Newton solver."""
import logging
from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from config import config, ConfigurationError
from data import ModelParams, NewtonConfig, NewtonResult, State, StepRecord, Trajectory
from mesh import Mesh
from model import ModelFunctions
from scheme import make_system
from scheme.assembly import initial_guess
from solver import NewtonSolver, SolverFailure

logger = logging.getLogger(__name__)

OutputHook = Callable[[State], None]


class TimeStepper:
    """Advances one model on one mesh; one instance per simulation."""

    def __init__(self, mesh: Mesh, params: ModelParams, cfg: Optional[NewtonConfig] = None,
                 workers: int = config.ASSEMBLY_WORKERS, dt_min_factor: float = config.DT_MIN_FACTOR):
        params.validate(mesh.n_cells)
        self.mesh = mesh
        self.params = params
        self.cfg = cfg or NewtonConfig()
        self.workers = workers
        self.dt_min_factor = dt_min_factor
        self.newton = NewtonSolver(self.cfg)

    def prepare(self, state: State) -> State:
        """Initial state with potentials consistent with its saturation."""
        c1 = np.asarray(state.c1, dtype=float)
        if c1.shape != (self.mesh.n_cells,):
            raise ConfigurationError(f"initial state has {len(c1)} cells, mesh has {self.mesh.n_cells}")
        if np.any(~((c1 >= 0.0) & (c1 <= 1.0))):
            raise ConfigurationError("initial saturation must lie in [0, 1]")
        if state.model_kind == self.params.model_kind:
            return state.copy()
        return ModelFunctions.consistent_potentials(self.mesh, c1, self.params, state.time)

    def solve_step(self, state: State, dt: float) -> Tuple[State, NewtonResult]:
        """
        One backward-Euler step from state.

        Raises:
            SolverFailure: Newton did not converge
        """
        system = make_system(self.mesh, self.params, state, dt, workers=self.workers)
        result = self.newton.solve(system.residual, system.jacobian, initial_guess(system, state), system.bounded)
        if not result.converged:
            raise SolverFailure(f"Newton failed at t={state.time:.6e}, dt={dt:.3e}: {result.message}", result)
        return system.to_state(result.x, state.time + dt), result

    def run(self, initial: State, t_end: float, dt0: float, output_times: Iterable[float] = (),
            on_output: Optional[OutputHook] = None) -> Trajectory:
        """
        Integrate from initial up to t_end.

        Steps land exactly on every requested output time inside (0, t_end].
        A failed step halves dt; below dt0 * dt_min_factor the run aborts.
        After an accepted step dt grows by dt_grow, capped at dt0.

        Args:
            initial: Initial state (potentials are recomputed if missing)
            t_end: Final time, >= 0
            dt0: Initial and maximal time step
            output_times: Times at which on_output is called
            on_output: Callback receiving each output state

        Returns:
            Trajectory of every accepted state with its EnergyReport
        """
        if not dt0 > 0:
            raise ConfigurationError(f"dt0 must be positive, got {dt0}")
        if t_end < 0:
            raise ConfigurationError(f"t_end must be non-negative, got {t_end}")
        cfg = self.cfg
        state = self.prepare(initial)
        t0 = state.time
        outputs = sorted({float(t) for t in output_times})
        eps = 1e-12 * max(1.0, abs(t_end))

        trajectory = Trajectory(self.params.model_kind, self.mesh.cell_measures)
        energy = ModelFunctions.discrete_energy(self.mesh, state, self.params)
        trajectory.append(state, energy)
        if on_output and any(abs(t - t0) <= eps for t in outputs):
            on_output(state)

        targets = sorted({t for t in outputs if t0 + eps < t < t_end - eps} | {float(t_end)})
        dt, dt_min, step = float(dt0), dt0 * self.dt_min_factor, 0
        logger.info(f"{self.params.model_kind} run: {self.mesh.n_cells} cells, t_end={t_end}, dt0={dt0}, "
                    f"e_total={energy.e_total:.16e}")

        while state.time < t_end - eps:
            target = next(t for t in targets if t > state.time + eps)
            h = min(dt, target - state.time)
            landing = state.time + h >= target - eps
            try:
                new_state, result = self.solve_step(state, h)
            except SolverFailure as e:
                dt = h * cfg.dt_shrink
                if dt < dt_min:
                    raise SolverFailure(
                        f"time step underflow at t={state.time:.6e}: dt={dt:.3e} < dt_min={dt_min:.3e} "
                        f"({e})", e.result)
                logger.warning(f"step rejected at t={state.time:.6e}, retrying with dt={dt:.3e}: {e}")
                continue

            new_state.time = target if landing else state.time + h
            step += 1
            new_energy = ModelFunctions.discrete_energy(self.mesh, new_state, self.params)
            if new_energy.e_total > energy.e_total + 1e-12 * max(1.0, abs(energy.e_total)):
                logger.warning(f"energy increased at step {step}: {energy.e_total:.16e} -> {new_energy.e_total:.16e}")
            record = StepRecord(step, new_state.time, h, result.iterations, result.residual_norm, new_energy.e_total)
            logger.info(record.to_log_line())
            trajectory.append(new_state, new_energy, record)
            state, energy = new_state, new_energy

            if landing and on_output and any(abs(t - target) <= eps for t in outputs):
                on_output(state)
            dt = min(dt * cfg.dt_grow, dt0)

        return trajectory


def run(mesh: Mesh, params: ModelParams, initial: State, t_end: float, dt0: float,
        cfg: Optional[NewtonConfig] = None, output_times: Iterable[float] = (),
        on_output: Optional[OutputHook] = None, workers: int = config.ASSEMBLY_WORKERS) -> Trajectory:
    """Integrate one model; see TimeStepper.run."""
    return TimeStepper(mesh, params, cfg, workers).run(initial, t_end, dt0, output_times, on_output)
