"""Data models for simulation states, parameters and run records."""
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np

from config import config, ConfigurationError

MODEL_KINDS = ('nonlocal', 'local')
LU_ORDERINGS = ('MMD_AT_PLUS_A', 'MMD_ATA', 'COLAMD', 'NATURAL')


@dataclass
class ModelParams:
    """Physical parameters of either phase-field model."""
    alpha: float
    chi: float
    theta: Tuple[float, float] = (0.0, 0.0)
    mobility: Tuple[float, float] = (1.0, 1.0)
    psi: Optional[np.ndarray] = None  # shape (2, n_cells); None means zero
    model_kind: str = 'nonlocal'

    def validate(self, n_cells: Optional[int] = None):
        """Check parameter invariants, raising ConfigurationError on violation."""
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not self.chi > 0:
            raise ConfigurationError(f"chi must be positive, got {self.chi}")
        if min(self.mobility) <= 0:
            raise ConfigurationError(f"mobilities must be positive, got {self.mobility}")
        if min(self.theta) < 0:
            raise ConfigurationError(f"theta must be non-negative, got {self.theta}")
        if self.model_kind == 'local' and any(t != 0 for t in self.theta):
            raise ConfigurationError("the local model carries no thermal term: theta must be (0, 0)")
        if self.psi is not None and n_cells is not None and np.shape(self.psi) != (2, n_cells):
            raise ConfigurationError(f"psi must have shape (2, {n_cells}), got {np.shape(self.psi)}")
        return self

    def psi_fields(self, n_cells: int) -> np.ndarray:
        """External potentials as a (2, n_cells) array."""
        if self.psi is None:
            return np.zeros((2, n_cells))
        return np.asarray(self.psi, dtype=float)

    def swapped(self) -> 'ModelParams':
        """Same parameters with the phase labels exchanged."""
        psi = None if self.psi is None else np.asarray(self.psi)[::-1].copy()
        return ModelParams(
            alpha=self.alpha,
            chi=self.chi,
            theta=(self.theta[1], self.theta[0]),
            mobility=(self.mobility[1], self.mobility[0]),
            psi=psi,
            model_kind=self.model_kind,
        )

    def to_dict(self):
        """Convert to dictionary."""
        data = asdict(self)
        data['psi'] = None if self.psi is None else np.asarray(self.psi).tolist()
        return data


@dataclass
class State:
    """Per-cell fields of one time level. c2 is always derived as 1 - c1."""
    c1: np.ndarray
    mu1: Optional[np.ndarray] = None
    mu2: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    time: float = 0.0

    @property
    def c2(self) -> np.ndarray:
        return 1.0 - self.c1

    @property
    def model_kind(self) -> Optional[str]:
        if self.mu is not None:
            return 'local'
        if self.mu1 is not None and self.mu2 is not None:
            return 'nonlocal'
        return None

    @property
    def n_cells(self) -> int:
        return len(self.c1)

    def copy(self, **changes) -> 'State':
        """Deep copy, optionally replacing fields."""
        values = {
            'c1': self.c1,
            'mu1': self.mu1,
            'mu2': self.mu2,
            'mu': self.mu,
            'time': self.time,
        }
        values.update(changes)
        for key in ('c1', 'mu1', 'mu2', 'mu'):
            if values[key] is not None:
                values[key] = np.array(values[key], dtype=float)
        return State(**values)

    def to_dict(self):
        """Convert to dictionary."""
        return {
            'c1': self.c1.tolist(),
            'mu1': None if self.mu1 is None else self.mu1.tolist(),
            'mu2': None if self.mu2 is None else self.mu2.tolist(),
            'mu': None if self.mu is None else self.mu.tolist(),
            'time': self.time,
        }


@dataclass
class EnergyReport:
    """Decomposed discrete energy with entropy, mass and dissipation split."""
    e_dir: float
    e_chem: float
    e_therm: float
    e_ext: float
    e_total: float
    entropy: Tuple[float, float]
    mass: Tuple[float, float]
    dissipation_total_flux: Optional[float] = None
    dissipation_exchange: Optional[float] = None
    dissipation_local: Optional[float] = None

    @property
    def dissipation(self) -> Optional[float]:
        """Total dissipation rate of whichever model filled it, else None."""
        if self.dissipation_local is not None:
            return self.dissipation_local
        if self.dissipation_total_flux is None or self.dissipation_exchange is None:
            return None
        return self.dissipation_total_flux + self.dissipation_exchange

    def to_dict(self):
        """Convert to a flat dictionary."""
        return {
            'e_dir': self.e_dir,
            'e_chem': self.e_chem,
            'e_therm': self.e_therm,
            'e_ext': self.e_ext,
            'e_total': self.e_total,
            'entropy1': self.entropy[0],
            'entropy2': self.entropy[1],
            'mass1': self.mass[0],
            'mass2': self.mass[1],
            'dissipation_total_flux': self.dissipation_total_flux,
            'dissipation_exchange': self.dissipation_exchange,
            'dissipation_local': self.dissipation_local,
            'dissipation': self.dissipation,
        }


@dataclass
class NewtonConfig:
    """Newton-Raphson and time-step adaptation settings."""
    tol_residual: float = config.NEWTON_TOL
    max_iter: int = config.NEWTON_MAX_ITER
    damping: float = config.NEWTON_DAMPING
    backtrack_ratio: float = config.NEWTON_BACKTRACK_RATIO
    max_backtracks: int = config.NEWTON_MAX_BACKTRACKS
    excursion: float = config.NEWTON_EXCURSION
    bound_slack: float = config.BOUND_SLACK
    dt_shrink: float = config.DT_SHRINK
    dt_grow: float = config.DT_GROW
    ordering: str = config.LU_ORDERING

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ConfigurationError(f"tol_residual must be positive, got {self.tol_residual}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be at least 1, got {self.max_iter}")
        if not 0 < self.backtrack_ratio < 1:
            raise ConfigurationError(f"backtrack_ratio must lie in (0, 1), got {self.backtrack_ratio}")
        if not 0 < self.damping <= 1:
            raise ConfigurationError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0 < self.dt_shrink < 1:
            raise ConfigurationError(f"dt_shrink must lie in (0, 1), got {self.dt_shrink}")
        if self.ordering not in LU_ORDERINGS:
            raise ConfigurationError(f"ordering must be one of {LU_ORDERINGS}, got {self.ordering!r}")
        if self.dt_grow < 1:
            raise ConfigurationError(f"dt_grow must be at least 1, got {self.dt_grow}")

    def to_dict(self):
        """Convert to dictionary."""
        return asdict(self)


@dataclass
class NewtonResult:
    """Outcome of one nonlinear solve."""
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    message: str = ''


@dataclass
class StepRecord:
    """One accepted time step, as written to the run log."""
    step: int
    t: float
    dt: float
    newton_iters: int
    residual_norm: float
    e_total: float

    def to_log_line(self) -> str:
        return (f"step={self.step} t={self.t:.10e} dt={self.dt:.6e} "
                f"newton_iters={self.newton_iters} residual_norm={self.residual_norm:.6e} "
                f"e_total={self.e_total:.16e}")

    def to_dict(self):
        """Convert to dictionary."""
        return asdict(self)


@dataclass
class Trajectory:
    """Accepted states of one run with their energy reports."""
    model_kind: str
    cell_measures: np.ndarray
    states: List[State] = field(default_factory=list)
    energies: List[EnergyReport] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def final(self) -> State:
        return self.states[-1]

    def append(self, state: State, energy: EnergyReport, record: Optional[StepRecord] = None):
        self.states.append(state)
        self.energies.append(energy)
        if record is not None:
            self.steps.append(record)

    def index_at(self, t: float, tol: float = 1e-12) -> int:
        """Index of the state recorded at time t (no interpolation)."""
        times = self.times
        idx = int(np.argmin(np.abs(times - t)))
        if abs(times[idx] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"no state recorded at t={t} (closest t={times[idx]})")
        return idx

    def c1_at(self, t: float) -> np.ndarray:
        """Saturation at time t, linearly interpolated between recorded states."""
        times = self.times
        if t <= times[0]:
            return self.states[0].c1
        if t >= times[-1]:
            return self.states[-1].c1
        j = int(np.searchsorted(times, t))
        t0, t1 = times[j - 1], times[j]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.states[j - 1].c1 + w * self.states[j].c1


@dataclass
class JkoTrajectory(Trajectory):
    """Minimizing-movement trajectory with per-step objective records."""
    objectives: List[float] = field(default_factory=list)
    distances_sq: List[float] = field(default_factory=list)
    projected_gradients: List[float] = field(default_factory=list)


@dataclass
class Density1D:
    """Piecewise-constant density on a uniform 1D grid starting at origin."""
    values: np.ndarray
    h: float
    origin: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("densities must be non-negative")

    @property
    def n_cells(self) -> int:
        return len(self.values)

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.n_cells + 1)

    @property
    def grid(self) -> np.ndarray:
        return self.origin + self.h * (np.arange(self.n_cells) + 0.5)

    @property
    def mass(self) -> float:
        return float(self.h * np.sum(self.values))

    def to_dict(self):
        """Convert to dictionary."""
        return {'values': self.values.tolist(), 'h': self.h, 'origin': self.origin}
