"""Closed-form model functions and discrete energy functionals."""
import logging
from typing import Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import xlogy

from config import config
from data import EnergyReport, ModelParams, State
from mesh import Mesh

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class DomainError(ValueError):
    """Raised when a saturation lies outside [0, 1]."""


def _check_unit_interval(c: ArrayLike, name: str = 'c') -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if np.any(~((c >= 0.0) & (c <= 1.0))):
        raise DomainError(f"{name} must lie in [0, 1]")
    return c


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


class ModelFunctions:
    """Mobilities, thermal terms and energy functionals shared by both models."""

    @staticmethod
    def eta(c: ArrayLike, m1: float, m2: float) -> ArrayLike:
        """
        Mobility of the local model, m1 m2 c (1-c) / (m1 c + m2 (1-c)).

        Args:
            c: Saturation(s) in [0, 1]
            m1, m2: Phase mobilities

        Returns:
            Mobility value(s), zero at c in {0, 1}
        """
        c = _check_unit_interval(c)
        return _scalar_or_array(ModelFunctions.eta_unchecked(c, m1, m2))

    @staticmethod
    def eta_unchecked(c: np.ndarray, m1: float, m2: float) -> np.ndarray:
        """eta extended by zero outside [0, 1]; used on Newton iterates."""
        c = np.clip(c, 0.0, 1.0)
        return m1 * m2 * c * (1.0 - c) / (m1 * c + m2 * (1.0 - c))

    @staticmethod
    def eta_prime(c: np.ndarray, m1: float, m2: float) -> np.ndarray:
        """Derivative of eta_unchecked (zero outside [0, 1])."""
        c = np.asarray(c, dtype=float)
        cc = np.clip(c, 0.0, 1.0)
        denom = m1 * cc + m2 * (1.0 - cc)
        slope = m1 * m2 * (m2 * (1.0 - 2.0 * cc) - (m1 - m2) * cc ** 2) / denom ** 2
        return np.where((c >= 0.0) & (c <= 1.0), slope, 0.0)

    @staticmethod
    def eta_argmax(m1: float, m2: float) -> float:
        """Saturation where eta reaches its single interior maximum."""
        return float(np.sqrt(m2) / (np.sqrt(m1) + np.sqrt(m2)))

    @staticmethod
    def rho(c: ArrayLike, m1: float, m2: float) -> ArrayLike:
        """Fraction m1 c / (m1 c + m2 (1-c)) of the total flux carried by phase 1."""
        c = _check_unit_interval(c)
        return _scalar_or_array(m1 * c / (m1 * c + m2 * (1.0 - c)))

    @staticmethod
    def f_log(c: ArrayLike, theta1: float, theta2: float) -> ArrayLike:
        """
        Thermal term theta1 log(c) - theta2 log(1-c).

        Terms with a zero coefficient vanish even at the endpoints; a positive
        coefficient at a degenerate endpoint yields an infinite value, which is
        logged as a warning.
        """
        c = np.asarray(c, dtype=float)
        with np.errstate(divide='ignore'):
            first = np.where(theta1 == 0, 0.0, theta1 * np.log(np.where(theta1 == 0, 1.0, c)))
            second = np.where(theta2 == 0, 0.0, theta2 * np.log(np.where(theta2 == 0, 1.0, 1.0 - c)))
        value = first - second
        if np.any(~np.isfinite(value)):
            logger.warning("f_log evaluated at a degenerate endpoint with positive theta")
        return _scalar_or_array(value)

    @staticmethod
    def f_log_regularized(c: np.ndarray, theta1: float, theta2: float, eps: float = config.LOG_EPSILON) -> np.ndarray:
        """f_log with log(c) replaced by log(max(c, eps)) for transient iterates."""
        c = np.asarray(c, dtype=float)
        return theta1 * np.log(np.maximum(c, eps)) - theta2 * np.log(np.maximum(1.0 - c, eps))

    @staticmethod
    def entropy_density(c: ArrayLike) -> ArrayLike:
        """H(c) = c log c - c + 1, with H(0) = 1."""
        c = np.asarray(c, dtype=float)
        return _scalar_or_array(xlogy(c, c) - c + 1.0)

    @staticmethod
    def potential_difference(mesh: Mesh, c1: np.ndarray, params: ModelParams) -> np.ndarray:
        """Right-hand side -alpha Lap_h c1 + chi (1 - 2 c1) of the potential relation."""
        from scheme import FluxScheme
        return -params.alpha * FluxScheme.discrete_laplacian(mesh, c1) + params.chi * (1.0 - 2.0 * c1)

    @staticmethod
    def consistent_potentials(mesh: Mesh, c1: np.ndarray, params: ModelParams, time: float = 0.0) -> State:
        """
        Attach potentials to a saturation field.

        Non-local: mu1 = c2 d, mu2 = -c1 d with d the potential difference, so the
        potential relation and the normalization sum |K|(c1 mu1 + c2 mu2) = 0 hold.
        Local: mu = d.
        """
        c1 = np.asarray(c1, dtype=float)
        d = ModelFunctions.potential_difference(mesh, c1, params)
        if params.model_kind == 'local':
            return State(c1=c1.copy(), mu=d, time=time)
        return State(c1=c1.copy(), mu1=(1.0 - c1) * d, mu2=-c1 * d, time=time)

    @staticmethod
    def discrete_energy(mesh: Mesh, state: State, params: ModelParams) -> EnergyReport:
        """
        Decomposed discrete energy of a state.

        Args:
            mesh: Mesh the state lives on
            state: Saturations (potentials are only used for the dissipation split)
            params: Model parameters

        Returns:
            EnergyReport; the dissipation split is filled for non-local states,
            dissipation_local for local states with mu
        """
        n = mesh.n_cells
        if state.n_cells != n:
            raise ValueError(f"state has {state.n_cells} cells, mesh has {n}")
        c1 = np.asarray(state.c1, dtype=float)
        c2 = 1.0 - c1
        vol = mesh.cell_measures
        k, l = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
        psi = params.psi_fields(n)

        e_dir = 0.5 * params.alpha * float(np.sum(mesh.transmissibilities * (c1[k] - c1[l]) ** 2))
        e_chem = params.chi * float(np.sum(vol * c1 * c2))
        h1 = np.asarray(ModelFunctions.entropy_density(c1))
        h2 = np.asarray(ModelFunctions.entropy_density(c2))
        entropy = (float(np.sum(vol * h1)), float(np.sum(vol * h2)))
        e_therm = params.theta[0] * entropy[0] + params.theta[1] * entropy[1]
        e_ext = float(np.sum(vol * (c1 * psi[0] + c2 * psi[1])))

        report = EnergyReport(
            e_dir=e_dir,
            e_chem=e_chem,
            e_therm=e_therm,
            e_ext=e_ext,
            e_total=e_dir + e_chem + e_therm + e_ext,
            entropy=entropy,
            mass=(float(np.sum(vol * c1)), float(np.sum(vol * c2))),
        )
        if state.model_kind == 'nonlocal' and params.model_kind == 'nonlocal':
            report.dissipation_total_flux, report.dissipation_exchange = \
                ModelFunctions.half_step_dissipation(mesh, state, params)
        elif state.model_kind == 'local' and params.model_kind == 'local':
            report.dissipation_local = ModelFunctions.local_dissipation(mesh, state, params)
        return report

    @staticmethod
    def half_step_dissipation(mesh: Mesh, state: State, params: ModelParams) -> Tuple[float, float]:
        """
        Split the advective dissipation of a non-local state.

        With a_i = m_i c_i,up the upwinded phase mobilities and g_i the potential
        jumps across a face, sum_i a_i g_i^2 = J^2 / (a_1 + a_2)
        + a_1 a_2 / (a_1 + a_2) (g_1 - g_2)^2, where J = a_1 g_1 + a_2 g_2 is the
        total flux. Both parts are summed over faces with weight tau_sigma.

        Returns:
            (dissipation_total_flux, dissipation_exchange)
        """
        if state.model_kind != 'nonlocal':
            raise ValueError("half_step_dissipation needs a non-local state with mu1 and mu2")
        from scheme import FluxScheme

        n = mesh.n_cells
        psi = params.psi_fields(n)
        k, l = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
        trans = mesh.transmissibilities
        m1, m2 = params.mobility

        g1 = (state.mu1 + psi[0])[k] - (state.mu1 + psi[0])[l]
        g2 = (state.mu2 + psi[1])[k] - (state.mu2 + psi[1])[l]
        a1 = m1 * np.clip(FluxScheme.upwind_values(state.c1, g1, k, l), 0.0, 1.0)
        a2 = m2 * np.clip(FluxScheme.upwind_values(state.c2, g2, k, l), 0.0, 1.0)
        a = a1 + a2
        active = a > 0
        safe = np.where(active, a, 1.0)
        total = np.where(active, (a1 * g1 + a2 * g2) ** 2 / safe, 0.0)
        exchange = np.where(active, a1 * a2 / safe * (g1 - g2) ** 2, 0.0)
        return float(np.sum(trans * total)), float(np.sum(trans * exchange))

    @staticmethod
    def local_dissipation(mesh: Mesh, state: State, params: ModelParams) -> float:
        """Dissipation sum_sigma F_sigma (w_K - w_L) >= 0 of a local state's Godunov fluxes."""
        if state.model_kind != 'local':
            raise ValueError("local_dissipation needs a local state with mu")
        from scheme import FluxScheme

        psi = params.psi_fields(mesh.n_cells)
        w = state.mu + psi[0] - psi[1]
        k, l = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
        flux = FluxScheme.godunov_fluxes(state.c1, w, k, l, mesh.transmissibilities, *params.mobility)[0]
        return float(np.sum(flux * (w[k] - w[l])))

    @staticmethod
    def build_potential(spec: str, mesh: Mesh) -> np.ndarray:
        """
        Per-cell external potential from a spec string.

        Args:
            spec: 'zero', 'linear:gx,gy' (Psi(x) = g . x at cell centroids) or 'file:path' (CSV, one value per cell)
            mesh: Target mesh

        Returns:
            Array with one value per cell
        """
        spec = spec.strip()
        if spec == 'zero':
            return np.zeros(mesh.n_cells)
        if spec.startswith('linear:'):
            try:
                g = np.array([float(v) for v in spec[len('linear:'):].split(',')])
            except ValueError:
                raise ValueError(f"malformed linear potential {spec!r}")
            if len(g) < mesh.dim:
                raise ValueError(f"linear potential needs {mesh.dim} components, got {spec!r}")
            return mesh.cell_centroids @ g[:mesh.dim]
        if spec.startswith('file:'):
            return ModelFunctions.read_cell_field(spec[len('file:'):], mesh.n_cells)
        raise ValueError(f"unknown potential spec {spec!r}")

    @staticmethod
    def read_cell_field(path: str, n_cells: int) -> np.ndarray:
        """Read a CSV field file holding one value per cell, in mesh cell order."""
        values = pd.read_csv(path, header=None, comment='#').to_numpy(dtype=float).ravel()
        if len(values) != n_cells:
            raise ValueError(f"{path}: expected {n_cells} values, found {len(values)}")
        return values
