"""Backward-Euler residuals and Jacobians of the non-local and local schemes."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from config import config, ConfigurationError
from data import ModelParams, State
from mesh import Mesh
from model import ModelFunctions
from scheme import AssemblyError, FluxScheme

logger = logging.getLogger(__name__)


@dataclass
class Residual:
    """
    Equation values of one backward-Euler step.

    Non-local layout: [phase-1 conservation (n), phase-2 conservation (n),
    potential relation (n), normalization (1)]. Local layout: [conservation (n),
    potential relation (n)].
    """
    values: np.ndarray
    layout: str
    n_cells: int

    def conservation(self, phase: int = 1) -> np.ndarray:
        n = self.n_cells
        if self.layout == 'local':
            if phase != 1:
                raise ValueError("the local model has a single conservation equation")
            return self.values[:n]
        return self.values[(phase - 1) * n:phase * n]

    @property
    def potential(self) -> np.ndarray:
        n = self.n_cells
        start = n if self.layout == 'local' else 2 * n
        return self.values[start:start + n]

    @property
    def normalization(self) -> Optional[float]:
        return float(self.values[-1]) if self.layout == 'nonlocal' else None

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


def _face_entries(row_off, col_off, k, l, d_k, d_l):
    """COO triplets of a face flux added to row K and subtracted from row L."""
    rows = np.concatenate([row_off + k, row_off + k, row_off + l, row_off + l])
    cols = np.concatenate([col_off + k, col_off + l, col_off + k, col_off + l])
    data = np.concatenate([d_k, d_l, -d_k, -d_l])
    return rows, cols, data


def _check_step(mesh: Mesh, state_old: State, dt: float, params: ModelParams, kind: str):
    if not dt > 0:
        raise AssemblyError(f"dt must be positive, got {dt}")
    if state_old.n_cells != mesh.n_cells:
        raise AssemblyError(f"state has {state_old.n_cells} cells, mesh has {mesh.n_cells}")
    if params.model_kind != kind:
        raise AssemblyError(f"{kind} assembly called with {params.model_kind!r} parameters")
    if kind == 'local' and any(t != 0 for t in params.theta):
        raise ConfigurationError("the local model carries no thermal term: theta must be (0, 0)")
    params.validate(mesh.n_cells)


class NonlocalSystem:
    """
    Bordered system of one non-local step.

    Unknowns x = [c1 (n), mu1 (n), mu2 (n), lambda]. The multiplier enters both
    conservation rows as +lambda |K|; the normalization row
    sum |K| (c1 mu1 + c2 mu2) = 0 fixes the constant left free by the
    potential relation. Summing both conservation rows over the mesh gives
    2 lambda |Omega| = 0, so lambda vanishes at every solution.
    """

    layout = 'nonlocal'

    def __init__(self, mesh: Mesh, params: ModelParams, state_old: State, dt: float,
                 workers: int = config.ASSEMBLY_WORKERS):
        _check_step(mesh, state_old, dt, params, 'nonlocal')
        self.mesh = mesh
        self.params = params
        self.dt = float(dt)
        self.workers = workers
        self.n = mesh.n_cells
        self.size = 3 * self.n + 1
        self.c_old = np.asarray(state_old.c1, dtype=float)
        self.vol = mesh.cell_measures
        self.k = mesh.face_cells[:, 0]
        self.l = mesh.face_cells[:, 1]
        self.trans = mesh.transmissibilities
        self.lap = FluxScheme.laplacian_matrix(mesh)
        self.psi = params.psi_fields(self.n)

    @property
    def bounded(self) -> slice:
        return slice(0, self.n)

    def pack(self, state: State, lam: float = 0.0) -> np.ndarray:
        if state.model_kind != 'nonlocal':
            raise AssemblyError("non-local system needs a state with mu1 and mu2")
        if state.n_cells != self.n:
            raise AssemblyError(f"state has {state.n_cells} cells, mesh has {self.n}")
        return np.concatenate([state.c1, state.mu1, state.mu2, [lam]]).astype(float)

    def unpack(self, x: np.ndarray):
        n = self.n
        if len(x) != self.size:
            raise AssemblyError(f"expected {self.size} unknowns, got {len(x)}")
        return x[:n], x[n:2 * n], x[2 * n:3 * n], float(x[3 * n])

    def to_state(self, x: np.ndarray, time: float) -> State:
        c1, mu1, mu2, _ = self.unpack(x)
        return State(c1=c1.copy(), mu1=mu1.copy(), mu2=mu2.copy(), time=time)

    def _fluxes(self, c1, mu1, mu2):
        m1, m2 = self.params.mobility
        th1, th2 = self.params.theta
        v1, v2 = mu1 + self.psi[0], mu2 + self.psi[1]
        c2 = 1.0 - c1
        phase1 = FluxScheme.evaluate_faces(
            lambda k, l, t: FluxScheme.upstream_fluxes(c1, v1, k, l, t, m1, th1),
            self.k, self.l, self.trans, self.workers)
        phase2 = FluxScheme.evaluate_faces(
            lambda k, l, t: FluxScheme.upstream_fluxes(c2, v2, k, l, t, m2, th2),
            self.k, self.l, self.trans, self.workers)
        return phase1, phase2

    def residual(self, x: np.ndarray) -> np.ndarray:
        c1, mu1, mu2, lam = self.unpack(x)
        n, vol, dt = self.n, self.vol, self.dt
        (f1, *_), (f2, *_) = self._fluxes(c1, mu1, mu2)
        r1 = vol * (c1 - self.c_old) + dt * FluxScheme.accumulate(f1, self.k, self.l, n) + lam * vol
        r2 = vol * (self.c_old - c1) + dt * FluxScheme.accumulate(f2, self.k, self.l, n) + lam * vol
        r3 = mu1 - mu2 + self.params.alpha * (self.lap @ c1) - self.params.chi * (1.0 - 2.0 * c1)
        norm = np.sum(vol * (c1 * mu1 + (1.0 - c1) * mu2))
        return np.concatenate([r1, r2, r3, [norm]])

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        c1, mu1, mu2, _ = self.unpack(x)
        n, vol, dt, k, l = self.n, self.vol, self.dt, self.k, self.l
        (_, a_ck, a_cl, a_v), (_, b_ck, b_cl, b_v) = self._fluxes(c1, mu1, mu2)
        cells = np.arange(n)
        lap = self.lap.tocoo()

        blocks = [
            _face_entries(0, 0, k, l, dt * a_ck, dt * a_cl),
            _face_entries(0, n, k, l, dt * a_v, -dt * a_v),
            # phase-2 saturation is 1 - c1
            _face_entries(n, 0, k, l, -dt * b_ck, -dt * b_cl),
            _face_entries(n, 2 * n, k, l, dt * b_v, -dt * b_v),
            (cells, cells, vol),
            (n + cells, cells, -vol),
            (cells, np.full(n, 3 * n), vol),
            (n + cells, np.full(n, 3 * n), vol),
            (2 * n + cells, n + cells, np.ones(n)),
            (2 * n + cells, 2 * n + cells, -np.ones(n)),
            (2 * n + lap.row, lap.col, self.params.alpha * lap.data),
            (2 * n + cells, cells, np.full(n, 2.0 * self.params.chi)),
            (np.full(n, 3 * n), cells, vol * (mu1 - mu2)),
            (np.full(n, 3 * n), n + cells, vol * c1),
            (np.full(n, 3 * n), 2 * n + cells, vol * (1.0 - c1)),
        ]
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        data = np.concatenate([b[2] for b in blocks])
        return sp.coo_matrix((data, (rows, cols)), shape=(self.size, self.size)).tocsc()

    def branches(self, x: np.ndarray) -> np.ndarray:
        """Discrete choices (upwind side, clipping) the Jacobian is frozen on."""
        c1, mu1, mu2, _ = self.unpack(x)
        return np.concatenate([
            FluxScheme.upstream_branches(c1, mu1 + self.psi[0], self.k, self.l),
            FluxScheme.upstream_branches(1.0 - c1, mu2 + self.psi[1], self.k, self.l),
        ])


class LocalSystem:
    """System of one local step with unknowns x = [c (n), mu (n)] and w = mu + Psi1 - Psi2."""

    layout = 'local'

    def __init__(self, mesh: Mesh, params: ModelParams, state_old: State, dt: float,
                 workers: int = config.ASSEMBLY_WORKERS):
        _check_step(mesh, state_old, dt, params, 'local')
        self.mesh = mesh
        self.params = params
        self.dt = float(dt)
        self.workers = workers
        self.n = mesh.n_cells
        self.size = 2 * self.n
        self.c_old = np.asarray(state_old.c1, dtype=float)
        self.vol = mesh.cell_measures
        self.k = mesh.face_cells[:, 0]
        self.l = mesh.face_cells[:, 1]
        self.trans = mesh.transmissibilities
        self.lap = FluxScheme.laplacian_matrix(mesh)
        psi = params.psi_fields(self.n)
        self.psi_jump = psi[0] - psi[1]

    @property
    def bounded(self) -> slice:
        return slice(0, self.n)

    def pack(self, state: State) -> np.ndarray:
        if state.model_kind != 'local':
            raise AssemblyError("local system needs a state with mu")
        if state.n_cells != self.n:
            raise AssemblyError(f"state has {state.n_cells} cells, mesh has {self.n}")
        return np.concatenate([state.c1, state.mu]).astype(float)

    def unpack(self, x: np.ndarray):
        if len(x) != self.size:
            raise AssemblyError(f"expected {self.size} unknowns, got {len(x)}")
        return x[:self.n], x[self.n:]

    def to_state(self, x: np.ndarray, time: float) -> State:
        c, mu = self.unpack(x)
        return State(c1=c.copy(), mu=mu.copy(), time=time)

    def _fluxes(self, c, mu):
        m1, m2 = self.params.mobility
        w = mu + self.psi_jump
        return FluxScheme.evaluate_faces(
            lambda k, l, t: FluxScheme.godunov_fluxes(c, w, k, l, t, m1, m2),
            self.k, self.l, self.trans, self.workers)

    def residual(self, x: np.ndarray) -> np.ndarray:
        c, mu = self.unpack(x)
        flux = self._fluxes(c, mu)[0]
        r1 = self.vol * (c - self.c_old) + self.dt * FluxScheme.accumulate(flux, self.k, self.l, self.n)
        r2 = mu + self.params.alpha * (self.lap @ c) - self.params.chi * (1.0 - 2.0 * c)
        return np.concatenate([r1, r2])

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        c, mu = self.unpack(x)
        n, dt, k, l = self.n, self.dt, self.k, self.l
        _, d_ck, d_cl, d_w, _ = self._fluxes(c, mu)
        cells = np.arange(n)
        lap = self.lap.tocoo()
        blocks = [
            _face_entries(0, 0, k, l, dt * d_ck, dt * d_cl),
            _face_entries(0, n, k, l, dt * d_w, -dt * d_w),
            (cells, cells, self.vol),
            (n + cells, n + cells, np.ones(n)),
            (n + lap.row, lap.col, self.params.alpha * lap.data),
            (n + cells, cells, np.full(n, 2.0 * self.params.chi)),
        ]
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        data = np.concatenate([b[2] for b in blocks])
        return sp.coo_matrix((data, (rows, cols)), shape=(self.size, self.size)).tocsc()

    def branches(self, x: np.ndarray) -> np.ndarray:
        c, mu = self.unpack(x)
        m1, m2 = self.params.mobility
        return FluxScheme.godunov_branches(c, mu + self.psi_jump, self.k, self.l, self.trans, m1, m2)


def assemble_nonlocal(mesh: Mesh, state_new: State, state_old: State, dt: float, params: ModelParams,
                      lam: float = 0.0) -> Residual:
    """
    Residual of the non-local scheme at state_new, given state_old.

    Args:
        mesh: Mesh
        state_new: Candidate state carrying c1, mu1 and mu2
        state_old: Previous time level
        dt: Time step
        params: Non-local model parameters
        lam: Value of the Lagrange multiplier

    Returns:
        Residual in the non-local layout
    """
    system = NonlocalSystem(mesh, params, state_old, dt, workers=1)
    return Residual(system.residual(system.pack(state_new, lam)), 'nonlocal', mesh.n_cells)


def assemble_local(mesh: Mesh, state_new: State, state_old: State, dt: float, params: ModelParams) -> Residual:
    """Residual of the local (Godunov) scheme at state_new, given state_old."""
    system = LocalSystem(mesh, params, state_old, dt, workers=1)
    return Residual(system.residual(system.pack(state_new)), 'local', mesh.n_cells)


def make_system(mesh: Mesh, params: ModelParams, state_old: State, dt: float,
                workers: int = config.ASSEMBLY_WORKERS):
    """Step system matching params.model_kind."""
    cls = NonlocalSystem if params.model_kind == 'nonlocal' else LocalSystem
    return cls(mesh, params, state_old, dt, workers=workers)


def initial_guess(system, state: State) -> np.ndarray:
    """Unknown vector of the previous time level, with potentials made consistent if missing."""
    if state.model_kind != system.layout:
        state = ModelFunctions.consistent_potentials(system.mesh, state.c1, system.params, state.time)
    return system.pack(state)
