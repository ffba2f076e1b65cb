"""
One-dimensional minimizing-movement scheme with exact quadratic Wasserstein distances.

Densities are piecewise constant on a uniform grid, so their quantile
functions are piecewise linear and the monotone rearrangement between two
densities is computed exactly on the merged set of cumulative-mass
breakpoints.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from config import config, ConfigurationError
from data import Density1D, JkoTrajectory, ModelParams, State, Trajectory
from mesh import Mesh, MeshBuilder
from model import ModelFunctions
from scheme import FluxScheme

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
ARMIJO = 1e-4
MAX_BACKTRACKS = 50


class MassMismatchError(ValueError):
    """Raised when two densities compared by transport carry different masses."""


class GridMismatchError(ValueError):
    """Raised when trajectories or densities live on different grids."""


@dataclass
class KantorovichPotential:
    """Kantorovich potential of the transport from one density to another."""
    phi: np.ndarray        # cell averages, normalized so sum h a phi = 0
    grad: np.ndarray       # cell averages of phi' = (x - T(x)) / m
    cell_cost: np.ndarray  # integral of a |phi'|^2 over each cell

    def to_dict(self):
        """Convert to dictionary."""
        return {'phi': self.phi.tolist(), 'grad': self.grad.tolist(), 'cell_cost': self.cell_cost.tolist()}


@dataclass
class JkoStepReport:
    """Outcome of one minimizing-movement step."""
    c1: Density1D
    c2: Density1D
    objective: float
    energy: float
    distance_sq: float
    projected_gradient: float
    iterations: int
    converged: bool


def _cumulative(d: Density1D, total: Optional[float] = None) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(d.h * d.values)])
    if total is not None:
        cum = np.minimum(cum, total)
        cum[-1] = total
    return cum


def _check_masses(a: Density1D, b: Density1D):
    if not a.mass > 0:
        raise MassMismatchError(f"densities must carry positive mass, got {a.mass}")
    if abs(a.mass - b.mass) > MASS_TOL:
        raise MassMismatchError(f"masses differ: {a.mass!r} vs {b.mass!r}")


def _transport_segments(a: Density1D, b: Density1D):
    """
    Pieces of the monotone rearrangement on which both quantiles are affine.

    Returns:
        (x0, x1, y0, y1, ds, cell_a): source interval [x0, x1] in a's grid is
        sent to [y0, y1] in b's grid, carrying mass ds, inside a's cell cell_a
    """
    ca = _cumulative(a)
    cb = _cumulative(b, total=ca[-1])
    dens_a, dens_b = np.diff(ca) / a.h, np.diff(cb) / b.h
    breaks = np.unique(np.concatenate([ca, cb]))
    s0, s1 = breaks[:-1], breaks[1:]
    keep = s1 > s0
    s0, s1 = s0[keep], s1[keep]
    mid = 0.5 * (s0 + s1)
    ia = np.clip(np.searchsorted(ca, mid, side='right') - 1, 0, a.n_cells - 1)
    ib = np.clip(np.searchsorted(cb, mid, side='right') - 1, 0, b.n_cells - 1)
    ea, eb = a.edges, b.edges
    x0 = ea[ia] + (s0 - ca[ia]) / dens_a[ia]
    x1 = ea[ia] + (s1 - ca[ia]) / dens_a[ia]
    y0 = eb[ib] + (s0 - cb[ib]) / dens_b[ib]
    y1 = eb[ib] + (s1 - cb[ib]) / dens_b[ib]
    return x0, x1, y0, y1, s1 - s0, ia


def _upper_quantile(b: Density1D, levels: np.ndarray, total: float) -> np.ndarray:
    """Right-continuous quantile of b; levels at the total mass map to the end of its support."""
    cb = _cumulative(b, total=total)
    dens = np.diff(cb) / b.h
    j = np.searchsorted(cb[1:], levels, side='right')
    inside = j < b.n_cells
    jj = np.minimum(j, b.n_cells - 1)
    out = b.edges[jj] + (levels - cb[jj]) / np.where(dens[jj] > 0, dens[jj], 1.0)
    last = np.nonzero(dens > 0)[0][-1]
    return np.where(inside, out, b.edges[last + 1])


def wasserstein_1d(a: Density1D, b: Density1D, m: float = 1.0) -> float:
    """
    Quadratic Wasserstein distance with cost |x - y|^2 / m.

    Args:
        a, b: Densities of equal mass
        m: Mobility dividing the cost

    Returns:
        W >= 0 with W^2 = (1/m) int_0^mass |Q_a(s) - Q_b(s)|^2 ds
    """
    _check_masses(a, b)
    x0, x1, y0, y1, ds, _ = _transport_segments(a, b)
    d0, d1 = x0 - y0, x1 - y1
    w2 = float(np.sum(ds * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0) / m
    return float(np.sqrt(max(w2, 0.0)))


def kantorovich_gradient(a: Density1D, b: Density1D, m: float = 1.0) -> KantorovichPotential:
    """
    Kantorovich potential of the transport from a to b.

    phi' = (x - T(x)) / m with T the monotone rearrangement of a onto b. On
    cells where a vanishes T is continued by the right-continuous quantile of
    b. Cell averages of phi are exact integrals of the piecewise-quadratic phi.
    """
    _check_masses(a, b)
    n, h = a.n_cells, a.h
    x0, x1, y0, y1, _, cells = _transport_segments(a, b)
    g0, g1 = (x0 - y0) / m, (x1 - y1) / m

    empty = np.nonzero(np.diff(_cumulative(a)) <= 0)[0]
    if len(empty):
        total = float(_cumulative(a)[-1])
        target = _upper_quantile(b, _cumulative(a)[empty], total)
        edges = a.edges
        x0 = np.concatenate([x0, edges[empty]])
        x1 = np.concatenate([x1, edges[empty + 1]])
        g0 = np.concatenate([g0, (edges[empty] - target) / m])
        g1 = np.concatenate([g1, (edges[empty + 1] - target) / m])
        cells = np.concatenate([cells, empty])

    order = np.argsort(x0, kind='stable')
    x0, x1, g0, g1, cells = x0[order], x1[order], g0[order], g1[order], cells[order]
    length = x1 - x0
    phi_start = np.concatenate([[0.0], np.cumsum(0.5 * length * (g0 + g1))])[:-1]
    phi_int = length * phi_start + length ** 2 * (2.0 * g0 + g1) / 6.0

    phi = np.bincount(cells, weights=phi_int, minlength=n) / h
    grad = np.bincount(cells, weights=0.5 * length * (g0 + g1), minlength=n) / h
    cost = a.values * np.bincount(cells, weights=length * (g0 * g0 + g0 * g1 + g1 * g1) / 3.0, minlength=n)
    phi -= np.sum(h * a.values * phi) / np.sum(h * a.values)
    return KantorovichPotential(phi=phi, grad=grad, cell_cost=cost)


class JKOSolver:
    """Projected-gradient minimizing movements for the paired saturations on a 1D grid."""

    def __init__(self, params: ModelParams, n_cells: int, h: float, origin: float = 0.0,
                 tol: float = config.JKO_TOL, max_iter: int = config.JKO_MAX_ITER):
        if params.model_kind != 'nonlocal':
            raise ConfigurationError("the minimizing-movement scheme follows the non-local model")
        self.params = params.validate(n_cells)
        self.n = int(n_cells)
        self.h = float(h)
        self.origin = float(origin)
        self.tol = tol
        self.max_iter = max_iter
        self.mesh: Mesh = MeshBuilder.build_cartesian(self.n, Lx=self.n * self.h)
        self.psi = params.psi_fields(self.n)
        self.m1, self.m2 = params.mobility

    def density(self, values: np.ndarray) -> Density1D:
        return Density1D(values=np.asarray(values, dtype=float), h=self.h, origin=self.origin)

    def energy(self, c: np.ndarray) -> float:
        return ModelFunctions.discrete_energy(self.mesh, State(c1=c), self.params).e_total

    def distance_sq(self, c: np.ndarray, prev: Tuple[Density1D, Density1D]) -> float:
        w1 = wasserstein_1d(self.density(c), prev[0], self.m1)
        w2 = wasserstein_1d(self.density(1.0 - c), prev[1], self.m2)
        return w1 * w1 + w2 * w2

    def objective(self, c: np.ndarray, prev: Tuple[Density1D, Density1D], tau: float) -> float:
        """E(c) + (W1^2(c, prev1) + W2^2(1 - c, prev2)) / (2 tau)."""
        return self.energy(c) + self.distance_sq(c, prev) / (2.0 * tau)

    def gradient(self, c: np.ndarray, prev: Tuple[Density1D, Density1D], tau: float) -> np.ndarray:
        """L2 gradient of the objective with respect to c1 (c2 = 1 - c1)."""
        p = self.params
        th1, th2 = p.theta
        phi1 = kantorovich_gradient(self.density(c), prev[0], self.m1).phi
        phi2 = kantorovich_gradient(self.density(1.0 - c), prev[1], self.m2).phi
        return (p.chi * (1.0 - 2.0 * c)
                + ModelFunctions.f_log_regularized(c, th1, th2)
                - p.alpha * FluxScheme.discrete_laplacian(self.mesh, c)
                + self.psi[0] - self.psi[1]
                + (phi1 - phi2) / tau)

    def project(self, y: np.ndarray, mass: float) -> np.ndarray:
        """
        Euclidean projection onto {0 <= c <= 1, sum h c = mass}.

        The projection is clip(y - nu, 0, 1). brentq locates the shift nu; it
        is then solved in closed form on the active set it found, so the mass
        holds to round-off.
        """
        total = self.n * self.h
        if mass < -MASS_TOL or mass > total + MASS_TOL:
            raise MassMismatchError(f"mass {mass} outside [0, {total}]")
        excess = lambda nu: self.h * float(np.sum(np.clip(y - nu, 0.0, 1.0))) - mass
        lo, hi = float(y.min()) - 1.0, float(y.max())
        if excess(lo) <= 0:
            return np.ones_like(y)
        if excess(hi) >= 0:
            return np.zeros_like(y)
        nu = brentq(excess, lo, hi, xtol=config.PROJECTION_TOL, rtol=4 * np.finfo(float).eps)
        free = (y - nu > 0.0) & (y - nu < 1.0)
        if free.any():
            upper = int(np.count_nonzero(y - nu >= 1.0))
            exact = (float(np.sum(y[free])) + upper - mass / self.h) / int(np.count_nonzero(free))
            shifted = y - exact
            # keep the closed form only if it leaves the active set unchanged
            if np.array_equal((shifted > 0.0) & (shifted < 1.0), free):
                nu = exact
        return np.clip(y - nu, 0.0, 1.0)

    def tangent_gradient(self, g: np.ndarray) -> np.ndarray:
        """Component of g tangent to the fixed-mass set (zero h-weighted mean)."""
        return g - float(np.mean(g))

    def _pg_norm(self, c: np.ndarray, grad: np.ndarray, mass: float) -> float:
        r = c - self.project(c - grad, mass)
        return float(np.sqrt(self.h * np.sum(r * r)))

    def step(self, prev: Tuple[Density1D, Density1D], tau: float) -> JkoStepReport:
        """
        One minimizing movement from prev = (c1, c2) with time step tau.

        Barzilai-Borwein steps along the projection arc, with backtracking on
        the objective; stops when the L2 norm of the projected gradient reaches
        tol or after max_iter iterations.
        """
        if not tau > 0:
            raise ConfigurationError(f"tau must be positive, got {tau}")
        if prev[0].n_cells != self.n or prev[1].n_cells != self.n:
            raise GridMismatchError(f"densities must have {self.n} cells")
        if not np.allclose(prev[0].values + prev[1].values, 1.0, rtol=0.0, atol=1e-12):
            raise ValueError("paired densities must satisfy c1 + c2 = 1")

        mass = prev[0].mass
        c = prev[0].values.copy()
        f = self.objective(c, prev, tau)
        g = self.tangent_gradient(self.gradient(c, prev, tau))
        pg = self._pg_norm(c, g, mass)
        s = tau
        it, converged = 0, pg <= self.tol

        while not converged and it < self.max_iter:
            it += 1
            for _ in range(MAX_BACKTRACKS):
                trial = self.project(c - s * g, mass)
                f_trial = self.objective(trial, prev, tau)
                if f_trial <= f + ARMIJO * self.h * float(np.dot(g, trial - c)):
                    break
                s *= 0.5
            else:
                logger.debug(f"backtracking stalled at iteration {it} (projected gradient {pg:.3e})")
                break

            g_trial = self.tangent_gradient(self.gradient(trial, prev, tau))
            dc, dg = trial - c, g_trial - g
            curvature = float(np.dot(dc, dg))
            s = float(np.dot(dc, dc)) / curvature if curvature > 0 else tau
            c, f, g = trial, f_trial, g_trial
            pg = self._pg_norm(c, g, mass)
            converged = pg <= self.tol

        if not converged:
            logger.warning(f"minimizing movement stopped after {it} iterations, projected gradient {pg:.3e}")
        dist = self.distance_sq(c, prev)
        return JkoStepReport(
            c1=self.density(c),
            c2=self.density(1.0 - c),
            objective=f,
            energy=self.energy(c),
            distance_sq=dist,
            projected_gradient=pg,
            iterations=it,
            converged=converged,
        )

    def run(self, initial: Density1D, t_end: float, tau: float) -> JkoTrajectory:
        """Minimizing movements from initial up to t_end; the last step is shortened to land on t_end."""
        if not tau > 0:
            raise ConfigurationError(f"tau must be positive, got {tau}")
        c = initial.values.copy()
        if np.any(c > 1.0):
            raise ConfigurationError("initial saturation must lie in [0, 1]")
        trajectory = JkoTrajectory('jko', self.mesh.cell_measures)
        state = State(c1=c, time=0.0)
        trajectory.append(state, ModelFunctions.discrete_energy(self.mesh, state, self.params))

        t, step = 0.0, 0
        while t < t_end - 1e-12 * max(1.0, t_end):
            dt = min(tau, t_end - t)
            report = self.step((self.density(c), self.density(1.0 - c)), dt)
            step += 1
            t = t_end if dt < tau else t + dt
            c = report.c1.values
            state = State(c1=c.copy(), time=t)
            trajectory.append(state, ModelFunctions.discrete_energy(self.mesh, state, self.params))
            trajectory.objectives.append(report.objective)
            trajectory.distances_sq.append(report.distance_sq)
            trajectory.projected_gradients.append(report.projected_gradient)
            logger.info(f"jko step={step} t={t:.10e} iters={report.iterations} "
                        f"projected_gradient={report.projected_gradient:.3e} energy={report.energy:.16e}")
        return trajectory


def jko_step(prev: Tuple[Density1D, Density1D], tau: float, params: ModelParams,
             tol: float = config.JKO_TOL, max_iter: int = config.JKO_MAX_ITER) -> JkoStepReport:
    """One minimizing movement; see JKOSolver.step."""
    solver = JKOSolver(params, prev[0].n_cells, prev[0].h, prev[0].origin, tol, max_iter)
    return solver.step(prev, tau)


def run(initial: Density1D, params: ModelParams, t_end: float, tau: float,
        tol: float = config.JKO_TOL, max_iter: int = config.JKO_MAX_ITER) -> JkoTrajectory:
    """Minimizing-movement trajectory; see JKOSolver.run."""
    return JKOSolver(params, initial.n_cells, initial.h, initial.origin, tol, max_iter).run(initial, t_end, tau)


def compare_trajectories(fv: Trajectory, jko: Trajectory, times: Iterable[float]) -> pd.DataFrame:
    """
    L2 distance between two saturation trajectories at sample times.

    States are linearly interpolated in time between recorded levels.

    Returns:
        DataFrame with columns t and l2_gap
    """
    if (len(fv.cell_measures) != len(jko.cell_measures)
            or not np.allclose(fv.cell_measures, jko.cell_measures, rtol=1e-12, atol=0.0)):
        raise GridMismatchError(
            f"trajectories live on different grids ({len(fv.cell_measures)} vs {len(jko.cell_measures)} cells)")
    vol = np.asarray(fv.cell_measures)
    rows = []
    for t in times:
        diff = fv.c1_at(t) - jko.c1_at(t)
        rows.append({'t': float(t), 'l2_gap': float(np.sqrt(np.sum(vol * diff * diff)))})
    return pd.DataFrame(rows, columns=['t', 'l2_gap'])
