"""Two-point flux approximations: discrete Laplacian, upstream and Godunov fluxes."""
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp

from mesh import Mesh
from model import ModelFunctions

logger = logging.getLogger(__name__)


class AssemblyError(ValueError):
    """Raised for size or model-kind mismatches during assembly."""


@lru_cache(maxsize=8)
def _laplacian(mesh: Mesh) -> sp.csr_matrix:
    n = mesh.n_cells
    k, l = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    trans = mesh.transmissibilities
    vol = mesh.cell_measures
    rows = np.concatenate([k, l, k, l])
    cols = np.concatenate([l, k, k, l])
    data = np.concatenate([trans / vol[k], trans / vol[l], -trans / vol[k], -trans / vol[l]])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


class FluxScheme:
    """Face fluxes of the implicit finite-volume schemes."""

    @staticmethod
    def laplacian_matrix(mesh: Mesh) -> sp.csr_matrix:
        """Sparse operator u -> (1/|K|) sum_sigma tau_sigma (u_L - u_K), no-flux at the boundary."""
        return _laplacian(mesh)

    @staticmethod
    def discrete_laplacian(mesh: Mesh, field: np.ndarray) -> np.ndarray:
        """
        Apply the TPFA Laplacian with homogeneous Neumann boundaries.

        Args:
            mesh: Mesh
            field: One value per cell

        Returns:
            Per-cell values of Lap_h(field)
        """
        field = np.asarray(field, dtype=float)
        if field.shape != (mesh.n_cells,):
            raise AssemblyError(f"field has shape {field.shape}, mesh has {mesh.n_cells} cells")
        return FluxScheme.laplacian_matrix(mesh) @ field

    @staticmethod
    def upwind_values(c: np.ndarray, dv: np.ndarray, k: np.ndarray, l: np.ndarray) -> np.ndarray:
        """Upstream saturation per face for potential jumps dv = V_K - V_L."""
        return np.where(FluxScheme.upwind_is_k(c, dv, k, l), c[k], c[l])

    @staticmethod
    def upwind_is_k(c: np.ndarray, dv: np.ndarray, k: np.ndarray, l: np.ndarray) -> np.ndarray:
        # ties take the larger saturation
        return (dv > 0) | ((dv == 0) & (c[k] >= c[l]))

    @staticmethod
    def upstream_flux(cK: float, cL: float, VK: float, VL: float, tau_sigma: float, m: float, theta: float) -> float:
        """
        Upstream-mobility flux from K to L for one phase.

        F = m tau c_up (V_K - V_L) + m theta tau (c_K - c_L), with c_up taken
        from the cell of higher potential V = mu + Psi.
        """
        if VK > VL:
            c_up = cK
        elif VK < VL:
            c_up = cL
        else:
            c_up = max(cK, cL)
        return m * tau_sigma * c_up * (VK - VL) + m * theta * tau_sigma * (cK - cL)

    @staticmethod
    def upstream_fluxes(c: np.ndarray, v: np.ndarray, k: np.ndarray, l: np.ndarray, trans: np.ndarray,
                        m: float, theta: float) -> Tuple[np.ndarray, ...]:
        """
        Vectorized upstream fluxes with their partial derivatives.

        The mobility uses the upstream saturation clipped to [0, 1], so Newton
        iterates slightly outside the bounds never reverse a flux.

        Returns:
            (F, dF/dc_K, dF/dc_L, dF/dV_K); dF/dV_L is -dF/dV_K
        """
        dv = v[k] - v[l]
        up_k = FluxScheme.upwind_is_k(c, dv, k, l)
        c_up = np.where(up_k, c[k], c[l])
        mob = np.clip(c_up, 0.0, 1.0)
        slope = ((c_up >= 0.0) & (c_up <= 1.0)).astype(float)

        adv = m * trans
        diff = m * theta * trans
        flux = adv * mob * dv + diff * (c[k] - c[l])
        d_ck = adv * dv * slope * up_k + diff
        d_cl = adv * dv * slope * (~up_k) - diff
        d_vk = adv * mob
        return flux, d_ck, d_cl, d_vk

    @staticmethod
    def upstream_branches(c: np.ndarray, v: np.ndarray, k: np.ndarray, l: np.ndarray) -> np.ndarray:
        """Discrete choices of the upstream flux: upwind side and clipping state."""
        dv = v[k] - v[l]
        up_k = FluxScheme.upwind_is_k(c, dv, k, l)
        c_up = np.where(up_k, c[k], c[l])
        return np.concatenate([up_k.astype(int), (c_up >= 0.0).astype(int), (c_up <= 1.0).astype(int)])

    @staticmethod
    def godunov_flux(cK: float, cL: float, wK: float, wL: float, tau_sigma: float, m1: float, m2: float) -> float:
        """
        Godunov flux from K to L of g(c) = eta(c) tau (w_K - w_L).

        Minimum of g over [c_K, c_L] when c_K <= c_L, maximum over [c_L, c_K] otherwise.
        """
        q = tau_sigma * (wK - wL)
        lo, hi = min(cK, cL), max(cK, cL)
        candidates = [cK, cL]
        star = ModelFunctions.eta_argmax(m1, m2)
        if lo < star < hi:
            candidates.append(star)
        values = [q * float(ModelFunctions.eta(c, m1, m2)) for c in candidates]
        return min(values) if cK <= cL else max(values)

    @staticmethod
    def godunov_fluxes(c: np.ndarray, w: np.ndarray, k: np.ndarray, l: np.ndarray, trans: np.ndarray,
                       m1: float, m2: float) -> Tuple[np.ndarray, ...]:
        """
        Vectorized Godunov fluxes with partial derivatives.

        The interval extremum is taken among the endpoints and the interior
        maximizer of eta when it lies strictly inside the interval.

        Returns:
            (F, dF/dc_K, dF/dc_L, dF/dw_K, choice) where choice is 0 (c_K), 1 (c_L) or 2 (interior maximizer)
        """
        ck_raw, cl_raw = c[k], c[l]
        ck, cl = np.clip(ck_raw, 0.0, 1.0), np.clip(cl_raw, 0.0, 1.0)
        q = trans * (w[k] - w[l])
        star = ModelFunctions.eta_argmax(m1, m2)
        inside = (np.minimum(ck, cl) < star) & (star < np.maximum(ck, cl))

        eta_k = ModelFunctions.eta_unchecked(ck, m1, m2)
        eta_l = ModelFunctions.eta_unchecked(cl, m1, m2)
        eta_s = float(ModelFunctions.eta_unchecked(np.array(star), m1, m2))
        candidates = np.column_stack([q * eta_k, q * eta_l, np.where(inside, q * eta_s, np.nan)])

        increasing = ck <= cl
        lowest = np.nanargmin(candidates, axis=1)
        highest = np.nanargmax(candidates, axis=1)
        choice = np.where(increasing, lowest, highest)
        rows = np.arange(len(q))
        flux = candidates[rows, choice]

        mob = np.choose(choice, [eta_k, eta_l, np.full(len(q), eta_s)])
        d_ck = np.where(choice == 0, q * ModelFunctions.eta_prime(ck_raw, m1, m2), 0.0)
        d_cl = np.where(choice == 1, q * ModelFunctions.eta_prime(cl_raw, m1, m2), 0.0)
        d_wk = trans * mob
        return flux, d_ck, d_cl, d_wk, choice

    @staticmethod
    def godunov_branches(c: np.ndarray, w: np.ndarray, k: np.ndarray, l: np.ndarray, trans: np.ndarray,
                         m1: float, m2: float) -> np.ndarray:
        """Discrete choices of the Godunov flux: extremum location, ordering and clipping."""
        choice = FluxScheme.godunov_fluxes(c, w, k, l, trans, m1, m2)[4]
        in_box = lambda x: ((x >= 0.0) & (x <= 1.0)).astype(int)
        q_sign = np.sign(w[k] - w[l]).astype(int)
        return np.concatenate([choice, (c[k] <= c[l]).astype(int), in_box(c[k]), in_box(c[l]), q_sign])

    @staticmethod
    def evaluate_faces(func: Callable[..., Tuple[np.ndarray, ...]], k: np.ndarray, l: np.ndarray,
                       trans: np.ndarray, workers: int = 1) -> Tuple[np.ndarray, ...]:
        """
        Evaluate a face-wise function, optionally over contiguous face chunks in threads.

        func(k, l, trans) must be element-wise in faces; chunk results are
        concatenated in face order so the output does not depend on workers.
        """
        n_faces = len(k)
        if workers <= 1 or n_faces < 2 * workers:
            return func(k, l, trans)
        bounds = np.linspace(0, n_faces, workers + 1).astype(int)
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: func(k[s], l[s], trans[s]), chunks))
        return tuple(np.concatenate(arrays) for arrays in zip(*parts))

    @staticmethod
    def accumulate(flux: np.ndarray, k: np.ndarray, l: np.ndarray, n_cells: int) -> np.ndarray:
        """Net outgoing flux per cell: +F on K, -F on L."""
        return (np.bincount(k, weights=flux, minlength=n_cells)
                - np.bincount(l, weights=flux, minlength=n_cells))


from scheme.assembly import (  # noqa: E402
    LocalSystem, NonlocalSystem, Residual, assemble_local, assemble_nonlocal, make_system,
)
