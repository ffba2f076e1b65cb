"""Snapshot output in the legacy ASCII VTK format, through meshio."""
import logging
import os
from typing import Dict, List

import meshio
import numpy as np

from data import State

logger = logging.getLogger(__name__)

# legacy (non-XML) layout with a CELL_TYPES section
VTK_FORMAT_VERSION = '4.2'


class SnapshotWriter:
    """Writes per-cell fields of a state as an unstructured grid."""

    @staticmethod
    def cell_fields(state: State) -> Dict[str, np.ndarray]:
        fields = {'c1': state.c1}
        if state.model_kind == 'local':
            fields['mu'] = state.mu
        elif state.model_kind == 'nonlocal':
            fields['mu1'] = state.mu1
            fields['mu2'] = state.mu2
        return fields

    @staticmethod
    def to_meshio(mesh, state: State) -> meshio.Mesh:
        """Build a single-block meshio.Mesh with c1 and mu1/mu2 or mu as cell data."""
        if state.n_cells != mesh.n_cells:
            raise ValueError(f"state has {state.n_cells} cells, mesh has {mesh.n_cells}")
        nodes = np.asarray(mesh.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        points = np.zeros((len(nodes), 3))
        points[:, :nodes.shape[1]] = nodes
        cells = np.asarray(mesh.cell_nodes, dtype=int)

        cell_data: Dict[str, List[np.ndarray]] = {}
        for name, values in SnapshotWriter.cell_fields(state).items():
            values = np.asarray(values, dtype=float)
            if values.shape[0] != len(cells):
                raise ValueError(f"cell field '{name}' has {values.shape[0]} values, mesh has {len(cells)} cells")
            cell_data[name] = [values]
        return meshio.Mesh(points=points, cells=[(mesh.cell_kind, cells)], cell_data=cell_data)

    @staticmethod
    def write_vtk(mesh, state: State, path: str) -> str:
        """
        Write a legacy ASCII VTK file with cell data c1 and mu1/mu2 or mu.

        Args:
            mesh: Mesh carrying nodes, cell_nodes and cell_kind ('line', 'quad' or 'triangle')
            state: State to write
            path: Output file

        Returns:
            path
        """
        snapshot = SnapshotWriter.to_meshio(mesh, state)
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        try:
            meshio.write(path, snapshot, file_format='vtk' + VTK_FORMAT_VERSION.replace('.', ''), binary=False)
        except Exception:
            logger.exception(f"Writing snapshot to {path} failed")
            raise
        logger.debug(f"Wrote snapshot t={state.time} to {path}")
        return path

    @staticmethod
    def read_cell_data(path: str) -> Dict[str, np.ndarray]:
        """Read back the cell data of a file written by write_vtk."""
        snapshot = meshio.read(path, file_format='vtk')
        if not snapshot.cell_data:
            raise ValueError(f"{path}: no cell data")
        return {name: np.concatenate([np.ravel(block) for block in blocks]).astype(float)
                for name, blocks in snapshot.cell_data.items()}

    @staticmethod
    def snapshot_name(prefix: str, index: int, t: float) -> str:
        return f'{prefix}_{index:04d}_t{t:.6e}.vtk'
