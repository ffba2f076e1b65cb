"""Post-step and post-run checks: bounds, mass, energies and phase-separation statistics."""
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from config import config
from data import State, Trajectory
from mesh import Mesh

logger = logging.getLogger(__name__)

ENERGY_COLUMNS = ['t', 'e_dir', 'e_chem', 'e_therm', 'e_ext', 'e_total',
                  'entropy1', 'entropy2', 'mass1', 'mass2', 'dissipation', 'mixed_measure']


@dataclass
class BoundsCheck:
    passed: bool
    worst_violation: float
    worst_cell: Optional[int] = None


class Diagnostics:
    """Measurements on states and trajectories; read-only over their inputs."""

    @staticmethod
    def check_bounds(state: State) -> BoundsCheck:
        """Pass iff every cell value of c1 lies in the closed interval [0, 1]."""
        c = np.asarray(state.c1, dtype=float)
        violation = np.maximum(np.maximum(-c, c - 1.0), 0.0)
        violation = np.where(np.isfinite(c), violation, np.inf)
        if not len(c) or violation.max() == 0.0:
            return BoundsCheck(True, 0.0)
        worst = int(np.argmax(violation))
        return BoundsCheck(False, float(violation[worst]), worst)

    @staticmethod
    def mass_drift(trajectory: Trajectory) -> Tuple[Optional[float], Optional[float]]:
        """
        Maximal relative mass drift per phase over a trajectory.

        Returns:
            (drift1, drift2); None for a phase whose initial mass is zero
        """
        if not trajectory.states:
            raise ValueError("trajectory holds no state")
        vol = np.asarray(trajectory.cell_measures)
        masses = np.array([[np.sum(vol * s.c1), np.sum(vol * s.c2)] for s in trajectory.states])
        drifts = []
        for phase in range(2):
            m0 = masses[0, phase]
            if m0 == 0:
                drifts.append(None)
            else:
                drifts.append(float(np.max(np.abs(masses[:, phase] - m0)) / abs(m0)))
        return drifts[0], drifts[1]

    @staticmethod
    def mixed_region_measure(mesh: Mesh, state: State, lo: float = config.MIXED_LOW,
                             hi: float = config.MIXED_HIGH) -> float:
        """Total measure of the cells with lo < c1 < hi."""
        if not lo < hi:
            raise ValueError(f"lo must be smaller than hi, got lo={lo}, hi={hi}")
        c = np.asarray(state.c1)
        return float(np.sum(mesh.cell_measures[(c > lo) & (c < hi)]))

    @staticmethod
    def entropy_bounded(mesh: Mesh, trajectory: Trajectory) -> bool:
        """
        Check that both phase entropies stay finite and below |Omega|.

        H(c) = c log c - c + 1 lies in [0, 1] on [0, 1], so a larger value
        means the saturation has left its bounds.
        """
        for state, energy in zip(trajectory.states, trajectory.energies):
            for value in energy.entropy:
                if not np.isfinite(value) or value > mesh.domain_measure * (1.0 + 1e-12):
                    logger.error(f"entropy {value!r} out of range at t={state.time}")
                    return False
        return True

    @staticmethod
    def energy_table(mesh: Mesh, trajectory: Trajectory) -> pd.DataFrame:
        """Per-state energy breakdown in the CSV column layout."""
        rows = []
        for state, energy in zip(trajectory.states, trajectory.energies):
            row = {'t': state.time}
            row.update({k: v for k, v in energy.to_dict().items() if k in ENERGY_COLUMNS})
            row['mixed_measure'] = Diagnostics.mixed_region_measure(mesh, state)
            rows.append(row)
        return pd.DataFrame(rows, columns=ENERGY_COLUMNS)

    @staticmethod
    def energy_comparison(traj_nonlocal: Trajectory, traj_local: Trajectory,
                          times: Optional[Iterable[float]] = None) -> pd.DataFrame:
        """
        Tabulate both energy series at common sample times.

        Args:
            traj_nonlocal: Non-local trajectory
            traj_local: Local trajectory from the same initial datum
            times: Sample times recorded by both runs; all common times when None

        Returns:
            DataFrame with columns t, e_nonlocal, e_local
        """
        e0_nl = traj_nonlocal.energies[0].e_total
        e0_loc = traj_local.energies[0].e_total
        if abs(e0_nl - e0_loc) > 1e-12 * max(1.0, abs(e0_nl)):
            raise ValueError(f"initial energies differ: {e0_nl!r} vs {e0_loc!r}")
        if times is None:
            times = sorted(set(np.round(traj_nonlocal.times, 14)) & set(np.round(traj_local.times, 14)))
        rows = []
        for t in times:
            i, j = traj_nonlocal.index_at(t), traj_local.index_at(t)
            rows.append({
                't': float(t),
                'e_nonlocal': traj_nonlocal.energies[i].e_total,
                'e_local': traj_local.energies[j].e_total,
            })
        return pd.DataFrame(rows, columns=['t', 'e_nonlocal', 'e_local'])

    @staticmethod
    def export_energy_csv(mesh: Mesh, trajectory: Trajectory, path: str) -> pd.DataFrame:
        """Write the energy table of a trajectory to path."""
        table = Diagnostics.energy_table(mesh, trajectory)
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        table.to_csv(path, index=False, float_format='%.17g')
        logger.info(f"Wrote {len(table)} energy rows to {path}")
        return table


check_bounds = Diagnostics.check_bounds
mass_drift = Diagnostics.mass_drift
mixed_region_measure = Diagnostics.mixed_region_measure
energy_comparison = Diagnostics.energy_comparison
entropy_bounded = Diagnostics.entropy_bounded
