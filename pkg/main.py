"""Main application entry point for phaseFlow."""
import argparse
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

from config import config, ConfigurationError
from config.run_config import RunConfig, initial_condition, parse_config
from data import Density1D, Trajectory
from data.writers import SnapshotWriter
from diagnostics import Diagnostics
from diagnostics.plots import write_energy_plot
from jko1d import JKOSolver, compare_trajectories
from mesh import Mesh, MeshBuilder, MeshError
from solver import SolverFailure, TimeStepper

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
STEP_LOGGER = 'solver.driver'


def setup_logging(level: str = config.LOG_LEVEL, log_file: str = config.LOG_FILE):
    """Configure root logging to the application log file and the console."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )


class PhaseFlowApp:
    """Runs experiments described by run configuration files."""

    def __init__(self, workers: int = config.ASSEMBLY_WORKERS):
        self.workers = workers
        self._log_lock = threading.Lock()
        self._open_step_logs = 0
        self._saved_level = logging.NOTSET
        logger.info("phaseFlow application initialized")

    def _step_log(self, output_dir: str) -> logging.Handler:
        # one run.log per run: only records emitted by the calling thread
        handler = logging.FileHandler(os.path.join(output_dir, 'run.log'), mode='w')
        handler.setFormatter(logging.Formatter('%(message)s'))
        thread = threading.get_ident()
        handler.addFilter(lambda record: record.thread == thread)
        step_logger = logging.getLogger(STEP_LOGGER)
        with self._log_lock:
            if self._open_step_logs == 0:
                self._saved_level = step_logger.level
                if not step_logger.isEnabledFor(logging.INFO):
                    step_logger.setLevel(logging.INFO)
            self._open_step_logs += 1
            step_logger.addHandler(handler)
        return handler

    def _close_step_log(self, handler: logging.Handler):
        step_logger = logging.getLogger(STEP_LOGGER)
        with self._log_lock:
            step_logger.removeHandler(handler)
            self._open_step_logs -= 1
            if self._open_step_logs == 0:
                step_logger.setLevel(self._saved_level)
        handler.close()

    def run_experiment(self, run: RunConfig, model_kind: Optional[str] = None,
                       output_dir: Optional[str] = None) -> Tuple[Mesh, Trajectory]:
        """
        Run one model and write its artifacts.

        Args:
            run: Validated run configuration
            model_kind: Overrides run.model_kind
            output_dir: Overrides run.output_dir

        Returns:
            (mesh, trajectory)
        """
        out = output_dir or run.output_dir
        os.makedirs(out, exist_ok=True)
        mesh = run.build_mesh()
        params = run.build_params(mesh, model_kind)
        initial = initial_condition(run.initial, mesh)
        logger.info(f"Running {params.model_kind} model ({run.preset}) on {mesh.n_cells} cells into {out}")

        snapshots: List[str] = []

        def on_output(state):
            bounds = Diagnostics.check_bounds(state)
            if not bounds.passed:
                logger.error(f"snapshot t={state.time} violates the bounds by {bounds.worst_violation:.3e}")
            path = os.path.join(out, SnapshotWriter.snapshot_name(params.model_kind, len(snapshots), state.time))
            snapshots.append(SnapshotWriter.write_vtk(mesh, state, path))

        handler = self._step_log(out)
        try:
            stepper = TimeStepper(mesh, params, run.newton, self.workers)
            output_times = tuple(run.output_times) + (0.0, run.t_end)
            trajectory = stepper.run(initial, run.t_end, run.dt0, output_times, on_output)
        finally:
            self._close_step_log(handler)

        Diagnostics.export_energy_csv(mesh, trajectory, os.path.join(out, 'energy.csv'))
        drift = Diagnostics.mass_drift(trajectory)
        if not Diagnostics.entropy_bounded(mesh, trajectory):
            logger.warning(f"{params.model_kind}: phase entropy out of range")
        logger.info(f"{params.model_kind}: {len(trajectory.steps)} steps, {len(snapshots)} snapshots, "
                    f"mass drift {drift}")
        return mesh, trajectory

    def compare(self, run: RunConfig) -> str:
        """Run both models concurrently from one initial state and write the comparison table."""
        out = run.output_dir
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = {
                kind: pool.submit(self.run_experiment, run, kind, os.path.join(out, kind))
                for kind in ('nonlocal', 'local')
            }
            results = {kind: future.result() for kind, future in futures.items()}

        mesh, traj_nl = results['nonlocal']
        _, traj_loc = results['local']
        times = sorted({0.0, *run.output_times, run.t_end})
        times = [t for t in times if t <= run.t_end]
        table = Diagnostics.energy_comparison(traj_nl, traj_loc, times)
        table['mixed_nonlocal'] = [Diagnostics.mixed_region_measure(mesh, traj_nl.states[traj_nl.index_at(t)])
                                   for t in times]
        table['mixed_local'] = [Diagnostics.mixed_region_measure(mesh, traj_loc.states[traj_loc.index_at(t)])
                                for t in times]
        path = os.path.join(out, 'comparison.csv')
        table.to_csv(path, index=False, float_format='%.17g')

        write_energy_plot({
            'non-local': Diagnostics.energy_table(mesh, traj_nl),
            'local': Diagnostics.energy_table(mesh, traj_loc),
        }, os.path.join(out, 'energy.html'))
        logger.info(f"Wrote comparison of {len(times)} sample times to {path}")
        return path

    def jko1d(self, run: RunConfig) -> str:
        """Run the finite-volume and minimizing-movement schemes in 1D and tabulate their gap."""
        mesh = run.build_mesh()
        if mesh.dim != 1:
            raise ConfigurationError("jko1d needs a 1D Cartesian mesh (leave ny unset)")
        out = run.output_dir
        os.makedirs(out, exist_ok=True)
        params = run.build_params(mesh, 'nonlocal')
        initial = initial_condition(run.initial, mesh)

        _, fv = self.run_experiment(run, 'nonlocal', os.path.join(out, 'fv'))
        h = float(mesh.cell_measures[0])
        solver = JKOSolver(params, mesh.n_cells, h, tol=run.jko_tol, max_iter=run.jko_max_iter)
        jko = solver.run(Density1D(initial.c1, h), run.t_end, run.jko_tau)

        Diagnostics.export_energy_csv(mesh, jko, os.path.join(out, 'jko_energy.csv'))
        times = sorted({*run.output_times, run.t_end})
        gaps = compare_trajectories(fv, jko, [t for t in times if t <= run.t_end])
        path = os.path.join(out, 'jko_comparison.csv')
        gaps.to_csv(path, index=False, float_format='%.17g')

        e0 = jko.energies[0].e_total
        e_min = min(e.e_total for e in jko.energies)
        logger.info(f"jko: sum W^2 = {sum(jko.distances_sq):.6e}, 2 tau (E0 - Emin) = "
                    f"{2.0 * run.jko_tau * (e0 - e_min):.6e}, max gap {gaps['l2_gap'].max():.3e}")
        return path

    def check_mesh(self, path: str) -> dict:
        """Import a triangulation and report its admissibility summary."""
        mesh = MeshBuilder.import_delaunay(path)
        summary = MeshBuilder.summary(mesh)
        print(json.dumps(summary, indent=2))
        return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='phaseflow', description='Two-phase Cahn-Hilliard finite-volume solver')
    parser.add_argument('--log-level', default=config.LOG_LEVEL)
    sub = parser.add_subparsers(dest='command', required=True)
    for name, text in (('run', 'run one model'),
                       ('compare', 'run the non-local and local models side by side'),
                       ('jko1d', 'compare the 1D finite-volume run with minimizing movements')):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument('config', help='run configuration file')
        cmd.add_argument('--output-dir', default=None, help='overrides output_dir')
    cmd = sub.add_parser('check-mesh', help='validate a triangulation file')
    cmd.add_argument('mesh', help='triangulation file')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    app = PhaseFlowApp()
    try:
        if args.command == 'check-mesh':
            app.check_mesh(args.mesh)
            return EXIT_OK
        run = parse_config(args.config)
        if args.output_dir:
            run.output_dir = args.output_dir
        if args.command == 'run':
            app.run_experiment(run)
        elif args.command == 'compare':
            app.compare(run)
        else:
            app.jko1d(run)
        return EXIT_OK
    except (ConfigurationError, MeshError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except SolverFailure as e:
        logger.error(f"Solver failure: {e}")
        return EXIT_SOLVER
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())
