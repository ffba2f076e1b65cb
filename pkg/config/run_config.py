"""Run configuration files, experiment presets and initial conditions."""
import logging
import os
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from config import config, ConfigurationError
from data import ModelParams, NewtonConfig, State, MODEL_KINDS
from mesh import Mesh, MeshBuilder
from model import ModelFunctions

logger = logging.getLogger(__name__)

BIT_GENERATORS = {
    'pcg64': np.random.PCG64,
    'philox': np.random.Philox,
    'sfc64': np.random.SFC64,
    'mt19937': np.random.MT19937,
}

INITIAL_KINDS = ('cross', 'spinodal', 'uniform', 'cosine', 'file')

PRESETS: Dict[str, Dict[str, Any]] = {
    'cross': {
        'mesh': 'cartesian', 'nx': 32, 'ny': 32, 'lx': 1.0, 'ly': 1.0,
        'alpha': 3.6e-4, 'chi': 0.8,
        'initial': 'cross', 'cross_width': 0.2, 'cross_length': 0.8,
        't_end': 0.1, 'dt0': 1e-4, 'output_times': (0.01, 0.02, 0.1),
    },
    'spinodal': {
        'mesh': 'cartesian', 'nx': 32, 'ny': 32, 'lx': 1.0, 'ly': 1.0,
        'alpha': 3e-4, 'chi': 0.96,
        'initial': 'spinodal', 'initial_value': 0.5, 'spinodal_amplitude': 0.01,
        'seed': 2019, 'rng': 'pcg64',
        't_end': 0.1, 'dt0': 1e-4, 'output_times': (0.006, 0.05, 1.0),
    },
    'smooth1d': {
        'mesh': 'cartesian', 'nx': 128, 'ny': None, 'lx': 1.0,
        'alpha': 1e-2, 'chi': 0.8,
        'initial': 'cosine', 'cosine_mean': 0.5, 'cosine_amplitude': 0.3,
        't_end': 0.05, 'dt0': 1e-4, 'jko_tau': 1e-4, 'output_times': (0.01, 0.05),
    },
    'custom': {},
}


def _optional_int(value: str) -> Optional[int]:
    return None if value.strip().lower() in ('', 'none') else int(value)


def _float_list(value: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in value.split(',') if v.strip())


def _lower(value: str) -> str:
    return value.strip().lower()


KEY_TYPES: Dict[str, Callable[[str], Any]] = {
    'preset': _lower, 'model': _lower, 'mesh': _lower,
    'nx': int, 'ny': _optional_int, 'lx': float, 'ly': float, 'mesh_file': str.strip,
    'alpha': float, 'chi': float, 'theta1': float, 'theta2': float, 'm1': float, 'm2': float,
    'psi1': str.strip, 'psi2': str.strip,
    'initial': _lower, 'initial_value': float, 'cross_width': float, 'cross_length': float,
    'spinodal_amplitude': float, 'cosine_mean': float, 'cosine_amplitude': float,
    'initial_file': str.strip,
    't_end': float, 'dt0': float, 'output_times': _float_list,
    'newton_tol': float, 'newton_max_iter': int, 'newton_damping': float,
    'newton_backtrack_ratio': float, 'dt_shrink': float, 'dt_grow': float,
    'output_dir': str.strip, 'seed': int, 'rng': _lower,
    'jko_tau': float, 'jko_tol': float, 'jko_max_iter': int,
}

DEFAULTS: Dict[str, Any] = {
    'model': 'nonlocal', 'mesh': 'cartesian', 'ny': None, 'lx': 1.0, 'ly': None, 'mesh_file': None,
    'theta1': 0.0, 'theta2': 0.0, 'm1': 1.0, 'm2': 1.0, 'psi1': 'zero', 'psi2': 'zero',
    'initial_value': 0.5, 'cross_width': None, 'cross_length': None, 'spinodal_amplitude': 0.01,
    'cosine_mean': 0.5, 'cosine_amplitude': 0.3, 'initial_file': None,
    'output_times': (),
    'newton_tol': config.NEWTON_TOL, 'newton_max_iter': config.NEWTON_MAX_ITER,
    'newton_damping': config.NEWTON_DAMPING, 'newton_backtrack_ratio': config.NEWTON_BACKTRACK_RATIO,
    'dt_shrink': config.DT_SHRINK, 'dt_grow': config.DT_GROW,
    'output_dir': config.OUTPUT_DIR, 'seed': None, 'rng': 'pcg64',
    'jko_tau': None, 'jko_tol': config.JKO_TOL, 'jko_max_iter': config.JKO_MAX_ITER,
}

REQUIRED = ('alpha', 'chi', 'initial', 't_end', 'dt0')


@dataclass
class InitialSpec:
    """Initial saturation recipe."""
    kind: str
    value: float = 0.5
    cross_width: Optional[float] = None
    cross_length: Optional[float] = None
    amplitude: float = 0.01
    cosine_mean: float = 0.5
    cosine_amplitude: float = 0.3
    file: Optional[str] = None
    seed: Optional[int] = None
    rng: str = 'pcg64'

    def to_dict(self):
        """Convert to dictionary."""
        return asdict(self)


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment."""
    preset: str
    model_kind: str
    mesh_kind: str
    nx: Optional[int]
    ny: Optional[int]
    lx: float
    ly: Optional[float]
    mesh_file: Optional[str]
    alpha: float
    chi: float
    theta: Tuple[float, float]
    mobility: Tuple[float, float]
    psi: Tuple[str, str]
    initial: InitialSpec
    t_end: float
    dt0: float
    output_times: Tuple[float, ...] = ()
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    output_dir: str = config.OUTPUT_DIR
    jko_tau: Optional[float] = None
    jko_tol: float = config.JKO_TOL
    jko_max_iter: int = config.JKO_MAX_ITER

    def build_mesh(self) -> Mesh:
        if self.mesh_kind == 'file':
            return MeshBuilder.import_delaunay(self.mesh_file)
        return MeshBuilder.build_cartesian(self.nx, self.ny, self.lx, self.ly)

    def build_params(self, mesh: Mesh, model_kind: Optional[str] = None) -> ModelParams:
        """Model parameters on mesh; model_kind overrides the configured model."""
        psi = None
        if self.psi != ('zero', 'zero'):
            try:
                psi = np.vstack([ModelFunctions.build_potential(spec, mesh) for spec in self.psi])
            except (ValueError, OSError) as e:
                raise ConfigurationError(f"external potential: {e}")
        params = ModelParams(
            alpha=self.alpha,
            chi=self.chi,
            theta=self.theta,
            mobility=self.mobility,
            psi=psi,
            model_kind=model_kind or self.model_kind,
        )
        return params.validate(mesh.n_cells)

    def to_dict(self):
        """Convert to dictionary."""
        data = asdict(self)
        data['newton'] = self.newton.to_dict()
        return data


def parse_config(path: str) -> RunConfig:
    """
    Read and validate a run configuration file.

    Args:
        path: Flat `key = value` file; `#` starts a comment, keys are case-insensitive

    Returns:
        Validated RunConfig; explicit keys override the preset's values
    """
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}")
    raw = {}
    for key, value in dotenv_values(path).items():
        key = key.strip().lower()
        if key not in KEY_TYPES:
            raise ConfigurationError(f"{path}: unknown key {key!r}")
        if value is None:
            raise ConfigurationError(f"{path}: key {key!r} has no value")
        raw[key] = value
    return build_config(raw, source=path)


def build_config(raw: Dict[str, Any], source: str = '<dict>') -> RunConfig:
    """Validate raw key/value pairs (strings or typed values) into a RunConfig."""
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if key not in KEY_TYPES:
            raise ConfigurationError(f"{source}: unknown key {key!r}")
        if isinstance(value, str):
            try:
                value = KEY_TYPES[key](value)
            except ValueError:
                raise ConfigurationError(f"{source}: invalid value {value!r} for {key!r}")
        values[key] = value

    preset = values.pop('preset', 'custom')
    if preset not in PRESETS:
        raise ConfigurationError(f"{source}: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = {**DEFAULTS, **PRESETS[preset], **values}

    missing = [k for k in REQUIRED if merged.get(k) is None]
    if merged['mesh'] == 'cartesian' and merged.get('nx') is None:
        missing.append('nx')
    if merged['mesh'] == 'file' and not merged.get('mesh_file'):
        missing.append('mesh_file')
    if missing:
        raise ConfigurationError(f"{source}: missing required key(s) {missing}")

    if merged['mesh'] not in ('cartesian', 'file'):
        raise ConfigurationError(f"{source}: mesh must be 'cartesian' or 'file', got {merged['mesh']!r}")
    if merged['model'] not in MODEL_KINDS:
        raise ConfigurationError(f"{source}: model must be one of {MODEL_KINDS}, got {merged['model']!r}")
    if merged['initial'] not in INITIAL_KINDS:
        raise ConfigurationError(f"{source}: initial must be one of {INITIAL_KINDS}, got {merged['initial']!r}")
    if merged['rng'] not in BIT_GENERATORS:
        raise ConfigurationError(f"{source}: rng must be one of {sorted(BIT_GENERATORS)}, got {merged['rng']!r}")
    if merged['initial'] == 'spinodal' and merged['seed'] is None:
        raise ConfigurationError(f"{source}: a randomized initial condition needs a seed")
    if merged['initial'] == 'file' and not merged['initial_file']:
        raise ConfigurationError(f"{source}: initial = file needs initial_file")
    theta = (merged['theta1'], merged['theta2'])
    if merged['model'] == 'local' and any(t != 0 for t in theta):
        raise ConfigurationError(f"{source}: theta must be (0, 0) with the local model, got {theta}")
    if not merged['dt0'] > 0:
        raise ConfigurationError(f"{source}: dt0 must be positive")
    if merged['t_end'] < 0:
        raise ConfigurationError(f"{source}: t_end must be non-negative")

    run = RunConfig(
        preset=preset,
        model_kind=merged['model'],
        mesh_kind=merged['mesh'],
        nx=merged.get('nx'),
        ny=merged['ny'],
        lx=merged['lx'],
        ly=merged['ly'],
        mesh_file=merged['mesh_file'],
        alpha=merged['alpha'],
        chi=merged['chi'],
        theta=theta,
        mobility=(merged['m1'], merged['m2']),
        psi=(merged['psi1'], merged['psi2']),
        initial=InitialSpec(
            kind=merged['initial'],
            value=merged['initial_value'],
            cross_width=merged['cross_width'],
            cross_length=merged['cross_length'],
            amplitude=merged['spinodal_amplitude'],
            cosine_mean=merged['cosine_mean'],
            cosine_amplitude=merged['cosine_amplitude'],
            file=merged['initial_file'],
            seed=merged['seed'],
            rng=merged['rng'],
        ),
        t_end=merged['t_end'],
        dt0=merged['dt0'],
        output_times=tuple(merged['output_times']),
        newton=NewtonConfig(
            tol_residual=merged['newton_tol'],
            max_iter=merged['newton_max_iter'],
            damping=merged['newton_damping'],
            backtrack_ratio=merged['newton_backtrack_ratio'],
            dt_shrink=merged['dt_shrink'],
            dt_grow=merged['dt_grow'],
        ),
        output_dir=merged['output_dir'],
        jko_tau=merged['jko_tau'] if merged['jko_tau'] is not None else merged['dt0'],
        jko_tol=merged['jko_tol'],
        jko_max_iter=merged['jko_max_iter'],
    )
    ModelParams(run.alpha, run.chi, run.theta, run.mobility, None, run.model_kind).validate()
    logger.debug(f"Loaded run config from {source}: preset={preset}, model={run.model_kind}")
    return run


def make_rng(name: str, seed: int) -> np.random.Generator:
    """Seeded generator on a named 64-bit bit generator."""
    if name not in BIT_GENERATORS:
        raise ConfigurationError(f"unknown rng {name!r}; choose from {sorted(BIT_GENERATORS)}")
    if seed is None:
        raise ConfigurationError("a seed is required for randomized initial conditions")
    return np.random.Generator(BIT_GENERATORS[name](seed))


def _interval_overlap(a0, a1, b0, b1):
    return np.maximum(0.0, np.minimum(a1, b1) - np.maximum(a0, b0))


def _cross(spec: InitialSpec, mesh: Mesh) -> np.ndarray:
    if mesh.dim != 2:
        raise ConfigurationError("the cross initial condition needs a 2D mesh")
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    width = spec.cross_width if spec.cross_width is not None else 0.2 * (hi[0] - lo[0])
    length = spec.cross_length if spec.cross_length is not None else 0.8 * (hi[0] - lo[0])
    if not 0 < width <= length:
        raise ConfigurationError(f"cross needs 0 < width <= length, got width={width}, length={length}")
    cx, cy = 0.5 * (lo + hi)
    # (x0, x1, y0, y1) of the horizontal arm, the vertical arm and their overlap
    arms = [
        (cx - length / 2, cx + length / 2, cy - width / 2, cy + width / 2),
        (cx - width / 2, cx + width / 2, cy - length / 2, cy + length / 2),
        (cx - width / 2, cx + width / 2, cy - width / 2, cy + width / 2),
    ]
    if mesh.cell_kind == 'quad':
        corners = mesh.nodes[mesh.cell_nodes]
        x0, x1 = corners[:, :, 0].min(axis=1), corners[:, :, 0].max(axis=1)
        y0, y1 = corners[:, :, 1].min(axis=1), corners[:, :, 1].max(axis=1)
        area = [_interval_overlap(x0, x1, a[0], a[1]) * _interval_overlap(y0, y1, a[2], a[3]) for a in arms]
        return (area[0] + area[1] - area[2]) / mesh.cell_measures

    x, y = mesh.cell_centroids[:, 0], mesh.cell_centroids[:, 1]
    inside = [(x >= a[0]) & (x <= a[1]) & (y >= a[2]) & (y <= a[3]) for a in arms[:2]]
    return (inside[0] | inside[1]).astype(float)


def _spinodal(spec: InitialSpec, mesh: Mesh) -> np.ndarray:
    rng = make_rng(spec.rng, spec.seed)
    a = spec.amplitude
    if not a > 0:
        raise ConfigurationError(f"spinodal amplitude must be positive, got {a}")
    r = rng.uniform(-a, a, mesh.n_cells)
    r -= np.sum(mesh.cell_measures * r) / np.sum(mesh.cell_measures)
    peak = np.max(np.abs(r))
    if peak > a:
        r *= a / peak
    return spec.value + r


def initial_condition(spec: InitialSpec, mesh: Mesh) -> State:
    """
    Initial state at t = 0 on mesh; values are clamped to [0, 1].

    cross: union of two centered rectangles of arm width w and length l, with
    exact cell coverage fractions on quadrilateral cells and a centroid test on
    triangles. spinodal: value + uniform(-a, a) noise, shifted to the exact
    mean value and kept within amplitude a. cosine: mean + amplitude cos(pi x / Lx).
    """
    if spec.kind == 'uniform':
        c = np.full(mesh.n_cells, float(spec.value))
    elif spec.kind == 'cross':
        c = _cross(spec, mesh)
    elif spec.kind == 'spinodal':
        c = _spinodal(spec, mesh)
    elif spec.kind == 'cosine':
        x = mesh.cell_centroids[:, 0]
        length = float(mesh.nodes[:, 0].max() - mesh.nodes[:, 0].min())
        c = spec.cosine_mean + spec.cosine_amplitude * np.cos(np.pi * x / length)
    elif spec.kind == 'file':
        try:
            c = ModelFunctions.read_cell_field(spec.file, mesh.n_cells)
        except (ValueError, OSError) as e:
            raise ConfigurationError(f"initial condition: {e}")
    else:
        raise ConfigurationError(f"unknown initial condition {spec.kind!r}")
    return State(c1=np.clip(c, 0.0, 1.0), time=0.0)
