import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from oplab.lattice_geometry import GeometryError, arcs_disjoint, parse_arc
from oplab.operator_core import BOUNDARIES, REPRESENTATIONS, TruncationWindow

LOGGER = logging.getLogger(__name__)

# constants
EXPERIMENTS = ['index-sweep', 'theorem1', 'theorem2', 'surgery', 'locality-scan']
SEEDLESS = ['index-sweep']
INDEX_EXPERIMENTS = ['index-sweep', 'theorem2']
EXPERIMENT_REPRESENTATION = {
    'index-sweep': 'Z',
    'theorem1': 'Z2',
    'theorem2': 'Z',
    'surgery': 'Z2',
    'locality-scan': 'Z2',
}
OUT_DIR_ENV = 'OPL_OUT_DIR'


class ConfigError(ValueError):
    def __init__(self, errors:list[str]) -> None:
        super().__init__('invalid configuration:\n  ' + '\n  '.join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class Tolerances:
    '''
    Numerical thresholds shared by the estimators and certifiers.

    params:
        sv_threshold: singular values below count as kernel.
        trace_power: m in Tr((1 - T*T)^m) - Tr((1 - TT*)^m).
        compact_floor: far-probe norms below flag a projection as trivial-suspect.
        buffer: fraction of the radius kept clear of the window edge.
        tol_idem: projection tolerance.
        tol_inv: invertibility tolerance.
        cut_radius: distance from the cut counted as the cut neighbourhood.
        locality_allowance: cutoff radius below which cross-cone mass is ignored.
    '''
    sv_threshold: float = 1e-6
    trace_power: int = 4
    compact_floor: float = 1e-3
    buffer: float = 0.25
    tol_idem: float = 1e-10
    tol_inv: float = 1e-8
    cut_radius: float = 6
    locality_allowance: float = 3

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    representation: str
    radius: Fraction
    boundary: str = 'open'
    tolerances: Tolerances = field(default_factory=Tolerances)
    samples: int = 100
    arc_pairs: tuple = ()
    seed: int|None = None
    out_dir: Path = Path('out')
    params: dict = field(default_factory=dict)

    def rng(self) -> np.random.Generator:
        if self.seed is None:
            raise ConfigError([f'experiment {self.experiment!r} needs a seed'])
        return np.random.default_rng(self.seed)

    def window(self) -> TruncationWindow:
        return TruncationWindow(self.representation, self.radius)

    def param(self, key:str, default=None):
        return self.params.get(key, default)

    def to_json(self) -> dict:
        return {
            'experiment': self.experiment,
            'representation': self.representation,
            'radius': str(self.radius),
            'boundary': self.boundary,
            'tolerances': self.tolerances.to_json(),
            'samples': self.samples,
            'arc_pairs': [[str(I), str(J)] for I, J in self.arc_pairs],
            'seed': self.seed,
            'params': self.params,
        }


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _parse_radius(value, errors:list[str]) -> Fraction|None:
    try:
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ValueError
        radius = Fraction(value)
    except (ValueError, ZeroDivisionError):
        errors.append(f'radius: expected a positive integer or "p/q" string, got {value!r}')
        return None
    if radius <= 0:
        errors.append(f'radius: must be positive, got {value!r}')
        return None
    return radius


def _parse_tolerances(value, errors:list[str]) -> Tolerances:
    if not isinstance(value, dict):
        errors.append('tolerances: expected an object')
        return Tolerances()
    known = {f.name: f for f in fields(Tolerances)}
    values = {}
    for key, item in value.items():
        if key not in known:
            errors.append(f'tolerances.{key}: unknown tolerance')
            continue
        if not _is_number(item) or item <= 0:
            errors.append(f'tolerances.{key}: must be a positive number, got {item!r}')
            continue
        if key == 'trace_power' and int(item) != item:
            errors.append(f'tolerances.trace_power: must be an integer, got {item!r}')
            continue
        values[key] = int(item) if key == 'trace_power' else float(item)
    return Tolerances(**values)


def _parse_arc_pairs(value, errors:list[str]) -> tuple:
    if not isinstance(value, list):
        errors.append('arc_pairs: expected a list of [arc, arc] pairs')
        return ()
    pairs = []
    for i, item in enumerate(value):
        if not (isinstance(item, list) and len(item) == 2 and all(isinstance(a, str) for a in item)):
            errors.append(f'arc_pairs[{i}]: expected two arc strings such as "(1,0)..(1,1)"')
            continue
        try:
            I, J = parse_arc(item[0]), parse_arc(item[1])
        except GeometryError as e:
            errors.append(f'arc_pairs[{i}]: {e}')
            continue
        if not arcs_disjoint(I, J):
            errors.append(f'arc_pairs[{i}]: arcs {I} and {J} overlap')
            continue
        pairs.append((I, J))
    return tuple(pairs)


def parse_config(doc, seed:int|None=None, out_dir=None) -> ExperimentConfig:
    '''
    Validate a configuration document, collecting every field problem into one ConfigError.
    Command line seed/out_dir override the document; OPL_OUT_DIR overrides the document's out_dir.
    '''
    if not isinstance(doc, dict):
        raise ConfigError(['configuration must be a JSON object'])
    errors = []
    for key in ['experiment', 'representation', 'radius']:
        if key not in doc:
            errors.append(f'{key}: missing')
    unknown = set(doc) - {f.name for f in fields(ExperimentConfig)}
    for key in sorted(unknown):
        errors.append(f'{key}: unknown field')

    experiment = doc.get('experiment')
    if 'experiment' in doc and experiment not in EXPERIMENTS:
        errors.append(f'experiment: expected one of {EXPERIMENTS}, got {experiment!r}')
    representation = doc.get('representation')
    if 'representation' in doc and representation not in REPRESENTATIONS:
        errors.append(f'representation: expected one of {REPRESENTATIONS}, got {representation!r}')
    elif experiment in EXPERIMENTS and representation in REPRESENTATIONS \
            and representation != EXPERIMENT_REPRESENTATION[experiment]:
        errors.append(f'representation: {experiment} runs on {EXPERIMENT_REPRESENTATION[experiment]} windows')
    radius = _parse_radius(doc['radius'], errors) if 'radius' in doc else None

    boundary = doc.get('boundary', 'open')
    if boundary not in BOUNDARIES:
        errors.append(f'boundary: expected one of {BOUNDARIES}, got {boundary!r}')
    elif boundary == 'periodic' and experiment in INDEX_EXPERIMENTS:
        errors.append(f'boundary: {experiment} computes indices, which need open windows')
    elif boundary == 'periodic' and experiment in EXPERIMENTS:
        errors.append(f'boundary: {experiment} runs on Z2 windows, which have no shift boundary')
    tolerances = _parse_tolerances(doc.get('tolerances', {}), errors)
    samples = doc.get('samples', 100)
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 2:
        errors.append(f'samples: must be an integer >= 2, got {samples!r}')
    arc_pairs = _parse_arc_pairs(doc.get('arc_pairs', []), errors)

    if seed is None:
        seed = doc.get('seed')
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        errors.append(f'seed: must be a non-negative integer, got {seed!r}')
    if seed is None and experiment in EXPERIMENTS and experiment not in SEEDLESS:
        errors.append(f'seed: required for the randomized experiment {experiment!r}')

    params = doc.get('params', {})
    if not isinstance(params, dict):
        errors.append('params: expected an object')
        params = {}
    if out_dir is None:
        out_dir = os.environ.get(OUT_DIR_ENV) or doc.get('out_dir', 'out')
    if not isinstance(out_dir, (str, Path)):
        errors.append(f'out_dir: expected a path string, got {out_dir!r}')

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(experiment, representation, radius, boundary, tolerances, samples,
                            arc_pairs, seed, Path(out_dir), params)


def load_config(path, seed:int|None=None, out_dir=None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError([f'cannot read {path}: {e.strerror}']) from e
    except json.JSONDecodeError as e:
        raise ConfigError([f'{path} is not valid JSON: {e}']) from e
    config = parse_config(doc, seed, out_dir)
    LOGGER.info(f'loaded {config.experiment} config from {path}')
    return config
