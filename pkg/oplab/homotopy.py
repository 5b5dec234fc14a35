import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from itertools import islice
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from oplab.config import Tolerances
from oplab.index import (FredholmError, default_probes, nontriviality_probe, projection_index)
from oplab.lattice_geometry import Arc, Explicit, arcs_disjoint, enumerate_directions
from oplab.locality import CentersPlan, compactness_profile
from oplab.opmat import encode_operator, import_operator
from oplab.operator_core import (CircleFunction, NotUnitaryError, Operator, OperatorError, Projection, amplify,
                                 SingularOperatorError, TruncationWindow, diagonal_projection,
                                 spectral_norm, unitarity_defect)
from oplab.surgery import corrective_unitary, greedy_isometry, localized_centers

LOGGER = logging.getLogger(__name__)

# constants
CONTINUITY_TOL = 1e-9
PATH_FORMAT = 'oplab-path'
PATH_VERSION = 1
MANIFEST = 'path.json'


class HomotopyError(OperatorError):
    pass


class PathDiscontinuityError(HomotopyError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage:str, cause:Exception) -> None:
        super().__init__(f'stage {stage} failed: {cause}')
        self.stage = stage
        self.cause = cause


# segments

class Segment():
    '''A map [0, 1] -> dense matrices over one window.'''
    KIND = ''

    def __init__(self, window) -> None:
        self.window = window

    def sample(self, t:float) -> np.ndarray:
        raise NotImplementedError

    def reversed(self) -> 'Segment':
        return ReversedSegment(self)

    def payload(self, store:Callable) -> dict:
        raise NotImplementedError

    def to_manifest(self, store:Callable) -> dict:
        return {'kind': self.KIND, **self.payload(store)}


class StraightLineSegment(Segment):
    KIND = 'straight_line'

    def __init__(self, window, a0:np.ndarray, a1:np.ndarray) -> None:
        super().__init__(window)
        self.a0, self.a1 = a0, a1

    def sample(self, t:float) -> np.ndarray:
        return (1 - t) * self.a0 + t * self.a1

    def payload(self, store:Callable) -> dict:
        return {'a0': store(self.window, self.a0), 'a1': store(self.window, self.a1)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'StraightLineSegment':
        a0, a1 = load(doc['a0']), load(doc['a1'])
        return cls(a0.window, a0.entries, a1.entries)


class PolarSegment(Segment):
    '''t -> u |G|^(1-t) with G = u |G|.'''
    KIND = 'polar'

    def __init__(self, window, g:np.ndarray, tol_inv:float=1e-8) -> None:
        super().__init__(window)
        self.g = g
        self.tol_inv = tol_inv
        w, s, vh = scipy.linalg.svd(g, check_finite=False)
        if s[-1] <= tol_inv:
            raise SingularOperatorError(f'polar path of a singular operator: sigma_min={s[-1]:.3e}', float(s[-1]))
        self.u = w @ vh
        self.s, self.vh = s, vh

    def sample(self, t:float) -> np.ndarray:
        return self.u @ ((self.vh.conj().T * self.s ** (1 - t)) @ self.vh)

    def payload(self, store:Callable) -> dict:
        return {'g': store(self.window, self.g), 'tol_inv': self.tol_inv}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'PolarSegment':
        g = load(doc['g'])
        return cls(g.window, g.entries, doc['tol_inv'])


class BlockPeelSegment(Segment):
    '''t -> F (1 + t C)'''
    KIND = 'block_peel'

    def __init__(self, window, first:np.ndarray, corner:np.ndarray) -> None:
        super().__init__(window)
        self.first, self.corner = first, corner
        self.product = first @ corner

    def sample(self, t:float) -> np.ndarray:
        return self.first + t * self.product

    def payload(self, store:Callable) -> dict:
        return {'first': store(self.window, self.first), 'corner': store(self.window, self.corner)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'BlockPeelSegment':
        first, corner = load(doc['first']), load(doc['corner'])
        return cls(first.window, first.entries, corner.entries)


class LogSegment(Segment):
    '''
    t -> Z exp(i(1-t)Theta) Z* on each block, identity elsewhere.
    Eigenphases lie in (-pi, pi]; phases within 1e-12 of -pi are moved to +pi.
    '''
    KIND = 'log'

    def __init__(self, window, u:np.ndarray, blocks:Sequence[Sequence[int]]|None=None) -> None:
        super().__init__(window)
        self.u = u
        self.blocks = [list(map(int, b)) for b in blocks] if blocks is not None else None
        self.spectra = []
        self.flipped = 0
        for idx in (self.blocks if self.blocks is not None else [list(range(u.shape[0]))]):
            if not idx:
                continue
            t_mat, z = scipy.linalg.schur(u[np.ix_(idx, idx)], output='complex')
            phases = np.angle(np.diag(t_mat))
            branch = phases <= -np.pi + 1e-12
            phases[branch] = np.pi
            self.flipped += int(branch.sum())
            self.spectra.append((np.array(idx), z, phases))

    def sample(self, t:float) -> np.ndarray:
        m = np.eye(self.u.shape[0], dtype=np.complex128)
        for idx, z, phases in self.spectra:
            m[np.ix_(idx, idx)] = (z * np.exp(1j * (1 - t) * phases)) @ z.conj().T
        return m

    def payload(self, store:Callable) -> dict:
        return {'u': store(self.window, self.u), 'blocks': self.blocks, 'branch_flips': self.flipped}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'LogSegment':
        u = load(doc['u'])
        return cls(u.window, u.entries, doc['blocks'])


class ConjugationSegment(Segment):
    '''t -> U_t* Q U_t'''
    KIND = 'conjugation'

    def __init__(self, window, q:np.ndarray, inner:'HomotopyPath') -> None:
        super().__init__(window)
        self.q, self.inner = q, inner

    def sample(self, t:float) -> np.ndarray:
        u = self.inner.sample_matrix(t)
        return u.conj().T @ self.q @ u

    def payload(self, store:Callable) -> dict:
        return {'q': store(self.window, self.q), 'inner': self.inner.to_manifest(store)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'ConjugationSegment':
        q = load(doc['q'])
        return cls(q.window, q.entries, HomotopyPath.from_manifest(doc['inner'], load))


class BlockUnitarySegment(Segment):
    '''
    Z_t = [V W_t V*]_00 + 1 - [V V*]_00 with V a partial isometry of the amplified window
    whose range sits in the first copy and W_t a path on the same amplified window.
    '''
    KIND = 'block_unitary'

    def __init__(self, window, v_iso:Operator, inner:'HomotopyPath') -> None:
        super().__init__(window)
        self.v_iso, self.inner = v_iso, inner
        d = window.dimension
        self.v = v_iso.entries
        self.rest = np.eye(d) - (self.v @ self.v.conj().T)[:d, :d]

    def sample(self, t:float) -> np.ndarray:
        w = self.inner.sample_matrix(t)
        d = self.window.dimension
        return (self.v @ w @ self.v.conj().T)[:d, :d] + self.rest

    def payload(self, store:Callable) -> dict:
        return {'v_iso': store(self.v_iso.window, self.v_iso.entries), 'inner': self.inner.to_manifest(store)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'BlockUnitarySegment':
        v_iso = load(doc['v_iso'])
        return cls(v_iso.window.base, v_iso, HomotopyPath.from_manifest(doc['inner'], load))


class ReversedSegment(Segment):
    KIND = 'reversed'

    def __init__(self, segment:Segment) -> None:
        super().__init__(segment.window)
        self.segment = segment

    def sample(self, t:float) -> np.ndarray:
        return self.segment.sample(1 - t)

    def reversed(self) -> Segment:
        return self.segment

    def payload(self, store:Callable) -> dict:
        return {'segment': self.segment.to_manifest(store)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'ReversedSegment':
        return cls(segment_from_manifest(doc['segment'], load))


class ProductSegment(Segment):
    '''t -> A_t B for a fixed right factor B.'''
    KIND = 'product'

    def __init__(self, segment:Segment, right:np.ndarray) -> None:
        super().__init__(segment.window)
        self.segment, self.right = segment, right

    def sample(self, t:float) -> np.ndarray:
        return self.segment.sample(t) @ self.right

    def payload(self, store:Callable) -> dict:
        return {'segment': self.segment.to_manifest(store), 'right': store(self.window, self.right)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'ProductSegment':
        return cls(segment_from_manifest(doc['segment'], load), load(doc['right']).entries)


class UnitarizedSegment(Segment):
    '''Polar part of every sample.'''
    KIND = 'unitarized'

    def __init__(self, segment:Segment) -> None:
        super().__init__(segment.window)
        self.segment = segment

    def sample(self, t:float) -> np.ndarray:
        w, _, vh = scipy.linalg.svd(self.segment.sample(t), check_finite=False)
        return w @ vh

    def payload(self, store:Callable) -> dict:
        return {'segment': self.segment.to_manifest(store)}

    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'UnitarizedSegment':
        return cls(segment_from_manifest(doc['segment'], load))


SEGMENT_KINDS = {cls.KIND: cls for cls in [StraightLineSegment, PolarSegment, BlockPeelSegment, LogSegment,
                                           ConjugationSegment, BlockUnitarySegment, ReversedSegment,
                                           ProductSegment, UnitarizedSegment]}


def segment_from_manifest(doc:dict, load:Callable) -> Segment:
    kind = doc.get('kind')
    if kind not in SEGMENT_KINDS:
        raise HomotopyError(f'unknown segment kind {kind!r}')
    return SEGMENT_KINDS[kind].from_manifest(doc, load)


# paths

class HomotopyPath():
    '''
    Concatenation of segments with equal parameter weight.
    Adjacent segments and the declared endpoints must agree within tol.

    params:
        window: window shared by every segment.
        segments: ordered segments.
        start, end: declared endpoints, defaults to the segment endpoints.
        projection: projection-valued path.
    '''
    def __init__(self, window, segments:Sequence[Segment], name:str='', start=None, end=None,
                 projection:bool=False, tol:float=CONTINUITY_TOL) -> None:
        if not segments:
            raise HomotopyError('a path needs at least one segment')
        self.window = window
        self.segments = list(segments)
        self.name = name
        self.projection = projection
        ends = [(s.sample(0.0), s.sample(1.0)) for s in self.segments]
        for i in range(len(ends) - 1):
            gap = spectral_norm(ends[i][1] - ends[i + 1][0])
            if gap > tol:
                raise PathDiscontinuityError(f'segments {i} ({self.segments[i].KIND}) and {i + 1} '
                                             f'({self.segments[i + 1].KIND}) are {gap:.3e} apart')
        self.start = ends[0][0] if start is None else _matrix(start)
        self.end = ends[-1][1] if end is None else _matrix(end)
        for label, declared, actual in [('start', self.start, ends[0][0]), ('end', self.end, ends[-1][1])]:
            gap = spectral_norm(declared - actual)
            if gap > tol:
                raise PathDiscontinuityError(f'declared {label} is {gap:.3e} away from the path')


    def __repr__(self) -> str:
        return f'Path {self.name or "<unnamed>"} on {self.window} through {" > ".join(self.kinds)}.'


    @classmethod
    def concatenate(cls, paths:Sequence['HomotopyPath'], name:str='', start=None, end=None,
                    tol:float=CONTINUITY_TOL) -> 'HomotopyPath':
        segments = [s for p in paths for s in p.segments]
        return cls(paths[0].window, segments, name, start if start is not None else paths[0].start,
                   end if end is not None else paths[-1].end, paths[0].projection, tol)


    def __add__(self, other:'HomotopyPath') -> 'HomotopyPath':
        return HomotopyPath.concatenate([self, other], f'{self.name}+{other.name}')


    @property
    def kinds(self) -> list[str]:
        return [s.KIND for s in self.segments]


    def locate(self, t:float) -> tuple[int, float]:
        '''Segment index and local parameter of the global parameter t.'''
        if not 0 <= t <= 1:
            raise HomotopyError(f'path parameter {t} outside [0, 1]')
        n = len(self.segments)
        i = min(int(math.floor(t * n)), n - 1)
        return i, t * n - i


    def sample_matrix(self, t:float) -> np.ndarray:
        i, local = self.locate(t)
        return self.segments[i].sample(local)


    def sample(self, t:float) -> Operator:
        return Operator(self.window, self.sample_matrix(t), f'{self.name}({t:.4g})')


    def reversed(self) -> 'HomotopyPath':
        return HomotopyPath(self.window, [s.reversed() for s in reversed(self.segments)],
                            f'{self.name}^-1', self.end, self.start, self.projection)


    def right_multiplied(self, B:Operator) -> 'HomotopyPath':
        return HomotopyPath(self.window, [ProductSegment(s, B.entries) for s in self.segments],
                            f'{self.name}{B.name}', self.start @ B.entries, self.end @ B.entries, self.projection)


    def unitarized(self) -> 'HomotopyPath':
        return HomotopyPath(self.window, [UnitarizedSegment(s) for s in self.segments], f'pol({self.name})')


    def to_manifest(self, store:Callable) -> dict:
        return {
            'name': self.name,
            'projection': self.projection,
            'start': store(self.window, self.start),
            'end': store(self.window, self.end),
            'segments': [s.to_manifest(store) for s in self.segments],
        }


    @classmethod
    def from_manifest(cls, doc:dict, load:Callable) -> 'HomotopyPath':
        segments = [segment_from_manifest(s, load) for s in doc['segments']]
        start = load(doc['start'])
        return cls(start.window, segments, doc.get('name', ''), start.entries, load(doc['end']).entries,
                   doc.get('projection', False))


def _matrix(A) -> np.ndarray:
    return A.entries if isinstance(A, Operator) else np.asarray(A, dtype=np.complex128)


# constructions

def straight_line(A0:Operator, A1:Operator) -> HomotopyPath:
    if A0.window != A1.window:
        raise HomotopyError('straight line between different windows')
    return HomotopyPath(A0.window, [StraightLineSegment(A0.window, A0.entries, A1.entries)],
                        f'line({A0.name},{A1.name})')


def polar_path(G:Operator, tol_inv:float=1e-8) -> HomotopyPath:
    '''From G to its polar part, invertible throughout.'''
    return HomotopyPath(G.window, [PolarSegment(G.window, G.entries, tol_inv)], f'polar({G.name})')


def block_peel(M:Operator, P:Projection, tol:float=1e-8) -> tuple[tuple[Operator, Operator], HomotopyPath]:
    '''
    Factor M = (P + P'MP')(1 + PMP') for M in the block form P + PMP' + P'MP' (P' = 1 - P),
    with the path t -> (P + P'MP')(1 + tPMP') from the first factor to M.
    '''
    p = P.entries
    perp = np.eye(M.dimension) - p
    m = M.entries
    corner = p @ m @ perp
    first = p + perp @ m @ perp
    residual = spectral_norm(m - (p + corner + perp @ m @ perp))
    if residual > tol:
        lower = spectral_norm(perp @ m @ p)
        diagonal = spectral_norm(p @ m @ p - p)
        raise HomotopyError(f'block form violated: ||M - blocks||={residual:.3e}, '
                            f"||P'MP||={lower:.3e}, ||PMP - P||={diagonal:.3e}")
    nilpotent = spectral_norm(corner @ corner)
    if nilpotent > 1e-12:
        raise HomotopyError(f'corner block is not nilpotent: ||C^2||={nilpotent:.3e}')
    product = spectral_norm(first @ (np.eye(M.dimension) + corner) - m)
    LOGGER.debug(f'block peel: residual {residual:.3e}, factor product error {product:.3e}')
    F1 = Operator(M.window, first, 'F1', M.lineage + ('block_peel',))
    F2 = Operator(M.window, np.eye(M.dimension) + corner, 'F2', M.lineage + ('block_peel',))
    path = HomotopyPath(M.window, [BlockPeelSegment(M.window, first, corner)], f'peel({M.name})',
                        end=M, tol=max(CONTINUITY_TOL, 2 * product))
    return (F1, F2), path


def log_path(U:Operator, blocks:Sequence[Sequence[int]]|None=None, tol:float=1e-8) -> HomotopyPath:
    '''
    Spectral logarithm path from U to 1, blockwise when U is the identity outside the blocks.
    '''
    defect = unitarity_defect(U.entries)
    if defect > tol:
        raise NotUnitaryError(f'log path of a non-unitary operator: ||U*U - 1||={defect:.3e}')
    if blocks is not None:
        rest = U.entries.copy()
        seen = set()
        for idx in blocks:
            if seen & set(idx):
                raise HomotopyError('log path blocks overlap')
            seen |= set(idx)
            rest[np.ix_(idx, idx)] = np.eye(len(idx))
        off = float(np.abs(rest - np.eye(U.dimension)).max()) if U.dimension else 0.0
        if off > tol:
            raise HomotopyError(f'operator is not the identity outside the blocks ({off:.3e})')
    segment = LogSegment(U.window, U.entries, blocks)
    if segment.flipped:
        LOGGER.info(f'log path of {U.name}: {segment.flipped} eigenphases at -pi moved to +pi')
    return HomotopyPath(U.window, [segment], f'log({U.name})', U, np.eye(U.dimension))


def block_unitary_homotopy(U:Operator, P:Projection, V_iso:Operator, inner:HomotopyPath,
                           tol:float=1e-8) -> HomotopyPath:
    '''
    Z_t = V W_t V* + (1 - VV*) from 1 to U, for U acting as the identity on P, V = (P' (+) 0) + T with
    T a partial isometry into P, and W_t a unitary path from 1 to U (+) 1_n on the window of V.
    '''
    window = U.window
    d = U.dimension
    if V_iso.window.base != window:
        raise HomotopyError(f'V must act on an amplification of {window}')
    p = P.entries
    perp = np.eye(d) - p
    u = U.entries
    v = V_iso.entries
    t_part = v[:d, :].copy()
    t_part[:, :d] -= perp
    checks = {
        'U = P + P\'UP\'': (spectral_norm(u - (p + perp @ u @ perp)), tol),
        'range of V in the first copy': (spectral_norm(v[d:, :]), 1e-10),
        'V = 1 on P\'': (spectral_norm(v[:d, :d] @ perp - perp), 1e-10),
        'P\'T = 0': (spectral_norm(perp @ t_part), 1e-10),
        'V partial isometry': (spectral_norm(v @ v.conj().T @ v - v), 1e-10),
    }
    if inner.window.dimension != V_iso.dimension:
        raise HomotopyError(f'block unitary homotopy precondition W_t on the window of V violated: '
                            f'{inner.window.dimension} != {V_iso.dimension}')
    w0 = inner.sample_matrix(0.0)
    w1 = inner.sample_matrix(1.0)
    target = scipy.linalg.block_diag(u, np.eye(V_iso.dimension - d))
    checks['W_0 = 1'] = (spectral_norm(w0 - np.eye(w0.shape[0])), tol)
    checks['W_1 = U (+) 1'] = (spectral_norm(w1 - target), tol)
    for label, (value, limit) in checks.items():
        if value > limit:
            raise HomotopyError(f'block unitary homotopy precondition {label} violated: {value:.3e} > {limit:.0e}')
    segment = BlockUnitarySegment(window, V_iso, inner)
    return HomotopyPath(window, [segment], f'block({U.name})', np.eye(d), U, tol=max(CONTINUITY_TOL, tol))


def conjugation_path(Q:Projection, upath:HomotopyPath) -> HomotopyPath:
    '''t -> U_t* Q U_t from Q to U* Q U.'''
    start = upath.sample_matrix(0.0)
    gap = spectral_norm(start - np.eye(start.shape[0]))
    if gap > 1e-8:
        raise HomotopyError(f'conjugating path does not start at the identity ({gap:.3e})')
    segment = ConjugationSegment(Q.window, Q.entries, upath)
    return HomotopyPath(Q.window, [segment], f'conj({Q.name})', projection=True)


def _split_by(basis:np.ndarray, proj:np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''Rotate an invariant subspace of proj into its range and kernel parts.'''
    values, vectors = scipy.linalg.eigh(basis.conj().T @ proj @ basis)
    rotated = basis @ vectors
    return rotated[:, values > 0.5], rotated[:, values <= 0.5]


def unitary_equivalence(P:Projection, Q:Projection, tol_inv:float=1e-8) -> Operator:
    '''
    Unitary U with P = U* Q U: the polar part of X = QP + Q'P', completed on ker X by matching
    ran P & ker Q with ran Q & ker P and ran P' & ran Q with ran Q' & ran P.
    '''
    p, q = P.entries, Q.entries
    eye = np.eye(P.dimension)
    x = q @ p + (eye - q) @ (eye - p)
    w, s, vh = scipy.linalg.svd(x, check_finite=False)
    small = s <= tol_inv
    u = w[:, ~small] @ vh[~small]
    if small.any():
        rank_p, rank_q = round(float(np.real(np.trace(p)))), round(float(np.real(np.trace(q))))
        if rank_p != rank_q:
            raise HomotopyError(f'projections of different rank {rank_p} and {rank_q} are not unitarily equivalent')
        a_in, a_out = _split_by(vh[small].conj().T, p)
        b_in, b_out = _split_by(w[:, small], q)
        if a_in.shape[1] != b_in.shape[1] or a_out.shape[1] != b_out.shape[1]:
            raise HomotopyError('kernel of QP + Q\'P\' does not split evenly')
        u = u + b_in @ a_in.conj().T + b_out @ a_out.conj().T
        LOGGER.info(f'unitary equivalence completed on a {int(small.sum())}-dimensional kernel')
    error = spectral_norm(u.conj().T @ q @ u - p)
    if error > 1e-8:
        raise HomotopyError(f'unitary equivalence is off by {error:.3e}')
    return Operator(P.window, u, 'U', ('unitary_equivalence',))


# certification

@dataclass(frozen=True)
class SegmentReport:
    index: int
    kind: str
    samples: int
    max_unitarity_defect: float|None
    min_singular_value: float|None
    max_locality_defect: float|None

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class CertificateReport:
    '''
    Sampled defects of a path: unitarity (of 2A - 1 for projection paths), invertibility margin,
    cross-cone mass beyond the allowance, idempotency, index trace and endpoint errors.
    '''
    samples: int
    max_unitarity_defect: float
    min_singular_value: float
    max_locality_defect: float
    max_idempotency_defect: float
    index_trace: tuple
    endpoint_errors: tuple
    ts: tuple
    unitarity_defects: tuple
    singular_values: tuple
    locality_defects: tuple
    idempotency_defects: tuple
    segments: tuple = ()
    nontriviality_minima: tuple = ()
    pre_polar: 'CertificateReport|None' = None

    METRICS = ['unitarity_defect', 'min_singular_value', 'locality_defect', 'idempotency_defect']

    def series(self, metric:str) -> tuple:
        return {
            'unitarity_defect': self.unitarity_defects,
            'min_singular_value': self.singular_values,
            'locality_defect': self.locality_defects,
            'idempotency_defect': self.idempotency_defects,
        }[metric]

    def to_rows(self) -> list[tuple]:
        header = ('t', *self.METRICS, 'index', 'nontriviality')
        rows = [header]
        for j, t in enumerate(self.ts):
            index = self.index_trace[j] if self.index_trace else ''
            probe = self.nontriviality_minima[j] if self.nontriviality_minima else ''
            rows.append((t, self.unitarity_defects[j], self.singular_values[j], self.locality_defects[j],
                         self.idempotency_defects[j], index, probe))
        return rows

    def to_json(self) -> dict:
        return {
            'samples': self.samples,
            'max_unitarity_defect': self.max_unitarity_defect,
            'min_singular_value': self.min_singular_value,
            'max_locality_defect': self.max_locality_defect,
            'max_idempotency_defect': self.max_idempotency_defect,
            'index_trace': list(self.index_trace),
            'endpoint_errors': list(self.endpoint_errors),
            'segments': [s.to_json() for s in self.segments],
            'nontriviality_minima': list(self.nontriviality_minima),
            'pre_polar': self.pre_polar.to_json() if self.pre_polar is not None else None,
        }


class PathCertifier():
    '''
    Class to certify sampled paths.

    params:
        samples: number of grid points t_j = j/(samples-1).
        arc_pairs: disjoint arc pairs for the locality defect.
        allowance: cutoff radius inside which cross-cone mass is tolerated.
        base: operator for the index trace of projection paths.
        tolerances: shared numerical thresholds.
        probe: (functions, sites) for the non-triviality minimum of projection paths.
    '''
    def __init__(self, samples:int=100, arc_pairs:Sequence[tuple[Arc, Arc]]=(), allowance:float=3,
                 base:Operator|None=None, tolerances:Tolerances|None=None, probe:tuple|None=None) -> None:
        self.tolerances = tolerances or Tolerances()
        self.base = base
        self.probe = probe

        self.set_samples(samples)
        self.set_arc_pairs(arc_pairs)
        self.set_allowance(allowance)


    def __repr__(self) -> str:
        return f'Certifying paths at {self.samples} samples over {len(self.arc_pairs)} arc pairs.'


    def set_samples(self, samples:int) -> None:
        if isinstance(samples, int) and samples >= 2:
            self.samples = samples
        else:
            self.samples = 100
            LOGGER.warning('Invalid sample count entered.')
            LOGGER.warning(f'Samples set to default: {self.samples}')


    def set_arc_pairs(self, arc_pairs:Sequence[tuple[Arc, Arc]]) -> None:
        try:
            valid = all(arcs_disjoint(I, J) for I, J in arc_pairs)
        except (TypeError, ValueError, AttributeError):
            valid = False
        if valid:
            self.arc_pairs = tuple(arc_pairs)
        else:
            self.arc_pairs = ()
            LOGGER.warning('Invalid arc pairs entered.')
            LOGGER.warning(f'Arc pairs set to default: {list(self.arc_pairs)}')


    def set_allowance(self, allowance:float) -> None:
        if isinstance(allowance, (int, float, Fraction)) and allowance >= 0:
            self.allowance = allowance
        else:
            self.allowance = 3
            LOGGER.warning('Invalid locality allowance entered.')
            LOGGER.warning(f'Allowance set to default: {self.allowance}')


    def __locality(self, A:Operator) -> float:
        if not self.arc_pairs or not isinstance(A.window, TruncationWindow) or A.window.representation != 'Z2':
            return 0.0
        cutoff = [Fraction(self.allowance).limit_denominator(1000)]
        return max(max(compactness_profile(A, I, J, cutoff).values[0],
                       compactness_profile(A, J, I, cutoff).values[0])
                   for I, J in self.arc_pairs)


    def __measure(self, path:HomotopyPath, t:float) -> dict:
        a = path.sample_matrix(t)
        d = a.shape[0]
        target = 2 * a - np.eye(d) if path.projection else a
        s = scipy.linalg.svdvals(target, check_finite=False)
        values = {
            'unitarity_defect': float(max(abs(s[0] ** 2 - 1), abs(s[-1] ** 2 - 1))),
            'min_singular_value': float(s[-1]),
            'locality_defect': self.__locality(Operator(path.window, a)),
            'idempotency_defect': 0.0,
            'index': None,
            'nontriviality': None,
        }
        if path.projection:
            values['idempotency_defect'] = max(spectral_norm(a @ a - a), spectral_norm(a - a.conj().T))
            P = Projection(path.window, a, f'P({t:.4g})', tol_idem=max(self.tolerances.tol_idem, 1e-6))
            if self.base is not None:
                values['index'] = projection_index(P, self.base, self.tolerances).value
            if self.base is not None and self.probe is not None:
                fns, probes = self.probe
                report = nontriviality_probe(P, self.base, fns, probes, self.tolerances)
                values['nontriviality'] = min((m for side in report.minima.values()
                                               for m in side.values() if m is not None), default=None)
        LOGGER.debug(f'sample t={t:.4f}: {values}')
        return values


    def certify(self, path:HomotopyPath, start=None, end=None) -> CertificateReport:
        '''
        Returns the CertificateReport of the path sampled on the uniform grid.
        Endpoint errors are measured against start and end when given, else against the declared endpoints.
        '''
        ts = [j / (self.samples - 1) for j in range(self.samples)]
        measured = [self.__measure(path, t) for t in ts]
        column = lambda key: tuple(m[key] for m in measured)

        segments = []
        for i, segment in enumerate(path.segments):
            rows = [m for m, t in zip(measured, ts) if path.locate(t)[0] == i]
            segments.append(SegmentReport(
                i, segment.KIND, len(rows),
                max((m['unitarity_defect'] for m in rows), default=None),
                min((m['min_singular_value'] for m in rows), default=None),
                max((m['locality_defect'] for m in rows), default=None)))

        start = path.start if start is None else _matrix(start)
        end = path.end if end is None else _matrix(end)
        endpoint_errors = (spectral_norm(path.sample_matrix(0.0) - start), spectral_norm(path.sample_matrix(1.0) - end))
        index_trace = column('index') if path.projection and self.base is not None else ()
        minima = column('nontriviality') if path.projection and self.probe is not None and self.base is not None else ()
        report = CertificateReport(
            self.samples,
            max(column('unitarity_defect')),
            min(column('min_singular_value')),
            max(column('locality_defect')),
            max(column('idempotency_defect')),
            index_trace,
            endpoint_errors,
            tuple(ts),
            column('unitarity_defect'),
            column('min_singular_value'),
            column('locality_defect'),
            column('idempotency_defect'),
            tuple(segments),
            minima,
        )
        LOGGER.info(f'certified {path.name}: unitarity {report.max_unitarity_defect:.3e}, '
                    f'min sigma {report.min_singular_value:.3e}, locality {report.max_locality_defect:.3e}')
        return report


def certify_path(path:HomotopyPath, tolerances:Tolerances|None=None, samples:int=100,
                 arc_pairs:Sequence[tuple[Arc, Arc]]=(), base:Operator|None=None) -> CertificateReport:
    tolerances = tolerances or Tolerances()
    certifier = PathCertifier(samples, arc_pairs, tolerances.locality_allowance, base, tolerances)
    return certifier.certify(path)


# pipelines

def run_stage(stage:str, fn:Callable, *args):
    LOGGER.info(f'stage {stage}')
    try:
        return fn(*args)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        raise StageError(stage, e) from e


class Theorem1Pipeline():
    '''
    Class to connect an L-local unitary to the identity.
    The invertible path U -> G -> VG -> M -> F1 -> W -> 1 is certified on its own and then
    replaced by its sample-wise polar part, which is unitary throughout.

    params:
        epsilon: deformation budget of the localized centers, in (0, 1).
        n_centers: number of centers placed along the enumerated directions.
        n_copies: extra copies n of the amplified window of the block unitary homotopy.
        samples: certification samples.
        arc_pairs: disjoint arc pairs for locality defects and cross-cone mixing.
        tolerances: shared numerical thresholds.
    '''
    def __init__(self, epsilon:float=0.25, n_centers:int=2, n_copies:int=1, samples:int=100,
                 arc_pairs:Sequence[tuple[Arc, Arc]]=(), tolerances:Tolerances|None=None) -> None:
        # constants
        self.STAGES = ['check', 'localize', 'correct', 'normalize', 'peel', 'polar', 'block_unitary',
                       'assemble', 'certify']

        self.tolerances = tolerances or Tolerances()
        self.arc_pairs = tuple(arc_pairs)
        self.set_epsilon(epsilon)
        self.set_n_centers(n_centers)
        self.set_n_copies(n_copies)
        self.set_samples(samples)
        self.plan = None
        self.invertible = None


    def __repr__(self) -> str:
        return f'Connecting unitaries to 1 with epsilon {self.epsilon} and {self.n_centers} centers.'


    def set_epsilon(self, epsilon:float) -> None:
        if isinstance(epsilon, (int, float)) and 0 < epsilon < 1:
            self.epsilon = epsilon
        else:
            self.epsilon = 0.25
            LOGGER.warning('Invalid epsilon entered.')
            LOGGER.warning(f'Epsilon set to default: {self.epsilon}')


    def set_n_centers(self, n_centers:int) -> None:
        if isinstance(n_centers, int) and n_centers >= 1:
            self.n_centers = n_centers
        else:
            self.n_centers = 2
            LOGGER.warning('Invalid number of centers entered.')
            LOGGER.warning(f'Number of centers set to default: {self.n_centers}')


    def set_n_copies(self, n_copies:int) -> None:
        if isinstance(n_copies, int) and n_copies >= 0:
            self.n_copies = n_copies
        else:
            self.n_copies = 1
            LOGGER.warning('Invalid number of copies entered.')
            LOGGER.warning(f'Number of copies set to default: {self.n_copies}')


    def set_samples(self, samples:int) -> None:
        if isinstance(samples, int) and samples >= 2:
            self.samples = samples
        else:
            self.samples = 100
            LOGGER.warning('Invalid sample count entered.')
            LOGGER.warning(f'Samples set to default: {self.samples}')


    def __check(self, U:Operator) -> None:
        if U.window.representation != 'Z2':
            raise OperatorError('the pipeline runs on Z2 windows')
        defect = unitarity_defect(U.entries)
        if defect > self.tolerances.tol_inv:
            raise NotUnitaryError(f'input is not unitary: ||U*U - 1||={defect:.3e}')


    def __correct(self, G:Operator, plan:CentersPlan) -> tuple[Operator, HomotopyPath]:
        '''G -> VG through the blockwise logarithm of the corrective unitary.'''
        V = corrective_unitary(G, plan)
        blocks = [G.window.indices(Y).tolist() for Y in plan.ranges]
        path = log_path(V, blocks).reversed().right_multiplied(G)
        return V @ G, path


    def __normalize(self, VG:Operator, G:Operator, plan:CentersPlan) -> tuple[Operator, HomotopyPath]:
        '''VG -> M = VG Delta with Delta = 1/||G delta_x|| on the centers, so that M P = P.'''
        delta = np.ones(VG.dimension)
        for x in plan.centers:
            delta[G.window.index[x]] = 1 / np.linalg.norm(G.column(x))
        M = Operator(VG.window, VG.entries * delta[None, :], 'M', ('normalize',))
        return M, straight_line(VG, M)


    def __block_unitary(self, W:Operator, P:Projection, plan:CentersPlan) -> HomotopyPath:
        '''W -> 1 through Z_t with V = (P' (+) 0) + T, T the greedy isometry on the centers.'''
        window = W.window
        matching = greedy_isometry(Explicit(frozenset(plan.centers)), self.n_copies, window, check_premise=False)
        v = matching.operator.entries.copy()
        d = window.dimension
        v[:d, :d] += np.eye(d) - P.entries
        V_iso = Operator(matching.window, v, 'V_iso', ('greedy_isometry',))
        # W (+) 1_n is the identity outside the first copy
        inner = log_path(amplify(W, self.n_copies), [list(range(d))]).reversed()
        return block_unitary_homotopy(W, P, V_iso, inner).reversed()


    def run(self, U:Operator) -> tuple[HomotopyPath, CertificateReport]:
        '''
        Returns the unitary path from U to 1 and its certificate (with the invertible path's
        certificate under pre_polar).
        '''
        run_stage('check', self.__check, U)
        window = U.window
        thetas = list(islice(enumerate_directions(), self.n_centers))
        G, plan = run_stage('localize', localized_centers, U, thetas, self.epsilon, self.arc_pairs)
        self.plan = plan
        line = straight_line(U, G)
        VG, corrected = run_stage('correct', self.__correct, G, plan)
        M, normal = run_stage('normalize', self.__normalize, VG, G, plan)
        P = diagonal_projection(plan.centers, window, 'Lambda_centers')
        (F1, _), peel = run_stage('peel', block_peel, M, P)
        polar = run_stage('polar', polar_path, F1, self.tolerances.tol_inv)
        W = Operator(window, polar.end, 'W', ('polar_part',))
        closing = run_stage('block_unitary', self.__block_unitary, W, P, plan)

        identity = np.eye(window.dimension)
        self.invertible = run_stage('assemble', HomotopyPath.concatenate,
                                     [line, corrected, normal, peel.reversed(), polar, closing],
                                     'theorem1', U, identity)
        path = run_stage('assemble', self.invertible.unitarized)

        certifier = PathCertifier(self.samples, self.arc_pairs, self.tolerances.locality_allowance,
                                  tolerances=self.tolerances)
        pre = run_stage('certify', certifier.certify, self.invertible)
        report = run_stage('certify', certifier.certify, path, U, identity)
        return path, replace(report, pre_polar=pre)


def theorem1_pipeline(U:Operator, epsilon:float=0.25, n_centers:int=2, n_copies:int=1, samples:int=100,
                      arc_pairs:Sequence[tuple[Arc, Arc]]=(),
                      tolerances:Tolerances|None=None) -> tuple[HomotopyPath, CertificateReport]:
    return Theorem1Pipeline(epsilon, n_centers, n_copies, samples, arc_pairs, tolerances).run(U)


def theorem2_pipeline(P:Projection, Q:Projection, base:Operator, tolerances:Tolerances|None=None,
                      samples:int=20, fns:Sequence[CircleFunction]|None=None,
                      probes:Sequence|None=None) -> tuple[HomotopyPath, CertificateReport]:
    '''
    Connect two projections of equal index by t -> U_t* Q U_t with U_t the logarithm path of the
    unitary equivalence, certifying the index and the non-triviality probe at every sample.
    '''
    tolerances = tolerances or Tolerances()
    fns = list(fns) if fns else [CircleFunction.monomial(1)]
    probes = list(probes) if probes else list(default_probes(P.window))

    def check_indices():
        n_p = projection_index(P, base, tolerances).value
        n_q = projection_index(Q, base, tolerances).value
        if n_p != n_q:
            raise FredholmError(f'projections carry different indices {n_p} and {n_q}')
        return n_p

    index = run_stage('index', check_indices)
    for R in (P, Q):
        report = run_stage('probe', nontriviality_probe, R, base, fns, probes, tolerances)
        if report.flagged():
            LOGGER.warning(f'{R.name or "projection"} looks trivial: {report.flags}')
    U = run_stage('equivalence', unitary_equivalence, P, Q, tolerances.tol_inv)
    path = run_stage('conjugation', lambda: conjugation_path(Q, log_path(U).reversed()))
    certifier = PathCertifier(samples, (), tolerances.locality_allowance, base, tolerances, (fns, probes))
    report = run_stage('certify', certifier.certify, path, Q, P)
    if any(value != index for value in report.index_trace):
        raise StageError('certify', FredholmError(f'index trace {list(report.index_trace)} leaves {index}'))
    return path, report


# persistence

def save_path(path:HomotopyPath, directory) -> Path:
    '''Path manifest plus one opmat file per distinct operator.'''
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}

    def store(window, matrix:np.ndarray) -> str:
        data = encode_operator(Operator(window, matrix))
        name = f'op-{hashlib.sha256(data).hexdigest()[:16]}.opmat'
        if name not in written:
            (directory / name).write_bytes(data)
            written[name] = True
        return name

    doc = {'format': PATH_FORMAT, 'version': PATH_VERSION, **path.to_manifest(store)}
    manifest = directory / MANIFEST
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True))
    LOGGER.info(f'saved path {path.name} with {len(written)} operators to {directory}')
    return manifest


def load_path(directory) -> HomotopyPath:
    directory = Path(directory)
    try:
        doc = json.loads((directory / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise HomotopyError(f'cannot read path manifest in {directory}: {e}') from e
    if doc.get('format') != PATH_FORMAT or doc.get('version') != PATH_VERSION:
        raise HomotopyError(f'{directory / MANIFEST} is not an {PATH_FORMAT} v{PATH_VERSION} manifest')
    cache = {}

    def load(name:str) -> Operator:
        if name not in cache:
            cache[name] = import_operator(directory / name)
        return cache[name]

    return HomotopyPath.from_manifest(doc, load)
