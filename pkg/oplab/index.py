import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg

from oplab.config import Tolerances
from oplab.lattice_geometry import Interval, Site, site_text
from oplab.operator_core import (CircleFunction, Operator, OperatorError, Projection, TruncationWindow,
                                 apply_circle_function, projection_from_region, shift_operator)

LOGGER = logging.getLogger(__name__)


class FredholmError(ArithmeticError):
    pass


class ContaminatedSpectrumError(FredholmError):
    pass


class IndexDisagreementError(FredholmError):
    pass


@dataclass(frozen=True)
class IndexResult:
    value: int
    method: str
    diagnostics: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {'value': self.value, 'method': self.method, 'diagnostics': self.diagnostics}


@dataclass(frozen=True)
class NontrivialityReport:
    '''
    Far-probe column norms ||P f P delta_x|| and ||P' f P' delta_x|| (P' = 1 - P) with their minima
    per side and function, and the flags raised for each function.
    '''
    records: tuple
    minima: dict
    flags: dict
    compact_floor: float

    def flagged(self) -> bool:
        return any(self.flags.values())

    def to_json(self) -> dict:
        return {
            'records': [dict(r) for r in self.records],
            'minima': self.minima,
            'flags': self.flags,
            'compact_floor': self.compact_floor,
        }


def interior_mask(window, buffer:float=0.25) -> np.ndarray:
    '''Sites at distance >= buffer * radius from the window edge.'''
    return window.boundary_distances() >= buffer * float(window.radius)


def cut_locus(P:Projection) -> tuple:
    '''Sites whose diagonal membership in P differs from that of a lattice neighbour.'''
    window = P.window
    member = np.real(np.diag(P.entries)) > 0.5
    cut = []
    for i, x in enumerate(window.sites):
        neighbours = [tuple(c + step if a == axis else c for a, c in enumerate(x))
                      for axis in range(len(x)) for step in (-1, 1)]
        if any(y in window.index and member[window.index[y]] != member[i] for y in neighbours):
            cut.append(x)
    return tuple(cut)


def cut_neighbourhood(window, cut:Sequence[Site], radius:float) -> np.ndarray:
    coords = window.coordinates()
    centers = np.array(cut, dtype=float).reshape(len(cut), -1)
    distances = np.sqrt(((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
    return distances.min(axis=1) <= radius


class IndexEstimator():
    '''
    Class to estimate the Fredholm index of a truncated operator.
    Kernel vectors living at the window edge are windowing artifacts and are discarded:
    only mass near the structural cut (or in the window interior when no cut is given) counts.

    params:
        method: auto, kernel_count, trace_formula or partial_permutation.
        sv_threshold: singular values below count as kernel.
        trace_power: power m of the trace formula.
        cut_radius: radius of the cut neighbourhood.
        buffer: interior mask buffer as a fraction of the radius.
    '''
    def __init__(self, method:str='auto', sv_threshold:float=1e-6, trace_power:int=4,
                 cut_radius:float=6, buffer:float=0.25) -> None:
        # constants
        self.METHODS = ['auto', 'kernel_count', 'trace_formula', 'partial_permutation']
        self.CUT_MASS = 0.9
        self.EDGE_MASS = 0.1
        self.GAP = 1e3
        self.MAX_RESIDUAL = 0.25

        self.set_method(method)
        self.set_sv_threshold(sv_threshold)
        self.set_trace_power(trace_power)
        self.set_cut_radius(cut_radius)
        self.set_buffer(buffer)


    @classmethod
    def from_tolerances(cls, method:str, tolerances:Tolerances) -> 'IndexEstimator':
        return cls(method, tolerances.sv_threshold, tolerances.trace_power, tolerances.cut_radius,
                   tolerances.buffer)


    def __repr__(self) -> str:
        return f'Estimating indices with {self.method} (threshold {self.sv_threshold}, power {self.trace_power}).'


    def set_method(self, method:str) -> None:
        if method in self.METHODS:
            self.method = method
        else:
            self.method = 'auto'
            LOGGER.warning('Invalid method entered.')
            LOGGER.warning(f'Method set to default: {self.method}')


    def set_sv_threshold(self, sv_threshold:float) -> None:
        if isinstance(sv_threshold, (int, float)) and 0 < sv_threshold < 1:
            self.sv_threshold = sv_threshold
        else:
            self.sv_threshold = 1e-6
            LOGGER.warning('Invalid singular value threshold entered.')
            LOGGER.warning(f'Threshold set to default: {self.sv_threshold}')


    def set_trace_power(self, trace_power:int) -> None:
        if isinstance(trace_power, int) and trace_power >= 1:
            self.trace_power = trace_power
        else:
            self.trace_power = 4
            LOGGER.warning('Invalid trace power entered.')
            LOGGER.warning(f'Trace power set to default: {self.trace_power}')


    def set_cut_radius(self, cut_radius:float) -> None:
        if isinstance(cut_radius, (int, float)) and cut_radius > 0:
            self.cut_radius = cut_radius
        else:
            self.cut_radius = 6
            LOGGER.warning('Invalid cut radius entered.')
            LOGGER.warning(f'Cut radius set to default: {self.cut_radius}')


    def set_buffer(self, buffer:float) -> None:
        if isinstance(buffer, (int, float)) and 0 <= buffer < 1:
            self.buffer = buffer
        else:
            self.buffer = 0.25
            LOGGER.warning('Invalid buffer entered.')
            LOGGER.warning(f'Buffer set to default: {self.buffer}')


    def __mask(self, T:Operator, cut:Sequence[Site]|None) -> tuple[np.ndarray, str]:
        '''Cut neighbourhood when a cut is known, else the window interior.'''
        if cut:
            return cut_neighbourhood(T.window, cut, self.cut_radius), 'cut'
        return interior_mask(T.window, self.buffer), 'interior'


    def __classify(self, vectors:np.ndarray, mask:np.ndarray) -> tuple[int, int, list]:
        '''
        Split a near-kernel subspace into cut and edge directions.
        The eigenvalues of K*[mask] K[mask] are the masses of an orthonormal basis adapted to the mask.
        '''
        if vectors.shape[1] == 0:
            return 0, 0, []
        inside = vectors[mask]
        masses = np.clip(scipy.linalg.eigvalsh(inside.conj().T @ inside), 0, 1)
        unclear = masses[(masses > self.EDGE_MASS) & (masses < self.CUT_MASS)]
        if unclear.size:
            raise ContaminatedSpectrumError(f'kernel vectors split between cut and edge (masses {unclear.round(3).tolist()}); '
                                            'enlarge the window')
        return int((masses >= self.CUT_MASS).sum()), int((masses <= self.EDGE_MASS).sum()), masses.tolist()


    def __kernel_count(self, T:Operator, cut:Sequence[Site]|None) -> IndexResult:
        '''
        1. singular value decomposition, refusing spectra without a clean gap above sv_threshold
        2. near-kernel subspaces of T (right vectors) and T* (left vectors)
        3. count the cut-localized directions of each
        '''
        mask, kind = self.__mask(T, cut)
        w, s, vh = scipy.linalg.svd(T.entries, check_finite=False)
        gray = s[(s >= self.sv_threshold) & (s <= self.GAP * self.sv_threshold)]
        if gray.size:
            raise ContaminatedSpectrumError(f'no clean singular value gap: {gray.tolist()} between '
                                            f'{self.sv_threshold:g} and {self.GAP * self.sv_threshold:g}; enlarge the window')
        small = s < self.sv_threshold
        ker, ker_edge, ker_masses = self.__classify(vh[small].conj().T, mask)
        coker, coker_edge, coker_masses = self.__classify(w[:, small], mask)
        if ker_edge or coker_edge:
            LOGGER.info(f'discarded {ker_edge} kernel and {coker_edge} cokernel vectors at the window edge')
        diagnostics = {
            'near_zero_singular_values': s[small].tolist(),
            'smallest_kept_singular_value': float(s[~small].min()) if (~small).any() else None,
            'kernel_masses': ker_masses,
            'cokernel_masses': coker_masses,
            'discarded_edge_vectors': ker_edge + coker_edge,
            'mask': kind,
        }
        return IndexResult(ker - coker, 'kernel_count', diagnostics)


    def __trace_formula(self, T:Operator, cut:Sequence[Site]|None) -> IndexResult:
        mask, kind = self.__mask(T, cut)
        a = T.entries
        eye = np.eye(T.dimension)
        left = np.linalg.matrix_power(eye - a.conj().T @ a, self.trace_power)
        right = np.linalg.matrix_power(eye - a @ a.conj().T, self.trace_power)
        raw = float(np.real(np.diag(left)[mask].sum() - np.diag(right)[mask].sum()))
        value = int(round(raw))
        residual = abs(raw - value)
        if residual > self.MAX_RESIDUAL:
            raise ContaminatedSpectrumError(f'trace formula gave {raw:.4f}, {residual:.3f} away from an integer; '
                                            'enlarge the window or the cut radius')
        return IndexResult(value, 'trace_formula', {'trace': raw, 'residual': residual, 'power': self.trace_power,
                                                    'mask': kind})


    def is_partial_permutation(self, T:Operator) -> bool:
        support = np.abs(T.entries) > 1e-12
        return bool((support.sum(axis=0) <= 1).all() and (support.sum(axis=1) <= 1).all())


    def __partial_permutation(self, T:Operator, cut:Sequence[Site]|None) -> IndexResult:
        '''Zero columns span the kernel, zero rows the cokernel.'''
        if not self.is_partial_permutation(T):
            raise FredholmError('operator is not a partial permutation')
        mask, kind = self.__mask(T, cut)
        support = np.abs(T.entries) > 1e-12
        zero_cols = ~support.any(axis=0)
        zero_rows = ~support.any(axis=1)
        value = int((zero_cols & mask).sum() - (zero_rows & mask).sum())
        diagnostics = {
            'kernel_sites': [site_text(x) for x, z, m in zip(T.window.sites, zero_cols, mask) if z and m],
            'cokernel_sites': [site_text(x) for x, z, m in zip(T.window.sites, zero_rows, mask) if z and m],
            'discarded_edge_vectors': int((zero_cols & ~mask).sum() + (zero_rows & ~mask).sum()),
            'mask': kind,
        }
        return IndexResult(value, 'partial_permutation', diagnostics)


    def estimate(self, T:Operator, cut:Sequence[Site]|None=None) -> IndexResult:
        '''
        Returns the index of T with the configured method.
        auto picks partial_permutation when the structure allows, kernel_count otherwise,
        and cross-checks against the trace formula.
        '''
        if self.method == 'kernel_count':
            return self.__kernel_count(T, cut)
        if self.method == 'trace_formula':
            return self.__trace_formula(T, cut)
        if self.method == 'partial_permutation':
            return self.__partial_permutation(T, cut)

        if self.is_partial_permutation(T):
            result = self.__partial_permutation(T, cut)
        else:
            try:
                result = self.__kernel_count(T, cut)
            except ContaminatedSpectrumError as e:
                # paired small singular values cancel in the trace formula
                LOGGER.info(f'kernel count refused ({e}), falling back to the trace formula')
                result = self.__trace_formula(T, cut)
                result.diagnostics['fallback'] = str(e)
                return result
        try:
            check = self.__trace_formula(T, cut)
        except ContaminatedSpectrumError as e:
            LOGGER.info(f'trace formula cross-check skipped: {e}')
            result.diagnostics['cross_check'] = None
            return result
        if check.value != result.value:
            raise IndexDisagreementError(f'{result.method} gives {result.value} but trace_formula gives {check.value}')
        result.diagnostics['cross_check'] = check.to_json()
        return result


def fredholm_index(T:Operator, method:str='auto', tolerances:Tolerances|None=None,
                   cut:Sequence[Site]|None=None) -> IndexResult:
    estimator = IndexEstimator.from_tolerances(method, tolerances or Tolerances())
    return estimator.estimate(T, cut)


def compressed_operator(P:Projection, base:Operator) -> Operator:
    '''P base P + (1 - P)'''
    p = P.entries
    m = p @ base.entries @ p + np.eye(P.dimension) - p
    return Operator(P.window, m, f'P{base.name}P+Pperp', ('compressed_operator',))


def projection_index(P:Projection, base:Operator, tolerances:Tolerances|None=None,
                     method:str='auto') -> IndexResult:
    T = compressed_operator(P, base)
    return fredholm_index(T, method, tolerances, cut_locus(P))


def index_k_projection(k:int, window:TruncationWindow, boundary:str='open') -> tuple[Operator, Projection]:
    '''base = R^{-k} with open boundary and P the half-line x >= 1, so that the index is k.'''
    if window.representation != 'Z':
        raise OperatorError('index-k projections live on Z windows')
    if boundary != 'open':
        raise OperatorError(f'index-k projections need an open boundary, got {boundary!r}')
    if 4 * abs(k) > window.radius:
        raise OperatorError(f'|k| = {abs(k)} needs a window radius of at least {4 * abs(k)}')
    base = shift_operator(window, -k, 'open')
    P = projection_from_region(Interval(1, None), window)
    report = nontriviality_probe(P, base, [CircleFunction.monomial(1)], default_probes(window))
    if report.flagged():
        raise OperatorError(f'index-{k} projection on {window} looks trivial: {report.flags}')
    return base, P


def default_probes(window:TruncationWindow) -> tuple:
    h = window.height // 2
    if window.representation == 'Z':
        return ((h,), (-h,))
    return ((h, 0), (0, h), (-h, 0), (0, -h))


def nontriviality_probe(P:Projection, base:Operator, fns:Sequence[CircleFunction], probes:Sequence[Site],
                        tolerances:Tolerances|None=None) -> NontrivialityReport:
    '''
    Column norms of P f(base) P and P' f(base) P' at far-interior probe sites.
    A probe belongs to the P side when ||P delta_x||^2 >= 1/2.
    '''
    tolerances = tolerances or Tolerances()
    if not fns or not probes:
        raise OperatorError('the non-triviality probe needs functions and probe sites')
    window = P.window
    interior = interior_mask(window, tolerances.buffer)
    for x in probes:
        if x not in window.index or not interior[window.index[x]]:
            raise OperatorError(f'probe {site_text(x)} is not an interior site of {window}')
    p = P.entries
    perp = np.eye(P.dimension) - p

    records, minima, flags = [], {}, {}
    for f in fns:
        fb = apply_circle_function(f, base, require_unitary=False).entries
        side_values = {'P': [], 'P_perp': []}
        for x in probes:
            i = window.index[x]
            p_norm = float(np.linalg.norm(p @ (fb @ p[:, i])))
            perp_norm = float(np.linalg.norm(perp @ (fb @ perp[:, i])))
            side = 'P' if np.linalg.norm(p[:, i]) ** 2 >= 0.5 else 'P_perp'
            side_values[side].append(p_norm if side == 'P' else perp_norm)
            records.append({'function': f.label, 'site': site_text(x), 'side': side,
                            'p_norm': p_norm, 'perp_norm': perp_norm})
        minima[f.label] = {side: (min(v) if v else None) for side, v in side_values.items()}
        flags[f.label] = []
        if f.is_zero():
            flags[f.label].append('degenerate')
        if any(m is not None and m < tolerances.compact_floor for m in minima[f.label].values()):
            flags[f.label].append('trivial-suspect')
    for label, raised in flags.items():
        if raised:
            LOGGER.info(f'non-triviality probe on {P.name}: {label} flagged {raised}')
    return NontrivialityReport(tuple(records), minima, flags, tolerances.compact_floor)


def translation_invariance_check(f:CircleFunction, window:TruncationWindow, buffer:float=0.25) -> float:
    '''Spread of ||f(R) delta_x|| over interior x for the periodic shift R.'''
    R = shift_operator(window, 1, 'periodic')
    columns = np.linalg.norm(apply_circle_function(f, R).entries, axis=0)
    interior = columns[interior_mask(window, buffer)]
    return float(interior.max() - interior.min())


@dataclass(frozen=True)
class IndexSweep:
    '''Computed projection index of the index-k factory for each k.'''
    ks: tuple
    values: tuple
    methods: tuple
    radius: Fraction

    def to_rows(self) -> list[tuple]:
        return [('k', 'index', 'method')] + list(zip(self.ks, self.values, self.methods))

    def exact(self) -> bool:
        return all(k == v for k, v in zip(self.ks, self.values))

    def to_json(self) -> dict:
        return {'radius': str(self.radius), 'ks': list(self.ks), 'values': list(self.values),
                'methods': list(self.methods), 'exact': self.exact()}


def index_sweep(ks:Sequence[int], window:TruncationWindow, tolerances:Tolerances|None=None,
                method:str='auto') -> IndexSweep:
    values, methods = [], []
    for k in ks:
        base, P = index_k_projection(k, window)
        result = projection_index(P, base, tolerances, method)
        values.append(result.value)
        methods.append(result.method)
        LOGGER.info(f'index sweep k={k}: {result.value} ({result.method})')
    return IndexSweep(tuple(ks), tuple(values), tuple(methods), window.radius)
