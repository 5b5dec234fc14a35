import logging
from dataclasses import dataclass, replace
from itertools import islice
from typing import Sequence

import numpy as np

from oplab.lattice_geometry import (ORIGIN, Arc, Ball, Cone, Direction, Region, arc_contains,
                                    direction_of, enumerate_directions, site_text, widen_arc)
from oplab.locality import CentersPlan, annulus_confine, cone_split
from oplab.operator_core import (AmplifiedWindow, Operator, OperatorError, Projection,
                                 TruncationWindow, diagonal_projection, projection_from_region,
                                 spectral_norm)

LOGGER = logging.getLogger(__name__)

# constants
MIXING_ANNULI = 2

__all__ = ['CentersPlan', 'GreedyMatching', 'PreconditionError', 'PremiseError', 'ProjectionPair',
           'SurgeryError', 'check_mixing', 'corrective_unitary', 'cross_cone_mixing', 'deletion_series',
           'greedy_isometry', 'localized_centers', 'random_admissible_pairs', 'series_bound', 'series_slack']


class SurgeryError(OperatorError):
    pass


class PreconditionError(SurgeryError):
    def __init__(self, k:int, norm:float, budget:float) -> None:
        super().__init__(f'pair {k} violates ||P_k A Q_k|| <= eps/2^(2k-1): {norm:.3e} > {budget:.3e}')
        self.k = k
        self.norm = norm


class PremiseError(SurgeryError):
    def __init__(self, uncovered:Sequence[Direction]) -> None:
        shown = ', '.join(str(d) for d in uncovered[:10])
        more = f' and {len(uncovered) - 10} more' if len(uncovered) > 10 else ''
        super().__init__(f'region misses the directions {shown}{more}')
        self.uncovered = tuple(uncovered)


@dataclass(frozen=True)
class ProjectionPair:
    P: Projection
    Q: Projection
    bound: float = 0.0

    @classmethod
    def measure(cls, A:Operator, P:Projection, Q:Projection) -> 'ProjectionPair':
        return cls(P, Q, _pair_norm(P, Q, A.entries))


def _diagonal_support(P:Projection) -> np.ndarray|None:
    mask = P.diagonal_mask()
    if mask is None and P.is_diagonal():
        mask = np.real(np.diag(P.entries)) > 0.5
    return mask


def _pair_norm(P:Projection, Q:Projection, matrix:np.ndarray) -> float:
    '''||P M Q||, read off the masked block when both projections are diagonal.'''
    p_mask, q_mask = _diagonal_support(P), _diagonal_support(Q)
    if p_mask is not None and q_mask is not None:
        return spectral_norm(matrix[np.ix_(p_mask, q_mask)])
    return spectral_norm(P.entries @ matrix @ Q.entries)


def series_bound(pairs:Sequence[ProjectionPair]) -> float:
    '''sum_k 2^(k-1) ||P_k A Q_k||'''
    return float(sum(2 ** k * p.bound for k, p in enumerate(pairs)))


def series_slack(A:Operator, B:Operator, pairs:Sequence[ProjectionPair]) -> float:
    '''series_bound with the pairs measured on A, minus ||A - B||.'''
    measured = [ProjectionPair.measure(A, pair.P, pair.Q) for pair in pairs]
    return series_bound(measured) - spectral_norm(A.entries - B.entries)


def deletion_series(A:Operator, pairs:Sequence[ProjectionPair], epsilon:float) -> Operator:
    '''
    B = A - S_n with S_{k+1} = S_k + P_{k+1} A Q_{k+1} - P_{k+1} S_k Q_{k+1}, so that
    P_k B Q_k = 0 for every listed pair and ||A - B|| <= epsilon.
    Diagonal pairs are handled through their masks and leave exact zeros.
    '''
    a = A.entries
    for k, pair in enumerate(pairs, start=1):
        norm = _pair_norm(pair.P, pair.Q, a)
        budget = epsilon / 2 ** (2 * k - 1)
        if norm > budget + 1e-12:
            raise PreconditionError(k, norm, budget)

    s = np.zeros_like(a)
    for pair in pairs:
        p_mask, q_mask = _diagonal_support(pair.P), _diagonal_support(pair.Q)
        if p_mask is not None and q_mask is not None:
            block = np.ix_(p_mask, q_mask)
            s[block] = a[block]
        else:
            p, q = pair.P.entries, pair.Q.entries
            s = s + p @ a @ q - p @ s @ q
    b = a - s

    residual = max([_pair_norm(pair.P, pair.Q, b) for pair in pairs], default=0.0)
    rows, cols = np.any(s != 0, axis=1), np.any(s != 0, axis=0)
    distance = spectral_norm(s[np.ix_(rows, cols)])
    if residual > 1e-12:
        raise SurgeryError(f'deletion left a residual block of norm {residual:.3e}')
    if distance > epsilon + 1e-12:
        raise SurgeryError(f'deletion moved the operator by {distance:.3e} > {epsilon:.3e}')
    B = Operator(A.window, b, f'{A.name}-S{len(pairs)}', A.lineage + ('deletion_series',))
    LOGGER.info(f'deletion series over {len(pairs)} pairs: ||S_n||={distance:.3e}, '
                f'slack={series_slack(A, B, pairs):.3e}')
    return B


def random_admissible_pairs(window, n_pairs:int, epsilon:float, rng:np.random.Generator,
                            density:float=0.3) -> tuple[Operator, list[ProjectionPair]]:
    '''
    Random diagonal pairs together with a random operator that meets the deletion budgets.
    Entries inside the k-th rectangle are scaled so its Frobenius norm stays below half the budget.
    '''
    d = window.dimension
    masks = []
    for _ in range(n_pairs):
        p = rng.random(d) < density
        q = rng.random(d) < density
        p[rng.integers(d)] = True
        q[rng.integers(d)] = True
        masks.append((p, q))
    a = rng.random((d, d)) * np.exp(2j * np.pi * rng.random((d, d)))
    scale = np.ones((d, d))
    for k, (p, q) in enumerate(masks, start=1):
        budget = epsilon / 2 ** (2 * k - 1)
        limit = budget / (2 * np.sqrt(p.sum() * q.sum()))
        block = np.ix_(p, q)
        scale[block] = np.minimum(scale[block], limit)
    A = Operator(window, a * scale, 'random', ('random_admissible_pairs',))
    pairs = []
    for k, (p, q) in enumerate(masks, start=1):
        P = diagonal_projection([x for x, keep in zip(window.sites, p) if keep], window, f'P{k}')
        Q = diagonal_projection([x for x, keep in zip(window.sites, q) if keep], window, f'Q{k}')
        pairs.append(ProjectionPair.measure(A, P, Q))
    return A, pairs


def _arc_sequence(count:int) -> list[Arc]:
    '''J_k = arc from the (2k-1)-th to the 2k-th enumerated direction.'''
    dirs = list(islice(enumerate_directions(), 2 * count))
    return [Arc(dirs[2 * k], dirs[2 * k + 1]) for k in range(count)]


def cross_cone_mixing(plan:CentersPlan, I:Arc, J:Arc) -> tuple:
    '''Indices k whose interaction range meets both Cone(I) and Cone(J).'''
    ci, cj = Cone(I), Cone(J)
    return tuple(k for k, Y in enumerate(plan.ranges)
                 if any(ci.contains(y) for y in Y) and any(cj.contains(y) for y in Y))


def localized_centers(A:Operator, thetas:Sequence[Direction], epsilon:float,
                      arc_pairs:Sequence[tuple[Arc, Arc]]=()) -> tuple[Operator, CentersPlan]:
    '''
    Deform A by at most epsilon so that every center x_k only interacts inside its annulus.
    Pairs alternate between cone pairs (bad part of the cone split of J_k against Cone(J_k))
    and annulus pairs (outside the k-th annulus against delta_{x_k}), pair j with budget eps/2^(2j-1).
    '''
    if A.window.representation != 'Z2':
        raise SurgeryError('localized centers need a Z2 window')
    m = len(thetas)
    budgets = [epsilon / 2 ** (2 * j - 1) for j in range(1, 2 * m + 1)]
    arcs = _arc_sequence(m)
    plan = annulus_confine(A, thetas, budgets[1::2])
    window = A.window

    pairs = []
    for k in range(m):
        split = cone_split(A, arcs[k], budgets[2 * k])
        P = diagonal_projection(split.bad, window, f'Eb{k + 1}')
        Q = projection_from_region(Cone(arcs[k]), window)
        pairs.append(ProjectionPair.measure(A, P, Q))
        outside: Region = ~Ball(plan.radii[k])
        if k > 0:
            outside = outside | Ball(plan.radii[k - 1])
        pairs.append(ProjectionPair.measure(A, projection_from_region(outside, window),
                                            diagonal_projection([plan.centers[k]], window, f'x{k + 1}')))
    B = deletion_series(A, pairs, epsilon)

    ranges = []
    for k, x in enumerate(plan.centers):
        column = B.column(x)
        support = set(window.sites[i] for i in np.flatnonzero(np.abs(column) > 0)) | {x}
        ranges.append(tuple(y for y in window.sites if y in support))
    for k, Y in enumerate(ranges):
        r_in, r_out = plan.inner_radius(k), plan.radii[k]
        if any(not (r_in * r_in <= sum(c * c for c in y) < r_out * r_out) for y in Y):
            raise SurgeryError(f'interaction range {k} leaves its annulus [{r_in}, {r_out})')
    seen = set()
    for k, Y in enumerate(ranges):
        if seen & set(Y):
            raise SurgeryError(f'interaction range {k} overlaps an earlier one')
        seen |= set(Y)

    plan = replace(plan, ranges=tuple(ranges),
                   source=plan.source + ('localized_centers', 'arcs=' + ';'.join(str(J) for J in arcs)))
    check_mixing(plan, arc_pairs)
    return B, plan


def check_mixing(plan:CentersPlan, arc_pairs:Sequence[tuple[Arc, Arc]], inner:int=MIXING_ANNULI) -> dict:
    '''Cross-cone mixing per arc pair; only the innermost `inner` ranges may meet both cones.'''
    mixing = {}
    for I, J in arc_pairs:
        ks = cross_cone_mixing(plan, I, J)
        LOGGER.info(f'cross-cone mixing {I} / {J}: {list(ks) or "none"}')
        outer = [k for k in ks if k >= inner]
        if outer:
            raise SurgeryError(f'interaction ranges {outer} mix Cone({I}) and Cone({J}) '
                               f'outside the innermost {inner} annuli')
        mixing[(I, J)] = ks
    return mixing


def _block_basis(u:np.ndarray, dropped:int) -> np.ndarray:
    '''Orthonormal basis starting with u, completed by Gram-Schmidt over e_c, c != dropped.'''
    n = u.size
    basis = [u]
    for c in range(n):
        if c == dropped:
            continue
        w = np.zeros(n, dtype=np.complex128)
        w[c] = 1
        q = np.array(basis).T
        for _ in range(2):
            w = w - q @ (q.conj().T @ w)
        basis.append(w / np.linalg.norm(w))
    return np.array(basis).T


def corrective_unitary(B:Operator, plan:CentersPlan) -> Operator:
    '''
    Unitary V acting blockwise on the interaction ranges with V B delta_x parallel to delta_x
    for every center x, and V the identity outside the union of the ranges.
    '''
    window = B.window
    v = np.eye(window.dimension, dtype=np.complex128)
    for k, (x, Y) in enumerate(zip(plan.centers, plan.ranges)):
        column = B.column(x)
        idx = window.indices(Y)
        norm = np.linalg.norm(column)
        if norm == 0:
            raise SurgeryError(f'B delta_x vanishes at center {k} {site_text(x)}')
        leak = np.linalg.norm(np.delete(column, idx))
        if leak > 1e-12:
            raise SurgeryError(f'B delta_x leaks {leak:.3e} outside the range of center {k}')
        u = column[idx] / np.linalg.norm(column[idx])
        xpos = list(Y).index(x)
        order = [xpos] + [c for c in range(len(Y)) if c != xpos]
        dropped = max(order, key=lambda c: abs(u[c]))
        source = _block_basis(u, dropped)
        targets = [xpos] + [dropped if c == xpos else c for c in range(len(Y)) if c != dropped]
        target = np.eye(len(Y), dtype=np.complex128)[:, targets]
        v[np.ix_(idx, idx)] = target @ source.conj().T
    return Operator(window, v, 'V', ('corrective_unitary',))


@dataclass(frozen=True)
class GreedyMatching:
    '''
    Partial isometry delta_y -> delta_{(x, 0)} on the amplified window together with
    the matching (y, x), the target arcs I_k and the window-edge leftovers.
    '''
    operator: Operator
    matches: tuple
    unmatched: tuple
    intervals: tuple

    @property
    def window(self) -> AmplifiedWindow:
        return self.operator.window

    def to_json(self) -> dict:
        return {
            'matches': [[site_text(y), l, site_text(x)] for (y, l), x in self.matches],
            'unmatched': [[site_text(y), l] for y, l in self.unmatched],
            'intervals': [str(I) for I in self.intervals],
        }


def _uncovered(S:Region, window:TruncationWindow) -> list[Direction]:
    covered = set(direction_of(x) for x in window.sites if x != ORIGIN and S.contains(x))
    wanted = []
    for x in window.sites:
        if x == ORIGIN:
            continue
        d = direction_of(x)
        if d not in covered and d not in wanted:
            wanted.append(d)
    return wanted


def greedy_isometry(S:Region, n:int, window:TruncationWindow, check_premise:bool=True) -> GreedyMatching:
    '''
    Enumerate y_1, y_2, ... over (S in stack 0) and all sites of stacks 1..n, site by site, and send
    y_k to the closest unused x in S whose direction lies in I_k, the 1/2^k-widening of arg(y_k).
    '''
    if window.representation != 'Z2':
        raise SurgeryError('greedy isometry needs a Z2 window')
    if n < 0:
        raise SurgeryError('the number of extra copies must be non-negative')
    if check_premise:
        uncovered = _uncovered(S, window)
        if uncovered:
            raise PremiseError(uncovered)
    amplified = AmplifiedWindow(window, n + 1)
    available = [x for x in window.sites if S.contains(x)]
    in_s = set(available)
    used = set()

    matches, unmatched, intervals = [], [], []
    k = 0
    for z in window.sites:
        for l in range(n + 1):
            if l == 0 and z not in in_s:
                continue
            k += 1
            I = Arc.full_circle() if z == ORIGIN else widen_arc(Arc(direction_of(z), direction_of(z)), k)
            intervals.append(I)
            pick = None
            for x in available:
                if x in used:
                    continue
                if x == ORIGIN:
                    if I.full:
                        pick = x
                        break
                    continue
                if arc_contains(I, direction_of(x)):
                    pick = x
                    break
            if pick is None:
                unmatched.append((z, l))
                continue
            used.add(pick)
            matches.append(((z, l), pick))

    v = np.zeros((amplified.dimension, amplified.dimension), dtype=np.complex128)
    for y, x in matches:
        v[amplified.index[(x, 0)], amplified.index[y]] = 1
    if unmatched:
        LOGGER.info(f'greedy isometry: {len(matches)} matched, {len(unmatched)} left at the window edge')
    operator = Operator(amplified, v, 'T', ('greedy_isometry', f'n={n}'))
    return GreedyMatching(operator, tuple(matches), tuple(unmatched), tuple(intervals))
