import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from oplab.lattice_geometry import (Arc, Cone, Direction, Explicit, Region, Site, arcs_disjoint,
                                    canonical_order, complement_cone, norm2, site_text, widen_arc)
from oplab.operator_core import Operator, OperatorError, spectral_norm

LOGGER = logging.getLogger(__name__)


class WindowExhaustedError(OperatorError):
    def __init__(self, message:str, index:int) -> None:
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DecayProfile:
    '''Norm of a masked block at each cutoff radius.'''
    radii: tuple
    values: tuple
    label: str = ''

    def __post_init__(self) -> None:
        if len(self.radii) != len(self.values):
            raise OperatorError('decay profile radii and values differ in length')
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise OperatorError('decay profile radii must be strictly increasing')

    def to_rows(self) -> list[tuple]:
        return [(str(r), float(v)) for r, v in zip(self.radii, self.values)]

    def is_nonincreasing(self, tol:float=1e-12) -> bool:
        return all(b <= a + tol for a, b in zip(self.values, self.values[1:]))

    def value_at(self, radius) -> float:
        for r, v in zip(self.radii, self.values):
            if r >= radius:
                return v
        return 0.0


@dataclass(frozen=True)
class ConeSplit:
    '''
    Partition of the sites outside Cone(arc) into a good part E^g and a bad part E^b
    with ||Lambda_bad A Lambda_arc|| <= epsilon.
    '''
    arc: Arc
    good: tuple
    bad: tuple
    achieved_bound: float
    epsilon: float

    def to_rows(self) -> list[tuple]:
        kind = {x: 'good' for x in self.good}
        kind.update({x: 'bad' for x in self.bad})
        return [(site_text(x), kind[x]) for x in canonical_order(kind)]


@dataclass(frozen=True)
class CentersPlan:
    '''
    Centers x_k with direction thetas[k], confined in the annuli B_{r_k} minus B_{r_{k-1}}.
    ranges (the interaction ranges Y_k) are filled in once the deletion series has run.
    '''
    thetas: tuple
    centers: tuple
    radii: tuple
    t_radii: tuple
    budgets: tuple
    bounds: tuple
    ranges: tuple = ()
    source: tuple = field(default=('annulus_confine',))

    def inner_radius(self, k:int) -> Fraction:
        return self.radii[k - 1] if k > 0 else Fraction(0)

    def to_json(self) -> dict:
        return {
            'thetas': [str(t) for t in self.thetas],
            'centers': [list(x) for x in self.centers],
            'radii': [str(r) for r in self.radii],
            't_radii': [float(t) for t in self.t_radii],
            'ranges': [[list(y) for y in Y] for Y in self.ranges],
            'budgets': [float(e) for e in self.budgets],
            'bounds': [float(b) for b in self.bounds],
            'source': list(self.source),
        }


def _require_planar(A:Operator) -> None:
    if A.window.representation != 'Z2':
        raise OperatorError(f'cone masks need a Z2 window, got {A.window}')


def region_mask(window, region:Region) -> np.ndarray:
    '''Membership of every basis site, amplified windows repeat the base mask.'''
    return np.array([region.contains(x) for x in window.spatial_sites()], dtype=bool)


def _norm2_array(window) -> np.ndarray:
    return np.array([norm2(x) for x in window.spatial_sites()], dtype=np.int64)


def masked_norm(A:Operator, rows:np.ndarray, cols:np.ndarray) -> float:
    return spectral_norm(A.entries[np.ix_(rows, cols)])


def block_norm(A:Operator, I:Arc, J:Arc) -> float:
    '''||Lambda_J A Lambda_I||'''
    _require_planar(A)
    return masked_norm(A, region_mask(A.window, Cone(J)), region_mask(A.window, Cone(I)))


def compactness_profile(A:Operator, I:Arc, J:Arc, cutoffs:Sequence) -> DecayProfile:
    '''
    ||Lambda_{outside B_r} Lambda_J A Lambda_I|| for each cutoff r.
    '''
    _require_planar(A)
    if not arcs_disjoint(I, J):
        raise OperatorError(f'arcs {I} and {J} are not disjoint')
    radii = tuple(Fraction(r) for r in cutoffs)
    rows = region_mask(A.window, Cone(J))
    cols = region_mask(A.window, Cone(I))
    n2 = _norm2_array(A.window)
    values = []
    for r in radii:
        outside = rows & (n2 >= r * r)
        values.append(masked_norm(A, outside, cols))
    return DecayProfile(radii, tuple(values), f'{I}->{J}')


def locality_scan(A:Operator, arc_pairs:Sequence[tuple[Arc, Arc]], cutoffs:Sequence) -> list[DecayProfile]:
    return [compactness_profile(A, I, J, cutoffs) for I, J in arc_pairs]


def finite_support_approx(K:Operator, E:Region, epsilon:float) -> tuple:
    '''
    Shortest prefix F of the non-zero rows of K inside E (canonical order) with
    ||Lambda_{E minus F} K|| <= epsilon.
    '''
    if epsilon <= 0:
        raise OperatorError('epsilon must be positive')
    window = K.window
    in_e = region_mask(window, E)
    a = K.entries
    nonzero_rows = np.flatnonzero(in_e & np.any(a != 0, axis=1))
    if nonzero_rows.size == 0:
        return ()
    cols = np.flatnonzero(np.any(a[nonzero_rows] != 0, axis=0))
    block = a[np.ix_(nonzero_rows, cols)]
    # remaining norm only shrinks as the prefix grows
    lo, hi = 0, nonzero_rows.size
    while lo < hi:
        mid = (lo + hi) // 2
        if spectral_norm(block[mid:]) <= epsilon:
            hi = mid
        else:
            lo = mid + 1
    return tuple(window.sites[i] for i in nonzero_rows[:lo])


def cone_split(A:Operator, J:Arc, epsilon:float) -> ConeSplit:
    '''
    Split the complement of Cone(J) along the shrinking neighbourhoods N_k of J.
    Each step keeps the rows that carry more than epsilon/2^k of A Lambda_J outside N_k.
    '''
    _require_planar(A)
    if epsilon <= 0:
        raise OperatorError('epsilon must be positive')
    window = A.window
    outside = set(x for x in window.sites if complement_cone(J).contains(x))
    if J.full or not outside:
        return ConeSplit(J, (), (), 0.0, epsilon)
    cols = region_mask(window, Cone(J))
    k_entries = np.where(cols[None, :], A.entries, 0)
    K = Operator(window, k_entries, f'{A.name}Lambda_J')

    k_max = max(1, math.ceil(math.log2(window.height + J.start.height + J.end.height + 1)))
    bad, covered = set(), set()
    for k in range(1, k_max + 1):
        E_k = complement_cone(widen_arc(J, k))
        members = set(x for x in window.sites if E_k.contains(x))
        F_k = finite_support_approx(K, E_k, epsilon / 2 ** k)
        bad |= members - set(F_k)
        covered |= members
    leftover = outside - covered
    if leftover:
        F_l = finite_support_approx(K, Explicit(frozenset(leftover)), epsilon / 2 ** k_max)
        bad |= leftover - set(F_l)
    good = outside - bad

    rows = np.zeros(window.dimension, dtype=bool)
    rows[window.indices(bad)] = True
    achieved = masked_norm(A, rows, cols)
    LOGGER.info(f'cone split of {J}: {len(good)} good, {len(bad)} bad, bound {achieved:.3e} <= {epsilon:.3e}')
    if achieved > epsilon + 1e-12:
        raise OperatorError(f'cone split bound {achieved:.3e} exceeds {epsilon:.3e}')
    order = window.index
    return ConeSplit(J, tuple(sorted(good, key=order.get)), tuple(sorted(bad, key=order.get)),
                     achieved, epsilon)


def _radius_between(lo2, hi2) -> Fraction:
    '''Rational r with lo2 < r^2 <= hi2, smallest denominator power of two that fits.'''
    q = 1
    while True:
        r = Fraction(math.isqrt(math.floor(lo2 * q * q)) + 1, q)
        if r * r <= hi2:
            return r
        q *= 2


def _shells(window) -> list[int]:
    return sorted(set(norm2(x) for x in window.sites))


def _center_on_ray(theta:Direction, lower2) -> Site:
    '''Smallest positive multiple of theta with squared norm >= lower2.'''
    h = norm2(theta.vector)
    m = max(1, math.isqrt(math.ceil(Fraction(lower2) / h)))
    while m * m * h < lower2:
        m += 1
    while m > 1 and (m - 1) * (m - 1) * h >= lower2:
        m -= 1
    return (m * theta.p, m * theta.q)


def annulus_confine(A:Operator, thetas:Sequence[Direction], epsilons:Sequence[float]) -> CentersPlan:
    '''
    Place centers x_i on the rays thetas[i] with radii r_0 < r_1 < ... such that
    x_i sits in B_{r_i} minus B_{r_{i-1}} and A delta_{x_i} leaks at most epsilons[i]
    outside that annulus.

    1. t_i: the first shell beyond which every column reaches B_{r_{i-1}} with norm <= eps_i/2
    2. x_i: the first lattice point of the ray at or beyond t_i and r_{i-1}
    3. r_i: the first shell beyond x_i where the column tail drops to eps_i/2
    '''
    _require_planar(A)
    if not thetas:
        raise OperatorError('annulus confinement needs at least one direction')
    if len(thetas) != len(epsilons) or any(e <= 0 for e in epsilons):
        raise OperatorError('one positive epsilon per direction is required')
    window = A.window
    a = A.entries
    n2 = _norm2_array(window)
    shells = _shells(window)
    beyond = shells[-1] + 1

    centers, radii, t_radii, bounds = [], [], [], []
    r_prev = Fraction(0)
    for i, (theta, eps) in enumerate(zip(thetas, epsilons)):
        inner = n2 < r_prev * r_prev
        # 1. far enough that nothing returns to the inner ball
        if i == 0 or not inner.any():
            t2 = 0
        else:
            candidates = [s for s in shells if s >= r_prev * r_prev] + [beyond]
            lo, hi = 0, len(candidates) - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if masked_norm(A, inner, n2 >= candidates[mid]) <= eps / 2:
                    hi = mid
                else:
                    lo = mid + 1
            t2 = candidates[lo]
        # 2. center on the ray
        x = _center_on_ray(theta, max(Fraction(t2), r_prev * r_prev))
        if x not in window.index:
            raise WindowExhaustedError(f'center {i} on ray {theta} falls outside window {window}', i)
        column = a[:, window.index[x]]
        # 3. outer radius
        budget = eps if i == 0 else eps / 2
        later = [s for s in shells if s > norm2(x)] + [beyond]
        s0 = next(s for s in later if np.linalg.norm(column[n2 >= s]) <= budget)
        lower = max([s for s in shells if s < s0] + [norm2(x)])
        r = _radius_between(lower, s0)

        leak = (n2 >= r * r) | inner
        bound = float(np.linalg.norm(column[leak]))
        if bound > eps + 1e-12:
            raise OperatorError(f'center {i} leaks {bound:.3e} > {eps:.3e}')
        centers.append(x)
        radii.append(r)
        t_radii.append(math.sqrt(t2))
        bounds.append(bound)
        LOGGER.debug(f'center {i}: x={site_text(x)}, r={r}, leak={bound:.3e}')
        r_prev = r
    return CentersPlan(tuple(thetas), tuple(centers), tuple(radii), tuple(t_radii),
                       tuple(float(e) for e in epsilons), tuple(bounds))
