import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

from oplab.lattice_geometry import (ORIGIN, Explicit, Region, Site, canonical_order, norm2,
                                    realize_region, site_text)

LOGGER = logging.getLogger(__name__)

# constants
REPRESENTATIONS = ['Z2', 'Z']
BOUNDARIES = ['open', 'periodic']


class OperatorError(ValueError):
    pass


class WindowMismatchError(OperatorError):
    pass


class NotUnitaryError(OperatorError):
    pass


class NotProjectionError(OperatorError):
    pass


class SingularOperatorError(OperatorError):
    def __init__(self, message:str, sigma_min:float) -> None:
        super().__init__(message)
        self.sigma_min = sigma_min


@dataclass(frozen=True)
class TruncationWindow:
    '''
    Finite ball of lattice sites standing in for l2(Z2) or l2(Z).

    params:
        representation: Z2 or Z.
        radius: positive rational, sites with ||x|| <= radius are kept.
    '''
    representation: str
    radius: Fraction
    sites: tuple = field(init=False, repr=False, compare=False)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.representation not in REPRESENTATIONS:
            raise OperatorError(f'unknown representation {self.representation!r}')
        radius = Fraction(self.radius)
        if radius <= 0:
            raise OperatorError('window radius must be positive')
        object.__setattr__(self, 'radius', radius)
        object.__setattr__(self, 'sites', tuple(self.__enumerate()))
        object.__setattr__(self, 'index', {x: i for i, x in enumerate(self.sites)})

    def __enumerate(self) -> list[Site]:
        n = math.floor(self.radius)
        r2 = self.radius * self.radius
        if self.representation == 'Z':
            return canonical_order((x,) for x in range(-n, n + 1))
        return canonical_order((x1, x2) for x1 in range(-n, n + 1) for x2 in range(-n, n + 1)
                               if x1 * x1 + x2 * x2 <= r2)

    def __str__(self) -> str:
        return f'{self.representation}[{self.radius}]'

    @property
    def dimension(self) -> int:
        return len(self.sites)

    @property
    def base(self) -> 'TruncationWindow':
        return self

    @property
    def copies(self) -> int:
        return 1

    @property
    def height(self) -> int:
        return math.floor(self.radius)

    def spatial_sites(self) -> tuple:
        return self.sites

    def coordinates(self) -> np.ndarray:
        return np.array(self.sites, dtype=float)

    def boundary_distances(self) -> np.ndarray:
        '''Distance of every basis site to the window boundary.'''
        return float(self.radius) - np.sqrt([norm2(x) for x in self.sites])

    def indices(self, sites:Iterable[Site]) -> np.ndarray:
        return np.array([self.index[x] for x in sites], dtype=int)

    def region_indices(self, region:Region) -> np.ndarray:
        return self.indices(realize_region(region, self))

    def region_mask(self, region:Region) -> np.ndarray:
        mask = np.zeros(self.dimension, dtype=bool)
        mask[self.region_indices(region)] = True
        return mask


@dataclass(frozen=True)
class AmplifiedWindow:
    '''
    (copies)-fold amplification of a window, basis ordered stack by stack.
    Sites are (site, stack) pairs.
    '''
    base: TruncationWindow
    copies: int
    sites: tuple = field(init=False, repr=False, compare=False)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.copies < 1:
            raise OperatorError('an amplification needs at least one copy')
        sites = tuple((x, l) for l in range(self.copies) for x in self.base.sites)
        object.__setattr__(self, 'sites', sites)
        object.__setattr__(self, 'index', {s: i for i, s in enumerate(sites)})

    def __str__(self) -> str:
        return f'{self.base}x{self.copies}'

    @property
    def representation(self) -> str:
        return self.base.representation

    @property
    def radius(self) -> Fraction:
        return self.base.radius

    @property
    def dimension(self) -> int:
        return self.base.dimension * self.copies

    @property
    def height(self) -> int:
        return self.base.height

    def spatial_sites(self) -> tuple:
        return self.base.sites * self.copies

    def coordinates(self) -> np.ndarray:
        return np.tile(self.base.coordinates(), (self.copies, 1))

    def boundary_distances(self) -> np.ndarray:
        return np.tile(self.base.boundary_distances(), self.copies)

    def indices(self, sites:Iterable) -> np.ndarray:
        return np.array([self.index[s] for s in sites], dtype=int)


def make_window(representation:str, radius, copies:int=1):
    window = TruncationWindow(representation, Fraction(radius))
    return window if copies == 1 else AmplifiedWindow(window, copies)


def spectral_norm(matrix:np.ndarray) -> float:
    '''Largest singular value, 0 for empty blocks.'''
    if matrix.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(matrix, check_finite=False)[0])


class Operator():
    '''
    Dense complex matrix over the enumerated basis of a truncation window.
    Entries are read-only once constructed.

    params:
        window: TruncationWindow or AmplifiedWindow the operator acts on.
        entries: square complex matrix matching the window dimension.
        name: short label.
        lineage: tuple of construction tags.
    '''
    def __init__(self, window, entries, name:str='', lineage:Sequence[str]=()) -> None:
        entries = np.array(entries, dtype=np.complex128)
        if entries.shape != (window.dimension, window.dimension):
            raise WindowMismatchError(f'entries of shape {entries.shape} do not match window {window} '
                                      f'of dimension {window.dimension}')
        entries.flags.writeable = False
        self.window = window
        self.entries = entries
        self.name = name
        self.lineage = tuple(lineage)


    def __repr__(self) -> str:
        return f'Operator {self.name or "<unnamed>"} on {self.window} ({self.dimension}x{self.dimension}).'


    @classmethod
    def identity(cls, window, name:str='identity') -> 'Operator':
        return cls(window, np.eye(window.dimension), name)


    @classmethod
    def zero(cls, window, name:str='zero') -> 'Operator':
        return cls(window, np.zeros((window.dimension, window.dimension)), name)


    @property
    def dimension(self) -> int:
        return self.window.dimension


    def __check(self, other:'Operator') -> None:
        if self.window != other.window:
            raise WindowMismatchError(f'window mismatch: {self.window} vs {other.window}')


    def adjoint(self) -> 'Operator':
        return Operator(self.window, self.entries.conj().T, f'{self.name}*', self.lineage + ('adjoint',))


    def __matmul__(self, other:'Operator') -> 'Operator':
        self.__check(other)
        return Operator(self.window, self.entries @ other.entries, f'{self.name}{other.name}')


    def __add__(self, other:'Operator') -> 'Operator':
        self.__check(other)
        return Operator(self.window, self.entries + other.entries, f'{self.name}+{other.name}')


    def __sub__(self, other:'Operator') -> 'Operator':
        self.__check(other)
        return Operator(self.window, self.entries - other.entries, f'{self.name}-{other.name}')


    def __mul__(self, scalar:complex) -> 'Operator':
        return Operator(self.window, scalar * self.entries, self.name, self.lineage)


    __rmul__ = __mul__


    def __neg__(self) -> 'Operator':
        return Operator(self.window, -self.entries, f'-{self.name}', self.lineage)


    def norm(self) -> float:
        return spectral_norm(self.entries)


    def column(self, site) -> np.ndarray:
        return self.entries[:, self.window.index[site]]


    def is_diagonal(self) -> bool:
        return not np.any(self.entries - np.diag(np.diag(self.entries)))


    def renamed(self, name:str, tag:str|None=None) -> 'Operator':
        lineage = self.lineage + ((tag,) if tag else ())
        return Operator(self.window, self.entries, name, lineage)


def operator_norm(A:Operator) -> float:
    return A.norm()


def adjoint(A:Operator) -> Operator:
    return A.adjoint()


def compose(A:Operator, B:Operator) -> Operator:
    return A @ B


def add(A:Operator, B:Operator) -> Operator:
    return A + B


def sub(A:Operator, B:Operator) -> Operator:
    return A - B


def scale(A:Operator, c:complex) -> Operator:
    return c * A


def commutator_norm(A:Operator, B:Operator) -> float:
    return ((A @ B) - (B @ A)).norm()


def unitarity_defect(matrix:np.ndarray) -> float:
    '''||A*A - 1||, read off the singular values.'''
    s = scipy.linalg.svdvals(matrix, check_finite=False)
    return float(max(abs(s[0] ** 2 - 1), abs(s[-1] ** 2 - 1)))


def rank_one(window, y:Site, x:Site, name:str='') -> Operator:
    '''delta_y (x) delta_x^*'''
    m = np.zeros((window.dimension, window.dimension), dtype=np.complex128)
    m[window.index[y], window.index[x]] = 1
    return Operator(window, m, name or f'd{site_text(y)}d{site_text(x)}*')


class Projection(Operator):
    '''
    Orthogonal projection, checked on construction.

    params:
        region: region descriptor when the projection is the diagonal Lambda_S.
        tol_idem: tolerance on ||P - P*|| and ||P^2 - P||.
    '''
    def __init__(self, window, entries, name:str='', lineage:Sequence[str]=(),
                 region:Region|None=None, tol_idem:float=1e-10) -> None:
        super().__init__(window, entries, name, lineage)
        self.region = region
        if region is None:
            p = self.entries
            hermitian = spectral_norm(p - p.conj().T)
            idempotent = spectral_norm(p @ p - p)
            if max(hermitian, idempotent) > tol_idem:
                raise NotProjectionError(f'{name or "operator"} is not a projection: '
                                         f'||P-P*||={hermitian:.3e}, ||P^2-P||={idempotent:.3e}')


    @classmethod
    def from_operator(cls, A:Operator, tol_idem:float=1e-10) -> 'Projection':
        return cls(A.window, A.entries, A.name, A.lineage, tol_idem=tol_idem)


    def diagonal_mask(self) -> np.ndarray|None:
        '''Boolean membership when P is region backed, else None.'''
        if self.region is None:
            return None
        return np.real(np.diag(self.entries)) > 0.5


    def complement(self) -> 'Projection':
        entries = np.eye(self.dimension) - self.entries
        if self.region is not None:
            return Projection(self.window, entries, f'{self.name}^perp', self.lineage, ~self.region)
        return Projection(self.window, entries, f'{self.name}^perp', self.lineage, tol_idem=math.inf)


def projection_from_region(S:Region, window) -> Projection:
    m = np.zeros((window.dimension, window.dimension), dtype=np.complex128)
    idx = window.region_indices(S)
    m[idx, idx] = 1
    return Projection(window, m, f'Lambda[{S}]', ('projection_from_region',), region=S)


def diagonal_projection(sites:Iterable, window, name:str='') -> Projection:
    '''Lambda over an explicit list of (possibly amplified) sites.'''
    sites = list(sites)
    m = np.zeros((window.dimension, window.dimension), dtype=np.complex128)
    idx = window.indices(sites)
    m[idx, idx] = 1
    region = Explicit(frozenset(sites)) if isinstance(window, TruncationWindow) else None
    if region is None:
        return Projection(window, m, name, ('diagonal_projection',), tol_idem=math.inf)
    return Projection(window, m, name, ('diagonal_projection',), region=region)


def laughlin_operator(window:TruncationWindow) -> Operator:
    if window.representation != 'Z2':
        raise OperatorError('the Laughlin operator lives on Z2 windows')
    diag = np.ones(window.dimension, dtype=np.complex128)
    for i, (x1, x2) in enumerate(window.sites):
        if (x1, x2) != ORIGIN:
            z = complex(x1, x2)
            diag[i] = z / abs(z)
    return Operator(window, np.diag(diag), 'L', ('laughlin_operator',))


def shift_operator(window:TruncationWindow, k:int, boundary:str='open') -> Operator:
    '''delta_x -> delta_{x+k}; open drops what leaves the window, periodic wraps.'''
    if window.representation != 'Z':
        raise OperatorError('the bilateral shift lives on Z windows')
    if boundary not in BOUNDARIES:
        raise OperatorError(f'unknown boundary mode {boundary!r}')
    n = window.height
    size = 2 * n + 1
    m = np.zeros((window.dimension, window.dimension), dtype=np.complex128)
    for (x,) in window.sites:
        target = x + k
        if boundary == 'periodic':
            target = (target + n) % size - n
        elif abs(target) > n:
            continue
        m[window.index[(target,)], window.index[(x,)]] = 1
    return Operator(window, m, f'R^{k}', (f'shift_operator[{boundary}]',))


@dataclass(frozen=True)
class CircleFunction:
    '''
    Laurent polynomial f(z) = sum c_n z^n for n in [-d, d].

    params:
        coefficients: c_{-d}, ..., c_d (odd length).
        label: name used in reports.
    '''
    coefficients: tuple
    label: str = 'f'

    def __post_init__(self) -> None:
        coefficients = tuple(complex(c) for c in self.coefficients)
        if len(coefficients) % 2 != 1:
            raise OperatorError('Laurent coefficients need odd length (c_-d .. c_d)')
        # trim zero outer coefficients symmetrically
        while len(coefficients) > 1 and coefficients[0] == 0 and coefficients[-1] == 0:
            coefficients = coefficients[1:-1]
        object.__setattr__(self, 'coefficients', coefficients)

    @property
    def degree(self) -> int:
        return len(self.coefficients) // 2

    def coefficient(self, n:int) -> complex:
        d = self.degree
        return self.coefficients[n + d] if -d <= n <= d else 0j

    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coefficients)

    def sup_bound(self) -> float:
        '''Upper bound on max |f| over the circle.'''
        return float(sum(abs(c) for c in self.coefficients))

    def evaluate(self, z) -> np.ndarray:
        '''p(z, conj z), i.e. negative powers through the conjugate.'''
        z = np.asarray(z, dtype=np.complex128)
        result = np.full(z.shape, self.coefficient(0), dtype=np.complex128)
        pos = np.ones_like(z)
        neg = np.ones_like(z)
        for n in range(1, self.degree + 1):
            pos = pos * z
            neg = neg * np.conj(z)
            result = result + self.coefficient(n) * pos + self.coefficient(-n) * neg
        return result

    def __mul__(self, other:'CircleFunction') -> 'CircleFunction':
        return CircleFunction(tuple(np.convolve(self.coefficients, other.coefficients)),
                              f'{self.label}*{other.label}')

    def __add__(self, other:'CircleFunction') -> 'CircleFunction':
        d = max(self.degree, other.degree)
        return CircleFunction(tuple(self.coefficient(n) + other.coefficient(n) for n in range(-d, d + 1)),
                              f'{self.label}+{other.label}')

    @classmethod
    def constant(cls, c:complex=1.0, label:str='') -> 'CircleFunction':
        return cls((c,), label or f'{c}')

    @classmethod
    def monomial(cls, n:int, c:complex=1.0) -> 'CircleFunction':
        coefficients = [0j] * (2 * abs(n) + 1)
        coefficients[n + abs(n)] = c
        return cls(tuple(coefficients), f'z^{n}')

    @classmethod
    def cosine_bump(cls, angle:float, power:int) -> 'CircleFunction':
        '''((1 + cos(theta - angle)) / 2)^power, peaked at angle.'''
        w = complex(math.cos(angle), math.sin(angle))
        # (1 + cos)/2 = w/4 z^-1 + 1/2 + conj(w)/4 z
        base = np.array([w / 4, 0.5, w.conjugate() / 4])
        coefficients = np.array([1.0 + 0j])
        for _ in range(power):
            coefficients = np.convolve(coefficients, base)
        return cls(tuple(coefficients), f'bump({angle:.4g},{power})')

    @classmethod
    def random(cls, degree:int, rng:np.random.Generator) -> 'CircleFunction':
        c = rng.standard_normal(2 * degree + 1) + 1j * rng.standard_normal(2 * degree + 1)
        return cls(tuple(c), f'random({degree})')


def apply_circle_function(f:CircleFunction, U:Operator, tol:float=1e-8,
                          require_unitary:bool=True) -> Operator:
    '''
    f(U) as the Laurent polynomial sum c_n U^n, negative powers through U*.
    Diagonal inputs are evaluated entrywise.
    '''
    a = U.entries
    if U.is_diagonal():
        d = np.diag(a)
        if require_unitary and np.max(np.abs(np.abs(d) - 1)) > tol:
            raise NotUnitaryError(f'{U.name} is diagonal but not unimodular')
        return Operator(U.window, np.diag(f.evaluate(d)), f'{f.label}({U.name})', U.lineage + ('circle_function',))
    if require_unitary:
        defect = unitarity_defect(a)
        if defect > tol:
            raise NotUnitaryError(f'{U.name} is not unitary: ||U*U-1||={defect:.3e}')
    eye = np.eye(U.dimension, dtype=np.complex128)
    result = f.coefficient(0) * eye
    pos, neg = eye, eye
    adj = a.conj().T
    for n in range(1, f.degree + 1):
        pos = pos @ a
        neg = neg @ adj
        result = result + f.coefficient(n) * pos + f.coefficient(-n) * neg
    return Operator(U.window, result, f'{f.label}({U.name})', U.lineage + ('circle_function',))


def polar_decomposition(G:Operator, tol_inv:float=1e-8) -> tuple[Operator, Operator]:
    '''
    G = U |G| through the singular value decomposition, |G| = (G*G)^(1/2).
    '''
    w, s, vh = scipy.linalg.svd(G.entries, check_finite=False)
    if s[-1] <= tol_inv:
        raise SingularOperatorError(f'{G.name or "operator"} is singular: sigma_min={s[-1]:.3e}', float(s[-1]))
    u = w @ vh
    modulus = (vh.conj().T * s) @ vh
    return (Operator(G.window, u, f'pol({G.name})', G.lineage + ('polar_part',)),
            Operator(G.window, modulus, f'|{G.name}|', G.lineage + ('modulus',)))


def polar_part(G:Operator, tol_inv:float=1e-8) -> Operator:
    return polar_decomposition(G, tol_inv)[0]


def direct_sum(A:Operator, B:Operator) -> Operator:
    '''Block diagonal A (+) B over the amplified window.'''
    if A.window.base != B.window.base:
        raise WindowMismatchError('direct sums need a common base window')
    window = AmplifiedWindow(A.window.base, A.window.copies + B.window.copies)
    m = scipy.linalg.block_diag(A.entries, B.entries)
    return Operator(window, m, f'{A.name}+{B.name}', ('direct_sum',))


def amplify(A:Operator, n:int) -> Operator:
    '''A (+) 1_n.'''
    if n == 0:
        return A
    return direct_sum(A, Operator.identity(AmplifiedWindow(A.window.base, n)))


def crandn(shape, rng:np.random.Generator) -> np.ndarray:
    '''Complex standard normal samples.'''
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_unitary(window, rng:np.random.Generator) -> Operator:
    '''Haar random unitary via QR with the phase fix on R's diagonal.'''
    q, r = np.linalg.qr(crandn((window.dimension, window.dimension), rng))
    d = np.diag(r)
    q = q * (d / np.abs(d))
    return Operator(window, q, 'haar', ('random_unitary',))


def _plaquette_key(x:Site, offset:int) -> tuple:
    return tuple((c - offset) // 2 for c in x)


def random_local_unitary(window:TruncationWindow, rng:np.random.Generator, layers:int=2,
                         strength:float=0.4, winding:int=0,
                         phase:Callable[[TruncationWindow], Operator]|None=None) -> Operator:
    '''
    Diagonal phase times a product of plaquette-block unitaries exp(i s H).
    Each layer pairs neighbouring sites (2x2 plaquettes on Z2, 2-site blocks on Z) with
    alternating offsets, so the hopping range is at most `layers` steps per coordinate.

    params:
        layers: number of block layers.
        strength: ||exp(isH) - 1|| <= strength for every block.
        winding: power of the Laughlin phase on Z2 windows.
        phase: optional factory for the diagonal factor, overrides winding.
    '''
    d = window.dimension
    u = np.eye(d, dtype=np.complex128)
    for layer in range(layers):
        offset = layer % 2
        blocks = {}
        for x in window.sites:
            blocks.setdefault(_plaquette_key(x, offset), []).append(window.index[x])
        m = np.zeros((d, d), dtype=np.complex128)
        for key in sorted(blocks):
            idx = blocks[key]
            h = crandn((len(idx), len(idx)), rng)
            h = (h + h.conj().T) / 2
            norm = spectral_norm(h)
            if norm > 0:
                h = h / norm
            m[np.ix_(idx, idx)] = scipy.linalg.expm(1j * strength * h)
        u = m @ u
    if phase is not None:
        u = phase(window).entries @ u
    elif winding and window.representation == 'Z2':
        l = np.diag(laughlin_operator(window).entries) ** winding
        u = l[:, None] * u
    return Operator(window, u, 'local', ('random_local_unitary', f'layers={layers}', f'strength={strength}'))
