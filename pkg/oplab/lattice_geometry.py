import logging
import math
import re
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cmp_to_key
from typing import Iterable, Iterator

LOGGER = logging.getLogger(__name__)

Site = tuple[int, ...]

ORIGIN = (0, 0)
X_AXIS = (1, 0)


class GeometryError(ValueError):
    pass


class RegionSyntaxError(GeometryError):
    pass


def norm2(x:Site) -> int:
    return sum(c * c for c in x)


def cross(a:Site, b:Site) -> int:
    return a[0] * b[1] - a[1] * b[0]


def dot(a:Site, b:Site) -> int:
    return a[0] * b[0] + a[1] * b[1]


def site_text(x:Site) -> str:
    return '(' + ','.join(str(c) for c in x) + ')'


@dataclass(frozen=True)
class Direction:
    '''
    Primitive integer vector standing for a rational-slope angle.

    params:
        p, q: coprime integers, not both zero.
    '''
    p: int
    q: int

    def __post_init__(self) -> None:
        if self.p == 0 and self.q == 0:
            raise GeometryError('direction must be non-zero')
        if math.gcd(abs(self.p), abs(self.q)) != 1:
            raise GeometryError(f'direction ({self.p},{self.q}) is not primitive')

    def __str__(self) -> str:
        return f'({self.p},{self.q})'

    @property
    def vector(self) -> Site:
        return (self.p, self.q)

    @property
    def height(self) -> int:
        return max(abs(self.p), abs(self.q))

    def angle(self) -> float:
        '''Angle in [0, 2pi) for display and plotting only.'''
        return math.atan2(self.q, self.p) % (2 * math.pi)


def direction_of(x:Site) -> Direction:
    if len(x) != 2:
        raise GeometryError(f'direction_of needs a Z2 site, got {site_text(x)}')
    x1, x2 = x
    if x1 == 0 and x2 == 0:
        raise GeometryError('undefined direction at origin')
    g = math.gcd(abs(x1), abs(x2))
    return Direction(x1 // g, x2 // g)


def _half(ref:Site, v:Site) -> int:
    '''
    0 when the counter-clockwise sweep from ref to v lies in [0, pi), 1 otherwise.
    '''
    c = cross(ref, v)
    if c > 0 or (c == 0 and dot(ref, v) > 0):
        return 0
    return 1


def sweep_cmp(ref:Site, a:Site, b:Site) -> int:
    '''
    Compare the counter-clockwise sweep angles from ref to a and from ref to b.
    Returns -1, 0 or 1. Integer arithmetic only.
    '''
    ha, hb = _half(ref, a), _half(ref, b)
    if ha != hb:
        return -1 if ha < hb else 1
    c = cross(a, b)
    if c > 0:
        return -1
    if c < 0:
        return 1
    return 0


@dataclass(frozen=True)
class Arc:
    '''
    Closed counter-clockwise arc of directions from start to end.
    A full circle is flagged explicitly, start == end without the flag is a single ray.
    '''
    start: Direction
    end: Direction
    full: bool = False

    @classmethod
    def full_circle(cls) -> 'Arc':
        return cls(Direction(1, 0), Direction(1, 0), True)

    @classmethod
    def between(cls, a:Site, b:Site) -> 'Arc':
        return cls(direction_of(a), direction_of(b))

    def __str__(self) -> str:
        if self.full:
            return 'all'
        return f'{self.start}..{self.end}'

    def contains(self, d:Direction) -> bool:
        return arc_contains(self, d)


def arc_contains(J:Arc, d:Direction) -> bool:
    if J.full:
        return True
    return sweep_cmp(J.start.vector, d.vector, J.end.vector) <= 0


def arcs_disjoint(I:Arc, J:Arc) -> bool:
    # two closed arcs meet iff one of them contains the other's start
    if I.full or J.full:
        return False
    return not (arc_contains(J, I.start) or arc_contains(I, J.start))


def _egcd(a:int, b:int) -> tuple[int, int, int]:
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        k = a // b
        a, b = b, a - k * b
        x0, x1 = x1, x0 - k * x1
        y0, y1 = y1, y0 - k * y1
    return a, x0, y0


def _t_range(v0:int, s:int, n:int) -> tuple[float, float]:
    '''Integer range of t with |v0 + t*s| <= n.'''
    if s == 0:
        return (-math.inf, math.inf) if abs(v0) <= n else (1, 0)
    lo = Fraction(-n - v0, s)
    hi = Fraction(n - v0, s)
    if s < 0:
        lo, hi = hi, lo
    return math.ceil(lo), math.floor(hi)


def farey_neighbour(d:Direction, n:int, clockwise:bool) -> Direction:
    '''
    Nearest primitive direction of height <= n strictly clockwise (or counter-clockwise) of d.
    Consecutive directions of bounded height form a unimodular pair, so the neighbour is the
    solution of cross(v, d) = 1 furthest along d inside the height box.
    '''
    n = max(n, d.height)
    s = d.vector
    g, a, b = _egcd(s[1], -s[0])
    a, b = a * g, b * g
    # a*s1 - b*s0 = 1, i.e. cross((a,b), s) = 1
    v0 = (a, b) if clockwise else (-a, -b)
    lo0, hi0 = _t_range(v0[0], s[0], n)
    lo1, hi1 = _t_range(v0[1], s[1], n)
    lo, hi = max(lo0, lo1), min(hi0, hi1)
    if lo > hi:
        raise GeometryError(f'no neighbour of {d} within height {n}')
    # adding multiples of d walks the solutions towards d on either side
    t = hi
    return Direction(v0[0] + t * s[0], v0[1] + t * s[1])


def widen_arc(J:Arc, k:int, height:int|None=None) -> Arc:
    '''
    Tightest enclosing arc of J whose endpoints have height <= 2^k, strictly outside J.
    Stands in for [theta1 - 1/2^k, theta2 + 1/2^k] with rational-slope endpoints.

    params:
        height: optional cap on the endpoint height (the enclosure stops shrinking there).
    '''
    if J.full:
        return J
    n = 2 ** min(k, 62)
    if height is not None:
        n = min(n, max(height, 1))
    before = farey_neighbour(J.start, n, clockwise=True)
    after = farey_neighbour(J.end, n, clockwise=False)
    # the widened ends have met, nothing is left outside
    if sweep_cmp(J.end.vector, after.vector, before.vector) >= 0:
        return Arc.full_circle()
    return Arc(before, after)


def enumerate_directions() -> Iterator[Direction]:
    '''
    Deterministic enumeration of all rational-slope directions: the four axes, then the
    Stern-Brocot tree of the first quadrant breadth first, each node rotated into the
    four quadrants round robin.
    '''
    for v in [(1, 0), (0, 1), (-1, 0), (0, -1)]:
        yield Direction(*v)
    queue = deque([((1, 0), (0, 1))])
    while True:
        left, right = queue.popleft()
        p, q = left[0] + right[0], left[1] + right[1]
        for v in [(p, q), (-q, p), (-p, -q), (q, -p)]:
            yield Direction(*v)
        queue.append((left, (p, q)))
        queue.append(((p, q), right))


def _site_cmp(a:Site, b:Site) -> int:
    ra, rb = norm2(a), norm2(b)
    if ra != rb:
        return -1 if ra < rb else 1
    if a == b:
        return 0
    if len(a) == 2:
        c = sweep_cmp(X_AXIS, a, b)
        if c:
            return c
    else:
        # on the line the positive ray comes first
        ha, hb = (0 if a[0] >= 0 else 1), (0 if b[0] >= 0 else 1)
        if ha != hb:
            return -1 if ha < hb else 1
    return -1 if a < b else 1


def canonical_order(sites:Iterable[Site]) -> list[Site]:
    '''Sort sites by radius, then exact angle, then lexicographically.'''
    return sorted(sites, key=cmp_to_key(_site_cmp))


class Region():
    '''
    Symbolic set of lattice sites. Subclasses implement contains().
    The operators !, | and & build complements, unions and intersections.
    '''
    def contains(self, x:Site) -> bool:
        raise NotImplementedError

    def __invert__(self) -> 'Region':
        return Complement(self)

    def __or__(self, other:'Region') -> 'Region':
        return Union((self, other))

    def __and__(self, other:'Region') -> 'Region':
        return Intersection((self, other))

    def __str__(self) -> str:
        return format_region(self)


def _require_z2(x:Site, what:str) -> None:
    if len(x) != 2:
        raise GeometryError(f'{what} is only defined on Z2 sites')


@dataclass(frozen=True)
class Cone(Region):
    arc: Arc

    def contains(self, x:Site) -> bool:
        _require_z2(x, 'cone')
        if x == ORIGIN:
            return False
        return arc_contains(self.arc, direction_of(x))


@dataclass(frozen=True)
class Ball(Region):
    '''Open ball ||x|| < radius.'''
    radius: Fraction

    def __post_init__(self) -> None:
        radius = Fraction(self.radius)
        if radius < 0:
            raise GeometryError('ball radius must be non-negative')
        object.__setattr__(self, 'radius', radius)

    def contains(self, x:Site) -> bool:
        return norm2(x) < self.radius * self.radius


@dataclass(frozen=True)
class Annulus(Region):
    '''r_in <= ||x|| < r_out.'''
    r_in: Fraction
    r_out: Fraction

    def __post_init__(self) -> None:
        r_in, r_out = Fraction(self.r_in), Fraction(self.r_out)
        if r_in < 0 or r_out < r_in:
            raise GeometryError(f'invalid annulus radii {r_in}, {r_out}')
        object.__setattr__(self, 'r_in', r_in)
        object.__setattr__(self, 'r_out', r_out)

    def contains(self, x:Site) -> bool:
        n = norm2(x)
        return self.r_in * self.r_in <= n < self.r_out * self.r_out


@dataclass(frozen=True)
class Explicit(Region):
    sites: frozenset

    def __post_init__(self) -> None:
        sites = frozenset(tuple(s) for s in self.sites)
        if len({len(s) for s in sites}) > 1:
            raise GeometryError('Z and Z2 sites cannot be mixed in one region')
        object.__setattr__(self, 'sites', sites)

    def contains(self, x:Site) -> bool:
        return x in self.sites


@dataclass(frozen=True)
class Interval(Region):
    '''Sites lo <= x <= hi of the Z line; either end may be None (unbounded).'''
    lo: int|None = None
    hi: int|None = None

    def contains(self, x:Site) -> bool:
        if len(x) != 1:
            raise GeometryError('interval is only defined on Z sites')
        if self.lo is not None and x[0] < self.lo:
            return False
        if self.hi is not None and x[0] > self.hi:
            return False
        return True


@dataclass(frozen=True)
class Complement(Region):
    inner: Region

    def contains(self, x:Site) -> bool:
        return not self.inner.contains(x)


@dataclass(frozen=True)
class Union(Region):
    parts: tuple

    def contains(self, x:Site) -> bool:
        return any(p.contains(x) for p in self.parts)


@dataclass(frozen=True)
class Intersection(Region):
    parts: tuple

    def contains(self, x:Site) -> bool:
        return all(p.contains(x) for p in self.parts)


def complement_cone(J:Arc) -> Region:
    '''Non-origin sites whose direction is outside J.'''
    return Intersection((Complement(Cone(J)), Cone(Arc.full_circle())))


def realize_region(S:Region, window) -> tuple:
    '''Window sites in S, in the window's canonical order.'''
    return tuple(x for x in window.sites if S.contains(x))


# text forms

def _format_atom(R:Region) -> str:
    if isinstance(R, Cone):
        return f'cone[{R.arc}]'
    if isinstance(R, Ball):
        return f'ball[{R.radius}]'
    if isinstance(R, Annulus):
        return f'ann[{R.r_in},{R.r_out}]'
    if isinstance(R, Explicit):
        return 'set[' + ','.join(site_text(s) for s in canonical_order(R.sites)) + ']'
    if isinstance(R, Interval):
        lo = '' if R.lo is None else str(R.lo)
        hi = '' if R.hi is None else str(R.hi)
        return f'int[{lo}..{hi}]'
    raise GeometryError(f'cannot format region {R!r}')


def format_region(R:Region) -> str:
    if isinstance(R, Complement):
        inner = format_region(R.inner)
        if isinstance(R.inner, (Union, Intersection)):
            inner = f'({inner})'
        return '!' + inner
    if isinstance(R, Union):
        return '|'.join(f'({format_region(p)})' if isinstance(p, Union) else format_region(p)
                        for p in R.parts)
    if isinstance(R, Intersection):
        return '&'.join(f'({format_region(p)})' if isinstance(p, (Union, Intersection)) else format_region(p)
                        for p in R.parts)
    return _format_atom(R)


_INT = re.compile(r'-?\d+')
_RATIONAL = re.compile(r'\d+(/\d+)?')
_WORD = re.compile(r'[a-z]+')


class _RegionParser():
    '''
    Recursive descent over the textual region grammar:
        union := inter ('|' inter)*
        inter := unary ('&' unary)*
        unary := '!' unary | '(' union ')' | atom
    '''
    def __init__(self, text:str) -> None:
        self.text = text
        self.pos = 0

    def fail(self, message:str) -> None:
        raise RegionSyntaxError(f'{message} at position {self.pos} in {self.text!r}')

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ''

    def expect(self, token:str) -> None:
        self.skip()
        if not self.text.startswith(token, self.pos):
            self.fail(f'expected {token!r}')
        self.pos += len(token)

    def match(self, pattern:re.Pattern, what:str) -> str:
        self.skip()
        m = pattern.match(self.text, self.pos)
        if m is None:
            self.fail(f'expected {what}')
        self.pos = m.end()
        return m.group(0)

    def union(self) -> Region:
        parts = [self.inter()]
        while self.peek() == '|':
            self.pos += 1
            parts.append(self.inter())
        return parts[0] if len(parts) == 1 else Union(tuple(parts))

    def inter(self) -> Region:
        parts = [self.unary()]
        while self.peek() == '&':
            self.pos += 1
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else Intersection(tuple(parts))

    def unary(self) -> Region:
        c = self.peek()
        if c == '!':
            self.pos += 1
            return Complement(self.unary())
        if c == '(':
            self.pos += 1
            inner = self.union()
            self.expect(')')
            return inner
        return self.atom()

    def site(self) -> Site:
        self.expect('(')
        coords = [int(self.match(_INT, 'integer'))]
        while self.peek() == ',':
            self.pos += 1
            coords.append(int(self.match(_INT, 'integer')))
        self.expect(')')
        if len(coords) > 2:
            self.fail('sites have one or two coordinates')
        return tuple(coords)

    def arc(self) -> Arc:
        self.skip()
        if self.text.startswith('all', self.pos):
            self.pos += 3
            return Arc.full_circle()
        a = self.site()
        self.expect('..')
        b = self.site()
        if len(a) != 2 or len(b) != 2:
            self.fail('arc endpoints must be Z2 vectors')
        return Arc.between(a, b)

    def atom(self) -> Region:
        kind = self.match(_WORD, 'region name')
        self.expect('[')
        if kind == 'cone':
            region = Cone(self.arc())
        elif kind == 'ball':
            region = Ball(Fraction(self.match(_RATIONAL, 'radius')))
        elif kind == 'ann':
            r_in = Fraction(self.match(_RATIONAL, 'radius'))
            self.expect(',')
            r_out = Fraction(self.match(_RATIONAL, 'radius'))
            region = Annulus(r_in, r_out)
        elif kind == 'set':
            sites = []
            if self.peek() != ']':
                sites.append(self.site())
                while self.peek() == ',':
                    self.pos += 1
                    sites.append(self.site())
            region = Explicit(frozenset(sites))
        elif kind == 'int':
            lo = None if self.peek() == '.' else int(self.match(_INT, 'integer'))
            self.expect('..')
            hi = None if self.peek() == ']' else int(self.match(_INT, 'integer'))
            region = Interval(lo, hi)
        else:
            self.fail(f'unknown region kind {kind!r}')
        self.expect(']')
        return region

    def done(self) -> None:
        if self.peek() != '':
            self.fail('unexpected trailing input')


def parse_region(text:str) -> Region:
    parser = _RegionParser(text)
    region = parser.union()
    parser.done()
    return region


def parse_arc(text:str) -> Arc:
    parser = _RegionParser(text)
    parser.skip()
    arc = parser.arc()
    parser.done()
    return arc
