"""Lattice geometry, potentials, frequencies and finite operator restrictions.

The model is the quasi-periodic operator on Z^d

    H(theta) = epsilon * Delta + v(theta + x.omega) delta_{x,y},

with the nearest-neighbour Laplacian in the l^1 metric and a trigonometric-
polynomial potential sampled along the orbit of a Diophantine frequency.
Everything downstream (Green's functions, Schur complements, the scale
induction) works with finite restrictions H_Lambda assembled here.

All value types are immutable; a Region carries a canonical (lexicographic)
ordering of its points and every matrix index in the package derives from it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError

Site = tuple  # integer lattice point, e.g. (0,) or (1, -2)

GOLDEN_MEAN = (math.sqrt(5.0) - 1.0) / 2.0


def norm1(x) -> int:
    """l^1 norm of a lattice point."""
    return int(sum(abs(c) for c in x))


def torus_distance(a: float, b: float = 0.0) -> float:
    """Distance |a - b| on R/Z, i.e. min over integer shifts; lies in [0, 1/2]."""
    d = (a - b) % 1.0
    return min(d, 1.0 - d)


def torus_norm(z) -> float:
    """Cylinder norm ||z||_T = inf_l |z - l| for z in C/Z (vectorized).

    For real inputs this coincides with :func:`torus_distance`.
    """
    z = np.asarray(z, dtype=complex)
    re = np.mod(z.real + 0.5, 1.0) - 0.5
    out = np.hypot(re, z.imag)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Phase:
    """Point of the complex cylinder C/Z: real part stored reduced mod 1."""

    re: float
    im: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "re", float(self.re) % 1.0)
        object.__setattr__(self, "im", float(self.im))

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    def shifted(self, t: float) -> "Phase":
        """Translate the real part by t (mod 1)."""
        return Phase(self.re + t, self.im)

    def distance(self, other: "Phase") -> float:
        return float(torus_norm(self.value - other.value))


@dataclass(frozen=True)
class Region:
    """Finite subset of Z^d with a canonical lexicographic point ordering."""

    points: tuple
    dimension: int

    def __post_init__(self):
        pts = tuple(sorted(tuple(int(c) for c in p) for p in self.points))
        if len(set(pts)) != len(pts):
            raise ValueError("duplicate points in region")
        for p in pts:
            if len(p) != self.dimension:
                raise ValueError(f"point {p} does not have dimension {self.dimension}")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points, dimension=None) -> "Region":
        pts = [tuple(int(c) for c in p) for p in points]
        if dimension is None:
            if not pts:
                raise ValueError("empty region needs an explicit dimension")
            dimension = len(pts[0])
        return cls(tuple(pts), dimension)

    def __len__(self):
        return len(self.points)

    def __contains__(self, p):
        return tuple(p) in self._index

    def __iter__(self):
        return iter(self.points)

    @property
    def _index(self):
        idx = getattr(self, "_index_cache", None)
        if idx is None:
            idx = {p: i for i, p in enumerate(self.points)}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def index_of(self, p) -> int:
        return self._index[tuple(p)]

    def coords(self) -> np.ndarray:
        """(n, d) integer array in canonical order."""
        return np.array(self.points, dtype=np.int64).reshape(len(self.points), self.dimension)

    def translate(self, y) -> "Region":
        y = tuple(int(c) for c in y)
        return Region(tuple(tuple(a + b for a, b in zip(p, y)) for p in self.points), self.dimension)

    def union(self, other: "Region") -> "Region":
        return Region(tuple(set(self.points) | set(other.points)), self.dimension)

    def difference(self, points) -> "Region":
        drop = {tuple(p) for p in points}
        return Region(tuple(p for p in self.points if p not in drop), self.dimension)

    def intersection(self, other: "Region") -> "Region":
        keep = set(other.points)
        return Region(tuple(p for p in self.points if p in keep), self.dimension)

    def issubset(self, other: "Region") -> bool:
        return set(self.points) <= set(other.points)

    def dist1(self, other: "Region") -> int:
        """min l^1 distance between the two point sets."""
        a = self.coords()[:, None, :]
        b = other.coords()[None, :, :]
        return int(np.abs(a - b).sum(axis=2).min())


def build_box(N: float, d: int) -> Region:
    """Q_N = {x in Z^d : ||x||_1 <= N}."""
    if N < 0:
        raise ValueError("N must be >= 0")
    n = int(math.floor(N))
    pts = []

    def rec(prefix, budget):
        if len(prefix) == d - 1:
            for c in range(-budget, budget + 1):
                pts.append(tuple(prefix) + (c,))
            return
        for c in range(-budget, budget + 1):
            rec(prefix + [c], budget - abs(c))

    if d == 1:
        pts = [(c,) for c in range(-n, n + 1)]
    else:
        rec([], n)
    return Region(tuple(pts), d)


def boundary(X: Region, Y: Region):
    """Ordered boundary pairs del_Y X = {(x, y) : x in X, y in Y \\ X, ||x-y||_1 = 1}."""
    inY = set(Y.points)
    inX = set(X.points)
    pairs = []
    for x in X.points:
        for i in range(X.dimension):
            for s in (-1, 1):
                y = x[:i] + (x[i] + s,) + x[i + 1:]
                if y in inY and y not in inX:
                    pairs.append((x, y))
    return pairs


def inner_boundary(X: Region, Y: Region):
    """del^-_Y X: points of X with a neighbour in Y \\ X."""
    return sorted({x for x, _ in boundary(X, Y)})


def outer_boundary(X: Region, Y: Region):
    """del^+_Y X: points of Y \\ X with a neighbour in X."""
    return sorted({y for _, y in boundary(X, Y)})


@dataclass(frozen=True)
class Potential:
    """Real-analytic potential given as a trigonometric polynomial.

    fourier maps the mode k to v_hat(k); hermitian symmetry
    v_hat(-k) == conj(v_hat(k)) is enforced so v is real on T.  The strip
    half-width eta is the analyticity margin used by the root machinery; the
    sup of |v| over the strip of half-width eta is recorded as c_v.
    """

    fourier: tuple  # tuple of (k, complex coefficient), k ascending
    eta: float = 0.25

    def __post_init__(self):
        coeffs = {}
        for k, c in self.fourier:
            coeffs[int(k)] = coeffs.get(int(k), 0.0) + complex(c)
        for k, c in list(coeffs.items()):
            cc = coeffs.get(-k, 0.0)
            if abs(np.conj(c) - cc) > 1e-12 * max(1.0, abs(c)):
                raise ValueError(f"fourier coefficients not hermitian at k={k}")
        if all(abs(c) < 1e-15 for k, c in coeffs.items() if k != 0):
            raise ValueError("potential must be non-constant")
        object.__setattr__(
            self, "fourier", tuple(sorted((k, c) for k, c in coeffs.items() if abs(c) > 0.0))
        )
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def degree(self) -> int:
        return max(abs(k) for k, _ in self.fourier)

    @property
    def c_v(self) -> float:
        """sup over the strip |Im z| <= eta of |v| (attained on the boundary lines)."""
        t = np.linspace(0.0, 1.0, 512, endpoint=False)
        vals = [np.abs(self.evaluate(t + 1j * s)).max() for s in (-self.eta, 0.0, self.eta)]
        return float(max(vals))

    def evaluate(self, z, order: int = 0):
        """Evaluate d^order v / dz^order at z (scalar or array), z in C/Z.

        Raises DomainError outside the strip |Im z| <= 2 eta.
        """
        z = np.asarray(z, dtype=complex)
        if np.any(np.abs(z.imag) > 2.0 * self.eta + 1e-15):
            raise DomainError(
                f"phase outside the analyticity strip |Im z| <= {2 * self.eta}"
            )
        out = np.zeros_like(z, dtype=complex)
        for k, c in self.fourier:
            out += c * (2j * np.pi * k) ** order * np.exp(2j * np.pi * k * z)
        if out.ndim == 0:
            return complex(out)
        return out

    def __call__(self, z, order: int = 0):
        return self.evaluate(z, order)

    def derivative_sup(self, order: int) -> float:
        """Crude sup bound on |d^l v| over T: sum of |coef| * (2 pi |k|)^l."""
        return float(sum(abs(c) * (2 * np.pi * abs(k)) ** order for k, c in self.fourier))

    def shortest_period_is_one(self) -> bool:
        """True iff gcd of the supported modes is 1 (no proper sub-period)."""
        g = 0
        for k, _ in self.fourier:
            if k != 0:
                g = math.gcd(g, abs(k))
        return g == 1

    def level_polynomial(self, Estar: complex) -> np.ndarray:
        """Coefficients (descending powers) of p(z) = sum v_hat(k) z^{k+m} - E* z^m.

        Under z = exp(2 pi i theta), roots of v - E* in the strip T_s correspond
        to roots of p in the annulus e^{-2 pi s} <= |z| <= e^{2 pi s}.
        """
        m = self.degree
        p = np.zeros(2 * m + 1, dtype=complex)
        for k, c in self.fourier:
            p[m + k] += c
        p[m] -= Estar
        return p[::-1]  # np.roots wants descending powers

    def serialize(self):
        return [[k, float(c.real), float(c.imag)] for k, c in self.fourier]

    @classmethod
    def deserialize(cls, triples, eta=0.25):
        return cls(tuple((int(k), complex(a, b)) for k, a, b in triples), eta=eta)


def cosine_potential(eta: float = 0.25) -> Potential:
    """v(theta) = 2 cos(2 pi theta), the almost Mathieu sampling function."""
    return Potential(((-1, 1.0), (1, 1.0)), eta=eta)


@dataclass(frozen=True)
class DiophantineReport:
    passed: bool
    worst_x: tuple
    worst_margin: float  # min over x of ||x.omega||_T * ||x||_1^tau  (compare to gamma)

    def __bool__(self):
        return self.passed


def _half_lattice(horizon: int, d: int):
    """Integer vectors with 0 < ||x||_1 <= horizon, one of each +-x pair."""
    if d == 1:
        for n in range(1, horizon + 1):
            yield (n,)
        return
    for p in build_box(horizon, d).points:
        if p == (0,) * d:
            continue
        # keep the representative whose first nonzero coordinate is positive
        for c in p:
            if c != 0:
                if c > 0:
                    yield p
                break


def check_diophantine(omega, tau: float, gamma: float, horizon: int) -> DiophantineReport:
    """Scan ||x.omega||_T ||x||_1^tau >= gamma for all 0 < ||x||_1 <= horizon."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    d = om.size
    worst = (math.inf, None)
    if d == 1:
        xs = np.arange(1, horizon + 1, dtype=float)
        vals = np.abs(((xs * om[0]) + 0.5) % 1.0 - 0.5) * xs ** tau
        j = int(np.argmin(vals))
        worst = (float(vals[j]), (j + 1,))
    else:
        for x in _half_lattice(horizon, d):
            v = torus_distance(float(np.dot(x, om))) * norm1(x) ** tau
            if v < worst[0]:
                worst = (v, x)
    return DiophantineReport(worst[0] >= gamma, worst[1], worst[0])


@dataclass(frozen=True)
class Frequency:
    """Frequency vector with a finitely verified Diophantine certificate."""

    omega: tuple
    tau: float
    gamma: float
    verified_horizon: int = 0

    def __post_init__(self):
        om = tuple(float(w) % 1.0 for w in (self.omega if hasattr(self.omega, "__len__") else (self.omega,)))
        object.__setattr__(self, "omega", om)
        if self.tau <= len(om):
            raise ValueError("tau must exceed the dimension")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.verified_horizon:
            rep = check_diophantine(om, self.tau, self.gamma, self.verified_horizon)
            if not rep.passed:
                raise ValueError(
                    f"Diophantine check failed at x={rep.worst_x}: "
                    f"margin {rep.worst_margin:.3e} < gamma {self.gamma}"
                )

    @classmethod
    def from_strings(cls, digits, tau, gamma, verified_horizon=0):
        """Build from decimal strings to keep configs free of binary-float drift."""
        if isinstance(digits, str):
            digits = [digits]
        om = tuple(float(Fraction(s)) for s in digits)
        return cls(om, tau, gamma, verified_horizon)

    @property
    def dimension(self) -> int:
        return len(self.omega)

    def dot(self, x) -> float:
        return float(np.dot(x, self.omega))


def golden_frequency(tau: float = 2.0, gamma: float = 0.2, horizon: int = 10_000) -> Frequency:
    return Frequency((GOLDEN_MEAN,), tau, gamma, verified_horizon=horizon)


@dataclass(frozen=True)
class OperatorSpec:
    """Parameters (d, epsilon, omega, v) defining H(theta)."""

    dimension: int
    epsilon: float
    frequency: Frequency
    potential: Potential

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.frequency.dimension != self.dimension:
            raise ValueError("frequency dimension mismatch")

    def phases(self, theta: Phase, region: Region) -> np.ndarray:
        """theta + x.omega for x in the region, canonical order (complex array)."""
        shifts = region.coords() @ np.asarray(self.frequency.omega)
        return theta.value + shifts.astype(complex)

    def phases_complex(self, theta: complex, region: Region) -> np.ndarray:
        """Same as phases but for a raw complex phase."""
        shifts = region.coords() @ np.asarray(self.frequency.omega)
        return complex(theta) + shifts.astype(complex)

    def box(self, N: float) -> Region:
        return build_box(N, self.dimension)


def amo_spec(epsilon: float, frequency: Frequency | None = None, eta: float = 0.25) -> OperatorSpec:
    """d=1 cosine model used throughout the validation suites."""
    freq = frequency if frequency is not None else golden_frequency()
    return OperatorSpec(1, epsilon, freq, cosine_potential(eta))


def adjacency(region: Region) -> np.ndarray:
    """0/1 matrix of nearest-neighbour pairs in the canonical ordering."""
    c = region.coords()
    n = len(region)
    if n <= 2048:
        dist = np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2)
        return (dist == 1).astype(np.float64)
    adj = np.zeros((n, n))
    idx = region._index
    for i, p in enumerate(region.points):
        for k in range(region.dimension):
            for s in (-1, 1):
                q = p[:k] + (p[k] + s,) + p[k + 1:]
                j = idx.get(q)
                if j is not None:
                    adj[i, j] = 1.0
    return adj


def assemble_restriction(spec: OperatorSpec, theta: Phase, region: Region,
                         energy: complex | None = None) -> np.ndarray:
    """Dense matrix of H_Lambda(theta) - E (E omitted when absent).

    M[x, y] = epsilon * delta_{||x-y||_1, 1} + (v(theta + x.omega) - E) delta_{x, y},
    indexed by the canonical ordering of the region.  Real symmetric for real
    theta and real E, complex otherwise.
    """
    if len(region) == 0:
        raise ValueError("region must be nonempty")
    diag = spec.potential.evaluate(spec.phases(theta, region))
    diag = np.atleast_1d(diag)
    if energy is not None:
        diag = diag - energy
    mat = spec.epsilon * adjacency(region)
    if theta.im == 0.0 and (energy is None or np.imag(energy) == 0.0):
        mat = mat + np.diag(diag.real)
    else:
        mat = mat.astype(complex) + np.diag(diag)
    return mat
