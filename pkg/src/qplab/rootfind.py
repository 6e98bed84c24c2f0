"""Complex-analytic root machinery.

Counting is by the argument principle, (1/2 pi i) * contour integral of f'/f,
evaluated with the trapezoidal rule on equispaced nodes (spectrally accurate
for these periodic integrands); the node count doubles until two successive
counts agree.  Power sums of the enclosed roots come from the same integrals
weighted by z^k, and Newton's identities turn them back into monic polynomial
coefficients.  Localisation is count-guided disk subdivision with Newton
polishing; clusters that refuse to separate below 1e-9 are reported with their
multiplicity and centroid.

Root sets of level functions v - E* on the cylinder are handled through the
substitution z = exp(2 pi i theta), which maps strips to annuli.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContourTooClose, DomainError, NonSeparable
from .lattice import Potential, torus_norm

MIN_NODES = 64
MAX_NODES = 1 << 16
SEPARATION_SCALE = 1e-9
MAX_DEPTH = 60


class AnalyticFunction:
    """Callable f with derivative; df defaults to a central-difference stencil."""

    def __init__(self, f, df=None, scale: float = 1.0):
        self._f = f
        self._df = df
        self._h = 1e-6 * scale

    def __call__(self, z):
        return self._f(z)

    def derivative(self, z):
        if self._df is not None:
            return self._df(z)
        h = self._h
        return (8 * (self._f(z + h) - self._f(z - h))
                - (self._f(z + 2 * h) - self._f(z - 2 * h))) / (12 * h)


def _as_analytic(f) -> AnalyticFunction:
    if isinstance(f, AnalyticFunction):
        return f
    if hasattr(f, "derivative"):
        return AnalyticFunction(f, f.derivative)
    return AnalyticFunction(f)


def polynomial_function(coeffs) -> AnalyticFunction:
    """Monic-or-not polynomial (descending coefficients) as an AnalyticFunction."""
    coeffs = np.asarray(coeffs, dtype=complex)
    dcoeffs = np.polyder(coeffs)
    return AnalyticFunction(lambda z: np.polyval(coeffs, z),
                            lambda z: np.polyval(dcoeffs, z))


@dataclass(frozen=True)
class Contour:
    """Circle in C, or an annulus boundary pair centred at the origin."""

    kind: str  # "circle" | "annulus"
    center: complex = 0.0
    radius: float = 1.0
    inner_radius: float = 0.0
    quadrature_nodes: int = 256

    def __post_init__(self):
        if self.kind not in ("circle", "annulus"):
            raise ValueError(f"unknown contour kind {self.kind!r}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind == "annulus" and not (0 < self.inner_radius < self.radius):
            raise ValueError("annulus needs 0 < inner_radius < radius")
        if self.quadrature_nodes < MIN_NODES:
            object.__setattr__(self, "quadrature_nodes", MIN_NODES)

    @classmethod
    def circle(cls, center, radius, nodes=256):
        return cls("circle", complex(center), float(radius), 0.0, nodes)

    @classmethod
    def annulus(cls, inner_radius, outer_radius, nodes=256):
        return cls("annulus", 0.0, float(outer_radius), float(inner_radius), nodes)


def _circle_moment(f: AnalyticFunction, center: complex, radius: float, k: int,
                   nodes: int) -> complex:
    """(1/2 pi i) * integral over the circle of z^k f'(z)/f(z) dz."""
    t = np.arange(nodes) / nodes
    z = center + radius * np.exp(2j * np.pi * t)
    fv = np.asarray(f(z), dtype=complex)
    fmax = np.abs(fv).max()
    if np.abs(fv).min() <= max(1e-280, 1e-13 * max(1.0, fmax)):
        raise ContourTooClose(
            f"min |f| = {np.abs(fv).min():.2e} on circle({center:.6g}, {radius:.3g})"
        )
    dv = np.asarray(f.derivative(z), dtype=complex)
    dz = radius * np.exp(2j * np.pi * t)  # includes the 2 pi i / (2 pi i) cancellation
    return complex(np.mean(z ** k * dv / fv * dz))


def _moment(f: AnalyticFunction, contour: Contour, k: int, nodes: int) -> complex:
    if contour.kind == "circle":
        return _circle_moment(f, contour.center, contour.radius, k, nodes)
    outer = _circle_moment(f, 0.0, contour.radius, k, nodes)
    inner = _circle_moment(f, 0.0, contour.inner_radius, k, nodes)
    return outer - inner


def _adaptive_moments(f: AnalyticFunction, contour: Contour, kmax: int):
    """Moments p_0..p_kmax with node doubling until all stabilise to 1e-8."""
    f = _as_analytic(f)
    nodes = contour.quadrature_nodes
    prev = None
    while nodes <= MAX_NODES:
        vals = [_moment(f, contour, k, nodes) for k in range(kmax + 1)]
        count_raw = vals[0]
        near = abs(count_raw - round(count_raw.real)) <= 1e-4
        if prev is not None and near:
            stable = all(abs(a - b) <= 1e-8 * max(1.0, abs(a)) + 1e-10
                         for a, b in zip(vals, prev))
            if stable:
                return vals
        prev = vals
        nodes *= 2
    if prev is not None and abs(prev[0] - round(prev[0].real)) <= 1e-4:
        return prev
    raise ContourTooClose("count integral did not stabilise; a root sits near the contour")


def count_zeros(f, contour: Contour, max_nodes: int = MAX_NODES) -> int:
    """Number of zeros of f enclosed by the contour, by the argument principle.

    The node count doubles until two successive rounded counts agree and the
    raw value is within 1e-4 of that integer.
    """
    f = _as_analytic(f)
    nodes = contour.quadrature_nodes
    prev = None
    while nodes <= max_nodes:
        raw = _moment(f, contour, 0, nodes)
        n = round(raw.real)
        if abs(raw - n) <= 1e-4 and prev == n:
            return int(n)
        prev = n if abs(raw - n) <= 1e-4 else None
        nodes *= 2
    raise ContourTooClose(f"count integral did not stabilise within {max_nodes} nodes")


@dataclass(frozen=True)
class PowerSums:
    """p_k = sum over enclosed roots of root^k, k = 0..kmax."""

    values: tuple

    @property
    def count(self) -> int:
        return int(round(self.values[0].real))

    def __getitem__(self, k):
        return self.values[k]

    def __len__(self):
        return len(self.values)


def power_sums(f, contour: Contour, kmax: int) -> PowerSums:
    vals = _adaptive_moments(_as_analytic(f), contour, kmax)
    if abs(vals[0] - round(vals[0].real)) > 1e-4:
        raise ContourTooClose(f"p_0 = {vals[0]:.6g} not within 1e-4 of an integer")
    return PowerSums(tuple(complex(v) for v in vals))


def newton_to_elementary(p: PowerSums, degree: int) -> np.ndarray:
    """Monic coefficients (descending) of the polynomial with the enclosed roots.

    Uses the Newton recursion k e_k = sum_{i=1..k} (-1)^{i-1} e_{k-i} p_i.
    """
    if degree != p.count:
        raise ValueError(f"degree {degree} does not match p_0 = {p.count}")
    if len(p) < degree + 1:
        raise ValueError("need power sums up to k = degree")
    e = np.zeros(degree + 1, dtype=complex)
    e[0] = 1.0
    for k in range(1, degree + 1):
        acc = 0.0
        for i in range(1, k + 1):
            acc += (-1) ** (i - 1) * e[k - i] * p[i]
        e[k] = acc / k
    coeffs = np.array([(-1) ** k * e[k] for k in range(degree + 1)], dtype=complex)
    return coeffs  # [1, c1, ..., cn] descending powers


@dataclass(frozen=True)
class RootCluster:
    """Roots with multiplicity inside a region, cross-checked by a contour count."""

    roots: tuple  # ((location, multiplicity), ...)
    region: Contour
    count_from_contour: int
    residual: float
    separable: bool = True

    @property
    def total_multiplicity(self) -> int:
        return sum(m for _, m in self.roots)

    def locations(self):
        return [r for r, _ in self.roots]


def _newton_polish(f: AnalyticFunction, z0: complex, tol: float, scale: float,
                   max_iter: int = 60) -> complex:
    z = complex(z0)
    try:
        for _ in range(max_iter):
            fz = complex(np.asarray(f(z)))
            if abs(fz) <= tol * scale:
                return z
            dz = complex(np.asarray(f.derivative(z)))
            if dz == 0:
                break
            step = fz / dz
            if not np.isfinite(step):
                break
            z = z - step
            if abs(step) < 1e-16 * max(1.0, abs(z)):
                break
    except DomainError:
        return complex(z0)
    return z


def _clearance(f, center, radius, nodes=MIN_NODES):
    """min |f| / max |f| on a coarse node set; -inf if the circle is unusable."""
    t = np.arange(nodes) / nodes
    try:
        fv = np.abs(np.asarray(f(center + radius * np.exp(2j * np.pi * t)), dtype=complex))
    except DomainError:
        return -np.inf
    top = fv.max()
    if top == 0.0:
        return -np.inf
    return float(fv.min() / top)


def _safe_count(f, center, radius, max_nodes: int = 16384):
    """Count on a circle near the requested radius, preferring the clearest one.

    The radius is nudged by factors of order one (the adaptive-radius freedom);
    candidates are ranked by min|f|/max|f| on coarse nodes before integrating.
    """
    factors = (1.0, 1.07, 0.93, 1.15, 0.85, 1.23, 0.77)
    ranked = sorted(factors, key=lambda fac: -_clearance(f, center, radius * fac))
    for fac in ranked:
        try:
            return count_zeros(f, Contour.circle(center, radius * fac, MIN_NODES),
                               max_nodes=max_nodes), radius * fac
        except (ContourTooClose, DomainError):
            continue
    raise ContourTooClose(f"no admissible circle near ({center:.6g}, {radius:.3g})")


def _known_inside(out, center, radius):
    return sum(m for z, m in out if abs(z - center) < radius)


def _subdivide(f: AnalyticFunction, center: complex, radius: float, tol: float,
               scale: float, depth: int, out: list):
    n, used_radius = _safe_count(f, center, radius)
    # roots already located in an overlapping sibling need no second descent
    if n - _known_inside(out, center, used_radius) <= 0:
        return True
    if n == 1:
        root = _newton_polish(f, center, tol, scale)
        good = abs(root - center) <= 1.5 * used_radius
        try:
            good = good and abs(complex(np.asarray(f(root)))) <= tol * scale
        except DomainError:
            good = False
        if good:
            out.append((root, 1))
            return True
        # Newton escaped the disk or stalled: isolate by descent instead
    if depth >= MAX_DEPTH or radius < SEPARATION_SCALE:
        out.append((center, n - _known_inside(out, center, used_radius)))
        return False
    separable = True
    r2 = 0.75 * radius
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        sub = center + (radius / 2) * (sx + 1j * sy)
        try:
            separable &= _subdivide(f, sub, r2, tol, scale, depth + 1, out)
        except ContourTooClose:
            # child uncountable: |f| at the floor near a multiple root, or the
            # disk leaves the analyticity domain; handled by the tally below
            separable = False
            continue
    missing = n - _known_inside(out, center, used_radius * 1.05)
    if missing > 0:
        # children could not separate these roots: report the cluster here
        out.append((center, missing))
        return False
    return separable


def _dedupe(cands, min_sep):
    merged = []
    for z, m in cands:
        for j, (w, mw) in enumerate(merged):
            if abs(z - w) <= min_sep:
                merged[j] = ((w * mw + z * m) / (mw + m), mw + m)
                break
        else:
            merged.append((z, m))
    return merged


def _dedupe_torus(cands, min_sep):
    """Cluster points of C/Z, aligning integer representatives before averaging."""
    merged = []
    for z, m in cands:
        for j, (w, mw) in enumerate(merged):
            if torus_norm(z - w) <= min_sep:
                z_aligned = z - round((z - w).real)
                merged[j] = ((w * mw + z_aligned * m) / (mw + m), mw + m)
                break
        else:
            merged.append((z, m))
    return [(complex(z.real % 1.0, z.imag), m) for z, m in merged]


def localize_roots(f, region: Contour, tol: float = 1e-10) -> RootCluster:
    """Find all roots of f inside the region (disk or annulus) with multiplicity.

    Count-guided quadrisection; simple roots are Newton-polished to
    |f| <= tol * (local scale).  If separation stalls below 1e-9 the cluster
    is reported with its multiplicity at the centroid and separable=False.
    """
    f = _as_analytic(f)
    # local scale: typical |f| on the outer contour
    t = np.arange(MIN_NODES) / MIN_NODES
    if region.kind == "circle":
        zs = region.center + region.radius * np.exp(2j * np.pi * t)
    else:
        zs = region.radius * np.exp(2j * np.pi * t)
    scale = float(np.abs(np.asarray(f(zs), dtype=complex)).max())
    if scale == 0.0:
        raise ContourTooClose("function vanishes identically on the contour")

    total = count_zeros(f, region)
    if total == 0:
        return RootCluster((), region, 0, 0.0)

    cands: list = []
    separable = True
    if region.kind == "circle":
        separable = _subdivide(f, region.center, region.radius, tol, scale, 0, cands)
    else:
        # cover the annulus with overlapping disks along the mid circle
        rm = 0.5 * (region.radius + region.inner_radius)
        w = region.radius - region.inner_radius
        K = max(8, int(math.ceil(4 * math.pi * rm / w)))
        rho = 1.2 * math.hypot(w / 2, math.pi * rm / K)
        for j in range(K):
            c = rm * np.exp(2j * np.pi * j / K)
            separable &= _subdivide(f, c, rho, tol, scale, 0, cands)

    merged = _dedupe(cands, max(10 * tol, 1e2 * SEPARATION_SCALE))
    # keep only roots genuinely inside the region
    kept = []
    for z, m in merged:
        if region.kind == "circle":
            inside = abs(z - region.center) <= region.radius * (1 + 1e-9)
        else:
            inside = region.inner_radius <= abs(z) <= region.radius
        if inside:
            kept.append((z, m))
    # revalidate multiplicities with small contours when the tally is off
    if sum(m for _, m in kept) != total:
        revalidated = []
        for z, _ in kept:
            r0 = max(50 * tol, 1e-7 * max(1.0, abs(z)))
            try:
                m, _ = _safe_count(f, z, r0)
            except ContourTooClose:
                m = 1
            if m > 0:
                revalidated.append((z, m))
        kept = _dedupe(revalidated, max(10 * tol, 1e2 * SEPARATION_SCALE))
    if sum(m for _, m in kept) != total:
        raise NonSeparable(
            f"located {sum(m for _, m in kept)} roots but the contour counts {total}"
        )
    residual = max((abs(complex(np.asarray(f(z)))) for z, m in kept if m == 1), default=0.0)
    kept.sort(key=lambda rm: (rm[0].real, rm[0].imag))
    return RootCluster(tuple(kept), region, total, residual, separable)


def phase_from_unit_circle(z: complex):
    """Map a root on the z-cylinder back to theta in C/Z."""
    theta_re = float(np.angle(z)) / (2 * math.pi) % 1.0
    theta_im = -float(np.log(abs(z))) / (2 * math.pi)
    return complex(theta_re, theta_im)


@dataclass(frozen=True)
class LevelRootReport:
    """Roots of v - E* in the strip T_{eta/2} plus the comparability constant."""

    Estar: float
    roots: tuple  # ((theta in C/Z, multiplicity), ...)
    count: int
    c_tilde: float


@dataclass(frozen=True)
class ConditionRootReport:
    M_observed: int
    per_level: tuple  # LevelRootReport per E*
    c_tilde_sup: float

    def m0(self, Estar: float) -> int:
        best = min(self.per_level, key=lambda r: abs(r.Estar - Estar))
        return best.count


def _annulus_root_count_check(pcoeffs, halfwidth, roots_inside):
    """Cross-check companion roots against an argument-principle annulus count."""
    radii = np.exp(2 * math.pi * halfwidth * np.array([1.0, -1.0]))
    f = polynomial_function(pcoeffs)
    try:
        n = count_zeros(f, Contour.annulus(radii[1], radii[0]))
    except ContourTooClose:
        return None
    return n == len(roots_inside)


def level_roots(v: Potential, eta: float, Estar: float, theta_samples: int = 0) -> LevelRootReport:
    """Roots of v - E* in T_{eta/2} via the annulus substitution z = e^{2 pi i theta}."""
    p = v.level_polynomial(Estar)
    zroots = np.roots(p)
    # choose a contour half-width near eta/2 avoiding roots on the circles
    target = eta / 2
    best_hw, best_clear = None, -1.0
    for hw in np.linspace(target, 0.75 * eta, 24):
        r_out, r_in = math.exp(2 * math.pi * hw), math.exp(-2 * math.pi * hw)
        clearance = min(
            (min(abs(abs(z) - r_out), abs(abs(z) - r_in)) for z in zroots),
            default=1.0,
        )
        if clearance > best_clear:
            best_hw, best_clear = hw, clearance
    hw = best_hw if best_hw is not None else target
    r_out, r_in = math.exp(2 * math.pi * hw), math.exp(-2 * math.pi * hw)
    inside = [z for z in zroots if r_in <= abs(z) <= r_out]
    check = _annulus_root_count_check(p, hw, inside)
    if check is False:
        raise ContourTooClose(f"companion/contour count mismatch at E*={Estar}")
    thetas = [phase_from_unit_circle(z) for z in inside]
    clustered = _dedupe_torus([(t, 1) for t in thetas], 1e-7)
    roots = tuple(sorted(((t, m) for t, m in clustered), key=lambda rm: (rm[0].real, rm[0].imag)))
    with_multiplicity = [t for t, m in roots for _ in range(m)]
    c_tilde = _comparability_constant(v, Estar, with_multiplicity, eta) if roots else 1.0
    return LevelRootReport(float(Estar), roots, len(with_multiplicity), c_tilde)


def _comparability_constant(v: Potential, Estar: float, roots, eta: float,
                            n_re: int = 96, n_im: int = 7) -> float:
    """Empirical C~ = sup over T_{eta/4} of max(|v-E*| / prod, prod / |v-E*|)."""
    re = np.linspace(0.0, 1.0, n_re, endpoint=False)
    im = np.linspace(-eta / 4, eta / 4, n_im)
    thetas = (re[:, None] + 1j * im[None, :]).ravel()
    num = np.abs(v.evaluate(thetas) - Estar)
    prod = np.ones_like(num)
    for r in roots:
        prod *= torus_norm(thetas - r)
    ok = (num > 1e-13) & (prod > 1e-13)
    if not ok.any():
        return 1.0
    ratio = num[ok] / prod[ok]
    return float(max(ratio.max(), (1.0 / ratio).max()))


def verify_condition_root(v: Potential, eta: float, Estar_grid) -> ConditionRootReport:
    """Count and localise the roots of v - E* across an energy grid.

    Returns the max observed count (the empirical M of the root condition) and
    the per-energy comparability constants; the sup over the grid is reported
    but not asserted uniform.
    """
    reports = []
    for Estar in Estar_grid:
        reports.append(level_roots(v, eta, float(Estar)))
    m_obs = max((r.count for r in reports), default=0)
    sup = max((r.c_tilde for r in reports), default=1.0)
    return ConditionRootReport(m_obs, tuple(reports), sup)


@dataclass(frozen=True)
class PerturbationBound:
    """Root displacement bound for two monic polynomials with close coefficients."""

    bound: float
    matched_max_distance: float

    @property
    def ok(self) -> bool:
        return self.matched_max_distance <= self.bound * (1 + 1e-9) + 1e-300


def _bottleneck_match(a, b) -> float:
    """Smallest possible max pairing distance between two equal-size root sets."""
    n = len(a)
    d = np.abs(np.subtract.outer(np.asarray(a), np.asarray(b)))
    if n <= 7:
        best = math.inf
        for perm in itertools.permutations(range(n)):
            m = max(d[i, perm[i]] for i in range(n))
            if m < best:
                best = m
        return float(best)
    # binary search over thresholds with bipartite matching
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_bipartite_matching

    vals = np.unique(d)
    lo, hi = 0, len(vals) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        adj = csr_matrix(d <= vals[mid])
        match = maximum_bipartite_matching(adj, perm_type="column")
        if (match >= 0).all():
            hi = mid
        else:
            lo = mid + 1
    return float(vals[lo])


def root_perturbation_bound(coeffs_f, coeffs_g) -> PerturbationBound:
    """Coefficient-distance bound on matched root displacement (monic inputs).

    bound = 4 * 2^{-1/n} * (sum_k |a_k - b_k| gamma^{n-k})^{1/n} with
    gamma = 2 * max_k max(|a_k|^{1/k}, |b_k|^{1/k}).
    """
    a = np.asarray(coeffs_f, dtype=complex)
    b = np.asarray(coeffs_g, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("degree mismatch")
    if abs(a[0] - 1) > 1e-12 or abs(b[0] - 1) > 1e-12:
        raise ValueError("polynomials must be monic")
    n = len(a) - 1
    if n == 0:
        return PerturbationBound(0.0, 0.0)
    gam = 2.0 * max(
        max(abs(a[k]) ** (1.0 / k), abs(b[k]) ** (1.0 / k)) for k in range(1, n + 1)
    )
    s = sum(abs(a[k] - b[k]) * gam ** (n - k) for k in range(1, n + 1))
    bound = 4.0 * 2.0 ** (-1.0 / n) * s ** (1.0 / n)
    ra, rb = np.roots(a), np.roots(b)
    matched = _bottleneck_match(ra, rb)
    return PerturbationBound(float(bound), matched)
