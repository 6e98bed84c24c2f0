"""Sylvester resultants, quantitative transversality, and the double-resonance scan.

The resultant of two monic energy polynomials vanishes exactly when two
eigenvalue clusters share a value, so lower bounds on its theta-derivatives
control the measure of simultaneously resonant phases.  The derivative
machinery here works with exact Fourier derivatives for trig-polynomial-built
functions and Cauchy/FFT circle integrals for numerically defined ones;
finite differences are never used beyond order two because the lower-bound
checks run at orders where differencing is hopeless.

Bounds of the product-transversality and sublevel-measure lemmas involve
doubly exponential constants, so all comparisons run in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, HypothesisViolation
from .lattice import OperatorSpec, Potential, torus_distance


@dataclass(frozen=True)
class MonicPoly:
    """Monic polynomial stored as descending coefficients [1, a_1, ..., a_n]."""

    coefficients: tuple

    def __post_init__(self):
        c = tuple(complex(x) for x in self.coefficients)
        if not c or abs(c[0] - 1.0) > 1e-12:
            raise ValueError("polynomial must be monic")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_roots(cls, roots):
        return cls(tuple(np.poly(np.asarray(roots, dtype=complex))) if len(roots) else (1.0,))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def roots(self) -> np.ndarray:
        if self.degree == 0:
            return np.array([], dtype=complex)
        return np.roots(np.asarray(self.coefficients))

    def __call__(self, z):
        return np.polyval(np.asarray(self.coefficients), z)


def sylvester_matrix(p: MonicPoly, q: MonicPoly) -> np.ndarray:
    n, m = p.degree, q.degree
    size = n + m
    mat = np.zeros((size, size), dtype=complex)
    pc = np.asarray(p.coefficients)
    qc = np.asarray(q.coefficients)
    for i in range(m):
        mat[i, i: i + n + 1] = pc
    for i in range(n):
        mat[m + i, i: i + m + 1] = qc
    return mat


def resultant(p: MonicPoly, q: MonicPoly) -> complex:
    """Res(p, q) = det of the Sylvester matrix = prod over root pairs of differences."""
    if p.degree == 0 or q.degree == 0:
        return 1.0 + 0j
    return complex(np.linalg.det(sylvester_matrix(p, q)))


@dataclass(frozen=True)
class TransversalityReport:
    """Smallest derivative order witnessing |v(.+phi) - v| >= c ||phi|| on the grid."""

    s_found: int | None
    c_found: float
    per_order_c: tuple  # c(s) for s = 0..s_max
    worst_point: tuple  # (theta, phi) achieving the min at s_found (or at s_max)

    @property
    def passed(self) -> bool:
        return self.s_found is not None


def condition_transversality(v: Potential, s_max: int, theta_grid, phi_grid,
                             c_min: float = 1e-3) -> TransversalityReport:
    """Find the smallest s <= s_max making the shift difference transversal.

    c(s) = min over the grid of max_{l <= s} |d^l (v(theta+phi) - v(theta))| / ||phi||_T;
    s_found is the smallest s with c(s) >= c_min.  The potential must have 1 as
    its shortest period (gcd of Fourier modes equal to one).
    """
    if not v.shortest_period_is_one():
        raise DomainError("potential has a proper sub-period; rescale it to period 1")
    thetas = np.asarray(theta_grid, dtype=float)
    phis = np.asarray([p for p in np.asarray(phi_grid, dtype=float)
                       if torus_distance(p) > 1e-12])
    if len(phis) == 0:
        raise ValueError("phi grid contains no nonzero shifts")
    phi_norm = np.array([torus_distance(p) for p in phis])
    # ratios[l, i_phi, i_theta]
    ratios = np.empty((s_max + 1, len(phis), len(thetas)))
    for l in range(s_max + 1):
        dv = v.evaluate(thetas[None, :] + phis[:, None], order=l) \
            - v.evaluate(thetas[None, :], order=l)
        ratios[l] = np.abs(dv) / phi_norm[:, None]
    running_max = np.maximum.accumulate(ratios, axis=0)
    per_order_c = tuple(float(running_max[l].min()) for l in range(s_max + 1))
    s_found = next((s for s, c in enumerate(per_order_c) if c >= c_min), None)
    pick = s_found if s_found is not None else s_max
    flat = np.unravel_index(np.argmin(running_max[pick]), running_max[pick].shape)
    worst = (float(thetas[flat[1]]), float(phis[flat[0]]))
    c_found = per_order_c[s_found] if s_found is not None else per_order_c[s_max]
    return TransversalityReport(s_found, float(c_found), per_order_c, worst)


def _product_derivatives(factor_derivs: np.ndarray) -> np.ndarray:
    """Leibniz: derivatives (order axis 0) of the product from per-factor derivatives.

    factor_derivs has shape (J, N+1, ...); returns shape (N+1, ...).
    """
    J, n1 = factor_derivs.shape[0], factor_derivs.shape[1]
    binom = np.zeros((n1, n1))
    for l in range(n1):
        for k in range(l + 1):
            binom[l, k] = math.comb(l, k)
    out = factor_derivs[0]
    for j in range(1, J):
        nxt = np.zeros_like(out)
        for l in range(n1):
            for k in range(l + 1):
                nxt[l] = nxt[l] + binom[l, k] * out[k] * factor_derivs[j, l - k]
        out = nxt
    return out


@dataclass(frozen=True)
class ProductBoundReport:
    """Log-space check of the product transversality inequality."""

    passed: bool
    hypotheses_ok: bool
    failing_factor: int | None
    log_bound: float
    min_log_max_derivative: float
    grid_size: int

    @property
    def log_margin(self) -> float:
        return self.min_log_max_derivative - self.log_bound


def eliasson_product_bound(u_list, m_list, C1: float, beta: float, interval,
                           grid_n: int = 512) -> ProductBoundReport:
    """Check max_{l<=N} |d^l prod u_j| >= (1/e)^{J^{8N}} (beta/C1^2)^{J^{N+1}}.

    Each u_j is a callable u(theta_array, order) with exact derivatives.
    Hypotheses (per-factor sup bound C1 up to order N; per-factor lower bound
    beta up to order m_j at every grid point) are verified first; a failure
    reports the factor index.  The bound is astronomically small, so the
    comparison is carried out on logarithms.
    """
    lo, hi = interval
    thetas = np.linspace(lo, hi, grid_n)
    J = len(u_list)
    if len(m_list) != J:
        raise ValueError("m_list length mismatch")
    N = int(sum(m_list))
    derivs = np.empty((J, N + 1, grid_n))
    for j, u in enumerate(u_list):
        for l in range(N + 1):
            derivs[j, l] = np.real(u(thetas, l))
    # hypotheses
    failing = None
    for j in range(J):
        if np.abs(derivs[j]).max() > C1 * (1 + 1e-12):
            failing = j
            break
        low = np.abs(derivs[j, : m_list[j] + 1]).max(axis=0).min()
        if low < beta * (1 - 1e-12):
            failing = j
            break
    if failing is not None:
        return ProductBoundReport(False, False, failing, np.nan, np.nan, grid_n)
    prod_derivs = _product_derivatives(derivs)
    max_abs = np.abs(prod_derivs).max(axis=0)
    min_log_max = float(np.log(np.clip(max_abs, 1e-300, None)).min())
    log_bound = -float(J) ** (8 * N) + float(J) ** (N + 1) * (math.log(beta) - 2 * math.log(C1))
    return ProductBoundReport(min_log_max >= log_bound, True, None,
                              log_bound, min_log_max, grid_n)


@dataclass(frozen=True)
class SublevelReport:
    measure_estimate: float
    lemma_bound: float
    hypotheses_ok: bool

    @property
    def passed(self) -> bool:
        return self.hypotheses_ok and self.measure_estimate <= self.lemma_bound * (1 + 1e-9)


def sublevel_measure(u, interval, epsilon: float, N: int, C2: float, beta: float,
                     grid_n: int = 1 << 20) -> SublevelReport:
    """Grid measure of {|u| <= eps} against 2^{N+2} (2 C2 |I| / beta + 1) (eps/beta)^{1/N}.

    u is a callable u(theta_array, order); hypotheses (derivative cap C2 up to
    order N+1, derivative floor beta up to order N) are verified on a coarse
    grid first.
    """
    lo, hi = interval
    length = hi - lo
    coarse = np.linspace(lo, hi, 2048)
    dmat = np.stack([np.real(u(coarse, l)) for l in range(N + 2)])
    ok = True
    if np.abs(dmat).max() > C2 * (1 + 1e-12):
        ok = False
    if np.abs(dmat[: N + 1]).max(axis=0).min() < beta * (1 - 1e-12):
        ok = False
    thetas = np.linspace(lo, hi, grid_n, endpoint=False) + 0.5 * length / grid_n
    vals = np.abs(np.real(u(thetas, 0)))
    measure = float(np.count_nonzero(vals <= epsilon)) * length / grid_n
    bound = 2.0 ** (N + 2) * (2 * C2 * length / beta + 1.0) * (epsilon / beta) ** (1.0 / N)
    return SublevelReport(measure, float(bound), ok)


@dataclass(frozen=True)
class DerivativeBoundRow:
    order: int
    max_abs: float  # max over the grid of |d^l R|
    cauchy_cap: float  # C_hat * l! * radius^{-l}


@dataclass(frozen=True)
class ResultantDerivativeReport:
    rows: tuple
    upper_ok: bool
    lower_bound: float
    lower_margin: float  # min over grid of (max_{l<=L} |d^l R|) - lower_bound
    c_hat: float

    @property
    def lower_ok(self) -> bool:
        return self.lower_margin > 0


def resultant_derivative_bounds(R, theta_grid, radius: float, L: int,
                                delta_class: float, phi_norm: float | None = None,
                                iota: int | None = None, nodes: int = 256,
                                vectorized: bool = False) -> ResultantDerivativeReport:
    """Cauchy-estimate derivative profile of theta -> R(theta) with two-sided checks.

    Upper: |d^l R| <= C_hat l! radius^{-l} with C_hat = max |R| on the circles
    (the Cauchy cap; violations indicate quadrature noise).  Lower:
    max_{l<=L} |d^l R| >= delta_class, or >= delta_class * phi_norm^iota when
    the two clusters coincide (the self-resonance case).  Pass vectorized=True
    when R accepts an array of points; expensive R implementations should.
    """
    thetas = np.asarray(theta_grid, dtype=complex)
    nodes = max(nodes, 4 * (L + 1))
    t = np.arange(nodes) / nodes
    ring = radius * np.exp(2j * np.pi * t)
    orders = np.arange(L + 1)
    fact = np.array([math.factorial(int(l)) for l in orders], dtype=float)
    per_theta_max = np.empty((len(thetas), L + 1))
    c_hat = 0.0
    for i, th in enumerate(thetas):
        if vectorized:
            vals = np.asarray(R(th + ring), dtype=complex)
        else:
            vals = np.asarray([R(complex(th + w)) for w in ring], dtype=complex)
        c_hat = max(c_hat, float(np.abs(vals).max()))
        coefs = np.fft.fft(vals) / nodes
        ders = coefs[: L + 1] * fact / radius ** orders
        per_theta_max[i] = np.abs(ders)
    rows = tuple(
        DerivativeBoundRow(int(l), float(per_theta_max[:, l].max()),
                           float(c_hat * fact[l] * radius ** (-float(l))))
        for l in orders
    )
    upper_ok = all(r.max_abs <= r.cauchy_cap * (1 + 1e-6) + 1e-300 for r in rows)
    lower = delta_class if phi_norm is None else delta_class * phi_norm ** (iota or 1)
    lower_margin = float(per_theta_max.max(axis=1).min() - lower)
    return ResultantDerivativeReport(rows, upper_ok, float(lower), lower_margin, c_hat)


@dataclass(frozen=True)
class ResonancePhaseSet:
    """Flagged theta-cells where two distinct sites are simultaneously resonant."""

    cell_edges: np.ndarray  # len n_cells + 1
    flags: np.ndarray  # bool, len n_cells
    delta: float
    measure_estimate: float
    measure_uncertainty: float
    witnesses: tuple  # per flagged cell (up to a cap): (theta, x, y, E)

    @property
    def flagged_count(self) -> int:
        return int(self.flags.sum())


def scan_double_resonance(spec: OperatorSpec, Estar: float, E_halfwidth: float,
                          box_radius: int, delta: float, theta_cells: int = 10_000,
                          branch_provider=None, witness_cap: int = 64) -> ResonancePhaseSet:
    """Scan the phase torus for delta-double-resonances in an energy window.

    A cell at theta is flagged when there exist sites x != y in Q_box and an
    energy E with |E - E*| <= E_halfwidth such that local branch values at
    theta + x.omega and theta + y.omega are both within delta of E.  The
    default branch provider is the potential itself (the level-0 brute-force
    path); a provider taking an array of phases and returning an array of
    branch values per phase substitutes finer data.
    """
    if spec.dimension != 1:
        raise NotImplementedError("the scanner drives d=1 experiments")
    edges = np.linspace(0.0, 1.0, theta_cells + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    sites = np.arange(-box_radius, box_radius + 1)
    if delta <= 0:
        flags = np.zeros(theta_cells, dtype=bool)
        return ResonancePhaseSet(edges, flags, float(delta), 0.0, 0.0, ())
    if len(sites) < 2:
        flags = np.zeros(theta_cells, dtype=bool)
        return ResonancePhaseSet(edges, flags, float(delta), 0.0, 0.0, ())
    omega = spec.frequency.omega[0]
    if branch_provider is None:
        def branch_provider(th):
            return np.real(spec.potential.evaluate(np.asarray(th)))[..., None]
    phases = centers[:, None] + sites[None, :] * omega  # (cells, sites)
    branch_vals = np.asarray(branch_provider(phases.ravel()))
    branch_vals = branch_vals.reshape(theta_cells, len(sites), -1)  # (cells, sites, nb)
    lo, hi = Estar - E_halfwidth, Estar + E_halfwidth
    flags = np.zeros(theta_cells, dtype=bool)
    witnesses = []
    nb = branch_vals.shape[2]
    vals = branch_vals.reshape(theta_cells, len(sites) * nb)
    site_of = np.repeat(sites, nb)
    order = np.argsort(vals, axis=1)
    svals = np.take_along_axis(vals, order, axis=1)
    ssite = site_of[order]
    # two values are jointly delta-resonant with a common E iff they differ by
    # < 2 delta and their midpoint window intersects the energy window
    for j in range(vals.shape[1] - 1):
        a, b = svals[:, j], svals[:, j + 1]
        near = (b - a) < 2 * delta
        distinct = ssite[:, j] != ssite[:, j + 1]
        overlap = (b - delta < hi) & (a + delta > lo)
        hit = near & distinct & overlap & ~flags
        if hit.any():
            for i in np.where(hit)[0][: max(0, witness_cap - len(witnesses))]:
                e_common = float(np.clip(0.5 * (a[i] + b[i]), lo, hi))
                witnesses.append((float(centers[i]), int(ssite[i, j]),
                                  int(ssite[i, j + 1]), e_common))
            flags |= near & distinct & overlap
    cell_w = 1.0 / theta_cells
    # runs of flagged cells; each run boundary contributes one cell of uncertainty
    runs = int(np.count_nonzero(np.diff(np.concatenate([[0], flags.view(np.int8), [0]])) == 1))
    return ResonancePhaseSet(edges, flags, float(delta), float(flags.sum() * cell_w),
                             float(runs * cell_w), tuple(witnesses))


def block_eigenvalue_provider(spec: OperatorSpec, block_radius: int):
    """Brute-force branch provider: eigenvalues of H_{Q_b}(theta) per phase.

    Returns a callable mapping an array of phases to an array of shape
    (n_phases, |Q_b|) of local eigenvalues, computed with a batched
    self-adjoint solve.
    """
    if spec.dimension != 1:
        raise NotImplementedError("batched provider drives d=1 experiments")
    offsets = np.arange(-block_radius, block_radius + 1)
    m = len(offsets)
    omega = spec.frequency.omega[0]
    base = spec.epsilon * (np.abs(offsets[:, None] - offsets[None, :]) == 1)

    def provider(thetas):
        thetas = np.asarray(thetas, dtype=float).ravel()
        diag = np.real(spec.potential.evaluate(thetas[:, None] + offsets[None, :] * omega))
        mats = np.broadcast_to(base, (len(thetas), m, m)).copy()
        mats[:, np.arange(m), np.arange(m)] = diag
        return np.linalg.eigvalsh(mats)

    return provider


def potential_transversality_functions(v: Potential, shifts, phi: float):
    """Factors u_{x,y}(theta) = v(theta + x omega ...) style differences as callables.

    Helper for driving the product bound with exact Fourier derivatives:
    returns u(theta, order) evaluating d^l [v(theta + a) - v(theta + b)].
    """
    def make(a, b):
        def u(theta, order=0):
            theta = np.asarray(theta, dtype=float)
            return np.real(v.evaluate(theta + a, order) - v.evaluate(theta + b, order))
        return u
    return [make(a, b) for a, b in shifts]
