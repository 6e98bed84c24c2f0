"""Schur-determinant root tracking in phase and energy.

For a block B with resonant subset A, the function of interest is

    s(theta, E) = det( (E - H(theta))_A  -  W_AO (E - H(theta))_O^{-1} W_OA ),

the determinant of the Schur complement of E - H_B(theta) onto A.  Its
theta-roots at fixed E* continue the potential's root structure to the next
scale; its E-roots at fixed theta are eigenvalues of H_B(theta) near E*
(Rellich branches).  Derivatives in both variables come from Jacobi's formula,
so the contour integrals downstream never rely on finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .errors import HypothesisViolation, InconsistencyError, NoCleanAnnulus, SingularBlock
from .green import eigensolve
from .lattice import OperatorSpec, Phase, Region, adjacency
from . import rootfind as rf


class SchurDeterminant:
    """s(theta, E) for a fixed block/inner-set split, with exact derivatives."""

    def __init__(self, spec: OperatorSpec, block: Region, inner_sites):
        self.spec = spec
        self.block = block
        self.inner_sites = tuple(tuple(p) for p in inner_sites)
        inner_idx = [block.index_of(p) for p in self.inner_sites]
        outer_idx = [i for i in range(len(block)) if i not in set(inner_idx)]
        self._ii = np.asarray(inner_idx, dtype=int)
        self._oo = np.asarray(outer_idx, dtype=int)
        self._adj = adjacency(block)
        self._omega_shift = block.coords() @ np.asarray(spec.frequency.omega)

    def _parts(self, theta: complex, E: complex):
        v = self.spec.potential.evaluate(theta + self._omega_shift.astype(complex))
        w = -self.spec.epsilon * self._adj.astype(complex)
        np.fill_diagonal(w, E - v)
        ii, oo = self._ii, self._oo
        return w[np.ix_(ii, ii)], w[np.ix_(ii, oo)], w[np.ix_(oo, ii)], w[np.ix_(oo, oo)]

    def schur_matrix(self, theta: complex, E: complex) -> np.ndarray:
        wii, wio, woi, woo = self._parts(theta, E)
        if woo.size:
            try:
                sol = np.linalg.solve(woo, woi)
            except np.linalg.LinAlgError as exc:
                raise SingularBlock(f"outer block singular at theta={theta}, E={E}") from exc
            return wii - wio @ sol
        return wii

    def value(self, theta: complex, E: complex) -> complex:
        return complex(np.linalg.det(self.schur_matrix(theta, E)))

    def _value_and_derivative(self, theta: complex, E: complex, variable: str) -> tuple:
        wii, wio, woi, woo = self._parts(theta, E)
        if woo.size:
            woo_inv = np.linalg.inv(woo)
            s = wii - wio @ woo_inv @ woi
        else:
            woo_inv = woo
            s = wii
        if variable == "E":
            # d/dE (E - H) = I
            ds = np.eye(len(self._ii), dtype=complex)
            if woo.size:
                ds += wio @ woo_inv @ woo_inv @ woi
        else:
            vp = self.spec.potential.evaluate(theta + self._omega_shift.astype(complex), order=1)
            dii = np.diag(-vp[self._ii])
            if woo.size:
                doo = np.diag(-vp[self._oo])
                ds = dii - wio @ (-woo_inv @ doo @ woo_inv) @ woi
            else:
                ds = dii
        det = complex(np.linalg.det(s))
        # Jacobi: d det S = det S * tr(S^{-1} dS); adjugate form survives det S ~ 0
        adj = det * np.linalg.inv(s) if abs(det) > 1e-280 else _adjugate(s)
        dval = complex(np.trace(adj @ ds))
        return det, dval

    def theta_function(self, Estar: complex) -> rf.AnalyticFunction:
        """s(., E*) as an analytic function of theta."""

        def f(z):
            z = np.asarray(z, dtype=complex)
            if z.ndim == 0:
                return self.value(complex(z), Estar)
            return np.array([self.value(complex(t), Estar) for t in z.ravel()]).reshape(z.shape)

        def df(z):
            z = np.asarray(z, dtype=complex)
            if z.ndim == 0:
                return self._value_and_derivative(complex(z), Estar, "theta")[1]
            return np.array(
                [self._value_and_derivative(complex(t), Estar, "theta")[1] for t in z.ravel()]
            ).reshape(z.shape)

        return rf.AnalyticFunction(f, df)

    def energy_function(self, theta_star: complex) -> rf.AnalyticFunction:
        """s(theta*, .) as an analytic function of E.

        The outer block is diagonalised once, making each energy evaluation
        O(n k^2) instead of an O(n^3) solve; an ill-conditioned eigenframe
        falls back to the direct path.
        """
        fast = self._energy_fast(theta_star)
        if fast is not None:
            return fast

        def f(z):
            z = np.asarray(z, dtype=complex)
            if z.ndim == 0:
                return self.value(theta_star, complex(z))
            return np.array([self.value(theta_star, complex(e)) for e in z.ravel()]).reshape(z.shape)

        def df(z):
            z = np.asarray(z, dtype=complex)
            if z.ndim == 0:
                return self._value_and_derivative(theta_star, complex(z), "E")[1]
            return np.array(
                [self._value_and_derivative(theta_star, complex(e), "E")[1] for e in z.ravel()]
            ).reshape(z.shape)

        return rf.AnalyticFunction(f, df)

    def _energy_fast(self, theta_star: complex):
        h = self.block_matrix(theta_star).astype(complex)
        ii, oo = self._ii, self._oo
        if oo.size == 0:
            h_ii = h[np.ix_(ii, ii)]

            def f0(z):
                z = np.asarray(z, dtype=complex)
                zs = np.atleast_1d(z)
                out = np.array([np.linalg.det(e * np.eye(len(ii)) - h_ii) for e in zs])
                return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)

            return rf.AnalyticFunction(f0)
        try:
            d, u = np.linalg.eig(h[np.ix_(oo, oo)])
            u_inv = np.linalg.inv(u)
        except np.linalg.LinAlgError:
            return None
        # Frobenius condition proxy; a full SVD here would dominate the setup
        if np.linalg.norm(u, "fro") * np.linalg.norm(u_inv, "fro") > 1e8:
            return None
        w_io = -self.spec.epsilon * self._adj[np.ix_(ii, oo)].astype(complex)
        w_oi = -self.spec.epsilon * self._adj[np.ix_(oo, ii)].astype(complex)
        p = w_io @ u
        q = u_inv @ w_oi
        h_ii = h[np.ix_(ii, ii)]
        eye = np.eye(len(ii), dtype=complex)

        def schur_of(e):
            return (e * eye - h_ii) - p @ (q / (e - d)[:, None])

        def f(z):
            z = np.asarray(z, dtype=complex)
            zs = np.atleast_1d(z)
            out = np.array([np.linalg.det(schur_of(complex(e))) for e in zs])
            return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)

        def df(z):
            z = np.asarray(z, dtype=complex)
            zs = np.atleast_1d(z)
            out = []
            for e in zs:
                s = schur_of(complex(e))
                ds = eye + p @ (q / (e - d)[:, None] ** 2)
                det = complex(np.linalg.det(s))
                adj = det * np.linalg.inv(s) if abs(det) > 1e-280 else _adjugate(s)
                out.append(complex(np.trace(adj @ ds)))
            out = np.array(out)
            return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)

        return rf.AnalyticFunction(f, df)

    def block_matrix(self, theta: complex) -> np.ndarray:
        v = self.spec.potential.evaluate(theta + self._omega_shift.astype(complex))
        h = self.spec.epsilon * self._adj.astype(complex)
        np.fill_diagonal(h, v)
        if abs(np.imag(theta)) == 0.0:
            return h.real
        return h


def _adjugate(s: np.ndarray) -> np.ndarray:
    n = s.shape[0]
    if n == 1:
        return np.ones((1, 1), dtype=complex)
    adj = np.zeros_like(s, dtype=complex)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(s, i, axis=0), j, axis=1)
            adj[j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return adj


@dataclass(frozen=True)
class ThetaRootSet:
    """theta-roots of a Schur determinant at fixed E*, count-checked."""

    roots: tuple  # complex theta values
    center: complex
    core_radius: float
    ext_radius: float
    expected_count: int
    Estar: complex
    residual: float


def theta_roots(sfun: rf.AnalyticFunction, center: complex, core_radius: float,
                ext_radius: float, expected_count: int, Estar: complex = 0.0,
                tol: float = 1e-11) -> ThetaRootSet:
    """Localise the theta-roots in the core disk and verify the count.

    A count different from expected (in the core, or extra roots appearing in
    the extension annulus) raises HypothesisViolation: at toy scales this is
    a meaningful outcome falsifying the configured ladder.
    """
    cluster = rf.localize_roots(sfun, rf.Contour.circle(center, core_radius), tol=tol)
    n_core = cluster.total_multiplicity
    n_ext = rf.count_zeros(sfun, rf.Contour.circle(center, ext_radius))
    if n_core != expected_count:
        raise HypothesisViolation(
            "theta-root count", f"core disk D({center:.6g},{core_radius:.3g})",
            expected=expected_count, observed=n_core,
        )
    if n_ext != expected_count:
        raise HypothesisViolation(
            "theta-root extension", "extra roots in the extension annulus",
            expected=expected_count, observed=n_ext,
        )
    roots = tuple(r for r, m in cluster.roots for _ in range(m))
    return ThetaRootSet(roots, center, core_radius, ext_radius, expected_count,
                        Estar, cluster.residual)


@dataclass(frozen=True)
class EnergyBranchSet:
    """E-roots of the Schur determinant in a disk, cross-checked against eigenvalues."""

    values: tuple
    Estar: complex
    radius: float
    cross_validation_error: float
    polynomial: np.ndarray  # monic coefficients, descending


def e_branches(sfun: rf.AnalyticFunction, Estar: complex, radius: float,
               block_matrix: np.ndarray, cross_tol: float = 1e-6) -> EnergyBranchSet:
    """Branch values in D(E*, radius) via power sums + Newton reconstruction.

    The roots are cross-validated against the eigenvalues of the block matrix
    inside the disk (matched in sorted order); disagreement beyond cross_tol
    raises InconsistencyError.
    """
    contour = rf.Contour.circle(Estar, radius)
    n = rf.count_zeros(sfun, contour)
    if n == 0:
        return EnergyBranchSet((), Estar, radius, 0.0, np.array([1.0 + 0j]))
    ps = rf.power_sums(sfun, contour, n)
    coeffs = rf.newton_to_elementary(ps, n)
    raw = np.roots(coeffs)
    polished = [rf._newton_polish(sfun, complex(z), 1e-13, max(1.0, abs(Estar))) for z in raw]
    eig = eigensolve(block_matrix).values
    inside = np.asarray([e for e in np.atleast_1d(eig) if abs(e - Estar) < radius])
    if len(inside) != n:
        raise InconsistencyError(
            f"{n} Schur roots vs {len(inside)} block eigenvalues in D({Estar:.6g},{radius:.3g})"
        )
    a = np.sort_complex(np.asarray(polished))
    b = np.sort_complex(inside.astype(complex))
    err = float(np.abs(a - b).max())
    if err > cross_tol:
        raise InconsistencyError(f"branch/eigensolve mismatch {err:.3e} > {cross_tol:.1e}")
    return EnergyBranchSet(tuple(a), Estar, radius, err, coeffs)


@dataclass(frozen=True)
class WindowSelection:
    delta_tilde: float
    annulus: tuple  # (inner, outer) radii around E*
    candidate_index: int
    eigenvalue_count_inside: int


def branch_window_select(block_matrix: np.ndarray, Estar: complex,
                         candidates) -> WindowSelection:
    """First window whose annulus {2 dt^2 < |E - E*| < dt^{1/2} / 2} is eigenvalue-free.

    Candidates are tried in order (the caller supplies the ladder's dyadic
    powers); all failing raises NoCleanAnnulus, which falsifies the toy ladder
    rather than the code.
    """
    eig = np.atleast_1d(eigensolve(block_matrix).values).astype(complex)
    dist = np.abs(eig - Estar)
    tried = []
    for j, dt in enumerate(candidates):
        inner, outer = 2.0 * dt ** 2, 0.5 * np.sqrt(dt)
        if inner >= outer:
            tried.append((dt, -1))
            continue
        in_annulus = int(np.sum((dist > inner) & (dist < outer)))
        tried.append((dt, in_annulus))
        if in_annulus == 0:
            count_inside = int(np.sum(dist <= inner))
            return WindowSelection(float(dt), (float(inner), float(outer)), j, count_inside)
    raise NoCleanAnnulus(
        "branch window", f"every candidate annulus contains an eigenvalue: {tried}",
    )


@dataclass(frozen=True)
class WeierstrassComparison:
    """Two-sided ratio test |s| / |prod (z - root)| over a sample of the region."""

    ratio_min: float
    ratio_max: float
    delta_class: float
    c_hat: float
    samples: int

    @property
    def passed(self) -> bool:
        lo = self.delta_class / self.c_hat
        hi = self.c_hat / self.delta_class
        return lo <= self.ratio_min and self.ratio_max <= hi


def weierstrass_compare(sfun, roots, center: complex, radius: float,
                        delta_class: float, c_hat: float = 1e3,
                        min_samples: int = 1000) -> WeierstrassComparison:
    """Sample the comparability ratio on a grid of the disk (roots excluded)."""
    per_axis = max(int(np.ceil(np.sqrt(min_samples / 0.785))), int(40 * 2 * radius) + 2)
    t = np.linspace(-radius, radius, per_axis)
    re, im = np.meshgrid(t, t)
    z = center + re + 1j * im
    z = z[(re ** 2 + im ** 2) <= radius ** 2].ravel()
    prod = np.ones_like(z)
    for r in roots:
        prod *= z - r
    keep = np.abs(prod) > 1e-8 ** max(1, len(tuple(roots)))
    z, prod = z[keep], prod[keep]
    svals = np.asarray(sfun(z), dtype=complex)
    ratios = np.abs(svals) / np.abs(prod)
    return WeierstrassComparison(float(ratios.min()), float(ratios.max()),
                                 delta_class, c_hat, int(z.size))


@dataclass(frozen=True)
class DriftRow:
    order: int
    drift: float  # max over coefficients of |d^l (a_k - b_k)|
    bound: float

    @property
    def ok(self) -> bool:
        return self.drift <= self.bound


@dataclass(frozen=True)
class DriftReport:
    rows: tuple
    budget: float

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)


def _cauchy_derivatives(fn, center: complex, radius: float, order_max: int,
                        nodes: int = 256):
    """d^l f(center) for l = 0..order_max from FFT coefficients on a circle.

    fn maps an array of points to an array of values (last axis = points).
    """
    t = np.arange(nodes) / nodes
    z = center + radius * np.exp(2j * np.pi * t)
    vals = np.asarray(fn(z), dtype=complex)
    coefs = np.fft.fft(vals, axis=-1) / nodes
    ls = np.arange(order_max + 1)
    fact = np.array([float(math.factorial(l)) for l in ls])
    return coefs[..., : order_max + 1] * fact / radius ** ls


def coefficient_drift(coeff_fn_p, coeff_fn_q, center: complex, radius: float,
                      order_max: int, budget: float) -> DriftReport:
    """Cauchy-integral estimates of |d^l (a_k - b_k)| against l! radius^{-l} budget.

    coeff_fn_p / coeff_fn_q map an array of theta values to arrays of monic
    polynomial coefficients, shape (n_coeffs, n_theta).
    """

    def diff(z):
        return np.asarray(coeff_fn_p(z)) - np.asarray(coeff_fn_q(z))

    ders = _cauchy_derivatives(diff, center, radius, order_max)
    rows = []
    for l in range(order_max + 1):
        drift = float(np.abs(ders[..., l]).max()) if ders.size else 0.0
        bound = math.factorial(l) * radius ** (-l) * budget
        rows.append(DriftRow(l, drift, float(bound)))
    return DriftReport(tuple(rows), budget)


@dataclass(frozen=True)
class StabilityReport:
    matched_distance: float  # sqrt(sum |mu_pi(j) - lambda_j|^2) under optimal matching
    bound: float  # sqrt(N) * ||H2 - H1||_F

    @property
    def ok(self) -> bool:
        return self.matched_distance <= self.bound * (1 + 1e-9) + 1e-300


def eigenvalue_stability(h1: np.ndarray, h2: np.ndarray) -> StabilityReport:
    """Optimal-assignment spectral variation against the Frobenius bound.

    Requires h1 normal (the self-adjoint path of the induction); h2 arbitrary
    of the same size.
    """
    h1, h2 = np.asarray(h1), np.asarray(h2)
    if h1.shape != h2.shape:
        raise ValueError("matrices must have equal shapes")
    n = h1.shape[0]
    lam = np.atleast_1d(eigensolve(h1).values).astype(complex)
    mu = np.atleast_1d(eigensolve(h2, self_adjoint=False).values).astype(complex)
    cost = np.abs(lam[:, None] - mu[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    matched = float(np.sqrt(cost[rows, cols].sum()))
    bound = float(np.sqrt(n) * np.linalg.norm(h2 - h1, "fro"))
    return StabilityReport(matched, bound)
