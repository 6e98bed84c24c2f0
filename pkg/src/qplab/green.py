"""Finite-volume Green's functions, Schur complements and norm/decay estimates.

The Green's function of a restriction is G_Lambda^{theta,E} = (H_Lambda(theta) - E)^{-1}.
Schur complements are taken of the shifted matrix E - H so that the determinant
identity det A = det S * det A_3 holds exactly for the block split used by the
scale induction.  Determinants are tracked in log-magnitude + phase form to
stay finite on boxes with hundreds of sites.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InconsistencyError, RegimeError, SingularBlock, SingularWindow
from .lattice import OperatorSpec, Phase, Region, assemble_restriction, boundary

CONDITION_LIMIT = 1e12  # double precision reliability boundary
_EXACT_NORM_CUTOFF = 600  # full SVD below this size, power iteration above


def spectral_norm(mat: np.ndarray, tol: float = 0.01, max_iter: int = 500) -> float:
    """2-norm of a dense matrix; exact below the size cutoff, else power iteration."""
    n = max(mat.shape)
    if n <= _EXACT_NORM_CUTOFF:
        return float(np.linalg.norm(mat, 2))
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(mat.shape[1])
    x /= np.linalg.norm(x)
    prev = 0.0
    mh = mat.conj().T
    for _ in range(max_iter):
        y = mat @ x
        x = mh @ y
        s = np.linalg.norm(x)
        if s == 0.0:
            return 0.0
        x /= s
        est = np.sqrt(s)
        if abs(est - prev) <= tol * est:
            return float(est)
        prev = est
    return float(prev)


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of log |G(x,y)| against ||x-y||_1."""

    rate: float
    intercept: float
    residual: float
    min_distance_used: float
    pairs_used: int


def fit_offdiagonal_decay(mat: np.ndarray, region: Region, min_distance: float = 1.0) -> DecayFit:
    c = region.coords()
    dist = np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2)
    mask = dist >= min_distance
    if not mask.any():
        return DecayFit(np.inf, 0.0, 0.0, min_distance, 0)
    d = dist[mask].astype(float)
    vals = np.abs(np.asarray(mat)[mask])
    logs = np.log(np.clip(vals, 1e-300, None))
    # drop entries at the numerical floor: they carry no decay information
    keep = vals > 1e-280
    if keep.sum() < 2 or np.ptp(d[keep]) == 0:
        return DecayFit(np.inf, 0.0, 0.0, min_distance, int(keep.sum()))
    A = np.vstack([d[keep], np.ones(keep.sum())]).T
    sol, res, *_ = np.linalg.lstsq(A, logs[keep], rcond=None)
    slope, intercept = sol
    pred = A @ sol
    rms = float(np.sqrt(np.mean((pred - logs[keep]) ** 2)))
    return DecayFit(float(-slope), float(intercept), rms, min_distance, int(keep.sum()))


@dataclass(frozen=True)
class GreenResult:
    """Inverse of (H_Lambda(theta) - E) with norm and decay metadata."""

    matrix: np.ndarray
    op_norm: float
    decay_fit: DecayFit
    region: Region
    energy: complex

    def entry(self, x, y) -> complex:
        return self.matrix[self.region.index_of(x), self.region.index_of(y)]


def _nearest_eigenvalue_distance(a: np.ndarray) -> float:
    """Smallest singular value of H - E; equals the spectral gap for normal H."""
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def green(spec: OperatorSpec, theta: Phase, E: complex, region: Region,
          tolerance: float = 1.0 / CONDITION_LIMIT, min_distance: float = 1.0) -> GreenResult:
    """Green's function via pivoted LU; raises SingularWindow near the spectrum."""
    a = assemble_restriction(spec, theta, region, energy=E)
    try:
        lu, piv = sla.lu_factor(a)
    except (sla.LinAlgError, ValueError) as exc:  # pragma: no cover - defensive
        raise SingularWindow(f"factorisation failed: {exc}") from exc
    diag = np.abs(np.diag(lu))
    if diag.min() == 0.0:
        raise SingularWindow("exactly singular shift", nearest_eigenvalue_distance=0.0)
    g = sla.lu_solve((lu, piv), np.eye(len(region), dtype=a.dtype))
    norm_g = spectral_norm(g)
    cond = norm_g * spectral_norm(a)
    if cond > 1.0 / tolerance:
        raise SingularWindow(
            f"condition number {cond:.3e} above {1.0 / tolerance:.1e}",
            nearest_eigenvalue_distance=_nearest_eigenvalue_distance(a),
        )
    fit = fit_offdiagonal_decay(g, region, min_distance=min_distance)
    return GreenResult(g, norm_g, fit, region, complex(E))


def _logdet(mat: np.ndarray) -> complex:
    """log det in log-magnitude + phase form: Re = log|det|, Im = arg det."""
    sign, logabs = np.linalg.slogdet(mat)
    if sign == 0:
        return complex(-np.inf, 0.0)
    return complex(logabs, np.angle(sign) if np.iscomplexobj(mat) else (0.0 if sign > 0 else np.pi))


@dataclass(frozen=True)
class SchurDecomposition:
    """Block reduction of a square matrix onto an inner index set.

    With A = [[A1, A2^T], [A2, A3]] (inner block A1), the complement is
    S = A1 - A2^T A3^{-1} A2; s_det = det S and logdet_outer = log det A3.
    """

    inner_indices: tuple
    outer_indices: tuple
    s_matrix: np.ndarray
    s_det: complex
    s_logdet: complex
    logdet_outer: complex
    gamma_coupling_norm: float


def schur_complement(matrix: np.ndarray, inner_indices) -> SchurDecomposition:
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    inner = tuple(int(i) for i in inner_indices)
    outer = tuple(i for i in range(n) if i not in set(inner))
    a1 = matrix[np.ix_(inner, inner)]
    a2 = matrix[np.ix_(outer, inner)]
    a2t = matrix[np.ix_(inner, outer)]
    a3 = matrix[np.ix_(outer, outer)]
    if outer:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(a3)
        except (sla.LinAlgError, ValueError) as exc:
            raise SingularBlock(f"outer block {outer} not factorisable: {exc}") from exc
        if np.abs(np.diag(lu)).min() <= 1e-300:
            raise SingularBlock(f"outer block {outer} is singular")
        s = a1 - a2t @ sla.lu_solve((lu, piv), a2)
        logdet_outer = _logdet(a3)
    else:
        s = a1.copy()
        logdet_outer = complex(0.0)
    s_logdet = _logdet(s)
    s_det = np.exp(s_logdet) if np.isfinite(s_logdet.real) else 0.0
    coupling = float(np.linalg.norm(a2, 2)) if (outer and inner) else 0.0
    return SchurDecomposition(inner, outer, s, complex(s_det), s_logdet, logdet_outer, coupling)


@dataclass(frozen=True)
class SchurIdentityReport:
    det_identity_residual: float
    norm_s_inv: float
    norm_a_inv: float
    sandwich_upper: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def verify_schur_identities(dec: SchurDecomposition, full_matrix: np.ndarray) -> SchurIdentityReport:
    """Check det A = det S det A3 and the resolvent norm sandwich.

    The determinant identity is compared in log space; the sandwich is
    ||S^{ -1}|| <= ||A^{-1}|| <= (1+||A2||)^2 (1+||A3^{-1}||)^2 (1+||S^{-1}||).
    """
    full_matrix = np.asarray(full_matrix)
    logdet_a = _logdet(full_matrix)
    lhs = logdet_a
    rhs = dec.s_logdet + dec.logdet_outer
    if np.isfinite(lhs.real) and np.isfinite(rhs.real):
        residual = abs(np.exp(lhs - rhs) - 1.0)
    else:
        residual = 0.0 if lhs.real == rhs.real else np.inf
    a_inv = np.linalg.inv(full_matrix)
    s_inv = np.linalg.inv(dec.s_matrix)
    outer = dec.outer_indices
    a3 = full_matrix[np.ix_(outer, outer)]
    a3_inv_norm = float(np.linalg.norm(np.linalg.inv(a3), 2)) if outer else 0.0
    ns = float(np.linalg.norm(s_inv, 2))
    na = float(np.linalg.norm(a_inv, 2))
    upper = (1 + dec.gamma_coupling_norm) ** 2 * (1 + a3_inv_norm) ** 2 * (1 + ns)
    tol = 1e-9 * max(1.0, ns, na)
    return SchurIdentityReport(
        det_identity_residual=float(residual),
        norm_s_inv=ns,
        norm_a_inv=na,
        sandwich_upper=float(upper),
        lower_ok=ns <= na + tol,
        upper_ok=na <= upper * (1 + 1e-9) + tol,
    )


@dataclass(frozen=True)
class NeumannReport:
    """Perturbative (nonresonant) Green's function check against the gap profile."""

    passed: bool
    norm_value: float
    norm_bound: float
    c_hat: float
    gamma0: float
    fitted_rate: float
    worst_offdiag_ratio: float
    gap_violations: tuple

    @property
    def norm_margin(self) -> float:
        return self.norm_bound - self.norm_value


def neumann_nonresonant_check(spec: OperatorSpec, theta: Phase, E: complex, region: Region,
                              delta: float, M_power: int) -> NeumannReport:
    """Verify the nonresonant regime bounds on a box with diagonal gaps >= delta^M.

    The norm bound is ||G|| <= 10 * C_hat * delta^{-M} with C_hat the empirical
    comparability constant delta^M / (min diagonal gap); the off-diagonal bound
    is |G(x,y)| <= e^{-gamma_0 ||x-y||_1} with gamma_0 = |ln eps| / 2.
    """
    if spec.epsilon >= delta ** M_power:
        raise RegimeError(
            f"epsilon={spec.epsilon} not below delta^M={delta ** M_power}: Neumann regime void"
        )
    gaps = np.abs(spec.potential.evaluate(spec.phases(theta, region)) - E)
    floor = delta ** M_power
    violations = tuple(p for p, gap in zip(region.points, gaps) if gap < floor)
    c_hat = max(1.0, floor / float(gaps.min()))
    g = green(spec, theta, E, region)
    bound = 10.0 * c_hat * delta ** (-M_power)
    gamma0 = 0.5 * abs(np.log(spec.epsilon)) if spec.epsilon > 0 else np.inf
    c = region.coords()
    dist = np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2)
    off = dist >= 1
    if spec.epsilon == 0.0 or not off.any():
        worst = 0.0
        rate = np.inf
    else:
        ratios = np.abs(g.matrix[off]) * np.exp(gamma0 * dist[off])
        worst = float(ratios.max())
        rate = g.decay_fit.rate
    passed = (g.op_norm <= bound) and (worst <= 1.0 + 1e-9) and not violations
    return NeumannReport(passed, g.op_norm, bound, c_hat, float(gamma0), rate, worst, violations)


def resolvent_patch_check(outer_green: GreenResult, inner_green: GreenResult,
                          epsilon: float, boundary_pairs=None, max_samples: int = 4096,
                          seed: int = 0) -> float:
    """Max residual of the geometric resolvent identity on nested regions.

    For x in the inner region V inside Lambda:
    G_Lambda(x,y) = G_V(x,y) chi_V(y) - eps * sum_{(w,w') in del_Lambda V} G_V(x,w) G_Lambda(w',y).
    """
    lam, v = outer_green.region, inner_green.region
    if not v.issubset(lam):
        raise ValueError("inner region must be contained in the outer region")
    pairs = boundary_pairs if boundary_pairs is not None else boundary(v, lam)
    gi, go = inner_green.matrix, outer_green.matrix
    iv = [v.index_of(p) for p in v.points]
    io = [lam.index_of(p) for p in v.points]  # inner points, outer indexing
    correction = np.zeros((len(v), len(lam)), dtype=np.result_type(gi, go))
    for w, wp in pairs:
        correction += np.outer(gi[:, v.index_of(w)], go[lam.index_of(wp), :])
    chi = np.zeros((len(v), len(lam)), dtype=go.dtype)
    inner_cols = {lam.index_of(p): v.index_of(p) for p in v.points}
    for col, vcol in inner_cols.items():
        chi[:, col] = gi[np.asarray(iv), vcol]
    resid = go[np.asarray(io), :] - chi + epsilon * correction
    rng = np.random.default_rng(seed)
    flat = np.abs(resid).ravel()
    if flat.size > max_samples:
        flat = flat[rng.choice(flat.size, max_samples, replace=False)]
        flat = np.concatenate([flat, [np.abs(resid).max()]])  # keep the true max
    return float(np.max(flat))


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray | None


def eigensolve(matrix: np.ndarray, self_adjoint: bool | None = None,
               vectors: bool = False) -> EigenResult:
    """Full spectrum; the self-adjoint path returns ascending reals and checks
    orthonormality of the eigenvector frame to 1e-8."""
    matrix = np.asarray(matrix)
    if self_adjoint is None:
        self_adjoint = bool(np.allclose(matrix, matrix.conj().T, atol=1e-12))
    try:
        if self_adjoint:
            if vectors:
                w, v = np.linalg.eigh(matrix)
                gram = v.conj().T @ v
                defect = np.linalg.norm(gram - np.eye(gram.shape[0]), 2)
                if defect > 1e-8:
                    raise InconsistencyError(f"eigenvector frame not orthonormal: {defect:.2e}")
                return EigenResult(w, v)
            return EigenResult(np.linalg.eigvalsh(matrix), None)
        if vectors:
            w, v = np.linalg.eig(matrix)
            order = np.argsort(w.real)
            return EigenResult(w[order], v[:, order])
        w = np.linalg.eigvals(matrix)
        return EigenResult(np.sort_complex(w), None)
    except np.linalg.LinAlgError as exc:
        raise SingularWindow(f"eigensolver did not converge: {exc}") from exc
