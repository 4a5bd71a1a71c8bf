"""Approximate projections and their corner subspaces inside an algebra.

A delta-projection is a Hermitian element P with ||P*P - P|| <= delta.  The
compression map C_{P,Q} = theta(L_P R_Q + R_Q L_P - 1) is an exactly
idempotent operator on the algebra whose image S_{P,Q} plays the role of the
corner P A Q; products compressed back into the corners, the Hilbert-space
structure of S_{P,Q} for one-dimensional Q, the induced operator
representations on those Hilbert spaces, and the equivalence classification of
one-dimensional projections are the raw material for rebuilding matrix
algebras.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numlin as nl
from .starcalc import EpsilonAlgebra


class ProjectionError(Exception):
    pass


class SearchExhausted(ProjectionError):
    pass


class SignDiverged(ProjectionError):
    pass


class MembershipViolation(ProjectionError):
    pass


class DegenerateGram(ProjectionError):
    pass


class SingularGram(ProjectionError):
    pass


class AmbiguousRank(ProjectionError):
    pass


@dataclass
class DeltaProjection:
    coords: np.ndarray
    delta: float
    norm: float

    def __post_init__(self):
        self.coords = np.real(np.asarray(self.coords)).astype(float)


@dataclass
class CompressionMap:
    p: DeltaProjection
    q: DeltaProjection
    matrix: np.ndarray          # exactly idempotent on algebra coordinates
    image_coords: np.ndarray    # orthonormal columns spanning S_{P,Q}
    lr_distance: float          # recorded || L_P R_Q - C ||, sampled
    idem_residual: float

    @property
    def rank(self) -> int:
        return self.image_coords.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def project_coords(self, x: np.ndarray) -> np.ndarray:
        """Coefficients of C(x) over the image basis."""
        return self.image_coords.conj().T @ (self.matrix @ x)

    def membership_residual(self, alg: EpsilonAlgebra, x: np.ndarray) -> float:
        nrm = alg.norm(x)
        if nrm <= 1e-14:
            return 0.0
        return alg.norm(self.matrix @ x - x) / nrm


@dataclass
class SubspaceHilbert:
    """S_{P,Q} for one-dimensional Q with its induced inner product."""

    basis_coords: np.ndarray    # columns: algebra coordinates of the basis
    gram: np.ndarray
    q_tilde: np.ndarray         # coordinates of the unit C_Q(Q)
    chol: np.ndarray            # lower Cholesky factor of gram

    @property
    def dim(self) -> int:
        return self.basis_coords.shape[1]

    def inner(self, y_coeff: np.ndarray, x_coeff: np.ndarray) -> complex:
        return complex(y_coeff.conj() @ self.gram @ x_coeff)


def measure_delta(alg: EpsilonAlgebra, coords: np.ndarray) -> float:
    return alg.norm(alg.star(coords, coords) - coords)


def star_sign(alg: EpsilonAlgebra, x: np.ndarray, max_iter: int = 60) -> np.ndarray:
    """Sign of an element under the algebra product, by Newton iteration.

    Inverses are taken through the left-multiplication operator; converges for
    spectrum away from the imaginary axis exactly as in a Banach algebra.
    """
    s = np.asarray(x, dtype=complex)
    prev = np.inf
    for _ in range(max_iter):
        res = alg.norm(alg.star(s, s) - alg.unit_coords)
        if res <= 1e-12:
            return s
        if res >= prev and res <= 1e-8:
            return s
        prev = res
        lmat = alg.lmul(s)
        try:
            s_inv = np.linalg.solve(lmat, alg.unit_coords)
        except np.linalg.LinAlgError as exc:
            raise SignDiverged(str(exc)) from exc
        s = 0.5 * (s + s_inv)
    raise SignDiverged("algebra sign iteration did not converge")


def _cubic_refine(alg: EpsilonAlgebra, coords: np.ndarray, max_iter: int = 60):
    """P <- 3 P*P - 2 P*(P*P) until the projection defect plateaus."""
    p = np.real(coords)
    delta = measure_delta(alg, p)
    for _ in range(max_iter):
        pp = alg.star(p, p)
        p_new = np.real(3 * pp - 2 * alg.star(p, pp))
        d_new = measure_delta(alg, p_new)
        if d_new >= delta * 0.99:
            if d_new < delta:
                p, delta = p_new, d_new
            break
        p, delta = p_new, d_new
    return p, delta


def find_nontrivial_projection(
    alg: EpsilonAlgebra,
    delta_target: float = 1e-8,
    max_retries: int = 30,
    seed: int = 0,
) -> DeltaProjection:
    """Search for a Hermitian P with small ||P*P - P|| and P, I-P both large.

    Alternates two starts: the ambient spectral projector of a random
    Hermitian algebra element split at its median eigenvalue, and the
    algebra-intrinsic sign function of the recentered element.  Either start
    is polished by the cubic iteration; the returned delta is measured.
    """
    if alg.dim <= 1:
        raise SearchExhausted("algebra is one dimensional")
    rng = np.random.default_rng(seed)
    unit = np.real(alg.unit_coords)
    best = None
    for attempt in range(max_retries):
        x = rng.standard_normal(alg.dim)
        x_mat = alg.element(x)
        try:
            if attempt % 2 == 0:
                w, u = np.linalg.eigh(nl.hermitian_part(x_mat))
                median = np.median(w)
                proj = (u * (w > median)) @ u.conj().T
                cand = np.real(np.array([nl.hs_inner(b, proj) for b in alg.basis]))
            else:
                lmat = alg.lmul(x)
                spec = np.sort(np.real(np.linalg.eigvals(lmat)))
                center = np.median(spec)
                gaps = np.diff(spec)
                if len(gaps) and gaps.max() > 0:
                    mid = len(spec) // 2
                    lo = max(mid - 2, 0)
                    window = gaps[lo: mid + 2]
                    k = lo + int(np.argmax(window))
                    center = 0.5 * (spec[k] + spec[k + 1])
                shifted = x - center * unit
                cand = np.real(0.5 * (unit + star_sign(alg, shifted)))
        except (SignDiverged, np.linalg.LinAlgError):
            continue
        cand, delta = _cubic_refine(alg, cand)
        nrm = alg.norm(cand)
        conrm = alg.norm(unit - cand)
        if delta <= delta_target and min(nrm, conrm) >= 0.5:
            return DeltaProjection(cand, delta, nrm)
        if best is None or delta < best[1]:
            best = (cand, delta, nrm)
    raise SearchExhausted(
        f"no nontrivial projection with defect <= {delta_target:.1e} after "
        f"{max_retries} attempts (best defect {best[1]:.2e})"
    )


def compression(
    alg: EpsilonAlgebra,
    p: DeltaProjection,
    q: DeltaProjection | None = None,
) -> CompressionMap:
    """Idempotent compression onto the corner S_{P,Q} (S_P when Q omitted)."""
    q = p if q is None else q
    lp = alg.lmul(p.coords)
    rq = alg.rmul(q.coords)
    op = lp @ rq + rq @ lp - np.eye(alg.dim)
    try:
        cmat = nl.theta(op)
    except (nl.NoConvergence, nl.SingularIterate) as exc:
        raise SignDiverged(
            "compression spectrum too close to the imaginary axis; the "
            "projection defects are too large"
        ) from exc
    idem_res = nl.operator_norm(cmat @ cmat - cmat)
    # an idempotent has singular values >= 1 on its range and ~0 elsewhere
    u_svd, s_svd, _ = np.linalg.svd(cmat)
    image = u_svd[:, : int(np.sum(s_svd > 0.5))]
    rng = np.random.default_rng(0)
    lr = lp @ rq
    dist = 0.0
    for _ in range(12):
        x = rng.standard_normal(alg.dim) + 1j * rng.standard_normal(alg.dim)
        dist = max(dist, alg.norm((lr - cmat) @ x) / alg.norm(x))
    return CompressionMap(p, q, cmat, image, dist, idem_res)


def compression_rank(
    alg: EpsilonAlgebra, p: DeltaProjection, q: DeltaProjection
) -> int:
    """dim S_{P,Q} decided through the spectrum of the compression generator.

    Eigenvalue indicators must sit outside the gray zone [0.1, 0.9]; inside it
    the data cannot support a rank decision and the call fails loudly.
    """
    lp = alg.lmul(p.coords)
    rq = alg.rmul(q.coords)
    op = 0.5 * (lp @ rq + rq @ lp)
    lam = np.real(np.linalg.eigvals(op))
    grey = np.sum((lam > 0.1) & (lam < 0.9))
    if grey:
        raise AmbiguousRank(
            f"{grey} eigenvalue indicator(s) inside the gray zone [0.1, 0.9]"
        )
    return int(np.sum(lam >= 0.9))


def compressed_product(
    alg: EpsilonAlgebra,
    c_pq: CompressionMap,
    c_qr: CompressionMap,
    c_pr: CompressionMap,
    x: np.ndarray,
    y: np.ndarray,
    membership_tol: float = 1e-8,
) -> np.ndarray:
    """X . Y = C_{P,R}(X * Y) for X in S_{P,Q}, Y in S_{Q,R}."""
    if c_pq.membership_residual(alg, x) > membership_tol:
        raise MembershipViolation("x is not in S_{P,Q}")
    if c_qr.membership_residual(alg, y) > membership_tol:
        raise MembershipViolation("y is not in S_{Q,R}")
    return c_pr.apply(alg.star(x, y))


def hilbert_structure(
    alg: EpsilonAlgebra,
    c_pq: CompressionMap,
    c_q: CompressionMap,
    pd_floor: float = 0.5,
) -> SubspaceHilbert:
    """Inner product on S_{P,Q} from Y^dag . X = <Y|X> Q~ for 1-dim Q."""
    if c_q.rank != 1:
        raise DegenerateGram(f"Q is not one dimensional (dim S_Q = {c_q.rank})")
    q_tilde = c_q.apply(c_q.q.coords)
    qt_sq = np.vdot(q_tilde, q_tilde)
    basis = c_pq.image_coords
    k = basis.shape[1]
    gram = np.zeros((k, k), dtype=complex)
    for a in range(k):
        for b in range(k):
            prod = c_q.apply(alg.star(np.conj(basis[:, a]), basis[:, b]))
            gram[a, b] = np.vdot(q_tilde, prod) / qt_sq
    gram = nl.hermitian_part(gram)
    w = np.linalg.eigvalsh(gram)
    if w[0] <= pd_floor * max(w[-1], 1e-30) or w[0] <= 0:
        raise DegenerateGram(
            f"Gram matrix not safely positive definite (eigs {w[0]:.3e}..{w[-1]:.3e})"
        )
    return SubspaceHilbert(basis, gram, q_tilde, np.linalg.cholesky(gram))


def h_map(
    alg: EpsilonAlgebra,
    z: np.ndarray,
    c_pr: CompressionMap,
    c_pq: CompressionMap,
    c_rq: CompressionMap,
    c_q: CompressionMap,
    hilb_pq: SubspaceHilbert,
    hilb_rq: SubspaceHilbert,
    c_qr: CompressionMap | None = None,
) -> np.ndarray:
    """Matrix of H(Z): S_{R,Q} -> S_{P,Q} in the Euclidean-orthonormal bases.

    H(Z)(X) is defined by pairing 2<Y|H(Z)(X)> = <(Y^dag . Z) . X + Y^dag . (Z . X)>
    against Y over a basis of S_{P,Q}; the scalar on the right is the
    Q~-component of the corner product.
    """
    if c_qr is None:
        c_qr = compression(alg, c_q.q, c_rq.p)
    q_tilde = hilb_pq.q_tilde
    qt_sq = np.vdot(q_tilde, q_tilde)
    kp = hilb_pq.dim
    kr = hilb_rq.dim
    coeff = np.zeros((kp, kr), dtype=complex)
    for b in range(kr):
        x = hilb_rq.basis_coords[:, b]
        zx = c_pq.apply(alg.star(z, x))
        for a in range(kp):
            y_dag = np.conj(hilb_pq.basis_coords[:, a])
            ydz = c_qr.apply(alg.star(y_dag, z))
            t1 = c_q.apply(alg.star(ydz, x))
            t2 = c_q.apply(alg.star(y_dag, zx))
            s = (np.vdot(q_tilde, t1) + np.vdot(q_tilde, t2)) / qt_sq
            coeff[a, b] = 0.5 * s
    try:
        raw = np.linalg.solve(hilb_pq.gram, coeff)
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    # orthonormalize both sides: matrix entry in Euclidean frames
    return hilb_pq.chol.conj().T @ raw @ np.linalg.inv(hilb_rq.chol.conj().T)


def classify_equivalence(
    alg: EpsilonAlgebra,
    projections: list[DeltaProjection],
) -> list[list[int]]:
    """Partition one-dimensional projections by dim S_{P_j, P_k} in {0, 1}."""
    n = len(projections)
    for j, p in enumerate(projections):
        if compression_rank(alg, p, p) != 1:
            raise DegenerateGram(f"projection {j} is not one dimensional")
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for j in range(n):
        for k in range(j + 1, n):
            rank = compression_rank(alg, projections[j], projections[k])
            if rank > 1:
                raise AmbiguousRank(
                    f"dim S_(P{j}, P{k}) = {rank} > 1 for one-dimensional projections"
                )
            if rank == 1:
                ra, rb = find(j), find(k)
                if ra != rb:
                    parent[rb] = ra
    groups: dict[int, list[int]] = {}
    for j in range(n):
        groups.setdefault(find(j), []).append(j)
    return sorted(groups.values(), key=lambda g: (-len(g), g[0]))
