"""The four multiplication tables behind cross-product geometry.

A k-fold cross product on R^n is stored as its structure constants on the
lexicographic k-subset basis, together with routines to check the defining
axioms, build the associated degree-(k+1) calibration form, and measure how
far a linear map is from being (conformally) cross-product preserving.

Only four (n, k) families exist: (n, n-1) Hodge star, (2r, 1) complex
structure, (7, 2) from a definite 3-form, and (8, 3) from its 8-dimensional
product analogue.  The 7- and 8-dimensional tables use one fixed sign
convention, written out in ``G2_FORM`` and ``SPIN7_FORM``; any quantity that
depends on individual components is convention-relative.  Validity of the
tables is not assumed anywhere: the test suite re-derives the axioms by
brute force before any component-level value is trusted.
"""

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .xalg import frobenius, exterior_power, lex_subsets, merge_sign, subset_index

#: Definite 3-form on R^7, 0-based index triples -> component.
G2_FORM = {
    (0, 1, 2): 1.0,
    (0, 3, 4): 1.0,
    (0, 5, 6): 1.0,
    (1, 3, 5): 1.0,
    (1, 4, 6): -1.0,
    (2, 3, 6): -1.0,
    (2, 4, 5): -1.0,
}


def _shift(subset, by):
    return tuple(i + by for i in subset)


def _seven_dim_dual():
    """Hodge dual of G2_FORM in R^7 (standard orientation)."""
    out = {}
    for triple, val in G2_FORM.items():
        rest = tuple(i for i in range(7) if i not in triple)
        sign, _ = merge_sign(triple, rest)
        out[rest] = sign * val
    return out


#: Cayley 4-form on R^8 = R_theta x R^7: e^0 ^ phi + psi with indices shifted.
SPIN7_FORM = {
    **{(0,) + _shift(t, 1): v for t, v in G2_FORM.items()},
    **{_shift(q, 1): v for q, v in _seven_dim_dual().items()},
}

LEGAL_PAIRINGS = (
    ("HodgeStar", "n in 3..8, k = n-1"),
    ("Complex", "n even, k = 1"),
    ("G2", "n = 7, k = 2"),
    ("Spin7", "n = 8, k = 3"),
)


@dataclass(frozen=True)
class CrossProduct:
    """k-fold cross product on R^n as structure constants.

    ``constants[s, i]`` is the e_i component of P applied to the s-th
    lexicographic basis k-vector.  Antisymmetry in the lower indices is
    implicit in the basis indexing.
    """

    n: int
    k: int
    constants: np.ndarray
    type_tag: str

    def __post_init__(self):
        c = np.asarray(self.constants, dtype=float)
        if c.shape != (comb(self.n, self.k), self.n):
            raise ValueError("constants must have shape (C(n,k), n)")
        object.__setattr__(self, "constants", c)

    def __call__(self, *vectors):
        return apply_vcp(self, *vectors)


@dataclass(frozen=True)
class Calibration:
    """Alternating degree-(k+1) form on R^n, lexicographic components."""

    n: int
    degree: int
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (comb(self.n, self.degree),):
            raise ValueError("components must have length C(n, degree)")
        object.__setattr__(self, "components", c)

    def __call__(self, *vectors):
        if len(vectors) != self.degree:
            raise ValueError(f"form of degree {self.degree} "
                             f"applied to {len(vectors)} vectors")
        return float(decomposable_coeffs(np.asarray(vectors, dtype=float))
                     @ self.components)

    def as_dict(self):
        """Nonzero components keyed by 0-based index tuple."""
        subs = lex_subsets(self.n, self.degree)
        return {subs[i]: v for i, v in enumerate(self.components) if v != 0.0}


def decomposable_coeffs(vectors):
    """Lexicographic coefficients of v_1 ^ ... ^ v_k, batched.

    vectors: (..., k, n) stacked rows.  Returns (..., C(n,k)) via k x k
    minors, which is exact for the sizes used here (n <= 8).
    """
    vectors = np.asarray(vectors, dtype=float)
    k, n = vectors.shape[-2], vectors.shape[-1]
    if k == 1:
        return vectors[..., 0, :]
    subsets = lex_subsets(n, k)
    blocks = np.stack([vectors[..., :, list(s)] for s in subsets], axis=-3)
    return np.linalg.det(blocks)


def _vcp_from_components(n, k, form, tag):
    """Structure constants from a (k+1)-form given as {tuple: value}."""
    constants = np.zeros((comb(n, k), n))
    idx = subset_index(n, k)
    for sub, row in idx.items():
        for i in range(n):
            if i in sub:
                continue
            sign, merged = merge_sign(sub, (i,))
            constants[row, i] = sign * form.get(merged, 0.0)
    return CrossProduct(n, k, constants, tag)


def builtin_vcp(type_tag, n):
    """One of the four built-in cross products on R^n."""
    if type_tag == "HodgeStar":
        if not 3 <= n <= 8:
            raise ValueError(f"illegal pairing ({type_tag}, {n})")
        return _vcp_from_components(n, n - 1, {tuple(range(n)): 1.0}, type_tag)
    if type_tag == "Complex":
        if n % 2 != 0 or n < 2:
            raise ValueError(f"illegal pairing ({type_tag}, {n})")
        omega = {(2 * i, 2 * i + 1): 1.0 for i in range(n // 2)}
        return _vcp_from_components(n, 1, omega, type_tag)
    if type_tag == "G2":
        if n != 7:
            raise ValueError(f"illegal pairing ({type_tag}, {n})")
        return _vcp_from_components(7, 2, G2_FORM, type_tag)
    if type_tag == "Spin7":
        if n != 8:
            raise ValueError(f"illegal pairing ({type_tag}, {n})")
        return _vcp_from_components(8, 3, SPIN7_FORM, type_tag)
    raise ValueError(f"unknown cross product type {type_tag!r}")


def apply_vcp(P, *vectors):
    """Evaluate P(v_1 ^ ... ^ v_k); multilinear, antisymmetric."""
    if len(vectors) != P.k:
        raise ValueError(f"{P.k}-fold product applied to {len(vectors)} vectors")
    vs = np.asarray(vectors, dtype=float)
    if vs.shape[-1] != P.n:
        raise ValueError("vector dimension mismatch")
    return decomposable_coeffs(vs) @ P.constants


def tuple_defects(P, vectors):
    """Axiom defects of one or a batch of argument tuples.

    vectors: (..., k, n).  Returns (orth, metric) arrays of shape (...,):
    the largest inner product of P(v_1 ^ ... ^ v_k) with any argument, and
    the mismatch between |P(...)|^2 and |v_1 ^ ... ^ v_k|^2.
    """
    vs = np.asarray(vectors, dtype=float)
    coeffs = decomposable_coeffs(vs)
    image = coeffs @ P.constants
    orth = np.abs(np.einsum("...i,...ki->...k", image, vs)).max(axis=-1)
    metric = np.abs(np.einsum("...i,...i->...", image, image)
                    - np.einsum("...c,...c->...", coeffs, coeffs))
    return orth, metric


def axiom_defect(P, samples=10_000, seed=0):
    """Worst axiom defects over all basis tuples plus seeded random tuples.

    Random tuples are drawn from the unit sphere so the reported maxima are
    directly comparable to double-precision roundoff.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    eye = np.eye(P.n)
    basis = np.array([eye[list(s)] for s in combinations(range(P.n), P.k)])
    rng = np.random.default_rng(seed)
    rand = rng.standard_normal((samples, P.k, P.n))
    rand /= np.linalg.norm(rand, axis=2, keepdims=True)
    tuples = np.concatenate([basis, rand], axis=0)
    orth, metric = tuple_defects(P, tuples)
    return float(orth.max()), float(metric.max())


def calibration_from_vcp(P):
    """Degree-(k+1) form alpha(v_1,...,v_{k+1}) = <P(v_1^...^v_k), v_{k+1}>."""
    subs = lex_subsets(P.n, P.k + 1)
    idx = subset_index(P.n, P.k)
    comps = np.array([P.constants[idx[s[:-1]], s[-1]] for s in subs])
    return Calibration(P.n, P.k + 1, comps)


def vcp_from_calibration(alpha):
    """Inverse of calibration_from_vcp under the Euclidean metric.

    The caller is responsible for checking the axioms (via axiom_defect);
    an arbitrary form does not give a cross product.
    """
    form = alpha.as_dict()
    return _vcp_from_components(alpha.n, alpha.degree - 1, form, "FromForm")


def comass_estimate(alpha, samples=10_000, seed=0):
    """Largest value of alpha on sampled orthonormal frames (comass proxy)."""
    rng = np.random.default_rng(seed)
    batch = rng.standard_normal((samples, alpha.n, alpha.degree))
    q, _ = np.linalg.qr(batch)
    frames = q.transpose(0, 2, 1)  # (samples, degree, n) orthonormal rows
    vals = decomposable_coeffs(frames) @ alpha.components
    return float(np.abs(vals).max())


def fundamental_identity_defect(P, u_vectors, w, gram_tol=1e-8):
    """Residual of the double-application identity.

    For linearly independent u_1,...,u_{k-1} and any w,

        P(u ^ P(u ^ w)) + |u_1 ^ ... ^ u_{k-1}|^2 proj_{U^perp} w = 0

    where u abbreviates u_1 ^ ... ^ u_{k-1} and U = span(u_i).  Returns the
    norm of the left side; the projection is computed by Gram-Schmidt.  For
    k = 1 the identity degenerates to |P(P(w)) + w|.
    """
    w = np.asarray(w, dtype=float)
    us = [np.asarray(u, dtype=float) for u in u_vectors]
    if len(us) != P.k - 1:
        raise ValueError(f"expected {P.k - 1} spanning vectors, got {len(us)}")
    if not us:
        return float(np.linalg.norm(apply_vcp(P, apply_vcp(P, w)) + w))
    mat = np.array(us)
    unit = mat / np.linalg.norm(mat, axis=1, keepdims=True)
    if np.linalg.det(unit @ unit.T) < gram_tol:
        raise ValueError("spanning vectors are numerically dependent")
    inner = apply_vcp(P, *us, w)
    lhs = apply_vcp(P, *us, inner)
    q, _ = np.linalg.qr(mat.T)
    proj = w - q @ (q.T @ w)
    wedge_sq = np.linalg.det(mat @ mat.T)
    return float(np.linalg.norm(lhs + wedge_sq * proj))


def calibrated_defect(alpha, frame, ortho_tol=1e-8):
    """1 - alpha(frame) for an ordered orthonormal frame; 0 iff calibrated."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (alpha.degree, alpha.n):
        raise ValueError("frame must be (degree, n)")
    gram = frame @ frame.T
    if np.abs(gram - np.eye(alpha.degree)).max() > ortho_tol:
        raise ValueError("frame is not orthonormal to tolerance")
    return float(1.0 - alpha(*frame))


def smith_defect_linear(A, P, Q, lam=None):
    """Aggregate residual of the conformal cross-product-preservation law.

    For A : R^n -> R^m, a Hodge product P on the domain, and a fold-(n-1)
    product Q on the target, returns the Frobenius norm over all basis
    (n-1)-vectors of

        Q(L^{n-1} A) - lam^{n-2} A P

    with the scale fixed to lam = |A| / sqrt(n) unless overridden (lam = 1
    tests exact preservation).  Zero exactly on conformally preserving maps.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    if P.n != n or P.k != n - 1:
        raise ValueError("domain product must be the Hodge product on R^n")
    if Q.n != m or Q.k != n - 1:
        raise ValueError(f"target product must have fold {n - 1} on R^{m}")
    if lam is None:
        lam = frobenius(A) / np.sqrt(n)
    if n == 2:
        lhs = Q.constants.T @ A  # L^1 A = A on the vector basis
    else:
        lhs = Q.constants.T @ exterior_power(A, n - 1)
    rhs = lam ** (n - 2) * (A @ P.constants.T)
    return float(np.linalg.norm(lhs - rhs))


def generalized_calibration_gap(A, Q, frame=None):
    """Slack in the scale-normalized calibration bound for a linear map.

    Returns (1/sqrt(n))^n |A|^n - alpha_Q(A u_1, ..., A u_n) over an oriented
    orthonormal domain frame (default: standard basis).  Nonnegative always;
    zero exactly when A is conformally cross-product preserving.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    if Q.n != m or Q.k != n - 1:
        raise ValueError(f"target product must have fold {n - 1} on R^{m}")
    if frame is None:
        frame = np.eye(n)
    alpha = calibration_from_vcp(Q)
    images = (A @ np.asarray(frame, dtype=float).T).T
    pulled = float(decomposable_coeffs(images) @ alpha.components)
    return float(n ** (-n / 2) * frobenius(A) ** n - pulled)


# ---------------------------------------------------------------------------
# plain-text constant tables (external interface)

def dump_table(P):
    """Serialize nonzero structure constants as plain structured text.

    Line format: ``dim fold`` header, then one ``j_1 ... j_k i value`` line
    per nonzero entry, all indices 1-based.
    """
    lines = [f"{P.n} {P.k} {P.type_tag}"]
    for row, sub in enumerate(lex_subsets(P.n, P.k)):
        for i in range(P.n):
            v = float(P.constants[row, i])
            if v != 0.0:
                idx = " ".join(str(j + 1) for j in sub)
                lines.append(f"{idx} {i + 1} {v!r}")
    return "\n".join(lines) + "\n"


def load_table(text):
    """Parse a table produced by dump_table (or an alternate convention)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    n, k = int(head[0]), int(head[1])
    tag = head[2] if len(head) > 2 else "External"
    constants = np.zeros((comb(n, k), n))
    idx = subset_index(n, k)
    for ln in lines[1:]:
        parts = ln.split()
        sub = tuple(int(p) - 1 for p in parts[:k])
        i = int(parts[k]) - 1
        constants[idx[sub], i] = float(parts[k + 1])
    return CrossProduct(n, k, constants, tag)


# ---------------------------------------------------------------------------
# seeded sampling helpers shared by tests and the verification suites

def random_unit_vectors(rng, n, count):
    v = rng.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_orthonormal_frame(rng, n, k):
    """k orthonormal rows in R^n, Haar-ish via QR."""
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q.T


def random_rotation(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_gray_map(rng, Q, n):
    """Random cross-product preserving isometric injection R^n -> R^{Q.n}.

    Columns are an orthonormal (n-1)-frame completed by the cross product of
    its span, which makes the image plane calibrated.
    """
    frame = random_orthonormal_frame(rng, Q.n, n - 1)
    last = apply_vcp(Q, *frame)
    return np.column_stack([*frame, last])
