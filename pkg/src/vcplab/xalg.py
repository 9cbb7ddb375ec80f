"""Exact exterior algebra and dense linear-map utilities in dimensions <= 8.

Multivectors are stored on the lexicographic k-subset basis of {1..n} and
linear maps are plain (m, n) numpy arrays.  Every function here is pure and
all returned arrays are fresh, so values can be shared freely.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

MAX_DIM = 8


@lru_cache(maxsize=None)
def lex_subsets(n, k):
    """All k-subsets of {0..n-1} as sorted tuples, lexicographic order."""
    if not 0 <= k <= n:
        raise ValueError(f"no {k}-subsets of a {n}-set")
    return tuple(combinations(range(n), k))


@lru_cache(maxsize=None)
def subset_index(n, k):
    """Map from sorted k-tuple to its position in lex_subsets(n, k)."""
    return {s: i for i, s in enumerate(lex_subsets(n, k))}


def merge_sign(a, b):
    """Sign of sorting the concatenation of disjoint sorted tuples a, b.

    Returns 0 if the tuples share an index (repeated wedge factor).
    """
    inversions = 0
    for x in a:
        for y in b:
            if x == y:
                return 0, ()
            if x > y:
                inversions += 1
    merged = tuple(sorted(a + b))
    return (-1) ** inversions, merged


@dataclass(frozen=True)
class Multivector:
    """Degree-k element of the exterior algebra of R^n."""

    n: int
    k: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 3 <= self.n <= MAX_DIM and self.n != 2:
            raise ValueError(f"ambient dimension {self.n} out of range")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"degree {self.k} out of range for n={self.n}")
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (comb(self.n, self.k),):
            raise ValueError(
                f"coefficient array must have length C({self.n},{self.k})")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def basis(cls, n, subset):
        """Basis multivector e_{subset} (0-based sorted index tuple)."""
        subset = tuple(subset)
        k = len(subset)
        c = np.zeros(comb(n, k))
        c[subset_index(n, k)[subset]] = 1.0
        return cls(n, k, c)

    @classmethod
    def vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(len(v), 1, v.copy())

    @classmethod
    def from_vectors(cls, *vectors):
        """Wedge product v_1 ^ ... ^ v_k of 1-vectors."""
        out = cls.vector(vectors[0])
        for v in vectors[1:]:
            out = wedge(out, cls.vector(v))
        return out

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other):
        if (self.n, self.k) != (other.n, other.k):
            raise ValueError("mismatched multivector spaces")
        return Multivector(self.n, self.k, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if (self.n, self.k) != (other.n, other.k):
            raise ValueError("mismatched multivector spaces")
        return Multivector(self.n, self.k, self.coeffs - other.coeffs)

    def __rmul__(self, scalar):
        return Multivector(self.n, self.k, float(scalar) * self.coeffs)


@lru_cache(maxsize=None)
def _wedge_table(n, k1, k2):
    """Sparse structure of the wedge: list of (i1, i2, iout, sign)."""
    idx_out = subset_index(n, k1 + k2)
    table = []
    for i1, s1 in enumerate(lex_subsets(n, k1)):
        for i2, s2 in enumerate(lex_subsets(n, k2)):
            sign, merged = merge_sign(s1, s2)
            if sign != 0:
                table.append((i1, i2, idx_out[merged], sign))
    return table


def wedge(a, b):
    """Graded-anticommutative wedge product of two multivectors."""
    if a.n != b.n:
        raise ValueError("mismatched ambient dimension")
    k = a.k + b.k
    if k > a.n:
        raise ValueError(f"degree overflow: {a.k}+{b.k} > {a.n}")
    out = np.zeros(comb(a.n, k))
    for i1, i2, iout, sign in _wedge_table(a.n, a.k, b.k):
        out[iout] += sign * a.coeffs[i1] * b.coeffs[i2]
    return Multivector(a.n, k, out)


def exterior_power(mat, r):
    """r-th exterior power of a linear map as a dense minor matrix.

    For A : R^n -> R^m the result is the C(m,r) x C(n,r) matrix acting on
    the lexicographic bases, with entries det(A[rows, cols]).  Satisfies
    (L^r A)(v_1 ^ ... ^ v_r) = A v_1 ^ ... ^ A v_r and L^r(AB) = L^r A L^r B.
    """
    mat = np.asarray(mat, dtype=float)
    m, n = mat.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"exterior power degree {r} out of range")
    rows = lex_subsets(m, r)
    cols = lex_subsets(n, r)
    blocks = np.empty((len(rows), len(cols), r, r))
    for i, s in enumerate(rows):
        sub = mat[list(s), :]
        for j, t in enumerate(cols):
            blocks[i, j] = sub[:, list(t)]
    return np.linalg.det(blocks)


def frobenius(mat):
    """Frobenius norm sqrt(trace(A^T A)) = sqrt(sum of squared entries)."""
    return float(np.linalg.norm(np.asarray(mat, dtype=float)))


def conformal_test(mat, tol=1e-10):
    """Decide whether A is a conformal injection, returning (flag, lambda).

    A nonzero A is conformal iff A^T A = lam^2 I; the scale is forced to
    lam = |A| / sqrt(n) by the trace, so the test compares A^T A against
    lam^2 I relative to |A^T A|.  The zero map returns (False, 0.0).
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[1]
    norm = frobenius(mat)
    if norm == 0.0:
        return False, 0.0
    lam2 = norm ** 2 / n
    gram = mat.T @ mat
    defect = np.linalg.norm(gram - lam2 * np.eye(n))
    return bool(defect <= tol * np.linalg.norm(gram)), float(np.sqrt(lam2))


def hadamard_gap(mat, r):
    """Slack in the exterior-power norm inequality for degree r.

    Returns n^{-r} C(n,r) |A|^{2r} - |L^r A|^2 where n is the domain
    dimension.  Nonnegative for every A, and zero exactly when A is a
    conformal injection.
    """
    mat = np.asarray(mat, dtype=float)
    m, n = mat.shape
    if not 1 < r <= n:
        raise ValueError(f"degree {r} out of range for domain dimension {n}")
    bound = n ** (-r) * comb(n, r) * frobenius(mat) ** (2 * r)
    # r > m forces L^r A = 0 (target exterior power is trivial)
    power = frobenius(exterior_power(mat, r)) ** 2 if r <= m else 0.0
    return float(bound - power)
