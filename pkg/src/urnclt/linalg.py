"""Small dense linear algebra: stochastic matrices, Lyapunov solves,
structured exponentials and a spectral decomposition for small ``R``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .blocks import (
    BlockKind,
    JordanBlockSpec,
    SpectralSpec,
    nilpotent_generator,
    rotation_generator,
)
from .errors import (
    DefectiveOrClustered,
    InputError,
    NonConvergence,
    NotIrreducible,
    NotStochastic,
    UnstableA,
)

STOCHASTIC_ATOL = 1e-12


def as_matrix(a, name: str = "matrix", square: bool = False) -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float array."""
    try:
        m = np.array(a, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: not a numeric matrix ({exc})") from None
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InputError(f"{name}: expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"{name}: entries must be finite")
    if square and m.shape[0] != m.shape[1]:
        raise InputError(f"{name}: expected a square matrix, got shape {m.shape}")
    return m


def is_irreducible(R: np.ndarray) -> bool:
    """Strong connectivity of the directed graph on the positive entries."""
    n_comp, _ = connected_components(np.asarray(R) > 0, directed=True, connection="strong")
    return n_comp == 1


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Row-stochastic matrix together with its (checked) irreducibility."""

    matrix: np.ndarray
    irreducible: bool

    @classmethod
    def from_array(cls, R, atol: float = STOCHASTIC_ATOL) -> "StochasticMatrix":
        m = as_matrix(R, "replacement matrix", square=True)
        if m.min() < -atol:
            i, j = np.unravel_index(np.argmin(m), m.shape)
            raise NotStochastic(f"entry R[{i},{j}] = {m[i, j]:.3g} is negative")
        sums = m.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
        if bad.size:
            raise NotStochastic(f"row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
        m = np.clip(m, 0.0, None)
        m.setflags(write=False)
        return cls(m, is_irreducible(m))

    @property
    def K(self) -> int:
        return self.matrix.shape[0]


def _as_stochastic(R) -> StochasticMatrix:
    return R if isinstance(R, StochasticMatrix) else StochasticMatrix.from_array(R)


def stationary_distribution(R) -> np.ndarray:
    """Left Perron vector ``pi`` with ``pi' R = pi'`` and ``sum(pi) = 1``.

    Solved directly from the bordered system ``[(I - R)' ; 1'] pi = [0 ; 1]``
    followed by one step of iterative refinement.
    """
    sm = _as_stochastic(R)
    if not sm.irreducible:
        raise NotIrreducible("replacement matrix is not irreducible: the graph of positive entries is not strongly connected")
    P = sm.matrix
    K = sm.K
    A = np.vstack([(np.eye(K) - P).T, np.ones((1, K))])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi += np.linalg.lstsq(A, b - A @ pi, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.max(np.abs(pi @ P - pi))
    if not resid <= 1e-10:
        raise NonConvergence(f"stationary distribution residual {resid:.3g} exceeds 1e-10")
    return pi


def solve_lyapunov(A, Q, tol: float = 1e-12) -> np.ndarray:
    """Solve ``A' S + S A = Q`` for symmetric ``S``.

    When every eigenvalue of ``A`` has positive real part the solution is
    ``int_0^inf exp(-A's) Q exp(-As) ds``.  The system is small, so it is
    solved through its Kronecker form.
    """
    A = as_matrix(A, "A", square=True)
    Q = as_matrix(Q, "Q", square=True)
    if Q.shape != A.shape:
        raise InputError(f"A and Q shapes differ: {A.shape} vs {Q.shape}")
    eig = np.linalg.eigvals(A)
    if eig.real.min() <= tol:
        raise UnstableA(f"A has an eigenvalue with real part {eig.real.min():.3g} <= {tol:g}")
    p = A.shape[0]
    eye = np.eye(p)
    L = np.kron(eye, A.T) + np.kron(A.T, eye)
    S = np.linalg.solve(L, Q.reshape(-1, order="F")).reshape(p, p, order="F")
    S = 0.5 * (S + S.T)
    resid = np.max(np.abs(A.T @ S + S @ A - Q))
    if resid > 1e-10 * max(np.max(np.abs(Q)), 1e-300):
        raise NonConvergence(f"Lyapunov residual {resid:.3g} too large")
    return S


def block_exponential(k1: float, k2: float, k3: float, d: int,
                      kind: BlockKind = BlockKind.COMPLEX) -> np.ndarray:
    """``exp(k1 I + k2 C + k3 F)`` from its closed form.

    The three generators commute, so the exponential factors into
    ``e^{k1}``, the rotation ``cos(k2) I + sin(k2) C`` and the finite series
    ``sum_{j<d} (k3 F)^j / j!``.  ``kind="real"`` gives the ``d x d`` form and
    requires ``k2 == 0``.
    """
    kind = BlockKind(kind)
    if d < 1:
        raise InputError("d must be >= 1")
    F = nilpotent_generator(kind, d)
    size = F.shape[0]
    if kind is BlockKind.REAL:
        if k2 != 0.0:
            raise InputError("real blocks have no rotation part (k2 must be 0)")
        rot = np.eye(size)
    else:
        rot = math.cos(k2) * np.eye(size) + math.sin(k2) * rotation_generator(d)
    nil = np.eye(size)
    term = np.eye(size)
    for j in range(1, d):
        term = term @ (k3 * F) / j
        nil = nil + term
    return math.exp(k1) * rot @ nil


def _normalize_vector(v: np.ndarray) -> np.ndarray:
    """Scale so the first entry of largest modulus equals 1."""
    k = int(np.argmax(np.abs(v) > (1 - 1e-9) * np.abs(v).max()))
    return v / v[k]


def _schur_eigenvalues(R: np.ndarray) -> list[complex]:
    # 2x2 diagonal blocks of the real Schur form carry the complex pairs
    T = scipy.linalg.schur(R, output="real")[0]
    K = T.shape[0]
    vals: list[complex] = []
    i = 0
    while i < K:
        if i + 1 < K and T[i + 1, i] != 0.0:
            a, b, c, d = T[i, i], T[i, i + 1], T[i + 1, i], T[i + 1, i + 1]
            tr, det = a + d, a * d - b * c
            disc = tr * tr / 4 - det
            im = math.sqrt(max(-disc, 0.0))
            vals += [complex(tr / 2, im), complex(tr / 2, -im)]
            i += 2
        else:
            vals.append(complex(T[i, i], 0.0))
            i += 1
    return vals


def _clusters(vals: list[complex], tol: float) -> list[list[complex]]:
    groups: list[list[complex]] = []
    for v in sorted(vals, key=lambda z: (z.real, z.imag)):
        for g in groups:
            if any(abs(v - w) <= tol for w in g):
                g.append(v)
                break
        else:
            groups.append([v])
    return groups


def eigen_decompose(R, tol: float = 1e-6) -> SpectralSpec:
    """Real spectral decomposition of a diagonalizable stochastic matrix.

    Eigenvalues come from the real Schur form; eigenvectors are null vectors
    of ``R - lam I``.  Real eigenvalues give ``d=1`` real blocks, conjugate
    pairs give ``d=1`` rotation blocks with ``lambda_c > 0`` and columns
    (Re v, Im v).  Eigenvectors are scaled so their largest entry is 1.
    Repeated eigenvalues are accepted only when they are semisimple; anything
    closer than ``tol`` without a full eigenspace raises
    :class:`DefectiveOrClustered`.
    """
    sm = _as_stochastic(R)
    P = sm.matrix
    K = sm.K
    if K > 16:
        raise InputError(f"eigen_decompose supports K <= 16, got {K}")
    vals = _schur_eigenvalues(P)
    groups = _clusters(vals, tol)
    scale = max(1.0, np.abs(P).max())

    principal = [g for g in groups if any(abs(z - 1.0) <= tol for z in g)]
    if len(principal) != 1 or len(principal[0]) != 1:
        raise DefectiveOrClustered("eigenvalue 1 is not simple (is R irreducible?)")

    columns: list[np.ndarray] = [np.ones(K)]
    specs: list[tuple[complex, int]] = []  # (eigenvalue, first column index)
    for g in groups:
        lam = complex(np.mean(g))
        if abs(lam - 1.0) <= tol or lam.imag < -tol:
            continue
        is_real = all(abs(z.imag) <= tol for z in g)
        if is_real:
            lam = complex(lam.real, 0.0)
            shifted = P - lam.real * np.eye(K)
        else:
            shifted = P.astype(complex) - lam * np.eye(K)
        m = len(g)
        _, sv, vh = np.linalg.svd(shifted)
        if sv[K - m] > tol * scale:
            raise DefectiveOrClustered(
                f"eigenvalue {lam:.6g} has multiplicity {m} but a deficient eigenspace; "
                "supply an exact spectral_spec")
        basis = vh[K - m:].conj().T
        for k in range(m):
            v = _normalize_vector(basis[:, k])
            if is_real:
                columns.append(v.real.copy())
                specs.append((lam, len(columns) - 1))
            else:
                columns += [v.real.copy(), v.imag.copy()]
                specs.append((lam, len(columns) - 2))
    M = np.column_stack(columns)
    if M.shape[1] != K:
        raise DefectiveOrClustered("could not assemble a full set of eigenvectors")
    blocks = []
    for lam, c in specs:
        if lam.imag == 0.0:
            blocks.append(JordanBlockSpec(BlockKind.REAL, lam.real, 0.0, 1, (c,)))
        else:
            blocks.append(JordanBlockSpec(BlockKind.COMPLEX, lam.real, lam.imag, 1, (c, c + 1)))
    try:
        spec = SpectralSpec(M, tuple(blocks))
    except InputError as exc:
        raise DefectiveOrClustered(f"eigenvector matrix is ill-conditioned: {exc}") from None
    err = np.max(np.abs(spec.reconstruct() - P))
    if err > 1e-8:
        raise NonConvergence(f"reconstruction error {err:.3g} exceeds 1e-8")
    return spec
