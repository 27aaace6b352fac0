"""Regimes, urn models built from spectral data, normalizations and the
``A_n`` product of the supercritical martingale."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    BlockKind,
    JordanBlockSpec,
    SpectralSpec,
    block_diagonal,
    poly_to_matrix,
)
from .errors import DomainError, InputError, NotIrreducible, NotStochastic
from .linalg import StochasticMatrix, eigen_decompose, stationary_distribution

DEFAULT_EPSILON = 1e-9


class Regime(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


_REGIME_ORDER = {Regime.SUBCRITICAL: 0, Regime.CRITICAL: 1, Regime.SUPERCRITICAL: 2}


def classify(block: JordanBlockSpec, epsilon: float = DEFAULT_EPSILON) -> Regime:
    """Regime of a block from the real part of its eigenvalue."""
    if block.lambda_r < 0.5 - epsilon:
        return Regime.SUBCRITICAL
    if block.lambda_r > 0.5 + epsilon:
        return Regime.SUPERCRITICAL
    return Regime.CRITICAL


def canonicalize(spec: SpectralSpec, epsilon: float = DEFAULT_EPSILON) -> SpectralSpec:
    """Reorder blocks as subcritical, critical (grouped by ``d``), supercritical.

    Combination columns are permuted to match, so every block stays
    contiguous.
    """
    def key(item):
        i, b = item
        r = classify(b, epsilon)
        return (_REGIME_ORDER[r], b.d if r is Regime.CRITICAL else 0, i)

    ordered = [b for _, b in sorted(enumerate(spec.blocks), key=key)]
    perm = [0]
    blocks = []
    for b in ordered:
        start = len(perm)
        perm += list(b.columns)
        blocks.append(b.with_columns(range(start, start + b.width)))
    M = spec.combination[:, perm]
    return SpectralSpec(M, tuple(blocks))


@dataclass(frozen=True, eq=False)
class UrnModel:
    """Replacement matrix, its stationary law and spectral structure.

    ``spec`` is in canonical block order and ``regimes[i]`` belongs to
    ``spec.blocks[i]``.  ``initial_state`` is ``W_0``; its total ``w0`` need
    not be 1.
    """

    R: StochasticMatrix
    pi: np.ndarray
    spec: SpectralSpec
    regimes: tuple[Regime, ...]
    initial_state: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    warnings: tuple[str, ...] = field(default=())

    @property
    def K(self) -> int:
        return self.R.K

    @property
    def w0(self) -> float:
        return float(self.initial_state.sum())

    @property
    def blocks(self) -> tuple[JordanBlockSpec, ...]:
        return self.spec.blocks

    def blocks_in(self, regime: Regime) -> list[JordanBlockSpec]:
        return [b for b, r in zip(self.blocks, self.regimes) if r is regime]

    def columns_in(self, regime: Regime) -> list[int]:
        """Combination-column indices of all blocks in ``regime``."""
        return [c for b in self.blocks_in(regime) for c in b.columns]

    def regime_of_column(self, col: int) -> Regime:
        for b, r in zip(self.blocks, self.regimes):
            if col in b.columns:
                return r
        raise InputError(f"column {col} is not a block column")

    def block_of_column(self, col: int) -> JordanBlockSpec:
        for b in self.blocks:
            if col in b.columns:
                return b
        raise InputError(f"column {col} is not a block column")

    def generator(self) -> np.ndarray:
        """Block-diagonal matrix of all non-principal blocks (``(K-1) x (K-1)``)."""
        if not self.blocks:
            return np.zeros((0, 0))
        return block_diagonal([b.matrix() for b in self.blocks])

    def stat_labels(self) -> list[str]:
        """One label per non-principal column, e.g. ``sub0.1`` or ``super1.4``."""
        labels = []
        count = {r: 0 for r in Regime}
        short = {Regime.SUBCRITICAL: "sub", Regime.CRITICAL: "crit", Regime.SUPERCRITICAL: "super"}
        for b, r in zip(self.blocks, self.regimes):
            for c in b.columns:
                labels.append(f"{short[r]}{count[r]}.{c}")
            count[r] += 1
        return labels


def _check_initial_state(W0, K: int) -> np.ndarray:
    if W0 is None:
        W0 = np.zeros(K)
        W0[0] = 1.0
    W0 = np.array(W0, dtype=float)
    if W0.shape != (K,):
        raise InputError(f"initial_state must have {K} entries, got shape {W0.shape}")
    if not np.all(np.isfinite(W0)) or W0.min() < 0.0 or not W0.sum() > 0.0:
        raise InputError("initial_state must be finite, nonnegative and not all zero")
    W0.setflags(write=False)
    return W0


def _band_warnings(spec: SpectralSpec, epsilon: float) -> tuple[str, ...]:
    out = []
    for b in spec.blocks:
        if b.lambda_r != 0.5 and abs(b.lambda_r - 0.5) <= epsilon:
            out.append(f"eigenvalue real part {b.lambda_r!r} lies in the critical band "
                       f"|lambda_r - 1/2| <= {epsilon:g} and is treated as exactly 1/2")
    return tuple(out)


def _assemble(sm: StochasticMatrix, spec: SpectralSpec, initial_state, epsilon: float) -> UrnModel:
    if not sm.irreducible:
        raise NotIrreducible("replacement matrix is not irreducible: the graph of positive entries is not strongly connected")
    pi = stationary_distribution(sm)
    pi.setflags(write=False)
    spec = canonicalize(spec, epsilon)
    regimes = tuple(classify(b, epsilon) for b in spec.blocks)
    return UrnModel(sm, pi, spec, regimes, _check_initial_state(initial_state, sm.K),
                    float(epsilon), _band_warnings(spec, epsilon))


def model_from_spectral_spec(spec: SpectralSpec, initial_state=None,
                             epsilon: float = DEFAULT_EPSILON) -> UrnModel:
    """Build the urn model whose replacement matrix is ``M J M^{-1}``.

    Entries within ``1e-10`` of zero are clipped and rows rescaled to sum to
    exactly one; larger violations raise :class:`NotStochastic`.
    """
    R = spec.reconstruct()
    if R.min() < -1e-10:
        i, j = np.unravel_index(np.argmin(R), R.shape)
        raise NotStochastic(f"reconstructed R[{i},{j}] = {R[i, j]:.6g} is negative")
    sums = R.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-10:
        raise NotStochastic(f"reconstructed row sums deviate from 1 by {np.max(np.abs(sums - 1.0)):.3g}")
    R = np.clip(R, 0.0, None)
    R /= R.sum(axis=1, keepdims=True)
    return _assemble(StochasticMatrix.from_array(R), spec, initial_state, epsilon)


def model_from_matrix(R, initial_state=None, epsilon: float = DEFAULT_EPSILON,
                      tol: float = 1e-6) -> UrnModel:
    """Build a model from a raw replacement matrix via :func:`eigen_decompose`."""
    sm = StochasticMatrix.from_array(R)
    if not sm.irreducible:
        raise NotIrreducible("replacement matrix is not irreducible: the graph of positive entries is not strongly connected")
    return _assemble(sm, eigen_decompose(sm, tol), initial_state, epsilon)


def normalizer(block: JordanBlockSpec, regime: Regime, n: int, w0: float = 1.0):
    """Scaling that turns ``W_n' (block columns)`` into the normalized statistic.

    Returns ``1/sqrt(n)`` (subcritical), ``1/sqrt(n log^{2d-1} n)`` (critical)
    or the matrix ``A_n^{-1}`` (supercritical, applied on the right).
    """
    if n < 2:
        raise DomainError(f"normalizer needs n >= 2, got {n}")
    if regime is Regime.SUBCRITICAL:
        return 1.0 / math.sqrt(n)
    if regime is Regime.CRITICAL:
        return 1.0 / math.sqrt(n * math.log(n) ** (2 * block.d - 1))
    return an_product(block, n, w0)[1]


class AnAccumulator:
    """Incremental ``A_n = prod_{j<n} (I + Lambda/(j + w0))`` for one block.

    The block algebra is commutative: ``Lambda = mu + F`` with ``mu`` the
    complex eigenvalue (``C`` acting as ``i``).  Each factor splits as
    ``(1 + mu/t)(1 + F/(t + mu))``; the scalar part is kept as a complex
    logarithm and the nilpotent part as a truncated polynomial in ``F``.
    Batches of factors are multiplied through power sums, so advancing by
    ``m`` steps costs ``O(m d)``.

    Single owner; not thread safe.
    """

    def __init__(self, block: JordanBlockSpec, w0: float = 1.0):
        self.block = block
        self.w0 = float(w0)
        self.n = 0
        self._mu = complex(block.lambda_r, block.lambda_c)
        self._log = 0j
        self._poly = np.zeros(block.d, dtype=complex)
        self._poly[0] = 1.0
        self.peak = 1.0

    def advance(self, steps: int = 1) -> "AnAccumulator":
        chunk = 1 << 20
        while steps > 0:
            m = min(steps, chunk)
            t = self.n + self.w0 + np.arange(m, dtype=float)
            mu = self._mu
            if mu.imag == 0.0:
                self._log += np.log1p(mu.real / t).sum()
            else:
                self._log += np.log1p(mu / t).sum()
            d = self.block.d
            if d > 1:
                x = 1.0 / (t + mu)
                logpoly = np.zeros(d, dtype=complex)
                xk = np.ones_like(x)
                for k in range(1, d):
                    xk = xk * x
                    logpoly[k] = (-1) ** (k + 1) * xk.sum() / k
                self._poly = _poly_mul(self._poly, _poly_exp(logpoly))
            self.n += m
            steps -= m
            self.peak = max(self.peak, self.max_entry())
        return self

    def advance_to(self, n: int) -> "AnAccumulator":
        if n < self.n:
            raise InputError(f"accumulator is already at n={self.n} > {n}")
        return self.advance(n - self.n)

    def _scalar(self) -> complex:
        return complex(np.exp(self._log))

    def matrix(self) -> np.ndarray:
        return poly_to_matrix(self._scalar() * self._poly, self.block.kind)

    def inverse(self) -> np.ndarray:
        return poly_to_matrix(_poly_inv(self._poly) / self._scalar(), self.block.kind)

    def max_entry(self) -> float:
        return float(np.max(np.abs(self.matrix())))


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: len(a)]


def _poly_exp(log_coef: np.ndarray) -> np.ndarray:
    # e' = l' e, coefficientwise; log_coef[0] must be 0
    d = len(log_coef)
    e = np.zeros(d, dtype=complex)
    e[0] = 1.0
    for k in range(1, d):
        e[k] = sum(j * log_coef[j] * e[k - j] for j in range(1, k + 1)) / k
    return e


def _poly_inv(c: np.ndarray) -> np.ndarray:
    d = len(c)
    b = np.zeros(d, dtype=complex)
    b[0] = 1.0 / c[0]
    for k in range(1, d):
        b[k] = -sum(c[j] * b[k - j] for j in range(1, k + 1)) / c[0]
    return b


def an_product(block: JordanBlockSpec, n: int, w0: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``(A_n, A_n^{-1})`` with ``A_n = prod_{j=0}^{n-1} (I + Lambda/(j + w0))``."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    acc = AnAccumulator(block, w0).advance(n)
    return acc.matrix(), acc.inverse()


def an_inverse_sequence(block: JordanBlockSpec, steps, w0: float = 1.0) -> np.ndarray:
    """``A_n^{-1}`` at each of the increasing ``steps`` (shape ``(C, w, w)``).

    Real one-dimensional blocks use a cumulative sum of ``log1p`` terms, so
    long dense sequences are cheap; other blocks share one accumulator.
    """
    steps = np.asarray(steps, dtype=np.int64)
    if steps.size and (steps[0] < 0 or np.any(np.diff(steps) <= 0)):
        raise InputError("steps must be nonnegative and strictly increasing")
    w = block.width
    if steps.size == 0:
        return np.zeros((0, w, w))
    if block.kind is BlockKind.REAL and block.d == 1:
        t = w0 + np.arange(steps[-1], dtype=float)
        logs = np.concatenate([[0.0], np.cumsum(np.log1p(block.lambda_r / t))])
        return np.exp(-logs[steps])[:, None, None]
    acc = AnAccumulator(block, w0)
    return np.stack([acc.advance_to(int(n)).inverse() for n in steps])


def stat_normalizer(model: UrnModel, n: int) -> np.ndarray:
    """Block-diagonal ``N`` with ``stats = W_n' M_rest N`` (``M_rest`` = columns 1..K-1)."""
    parts = []
    for b, r in zip(model.blocks, model.regimes):
        s = normalizer(b, r, n, model.w0)
        parts.append(s * np.eye(b.width) if np.isscalar(s) else s)
    return block_diagonal(parts) if parts else np.zeros((0, 0))


def stat_normalizers(model: UrnModel, checkpoints) -> np.ndarray:
    """:func:`stat_normalizer` at several increasing steps, sharing the ``A_n`` work."""
    cps = np.asarray([int(c) for c in checkpoints], dtype=np.int64)
    if np.any(np.diff(cps) <= 0):
        raise InputError("checkpoints must be strictly increasing")
    if cps.size and cps[0] < 2:
        raise DomainError(f"normalized statistics need n >= 2, got {cps[0]}")
    p = model.K - 1
    out = np.zeros((len(cps), p, p))
    for b, r in zip(model.blocks, model.regimes):
        idx = np.array(b.columns) - 1
        sl = np.ix_(np.arange(len(cps)), idx, idx)
        if r is Regime.SUPERCRITICAL:
            out[sl] = an_inverse_sequence(b, cps, model.w0)
        else:
            scale = np.array([normalizer(b, r, int(n)) for n in cps])
            out[sl] = scale[:, None, None] * np.eye(b.width)
    return out
