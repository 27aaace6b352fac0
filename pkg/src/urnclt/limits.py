"""Limit covariances of the normalized statistics in each regime."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .blocks import BlockKind, JordanBlockSpec, SpectralSpec, block_diagonal
from .errors import InputError, NotScalarBlock, NotSupercritical
from .linalg import solve_lyapunov
from .spectrum import DEFAULT_EPSILON, Regime, UrnModel, an_inverse_sequence, classify
from .urn import joint_moments

DEFAULT_SUPER_HORIZON = 10**6
TAIL_SAFETY = 1.25


def _regime_blocks(spec: SpectralSpec, regime: Regime, epsilon: float) -> list[JordanBlockSpec]:
    return [b for b in spec.blocks if classify(b, epsilon) is regime]


def _weighted_gram(spec: SpectralSpec, pi: np.ndarray, bj: JordanBlockSpec, bl: JordanBlockSpec) -> np.ndarray:
    """``Lam_j' M_j' D_pi M_l Lam_l``."""
    Mj = spec.columns_of(bj) @ bj.matrix()
    Ml = spec.columns_of(bl) @ bl.matrix()
    return (Mj.T * np.asarray(pi)) @ Ml


def limit_cov_subcritical(spec: SpectralSpec, pi, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Joint limit covariance of all subcritical statistics.

    Solves ``A' S + S A = Q`` with ``A = I/2 - G`` and
    ``Q = G' M' D_pi M G``, where ``G`` stacks every subcritical block and
    ``M`` holds their combination columns.
    """
    blocks = _regime_blocks(spec, Regime.SUBCRITICAL, epsilon)
    if not blocks:
        raise InputError("model has no subcritical block")
    G = block_diagonal([b.matrix() for b in blocks])
    cols = [c for b in blocks for c in b.columns]
    MG = spec.combination[:, cols] @ G
    Q = (MG.T * np.asarray(pi)) @ MG
    return solve_lyapunov(0.5 * np.eye(len(cols)) - G, Q)


def critical_coefficient(d_j: int, d_l: int | None = None) -> float:
    """``1 / ((d_j + d_l - 1) (d_j - 1)! (d_l - 1)!)``; ``d_l`` defaults to ``d_j``."""
    d_l = d_j if d_l is None else d_l
    return 1.0 / ((d_j + d_l - 1) * math.factorial(d_j - 1) * math.factorial(d_l - 1))


def critical_pair_covariance(Q: np.ndarray, bj: JordanBlockSpec, bl: JordanBlockSpec,
                             variant: str = "averaged") -> np.ndarray:
    """Critical limit covariance between blocks ``j`` and ``l`` given their ``Q_jl``.

    Only the top nilpotent powers survive the ``log`` norming, leaving
    ``X = (F_j^{d_j-1})' Q F_l^{d_l-1}`` times :func:`critical_coefficient`.
    In the ``"averaged"`` variant rotations are averaged over a period:
    two complex blocks with equal ``lambda_c`` give ``(X + C_j' X C_l)/2``,
    while pairs with different rotation speeds, and real/complex pairs,
    average to zero.  The ``"uniform-half"`` variant applies a global
    factor ``1/2`` to ``X`` for every pair with no averaging.
    """
    Fj = np.linalg.matrix_power(bj.nilpotent(), bj.d - 1)
    Fl = np.linalg.matrix_power(bl.nilpotent(), bl.d - 1)
    X = Fj.T @ Q @ Fl * critical_coefficient(bj.d, bl.d)
    if variant == "uniform-half":
        return 0.5 * X
    if variant != "averaged":
        raise InputError(f"unknown variant {variant!r}")
    real_j = bj.kind is BlockKind.REAL
    real_l = bl.kind is BlockKind.REAL
    if real_j and real_l:
        return X
    if real_j != real_l:
        return np.zeros_like(X)
    if abs(bj.lambda_c - bl.lambda_c) > 1e-12 * max(bj.lambda_c, bl.lambda_c):
        return np.zeros_like(X)
    return 0.5 * (X + bj.rotation().T @ X @ bl.rotation())


def limit_cov_critical(spec: SpectralSpec, pi, epsilon: float = DEFAULT_EPSILON,
                       variant: str = "averaged") -> np.ndarray:
    """Joint limit covariance of all critical statistics (see
    :func:`critical_pair_covariance` for the two variants)."""
    blocks = _regime_blocks(spec, Regime.CRITICAL, epsilon)
    if not blocks:
        raise InputError("model has no critical block")
    widths = [b.width for b in blocks]
    offs = np.concatenate([[0], np.cumsum(widths)])
    V = np.zeros((offs[-1], offs[-1]))
    for j, bj in enumerate(blocks):
        for l, bl in enumerate(blocks):
            Q = _weighted_gram(spec, pi, bj, bl)
            V[offs[j]:offs[j + 1], offs[l]:offs[l + 1]] = critical_pair_covariance(Q, bj, bl, variant)
    return 0.5 * (V + V.T)


def truncation_factor(n: int, n0: int, d: int) -> float:
    """Share of the full ``log^{2d-1}`` mass kept when the sum starts at ``n0``."""
    return ((math.log(n) - math.log(n0)) / math.log(n)) ** (2 * d - 1)


def critical_product_sum(d: int, n: int, n0: int, lambda_c: float = 0.0):
    """Numerical critical coefficient from the truncated product-sum.

    Sums the squared top nilpotent coefficient of the normalized critical
    propagator from ``n0`` to ``n`` and divides by :func:`truncation_factor`.
    For a real block (``lambda_c = 0``) the result approaches
    ``critical_coefficient(d)``.  For a rotation block it returns the two
    diagonal entries for ``Q = e_0 e_0'``; each approaches half the real
    coefficient.
    """
    if d < 1 or n0 < 2 or n <= n0:
        raise InputError("need d >= 1 and 2 <= n0 < n")
    t00, t11 = _kernels.critical_product_sum(int(n), int(n0), int(d), float(lambda_c))
    f = truncation_factor(n, n0, d)
    if lambda_c == 0.0:
        return t00 / f
    return t00 / f, t11 / f


@dataclass(frozen=True)
class CrossLimit:
    """Value of a second moment at ``horizon`` and a bound on the remaining change."""

    value: float
    tail_bound: float
    horizon: int


def _check_scalar_super(model: UrnModel, block: JordanBlockSpec) -> JordanBlockSpec:
    if classify(block, model.epsilon) is not Regime.SUPERCRITICAL:
        raise NotSupercritical(f"block with lambda_r={block.lambda_r} is not supercritical")
    if block.kind is not BlockKind.REAL or block.d != 1:
        raise NotScalarBlock("the scalar recursion needs real blocks with d=1")
    return block


def supercritical_cross_limit(model: UrnModel, block_j: JordanBlockSpec, block_l: JordanBlockSpec,
                              horizon: int = DEFAULT_SUPER_HORIZON) -> CrossLimit:
    """Limit of ``E U_n V_n`` for two scalar supercritical martingales.

    Runs the normalized second-moment recursion with the exact mean
    ``E W_n``.  The tail bound assumes increments decay like
    ``n^{-(lam_j + lam_l)}``: with ``c`` the largest observed
    ``|increment| n^{lam_j + lam_l}`` over the last tenth of the run,
    ``sum_{m > H} c m^{-s} <= c H^{1-s} / (s - 1)``, inflated by a safety
    factor.
    """
    _check_scalar_super(model, block_j)
    _check_scalar_super(model, block_l)
    if horizon < 10:
        raise InputError("horizon must be at least 10")
    M = model.spec.combination
    xa = np.ascontiguousarray(M[:, block_j.columns[0]])
    xb = np.ascontiguousarray(M[:, block_l.columns[0]])
    out = np.zeros(1)
    peak = _kernels.normalized_cross(
        np.ascontiguousarray(model.R.matrix), xa, xb, block_j.lambda_r, block_l.lambda_r,
        np.array(model.initial_state, dtype=float), model.w0, int(horizon),
        np.array([horizon], dtype=np.int64), out, int(0.9 * horizon))
    s = block_j.lambda_r + block_l.lambda_r
    tail = TAIL_SAFETY * peak * (horizon + model.w0) ** (1.0 - s) / (s - 1.0)
    return CrossLimit(float(out[0]), float(tail), int(horizon))


@dataclass(frozen=True, eq=False)
class L2Curve:
    """``E Z_n Z_n'`` of one supercritical block at recorded steps.

    ``values`` holds the trace ``E |Z_n|^2`` (for a scalar block, ``E Z_n^2``).
    """

    steps: np.ndarray
    second_moment: np.ndarray
    values: np.ndarray

    def is_bounded(self, slack: float = 1.01) -> bool:
        return bool(self.values.max() <= slack * self.values[-1])


def supercritical_second_moments(model: UrnModel, blocks, steps) -> np.ndarray:
    """Exact ``E Z_n Z_n'`` for the joint statistic of several supercritical blocks."""
    steps = np.asarray(sorted(set(int(s) for s in steps)), dtype=np.int64)
    cols = [c for b in blocks for c in b.columns]
    jm = joint_moments(model, int(steps[-1]), steps, cols)
    inv = np.zeros((len(steps), len(cols), len(cols)))
    off = 0
    for b in blocks:
        inv[:, off:off + b.width, off:off + b.width] = an_inverse_sequence(b, steps, model.w0)
        off += b.width
    return np.einsum("cpa,cpq,cqb->cab", inv, jm.second_u, inv)


def l2_bound_curve(model: UrnModel, block: JordanBlockSpec, horizon: int, stride: int,
                   extra=()) -> L2Curve:
    """Exact second moment of the normalized martingale of ``block``.

    Recorded at ``0, stride, 2 stride, ...``, at ``horizon`` and at any
    ``extra`` steps.
    """
    if classify(block, model.epsilon) is not Regime.SUPERCRITICAL:
        raise NotSupercritical(f"block with lambda_r={block.lambda_r} is not supercritical")
    if stride < 1 or horizon < 1:
        raise InputError("stride and horizon must be positive")
    steps = sorted(set(range(0, horizon + 1, stride)) | {horizon} | {int(e) for e in extra})
    S = supercritical_second_moments(model, [block], steps)
    return L2Curve(np.asarray(steps, dtype=np.int64), S, np.trace(S, axis1=1, axis2=2))


@dataclass(frozen=True, eq=False)
class LimitCovariance:
    """Regime-wise limit covariances.

    Cross-regime blocks are zero by asymptotic independence and are not
    stored.  ``critical_uniform_half`` is the alternative critical matrix
    with a global factor ``1/2`` and no rotation averaging.
    """

    labels: dict
    subcritical: np.ndarray | None
    critical: np.ndarray | None
    critical_uniform_half: np.ndarray | None
    supercritical: np.ndarray | None
    supercritical_tail: np.ndarray | None
    supercritical_horizon: int | None
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        def mat(a):
            return None if a is None else [[float(x) for x in row] for row in a]
        return {
            "labels": self.labels,
            "subcritical": mat(self.subcritical),
            "critical": mat(self.critical),
            "critical_uniform_half": mat(self.critical_uniform_half),
            "supercritical": mat(self.supercritical),
            "supercritical_tail_bound": mat(self.supercritical_tail),
            "supercritical_horizon": self.supercritical_horizon,
            "cross_regime": "zero (asymptotic independence)",
            "notes": list(self.notes),
        }


def _general_super_limit(model: UrnModel, blocks, horizon: int):
    half = horizon // 2
    S = supercritical_second_moments(model, blocks, [half, horizon])
    lam = np.concatenate([[b.lambda_r] * b.width for b in blocks])
    s = lam[:, None] + lam[None, :]
    ratio = (half / horizon) ** (s - 1.0)
    # geometric extrapolation of a remainder decaying like n^{1-s}
    tail = TAIL_SAFETY * np.abs(S[1] - S[0]) * ratio / (1.0 - ratio)
    return S[1], tail


def limit_covariance(model: UrnModel, horizon: int = DEFAULT_SUPER_HORIZON) -> LimitCovariance:
    """All regime-wise limit covariances of ``model``."""
    labels = model.stat_labels()
    lab = {r.value: [labels[c - 1] for c in model.columns_in(r)] for r in Regime}
    spec, pi, eps = model.spec, model.pi, model.epsilon
    notes = []
    sub = crit = crit_half = sup = tail = None
    if model.blocks_in(Regime.SUBCRITICAL):
        sub = limit_cov_subcritical(spec, pi, eps)
    crit_blocks = model.blocks_in(Regime.CRITICAL)
    if crit_blocks:
        crit = limit_cov_critical(spec, pi, eps)
        crit_half = limit_cov_critical(spec, pi, eps, variant="uniform-half")
        kinds = {b.kind for b in crit_blocks}
        if len(kinds) > 1:
            notes.append("critical real/complex cross entries are zero after rotation averaging")
    sup_blocks = model.blocks_in(Regime.SUPERCRITICAL)
    if sup_blocks:
        if all(b.kind is BlockKind.REAL and b.d == 1 for b in sup_blocks):
            k = len(sup_blocks)
            sup = np.zeros((k, k))
            tail = np.zeros((k, k))
            for j in range(k):
                for l in range(j, k):
                    cl = supercritical_cross_limit(model, sup_blocks[j], sup_blocks[l], horizon)
                    sup[j, l] = sup[l, j] = cl.value
                    tail[j, l] = tail[l, j] = cl.tail_bound
        else:
            sup, tail = _general_super_limit(model, sup_blocks, horizon)
            notes.append("supercritical limits from the joint moment recursion; tail bound by "
                         "geometric extrapolation between horizon/2 and horizon")
        notes.append("supercritical entries are limits of E Z Z' (second moments, not centered)")
    return LimitCovariance(lab, sub, crit, crit_half, sup, tail, horizon if sup_blocks else None, tuple(notes))
