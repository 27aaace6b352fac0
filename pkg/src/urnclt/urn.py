"""The urn process: states, stepping, simulation, normalized statistics and
exact moment oracles."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .blocks import BlockKind, block_diagonal
from .errors import DomainError, InputError, MissingCheckpoint, NotEigenvectorColumn
from .linalg import StochasticMatrix
from .spectrum import Regime, UrnModel, stat_normalizer, stat_normalizers

MAX_HORIZON = 10**8
STEP_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class UrnState:
    """Color weights ``W`` after ``n`` draws; ``w0`` is the initial total."""

    W: np.ndarray
    n: int
    w0: float

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 1 or not np.all(np.isfinite(W)) or W.min() < 0.0:
            raise InputError("urn weights must be a finite nonnegative vector")
        if self.n < 0:
            raise InputError("step index must be nonnegative")
        if abs(W.sum() - (self.n + self.w0)) > 1e-9 * max(1.0, (self.n + self.w0) / 1e6):
            raise InputError(f"weights sum to {W.sum()!r}, expected n + w0 = {self.n + self.w0!r}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def initial(cls, model: UrnModel) -> "UrnState":
        return cls(model.initial_state, 0, model.w0)


def step(state: UrnState, R, u: float) -> UrnState:
    """One draw: pick the smallest color whose cumulative weight exceeds
    ``u (n + w0)`` and add that row of ``R``."""
    P = R.matrix if isinstance(R, StochasticMatrix) else np.asarray(R, dtype=float)
    c = _kernels.draw_color(state.W, state.n + state.w0, float(u))
    return UrnState(state.W + P[c], state.n + 1, state.w0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of one path; ``steps[k]`` pairs with ``weights[k]``."""

    model: UrnModel
    steps: np.ndarray
    weights: np.ndarray
    seed: int
    path: int = 0

    @property
    def checkpoints(self) -> list[tuple[int, np.ndarray]]:
        return [(int(n), w) for n, w in zip(self.steps, self.weights)]

    def state_at(self, n: int) -> UrnState:
        idx = np.flatnonzero(self.steps == n)
        if idx.size == 0:
            raise MissingCheckpoint(f"step {n} was not recorded (have {self.steps.tolist()})")
        return UrnState(self.weights[idx[0]], int(n), self.model.w0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["n"] + [f"W_{j}" for j in range(self.model.K)]) + "\n")
        for n, w in zip(self.steps, self.weights):
            buf.write(",".join([str(int(n))] + [format(x, ".17g") for x in w]) + "\n")
        return buf.getvalue()


def check_checkpoints(checkpoints, horizon: int, minimum: int = 2) -> np.ndarray:
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if horizon < 0 or horizon > MAX_HORIZON:
        raise InputError(f"horizon must lie in [0, {MAX_HORIZON}], got {horizon}")
    if cps.size and (cps[0] < minimum or cps[-1] > horizon):
        raise InputError(f"checkpoints must lie in [{minimum}, {horizon}], got {cps.tolist()}")
    return cps


def path_generator(base_seed: int, path: int) -> np.random.Generator:
    """Independent stream for path ``path`` of a run seeded by ``base_seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(base_seed), int(path)])))


def run_path(model: UrnModel, horizon: int, checkpoints: np.ndarray, base_seed: int,
             path: int) -> np.ndarray:
    """Weights at ``checkpoints`` (sorted, within ``[1, horizon]``) for one path."""
    rng = path_generator(base_seed, path)
    R = np.ascontiguousarray(model.R.matrix)
    W = np.array(model.initial_state, dtype=float)
    out = np.zeros((len(checkpoints), model.K))
    n, k = 0, 0
    w0 = model.w0
    while n < horizon:
        u = rng.random(min(STEP_CHUNK, horizon - n))
        n, k = _kernels.advance_path(W, n, w0, R, u, checkpoints, out, k)
    return out


def simulate(model: UrnModel, horizon: int, checkpoints=(), seed: int = 0, path: int = 0) -> Trajectory:
    """Simulate one path up to ``horizon``.

    The initial state and the final state are always recorded in addition
    to ``checkpoints``.  The result depends only on ``(model, seed, path)``.
    """
    cps = check_checkpoints(checkpoints, horizon)
    rec = np.asarray(sorted(set(cps.tolist()) | ({horizon} if horizon > 0 else set())), dtype=np.int64)
    W = run_path(model, horizon, rec, seed, path)
    steps = np.concatenate([[0], rec]).astype(np.int64)
    weights = np.vstack([model.initial_state[None, :], W])
    return Trajectory(model, steps, weights, int(seed), int(path))


@dataclass(frozen=True, eq=False)
class NormalizedStats:
    """Normalized statistics at one step, split by block."""

    n: int
    blocks: tuple
    regimes: tuple
    values: tuple

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.zeros(0)

    def by_regime(self, regime: Regime) -> np.ndarray:
        vals = [v for v, r in zip(self.values, self.regimes) if r is regime]
        return np.concatenate(vals) if vals else np.zeros(0)


def normalize(model: UrnModel, W: np.ndarray, n: int) -> np.ndarray:
    """Normalized statistics of weights ``W`` (shape ``(..., K)``) at step ``n``."""
    Xi = model.spec.combination[:, 1:]
    return (np.asarray(W) @ Xi) @ stat_normalizer(model, n)


def normalize_checkpoints(model: UrnModel, W: np.ndarray, checkpoints) -> np.ndarray:
    """Vectorized :func:`normalize` for ``W`` of shape ``(M, C, K)``."""
    Xi = model.spec.combination[:, 1:]
    N = stat_normalizers(model, checkpoints)
    u = np.asarray(W) @ Xi
    return np.einsum("mcp,cpq->mcq", u, N)


def normalized_statistics(traj: Trajectory, at: int, spec=None) -> NormalizedStats:
    """Per-block normalized statistics of a trajectory at a recorded step."""
    model = traj.model
    if spec is not None and spec is not model.spec:
        raise InputError("spec does not belong to the trajectory's model")
    state = traj.state_at(at)
    vec = normalize(model, state.W, at)
    values, i = [], 0
    for b in model.blocks:
        values.append(vec[i:i + b.width])
        i += b.width
    return NormalizedStats(int(at), model.blocks, model.regimes, tuple(values))


@dataclass(frozen=True)
class ConditionalMoments:
    """Conditional mean of the two statistics and their conditional covariance."""

    mean_a: float
    mean_b: float
    cov_ab: float


@dataclass(frozen=True)
class ConditionalMomentPair:
    """Both routes to the conditional moments.

    ``scales`` are the magnitudes errors are measured against: for a mean,
    the larger of ``|mean|`` and the conditional standard deviation; for
    the covariance, ``sqrt(var_a var_b)``.  Cross covariances between
    decoupled coordinates are zero up to cancellation, so a plain
    relative error would be meaningless there.  Zero eigenvalues make the
    variance itself zero up to rounding; :func:`increment_scale` supplies
    the floor in that case.
    """

    closed_form: ConditionalMoments
    enumerated: ConditionalMoments
    scales: tuple[float, float, float]

    def max_relative_error(self) -> float:
        errs = []
        for x, y, s in zip(
            (self.closed_form.mean_a, self.closed_form.mean_b, self.closed_form.cov_ab),
            (self.enumerated.mean_a, self.enumerated.mean_b, self.enumerated.cov_ab),
            self.scales,
        ):
            errs.append(abs(x - y) / max(abs(x), abs(y), s, 1e-300))
        return max(errs)


def conditional_moment_matrices(state: UrnState, model: UrnModel, N1: np.ndarray | None = None):
    """Closed-form and enumerated ``E[S_{n+1}|F_n]`` and ``Cov[S_{n+1}|F_n]``.

    ``S`` is the full normalized statistic vector.  The closed form uses the
    eigen-relation ``R Xi = Xi G``: with ``t = n + w0``, ``p = W/t``,
    ``B = G N_{n+1}``::

        mean = W' Xi (I + G/t) N_{n+1}
        cov  = B' Xi' D_pi Xi B + B' Xi' D_{p-pi} Xi B - B' (Xi'p)(Xi'p)' B

    The enumeration adds each row of ``R`` with probability ``p_c``.
    ``N1`` may pass a precomputed ``stat_normalizer(model, n + 1)``.
    """
    n, t = state.n, state.n + state.w0
    if n + 1 < 2:
        raise DomainError("conditional moments need n >= 1")
    Xi = model.spec.combination[:, 1:]
    G = model.generator()
    if N1 is None:
        N1 = stat_normalizer(model, n + 1)
    W = state.W
    p = W / t
    u = W @ Xi
    mean = u @ (np.eye(len(u)) + G / t) @ N1
    B = G @ N1
    XB = Xi @ B
    cov = (XB.T * model.pi) @ XB + (XB.T * (p - model.pi)) @ XB
    v = (u / t) @ B
    cov = cov - np.outer(v, v)

    P = model.R.matrix
    delta = (P @ Xi) @ N1
    base = u @ N1
    dbar = p @ delta
    emean = base + dbar
    dev = delta - dbar
    ecov = (dev.T * p) @ dev
    return (mean, cov), (emean, ecov)


ROUNDING_FLOOR = 1e-3


def increment_scale(state: UrnState, model: UrnModel, N1: np.ndarray | None = None) -> np.ndarray:
    """Largest uncentered one-step increment magnitude of each statistic.

    Enumerated covariances lose about ``eps * scale**2`` to cancellation;
    scaled by :data:`ROUNDING_FLOOR` this is the smallest magnitude a
    covariance is compared at.
    """
    Xi = model.spec.combination[:, 1:]
    if N1 is None:
        N1 = stat_normalizer(model, state.n + 1)
    return ROUNDING_FLOOR * np.max(np.abs(model.R.matrix) @ np.abs(Xi) @ np.abs(N1), axis=0)


def one_step_conditional_moments(state: UrnState, model: UrnModel, columns: tuple[int, int]) -> ConditionalMomentPair:
    """Conditional means and covariance of two normalized statistics.

    ``columns`` are combination-column indices (``1..K-1``).  Both the
    closed form and the ``K``-outcome enumeration are returned; they agree
    to rounding.
    """
    a, b = (int(c) - 1 for c in columns)
    p = model.K - 1
    if not (0 <= a < p and 0 <= b < p):
        raise InputError(f"columns must lie in 1..{p}, got {columns}")
    N1 = stat_normalizer(model, state.n + 1)
    (mean, cov), (emean, ecov) = conditional_moment_matrices(state, model, N1)
    sd = np.maximum(np.sqrt(np.abs(np.diag(ecov))), increment_scale(state, model, N1))
    scales = (max(abs(emean[a]), sd[a]), max(abs(emean[b]), sd[b]), float(sd[a] * sd[b]))
    return ConditionalMomentPair(
        ConditionalMoments(float(mean[a]), float(mean[b]), float(cov[a, b])),
        ConditionalMoments(float(emean[a]), float(emean[b]), float(ecov[a, b])),
        tuple(float(x) for x in scales),
    )


@dataclass(frozen=True, eq=False)
class JointMoments:
    """Exact moments at recorded steps.

    ``mean_W[k] = E W_n``, ``mean_u[k] = E u_n`` and ``second_u[k] = E u_n u_n'``
    where ``u_n = Xi' W_n`` for the chosen combination columns.
    """

    steps: np.ndarray
    columns: tuple[int, ...]
    mean_W: np.ndarray
    mean_u: np.ndarray
    second_u: np.ndarray


def joint_moments(model: UrnModel, horizon: int, record=None, columns=None) -> JointMoments:
    """Exact moment recursion for any union of whole blocks.

    ``columns`` defaults to every non-principal column.  ``record`` defaults
    to every step ``0..horizon``.
    """
    if horizon < 0 or horizon > 10**7:
        raise InputError(f"horizon must lie in [0, 1e7], got {horizon}")
    if columns is None:
        blocks = list(model.blocks)
    else:
        cols = set(int(c) for c in columns)
        blocks = [b for b in model.blocks if cols & set(b.columns)]
        if any(not set(b.columns) <= cols for b in blocks) or cols - {c for b in blocks for c in b.columns}:
            raise InputError("columns must be a union of whole blocks")
    cols = tuple(c for b in blocks for c in b.columns)
    G = block_diagonal([b.matrix() for b in blocks]) if blocks else np.zeros((0, 0))
    Xi = np.ascontiguousarray(model.spec.combination[:, list(cols)])
    rec = np.arange(horizon + 1, dtype=np.int64) if record is None else np.asarray(sorted(set(int(r) for r in record)), dtype=np.int64)
    if rec.size and (rec[0] < 0 or rec[-1] > horizon):
        raise InputError("record steps must lie in [0, horizon]")
    p = len(cols)
    out_m = np.zeros((len(rec), model.K))
    out_u = np.zeros((len(rec), p))
    out_S = np.zeros((len(rec), p, p))
    _kernels.joint_moments(np.ascontiguousarray(model.R.matrix), Xi, np.ascontiguousarray(G),
                           np.array(model.initial_state, dtype=float), model.w0, int(horizon), rec,
                           out_m, out_u, out_S)
    return JointMoments(rec, cols, out_m, out_u, out_S)


@dataclass(frozen=True, eq=False)
class MomentSequence:
    """``E W_n`` and ``E[(W_n' xi_i)(W_n' xi_j)]`` at recorded steps."""

    steps: np.ndarray
    mean_W: np.ndarray
    cross: np.ndarray


def exact_moment_recursion(model: UrnModel, i: int, j: int, horizon: int, record=None) -> MomentSequence:
    """Scalar second-moment recursion for two eigenvector columns.

    ``i`` and ``j`` are combination-column indices of real one-dimensional
    blocks.  With ``t = n + w0``::

        E[UV]_{n+1} = (1 + (lam_i + lam_j)/t) E[UV]_n + lam_i lam_j <E W_n / t, xi_i xi_j>
    """
    for c in (i, j):
        b = model.block_of_column(c)
        if b.kind is not BlockKind.REAL or b.d != 1:
            raise NotEigenvectorColumn(f"column {c} belongs to a {b.kind.value} block with d={b.d}; "
                                       "use joint_moments for general blocks")
    cols = sorted({i, j})
    jm = joint_moments(model, horizon, record, cols)
    a, b = jm.columns.index(i), jm.columns.index(j)
    return MomentSequence(jm.steps, jm.mean_W, jm.second_u[:, a, b].copy())


def exact_normalized_moments(model: UrnModel, checkpoints) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean vector and covariance matrix of the normalized statistics
    at each checkpoint (shapes ``(C, p)`` and ``(C, p, p)``)."""
    cps = [int(c) for c in checkpoints]
    jm = joint_moments(model, max(cps), cps)
    N = stat_normalizers(model, cps)
    mean = np.einsum("cp,cpq->cq", jm.mean_u, N)
    cov_u = jm.second_u - np.einsum("cp,cq->cpq", jm.mean_u, jm.mean_u)
    cov = np.einsum("cpa,cpq,cqb->cab", N, cov_u, N)
    return mean, cov
