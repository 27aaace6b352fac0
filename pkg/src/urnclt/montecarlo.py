"""Monte Carlo ensembles and the statistical checks run on them."""
from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DegenerateVariance, InputError
from .limits import limit_covariance
from .modelio import digest, model_document
from .spectrum import Regime, UrnModel, stat_normalizers
from .urn import (
    MAX_HORIZON,
    UrnState,
    conditional_moment_matrices,
    exact_normalized_moments,
    increment_scale,
    normalize_checkpoints,
    run_path,
)

PATH_CHUNK = 64
KS_C_001 = 1.628
MEAN_ROUNDING = 1e-10


def default_workers() -> int:
    env = os.environ.get("URNCLT_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            raise InputError(f"URNCLT_WORKERS must be a positive integer, got {env!r}") from None
        if w < 1:
            raise InputError(f"URNCLT_WORKERS must be a positive integer, got {env!r}")
        return w
    return os.cpu_count() or 1


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, horizon, recorded steps, seed and parallelism hint."""

    M: int
    horizon: int
    checkpoints: tuple[int, ...]
    base_seed: int = 42
    workers: int = 1

    def __post_init__(self):
        cps = tuple(int(c) for c in self.checkpoints)
        object.__setattr__(self, "checkpoints", cps)
        if int(self.M) < 2:
            raise InputError(f"at least M = 2 paths are required, got {self.M}")
        if not cps:
            raise InputError("at least one checkpoint is required")
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise InputError(f"checkpoints must be strictly increasing, got {list(cps)}")
        if cps[0] < 2 or cps[-1] > self.horizon:
            raise InputError(f"checkpoints must lie in [2, horizon={self.horizon}], got {list(cps)}")
        if self.horizon > MAX_HORIZON:
            raise InputError(f"horizon must be at most {MAX_HORIZON}")
        if not 0 <= int(self.base_seed) < 2**64:
            raise InputError("base_seed must be a 64-bit unsigned integer")
        if int(self.workers) < 1:
            raise InputError("workers must be >= 1")

    def echo(self) -> dict:
        """Everything that determines the samples (``workers`` does not)."""
        return {"M": int(self.M), "horizon": int(self.horizon),
                "checkpoints": list(self.checkpoints), "base_seed": int(self.base_seed)}


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Weights ``W[i, k]`` and normalized statistics ``stats[i, k]`` of path
    ``i`` at ``checkpoints[k]``."""

    model: UrnModel
    config: EnsembleConfig
    W: np.ndarray
    stats: np.ndarray

    @property
    def labels(self) -> list[str]:
        return self.model.stat_labels()

    def column(self, label: str) -> np.ndarray:
        """All paths and checkpoints of one statistic, shape ``(M, C)``."""
        return self.stats[:, :, self.labels.index(label)]

    def to_csv(self, kind: str = "states") -> str:
        """Long format, one row per path and checkpoint."""
        if kind == "states":
            header = [f"W_{j}" for j in range(self.model.K)]
            data = self.W
        elif kind == "stats":
            header = self.labels
            data = self.stats
        else:
            raise InputError(f"unknown CSV kind {kind!r}")
        buf = io.StringIO()
        buf.write(",".join(["path", "n"] + header) + "\n")
        for k, n in enumerate(self.config.checkpoints):
            for i in range(self.config.M):
                buf.write(",".join([str(i), str(n)] + [format(x, ".17g") for x in data[i, k]]) + "\n")
        return buf.getvalue()


def run_paths(model: UrnModel, horizon: int, checkpoints, base_seed: int, M: int, workers: int = 1) -> np.ndarray:
    """Weights of paths ``0..M-1`` at ``checkpoints`` (shape ``(M, C, K)``).

    Path ``i`` uses the stream keyed by ``(base_seed, i)`` and lands in row
    ``i`` whatever the scheduling, so the result does not depend on
    ``workers``.
    """
    cps = np.asarray(checkpoints, dtype=np.int64)
    out = np.zeros((M, len(cps), model.K))

    def work(start: int):
        for i in range(start, min(start + PATH_CHUNK, M)):
            out[i] = run_path(model, horizon, cps, base_seed, i)

    starts = range(0, M, PATH_CHUNK)
    if workers <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    return out


def run_ensemble(model: UrnModel, config: EnsembleConfig) -> Ensemble:
    """Simulate ``config.M`` independent paths and normalize them."""
    W = run_paths(model, config.horizon, config.checkpoints, config.base_seed, config.M, config.workers)
    stats = normalize_checkpoints(model, W, config.checkpoints)
    return Ensemble(model, config, W, stats)


def normal_cdf(x, mean: float = 0.0, variance: float = 1.0):
    return 0.5 * (1.0 + erf((np.asarray(x) - mean) / math.sqrt(2.0 * variance)))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    critical: float
    passed: bool


def ks_gaussian(samples, variance: float, mean: float = 0.0) -> KSResult:
    """One-sample Kolmogorov-Smirnov test against ``N(mean, variance)`` at
    level 0.01 (asymptotic critical value ``1.628/sqrt(M)``)."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    M = x.size
    if M < 100:
        raise InputError(f"KS test needs at least 100 samples, got {M}")
    if not variance > 0.0 or not math.isfinite(variance):
        raise DegenerateVariance(f"variance must be positive and finite, got {variance}")
    F = normal_cdf(x, mean, variance)
    i = np.arange(1, M + 1)
    D = float(max(np.max(i / M - F), np.max(F - (i - 1) / M)))
    crit = KS_C_001 / math.sqrt(M)
    return KSResult(D, crit, D < crit)


@dataclass(frozen=True)
class IndependenceResult:
    max_abs: float
    threshold: float
    passed: bool
    pairs: tuple[tuple[str, str, float], ...]


def cross_regime_independence(samples: dict) -> IndependenceResult:
    """Pearson correlations between statistics of different regimes.

    ``samples`` maps a regime name to an ``(M, q)`` array, or to a dict of
    named ``(M,)`` columns.  Passes iff every cross-regime ``|rho| < 4/sqrt(M)``.
    Constant columns have no correlation and count as zero.
    """
    cols: list[tuple[str, str, np.ndarray]] = []
    for regime, data in samples.items():
        if isinstance(data, dict):
            items = data.items()
        else:
            arr = np.asarray(data, dtype=float)
            arr = arr[:, None] if arr.ndim == 1 else arr
            items = ((f"{regime}[{j}]", arr[:, j]) for j in range(arr.shape[1]))
        for name, col in items:
            cols.append((str(regime), name, np.asarray(col, dtype=float)))
    if len({r for r, _, _ in cols}) < 2:
        raise InputError("independence check needs at least two regimes")
    M = cols[0][2].size
    if M < 100:
        raise InputError(f"independence check needs at least 100 samples, got {M}")
    thr = 4.0 / math.sqrt(M)
    pairs = []
    for a in range(len(cols)):
        for b in range(a + 1, len(cols)):
            ra, na, xa = cols[a]
            rb, nb, xb = cols[b]
            if ra == rb:
                continue
            xa_c, xb_c = xa - xa.mean(), xb - xb.mean()
            den = math.sqrt(float(xa_c @ xa_c) * float(xb_c @ xb_c))
            rho = float(xa_c @ xb_c) / den if den > 0 else 0.0
            pairs.append((na, nb, rho))
    mx = max(abs(r) for _, _, r in pairs)
    return IndependenceResult(mx, thr, mx < thr, tuple(pairs))


@dataclass(frozen=True)
class MartingaleCheck:
    """Gaps ``|Z_{n_k} - Z_H|`` at the intermediate steps ``n_k``."""

    steps: tuple[int, ...]
    max_gaps: tuple[float, ...]
    median_gaps: tuple[float, ...]
    shrink: float
    required: float
    passed: bool


def martingale_convergence_check(stats, steps) -> MartingaleCheck:
    """Almost-sure convergence diagnostic for supercritical statistics.

    ``stats`` has shape ``(M, C)`` or ``(M, C, q)``; the last checkpoint
    plays the limit.  Passes iff the median gap shrinks by at least
    ``2^decades`` from the first to the last intermediate checkpoint, where
    ``decades = log10(n_last / n_first)``.  Identically zero gaps pass.
    """
    Z = np.asarray(stats, dtype=float)
    if Z.ndim == 2:
        Z = Z[:, :, None]
    steps = tuple(int(s) for s in steps)
    if Z.shape[1] != len(steps) or len(steps) < 2:
        raise InputError("martingale check needs at least two checkpoints matching the data")
    gaps = np.linalg.norm(Z[:, :-1, :] - Z[:, -1:, :], axis=2)
    med = np.median(gaps, axis=0)
    mx = gaps.max(axis=0)
    decades = math.log10(steps[-2] / steps[0])
    required = 2.0 ** decades
    if med[-1] > 0:
        shrink = float(med[0] / med[-1])
    else:
        shrink = math.inf if med[0] > 0 else 1.0
    passed = bool(np.all(gaps == 0.0)) or shrink >= required
    return MartingaleCheck(steps[:-1], tuple(float(x) for x in mx), tuple(float(x) for x in med),
                           shrink, required, passed)


@dataclass(frozen=True)
class StrongLawResult:
    fraction: float
    delta: float
    n: int
    passed: bool


def strong_law_check(W, n: int, pi, delta: float = 0.05, w0: float = 1.0,
                     required: float = 0.99) -> StrongLawResult:
    """Fraction of paths with ``max_i |W_n,i/(n + w0) - pi_i| < delta``."""
    if delta < 0:
        raise InputError("delta must be nonnegative")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    dev = np.max(np.abs(W / (n + w0) - np.asarray(pi)), axis=1)
    frac = float(np.mean(dev < delta))
    return StrongLawResult(frac, float(delta), int(n), frac >= required)


@dataclass(frozen=True)
class Check:
    """One named verdict with the numbers it was decided on."""

    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "threshold", float(self.threshold))


@dataclass(eq=False)
class VerificationReport:
    model_hash: str
    config: dict
    labels: list
    checks: list = field(default_factory=list)
    exact: dict = field(default_factory=dict)
    empirical: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "model_hash": self.model_hash,
            "config": self.config,
            "labels": self.labels,
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "exact": self.exact,
            "empirical": self.empirical,
            "limits": self.limits,
            "diagnostics": self.diagnostics,
        }

    def summary(self) -> str:
        lines = [f"model {self.model_hash[:16]}  M={self.config['M']}  horizon={self.config['horizon']}  "
                 f"seed={self.config['base_seed']}"]
        for c in self.checks:
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: value={c.value:.6g} "
                         f"threshold={c.threshold:.6g}{'  ' + c.detail if c.detail else ''}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"({len(self.checks) - len(self.failed())}/{len(self.checks)} checks)")
        return "\n".join(lines) + "\n"


def random_states(model: UrnModel, count: int, rng: np.random.Generator, n_range=(10, 100_000)) -> list[UrnState]:
    """Random mid-path states: a uniform step in ``n_range`` and Dirichlet weights."""
    out = []
    for _ in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        W = rng.dirichlet(np.ones(model.K)) * (n + model.w0)
        out.append(UrnState(W, n, model.w0))
    return out


def conditional_moment_agreement(model: UrnModel, states) -> float:
    """Worst scaled discrepancy between closed-form and enumerated
    conditional moments over all statistic pairs and states."""
    worst = 0.0
    # one pass over the distinct steps instead of a fresh A_n product per state
    steps = sorted({st.n + 1 for st in states})
    norms = dict(zip(steps, stat_normalizers(model, steps))) if steps else {}
    for st in states:
        N1 = norms[st.n + 1]
        (mean, cov), (emean, ecov) = conditional_moment_matrices(st, model, N1)
        sd = np.maximum(np.sqrt(np.abs(np.diag(ecov))), increment_scale(st, model, N1))
        mscale = np.maximum(np.maximum(np.abs(mean), np.abs(emean)), sd)
        cscale = np.maximum(np.maximum(np.abs(cov), np.abs(ecov)), np.outer(sd, sd))
        with np.errstate(divide="ignore", invalid="ignore"):
            em = np.where(mscale > 0, np.abs(mean - emean) / mscale, 0.0)
            ec = np.where(cscale > 0, np.abs(cov - ecov) / cscale, 0.0)
        worst = max(worst, float(em.max(initial=0.0)), float(ec.max(initial=0.0)))
    return worst


def verify(model: UrnModel, config: EnsembleConfig, variance_scale: float = 1.0,
           model_hash: str | None = None, oracle_states: int = 200,
           limit_horizon: int = 10**6) -> VerificationReport:
    """Run an ensemble and check it against exact and asymptotic values.

    ``variance_scale`` multiplies every theoretical variance before it is
    compared; values other than 1 exist to demonstrate that the checks
    can fail.
    """
    cps = list(config.checkpoints)
    if cps[-1] != config.horizon:
        cps.append(config.horizon)
        config = EnsembleConfig(config.M, config.horizon, tuple(cps), config.base_seed, config.workers)
    labels = model.stat_labels()
    M = config.M
    report = VerificationReport(model_hash or digest(model_document(model)), config.echo(), labels)
    report.config["variance_scale"] = float(variance_scale)
    checks = report.checks

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(config.base_seed), 1, 0])))
    err = conditional_moment_agreement(model, random_states(model, oracle_states, rng))
    checks.append(Check("conditional_moments", err <= 1e-12, err, 1e-12,
                        f"{oracle_states} random states, closed form vs enumeration"))

    ens = run_ensemble(model, config)
    ex_mean, ex_cov = exact_normalized_moments(model, cps)
    emp_mean = ens.stats.mean(axis=0)
    emp_cov = np.stack([np.cov(ens.stats[:, k, :], rowvar=False, ddof=1).reshape(len(labels), len(labels))
                        for k in range(len(cps))])
    report.exact = {"steps": cps, "mean": ex_mean.tolist(), "cov": ex_cov.tolist()}
    report.empirical = {"steps": cps, "mean": emp_mean.tolist(), "cov": emp_cov.tolist()}
    lim = limit_covariance(model, limit_horizon)
    report.limits = lim.to_dict()

    regime_of = {labels[c - 1]: model.regime_of_column(c) for b in model.blocks for c in b.columns}
    gaussian = [j for j, l in enumerate(labels) if regime_of[l] is not Regime.SUPERCRITICAL]
    martingale = [j for j, l in enumerate(labels) if regime_of[l] is Regime.SUPERCRITICAL]

    for k, n in enumerate(cps):
        for j, lab in enumerate(labels):
            x = ens.stats[:, k, j]
            sd = float(x.std(ddof=1))
            gap = abs(emp_mean[k, j] - ex_mean[k, j])
            # rounding allowance: deterministic statistics have sd ~ 0
            thr = 4.0 * sd / math.sqrt(M) + MEAN_ROUNDING * max(1.0, abs(ex_mean[k, j]))
            checks.append(Check(f"mean[{lab}@{n}]", gap <= thr, gap, thr))
        for j in gaussian:
            lab = labels[j]
            v_ex = float(ex_cov[k, j, j]) * variance_scale
            v_emp = float(emp_cov[k, j, j])
            se = v_ex * math.sqrt(2.0 / (M - 1))
            gap = abs(v_emp - v_ex)
            ok = gap <= 3.0 * se if v_ex > 0 else v_emp <= 1e-20
            checks.append(Check(f"variance[{lab}@{n}]", ok, gap, 3.0 * se,
                                f"empirical {v_emp:.6g} vs exact {v_ex:.6g}"))
        for j in martingale:
            lab = labels[j]
            z2 = ens.stats[:, k, j] ** 2
            m2_ex = float(ex_cov[k, j, j] + ex_mean[k, j] ** 2)
            se = float(z2.std(ddof=1)) / math.sqrt(M)
            gap = abs(float(z2.mean()) - m2_ex)
            checks.append(Check(f"second_moment[{lab}@{n}]", gap <= 3.0 * se or gap <= 1e-12 * max(1.0, m2_ex),
                                gap, 3.0 * se, f"empirical {z2.mean():.6g} vs exact {m2_ex:.6g}"))

    last = len(cps) - 1
    for j in gaussian:
        lab = labels[j]
        v_ex = float(ex_cov[last, j, j]) * variance_scale
        if v_ex > 0 and M >= 100:
            ks = ks_gaussian(ens.stats[:, last, j], v_ex, float(ex_mean[last, j]))
            checks.append(Check(f"ks[{lab}@{cps[last]}]", ks.passed, ks.statistic, ks.critical))

    crit_cols = [j for j in gaussian if regime_of[labels[j]] is Regime.CRITICAL]
    if crit_cols and lim.critical is not None and len(cps) >= 2:
        ccols = model.columns_in(Regime.CRITICAL)
        for j in crit_cols:
            target = float(lim.critical[ccols.index(j + 1), ccols.index(j + 1)])
            dist = [abs(float(ex_cov[k, j, j]) - target) for k in range(len(cps))]
            ok = all(b < a for a, b in zip(dist, dist[1:]))
            checks.append(Check(f"critical_trend[{labels[j]}]", ok, dist[-1], dist[0],
                                f"exact variances approach {target:.6g} monotonically"))

    by_regime: dict = {}
    for j, lab in enumerate(labels):
        by_regime.setdefault(regime_of[lab].value, {})[lab] = ens.stats[:, last, j]
    if len(by_regime) >= 2 and M >= 100:
        ind = cross_regime_independence(by_regime)
        checks.append(Check(f"independence@{cps[last]}", ind.passed, ind.max_abs, ind.threshold,
                            f"{len(ind.pairs)} cross-regime pairs"))

    if martingale and len(cps) >= 3:
        mc = martingale_convergence_check(ens.stats[:, :, martingale], cps)
        checks.append(Check("martingale_convergence", mc.passed, mc.shrink, mc.required,
                            "median gap ratio between first and last intermediate checkpoint"))
        report.diagnostics["martingale"] = asdict(mc)

    sl = strong_law_check(ens.W[:, last, :], cps[last], model.pi, 0.05, model.w0)
    report.diagnostics["strong_law"] = asdict(sl)
    if config.horizon >= 10**5:
        checks.append(Check(f"strong_law@{cps[last]}", sl.passed, sl.fraction, 0.99,
                            "fraction of paths within 0.05 of pi"))
    if lim.subcritical is not None:
        scols = model.columns_in(Regime.SUBCRITICAL)
        report.diagnostics["subcritical_asymptote_gap"] = {
            labels[c - 1]: float(abs(ex_cov[last, c - 1, c - 1] / lim.subcritical[i, i] - 1.0))
            if lim.subcritical[i, i] > 0 else 0.0
            for i, c in enumerate(scols)}
    report.diagnostics["warnings"] = list(model.warnings)
    return report
