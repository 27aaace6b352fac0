"""Command-line interface.

Exit codes: 0 success, 1 verification failure (or replay mismatch),
2 input error, 3 numerical-method failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, NumericalError, ParseError, UrnError
from .limits import limit_covariance
from .modelio import ModelFile, dumps, load_model, parse_model
from .montecarlo import EnsembleConfig, default_workers, run_paths, verify
from .urn import check_checkpoints, normalize_checkpoints

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_CHECKPOINTS = (1_000, 10_000, 100_000)
DEFAULT_PATHS = 10_000
DEFAULT_SEED = 42


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _parse_checkpoints(text: str | None, horizon: int) -> list[int]:
    if text is None:
        return [c for c in DEFAULT_CHECKPOINTS if c <= horizon]
    try:
        cps = [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"--checkpoints must be a comma-separated list of integers, got {text!r}") from None
    return sorted(set(cps))


def _workers(args) -> int:
    w = args.workers if getattr(args, "workers", None) is not None else default_workers()
    if w < 1:
        raise InputError("--workers must be >= 1")
    return w


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _write_manifest(out: Path, command: str, config: dict, mf: ModelFile, outputs: dict, started: str) -> None:
    manifest = {
        "tool": "urnclt",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "model_hash": mf.hash,
        "model": mf.document,
        "outputs": {name: _sha(text) for name, text in outputs.items()},
        "started": started,
        "finished": _now(),
    }
    _write(_manifest_path(out), dumps(manifest))


def _load(args) -> ModelFile:
    return load_model(args.model, tol=getattr(args, "tol", 1e-6))


def spectrum_report(mf: ModelFile) -> dict:
    m = mf.model
    blocks = [dict(b.to_dict(), regime=r.value) for b, r in zip(m.blocks, m.regimes)]
    err = float(np.max(np.abs(m.spec.reconstruct() - m.R.matrix)))
    return {
        "K": m.K,
        "eigenvalues": [[1.0, 0.0]] + [[b.lambda_r, s * b.lambda_c] for b in m.blocks
                                       for s in ((1, -1) if b.lambda_c else (1,)) for _ in range(b.d)],
        "blocks": blocks,
        "stationary_distribution": m.pi.tolist(),
        "combination": m.spec.combination.tolist(),
        "replacement_matrix": m.R.matrix.tolist(),
        "reconstruction_error": err,
        "initial_state": m.initial_state.tolist(),
        "epsilon_critical": m.epsilon,
        "warnings": list(m.warnings),
    }


def _spectrum_text(rep: dict) -> str:
    lines = [f"K = {rep['K']}", "pi = " + ", ".join(f"{x:.10g}" for x in rep["stationary_distribution"])]
    for b in rep["blocks"]:
        lam = f"{b['lambda_r']:.10g}" + (f" +/- {b['lambda_c']:.10g}i" if b["lambda_c"] else "")
        lines.append(f"block {b['kind']:7s} lambda = {lam:28s} d = {b['d']}  columns {b['columns']}  {b['regime']}")
    lines += [f"warning: {w}" for w in rep["warnings"]]
    return "\n".join(lines) + "\n"


def cmd_spectrum(args, mf: ModelFile | None = None) -> tuple[int, dict]:
    mf = mf or _load(args)
    rep = spectrum_report(mf)
    text = dumps(rep)
    return EXIT_OK, {"json": text, "text": _spectrum_text(rep)}


def cmd_simulate(args, mf: ModelFile | None = None) -> tuple[int, dict]:
    mf = mf or _load(args)
    m = mf.model
    if args.paths < 1:
        raise InputError("--paths must be >= 1")
    cps = check_checkpoints(_parse_checkpoints(args.checkpoints, args.horizon), args.horizon)
    rec = sorted(set(cps.tolist()) | ({args.horizon} if args.horizon > 0 else set()))
    W = run_paths(m, args.horizon, rec, args.seed, args.paths, _workers(args))
    buf = io.StringIO()
    if args.stats:
        if not rec or rec[0] < 2:
            raise InputError("normalized statistics need recorded steps >= 2")
        S = normalize_checkpoints(m, W, rec)
        buf.write(",".join(["path", "n"] + m.stat_labels()) + "\n")
        rows = [(k, n, S) for k, n in enumerate(rec)]
    else:
        W = np.concatenate([np.broadcast_to(m.initial_state, (args.paths, 1, m.K)), W], axis=1)
        rec = [0] + rec
        buf.write(",".join(["path", "n"] + [f"W_{j}" for j in range(m.K)]) + "\n")
        rows = [(k, n, W) for k, n in enumerate(rec)]
    for k, n, data in rows:
        for i in range(args.paths):
            buf.write(",".join([str(i), str(n)] + [format(x, ".17g") for x in data[i, k]]) + "\n")
    text = f"{args.paths} paths, steps {rec}\n"
    return EXIT_OK, {"csv": buf.getvalue(), "text": text}


def cmd_limits(args, mf: ModelFile | None = None) -> tuple[int, dict]:
    mf = mf or _load(args)
    lc = limit_covariance(mf.model, args.super_horizon)
    d = lc.to_dict()
    lines = []
    for key in ("subcritical", "critical", "critical_uniform_half", "supercritical"):
        if d[key] is not None:
            lines.append(f"{key}:")
            lines += ["  " + "  ".join(f"{x: .12g}" for x in row) for row in d[key]]
    if d["supercritical_tail_bound"] is not None:
        lines.append(f"supercritical tail bound at n={d['supercritical_horizon']}:")
        lines += ["  " + "  ".join(f"{x: .3g}" for x in row) for row in d["supercritical_tail_bound"]]
    return EXIT_OK, {"json": dumps(d), "text": "\n".join(lines) + "\n"}


def cmd_verify(args, mf: ModelFile | None = None) -> tuple[int, dict]:
    mf = mf or _load(args)
    cps = _parse_checkpoints(args.checkpoints, args.horizon)
    if args.horizon not in cps:
        cps.append(args.horizon)
    config = EnsembleConfig(args.paths, args.horizon, tuple(sorted(cps)), args.seed, _workers(args))
    rep = verify(mf.model, config, variance_scale=args.debug_variance_scale, model_hash=mf.hash)
    code = EXIT_OK if rep.passed else EXIT_FAIL
    return code, {"json": dumps(rep.to_dict()), "text": rep.summary()}


COMMANDS = {
    "spectrum": (cmd_spectrum, {"json": "spectrum.json"}),
    "simulate": (cmd_simulate, {"csv": "samples.csv"}),
    "limits": (cmd_limits, {"json": "limits.json"}),
    "verify": (cmd_verify, {"json": "report.json"}),
}


def _config_of(args) -> dict:
    keys = {
        "spectrum": ["tol"],
        "simulate": ["horizon", "checkpoints", "seed", "paths", "stats", "tol"],
        "limits": ["super_horizon", "tol"],
        "verify": ["paths", "horizon", "checkpoints", "seed", "debug_variance_scale", "tol"],
    }[args.command]
    cfg = {k: getattr(args, k) for k in keys}
    cfg.setdefault("seed", None)
    return cfg


def _emit(args, mf: ModelFile, code: int, outputs: dict, started: str) -> dict:
    """Write primary output, text summary and manifest; return written texts by name."""
    kind = next(k for k in outputs if k != "text")
    out = Path(args.out) if args.out else Path(COMMANDS[args.command][1][kind])
    written = {out.name: outputs[kind]}
    _write(out, outputs[kind])
    if args.command == "verify":
        txt = out.with_suffix(".txt")
        _write(txt, outputs["text"])
        written[txt.name] = outputs["text"]
    _write_manifest(out, args.command, _config_of(args), mf, written, started)
    return written


def _replay(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text())
        command = manifest["command"]
        config = manifest["config"]
        document = manifest["model"]
        expected = manifest["outputs"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from None
    if command not in COMMANDS:
        raise ParseError(f"manifest names unknown command {command!r}")
    ns = argparse.Namespace(command=command, workers=args.workers, **config)
    mf = parse_model(document, tol=config.get("tol", 1e-6))
    func, _ = COMMANDS[command]
    code, outputs = func(ns, mf)
    kind = next(k for k in outputs if k != "text")
    produced = {name: outputs["text"] if name.endswith(".txt") else outputs[kind] for name in expected}
    out_dir = Path(args.out_dir) if args.out_dir else None
    mismatches = []
    for name, text in produced.items():
        if out_dir is not None:
            _write(out_dir / name, text)
        if _sha(text) != expected.get(name):
            mismatches.append(name)
    if mismatches:
        print(f"replay differs from the recorded run: {', '.join(mismatches)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"replay of {command} reproduced {len(produced)} output(s) byte for byte")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urnclt", description="Multicolor urn simulation, limit covariances and CLT checks.")
    p.add_argument("--version", action="version", version=f"urnclt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=False, workers=False):
        sp.add_argument("model", help="model JSON file")
        sp.add_argument("--tol", type=float, default=1e-6, help="eigenvalue clustering tolerance (default 1e-6)")
        sp.add_argument("--out", help="output file (a manifest is written next to it)")
        if seed:
            sp.add_argument("--seed", type=int, default=DEFAULT_SEED, help="base seed (default 42)")
        if workers:
            sp.add_argument("--workers", type=int, default=None,
                            help="worker threads (default: $URNCLT_WORKERS or the CPU count)")

    sp = sub.add_parser("spectrum", help="eigenvalues, blocks, regimes and pi")
    common(sp)
    sp = sub.add_parser("simulate", help="simulate paths and write checkpointed states as CSV")
    common(sp, seed=True, workers=True)
    sp.add_argument("--horizon", type=int, default=100_000)
    sp.add_argument("--checkpoints", help="comma-separated steps (default 1000,10000,100000 up to the horizon)")
    sp.add_argument("--paths", type=int, default=DEFAULT_PATHS)
    sp.add_argument("--stats", action="store_true", help="write normalized statistics instead of weights")
    sp = sub.add_parser("limits", help="limit covariances of every regime")
    common(sp)
    sp.add_argument("--super-horizon", type=int, default=10**6,
                    help="horizon of the supercritical moment recursion (default 1e6)")
    sp = sub.add_parser("verify", help="Monte Carlo verification against exact and limit values")
    common(sp, seed=True, workers=True)
    sp.add_argument("--paths", type=int, default=DEFAULT_PATHS)
    sp.add_argument("--horizon", type=int, default=100_000)
    sp.add_argument("--checkpoints", help="comma-separated steps (default 1000,10000,100000 up to the horizon)")
    sp.add_argument("--debug-variance-scale", type=float, default=1.0,
                    help="multiply theoretical variances (sensitivity self-test)")
    sp = sub.add_parser("replay", help="re-run a command from its manifest and compare outputs")
    sp.add_argument("manifest")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--out-dir", help="also write the regenerated outputs here")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return _replay(args)
        started = _now()
        mf = _load(args)
        func, _ = COMMANDS[args.command]
        code, outputs = func(args, mf)
        _emit(args, mf, code, outputs, started)
        sys.stdout.write(outputs["text"])
        return code
    except InputError as exc:
        print(f"input error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UrnError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
