"""convexq command line.

    convexq test-convexity --spec f.json (--points pts.json | --sample N --seed S)
    convexq newton --spec f.json --x0 0.5,0.5 [--eta 1 --steps 10]
    convexq approx-table --target pos_power --c 0.5 --deltas 0.2,0.1 --epss 1e-2,1e-3
    convexq bench [--ns 2,4,8,16 --Ns 2,4,8]

Exit codes for test-convexity: 0 Convex, 1 NotConvex, 2 Inconclusive.
Any command: 64 bad input, 65 dimension cap exceeded, 3 other failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import hessian_pipeline as hp
from . import newton_solver as ns
from . import qsvt_transforms as qt
from . import scaling
from .errors import ConvexqError, DimensionCapError, InputError
from .poly_core import points_from_dict, sample_points, spec_from_dict
from .spectral_test import convexity_verdict

EXIT_VERDICT = {"Convex": 0, "NotConvex": 1, "Inconclusive": 2}
EXIT_FAILURE = 3
EXIT_INPUT = 64
EXIT_CAP = 65


@dataclass
class RunConfig:
    command: str
    spec_path: str | None = None
    points_path: str | None = None
    sample: int | None = None
    seed: int = 0
    sampler: str = "uniform_ball"
    delta: float = 0.01
    eps: float | None = None
    mode: str = "multi"
    output_path: str | None = None
    cap: int = hp.DIM_CAP

    def validate(self) -> None:
        if self.spec_path is not None and not os.path.isfile(self.spec_path):
            raise InputError(f"spec file not found: {self.spec_path}")
        if self.points_path is not None and not os.path.isfile(self.points_path):
            raise InputError(f"points file not found: {self.points_path}")
        if not self.delta > 0:
            raise InputError("--delta must be positive")
        if self.eps is not None and not 0 < self.eps < 1:
            raise InputError("--eps must lie in (0, 1)")
        if self.cap < 1:
            raise InputError("--cap must be positive")
        if self.sample is not None and self.sample < 1:
            raise InputError("--sample must be at least 1")


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _emit(text: str, path: str | None) -> None:
    """Write to stdout, or atomically replace ``path``."""
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".convexq-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise InputError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _load_spec(cfg: RunConfig):
    if cfg.spec_path is None:
        raise InputError("--spec is required")
    return spec_from_dict(_read_json(cfg.spec_path))


def _load_points(cfg: RunConfig, n: int):
    if cfg.points_path is not None:
        return points_from_dict(_read_json(cfg.points_path))
    if cfg.sample is None:
        raise InputError("give --points or --sample")
    return sample_points(n, cfg.sample, seed=cfg.seed, mode=cfg.sampler)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_test_convexity(cfg: RunConfig) -> int:
    cfg.validate()
    spec = _load_spec(cfg)
    points = _load_points(cfg, spec.n)
    dim = getattr(spec, "dim", spec.n) * points.N
    if dim > cfg.cap:
        raise DimensionCapError(f"n^p * N = {dim} exceeds the cap {cfg.cap}")
    mode = "per_point" if cfg.mode in ("per-point", "per_point") else cfg.mode
    verdict = convexity_verdict(spec, points, delta=cfg.delta, mode=mode, seed=cfg.seed,
                                eps=cfg.eps, cap=cfg.cap)
    out = verdict.to_dict()
    if not verdict.detail.get("verified", True):
        out["label"] = "unverified"
    _emit(json.dumps(out, indent=2), cfg.output_path)
    return EXIT_VERDICT[verdict.verdict]


def cmd_newton(cfg: RunConfig, x0: list[float], eta: float | None, steps: int, grad_tol: float) -> int:
    cfg.validate()
    spec = _load_spec(cfg)
    if len(x0) != spec.n:
        raise InputError(f"--x0 has {len(x0)} entries, spec has n={spec.n}")
    if eta is None:
        eta = ns.default_eta(spec, np.asarray(x0))
    ncfg = ns.NewtonConfig(eta=eta, max_steps=steps, grad_tol=grad_tol, seed=cfg.seed,
                           eps=cfg.eps if cfg.eps is not None else hp.DEFAULT_EPS)
    trace = ns.newton_run(spec, x0, ncfg)
    _emit(trace.to_jsonl(), cfg.output_path)
    if trace.diverged:
        return 1
    return 0 if trace.converged else 2


def cmd_approx_table(cfg: RunConfig, target: str, c: float, deltas, epss) -> int:
    if target not in ("pos_power", "neg_power"):
        raise InputError(f"unknown target {target!r}")
    rows = qt.approx_table(target, c, deltas, epss)
    buf = io.StringIO()
    fields = ["target", "c", "delta", "eps", "degree", "measured_error", "ok"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    _emit(buf.getvalue(), cfg.output_path)
    return 0


def cmd_bench(cfg: RunConfig, n_grid, N_grid, p: int, N: int) -> int:
    worst = max(n_grid) ** p * max(N, max(N_grid))
    if worst > cfg.cap:
        raise DimensionCapError(f"bench grid reaches dimension {worst}, cap is {cfg.cap}")
    report = scaling.bench(ns=tuple(n_grid), p=p, N=N, Ns=tuple(N_grid), seed=cfg.seed)
    _emit(json.dumps(report, indent=2, default=float), cfg.output_path)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags, which would read as Inconclusive."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convexq", description="Simulated quantum convexity testing.")
    parser.add_argument("--version", action="version", version=f"convexq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_spec=True):
        if need_spec:
            p.add_argument("--spec", required=True, help="polynomial spec JSON")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--eps", type=float, default=None, help="polynomial approximation accuracy")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--cap", type=int, default=hp.DIM_CAP, help="dimension cap n^p * N")

    t = sub.add_parser("test-convexity", help="decide PSD-ness of the Hessian on sample points")
    common(t)
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", help='JSON file {"points": [[...], ...]}')
    src.add_argument("--sample", type=int, help="number of points to sample")
    t.add_argument("--sampler", choices=["uniform_ball", "on_sphere"], default="uniform_ball")
    t.add_argument("--delta", type=float, default=0.01)
    t.add_argument("--mode", choices=["multi", "per-point"], default="multi")

    n = sub.add_parser("newton", help="Newton iteration on outer-product iterates")
    common(n)
    n.add_argument("--x0", required=True, help="comma-separated start point")
    n.add_argument("--eta", type=float, default=None, help="step size (default: conservative bound)")
    n.add_argument("--steps", type=int, default=10)
    n.add_argument("--grad-tol", type=float, default=1e-10)

    a = sub.add_parser("approx-table", help="degree/error table for the power approximants")
    common(a, need_spec=False)
    a.add_argument("--target", choices=["pos_power", "neg_power"], default="pos_power")
    a.add_argument("--c", type=float, default=0.5)
    a.add_argument("--deltas", default="0.2,0.1,0.05")
    a.add_argument("--epss", default="1e-2,1e-3")

    b = sub.add_parser("bench", help="cost counters against classical FLOPs")
    common(b, need_spec=False)
    b.add_argument("--ns", default="2,4,8,16")
    b.add_argument("--Ns", default="2,4,8")
    b.add_argument("--p", type=int, default=2)
    b.add_argument("--N", type=int, default=4)
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        spec_path=getattr(args, "spec", None),
        points_path=getattr(args, "points", None),
        sample=getattr(args, "sample", None),
        seed=args.seed,
        sampler=getattr(args, "sampler", "uniform_ball"),
        delta=getattr(args, "delta", 0.01),
        eps=args.eps,
        mode=getattr(args, "mode", "multi"),
        output_path=args.out,
        cap=args.cap,
    )


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    if args.command == "test-convexity":
        return cmd_test_convexity(cfg)
    if args.command == "newton":
        return cmd_newton(cfg, _floats(args.x0), args.eta, args.steps, args.grad_tol)
    if args.command == "approx-table":
        return cmd_approx_table(cfg, args.target, args.c, _floats(args.deltas), _floats(args.epss))
    return cmd_bench(cfg, _ints(args.ns), _ints(args.Ns), args.p, args.N)


def main(argv=None) -> int:
    try:
        return run(argv)
    except DimensionCapError as exc:
        print(f"convexq: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InputError as exc:
        print(f"convexq: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvexqError as exc:
        print(f"convexq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"convexq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
