"""Command-line front end: gen, solve, simulate, verify.

Exit codes: 0 success, 1 verification failure, 2 usage error,
3 numerical failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evdio import read_matrix, read_vector, write_square, write_vector
from .matgen import KINDS, SpectrumSpec, generate
from .messaging import TraceLog
from .pipeline import ORDERS, PipelineConfig, PipelineError, run, run_auto_skew
from .schedule import CostModel, calibrated_model, simulate, unit_model
from .verify import AccuracyReport

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

_TFLOPS_NOTE = ("Throughput is reported as 4n^3/time in TFLOPS, the "
                "one-stage normalization; the two-stage algorithm itself "
                "performs about 6n^3 flops.")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pipeevd",
        description="Pipelined two-stage dense symmetric eigensolver.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen",
                       help="generate a test matrix with a known spectrum")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dist", required=True,
                   help=f"spectrum kind: {', '.join(sorted(KINDS))}")
    g.add_argument("--cond", type=float, default=1e8)
    g.add_argument("--lmax", type=float, default=1e6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".", help="output directory")

    s = sub.add_parser("solve", help="run the eigensolver pipeline",
                       epilog=_TFLOPS_NOTE)
    s.add_argument("matrix", nargs="?",
                   help="EVD1 matrix file; omit to generate one in memory "
                        "from --n/--dist")
    s.add_argument("--n", type=int)
    s.add_argument("--dist")
    s.add_argument("--cond", type=float, default=1e8)
    s.add_argument("--lmax", type=float, default=1e6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--band", type=int, default=32)
    s.add_argument("--order", choices=ORDERS, default="pipelined")
    s.add_argument("--skew", default="0",
                   help="back-transform skew in [0, 0.05], or 'auto' for "
                        "one measured feedback iteration")
    s.add_argument("--vectors", choices=("on", "off"), default="on")
    s.add_argument("--trace", default=None,
                   help="trace path (default <out>/trace.ndjson)")
    s.add_argument("--out", default=".", help="output directory")

    m = sub.add_parser("simulate",
                       help="price the stage schedule with a cost model")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--workers", type=int, default=4)
    m.add_argument("--band", type=int, default=32)
    m.add_argument("--skew", type=float, default=0.0)
    m.add_argument("--model", default="calibrated",
                   help="'calibrated', 'unit', or a JSON file with "
                        "{p, q, stage_rate}")
    m.add_argument("--trace", default=None,
                   help="write the simulated pipelined trace here")

    v = sub.add_parser("verify", help="check solver output accuracy")
    v.add_argument("matrix", help="EVD1 matrix file")
    v.add_argument("result_dir", help="directory written by solve")
    v.add_argument("--slack", type=float, default=16.0)
    return p


def cmd_gen(args) -> int:
    spec = SpectrumSpec(args.dist, args.n, cond=args.cond,
                        lambda_max=args.lmax, seed=args.seed)
    mat, lam = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "matrix.evd1"
    spath = out / "matrix.spectrum.evd1"
    write_square(mpath, mat.data)
    write_vector(spath, np.sort(lam))
    print(f"wrote {mpath} ({spec.n}x{spec.n}, {spec.kind}) and {spath}")
    return EXIT_OK


def _load_input(args):
    if args.matrix is not None:
        if args.dist is not None or args.n is not None:
            raise ValueError("give either a matrix file or --n/--dist, "
                             "not both")
        return read_matrix(args.matrix), str(args.matrix)
    if args.n is None or args.dist is None:
        raise ValueError("without a matrix file both --n and --dist "
                         "are required")
    spec = SpectrumSpec(args.dist, args.n, cond=args.cond,
                        lambda_max=args.lmax, seed=args.seed)
    mat, _ = generate(spec)
    return mat.data, None


def cmd_solve(args) -> int:
    a, source = _load_input(args)
    n = a.shape[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = args.trace if args.trace else str(out / "trace.ndjson")
    auto = args.skew == "auto"
    skew = 0.0 if auto else float(args.skew)
    cfg = PipelineConfig(workers=args.workers, b=args.band, order=args.order,
                         back_skew=skew, seed=args.seed,
                         trace_path=trace_path,
                         want_vectors=args.vectors == "on")
    t0 = time.perf_counter()
    if auto:
        result, events, ledger, counter, skew = run_auto_skew(a, cfg)
    else:
        result, events, ledger, counter = run(a, cfg)
    wall = time.perf_counter() - t0

    lam_path = out / "lambda.evd1"
    write_vector(lam_path, result.lam)
    artifacts = {"lambda": str(lam_path), "trace": trace_path}
    if result.vectors_computed:
        q_path = out / "Q.evd1"
        write_square(q_path, result.Q)
        artifacts["q"] = str(q_path)
    ledger_path = out / "ledger.csv"
    ledger_path.write_text(ledger.to_csv())
    artifacts["ledger"] = str(ledger_path)
    flops_path = out / "flops.csv"
    counter.to_csv(flops_path)
    artifacts["flops"] = str(flops_path)

    accuracy = None
    if result.vectors_computed:
        accuracy = AccuracyReport.from_decomposition(a, result.Q, result.lam)
    manifest = {
        "version": __version__,
        "command": "solve",
        "config": {
            "matrix": source,
            "n": n,
            "dist": args.dist,
            "cond": args.cond,
            "lmax": args.lmax,
            "seed": args.seed,
            "workers": args.workers,
            "band": args.band,
            "order": args.order,
            "skew": skew,
            "skew_auto": auto,
            "vectors": args.vectors,
        },
        "metrics": {
            "wall_seconds": wall,
            "tflops_4n3": 4.0 * n ** 3 / wall / 1e12,
            "accuracy": accuracy.to_dict() if accuracy else None,
            "comm_total_words": ledger.total_words,
            "comm_words_by_stage": {s: ledger.words(stage=s)
                                    for s in ledger.stages()},
        },
        "artifacts": artifacts,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    acc_note = ""
    if accuracy:
        acc_note = (f" backward={accuracy.backward:.2e}"
                    f" ortho={accuracy.ortho:.2e}")
    print(f"n={n} workers={args.workers} order={args.order} "
          f"wall={wall:.2f}s tflops={manifest['metrics']['tflops_4n3']:.3f}"
          f"{acc_note}")
    print(f"manifest: {manifest_path}")
    return EXIT_OK


def _load_model(spec: str) -> CostModel:
    if spec == "calibrated":
        return calibrated_model()
    if spec == "unit":
        return unit_model()
    try:
        raw = json.loads(Path(spec).read_text())
        return CostModel(p=float(raw["p"]), q=float(raw["q"]),
                         stage_rate=dict(raw.get("stage_rate", {})))
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed cost model {spec!r}: {exc}") from exc


def cmd_simulate(args) -> int:
    model = _load_model(args.model)
    makespans = {}
    events = None
    for order in ("pipelined", "sequential"):
        cfg = PipelineConfig(workers=args.workers, b=args.band, order=order,
                             back_skew=args.skew)
        ev, makespans[order] = simulate(model, cfg, args.n)
        if order == "pipelined":
            events = ev
    ratio = makespans["pipelined"] / makespans["sequential"]
    print(f"pipelined  makespan: {makespans['pipelined']:.6g}")
    print(f"sequential makespan: {makespans['sequential']:.6g}")
    print(f"ratio: {ratio:.4f}")
    if args.trace:
        log = TraceLog()
        for ev in events:
            log.add(ev.worker, ev.stage, ev.block, ev.t_start, ev.t_end,
                    ev.words)
        log.to_ndjson(args.trace)
        print(f"trace: {args.trace}")
    return EXIT_OK


def cmd_verify(args) -> int:
    a = read_matrix(args.matrix)
    rdir = Path(args.result_dir)
    lam = read_vector(rdir / "lambda.evd1")
    q_path = rdir / "Q.evd1"
    if q_path.exists():
        report = AccuracyReport.from_decomposition(a, read_matrix(q_path),
                                                   lam, slack=args.slack)
        print(report.to_json())
        return EXIT_OK if report.bound_ok else EXIT_VERIFY
    # eigenvalues-only result: compare against the generator sidecar
    side = Path(str(args.matrix).replace(".evd1", ".spectrum.evd1"))
    if not side.exists():
        raise ValueError(f"no Q.evd1 in {rdir} and no spectrum sidecar "
                         f"{side} to compare eigenvalues against")
    ref = np.sort(read_vector(side))
    tol = 1e-12 * max(1.0, float(np.abs(ref).max()))
    diff = float(np.abs(np.sort(lam) - ref).max())
    ok = diff <= tol
    print(json.dumps({"mode": "eigenvalues", "max_abs_diff": diff,
                      "tol": tol, "bound_ok": ok}, indent=2))
    return EXIT_OK if ok else EXIT_VERIFY


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"gen": cmd_gen, "solve": cmd_solve,
               "simulate": cmd_simulate, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
