"""Benchmark driver: read or generate a matrix, factor, solve, verify and report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (HspluError, InputError, PatternMismatchError, SingularMatrixError,
                     StructuralSingularityError)
from .generators import parse_spec
from .mmio import mm_read
from .numeric import factor, refactor
from .solve import residual, solve
from .sparse import CscMatrix, csc_from_triplets
from .symbolic import DEFAULT_LEAVES, analyze, default_nd_threshold

FIELDS = ["matrix", "n", "nnz", "factor_nnz", "fill_density", "btf_blocks", "btf_pct",
          "t_symbolic_s", "t_numeric_s", "t_solve_s", "residual", "threads", "reallocs",
          "factor_checksum"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_SEQUENCE = 4


class SequenceMismatch(HspluError):
    def __init__(self, index: int, name: str, reason: str):
        self.index = index
        super().__init__(f"matrix {index} ({name}) does not share the sequence pattern: {reason}")


def default_threads() -> int:
    n = os.cpu_count() or 1
    return 1 << (n.bit_length() - 1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hsplu", description="Sparse LU benchmark driver (factor, solve, verify).")
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="Matrix Market file (.mtx or .mtx.gz)")
    src.add_argument("--gen", help="synthetic matrix: grid:K, blockdiag[:NBLOCKS], arrowhead[:N]")
    src.add_argument("--seq", help="directory of same-pattern Matrix Market files")
    ap.add_argument("--rhs", default="manufactured",
                    help="right-hand side file, or 'manufactured' for b = A*1")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker count (default: cores rounded down to a power of two)")
    ap.add_argument("--pivot-tol", type=float, default=1e-3)
    ap.add_argument("--nd-threshold", type=int, default=None,
                    help="diagonal blocks larger than this are dissected (default max(1000, 2p))")
    ap.add_argument("--nd-leaves", type=int, default=DEFAULT_LEAVES,
                    help="leaves of the dissection tree (power of two)")
    ap.add_argument("--no-btf", action="store_true",
                    help="skip the block triangular form; dissect the whole matrix")
    ap.add_argument("--out", choices=["csv", "json"], default="csv")
    ap.add_argument("--seed", type=int, default=0, help="seed for synthetic generators")
    ap.add_argument("--residual-tol", type=float, default=1e-10,
                    help="report failure above this scaled residual")
    return ap


def load_matrix(path: str | Path) -> CscMatrix:
    a = csc_from_triplets(mm_read(path))
    if a.nrows != a.ncols:
        raise InputError(f"{path}: matrix must be square, got {a.nrows}x{a.ncols}")
    return a


def load_rhs(path: str | Path, n: int) -> np.ndarray:
    """Dense vector from a Matrix Market array file or whitespace-separated text."""
    try:
        with open(path, "r", encoding="ascii", errors="replace") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("%")]
    except OSError as err:
        raise InputError(f"cannot read right-hand side {path}: {err}") from None
    try:
        if lines and len(lines[0].split()) == 2 and int(lines[0].split()[1]) == 1 \
                and int(lines[0].split()[0]) == n and len(lines) == n + 1:
            lines = lines[1:]
        b = np.array(" ".join(lines).split(), dtype=np.float64)
    except ValueError as err:
        raise InputError(f"right-hand side {path}: {err}") from None
    if b.size != n:
        raise InputError(f"right-hand side has {b.size} entries, expected {n}")
    return b


def _rhs(args, a: CscMatrix) -> np.ndarray:
    if args.rhs == "manufactured":
        return a.matvec(np.ones(a.ncols))
    return load_rhs(args.rhs, a.ncols)


def _threads(args) -> int:
    p = args.threads if args.threads is not None else default_threads()
    if p < 1:
        raise InputError("--threads must be at least 1")
    return p


def _analyze(args, a: CscMatrix, p: int):
    thr = args.nd_threshold if args.nd_threshold is not None else default_nd_threshold(p)
    return analyze(a, threads=p, nd_threshold=thr, nleaves=args.nd_leaves,
                   use_btf=not args.no_btf)


def _row(name, a, plan, f, ts, tn, tsv, res, p) -> dict:
    return {"matrix": name, "n": a.ncols, "nnz": a.nnz, "factor_nnz": f.nnz,
            "fill_density": f.nnz / a.nnz if a.nnz else 0.0,
            "btf_blocks": plan.btf_blocks, "btf_pct": plan.btf_pct,
            "t_symbolic_s": ts, "t_numeric_s": tn, "t_solve_s": tsv, "residual": res,
            "threads": p, "reallocs": f.reallocs, "factor_checksum": f.checksum()}


def run_bench(args, a: CscMatrix | None = None, name: str | None = None) -> dict:
    """Symbolic once, numeric, solve, residual; returns one report row."""
    p = _threads(args)
    if a is None:
        if args.gen:
            name, a = parse_spec(args.gen, args.seed)
        else:
            a = load_matrix(args.matrix)
            name = Path(args.matrix).name.split(".")[0]
    b = _rhs(args, a)
    t0 = time.perf_counter()
    plan = _analyze(args, a, p)
    t1 = time.perf_counter()
    f = factor(plan, a, args.pivot_tol, p)
    t2 = time.perf_counter()
    x = solve(f, b)
    t3 = time.perf_counter()
    return _row(name, a, plan, f, t1 - t0, t2 - t1, t3 - t2, residual(a, x, b), p)


def sequence_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"{d} is not a directory")
    files = sorted(p for p in d.iterdir() if p.name.endswith((".mtx", ".mtx.gz")))
    if not files:
        raise InputError(f"no Matrix Market files in {d}")
    return files


def run_sequence(args, matrices=None) -> tuple[list[dict], dict]:
    """Analyze the first matrix, refactor every matrix; returns rows and the aggregate.

    ``matrices`` may supply ``(name, CscMatrix)`` pairs instead of reading ``args.seq``.
    """
    p = _threads(args)
    if matrices is None:
        matrices = ((f.name.split(".")[0], f) for f in sequence_files(args.seq))
    rows = []
    plan = f = None
    t_sym = 0.0
    for k, (name, src) in enumerate(matrices):
        a = load_matrix(src) if not isinstance(src, CscMatrix) else src
        if plan is None:
            t0 = time.perf_counter()
            plan = _analyze(args, a, p)
            t_sym = time.perf_counter() - t0
            ts = t_sym
        else:
            ts = 0.0
            try:
                plan.check_pattern(a)
            except PatternMismatchError as err:
                raise SequenceMismatch(k, name, str(err)) from None
        b = _rhs(args, a)
        t1 = time.perf_counter()
        f = factor(plan, a, args.pivot_tol, p) if f is None \
            else refactor(plan, f, a, args.pivot_tol, p)
        t2 = time.perf_counter()
        x = solve(f, b)
        t3 = time.perf_counter()
        rows.append(_row(name, a, plan, f, ts, t2 - t1, t3 - t2, residual(a, x, b), p))
    if not rows:
        raise InputError("empty sequence")
    agg = dict(rows[-1])
    agg.update({"matrix": f"aggregate[{len(rows)}]",
                "factor_nnz": max(r["factor_nnz"] for r in rows),
                "fill_density": max(r["fill_density"] for r in rows),
                "t_symbolic_s": t_sym,
                "t_numeric_s": sum(r["t_numeric_s"] for r in rows),
                "t_solve_s": sum(r["t_solve_s"] for r in rows),
                "residual": max(r["residual"] for r in rows),
                "reallocs": sum(r["reallocs"] for r in rows),
                "factor_checksum": ""})
    return rows, agg


def format_rows(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.seq:
            rows, agg = run_sequence(args)
            rows = rows + [agg]
        else:
            rows = [run_bench(args)]
    except SequenceMismatch as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SEQUENCE
    except (InputError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (SingularMatrixError, StructuralSingularityError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    sys.stdout.write(format_rows(rows, args.out))
    worst = max(r["residual"] for r in rows)
    if not worst <= args.residual_tol:
        print(f"error: residual {worst:.3e} exceeds {args.residual_tol:.1e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
