"""Command-line entry point: generate, profile, tune, solve."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import (
    EnsembleConfig,
    Observable,
    generate_initials,
    initials_filename,
    parse_matrix_filename,
    read_matrix_csv,
    run_ensemble,
    write_initials_csv,
    write_matrix_csv,
)
from .errors import CsvParseError, InsufficientDataError
from .lle import (
    LleParams,
    lyapunov_profile,
    read_profile_csv,
    write_curves_csv,
    write_log_error_csv,
    write_profile_csv,
)
from .numeric import Polynomial, format_complex, parse_complex_list
from .presets import EXAMPLES, get_example
from .solvers import COC_FLOOR, Method, SolverParams, Status, computational_order, root_errors, run_solver
from .tuning import SelectionCriteria, WatchConfig, adaptive_solve, select_alpha

OUT_ENV = "INVM_LYAP_OUT"
EXIT_FAILURE = 1
EXIT_DIVERGED = 3

PROFILE_SUFFIX = "_profile.csv"
_PROFILE_RE = re.compile(r"^case(?P<case>.+)_alpha(?P<alpha>[^_]+)_(?P<obs>sk|rk)_profile\.csv$")


class CommandError(Exception):
    """Runtime failure reported as a one-line message with a nonzero exit."""


def default_out(fallback: str = "data") -> Path:
    return Path(os.environ.get(OUT_ENV) or fallback)


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, files: list[Path]) -> Path:
    """``{command}_manifest.json``: version, resolved config and digests of every output."""
    doc = {
        "tool": "invm_lyap",
        "version": __version__,
        "command": command,
        "config": config,
        "outputs": {p.name: sha256(p) for p in sorted(files)},
    }
    path = out / f"{command}_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load_manifest(path: str, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CommandError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CommandError(f"manifest {path} is not valid JSON: {exc}") from None
    if doc.get("command") != command:
        raise CommandError(f"manifest {path} was written by {doc.get('command')!r}, not {command!r}")
    return doc["config"]


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _labels(text: str) -> list[str]:
    out = [t.strip() for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty case list")
    return out


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


# ---------------------------------------------------------------- generate


def resolve_generate(args, parser) -> dict:
    """Turn parsed flags into the complete, replayable generate configuration."""
    if args.poly is not None:
        if args.base is None:
            parser.error("--poly needs --base")
        try:
            poly = Polynomial.parse(args.poly)
            base = parse_complex_list(args.base)
        except ValueError as exc:
            parser.error(str(exc))
        cases = {label: {"base": base, "seed": 1 if args.seed is None else args.seed} for label in args.case}
        alphas = args.alphas if args.alphas is not None else list(EXAMPLES[1].alphas)
        example = None
    else:
        ex = get_example(args.example)
        poly = ex.polynomial
        unknown = [c for c in args.case if c not in ex.bases]
        if unknown:
            parser.error(f"example {ex.number} has cases {sorted(ex.bases)}, not {unknown}")
        if args.base is not None:
            if len(args.case) != 1:
                parser.error("--base applies to a single --case")
            try:
                base_override = parse_complex_list(args.base)
            except ValueError as exc:
                parser.error(str(exc))
        else:
            base_override = None
        cases = {
            c: {
                "base": base_override or list(ex.bases[c]),
                "seed": ex.seeds[c] if args.seed is None else args.seed,
            }
            for c in args.case
        }
        alphas = args.alphas if args.alphas is not None else list(ex.alphas)
        example = ex.number
    if not alphas:
        parser.error("--alphas is empty")
    config = {
        "example": example,
        "poly": poly.format(),
        "cases": {c: {"base": [format_complex(z) for z in v["base"]], "seed": v["seed"]} for c, v in cases.items()},
        "alphas": [float(a) for a in alphas],
        "runs": args.runs,
        "iters": args.iters,
        "beta": args.beta,
        "jitter": args.jitter,
    }
    try:
        _ensemble_configs(config)
    except ValueError as exc:
        parser.error(str(exc))
    return config


def _ensemble_configs(config: dict) -> tuple[Polynomial, list[EnsembleConfig]]:
    poly = Polynomial.parse(config["poly"])
    out = []
    for label, c in config["cases"].items():
        ec = EnsembleConfig(
            base_vector=tuple(parse_complex_list(",".join(c["base"]))),
            n_runs=config["runs"],
            n_iters=config["iters"],
            jitter_frac=config["jitter"],
            alphas=tuple(config["alphas"]),
            beta=config["beta"],
            master_seed=c["seed"],
            case_label=label,
        )
        if len(ec.base_vector) != poly.degree:
            raise ValueError(
                f"case {label}: base vector has {len(ec.base_vector)} components, degree is {poly.degree}"
            )
        SolverParams(beta=ec.beta, max_iters=ec.n_iters)
        out.append(ec)
    return poly, out


def run_generate(config: dict, out: Path, log=print) -> list[Path]:
    poly, configs = _ensemble_configs(config)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for ec in configs:
        initials = generate_initials(ec)
        written.append(write_initials_csv(initials, out / initials_filename(ec.case_label)))
        for a in ec.alphas:
            t0 = time.perf_counter()
            for m in run_ensemble(poly, ec, a, initials=initials):
                written.append(write_matrix_csv(m, out))
            log(f"case {ec.case_label} alpha {a:g}: {time.perf_counter() - t0:.2f} s")
    written.append(write_manifest(out, "generate", config, written))
    return written


def cmd_generate(args, parser) -> int:
    if args.from_manifest:
        config = _load_manifest(args.from_manifest, "generate")
    else:
        config = resolve_generate(args, parser)
    out = Path(args.out) if args.out else default_out()
    files = run_generate(config, out, log=_log(args))
    print(f"wrote {len(files)} files to {out}")
    return 0


# ----------------------------------------------------------------- profile


def _expand(inputs: list[str], match) -> list[Path]:
    missing = [p for p in inputs if not Path(p).exists()]
    if missing:
        raise CommandError("missing input paths: " + ", ".join(missing))
    files = []
    for p in map(Path, inputs):
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if match(q.name)))
        else:
            files.append(p)
    return files


def _matrix_sort_key(path: Path):
    case, alpha, obs = parse_matrix_filename(path.name)
    return case, alpha, obs.value


def resolve_profile(args, parser) -> dict:
    params = dict(
        look_back=args.look_back,
        h_min=args.hmin,
        h_max=args.hmax,
        h_step=args.hstep,
        k_neighbors=args.k,
        test_fraction=args.test_size,
        split_seed=args.split_seed,
        shared_split=not args.per_horizon_split,
    )
    try:
        LleParams(**params)
    except ValueError as exc:
        parser.error(str(exc))
    return {
        "inputs": list(args.inputs),
        "observable": args.observable,
        "params": params,
        "plot_data": args.plot_data,
    }


def run_profile(config: dict, out: Path | None, log=print) -> list[Path]:
    params = LleParams(**config["params"])
    files = _expand(config["inputs"], lambda n: parse_matrix_filename(n) is not None)
    wanted = {"sk", "rk"} if config["observable"] == "both" else {config["observable"]}
    chosen = []
    for p in files:
        meta = parse_matrix_filename(p.name)
        if meta is None:
            raise CommandError(f"{p}: not a matrix file name (case<c>_alpha<a>_<sk|rk>.csv)")
        if meta[2].value in wanted:
            chosen.append(p)
    if not chosen:
        raise CommandError("no matrix files found in " + ", ".join(config["inputs"]))
    chosen.sort(key=_matrix_sort_key)
    written = []
    for p in chosen:
        target = out or p.parent
        target.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        prof = lyapunov_profile(read_matrix_csv(p), params, keep_curves=config["plot_data"])
        stem = p.name[: -len(".csv")]
        written.append(write_profile_csv(prof, target / f"{stem}{PROFILE_SUFFIX}"))
        if config["plot_data"]:
            written.append(write_curves_csv(prof, target / f"{stem}_curves.csv"))
            written.append(write_log_error_csv(prof, target / f"{stem}_logerr.csv"))
        log(f"{p.name}: {len(prof)} windows, {time.perf_counter() - t0:.2f} s")
    manifest_dir = out or chosen[0].parent
    # inputs are stored relative to the manifest so identical layouts give identical manifests
    recorded = dict(config, inputs=[_relative_to(p, manifest_dir) for p in config["inputs"]])
    written.append(write_manifest(manifest_dir, "profile", recorded, written))
    return written


def _relative_to(path: str, base: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), base.resolve())).as_posix()


def cmd_profile(args, parser) -> int:
    if args.from_manifest:
        config = _load_manifest(args.from_manifest, "profile")
        where = Path(args.from_manifest).parent
        config["inputs"] = [str(where / p) for p in config["inputs"]]
    else:
        if not args.inputs:
            parser.error("profile needs at least one input directory or matrix file")
        config = resolve_profile(args, parser)
    out = Path(args.out) if args.out else None
    files = run_profile(config, out, log=_log(args))
    print(f"wrote {len(files)} files")
    return 0


# -------------------------------------------------------------------- tune


def parse_profile_filename(name: str):
    m = _PROFILE_RE.match(Path(name).name)
    if m is None:
        return None
    try:
        alpha = float(m["alpha"])
    except ValueError:
        return None
    return m["case"], alpha, Observable(m["obs"])


def load_profiles(inputs: list[str], observable: str = "both") -> dict:
    """alpha -> list of profiles, in ascending alpha order."""
    files = _expand(inputs, lambda n: parse_profile_filename(n) is not None)
    wanted = {"sk", "rk"} if observable == "both" else {observable}
    found = []
    for p in files:
        meta = parse_profile_filename(p.name)
        if meta is None:
            raise CommandError(f"{p}: not a profile file name (case<c>_alpha<a>_<sk|rk>_profile.csv)")
        case, alpha, obs = meta
        if obs.value in wanted:
            found.append((alpha, case, obs.value, p))
    if not found:
        raise CommandError("no profile files found in " + ", ".join(inputs))
    by_alpha: dict = {}
    for alpha, case, obs, p in sorted(found, key=lambda t: t[:3]):
        by_alpha.setdefault(alpha, []).append(read_profile_csv(p, obs, case, alpha))
    return by_alpha


def cmd_tune(args, parser) -> int:
    if not args.inputs:
        parser.error("tune needs at least one input directory or profile file")
    try:
        criteria = SelectionCriteria(
            min_negative_fraction=args.min_negative_fraction,
            max_transient_fraction=args.max_transient_fraction,
            max_positive_excursion=args.max_positive_excursion,
            late_window_fraction=args.late_window_fraction,
        )
    except ValueError as exc:
        parser.error(str(exc))
    report = select_alpha(load_profiles(args.inputs, args.observable), criteria)
    if args.out:
        path = Path(args.out)
    else:
        first = Path(args.inputs[0])
        path = (first if first.is_dir() else first.parent) / "tuning_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(path)
    for r in report.per_alpha:
        print(
            f"alpha {r.alpha:g}: {r.classification:12s} neg {r.negative_fraction:.2f} "
            f"transient {r.transient_end_index} excursion {r.max_excursion:.3g} "
            f"late {r.mean_late_lambda1:.4g}"
        )
    note = " (flagged: no alpha is well behaved)" if report.flagged else ""
    print(f"selected alpha: {report.selected_alpha:g}{note}")
    print(f"report: {path}")
    return 0


# ------------------------------------------------------------------- solve


def _solve_problem(args, parser):
    if args.poly is not None:
        try:
            poly = Polynomial.parse(args.poly)
        except ValueError as exc:
            parser.error(str(exc))
        roots = None
        if args.x0 is None:
            parser.error("--poly needs --x0")
    else:
        ex = get_example(args.example)
        poly, roots = ex.polynomial, ex.roots
    if args.x0 is not None:
        try:
            x0 = parse_complex_list(args.x0)
        except ValueError as exc:
            parser.error(str(exc))
    else:
        if args.case not in ex.bases:
            parser.error(f"example {ex.number} has cases {sorted(ex.bases)}")
        x0 = list(ex.bases[args.case])
    if len(x0) != poly.degree:
        parser.error(f"--x0 has {len(x0)} components, polynomial degree is {poly.degree}")
    return poly, np.array(x0, dtype=complex), roots


def cmd_solve(args, parser) -> int:
    poly, x0, roots = _solve_problem(args, parser)
    try:
        params = SolverParams(alpha=args.alpha, beta=args.beta, max_iters=args.max_iters, tol=args.tol)
        watch = WatchConfig(window_len=args.window, patience=args.patience)
    except ValueError as exc:
        parser.error(str(exc))
    method = Method(args.method.upper())
    if args.alpha_candidates and method != Method.INVM:
        parser.error("--alpha-candidates only applies to INVM")
    out = Path(args.out) if args.out else default_out(".") / "trace.csv"

    t0 = time.perf_counter()
    switches = []
    if args.alpha_candidates:
        trace, switches = adaptive_solve(poly, x0, params, args.alpha_candidates, watch)
    else:
        trace = run_solver(poly, x0, params, method)
    wall = time.perf_counter() - t0

    out.parent.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out)

    print(f"method: {method.value}  alpha: {args.alpha:g}  beta: {args.beta:g}")
    print(f"status: {trace.status.value}")
    print(f"iterations: {trace.iterations_used}")
    print(f"final residual: {trace.final_residual(poly):.3e}")
    errors = trace.residual_norms
    basis = "residual norms"
    if roots is not None and trace.status != Status.DIVERGED:
        errors = root_errors(trace.iterates, roots)
        basis = "root errors"
        print(f"final root error: {errors[-1]:.3e}")
    try:
        print(f"COC ({basis}): {computational_order(errors, COC_FLOOR):.4f}")
    except InsufficientDataError as exc:
        print(f"COC ({basis}): n/a ({exc})")
    for s in switches:
        print(f"switch at iteration {s.iteration}: alpha {s.from_alpha:g} -> {s.to_alpha:g}")
    print("roots: " + ", ".join(format_complex(z) for z in trace.final))
    print(f"wall time: {wall:.4f} s")
    print(f"trace: {out}")
    return EXIT_DIVERGED if trace.status == Status.DIVERGED else 0


# ------------------------------------------------------------------ parser


def _log(args):
    return (lambda msg: print(msg, file=sys.stderr)) if args.verbose else (lambda msg: None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invm-lyap", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run perturbed ensembles over an alpha grid")
    g.add_argument("--example", type=int, choices=sorted(EXAMPLES), default=1)
    g.add_argument("--poly", help="coefficients, lowest degree first (overrides --example)")
    g.add_argument("--case", type=_labels, default=["1"], help="case label(s), comma separated")
    g.add_argument("--base", help="base vector (comma separated complex values)")
    g.add_argument("--alphas", type=_floats)
    g.add_argument("--runs", type=_positive_int, default=1000)
    g.add_argument("--iters", type=_positive_int, default=50)
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--seed", type=_nonneg_int, help="master seed (default: per-case preset)")
    g.add_argument("--jitter", type=float, default=0.01, help="perturbation radius / ||base||")
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./data)")
    g.add_argument("--from-manifest", help="replay the configuration of a generate manifest")
    g.add_argument("-v", "--verbose", action="store_true")

    pr = sub.add_parser("profile", help="Lyapunov profiles of ensemble matrices")
    pr.add_argument("inputs", nargs="*", help="matrix files or directories")
    pr.add_argument("--observable", choices=("sk", "rk", "both"), default="both")
    pr.add_argument("--look-back", type=_positive_int, default=5)
    pr.add_argument("--hmin", type=_positive_int, default=1)
    pr.add_argument("--hmax", type=_positive_int, default=5)
    pr.add_argument("--hstep", type=_positive_int, default=1)
    pr.add_argument("--k", type=_positive_int, default=3)
    pr.add_argument("--test-size", type=float, default=0.4)
    pr.add_argument("--split-seed", type=_nonneg_int, default=0)
    pr.add_argument("--per-horizon-split", action="store_true", help="draw a fresh split for every h")
    pr.add_argument("--plot-data", action="store_true", help="also write per-window curve CSVs")
    pr.add_argument("--out", help="output directory (default: next to each matrix)")
    pr.add_argument("--from-manifest", help="replay the configuration of a profile manifest")
    pr.add_argument("-v", "--verbose", action="store_true")

    t = sub.add_parser("tune", help="classify alphas and select one")
    t.add_argument("inputs", nargs="*", help="profile files or directories")
    t.add_argument("--observable", choices=("sk", "rk", "both"), default="both")
    t.add_argument("--min-negative-fraction", type=float, default=0.8)
    t.add_argument("--max-transient-fraction", type=float, default=0.3)
    t.add_argument("--max-positive-excursion", type=float, default=0.5)
    t.add_argument("--late-window-fraction", type=float, default=0.5)
    t.add_argument("--out", help="report path (default: <first input>/tuning_report.json)")

    s = sub.add_parser("solve", help="run one solver from one start")
    s.add_argument("--example", type=int, choices=sorted(EXAMPLES), default=1)
    s.add_argument("--poly", help="coefficients, lowest degree first (overrides --example)")
    s.add_argument("--x0", help="initial approximations (comma separated complex values)")
    s.add_argument("--case", default="1", help="use a preset base vector as x0")
    s.add_argument("--method", choices=[m.value for m in Method] + [m.value.lower() for m in Method], default="INVM")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--max-iters", type=_positive_int, default=50)
    s.add_argument("--alpha-candidates", type=_floats, help="switch alpha online among these (INVM)")
    s.add_argument("--window", type=_positive_int, default=8)
    s.add_argument("--patience", type=_positive_int, default=3)
    s.add_argument("--out", help=f"trace CSV (default ${OUT_ENV}/trace.csv or ./trace.csv)")
    return p


COMMANDS = {"generate": cmd_generate, "profile": cmd_profile, "tune": cmd_tune, "solve": cmd_solve}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return COMMANDS[args.command](args, sub)
    except (CommandError, CsvParseError, InsufficientDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
