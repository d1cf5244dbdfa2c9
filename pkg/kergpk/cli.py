"""
kergpk - Command line interface
Subcommands: test, simulate, diagnose, benchmark. Reports go to stdout or
--output, logs go to stderr.

Exit codes:
    0  completed (rejection is reported, not signalled)
    1  any other library error
    2  usage or parameter error
    3  data or parse error
    4  degenerate kernel (message names C1 or C2)
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from kergpk.config import get_settings
from kergpk.exceptions import (
    DataValidationError,
    DegenerateDataError,
    DegeneracyError,
    KerGPKError,
    ParameterError,
    ParseError,
    SizeError,
    UnknownPresetError,
)
from kergpk.inference import (
    FAST_WEIGHTS,
    fgpk_m_simes_test,
    fgpk_m_test,
    fgpk_simes_test,
    fgpk_test,
    pvalues_from_z,
    run_methods,
)
from kergpk.kernel import build_kernel, load_precomputed_kernel
from kergpk.models import KernelMatrix, ObservationSet, ResamplingPlan, RunConfig, SampleLayout, ScenarioSpec, TestReport
from kergpk.simgen import bandwidth_sweep, estimate_power, estimate_subsample_power, scenario_table, time_methods
from kergpk.statistics import analyze, breakdown, check_degeneracy
from kergpk.utils import configure_threads, setup_logging

logger = logging.getLogger(__name__)

DEFAULT_METHODS = ["fgpk", "fgpk_m"]
BENCHMARK_METHODS = ["fgpk_m", "fgpk", "mmd_perm"]

TEST_COLUMNS = [
    "method", "p_value", "reject", "level", "p_W_1.2", "p_W_0.8", "p_D",
    "gpk", "mmd_u", "z_w_1.2", "z_w_0.8", "z_d", "bandwidth", "seed", "replicates",
]
SIMULATION_COLUMNS = [
    "label", "family", "d", "m", "n", "delta", "a", "sigma2", "bandwidth",
    "method", "trials", "valid", "invalid", "rejections", "power", "mc_stderr",
]
BENCHMARK_COLUMNS = ["m", "method", "mean_seconds", "std_seconds"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4


# ========================
# INGESTION
# ========================

def _detect_delimiter(line: str) -> str:
    return "\t" if "\t" in line else ","


def read_table(path: str) -> np.ndarray:
    """
    Numeric table from a comma or tab separated file. A first row with any
    non-numeric cell is treated as a header. A UTF-8 byte order mark and
    CRLF line endings are accepted.
    """
    try:
        with open(path, newline="", encoding="utf-8-sig") as handle:
            text = handle.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"file is not valid UTF-8 (byte offset {exc.start})", path=path)
    except OSError as exc:
        raise ParseError(f"cannot read file ({exc.strerror})", path=path)

    first = next((line for line in text.splitlines() if line.strip()), None)
    if first is None:
        raise ParseError("file is empty", path=path)
    reader = csv.reader(io.StringIO(text), delimiter=_detect_delimiter(first))

    rows: List[List[float]] = []
    width = None
    seen_first = False
    for cells in reader:
        lineno = reader.line_num
        cells = [c.strip() for c in cells]
        if not any(cells):
            continue
        try:
            values = [float(c) for c in cells]
        except ValueError:
            if not seen_first:
                seen_first = True
                logger.debug("%s: skipping header row", path)
                continue
            bad = next(c for c in cells if not _is_number(c))
            raise ParseError(f"non-numeric cell {bad!r}", path=path, line=lineno)
        seen_first = True
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", path=path, line=lineno)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"ragged row: expected {width} columns, found {len(values)}", path=path, line=lineno)
        rows.append(values)

    if not rows:
        raise ParseError("no numeric rows", path=path)
    return np.array(rows, dtype=float)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def ingest_samples(path_x: str, path_y: str) -> Tuple[ObservationSet, ObservationSet]:
    x = read_table(path_x)
    y = read_table(path_y)
    if x.shape[1] != y.shape[1]:
        raise DataValidationError(
            f"dimension mismatch: {path_x} has {x.shape[1]} columns, {path_y} has {y.shape[1]}"
        )
    logger.info("loaded m=%d, n=%d, d=%d", x.shape[0], y.shape[0], x.shape[1])
    return ObservationSet(x), ObservationSet(y)


def load_inputs(config: RunConfig) -> Tuple[KernelMatrix, SampleLayout]:
    """Kernel and layout from a precomputed matrix or from two sample files"""
    if config.precomputed:
        if config.m is None:
            raise ParameterError("--precomputed needs --m, the number of rows belonging to sample X")
        kernel = load_precomputed_kernel(read_table(config.precomputed))
        if not 0 < config.m < kernel.size:
            raise ParameterError(f"--m must lie in [1, {kernel.size - 1}], got {config.m}")
        return kernel, SampleLayout.contiguous(config.m, kernel.size - config.m)
    if not (config.path_x and config.path_y):
        raise ParameterError("give --x and --y, or --precomputed with --m")
    x, y = ingest_samples(config.path_x, config.path_y)
    return build_kernel(x, y, bandwidth=config.bandwidth)


# ========================
# SUBCOMMANDS
# ========================

FROM_Z_TESTS = {
    "fgpk": lambda p, level: fgpk_test(p, level),
    "fgpk_m": lambda p, level: fgpk_m_test(p["p_W_1.2"], p["p_W_0.8"], level),
    "fgpk_simes": lambda p, level: fgpk_simes_test(p, level),
    "fgpk_m_simes": lambda p, level: fgpk_m_simes_test(p["p_W_1.2"], p["p_W_0.8"], level),
}


def _reports_from_z(config: RunConfig) -> List[TestReport]:
    z_w12, z_w08, z_d = config.from_z
    components = pvalues_from_z(z_w12, z_w08, z_d)
    reports = []
    for name in config.methods:
        if name not in FROM_Z_TESTS:
            raise ParameterError(f"method {name!r} needs data; --from-z only combines fast-test components")
        report = FROM_Z_TESTS[name](components, config.level)
        report.statistics = {"z_w_1.2": z_w12, "z_w_0.8": z_w08, "z_d": z_d}
        report.metadata["source"] = "supplied standardized statistics"
        reports.append(report)
    return reports


def run_test(config: RunConfig) -> List[TestReport]:
    if config.from_z is not None:
        return _reports_from_z(config)

    kernel, layout = load_inputs(config)
    settings = get_settings()
    plan = ResamplingPlan(
        replicates=config.permutations,
        seed=config.seed,
        scheme="exhaustive" if config.exhaustive else "random_permutation",
        enumeration_cap=settings.enumeration_cap,
    )
    analysis = analyze(kernel, layout)
    reports = run_methods(kernel, layout, config.methods, config.level, plan, analysis=analysis)

    if not analysis.moments.degenerate:
        details = breakdown(analysis.pair, analysis.moments)
        for report in reports:
            report.statistics.update(details)
    return reports


def _scenarios(config: RunConfig) -> List[ScenarioSpec]:
    if config.preset:
        return scenario_table(config.preset)
    if config.scenarios:
        return config.scenarios
    raise ParameterError("simulate needs --preset, an explicit scenario (--family, --d, ...) or --x, --y with --subsample")


def _subsample_power(config: RunConfig, plan: ResamplingPlan) -> List[Dict[str, Any]]:
    if not (config.path_x and config.path_y):
        raise ParameterError("--subsample needs --x and --y")
    if config.bandwidth_sweep:
        raise ParameterError("--bandwidth-sweep runs on synthetic scenarios only")
    x, y = ingest_samples(config.path_x, config.path_y)
    rows = []
    for m in config.subsample:
        for estimate in estimate_subsample_power(x, y, m, config.methods, config.trials, config.level, config.seed,
                                                 plan, bandwidth=config.bandwidth, threads=config.threads,
                                                 sources=(config.path_x, config.path_y)):
            rows.append({**estimate.to_dict(), "bandwidth": config.bandwidth})
    return rows


def run_simulation(config: RunConfig) -> List[Dict[str, Any]]:
    plan = ResamplingPlan(replicates=config.permutations, seed=config.seed)
    if config.subsample:
        return _subsample_power(config, plan)
    rows = []
    for spec in _scenarios(config):
        if config.bandwidth_sweep:
            for bandwidth, estimate in bandwidth_sweep(spec, config.trials, config.level, config.seed, plan,
                                                       methods=config.methods, threads=config.threads):
                rows.append({**estimate.to_dict(), "bandwidth": bandwidth})
            continue
        for estimate in estimate_power(spec, config.methods, config.trials, config.level, config.seed, plan,
                                       bandwidth=config.bandwidth, threads=config.threads):
            rows.append({**estimate.to_dict(), "bandwidth": config.bandwidth})
    return rows


def run_diagnose(config: RunConfig) -> Dict[str, Any]:
    kernel, layout = load_inputs(config)
    report = check_degeneracy(kernel)
    out: Dict[str, Any] = {
        "kernel": kernel.metadata(),
        "m": layout.m,
        "n": layout.n,
        "degeneracy": report.to_dict(),
    }
    analysis = analyze(kernel, layout)
    agg = analysis.aggregates
    out["aggregates"] = {"S": agg.total, "kbar": agg.kbar, "A": agg.a, "B": agg.b, "C": agg.c}
    out["moments"] = analysis.moments.to_dict()
    out["pair_sums"] = {"alpha": analysis.pair.alpha, "beta": analysis.pair.beta, "gamma": analysis.pair.gamma}
    if not analysis.moments.degenerate:
        out["statistics"] = analysis.bundle(FAST_WEIGHTS).to_dict()
        out["breakdown"] = breakdown(analysis.pair, analysis.moments)
    return out


def run_benchmark(config: RunConfig) -> List[Dict[str, float]]:
    plan = ResamplingPlan(replicates=config.permutations, seed=config.seed)
    return time_methods(config.sizes or [100, 250, 500, 1000], config.dimension, config.repeats,
                        config.methods, config.seed, plan)


# ========================
# OUTPUT
# ========================

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if not math.isfinite(value) else f"{value:.6g}"
    return str(value)


def _tsv(columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> str:
    lines = ["\t".join(columns)]
    lines.extend("\t".join(_cell(row.get(c)) for c in columns) for row in rows)
    return "\n".join(lines) + "\n"


def _flat_report(report: TestReport) -> Dict[str, Any]:
    row = {"method": report.method, "p_value": report.p_value, "reject": report.reject, "level": report.level}
    row.update(report.component_p)
    row.update(report.statistics)
    for key in ("bandwidth", "seed", "replicates"):
        row[key] = report.metadata.get(key)
    return row


def _flat_power(row: Dict[str, Any]) -> Dict[str, Any]:
    flat = dict(row["scenario"])
    flat.update({k: v for k, v in row.items() if k != "scenario"})
    return flat


def _banner(title: str) -> List[str]:
    return ["=" * 80, title, "=" * 80]


def format_output(config: RunConfig, result) -> str:
    command = config.subcommand
    if command == "test":
        payload = {"command": command, "reports": [r.to_dict() for r in result]}
    elif command == "diagnose":
        payload = {"command": command, **result}
    else:
        payload = {"command": command, "rows": result}

    if config.output_format == "json":
        return json.dumps(_json_ready(payload), indent=2, sort_keys=False) + "\n"
    if config.output_format == "tsv":
        if command == "test":
            return _tsv(TEST_COLUMNS, [_flat_report(r) for r in result])
        if command == "simulate":
            return _tsv(SIMULATION_COLUMNS, [_flat_power(r) for r in result])
        if command == "benchmark":
            return _tsv(BENCHMARK_COLUMNS, result)
        return _tsv(["key", "value"], [{"key": k, "value": v} for k, v in _flatten(payload).items()])
    return _pretty(command, result)


def _json_ready(value):
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_ready(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def _flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    out = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, f"{name}."))
        else:
            out[name] = value
    return out


def _pretty(command: str, result) -> str:
    lines = _banner(f"KERGPK {command.upper()}")
    if command == "test":
        for report in result:
            verdict = "REJECT" if report.reject else "do not reject"
            lines.append(f"{report.method:<14} p = {report.p_value:.4g}   {verdict} at level {report.level:g}")
            for key, value in report.component_p.items():
                lines.append(f"    {key:<10} {value:.4g}")
            if "caveat" in report.metadata:
                lines.append(f"    note: {report.metadata['caveat']}")
        if result:
            stats = result[0].statistics
            lines.append("-" * 80)
            lines.extend(f"{key:<24} {_cell(value)}" for key, value in stats.items())
    elif command == "simulate":
        lines.append(f"{'scenario':<24}{'method':<14}{'power':>8}{'stderr':>9}{'invalid':>9}")
        for row in result:
            label = row["scenario"].get("label") or row["scenario"]["family"]
            lines.append(f"{label:<24}{row['method']:<14}{_cell(row['power']):>8}"
                         f"{_cell(row['mc_stderr']):>9}{row['invalid']:>9}")
    elif command == "benchmark":
        for row in result:
            lines.append(f"m={row['m']:<6} {row['method']:<14} {row['mean_seconds']:.4f}s ({row['std_seconds']:.4f})")
    else:
        for key, value in _flatten(result).items():
            lines.append(f"{key:<32} {_cell(_json_ready(value))}")
    lines.append("=" * 80)
    return "\n".join(lines) + "\n"


def write_output(text: str, path: Optional[str]) -> None:
    """Write once; files are replaced atomically"""
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kergpk-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ========================
# ARGUMENT PARSING
# ========================

def _bandwidth(value: str):
    if value in ("median", "median-literal", "median_literal"):
        return value.replace("-", "_")
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be median, median-literal or a number, got {value!r}")
    if number <= 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return number


def _method_list(value: str) -> List[str]:
    return [name.strip() for name in value.split(",") if name.strip()]


def _size_list(value: str) -> List[int]:
    try:
        return [int(s) for s in value.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--method", type=_method_list, default=None,
                        help="comma separated: gpk_perm, mmd_perm, z_d_perm, z_w_<r>_perm (r = 0.7..1.3), "
                             "fgpk, fgpk_m, fgpk_simes, fgpk_m_simes")
    common.add_argument("--bandwidth", type=_bandwidth, default="median")
    common.add_argument("--permutations", type=int, default=settings.permutations)
    common.add_argument("--seed", type=int, default=settings.seed)
    common.add_argument("--level", type=float, default=settings.level)
    common.add_argument("--format", dest="output_format", choices=("json", "tsv", "pretty"), default="pretty")
    common.add_argument("--output", default=None, help="write the report here instead of stdout")
    common.add_argument("--threads", type=int, default=None, help="worker cap (overrides KERGPK_THREADS)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--x", dest="path_x", help="CSV/TSV file of sample X (rows are observations)")
    data.add_argument("--y", dest="path_y", help="CSV/TSV file of sample Y")
    data.add_argument("--precomputed", help="square CSV kernel matrix of the pooled sample, X rows first")
    data.add_argument("--m", type=int, default=None, help="rows of the precomputed kernel belonging to X")

    parser = argparse.ArgumentParser(prog="kergpk", description="Generalized kernel two-sample tests")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    test = sub.add_parser("test", parents=[common, data], help="run two-sample tests")
    test.add_argument("--exhaustive", action="store_true", help="enumerate every label assignment")
    test.add_argument("--from-z", dest="from_z", type=float, nargs=3, metavar=("ZW12", "ZW08", "ZD"),
                      help="combine supplied standardized statistics instead of reading data")

    sub.add_parser("diagnose", parents=[common, data], help="kernel corner cases and moments")

    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo power and size")
    sim.add_argument("--preset", help="table1, table2, table3, table4_loc, ..., null_sizes")
    sim.add_argument("--trials", type=int, default=1000)
    sim.add_argument("--family", choices=("gaussian", "student_t20", "chisq3"))
    sim.add_argument("--d", type=int)
    sim.add_argument("--m", type=int, default=50)
    sim.add_argument("--n", type=int, default=50)
    shift = sim.add_mutually_exclusive_group()
    shift.add_argument("--a", type=float, help="per-coordinate mean shift")
    shift.add_argument("--delta", type=float, help="shift norm, a = delta / sqrt(d)")
    sim.add_argument("--sigma2", type=float, default=1.0)
    sim.add_argument("--cov", choices=("ar04", "identity"), default="ar04")
    sim.add_argument("--bandwidth-sweep", dest="bandwidth_sweep", action="store_true")
    sim.add_argument("--x", dest="path_x", help="data file of sample X for subsample power")
    sim.add_argument("--y", dest="path_y", help="data file of sample Y for subsample power")
    sim.add_argument("--subsample", type=_size_list, default=None,
                     help="comma separated m; each trial draws m rows from --x and m from --y")

    bench = sub.add_parser("benchmark", parents=[common], help="runtime comparison")
    bench.add_argument("--sizes", type=_size_list, default=None)
    bench.add_argument("--d", dest="dimension", type=int, default=100)
    bench.add_argument("--repeats", type=int, default=10)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    command = args.subcommand
    methods = args.method or (BENCHMARK_METHODS if command == "benchmark" else DEFAULT_METHODS)

    scenarios = []
    if command == "simulate" and args.family:
        if args.d is None:
            raise ParameterError("--family needs --d")
        if args.delta is not None:
            spec = ScenarioSpec.from_delta(args.family, args.d, args.m, args.n, args.delta,
                                           sigma2=args.sigma2, cov=args.cov)
        else:
            spec = ScenarioSpec(args.family, args.d, args.m, args.n, a=args.a or 0.0,
                                sigma2=args.sigma2, cov=args.cov)
        scenarios.append(spec)

    return RunConfig(
        subcommand=command,
        methods=methods,
        path_x=getattr(args, "path_x", None),
        path_y=getattr(args, "path_y", None),
        precomputed=getattr(args, "precomputed", None),
        m=args.m if command in ("test", "diagnose") else None,
        bandwidth=args.bandwidth,
        permutations=args.permutations,
        exhaustive=getattr(args, "exhaustive", False),
        seed=args.seed,
        level=args.level,
        output_format=args.output_format,
        output=args.output,
        from_z=tuple(args.from_z) if getattr(args, "from_z", None) else None,
        preset=getattr(args, "preset", None),
        scenarios=scenarios,
        trials=getattr(args, "trials", 1000),
        bandwidth_sweep=getattr(args, "bandwidth_sweep", False),
        sizes=getattr(args, "sizes", None) or [],
        dimension=getattr(args, "dimension", 100),
        repeats=getattr(args, "repeats", 10),
        threads=args.threads,
        subsample=getattr(args, "subsample", None) or [],
    )


RUNNERS = {
    "test": run_test,
    "simulate": run_simulation,
    "diagnose": run_diagnose,
    "benchmark": run_benchmark,
}


def _named_degeneracy(exc: DegeneracyError) -> str:
    return str(exc) if exc.case else f"{exc} (no C1/C2 corner case detected)"


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = get_settings()
    except ParameterError as exc:
        print(f"kergpk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(settings.log_level)

    args = build_parser().parse_args(argv)
    try:
        configure_threads(args.threads)
        config = config_from_args(args)
        result = RUNNERS[config.subcommand](config)
        write_output(format_output(config, result), config.output)
    except DegeneracyError as exc:
        print(f"kergpk: degenerate kernel: {_named_degeneracy(exc)}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ParameterError, UnknownPresetError) as exc:
        print(f"kergpk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, SizeError, DegenerateDataError) as exc:
        print(f"kergpk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KerGPKError as exc:
        print(f"kergpk: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
