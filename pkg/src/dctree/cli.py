"""Command-line interface: fit-teacher, distill, simulate, export.

Exit codes: 0 on success, 1 for usage or config problems, 2 for runtime and
data errors. Every command is deterministic given the same config and seed,
including the --threads setting, so reruns produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .causal import fit_causal_forest, predict_oob_cate
from .config import ConfigError, RunConfig, load_run_config
from .dataset import ColumnMapping, DataError, Dataset, inject_noise, load_csv
from .estimate import bootstrap_se
from .evaluation import run_benchmark, write_report_csv, format_report
from .evo import fit_evtree
from .render import write_dot
from .serialize import (
    causal_forest_from_doc,
    causal_forest_to_doc,
    estimated_tree_from_doc,
    estimated_tree_to_doc,
    read_doc,
    write_doc,
)
from .tree import DistillationTarget, fit_cart

TEACHER_FILE = "teacher.json"
OOB_FILE = "oob_cate.csv"
TREE_FILE = "tree.json"
DOT_FILE = "tree.dot"
REPORT_CSV = "report.csv"
REPORT_TXT = "report.txt"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; this tool reserves 2 for
    # runtime errors, so route usage failures through ConfigError instead
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dct", description="Distill causal forests into single honest trees.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, help="worker cap for parallel sections")
        p.add_argument("--out-dir", help="output directory (default from config)")

    fit = sub.add_parser("fit-teacher", help="fit the causal-forest teacher")
    common(fit)

    distill = sub.add_parser("distill", help="distill the teacher into one estimated tree")
    common(distill)
    distill.add_argument("--mode", choices=("greedy", "optimal"),
                         help="student fitter (overrides config mode)")
    distill.add_argument("--teacher", help=f"teacher model file (default out_dir/{TEACHER_FILE})")

    sim = sub.add_parser("simulate", help="run the multi-model benchmark")
    common(sim)
    sim.add_argument("--resume", action="store_true",
                     help="reuse any completed cell fragments in out_dir/fragments")

    export = sub.add_parser("export", help="re-export a saved tree as DOT or JSON")
    common(export)
    export.add_argument("--input", required=True, help="estimated-tree JSON file")
    export.add_argument("--format", choices=("dot", "json"), default="dot")
    export.add_argument("--output", help="output path (default derived from the input name)")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    if getattr(args, "out_dir", None):
        overrides.append(f"out_dir={args.out_dir}")
    if getattr(args, "mode", None):
        overrides.append(f"mode={args.mode}")
    if getattr(args, "resume", False):
        overrides.append("resume=true")
    return load_run_config(args.config, tuple(overrides), seed=args.seed, threads=args.threads)


def _load_data(config: RunConfig) -> Dataset:
    if config.data_csv:
        with open(config.data_csv, newline="") as fh:
            header = next(csv.reader(fh))
        mapping = ColumnMapping(
            outcome="y",
            treatment="w",
            tau_true="tau_true" if "tau_true" in header else None,
            covariates=tuple(c for c in header if c not in ("y", "w", "tau_true")),
        )
        d = load_csv(config.data_csv, mapping)
    else:
        from .dgp import generate

        d = generate(config.dgp_spec())
    if config.noisy:
        d = inject_noise(
            d, config.noise_features, config.corr_features, config.corr_rho,
            seed=config.seed,
        )
    return d


def _out_path(config: RunConfig, name: str) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, name)


def cmd_fit_teacher(config: RunConfig, args) -> int:
    d = _load_data(config)
    teacher = fit_causal_forest(d, config.forest_params())
    oob = predict_oob_cate(teacher, d)

    model_path = _out_path(config, TEACHER_FILE)
    write_doc(causal_forest_to_doc(teacher), model_path)
    oob_path = _out_path(config, OOB_FILE)
    with open(oob_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "oob_cate", "covered"])
        for i in range(d.n):
            writer.writerow([i, repr(float(oob.values[i])), int(oob.covered[i])])

    coverage = float(oob.covered.mean())
    print(f"teacher: {len(teacher.trees)} trees on n={d.n}, OOB coverage {coverage:.3f}")
    print(f"wrote {model_path}")
    print(f"wrote {oob_path}")
    return 0


def _student_split(n: int, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(30,)))
    perm = rng.permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def cmd_distill(config: RunConfig, args) -> int:
    teacher_path = args.teacher or os.path.join(config.out_dir, TEACHER_FILE)
    if not os.path.exists(teacher_path):
        raise DataError(f"missing teacher model file {teacher_path}; run fit-teacher first")
    teacher = causal_forest_from_doc(read_doc(teacher_path))
    d = _load_data(config)
    if d.fingerprint() != teacher.train_fingerprint:
        raise DataError("dataset does not match the teacher's training data")

    fit_rows, est_rows = _student_split(d.n, config.seed)
    if est_rows.size < 2:
        raise DataError("estimation sample too small")
    oob = predict_oob_cate(teacher, d)
    usable = fit_rows[oob.covered[fit_rows]]
    target = DistillationTarget(x=d.x[usable], t=oob.values[usable])

    if config.mode == "greedy":
        structure = fit_cart(target, config.student_depth, config.student_min_leaf)
    else:
        progress = None
        if config.progress_csv:
            progress = (config.progress_csv if os.path.isabs(config.progress_csv)
                        else _out_path(config, config.progress_csv))
        structure = fit_evtree(target, config.evo_params(), progress_path=progress)

    nv = teacher.nuisances.values_for_rows(d, est_rows)
    et = bootstrap_se(structure, d.subset(est_rows), nv, b=config.bootstrap_b, seed=config.seed)

    tree_path = _out_path(config, TREE_FILE)
    write_doc(estimated_tree_to_doc(et), tree_path)
    dot_path = _out_path(config, DOT_FILE)
    write_dot(et, dot_path)

    n_sig = sum(1 for e in et.estimates if e.significant_95)
    print(f"{config.mode} student: {et.tree.n_nodes} nodes, {n_sig} significant at 95%")
    print(f"wrote {tree_path}")
    print(f"wrote {dot_path}")
    return 0


def _write_histogram_csv(matrix: np.ndarray, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def cmd_simulate(config: RunConfig, args) -> int:
    bench = config.benchmark_config(fragments_dir=_out_path(config, "fragments"))
    report = run_benchmark(bench)

    csv_path = _out_path(config, REPORT_CSV)
    write_report_csv(report, csv_path)
    table = format_report(report)
    txt_path = _out_path(config, REPORT_TXT)
    with open(txt_path, "w") as fh:
        fh.write(table)
    for (dgp, variant, seed), matrix in sorted(report.histograms.items()):
        _write_histogram_csv(matrix, _out_path(config, f"histogram_{dgp}_{variant}_{seed}.csv"))

    print(table, end="")
    print(f"wrote {csv_path}")
    print(f"wrote {txt_path}")
    return 0


def cmd_export(config: RunConfig, args) -> int:
    et = estimated_tree_from_doc(read_doc(args.input))
    stem = os.path.splitext(os.path.basename(args.input))[0]
    if args.format == "dot":
        out = args.output or _out_path(config, f"{stem}.dot")
        write_dot(et, out)
    else:
        out = args.output or _out_path(config, f"{stem}.export.json")
        write_doc(estimated_tree_to_doc(et), out)
    print(f"wrote {out}")
    return 0


COMMANDS = {
    "fit-teacher": cmd_fit_teacher,
    "distill": cmd_distill,
    "simulate": cmd_simulate,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_from_args(args)
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
