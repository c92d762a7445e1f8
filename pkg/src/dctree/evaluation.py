"""Ground-truth MAE, R-Loss and the seven-model simulation benchmark.

A benchmark cell is one (dgp, variant, seed) triple. Within a cell the data
is split in half into train and test; the train half is split again into a
tree-fitting half and an estimation half. The teacher forest is fit on the
whole train half (its own honesty handles structure vs values), students are
fit against the teacher's out-of-bag CATE on the fitting half, and every
single-tree model is re-estimated with AIPW on the estimation half before
predicting the test rows. All models share the teacher's nuisance forests.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import median

import numpy as np

from .causal import (
    CausalForestParams,
    best_tree_by_rloss,
    extract_pruned_tree,
    fit_causal_forest,
    predict_cate,
    predict_oob_cate,
)
from .dataset import DataError, Dataset, inject_noise
from .dgp import DgpSpec, generate
from .estimate import estimate_leaves, predict_dct
from .evo import EvoParams, fit_evtree
from .forest import clip_propensity, predict
from .tree import DistillationTarget, RegressionTree, fit_cart

# column order follows the result tables
MODEL_NAMES = (
    "teacher",
    "optimal_dct",
    "greedy_dct",
    "wager_best_tree",
    "ten_tree_forest",
    "mean_tree",
    "basic_causal_tree",
)
VARIANTS = ("plain", "noisy")
REPORT_COLUMNS = (
    "dgp", "variant", "model", "seed", "mae_truth", "r_loss", "runtime_seconds", "error",
)


def mae_truth(pred: np.ndarray, tau_true: np.ndarray) -> float:
    if tau_true is None:
        raise DataError("ground-truth effects are absent")
    pred = np.asarray(pred, dtype=np.float64)
    tau_true = np.asarray(tau_true, dtype=np.float64)
    if pred.shape != tau_true.shape:
        raise DataError(f"pred has shape {pred.shape}, truth has shape {tau_true.shape}")
    return float(np.mean(np.abs(pred - tau_true)))


def r_loss(pred: np.ndarray, d: Dataset, m_hat: np.ndarray, e_hat: np.ndarray) -> float:
    """Mean of ((Y - m_hat) - (W - e_hat) * pred)^2.

    m_hat and e_hat must be out-of-fold with respect to d: either out-of-bag
    values on the nuisance training rows or plain predictions on fresh rows.
    """
    pred = np.asarray(pred, dtype=np.float64)
    m_hat = np.asarray(m_hat, dtype=np.float64)
    e_hat = np.asarray(e_hat, dtype=np.float64)
    if not (pred.shape == m_hat.shape == e_hat.shape == d.y.shape):
        raise DataError("r_loss inputs must all have one value per row of d")
    resid = (d.y - m_hat) - (d.w - e_hat) * pred
    return float(np.mean(resid * resid))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything run_benchmark needs to be rerun bit-for-bit."""

    dgps: tuple[DgpSpec, ...]
    variants: tuple[str, ...] = ("plain",)
    seeds: tuple[int, ...] = (0,)
    models: tuple[str, ...] = MODEL_NAMES
    forest: CausalForestParams = CausalForestParams()
    evo: EvoParams = EvoParams()
    student_depth: int = 4
    student_min_leaf: int = 25
    noise_features: int = 20
    corr_features: int = 10
    corr_rho: float = 0.9
    keep_histograms: bool = False
    threads: int = 1
    fragments_dir: str | None = None
    resume: bool = False

    def __post_init__(self):
        if not self.dgps:
            raise DataError("benchmark config names no DGPs")
        if not self.seeds:
            raise DataError("benchmark config names no seeds")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown or not self.variants:
            raise DataError(f"variants must be drawn from {VARIANTS}, got {self.variants}")
        bad = [m for m in self.models if m not in MODEL_NAMES]
        if bad or not self.models:
            raise DataError(f"unknown models {bad}; known: {MODEL_NAMES}")
        if self.threads < 1:
            raise DataError(f"threads must be >= 1, got {self.threads}")
        if self.resume and not self.fragments_dir:
            raise DataError("resume requires fragments_dir")

    def cells(self) -> list[tuple[DgpSpec, str, int]]:
        return [
            (dgp, variant, int(seed))
            for dgp in self.dgps
            for variant in self.variants
            for seed in self.seeds
        ]


@dataclass(frozen=True)
class ReportRow:
    dgp: str
    variant: str
    model: str
    seed: int
    mae_truth: float | None
    r_loss: float | None
    runtime_seconds: float
    error: str | None = None


@dataclass
class BenchmarkReport:
    rows: list[ReportRow]
    histograms: dict[tuple[str, str, int], np.ndarray] = field(default_factory=dict)


def _derived(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(entropy=int(seed), spawn_key=(20, k)).generate_state(1)[0])


def _split_cell(n: int, seed: int):
    """test / train halves, then fit / est halves of train; all sorted."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(21,)))
    perm = rng.permutation(n)
    half = n // 2
    test = np.sort(perm[:half])
    train = np.sort(perm[half:])
    tr_perm = rng.permutation(train.size)
    fit = np.sort(train[tr_perm[: train.size // 2]])
    est = np.sort(train[tr_perm[train.size // 2:]])
    return train, test, fit, est


def _cell_data(config: BenchmarkConfig, dgp: DgpSpec, variant: str, seed: int) -> Dataset:
    d = generate(dgp.with_seed(seed))
    if variant == "noisy":
        d = inject_noise(
            d, config.noise_features, config.corr_features, config.corr_rho,
            seed=_derived(seed, 0),
        )
    return d


def _run_cell(config: BenchmarkConfig, dgp: DgpSpec, variant: str, seed: int):
    """All requested model rows for one cell, plus the per-tree matrix."""
    d = _cell_data(config, dgp, variant, seed)
    train, test, fit, est = _split_cell(d.n, seed)
    d_train, d_test, d_est = d.subset(train), d.subset(test), d.subset(est)
    tau_test = None if d.tau_true is None else d.tau_true[test]
    histogram = None

    t0 = time.perf_counter()
    try:
        teacher = fit_causal_forest(d_train, replace(config.forest, seed=seed))
    except Exception as exc:  # noqa: BLE001 - cell must report, not crash the run
        msg = f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - t0
        return [
            ReportRow(dgp.name, variant, m, seed, None, None, elapsed, msg)
            for m in config.models
        ], None
    teacher_fit_seconds = time.perf_counter() - t0

    # shared inputs: AIPW nuisances on the estimation half (out-of-bag, since
    # est rows were in the nuisance training data) and fresh-row nuisances on
    # test for R-Loss
    est_local = np.searchsorted(train, est)
    fit_local = np.searchsorted(train, fit)
    nv_est = teacher.nuisances.values_for_rows(d_train, est_local)
    m_test = predict(teacher.nuisances.m, d_test.x)
    e_test = clip_propensity(predict(teacher.nuisances.e, d_test.x))

    oob = predict_oob_cate(teacher, d_train)
    covered = oob.covered[fit_local]
    target = DistillationTarget(x=d_train.x[fit_local][covered], t=oob.values[fit_local][covered])

    def tree_model(structure: RegressionTree) -> np.ndarray:
        et = estimate_leaves(structure, d_est, nv_est)
        return predict_dct(et, d_test.x, on_unavailable="ancestor")[0]

    def build_teacher():
        return predict_cate(teacher, d_test.x)

    def build_optimal():
        params = replace(
            config.evo, seed=seed,
            max_depth=config.student_depth, min_leaf=config.student_min_leaf,
        )
        return tree_model(fit_evtree(target, params))

    def build_greedy():
        return tree_model(fit_cart(target, config.student_depth, config.student_min_leaf))

    def build_wager():
        chosen = best_tree_by_rloss(teacher, d_train, max_depth=config.student_depth)
        return tree_model(extract_pruned_tree(teacher, chosen, config.student_depth).tree)

    def build_ten_tree():
        small = fit_causal_forest(
            d_train,
            replace(config.forest, num_trees=10, seed=_derived(seed, 1)),
            nuisances=teacher.nuisances,
        )
        return predict_cate(small, d_test.x)

    def build_mean_tree():
        nonlocal histogram
        matrix = np.empty((d_test.n, len(teacher.trees)))
        for j, ct in enumerate(teacher.trees):
            matrix[:, j] = tree_model(ct.tree.prune_to_depth(config.student_depth))
        histogram = matrix
        return matrix.mean(axis=1)

    def build_basic():
        one = fit_causal_forest(
            d_train,
            replace(config.forest, num_trees=1, seed=_derived(seed, 2)),
            nuisances=teacher.nuisances,
        )
        return tree_model(extract_pruned_tree(one, 0, config.student_depth).tree)

    builders = {
        "teacher": build_teacher,
        "optimal_dct": build_optimal,
        "greedy_dct": build_greedy,
        "wager_best_tree": build_wager,
        "ten_tree_forest": build_ten_tree,
        "mean_tree": build_mean_tree,
        "basic_causal_tree": build_basic,
    }

    rows = []
    for name in config.models:
        start = time.perf_counter()
        try:
            pred = builders[name]()
            mae = None if tau_test is None else mae_truth(pred, tau_test)
            rl = r_loss(pred, d_test, m_test, e_test)
            err = None
        except Exception as exc:  # noqa: BLE001 - isolate per-model failures
            mae, rl, err = None, None, f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start
        if name == "teacher":
            elapsed += teacher_fit_seconds
        rows.append(ReportRow(dgp.name, variant, name, seed, mae, rl, elapsed, err))
    if not config.keep_histograms:
        histogram = None
    return rows, histogram


def _fragment_path(fragments_dir: str, dgp_name: str, variant: str, seed: int) -> str:
    return os.path.join(fragments_dir, f"cell_{dgp_name}_{variant}_{seed}.csv")


def _write_rows_csv(rows, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([
                r.dgp, r.variant, r.model, r.seed,
                "" if r.mae_truth is None else repr(float(r.mae_truth)),
                "" if r.r_loss is None else repr(float(r.r_loss)),
                repr(float(r.runtime_seconds)),
                "" if r.error is None else r.error,
            ])


def _read_rows_csv(path: str) -> list[ReportRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise DataError(f"unexpected report columns in {path}: {header}")
        rows = []
        for rec in reader:
            rows.append(ReportRow(
                dgp=rec[0], variant=rec[1], model=rec[2], seed=int(rec[3]),
                mae_truth=float(rec[4]) if rec[4] else None,
                r_loss=float(rec[5]) if rec[5] else None,
                runtime_seconds=float(rec[6]),
                error=rec[7] if rec[7] else None,
            ))
    return rows


def write_report_csv(report: BenchmarkReport, path: str):
    _write_rows_csv(report.rows, path)


def read_report_csv(path: str) -> BenchmarkReport:
    return BenchmarkReport(rows=_read_rows_csv(path))


def _run_cell_star(args):
    return _run_cell(*args)


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Run every configured cell, reusing and writing per-cell fragments.

    With resume set, cells whose fragment file already exists are loaded
    instead of recomputed, so an interrupted run picks up where it stopped.
    """
    cells = config.cells()
    if config.fragments_dir:
        os.makedirs(config.fragments_dir, exist_ok=True)

    done: dict[tuple[str, str, int], list[ReportRow]] = {}
    pending = []
    for dgp, variant, seed in cells:
        key = (dgp.name, variant, seed)
        frag = (
            _fragment_path(config.fragments_dir, *key) if config.fragments_dir else None
        )
        if config.resume and frag and os.path.exists(frag):
            done[key] = _read_rows_csv(frag)
        else:
            pending.append((dgp, variant, seed))

    histograms: dict[tuple[str, str, int], np.ndarray] = {}

    def record(dgp: DgpSpec, variant: str, seed: int, rows, histogram):
        key = (dgp.name, variant, seed)
        done[key] = rows
        if histogram is not None:
            histograms[key] = histogram
        if config.fragments_dir:
            _write_rows_csv(rows, _fragment_path(config.fragments_dir, *key))

    if config.threads > 1 and len(pending) > 1:
        args = [(config, dgp, variant, seed) for dgp, variant, seed in pending]
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            for (dgp, variant, seed), (rows, histogram) in zip(
                pending, pool.map(_run_cell_star, args)
            ):
                record(dgp, variant, seed, rows, histogram)
    else:
        for dgp, variant, seed in pending:
            rows, histogram = _run_cell(config, dgp, variant, seed)
            record(dgp, variant, seed, rows, histogram)

    all_rows = []
    for dgp, variant, seed in cells:
        all_rows.extend(done[(dgp.name, variant, seed)])
    return BenchmarkReport(rows=all_rows, histograms=histograms)


def median_by_model(report: BenchmarkReport, metric: str):
    """{(dgp, variant): {model: median across seeds}} for one metric column."""
    if metric not in ("mae_truth", "r_loss"):
        raise DataError(f"unknown metric '{metric}'")
    acc: dict[tuple[str, str], dict[str, list[float]]] = {}
    for r in report.rows:
        value = getattr(r, metric)
        if value is None:
            continue
        acc.setdefault((r.dgp, r.variant), {}).setdefault(r.model, []).append(value)
    return {
        key: {model: float(median(vals)) for model, vals in models.items()}
        for key, models in acc.items()
    }


def format_report(report: BenchmarkReport) -> str:
    """Aligned text tables, one block per (variant, metric).

    Rows are DGPs, columns are models in the standard order, each value the
    median over seeds. Failed rows are left out of medians; a cell with no
    successful run prints as '-'.
    """
    models = [m for m in MODEL_NAMES if any(r.model == m for r in report.rows)]
    variants = []
    for r in report.rows:
        if r.variant not in variants:
            variants.append(r.variant)
    blocks = []
    for metric, label in (("mae_truth", "ground-truth MAE"), ("r_loss", "R-Loss")):
        med = median_by_model(report, metric)
        for variant in variants:
            dgps = []
            for r in report.rows:
                if r.variant == variant and r.dgp not in dgps:
                    dgps.append(r.dgp)
            header = ["dgp"] + list(models)
            lines = [[dgp] + [
                f"{med[(dgp, variant)][m]:.4f}"
                if (dgp, variant) in med and m in med[(dgp, variant)] else "-"
                for m in models
            ] for dgp in dgps]
            widths = [
                max(len(row[i]) for row in [header] + lines) for i in range(len(header))
            ]
            text = [f"{label}, {variant} variant (median over seeds)"]
            text.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
            for row in lines:
                text.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
            blocks.append("\n".join(text))
    n_err = sum(1 for r in report.rows if r.error is not None)
    if n_err:
        blocks.append(f"{n_err} model run(s) failed; see the error column of the CSV.")
    return "\n\n".join(blocks) + "\n"
