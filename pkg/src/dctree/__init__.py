"""Distilled causal trees: interpretable single-tree students of causal forests.

The pipeline: fit an honest causal forest teacher, distill its out-of-bag
CATE predictions into one small tree (greedy CART or evolutionary search),
then re-estimate every node with AIPW on held-out data and attach bootstrap
standard errors.
"""

from .causal import (
    CausalForest,
    CausalForestParams,
    CausalTree,
    best_tree_by_rloss,
    extract_pruned_tree,
    fit_causal_forest,
    fit_nuisance_forests,
    mean_tree_prediction,
    predict_cate,
    predict_oob_cate,
)
from .dataset import (
    ColumnMapping,
    DataError,
    Dataset,
    SampleSplit,
    inject_noise,
    load_csv,
    split_honest,
    write_csv,
)
from .dgp import DgpSpec, generate
from .estimate import (
    EstimatedTree,
    LeafEstimate,
    NuisanceValues,
    aipw_scores,
    bootstrap_se,
    estimate_leaves,
    predict_dct,
)
from .evaluation import (
    MODEL_NAMES,
    BenchmarkConfig,
    BenchmarkReport,
    ReportRow,
    format_report,
    mae_truth,
    median_by_model,
    r_loss,
    read_report_csv,
    run_benchmark,
    write_report_csv,
)
from .evo import EvoParams, evaluate_tree, fit_evtree, vary
from .forest import (
    ForestParams,
    OobPrediction,
    RegressionForest,
    fit_regression_forest,
    predict,
    predict_oob,
)
from .render import to_dot, write_dot
from .serialize import (
    SCHEMA_VERSION,
    canonical_json,
    causal_forest_from_doc,
    causal_forest_to_doc,
    estimated_tree_from_doc,
    estimated_tree_to_doc,
    read_doc,
    regression_forest_from_doc,
    regression_forest_to_doc,
    write_doc,
)
from .tree import DistillationTarget, RegressionTree, fit_cart, leaf_tree

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig",
    "BenchmarkReport",
    "CausalForest",
    "CausalForestParams",
    "CausalTree",
    "ColumnMapping",
    "DataError",
    "Dataset",
    "DgpSpec",
    "DistillationTarget",
    "EstimatedTree",
    "EvoParams",
    "ForestParams",
    "LeafEstimate",
    "MODEL_NAMES",
    "NuisanceValues",
    "OobPrediction",
    "RegressionForest",
    "RegressionTree",
    "ReportRow",
    "SCHEMA_VERSION",
    "SampleSplit",
    "aipw_scores",
    "best_tree_by_rloss",
    "bootstrap_se",
    "canonical_json",
    "causal_forest_from_doc",
    "causal_forest_to_doc",
    "estimate_leaves",
    "estimated_tree_from_doc",
    "estimated_tree_to_doc",
    "evaluate_tree",
    "extract_pruned_tree",
    "fit_cart",
    "fit_causal_forest",
    "fit_evtree",
    "fit_nuisance_forests",
    "fit_regression_forest",
    "format_report",
    "generate",
    "inject_noise",
    "leaf_tree",
    "load_csv",
    "mae_truth",
    "mean_tree_prediction",
    "median_by_model",
    "predict",
    "predict_cate",
    "predict_dct",
    "predict_oob",
    "predict_oob_cate",
    "r_loss",
    "read_doc",
    "read_report_csv",
    "regression_forest_from_doc",
    "regression_forest_to_doc",
    "run_benchmark",
    "split_honest",
    "to_dot",
    "vary",
    "write_csv",
    "write_doc",
    "write_dot",
    "write_report_csv",
]
