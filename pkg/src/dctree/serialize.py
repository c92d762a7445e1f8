"""Versioned JSON round-trips for forests, teachers and estimated trees.

One schema version covers every document kind; readers reject any other
version outright. Output is canonical (sorted keys, no whitespace, one
trailing newline) so reruns of a deterministic pipeline produce byte-equal
files. Unavailable estimates are stored as nulls, never NaN, keeping the
documents strict JSON.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .causal import CausalForest, CausalForestParams, CausalTree, NuisanceForests
from .dataset import DataError
from .estimate import EstimatedTree, LeafEstimate
from .forest import ForestParams, RegressionForest
from .tree import RegressionTree

SCHEMA_VERSION = 1


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def write_doc(doc: dict, path: str):
    with open(path, "w") as fh:
        fh.write(canonical_json(doc))


def read_doc(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DataError(f"{path} does not hold a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported schema version {version!r}, this reader handles {SCHEMA_VERSION}")
    return doc


def _expect_kind(doc: dict, kind: str):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(
            f"unsupported schema version {doc.get('schema_version')!r}, "
            f"this reader handles {SCHEMA_VERSION}"
        )
    if doc.get("kind") != kind:
        raise DataError(f"expected a {kind} document, got kind {doc.get('kind')!r}")


def _tree_nodes(t: RegressionTree) -> list[dict]:
    # node ids are preserved as list positions; no renumbering, so documents
    # stay aligned with per-node estimate lists
    nodes = []
    for i in range(t.n_nodes):
        node = {"value": float(t.value[i]), "n": int(t.n_rows[i])}
        if t.feature[i] >= 0:
            node.update(
                feature=int(t.feature[i]),
                threshold=float(t.threshold[i]),
                left=int(t.left[i]),
                right=int(t.right[i]),
            )
        nodes.append(node)
    return nodes


def _tree_from_nodes(n_features: int, nodes: list[dict]) -> RegressionTree:
    return RegressionTree.from_dict({"n_features": int(n_features), "nodes": nodes})


def _forest_params_doc(p: ForestParams) -> dict:
    return {
        "num_trees": p.num_trees,
        "subsample_fraction": p.subsample_fraction,
        "mtry": p.mtry,
        "min_leaf": p.min_leaf,
        "max_depth": p.max_depth,
        "seed": p.seed,
    }


def _forest_params_from(doc: dict) -> ForestParams:
    return ForestParams(
        num_trees=int(doc["num_trees"]),
        subsample_fraction=float(doc["subsample_fraction"]),
        mtry=None if doc["mtry"] is None else int(doc["mtry"]),
        min_leaf=int(doc["min_leaf"]),
        max_depth=None if doc["max_depth"] is None else int(doc["max_depth"]),
        seed=int(doc["seed"]),
    )


def _forest_body(f: RegressionForest) -> dict:
    return {
        "params": _forest_params_doc(f.params),
        "target_name": f.target_name,
        "n_features": f.n_features,
        "train_n": f.train_n,
        "train_mean": f.train_mean,
        "train_fingerprint": f.train_fingerprint,
        "constant_target": f.constant_target,
        "trees": [_tree_nodes(t) for t in f.trees],
        "subsamples": [rows.tolist() for rows in f.subsamples],
    }


def _forest_from_body(body: dict) -> RegressionForest:
    p = int(body["n_features"])
    return RegressionForest(
        trees=[_tree_from_nodes(p, nodes) for nodes in body["trees"]],
        subsamples=[np.asarray(rows, dtype=np.int64) for rows in body["subsamples"]],
        params=_forest_params_from(body["params"]),
        target_name=str(body["target_name"]),
        n_features=p,
        train_n=int(body["train_n"]),
        train_mean=float(body["train_mean"]),
        train_fingerprint=str(body["train_fingerprint"]),
        constant_target=bool(body["constant_target"]),
    )


def regression_forest_to_doc(f: RegressionForest) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "regression_forest"}
    doc.update(_forest_body(f))
    return doc


def regression_forest_from_doc(doc: dict) -> RegressionForest:
    _expect_kind(doc, "regression_forest")
    return _forest_from_body(doc)


def _causal_params_doc(p: CausalForestParams) -> dict:
    return {
        "num_trees": p.num_trees,
        "subsample_fraction": p.subsample_fraction,
        "honest_fraction": p.honest_fraction,
        "mtry": p.mtry,
        "min_leaf_treated": p.min_leaf_treated,
        "min_leaf_control": p.min_leaf_control,
        "max_depth": p.max_depth,
        "seed": p.seed,
        "nuisance": _forest_params_doc(p.nuisance),
    }


def _causal_params_from(doc: dict) -> CausalForestParams:
    return CausalForestParams(
        num_trees=int(doc["num_trees"]),
        subsample_fraction=float(doc["subsample_fraction"]),
        honest_fraction=float(doc["honest_fraction"]),
        mtry=None if doc["mtry"] is None else int(doc["mtry"]),
        min_leaf_treated=int(doc["min_leaf_treated"]),
        min_leaf_control=int(doc["min_leaf_control"]),
        max_depth=None if doc["max_depth"] is None else int(doc["max_depth"]),
        seed=int(doc["seed"]),
        nuisance=_forest_params_from(doc["nuisance"]),
    )


def causal_forest_to_doc(f: CausalForest) -> dict:
    nu = f.nuisances
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "causal_forest",
        "params": _causal_params_doc(f.params),
        "n_features": f.n_features,
        "train_n": f.train_n,
        "train_fingerprint": f.train_fingerprint,
        "degenerate_trees": f.degenerate_trees,
        "trees": [
            {
                "nodes": _tree_nodes(ct.tree),
                "fit_rows": ct.fit_rows.tolist(),
                "est_rows": ct.est_rows.tolist(),
                "degenerate": bool(ct.degenerate),
            }
            for ct in f.trees
        ],
        "nuisances": {
            "m": _forest_body(nu.m),
            "e": _forest_body(nu.e),
            "mu0": _forest_body(nu.mu0),
            "mu1": _forest_body(nu.mu1),
            "control_rows": nu.control_rows.tolist(),
            "treated_rows": nu.treated_rows.tolist(),
            "train_n": nu.train_n,
            "train_fingerprint": nu.train_fingerprint,
        },
    }


def causal_forest_from_doc(doc: dict) -> CausalForest:
    _expect_kind(doc, "causal_forest")
    p = int(doc["n_features"])
    nu = doc["nuisances"]
    nuisances = NuisanceForests(
        m=_forest_from_body(nu["m"]),
        e=_forest_from_body(nu["e"]),
        mu0=_forest_from_body(nu["mu0"]),
        mu1=_forest_from_body(nu["mu1"]),
        control_rows=np.asarray(nu["control_rows"], dtype=np.int64),
        treated_rows=np.asarray(nu["treated_rows"], dtype=np.int64),
        train_n=int(nu["train_n"]),
        train_fingerprint=str(nu["train_fingerprint"]),
    )
    trees = [
        CausalTree(
            tree=_tree_from_nodes(p, td["nodes"]),
            fit_rows=np.asarray(td["fit_rows"], dtype=np.int64),
            est_rows=np.asarray(td["est_rows"], dtype=np.int64),
            degenerate=bool(td["degenerate"]),
        )
        for td in doc["trees"]
    ]
    return CausalForest(
        trees=trees,
        nuisances=nuisances,
        params=_causal_params_from(doc["params"]),
        n_features=p,
        train_n=int(doc["train_n"]),
        train_fingerprint=str(doc["train_fingerprint"]),
        degenerate_trees=int(doc["degenerate_trees"]),
    )


def _opt_float(v: float):
    return None if not math.isfinite(v) else float(v)


def estimated_tree_to_doc(et: EstimatedTree) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "estimated_tree",
        "feature_names": list(et.feature_names),
        "est_n": et.est_n,
        "tree": {"n_features": et.tree.n_features, "nodes": _tree_nodes(et.tree)},
        "estimates": [
            {
                "tau_hat": _opt_float(e.tau_hat),
                "se": _opt_float(e.se),
                "n_node": e.n_node,
                "n_treated": e.n_treated,
                "n_control": e.n_control,
                "available": e.available,
                "se_available": e.se_available,
            }
            for e in et.estimates
        ],
    }


def estimated_tree_from_doc(doc: dict) -> EstimatedTree:
    _expect_kind(doc, "estimated_tree")
    tree = _tree_from_nodes(doc["tree"]["n_features"], doc["tree"]["nodes"])
    estimates = [
        LeafEstimate(
            tau_hat=float("nan") if e["tau_hat"] is None else float(e["tau_hat"]),
            se=float("nan") if e["se"] is None else float(e["se"]),
            n_node=int(e["n_node"]),
            n_treated=int(e["n_treated"]),
            n_control=int(e["n_control"]),
            available=bool(e["available"]),
            se_available=bool(e["se_available"]),
        )
        for e in doc["estimates"]
    ]
    return EstimatedTree(
        tree=tree,
        estimates=estimates,
        feature_names=tuple(str(s) for s in doc["feature_names"]),
        est_n=int(doc["est_n"]),
    )
