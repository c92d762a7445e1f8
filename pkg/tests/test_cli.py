"""End-to-end CLI tests: exit codes, file outputs, determinism."""

import hashlib
import json
import re

import pytest

from dctree.cli import main
from dctree.serialize import estimated_tree_from_doc, read_doc
from dctree.tree import RegressionTree

FAST = [
    "--set", "dgp_n=400", "--set", "dgp_p=4",
    "--set", "num_trees=30", "--set", "nuisance_trees=40",
    "--set", "bootstrap_b=100",
    "--set", "population_size=30", "--set", "evo_min_iterations=60",
    "--set", "evo_convergence_window=25", "--set", "evo_max_iterations=200",
]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def fit_teacher(out_dir, *extra):
    code = main(["fit-teacher", "--out-dir", str(out_dir), *FAST, *extra])
    assert code == 0
    return out_dir / "teacher.json", out_dir / "oob_cate.csv"


class TestFitTeacher:
    def test_writes_model_and_oob(self, tmp_path, capsys):
        model, oob = fit_teacher(tmp_path)
        assert model.exists() and oob.exists()
        out = capsys.readouterr().out
        assert "30 trees" in out and "OOB coverage" in out
        header = oob.read_text().splitlines()[0]
        assert header == "row,oob_cate,covered"

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        model_a, oob_a = fit_teacher(a)
        model_b, oob_b = fit_teacher(b)
        assert sha(model_a) == sha(model_b)
        assert sha(oob_a) == sha(oob_b)

    def test_different_seed_changes_model(self, tmp_path):
        model_a, _ = fit_teacher(tmp_path / "a")
        model_b, _ = fit_teacher(tmp_path / "b", "--seed", "1")
        assert sha(model_a) != sha(model_b)

    def test_missing_input_csv(self, tmp_path, capsys):
        code = main(["fit-teacher", "--out-dir", str(tmp_path),
                     "--set", "data_csv=/no/such/file.csv"])
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestDistill:
    def distill(self, out_dir, *extra):
        return main(["distill", "--out-dir", str(out_dir), *FAST, *extra])

    def test_both_modes_produce_valid_files(self, tmp_path):
        for mode in ("greedy", "optimal"):
            out = tmp_path / mode
            fit_teacher(out)
            assert self.distill(out, "--mode", mode) == 0
            doc = read_doc(str(out / "tree.json"))
            et = estimated_tree_from_doc(doc)
            assert len(et.estimates) == et.tree.n_nodes
            dot = (out / "tree.dot").read_text()
            assert dot.startswith("digraph")

    def test_depth_honored(self, tmp_path):
        fit_teacher(tmp_path)
        assert self.distill(tmp_path, "--mode", "greedy", "--set", "student_depth=2") == 0
        doc = read_doc(str(tmp_path / "tree.json"))
        tree = RegressionTree.from_dict(doc["tree"])
        assert tree.node_depths().max() <= 2

    def test_missing_teacher(self, tmp_path, capsys):
        assert self.distill(tmp_path) == 2
        assert "missing teacher" in capsys.readouterr().err

    def test_dataset_mismatch(self, tmp_path, capsys):
        fit_teacher(tmp_path)
        assert self.distill(tmp_path, "--set", "dgp_noise_sd=0.7") == 2
        assert "does not match" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tmp_path):
        fit_teacher(tmp_path)
        assert self.distill(tmp_path, "--mode", "optimal") == 0
        first = sha(tmp_path / "tree.json"), sha(tmp_path / "tree.dot")
        assert self.distill(tmp_path, "--mode", "optimal") == 0
        assert (sha(tmp_path / "tree.json"), sha(tmp_path / "tree.dot")) == first

    def test_progress_csv(self, tmp_path):
        fit_teacher(tmp_path)
        assert self.distill(tmp_path, "--mode", "optimal",
                            "--set", "progress_csv=progress.csv") == 0
        lines = (tmp_path / "progress.csv").read_text().splitlines()
        assert lines[0] == "iteration,best_eval,elite_mean"
        best = [float(row.split(",")[1]) for row in lines[1:]]
        assert len(best) >= 60
        assert all(b <= a + 1e-12 for a, b in zip(best, best[1:]))

    def test_zero_effect_rarely_significant(self, tmp_path):
        clean = 0
        for seed in range(5):
            out = tmp_path / f"s{seed}"
            fit_teacher(out, "--seed", str(seed), "--set", "dgp_tau=zero")
            assert self.distill(out, "--mode", "greedy", "--seed", str(seed),
                                "--set", "dgp_tau=zero") == 0
            if "*" not in (out / "tree.dot").read_text():
                clean += 1
        assert clean >= 4


class TestSimulate:
    ARGS = [
        "--set", "sim_dgps=step", "--set", "sim_variants=plain", "--set", "sim_seeds=0",
    ]

    def test_one_cell_all_models(self, tmp_path, capsys):
        code = main(["simulate", "--out-dir", str(tmp_path), *FAST, *self.ARGS])
        assert code == 0
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "dgp,variant,model,seed,mae_truth,r_loss,runtime_seconds,error"
        assert len(lines) == 8
        assert (tmp_path / "report.txt").exists()
        assert (tmp_path / "histogram_step_plain_0.csv").exists()
        assert "ground-truth MAE" in capsys.readouterr().out

    def test_histogram_columns_match_teacher(self, tmp_path):
        main(["simulate", "--out-dir", str(tmp_path), *FAST, *self.ARGS])
        first = (tmp_path / "histogram_step_plain_0.csv").read_text().splitlines()[0]
        assert len(first.split(",")) == 30

    def test_resume_reuses_fragments(self, tmp_path):
        args = ["simulate", "--out-dir", str(tmp_path), *FAST, *self.ARGS]
        assert main(args) == 0
        before = sha(tmp_path / "report.csv")
        assert main(args + ["--resume"]) == 0
        # cells were loaded, not recomputed: identical runtimes, identical bytes
        assert sha(tmp_path / "report.csv") == before


class TestExport:
    def test_dot_and_json_roundtrip(self, tmp_path):
        fit_teacher(tmp_path)
        assert main(["distill", "--out-dir", str(tmp_path), *FAST, "--mode", "greedy"]) == 0
        tree_json = tmp_path / "tree.json"

        out_dot = tmp_path / "exported.dot"
        assert main(["export", "--input", str(tree_json), "--format", "dot",
                     "--output", str(out_dot)]) == 0
        dot = out_dot.read_text()
        n_tree = len(estimated_tree_from_doc(read_doc(str(tree_json))).estimates)
        assert len(re.findall(r"^  n\d+ \[", dot, re.M)) == n_tree

        out_json = tmp_path / "exported.json"
        assert main(["export", "--input", str(tree_json), "--format", "json",
                     "--output", str(out_json)]) == 0
        assert out_json.read_bytes() == tree_json.read_bytes()

    def test_schema_version_mismatch(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"schema_version": 99, "kind": "estimated_tree"}))
        assert main(["export", "--input", str(bad)]) == 2
        assert "schema version" in capsys.readouterr().err


class TestExitCodes:
    def test_usage_errors_are_one(self, capsys):
        assert main(["distill", "--mode", "psychic"]) == 1
        assert main(["fit-teacher", "--set", "seed"]) == 1
        assert main(["fit-teacher", "--set", "depht=3"]) == 1
        assert main(["export"]) == 1  # --input is required
        capsys.readouterr()

    def test_unknown_command_is_one(self, capsys):
        assert main(["transmogrify"]) == 1
        capsys.readouterr()

    def test_config_file_error_is_one(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("seed == 3\n")
        assert main(["fit-teacher", "--config", str(conf)]) == 1
        capsys.readouterr()
