"""Flat key=value run configuration shared by every CLI command.

One key per line, # comments, unknown keys rejected. Every key has a default
here, so a config file only needs the values it changes. Command-line
overrides beat the file; an explicit --seed or --threads beats both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .causal import CausalForestParams
from .dgp import DgpSpec
from .evaluation import MODEL_NAMES, BenchmarkConfig
from .evo import EvoParams
from .forest import ForestParams


class ConfigError(Exception):
    """Bad config file, bad key, bad value or bad CLI usage."""


DEFAULTS: dict[str, str] = {
    # general
    "seed": "0",
    "threads": "0",            # 0: DCT_THREADS env var, else all cores
    "out_dir": ".",
    # dataset: a CSV path wins over the dgp_* keys
    "data_csv": "",
    "dgp": "step",
    "dgp_n": "2000",
    "dgp_p": "10",
    "dgp_tau": "step",         # zero | step | linear | interaction
    "dgp_noise_sd": "1.0",
    "dgp_propensity": "0.5",   # a number, or "confounded"
    "noisy": "false",          # append noise and correlated columns
    "noise_features": "20",
    "corr_features": "10",
    "corr_rho": "0.9",
    # teacher forest
    "num_trees": "500",
    "subsample_fraction": "0.5",
    "honest_fraction": "0.5",
    "mtry": "0",               # 0: sqrt(p) heuristic
    "min_leaf_treated": "5",
    "min_leaf_control": "5",
    "max_depth": "0",          # 0: unlimited
    "nuisance_trees": "200",
    "nuisance_min_leaf": "5",
    # student
    "mode": "optimal",         # greedy | optimal
    "student_depth": "4",
    "student_min_leaf": "25",
    "bootstrap_b": "500",
    # evolutionary search
    "population_size": "200",
    "evo_alpha": "1.0",
    "evo_min_iterations": "1000",
    "evo_convergence_window": "100",
    "evo_max_iterations": "10000",
    "progress_csv": "",        # optimal-mode iteration log; empty: off
    # simulation benchmark
    "sim_dgps": "step,interaction",
    "sim_variants": "plain,noisy",
    "sim_seeds": "0,1,2,3,4,5,6,7,8,9",
    "sim_models": "all",
    "sim_histograms": "true",
    "resume": "false",
}


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{source} line {lineno}: unknown key {key!r}")
        values[key] = value.split("#", 1)[0].strip()
    return values


def _as_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from None


def _as_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}") from None


def _as_bool(raw: str, key: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key} must be true or false, got {raw!r}")


def _as_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


@dataclass(frozen=True)
class RunConfig:
    seed: int
    threads: int
    out_dir: str
    data_csv: str
    dgp: str
    dgp_n: int
    dgp_p: int
    dgp_tau: str
    dgp_noise_sd: float
    dgp_propensity: float | str
    noisy: bool
    noise_features: int
    corr_features: int
    corr_rho: float
    num_trees: int
    subsample_fraction: float
    honest_fraction: float
    mtry: int
    min_leaf_treated: int
    min_leaf_control: int
    max_depth: int
    nuisance_trees: int
    nuisance_min_leaf: int
    mode: str
    student_depth: int
    student_min_leaf: int
    bootstrap_b: int
    population_size: int
    evo_alpha: float
    evo_min_iterations: int
    evo_convergence_window: int
    evo_max_iterations: int
    progress_csv: str
    sim_dgps: tuple[str, ...]
    sim_variants: tuple[str, ...]
    sim_seeds: tuple[int, ...]
    sim_models: tuple[str, ...]
    sim_histograms: bool
    resume: bool

    def forest_params(self) -> CausalForestParams:
        return CausalForestParams(
            num_trees=self.num_trees,
            subsample_fraction=self.subsample_fraction,
            honest_fraction=self.honest_fraction,
            mtry=self.mtry or None,
            min_leaf_treated=self.min_leaf_treated,
            min_leaf_control=self.min_leaf_control,
            max_depth=self.max_depth or None,
            seed=self.seed,
            nuisance=ForestParams(
                num_trees=self.nuisance_trees,
                min_leaf=self.nuisance_min_leaf,
                seed=self.seed,
            ),
        )

    def dgp_spec(self, name: str | None = None, tau_fn: str | None = None) -> DgpSpec:
        return DgpSpec(
            name=name or self.dgp,
            n=self.dgp_n,
            p=self.dgp_p,
            tau_fn=tau_fn if tau_fn is not None else self.dgp_tau,
            noise_sd=self.dgp_noise_sd,
            propensity=self.dgp_propensity,
            seed=self.seed,
        )

    def evo_params(self) -> EvoParams:
        return EvoParams(
            population_size=self.population_size,
            alpha=self.evo_alpha,
            min_iterations=self.evo_min_iterations,
            convergence_window=self.evo_convergence_window,
            max_iterations=self.evo_max_iterations,
            max_depth=self.student_depth,
            min_leaf=self.student_min_leaf,
            seed=self.seed,
        )

    def benchmark_config(self, fragments_dir: str | None) -> BenchmarkConfig:
        # sim_dgps entries double as tau function names
        dgps = tuple(self.dgp_spec(name=name, tau_fn=name) for name in self.sim_dgps)
        models = MODEL_NAMES if self.sim_models == ("all",) else self.sim_models
        return BenchmarkConfig(
            dgps=dgps,
            variants=self.sim_variants,
            seeds=self.sim_seeds,
            models=models,
            forest=self.forest_params(),
            evo=self.evo_params(),
            student_depth=self.student_depth,
            student_min_leaf=self.student_min_leaf,
            noise_features=self.noise_features,
            corr_features=self.corr_features,
            corr_rho=self.corr_rho,
            keep_histograms=self.sim_histograms,
            threads=resolve_threads(self.threads),
            fragments_dir=fragments_dir,
            resume=self.resume,
        )


def _typed(values: dict[str, str]) -> RunConfig:
    propensity_raw = values["dgp_propensity"]
    try:
        propensity: float | str = float(propensity_raw)
    except ValueError:
        propensity = propensity_raw
    mode = values["mode"]
    if mode not in ("greedy", "optimal"):
        raise ConfigError(f"mode must be greedy or optimal, got {mode!r}")
    return RunConfig(
        seed=_as_int(values["seed"], "seed"),
        threads=_as_int(values["threads"], "threads"),
        out_dir=values["out_dir"],
        data_csv=values["data_csv"],
        dgp=values["dgp"],
        dgp_n=_as_int(values["dgp_n"], "dgp_n"),
        dgp_p=_as_int(values["dgp_p"], "dgp_p"),
        dgp_tau=values["dgp_tau"],
        dgp_noise_sd=_as_float(values["dgp_noise_sd"], "dgp_noise_sd"),
        dgp_propensity=propensity,
        noisy=_as_bool(values["noisy"], "noisy"),
        noise_features=_as_int(values["noise_features"], "noise_features"),
        corr_features=_as_int(values["corr_features"], "corr_features"),
        corr_rho=_as_float(values["corr_rho"], "corr_rho"),
        num_trees=_as_int(values["num_trees"], "num_trees"),
        subsample_fraction=_as_float(values["subsample_fraction"], "subsample_fraction"),
        honest_fraction=_as_float(values["honest_fraction"], "honest_fraction"),
        mtry=_as_int(values["mtry"], "mtry"),
        min_leaf_treated=_as_int(values["min_leaf_treated"], "min_leaf_treated"),
        min_leaf_control=_as_int(values["min_leaf_control"], "min_leaf_control"),
        max_depth=_as_int(values["max_depth"], "max_depth"),
        nuisance_trees=_as_int(values["nuisance_trees"], "nuisance_trees"),
        nuisance_min_leaf=_as_int(values["nuisance_min_leaf"], "nuisance_min_leaf"),
        mode=mode,
        student_depth=_as_int(values["student_depth"], "student_depth"),
        student_min_leaf=_as_int(values["student_min_leaf"], "student_min_leaf"),
        bootstrap_b=_as_int(values["bootstrap_b"], "bootstrap_b"),
        population_size=_as_int(values["population_size"], "population_size"),
        evo_alpha=_as_float(values["evo_alpha"], "evo_alpha"),
        evo_min_iterations=_as_int(values["evo_min_iterations"], "evo_min_iterations"),
        evo_convergence_window=_as_int(values["evo_convergence_window"], "evo_convergence_window"),
        evo_max_iterations=_as_int(values["evo_max_iterations"], "evo_max_iterations"),
        progress_csv=values["progress_csv"],
        sim_dgps=_as_list(values["sim_dgps"]),
        sim_variants=_as_list(values["sim_variants"]),
        sim_seeds=tuple(_as_int(s, "sim_seeds") for s in _as_list(values["sim_seeds"])),
        sim_models=_as_list(values["sim_models"]),
        sim_histograms=_as_bool(values["sim_histograms"], "sim_histograms"),
        resume=_as_bool(values["resume"], "resume"),
    )


def load_run_config(
    path: str | None = None,
    overrides: tuple[str, ...] = (),
    seed: int | None = None,
    threads: int | None = None,
) -> RunConfig:
    values = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text, source=path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = value.strip()
    if seed is not None:
        values["seed"] = str(seed)
    if threads is not None:
        values["threads"] = str(threads)
    return _typed(values)


def resolve_threads(requested: int) -> int:
    """Worker cap: explicit value, else DCT_THREADS, else all cores."""
    if requested > 0:
        return requested
    env = os.environ.get("DCT_THREADS", "").strip()
    if env:
        value = _as_int(env, "DCT_THREADS")
        if value > 0:
            return value
    return os.cpu_count() or 1
