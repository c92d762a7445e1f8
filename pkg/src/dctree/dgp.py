"""Synthetic data-generating processes with known ground-truth effects."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import DataError, Dataset


def _tau_zero(x):
    return np.zeros(x.shape[0])


def _tau_step(x):
    return 2.0 * (x[:, 0] > 0) - 1.0


def _tau_linear(x):
    return x[:, 0].copy()


def _tau_interaction(x):
    return 2.0 * ((x[:, 0] > 0) & (x[:, 1] > 0))


TAU_FNS = {
    "zero": _tau_zero,
    "step": _tau_step,
    "linear": _tau_linear,
    "interaction": _tau_interaction,
}


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _propensity_confounded(x):
    # treatment probability rises with the first covariate, staying in (0.2, 0.8)
    return 0.2 + 0.6 * _sigmoid(x[:, 0])


PROPENSITY_FNS = {"confounded": _propensity_confounded}


def _baseline(x):
    """Smooth arm-symmetric conditional mean shared by all effect functions."""
    return 0.5 * x[:, 0] + x[:, 1]


@dataclass(frozen=True)
class DgpSpec:
    """A named synthetic experiment: X iid standard normal, W Bernoulli,
    Y = m(X) + (W - 0.5) * tau(X) + noise."""

    name: str
    n: int
    p: int
    tau_fn: str = "step"
    noise_sd: float = 1.0
    propensity: float | str = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 100:
            raise DataError(f"dgp n must be >= 100, got {self.n}")
        if self.p < 2:
            raise DataError(f"dgp p must be >= 2, got {self.p}")
        if not np.isfinite(self.noise_sd) or self.noise_sd < 0:
            raise DataError(f"noise_sd must be finite and >= 0, got {self.noise_sd}")
        if self.tau_fn not in TAU_FNS:
            raise DataError(f"unknown tau_fn '{self.tau_fn}', known: {sorted(TAU_FNS)}")
        if isinstance(self.propensity, str):
            if self.propensity not in PROPENSITY_FNS:
                raise DataError(
                    f"unknown propensity '{self.propensity}', known: {sorted(PROPENSITY_FNS)}"
                )
        elif not (0.0 < float(self.propensity) < 1.0):
            raise DataError(f"constant propensity must lie in (0, 1), got {self.propensity}")

    def with_seed(self, seed: int) -> "DgpSpec":
        return replace(self, seed=int(seed))


def _rng_for(spec: DgpSpec, component: int) -> np.random.Generator:
    # independent substream per component so forcing one leaves the rest intact
    return np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(component,)))


def generate(spec: DgpSpec, force_w: int | None = None) -> Dataset:
    """Generate a Dataset from a DgpSpec, deterministically in spec.seed.

    force_w assigns every row to one arm while reusing the exact covariate and
    noise draws, so generate(spec, 1).y - generate(spec, 0).y == tau_true.
    """
    x = _rng_for(spec, 0).standard_normal((spec.n, spec.p))
    if isinstance(spec.propensity, str):
        e = PROPENSITY_FNS[spec.propensity](x)
    else:
        e = np.full(spec.n, float(spec.propensity))
    if force_w is None:
        w = (_rng_for(spec, 1).random(spec.n) < e).astype(np.float64)
    elif force_w in (0, 1):
        w = np.full(spec.n, float(force_w))
    else:
        raise DataError(f"force_w must be 0, 1 or None, got {force_w}")
    tau = TAU_FNS[spec.tau_fn](x)
    eps = _rng_for(spec, 2).normal(0.0, spec.noise_sd, spec.n)
    y = _baseline(x) + (w - 0.5) * tau + eps
    names = tuple(f"x{j + 1}" for j in range(spec.p))
    return Dataset(x=x, y=y, w=w, feature_names=names, tau_true=tau)
