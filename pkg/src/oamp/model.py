"""Gram-Schmidt signal model, sources, and experiment configuration.

An estimate x_hat of a unit-power signal x is decomposed as

    x_hat = alpha * x + xi,     xi orthogonal to x,

and summarized by the scalar pair (alpha, v) with v the per-entry power of
the residual xi.  The pair determines the estimate's quality through the
effective SNR alpha**2 / v, and the minimal MSE achievable by rescaling
x_hat is v / (alpha**2 + v).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .randmat import SpectrumSpec, SvdSystem, geometric_spectrum, sample_haar

ALGORITHMS = ("oamp-svd", "oamp-w", "oamp-w-optimized", "vamp", "amp", "se")
B_STRATEGIES = ("integral", "derivative", "monte-carlo", "ep", "none")


@dataclass(frozen=True)
class GsModel:
    """Scalar pair (alpha, v) of a Gram-Schmidt decomposition."""

    alpha: float
    v: float

    def __post_init__(self):
        if self.v < 0.0:
            raise ValueError(f"negative residual power: v={self.v}")

    @classmethod
    def normalized(cls, v: float) -> "GsModel":
        """Model with alpha = 1 (estimate = signal + orthogonal error)."""
        return cls(1.0, v)

    @classmethod
    def mmse(cls, alpha: float) -> "GsModel":
        """Model of a posterior-mean estimate: v = alpha * (1 - alpha)."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"mmse model needs alpha in [0, 1], got {alpha}")
        return cls(alpha, alpha * (1.0 - alpha))

    @property
    def effective_snr(self) -> float:
        return self.alpha**2 / self.v if self.v > 0 else math.inf

    @property
    def raw_error_power(self) -> float:
        """Per-entry power of x_hat - x for a unit-power signal."""
        return (1.0 - self.alpha) ** 2 + self.v


@dataclass(frozen=True)
class BernoulliGaussianPrior:
    """Sparse source: entries are 0 w.p. 1-lam, else N(0, 1/lam).

    The active variance 1/lam makes the per-entry power exactly 1 for any
    activity level; lam = 1 degenerates to the dense standard Gaussian.
    """

    lam: float

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"activity probability must be in (0, 1], got {self.lam}")

    @property
    def active_variance(self) -> float:
        return 1.0 / self.lam


def sample_prior(prior: BernoulliGaussianPrior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a length-n vector from the Bernoulli-Gaussian source."""
    active = rng.random(n) < prior.lam
    gains = rng.standard_normal(n) * math.sqrt(prior.active_variance)
    return np.where(active, gains, 0.0)


def gs_decompose(x_hat: np.ndarray, x: np.ndarray):
    """Per-realization Gram-Schmidt split of x_hat against x.

    Returns (GsModel(alpha, v), xi) with alpha = x_hat.x / x.x so that
    x.xi = 0 exactly and v = ||xi||^2 / n.  This is the empirical estimator
    of the ensemble decomposition; it peeks at x and is therefore used for
    diagnostics and tests only, never inside an algorithm.
    """
    xx = float(np.dot(x, x))
    if xx == 0.0:
        raise ValueError("undefined projection: reference signal is zero")
    alpha = float(np.dot(x_hat, x)) / xx
    xi = x_hat - alpha * x
    v = float(np.dot(xi, xi)) / x.shape[0]
    return GsModel(alpha, v), xi


def mse_from_gs(g: GsModel):
    """Optimal rescaling and its MSE for a GS-modeled estimate.

    omega = alpha / (alpha^2 + v) minimizes (1/n) E||omega' x_hat - x||^2
    over scalar omega'; the minimum equals v / (alpha^2 + v).
    """
    denom = g.alpha**2 + g.v
    if denom == 0.0:
        raise ValueError("degenerate model: alpha = 0 and v = 0")
    return g.alpha / denom, g.v / denom


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one Monte-Carlo experiment (or its SE prediction)."""

    n: int
    m_over_n: float
    kappa: float
    lam: float
    snr_db: float | None = 45.0
    iterations: int = 30
    trials: int = 100
    algorithm: str = "oamp-w"
    b_strategy: str = "integral"
    threshold_rule: str = "variance"
    seed: int = 0

    def __post_init__(self):
        if self.n < 8:
            raise ConfigError(f"n={self.n} must be >= 8")
        if not 0.0 < self.m_over_n <= 1.0:
            raise ConfigError(f"m_over_n={self.m_over_n} must be in (0, 1]")
        if self.kappa < 1.0:
            raise ConfigError(f"kappa={self.kappa} must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"lambda={self.lam} must be in (0, 1]")
        if self.iterations < 1:
            raise ConfigError(f"iterations={self.iterations} must be >= 1")
        if self.trials < 1:
            raise ConfigError(f"trials={self.trials} must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.b_strategy not in B_STRATEGIES:
            raise ConfigError(f"unknown b_strategy {self.b_strategy!r}; choose from {B_STRATEGIES}")
        _parse_threshold_rule(self.threshold_rule)

    @property
    def m(self) -> int:
        return int(round(self.n * self.m_over_n))

    @property
    def sigma2(self) -> float:
        """Noise variance; an absent snr_db means noiseless (sigma2 = 0)."""
        if self.snr_db is None:
            return 0.0
        return 10.0 ** (-self.snr_db / 10.0)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def _parse_threshold_rule(rule: str) -> float | None:
    """Return the sqrt-scale c for 'sqrt:<c>' rules, None for 'variance'."""
    if rule == "variance":
        return None
    if rule.startswith("sqrt:"):
        try:
            c = float(rule[len("sqrt:"):])
        except ValueError:
            raise ConfigError(f"bad threshold_rule {rule!r}: expected 'sqrt:<c>'") from None
        if c <= 0:
            raise ConfigError(f"bad threshold_rule {rule!r}: scale must be positive")
        return c
    raise ConfigError(f"unknown threshold_rule {rule!r}; use 'variance' or 'sqrt:<c>'")


def threshold_from_rule(rule: str, v_r: float) -> float:
    """Map the linear-step output variance to a soft threshold.

    'variance' takes the threshold literally equal to v_r; 'sqrt:<c>' uses
    c * sqrt(v_r), the dimensionally conventional choice.
    """
    c = _parse_threshold_rule(rule)
    if c is None:
        return v_r
    return c * math.sqrt(v_r)


_CONFIG_KEYS = {
    "n": int,
    "m_over_n": float,
    "kappa": float,
    "lambda": float,
    "snr_db": float,
    "iterations": int,
    "trials": int,
    "algorithm": str,
    "b_strategy": str,
    "threshold_rule": str,
    "seed": int,
}
_REQUIRED_KEYS = ("n", "m_over_n", "kappa", "lambda")


def parse_config(text: str) -> ExperimentConfig:
    """Parse a plain-text `key = value` config (one per line, # comments).

    Recognized keys: n, m_over_n, kappa, lambda, snr_db, iterations, trials,
    algorithm, b_strategy, threshold_rule, seed.  Omitting snr_db selects the
    noiseless model.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    missing = [k for k in _REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    if "snr_db" not in values:
        values["snr_db"] = None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-ready echo of a config (derived quantities included)."""
    return {
        "n": cfg.n,
        "m_over_n": cfg.m_over_n,
        "m": cfg.m,
        "kappa": cfg.kappa,
        "lambda": cfg.lam,
        "snr_db": cfg.snr_db,
        "sigma2": cfg.sigma2,
        "iterations": cfg.iterations,
        "trials": cfg.trials,
        "algorithm": cfg.algorithm,
        "b_strategy": cfg.b_strategy,
        "threshold_rule": cfg.threshold_rule,
        "seed": cfg.seed,
    }


def build_system(cfg: ExperimentConfig, rng: np.random.Generator,
                 spectrum_kind: str = "geometric", seed: int = -1) -> SvdSystem:
    """Sample one system instance: factors, signal, observation.

    Draw order is fixed (U, V, x, noise) so a given generator state yields an
    identical system.  spectrum_kind 'geometric' uses the condition-number
    profile; 'iidg-sample' draws a genuine IID-Gaussian m-by-n matrix with
    entry variance 1/m (so E||A||_F^2 = n) and stores its exact SVD factors —
    a validation path for algorithms that assume IIDG sensing.
    """
    m, n = cfg.m, cfg.n
    if spectrum_kind == "geometric":
        u = sample_haar(m, rng)
        v = sample_haar(n, rng)
        d = geometric_spectrum(SpectrumSpec(m, n, cfg.kappa))
    elif spectrum_kind == "iidg-sample":
        a = rng.standard_normal((m, n)) / math.sqrt(m)
        u_np, d, vh = np.linalg.svd(a, full_matrices=True)
        u, v = u_np.T.copy(), vh
    else:
        raise ConfigError(f"unknown spectrum_kind {spectrum_kind!r}")
    prior = BernoulliGaussianPrior(cfg.lam)
    x = sample_prior(prior, n, rng)
    noise = rng.standard_normal(m) * math.sqrt(cfg.sigma2)
    y = u.T @ (d * (v @ x)[:m]) + noise
    return SvdSystem(u=u, d=d, v=v, x_true=x, y=y, sigma2=cfg.sigma2, seed=seed)
