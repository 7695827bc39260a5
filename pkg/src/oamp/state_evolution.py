"""Deterministic prediction of the per-iteration GS parameters.

The recursion alternates a linear-step map (closed-form spectrum sums) and a
nonlinear-step map (scalar-channel quadrature of the orthogonalized
denoiser), tracking the dual pair (alpha, v) throughout.  Normalizing to a
single parameter is applied only in reporting: the trivial initialization
(alpha = 0) would make a normalized recursion singular.

`SeStepper` is shared with the simulation runners so that every runtime
parameter (filter variances, thresholds, orthogonalization coefficients)
comes from the same tracked state the prediction uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .estimators import (
    BStrategy,
    Denoiser,
    b_derivative_expectation,
    bg_mmse_posterior_mse,
    channel_moments,
    compute_b_ep,
    denoiser_for,
    identity_denoiser,
    le_output_variance,
    nle_gs_response,
    normalization_c,
)
from .model import BernoulliGaussianPrior, ExperimentConfig, GsModel, mse_from_gs
from .randmat import SpectrumSpec, geometric_spectrum


_V_FLOOR = 1e-30        # filter-variance floor for exactly-converged states
_V_PASSTHROUGH = 1e-18  # below this the estimate is numerically exact


@dataclass(frozen=True)
class SeState:
    """GS parameters after the linear (gamma) and nonlinear (phi) steps."""

    alpha_gamma: float
    v_gamma: float
    alpha_phi: float
    v_phi: float


@dataclass
class SeTrajectory:
    states: list
    converged: bool
    fixed_point: SeState | None

    @property
    def v_phi(self):
        return np.array([s.v_phi for s in self.states])

    @property
    def gs_mse(self):
        """Per-iteration MSE of the optimally rescaled nonlinear-step output."""
        return np.array([mse_from_gs(GsModel(s.alpha_phi, s.v_phi))[1] for s in self.states])

    @property
    def raw_mse(self):
        return np.array([GsModel(s.alpha_phi, s.v_phi).raw_error_power for s in self.states])

    @property
    def effective_snr(self):
        return np.array([GsModel(s.alpha_phi, s.v_phi).effective_snr for s in self.states])


def _input_error_power(alpha: float, v: float) -> float:
    """Raw error power (1-alpha)^2 + v of the modeled estimate.

    alpha = 0 marks the uninformative (trivial-initialization) state whose v
    already holds the full deviation power.
    """
    if alpha == 0.0:
        return v
    return (1.0 - alpha) ** 2 + v


@dataclass(frozen=True)
class LeParams:
    """Runtime inputs the simulation needs to reproduce the linear step."""

    kind: str
    v_w: float
    xi: float


def se_le_step(d: np.ndarray, n: int, sigma2: float, alpha_in: float,
               v_in: float, le_kind: str = "lmmse"):
    """Linear-step SE map: returns (alpha_out, v_out, LeParams).

    Trace normalization makes alpha_out = 1 for both LMMSE variants.  The
    standard step treats its input at face value (filter built from the raw
    error power); the optimized step rescales by xi = alpha/(alpha^2+v)
    first, whose error power v/(alpha^2+v) is never larger.
    """
    if d.size == 0:
        raise ValueError("invalid spectrum: empty singular-value list")
    m = d.shape[0]
    if le_kind == "lmmse":
        v_w = _input_error_power(alpha_in, v_in)
        xi = 1.0
    elif le_kind == "optimized-lmmse":
        denom = alpha_in**2 + v_in
        if denom == 0.0:
            raise ValueError("degenerate model: alpha = 0 and v = 0")
        xi = alpha_in / denom
        v_w = v_in / denom
    elif le_kind == "matched-filter":
        p = _input_error_power(alpha_in, v_in)
        return 1.0, sigma2 + (n / m) * p, LeParams("matched-filter", math.nan, 1.0)
    else:
        raise ValueError(f"unknown linear estimator kind {le_kind!r}")
    v_filter = max(v_w, _V_FLOOR)
    v_out = le_output_variance(d, n, sigma2, v_filter, v_w)
    return 1.0, v_out, LeParams(le_kind, v_filter, xi)


@dataclass(frozen=True)
class NleParams:
    """Runtime inputs the simulation needs to reproduce the nonlinear step."""

    denoiser: Denoiser
    b: float
    c: float


def se_nle_step(prior: BernoulliGaussianPrior, denoiser: Denoiser,
                alpha_in: float, v_in: float, b_strategy: BStrategy,
                c_rule: str = "ep-normalize", order: int = 128):
    """Nonlinear-step SE map: returns (alpha_out, v_out, NleParams).

    B follows the configured strategy evaluated in expectation (the
    monte-carlo strategy is replaced by its integral limit here; SE stays
    deterministic).  An identity prototype under ep-normalization passes the
    state through unchanged.
    """
    if v_in <= 0:
        raise ValueError(f"invalid variance: v_in={v_in} must be > 0")
    if denoiser.kind == "identity" and c_rule == "ep-normalize":
        return alpha_in, v_in, NleParams(denoiser, 1.0, math.inf)
    kind = b_strategy.kind
    if kind == "none":
        b = 0.0
    elif kind == "derivative":
        b = b_derivative_expectation(denoiser, prior, alpha_in, v_in, order=order)
    elif kind in ("integral", "monte-carlo"):
        mom = channel_moments(denoiser, prior, alpha_in, v_in, order=order,
                              want_derivative=False)
        b = (mom.mean_r - alpha_in * mom.mean_x) / v_in
    elif kind == "ep":
        mmse = bg_mmse_posterior_mse(prior.lam, v_in, order=order)
        b = compute_b_ep(mmse, v_in)
    else:
        raise ValueError(f"unknown B strategy {kind!r}")
    c = normalization_c(b, c_rule)
    alpha_out, v_out = nle_gs_response(denoiser, prior, b, c, alpha_in, v_in, order=order)
    return alpha_out, v_out, NleParams(denoiser, b, c)


def resolve_algorithm(algorithm: str, b_strategy: str):
    """Map a config algorithm selector to (le_kind, denoiser_kind, b_kind, c_rule).

    The config schema carries no denoiser key: the EP strategy implies the
    locally-MMSE BG denoiser it is derived for, anything else uses the
    low-cost soft threshold.  AMP applies its prototype raw (the Onsager term
    replaces GSO) and `se` predicts the standard LMMSE recursion.
    """
    den = "bg-mmse" if b_strategy == "ep" else "soft-threshold"
    if algorithm == "amp":
        return "matched-filter", den, "none", "none"
    if algorithm == "vamp":
        return "lmmse", "bg-mmse", "ep", "ep-normalize"
    if algorithm == "oamp-w-optimized":
        return "optimized-lmmse", den, b_strategy, "ep-normalize"
    if algorithm in ("oamp-svd", "oamp-w", "se"):
        return "lmmse", den, b_strategy, "ep-normalize"
    raise ConfigError(f"unknown algorithm {algorithm!r}")


class SeStepper:
    """One place that advances the GS-parameter recursion.

    Both `run_se` and the simulation runners drive this object, which is what
    keeps predicted and simulated trajectories on the same operating points.
    """

    def __init__(self, d, n, sigma2, prior, le_kind, denoiser_kind,
                 b_strategy, c_rule, threshold_rule="variance", order=128,
                 prototype: Denoiser | None = None):
        self.d = np.asarray(d, dtype=float)
        self.n = int(n)
        self.sigma2 = float(sigma2)
        self.prior = prior
        self.le_kind = le_kind
        self.denoiser_kind = denoiser_kind
        self.b_strategy = b_strategy if isinstance(b_strategy, BStrategy) else BStrategy(b_strategy)
        self.c_rule = c_rule
        self.threshold_rule = threshold_rule
        self.order = order
        self.prototype = prototype  # reused as-is for black-box kinds

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, order: int = 128) -> "SeStepper":
        le_kind, den_kind, b_kind, c_rule = resolve_algorithm(cfg.algorithm, cfg.b_strategy)
        d = geometric_spectrum(SpectrumSpec(cfg.m, cfg.n, cfg.kappa))
        return cls(d, cfg.n, cfg.sigma2, BernoulliGaussianPrior(cfg.lam),
                   le_kind, den_kind, b_kind, c_rule,
                   threshold_rule=cfg.threshold_rule, order=order)

    def initial_state(self) -> SeState:
        """Trivial initialization: a zero estimate of the unit-power source."""
        return SeState(alpha_gamma=0.0, v_gamma=1.0, alpha_phi=0.0, v_phi=1.0)

    def le_step(self, state: SeState):
        return se_le_step(self.d, self.n, self.sigma2, state.alpha_phi,
                          state.v_phi, self.le_kind)

    def make_denoiser(self, v_gamma: float) -> Denoiser:
        if self.denoiser_kind == "black-box":
            return self.prototype
        return denoiser_for(self.denoiser_kind, self.prior, v_gamma,
                            self.threshold_rule)

    def nle_step(self, alpha_gamma: float, v_gamma: float):
        if v_gamma < _V_PASSTHROUGH:
            # numerically exact input: any sensible denoiser is transparent
            return alpha_gamma, v_gamma, NleParams(identity_denoiser(), 0.0, 1.0)
        den = self.make_denoiser(v_gamma)
        return se_nle_step(self.prior, den, alpha_gamma, v_gamma,
                           self.b_strategy, self.c_rule, order=self.order)

    def advance(self, state: SeState) -> SeState:
        alpha_g, v_g, _ = self.le_step(state)
        alpha_p, v_p, _ = self.nle_step(alpha_g, v_g)
        return SeState(alpha_g, v_g, alpha_p, v_p)


def run_se(cfg: ExperimentConfig, max_iters: int = 200, tol: float = 1e-8,
           order: int = 128) -> SeTrajectory:
    """Iterate the SE recursion from the trivial initialization.

    Stops early once the nonlinear-step v is relatively stationary
    (|v_t - v_{t-1}| <= tol * max(v_t, v_{t-1})); exceeding max_iters sets
    the non-convergence flag rather than raising.
    """
    stepper = SeStepper.from_config(cfg, order=order)
    state = stepper.initial_state()
    states = []
    converged = False
    for _ in range(max_iters):
        prev_v = state.v_phi if states else None
        state = stepper.advance(state)
        states.append(state)
        if prev_v is not None and abs(state.v_phi - prev_v) <= tol * max(state.v_phi, prev_v):
            converged = True
            break
    return SeTrajectory(states=states, converged=converged,
                        fixed_point=states[-1] if converged else None)


def se_prediction(cfg: ExperimentConfig, iterations: int, order: int = 128) -> SeTrajectory:
    """Exactly `iterations` SE states, repeating the fixed point if the
    recursion converges earlier (repetition is exact at a fixed point)."""
    traj = run_se(cfg, max_iters=iterations, tol=1e-14, order=order)
    while len(traj.states) < iterations:
        traj.states.append(traj.states[-1])
    return traj
