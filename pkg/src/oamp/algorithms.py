"""Iteration drivers: the orthogonalized two-estimator recursion in its two
equivalent forms, plus classic AMP with the Onsager correction.

A run alternates a linear step (observation side) and a nonlinear step
(prior side), tracking the GS-parameter recursion in lockstep via
`SeStepper`; runtime filter variances, thresholds, and orthogonalization
coefficients are read off that tracker, never off the true signal.
Divergence aborts with a structured error rather than clamping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import kurtosis as _excess_kurtosis

from .errors import DivergenceError
from .estimators import (
    BStrategy,
    LinearEstimator,
    OrthogonalizedEstimator,
    apply_denoiser,
    compute_b_derivative,
    compute_b_montecarlo,
    denoiser_for,
    lmmse_gains,
    normalization_c,
    _le_core,
)
from .model import BernoulliGaussianPrior, ExperimentConfig, gs_decompose, mse_from_gs
from .randmat import SvdSystem, apply_adjoint, apply_forward
from .state_evolution import SeState, SeStepper, resolve_algorithm, _V_FLOOR


@dataclass
class Trajectory:
    """Per-iteration tracked parameters, measured errors, and diagnostics."""

    alpha_gamma: np.ndarray
    v_gamma: np.ndarray
    alpha_phi: np.ndarray
    v_phi: np.ndarray
    gs_alpha: np.ndarray
    gs_v: np.ndarray
    gs_mse: np.ndarray
    raw_mse: np.ndarray
    ortho_corr: np.ndarray
    signal_corr: np.ndarray
    kurtosis: np.ndarray
    cross_corr: np.ndarray | None = None
    messages: list | None = None

    @property
    def iterations(self) -> int:
        return self.gs_mse.shape[0]


@dataclass(frozen=True)
class AlgorithmSpec:
    """Which recursion to run and with what local estimators."""

    kind: str                        # oamp-svd | oamp-w | amp | vamp
    le: LinearEstimator
    nle: OrthogonalizedEstimator
    iterations: int
    threshold_rule: str = "variance"
    oracle_variances: bool = False
    track_cross: bool = False
    record_messages: bool = False
    gh_order: int = 128

    def __post_init__(self):
        if self.kind not in ("oamp-svd", "oamp-w", "amp", "vamp"):
            raise ValueError(f"unknown algorithm kind {self.kind!r}")
        if self.kind == "amp" and (self.nle.b_strategy.kind != "none"
                                   or self.nle.c_rule != "none"):
            raise ValueError("amp applies its prototype raw: the Onsager term "
                             "replaces orthogonalization (use b_strategy/c_rule 'none')")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")


def spec_from_config(cfg: ExperimentConfig, **overrides) -> AlgorithmSpec:
    """Translate a config's algorithm selector into an AlgorithmSpec."""
    le_kind, den_kind, b_kind, c_rule = resolve_algorithm(cfg.algorithm, cfg.b_strategy)
    prior = BernoulliGaussianPrior(cfg.lam)
    prototype = denoiser_for(den_kind, prior, 1.0, cfg.threshold_rule)
    nle = OrthogonalizedEstimator(prototype=prototype, b_strategy=BStrategy(b_kind),
                                  c_rule=c_rule, prior=prior)
    kind = {"oamp-w-optimized": "oamp-w", "se": "oamp-w"}.get(cfg.algorithm, cfg.algorithm)
    params = dict(kind=kind, le=LinearEstimator(le_kind), nle=nle,
                  iterations=cfg.iterations, threshold_rule=cfg.threshold_rule)
    params.update(overrides)
    return AlgorithmSpec(**params)


def _stepper_for(sys: SvdSystem, spec: AlgorithmSpec) -> SeStepper:
    return SeStepper(sys.d, sys.n, sys.sigma2, spec.nle.prior,
                     spec.le.kind, spec.nle.prototype.kind,
                     spec.nle.b_strategy, spec.nle.c_rule,
                     threshold_rule=spec.threshold_rule, order=spec.gh_order,
                     prototype=spec.nle.prototype)


def compute_onsager(b_prev: float, x_in_prev: np.ndarray, s_prev: np.ndarray) -> np.ndarray:
    """Memory correction B_{t-1} (x_in_{t-1} - s_{t-1})."""
    if x_in_prev.shape != s_prev.shape:
        raise ValueError(f"length mismatch: {x_in_prev.shape} vs {s_prev.shape}")
    return b_prev * (x_in_prev - s_prev)


def _check_finite(vec, iteration):
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(iteration)


def _le_apply_w(sys, s, lep):
    """Operator-form linear step: messages stay in the signal domain."""
    s_eff = s if lep.xi == 1.0 else lep.xi * s
    return _le_core(sys, s_eff, max(lep.v_w, _V_FLOOR))


def _le_apply_svd(sys, s, lep, y_u):
    """Transform-domain linear step: diagonal update between V multiplies."""
    d, m = sys.d, sys.m
    v_w = max(lep.v_w, _V_FLOOR)
    g = lmmse_gains(d, sys.sigma2, v_w)
    lam = sys.n / float(np.sum(g))
    delta = v_w * d / (v_w * d * d + sys.sigma2)
    s_eff = s if lep.xi == 1.0 else lep.xi * s
    big = sys.v @ s_eff
    out = big.copy()
    out[:m] = lam * delta * y_u + (1.0 - lam * g) * big[:m]
    return sys.v.T @ out


def _nle_apply(stepper, spec, r, alpha_in, v_in, rng):
    """Run the orthogonalized nonlinear step on a realized vector.

    Returns (s_new, alpha_phi, v_phi).  The derivative and monte-carlo
    strategies evaluate B on the realization; integral/ep use the tracked
    operating point.
    """
    alpha_p, v_p, par = stepper.nle_step(alpha_in, v_in)
    den = par.denoiser
    if den.kind == "identity" and stepper.c_rule == "ep-normalize":
        return np.asarray(r, dtype=float) * 1.0, alpha_p, v_p
    kind = stepper.b_strategy.kind
    if kind == "derivative":
        b = compute_b_derivative(den, r)
        c = normalization_c(b, stepper.c_rule)
    elif kind == "monte-carlo":
        if rng is None:
            raise ValueError("monte-carlo B strategy needs a generator")
        b, _ = compute_b_montecarlo(den, stepper.prior, alpha_in, v_in,
                                    stepper.b_strategy.samples, rng)
        c = normalization_c(b, stepper.c_rule)
    else:
        b, c = par.b, par.c
    s_new = c * (apply_denoiser(den, r) - b * r)
    return s_new, alpha_p, v_p


class _Recorder:
    def __init__(self, iterations, n, track_cross, record_messages):
        self.T = iterations
        self.n = n
        self.cols = {name: np.zeros(iterations) for name in (
            "alpha_gamma", "v_gamma", "alpha_phi", "v_phi", "gs_alpha", "gs_v",
            "gs_mse", "raw_mse", "ortho_corr", "signal_corr", "kurtosis")}
        self.cross = np.zeros((iterations, iterations)) if track_cross else None
        self.f_in_hist = [] if track_cross else None
        self.messages = [] if record_messages else None

    def record(self, t, x, r, s_new, ag, vg, ap, vp):
        n = self.n
        f_in = r - x
        gs_meas, _ = gs_decompose(s_new, x)
        _, mse = mse_from_gs(gs_meas)
        f_out = s_new - ap * x
        c = self.cols
        c["alpha_gamma"][t], c["v_gamma"][t] = ag, vg
        c["alpha_phi"][t], c["v_phi"][t] = ap, vp
        c["gs_alpha"][t], c["gs_v"][t] = gs_meas.alpha, gs_meas.v
        c["gs_mse"][t] = mse
        c["raw_mse"][t] = float(np.mean((s_new - x) ** 2))
        c["ortho_corr"][t] = abs(float(np.dot(f_in, f_out)) / n)
        c["signal_corr"][t] = float(np.dot(x, f_out)) / n
        c["kurtosis"][t] = float(_excess_kurtosis(f_in, fisher=True))
        if self.cross is not None:
            self.f_in_hist.append(f_in)
            for t_in, fi in enumerate(self.f_in_hist):
                self.cross[t_in, t] = float(np.dot(fi, f_out)) / n
        if self.messages is not None:
            self.messages.append((r.copy(), s_new.copy()))

    def build(self):
        return Trajectory(**self.cols, cross_corr=self.cross, messages=self.messages)


def _oracle_le_params(lep, s, x, t):
    """Replace tracked filter inputs with x_true-measured ones (diagnostics)."""
    from dataclasses import replace
    if t == 0:
        return lep
    if lep.kind == "optimized-lmmse":
        gs_meas, _ = gs_decompose(s, x)
        denom = gs_meas.alpha**2 + gs_meas.v
        if denom == 0.0:
            return lep
        xi = gs_meas.alpha / denom
        v_w = float(np.mean((xi * s - x) ** 2))
        return replace(lep, v_w=v_w, xi=xi)
    v_w = float(np.mean((s - x) ** 2))
    return replace(lep, v_w=v_w)


def _run_orthogonal(sys: SvdSystem, spec: AlgorithmSpec, rng, domain: str) -> Trajectory:
    stepper = _stepper_for(sys, spec)
    x = sys.x_true
    rec = _Recorder(spec.iterations, sys.n, spec.track_cross, spec.record_messages)
    y_u = sys.u @ sys.y if domain == "svd" else None
    s = np.zeros(sys.n)
    state = stepper.initial_state()
    for t in range(spec.iterations):
        ag, vg, lep = stepper.le_step(state)
        if spec.oracle_variances:
            lep = _oracle_le_params(lep, s, x, t)
        if domain == "svd":
            r = _le_apply_svd(sys, s, lep, y_u)
        else:
            r = _le_apply_w(sys, s, lep)
        _check_finite(r, t + 1)
        s_new, ap, vp = _nle_apply(stepper, spec, r, ag, vg, rng)
        _check_finite(s_new, t + 1)
        rec.record(t, x, r, s_new, ag, vg, ap, vp)
        s = s_new
        state = SeState(ag, vg, ap, vp)
    return rec.build()


def run_oamp_w(sys: SvdSystem, spec: AlgorithmSpec, rng=None) -> Trajectory:
    """Operator-form recursion (no explicit transform-domain state)."""
    if spec.kind not in ("oamp-w", "vamp"):
        raise ValueError(f"run_oamp_w cannot run kind {spec.kind!r}")
    return _run_orthogonal(sys, spec, rng, domain="w")


def run_oamp_svd(sys: SvdSystem, spec: AlgorithmSpec, rng=None) -> Trajectory:
    """Transform-domain recursion: V-multiply, diagonal linear step, back."""
    if spec.kind != "oamp-svd":
        raise ValueError(f"run_oamp_svd cannot run kind {spec.kind!r}")
    return _run_orthogonal(sys, spec, rng, domain="svd")


def run_amp(sys: SvdSystem, spec: AlgorithmSpec, rng=None) -> Trajectory:
    """Matched-filter iteration with the Onsager memory term.

    The prototype denoiser is applied raw.  The memory coefficient is
    (n/m) times the realized average derivative of the previous iteration's
    denoiser: expanding the original residual recursion
    z_t = y - A s_t + (n/m) <phat'> z_{t-1} into the form used here
    (the correction enters through A^T z) keeps the n/m factor, and the
    iteration only matches its own state evolution with it.
    """
    if spec.kind != "amp":
        raise ValueError(f"run_amp cannot run kind {spec.kind!r}")
    stepper = _stepper_for(sys, spec)
    x = sys.x_true
    onsager_gain = sys.n / sys.m
    rec = _Recorder(spec.iterations, sys.n, spec.track_cross, spec.record_messages)
    s = np.zeros(sys.n)
    s_prev = np.zeros(sys.n)
    x_in_prev = np.zeros(sys.n)
    b_prev = 0.0
    state = stepper.initial_state()
    for t in range(spec.iterations):
        ag, vg, _ = stepper.le_step(state)
        x_in = s + apply_adjoint(sys, sys.y - apply_forward(sys, s)) \
            + compute_onsager(b_prev, x_in_prev, s_prev)
        _check_finite(x_in, t + 1)
        alpha_p, v_p, par = stepper.nle_step(ag, vg)
        b_now = onsager_gain * compute_b_derivative(par.denoiser, x_in)
        s_new = apply_denoiser(par.denoiser, x_in)
        _check_finite(s_new, t + 1)
        rec.record(t, x, x_in, s_new, ag, vg, alpha_p, v_p)
        x_in_prev, s_prev, b_prev = x_in, s, b_now
        s = s_new
        state = SeState(ag, vg, alpha_p, v_p)
    return rec.build()


def run_algorithm(sys: SvdSystem, spec: AlgorithmSpec, rng=None) -> Trajectory:
    if spec.kind == "oamp-svd":
        return run_oamp_svd(sys, spec, rng)
    if spec.kind in ("oamp-w", "vamp"):
        return run_oamp_w(sys, spec, rng)
    if spec.kind == "amp":
        return run_amp(sys, spec, rng)
    raise ValueError(f"unknown algorithm kind {spec.kind!r}")


class _SerialChain:
    """One uncoupled message chain, advanced a half-step at a time.

    Used by the parallel-schedule check: interleaving two chains must leave
    each chain's float stream untouched, so the chain reuses the exact same
    helpers as the production runner.
    """

    def __init__(self, sys, spec, first):
        self.sys = sys
        self.spec = spec
        self.stepper = _stepper_for(sys, spec)
        self.y_u = sys.u @ sys.y
        self.phase = first               # next half-step to execute
        self.s = np.zeros(sys.n)
        self.r = np.zeros(sys.n)
        self.alpha_in, self.v_in = 0.0, 1.0
        self.state = self.stepper.initial_state()
        self.messages = []

    def half_step(self):
        if self.phase == "le":
            ag, vg, lep = self.stepper.le_step(self.state)
            self.r = _le_apply_svd(self.sys, self.s, lep, self.y_u)
            self.alpha_in, self.v_in = ag, vg
            self.messages.append(self.r.copy())
            self.phase = "nle"
        else:
            s_new, ap, vp = _nle_apply(self.stepper, self.spec, self.r,
                                       self.alpha_in, self.v_in, rng=None)
            self.s = s_new
            self.state = SeState(self.alpha_in, self.v_in, ap, vp)
            self.messages.append(s_new.copy())
            self.phase = "le"


def run_gip_parallel(sys: SvdSystem, spec: AlgorithmSpec):
    """Advance both uncoupled serial chains on the parallel schedule.

    Returns (messages of the linear-step-first chain, messages of the
    nonlinear-step-first chain); each list holds the chain's post-half-step
    vectors in order.  Test instrument, not a production path.
    """
    a = _SerialChain(sys, spec, first="le")
    b = _SerialChain(sys, spec, first="nle")
    for _ in range(2 * spec.iterations):
        a.half_step()
        b.half_step()
    return a.messages, b.messages


def serial_chain_messages(sys: SvdSystem, spec: AlgorithmSpec):
    """Messages of the serial run alone (reference for the decoupling check)."""
    chain = _SerialChain(sys, spec, first="le")
    for _ in range(2 * spec.iterations):
        chain.half_step()
    return chain.messages
