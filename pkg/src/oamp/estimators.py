"""Local estimators and their Gram-Schmidt orthogonalization.

A prototype estimator `p` acting on an input with GS model (alpha_in, v_in)
is made orthogonal (output GS error uncorrelated with input GS error) by
subtracting a multiple of its input,

    pi(r) = C * (p(r) - B * r),

where B = E{xi_in . p(r)} / E{||xi_in||^2}.  Four routes to B are provided:
a prior-weighted integral, the average derivative (Stein's lemma), plain
Monte Carlo, and the posterior/prior MSE ratio that EP uses for locally-MMSE
prototypes.  C = 1/(1-B) keeps the output near the normalized model.

Scalar-channel expectations (the quadrature engine shared with the
state-evolution module) treat the input as r = alpha*x + sqrt(v)*z with
x Bernoulli-Gaussian and z standard normal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import ndtr, roots_hermite, roots_legendre

from .errors import QuadratureError, UnsupportedStrategyError
from .model import BernoulliGaussianPrior, GsModel, sample_prior, threshold_from_rule
from .randmat import SvdSystem, apply_forward

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# scalar denoisers


def soft_threshold(r: np.ndarray, theta: float) -> np.ndarray:
    """Entrywise max(|r_i| - theta, 0) * sign(r_i)."""
    if theta < 0:
        raise ValueError(f"invalid threshold: theta={theta} must be >= 0")
    return np.sign(r) * np.maximum(np.abs(r) - theta, 0.0)


def bg_mmse_denoise(r: np.ndarray, lam: float, v: float) -> np.ndarray:
    """Posterior mean E{x | x + sqrt(v) z = r} under the BG(lam) source.

    Responsibility-weighted Wiener gain: with s = 1/lam,
        w(r) = lam g(r; s+v) / (lam g(r; s+v) + (1-lam) g(r; v)),
        out  = w(r) * s/(s+v) * r,
    where g(.; t) is the zero-mean Gaussian density with variance t.
    Responsibilities are computed in log space to survive large |r|/v.
    """
    if v <= 0:
        raise ValueError(f"invalid variance: v={v} must be > 0")
    r = np.asarray(r, dtype=float)
    s = 1.0 / lam
    return _bg_mmse_weight(r, lam, v) * (s / (s + v)) * r


def _bg_mmse_weight(r, lam, v):
    s = 1.0 / lam
    if lam == 1.0:
        return np.ones_like(np.asarray(r, dtype=float))
    log_active = math.log(lam) - 0.5 * r**2 / (s + v) - 0.5 * math.log(s + v)
    log_null = math.log1p(-lam) - 0.5 * r**2 / v - 0.5 * math.log(v)
    return np.exp(log_active - np.logaddexp(log_active, log_null))


def bg_mmse_derivative(r: np.ndarray, lam: float, v: float) -> np.ndarray:
    """Closed-form d/dr of the BG posterior mean."""
    if v <= 0:
        raise ValueError(f"invalid variance: v={v} must be > 0")
    r = np.asarray(r, dtype=float)
    s = 1.0 / lam
    kappa = s / (s + v)
    w = _bg_mmse_weight(r, lam, v)
    return kappa * w * (1.0 + (1.0 - w) * r**2 * s / (v * (s + v)))


@dataclass(frozen=True)
class Denoiser:
    """Separable prototype denoiser: one scalar map applied entrywise.

    kind selects the map; theta / (lam, v) are its runtime parameters.  A
    black-box kind wraps an arbitrary vectorized callable; its
    `differentiable` flag gates the finite-difference derivative fallback.
    """

    kind: str
    theta: float = 0.0
    lam: float = 0.0
    v: float = 0.0
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    differentiable: bool = True


def soft_threshold_denoiser(theta: float) -> Denoiser:
    if theta < 0:
        raise ValueError(f"invalid threshold: theta={theta} must be >= 0")
    return Denoiser(kind="soft-threshold", theta=theta, differentiable=True)


def bg_mmse_denoiser(lam: float, v: float) -> Denoiser:
    if v <= 0:
        raise ValueError(f"invalid variance: v={v} must be > 0")
    return Denoiser(kind="bg-mmse", lam=lam, v=v, differentiable=True)


def identity_denoiser() -> Denoiser:
    return Denoiser(kind="identity", differentiable=True)


def black_box_denoiser(fn, differentiable=False) -> Denoiser:
    return Denoiser(kind="black-box", fn=fn, differentiable=differentiable)


def denoiser_for(kind: str, prior: BernoulliGaussianPrior, v_r: float,
                 threshold_rule: str = "variance") -> Denoiser:
    """Instantiate the per-iteration denoiser from the linear-step variance."""
    if kind == "soft-threshold":
        return soft_threshold_denoiser(threshold_from_rule(threshold_rule, v_r))
    if kind == "bg-mmse":
        return bg_mmse_denoiser(prior.lam, v_r)
    if kind == "identity":
        return identity_denoiser()
    raise ValueError(f"unknown denoiser kind {kind!r}")


def apply_denoiser(den: Denoiser, r: np.ndarray) -> np.ndarray:
    if den.kind == "soft-threshold":
        return soft_threshold(r, den.theta)
    if den.kind == "bg-mmse":
        return bg_mmse_denoise(r, den.lam, den.v)
    if den.kind == "identity":
        return np.asarray(r, dtype=float) * 1.0
    if den.kind == "black-box":
        return np.asarray(den.fn(r), dtype=float)
    raise ValueError(f"unknown denoiser kind {den.kind!r}")


def denoiser_derivative(den: Denoiser, r: np.ndarray) -> np.ndarray:
    """Entrywise derivative; analytic where available, else central FD."""
    if den.kind == "soft-threshold":
        return (np.abs(r) > den.theta).astype(float)
    if den.kind == "bg-mmse":
        return bg_mmse_derivative(r, den.lam, den.v)
    if den.kind == "identity":
        return np.ones_like(np.asarray(r, dtype=float))
    if den.kind == "black-box":
        if not den.differentiable:
            raise UnsupportedStrategyError(
                "prototype is not differentiable; orthogonalization does not "
                "require it — use the integral or monte-carlo strategy")
        h = 1e-6 * (1.0 + np.abs(r))
        return (np.asarray(den.fn(r + h), float) - np.asarray(den.fn(r - h), float)) / (2.0 * h)
    raise ValueError(f"unknown denoiser kind {den.kind!r}")


# ---------------------------------------------------------------------------
# scalar-channel expectations: r = alpha * x + sqrt(v) * z, x ~ BG(lam)


@lru_cache(maxsize=32)
def _gauss_hermite(order: int):
    """Nodes/weights for E{f(Z)}, Z ~ N(0,1)."""
    nodes, weights = roots_hermite(order)
    return nodes * math.sqrt(2.0), weights / math.sqrt(math.pi)


@lru_cache(maxsize=8)
def _gauss_legendre(per_panel: int):
    return roots_legendre(per_panel)


def _dual_scale_nodes(sigma: float, fine: float, per_panel: int, span: float = 12.0):
    """Nodes/weights for integrals of f(r) N(r; 0, sigma^2) dr.

    Geometric Gauss-Legendre panels grow from fine/8 out to span*sigma
    (mirrored), so integrands whose features live on a much smaller scale
    than the Gaussian envelope (a shrinkage transition at sqrt(v) inside a
    wide signal component) are resolved without wasting nodes.
    """
    lo = max(min(fine, sigma), 1e-300) / 8.0
    hi = span * sigma
    edges = [0.0, lo]
    while edges[-1] < hi:
        edges.append(min(edges[-1] * 2.0, hi))
    gx, gw = _gauss_legendre(per_panel)
    rs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        rs.append(mid + half * gx)
        ws.append(half * gw)
    r = np.concatenate(rs)
    w = np.concatenate(ws)
    r = np.concatenate([-r[::-1], r])
    w = np.concatenate([w[::-1], w])
    return r, w * np.exp(-0.5 * (r / sigma) ** 2) / (sigma * _SQRT_2PI)


def _feature_scale(prototype: Denoiser, channel_scale: float) -> float:
    """Smallest length scale on which the prototype varies."""
    if prototype.kind == "bg-mmse":
        return min(channel_scale, math.sqrt(prototype.v))
    return channel_scale


@dataclass(frozen=True)
class ChannelMoments:
    """First/second moments of a prototype on the scalar Gaussian channel."""

    mean_x: float   # E{p(r) * x}
    second: float   # E{p(r)^2}
    mean_r: float   # E{p(r) * r}
    dmean: float    # E{p'(r)}


def _soft_upper_moments(mu, sigma, theta):
    """Moments of U = (X - theta) 1{X > theta}, X ~ N(mu, sigma^2).

    Returns (E{U}, E{U^2}, P(X > theta)); exact Gaussian partial moments, so
    the soft-threshold kink costs no quadrature error.
    """
    a = (theta - mu) / sigma
    q = ndtr(-a)
    pdf = np.exp(-0.5 * a * a) / _SQRT_2PI
    c = mu - theta
    e1 = c * q + sigma * pdf
    e2 = (c * c + sigma * sigma) * q + (2.0 * c + sigma * a) * sigma * pdf
    return e1, e2, q


def _soft_conditional_moments(mu, sigma, theta):
    """E{p}, E{p^2}, E{p X}, E{p'} for p = soft-threshold given X ~ N(mu, s^2)."""
    u1, u2, up = _soft_upper_moments(mu, sigma, theta)
    l1, l2, lp = _soft_upper_moments(-mu, sigma, theta)
    m1 = u1 - l1
    m2 = u2 + l2
    mx = (u2 + theta * u1) + (l2 + theta * l1)
    md = up + lp
    return m1, m2, mx, md


def channel_moments(prototype: Denoiser, prior: BernoulliGaussianPrior,
                    alpha: float, v: float, order: int = 128,
                    want_derivative: bool = True) -> ChannelMoments:
    """Expectations of the prototype over the scalar channel.

    Conditioning on r reduces everything to the two-component marginal
    r ~ (1-lam) N(0, v) + lam N(0, alpha^2 s + v): within the active
    component E{x | r} = (alpha s / rho^2) r exactly, so
    E{p x} = lam (alpha s / rho^2) E{p r | active}.  The soft-threshold
    moments are closed-form Gaussian partial moments (no quadrature error
    at the kinks); other prototypes use dual-scale panel quadrature per
    component with order//8 (min 12) points per panel.
    """
    if v <= 0:
        raise ValueError(f"invalid variance: v={v} must be > 0")
    lam, s = prior.lam, prior.active_variance
    sv = math.sqrt(v)
    rho2 = alpha * alpha * s + v
    rho = math.sqrt(rho2)
    x_gain = alpha * s / rho2

    if prototype.kind == "identity":
        return ChannelMoments(mean_x=alpha, second=alpha * alpha + v,
                              mean_r=alpha * alpha + v, dmean=1.0)

    if prototype.kind == "soft-threshold":
        theta = prototype.theta
        _, m2_0, mx_0, md_0 = _soft_conditional_moments(0.0, sv, theta)
        _, m2_a, mx_a, md_a = _soft_conditional_moments(0.0, rho, theta)
        return ChannelMoments(
            mean_x=lam * x_gain * mx_a,
            second=(1 - lam) * m2_0 + lam * m2_a,
            mean_r=(1 - lam) * mx_0 + lam * mx_a,
            dmean=(1 - lam) * md_0 + lam * md_a)

    # generic prototypes: one-dimensional quadrature per mixture component
    per_panel = max(order // 8, 12)
    fine = _feature_scale(prototype, sv)
    r0, w0 = _dual_scale_nodes(sv, fine, per_panel)
    ra, wa = _dual_scale_nodes(rho, fine, per_panel)
    p0 = apply_denoiser(prototype, r0)
    pa = apply_denoiser(prototype, ra)
    sec0, seca = float(np.dot(w0, p0 * p0)), float(np.dot(wa, pa * pa))
    mr0, mra = float(np.dot(w0, p0 * r0)), float(np.dot(wa, pa * ra))
    mean_x = lam * x_gain * mra
    second = (1 - lam) * sec0 + lam * seca
    mean_r = (1 - lam) * mr0 + lam * mra
    if want_derivative:
        d0 = float(np.dot(w0, denoiser_derivative(prototype, r0)))
        da = float(np.dot(wa, denoiser_derivative(prototype, ra)))
        dmean = (1 - lam) * d0 + lam * da
    else:
        dmean = math.nan
    return ChannelMoments(mean_x=mean_x, second=second, mean_r=mean_r, dmean=dmean)


def bg_mmse_posterior_mse(lam: float, v: float, order: int = 128) -> float:
    """mmse(v) = E{(x - E{x|x + sqrt(v) z})^2} for the BG(lam) source.

    Uses E{phat^2} = E{x^2} - mmse, exact for the posterior mean.
    """
    prior = BernoulliGaussianPrior(lam)
    mom = channel_moments(bg_mmse_denoiser(lam, v), prior, 1.0, v,
                          order=order, want_derivative=False)
    return max(1.0 - mom.second, 0.0)


# ---------------------------------------------------------------------------
# the four routes to the orthogonalization coefficient B


def compute_b_integral(prototype: Denoiser, prior: BernoulliGaussianPrior,
                       alpha_in: float, v_in: float, rtol: float = 1e-6,
                       start_order: int = 64, max_order: int = 1024) -> float:
    """B = E{z_f p(alpha x + z_f)} / v_f by prior-weighted quadrature.

    Uses E{z_f p} = E{r p} - alpha E{x p}.  The order is doubled until two
    consecutive estimates agree to rtol (relative to max(1, |B|)).
    """
    if v_in <= 0:
        raise ValueError(f"invalid variance: v_in={v_in} must be > 0")
    prev = None
    order = start_order
    residual = math.inf
    while order <= max_order:
        mom = channel_moments(prototype, prior, alpha_in, v_in,
                              order=order, want_derivative=False)
        b = (mom.mean_r - alpha_in * mom.mean_x) / v_in
        if prev is not None:
            residual = abs(b - prev)
            if residual <= rtol * max(1.0, abs(b)):
                return b
        prev, order = b, order * 2
    raise QuadratureError(residual=residual)


def compute_b_derivative(prototype: Denoiser, r: np.ndarray) -> float:
    """B = (1/n) sum_i d[p(r)]_i / d r_i on the realized input vector."""
    r = np.asarray(r, dtype=float)
    if r.size < 1:
        raise ValueError("empty input vector")
    return float(np.mean(denoiser_derivative(prototype, r)))


def b_derivative_expectation(prototype: Denoiser, prior: BernoulliGaussianPrior,
                             alpha_in: float, v_in: float, order: int = 128) -> float:
    """E{p'} over the scalar channel (the ensemble form of the derivative B)."""
    return channel_moments(prototype, prior, alpha_in, v_in, order=order).dmean


def compute_b_montecarlo(prototype: Denoiser, prior: BernoulliGaussianPrior,
                         alpha_in: float, v_in: float, samples: int,
                         rng: np.random.Generator):
    """Sample-average B with its standard error.

    Single vectorized pass in draw order (x then z), so a fixed generator
    state gives a deterministic result.
    """
    if samples < 1000:
        raise ValueError(f"monte-carlo needs >= 1000 samples, got {samples}")
    if v_in <= 0:
        raise ValueError(f"invalid variance: v_in={v_in} must be > 0")
    x = sample_prior(prior, samples, rng)
    zf = rng.standard_normal(samples) * math.sqrt(v_in)
    vals = zf * apply_denoiser(prototype, alpha_in * x + zf) / v_in
    b = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(samples))
    return b, stderr


def compute_b_ep(v_phi_hat: float, v_in: float) -> float:
    """EP coefficient B = v_phat / v_in for a locally-MMSE prototype."""
    if v_in <= 0:
        raise ValueError(f"invalid variance: v_in={v_in} must be > 0")
    if v_phi_hat < 0:
        raise ValueError(f"invalid posterior MSE: {v_phi_hat}")
    if v_phi_hat > v_in:
        raise ValueError(
            f"non-contracting denoiser: posterior MSE {v_phi_hat} exceeds input "
            f"error {v_in}; an MMSE denoiser cannot increase error")
    return v_phi_hat / v_in


# ---------------------------------------------------------------------------
# orthogonalized estimators


@dataclass(frozen=True)
class BStrategy:
    """How the GSO coefficient is obtained at run time."""

    kind: str            # integral | derivative | monte-carlo | ep | none
    samples: int = 10000

    def __post_init__(self):
        if self.kind not in ("integral", "derivative", "monte-carlo", "ep", "none"):
            raise ValueError(f"unknown B strategy {self.kind!r}")
        if self.kind == "monte-carlo" and self.samples < 1000:
            raise ValueError("monte-carlo strategy needs >= 1000 samples")


@dataclass(frozen=True)
class LinearEstimator:
    """Selector for the observation-side step."""

    kind: str = "lmmse"  # lmmse | optimized-lmmse | matched-filter

    def __post_init__(self):
        if self.kind not in ("lmmse", "optimized-lmmse", "matched-filter"):
            raise ValueError(f"unknown linear estimator {self.kind!r}")


@dataclass(frozen=True)
class OrthogonalizedEstimator:
    """A prototype denoiser plus its orthogonalization recipe."""

    prototype: Denoiser
    b_strategy: BStrategy
    c_rule: str = "ep-normalize"     # ep-normalize | none
    prior: BernoulliGaussianPrior | None = None

    def __post_init__(self):
        if self.c_rule not in ("ep-normalize", "none"):
            raise ValueError(f"unknown normalization rule {self.c_rule!r}")


def resolve_b(est: OrthogonalizedEstimator, input_vec, gs_in: GsModel,
              rng: np.random.Generator | None = None, order: int = 128) -> float:
    """Evaluate the estimator's B strategy at the given operating point."""
    kind = est.b_strategy.kind
    if kind == "none":
        return 0.0
    if kind == "derivative":
        return compute_b_derivative(est.prototype, input_vec)
    if est.prior is None:
        raise ValueError(f"strategy {kind!r} needs a prior on the estimator")
    if kind == "integral":
        return compute_b_integral(est.prototype, est.prior, gs_in.alpha, gs_in.v)
    if kind == "monte-carlo":
        if rng is None:
            raise ValueError("monte-carlo strategy needs a generator")
        b, _ = compute_b_montecarlo(est.prototype, est.prior, gs_in.alpha,
                                    gs_in.v, est.b_strategy.samples, rng)
        return b
    if kind == "ep":
        mmse = bg_mmse_posterior_mse(est.prior.lam, gs_in.v, order=order)
        return compute_b_ep(mmse, gs_in.v)
    raise ValueError(f"unknown B strategy {kind!r}")


def normalization_c(b: float, c_rule: str) -> float:
    if c_rule == "none":
        return 1.0
    if abs(1.0 - b) < 1e-12:
        raise ValueError(f"singular normalization: B = {b} makes C = 1/(1-B) blow up")
    return 1.0 / (1.0 - b)


def nle_gs_response(prototype: Denoiser, prior: BernoulliGaussianPrior,
                    b: float, c: float, alpha_in: float, v_in: float,
                    order: int = 128):
    """GS pair (alpha_out, v_out) of pi(r) = C (p(r) - B r) on the channel.

    alpha_out = C (E{p x} - B alpha), and v_out = E{pi^2} - alpha_out^2 with
    E{pi^2} = C^2 (E{p^2} - 2 B E{p r} + B^2 (alpha^2 + v)).
    """
    mom = channel_moments(prototype, prior, alpha_in, v_in, order=order,
                          want_derivative=False)
    alpha_out = c * (mom.mean_x - b * alpha_in)
    second = c * c * (mom.second - 2.0 * b * mom.mean_r
                      + b * b * (alpha_in * alpha_in + v_in))
    v_out = max(second - alpha_out * alpha_out, 0.0)
    return alpha_out, v_out


def orthogonalize(est: OrthogonalizedEstimator, input_vec: np.ndarray,
                  gs_in: GsModel, rng: np.random.Generator | None = None,
                  order: int = 128):
    """Apply the orthogonalized estimator to one realized input vector.

    Returns (output, gs_out) with gs_out the ensemble GS pair of the output
    at the input operating point (the runtime never peeks at the true
    signal; diagnostics can decompose against it separately).
    """
    if gs_in.v <= 0:
        raise ValueError(f"invalid input model: v={gs_in.v} must be > 0")
    if est.prototype.kind == "identity" and est.c_rule == "ep-normalize":
        # C (r - B r) = r exactly under C = 1/(1-B); bypass the B=1 singularity
        return np.asarray(input_vec, dtype=float) * 1.0, gs_in
    b = resolve_b(est, input_vec, gs_in, rng=rng, order=order)
    c = normalization_c(b, est.c_rule)
    out = c * (apply_denoiser(est.prototype, input_vec) - b * input_vec)
    if est.prior is not None:
        alpha_out, v_out = nle_gs_response(est.prototype, est.prior, b, c,
                                           gs_in.alpha, gs_in.v, order=order)
        gs_out = GsModel(alpha_out, v_out)
    else:
        gs_out = gs_in
    return out, gs_out


# ---------------------------------------------------------------------------
# linear steps in the SVD basis


def lmmse_gains(d: np.ndarray, sigma2: float, v_w: float) -> np.ndarray:
    """Eigenvalues of W A on the nonzero spectrum: v d^2 / (v d^2 + sigma2)."""
    if v_w <= 0:
        raise ValueError(f"invalid variance: v_w={v_w} must be > 0")
    return v_w * d * d / (v_w * d * d + sigma2)


def le_output_variance(d: np.ndarray, n: int, sigma2: float, v_w: float,
                       p_in: float) -> float:
    """Output error power of the trace-normalized LMMSE step.

    v_out = tr{B B^T} p_in / n + tr{W~ W~^T} sigma2 / n with B = I - W~ A and
    W~ the normalized filter; both traces are spectrum sums.
    """
    if d.size == 0:
        raise ValueError("invalid spectrum: empty singular-value list")
    m = d.shape[0]
    g = lmmse_gains(d, sigma2, v_w)
    lam = n / float(np.sum(g))
    t_b = float(np.sum((1.0 - lam * g) ** 2)) + (n - m)
    t_w = lam * lam * float(np.sum((g / d) ** 2))
    return (t_b * p_in + t_w * sigma2) / n


def _le_core(sys: SvdSystem, s: np.ndarray, v_w: float) -> np.ndarray:
    """r = s + (n / tr{W A}) W (y - A s) evaluated diagonally in the SVD basis."""
    d = sys.d
    g = lmmse_gains(d, sys.sigma2, v_w)
    lam = sys.n / float(np.sum(g))
    resid_u = sys.u @ (sys.y - apply_forward(sys, s))
    t = np.zeros(sys.n)
    t[: sys.m] = lam * (v_w * d / (v_w * d * d + sys.sigma2)) * resid_u
    return s + sys.v.T @ t


def lmmse_le(sys: SvdSystem, s: np.ndarray, v_s: float) -> np.ndarray:
    """Standard trace-normalized LMMSE step with W built from v_s."""
    if v_s <= 0:
        raise ValueError(f"invalid variance: v_s={v_s} must be > 0")
    return _le_core(sys, s, v_s)


def optimized_le(sys: SvdSystem, s: np.ndarray, gs_s: GsModel):
    """Scale-tuned LMMSE step exploiting the full GS pair of the input.

    The input is rescaled by xi = alpha/(alpha^2+v), which minimizes the raw
    error of xi*s; the filter is then built from that minimal error power
    v_eff = v/(alpha^2+v).  Returns (r, predicted v_r).  Setting xi = 1
    recovers the standard step.
    """
    denom = gs_s.alpha**2 + gs_s.v
    if denom == 0.0:
        raise ValueError("degenerate model: alpha = 0 and v = 0")
    xi = gs_s.alpha / denom
    v_eff = gs_s.v / denom
    r = _le_core(sys, xi * s, v_eff)
    v_pred = le_output_variance(sys.d, sys.n, sys.sigma2, v_eff, v_eff)
    return r, v_pred
