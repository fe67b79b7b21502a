"""Evaluators for the regularity constants and the sampling error bound.

Every evaluator is a pure function of its inputs.  Bounds whose exponentials
overflow evaluate to ``inf`` and carry a flag; an infinite bound is vacuous,
not wrong.  All unspecified universal constants share one ``universal_C``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import dist_zoo
from .dist_zoo import DensitySpec, RegularityConstants
from .sampler import LangevinConfig, ula_run
from .score_models import OracleScore

INF = math.inf


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return INF


def _check_sigma(constants: RegularityConstants, sigma_sq: float):
    if sigma_sq < 0:
        raise ValueError(f"sigma_sq must be nonnegative, got {sigma_sq}")
    if sigma_sq > constants.sigma_max_sq * (1 + 1e-12):
        raise ValueError(f"sigma_sq={sigma_sq} violates sigma_sq <= sigma_max_sq={constants.sigma_max_sq}")


@dataclass(frozen=True)
class SmoothedDissipativity:
    """Dissipativity pair of the smoothed density, plus the sigma-free fallback.

    Unpacks as ``(m_sigma, b_sigma)``.
    """

    m_sigma: float
    b_sigma: float
    m_uniform: float
    b_uniform: float

    def __iter__(self):
        return iter((self.m_sigma, self.b_sigma))


def smoothed_dissipativity(constants: RegularityConstants, sigma_sq: float) -> SmoothedDissipativity:
    _check_sigma(constants, sigma_sq)
    M, m, b, B = constants.lipschitz_M, constants.dissip_m, constants.dissip_b, constants.growth_B
    gap = m - sigma_sq * M
    m_s = gap / 2
    b_s = b + B * B / (2 * gap)
    if M > 0:
        m_u, b_u = m / 4, b + m * B * B / (4 * M * M)
    else:
        m_u, b_u = m / 2, b + B * B / (2 * m)
    return SmoothedDissipativity(m_s, b_s, m_u, b_u)


@dataclass(frozen=True)
class LogSobolevBound:
    c_P: float
    c_LS: float

    @property
    def overflow(self) -> bool:
        return math.isinf(self.c_LS)

    def __iter__(self):
        return iter((self.c_P, self.c_LS))


def log_sobolev_bound(constants: RegularityConstants, sigma_sq: float, d: int,
                      universal_C: float = 1.0) -> LogSobolevBound:
    """Upper bounds on the Poincare and log-Sobolev constants of p_sigma^2."""
    M, b, B = constants.lipschitz_M, constants.dissip_b, constants.growth_B
    if not M > 0:
        raise ValueError("log-Sobolev bound needs M > 0")
    m_s = smoothed_dissipativity(constants, sigma_sq).m_sigma
    db = d + b
    growth = _exp(8 * (M + B) * db / m_s)
    c_P = 2 / (m_s * db) * (1 + universal_C * db * db * growth)
    c_LS = 8 * M / (m_s * m_s) + 2 / M + c_P * (2 + 6 * M * db / m_s)
    return LogSobolevBound(c_P, c_LS)


def score_error_path_bound(epsilon: float, tau: float, lipschitz_M: float, d: int,
                           p_inf: float, universal_C: float = 1.0) -> float:
    """Path-space cost of an L2 score error epsilon over a horizon tau.

    The occupation-time bound ``eps tau + C |p|_inf^(1/2 - 1/d) e^(M sqrt(d) tau / 4)
    sqrt(tau) eps^(1/d)``; it is only established for d >= 3.
    """
    if d < 3:
        raise ValueError(f"the score-error path bound needs d >= 3, got d={d}")
    if epsilon == 0:
        return 0.0
    local = universal_C * p_inf ** (0.5 - 1.0 / d) * _exp(lipschitz_M * math.sqrt(d) * tau / 4)
    return epsilon * tau + local * math.sqrt(tau) * epsilon ** (1.0 / d)


def gaussian_log_mgf_sq_norm(alpha: float, mean, var: float) -> float:
    """log E exp(alpha |X|^2) for X ~ N(mean, var I); a point mass when var = 0."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if 2 * alpha * var >= 1:
        return INF
    shrink = 1 - 2 * alpha * var
    return float(-0.5 * mean.size * math.log(shrink) + alpha * float(mean @ mean) / shrink)


@dataclass(frozen=True)
class BoundInputs:
    """Everything the bound evaluators read.

    Give either ``tau`` or ``k`` (or both, consistent with tau = k * eta).
    ``k_alpha`` is the log exponential moment log E exp(alpha |W_0|^2).
    """

    constants: RegularityConstants
    d: int
    sigma_sq: float
    eta: float
    tau: float | None = None
    k: int | None = None
    epsilon: float = 0.0
    R: float = 1.0
    alpha: float | None = None
    k_alpha: float | None = None
    p_inf: float | None = None
    universal_C: float = 1.0
    w2_init: float = 0.0
    delta: float = 0.05
    n: float = 1000.0
    rademacher: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.tau is None and self.k is None:
            raise ValueError("give tau or k")
        if self.k is not None and self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.tau is not None:
            if self.tau < 0:
                raise ValueError("tau must be nonnegative")
            if self.k is not None and not math.isclose(self.tau, self.k * self.eta, rel_tol=1e-9, abs_tol=1e-15):
                raise ValueError(f"inconsistent horizon: tau={self.tau} but k*eta={self.k * self.eta}")
        for name in ("epsilon", "R", "w2_init", "rademacher"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.universal_C > 0:
            raise ValueError("universal_C must be positive")
        if self.p_inf is not None and not self.p_inf > 0:
            raise ValueError("p_inf must be positive")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def horizon(self) -> float:
        return self.tau if self.tau is not None else self.k * self.eta

    def replace(self, **changes) -> "BoundInputs":
        """Copy with fields changed; a changed eta keeps k and drops tau when k is set."""
        if "eta" in changes and self.k is not None and "tau" not in changes:
            changes["tau"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {"schema": 1, "constants": self.constants.to_dict()}
        for f in dataclasses.fields(self):
            if f.name != "constants":
                out[f.name] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "BoundInputs":
        kw = {k: v for k, v in doc.items() if k not in ("schema", "constants")}
        return cls(constants=RegularityConstants.from_dict(doc["constants"]), **kw)


@dataclass(frozen=True)
class BoundReport:
    smoothing_term: float
    A_term: float
    mixing_term: float
    C_term: float | None
    C_term_relaxed: float | None
    total: float
    total_relaxed: float | None
    m_sigma: float
    b_sigma: float
    m_uniform: float
    b_uniform: float
    c_P: float
    c_LS: float
    bolley_villani: float | None
    universal_C: float
    R: float
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        out = {"schema": 1}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "flags":
                out[f.name] = list(v)
            else:
                out[f.name] = _json_real(v)
        return out


def _json_real(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return float(v)


def thm1_bound(inputs: BoundInputs) -> BoundReport:
    """Four-term W2 error bound for Langevin driven by an epsilon-accurate smoothed score.

    smoothing + discretisation + mixing + score error.  The score-error term
    is refused for d < 3 (reported as None with a flag and left out of the
    total).  When its inner quantity exceeds 1 the fourth-root form is no
    longer the dominant one, so the relaxed square-root-plus-fourth-root form
    is reported next to it.
    """
    c = inputs.constants
    M, b = c.lipschitz_M, c.dissip_b
    d, C, tau, eps = inputs.d, inputs.universal_C, inputs.horizon, inputs.epsilon
    flags = []
    diss = smoothed_dissipativity(c, inputs.sigma_sq)
    ls = log_sobolev_bound(c, inputs.sigma_sq, d, C)
    if ls.overflow:
        flags.append("c_LS_overflow")

    smoothing = math.sqrt(inputs.sigma_sq * d)
    A = C * math.sqrt(d * inputs.eta * tau) * _exp(M * M * tau / 2) if tau > 0 else 0.0
    if math.isinf(A):
        flags.append("A_term_overflow")
    mixing = inputs.w2_init * _exp(-2 * tau / ls.c_LS)
    if ls.overflow and inputs.w2_init > 0:
        flags.append("mixing_term_no_decay")

    C_term = C_relaxed = None
    if d < 3:
        flags.append("C_term_not_covered_d_lt_3")
    else:
        if eps > 0 and inputs.p_inf is None:
            raise ValueError("p_inf is required for the score-error term when epsilon > 0")
        inner = score_error_path_bound(eps, tau, M, d, inputs.p_inf or 1.0, C)
        front = C * math.sqrt((b + d) * tau)
        C_term = front * inner ** 0.25 if inner > 0 else 0.0
        C_relaxed = front * (math.sqrt(inner) + inner ** 0.25) if inner > 0 else 0.0
        if inner > 1:
            flags.append("epsilon_not_small")
        if math.isinf(inner):
            flags.append("C_term_overflow")

    total = smoothing + A + mixing + (C_term or 0.0)
    total_relaxed = None if C_relaxed is None else smoothing + A + mixing + C_relaxed
    if math.isinf(total):
        flags.append("vacuous")
    bv = None
    if inputs.alpha is not None and inputs.k_alpha is not None and inputs.alpha <= c.dissip_m:
        bv = bolley_villani_constant(inputs, tau)
    return BoundReport(
        smoothing_term=smoothing, A_term=A, mixing_term=mixing, C_term=C_term,
        C_term_relaxed=C_relaxed, total=total, total_relaxed=total_relaxed,
        m_sigma=diss.m_sigma, b_sigma=diss.b_sigma, m_uniform=diss.m_uniform,
        b_uniform=diss.b_uniform, c_P=ls.c_P, c_LS=ls.c_LS, bolley_villani=bv,
        universal_C=C, R=inputs.R, flags=tuple(flags))


@dataclass(frozen=True)
class RateReport:
    rate: float
    failure_probability: float
    dae_rate: float
    beta_n: float

    def to_dict(self) -> dict:
        return {"schema": 1, **{k: _json_real(v) for k, v in dataclasses.asdict(self).items()}}


def estimation_rate(inputs: BoundInputs) -> RateReport:
    """High-probability excess-risk rate of the empirical score-matching fit.

    ``rademacher`` is the Rademacher complexity of the model class at sample
    size n; the DAE-side rate divides by sigma^4.
    """
    n, delta = inputs.n, inputs.delta
    if n < 3:
        raise ValueError("estimation rate needs n >= 3")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    c = inputs.constants
    C = inputs.universal_C
    m_s = smoothed_dissipativity(c, inputs.sigma_sq).m_sigma
    logn = math.log(n)
    beta = (math.log(1 / delta) + math.log(logn)) / n
    scale = (c.lipschitz_M * inputs.R + c.growth_B) ** 2
    rate = C * scale * (logn ** 3 * inputs.rademacher ** 2 + beta * inputs.d)
    fail = 4 * delta + C * n * math.exp(-inputs.R ** 2 / m_s)
    s2 = inputs.sigma_sq
    dae = rate / (s2 * s2) if s2 > 0 else INF
    return RateReport(rate, fail, dae, beta)


def bolley_villani_constant(inputs: BoundInputs, t: float) -> float:
    """Factor converting relative entropy into W2 for the diffusion law at time t."""
    alpha, k_alpha = inputs.alpha, inputs.k_alpha
    if alpha is None or k_alpha is None:
        raise ValueError("alpha and k_alpha are required")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    m = inputs.constants.dissip_m
    if alpha > m:
        raise ValueError(f"alpha={alpha} > m={m}: the exponential-moment estimate requires alpha <= m")
    if t < 0:
        raise ValueError("t must be nonnegative")
    b = inputs.constants.dissip_b
    return 2 * math.sqrt(3 / (2 * alpha) + k_alpha / alpha + 2 * (b + inputs.d) * t)


@dataclass(frozen=True)
class PathKLReport:
    estimate: float
    std_error: float
    tau: float
    epsilon_hat: float
    formula_bound: float | None
    prefactor: float

    def to_dict(self) -> dict:
        return {"schema": 1, **{k: _json_real(v) for k, v in dataclasses.asdict(self).items()}}


def path_kl_estimate(model, spec: DensitySpec, sigma_sq: float, config: LangevinConfig, *,
                     prefactor: float = 0.5, constants: RegularityConstants | None = None,
                     universal_C: float = 1.0, epsilon_n: int = 20000) -> PathKLReport:
    """Riemann-sum estimate of the path KL between oracle and model drifts.

    The chain is driven by the exact smoothed score; along it we accumulate
    ``prefactor * eta * sum_k mean_c |oracle(W_k) - model(W_k)|^2``.  The
    standard error comes from the spread of per-chain path sums.  When
    ``constants`` are given and d >= 3 the score-error path bound is reported
    at the measured L2(p_sigma^2) error ``epsilon_hat``.
    """
    oracle = OracleScore(spec, sigma_sq)
    per_chain = np.zeros(config.chains)

    def observe(k, x, drift):
        diff = drift - np.asarray(model(x), dtype=float).reshape(x.shape)
        per_chain[:] += np.sum(diff * diff, axis=1)

    ula_run(oracle, config, observer=observe)
    scale = prefactor * config.eta
    est = scale * float(per_chain.mean())
    se = scale * float(per_chain.std(ddof=1)) / math.sqrt(config.chains) if config.chains > 1 else 0.0

    y = dist_zoo.sample(oracle.smoothed, epsilon_n, config.seed, "path-kl-epsilon").points
    gap = oracle(y) - np.asarray(model(y), dtype=float).reshape(y.shape)
    eps_hat = math.sqrt(float(np.mean(np.sum(gap * gap, axis=1))))
    bound = None
    if constants is not None and spec.dim >= 3:
        p_inf = dist_zoo.density_sup(oracle.smoothed)
        bound = score_error_path_bound(eps_hat, config.tau, constants.lipschitz_M, spec.dim,
                                       p_inf, universal_C)
    return PathKLReport(est, se, config.tau, eps_hat, bound, prefactor)
