"""Exit-vs-forward decision on the supporters' confidence scores.

Two criteria are supported: a plain mean-confidence threshold and a one-sided
lower confidence bound

    LCB = mean - t(alpha, n-1) * sd / sqrt(n)

with ``sd`` the Bessel-corrected sample standard deviation. The critical
t-value is computed from scratch through the inverse regularized incomplete
beta function, so the package carries no stats dependency.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence


class CriterionKind(enum.Enum):
    MEAN_CONFIDENCE = "mean"
    TTEST_LCB = "ttest"


@dataclass(frozen=True)
class ExitCriterion:
    """Exit rule: criterion kind, confidence threshold, significance level.

    ``tau_conf`` is either one global threshold or a per-stage tuple.
    """

    kind: CriterionKind
    tau_conf: float | tuple[float, ...]
    alpha: float = 0.05

    def __post_init__(self):
        taus = self.tau_conf if isinstance(self.tau_conf, tuple) else (self.tau_conf,)
        if not taus:
            raise ValueError("tau_conf must hold at least one threshold")
        for tau in taus:
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"tau_conf {tau} outside [0, 1]")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha {self.alpha} outside (0, 0.5)")

    def tau_at(self, stage: int) -> float:
        if isinstance(self.tau_conf, tuple):
            if stage >= len(self.tau_conf):
                raise ValueError(
                    f"no threshold for stage {stage}: per-stage tau_conf has "
                    f"{len(self.tau_conf)} entries"
                )
            return self.tau_conf[stage]
        return self.tau_conf


@dataclass(frozen=True)
class GateDecision:
    exit: bool
    statistic: float
    sample_mean: float
    sample_sd: float
    n: int


# --- Student-t critical value via inverse regularized incomplete beta ------


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a: float, b: float, x: float) -> float:
    # Lentz continued fraction for the incomplete beta integral
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a} b={b} x={x}")


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(
        a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _betainc_inv(a: float, b: float, p: float) -> float:
    """Solve I_x(a, b) = p by bracketed Newton iteration."""
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    x = 0.5
    log_beta = _log_beta(a, b)
    for _ in range(200):
        f = _betainc(a, b, x) - p
        if f > 0.0:
            hi = x
        else:
            lo = x
        # dI/dx = x^(a-1) (1-x)^(b-1) / B(a, b)
        dens = math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - log_beta)
        step_ok = dens > 0.0 and math.isfinite(dens)
        x_new = x - f / dens if step_ok else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-16 * max(x, 1e-300):
            return x_new
        x = x_new
    return x


def t_critical(alpha: float, df: float) -> float:
    """Upper-tail critical value t with P(T_df > t) = alpha, alpha in (0, 0.5)."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha {alpha} outside (0, 0.5)")
    # P(T > t) = I_x(df/2, 1/2) / 2 with x = df / (df + t^2), t > 0
    x = _betainc_inv(df / 2.0, 0.5, 2.0 * alpha)
    return math.sqrt(df * (1.0 - x) / x)


# --- gate evaluation --------------------------------------------------------


def evaluate_gate(
    confidences: Sequence[float], criterion: ExitCriterion, stage: int = 0
) -> GateDecision:
    """Decide exit-vs-forward from the supporters' confidence scores.

    The statistic is compared to the stage threshold with strict inequality:
    equality does not exit. Under the t-test criterion a single supporter has
    no defined t-statistic (df = 0); the gate then fails closed with
    statistic -inf.
    """
    n = len(confidences)
    if n == 0:
        raise ValueError("gate requires at least one supporter confidence")
    tau = criterion.tau_at(stage)
    if all(c == confidences[0] for c in confidences):
        # keep the zero-variance case exact: LCB must equal the mean
        mean = float(confidences[0])
        sd = 0.0
    else:
        mean = math.fsum(confidences) / n
        var = math.fsum((c - mean) ** 2 for c in confidences) / (n - 1)
        sd = math.sqrt(max(var, 0.0))

    if criterion.kind is CriterionKind.MEAN_CONFIDENCE:
        statistic = mean
    elif n >= 2:
        statistic = mean - t_critical(criterion.alpha, n - 1) * sd / math.sqrt(n)
    else:
        statistic = -math.inf
    return GateDecision(
        exit=statistic > tau,
        statistic=statistic,
        sample_mean=mean,
        sample_sd=sd,
        n=n,
    )
