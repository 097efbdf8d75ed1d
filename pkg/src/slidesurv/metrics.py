"""Survival evaluation statistics.

Concordance index (Harrell's comparable-pair rule), Kaplan-Meier
product-limit curves, the two-group logrank test, and median-risk
stratification. The chi-square tail probability is computed here from
the regularized incomplete gamma function (series for small arguments,
continued fraction otherwise) so the module stays dependency-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MetricError

_GAMMA_TOL = 1e-15
_GAMMA_MAX_ITERS = 500


def concordance_index(risks, times, censors) -> float:
    """Fraction of comparable pairs ordered consistently with outcomes.

    A pair (i, j) is comparable when i is uncensored and t_i < t_j.
    Concordant means risk_i > risk_j; risk ties score 0.5.
    """
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    censors = np.asarray(censors, dtype=np.int64)
    if not (len(risks) == len(times) == len(censors)):
        raise MetricError("risks/times/censors length mismatch")
    comparable = (times[:, None] < times[None, :]) & (censors[:, None] == 0)
    n_comparable = int(comparable.sum())
    if n_comparable == 0:
        raise MetricError("no comparable pairs; concordance undefined")
    concordant = comparable & (risks[:, None] > risks[None, :])
    tied = comparable & (risks[:, None] == risks[None, :])
    return (int(concordant.sum()) + 0.5 * int(tied.sum())) / n_comparable


@dataclass
class KmCurve:
    event_times: np.ndarray  # ascending distinct uncensored times
    survival: np.ndarray     # S(t) just after each event time
    at_risk: np.ndarray      # risk-set size just before each event time
    events: np.ndarray       # events at each time

    def to_text(self) -> str:
        lines = ["time\tsurvival\tat_risk\tevents"]
        for t, s, n, d in zip(self.event_times, self.survival, self.at_risk, self.events):
            lines.append(f"{t!r}\t{s!r}\t{int(n)}\t{int(d)}")
        return "\n".join(lines) + "\n"


def kaplan_meier(times, censors) -> KmCurve:
    """Product-limit estimator; censored patients leave the risk set after
    their time."""
    times = np.asarray(times, dtype=np.float64)
    censors = np.asarray(censors, dtype=np.int64)
    if times.size < 1:
        raise MetricError("kaplan_meier needs at least one patient")
    event_times = np.unique(times[censors == 0])
    surv, at_risk, events = [], [], []
    s = 1.0
    for t in event_times:
        n = int(np.sum(times >= t))
        d = int(np.sum((times == t) & (censors == 0)))
        s *= 1.0 - d / n
        surv.append(s)
        at_risk.append(n)
        events.append(d)
    return KmCurve(event_times, np.asarray(surv), np.asarray(at_risk, dtype=np.int64),
                   np.asarray(events, dtype=np.int64))


@dataclass
class LogrankResult:
    chi2: float
    p_value: float

    def to_text(self) -> str:
        return f"chi2\t{self.chi2!r}\np_value\t{self.p_value!r}\n"


def logrank_test(times_a, censors_a, times_b, censors_b) -> LogrankResult:
    """Two-group logrank test with hypergeometric variance."""
    ta = np.asarray(times_a, dtype=np.float64)
    ca = np.asarray(censors_a, dtype=np.int64)
    tb = np.asarray(times_b, dtype=np.float64)
    cb = np.asarray(censors_b, dtype=np.int64)
    all_times = np.concatenate([ta, tb])
    all_censors = np.concatenate([ca, cb])
    event_times = np.unique(all_times[all_censors == 0])
    if event_times.size == 0:
        raise MetricError("no uncensored events in either group")

    observed_minus_expected = 0.0
    variance = 0.0
    for t in event_times:
        n_a = int(np.sum(ta >= t))
        n_b = int(np.sum(tb >= t))
        n = n_a + n_b
        d = int(np.sum((all_times == t) & (all_censors == 0)))
        d_a = int(np.sum((ta == t) & (ca == 0)))
        if n == 0:
            continue
        expected_a = d * n_a / n
        observed_minus_expected += d_a - expected_a
        if n > 1:
            variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if variance <= 0.0:
        raise MetricError("zero logrank variance; test degenerate")
    chi2 = observed_minus_expected**2 / variance
    return LogrankResult(chi2, chi2_sf(chi2, df=1))


@dataclass
class Stratification:
    labels: np.ndarray  # 0 = low risk, 1 = high risk
    median: float
    degenerate: bool    # all risks equal

    @property
    def low(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)

    @property
    def high(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)


def stratify_by_median(risks) -> Stratification:
    """Split at the median; ties at the exact median go to the low group.

    For even n the median is the lower of the two central order statistics,
    so the split is deterministic.
    """
    risks = np.asarray(risks, dtype=np.float64)
    if risks.size < 2:
        raise MetricError("stratification needs at least 2 patients")
    median = float(np.sort(risks)[(risks.size - 1) // 2])
    labels = (risks > median).astype(np.int64)
    return Stratification(labels, median, degenerate=bool(np.all(risks == risks[0])))


# ---------------------------------------------------------------------------
# chi-square upper tail via the regularized incomplete gamma function


def _gamma_p_series(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x) by power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_MAX_ITERS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_TOL:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) by continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITERS + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_TOL:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if x < 0 or a <= 0:
        raise ValueError("gamma_q requires x >= 0 and a > 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def chi2_sf(x: float, df: int = 1) -> float:
    """Upper tail of the chi-square distribution."""
    if x <= 0.0:
        return 1.0
    return gamma_q(df / 2.0, x / 2.0)
