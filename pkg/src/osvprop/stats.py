"""Hypothesis tests on traceability delays and CVSS v3.1 base scoring.

The Student-t tail is computed from the regularized incomplete beta function
(continued fraction, modified Lentz). No third-party numerics are used here.
"""
from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

from .errors import InsufficientDataError
from .event_log import Trace
from .mining import DelayRecord

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITER = 100_000


# ---------------------------------------------------------------------------
# Numerical kernels

def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def _stirling_corr(x: float) -> float:
    """lgamma(x) minus its Stirling approximation, for x >= 10."""
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - 1.0 / (1260.0 * x2)) / x2) / x


def _lgamma_shift(a: float, b: float) -> float:
    """lgamma(a + b) - lgamma(a) without cancellation for large ``a``."""
    if a < 10.0:
        return math.lgamma(a + b) - math.lgamma(a)
    return (
        (a - 0.5) * math.log1p(b / a) + b * math.log(a + b) - b
        + _stirling_corr(a + b) - _stirling_corr(a)
    )


def lbeta(a: float, b: float) -> float:
    small, large = (a, b) if a <= b else (b, a)
    return math.lgamma(small) - _lgamma_shift(large, small)


def betainc(a: float, b: float, x: float, xc: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``xc`` may carry ``1 - x`` when the caller can compute it without
    cancellation.
    """
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a, b > 0")
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_x = math.log1p(-xc) if x > 0.5 else math.log(x)
    log_xc = math.log1p(-x) if xc > 0.5 else math.log(xc)
    log_front = a * log_x + b * log_xc - lbeta(a, b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, xc) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T >= t) of Student's t with ``df`` degrees."""
    if not df > 0:
        raise ValueError(f"df must be > 0, got {df}")
    if math.isnan(t):
        raise ValueError("t is NaN")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    if t == 0.0:
        return 0.5
    t2 = t * t
    denom = df + t2
    tail = 0.5 * betainc(df / 2.0, 0.5, df / denom, t2 / denom)
    return tail if t > 0 else 1.0 - tail


def two_sided_p(t: float, df: float) -> float:
    return min(1.0, 2.0 * student_t_sf(abs(t), df))


# ---------------------------------------------------------------------------
# Correlation

@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int

    @property
    def p_value(self) -> float | None:
        """Two-sided p for r = 0 (t with n - 2 df); None when n < 3."""
        if self.n < 3:
            return None
        if abs(self.r) >= 1.0:
            return 0.0
        t = self.r * math.sqrt((self.n - 2) / (1.0 - self.r * self.r))
        return two_sided_p(t, self.n - 2)


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise ValueError("pearson needs at least two pairs")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(v * v for v in dx)
    syy = math.fsum(v * v for v in dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson is undefined for a constant vector")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return CorrelationResult(max(-1.0, min(1.0, r)), n)


# ---------------------------------------------------------------------------
# Welch t-test

class WelchResult(NamedTuple):
    t_stat: float
    df: float
    p_value: float


def _mean_var(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, var


def welch_t_test(group_a: Sequence[float], group_b: Sequence[float]) -> WelchResult:
    """Two-sided unequal-variance t-test with Welch-Satterthwaite df."""
    na, nb = len(group_a), len(group_b)
    if na < 2 or nb < 2:
        raise InsufficientDataError(f"groups of size {na} and {nb}; need >= 2 each")
    ma, va = _mean_var(group_a)
    mb, vb = _mean_var(group_b)
    if va == 0.0 and vb == 0.0:
        raise InsufficientDataError("both groups have zero variance")
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return WelchResult(t, df, two_sided_p(t, df))


# ---------------------------------------------------------------------------
# Hypotheses

@dataclass(frozen=True)
class H1Result:
    correlation: CorrelationResult | None
    verdict: str  # "supported", "rejected" or "not testable"


def h1_correlate(delay_records: Sequence[DelayRecord]) -> CorrelationResult:
    """Pearson r between delay and trace length over multi-ecosystem CVEs."""
    return pearson(
        [float(r.delay_days) for r in delay_records],
        [float(r.m) for r in delay_records],
    )


def h1_verdict(delay_records: Sequence[DelayRecord]) -> H1Result:
    try:
        corr = h1_correlate(delay_records)
    except ValueError:
        return H1Result(None, "not testable")
    return H1Result(corr, "supported" if corr.r > 0 else "rejected")


class Direction(str, enum.Enum):
    LONGER = "longer"
    SHORTER = "shorter"
    NONE = "none"


class ResultStatus(str, enum.Enum):
    TESTED = "tested"
    INSUFFICIENT = "insufficient_data"


@dataclass(frozen=True)
class EcosystemTestResult:
    ecosystem: str
    n_present: int
    n_absent: int
    mean_present: float | None
    mean_absent: float | None
    t_stat: float | None
    df: float | None
    p_value: float | None
    significant: bool
    direction: Direction
    status: ResultStatus


def corrected_alpha(alpha: float, n_ecosystems: int) -> float:
    if n_ecosystems < 1:
        raise ValueError("need at least one ecosystem")
    return alpha / n_ecosystems


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def h2_presence_tests(
    traces: Mapping[str, Trace],
    delay_records: Sequence[DelayRecord],
    alpha: float = 0.05,
    *,
    min_cves: int = 1,
    ecosystems: Iterable[str] | None = None,
) -> list[EcosystemTestResult]:
    """Welch test per ecosystem: delays of traces containing it vs. not.

    The significance level is ``alpha`` divided by the number of ecosystems
    (all ecosystems of ``traces`` unless given). Ecosystems whose present
    group has fewer than ``min_cves`` CVEs are reported as insufficient.
    """
    all_ecos = sorted(
        set(ecosystems) if ecosystems is not None
        else {eco for t in traces.values() for eco in t.ecosystems}
    )
    if not all_ecos:
        return []
    level = corrected_alpha(alpha, len(all_ecos))
    members = [(set(traces[r.cve].ecosystems), float(r.delay_days)) for r in delay_records]

    results = []
    for eco in all_ecos:
        present = [d for ecos, d in members if eco in ecos]
        absent = [d for ecos, d in members if eco not in ecos]
        base = dict(
            ecosystem=eco,
            n_present=len(present),
            n_absent=len(absent),
            mean_present=_mean(present),
            mean_absent=_mean(absent),
        )
        try:
            if len(present) < min_cves:
                raise InsufficientDataError(f"{eco}: fewer than {min_cves} CVEs")
            t, df, p = welch_t_test(present, absent)
        except InsufficientDataError:
            results.append(EcosystemTestResult(
                **base, t_stat=None, df=None, p_value=None, significant=False,
                direction=Direction.NONE, status=ResultStatus.INSUFFICIENT,
            ))
            continue
        significant = p < level
        if not significant:
            direction = Direction.NONE
        elif base["mean_present"] > base["mean_absent"]:
            direction = Direction.LONGER
        else:
            direction = Direction.SHORTER
        results.append(EcosystemTestResult(
            **base, t_stat=t, df=df, p_value=p, significant=significant,
            direction=direction, status=ResultStatus.TESTED,
        ))
    return results


# ---------------------------------------------------------------------------
# CVSS v3.1

class CVSSError(ValueError):
    pass


_BASE_METRICS = ("AV", "AC", "PR", "UI", "S", "C", "I", "A")
_WEIGHTS = {
    "AV": {"N": 0.85, "A": 0.62, "L": 0.55, "P": 0.2},
    "AC": {"L": 0.77, "H": 0.44},
    "UI": {"N": 0.85, "R": 0.62},
    "S": {"U": None, "C": None},
    "C": {"H": 0.56, "L": 0.22, "N": 0.0},
    "I": {"H": 0.56, "L": 0.22, "N": 0.0},
    "A": {"H": 0.56, "L": 0.22, "N": 0.0},
}
_PR_WEIGHTS = {
    "U": {"N": 0.85, "L": 0.62, "H": 0.27},
    "C": {"N": 0.85, "L": 0.68, "H": 0.5},
}
# Temporal and environmental metrics are accepted and ignored.
_OTHER_METRICS = frozenset(
    "E RL RC CR IR AR MAV MAC MPR MUI MS MC MI MA".split()
)


def roundup(value: float) -> float:
    """CVSS v3.1 Roundup: smallest one-decimal number >= value."""
    int_input = round(value * 100_000)
    if int_input % 10_000 == 0:
        return int_input / 100_000.0
    return (math.floor(int_input / 10_000) + 1) / 10.0


def parse_cvss3_vector(vector: str) -> dict[str, str]:
    if not isinstance(vector, str):
        raise CVSSError(f"not a string: {vector!r}")
    prefix, _, body = vector.strip().partition("/")
    if prefix not in ("CVSS:3.1", "CVSS:3.0") or not body:
        raise CVSSError(f"not a CVSS v3 vector: {vector!r}")
    metrics: dict[str, str] = {}
    for part in body.split("/"):
        key, sep, value = part.partition(":")
        if not sep or key in metrics:
            raise CVSSError(f"bad or repeated metric {part!r} in {vector!r}")
        if key in _BASE_METRICS:
            if key == "PR":
                if value not in _PR_WEIGHTS["U"]:
                    raise CVSSError(f"bad PR value {value!r}")
            elif value not in _WEIGHTS[key]:
                raise CVSSError(f"bad {key} value {value!r}")
        elif key not in _OTHER_METRICS:
            raise CVSSError(f"unknown metric {key!r} in {vector!r}")
        metrics[key] = value
    missing = [k for k in _BASE_METRICS if k not in metrics]
    if missing:
        raise CVSSError(f"missing base metrics {missing} in {vector!r}")
    return metrics


def cvss31_base_score(vector: str) -> float:
    m = parse_cvss3_vector(vector)
    changed = m["S"] == "C"
    iss = 1.0 - (
        (1.0 - _WEIGHTS["C"][m["C"]])
        * (1.0 - _WEIGHTS["I"][m["I"]])
        * (1.0 - _WEIGHTS["A"][m["A"]])
    )
    if changed:
        impact = 7.52 * (iss - 0.029) - 3.25 * (iss - 0.02) ** 15
    else:
        impact = 6.42 * iss
    exploitability = (
        8.22
        * _WEIGHTS["AV"][m["AV"]]
        * _WEIGHTS["AC"][m["AC"]]
        * _PR_WEIGHTS[m["S"]][m["PR"]]
        * _WEIGHTS["UI"][m["UI"]]
    )
    if impact <= 0:
        return 0.0
    if changed:
        return roundup(min(1.08 * (impact + exploitability), 10.0))
    return roundup(min(impact + exploitability, 10.0))


@dataclass(frozen=True)
class SeverityRecord:
    cve: str
    base_score: float


@dataclass(frozen=True)
class SeverityTable:
    records: tuple[SeverityRecord, ...]
    malformed_vectors: int
    records_excluded: int


def severity_by_cve(records: Iterable) -> SeverityTable:
    """Worst CVSS v3 base score per CVE across all records citing it.

    ``records`` are objects with ``cve_refs`` and ``severity_vectors``. A
    record whose v3 vector fails to parse is excluded entirely. Non-v3
    vectors (v2, v4) are ignored.
    """
    best: dict[str, float] = {}
    malformed = excluded = 0
    for rec in records:
        scores = []
        bad = False
        for vec in rec.severity_vectors:
            if not vec.startswith("CVSS:3"):
                continue
            try:
                scores.append(cvss31_base_score(vec))
            except CVSSError:
                malformed += 1
                bad = True
        if bad:
            excluded += 1
            continue
        if not scores:
            continue
        score = max(scores)
        for cve in rec.cve_refs:
            if score > best.get(cve, -1.0):
                best[cve] = score
    return SeverityTable(
        tuple(SeverityRecord(c, s) for c, s in sorted(best.items())),
        malformed,
        excluded,
    )


@dataclass(frozen=True)
class SeverityCheck:
    correlation: CorrelationResult | None
    n_joined: int
    n_unmatched: int
    verdict: str  # "no effect", "affects delays" or "not testable"


def severity_delay_check(
    severity: Sequence[SeverityRecord],
    delay_records: Sequence[DelayRecord],
    alpha: float = 0.05,
) -> SeverityCheck:
    """Correlate base scores with delays over CVEs present in both inputs."""
    scores = {s.cve: s.base_score for s in severity}
    pairs = [(scores[r.cve], float(r.delay_days)) for r in delay_records if r.cve in scores]
    unmatched = len(severity) - len(pairs)
    try:
        corr = pearson([p[0] for p in pairs], [p[1] for p in pairs])
    except ValueError:
        return SeverityCheck(None, len(pairs), unmatched, "not testable")
    p = corr.p_value
    verdict = "affects delays" if p is not None and p < alpha else "no effect"
    return SeverityCheck(corr, len(pairs), unmatched, verdict)
