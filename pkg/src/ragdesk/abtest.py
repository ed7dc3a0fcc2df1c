"""Online-experiment machinery: agent-day assignment, delta-method variance for
ratio metrics, z-tests at the experiment's alpha thresholds, and power tools."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy import stats

ALPHA_ALL_INTERACTIONS = 0.01
ALPHA_FEEDBACK = 0.05

CONTROL = "control"
TREATMENT = "treatment"


class AbtestError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentRecord:
    """One agent-day aggregate: exposure counts for the ratio metrics."""

    agent_id: str
    day: date
    variant: str
    queries: int
    no_answer_queries: int
    thumbs_up: int = 0
    feedback_total: int = 0

    def __post_init__(self):
        if self.no_answer_queries > self.queries:
            raise AbtestError("no_answer_queries cannot exceed queries")
        if self.thumbs_up > self.feedback_total:
            raise AbtestError("thumbs_up cannot exceed feedback_total")


@dataclass(frozen=True)
class DeltaMethodResult:
    ratio_estimate: float
    variance: float
    std_error: float
    n_units: int


@dataclass(frozen=True)
class TestResult:
    metric_name: str
    control_value: float
    treatment_value: float
    relative_effect: float
    z_statistic: float
    p_value: float
    alpha_used: float
    significant: bool


def assign_variant(agent_id: str, day: date, salt: str) -> str:
    """Stable hash of (salt, agent_id, day) -> control|treatment."""
    digest = hashlib.blake2b(
        f"{salt}:{agent_id}:{day.isoformat()}".encode(), digest_size=8
    ).digest()
    return TREATMENT if int.from_bytes(digest, "big") % 2 else CONTROL


def delta_method_variance(numerators, denominators) -> DeltaMethodResult:
    """First-order variance of a ratio of means over paired unit-level samples.

    var(X̄/Ȳ) ≈ (S_x² − 2R·S_xy + R²·S_y²) / (n·Ȳ²) with sample (co)variances.
    """
    x = np.asarray(numerators, dtype=np.float64)
    y = np.asarray(denominators, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AbtestError("numerators and denominators must be 1-d and paired")
    n = len(x)
    if n < 2:
        raise AbtestError("need at least 2 units")
    ybar = y.mean()
    if ybar == 0:
        raise AbtestError("mean denominator is zero")
    xbar = x.mean()
    r = xbar / ybar
    sx2 = x.var(ddof=1)
    sy2 = y.var(ddof=1)
    sxy = float(np.cov(x, y, ddof=1)[0, 1])
    var = (sx2 - 2.0 * r * sxy + r * r * sy2) / (n * ybar * ybar)
    var = max(var, 0.0)
    return DeltaMethodResult(
        ratio_estimate=float(r), variance=float(var), std_error=math.sqrt(var), n_units=n
    )


def ztest(
    control: DeltaMethodResult,
    treatment: DeltaMethodResult,
    alpha: float,
    metric_name: str = "metric",
) -> TestResult:
    """Two-sided z-test on the difference of ratio estimates of independent arms."""
    diff = treatment.ratio_estimate - control.ratio_estimate
    var = control.variance + treatment.variance
    if var == 0:
        z = 0.0 if diff == 0 else math.inf * (1 if diff > 0 else -1)
        p = 1.0 if diff == 0 else 0.0
    else:
        z = diff / math.sqrt(var)
        p = 2.0 * stats.norm.sf(abs(z))
    if control.ratio_estimate == 0:
        raise AbtestError("relative effect undefined for zero control ratio")
    effect = 100.0 * diff / control.ratio_estimate
    return TestResult(
        metric_name=metric_name,
        control_value=control.ratio_estimate,
        treatment_value=treatment.ratio_estimate,
        relative_effect=effect,
        z_statistic=float(z),
        p_value=float(p),
        alpha_used=alpha,
        significant=bool(p < alpha),
    )


def required_samples(alpha: float, power: float, baseline_rate: float, relative_effect: float) -> int:
    """Two-proportion sample size per arm for a relative effect on a rate."""
    p1 = baseline_rate
    p2 = p1 * (1.0 + relative_effect / 100.0)
    if not 0.0 < p1 < 1.0:
        raise AbtestError("baseline_rate must be in (0, 1)")
    if not 0.0 < p2 < 1.0:
        raise AbtestError("rate after effect falls outside (0, 1)")
    if relative_effect == 0:
        raise AbtestError("effect must be nonzero")
    z_a = stats.norm.ppf(1.0 - alpha / 2.0)
    z_b = stats.norm.ppf(power)
    pbar = (p1 + p2) / 2.0
    n = (
        z_a * math.sqrt(2.0 * pbar * (1.0 - pbar))
        + z_b * math.sqrt(p1 * (1 - p1) + p2 * (1 - p2))
    ) ** 2 / (p1 - p2) ** 2
    return math.ceil(n)


def analyze_records(records: list[ExperimentRecord]) -> list[TestResult]:
    """Table-6-style analysis: No Answer Rate at alpha=.01, Positive Feedback
    Rate at alpha=.05, both via delta-method variance over agent-day units."""
    arms = {CONTROL: [r for r in records if r.variant == CONTROL],
            TREATMENT: [r for r in records if r.variant == TREATMENT]}
    if not arms[CONTROL] or not arms[TREATMENT]:
        raise AbtestError("both arms need records")
    results = []
    na = {
        v: delta_method_variance(
            [r.no_answer_queries for r in rs], [r.queries for r in rs]
        )
        for v, rs in arms.items()
    }
    results.append(ztest(na[CONTROL], na[TREATMENT], ALPHA_ALL_INTERACTIONS, "No Answer Rate"))
    fb_arms = {
        v: [r for r in rs if r.feedback_total > 0] for v, rs in arms.items()
    }
    if all(len(rs) >= 2 for rs in fb_arms.values()):
        fb = {
            v: delta_method_variance(
                [r.thumbs_up for r in rs], [r.feedback_total for r in rs]
            )
            for v, rs in fb_arms.items()
        }
        results.append(ztest(fb[CONTROL], fb[TREATMENT], ALPHA_FEEDBACK, "Positive Feedback Rate"))
    return results


def format_results(results: list[TestResult]) -> str:
    lines = [f"{'Metric':<24} {'Effect':>9} {'p-value':>10}  significant"]
    for r in results:
        lines.append(
            f"{r.metric_name:<24} {r.relative_effect:>+8.1f}% {r.p_value:>10.4g}  "
            f"{'yes' if r.significant else 'no'} (alpha={r.alpha_used})"
        )
    return "\n".join(lines)


def load_records(path) -> list[ExperimentRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append(
                    ExperimentRecord(
                        agent_id=rec["agent_id"],
                        day=date.fromisoformat(rec["day"]),
                        variant=rec["variant"],
                        queries=int(rec["queries"]),
                        no_answer_queries=int(rec["no_answer_queries"]),
                        thumbs_up=int(rec.get("thumbs_up", 0)),
                        feedback_total=int(rec.get("feedback_total", 0)),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise AbtestError(f"malformed record line {lineno}: {exc}") from exc
    return records


def simulate_no_answer_experiment(
    n_agents: int,
    n_days: int,
    mean_queries: float,
    control_rate: float,
    relative_effect: float,
    n_replicates: int,
    seed: int,
    agent_effect_sd: float = 0.0,
) -> np.ndarray:
    """Simulate agent-day arms and return the two-sided p-value per replicate.

    Units are agent-days (n_agents * n_days per arm); query counts are Poisson,
    no-answer counts Binomial. agent_effect_sd draws one rate shift per agent,
    shared across its days: that correlation violates the IID assumption the
    delta method relies on and yields anti-conservative tests, so the harness
    reports measured false-positive rates rather than asserting nominal ones.
    """
    rng = np.random.default_rng(seed)
    treat_rate = control_rate * (1.0 + relative_effect / 100.0)
    n_units = n_agents * n_days
    pvals = np.empty(n_replicates)
    for i in range(n_replicates):
        pv = {}
        for variant, rate in ((CONTROL, control_rate), (TREATMENT, treat_rate)):
            q = rng.poisson(mean_queries, size=n_units).clip(min=1)
            unit_rate = np.full(n_units, rate)
            if agent_effect_sd > 0:
                per_agent = rng.normal(0.0, agent_effect_sd, size=n_agents)
                unit_rate = np.clip(unit_rate + np.repeat(per_agent, n_days), 1e-4, 1 - 1e-4)
            x = rng.binomial(q, unit_rate)
            pv[variant] = delta_method_variance(x, q)
        pvals[i] = ztest(pv[CONTROL], pv[TREATMENT], ALPHA_ALL_INTERACTIONS).p_value
    return pvals
