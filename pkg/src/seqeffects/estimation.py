"""Estimation over a dataset: target estimates, pooled fits, diagnostics.

The pooled fit solves the weighted least-squares system assembled by
`build_constraints`: rows are target point effects, columns are pattern
parameters, weights are inverse target variances. On a saturated pattern
the system is square and consistent, so the fit reproduces every target
exactly; smaller patterns trade fidelity for stability, and the residual
block of the report is the place to look when a pattern is too coarse.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .dataset import Dataset
from .errors import DiagnosticError, EstimabilityError, IdentifiabilityError
from .exprlang import compile_expr
from .keys import PointEffectKey, StratumKey
from .patterns import ConstraintSystem, PatternGroup, PatternSpec, build_constraints
from .strata import VarianceMode, point_effect_targets

log = logging.getLogger(__name__)

_RANK_RTOL = 1e-10


def _num(value: float) -> float | None:
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class PointEffectEstimate:
    key: PointEffectKey
    time: int
    value: float
    variance: float
    arm_count: int
    control_count: int

    def to_dict(self) -> dict:
        return {
            "key": self.key.label(),
            "time": self.time,
            "estimate": self.value,
            "variance": _num(self.variance),
            "arm_count": self.arm_count,
            "control_count": self.control_count,
        }


def estimate_point_effects(
    d: Dataset, variance_mode: VarianceMode, markov: bool = False
) -> tuple[list[PointEffectEstimate], list[tuple[StratumKey, str]]]:
    """Per-target arm contrasts with their sampling variances."""
    targets, skipped = point_effect_targets(d, markov=markov)
    estimates = [
        PointEffectEstimate(
            t.key,
            t.time,
            t.estimate,
            t.variance(variance_mode),
            t.arm_count,
            t.control_count,
        )
        for t in targets
    ]
    return estimates, skipped


@dataclass
class FittedNetEffect:
    key: PointEffectKey
    time: int
    value: float
    se: float
    observed_estimate: float | None
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "key": self.key.label(),
            "time": self.time,
            "value": self.value,
            "se": self.se,
            "observed_estimate": self.observed_estimate,
            "note": self.note,
        }


@dataclass
class NetEffectFit:
    """Solved pooled system plus everything a report needs."""

    system: ConstraintSystem
    variance_mode: VarianceMode
    params: np.ndarray
    covariance: np.ndarray
    rank: int
    fitted: np.ndarray
    residuals: np.ndarray
    standardized_residuals: np.ndarray

    @property
    def pattern(self) -> PatternSpec:
        return self.system.pattern

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.system.pattern.param_names

    def param(self, name: str) -> float:
        return self.params[self.param_names.index(name)]

    def net_effect_estimates(self) -> list[FittedNetEffect]:
        """Pattern-implied net effect at every observed evaluation point.

        Pooling pays off here: points skipped as contrasts (no control
        arm) still get a fitted value, since only the feature row is
        needed.
        """
        spec = self.system.pattern
        horizon = self.system.horizon
        out = []
        for row in self.system.rows:
            out.append(self._fitted_at(row.key, row.time, spec, horizon, row.estimate, None))
        for row in self.system.dropped:
            out.append(self._fitted_at(row.key, row.time, spec, horizon, row.estimate, row.note))
        for key, reason in self.system.skipped:
            out.append(self._fitted_at(key, key.time, spec, horizon, None, reason))
        out.sort(key=lambda f: (f.time, f.key.label()))
        return out

    def _fitted_at(self, key, time, spec, horizon, observed, note) -> FittedNetEffect:
        f = spec.feature_row(key, horizon)
        value = float(f @ self.params)
        se = float(math.sqrt(max(f @ self.covariance @ f, 0.0)))
        return FittedNetEffect(key, time, value, se, observed, note)

    def to_dict(self) -> dict:
        rows = []
        for i, row in enumerate(self.system.rows):
            rows.append(
                {
                    "key": row.key.label(),
                    "time": row.time,
                    "estimate": row.estimate,
                    "variance": _num(row.variance),
                    "weight": row.weight,
                    "coefficients": row.coefficients.tolist(),
                    "fitted": float(self.fitted[i]),
                    "residual": float(self.residuals[i]),
                    "standardized_residual": float(self.standardized_residuals[i]),
                }
            )
        return {
            "schema_version": 1,
            "pattern": self.system.pattern.to_text(),
            "param_names": list(self.param_names),
            "params": self.params.tolist(),
            "covariance": self.covariance.tolist(),
            "rank": self.rank,
            "markov": self.system.markov,
            "variance_mode": self.variance_mode.label(),
            "targets": rows,
            "dropped_targets": [
                {
                    "key": row.key.label(),
                    "time": row.time,
                    "estimate": row.estimate,
                    "variance": _num(row.variance),
                    "note": row.note,
                }
                for row in self.system.dropped
            ],
            "skipped_strata": [
                {"key": key.label(), "reason": reason}
                for key, reason in self.system.skipped
            ],
            "fitted_net_effects": [f.to_dict() for f in self.net_effect_estimates()],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _combination(v: np.ndarray, names: Sequence[str]) -> str:
    """Render a null-space vector as a readable signed sum of parameter names."""
    terms = [(c, n) for c, n in zip(v, names) if abs(c) > 1e-12]
    if terms and terms[0][0] < 0:
        terms = [(-c, n) for c, n in terms]
    parts = []
    for c, n in terms:
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        coef = "" if abs(mag - 1.0) < 1e-9 else f"{mag:.3g}*"
        if not parts and sign == "+":
            parts.append(f"{coef}{n}")
        else:
            parts.append(f"{sign} {coef}{n}" if parts else f"-{coef}{n}")
    return " ".join(parts) if parts else "0"


def fit_net_effects(
    spec: PatternSpec,
    d: Dataset,
    variance_mode: VarianceMode,
    markov: bool = False,
) -> NetEffectFit:
    """Weighted least squares over the pattern's constraint system.

    Raises IdentifiabilityError (with a null-space basis over the
    parameters) when the observed targets do not pin down every
    parameter.
    """
    if markov:
        log.warning(
            "pooled-history mode assumes effects depend on the last step only; "
            "nothing in the data certifies that"
        )
    system = build_constraints(spec, d, variance_mode, markov=markov)
    if not system.rows:
        raise EstimabilityError("no targets with a positive weight; nothing to fit")
    C = system.matrix
    b = np.array([row.estimate for row in system.rows])
    w = np.array([row.weight for row in system.rows])
    sqrt_w = np.sqrt(w)
    A = C * sqrt_w[:, None]
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    tol = _RANK_RTOL * S[0] if S.size else 0.0
    rank = int(np.sum(S > tol))
    k = spec.size
    if rank < k:
        null_space = Vt[rank:]
        names = spec.param_names
        raise IdentifiabilityError(
            f"only {rank} of {k} pattern parameters are identified by "
            f"{len(system.rows)} usable targets; unidentified directions span "
            + "; ".join(_combination(v, names) for v in null_space),
            null_space=null_space,
        )
    params = Vt.T @ ((U.T @ (b * sqrt_w)) / S)
    covariance = (Vt.T / S**2) @ Vt
    fitted = C @ params
    residuals = b - fitted
    return NetEffectFit(
        system,
        variance_mode,
        params,
        covariance,
        rank,
        fitted,
        residuals,
        residuals * sqrt_w,
    )


@dataclass
class TestResult:
    name: str
    statistic: float
    df: int
    p_value: float
    detail: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "detail": self.detail,
        }


def net_effect_null_test(d: Dataset, variance_mode: VarianceMode) -> TestResult:
    """Chi-square test that every point effect is zero.

    Targets are pairwise uncorrelated under resampling within strata (the
    later contrast sits inside one arm of the earlier one, canceling the
    shared-mean term), so the weighted sum of squares is chi-square with
    one degree of freedom per usable target. All point effects vanish
    exactly when all net effects do, which is the hypothesis of interest.
    """
    targets, _ = point_effect_targets(d)
    q = 0.0
    m = 0
    for target in targets:
        var = target.variance(variance_mode)
        if not math.isfinite(var) or var <= 0.0:
            continue
        q += target.estimate**2 / var
        m += 1
    if m == 0:
        raise EstimabilityError("no target has a usable variance")
    return TestResult(
        "net_effect_null",
        q,
        m,
        float(chi2.sf(q, m)),
        f"{m} targets, {variance_mode.label()} variances",
    )


def standard_mean_equality_test(
    d: Dataset, variance_mode: VarianceMode
) -> TestResult:
    """Classical equal-means test within covariate profiles.

    Groups records by their full covariate trajectory and tests whether
    treatment trajectories share a mean inside each profile. This is the
    textbook analysis that ignores when covariates were measured; on
    sequential data it answers a different question, and the comparison
    against the net-effect test makes that visible.
    """
    profiles: dict[tuple, dict[tuple, list[float]]] = {}
    for rec in d.records:
        p = profiles.setdefault(rec.covariates, {})
        p.setdefault(rec.treatments, []).append(rec.outcome)
    between = 0.0
    df = 0
    ssw = 0.0
    n_cells = 0
    n_total = 0
    for cells in profiles.values():
        if len(cells) < 2:
            n_cells += len(cells)
            n_total += sum(len(v) for v in cells.values())
            for values in cells.values():
                mean = sum(values) / len(values)
                ssw += sum((v - mean) ** 2 for v in values)
            continue
        counts = {c: len(v) for c, v in cells.items()}
        means = {c: sum(v) / counts[c] for c, v in cells.items()}
        total = sum(counts.values())
        pooled = sum(counts[c] * means[c] for c in cells) / total
        between += sum(counts[c] * (means[c] - pooled) ** 2 for c in cells)
        df += len(cells) - 1
        n_cells += len(cells)
        n_total += total
        for c, values in cells.items():
            ssw += sum((v - means[c]) ** 2 for v in values)
    if df == 0:
        raise EstimabilityError("no covariate profile holds two treatment groups")
    if variance_mode.kind == "known":
        sigma2 = variance_mode.sigma2
        detail = f"known variance {sigma2:g}"
    else:
        if n_total <= n_cells:
            raise EstimabilityError(
                "pooled variance needs more records than cells"
            )
        sigma2 = ssw / (n_total - n_cells)
        detail = f"pooled variance over {n_cells} cells"
    q = between / sigma2
    return TestResult(
        "standard_mean_equality", q, df, float(chi2.sf(q, df)), detail
    )


@dataclass
class FlaggedPair:
    i: int
    j: int
    empirical: float
    expected: float
    mc_se: float

    def to_dict(self, labels: list[str]) -> dict:
        return {
            "pair": [labels[self.i], labels[self.j]],
            "empirical": self.empirical,
            "expected": self.expected,
            "mc_se": self.mc_se,
        }


@dataclass
class ResamplingReport:
    target_labels: list[str]
    reps: int
    seed: int
    sigma2: float
    expected: np.ndarray
    empirical: np.ndarray | None
    flagged_variances: list[FlaggedPair]
    flagged_covariances: list[FlaggedPair]
    notes: list[str]

    @property
    def consistent(self) -> bool:
        return not self.flagged_variances and not self.flagged_covariances

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "targets": self.target_labels,
            "reps": self.reps,
            "seed": self.seed,
            "sigma2": self.sigma2,
            "expected_covariance": self.expected.tolist(),
            "empirical_covariance": (
                self.empirical.tolist() if self.empirical is not None else None
            ),
            "flagged_variances": [
                f.to_dict(self.target_labels) for f in self.flagged_variances
            ],
            "flagged_covariances": [
                f.to_dict(self.target_labels) for f in self.flagged_covariances
            ],
            "consistent": self.consistent,
            "notes": self.notes,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def pooled_outcome_variance(d: Dataset) -> float:
    """Within-cell outcome variance pooled over the deepest strata."""
    table = d.table
    leaves = table.level(2 * d.horizon - 1)
    n = d.n_records
    if n <= len(leaves):
        raise EstimabilityError(
            "pooled variance needs more records than occupied cells"
        )
    ssw = 0.0
    for _, node in leaves:
        seg = table.y_sorted[node.lo : node.hi]
        ssw += float(np.sum((seg - node.derived_mean) ** 2))
    return ssw / (n - len(leaves))


def expected_target_covariance(d: Dataset, sigma2: float = 1.0) -> tuple[list, np.ndarray]:
    """Model-implied covariance of the target estimates.

    Distinct targets are uncorrelated unless they contrast different
    active arms against the same control records, which contributes the
    control-mean variance to the pair.
    """
    targets, _ = point_effect_targets(d)
    m = len(targets)
    cov = np.zeros((m, m))
    for i, t in enumerate(targets):
        cov[i, i] = sigma2 * (1.0 / t.arm_count + 1.0 / t.control_count)
        for j in range(i + 1, m):
            other = targets[j]
            if (
                t.time == other.time
                and t.key.parent_stratum() == other.key.parent_stratum()
            ):
                cov[i, j] = cov[j, i] = sigma2 / t.control_count
    return targets, cov


def resampling_diagnostic(
    d: Dataset, reps: int = 500, seed: int = 0, sigma2: float = 1.0
) -> ResamplingReport:
    """Check the target covariance model by resimulating outcomes.

    Redraws every outcome around its own deepest-stratum mean, re-forms
    the target estimates, and compares their empirical covariance to the
    model-implied one: variances at 3 Monte Carlo standard errors,
    covariances at 4. Each replication uses its own seed stream, so the
    result does not depend on chunking.
    """
    targets, expected = expected_target_covariance(d, sigma2)
    labels = [t.key.label() for t in targets]
    notes: list[str] = []
    if reps == 0:
        notes.append("no replications requested; nothing was checked")
        return ResamplingReport(labels, 0, seed, sigma2, expected, None, [], [], notes)
    if reps < 2:
        raise DiagnosticError("an empirical covariance needs at least 2 replications")
    if reps < 100:
        notes.append(f"{reps} replications is noisy; flags may be spurious")
        log.warning("resampling diagnostic with %d replications is noisy", reps)
    table = d.table
    n = d.n_records
    mu = np.empty(n)
    for leaf_key, leaf in table.level(2 * d.horizon - 1):
        mu[leaf.lo : leaf.hi] = leaf.derived_mean
    sigma = math.sqrt(sigma2)
    spans = [
        (table.require(t.key), table.require(t.key.sibling(0))) for t in targets
    ]
    est = np.empty((reps, len(targets)))
    for r in range(reps):
        rng = np.random.default_rng([seed, r])
        y = mu + sigma * rng.standard_normal(n)
        for j, (arm, control) in enumerate(spans):
            est[r, j] = (
                y[arm.lo : arm.hi].mean() - y[control.lo : control.hi].mean()
            )
    empirical = np.cov(est, rowvar=False).reshape(len(targets), len(targets))
    flagged_var = []
    flagged_cov = []
    for i in range(len(targets)):
        mc_se = expected[i, i] * math.sqrt(2.0 / (reps - 1))
        if abs(empirical[i, i] - expected[i, i]) > 3.0 * mc_se:
            flagged_var.append(
                FlaggedPair(i, i, empirical[i, i], expected[i, i], mc_se)
            )
        for j in range(i + 1, len(targets)):
            mc_se = math.sqrt(
                (expected[i, i] * expected[j, j] + expected[i, j] ** 2) / (reps - 1)
            )
            if abs(empirical[i, j] - expected[i, j]) > 4.0 * mc_se:
                flagged_cov.append(
                    FlaggedPair(i, j, empirical[i, j], expected[i, j], mc_se)
                )
    return ResamplingReport(
        labels, reps, seed, sigma2, expected, empirical, flagged_var, flagged_cov, notes
    )


@dataclass
class MergeStep:
    first: str
    second: str
    z_value: float
    merged: bool


@dataclass
class DiscoveryReport:
    steps: list[MergeStep]
    components: list[list[str]]
    alpha: float
    critical: float
    pattern: PatternSpec

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "alpha": self.alpha,
            "critical_z": self.critical,
            "steps": [
                {
                    "pair": [s.first, s.second],
                    "z": s.z_value,
                    "merged": s.merged,
                }
                for s in self.steps
            ],
            "components": self.components,
            "pattern": self.pattern.to_text(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def discover_pattern(fit: NetEffectFit, alpha: float = 0.05) -> DiscoveryReport:
    """Merge statistically indistinguishable groups of a fitted pattern.

    Pairs of group parameters are compared with Wald z statistics and
    merged greedily from the most similar pair up, single linkage, while
    the statistic stays under the two-sided critical value. Terms are
    carried over unchanged. The suggestion is a starting point for a
    refit, not a claim that the merged pattern is true.
    """
    spec = fit.pattern
    g = len(spec.groups)
    if g < 2:
        raise DiagnosticError("pattern discovery needs at least 2 groups")
    critical = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    pairs = []
    for i in range(g):
        for j in range(i + 1, g):
            diff = fit.params[i] - fit.params[j]
            denom = (
                fit.covariance[i, i]
                + fit.covariance[j, j]
                - 2.0 * fit.covariance[i, j]
            )
            if denom <= 0.0:
                z = 0.0 if abs(diff) < 1e-12 else math.inf
            else:
                z = abs(diff) / math.sqrt(denom)
            pairs.append((z, i, j))
    pairs.sort(key=lambda p: (p[0], p[1], p[2]))
    parent = list(range(g))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    steps = []
    for z, i, j in pairs:
        names = (spec.groups[i].name, spec.groups[j].name)
        if z >= critical:
            steps.append(MergeStep(*names, z, False))
            continue
        ri, rj = find(i), find(j)
        merged = ri != rj
        if merged:
            parent[max(ri, rj)] = min(ri, rj)
        steps.append(MergeStep(*names, z, merged))
    components: dict[int, list[int]] = {}
    for i in range(g):
        components.setdefault(find(i), []).append(i)
    ordered = [components[r] for r in sorted(components)]
    groups = []
    for members in ordered:
        name = "_".join(spec.groups[i].name for i in members)
        if len(members) == 1:
            predicate = spec.groups[members[0]].predicate
        else:
            text = " or ".join(f"({spec.groups[i].predicate.text})" for i in members)
            predicate = compile_expr(text, {"t", "T"})
        groups.append(PatternGroup(name, predicate))
    merged_spec = PatternSpec(tuple(groups), spec.terms)
    return DiscoveryReport(
        steps,
        [[spec.groups[i].name for i in members] for members in ordered],
        alpha,
        critical,
        merged_spec,
    )
