"""Pattern files: pooling net effects into a small parameter vector.

A pattern file is line-oriented. Each line (after '#' comments and blank
lines) declares one parameter:

    group <name>: when <predicate>
    term <name>: <expression>

Groups partition evaluation points first-match-wins: the feature vector
of a point carries a 1 for the first group whose predicate holds, and
each term contributes its numeric value. A file made only of groups must
match every evaluation point it is asked about; once a term is present
the pattern is total and unmatched groups simply contribute zeros.

Evaluation points are the net-effect keys. Each target's constraint row
pairs the feature vector at the target itself with the mass-weighted
feature load of the active arms downstream of each side of the contrast,
so a parameter vector consistent with the pattern reproduces every point
effect from net effects alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import CoverageError, ParseError, PatternError
from .exprlang import (
    CompiledExpr,
    CovariateView,
    SparseCovariateView,
    SparseTreatmentView,
    TreatmentView,
    compile_expr,
)
from .keys import MarkovKey, PointEffectKey, StratumKey
from .net_effects import downstream_weighted_sum
from .strata import PointEffectTarget, VarianceMode, point_effect_targets

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RESERVED = frozenset({"t", "T", "z", "x", "u", "group", "term", "when", "not", "and", "or"})


@dataclass(frozen=True)
class PatternGroup:
    name: str
    predicate: CompiledExpr


@dataclass(frozen=True)
class PatternTerm:
    name: str
    expression: CompiledExpr


@dataclass(frozen=True)
class PatternSpec:
    """A parsed pattern: groups first, then terms."""

    groups: tuple[PatternGroup, ...]
    terms: tuple[PatternTerm, ...]
    source: str | None = None

    def __post_init__(self):
        names = [p.name for p in self.groups] + [p.name for p in self.terms]
        if not names:
            raise PatternError("pattern defines no groups or terms")
        if len(set(names)) != len(names):
            raise PatternError("pattern parameter names are not unique")

    @property
    def size(self) -> int:
        return len(self.groups) + len(self.terms)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.groups) + tuple(p.name for p in self.terms)

    def feature_row(self, key: PointEffectKey, horizon: int) -> np.ndarray:
        env = _feature_env(key, horizon)
        row = np.zeros(self.size)
        matched = not self.groups
        for i, group in enumerate(self.groups):
            if group.predicate.eval_predicate(env):
                row[i] = 1.0
                matched = True
                break
        if not matched and not self.terms:
            raise CoverageError(f"no pattern group matches {key.label()}")
        for j, term in enumerate(self.terms):
            row[len(self.groups) + j] = term.expression.eval_number(env)
        return row

    def to_text(self) -> str:
        if self.source is not None:
            return self.source
        lines = [f"group {g.name}: when {g.predicate.text}" for g in self.groups]
        lines += [f"term {t.name}: {t.expression.text}" for t in self.terms]
        return "\n".join(lines) + "\n"


def _feature_env(key: PointEffectKey, horizon: int) -> dict:
    if isinstance(key, MarkovKey):
        t = key.time
        known_z = {t - 1: key.prev_treatment, t: key.treatment}
        known_x = {t - 1: key.prev_covariate}

        def missing_z(s: int) -> str:
            if s > t:
                return f"z[{s}] is not determined at a time-{t} evaluation point"
            return (
                f"z[{s}] is pooled away at this evaluation point; only "
                f"z[{t - 1}], z[{t}] and x[{t - 1}] are retained"
            )

        def missing_x(s: int) -> str:
            if s >= t:
                return f"x[{s}] is not determined at a time-{t} evaluation point"
            return (
                f"x[{s}] is pooled away at this evaluation point; only "
                f"z[{t - 1}], z[{t}] and x[{t - 1}] are retained"
            )

        return {
            "t": t,
            "T": horizon,
            "z": SparseTreatmentView(known_z, PatternError, missing_z),
            "x": SparseCovariateView(known_x, PatternError, missing_x),
        }
    t = key.time
    beyond = f"is not determined at a time-{t} evaluation point"
    return {
        "t": t,
        "T": horizon,
        "z": TreatmentView(key.treatments, PatternError, beyond),
        "x": CovariateView(key.covariates, PatternError, beyond),
    }


def parse_pattern(source: str) -> PatternSpec:
    """Parse pattern text; errors carry 1-based line numbers."""
    groups: list[PatternGroup] = []
    terms: list[PatternTerm] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        if kind not in ("group", "term"):
            raise ParseError(
                f"line {lineno}: expected 'group <name>: ...' or 'term <name>: ...'"
            )
        name, sep, body = rest.partition(":")
        name = name.strip()
        body = body.strip()
        if not sep or not body:
            raise ParseError(f"line {lineno}: missing ':' and a body")
        if not _NAME_RE.match(name):
            raise ParseError(f"line {lineno}: {name!r} is not a valid name")
        if name in _RESERVED:
            raise ParseError(f"line {lineno}: {name!r} is reserved")
        if name in seen:
            raise ParseError(f"line {lineno}: duplicate name {name!r}")
        seen.add(name)
        try:
            if kind == "group":
                if not body.startswith("when "):
                    raise ParseError(
                        f"line {lineno}: a group needs 'when <predicate>'"
                    )
                expr = compile_expr(body[len("when "):], {"t", "T"})
                groups.append(PatternGroup(name, expr))
            else:
                terms.append(PatternTerm(name, compile_expr(body, {"t", "T"})))
        except PatternError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if not groups and not terms:
        raise ParseError("pattern file defines no groups or terms")
    return PatternSpec(tuple(groups), tuple(terms), source)


@dataclass
class ConstraintRow:
    """One target's contribution to the pooled system."""

    key: PointEffectKey
    time: int
    coefficients: np.ndarray
    estimate: float
    variance: float
    weight: float
    arm_count: int
    control_count: int
    note: str | None = None


@dataclass
class ConstraintSystem:
    pattern: PatternSpec
    horizon: int
    rows: list[ConstraintRow]
    dropped: list[ConstraintRow]
    skipped: list[tuple[StratumKey, str]]
    markov: bool

    @property
    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.pattern.size))
        return np.vstack([r.coefficients for r in self.rows])


def build_constraints(
    spec: PatternSpec,
    d: Dataset,
    variance_mode: VarianceMode,
    markov: bool = False,
) -> ConstraintSystem:
    """Assemble one weighted constraint row per estimable target.

    Targets whose variance cannot be formed keep their row with weight
    zero and a note, so reports can list what the fit left out.
    """
    targets, skipped = point_effect_targets(d, markov=markov)
    horizon = d.horizon
    cache: dict[StratumKey, np.ndarray] = {}

    def feature(key: StratumKey) -> np.ndarray:
        row = cache.get(key)
        if row is None:
            row = cache[key] = spec.feature_row(key, horizon)
        return row

    if markov:
        side_sums = _markov_side_sums(d, feature, spec.size)
    rows: list[ConstraintRow] = []
    dropped: list[ConstraintRow] = []
    for target in targets:
        if markov:
            coeff = _markov_coefficients(target, spec, horizon, side_sums)
        else:
            coeff = _full_coefficients(target, d, feature, spec.size)
        variance = target.variance(variance_mode)
        weight = 0.0
        note = None
        if not np.isfinite(variance):
            note = "variance not estimable (each arm needs at least 2 records)"
        elif variance <= 0.0:
            note = "zero variance estimate"
        else:
            weight = 1.0 / variance
        row = ConstraintRow(
            target.key,
            target.time,
            coeff,
            target.estimate,
            variance,
            weight,
            target.arm_count,
            target.control_count,
            note,
        )
        (rows if weight > 0.0 else dropped).append(row)
    return ConstraintSystem(spec, horizon, rows, dropped, skipped, markov)


def _full_coefficients(target: PointEffectTarget, d, feature, k: int) -> np.ndarray:
    table = d.table
    key = target.key
    arm = table.require(key)
    control_key = key.sibling(0)
    control = table.require(control_key)
    zero = np.zeros(k)
    return (
        feature(key)
        + downstream_weighted_sum(table, arm, key, feature, zero)
        - downstream_weighted_sum(table, control, control_key, feature, zero)
    )


def _markov_side_sums(d: Dataset, feature, k: int):
    """Mean downstream feature load per pooled arm, off the leaf table.

    For every full trajectory, the load past time t is the sum of feature
    rows at its own active-arm prefixes with s > t; pooled arms average
    these over their member records, which is a mass-weighted average
    over matching leaves.
    """
    table = d.table
    horizon = d.horizon
    sums: dict[object, np.ndarray] = {}
    masses: dict[object, float] = {}
    for leaf_key, leaf in table.level(2 * horizon - 1):
        zs = leaf_key.treatments
        xs = leaf_key.covariates
        suffix = np.zeros((horizon + 1, k))
        for s in range(horizon, 0, -1):
            row = suffix[s]
            if zs[s - 1] > 0:
                row = row + feature(StratumKey(zs[:s], xs[: s - 1]))
            suffix[s - 1] = row
        for t in range(1, horizon + 1):
            if t == 1:
                sig: object = StratumKey((zs[0],), ())
            else:
                sig = MarkovKey(t, zs[t - 2], xs[t - 2], zs[t - 1])
            if sig in sums:
                sums[sig] = sums[sig] + leaf.mass * suffix[t]
                masses[sig] += leaf.mass
            else:
                sums[sig] = leaf.mass * suffix[t]
                masses[sig] = leaf.mass
    return {sig: sums[sig] / masses[sig] for sig in sums}


def _markov_coefficients(
    target: PointEffectTarget, spec: PatternSpec, horizon: int, side_sums
) -> np.ndarray:
    key = target.key
    control = key.sibling(0)
    return spec.feature_row(key, horizon) + side_sums[key] - side_sums[control]


def saturated_pattern(d: Dataset, markov: bool = False) -> PatternSpec:
    """One group per observed target: the unpooled version of any fit.

    Predicates lead with the time equality so later history references
    short-circuit away at other evaluation points.
    """
    targets, _ = point_effect_targets(d, markov=markov)
    groups = []
    for i, target in enumerate(targets, start=1):
        groups.append(
            PatternGroup(
                f"g{i}", compile_expr(_key_predicate(target.key), {"t", "T"})
            )
        )
    if not groups:
        raise PatternError("no estimable targets to saturate over")
    return PatternSpec(tuple(groups), ())


def _key_predicate(key: PointEffectKey) -> str:
    parts = [f"t == {key.time}"]
    if isinstance(key, MarkovKey):
        t = key.time
        parts.append(f"z[{t - 1}] == {key.prev_treatment}")
        for i, v in enumerate(key.prev_covariate, start=1):
            parts.append(f"x[{t - 1}][{i}] == {v}")
        parts.append(f"z[{t}] == {key.treatment}")
    else:
        for s, v in enumerate(key.treatments, start=1):
            parts.append(f"z[{s}] == {v}")
        for s, vec in enumerate(key.covariates, start=1):
            for i, v in enumerate(vec, start=1):
                parts.append(f"x[{s}][{i}] == {v}")
    return " and ".join(parts)
