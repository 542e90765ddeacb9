"""Stratum-level statistics: proportions, means, mean variances, targets.

Proportions over a dataset are exact integer ratios. Mean variances come in
two modes: a known outcome variance sigma^2 (divided by the stratum count)
or the within-stratum estimate sum (y - mean)^2 / (n (n - 1)), which needs
n >= 2. Target enumeration walks every conditioning stratum and pairs each
active treatment arm with its control arm; the collapsed variant pools
records over everything before the previous period.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import EstimabilityError, UsageError
from .keys import MarkovKey, PointEffectKey, StratumKey

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Proportion:
    """Exact ratio of refinement count to conditioning count."""

    numerator: int
    denominator: int

    def __post_init__(self):
        if self.denominator < 1:
            raise UsageError("proportion denominator must be >= 1")
        if not 0 <= self.numerator <= self.denominator:
            raise UsageError("proportion numerator outside [0, denominator]")

    @property
    def value(self) -> float:
        return self.numerator / self.denominator


@dataclass(frozen=True)
class StratumStats:
    """Count, outcome mean, and variance of the mean for one stratum."""

    key: StratumKey
    count: int
    mean: float
    mean_variance: float


@dataclass(frozen=True)
class VarianceMode:
    """How var{stratum mean} is computed: known sigma^2 or estimated."""

    kind: str
    sigma2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("known", "estimated"):
            raise UsageError(f"unknown variance mode {self.kind!r}")
        if self.kind == "known" and not self.sigma2 > 0:
            raise UsageError("known outcome variance must be positive")

    @classmethod
    def known(cls, sigma2: float = 1.0) -> "VarianceMode":
        return cls("known", float(sigma2))

    @classmethod
    def estimated(cls) -> "VarianceMode":
        return cls("estimated")

    @classmethod
    def parse(cls, text: str) -> "VarianceMode":
        """Parse the CLI form: 'estimated' or 'known:<sigma2>'."""
        if text == "estimated":
            return cls.estimated()
        if text == "known":
            return cls.known()
        if text.startswith("known:"):
            try:
                return cls.known(float(text.split(":", 1)[1]))
            except ValueError:
                pass
        raise UsageError(
            f"variance mode {text!r} is not 'estimated' or 'known:<sigma2>'"
        )

    def label(self) -> str:
        return "estimated" if self.kind == "estimated" else f"known:{self.sigma2!r}"


def proportion(d: Dataset, a: StratumKey, b: StratumKey) -> Proportion:
    """pr(a | b) with a refining b; exact counts, converted to float once."""
    asyms, bsyms = a.symbols(), b.symbols()
    if asyms[: len(bsyms)] != bsyms:
        raise UsageError(f"{a.label()} does not refine {b.label()}")
    bnode = d.table.node(b)
    if bnode is None:
        raise EstimabilityError(f"conditioning stratum {b.label()} is empty")
    anode = d.table.node(a)
    return Proportion(0 if anode is None else anode.mass, bnode.mass)


def _mean_variance(values: np.ndarray, mode: VarianceMode) -> float:
    n = values.size
    if mode.kind == "known":
        return mode.sigma2 / n
    if n < 2:
        raise EstimabilityError(
            "estimated mean variance needs at least 2 records"
        )
    mean = float(values.mean())
    return float(((values - mean) ** 2).sum()) / (n * (n - 1))


def stratum_mean(d: Dataset, key: StratumKey) -> StratumStats:
    """Average outcome over one stratum; variance left unset (nan)."""
    node = d.table.node(key)
    if node is None:
        raise EstimabilityError(f"stratum {key.label()} is empty")
    return StratumStats(key, node.mass, node.mean, math.nan)


def stratum_mean_variance(d: Dataset, key: StratumKey, mode: VarianceMode) -> float:
    node = d.table.node(key)
    if node is None:
        raise EstimabilityError(f"stratum {key.label()} is empty")
    values = d.table.y_sorted[node.lo : node.hi]
    return _mean_variance(values, mode)


def grand_mean(d: Dataset) -> float:
    """Arithmetic mean of every outcome (the depth-0 stratum mean)."""
    return d.table.root.mean


# -- point-effect targets ------------------------------------------------


@dataclass
class PointEffectTarget:
    """One estimable (or skippable) contrast: an active arm vs control.

    Holds the outcome value views for both arms so callers can compute
    either variance mode without re-slicing.
    """

    key: PointEffectKey
    time: int
    arm_values: np.ndarray
    control_values: np.ndarray
    arm_indices: np.ndarray
    control_indices: np.ndarray

    @property
    def arm_count(self) -> int:
        return self.arm_values.size

    @property
    def control_count(self) -> int:
        return self.control_values.size

    @property
    def estimate(self) -> float:
        return float(self.arm_values.mean()) - float(self.control_values.mean())

    def variance(self, mode: VarianceMode) -> float:
        """var{arm mean} + var{control mean}; inf when not estimable."""
        try:
            va = _mean_variance(self.arm_values, mode)
            vc = _mean_variance(self.control_values, mode)
        except EstimabilityError:
            return math.inf
        return va + vc


def point_effect_targets(
    d: Dataset, markov: bool = False
) -> tuple[list[PointEffectTarget], list[tuple[PointEffectKey, str]]]:
    """Enumerate treatment contrasts, full-history or collapsed.

    Returns (targets, skipped) where skipped pairs an active-arm key with
    the reason no contrast exists for it (its control arm is unobserved).
    Ordering is deterministic: by period, then by key symbols.
    """
    return (_markov_targets(d) if markov else _full_targets(d))


def _full_targets(d: Dataset):
    table = d.table
    order = table.order
    y_sorted = table.y_sorted
    targets: list[PointEffectTarget] = []
    skipped: list[tuple[PointEffectKey, str]] = []
    for t in range(1, d.horizon + 1):
        for pkey, pnode in table.level(2 * (t - 1)):
            arms = pnode.children
            control = arms.get(0)
            for z, anode in sorted(arms.items()):
                if z == 0:
                    continue
                akey = pkey.with_treatment(z)
                if control is None:
                    skipped.append((akey, "control arm unobserved"))
                    continue
                targets.append(
                    PointEffectTarget(
                        akey,
                        t,
                        y_sorted[anode.lo : anode.hi],
                        y_sorted[control.lo : control.hi],
                        order[anode.lo : anode.hi],
                        order[control.lo : control.hi],
                    )
                )
    return targets, skipped


def _markov_targets(d: Dataset):
    targets: list[PointEffectTarget] = []
    skipped: list[tuple[PointEffectKey, str]] = []
    # Period 1 has no previous period to condition on; it keeps its full
    # (here: whole-sample) stratum.
    full_t1, skipped_t1 = _full_targets_at_time_one(d)
    targets.extend(full_t1)
    skipped.extend(skipped_t1)
    for t in range(2, d.horizon + 1):
        zprev = d.z[:, t - 2]
        xprev = d.x[:, t - 2, :] if d.covariate_width else np.zeros((d.n_records, 0), dtype=np.int64)
        zt = d.z[:, t - 1]
        stacked = np.column_stack([zprev, xprev])
        groups, inverse = np.unique(stacked, axis=0, return_inverse=True)
        for g in range(groups.shape[0]):
            mask = inverse == g
            prev_z = int(groups[g, 0])
            prev_x = tuple(int(v) for v in groups[g, 1:])
            arm_codes = sorted(int(v) for v in np.unique(zt[mask]))
            control_idx = np.flatnonzero(mask & (zt == 0))
            for z in arm_codes:
                if z == 0:
                    continue
                key = MarkovKey(t, prev_z, prev_x, z)
                if control_idx.size == 0:
                    skipped.append((key, "control arm unobserved"))
                    continue
                arm_idx = np.flatnonzero(mask & (zt == z))
                targets.append(
                    PointEffectTarget(
                        key, t, d.y[arm_idx], d.y[control_idx], arm_idx, control_idx
                    )
                )
    return targets, skipped


def _full_targets_at_time_one(d: Dataset):
    table = d.table
    targets: list[PointEffectTarget] = []
    skipped: list[tuple[PointEffectKey, str]] = []
    root = table.root
    control = root.children.get(0)
    for z, anode in sorted(root.children.items()):
        if z == 0:
            continue
        akey = StratumKey((z,), ())
        if control is None:
            skipped.append((akey, "control arm unobserved"))
            continue
        targets.append(
            PointEffectTarget(
                akey,
                1,
                table.y_sorted[anode.lo : anode.hi],
                table.y_sorted[control.lo : control.hi],
                table.order[anode.lo : anode.hi],
                table.order[control.lo : control.hi],
            )
        )
    return targets, skipped
