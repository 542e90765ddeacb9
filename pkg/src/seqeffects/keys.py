"""Stratum keys: typed prefixes of the interleaved treatment/covariate path.

A record's history reads z1, x1, z2, x2, ..., x_{T-1}, zT. A stratum is the
set of records sharing a prefix of that interleaved sequence, so a key is a
pair of tuples (treatments, covariates) whose lengths differ by at most one.
The empty key denotes the whole sample.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UsageError

# Covariate vectors are stored as plain int tuples so that keys hash and
# compare structurally.
Covariate = tuple[int, ...]


@dataclass(frozen=True)
class StratumKey:
    """Prefix of the interleaved history defining a subpopulation.

    ``len(treatments) == len(covariates)`` is a covariate-ended key (the
    conditioning set for a covariate effect at the next period), while
    ``len(treatments) == len(covariates) + 1`` ends with a treatment and
    identifies one arm at time ``len(treatments)``.
    """

    treatments: tuple[int, ...] = ()
    covariates: tuple[Covariate, ...] = ()

    def __post_init__(self):
        nz, nx = len(self.treatments), len(self.covariates)
        if nz not in (nx, nx + 1):
            raise UsageError(
                f"invalid key shape: {nz} treatments with {nx} covariate entries"
            )
        if any(z < 0 for z in self.treatments):
            raise UsageError("treatment codes must be non-negative")
        if any(v < 0 for vec in self.covariates for v in vec):
            raise UsageError("covariate codes must be non-negative")

    @property
    def depth(self) -> int:
        """Number of interleaved symbols fixed by this key."""
        return len(self.treatments) + len(self.covariates)

    @property
    def time(self) -> int:
        """Treatment periods covered (the t of a treatment-ended key)."""
        return len(self.treatments)

    @property
    def ends_with_treatment(self) -> bool:
        return len(self.treatments) == len(self.covariates) + 1

    def symbols(self) -> list:
        """Interleaved prefix: ints for treatments, tuples for covariates."""
        out: list = []
        for i, z in enumerate(self.treatments):
            out.append(z)
            if i < len(self.covariates):
                out.append(self.covariates[i])
        return out

    def with_treatment(self, z: int) -> "StratumKey":
        if self.ends_with_treatment:
            raise UsageError(f"{self.label()} already ends with a treatment")
        return StratumKey(self.treatments + (z,), self.covariates)

    def with_covariate(self, vec: Covariate) -> "StratumKey":
        if not self.treatments or not self.ends_with_treatment:
            raise UsageError(f"{self.label()} cannot take a covariate next")
        return StratumKey(self.treatments, self.covariates + (tuple(vec),))

    def parent_stratum(self) -> "StratumKey":
        """Drop the trailing symbol (the conditioning set of this arm)."""
        if self.ends_with_treatment:
            return StratumKey(self.treatments[:-1], self.covariates)
        return StratumKey(self.treatments, self.covariates[:-1])

    def arm(self) -> int:
        """Trailing treatment of a treatment-ended key."""
        if not self.ends_with_treatment:
            raise UsageError(f"{self.label()} does not end with a treatment")
        return self.treatments[-1]

    def sibling(self, z: int) -> "StratumKey":
        """Same conditioning stratum, different trailing treatment."""
        return self.parent_stratum().with_treatment(z)

    def label(self) -> str:
        if self.depth == 0:
            return "(all)"
        parts = []
        for i, z in enumerate(self.treatments):
            parts.append(f"z{i + 1}={z}")
            if i < len(self.covariates):
                vec = ",".join(str(v) for v in self.covariates[i])
                parts.append(f"x{i + 1}={vec}")
        return " ".join(parts)

    def __repr__(self) -> str:  # keeps test output readable
        return f"StratumKey<{self.label()}>"


@dataclass(frozen=True)
class MarkovKey:
    """Collapsed point-effect key conditioning only on the previous period.

    Used when long sequences make full-history strata too thin: records are
    pooled over everything before (z_{t-1}, x_{t-1}), and ``treatment`` is
    the arm taken at time ``time``. Only defined for time >= 2.
    """

    time: int
    prev_treatment: int
    prev_covariate: Covariate
    treatment: int

    def __post_init__(self):
        if self.time < 2:
            raise UsageError("collapsed keys require time >= 2")
        if self.prev_treatment < 0 or self.treatment < 0:
            raise UsageError("treatment codes must be non-negative")

    def label(self) -> str:
        t = self.time
        vec = ",".join(str(v) for v in self.prev_covariate)
        return (
            f"z{t - 1}={self.prev_treatment} x{t - 1}={vec} "
            f"z{t}={self.treatment} pooled"
        )

    def arm(self) -> int:
        return self.treatment

    def sibling(self, z: int) -> "MarkovKey":
        return MarkovKey(self.time, self.prev_treatment, self.prev_covariate, z)

    def __repr__(self) -> str:
        return f"MarkovKey<{self.label()}>"


PointEffectKey = StratumKey | MarkovKey


def key_time(key: PointEffectKey) -> int:
    """Treatment period a point-effect key refers to."""
    return key.time if isinstance(key, MarkovKey) else len(key.treatments)
