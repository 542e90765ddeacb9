"""Net effects of sequence-position treatments via backward recursion.

The net effect of taking arm z_t (vs control) at stratum (z_1^{t-1},
x_1^{t-1}) is the arm contrast of the control-continuation means: the
stratum-arm mean with the mass-weighted contributions of all *downstream*
active-arm net effects removed. Computed backward from the last period,
where the net effect is just the arm contrast of stratum means.

The point effect (plain arm contrast of stratum means at any period)
decomposes as its own net effect plus the difference between the two arms'
downstream net-effect loads; `verify_decomposition` checks that identity
against directly contrasted stored means and reports the worst deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import EstimabilityError, IncompletenessError
from .keys import StratumKey
from .tables import MeanTable, TableNode


@dataclass
class NetEffectTable:
    """Net effects for active arms plus control-continuation means.

    `effects` maps treatment-ended keys with a nonzero arm to their net
    effect; `control_means` holds the control-continuation mean for every
    arm (zero arms included), equal to the stratum mean at the last period.
    """

    horizon: int
    effects: dict[StratumKey, float] = field(default_factory=dict)
    control_means: dict[StratumKey, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "horizon": self.horizon,
            "effects": [
                {"key": k.label(), "value": v} for k, v in self.effects.items()
            ],
            "control_means": [
                {"key": k.label(), "value": v} for k, v in self.control_means.items()
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def missing_controls(table: MeanTable) -> list[StratumKey]:
    """Strata holding an active arm but no control arm, shallowest first."""
    out = []
    for depth in range(0, 2 * table.horizon - 1, 2):
        for key, node in table.level(depth):
            if node.children and 0 not in node.children:
                out.append(key)
    return out


def compute_net_effects(table: MeanTable) -> NetEffectTable:
    """Run the backward recursion over a complete table.

    Every stratum holding an active arm must also hold its control arm;
    IncompletenessError lists every stratum that does not. Sums run over
    the observed alphabet only.
    """
    incomplete = missing_controls(table)
    if incomplete:
        raise IncompletenessError(
            "control arm unobserved in "
            + "; ".join(k.label() for k in incomplete[:20])
            + (f" and {len(incomplete) - 20} more strata" if len(incomplete) > 20 else "")
        )
    horizon = table.horizon
    net = NetEffectTable(horizon)
    downstream: dict[int, float] = {}  # id(arm node) -> weighted future load
    for t in range(horizon, 0, -1):
        for pkey, pnode in table.level(2 * (t - 1)):
            arms = dict(sorted(pnode.children.items()))
            if not arms:
                continue
            arm_keys = {z: pkey.with_treatment(z) for z in arms}
            for z, anode in arms.items():
                load = 0.0
                if t < horizon:
                    acc = 0.0
                    for vec, xnode in anode.children.items():
                        xkey = arm_keys[z].with_covariate(vec)
                        for z2, gnode in xnode.children.items():
                            g = downstream[id(gnode)]
                            if z2 > 0:
                                g += net.effects[xkey.with_treatment(z2)]
                            acc += gnode.mass * g
                    load = acc / anode.mass
                downstream[id(anode)] = load
                net.control_means[arm_keys[z]] = anode.derived_mean - load
            active = [z for z in arms if z > 0]
            if active:
                base = net.control_means[arm_keys[0]]
                for z in active:
                    net.effects[arm_keys[z]] = net.control_means[arm_keys[z]] - base
    return net


def downstream_weighted_sum(table, node: TableNode, key: StratumKey, value_fn, zero=0.0):
    """Mass-weighted sum of value_fn over active-arm descendants of an arm.

    Walks every continuation (x_t, z_{t+1}, ..., z_s) below the given
    treatment-ended stratum, adding value_fn(descendant key) times the
    descendant's conditional mass for each active z_s. value_fn may return
    floats or numpy vectors; pass a matching `zero`.
    """
    total = zero
    stack: list[tuple[TableNode, StratumKey]] = [(node, key)]
    while stack:
        cur, cur_key = stack.pop()
        for vec, xnode in cur.children.items():
            xkey = cur_key.with_covariate(vec)
            for z, gnode in xnode.children.items():
                gkey = xkey.with_treatment(z)
                if z > 0:
                    total = total + value_fn(gkey) * (gnode.mass / node.mass)
                stack.append((gnode, gkey))
    return total


def decompose_point_effect(
    net: NetEffectTable, table: MeanTable, key: StratumKey
) -> float:
    """Rebuild the point effect of an active arm from net-effect parts.

    Equals the arm's own net effect plus the arm-vs-control difference in
    downstream net-effect load.
    """
    if not key.ends_with_treatment or key.arm() == 0:
        raise EstimabilityError(f"{key.label()} does not name an active arm")
    arm = table.node(key)
    control_key = key.sibling(0)
    control = table.node(control_key)
    if arm is None or control is None:
        raise IncompletenessError(
            f"both arms of {key.parent_stratum().label()} are needed"
        )
    lookup = net.effects.__getitem__
    own = net.effects[key]
    return (
        own
        + downstream_weighted_sum(table, arm, key, lookup)
        - downstream_weighted_sum(table, control, control_key, lookup)
    )


@dataclass
class DecompositionEntry:
    key: StratumKey
    point_effect: float
    decomposition: float

    @property
    def deviation(self) -> float:
        return abs(self.point_effect - self.decomposition)


@dataclass
class DecompositionReport:
    entries: list[DecompositionEntry]
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return max((e.deviation for e in self.entries), default=0.0)

    @property
    def flagged(self) -> bool:
        return self.max_deviation > self.tolerance

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "flagged": self.flagged,
            "entries": [
                {
                    "key": e.key.label(),
                    "point_effect": e.point_effect,
                    "decomposition": e.decomposition,
                    "deviation": e.deviation,
                }
                for e in self.entries
            ],
        }


def verify_decomposition(table: MeanTable, tolerance: float = 1e-8) -> DecompositionReport:
    """Contrast stored arm means against the net-effect decomposition.

    The direct side reads stored stratum means (overrides included), the
    decomposition side re-aggregates from the leaves, so a planted
    inconsistency in any internal mean shows up as a deviation.
    """
    net = compute_net_effects(table)
    entries = []
    for t in range(1, table.horizon + 1):
        for pkey, pnode in table.level(2 * (t - 1)):
            if 0 not in pnode.children:
                continue
            control_mean = table.mean(pkey.with_treatment(0))
            for z, anode in sorted(pnode.children.items()):
                if z == 0:
                    continue
                akey = pkey.with_treatment(z)
                direct = table.mean(akey) - control_mean
                entries.append(
                    DecompositionEntry(
                        akey, direct, decompose_point_effect(net, table, akey)
                    )
                )
    return DecompositionReport(entries, tolerance)
