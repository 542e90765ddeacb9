"""Stratum mean tables over the interleaved history trie.

One structure serves both evaluation modes: an empirical table built from a
dataset (node masses are integer counts, so proportions are exact integer
ratios converted to float once) and an exact table built from an explicit
joint law over full histories (masses are probabilities). Internal-node
means are always the mass-weighted aggregate of the leaves below, which is
what the recursive computations consume; `perturb_mean` can plant a stored
override on top for diagnostics, and plain reads report it.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, EstimabilityError, UsageError
from .keys import StratumKey

_PROB_SUM_TOL = 1e-9


class TableNode:
    """One stratum: mass, outcome aggregate, and children by next symbol."""

    __slots__ = ("mass", "ysum", "children", "lo", "hi", "override")

    def __init__(self, mass, ysum, lo=-1, hi=-1):
        self.mass = mass
        self.ysum = ysum
        self.children: dict = {}
        self.lo = lo
        self.hi = hi
        self.override = None

    @property
    def derived_mean(self) -> float:
        """Mass-weighted mean of the leaves below; ignores overrides."""
        return self.ysum / self.mass

    @property
    def mean(self) -> float:
        return self.override if self.override is not None else self.derived_mean


class MeanTable:
    """Masses and outcome means for every observed history prefix.

    Parameters
    ----------
    horizon : int
        Number of treatment periods T (so histories interleave T treatments
        with T-1 covariate vectors).
    covariate_width : int
        Components per covariate vector; 0 when horizon == 1.
    root : TableNode
        Trie root over observed prefixes. Unobserved strata are simply
        absent, never materialized.
    empirical : bool
        True when masses are record counts.
    """

    def __init__(self, horizon, covariate_width, root, empirical, y_sorted=None, order=None):
        self.horizon = horizon
        self.covariate_width = covariate_width
        self.root = root
        self.empirical = empirical
        self.y_sorted = y_sorted
        self.order = order
        self._levels = None

    # -- construction ---------------------------------------------------

    @classmethod
    def from_arrays(cls, z: np.ndarray, x: np.ndarray, y: np.ndarray) -> "MeanTable":
        """Build the empirical table for records (z, x, y).

        z is (N, T) int, x is (N, T-1, w) int, y is (N,) float. Records are
        sorted once by interleaved history; every stratum is then a
        contiguous slice, and each node keeps its (lo, hi) range so that
        member lookups cost O(prefix length).
        """
        n, horizon = z.shape
        width = x.shape[2] if x.ndim == 3 and x.shape[1] > 0 else 0
        cols = []
        for t in range(horizon):
            cols.append(z[:, t])
            if t < horizon - 1:
                for j in range(width):
                    cols.append(x[:, t, j])
        flat = np.column_stack(cols) if cols else np.zeros((n, 0), dtype=np.int64)
        order = np.lexsort(flat.T[::-1]) if flat.shape[1] else np.arange(n)
        fs = flat[order]
        y_sorted = np.ascontiguousarray(y[order], dtype=float)

        # Column span of each trie level: single column for a treatment,
        # `width` columns for a covariate vector.
        spans = []
        c = 0
        for t in range(horizon):
            spans.append((c, c + 1, True))
            c += 1
            if t < horizon - 1:
                spans.append((c, c + width, False))
                c += width

        def build(lo: int, hi: int, level: int) -> TableNode:
            node = TableNode(hi - lo, float(y_sorted[lo:hi].sum()), lo, hi)
            if level < len(spans):
                a, b, is_treatment = spans[level]
                seg = fs[lo:hi, a:b]
                if seg.shape[0]:
                    change = np.flatnonzero(np.any(seg[1:] != seg[:-1], axis=1)) + 1
                    starts = np.concatenate(([0], change, [hi - lo]))
                    for i in range(len(starts) - 1):
                        row = seg[starts[i]]
                        sym = int(row[0]) if is_treatment else tuple(int(v) for v in row)
                        node.children[sym] = build(
                            lo + int(starts[i]), lo + int(starts[i + 1]), level + 1
                        )
            return node

        root = build(0, n, 0)
        return cls(horizon, width, root, True, y_sorted, order)

    @classmethod
    def from_entries(cls, horizon: int, covariate_width: int, entries) -> "MeanTable":
        """Build an exact table from {(z_tuple, x_tuples): (prob, mean)}.

        Probabilities must be positive and sum to one; a zero-probability
        history belongs out of the dictionary, not in it with mass 0.
        """
        width = covariate_width
        root = TableNode(0.0, 0.0)
        total = 0.0
        for (zs, xs), (prob, mean) in entries.items():
            zs = tuple(int(v) for v in zs)
            xs = tuple(tuple(int(v) for v in vec) for vec in xs)
            if len(zs) != horizon or len(xs) != horizon - 1:
                raise UsageError(f"history {zs}/{xs} does not match horizon {horizon}")
            if any(len(vec) != width for vec in xs):
                raise UsageError("covariate vector width mismatch")
            if not prob > 0.0:
                raise DomainError(f"history {zs}/{xs} has non-positive probability")
            if not np.isfinite(mean):
                raise DomainError(f"history {zs}/{xs} has non-finite mean")
            total += prob
            contrib = prob * mean
            node = root
            node.mass += prob
            node.ysum += contrib
            key = StratumKey(zs, xs)
            for sym in key.symbols():
                node = node.children.setdefault(sym, TableNode(0.0, 0.0))
                node.mass += prob
                node.ysum += contrib
        if abs(total - 1.0) > _PROB_SUM_TOL:
            raise DomainError(f"history probabilities sum to {total!r}, expected 1")

        def sort_children(node: TableNode):
            node.children = dict(sorted(node.children.items()))
            for child in node.children.values():
                sort_children(child)

        sort_children(root)
        return cls(horizon, width, root, False)

    # -- navigation -----------------------------------------------------

    def node(self, key: StratumKey) -> TableNode | None:
        self._check_key(key)
        node = self.root
        for sym in key.symbols():
            node = node.children.get(sym)
            if node is None:
                return None
        return node

    def require(self, key: StratumKey) -> TableNode:
        node = self.node(key)
        if node is None:
            raise EstimabilityError(f"stratum {key.label()} is empty")
        return node

    def _check_key(self, key: StratumKey):
        if key.time > self.horizon:
            raise UsageError(
                f"key {key.label()} runs past horizon {self.horizon}"
            )
        if any(len(vec) != self.covariate_width for vec in key.covariates):
            raise UsageError(f"key {key.label()} has wrong covariate width")

    def mass(self, key: StratumKey):
        return self.require(key).mass

    def mean(self, key: StratumKey) -> float:
        return self.require(key).mean

    def conditional(self, a: StratumKey, b: StratumKey) -> float:
        """Proportion of stratum b falling in its refinement a."""
        bsyms = b.symbols()
        asyms = a.symbols()
        if asyms[: len(bsyms)] != bsyms:
            raise UsageError(f"{a.label()} does not refine {b.label()}")
        bnode = self.require(b)
        anode = self.node(a)
        if anode is None:
            return 0.0
        return anode.mass / bnode.mass

    def levels(self) -> list[list[tuple[StratumKey, TableNode]]]:
        """All observed strata grouped by interleaved depth, root first."""
        if self._levels is None:
            out: list[list[tuple[StratumKey, TableNode]]] = [
                [] for _ in range(2 * self.horizon)
            ]
            stack: list[tuple[StratumKey, TableNode]] = [(StratumKey(), self.root)]
            while stack:
                key, node = stack.pop()
                out[key.depth].append((key, node))
                for sym, child in node.children.items():
                    if key.ends_with_treatment:
                        ckey = key.with_covariate(sym)
                    else:
                        ckey = key.with_treatment(sym)
                    stack.append((ckey, child))
            for level in out:
                level.sort(key=lambda item: item[0].symbols())
            self._levels = out
        return self._levels

    def level(self, depth: int) -> list[tuple[StratumKey, TableNode]]:
        return self.levels()[depth]

    # -- diagnostics ----------------------------------------------------

    def perturb_mean(self, key: StratumKey, delta: float):
        """Plant an inconsistent stored mean on one stratum.

        Later reads of `mean` report the shifted value while aggregate-based
        recursions keep using the leaf-derived mean, which is exactly the
        discrepancy the decomposition check is designed to flag.
        """
        node = self.require(key)
        node.override = node.mean + delta
