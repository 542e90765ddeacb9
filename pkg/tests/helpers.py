"""Builders and hand-coded reference formulas shared across the tests.

Everything here is deliberately independent of the library internals:
reference values are computed straight from record arrays or cell
dictionaries so that agreement with the package is evidence, not
circularity.
"""

import itertools

import numpy as np

from seqeffects import Dataset, MeanTable


def complete_histories(horizon, covariate_width):
    """All full (z, x) binary histories for the given shape."""
    histories = [((), ())]
    for t in range(1, horizon + 1):
        histories = [(zs + (z,), xs) for zs, xs in histories for z in (0, 1)]
        if t < horizon:
            cells = list(itertools.product((0, 1), repeat=covariate_width))
            histories = [(zs, xs + (vec,)) for zs, xs in histories for vec in cells]
    return histories


def random_complete_table(rng, horizon, covariate_width=1):
    """A random table with every binary history present.

    Masses are a Dirichlet draw so they sum to one exactly; means are
    uniform on a wide interval so no contrast degenerates.
    """
    width = 0 if horizon == 1 else covariate_width
    histories = complete_histories(horizon, width)
    probs = rng.dirichlet(np.ones(len(histories)))
    entries = {
        h: (float(p), float(rng.uniform(-40.0, 160.0)))
        for h, p in zip(histories, probs)
    }
    return MeanTable.from_entries(horizon, width, entries)


def dataset_from_cells(cells):
    """Build a two-period dataset from {(z1, x1, z2): outcome list}."""
    z, x, y = [], [], []
    for (z1, x1, z2), outcomes in sorted(cells.items()):
        for val in outcomes:
            z.append((z1, z2))
            x.append(((x1,),))
            y.append(float(val))
    ids = [f"u{i:05d}" for i in range(len(y))]
    return Dataset(np.array(z), np.array(x), np.array(y), ids)


def random_two_period_cells(rng, lo=2, hi=6):
    """Random outcomes for every (z1, x1, z2) cell, each with >= lo records."""
    cells = {}
    for z1 in (0, 1):
        for x1 in (0, 1):
            for z2 in (0, 1):
                n = int(rng.integers(lo, hi + 1))
                cells[(z1, x1, z2)] = rng.normal(rng.uniform(-20, 120), 5.0, size=n)
    return cells


def two_period_closed_form(cells, sigma2=None):
    """Hand-derived pooled fit for T=2 with one group per period.

    The second-period effect is the inverse-variance weighted mean of the
    four stratum contrasts; the first-period effect subtracts from the
    raw first-period contrast the pooled effect times the shift in the
    second-period treatment share between the two first-period arms.
    With ``sigma2`` set the cell-mean variances are sigma2/n, otherwise
    the sample variance (ddof=1) over n.

    Returns (phi1, phi2, var1, var2, cov12).
    """

    def cell_stats(sel):
        vals = np.concatenate([np.asarray(cells[c], dtype=float) for c in sel])
        n = len(vals)
        if sigma2 is not None:
            v = sigma2 / n
        else:
            v = np.var(vals, ddof=1) / n
        return vals.mean(), v, n

    theta2, v2 = [], []
    for z1 in (0, 1):
        for x1 in (0, 1):
            m_arm, v_arm, _ = cell_stats([(z1, x1, 1)])
            m_ctl, v_ctl, _ = cell_stats([(z1, x1, 0)])
            theta2.append(m_arm - m_ctl)
            v2.append(v_arm + v_ctl)
    theta2 = np.array(theta2)
    v2 = np.array(v2)
    s_inv = float(np.sum(1.0 / v2))
    phi2 = float(np.sum(theta2 / v2) / s_inv)
    var2 = 1.0 / s_inv

    m1_arm, v1_arm, n1 = cell_stats([(1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)])
    m1_ctl, v1_ctl, n0 = cell_stats([(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)])
    theta1 = m1_arm - m1_ctl
    v1 = v1_arm + v1_ctl

    n_arm_treated = sum(len(cells[(1, x1, 1)]) for x1 in (0, 1))
    n_ctl_treated = sum(len(cells[(0, x1, 1)]) for x1 in (0, 1))
    delta_pr = n_arm_treated / n1 - n_ctl_treated / n0

    phi1 = theta1 - phi2 * delta_pr
    var1 = v1 + delta_pr**2 * var2
    cov12 = -delta_pr * var2
    return phi1, phi2, var1, var2, cov12
