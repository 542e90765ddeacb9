import math

import pytest

from seqeffects import (
    MarkovKey,
    StratumKey,
    VarianceMode,
    estimate_point_effects,
    grand_mean,
    point_effect_targets,
    proportion,
    stratum_mean,
    stratum_mean_variance,
    stratum_members,
)


def test_stratum_mean_counts_and_value(d16):
    st = stratum_mean(d16, StratumKey((1,), ()))
    assert st.count == 8
    assert st.mean == pytest.approx(131.25)
    assert math.isnan(st.mean_variance)


def test_grand_mean(d16):
    assert grand_mean(d16) == pytest.approx(123.125)


def test_variance_modes(d16):
    k = StratumKey((1,), ())
    assert stratum_mean_variance(d16, k, VarianceMode.known(4.0)) == pytest.approx(0.5)
    # sample variance 112.5 over 8 records
    assert stratum_mean_variance(d16, k, VarianceMode.estimated()) == pytest.approx(14.0625)


def test_variance_mode_parsing():
    m = VarianceMode.parse("known:2.5")
    assert m.kind == "known"
    assert m.sigma2 == pytest.approx(2.5)
    assert VarianceMode.parse("estimated").kind == "estimated"
    with pytest.raises(Exception):
        VarianceMode.parse("bogus")


def test_proportion_is_a_count_ratio(d16):
    pr = proportion(d16, StratumKey((1, 1), ((0,),)), StratumKey((1,), ()))
    assert pr.numerator == 3
    assert pr.denominator == 8
    assert pr.value == pytest.approx(0.375)


def test_stratum_members_are_record_indices(d16):
    idx = stratum_members(d16, StratumKey((1,), ((1,),)))
    assert idx == {12, 13, 14, 15}
    for i in idx:
        assert d16.records[i].treatments[0] == 1
        assert d16.records[i].covariates[0] == (1,)


def test_point_effect_targets_cover_every_arm(d16):
    targets, skipped = point_effect_targets(d16)
    labels = [t.key.label() for t in targets]
    assert labels == [
        "z1=1",
        "z1=0 x1=0 z2=1",
        "z1=0 x1=1 z2=1",
        "z1=1 x1=0 z2=1",
        "z1=1 x1=1 z2=1",
    ]
    assert skipped == []


def test_point_effect_estimates_match_cell_contrasts(d16):
    ests, dropped = estimate_point_effects(d16, VarianceMode.known(1.0))
    by_label = {e.key.label(): e for e in ests}
    assert by_label["z1=1"].value == pytest.approx(16.25)
    assert by_label["z1=1"].variance == pytest.approx(0.25)
    assert by_label["z1=0 x1=0 z2=1"].value == pytest.approx(20.0)
    assert by_label["z1=1 x1=1 z2=1"].value == pytest.approx(-10.0)
    assert by_label["z1=1 x1=0 z2=1"].variance == pytest.approx(1 / 3 + 1)
    assert dropped == []


def test_markov_targets_pool_histories(d16):
    targets, skipped = point_effect_targets(d16, markov=True)
    labels = [t.key.label() for t in targets]
    assert labels[0] == "z1=1"
    assert all("pooled" in lab for lab in labels[1:])
    assert all(isinstance(t.key, MarkovKey) for t in targets[1:])
    # four (z1, x1, z2=1) strata collapse onto four pooled keys here
    assert len(targets) == 5


def test_single_arm_stratum_is_skipped():
    import io

    from seqeffects import load_dataset

    rows = ["unit_id,z1,z2,x1_1,y"]
    for i, (z1, x1, z2, y) in enumerate(
        [
            (0, 0, 0, 10.0),
            (0, 0, 1, 12.0),
            (1, 0, 1, 30.0),  # no z2=0 partner under z1=1
            (1, 0, 1, 31.0),
            (0, 1, 0, 11.0),
            (0, 1, 1, 13.0),
        ]
    ):
        rows.append(f"u{i},{z1},{z2},{x1},{y}")
    d = load_dataset(io.StringIO("\n".join(rows) + "\n"))
    targets, skipped = point_effect_targets(d)
    skipped_labels = [k.label() for k, _ in skipped]
    assert any("z1=1" in lab and "z2=1" in lab for lab in skipped_labels)
    target_labels = [t.key.label() for t in targets]
    assert "z1=1 x1=0 z2=1" not in target_labels


def test_missing_control_leaves_no_targets():
    import io

    from seqeffects import load_dataset

    # nobody took the control in period 1, so no contrast is estimable
    d = load_dataset(io.StringIO("unit_id,z1,y\na,1,1\nb,1,2\nc,2,3\n"))
    targets, skipped = point_effect_targets(d)
    assert targets == []
    assert [k.label() for k, _ in skipped] == ["z1=1", "z1=2"]
    assert all("control arm unobserved" in why for _, why in skipped)
