import pytest

from seqeffects import PatternError
from seqeffects.exprlang import (
    CovariateView,
    SparseTreatmentView,
    TreatmentView,
    compile_expr,
)


def env(z=(), x=(), **scalars):
    e = dict(scalars)
    e["z"] = TreatmentView(z, PatternError, "is not determined here")
    e["x"] = CovariateView(x, PatternError, "is not determined here")
    return e


def test_arithmetic_and_names():
    expr = compile_expr("2 + 3 * t - T")
    assert expr.eval_number(env(t=4, T=5)) == pytest.approx(9.0)
    assert expr.uses == {"t", "T"}


def test_comparisons_and_chains():
    assert compile_expr("1 <= t < 3").eval_predicate(env(t=2, T=3))
    assert not compile_expr("1 <= t < 3").eval_predicate(env(t=3, T=3))
    assert compile_expr("t != 2 or T == 2").eval_predicate(env(t=1, T=3))


def test_boolean_operators():
    e = env(t=2, T=3, z=(1, 0), x=((1,),))
    assert compile_expr("not z[2] and z[1] == 1").eval_predicate(e)
    assert compile_expr("z[1] == 1 and x[1][1] == 1").eval_predicate(e)


def test_history_lookups():
    e = env(t=2, T=2, z=(1, 0), x=((3, 7),))
    assert compile_expr("z[1]").eval_number(e) == 1.0
    assert compile_expr("z[2]").eval_number(e) == 0.0
    assert compile_expr("x[1][2]").eval_number(e) == 7.0


def test_positions_below_one_read_as_reference():
    e = env(t=1, T=2, z=(1,), x=())
    assert compile_expr("z[0]").eval_number(e) == 0.0
    assert compile_expr("z[t - 1]").eval_number(e) == 0.0
    assert compile_expr("x[0][1]").eval_number(e) == 0.0


def test_positions_beyond_the_prefix_error():
    e = env(t=1, T=2, z=(1,), x=())
    with pytest.raises(PatternError, match="not determined"):
        compile_expr("z[2]").eval_number(e)
    with pytest.raises(PatternError, match="not determined"):
        compile_expr("x[1][1]").eval_number(e)


def test_covariate_component_bounds():
    e = env(t=2, T=2, z=(1, 0), x=((3, 7),))
    with pytest.raises(PatternError, match="outside 1..2"):
        compile_expr("x[1][3]").eval_number(e)
    with pytest.raises(PatternError, match="outside 1..2"):
        compile_expr("x[1][0]").eval_number(e)


def test_non_integer_position_rejected_at_eval():
    e = env(t=1, T=1, z=(1,), x=())
    with pytest.raises(PatternError, match="position must be an integer"):
        compile_expr("z[1 < 2]").eval_number(e)


@pytest.mark.parametrize(
    "bad",
    [
        "__import__('os')",
        "t.denominator",
        "min(t, T)",
        "[t for t in (1,)]",
        "z",
        "x",
        "x[1]",
        "z[1][1]",
        "t / 2",
        "t ** 2",
        "lambda: 1",
        "q + 1",
        "(1, 2)",
        "\"s\"",
    ],
)
def test_rejected_sources(bad):
    with pytest.raises(PatternError):
        compile_expr(bad)


def test_bare_history_names_get_helpful_messages():
    with pytest.raises(PatternError, match=r"z must be indexed, like z\[1\]"):
        compile_expr("z + 1")
    with pytest.raises(PatternError, match=r"x must be indexed twice, like x\[1\]\[1\]"):
        compile_expr("x + 1")
    with pytest.raises(PatternError, match=r"needs a component index"):
        compile_expr("x[2] > 0")


def test_custom_name_set():
    expr = compile_expr("u * 2", allowed_names={"t", "T", "u"})
    assert expr.eval_number(env(t=1, T=1, u=3)) == 6.0
    with pytest.raises(PatternError):
        compile_expr("u * 2")


def test_sparse_view_reports_why_a_position_is_gone():
    view = SparseTreatmentView(
        {3: 1}, PatternError, lambda s: f"z[{s}] was pooled away"
    )
    assert view[3] == 1
    assert view[0] == 0
    with pytest.raises(PatternError, match=r"z\[1\] was pooled away"):
        view[1]


def test_empty_and_malformed_sources():
    with pytest.raises(PatternError):
        compile_expr("")
    with pytest.raises(PatternError):
        compile_expr("t +")
