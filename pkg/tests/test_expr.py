import pytest
from hypothesis import given, settings

from nesyarith import expr as ex
from conftest import chain_exprs
from oracles import eval_text, innermost_by_regex


class TestParse:
    def test_paper_example(self):
        assert ex.parse("((21-6)*2)") == ex.Node(
            "*", ex.Node("-", ex.Leaf(21), ex.Leaf(6)), ex.Leaf(2)
        )

    def test_atomic(self):
        assert ex.parse("7") == ex.Leaf(7)

    def test_negative_atomic(self):
        assert ex.parse("-4") == ex.Leaf(-4)

    def test_not_chain_form(self):
        with pytest.raises(ex.NotChainFormError):
            ex.parse("((3+4)*(3+4))")

    def test_permissive_mode_accepts_general_trees(self):
        tree = ex.parse("((3+4)*(3+4))", require_chain=False)
        assert ex.evaluate(tree) == 49

    @pytest.mark.parametrize(
        "bad",
        ["", "(1+2", "1+2", "(1+)", "(+2)", "(1 + 2)", "(1+2))", "((1+2)",
         "()", "(1/2)", "--3", "3-", "(1+2)x", "2 ", "(1+2)(3+4)"],
    )
    def test_syntax_errors(self, bad):
        with pytest.raises(ex.ExprSyntaxError):
            ex.parse(bad)


class TestRender:
    def test_paper_example(self):
        e = ex.Node("*", ex.Node("-", ex.Leaf(21), ex.Leaf(6)), ex.Leaf(2))
        assert ex.render(e) == "((21-6)*2)"

    def test_negative_leaf(self):
        assert ex.render(ex.Leaf(-4)) == "-4"

    def test_single_op(self):
        assert ex.render(ex.Node("+", ex.Leaf(4), ex.Leaf(5))) == "(4+5)"


class TestEvaluate:
    @pytest.mark.parametrize(
        "text,value",
        [("((2+4)*6)", 36), ("0", 0), ("(((3*2)-2)+5)", 9),
         ("(-4*3)", -12), ("(99*99)", 9801)],
    )
    def test_values(self, text, value):
        assert ex.evaluate(ex.parse(text)) == value


class TestInnermost:
    def test_paper_example(self):
        ref = ex.innermost(ex.parse("((21-6)*2)"))
        assert ref == ex.InnermostRef("(21-6)", 15)

    def test_whole_expression(self):
        assert ex.innermost(ex.parse("(4+5)")) == ex.InnermostRef("(4+5)", 9)

    def test_deeper(self):
        assert ex.innermost(ex.parse("(((3*2)-2)+5)")) == ex.InnermostRef("(3*2)", 6)

    def test_leaf_raises(self):
        with pytest.raises(ex.IsLeafError):
            ex.innermost(ex.Leaf(3))


class TestSolveStep:
    def test_paper_example(self):
        assert ex.solve_step(ex.parse("((21-6)*2)")) == ex.parse("(15*2)")

    def test_single(self):
        assert ex.solve_step(ex.parse("(4+5)")) == ex.Leaf(9)

    def test_chain(self):
        assert ex.solve_step(ex.parse("(((3*2)-2)+5)")) == ex.parse("((6-2)+5)")

    def test_leaf_raises(self):
        with pytest.raises(ex.IsLeafError):
            ex.solve_step(ex.Leaf(1))


class TestSolutionChain:
    def test_example(self):
        chain = ex.solution_chain(ex.parse("(((3*2)-2)+5)"))
        assert [ex.render(e) for e in chain] == [
            "(((3*2)-2)+5)", "((6-2)+5)", "(4+5)", "9",
        ]

    def test_leaf(self):
        assert ex.solution_chain(ex.Leaf(7)) == [ex.Leaf(7)]

    def test_two_ops(self):
        chain = ex.solution_chain(ex.parse("((21-6)*2)"))
        assert [ex.render(e) for e in chain] == ["((21-6)*2)", "(15*2)", "30"]


class TestNestingDepth:
    @pytest.mark.parametrize(
        "text,depth", [("((21-6)*2)", 2), ("5", 0), ("(((3*2)-2)+5)", 3)]
    )
    def test_depths(self, text, depth):
        assert ex.nesting_depth(ex.parse(text)) == depth


class TestSubstituteOnce:
    def test_paper_pair(self):
        assert ex.substitute_once("((21-6)*2)", "(21-6)", "15") == "(15*2)"

    def test_full_replacement(self):
        assert ex.substitute_once("(4+5)", "(4+5)", "9") == "9"

    def test_absent(self):
        with pytest.raises(ex.TargetAbsentError):
            ex.substitute_once("((1+1)+2)", "(9-9)", "0")

    def test_leftmost(self):
        assert ex.substitute_once("(1+1)(1+1)", "(1+1)", "2") == "2(1+1)"

    def test_empty_target(self):
        with pytest.raises(ValueError):
            ex.substitute_once("x", "", "y")


@given(chain_exprs())
def test_round_trip(e):
    assert ex.parse(ex.render(e)) == e


@given(chain_exprs())
def test_step_soundness(e):
    assert ex.evaluate(ex.solve_step(e)) == ex.evaluate(e)


@given(chain_exprs())
@settings(max_examples=60)
def test_chain_length_and_final_value(e):
    chain = ex.solution_chain(e)
    assert len(chain) == ex.nesting_depth(e) + 1
    assert isinstance(chain[-1], ex.Leaf)
    assert chain[-1].value == ex.evaluate(e)


@given(chain_exprs(leaf_min=0))
@settings(max_examples=60)
def test_matches_python_eval_and_regex_innermost(e):
    text = ex.render(e)
    assert ex.evaluate(e) == eval_text(text)
    sub, value = innermost_by_regex(text)
    ref = ex.innermost(e)
    assert (ref.subexpr_text, ref.result) == (sub, value)


@given(chain_exprs())
@settings(max_examples=60)
def test_substitution_shortens(e):
    text = ex.render(e)
    ref = ex.innermost(e)
    out = ex.substitute_once(text, ref.subexpr_text, str(ref.result))
    assert len(out) < len(text)
    assert ex.evaluate(ex.parse(out, require_chain=False)) == ex.evaluate(e)
