import json

import numpy as np
import pytest

from nesyarith import expr as ex
from nesyarith import hybrid as hy
from nesyarith.combiner import HaltReason, Halted
from nesyarith.datagen import GenConfig, sample_expression


class TestOracleSolve:
    def test_exact(self, rng):
        assert hy.oracle_solve("((21-6)*2)", 3, rng) == ["15_(21-6)"] * 3

    def test_all_malformed(self, rng):
        model = hy.OracleErrorModel(p_malformed=1.0)
        from nesyarith.combiner import parse_candidate

        for raw in hy.oracle_solve("((21-6)*2)", 2, rng, model):
            assert parse_candidate(raw).parsed is None

    def test_wrong_result_rate(self, rng):
        model = hy.OracleErrorModel(p_wrong_result=0.5)
        outs = hy.oracle_solve("((21-6)*2)", 10_000, rng, model)
        correct = sum(1 for raw in outs if raw == "15_(21-6)")
        assert abs(correct / 10_000 - 0.5) < 0.015
        # every wrong result stays within the noise range and is never exact
        for raw in outs:
            value = int(raw.split("_")[0])
            assert value != 15 or raw == "15_(21-6)"
            assert 15 - 3 <= value <= 15 + 3

    def test_wrong_target_absent_but_well_formed(self, rng):
        from nesyarith.combiner import parse_candidate

        model = hy.OracleErrorModel(p_wrong_target=1.0)
        for raw in hy.oracle_solve("((21-6)*2)", 20, rng, model):
            cand = parse_candidate(raw)
            assert cand.parsed is not None
            assert cand.parsed.target_text not in "((21-6)*2)"

    def test_leaf_raises(self, rng):
        with pytest.raises(ex.IsLeafError):
            hy.oracle_solve("42", 1, rng)

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            hy.OracleErrorModel(p_malformed=1.5)


class TestRunHybrid:
    def test_exact_oracle_three_steps(self, rng):
        trace = hy.run_hybrid(
            hy.make_oracle_port(), hy.CombinerVariant.DEFAULT,
            "(((3*2)-2)+5)", 1, rng,
        )
        assert trace.outcome == hy.Solved(9)
        assert len(trace.steps) == 3
        assert [s.input_text for s in trace.steps] == [
            "(((3*2)-2)+5)", "((6-2)+5)", "(4+5)",
        ]

    def test_bare_integer_input(self, rng):
        trace = hy.run_hybrid(
            hy.make_oracle_port(), hy.CombinerVariant.DEFAULT, "42", 1, rng
        )
        assert trace.outcome == hy.Solved(42)
        assert trace.steps == ()

    def test_negative_integer_input(self, rng):
        trace = hy.run_hybrid(
            hy.make_oracle_port(), hy.CombinerVariant.DEFAULT, "-7", 1, rng
        )
        assert trace.outcome == hy.Solved(-7)

    def test_forced_halt(self, rng):
        port = hy.make_oracle_port(hy.OracleErrorModel(p_malformed=1.0))
        trace = hy.run_hybrid(
            port, hy.CombinerVariant.DEFAULT, "((21-6)*2)", 100, rng
        )
        assert trace.outcome == Halted(HaltReason.NO_WELL_FORMED)
        assert len(trace.steps) == 1
        assert trace.steps[0].n_wellformed == 0

    def test_malformed_initial_input(self, rng):
        with pytest.raises(hy.MalformedInitialInputError):
            hy.run_hybrid(hy.make_oracle_port(), hy.CombinerVariant.DEFAULT,
                          "((1+2)", 1, rng)

    def test_iteration_cap(self, rng):
        trace = hy.run_hybrid(
            hy.make_oracle_port(), hy.CombinerVariant.DEFAULT,
            "((21-6)*2)", 1, rng, max_iters=1,
        )
        assert trace.outcome == hy.IterationCapHit()

    def test_error_containment(self, rng):
        # A wrong but well-formed candidate at step one propagates as
        # ordinary arithmetic on the corrupted intermediate, never a crash.
        def port(text, n, _rng):
            if text == "((21-6)*2)":
                return ["14_(21-6)"] * n
            return hy.oracle_solve(text, n, _rng)

        trace = hy.run_hybrid(port, hy.CombinerVariant.DEFAULT, "((21-6)*2)", 1, rng)
        assert trace.outcome == hy.Solved(28)  # evaluate("(14*2)")

    def test_trace_links(self, rng):
        port = hy.make_oracle_port()
        trace = hy.run_hybrid(port, hy.CombinerVariant.DEFAULT,
                              "((21-6)*2)", 5, rng)
        for step, nxt in zip(trace.steps, trace.steps[1:]):
            assert step.output_text == nxt.input_text
        assert trace.steps[0].chosen.raw == "15_(21-6)"

    def test_no_trace_mode(self, rng):
        trace = hy.run_hybrid(hy.make_oracle_port(), hy.CombinerVariant.DEFAULT,
                              "((21-6)*2)", 1, rng, collect_steps=False)
        assert trace.steps == () and trace.outcome == hy.Solved(30)

    def test_alt_variant(self, rng):
        trace = hy.run_hybrid(hy.make_oracle_port(), hy.CombinerVariant.ALT,
                              "((21-6)*2)", 5, rng)
        assert trace.outcome == hy.Solved(30)

    @pytest.mark.parametrize("nesting", [1, 2, 5, 10])
    def test_exactness_all_nestings(self, rng, nesting):
        port = hy.make_oracle_port()
        for _ in range(30):
            e = sample_expression(rng, GenConfig(nesting=nesting))
            text = ex.render(e)
            trace = hy.run_hybrid(port, hy.CombinerVariant.DEFAULT, text, 1, rng)
            assert trace.outcome == hy.Solved(ex.evaluate(e))
            assert len(trace.steps) <= nesting

    def test_json_trace(self, rng):
        trace = hy.run_hybrid(hy.make_oracle_port(), hy.CombinerVariant.DEFAULT,
                              "(4+5)", 2, rng)
        blob = json.loads(trace.to_json())
        assert blob["outcome"] == {"kind": "solved", "value": 9}
        assert blob["steps"][0]["input_text"] == "(4+5)"
        assert blob["steps"][0]["output_text"] == "9"

    def test_write_traces(self, rng, tmp_path):
        traces = [
            hy.run_hybrid(hy.make_oracle_port(), hy.CombinerVariant.DEFAULT,
                          "(4+5)", 1, rng)
        ]
        path = tmp_path / "traces.jsonl"
        hy.write_traces(str(path), traces)
        assert json.loads(path.read_text().splitlines()[0])["outcome"]["value"] == 9


def test_halting_monotonicity_smoke(rng):
    port = hy.make_oracle_port(hy.OracleErrorModel(p_malformed=0.3))
    halted = {}
    exprs = [
        ex.render(sample_expression(rng, GenConfig(nesting=5))) for _ in range(200)
    ]
    for n in (1, 20):
        bad = 0
        for text in exprs:
            trace = hy.run_hybrid(port, hy.CombinerVariant.DEFAULT, text, n, rng,
                                  collect_steps=False)
            bad += isinstance(trace.outcome, Halted)
        halted[n] = bad / len(exprs)
    assert halted[1] > halted[20]
    assert halted[20] < 0.05
