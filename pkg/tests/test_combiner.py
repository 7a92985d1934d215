import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesyarith import combiner as cb
from oracles import combiner_oracle, multisets_of

INPUT = "((21-6)*2)"
# One usable, one well-formed-but-absent, one ill-formed candidate.
ALPHABET = ["15_(21-6)", "7_(9-9)", "garbage"]


class TestParseCandidate:
    def test_paper_example(self):
        cand = cb.parse_candidate("15_(21-6)")
        assert cand.parsed == cb.ParsedCandidate("15", "(21-6)")

    @pytest.mark.parametrize(
        "raw",
        ["15(21-6)", "6_(3*2)x", "", "_(1+1)", "15_", "15_(1+1", "15_1+1",
         "1000_(1+1)", "15_(1000+1)", "15_((1+2)+3)", "15_(1/1)", " 15_(21-6)"],
    )
    def test_ill_formed(self, raw):
        assert cb.parse_candidate(raw).parsed is None

    @pytest.mark.parametrize(
        "raw", ["-5_(3-8)", "0_(0*0)", "999_(99+99)", "15_(-2+17)", "1_(-99--99)"]
    )
    def test_well_formed_edge_cases(self, raw):
        assert cb.parse_candidate(raw).parsed is not None


class TestCombineDefault:
    def test_unanimous(self):
        assert cb.combine_default(INPUT, ["15_(21-6)"] * 100) == cb.Next("(15*2)")

    def test_all_garbage(self):
        out = cb.combine_default(INPUT, ["garbage"] * 100)
        assert out == cb.Halted(cb.HaltReason.NO_WELL_FORMED)

    def test_frequency_beats_correctness(self):
        cands = ["15_(21-6)"] * 40 + ["14_(21-6)"] * 60
        assert cb.combine_default(INPUT, cands) == cb.Next("(14*2)")

    def test_absent_target_is_filtered(self):
        cands = ["7_(9-9)"] * 60 + ["15_(21-6)"] * 40
        assert cb.combine_default(INPUT, cands) == cb.Next("(15*2)")

    def test_tie_break_lexicographic(self):
        cands = ["15_(21-6)", "14_(21-6)"]
        assert cb.combine_default(INPUT, cands) == cb.Next("(14*2)")


class TestCombineAlt:
    def test_modal_ill_formed_halts(self):
        cands = ["garbage"] * 51 + ["15_(21-6)"] * 49
        assert cb.combine_alt(INPUT, cands) == cb.Halted(cb.HaltReason.MODAL_ILL_FORMED)
        assert cb.combine_default(INPUT, cands) == cb.Next("(15*2)")

    def test_modal_absent_target_halts(self):
        cands = ["7_(9-9)"] * 51 + ["15_(21-6)"] * 49
        assert cb.combine_alt(INPUT, cands) == cb.Halted(cb.HaltReason.TARGET_ABSENT)

    def test_agree_when_unanimous(self):
        cands = ["15_(21-6)"] * 10
        assert cb.combine_alt(INPUT, cands) == cb.combine_default(INPUT, cands)

    def test_agree_single_well_formed(self):
        cands = ["15_(21-6)"]
        assert cb.combine_alt(INPUT, cands) == cb.combine_default(INPUT, cands)


def test_exhaustive_brute_force_equivalence():
    """Both variants match an independent oracle on every multiset <= 6."""
    cases = multisets_of(ALPHABET, 6)
    assert len(cases) > 50
    for ms in cases:
        cands = list(ms)
        for alt, fn in ((False, cb.combine_default), (True, cb.combine_alt)):
            got = fn(INPUT, cands)
            want = combiner_oracle(INPUT, cands, alt)
            if isinstance(got, cb.Next):
                assert want == ("next", got.text), (ms, alt)
            else:
                assert want == ("halted", got.reason.value), (ms, alt)


def test_default_halts_implies_alt_halts():
    for ms in multisets_of(ALPHABET, 6):
        if isinstance(cb.combine_default(INPUT, list(ms)), cb.Halted):
            assert isinstance(cb.combine_alt(INPUT, list(ms)), cb.Halted), ms


@given(st.lists(st.sampled_from(ALPHABET), min_size=1, max_size=12), st.randoms())
@settings(max_examples=80)
def test_order_independence(cands, pyrandom):
    shuffled = list(cands)
    pyrandom.shuffle(shuffled)
    assert cb.combine_default(INPUT, cands) == cb.combine_default(INPUT, shuffled)
    assert cb.combine_alt(INPUT, cands) == cb.combine_alt(INPUT, shuffled)


@given(st.lists(st.sampled_from(ALPHABET), min_size=1, max_size=10))
@settings(max_examples=60)
def test_next_is_parseable_and_shorter(cands):
    from nesyarith import expr as ex

    for fn in (cb.combine_default, cb.combine_alt):
        out = fn(INPUT, cands)
        if isinstance(out, cb.Next):
            assert len(out.text) < len(INPUT)
            ex.parse(out.text, require_chain=False)


def test_modal_raw_empty():
    with pytest.raises(ValueError):
        cb.modal_raw([])
