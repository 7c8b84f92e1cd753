import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudo2real.confidence import (
    ConfidenceRecord,
    MissingConfidenceError,
    confidence_score,
    quantile,
    quartile_filter,
)
from pseudo2real.errors import DataError
from pseudo2real.manifest import UtteranceRecord


def recs(scores):
    return [ConfidenceRecord(f"u{i}", float(s)) for i, s in enumerate(scores)]


def kept_scores(result, records):
    return sorted(r.score for r in records if r.id in result.kept)


def test_score_is_mean():
    r = UtteranceRecord("u", hypothesis="a b", word_logprobs=(-0.2, -0.4))
    assert confidence_score(r).score == pytest.approx(-0.3, abs=1e-15)
    assert confidence_score(UtteranceRecord("v", hypothesis="a", word_logprobs=(-1.0,))).score == -1.0


def test_score_missing():
    with pytest.raises(MissingConfidenceError) as e:
        confidence_score(UtteranceRecord("u", hypothesis=""))
    assert e.value.code == "missing_confidence"


def test_median_of_eight():
    r = recs(range(1, 9))
    res = quartile_filter(r, "Q2")
    assert res.threshold == 4.5
    assert kept_scores(res, r) == [5, 6, 7, 8]
    assert res.keep_rate == 0.5


def test_upper_quartile_of_four():
    r = recs([1, 2, 3, 4])
    res = quartile_filter(r, "Q3")
    assert res.threshold == 3.25
    assert kept_scores(res, r) == [4]


@pytest.mark.parametrize("level", ["Q1", "Q2", "Q3"])
def test_constant_scores_all_kept(level):
    r = recs([-0.7] * 5)
    res = quartile_filter(r, level)
    assert res.threshold == -0.7
    assert len(res.kept) == 5


def test_errors():
    with pytest.raises(DataError):
        quartile_filter([], "Q1")
    with pytest.raises(DataError):
        quartile_filter(recs([1.0]), "Q4")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-20, 0, allow_nan=False), min_size=1, max_size=60))
def test_nesting_and_nonempty(scores):
    r = recs(scores)
    q1, q2, q3 = (quartile_filter(r, lv) for lv in ("Q1", "Q2", "Q3"))
    assert q3.kept <= q2.kept <= q1.kept
    assert len(q3.kept) >= 1
    assert q1.threshold <= q2.threshold <= q3.threshold


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40), st.sampled_from([0.25, 0.5, 0.75]))
def test_quantile_agrees_with_numpy_linear(xs, q):
    assert quantile(xs, q) == pytest.approx(float(np.quantile(xs, q, method="linear")), rel=1e-12, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-50, 0), min_size=1, max_size=30), st.randoms())
def test_permutation_invariant(scores, rnd):
    r = recs(scores)
    shuffled = list(r)
    rnd.shuffle(shuffled)
    for lv in ("Q1", "Q2", "Q3"):
        a, b = quartile_filter(r, lv), quartile_filter(shuffled, lv)
        assert a.threshold == b.threshold and a.kept == b.kept
