import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from floorcount.errors import InvalidSummary, MalformedDocument
from floorcount.quality import (
    REASONS,
    SegmentationSummary,
    Thresholds,
    decision_log_csv,
    evaluate_filters,
    read_summaries,
    summarize_mask,
)


def summary(b=0.5, v=0.1, sky=0.3, win=True, top_b=0.0, top_v=0.0):
    return SegmentationSummary(b, v, sky, round(1.0 - b - v - sky, 12), top_b, top_v, win)


def reasons(s, t=None):
    return set(evaluate_filters(s, t).reasons)


def test_keep_example():
    d = evaluate_filters(summary(0.5, 0.1, 0.3, True, 0.0, 0.0))
    assert d.keep and d.codes() == ""


def test_low_building():
    assert reasons(summary(b=0.15, v=0.1, sky=0.5)) == {"LowBuilding"}


def test_veg_and_windows_accumulate():
    assert reasons(summary(b=0.21, v=0.75, sky=0.02, win=False)) == {"HighVegetation", "NoWindows"}


def test_boundaries_are_strict():
    assert evaluate_filters(summary(b=0.20, v=0.1, sky=0.5)).keep
    assert evaluate_filters(summary(b=0.25, v=0.70, sky=0.0)).keep
    assert reasons(summary(b=0.1999999, v=0.1, sky=0.5)) == {"LowBuilding"}
    assert reasons(summary(b=0.25, v=0.7000001, sky=0.0)) == {"HighVegetation"}
    assert evaluate_filters(summary(top_b=0.5, top_v=0.5)).keep


def test_truth_table_all_32_combinations():
    # top-band thresholds lowered to 0.3 so both top rules can fire at once
    # (two disjoint shares of the same band cannot both exceed 0.5)
    t = Thresholds(top_building=0.3, top_vegetation=0.3)
    for bits in itertools.product([False, True], repeat=5):
        low, veg, nowin, trunc, occl = bits
        b = 0.10 if low else 0.20
        v = 0.80 if veg else 0.70
        s = summary(b, v, 1.0 - b - v, win=not nowin,
                    top_b=0.45 if trunc else 0.30, top_v=0.45 if occl else 0.30)
        want = {r for r, on in zip(REASONS, bits) if on}
        d = evaluate_filters(s, t)
        assert set(d.reasons) == want
        assert d.keep == (not want)
        assert d.codes() == ";".join(r for r in REASONS if r in want)


def test_top_rules_default_thresholds():
    assert reasons(summary(top_b=0.51)) == {"TruncatedTop"}
    assert reasons(summary(top_v=0.51)) == {"OccludedTop"}
    assert reasons(summary(top_b=0.5, top_v=0.5)) == set()


@pytest.mark.parametrize("bad", [
    dict(b=1.2, v=0.0, sky=0.0),
    dict(b=-0.1, v=0.5, sky=0.3),
])
def test_invalid_fraction(bad):
    s = SegmentationSummary(bad["b"], bad["v"], bad["sky"], 0.0, 0.0, 0.0, True)
    with pytest.raises(InvalidSummary):
        evaluate_filters(s)


def test_fractions_must_sum_to_one():
    with pytest.raises(InvalidSummary):
        evaluate_filters(SegmentationSummary(0.5, 0.1, 0.1, 0.1, 0.0, 0.0, True))
    evaluate_filters(SegmentationSummary(0.5, 0.1, 0.3, 0.1 + 5e-7, 0.0, 0.0, True))


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_building(b1, b2, v):
    lo, hi = sorted((b1, b2))
    v = min(v, 1.0 - hi)
    s_lo = SegmentationSummary(lo, v, 0.0, 1.0 - lo - v, 0.0, 0.0, True)
    s_hi = SegmentationSummary(hi, v, 0.0, 1.0 - hi - v, 0.0, 0.0, True)
    if "LowBuilding" not in reasons(s_lo):
        assert "LowBuilding" not in reasons(s_hi)


def test_pure_function():
    s = summary(b=0.15, v=0.8, sky=0.0, win=False)
    assert evaluate_filters(s) == evaluate_filters(s)


def test_summarize_mask():
    mask = np.full((100, 10), 2)
    mask[40:, :] = 0
    mask[90:, :5] = 1
    mask[:5, :3] = 0
    s = summarize_mask(mask, True)
    assert s.frac_building == pytest.approx((600 - 50 + 15) / 1000)
    assert s.frac_vegetation == pytest.approx(50 / 1000)
    assert s.top_rows_building_frac == pytest.approx(0.3)
    assert s.top_rows_vegetation_frac == 0.0
    s.validate()


def test_read_summaries_json_and_csv_agree():
    js = ('[{"image_id": "a", "crop_index": 1, "frac_building": 0.5, "frac_vegetation": 0.1, "frac_sky": 0.3,'
          ' "frac_other": 0.1, "top_rows_building_frac": 0.0, "top_rows_vegetation_frac": 0.0,'
          ' "window_detected": true}]')
    cs = ("image_id,crop_index,frac_building,frac_vegetation,frac_sky,frac_other,"
          "top_rows_building_frac,top_rows_vegetation_frac,window_detected\n"
          "a,1,0.5,0.1,0.3,0.1,0.0,0.0,true\n")
    assert read_summaries(js) == read_summaries(cs)
    with pytest.raises(MalformedDocument):
        read_summaries("image_id,frac_building\na,0.5\n")


def test_decision_log():
    items = [(("a", 0), evaluate_filters(summary())),
             (("b", 2), evaluate_filters(summary(b=0.1, v=0.8, sky=0.05, win=False)))]
    assert decision_log_csv(items) == (
        "image_id,crop_index,decision,reasons\n"
        "a,0,keep,\n"
        "b,2,reject,LowBuilding;HighVegetation;NoWindows\n")
