from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spfilter.metrics import (
    MetricReport,
    binned_rmse,
    compute_miou,
    compute_rel,
    compute_rmse,
    depth_report,
    write_reports,
)

finite = st.floats(-10, 10, allow_nan=False)


def test_rmse_example():
    assert compute_rmse([1.3, 1.6], [1.0, 2.0]) == pytest.approx(np.sqrt(0.125), abs=1e-12)
    assert compute_rmse([1.3, 1.6], [1.0, 2.0]) == pytest.approx(0.3536, abs=5e-5)


def test_rel_example():
    assert compute_rel([2.2], [2.0]) == pytest.approx(0.1)


def test_rel_rejects_zero_truth():
    with pytest.raises(ValueError, match="zero"):
        compute_rel([1.0, 2.0], [0.0, 2.0])


def test_empty_mask_raises():
    with pytest.raises(ValueError, match="no elements"):
        compute_rmse([1.0], [1.0], mask=[False])


def test_miou_identical_and_complementary():
    m = np.array([[0, 1], [1, 0]])
    assert compute_miou(m, m) == 1.0
    assert compute_miou(m, 1 - m) == 0.0


def test_miou_half_overlap():
    pred = np.zeros((4, 6), dtype=int)
    truth = np.zeros((4, 6), dtype=int)
    pred[:, :3] = 1
    truth[:, :4] = 1
    # class 1: 3/4 columns, class 0: 2/3 columns
    assert compute_miou(pred, truth) == pytest.approx((3 / 4 + 2 / 3) / 2, abs=1e-12)


def test_miou_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        compute_miou(np.zeros((2, 2)), np.zeros((2, 3)))


@given(arrays(float, 20, elements=finite), arrays(float, 20, elements=finite))
def test_rmse_dominates_mean_abs_error(p, t):
    assert compute_rmse(p, t) >= np.mean(np.abs(p - t)) - 1e-12


@given(arrays(np.int8, (5, 7), elements=st.integers(0, 1)),
       arrays(np.int8, (5, 7), elements=st.integers(0, 1)))
def test_miou_symmetric_and_bounded(a, b):
    v = compute_miou(a, b)
    assert v == compute_miou(b, a)
    assert 0.0 <= v <= 1.0


@given(arrays(float, 30, elements=finite), arrays(float, 30, elements=finite),
       arrays(float, 30, elements=st.floats(0, 4.999)))
def test_bins_recombine(p, t, d):
    bins = binned_rmse(p, t, d, np.arange(0.0, 5.0 + 1e-9, 0.5))
    assert sum(n for *_, n in bins) == 30
    sse = sum(r ** 2 * n for _, _, r, n in bins if n)
    assert np.sqrt(sse / 30) == pytest.approx(compute_rmse(p, t), rel=1e-9, abs=1e-12)


def test_two_pass_rmse_matches_naive():
    rng = np.random.default_rng(0)
    p = 1e3 + rng.normal(size=10_000)
    t = 1e3 + rng.normal(size=10_000)
    naive = np.sqrt(sum((a - b) ** 2 for a, b in zip(p.tolist(), t.tolist())) / len(p))
    assert abs(compute_rmse(p, t) - naive) < 1e-12


def test_depth_report_respects_range_and_validity():
    truth = np.array([1.0, 2.0, 6.0, 3.0])
    pred = np.array([1.1, 2.0, 0.0, 3.0])
    valid = np.array([True, True, True, False])
    rep = depth_report(pred, truth, valid, name="x")
    assert rep.n_pixels == 2
    assert rep.rmse == pytest.approx(np.sqrt(0.01 / 2))
    assert rep.rel == pytest.approx(0.05)
    assert len(rep.distance_bins) == 10
    assert np.isnan(rep.miou)


def test_depth_report_with_masks():
    m = np.array([0, 1, 1])
    rep = depth_report(np.ones(3), np.ones(3), np.ones(3, bool), pred_mask=m, true_mask=m)
    assert rep.miou == 1.0 and rep.rmse == 0.0


def test_summary_and_csv(tmp_path):
    rep = MetricReport(rmse=0.25, rel=0.1, miou=0.9, n_pixels=7, name="spf",
                       distance_bins=[(0.0, 0.5, 0.2, 3)])
    text = rep.summary()
    assert text.startswith("spf: RMSE 0.2500 m")
    assert "[0.0, 0.5) m" in text
    path = tmp_path / "r.csv"
    write_reports(path, [rep, MetricReport(name="raw")])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "name,rmse,rel,miou,n_pixels"
    assert lines[1].split(",") == ["spf", "0.25", "0.1", "0.9", "7"]
    assert len(lines) == 3
