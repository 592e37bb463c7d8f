import csv
import io
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from contactcast.eval_harness import (CSV_FIELDS, NAO_FIELDS, EvalReport, NaoExperimentConfig, box_iou,
                                      center_bias_mask, center_bias_support, classify_nao_by_iou, config_hash,
                                      jaccard, mask_box, parallel_map, run_nao_suite, run_sweep, run_table4,
                                      sweep_trend, topk_accuracy)
from contactcast.forecaster import CorpusConfig, ForecasterConfig, build_corpus
from contactcast.numerics import ShapeError
from contactcast.scene_sim import NONE, SceneConfig


def test_jaccard_examples():
    assert jaccard([[1, 1], [0, 0]], [[1, 0], [1, 0]]) == pytest.approx(1 / 3)
    assert jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    assert jaccard(np.ones((2, 2)), np.zeros((2, 2))) == 0.0
    with pytest.raises(ShapeError):
        jaccard(np.zeros((2, 2)), np.zeros((2, 3)))


@given(arrays(bool, (6, 7)), arrays(bool, (6, 7)))
def test_jaccard_symmetric_and_bounded(a, b):
    v = jaccard(a, b)
    assert v == jaccard(b, a) and 0.0 <= v <= 1.0
    assert jaccard(a, a) == 1.0


def test_topk_accuracy():
    s = [[0.1, 0.5, 0.4]]
    assert topk_accuracy(s, [2], 1) == 0.0
    assert topk_accuracy(s, [2], 2) == 1.0
    for k in (0, 4):
        with pytest.raises(ValueError):
            topk_accuracy(s, [2], k)


@given(arrays(np.float64, (5, 6), elements=st.floats(0, 1)), st.integers(1, 5))
def test_topk_monotone_in_k(s, k):
    labels = np.arange(5) % 6
    assert topk_accuracy(s, labels, k) <= topk_accuracy(s, labels, k + 1)
    assert topk_accuracy(s, labels, 6) == 1.0


def test_center_bias():
    assert center_bias_support(64, 114) == 28
    assert center_bias_support(128, 228) == 55
    m = center_bias_mask(64, 114)
    ys, xs = np.nonzero(m)
    assert ys.mean() == pytest.approx(31.5) and xs.mean() == pytest.approx(56.5)
    assert xs.max() - xs.min() + 1 <= 28 and ys.max() - ys.min() + 1 <= 28
    assert m.sum() == pytest.approx(np.pi * 14 ** 2, rel=0.1)


def test_boxes_and_classification():
    m = np.zeros((20, 20), bool)
    m[2:6, 2:7] = True
    assert mask_box(m) == (2, 2, 6, 5)
    assert mask_box(np.zeros((3, 3))) is None
    assert box_iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    # exact box vs a shifted box: the overlapping one wins
    near = (2, 2, 6, 5)
    far = (4, 2, 8, 5)
    assert box_iou(mask_box(m), near) > box_iou(mask_box(m), far) > 0
    assert classify_nao_by_iou(m, [(far, 3), (near, 7)]) == (7, False)
    assert classify_nao_by_iou(m, []) == (NONE, True)
    assert classify_nao_by_iou(np.zeros((20, 20), bool), [(near, 7)]) == (NONE, False)
    assert classify_nao_by_iou(m, [((15, 15, 18, 18), 2)]) == (NONE, False)


def test_eval_report_csv():
    rep = EvalReport("anticipation")
    rep.add(mode="anticipation", tau_a_or_p=1.0, ablation="fused", top1=0.5, top5=0.9, epoch=3, seed=0,
            config_hash="abc", tool_version="x", extra=1)
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert tuple(rows[0]) == CSV_FIELDS and rows[0]["top1"] == "0.500000"
    assert EvalReport("nao_localization").fields == NAO_FIELDS
    rep.check_ranges()
    rep.add(top1=1.5)
    with pytest.raises(ValueError):
        rep.check_ranges()
    assert rep.mean("top5", ablation="fused") == pytest.approx(0.9)


def test_config_hash_stable():
    a = config_hash(SceneConfig())
    assert a == config_hash(SceneConfig()) and len(a) == 12
    assert a != config_hash(replace(SceneConfig(), fps=25.0))


def _square(x):
    return x * x


def test_parallel_map_keeps_order():
    assert parallel_map(_square, range(5)) == [0, 1, 4, 9, 16]
    assert parallel_map(_square, range(5), jobs=2) == [0, 1, 4, 9, 16]


@pytest.fixture(scope="module")
def small():
    return build_corpus(CorpusConfig(n_train=8, n_val=2, n_test=5))


FAST = ForecasterConfig(epochs=1, appearance_epochs=3, fusion_epochs=3)


def test_sweep_rows(small):
    rep = run_sweep(small, FAST, [0], values=(0.5, 1.0))
    assert len(rep.rows) == 2 * 3
    assert {r["ablation"] for r in rep.rows} == {"graph", "appearance", "fused"}
    rep.check_ranges()
    assert -1.0 <= sweep_trend(rep) <= 1.0
    pred = run_sweep(small, FAST, [0], values=(0.5,), mode="prediction")
    assert {r["mode"] for r in pred.rows} == {"prediction"}


def test_table4_rows(small):
    rep = run_table4(small, FAST, [0, 1])
    assert len(rep.rows) == 3 * 2
    assert {r["ablation"] for r in rep.rows} == {"full", "ao_only", "nao_only"}


def test_nao_suite_tiny():
    sc = SceneConfig(height=32, width=57, object_size=(5, 7), hand_size=3)
    cfg = NaoExperimentConfig(scene=sc, n_train_clips=2, n_test_clips=1, cam_epochs=1, nao_epochs=1,
                              frame_stride=6)
    cfg.predictor = replace(cfg.predictor, height=32, width=57)
    rep = run_nao_suite(cfg, [0])
    assert tuple(rep.fields) == NAO_FIELDS
    assert [r["condition"] for r in rep.rows] == ["ours", "without_cam", "center_bias", "ours"]
    rep.check_ranges()
