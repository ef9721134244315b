import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from extrapnet.datagen import gen_prefix_dataset, prefix_target
from extrapnet.evaluation import (CSV_COLUMNS, EvalReport, Trial, class1_prob, confidence, dataset_accuracy,
                                  exact_match, model_id_for, predict_batch, select_best_iteration,
                                  standard_error, sweep)
from extrapnet.nets import IterationTrace, NetSpec, build


def logits_for(target, margin=30.0):
    t = np.asarray(target, dtype=float)
    return np.stack([(1 - t) * margin, t * margin])


def test_confidence_uniform_and_saturated():
    assert confidence(np.zeros((2, 7)), "prefix") == pytest.approx(0.5)
    assert confidence(logits_for([0, 1, 1], 800.0), "prefix") == pytest.approx(1.0)
    assert confidence(np.zeros((2, 3, 3)), "maze") == pytest.approx(0.5)


def test_confidence_hand_two_positions():
    z = np.array([[0.0, 2.0], [math.log(3.0), 0.0]])
    # position 0: p1 = 3/4; position 1: p0 = sigmoid(2)
    want = (0.75 + 1 / (1 + math.exp(-2))) / 2
    assert confidence(z, "prefix") == pytest.approx(want, rel=1e-12)


def test_chess_confidence_top_two():
    z = np.zeros((2, 8, 8))
    z[1] = -5.0
    z[1, 0, 0] = 5.0
    z[1, 3, 3] = 0.0
    want = (1 / (1 + math.exp(-5)) + 0.5) / 2
    assert confidence(z, "chess") == pytest.approx(want, rel=1e-12)


def make_trace(confs):
    # per-iteration logits whose prefix confidence equals the given values
    out = []
    for c in confs:
        d = math.log(c / (1 - c))
        out.append(np.array([[0.0], [d]]))
    return IterationTrace(out)


def test_select_best_iteration_examples():
    assert select_best_iteration(make_trace([0.6, 0.7, 0.8, 0.9]), "prefix")[0] == 4
    assert select_best_iteration(make_trace([0.7]), "prefix")[0] == 1
    peak = [0.6, 0.62, 0.64, 0.7, 0.75, 0.8, 0.95, 0.9, 0.85]
    assert select_best_iteration(make_trace(peak), "prefix")[0] == 7


def test_select_ties_go_to_earliest():
    trace = IterationTrace([np.zeros((2, 3)), np.ones((2, 3)) * 0.0, np.zeros((2, 3))])
    assert select_best_iteration(trace, "prefix")[0] == 1


def test_select_empty_trace():
    with pytest.raises(ValueError):
        select_best_iteration(IterationTrace([]), "prefix")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.51, 0.99), min_size=1, max_size=12))
def test_selected_iteration_has_max_confidence(confs):
    trace = make_trace(confs)
    idx, z = select_best_iteration(trace, "prefix")
    assert trace.confidences[idx - 1] == max(trace.confidences)
    assert z is trace.logits[idx - 1]


def test_exact_match_figure1():
    bits = [1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1]
    target = prefix_target(bits)
    assert exact_match(logits_for(target), target, "prefix")
    flipped = target.copy()
    flipped[5] ^= 1
    assert not exact_match(logits_for(flipped), target, "prefix")


def test_exact_match_maze_pixel():
    target = np.zeros((5, 5), dtype=np.uint8)
    target[1, 1:4] = 1
    assert exact_match(logits_for(target), target, "maze")
    wrong = target.copy()
    wrong[3, 3] = 1
    assert not exact_match(logits_for(wrong), target, "maze")


def test_exact_match_chess_pairs():
    target = np.zeros((8, 8), dtype=np.uint8)
    target[5, 5] = target[1, 5] = 1
    z = np.zeros((2, 8, 8))
    z[1, 5, 5], z[1, 1, 5], z[1, 0, 0] = 3.0, 2.0, 1.0
    assert exact_match(z, target, "chess")
    # correct pair ranked 1st and 3rd
    z[1, 1, 5], z[1, 0, 0] = 1.0, 2.0
    assert not exact_match(z, target, "chess")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=20).filter(lambda v: len(v) % 2 == 0))
def test_argmax_equals_threshold(vals):
    z = np.array(vals).reshape(1, 2, -1)
    # below ~1e-12 the float64 logistic rounds to exactly 0.5
    assume(np.all(np.abs(z[:, 1] - z[:, 0]) > 1e-12))
    assert np.array_equal(predict_batch(z, "prefix"), (class1_prob(z) > 0.5).astype(np.uint8))


@settings(max_examples=50, deadline=None)
@given(st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_class1_prob_stable(a, b):
    p = class1_prob(np.array([[a], [b]])[None])
    assert np.isfinite(p).all() and 0.0 <= p[0, 0] <= 1.0


def test_standard_error_hand():
    # values 0.5, 0.6, 0.7: sample std 0.1, stderr 0.1 / sqrt(3)
    assert standard_error([0.5, 0.6, 0.7]) == pytest.approx(0.1 / math.sqrt(3))
    assert standard_error([0.4]) == 0.0


@pytest.fixture(scope="module")
def toy_models():
    spec = NetSpec("prefix", width=8, iterations=3, head_channels=(8, 4, 2))
    data = gen_prefix_dataset(10, 64, seed=3)
    return [Trial(build(spec, seed=s), s, True) for s in range(3)], data


def test_sweep_m_equals_k_matches_plain_accuracy(toy_models):
    trials, data = toy_models
    rep = sweep(trials, data, range(1, 7), "toy", "t10")
    for t in trials:
        curve = rep.accuracy_curve(t.seed)
        assert sorted(curve) == [1, 2, 3, 4, 5, 6]
        assert curve[3] == dataset_accuracy(t.net, data, normalize=True)
    summary = {r["m"]: r for r in rep.summary()}
    accs = [rep.accuracy_curve(t.seed)[4] for t in trials]
    assert summary[4]["accuracy"] == pytest.approx(np.mean(accs))
    assert summary[4]["stderr"] == pytest.approx(standard_error(accs))


def test_sweep_feedforward_single_m(toy_models):
    _, data = toy_models
    ff = build(NetSpec("prefix", "feedforward", width=8, iterations=3, head_channels=(8, 4, 2)))
    rep = sweep(Trial(ff, 0, True), data, [3], model_id_for(ff), "t10")
    assert [r["m"] for r in rep.rows] == [3, 3]
    with pytest.raises(ValueError):
        sweep(Trial(ff, 0, True), data, [3, 4], "x", "t10")


def test_sweep_rejects_m_zero(toy_models):
    trials, data = toy_models
    with pytest.raises(ValueError):
        sweep(trials, data, [0, 1], "toy", "t")


def test_sweep_deterministic_and_worker_invariant(toy_models):
    trials, data = toy_models
    a = sweep(trials, data, [1, 3, 5], "toy", "t", batch_size=16)
    b = sweep(trials, data, [1, 3, 5], "toy", "t", batch_size=16, workers=3)
    strip = lambda rep: [{k: v for k, v in r.items() if k != "wall_seconds"} for r in rep.rows]
    assert strip(a) == strip(b)
    assert a.best_iteration_hist == b.best_iteration_hist


def test_best_confidence_at_m1_equals_fixed(toy_models):
    trials, data = toy_models
    rep = sweep(trials, data, [1, 2], "toy", "t")
    for r in rep.per_seed():
        if r["m"] == 1:
            assert r["best_confidence_accuracy"] == r["accuracy"]


def test_report_csv_round_trip(toy_models, tmp_path):
    trials, data = toy_models
    rep = sweep(trials, data, [2, 3], "prefix-recurrent-d16", "t10")
    rep.to_csv(tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == CSV_COLUMNS
    back = EvalReport.from_csv(tmp_path / "r.csv")
    assert len(back.rows) == len(rep.rows)
    for a, b in zip(back.rows, rep.rows):
        assert a["accuracy"] == pytest.approx(b["accuracy"], abs=1e-6)
        assert (a["stderr"] is None) == (b["stderr"] is None)


def test_report_schema_mismatch(tmp_path):
    (tmp_path / "bad.csv").write_text("model_id,seed\nx,1\n")
    with pytest.raises(ValueError):
        EvalReport.from_csv(tmp_path / "bad.csv")
