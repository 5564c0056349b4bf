import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pedattr.metrics import evaluate, format_table, per_scene_evaluate, write_report


def oracle(pred, labels):
    """Count-enumeration reference with explicit loops."""
    n, m = len(labels), len(labels[0])
    terms = []
    for i in range(m):
        tp = tn = p = q = 0
        for s in range(n):
            if labels[s][i] == 1:
                p += 1
                tp += pred[s][i] == 1
            else:
                q += 1
                tn += pred[s][i] == 0
        if p and q:
            terms.append((tp / p + tn / q) / 2)
    acc = prec = rec = 0.0
    for s in range(n):
        inter = sum(1 for i in range(m) if pred[s][i] == 1 and labels[s][i] == 1)
        union = sum(1 for i in range(m) if pred[s][i] == 1 or labels[s][i] == 1)
        npred = sum(pred[s])
        ntrue = sum(labels[s])
        acc += inter / union if union else 1.0
        prec += inter / npred if npred else (1.0 if ntrue == 0 else 0.0)
        rec += inter / ntrue if ntrue else (1.0 if npred == 0 else 0.0)
    acc, prec, rec = acc / n, prec / n, rec / n
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"mA": sum(terms) / len(terms), "Acc": acc, "Prec": prec, "Recall": rec, "F1": f1}


def test_perfect():
    y = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]])
    r = evaluate(y, y)
    assert r.summary() == {"mA": 1.0, "Acc": 1.0, "Prec": 1.0, "Recall": 1.0, "F1": 1.0}


def test_complement():
    y = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]])
    assert evaluate(1 - y, y).mA == 0.0


def test_small_random_vs_oracle():
    rng = np.random.default_rng(0)
    pred = rng.integers(0, 2, (6, 4))
    y = rng.integers(0, 2, (6, 4))
    y[0] = 1
    y[1] = 0
    got = evaluate(pred, y).summary()
    want = oracle(pred.tolist(), y.tolist())
    assert got == pytest.approx(want, abs=1e-12)


def test_empty_denominator_conventions():
    y = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    pred = np.array([[0, 0], [0, 0], [0, 1], [1, 1]])
    r = evaluate(pred, y)
    # sample 0: empty/empty -> prec 1, rec 1, acc 1; sample 1: prec 0 (no preds, has positives)
    assert r.Prec == pytest.approx((1 + 0 + 1 + 1) / 4)
    assert r.Recall == pytest.approx((1 + 0 + 1 + 1) / 4)


def test_attribute_without_negatives_excluded():
    y = np.array([[1, 0], [1, 1]])
    with pytest.warns(UserWarning, match="excluded"):
        r = evaluate(y, y)
    assert np.isnan(r.per_attribute_mA[0]) and r.mA == 1.0


def test_input_checks():
    with pytest.raises(ValueError, match="shape"):
        evaluate(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ValueError, match="binary"):
        evaluate(np.full((2, 2), 0.5), np.zeros((2, 2)))


matrices = arrays(np.int8, (12, 5), elements=st.integers(0, 1))


@settings(max_examples=60, deadline=None)
@given(matrices, matrices, st.randoms())
def test_invariances(pred, y, rnd):
    y[0], y[1] = 1, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = evaluate(pred, y)
        for v in base.summary().values():
            assert 0.0 <= v <= 1.0
        rows = list(range(12))
        rnd.shuffle(rows)
        cols = list(range(5))
        rnd.shuffle(cols)
        assert evaluate(pred[rows], y[rows]).summary() == pytest.approx(base.summary(), abs=1e-12)
        assert evaluate(pred[:, cols], y[:, cols]).summary() == pytest.approx(base.summary(), abs=1e-12)
        dup = evaluate(np.vstack([pred, pred]), np.vstack([y, y]))
        assert dup.mA == pytest.approx(base.mA, abs=1e-12)
        f1 = 2 * base.Prec * base.Recall / (base.Prec + base.Recall) if base.Prec + base.Recall else 0.0
        assert base.F1 == pytest.approx(f1)


def test_per_scene():
    rng = np.random.default_rng(4)
    pred = rng.integers(0, 2, (40, 6))
    y = rng.integers(0, 2, (40, 6))
    scenes = np.array(["Market", "School"] * 20)
    per = per_scene_evaluate(pred, y, scenes)
    glob = evaluate(pred, y)
    acc = sum(r.Acc * r.n_samples for r in per.values()) / 40
    assert acc == pytest.approx(glob.Acc)
    for s, r in per.items():
        m = scenes == s
        assert r.summary() == pytest.approx(evaluate(pred[m], y[m]).summary())
    single = per_scene_evaluate(pred, y, ["Market"] * 40)
    assert single["Market"].summary() == pytest.approx(glob.summary())
    with pytest.raises(ValueError, match="unknown scene"):
        per_scene_evaluate(pred, y, scenes, known_scenes=["Market"])


def test_report_outputs(tmp_path):
    y = np.array([[1, 0], [0, 1]])
    r = evaluate(y, y)
    table = format_table({"ckpt": r})
    assert "100.00" in table and "mA" in table
    write_report(r, tmp_path / "r.tsv")
    assert (tmp_path / "r.tsv").read_text().splitlines()[0] == "mA\t1.000000"
