"""Combined prediction, metrics identities, sweeps and selection rules."""

import numpy as np
import pytest

from resmem import evalsuite, knn, model, residual
from resmem.datastore import EmbeddingDataset
from resmem.errors import NoFeasiblePoint, TemperatureMismatch
from resmem.evalsuite import MaxAccuracy, MaxTprFprCap, Metrics
from resmem.residual import HyperParams
from resmem.synth import demo_synthetic


@pytest.fixture(scope="module")
def setup():
    ds = demo_synthetic(seed=5, n=150, d=6, c=4)
    p = model.init_mlp(6, 5, 4, seed=3)
    cfg = model.TrainConfig(epochs=3, batch_size=16, seed=3)
    p, _ = model.train_sgd(p, ds.embeddings, ds.labels, cfg)
    emb, _ = evalsuite.model_outputs(p, ds)
    index = knn.build_exact_index(emb)
    store = evalsuite.make_store(p, ds, T=1.0)
    return ds, p, emb, index, store


class TestPredictBase:
    def test_uniform_logits_tie_to_zero(self):
        p = model.MlpParams(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 4)), np.zeros(4))
        probs, label = evalsuite.predict_base(p, np.ones(3), T=1.0)
        assert label == 0
        np.testing.assert_allclose(probs, 0.25)

    def test_temperature_does_not_change_label(self, setup):
        ds, p, *_ = setup
        for i in range(0, 50, 7):
            labels = {evalsuite.predict_base(p, ds.embeddings[i], T)[1]
                      for T in (0.2, 1.0, 3.7)}
            assert len(labels) == 1

    def test_composition_oracle(self, setup):
        ds, p, *_ = setup
        x = ds.embeddings[3]
        probs, label = evalsuite.predict_base(p, x, T=1.4)
        _, logits = model.forward(p, np.asarray(x, dtype=np.float64))
        ref = residual.softmax_temp(logits, 1.4)
        np.testing.assert_allclose(probs, ref, atol=1e-15)
        assert label == int(np.argmax(ref))


class TestPredictResmem:
    def test_zero_store_equals_base(self, setup):
        ds, p, emb, index, _ = setup
        zero = residual.build_store(np.zeros((ds.n, ds.c), dtype=np.float32), ds.c, 1.0)
        hp = HyperParams(k=3, sigma=0.7, temperature=1.0)
        for i in range(0, 40, 5):
            scores, label = evalsuite.predict_resmem(p, index, zero, ds.embeddings[i], hp)
            probs, base_label = evalsuite.predict_base(p, ds.embeddings[i], T=1.0)
            assert label == base_label
            np.testing.assert_allclose(scores, probs, atol=1e-12)

    def test_training_row_memorized(self, setup):
        ds, p, emb, index, store = setup
        hp = HyperParams(k=1, sigma=0.5, temperature=1.0)
        # pick rows with a unique embedding
        _, first = np.unique(emb, axis=0, return_index=True)
        for i in list(first[:20]):
            scores, label = evalsuite.predict_resmem(p, index, store, ds.embeddings[i], hp)
            assert label == int(ds.labels[i])
            onehot = np.zeros(ds.c)
            onehot[ds.labels[i]] = 1.0
            np.testing.assert_allclose(scores, onehot, atol=1e-5)

    def test_dense_store_scores_sum_to_one(self, setup):
        ds, p, emb, index, store = setup
        hp = HyperParams(k=5, sigma=0.7, temperature=1.0)
        rng = np.random.default_rng(6)
        for _ in range(10):
            x = rng.standard_normal(ds.d).astype(np.float32)
            scores, _ = evalsuite.predict_resmem(p, index, store, x, hp)
            assert abs(scores.sum() - 1.0) <= 1e-5

    def test_matches_naive_recomputation(self, setup):
        ds, p, emb, index, store = setup
        hp = HyperParams(k=4, sigma=0.8, temperature=1.0)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal(ds.d).astype(np.float32)
            scores, label = evalsuite.predict_resmem(p, index, store, x, hp)
            hidden, logits = model.forward(p, np.asarray(x, dtype=np.float64))
            ref = residual.softmax_temp(logits, 1.0) + knn.knn_residual(
                index, store, hidden.astype(np.float32), hp
            )
            np.testing.assert_allclose(scores, ref, atol=1e-12)
            assert label == int(np.argmax(ref))

    def test_temperature_mismatch(self, setup):
        ds, p, emb, index, store = setup
        hp = HyperParams(k=1, sigma=0.5, temperature=1.7)
        with pytest.raises(TemperatureMismatch):
            evalsuite.predict_resmem(p, index, store, ds.embeddings[0], hp)

    def test_float32_equal_temperature_accepted(self, setup):
        ds, p, emb, index, _ = setup
        # 1.4 is not exactly representable in f32; the store quantizes its
        # build temperature, and the check must still accept the same 1.4
        store = evalsuite.make_store(p, ds, T=1.4)
        hp = HyperParams(k=1, sigma=0.5, temperature=1.4)
        evalsuite.predict_resmem(p, index, store, ds.embeddings[0], hp)


class TestMetrics:
    def test_count_identities(self):
        m = Metrics.from_counts(
            n_base_correct=61, n_resmem_correct=70, n_tp=12, n_fp=3, n_eval=100
        )
        assert m.n_resmem_correct - m.n_base_correct == m.n_tp - m.n_fp
        assert m.gain == pytest.approx(m.tpr - m.fpr, abs=1e-15)
        assert m.gain == pytest.approx(m.acc_resmem - m.acc_base, abs=1e-15)
        assert m.tpr + m.fpr <= 1.0

    def test_published_row_arithmetic(self):
        m = Metrics.from_rates(acc_base=0.5646, tpr=0.0589, fpr=0.0270)
        assert m.gain == pytest.approx(0.0319, abs=1e-9)


class TestEvaluate:
    def test_zero_store_gives_zero_gain(self, setup):
        ds, p, emb, index, _ = setup
        zero = residual.build_store(np.zeros((ds.n, ds.c), dtype=np.float32), ds.c, 1.0)
        m = evalsuite.evaluate(p, index, zero, ds, HyperParams(k=3, sigma=0.7, temperature=1.0))
        assert m.tpr == 0.0 and m.fpr == 0.0 and m.gain == 0.0
        assert m.acc_base == m.acc_resmem

    def test_hand_tally(self):
        # 4 examples, c=2; craft logits so the base prediction is fixed,
        # and residuals so the combined prediction is known.
        emb = np.array([[0.0], [10.0], [20.0], [30.0]], dtype=np.float32)
        labels = np.array([0, 0, 1, 1], dtype=np.uint32)
        # base logits: predicts 0, 1, 1, 0 -> base correct on rows 0, 2
        logits = np.array([[2.0, 0.0], [0.0, 2.0], [0.0, 2.0], [2.0, 0.0]])
        p = model.MlpParams(
            w1=np.array([[1.0]]), b1=np.zeros(1),
            w2=np.zeros((1, 2)), b2=np.zeros(2),
        )
        # identity embedding: hidden = x (positive inputs), logits all zero;
        # override per-row behavior through the residual store instead.
        ds = EmbeddingDataset(embeddings=emb, c=2,
                              logits=logits.astype(np.float32), labels=labels)
        store = residual.compute_residuals(ds, T=1.0)
        index = knn.build_exact_index(emb)
        # with zero model logits the combined score equals 0.5 + r_i at each
        # training row, whose argmax is the true label -> resmem correct on all
        hp = HyperParams(k=1, sigma=0.5, temperature=1.0)
        m = evalsuite.evaluate(p, index, store, ds, hp)
        # base (zero logits) predicts label 0 everywhere: correct on rows 0, 1
        assert m.n_base_correct == 2
        assert m.n_resmem_correct == 4
        assert m.n_tp == 2 and m.n_fp == 0
        assert m.gain == pytest.approx(0.5)

    def test_threads_do_not_change_result(self, setup):
        ds, p, emb, index, store = setup
        hp = HyperParams(k=5, sigma=0.7, temperature=1.0)
        a = evalsuite.evaluate(p, index, store, ds, hp, threads=1)
        b = evalsuite.evaluate(p, index, store, ds, hp, threads=8)
        assert a == b


class TestSweep:
    def _split(self, seed=0):
        ds = demo_synthetic(seed=seed, n=200, d=5, c=4)
        return ds.subset(np.arange(0, 150)), ds.subset(np.arange(150, 200))

    def _model(self, train):
        p = model.init_mlp(train.d, 4, train.c, seed=1)
        p, _ = model.train_sgd(
            p, train.embeddings, train.labels,
            model.TrainConfig(epochs=2, batch_size=16, seed=1),
        )
        return p

    def test_singleton_grid(self):
        train, val = self._split()
        p = self._model(train)
        res = evalsuite.sweep(p, train, val, ks=[3], sigmas=[0.7], temps=[1.0],
                              rule=MaxAccuracy())
        assert len(res.rows) == 1 and res.selected == 0

    def test_max_accuracy_is_argmax(self):
        train, val = self._split(1)
        p = self._model(train)
        res = evalsuite.sweep(p, train, val, ks=[1, 5], sigmas=[0.3, 1.0],
                              temps=[0.7, 1.4], rule=MaxAccuracy())
        best = res.best.metrics.acc_resmem
        assert all(r.metrics.acc_resmem <= best for r in res.rows)

    def test_cap_rule_respects_cap(self):
        train, val = self._split(2)
        p = self._model(train)
        res = evalsuite.sweep(p, train, val, ks=[1, 5, 15], sigmas=[0.3, 1.0],
                              temps=[1.0], rule=MaxTprFprCap(cap=0.05))
        assert res.best.metrics.fpr < 0.05
        feasible = [r for r in res.rows if r.metrics.fpr < 0.05]
        assert res.best.metrics.tpr == max(r.metrics.tpr for r in feasible)

    def test_no_feasible_point(self):
        train, val = self._split(3)
        p = self._model(train)
        with pytest.raises(NoFeasiblePoint):
            evalsuite.sweep(p, train, val, ks=[1], sigmas=[0.5], temps=[1.0],
                            rule=MaxTprFprCap(cap=-1.0))

    def test_tie_breaks_lexicographically(self):
        train, val = self._split(4)
        p = self._model(train)
        # duplicate grid point: identical metrics, tie must go to the
        # lexicographically smallest (k, sigma, T)
        res = evalsuite.sweep(p, train, val, ks=[7, 7], sigmas=[0.9, 0.9],
                              temps=[1.0], rule=MaxAccuracy())
        chosen = res.best
        same = [r for r in res.rows
                if r.metrics.acc_resmem == chosen.metrics.acc_resmem]
        key = (chosen.hp.k, chosen.hp.sigma, chosen.hp.temperature)
        assert all(key <= (r.hp.k, r.hp.sigma, r.hp.temperature) for r in same)
