"""Schedule, optimizer, packing, and training-loop behavior."""

import csv

import numpy as np
import pytest

from objforge.autodiff import Tensor
from objforge.corruption import fmatrix_zeros
from objforge.errors import ConfigError, DataError
from objforge.model import named_parameters
from objforge.tokenizer import train_bpe
from objforge.training import (
    OptimizerState,
    TrainConfig,
    TrainResult,
    TraceRow,
    _bag_data,
    _joint_data,
    _pair_data,
    _token_windows,
    make_toy_corpus,
    optimizer_step,
    pack_fixed,
    pack_pairwise,
    pack_single,
    toy_corpus,
    train_objective,
    train_objectives,
    triangular_lr,
    write_trace_csv,
)


@pytest.fixture(scope="module")
def toy():
    return toy_corpus()


@pytest.fixture(scope="module")
def vocab(toy):
    return train_bpe(toy, 64)


def small_tcfg(**kw) -> TrainConfig:
    base = dict(lr_peak=5e-3, warmup_steps=5, total_steps=20, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_zero_warmup_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_peak=1e-3, warmup_steps=0, total_steps=10)

    def test_warmup_beyond_total_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_peak=1e-3, warmup_steps=11, total_steps=10)

    def test_beta_bounds(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_peak=1e-3, warmup_steps=1, total_steps=2, beta1=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(lr_peak=1e-3, warmup_steps=1, total_steps=2, beta2=0.0)

    def test_negative_lr_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_peak=-1e-3, warmup_steps=1, total_steps=2)

    def test_zero_batch_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_peak=1e-3, warmup_steps=1, total_steps=2, batch_size=0)


class TestTriangularLr:
    CFG = TrainConfig(lr_peak=0.8, warmup_steps=10, total_steps=50)

    def test_starts_at_zero(self):
        assert triangular_lr(0, self.CFG) == 0.0

    def test_peak_at_warmup_end(self):
        assert triangular_lr(10, self.CFG) == 0.8

    def test_linear_during_warmup(self):
        assert triangular_lr(5, self.CFG) == pytest.approx(0.4)

    def test_decay_midpoint(self):
        assert triangular_lr(30, self.CFG) == pytest.approx(0.4)

    def test_ends_at_zero(self):
        assert triangular_lr(50, self.CFG) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            triangular_lr(-1, self.CFG)
        with pytest.raises(ConfigError):
            triangular_lr(51, self.CFG)

    def test_warmup_equals_total(self):
        cfg = TrainConfig(lr_peak=0.5, warmup_steps=4, total_steps=4)
        assert triangular_lr(4, cfg) == 0.5
        assert triangular_lr(2, cfg) == pytest.approx(0.25)

    def test_piecewise_monotone(self):
        values = [triangular_lr(s, self.CFG) for s in range(51)]
        assert all(a < b for a, b in zip(values[:10], values[1:11]))
        assert all(a > b for a, b in zip(values[10:50], values[11:51]))


def _named(*arrays):
    return [(f"t{i}", Tensor(a.copy(), requires_grad=True)) for i, a in enumerate(arrays)]


class TestOptimizerSgd:
    def test_textbook_step(self):
        named = _named(np.array([[1.0]]))
        state = OptimizerState(mode="sgd")
        cfg = small_tcfg()
        optimizer_step(named, [np.array([[1.0]])], state, cfg, lr=0.1)
        assert named[0][1].data[0, 0] == pytest.approx(0.9, abs=0)

    def test_no_decay_applied(self):
        # sgd mode is the bare update rule even with decay configured
        named = _named(np.array([[2.0, -3.0]]))
        state = OptimizerState(mode="sgd")
        cfg = small_tcfg(weight_decay=0.5)
        optimizer_step(named, [np.zeros((1, 2))], state, cfg, lr=0.7)
        np.testing.assert_array_equal(named[0][1].data, [[2.0, -3.0]])

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            OptimizerState(mode="rmsprop")


class TestOptimizerAdamw:
    def test_zero_grad_zero_decay_is_identity(self):
        named = _named(np.array([[1.5, -2.5]]), np.array([0.3]))
        state = OptimizerState()
        cfg = small_tcfg(weight_decay=0.0)
        before = [t.data.copy() for _, t in named]
        for _ in range(3):
            optimizer_step(named, [np.zeros((1, 2)), np.zeros(1)], state, cfg, lr=0.1)
        for (_, t), b in zip(named, before):
            np.testing.assert_array_equal(t.data, b)

    def test_first_step_matches_closed_form(self):
        w = np.array([[0.5, -1.0], [2.0, 0.25]])
        g = np.array([[0.3, -0.7], [0.1, 0.9]])
        named = _named(w)
        state = OptimizerState()
        cfg = small_tcfg(weight_decay=0.01, eps=1e-8)
        lr = 0.02
        optimizer_step(named, [g], state, cfg, lr=lr)
        # bias correction makes m-hat = g and v-hat = g*g on the first step
        expect = w - lr * (g / (np.abs(g) + cfg.eps) + cfg.weight_decay * w)
        np.testing.assert_allclose(named[0][1].data, expect, rtol=1e-12)

    def test_rank1_tensors_not_decayed(self):
        named = _named(np.array([[4.0]]), np.array([4.0]))
        state = OptimizerState()
        cfg = small_tcfg(weight_decay=0.5)
        optimizer_step(named, [np.zeros((1, 1)), np.zeros(1)], state, cfg, lr=0.1)
        assert named[0][1].data[0, 0] == pytest.approx(4.0 - 0.1 * 0.5 * 4.0)
        assert named[1][1].data[0] == 4.0

    def test_two_steps_match_hand_rolled_moments(self):
        w0 = np.array([[1.0]])
        g1, g2 = np.array([[0.4]]), np.array([[-0.2]])
        named = _named(w0)
        state = OptimizerState()
        cfg = small_tcfg(weight_decay=0.0)
        lr = 0.05
        optimizer_step(named, [g1], state, cfg, lr=lr)
        optimizer_step(named, [g2], state, cfg, lr=lr)

        b1, b2, eps = cfg.beta1, cfg.beta2, cfg.eps
        m = (1 - b1) * g1
        v = (1 - b2) * g1 * g1
        w = w0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 * g2
        w = w - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        np.testing.assert_allclose(named[0][1].data, w, rtol=1e-12)

    def test_count_mismatch_rejected(self):
        named = _named(np.ones((2, 2)))
        with pytest.raises(ConfigError):
            optimizer_step(named, [], OptimizerState(), small_tcfg(), lr=0.1)

    def test_shape_mismatch_rejected(self):
        named = _named(np.ones((2, 2)))
        with pytest.raises(ConfigError):
            optimizer_step(named, [np.ones(3)], OptimizerState(), small_tcfg(), lr=0.1)


class TestPacking:
    def test_single_layout(self, vocab):
        ids, seg, mask, = pack_single([7, 8, 9], 8, vocab)
        assert list(ids[:5]) == [vocab.bos_id, 7, 8, 9, vocab.eos_id]
        assert list(ids[5:]) == [vocab.pad_id] * 3
        assert mask.tolist() == [True] * 5 + [False] * 3
        assert seg.tolist() == [0] * 8

    def test_single_truncates_tail(self, vocab):
        ids, _, mask = pack_single(list(range(10, 30)), 8, vocab)
        assert list(ids) == [vocab.bos_id, 10, 11, 12, 13, 14, 15, vocab.eos_id]
        assert mask.all()

    def test_pairwise_layout(self, vocab):
        ids, seg, mask = pack_pairwise([7, 8], [9], 10, vocab)
        assert list(ids[:6]) == [vocab.bos_id, 7, 8, vocab.eos_id, 9, vocab.eos_id]
        assert seg.tolist()[:6] == [0, 0, 0, 0, 1, 1]
        assert mask.tolist() == [True] * 6 + [False] * 4
        assert seg.tolist()[6:] == [0] * 4

    def test_pairwise_trims_longer_segment_first(self, vocab):
        left = list(range(10, 14))
        right = list(range(30, 50))
        ids, seg, mask = pack_pairwise(left, right, 12, vocab)
        assert mask.all()
        # left survives intact, right loses its tail
        assert list(ids[1:5]) == left
        kept_right = [t for t, s in zip(ids, seg) if s == 1][:-1]
        assert kept_right == right[: len(kept_right)]

    def test_fixed_crops_and_pads(self, vocab):
        segs = [[1, 2, 3, 4, 5], [6]]
        ids, seg, mask = pack_fixed(segs, 3, vocab)
        assert list(ids) == [1, 2, 3, 6, vocab.pad_id, vocab.pad_id]
        assert seg.tolist() == [0, 0, 0, 1, 1, 1]
        assert mask.tolist() == [True, True, True, True, False, False]


class TestSuppliers:
    def test_token_windows_shape(self, toy, vocab):
        w = _token_windows(toy, vocab, 32)
        assert w.ndim == 2 and w.shape[1] == 32
        assert w.dtype == np.int64
        assert len(w) > 10

    def test_token_windows_too_long_rejected(self, toy, vocab):
        with pytest.raises(DataError):
            _token_windows(toy, vocab, 10**7)

    def test_pair_data_label_rate(self, toy, vocab):
        data = _pair_data(toy, vocab, "ssp", 48, 0)
        assert set(np.unique(data.labels)) == {0, 1}
        # one positive per group of five
        assert data.labels.mean() == pytest.approx(0.2)

    def test_joint_data_one_hot_rows(self, toy, vocab):
        data = _joint_data(toy, vocab, 5, 8, 0)
        assert data.labels.shape[1] == 5
        np.testing.assert_array_equal(data.labels.sum(axis=1), 1)

    def test_bag_rows_normalized(self, toy, vocab):
        data = _bag_data(toy, vocab, 48)
        np.testing.assert_allclose(data.labels.sum(axis=1), 1.0, atol=1e-12)
        assert data.labels.shape[1] == len(vocab)


class TestTrainLoop:
    def test_trace_schema(self, toy, vocab):
        r = train_objective(toy, vocab, "mlm", small_tcfg(), d=16, f=32, l_max=32)
        assert len(r.rows) == 20
        assert [row.step for row in r.rows] == list(range(1, 21))
        for row in r.rows:
            assert row.objective == "mlm"
            assert row.lr == triangular_lr(row.step, small_tcfg())
            assert np.isfinite(row.loss)

    def test_deterministic_trace(self, toy, vocab):
        kw = dict(d=16, f=32, l_max=32)
        a = train_objective(toy, vocab, "ssp", small_tcfg(), **kw)
        b = train_objective(toy, vocab, "ssp", small_tcfg(), **kw)
        assert [r.loss for r in a.rows] == [r.loss for r in b.rows]
        for (_, ta), (_, tb) in zip(named_parameters(a.params), named_parameters(b.params)):
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_seed_changes_trace(self, toy, vocab):
        kw = dict(d=16, f=32, l_max=32)
        a = train_objective(toy, vocab, "mlm", small_tcfg(seed=0), **kw)
        b = train_objective(toy, vocab, "mlm", small_tcfg(seed=1), **kw)
        assert [r.loss for r in a.rows] != [r.loss for r in b.rows]

    def test_multi_objective_rows_interleave(self, toy, vocab):
        r = train_objectives(
            toy, vocab, {"mlm": 1.0, "ssp": 1.0}, small_tcfg(total_steps=6),
            d=16, f=32, l_max=32,
        )
        assert len(r.rows) == 12
        assert [row.objective for row in r.rows[:2]] == ["mlm", "ssp"]
        assert {row.objective for row in r.rows} == {"mlm", "ssp"}

    def test_crts_returns_updated_fmatrix(self, toy, vocab):
        r = train_objective(
            toy, vocab, "crts", small_tcfg(total_steps=8), d=16, f=32, l_max=32,
        )
        assert r.fmatrix is not None
        assert np.abs(r.fmatrix.counts).sum() > 0

    def test_supplied_fmatrix_used_as_start(self, toy, vocab):
        from objforge.embed_cluster import kmeans, train_skipgram

        emb = train_skipgram(toy, vocab, d_emb=8, window=2, epochs=1, seed=0)
        cm = kmeans(emb, 4, restarts=1, seed=0)
        f0 = fmatrix_zeros(4)
        r = train_objective(
            toy, vocab, "crts", small_tcfg(warmup_steps=2, total_steps=4),
            d=16, f=32, l_max=32, cluster_map=cm, fmatrix=f0,
        )
        assert r.fmatrix.n == 4

    def test_sgd_mode_runs(self, toy, vocab):
        r = train_objective(
            toy, vocab, "rts", small_tcfg(total_steps=5), d=16, f=32, l_max=32,
            optimizer="sgd",
        )
        assert len(r.rows) == 5

    def test_unknown_objective_rejected(self, toy, vocab):
        with pytest.raises(ConfigError):
            train_objectives(toy, vocab, {"mlm": 1.0, "nope": 1.0}, small_tcfg())

    def test_non_positive_weight_rejected(self, toy, vocab):
        with pytest.raises(ConfigError):
            train_objectives(toy, vocab, {"mlm": 0.0}, small_tcfg())

    def test_empty_weights_rejected(self, toy, vocab):
        with pytest.raises(ConfigError):
            train_objectives(toy, vocab, {}, small_tcfg())

    def test_sds_objective_runs(self, toy, vocab):
        r = train_objective(toy, vocab, "sds", small_tcfg(), d=16, f=32, l_max=32)
        assert all(np.isfinite(row.loss) for row in r.rows)

    def test_mspp_objective_runs(self, toy, vocab):
        r = train_objective(toy, vocab, "mspp", small_tcfg(), d=16, f=32, l_max=36)
        assert all(np.isfinite(row.loss) for row in r.rows)

    def test_mlm_loss_decreases(self, toy, vocab):
        tcfg = TrainConfig(
            lr_peak=5e-3, warmup_steps=10, total_steps=80, batch_size=8, seed=0
        )
        r = train_objective(toy, vocab, "mlm", tcfg, d=16, f=32, l_max=32)
        ls = r.losses("mlm")
        assert np.mean(ls[-20:]) < np.mean(ls[:10])


class TestTrace:
    def test_csv_round_trip(self, tmp_path):
        rows = [TraceRow(1, "mlm", 4.25, 0.001), TraceRow(1, "ssp", 0.69, 0.001)]
        path = tmp_path / "trace.csv"
        write_trace_csv(rows, path)
        with open(path, newline="") as fh:
            got = list(csv.reader(fh))
        assert got[0] == ["step", "objective", "loss", "lr"]
        assert got[1][:2] == ["1", "mlm"]
        assert float(got[1][2]) == pytest.approx(4.25)
        assert float(got[2][3]) == pytest.approx(0.001)

    def test_result_filters_by_objective(self):
        rows = [TraceRow(1, "a", 1.0, 0.1), TraceRow(1, "b", 2.0, 0.1)]
        r = TrainResult(rows=rows, params=None, config=None)
        assert r.losses("a") == [1.0]


class TestToyCorpus:
    def test_builder_deterministic(self):
        a = make_toy_corpus(seed=5)
        b = make_toy_corpus(seed=5)
        assert a.documents[3].paragraphs[2].sentences == b.documents[3].paragraphs[2].sentences

    def test_bundled_file_matches_builder(self, toy):
        built = make_toy_corpus()
        assert len(toy.documents) == len(built.documents)
        for da, db in zip(toy.documents, built.documents):
            assert da.id == db.id
            for pa, pb in zip(da.paragraphs, db.paragraphs):
                assert pa.sentences == pb.sentences

    def test_shape(self, toy):
        assert len(toy.documents) == 12
        assert all(len(d.paragraphs) == 4 for d in toy.documents)
        assert all(len(p.sentences) == 6 for d in toy.documents for p in d.paragraphs)

    def test_topic_words_distinct_per_doc(self, toy):
        firsts = {d.paragraphs[0].sentences[0].split()[0] for d in toy.documents}
        assert len(firsts) == 12

    def test_oversize_request_rejected(self):
        with pytest.raises(ConfigError):
            make_toy_corpus(n_docs=13)
