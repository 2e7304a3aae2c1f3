import json
import math

import numpy as np
import pytest

from outline2report.config import ConfigError, TrainingConfig
from outline2report.corpus import (
    NewsReportPair, build_vocabulary, derive_outlines)
from outline2report.model import build_model
from outline2report.numerics import NonFiniteLossError, Parameter
from outline2report.training import (
    CHECKPOINT_MAGIC, LOSS_LOG_HEADER, AdamOptimizer, BadHeaderError,
    CheckpointError, ShapeMismatchError, StepRecord, Trainer,
    TruncatedCheckpointError, VersionMismatchError, apply_checkpoint,
    joint_loss, load_checkpoint, restore_model, resume_trainer)


def micro_corpus():
    rows = [
        ("1", "rain hit the coast", "the coast saw heavy rain overnight"),
        ("2", "crops grew fast", "farmers say crops grew fast this year"),
        ("3", "the port opened", "ships entered the port after repairs"),
        ("4", "prices rose again", "traders watched prices rose again today"),
    ]
    pairs = [NewsReportPair(id=i, news=tuple(n.split()), report=tuple(r.split()))
             for i, n, r in rows]
    pairs = derive_outlines(pairs, k=3)
    return pairs, build_vocabulary(pairs)


def micro_cfg(**kw):
    base = dict(d_emb=6, d_hid=5, d_z=3, batch_size=2, max_epochs=2,
                seed=1, kl_anneal_steps=10)
    base.update(kw)
    return TrainingConfig(**base)


def make_trainer(**kw):
    pairs, vocab = micro_corpus()
    cfg = micro_cfg(**kw)
    return Trainer(build_model(vocab, cfg), pairs, vocab, cfg), pairs, vocab


class TestJointLoss:
    def test_plain_sum(self):
        assert joint_loss(2.0, 3.0) == 5.0

    def test_zero(self):
        assert joint_loss(0.0, 0.0) == 0.0

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteLossError):
            joint_loss(float("nan"), 1.0)
        with pytest.raises(NonFiniteLossError):
            joint_loss(1.0, float("inf"))


class TestAdam:
    def test_first_step_magnitude(self):
        p = Parameter("w", np.array([2.0]))
        p.zero_grad()
        p.grad[:] = 0.5
        opt = AdamOptimizer([p], learning_rate=0.1)
        opt.step()
        # bias correction makes m_hat = g, v_hat = g^2 at t = 1
        expected = 2.0 - 0.1 * 0.5 / (0.5 + 1e-8)
        assert abs(p.value[0] - expected) < 1e-15
        assert abs((2.0 - p.value[0]) - 0.1) < 1e-6  # ~ lr * sign(g)

    def test_zero_gradient_no_change(self):
        p = Parameter("w", np.array([1.5, -2.0]))
        p.zero_grad()
        opt = AdamOptimizer([p], learning_rate=0.1)
        opt.step()
        np.testing.assert_array_equal(p.value, [1.5, -2.0])

    def test_three_step_trace(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = Parameter("w", np.array([0.0]))
        opt = AdamOptimizer([p], learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
        # hand-rolled recurrence, same constants
        m = v = 0.0
        x = 0.0
        for t in range(1, 4):
            g = 1.0
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            x -= lr * m_hat / (math.sqrt(v_hat) + eps)

            p.zero_grad()
            p.grad[:] = 1.0
            opt.step()
        assert abs(p.value[0] - x) < 1e-15

    def test_zero_learning_rate_freezes(self):
        p = Parameter("w", np.array([3.0]))
        p.zero_grad()
        p.grad[:] = 1.0
        AdamOptimizer([p], learning_rate=0.0).step()
        assert p.value[0] == 3.0

    def test_skip_set_freezes_named_params(self):
        p = Parameter("keep", np.array([1.0]))
        q = Parameter("frozen", np.array([1.0]))
        for r in (p, q):
            r.zero_grad()
            r.grad[:] = 1.0
        opt = AdamOptimizer([p, q], learning_rate=0.1, skip={"frozen"})
        opt.step()
        assert q.value[0] == 1.0
        assert p.value[0] != 1.0

    def test_duplicate_names_rejected(self):
        a = Parameter("w", np.zeros(1))
        b = Parameter("w", np.zeros(1))
        with pytest.raises(ValueError):
            AdamOptimizer([a, b])


class TestKlAnneal:
    def test_linear_ramp(self):
        cfg = micro_cfg(kl_anneal_steps=500)
        assert cfg.kl_weight(0) == 0.0
        assert cfg.kl_weight(250) == 0.5
        assert cfg.kl_weight(500) == 1.0
        assert cfg.kl_weight(10 ** 6) == 1.0

    def test_zero_anneal_steps_means_full_weight(self):
        cfg = micro_cfg(kl_anneal_steps=0)
        assert cfg.kl_weight(0) == 1.0

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            micro_cfg(learning_rate=0.0)
        with pytest.raises(ConfigError):
            micro_cfg(batch_size=0)
        with pytest.raises(ConfigError):
            micro_cfg(teacher_forcing_ratio=1.5)


class TestTrainingLoop:
    def test_loss_trace_deterministic(self):
        t1, _, _ = make_trainer()
        t2, _, _ = make_trainer()
        r1 = t1.run()
        r2 = t2.run()
        assert [r.loss_model for r in r1] == [r.loss_model for r in r2]
        assert len(r1) == 2 * t1.num_batches

    def test_additivity_every_step(self):
        trainer, _, _ = make_trainer()
        for rec in trainer.run():
            assert rec.loss_model == rec.loss_outline + rec.loss_report

    def test_weighted_additivity(self):
        trainer, _, _ = make_trainer(outline_loss_weight=0.5)
        for rec in trainer.run():
            assert rec.loss_model == 0.5 * rec.loss_outline + rec.loss_report

    def test_descent_on_overfittable_corpus(self):
        trainer, _, _ = make_trainer(batch_size=4, max_epochs=200,
                                     kl_anneal_steps=50)
        records = trainer.run()
        assert len(records) == 200
        assert records[-1].loss_model < records[0].loss_model

    def test_every_block_gets_gradient_in_first_epoch(self):
        trainer, _, _ = make_trainer()
        seen = {p.name: False for p in trainer.model.parameters()}
        for _ in range(trainer.num_batches):
            trainer.train_one_step()
            for p in trainer.model.parameters():
                seen[p.name] = seen[p.name] or bool(p.grad.any())
        missing = [name for name, hit in seen.items() if not hit]
        assert not missing, f"dead parameter blocks: {missing}"

    def test_pad_embedding_row_stays_zero(self):
        trainer, _, _ = make_trainer()
        trainer.run()
        assert not trainer.model.embedding.table.value[0].any()
        assert not trainer.model.embedding.table.grad[0].any()

    def test_freeze_outline_pins_outline_params(self):
        trainer, _, _ = make_trainer(freeze_outline=True)
        groups = trainer.model.param_groups()
        before = {p.name: p.value.copy() for p in trainer.model.parameters()}
        trainer.run(max_epochs=1)
        for p in groups["outline"]:
            np.testing.assert_array_equal(p.value, before[p.name])
        moved = [p.name for p in groups["encoder"] + groups["report"]
                 if not np.array_equal(p.value, before[p.name])]
        assert moved

    def test_non_finite_loss_names_first_bad_stage(self):
        trainer, _, _ = make_trainer()
        trainer.model.embedding.table.value[5:] = np.nan
        with pytest.raises(NonFiniteLossError, match="news embeddings"):
            trainer.train_one_step()

    def test_non_finite_deep_in_pipeline(self):
        trainer, _, _ = make_trainer()
        trainer.model.report_decoder.W_out.value[:] = np.nan
        with pytest.raises(NonFiniteLossError, match="report"):
            trainer.train_one_step()

    def test_epoch_reshuffles_but_stays_seeded(self):
        trainer, _, _ = make_trainer()
        o0 = trainer._epoch_order(0)
        o1 = trainer._epoch_order(1)
        assert sorted(o0.tolist()) == sorted(o1.tolist()) == [0, 1, 2, 3]
        again, _, _ = make_trainer()
        np.testing.assert_array_equal(again._epoch_order(0), o0)
        np.testing.assert_array_equal(again._epoch_order(1), o1)


class TestStepRecord:
    def test_csv_round_trip(self):
        rec = StepRecord(3, 17, 1.25, 2.5, 3.75)
        fields = rec.csv_row().split(",")
        assert len(fields) == len(LOSS_LOG_HEADER.split(","))
        assert int(fields[0]) == 3 and int(fields[1]) == 17
        assert float(fields[2]) == 1.25
        assert float(fields[4]) == 3.75

    def test_header_names(self):
        assert LOSS_LOG_HEADER == "epoch,step,L_outline,L_report,L_model"


class TestCheckpointing:
    def test_round_trip_bit_exact(self, tmp_path):
        trainer, pairs, vocab = make_trainer()
        trainer.run(max_epochs=1)
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        assert path.read_bytes()[:8] == CHECKPOINT_MAGIC

        state = load_checkpoint(path)
        assert state.step == trainer.step
        assert state.adam_t == trainer.optimizer.t
        assert state.vocab_sha256 == vocab.digest()
        for p in trainer.model.parameters():
            np.testing.assert_array_equal(state.arrays[p.name], p.value)
            np.testing.assert_array_equal(state.arrays["adam.m." + p.name],
                                          trainer.optimizer.m[p.name])

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        straight, _, _ = make_trainer(max_epochs=3)
        full = straight.run()

        partial, pairs, vocab = make_trainer(max_epochs=3)
        for _ in range(3):
            partial.train_one_step()
        path = tmp_path / "mid.o2r"
        partial.save(path)

        resumed = resume_trainer(path, pairs, vocab)
        assert resumed.step == 3
        tail = []
        while resumed.step < len(full):
            tail.append(resumed.train_one_step())
        for rec, ref in zip(tail, full[3:]):
            assert rec.loss_model == ref.loss_model
            assert rec.loss_outline == ref.loss_outline
            assert rec.loss_report == ref.loss_report

    def test_restored_model_parameters_identical(self, tmp_path):
        trainer, pairs, vocab = make_trainer()
        trainer.run(max_epochs=1)
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        model = restore_model(load_checkpoint(path), vocab)
        for p, q in zip(model.parameters(), trainer.model.parameters()):
            assert p.name == q.name
            np.testing.assert_array_equal(p.value, q.value)

    def test_corrupt_magic(self, tmp_path):
        trainer, _, _ = make_trainer()
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(BadHeaderError, match="bad header"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        trainer, _, _ = make_trainer()
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        blob = path.read_bytes()
        assert b'"version": 1' in blob
        path.write_bytes(blob.replace(b'"version": 1', b'"version": 9', 1))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        trainer, _, _ = make_trainer()
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 64])
        with pytest.raises(TruncatedCheckpointError):
            load_checkpoint(path)

    def test_shape_mismatch_on_apply(self, tmp_path):
        trainer, pairs, vocab = make_trainer()
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        other_cfg = micro_cfg(d_hid=4)
        other = Trainer(build_model(vocab, other_cfg), pairs, vocab, other_cfg)
        with pytest.raises(ShapeMismatchError):
            apply_checkpoint(load_checkpoint(path), other.model,
                             other.optimizer, other.noise_rng)

    def test_vocab_digest_mismatch(self, tmp_path):
        trainer, pairs, _ = make_trainer()
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        stranger = build_vocabulary(derive_outlines([
            NewsReportPair(id="x", news=("other", "words"),
                           report=("entirely", "different", "text"))], k=1))
        with pytest.raises(CheckpointError, match="digest"):
            resume_trainer(path, pairs, stranger)
        with pytest.raises(CheckpointError, match="digest"):
            restore_model(load_checkpoint(path), stranger)

    def test_header_is_sorted_json(self, tmp_path):
        trainer, _, _ = make_trainer()
        path = tmp_path / "ck.o2r"
        trainer.save(path)
        blob = path.read_bytes()
        hlen = int.from_bytes(blob[8:16], "little")
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        assert header["version"] == 1
        assert list(header) == sorted(header)
