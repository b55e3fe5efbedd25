"""Tests for losses, the three-part training step, checkpoints and the run loop."""

import hashlib
import math
import struct
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent))

from pvgan.config import DatasetSpec, ModelConfig, RunConfig, TrainConfig
from pvgan.data.loader import condition_rows
from pvgan.data.synthetic import synth_dataset
from pvgan.errors import ConfigError, ContractViolation, FormatError, VersionMismatch
from pvgan.model.checkpoint import checkpoint_stats, read_checkpoint
from pvgan.model.networks import init_discriminator, init_generator, sample_latents
from pvgan.training.losses import (
    align_batch, d_accuracy, d_loss, g_loss, merge_batch, paired_g_loss,
)
from pvgan.training.trainer import (
    FINAL_CHECKPOINT, RUN_LOG, RUN_MANIFEST, StepLog, init_state, load_checkpoint, load_generator,
    read_step_log, save_checkpoint, train, train_step,
)
from pvgan.voxels.grid import VoxelGrid, align, all_conditions, binarize, merge


def _config(n_conditions=2, **train_kw):
    train_args = dict(batch_size=4, epochs=3, checkpoint_every=1)
    train_args.update(train_kw)
    return RunConfig(
        train=TrainConfig(**train_args),
        model=ModelConfig(resolution=8, latent_dim=16, base_channels=8, n_conditions=n_conditions),
        dataset=DatasetSpec(resolution=8, n_conditions=n_conditions, synthetic=True, synthetic_count=8),
    )


def _samples(n_conditions=2, count=16):
    return synth_dataset(count, 8, n_conditions, seed=0)


def _rows(n_conditions=2):
    return condition_rows(_samples(n_conditions), n_conditions)


def _snapshot(net):
    return {k: v.detach().clone() for k, v in net.state_dict().items()}


def _same(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


# ─── Losses ───────────────────────────────────────────────────────────────────

class TestLosses:
    def test_d_loss_at_half(self):
        half = torch.full((4,), 0.5)
        assert d_loss(half, half).item() == pytest.approx(2 * math.log(2), rel=1e-6)

    def test_d_loss_perfect_discriminator(self):
        assert d_loss(torch.ones(3), torch.zeros(3)).item() < 1e-5

    def test_g_loss_at_half(self):
        assert g_loss(torch.full((2,), 0.5)).item() == pytest.approx(math.log(2), rel=1e-6)

    def test_g_loss_decreases_as_fakes_fool(self):
        values = [g_loss(torch.tensor([p])).item() for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert values == sorted(values, reverse=True)

    def test_minimax_form(self):
        assert g_loss(torch.tensor([0.5]), form="minimax").item() == pytest.approx(-math.log(2), rel=1e-6)

    def test_clamped_logs_stay_finite(self):
        assert math.isfinite(g_loss(torch.zeros(2)).item())
        assert math.isfinite(d_loss(torch.zeros(2), torch.ones(2)).item())

    def test_unknown_form(self):
        with pytest.raises(ContractViolation):
            g_loss(torch.tensor([0.5]), form="wasserstein")

    def test_empty_inputs(self):
        with pytest.raises(ContractViolation):
            d_loss(torch.zeros(0), torch.zeros(1))
        with pytest.raises(ContractViolation):
            g_loss(torch.zeros(0))
        with pytest.raises(ContractViolation):
            d_accuracy(torch.zeros(1), torch.zeros(0))


class TestAccuracy:
    def test_half_counts_as_fake(self):
        assert d_accuracy(torch.tensor([0.5]), torch.tensor([0.5])) == 0.5

    def test_all_correct(self):
        assert d_accuracy(torch.tensor([0.9, 0.6]), torch.tensor([0.1, 0.2, 0.3])) == 1.0

    def test_mixed(self):
        assert d_accuracy(torch.tensor([0.9, 0.4]), torch.tensor([0.1, 0.8])) == 0.5


# ─── Batched align / merge and the paired loss ────────────────────────────────

class TestPairedLoss:
    @pytest.mark.parametrize("n", [2, 4])
    def test_batched_align_matches_grid_align(self, n):
        rng = np.random.default_rng(n)
        stack = rng.random((3, n, 6, 6, 6)).astype(np.float32)
        merged = merge_batch(align_batch(torch.from_numpy(stack), n)).numpy()
        conds = all_conditions(n)
        for b in range(3):
            expected = merge(align([VoxelGrid(stack[b, c]) for c in range(n)], conds))
            np.testing.assert_allclose(merged[b], expected.values, rtol=1e-6, atol=1e-7)

    def test_merge_is_sparser_than_each_sample(self):
        rng = np.random.default_rng(0)
        conds = all_conditions(2)
        for _ in range(100):
            samples = [VoxelGrid((rng.random((6, 6, 6)) > 0.5).astype(np.float32)) for _ in range(2)]
            merged = binarize(merge(align(samples, conds)))
            assert merged.occupied_count <= min(s.occupied_count for s in samples)

    def test_incomplete_condition_set(self):
        config = ModelConfig(resolution=8, latent_dim=16, base_channels=8)
        gen, disc = init_generator(config, 0), init_discriminator(config, 0)
        z = sample_latents(2, config, torch.Generator().manual_seed(0))
        with pytest.raises(ContractViolation):
            paired_g_loss(gen, disc, z, conditions=[0, 0])
        with pytest.raises(ContractViolation):
            paired_g_loss(gen, disc, z, conditions=[0])

    def test_condition_order_irrelevant(self):
        config = ModelConfig(resolution=8, latent_dim=16, base_channels=8, n_conditions=4)
        gen, disc = init_generator(config, 0), init_discriminator(config, 0)
        z = sample_latents(2, config, torch.Generator().manual_seed(0))
        a = paired_g_loss(gen, disc, z, mode="eval")
        b = paired_g_loss(gen, disc, z, conditions=[3, 1, 0, 2], mode="eval")
        assert torch.equal(a, b)

    def test_loss_is_finite_scalar(self):
        config = ModelConfig(resolution=8, latent_dim=16, base_channels=8)
        gen, disc = init_generator(config, 0), init_discriminator(config, 0)
        loss = paired_g_loss(gen, disc, sample_latents(3, config, torch.Generator().manual_seed(1)))
        assert loss.ndim == 0 and math.isfinite(loss.item())


# ─── Training step ────────────────────────────────────────────────────────────

class TestTrainStep:
    def test_first_step_updates_discriminator(self):
        state = init_state(_config())
        before = _snapshot(state.discriminator)
        entry = train_step(state, _rows()[:4])
        assert entry.d_updated and entry.d_accuracy_prev == 0.0
        assert not _same(before, _snapshot(state.discriminator))
        assert state.step == 1

    def test_closed_gate_leaves_discriminator_untouched(self):
        state = init_state(_config())
        state.prev_accuracy = 1.0
        before = _snapshot(state.discriminator)
        g_before = _snapshot(state.generator)
        entry = train_step(state, _rows()[:4])
        assert not entry.d_updated
        assert _same(before, _snapshot(state.discriminator))
        assert not state.d_optim.state
        assert not _same(g_before, _snapshot(state.generator))

    def test_generator_steps_never_touch_discriminator(self):
        state = init_state(_config(gate_threshold=0.5))
        rows = _rows()
        for i in range(5):
            state.prev_accuracy = 1.0
            before = _snapshot(state.discriminator)
            train_step(state, rows[4 * (i % 4):4 * (i % 4) + 4])
            assert _same(before, _snapshot(state.discriminator))

    def test_baseline_has_no_pair_loss(self):
        state = init_state(_config(paired_step_enabled=False))
        entry = train_step(state, _rows()[:4])
        assert entry.pair_loss == 0.0

    def test_paired_step_changes_the_generator_update(self):
        batch = _rows()[:4]
        paired, baseline = init_state(_config()), init_state(_config(paired_step_enabled=False))
        train_step(paired, batch)
        train_step(baseline, batch)
        assert not _same(_snapshot(paired.generator), _snapshot(baseline.generator))
        assert _same(_snapshot(paired.discriminator), _snapshot(baseline.discriminator))

    def test_four_conditions(self):
        state = init_state(_config(n_conditions=4))
        entry = train_step(state, _rows(4)[:4])
        assert math.isfinite(entry.pair_loss) and entry.pair_loss > 0

    def test_empty_batch(self):
        with pytest.raises(ContractViolation):
            train_step(init_state(_config()), [])

    def test_rows_must_hold_every_condition_in_order(self):
        state = init_state(_config())
        with pytest.raises(ContractViolation):
            train_step(state, [row[::-1] for row in _rows()[:4]])
        with pytest.raises(ContractViolation):
            train_step(state, [row[:1] for row in _rows()[:4]])
        assert state.step == 0

    def test_paired_update_has_its_own_moments(self):
        state = init_state(_config())
        train_step(state, _rows()[:4])
        params = list(state.generator.parameters())
        assert all(float(state.g_optim.state[p]["step"]) == 1 for p in params)
        assert all(float(state.p_optim.state[p]["step"]) == 1 for p in params)

    def test_baseline_leaves_paired_optimizer_idle(self):
        state = init_state(_config(paired_step_enabled=False))
        train_step(state, _rows()[:4])
        assert not state.p_optim.state

    def test_open_gate_discriminator_fixed_after_its_update(self, monkeypatch):
        import pvgan.training.trainer as trainer_mod

        def checksum(net):
            h = hashlib.sha256()
            for name, t in net.state_dict().items():
                h.update(name.encode())
                h.update(t.detach().cpu().numpy().tobytes())
            return h.hexdigest()

        state = init_state(_config(gate_threshold=1.0))
        marks = {}
        d_step = state.d_optim.step

        def stepped(*args, **kwargs):
            out = d_step(*args, **kwargs)
            marks["after_d_update"] = checksum(state.discriminator)
            return out

        def paired(gen, disc, z, **kwargs):
            marks["before_paired"] = checksum(disc)
            return paired_g_loss(gen, disc, z, **kwargs)

        monkeypatch.setattr(state.d_optim, "step", stepped)
        monkeypatch.setattr(trainer_mod, "paired_g_loss", paired)

        rows = _rows()
        for i in range(100):
            marks.clear()
            state.prev_accuracy = 0.0
            start = checksum(state.discriminator)
            entry = train_step(state, rows[4 * (i % 4):4 * (i % 4) + 4])
            assert entry.d_updated
            assert marks["after_d_update"] != start
            assert marks["before_paired"] == marks["after_d_update"]
            assert checksum(state.discriminator) == marks["after_d_update"]
        assert state.step == 100

    def test_deterministic(self):
        batch = _rows()[:4]
        a, b = init_state(_config()), init_state(_config())
        assert train_step(a, batch) == train_step(b, batch)
        assert _same(_snapshot(a.generator), _snapshot(b.generator))


# ─── Step log ─────────────────────────────────────────────────────────────────

class TestStepLog:
    def test_line_round_trip(self):
        entry = StepLog(3, 1.25, 0.6931471805599453, 0.0, 0.5, True, 0.75)
        assert StepLog.parse(entry.to_line()) == entry

    def test_wrong_field_count(self):
        with pytest.raises(FormatError):
            StepLog.parse("1\t2\t3")


# ─── Checkpoints ──────────────────────────────────────────────────────────────

class TestCheckpoints:
    def _trained(self, steps=3, **kw):
        state = init_state(_config(**kw))
        rows = _rows()
        for i in range(steps):
            train_step(state, rows[4 * i:4 * i + 4])
        return state

    def test_save_load_save_identical(self, tmp_path):
        state = self._trained()
        first = save_checkpoint(state, tmp_path / "a.pvg")
        second = save_checkpoint(load_checkpoint(first), tmp_path / "b.pvg")
        assert first.read_bytes() == second.read_bytes()

    def test_float64_run(self, tmp_path):
        state = self._trained(steps=1, dtype="float64")
        path = save_checkpoint(state, tmp_path / "a.pvg")
        loaded = load_checkpoint(path)
        assert loaded.generator.layers[0].weight.dtype == torch.float64
        assert _same(_snapshot(state.generator), _snapshot(loaded.generator))

    def test_state_fields_restored(self, tmp_path):
        state = self._trained()
        loaded = load_checkpoint(save_checkpoint(state, tmp_path / "a.pvg"))
        assert (loaded.step, loaded.epoch, loaded.prev_accuracy) == (state.step, state.epoch, state.prev_accuracy)
        assert _same(_snapshot(state.discriminator), _snapshot(loaded.discriminator))

    def test_paired_moments_round_trip(self, tmp_path):
        state = self._trained()
        path = save_checkpoint(state, tmp_path / "a.pvg")
        _, tensors = read_checkpoint(path)
        assert any(k.startswith("optim.paired.") for k in tensors)
        loaded = load_checkpoint(path)
        pairs = list(zip(state.generator.parameters(), loaded.generator.parameters()))
        for p, q in pairs:
            assert torch.equal(state.p_optim.state[p]["exp_avg"], loaded.p_optim.state[q]["exp_avg"])
        assert any(not torch.equal(loaded.p_optim.state[q]["exp_avg"], loaded.g_optim.state[q]["exp_avg"])
                   for _, q in pairs)

    def test_batch_size_mismatch_on_resume(self, tmp_path):
        path = save_checkpoint(self._trained(steps=1), tmp_path / "a.pvg")
        with pytest.raises(ConfigError) as exc:
            load_checkpoint(path, _config(batch_size=2))
        assert exc.value.key == "train.batch_size"

    def test_truncated(self, tmp_path):
        path = save_checkpoint(self._trained(steps=1), tmp_path / "a.pvg")
        data = path.read_bytes()
        for cut in (3, 12, len(data) // 2, len(data) - 1):
            path.write_bytes(data[:cut])
            with pytest.raises(FormatError):
                load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = save_checkpoint(self._trained(steps=1), tmp_path / "a.pvg")
        data = bytearray(path.read_bytes())
        data[6:10] = struct.pack("<I", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch) as exc:
            load_checkpoint(path)
        assert exc.value.found == 99 and exc.value.offset == 6

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.pvg"
        path.write_bytes(b"NOTPVG" + bytes(20))
        with pytest.raises(FormatError) as exc:
            load_checkpoint(path)
        assert exc.value.offset == 0

    def test_model_mismatch_on_resume(self, tmp_path):
        path = save_checkpoint(self._trained(steps=1), tmp_path / "a.pvg")
        with pytest.raises(ContractViolation):
            load_checkpoint(path, _config(n_conditions=4))

    def test_load_generator(self, tmp_path):
        state = self._trained(steps=1)
        gen, config = load_generator(save_checkpoint(state, tmp_path / "a.pvg"), resolution=8)
        assert not gen.training and config.model.resolution == 8
        with pytest.raises(ContractViolation):
            load_generator(tmp_path / "a.pvg", resolution=32)

    def test_stats(self, tmp_path):
        path = save_checkpoint(self._trained(steps=2), tmp_path / "a.pvg")
        stats = checkpoint_stats(path)
        assert stats["exists"] and stats["step"] == 2 and stats["resolution"] == 8
        assert stats["generator_values"] > 0 and stats["optimizer_values"] > 0

    def test_stats_missing_file(self, tmp_path):
        assert checkpoint_stats(tmp_path / "nope.pvg")["exists"] is False


# ─── Run loop ─────────────────────────────────────────────────────────────────

class TestTrain:
    def test_log_has_one_line_per_step(self, tmp_path):
        state = train(_config(epochs=2), tmp_path, samples=_samples())
        entries = read_step_log(tmp_path / RUN_LOG)
        assert state.step == 8 and state.epoch == 2
        assert [e.step for e in entries] == list(range(8))
        assert entries[0].d_updated and entries[0].d_accuracy_prev == 0.0
        for prev, cur in zip(entries, entries[1:]):
            assert cur.d_accuracy_prev == prev.d_accuracy

    def test_outputs(self, tmp_path):
        train(_config(epochs=2), tmp_path, samples=_samples())
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == sorted([RUN_MANIFEST, RUN_LOG, FINAL_CHECKPOINT, "ckpt_step4.pvg", "ckpt_step8.pvg"])

    def test_zero_epochs(self, tmp_path):
        state = train(_config(epochs=0), tmp_path, samples=[])
        assert state.step == 0
        assert (tmp_path / FINAL_CHECKPOINT).exists()
        assert not list(tmp_path.glob("ckpt_step*"))
        assert read_step_log(tmp_path / RUN_LOG) == []

    def test_empty_dataset(self, tmp_path):
        with pytest.raises(ContractViolation):
            train(_config(), tmp_path, samples=[])

    def test_max_steps(self, tmp_path):
        state = train(_config(epochs=10, max_steps=6), tmp_path, samples=_samples())
        assert state.step == 6 and state.epoch == 1

    def test_reproducible_bytes(self, tmp_path):
        train(_config(epochs=2), tmp_path / "a", samples=_samples())
        train(_config(epochs=2), tmp_path / "b", samples=_samples())
        assert (tmp_path / "a" / FINAL_CHECKPOINT).read_bytes() == (tmp_path / "b" / FINAL_CHECKPOINT).read_bytes()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        samples = _samples()
        train(_config(epochs=100, max_steps=50, checkpoint_every=100), tmp_path / "full", samples=samples)
        train(_config(epochs=100, max_steps=25, checkpoint_every=100), tmp_path / "half", samples=samples)
        resumed = train(_config(epochs=100, max_steps=50, checkpoint_every=100), tmp_path / "half",
                        resume=tmp_path / "half" / FINAL_CHECKPOINT, samples=samples)
        assert resumed.step == 50
        full = (tmp_path / "full" / FINAL_CHECKPOINT).read_bytes()
        assert (tmp_path / "half" / FINAL_CHECKPOINT).read_bytes() == full
        assert read_step_log(tmp_path / "half" / RUN_LOG) == read_step_log(tmp_path / "full" / RUN_LOG)

    def test_row_count_recorded(self, tmp_path):
        train(_config(epochs=1), tmp_path, samples=_samples())
        assert load_checkpoint(tmp_path / FINAL_CHECKPOINT).n_rows == 16

    def test_resume_with_other_batch_size(self, tmp_path):
        train(_config(epochs=1), tmp_path, samples=_samples())
        with pytest.raises(ConfigError) as exc:
            train(_config(epochs=2, batch_size=2), tmp_path, resume=tmp_path / FINAL_CHECKPOINT,
                  samples=_samples())
        assert exc.value.key == "train.batch_size"

    def test_resume_with_other_dataset_size(self, tmp_path):
        train(_config(epochs=1), tmp_path, samples=_samples())
        with pytest.raises(ConfigError) as exc:
            train(_config(epochs=2), tmp_path, resume=tmp_path / FINAL_CHECKPOINT, samples=_samples(count=8))
        assert exc.value.key == "dataset"

    def test_manifest(self, tmp_path):
        import json
        train(_config(epochs=1), tmp_path, overrides=["train.epochs=1"], samples=_samples())
        manifest = json.loads((tmp_path / RUN_MANIFEST).read_text())
        assert manifest["overrides"] == ["train.epochs=1"]
        assert manifest["final_step"] == 4 and manifest["finished"]
        assert manifest["config"]["model"]["resolution"] == 8
