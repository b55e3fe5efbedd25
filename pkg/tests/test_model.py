"""Tests for the conditional generator / discriminator pair."""

import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent))

from pvgan.config import ModelConfig
from pvgan.errors import ConfigError, ContractViolation
from pvgan.model.networks import (
    conv_out, discriminator_forward, discriminator_plan, expand_conditions, generator_forward, generator_plan,
    init_discriminator, init_generator, sample_latents, tconv_out,
)


def _small(**kw):
    base = dict(resolution=8, latent_dim=16, base_channels=8)
    base.update(kw)
    return ModelConfig(**base)


def _latents(config, n, seed=0):
    return sample_latents(n, config, torch.Generator().manual_seed(seed))


# ─── Layer plans ──────────────────────────────────────────────────────────────

class TestLayerPlans:
    def test_full_size_generator(self):
        plan = generator_plan(ModelConfig())
        assert [(s.out_size, s.out_channels) for s in plan] == [(4, 256), (8, 128), (16, 64), (32, 1)]
        assert plan[0].in_channels == 201
        assert (plan[0].stride, plan[0].padding) == (1, 0)

    def test_full_size_discriminator(self):
        plan = discriminator_plan(ModelConfig())
        assert [(s.out_size, s.out_channels) for s in plan] == [(16, 64), (8, 128), (4, 256), (1, 1)]
        assert plan[0].in_channels == 2

    def test_resolution_8(self):
        plan = generator_plan(ModelConfig(resolution=8))
        assert [(s.out_size, s.out_channels) for s in plan] == [(4, 256), (8, 1)]
        assert [s.out_size for s in discriminator_plan(ModelConfig(resolution=8))] == [4, 1]

    @pytest.mark.parametrize("r", [8, 16, 32, 64])
    def test_sizes_follow_conv_arithmetic(self, r):
        config = ModelConfig(resolution=r)
        for s in generator_plan(config):
            assert s.out_size == tconv_out(s.in_size, 4, s.stride, s.padding)
        for s in discriminator_plan(config):
            assert s.out_size == conv_out(s.in_size, 4, s.stride, s.padding)
        assert generator_plan(config)[-1].out_size == r

    def test_one_hot_widens_inputs(self):
        config = ModelConfig(n_conditions=4, condition_encoding="one-hot")
        assert generator_plan(config)[0].in_channels == 204
        assert discriminator_plan(config)[0].in_channels == 5

    @pytest.mark.parametrize("r", [4, 12, 24, 30])
    def test_unsupported_resolution(self, r):
        with pytest.raises(ConfigError):
            generator_plan(ModelConfig(resolution=r))


# ─── Forward passes ───────────────────────────────────────────────────────────

class TestGenerator:
    def test_output_shape_and_range(self):
        config = _small()
        gen = init_generator(config, seed=0)
        z, y = expand_conditions(_latents(config, 3), 2)
        out = generator_forward(gen, z, y)
        assert out.shape == (6, 8, 8, 8)
        assert torch.all((out > 0) & (out < 1))

    def test_eval_is_deterministic(self):
        config = _small()
        gen = init_generator(config, seed=0)
        z = _latents(config, 4)
        y = torch.tensor([0, 1, 0, 1])
        assert torch.equal(generator_forward(gen, z, y), generator_forward(gen, z, y))

    @pytest.mark.parametrize("encoding", ["scalar", "one-hot"])
    def test_condition_changes_output(self, encoding):
        config = _small(condition_encoding=encoding)
        gen = init_generator(config, seed=1)
        z = _latents(config, 2)
        a = generator_forward(gen, z, torch.tensor([0, 0]))
        b = generator_forward(gen, z, torch.tensor([1, 1]))
        assert not torch.equal(a, b)

    def test_zero_output_layer_gives_half(self):
        config = _small()
        gen = init_generator(config, seed=0)
        with torch.no_grad():
            gen.layers[-1].weight.zero_()
        out = generator_forward(gen, _latents(config, 2), torch.tensor([0, 1]))
        assert torch.allclose(out, torch.full_like(out, 0.5))

    def test_same_seed_same_parameters(self):
        config = _small()
        a = init_generator(config, seed=3)
        b = init_generator(config, seed=3)
        for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb and torch.equal(pa, pb)

    def test_generator_and_discriminator_streams_differ(self):
        config = _small()
        g = init_generator(config, seed=0)
        d = init_discriminator(config, seed=0)
        assert not torch.equal(g.layers[0].weight.flatten()[:8], d.layers[0].weight.flatten()[:8])

    def test_float64(self):
        config = _small()
        gen = init_generator(config, seed=0, dtype=torch.float64)
        z = sample_latents(2, config, torch.Generator().manual_seed(0), dtype=torch.float64)
        assert generator_forward(gen, z, torch.tensor([0, 1])).dtype == torch.float64

    def test_uniform_prior(self):
        z = sample_latents(100, _small(latent_prior="uniform"), torch.Generator().manual_seed(0))
        assert float(z.min()) >= 0.0 and float(z.max()) < 1.0

    def test_wrong_latent_width(self):
        config = _small()
        gen = init_generator(config, seed=0)
        with pytest.raises(ContractViolation):
            generator_forward(gen, torch.zeros(2, 17), torch.tensor([0, 1]))

    def test_condition_count_mismatch(self):
        config = _small()
        gen = init_generator(config, seed=0)
        with pytest.raises(ContractViolation):
            generator_forward(gen, torch.zeros(2, 16), torch.tensor([0]))

    def test_condition_out_of_range(self):
        config = _small()
        gen = init_generator(config, seed=0)
        with pytest.raises(ContractViolation):
            generator_forward(gen, torch.zeros(2, 16), torch.tensor([0, 2]))

    def test_bad_mode(self):
        config = _small()
        gen = init_generator(config, seed=0)
        with pytest.raises(ContractViolation):
            generator_forward(gen, torch.zeros(2, 16), torch.tensor([0, 1]), mode="infer")


class TestDiscriminator:
    def test_output_shape_and_range(self):
        config = _small()
        disc = init_discriminator(config, seed=0)
        grids = torch.rand(5, 8, 8, 8, generator=torch.Generator().manual_seed(0))
        p = discriminator_forward(disc, grids, torch.tensor([0, 1, 0, 1, 0]))
        assert p.shape == (5,)
        assert torch.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("encoding", ["scalar", "one-hot"])
    def test_condition_changes_output(self, encoding):
        config = _small(condition_encoding=encoding)
        disc = init_discriminator(config, seed=2)
        grids = torch.rand(2, 8, 8, 8, generator=torch.Generator().manual_seed(1))
        a = discriminator_forward(disc, grids, torch.tensor([0, 0]))
        b = discriminator_forward(disc, grids, torch.tensor([1, 1]))
        assert not torch.equal(a, b)

    def test_zero_output_layer_gives_half(self):
        config = _small()
        disc = init_discriminator(config, seed=0)
        with torch.no_grad():
            disc.layers[-1].weight.zero_()
        p = discriminator_forward(disc, torch.rand(3, 8, 8, 8), torch.tensor([0, 1, 0]))
        assert torch.allclose(p, torch.full_like(p, 0.5))

    def test_wrong_grid_shape(self):
        disc = init_discriminator(_small(), seed=0)
        with pytest.raises(ContractViolation):
            discriminator_forward(disc, torch.zeros(2, 16, 16, 16), torch.tensor([0, 1]))

    def test_empty_batch(self):
        disc = init_discriminator(_small(), seed=0)
        with pytest.raises(ContractViolation):
            discriminator_forward(disc, torch.zeros(0, 8, 8, 8), torch.zeros(0, dtype=torch.int64))

    def test_float_conditions_rejected(self):
        disc = init_discriminator(_small(), seed=0)
        with pytest.raises(ContractViolation):
            discriminator_forward(disc, torch.zeros(2, 8, 8, 8), torch.tensor([0.0, 1.0]))


class TestExpandConditions:
    def test_shared_latent_layout(self):
        z = torch.arange(6, dtype=torch.float32).view(3, 2)
        z_rep, y = expand_conditions(z, 2)
        assert y.tolist() == [0, 1, 0, 1, 0, 1]
        assert torch.equal(z_rep[2], z[1]) and torch.equal(z_rep[3], z[1])

    def test_four_conditions(self):
        z_rep, y = expand_conditions(torch.zeros(2, 5), 4)
        assert z_rep.shape == (8, 5)
        assert y.tolist() == [0, 1, 2, 3, 0, 1, 2, 3]
