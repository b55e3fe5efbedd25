"""
pvgan — Finite-difference checks of the three generator/discriminator losses

Builds a tiny 64-bit model (8³ grids, 8 base channels, batch of 2) and
compares autograd with central differences for:

    d_loss          w.r.t. discriminator parameters
    g_loss          w.r.t. generator parameters
    paired_g_loss   w.r.t. generator parameters
    paired_branch<c> w.r.t. the generated sample of condition c, fed through
                    align/merge/discriminate

Used by the test suite and by `pvgan gradcheck`.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from pvgan.config import ModelConfig
from pvgan.model.gradients import FDResult, activation_inputs, finite_difference_check
from pvgan.model.networks import (
    Discriminator, Generator, discriminator_forward, expand_conditions, generator_forward,
    init_discriminator, init_generator, sample_latents,
)
from pvgan.training.losses import d_loss, g_loss, generate_pairs, paired_g_loss, paired_loss_from_samples

log = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
# absolute disagreement below this is central-difference roundoff
FD_NOISE_FLOOR = 1e-9
MIN_PER_BRANCH = 5


@dataclass
class TinyProblem:
    gen: Generator
    disc: Discriminator
    real: torch.Tensor
    y_real: torch.Tensor
    z: torch.Tensor


def tiny_problem(n_conditions: int = 2, seed: int = 0, batch: int = 2) -> TinyProblem:
    config = ModelConfig(resolution=8, latent_dim=16, base_channels=8, n_conditions=n_conditions, init_std=0.1)
    gen = init_generator(config, seed, torch.float64)
    disc = init_discriminator(config, seed, torch.float64)
    rng = np.random.default_rng(seed)
    real = torch.from_numpy((rng.random((batch, 8, 8, 8)) > 0.5).astype(np.float64))
    y_real = torch.arange(batch, dtype=torch.int64) % n_conditions
    z = sample_latents(batch, config, torch.Generator().manual_seed(seed), torch.float64)
    return TinyProblem(gen, disc, real, y_real, z)


def loss_gradient_checks(n_samples: int = 50, seed: int = 0, n_conditions: int = 2) -> dict[str, list[FDResult]]:
    p = tiny_problem(n_conditions, seed)
    gen, disc = p.gen, p.disc
    z_rep, y_fake = expand_conditions(p.z, n_conditions)
    with torch.no_grad():
        fixed_fakes = generator_forward(gen, z_rep, y_fake, mode="train")

    def d_closure():
        p_real = discriminator_forward(disc, p.real, p.y_real, mode="train")
        p_fake = discriminator_forward(disc, fixed_fakes, y_fake, mode="train")
        return d_loss(p_real, p_fake)

    def g_closure():
        fakes = generator_forward(gen, z_rep, y_fake, mode="train")
        return g_loss(discriminator_forward(disc, fakes, y_fake, mode="train"))

    def pair_closure():
        return paired_g_loss(gen, disc, p.z)

    results = {
        "d_loss": finite_difference_check(disc, d_closure, n_samples, seed=seed,
                                          kink_modules=activation_inputs(disc)),
        "g_loss": finite_difference_check(gen, g_closure, n_samples, seed=seed,
                                          kink_modules=activation_inputs(gen, disc)),
        "paired_g_loss": finite_difference_check(gen, pair_closure, n_samples, seed=seed,
                                                 kink_modules=activation_inputs(gen, disc)),
    }

    with torch.no_grad():
        samples = generate_pairs(gen, p.z, mode="train")
    branches = [samples[:, c].contiguous().clone().requires_grad_(True) for c in range(n_conditions)]
    per_branch = max(MIN_PER_BRANCH, n_samples // n_conditions)
    for c, branch in enumerate(branches):
        def branch_closure():
            return paired_loss_from_samples(torch.stack(branches, dim=1), disc)

        results[f"paired_branch{c}"] = finite_difference_check(
            {f"branch{c}": branch}, branch_closure, per_branch, seed=seed + c,
            kink_modules=activation_inputs(disc),
        )
    return results


def failing(results: dict[str, list[FDResult]], tolerance: float = GRADCHECK_TOLERANCE) -> dict[str, int]:
    """Count of coordinates over tolerance, per loss (only losses with failures)."""
    bad = {}
    for name, rows in results.items():
        n = sum(r.rel_error >= tolerance and abs(r.analytic - r.numeric) >= FD_NOISE_FLOOR for r in rows)
        if n:
            bad[name] = n
    return bad
