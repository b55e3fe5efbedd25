"""
pvgan — GAN losses, discriminator accuracy and the paired generator loss

All losses clamp probabilities to [clamp, 1 − clamp] before taking logs, so
they stay finite for every parameter value.

The paired loss generates every condition's sample from one shared latent,
rotates each back into the condition-0 frame (torch.rot90, a permutation),
averages them, and asks the discriminator whether the merged grid is a real
condition-0 object. Gradients reach all n generator branches.
"""

import torch

from pvgan.config import GENERATOR_LOSSES
from pvgan.errors import ContractViolation
from pvgan.model.networks import Discriminator, Generator, discriminator_forward, expand_conditions, generator_forward
from pvgan.voxels.grid import ROTATION_AXES, all_conditions

DEFAULT_CLAMP = 1e-7


def _clamped(probs: torch.Tensor, clamp: float) -> torch.Tensor:
    return probs.clamp(clamp, 1.0 - clamp)


def _require_nonempty(name: str, probs: torch.Tensor) -> None:
    if probs.numel() == 0:
        raise ContractViolation(f"{name} must not be empty")


def d_loss(real_probs: torch.Tensor, fake_probs: torch.Tensor, clamp: float = DEFAULT_CLAMP) -> torch.Tensor:
    """mean(−log p_real) + mean(−log(1 − p_fake))."""
    _require_nonempty("real_probs", real_probs)
    _require_nonempty("fake_probs", fake_probs)
    real_term = -torch.log(_clamped(real_probs, clamp)).mean()
    fake_term = -torch.log(1.0 - _clamped(fake_probs, clamp)).mean()
    return real_term + fake_term


def g_loss(fake_probs: torch.Tensor, clamp: float = DEFAULT_CLAMP,
           form: str = "non_saturating") -> torch.Tensor:
    """Non-saturating −mean log p_fake, or the minimax mean log(1 − p_fake)."""
    _require_nonempty("fake_probs", fake_probs)
    if form not in GENERATOR_LOSSES:
        raise ContractViolation(f"generator loss must be one of {GENERATOR_LOSSES}, got {form!r}")
    p = _clamped(fake_probs, clamp)
    if form == "minimax":
        return torch.log(1.0 - p).mean()
    return -torch.log(p).mean()


def d_accuracy(real_probs: torch.Tensor, fake_probs: torch.Tensor) -> float:
    """Fraction classified correctly; a real needs p > 0.5, a fake is right at p ≤ 0.5."""
    _require_nonempty("real_probs", real_probs)
    _require_nonempty("fake_probs", fake_probs)
    correct = int((real_probs > 0.5).sum()) + int((fake_probs <= 0.5).sum())
    return correct / (real_probs.numel() + fake_probs.numel())


# ── Align / merge on batched tensors ───────────────────────────────────────────

def align_batch(samples: torch.Tensor, n_conditions: int) -> torch.Tensor:
    """[B, n, R, R, R] in condition frames → same shape in the condition-0 frame."""
    if samples.ndim != 5 or samples.shape[1] != n_conditions:
        raise ContractViolation(f"expected [B, {n_conditions}, R, R, R], got {tuple(samples.shape)}")
    branches = [
        torch.rot90(samples[:, c.index], -c.quarter_turns, dims=ROTATION_AXES) if c.quarter_turns else samples[:, c.index]
        for c in all_conditions(n_conditions)
    ]
    return torch.stack(branches, dim=1)


def merge_batch(aligned: torch.Tensor) -> torch.Tensor:
    """Mean over the condition axis: [B, n, R, R, R] → [B, R, R, R]."""
    return aligned.mean(dim=1)


def _check_condition_set(conditions, n_conditions: int) -> None:
    indices = sorted(int(getattr(c, "index", c)) for c in conditions)
    if indices != list(range(n_conditions)):
        raise ContractViolation(
            f"paired loss needs every condition 0..{n_conditions - 1} exactly once, got {indices}"
        )


def paired_loss_from_samples(samples: torch.Tensor, disc: Discriminator, clamp: float = DEFAULT_CLAMP,
                             form: str = "non_saturating", mode: str = "train") -> torch.Tensor:
    """Paired loss given the per-condition samples S_i, laid out [B, n, R, R, R]."""
    n = disc.config.n_conditions
    merged = merge_batch(align_batch(samples, n))
    y0 = torch.zeros(merged.shape[0], dtype=torch.int64)
    return g_loss(discriminator_forward(disc, merged, y0, mode=mode), clamp, form)


def generate_pairs(gen: Generator, z: torch.Tensor, mode: str = "train") -> torch.Tensor:
    """All-condition samples for each latent row: [B, latent] → [B, n, R, R, R]."""
    n = gen.config.n_conditions
    z_rep, y = expand_conditions(z, n)
    out = generator_forward(gen, z_rep, y, mode=mode)
    r = gen.config.resolution
    return out.view(z.shape[0], n, r, r, r)


def paired_g_loss(gen: Generator, disc: Discriminator, z: torch.Tensor, conditions=None,
                  clamp: float = DEFAULT_CLAMP, form: str = "non_saturating",
                  mode: str = "train") -> torch.Tensor:
    """−mean log D(merge(align(G(z|y_0..y_{n−1}))) | y_0).

    `conditions` defaults to the full set; anything else must still list each
    condition exactly once.
    """
    n = gen.config.n_conditions
    if disc.config.n_conditions != n:
        raise ContractViolation("generator and discriminator disagree on n_conditions")
    _check_condition_set(range(n) if conditions is None else conditions, n)
    return paired_loss_from_samples(generate_pairs(gen, z, mode=mode), disc, clamp, form, mode=mode)
