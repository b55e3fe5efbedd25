"""
pvgan — Training loop, train state and checkpoints

One train_step runs, in order:

  1. discriminator update on the real rows and on freshly generated fakes,
     only when the previous batch's discriminator accuracy was below the gate
  2. generator update through the discriminator on those same fakes
  3. optionally, the paired generator-only update: every condition's sample
     from one latent, aligned, merged and judged under condition 0

A batch is a list of rows, one real sample per condition each, so the
discriminator sees as many reals as fakes in every condition. The paired
update has its own Adam optimizer and moments.

Steps 2 and 3 never change discriminator weights or batch-norm statistics.
Latents for step s come from a generator seeded with (seed, s) and batch
order for epoch e from (seed, e), so a resumed run replays exactly what an
uninterrupted one would have done.

Run directory layout:

    manifest.json          resolved config, hash, overrides, timestamps
    run.log                one tab-separated StepLog line per step
    ckpt_step<N>.pvg       every checkpoint_every epochs
    final.pvg              always
"""

import dataclasses
import json
import logging
from collections import OrderedDict
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass
from datetime import datetime
from itertools import islice
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from pvgan.config import RunConfig, config_hash, run_config_from_tree
from pvgan.data.loader import (
    ConditionedSample, batches, batches_per_epoch, condition_rows, load_dataset, stack_batch,
)
from pvgan.errors import ConfigError, ContractViolation, FormatError, NumericError
from pvgan.model.checkpoint import read_checkpoint, write_checkpoint
from pvgan.model.networks import (
    Discriminator, Generator, discriminator_forward, expand_conditions, generator_forward,
    init_discriminator, init_generator, sample_latents,
)
from pvgan.training.losses import d_accuracy, d_loss, g_loss, paired_g_loss

log = logging.getLogger(__name__)

RUN_MANIFEST = "manifest.json"
RUN_LOG = "run.log"
FINAL_CHECKPOINT = "final.pvg"
LOG_FIELDS = ("step", "d_loss", "g_loss", "pair_loss", "d_accuracy_prev", "d_updated", "d_accuracy")

TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}


# ── State and step log ─────────────────────────────────────────────────────────

@dataclass
class StepLog:
    step: int
    d_loss: float
    g_loss: float
    pair_loss: float
    d_accuracy_prev: float
    d_updated: bool
    d_accuracy: float

    def to_line(self) -> str:
        return "\t".join([
            str(self.step), repr(self.d_loss), repr(self.g_loss), repr(self.pair_loss),
            repr(self.d_accuracy_prev), "1" if self.d_updated else "0", repr(self.d_accuracy),
        ])

    @classmethod
    def parse(cls, line: str) -> "StepLog":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(LOG_FIELDS):
            raise FormatError(f"step log line has {len(parts)} fields, expected {len(LOG_FIELDS)}")
        return cls(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]),
                   float(parts[4]), parts[5] == "1", float(parts[6]))


def read_step_log(path) -> list[StepLog]:
    entries = []
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            entries.append(StepLog.parse(line))
    return entries


@dataclass
class TrainState:
    config: RunConfig
    generator: Generator
    discriminator: Discriminator
    g_optim: torch.optim.Adam
    d_optim: torch.optim.Adam
    p_optim: torch.optim.Adam  # paired step
    step: int = 0
    epoch: int = 0           # completed epochs
    prev_accuracy: float = 0.0
    n_rows: int = 0          # dataset rows per epoch, 0 until training starts

    @property
    def dtype(self) -> torch.dtype:
        return TORCH_DTYPES[self.config.train.dtype]


def _adam(params, lr: float, config: RunConfig) -> torch.optim.Adam:
    tc = config.train
    return torch.optim.Adam(params, lr=lr, betas=(tc.adam_beta1, tc.adam_beta2), eps=tc.adam_eps)


def init_state(config: RunConfig) -> TrainState:
    config.validate()
    dtype = TORCH_DTYPES[config.train.dtype]
    gen = init_generator(config.model, config.train.seed, dtype)
    disc = init_discriminator(config.model, config.train.seed, dtype)
    return TrainState(
        config=config,
        generator=gen,
        discriminator=disc,
        g_optim=_adam(gen.parameters(), config.train.lr_generator, config),
        d_optim=_adam(disc.parameters(), config.train.lr_discriminator, config),
        p_optim=_adam(gen.parameters(), config.train.lr_paired or config.train.lr_generator, config),
    )


def latent_seed(seed: int, step: int) -> int:
    return seed * 1_000_003 + step


@contextmanager
def frozen_statistics(net: torch.nn.Module):
    """Restore every buffer (batch-norm running stats and counters) on exit."""
    saved = [b.detach().clone() for b in net.buffers()]
    try:
        yield
    finally:
        with torch.no_grad():
            for buf, value in zip(net.buffers(), saved):
                buf.copy_(value)


def _check_finite(loss: torch.Tensor, what: str, step: int) -> None:
    if not torch.isfinite(loss).all():
        raise NumericError(f"non-finite {what}", step=step)


def _generator_update(state: TrainState, optim: torch.optim.Adam, loss: torch.Tensor) -> None:
    optim.zero_grad(set_to_none=True)
    loss.backward()
    optim.step()
    # gradients reaching D through this loss are computed and thrown away
    state.discriminator.zero_grad(set_to_none=True)


def train_step(state: TrainState, batch: Sequence[Sequence[ConditionedSample]]) -> StepLog:
    """One step on a batch of condition rows; row b lines up with latent b's fakes."""
    if not batch:
        raise ContractViolation("train_step needs a non-empty batch")
    tc, mc = state.config.train, state.config.model
    gen, disc = state.generator, state.discriminator
    expected = list(range(mc.n_conditions))
    for row in batch:
        if [s.condition.index for s in row] != expected:
            raise ContractViolation(f"each batch row must hold conditions {expected} in order")
    grids, conds = stack_batch([s for row in batch for s in row])
    real = torch.from_numpy(grids).to(state.dtype)
    y_real = torch.from_numpy(conds)

    rng = torch.Generator().manual_seed(latent_seed(tc.seed, state.step))
    z = sample_latents(len(batch), mc, rng, state.dtype)
    z_rep, y_fake = expand_conditions(z, mc.n_conditions)
    fakes = generator_forward(gen, z_rep, y_fake, mode="train")

    d_updated = state.prev_accuracy < tc.gate_threshold
    with (nullcontext() if d_updated else frozen_statistics(disc)), torch.set_grad_enabled(d_updated):
        p_real = discriminator_forward(disc, real, y_real, mode="train")
        p_fake = discriminator_forward(disc, fakes.detach(), y_fake, mode="train")
        loss_d = d_loss(p_real, p_fake, tc.prob_clamp)
        _check_finite(loss_d, "discriminator loss", state.step)
        accuracy = d_accuracy(p_real.detach(), p_fake.detach())
        if d_updated:
            state.d_optim.zero_grad(set_to_none=True)
            loss_d.backward()
            state.d_optim.step()

    with frozen_statistics(disc):
        loss_g = g_loss(discriminator_forward(disc, fakes, y_fake, mode="train"), tc.prob_clamp, tc.generator_loss)
        _check_finite(loss_g, "generator loss", state.step)
        _generator_update(state, state.g_optim, loss_g)

    pair_value = 0.0
    if tc.paired_step_enabled:
        with frozen_statistics(disc):
            loss_p = paired_g_loss(gen, disc, z, clamp=tc.prob_clamp, form=tc.generator_loss)
            _check_finite(loss_p, "paired loss", state.step)
            _generator_update(state, state.p_optim, tc.pair_loss_weight * loss_p)
        pair_value = loss_p.item()

    entry = StepLog(
        step=state.step,
        d_loss=loss_d.item(),
        g_loss=loss_g.item(),
        pair_loss=pair_value,
        d_accuracy_prev=state.prev_accuracy,
        d_updated=d_updated,
        d_accuracy=accuracy,
    )
    state.prev_accuracy = accuracy
    state.step += 1
    return entry


# ── Checkpoints ────────────────────────────────────────────────────────────────

def _optimizers(state: TrainState) -> tuple:
    """(checkpoint prefix, network, optimizer) for every optimizer in the state."""
    return (
        ("generator", state.generator, state.g_optim),
        ("discriminator", state.discriminator, state.d_optim),
        ("paired", state.generator, state.p_optim),
    )


def _state_tensors(state: TrainState) -> "OrderedDict[str, np.ndarray]":
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for prefix, net in (("generator", state.generator), ("discriminator", state.discriminator)):
        for name, t in net.state_dict().items():
            tensors[f"{prefix}.{name}"] = t.detach().cpu().numpy()
    for prefix, net, optim in _optimizers(state):
        for name, p in net.named_parameters():
            moments = optim.state.get(p)
            if not moments:
                continue
            key = f"optim.{prefix}.{name}"
            tensors[f"{key}.step"] = np.asarray(float(moments["step"]), dtype=np.float64)
            tensors[f"{key}.exp_avg"] = moments["exp_avg"].detach().cpu().numpy()
            tensors[f"{key}.exp_avg_sq"] = moments["exp_avg_sq"].detach().cpu().numpy()
    return tensors


def checkpoint_meta(state: TrainState) -> dict:
    return {
        "format": "pvgan",
        "config": state.config.to_tree(),
        "state": {"step": state.step, "epoch": state.epoch, "prev_accuracy": state.prev_accuracy,
                  "rows": state.n_rows},
    }


def save_checkpoint(state: TrainState, path) -> Path:
    return write_checkpoint(path, checkpoint_meta(state), _state_tensors(state))


def _scalar_dtype() -> torch.dtype:
    # Adam keeps its step counter in this dtype
    return torch.float64 if torch.get_default_dtype() == torch.float64 else torch.float32


def _restore_net(net: torch.nn.Module, prefix: str, tensors: dict, path) -> set[str]:
    wanted = net.state_dict()
    used = set()
    restored = {}
    for name, current in wanted.items():
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise FormatError(f"checkpoint lacks tensor {key}", path=path)
        arr = tensors[key]
        if tuple(arr.shape) != tuple(current.shape):
            raise FormatError(f"tensor {key} has shape {arr.shape}, model expects {tuple(current.shape)}", path=path)
        restored[name] = torch.from_numpy(arr.copy()).to(current.dtype)
        used.add(key)
    net.load_state_dict(restored)
    return used


def _restore_optim(net: torch.nn.Module, optim: torch.optim.Adam, prefix: str, tensors: dict, path) -> set[str]:
    used = set()
    for name, p in net.named_parameters():
        key = f"optim.{prefix}.{name}"
        if f"{key}.step" not in tensors:
            continue
        try:
            exp_avg = tensors[f"{key}.exp_avg"]
            exp_avg_sq = tensors[f"{key}.exp_avg_sq"]
        except KeyError as e:
            raise FormatError(f"incomplete optimizer state for {key}: missing {e}", path=path) from None
        if exp_avg.shape != tuple(p.shape) or exp_avg_sq.shape != tuple(p.shape):
            raise FormatError(f"optimizer moments for {key} do not match parameter shape", path=path)
        optim.state[p] = {
            "step": torch.tensor(float(tensors[f"{key}.step"]), dtype=_scalar_dtype()),
            "exp_avg": torch.from_numpy(exp_avg.copy()).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(exp_avg_sq.copy()).to(p.dtype),
        }
        used.update({f"{key}.step", f"{key}.exp_avg", f"{key}.exp_avg_sq"})
    return used


def load_checkpoint(path, run_config: Optional[RunConfig] = None) -> TrainState:
    """Rebuild a TrainState. With run_config, its model section must match the checkpoint's."""
    meta, tensors = read_checkpoint(path)
    saved_config = _saved_config(meta, path)
    try:
        saved = meta["state"]
        step, epoch, prev_accuracy = int(saved["step"]), int(saved["epoch"]), float(saved["prev_accuracy"])
        n_rows = int(saved["rows"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"checkpoint metadata incomplete: {e}", path=path) from None

    config = saved_config
    if run_config is not None:
        if dataclasses.asdict(run_config.model) != dataclasses.asdict(saved_config.model):
            raise ContractViolation(
                f"checkpoint {path} was trained with a different model config "
                f"(resolution {saved_config.model.resolution}, n_conditions {saved_config.model.n_conditions})"
            )
        if run_config.train.batch_size != saved_config.train.batch_size:
            raise ConfigError(
                "train.batch_size",
                f"checkpoint {path} was trained with batch size {saved_config.train.batch_size}, "
                f"resume asks for {run_config.train.batch_size}",
            )
        config = run_config

    state = init_state(config)
    used = _restore_net(state.generator, "generator", tensors, path)
    used |= _restore_net(state.discriminator, "discriminator", tensors, path)
    for prefix, net, optim in _optimizers(state):
        used |= _restore_optim(net, optim, prefix, tensors, path)
    unknown = sorted(set(tensors) - used)
    if unknown:
        raise FormatError(f"unexpected tensors in checkpoint: {', '.join(unknown[:5])}", path=path)
    state.step, state.epoch, state.prev_accuracy, state.n_rows = step, epoch, prev_accuracy, n_rows
    return state


def _saved_config(meta: dict, path) -> RunConfig:
    try:
        return run_config_from_tree(meta["config"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"checkpoint metadata incomplete: {e}", path=path) from None


def load_generator(path, resolution: Optional[int] = None) -> tuple[Generator, RunConfig]:
    """Generator only, in eval mode, plus the run config it was trained with."""
    meta, tensors = read_checkpoint(path)
    saved_config = _saved_config(meta, path)
    if resolution is not None and resolution != saved_config.model.resolution:
        raise ContractViolation(
            f"checkpoint resolution {saved_config.model.resolution} does not match "
            f"requested resolution {resolution}"
        )
    gen = init_generator(saved_config.model, saved_config.train.seed, TORCH_DTYPES[saved_config.train.dtype])
    _restore_net(gen, "generator", tensors, path)
    gen.eval()
    return gen, saved_config


# ── Run manifest ───────────────────────────────────────────────────────────────

def _now() -> str:
    return datetime.now().isoformat(timespec="seconds")


def write_run_manifest(out_dir: Path, config: RunConfig, overrides: Sequence[str] = (),
                       resume: Optional[str] = None) -> dict:
    tree = config.to_tree()
    digest = config_hash(tree)
    manifest = {
        "run_id": f"{datetime.now():%Y%m%d-%H%M%S}-{digest[:8]}",
        "config": tree,
        "config_hash": digest,
        "overrides": list(overrides),
        "resumed_from": str(resume) if resume else None,
        "created": _now(),
        "finished": None,
        "output_dir": str(out_dir.resolve()),
    }
    (out_dir / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _finish_run_manifest(out_dir: Path, manifest: dict, state: TrainState) -> None:
    manifest["finished"] = _now()
    manifest["final_step"] = state.step
    manifest["final_epoch"] = state.epoch
    (out_dir / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ── Training loop ──────────────────────────────────────────────────────────────

def _step_cap_reached(state: TrainState) -> bool:
    cap = state.config.train.max_steps
    return cap > 0 and state.step >= cap


def train(config: RunConfig, out_dir, resume=None, overrides: Sequence[str] = (),
          samples: Optional[Sequence[ConditionedSample]] = None) -> TrainState:
    """Train into out_dir and return the final state.

    `samples` replaces loading from config.dataset (tests pass in-memory data).
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = write_run_manifest(out_dir, config, overrides, resume)

    if samples is None:
        samples = load_dataset(config.dataset)
    rows = condition_rows(list(samples), config.model.n_conditions)
    tc = config.train
    if tc.epochs > 0 and not rows:
        raise ContractViolation(f"dataset {config.dataset.class_name!r} is empty")

    state = load_checkpoint(resume, config) if resume else init_state(config)
    if resume and state.n_rows and state.n_rows != len(rows):
        raise ConfigError(
            "dataset",
            f"checkpoint {resume} was trained on {state.n_rows} rows per epoch, this dataset has {len(rows)}",
        )
    state.n_rows = len(rows)
    per_epoch = batches_per_epoch(len(rows), tc.batch_size)
    log.info(f"Training: {len(rows)} rows of {config.model.n_conditions} conditions, {per_epoch} batches/epoch, "
             f"paired step {'on' if tc.paired_step_enabled else 'off'}, from step {state.step}")

    log_path = out_dir / RUN_LOG
    with open(log_path, "a" if resume else "w") as fh:
        if fh.tell() == 0:
            fh.write("# " + "\t".join(LOG_FIELDS) + "\n")
        for epoch in range(state.epoch, tc.epochs):
            done = state.step - epoch * per_epoch
            for batch in islice(batches(rows, tc.batch_size, tc.seed, epoch), done, None):
                if _step_cap_reached(state):
                    break
                entry = train_step(state, batch)
                fh.write(entry.to_line() + "\n")
                log.debug(f"step {entry.step}: d={entry.d_loss:.4f} g={entry.g_loss:.4f} "
                          f"pair={entry.pair_loss:.4f} acc={entry.d_accuracy:.3f}")
            if state.step - epoch * per_epoch < per_epoch:
                break
            state.epoch = epoch + 1
            fh.flush()
            log.info(f"Epoch {state.epoch}/{tc.epochs} done (step {state.step}, accuracy {state.prev_accuracy:.3f})")
            if state.epoch % tc.checkpoint_every == 0:
                path = save_checkpoint(state, out_dir / f"ckpt_step{state.step}.pvg")
                log.info(f"Checkpoint written: {path}")

    final = save_checkpoint(state, out_dir / FINAL_CHECKPOINT)
    log.info(f"Final checkpoint written: {final}")
    _finish_run_manifest(out_dir, manifest, state)
    return state
