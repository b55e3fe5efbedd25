# pvgan.model — Conditional generator/discriminator, gradients and checkpoints
