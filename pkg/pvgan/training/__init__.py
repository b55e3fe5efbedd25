# pvgan.training — Losses, the paired training step and the training loop
