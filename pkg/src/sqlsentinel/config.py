"""Shared training configuration."""

from __future__ import annotations

from dataclasses import dataclass

# Per-model learning-rate defaults. The generic 1e-5 suits fine-tuning an
# already-trained encoder; the from-scratch autoencoder and the linear
# softmax classifier start from random/zero weights and need larger steps
# to converge within the same 6-epoch budget.
DEFAULT_LEARNING_RATE = 1e-5
AE_LEARNING_RATE = 1e-3
CLASSIFIER_LEARNING_RATE = 1e-2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    batch_size: int = 16
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")

    def with_learning_rate(self, lr: float) -> "TrainConfig":
        return TrainConfig(self.epochs, self.batch_size, lr, self.seed)

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, seed)
