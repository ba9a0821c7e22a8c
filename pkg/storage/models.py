"""
Persisted records.

A Checkpoint is everything needed to resume training exactly: the decoder
(and optionally encoder) description, parameters, Adam moments, the step
counter, the batch RNG state and the loss history.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from schemas.network_schemas import EncoderSpec, NetworkSpec

ENCODER_PREFIX = "encoder."


@dataclass
class AdamState:
    """First and second moments keyed like the parameters they track."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step=self.step,
        )


@dataclass
class Checkpoint:
    network: NetworkSpec
    parameters: Dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)
    rng_state: Optional[dict] = None
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))
    encoder: Optional[EncoderSpec] = None
    # resolved RunConfig plus the feature source description
    metadata: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return self.adam.step

    def decoder_parameters(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.parameters.items() if not k.startswith(ENCODER_PREFIX)}

    def encoder_parameters(self) -> Dict[str, np.ndarray]:
        return {
            k[len(ENCODER_PREFIX):]: v
            for k, v in self.parameters.items()
            if k.startswith(ENCODER_PREFIX)
        }
