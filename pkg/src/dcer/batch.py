"""The multimodal sample batch passed between data, model, and harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

MODALITIES = ("audio", "video", "text")
MODALITY_INDEX = {m: i for i, m in enumerate(MODALITIES)}


@dataclass
class ModalityBatch:
    """Per-modality sequences plus presence flags and labels.

    `text` is either an int token-id array (B, T_t) or a float embedding
    array (B, T_t, E) when precomputed text features are ingested.
    `presence` columns follow the (audio, video, text) order.
    """

    audio: np.ndarray
    video: np.ndarray
    text: np.ndarray
    labels: np.ndarray
    presence: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.labels))]
        self.presence = np.asarray(self.presence, dtype=bool)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def text_is_tokens(self) -> bool:
        return np.issubdtype(self.text.dtype, np.integer)

    def subset(self, idx: np.ndarray) -> "ModalityBatch":
        idx = np.asarray(idx)
        return ModalityBatch(
            audio=self.audio[idx],
            video=self.video[idx],
            text=self.text[idx],
            labels=self.labels[idx],
            presence=self.presence[idx],
            ids=[self.ids[i] for i in idx],
        )

    def copy(self) -> "ModalityBatch":
        return ModalityBatch(
            audio=self.audio.copy(),
            video=self.video.copy(),
            text=self.text.copy(),
            labels=self.labels.copy(),
            presence=self.presence.copy(),
            ids=list(self.ids),
        )


def complete_presence(n: int) -> np.ndarray:
    return np.ones((n, 3), dtype=bool)
