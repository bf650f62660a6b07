"""The full pipeline: modality encoders -> type-tagged concatenation ->
bottleneck fusion -> prediction head, plus the missing-modality fill path
(partial fusion, energy descent, re-fusion) used at inference.

Missing modalities are handled with key masks: the concatenated token
sequence always has the full layout, and absent modalities' token positions
receive exactly zero attention, which matches dropping them from the
sequence up to floating-point reassociation. This keeps every pass batched
over samples regardless of their presence patterns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .batch import MODALITIES, MODALITY_INDEX, ModalityBatch
from .config import ModelConfig, ReconConfig
from .encoders import AudioEncoder, TextEncoder, VideoEncoder
from .energy import EnergyNet, Initializer, ReconResult, descend
from .errors import ContractError
from .fusion import BottleneckFusion, PredictionHead
from .nn import Module
from .tensor import Tensor, no_grad, param


class DcerModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0x5EED])
        self.audio_enc = AudioEncoder(cfg, rng)
        self.video_enc = VideoEncoder(cfg, rng)
        self.text_enc = TextEncoder(cfg, rng)
        self.type_embed = param(
            rng.normal(0.0, 0.1, size=(3, cfg.hidden)).astype(np.float32),
            no_decay=True,
        )
        self.fusion = BottleneckFusion(cfg, rng)
        self.head = PredictionHead(cfg, rng)
        self.energy_net = EnergyNet(cfg, rng)
        self.init_audio = Initializer(self.token_len("audio"), cfg, rng)
        self.init_video = Initializer(self.token_len("video"), cfg, rng)
        self.init_text = Initializer(self.token_len("text"), cfg, rng)

    # ------------------------------------------------------------------
    # encoding and fusion
    # ------------------------------------------------------------------

    def token_len(self, modality: str) -> int:
        if modality == "audio":
            block = 2**self.cfg.wavelet_levels
            t = self.cfg.audio_len
            return ((t + block - 1) // block) * block
        if modality == "video":
            return 4 * self.cfg.video_len
        return self.cfg.text_len

    def token_slices(self) -> Dict[str, Tuple[int, int]]:
        """(start, length) of each modality inside the concatenated layout."""
        out = {}
        start = 0
        for m in MODALITIES:
            length = self.token_len(m)
            out[m] = (start, length)
            start += length
        return out

    @property
    def total_tokens(self) -> int:
        return sum(self.token_len(m) for m in MODALITIES)

    def encode_modality(self, modality: str, raw: np.ndarray) -> Tensor:
        if modality == "audio":
            return self.audio_enc(Tensor(raw))
        if modality == "video":
            return self.video_enc(Tensor(raw))
        if np.issubdtype(np.asarray(raw).dtype, np.integer):
            return self.text_enc(raw)
        return self.text_enc.from_embeddings(Tensor(raw))

    def encode_all(self, batch: ModalityBatch) -> Dict[str, Tensor]:
        return {
            "audio": self.encode_modality("audio", batch.audio),
            "video": self.encode_modality("video", batch.video),
            "text": self.encode_modality("text", batch.text),
        }

    def type_tag(self, modality: str) -> Tensor:
        return T.narrow(self.type_embed, 0, MODALITY_INDEX[modality], 1)

    def concat_modalities(
        self,
        enc: Dict[str, Tensor],
        present: Sequence[bool],
        order: Tuple[str, ...] = MODALITIES,
    ) -> Tensor:
        """Concatenate present encodings along time, each token tagged with
        its learned modality-type embedding. Absent modalities contribute no
        tokens."""
        parts = []
        for m in order:
            if not present[MODALITY_INDEX[m]]:
                continue
            parts.append(T.add(enc[m], self.type_tag(m)))
        if not parts:
            raise ContractError("at least one modality must be present")
        return T.concat(parts, axis=1) if len(parts) > 1 else parts[0]

    def token_mask(self, presence: np.ndarray) -> np.ndarray:
        """(B, 3) presence flags -> (B, total_tokens) live-token mask."""
        mask = np.empty((presence.shape[0], self.total_tokens), dtype=bool)
        for m, (start, length) in self.token_slices().items():
            mask[:, start : start + length] = presence[:, MODALITY_INDEX[m]][:, None]
        return mask

    def fuse(self, h: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        return self.fusion(h, key_mask)

    def predict(self, z: Tensor) -> Tensor:
        return self.head(z)

    def forward_full(self, batch: ModalityBatch):
        """Complete-data pass; returns (yhat, Z, encodings) with graph intact."""
        enc = self.encode_all(batch)
        h = self.concat_modalities(enc, (True, True, True))
        z = self.fuse(h)
        return self.predict(z), z, enc

    def pooled_observed(self, enc: Dict[str, Tensor], presence: np.ndarray) -> Tensor:
        """Per-sample mean over observed modalities of their token-mean
        vectors; (B, D). `presence` is a (B, 3) boolean matrix."""
        if not presence.any(axis=1).all():
            raise ContractError("cannot pool with no observed modalities")
        weights = presence.astype(np.float32)
        counts = weights.sum(axis=1, keepdims=True)
        total = None
        for m in MODALITIES:
            pool = T.tmean(enc[m], axis=1)
            w = Tensor(weights[:, MODALITY_INDEX[m]][:, None])
            part = T.mul(pool, w)
            total = part if total is None else T.add(total, part)
        return T.div(total, Tensor(counts))

    def initializer(self, modality: str) -> Initializer:
        return {"audio": self.init_audio, "video": self.init_video, "text": self.init_text}[modality]

    # ------------------------------------------------------------------
    # missing-modality fill
    # ------------------------------------------------------------------

    def reconstruct_modality(
        self,
        modality: str,
        z_partial: Tensor,
        pooled_obs: Tensor,
        recon: ReconConfig,
        rng: Optional[np.random.Generator],
    ) -> Tuple[Tensor, ReconResult]:
        """Initialize the missing encoding from the bottleneck and refine it
        by energy descent.

        Returns the refined encoding as a graph tensor whose gradient path
        runs through the initializer only: the descent offset is applied as
        a constant, so training never backpropagates through the inner
        loop. The descent itself treats all parameters as constants.
        """
        h0 = self.initializer(modality)(z_partial, pooled_obs)
        start = h0.data
        if recon.sigma > 0.0:
            if rng is None:
                raise ContractError("reconstruction noise requires an rng")
            start = start + rng.normal(0.0, recon.sigma, size=start.shape).astype(np.float32)
        z_const = Tensor(z_partial.data)

        def energy_fn(h: Tensor) -> Tensor:
            return self.energy_net(h, z_const)

        result = descend(energy_fn, start, recon.steps, recon.eta, recon.rho)
        offset = Tensor(result.h - h0.data)
        return T.add(h0, offset), result

    def fill_missing(
        self,
        batch: ModalityBatch,
        recon: ReconConfig,
        rng: Optional[np.random.Generator] = None,
        mode: Optional[str] = None,
    ) -> "FillResult":
        """Predict every sample, reconstructing (or dropping) missing
        modalities per presence flags.

        One masked fusion produces the partial bottleneck for all samples at
        once; each modality's missing rows are reconstructed in a batch; one
        re-fusion over the completed token layout yields the final
        prediction. Per-sample uncertainty is the mean final energy over
        reconstructed modalities (zero for fully observed samples).
        """
        mode = mode or self.cfg.missing_mode
        n = len(batch)
        presence = batch.presence
        if not presence.any(axis=1).all():
            raise ContractError("every sample needs at least one observed modality")

        d = self.cfg.hidden
        slices = self.token_slices()
        all_present = bool(presence.all())

        with no_grad():
            tagged = np.zeros((n, self.total_tokens, d), dtype=np.float32)
            pooled = np.zeros((n, 3, d), dtype=np.float32)
            for m in MODALITIES:
                col = MODALITY_INDEX[m]
                rows = np.flatnonzero(presence[:, col])
                if not rows.size:
                    continue
                raw = getattr(batch, "text" if m == "text" else m)[rows]
                enc = self.encode_modality(m, raw).data
                start, length = slices[m]
                tagged[rows, start : start + length] = enc + self.type_tag(m).data
                pooled[rows, col] = enc.mean(axis=1)

            key_mask = None if all_present else self.token_mask(presence)
            z_part = self.fuse(Tensor(tagged), key_mask)
            predictions = self.predict(z_part).data.copy()
            z_out = z_part.data.copy()
            uncertainty = np.zeros(n, dtype=np.float32)

            if not all_present and mode == "reconstruct":
                counts = presence.sum(axis=1, keepdims=True).astype(np.float32)
                pooled_obs = pooled.sum(axis=1) / counts
                sim_rows = np.flatnonzero(~presence.all(axis=1))
                completed = tagged[sim_rows].copy()
                energy_sum = np.zeros(n, dtype=np.float32)
                for m in MODALITIES:
                    col = MODALITY_INDEX[m]
                    rows_m = np.flatnonzero(~presence[:, col])
                    if not rows_m.size:
                        continue
                    z_m = Tensor(z_part.data[rows_m])
                    pool_m = Tensor(pooled_obs[rows_m])
                    filled, result = self.reconstruct_modality(
                        m, z_m, pool_m, recon, rng
                    )
                    start, length = slices[m]
                    local = np.searchsorted(sim_rows, rows_m)
                    completed[local, start : start + length] = (
                        filled.data + self.type_tag(m).data
                    )
                    energy_sum[rows_m] += result.final_energy
                z_rec = self.fuse(Tensor(completed))
                predictions[sim_rows] = self.predict(z_rec).data
                z_out[sim_rows] = z_rec.data
                n_missing = (~presence).sum(axis=1)
                uncertainty[sim_rows] = (
                    energy_sum[sim_rows] / n_missing[sim_rows]
                ).astype(np.float32)

        return FillResult(
            predictions=predictions,
            uncertainty=uncertainty,
            n_missing=(~presence).sum(axis=1).astype(np.int64),
            z=z_out,
        )


@dataclass
class FillResult:
    predictions: np.ndarray
    uncertainty: np.ndarray
    n_missing: np.ndarray
    z: np.ndarray
