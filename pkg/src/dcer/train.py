"""Training: the four-term objective, train-time missing simulation, the
optimization loop with per-epoch metrics logging and checkpointing.

Gradient isolation: the energy-descent refinement inside a step is applied
as a constant offset (no backprop through the inner loop); the energy term
differentiates the energy network's parameters only, at the final iterate.
Loss terms whose weight is zero are kept out of the graph entirely, so the
networks they train receive no gradient and no update.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from . import tensor as T
from .batch import MODALITIES, MODALITY_INDEX, ModalityBatch
from .config import Config, ReconConfig, TrainConfig
from .errors import DivergenceError
from .losses import LossBreakdown, loss_pred
from .metrics import MetricReport, metric_report
from .model import DcerModel
from .optim import AdamW
from .storage import save_checkpoint
from .tensor import Tensor, no_grad

METRICS_CSV_HEADER = (
    "epoch,split,mae,corr,acc7,acc2,f1,loss_pred,loss_recon,loss_energy,loss_joint"
)


def sample_missing_mask(batch_size: int, p_miss: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sample presence flags for simulated missing modalities.

    Each modality drops independently with probability p_miss; when all
    three drop, one uniformly chosen modality is restored.
    """
    dropped = rng.random((batch_size, 3)) < p_miss
    restore = rng.integers(0, 3, size=batch_size)
    all_gone = dropped.all(axis=1)
    dropped[all_gone, restore[all_gone]] = False
    return ~dropped


def step_rng(seed: int, global_step: int) -> np.random.Generator:
    """Counter-based per-step generator, so resumed runs replay exactly."""
    return np.random.default_rng([seed, 0x57E9, global_step])


def train_step(
    model: DcerModel,
    optimizer: AdamW,
    batch: ModalityBatch,
    tc: TrainConfig,
    recon_base: ReconConfig,
    rng: np.random.Generator,
) -> LossBreakdown:
    optimizer.zero_grad()
    enc = model.encode_all(batch)
    h_all = model.concat_modalities(enc, (True, True, True))
    z_full = model.fuse(h_all)
    yhat = model.predict(z_full)
    l_pred = loss_pred(yhat, batch.labels)
    total = l_pred

    recon_val = energy_val = joint_val = 0.0
    use_sim = (tc.alpha > 0 or tc.beta > 0 or tc.gamma > 0) and tc.p_miss > 0
    sim_present = sample_missing_mask(len(batch), tc.p_miss, rng) if use_sim else None
    sim_rows = (
        np.flatnonzero(~sim_present.all(axis=1)) if sim_present is not None else np.empty(0, int)
    )
    if sim_rows.size:
        recon_cfg = ReconConfig(
            steps=tc.recon_steps,
            eta=recon_base.eta,
            rho=recon_base.rho,
            sigma=tc.recon_sigma,
        )
        slices = model.token_slices()
        presence_sim = sim_present[sim_rows]

        h_sim = T.index_select(h_all, sim_rows)
        z_part = model.fuse(h_sim, model.token_mask(presence_sim))
        enc_sim = {m: T.index_select(enc[m], sim_rows) for m in MODALITIES}
        pooled = model.pooled_observed(enc_sim, presence_sim)

        recon_terms: List[tuple] = []
        energy_terms: List[tuple] = []
        rec_blocks = []
        for m in MODALITIES:
            col = MODALITY_INDEX[m]
            start, length = slices[m]
            block = T.narrow(h_sim, 1, start, length)
            missing_local = np.flatnonzero(~presence_sim[:, col])
            if not missing_local.size:
                rec_blocks.append(block)
                continue
            z_m = T.index_select(z_part, missing_local)
            pool_m = T.index_select(pooled, missing_local)
            filled, result = model.reconstruct_modality(m, z_m, pool_m, recon_cfg, rng)
            h_true = T.index_select(enc[m], sim_rows[missing_local])
            recon_terms.append(
                (T.tmean(T.square(T.sub(h_true, filled))), missing_local.size)
            )
            e_final = model.energy_net(Tensor(result.h), Tensor(z_m.data))
            energy_terms.append((T.tsum(e_final), missing_local.size))

            filled_tagged = T.add(filled, model.type_tag(m))
            present_local = np.flatnonzero(presence_sim[:, col])
            if present_local.size:
                stacked = T.concat(
                    [T.index_select(block, present_local), filled_tagged], axis=0
                )
                perm = np.argsort(np.concatenate([present_local, missing_local]))
                rec_blocks.append(T.index_select(stacked, perm))
            else:
                rec_blocks.append(filled_tagged)

        z_rec = model.fuse(T.concat(rec_blocks, axis=1))
        l_joint = T.tmean(T.square(T.sub(T.index_select(z_full, sim_rows), z_rec)))
        joint_val = l_joint.item()
        if tc.gamma > 0:
            total = T.add(total, T.mul(l_joint, tc.gamma))

        pair_count = sum(n for _, n in recon_terms)
        l_recon = None
        for term, n in recon_terms:
            part = T.mul(term, float(n) / pair_count)
            l_recon = part if l_recon is None else T.add(l_recon, part)
        recon_val = l_recon.item()
        if tc.alpha > 0:
            total = T.add(total, T.mul(l_recon, tc.alpha))

        e_sum = None
        for term, _ in energy_terms:
            e_sum = term if e_sum is None else T.add(e_sum, term)
        l_energy = T.mul(e_sum, 1.0 / pair_count)
        energy_val = l_energy.item()
        if tc.beta > 0:
            total = T.add(total, T.mul(l_energy, tc.beta))

    breakdown = LossBreakdown(
        pred=l_pred.item(),
        recon=recon_val,
        energy=energy_val,
        joint=joint_val,
        total=total.item(),
    )
    if not breakdown.finite():
        raise DivergenceError(f"non-finite loss: {breakdown}", step=-1)
    T.backward(total)
    optimizer.step()
    return breakdown


def predict_complete(model: DcerModel, batch: ModalityBatch, batch_size: int = 256) -> np.ndarray:
    """Batched complete-data predictions with recording disabled."""
    preds = np.empty(len(batch), dtype=np.float32)
    with no_grad():
        for start in range(0, len(batch), batch_size):
            idx = np.arange(start, min(start + batch_size, len(batch)))
            yhat, _, _ = model.forward_full(batch.subset(idx))
            preds[idx] = yhat.data
    return preds


@dataclass
class TrainHistory:
    rows: List[dict] = field(default_factory=list)
    best_val_mae: float = float("inf")
    best_epoch: int = -1
    stopped_early: bool = False
    global_step: int = 0

    def append(self, **kwargs):
        self.rows.append(kwargs)


def train_loop(
    model: DcerModel,
    train_batch: ModalityBatch,
    val_batch: ModalityBatch,
    cfg: Config,
    out_dir,
    log=None,
) -> TrainHistory:
    """Deterministic-given-seed optimization with per-epoch checkpoints,
    CSV metrics logging, and early stopping on validation MAE."""
    tc = cfg.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    optimizer = AdamW(
        list(model.named_parameters()),
        lr=tc.lr,
        beta1=tc.adam_beta1,
        beta2=tc.adam_beta2,
        eps=tc.adam_eps,
        weight_decay=tc.weight_decay,
    )
    history = TrainHistory()
    label_range = (cfg.data.label_low, cfg.data.label_high)
    csv_path = out / "metrics.csv"
    csv_file = csv_path.open("w", newline="")
    writer = csv.writer(csv_file)
    writer.writerow(METRICS_CSV_HEADER.split(","))

    bad_epochs = 0
    n = len(train_batch)
    for epoch in range(tc.epochs):
        order = np.random.default_rng([tc.seed, 0x0E0C, epoch]).permutation(n)
        losses = []
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            rng = step_rng(tc.seed, history.global_step)
            lb = train_step(model, optimizer, train_batch.subset(idx), tc, cfg.recon, rng)
            losses.append(lb)
            history.global_step += 1
        train_rep = metric_report(
            predict_complete(model, train_batch), train_batch.labels, label_range
        )
        mean_losses = np.mean([lb.as_row() for lb in losses], axis=0)
        _write_row(writer, epoch, "train", train_rep, mean_losses[:4])

        val_preds = predict_complete(model, val_batch)
        val_rep = metric_report(val_preds, val_batch.labels, label_range)
        val_loss = float(np.mean((val_preds - val_batch.labels) ** 2))
        _write_row(writer, epoch, "val", val_rep, [val_loss, None, None, None])
        csv_file.flush()

        history.append(
            epoch=epoch,
            train_mae=train_rep.mae,
            val_mae=val_rep.mae,
            val_corr=val_rep.pearson_corr,
            loss=float(mean_losses[4]),
        )
        if log:
            log(
                f"epoch {epoch}: loss {mean_losses[4]:.4f} "
                f"train mae {train_rep.mae:.4f} val mae {val_rep.mae:.4f} "
                f"val corr {val_rep.pearson_corr:.4f}"
            )

        save_checkpoint(
            out / "checkpoint.dctc",
            model,
            optimizer,
            config=cfg.to_dict(),
            meta={"epoch": epoch, "global_step": history.global_step},
        )
        if val_rep.mae < history.best_val_mae - 1e-6:
            history.best_val_mae = val_rep.mae
            history.best_epoch = epoch
            bad_epochs = 0
            save_checkpoint(
                out / "checkpoint_best.dctc",
                model,
                optimizer,
                config=cfg.to_dict(),
                meta={"epoch": epoch, "global_step": history.global_step},
            )
        else:
            bad_epochs += 1
            if bad_epochs > tc.patience:
                history.stopped_early = True
                break
    csv_file.close()
    return history


def _write_row(writer, epoch: int, split: str, rep: MetricReport, losses) -> None:
    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    writer.writerow(
        [epoch, split, fmt(rep.mae), fmt(rep.pearson_corr), fmt(rep.acc7),
         fmt(rep.acc2), fmt(rep.f1)] + [fmt(v) for v in losses]
    )
