"""Training loop for the three-stream model.

Batches are P identities x K images; all image pairs inside a batch feed the
distance-decomposition terms while the identity terms use hard-mined triplets
and classification. Supports joint training, a staged mode that freezes the
embedding while the attribute head learns to explain it, and an optional
reduced-precision mode with dynamic loss scaling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .adh import pairwise_attribute_distances
from .config import RunConfig
from .data import DatasetSplit, ParsedDataset
from .losses import (
    LossWeights,
    batch_hard_triplet,
    cross_entropy_from_logits,
    pairwise_prior_losses,
    total_loss,
)
from .model import ReIDModel, build_model
from .protocol import Report, emit_report, run_all_protocols
from .sampler import PKSampler
from .schema import load_schema
from .types import AttributeVector, ConfigurationError, ImageRecord

LOSS_NAMES = ("distillation", "p1", "p2", "triplet", "ce")

ABLATION_COMBOS: tuple[tuple[str, bool, bool], ...] = (
    ("base", False, False),
    ("base+ep", False, True),
    ("base+eva", True, False),
    ("base+eva+ep", True, True),
)


@dataclass
class Batch:
    """One collated training batch."""

    images: torch.Tensor  # B x 3 x H x W float32
    targets: torch.Tensor  # B dense class indices
    pids: torch.Tensor  # B original person ids
    attr_bits: torch.Tensor  # B x total_bits binary float32


def class_index_for(split: DatasetSplit) -> dict[int, int]:
    """Dense classifier index over a split's identities, sorted by id."""
    return {pid: i for i, pid in enumerate(sorted(split.identities))}


def collate_batch(
    records: Sequence[ImageRecord],
    attributes: Mapping[int, AttributeVector],
    class_index: Mapping[int, int],
) -> Batch:
    """Stack records into tensors; requires pixel data to be loaded."""
    pixels = []
    for record in records:
        if record.pixel_data is None:
            raise ConfigurationError(
                f"record {record.source_path or record.key} has no pixel data; "
                "parse the dataset with load_pixels=True"
            )
        pixels.append(np.ascontiguousarray(record.pixel_data))
    images = torch.from_numpy(np.stack(pixels)).permute(0, 3, 1, 2).contiguous()
    pids = [r.person_id for r in records]
    bits = np.stack([attributes[pid].bits for pid in pids]).astype(np.float32)
    return Batch(
        images=images,
        targets=torch.tensor([class_index[pid] for pid in pids], dtype=torch.long),
        pids=torch.tensor(pids, dtype=torch.long),
        attr_bits=torch.from_numpy(bits),
    )


def lr_at(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.05) -> float:
    """Learning rate at a 0-based step: linear warmup, then cosine decay."""
    if total_steps < 1:
        raise ConfigurationError("total_steps must be at least 1")
    warmup_steps = int(round(warmup_frac * total_steps))
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _squared_distances(f: torch.Tensor) -> torch.Tensor:
    # rows of f are unit length, so 2 - 2 cos is the squared euclidean gap
    return (2.0 - 2.0 * f @ f.T).clamp_min(0.0)


def compute_losses(
    model: ReIDModel,
    batch: Batch,
    weights: LossWeights,
    label_smoothing: float = 0.0,
    use_ep: bool = True,
    use_id: bool = True,
) -> dict:
    """All five loss terms plus their weighted total over one batch.

    Disabled terms are recorded as exact zeros. The total is accumulated in
    float64 so logged components sum to it beyond float32 roundoff.
    """
    out = model.forward_features(batch.images)
    f = out["f"]
    n = f.shape[0]
    i, j = torch.triu_indices(n, n, offset=1)
    zero = torch.zeros((), dtype=torch.float64)

    triplet = zero
    ce = zero
    if use_id:
        d2 = _squared_distances(f)
        distances = torch.sqrt(d2.clamp_min(1e-12))
        triplet = batch_hard_triplet(distances, batch.targets, weights.margin)
        ce = cross_entropy_from_logits(out["logits"], batch.targets, label_smoothing)

    distillation = zero
    p1 = zero
    p2 = zero
    if use_ep and "attr_feats" in out:
        per = pairwise_attribute_distances(out["attr_feats"])[i, j]
        xor = batch.attr_bits[i] != batch.attr_bits[j]
        d2_pairs = _squared_distances(f)[i, j]
        distillation = (d2_pairs - per.sum(dim=1)).abs().mean()
        p1, p2 = pairwise_prior_losses(per, xor, weights.v)

    total = total_loss(
        distillation.double(), p1.double(), p2.double(), triplet.double(), ce.double(), weights
    )
    return {
        "distillation": distillation,
        "p1": p1,
        "p2": p2,
        "triplet": triplet,
        "ce": ce,
        "total": total,
        "pairs": int(i.shape[0]),
    }


class DynamicLossScaler:
    """Loss scaling for reduced-precision training.

    Scales the loss before backward; ``step`` unscales gradients, skips the
    update and halves the scale when any gradient is non-finite, and grows
    the scale after a run of successful steps.
    """

    def __init__(
        self,
        init_scale: float = 2.0**10,
        growth_factor: float = 2.0,
        backoff_factor: float = 0.5,
        growth_interval: int = 200,
        min_scale: float = 1.0,
        max_scale: float = 2.0**24,
    ):
        if init_scale < min_scale or growth_interval < 1:
            raise ConfigurationError("loss scaler settings out of range")
        self._scale = float(init_scale)
        self.growth_factor = growth_factor
        self.backoff_factor = backoff_factor
        self.growth_interval = growth_interval
        self.min_scale = min_scale
        self.max_scale = max_scale
        self._successes = 0

    @property
    def scale(self) -> float:
        return self._scale

    def scale_loss(self, loss: torch.Tensor) -> torch.Tensor:
        return loss * self._scale

    def backoff(self) -> None:
        self._scale = max(self._scale * self.backoff_factor, self.min_scale)
        self._successes = 0

    def step(self, optimizer: torch.optim.Optimizer, parameters: Iterable[torch.nn.Parameter]) -> bool:
        """Unscale and apply gradients; returns False when the step was skipped."""
        params = [p for p in parameters if p.grad is not None]
        finite = all(torch.isfinite(p.grad).all() for p in params)
        if not finite:
            for p in params:
                p.grad = None
            self.backoff()
            return False
        inv = 1.0 / self._scale
        for p in params:
            p.grad.mul_(inv)
        optimizer.step()
        self._successes += 1
        if self._successes >= self.growth_interval:
            self._scale = min(self._scale * self.growth_factor, self.max_scale)
            self._successes = 0
        return True


def train_step(
    model: ReIDModel,
    batch: Batch,
    weights: LossWeights,
    optimizer: torch.optim.Optimizer,
    *,
    label_smoothing: float = 0.0,
    use_ep: bool = True,
    use_id: bool = True,
    scaler: DynamicLossScaler | None = None,
    reduced_precision: bool = False,
) -> dict:
    """One optimization step; returns the recorded loss row.

    In full precision a non-finite loss component is a fault and raises. In
    reduced precision the step is skipped instead and the loss scale backs
    off; skipped rows carry ``skipped=True`` and no parameter moves.
    """
    model.train()
    optimizer.zero_grad(set_to_none=True)
    if reduced_precision:
        if scaler is None:
            scaler = DynamicLossScaler()
        with torch.autocast("cpu", dtype=torch.bfloat16):
            try:
                losses = compute_losses(
                    model, batch, weights, label_smoothing, use_ep=use_ep, use_id=use_id
                )
            except ValueError:
                scaler.backoff()
                return {"skipped": True, "pairs": 0}
        scaler.scale_loss(losses["total"]).backward()
        stepped = scaler.step(optimizer, model.parameters())
    else:
        losses = compute_losses(
            model, batch, weights, label_smoothing, use_ep=use_ep, use_id=use_id
        )
        losses["total"].backward()
        optimizer.step()
        stepped = True
    if stepped:
        model.trained_steps.add_(1)
    row = {name: float(losses[name].detach()) for name in (*LOSS_NAMES, "total")}
    row["pairs"] = losses["pairs"]
    row["skipped"] = not stepped
    return row


@dataclass
class TrainOutcome:
    """Everything a finished training run produced."""

    model: ReIDModel
    history: list[dict]
    class_index: dict[int, int]
    config: RunConfig
    checkpoint_path: str | None = None
    paths: dict[str, str] = field(default_factory=dict)


def _training_phases(cfg: RunConfig, model: ReIDModel) -> list[tuple[str, list, dict]]:
    if not cfg.optim.freeze_target:
        return [("joint", list(model.parameters()), {"use_ep": model.adh is not None, "use_id": True})]
    if model.adh is None:
        raise ConfigurationError("optim.freeze_target requires model.ep=true")
    adh_ids = {id(p) for p in model.adh.parameters()}
    target = [p for p in model.parameters() if id(p) not in adh_ids]
    return [
        ("target", target, {"use_ep": False, "use_id": True}),
        ("distill", list(model.adh.parameters()), {"use_ep": True, "use_id": False}),
    ]


def run_training(
    cfg: RunConfig, dataset: ParsedDataset, out_dir: str | Path | None = None
) -> TrainOutcome:
    """Train a model on the dataset's training split.

    With ``out_dir`` set, writes the resolved config, a JSONL loss log (one
    row per step), and a checkpoint. Fully deterministic for a fixed config.
    """
    split = dataset.train
    needed = cfg.sampler.p * cfg.sampler.k
    if needed > len(split.records):
        raise ConfigurationError(
            f"sampler capacity exceeded: a batch draws {needed} images "
            f"but the training split holds {len(split.records)}"
        )
    torch.manual_seed(cfg.seed)
    class_index = class_index_for(split)
    model = build_model(cfg, dataset.schema, num_classes=len(class_index))
    weights = cfg.loss.weights()
    sampler = PKSampler(split.records, p=cfg.sampler.p, k=cfg.sampler.k, seed=cfg.seed)
    phases = _training_phases(cfg, model)
    steps_per_phase = cfg.optim.epochs * sampler.batches_per_epoch

    paths: dict[str, str] = {}
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(out_dir / "config.yaml")
        paths["config"] = str(out_dir / "config.yaml")
        log_file = open(out_dir / "logs.jsonl", "w", encoding="utf-8")
        paths["log"] = str(out_dir / "logs.jsonl")

    history: list[dict] = []
    try:
        for phase_index, (phase_name, params, toggles) in enumerate(phases):
            phase_ids = {id(p) for p in params}
            for p in model.parameters():
                p.requires_grad_(id(p) in phase_ids)
            optimizer = torch.optim.SGD(
                params,
                lr=cfg.optim.lr,
                momentum=cfg.optim.momentum,
                weight_decay=cfg.optim.weight_decay,
            )
            scaler = DynamicLossScaler() if cfg.optim.reduced_precision else None
            phase_step = 0
            for epoch in range(cfg.optim.epochs):
                epoch_index = phase_index * cfg.optim.epochs + epoch
                for records in sampler.epoch(epoch_index):
                    lr = lr_at(phase_step, steps_per_phase, cfg.optim.lr, cfg.optim.warmup_frac)
                    for group in optimizer.param_groups:
                        group["lr"] = lr
                    batch = collate_batch(records, split.attributes, class_index)
                    row = train_step(
                        model,
                        batch,
                        weights,
                        optimizer,
                        label_smoothing=cfg.loss.label_smoothing,
                        scaler=scaler,
                        reduced_precision=cfg.optim.reduced_precision,
                        **toggles,
                    )
                    row.update(step=len(history) + 1, phase=phase_name, epoch=epoch, lr=lr)
                    history.append(row)
                    if log_file is not None:
                        log_file.write(json.dumps(row) + "\n")
                    phase_step += 1
    finally:
        if log_file is not None:
            log_file.close()
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = str(out_dir / "checkpoint.npz")
        save_checkpoint(model, cfg, class_index, checkpoint_path)
        paths["checkpoint"] = checkpoint_path
    return TrainOutcome(
        model=model,
        history=history,
        class_index=class_index,
        config=cfg,
        checkpoint_path=checkpoint_path,
        paths=paths,
    )


def save_checkpoint(
    model: ReIDModel,
    cfg: RunConfig,
    class_index: Mapping[int, int],
    path: str | Path,
) -> None:
    """Write model weights plus the config and class index as one npz archive."""
    arrays = {
        f"param::{name}": value.detach().cpu().numpy()
        for name, value in model.state_dict().items()
    }
    meta = {
        "format": 1,
        "config": cfg.to_dict(),
        "class_index": {str(pid): int(idx) for pid, idx in class_index.items()},
    }
    np.savez(str(path), __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ReIDModel, RunConfig, dict[int, int]]:
    """Rebuild the exact model a checkpoint was saved from."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    with np.load(str(path)) as data:
        if "__meta__" not in data.files:
            raise ConfigurationError(f"{path} is not a model checkpoint")
        meta = json.loads(str(data["__meta__"][()]))
        state = {
            name.removeprefix("param::"): torch.from_numpy(data[name].copy())
            for name in data.files
            if name.startswith("param::")
        }
    cfg = RunConfig.from_dict(meta["config"])
    class_index = {int(pid): idx for pid, idx in meta["class_index"].items()}
    model = build_model(cfg, load_schema(cfg.mode), num_classes=len(class_index))
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, cfg, class_index


def run_ablation(
    cfg: RunConfig,
    dataset: ParsedDataset,
    out_dir: str | Path | None = None,
) -> tuple[Report, dict[str, list]]:
    """Train the four stream combinations and report deltas against the base.

    Every run shares the same seed, data, and schedule; only the attention
    stream and the explanation head toggle. Returns the rendered report and
    the per-tag protocol results.
    """
    results: dict[str, list] = {}
    for tag, eva, ep in ABLATION_COMBOS:
        cfg_i = replace(
            cfg,
            model=replace(cfg.model, eva=eva, ep=ep),
            optim=replace(cfg.optim, freeze_target=cfg.optim.freeze_target and ep),
        )
        run_dir = Path(out_dir) / tag if out_dir is not None else None
        outcome = run_training(cfg_i, dataset, out_dir=run_dir)
        results[tag] = list(run_all_protocols(outcome.model, dataset).values())
    report = emit_report(results, out_dir=out_dir, baseline="base")
    return report, results
