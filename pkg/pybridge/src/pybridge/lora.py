"""Minimal LoRA adapters for GPT-2 style Conv1D projection layers.

Wraps selected Conv1D modules with a frozen base plus a trainable low-rank
update ``x @ A @ B * (alpha / r)``; ``merge_lora`` folds the update back into
the base weight so the saved checkpoint is a plain model again.
"""
from __future__ import annotations

import torch
from torch import nn
from transformers.pytorch_utils import Conv1D

DEFAULT_RANK = 8
DEFAULT_ALPHA = 16.0
DEFAULT_TARGETS = ("c_attn", "c_proj")


class LoRAConv1D(nn.Module):
    def __init__(self, base: Conv1D, rank: int, alpha: float) -> None:
        super().__init__()
        self.base = base
        in_features, out_features = base.weight.shape
        self.lora_a = nn.Parameter(torch.empty(in_features, rank))
        self.lora_b = nn.Parameter(torch.zeros(rank, out_features))
        nn.init.normal_(self.lora_a, std=0.02)
        self.scaling = alpha / rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a @ self.lora_b) * self.scaling

    def merge_into_base(self) -> Conv1D:
        with torch.no_grad():
            self.base.weight += (self.lora_a @ self.lora_b) * self.scaling
        return self.base


def apply_lora(
    model: nn.Module,
    rank: int = DEFAULT_RANK,
    alpha: float = DEFAULT_ALPHA,
    targets: tuple[str, ...] = DEFAULT_TARGETS,
) -> int:
    """Freeze the model and wrap matching Conv1D layers; returns wrap count."""
    for param in model.parameters():
        param.requires_grad_(False)
    wrapped = 0
    for module in model.modules():
        for name, child in list(module.named_children()):
            if name in targets and isinstance(child, Conv1D):
                setattr(module, name, LoRAConv1D(child, rank, alpha))
                wrapped += 1
    if wrapped == 0:
        raise ValueError(f"no Conv1D layers named {targets} found to adapt")
    return wrapped


def merge_lora(model: nn.Module) -> int:
    """Fold every adapter back into its base layer; returns merge count."""
    merged = 0
    for module in model.modules():
        for name, child in list(module.named_children()):
            if isinstance(child, LoRAConv1D):
                setattr(module, name, child.merge_into_base())
                merged += 1
    return merged
