"""Run a model over labeled data and write embeddings + logits + labels.

The embedding is the output of one named submodule, captured with a forward
hook while the model runs in eval mode; the model's own output provides the
logits. Rows are written in dataset order as an RMEM v1 file (little-endian):

    magic "RMEM" | version u32=1 | flags u32=7 | n u64 | d u64 | c u64
    embeddings n*d f32 | logits n*c f32 | labels n u32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np
import torch

_HEADER = struct.Struct("<4sIIQQQ")
_FLAGS_ALL = 0b111  # embeddings, logits, labels


class LayerNotFound(Exception):
    """The selected submodule does not exist or never ran in forward."""


class ShapeDrift(Exception):
    """The embedding (or logit) width changed between batches."""


@dataclass
class ExportSpec:
    model: torch.nn.Module
    layer: str
    batch_size: int = 64
    out: str = "export.rmem"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _batches(dataset: Iterable, batch_size: int):
    inputs: List[torch.Tensor] = []
    labels: List[int] = []
    for item in dataset:
        try:
            x, y = item
        except (TypeError, ValueError) as exc:
            raise ValueError("dataset must yield (input, label) pairs") from exc
        if y is None:
            raise ValueError("labels are required; unlabeled export is rejected")
        inputs.append(torch.as_tensor(x))
        labels.append(int(y))
        if len(inputs) == batch_size:
            yield torch.stack(inputs), labels
            inputs, labels = [], []
    if inputs:
        yield torch.stack(inputs), labels


def export(spec: ExportSpec, dataset: Iterable) -> None:
    """Write spec.out; row i corresponds to the i-th dataset element."""
    try:
        module = spec.model.get_submodule(spec.layer)
    except AttributeError as exc:
        raise LayerNotFound(f"no submodule named {spec.layer!r}") from exc

    captured: List[torch.Tensor] = []

    def hook(_module, _inputs, output):
        if not torch.is_tensor(output):
            raise ShapeDrift(f"layer {spec.layer!r} does not output a tensor")
        captured.append(output.detach())

    spec.model.eval()
    handle = module.register_forward_hook(hook)
    emb_parts: List[np.ndarray] = []
    logit_parts: List[np.ndarray] = []
    all_labels: List[int] = []
    try:
        with torch.no_grad():
            for x, labels in _batches(dataset, spec.batch_size):
                captured.clear()
                out = spec.model(x)
                if not captured:
                    raise LayerNotFound(
                        f"layer {spec.layer!r} did not run during forward"
                    )
                emb = captured[0].reshape(x.shape[0], -1)
                logits = out.reshape(x.shape[0], -1)
                emb_parts.append(emb.cpu().numpy().astype(np.float32))
                logit_parts.append(logits.cpu().numpy().astype(np.float32))
                all_labels.extend(labels)
    finally:
        handle.remove()

    if not emb_parts:
        raise ValueError("dataset yielded no examples")
    d = emb_parts[0].shape[1]
    c = logit_parts[0].shape[1]
    for part in emb_parts:
        if part.shape[1] != d:
            raise ShapeDrift(f"embedding width changed: {d} -> {part.shape[1]}")
    for part in logit_parts:
        if part.shape[1] != c:
            raise ShapeDrift(f"logit width changed: {c} -> {part.shape[1]}")

    embeddings = np.concatenate(emb_parts)
    logits = np.concatenate(logit_parts)
    labels = np.asarray(all_labels, dtype=np.int64)
    if c < 2:
        raise ValueError(f"model output must cover >= 2 classes, got {c}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels must be class indices within the logit width")
    if not np.isfinite(embeddings).all() or not np.isfinite(logits).all():
        raise ValueError("model produced NaN or Inf values")

    n = embeddings.shape[0]
    with open(spec.out, "wb") as fh:
        fh.write(_HEADER.pack(b"RMEM", 1, _FLAGS_ALL, n, d, c))
        fh.write(np.ascontiguousarray(embeddings, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(logits, dtype="<f4").tobytes())
        fh.write(labels.astype("<u4").tobytes())


def pair_iterator(inputs: torch.Tensor, labels: torch.Tensor) -> Iterable[Tuple]:
    """Adapt (inputs, labels) tensors into the pairwise dataset protocol."""
    if inputs.shape[0] != labels.shape[0]:
        raise ValueError("inputs and labels disagree on the number of examples")
    return zip(inputs, labels.tolist())
