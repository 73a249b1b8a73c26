"""Forward-hook extraction of per-layer features from a frozen classifier.

For each selected block the hook captures the activation tensor, averages it
over its spatial dimensions, and accumulates one float32 row per input. The
writer emits one NPY file per layer plus logits, labels, and a row-order echo,
and a JSON manifest with per-file SHA-256 checksums. Everything runs in eval
mode with a fixed data order, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader


class LayerSelectorError(ValueError):
    """A requested layer name does not exist in the model graph."""


def spatial_average(activation: torch.Tensor) -> torch.Tensor:
    """Mean over every spatial dimension; (B, C, *spatial) becomes (B, C)."""
    if activation.dim() < 2:
        raise ValueError(f"activation must be at least 2-D, got {activation.dim()}-D")
    if activation.dim() == 2:
        return activation
    return activation.mean(dim=tuple(range(2, activation.dim())))


def available_blocks(model: nn.Module) -> list[str]:
    return [name for name, _ in model.named_children()]


def default_layer_selectors(model: nn.Module) -> list[str]:
    """The container children of the model, i.e. its main blocks.

    Matches the torchvision convention where residual stages are nn.Sequential
    children (layer1..layer4); models without container children need explicit
    selectors.
    """
    names = [
        name
        for name, child in model.named_children()
        if isinstance(child, nn.Sequential)
    ]
    if not names:
        raise LayerSelectorError(
            "cannot infer main blocks for this model; pass explicit selectors "
            f"from: {available_blocks(model)}"
        )
    return names


def resolve_module(model: nn.Module, selector: str) -> nn.Module:
    """Look up a dotted module path, e.g. 'layer3' or 'features.denseblock2'."""
    module = model
    for part in selector.split("."):
        children = dict(module.named_children())
        if part not in children:
            raise LayerSelectorError(
                f"unknown layer {selector!r}; available blocks: "
                f"{available_blocks(module)}"
            )
        module = children[part]
    return module


def extract_features(
    model: nn.Module,
    dataset,
    layers=None,
    batch_size: int = 128,
    device: str = "cpu",
):
    """Run the dataset through the frozen model and capture pooled activations.

    Returns (features, logits, labels): features maps each selector to an
    (N, C) float32 array in dataset order; labels is None when the dataset
    yields bare tensors.
    """
    model = model.to(device)
    model.eval()
    selectors = list(layers) if layers else default_layer_selectors(model)
    hooked = [(name, resolve_module(model, name)) for name in selectors]

    captured: dict[str, list[np.ndarray]] = {name: [] for name in selectors}

    def make_hook(name):
        def hook(_module, _inputs, output):
            pooled = spatial_average(output.detach())
            captured[name].append(pooled.to("cpu", torch.float32).numpy())

        return hook

    handles = [module.register_forward_hook(make_hook(name)) for name, module in hooked]
    logits_parts: list[np.ndarray] = []
    labels_parts: list[np.ndarray] = []
    try:
        loader = DataLoader(dataset, batch_size=batch_size, shuffle=False,
                            num_workers=0)
        with torch.no_grad():
            for batch in loader:
                if isinstance(batch, (list, tuple)):
                    images = batch[0]
                    labels = batch[1] if len(batch) > 1 else None
                else:
                    images, labels = batch, None
                out = model(images.to(device))
                logits_parts.append(out.to("cpu", torch.float32).numpy())
                if labels is not None:
                    labels_parts.append(np.asarray(labels))
    finally:
        for handle in handles:
            handle.remove()

    features = {
        name: np.concatenate(captured[name]).astype(np.float32)
        for name in selectors
    }
    logits = np.concatenate(logits_parts).astype(np.float32)
    labels = np.concatenate(labels_parts) if labels_parts else None
    return features, logits, labels


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(
    out_dir,
    features: dict[str, np.ndarray],
    logits: np.ndarray,
    labels,
    name: str = "extracted",
    role: str = "test_in",
) -> Path:
    """Write NPY files plus the manifest; returns the manifest path.

    Layer files are float32; the manifest records a SHA-256 per emitted file.
    order.npy echoes the dataset row order so consumers can audit alignment.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = logits.shape[0]

    entries = []
    files: dict[str, Path] = {}
    for selector, matrix in features.items():
        if matrix.shape[0] != n:
            raise ValueError(
                f"layer {selector!r} has {matrix.shape[0]} rows, logits have {n}"
            )
        fname = selector.replace(".", "_") + ".npy"
        np.save(out / fname, matrix.astype("<f4"))
        entries.append({"name": selector, "path": fname})
        files[fname] = out / fname

    np.save(out / "logits.npy", logits.astype("<f4"))
    files["logits.npy"] = out / "logits.npy"
    doc = {"name": name, "role": role, "layers": entries, "logits": "logits.npy"}

    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != n:
            raise ValueError(f"{labels.shape[0]} labels for {n} rows")
        np.save(out / "labels.npy", labels.astype("<f4"))
        files["labels.npy"] = out / "labels.npy"
        doc["labels"] = "labels.npy"

    np.save(out / "order.npy", np.arange(n, dtype="<f8"))
    files["order.npy"] = out / "order.npy"

    doc["checksums"] = {fname: _sha256(path) for fname, path in sorted(files.items())}
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass(frozen=True)
class ExtractionSpec:
    """Everything one extraction run needs; mirrored by the CLI flags."""

    model: str | nn.Module
    out_dir: str
    images: str | None = None
    labels: str | None = None
    dataset: str | None = None
    data_root: str | None = None
    split: str = "test"
    weights: str | None = None
    layers: tuple[str, ...] | None = None
    batch_size: int = 128
    device: str = "cpu"
    name: str = "extracted"
    role: str = "test_in"


def build_model(spec: ExtractionSpec) -> nn.Module:
    if isinstance(spec.model, nn.Module):
        model = spec.model
    else:
        import torchvision.models as tv_models

        if not hasattr(tv_models, spec.model):
            raise LayerSelectorError(
                f"unknown torchvision model {spec.model!r}"
            )
        model = getattr(tv_models, spec.model)(weights=None)
    if spec.weights:
        state = torch.load(spec.weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def build_dataset(spec: ExtractionSpec):
    from torch.utils.data import TensorDataset

    if spec.images:
        images = torch.from_numpy(np.load(spec.images).astype(np.float32))
        if spec.labels:
            labels = torch.from_numpy(np.load(spec.labels).astype(np.int64)).ravel()
            return TensorDataset(images, labels)
        return TensorDataset(images)
    if spec.dataset:
        import torchvision.datasets as tv_datasets
        import torchvision.transforms as tv_transforms

        name = spec.dataset.lower()
        if name != "cifar10":
            raise ValueError(f"unsupported dataset {spec.dataset!r}")
        return tv_datasets.CIFAR10(
            root=spec.data_root or ".",
            train=spec.split == "train",
            download=False,
            transform=tv_transforms.ToTensor(),
        )
    raise ValueError("spec needs either an images file or a dataset name")


def run_extraction(spec: ExtractionSpec) -> Path:
    """Resolve the model and dataset, extract, and write the output tree."""
    model = build_model(spec)
    dataset = build_dataset(spec)
    features, logits, labels = extract_features(
        model,
        dataset,
        layers=spec.layers,
        batch_size=spec.batch_size,
        device=spec.device,
    )
    return write_outputs(
        spec.out_dir, features, logits, labels, name=spec.name, role=spec.role
    )
