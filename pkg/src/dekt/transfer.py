"""T-DEKT: checkpoints, emotion-parameter transfer with freezing, and the self-loop."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Graph, Node
from .embeddings import EMOTION_TABLES, ModelShape, emotion_input_from_values, init_params, param_shapes
from .predict import DualState, StepInputs, StepOutput, step
from .training import Dataset, TrainConfig, TrainResult, _rngs, fit

FORMAT_VERSION = 1
FROZEN_DEFAULT = frozenset({*EMOTION_TABLES, "W1", "b1", "W13", "b13"})


class CheckpointError(ValueError):
    pass


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = str(path)
    for suffix in (".manifest.json", ".blob"):
        if p.endswith(suffix):
            p = p[: -len(suffix)]
    return Path(p + ".manifest.json"), Path(p + ".blob")


def save_checkpoint(
    params: Mapping[str, np.ndarray], shape: ModelShape, path: str | Path, extra: dict | None = None
) -> tuple[Path, Path]:
    """Write ``<path>.manifest.json`` and ``<path>.blob`` (little-endian float64)."""
    manifest_path, blob_path = _paths(path)
    entries, chunks, offset = [], [], 0
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter {name} is not finite")
        data = arr.astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": {"d_k": shape.d_k, "bins": shape.bins, "variant": shape.variant, "shape": asdict(shape)},
        "entries": entries,
        "blob_bytes": offset,
    }
    if extra:
        manifest["extra"] = extra
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path, blob_path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], ModelShape, dict]:
    """Returns (params, model shape, extra metadata)."""
    manifest_path, blob_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    blob = blob_path.read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"truncated blob: {len(blob)} bytes, manifest says {manifest['blob_bytes']}")
    shape = ModelShape(**manifest["config"]["shape"])
    expected = param_shapes(shape)
    params, offset = {}, 0
    for entry in manifest["entries"]:
        name, shp = entry["name"], tuple(entry["shape"])
        if entry["offset"] != offset or offset % 8:
            raise CheckpointError(f"entry {name} is not contiguous at offset {offset}")
        if expected.get(name) != shp:
            raise CheckpointError(f"shape mismatch for {name}: {shp} vs {expected.get(name)}")
        n = int(np.prod(shp)) * 8
        params[name] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=offset).astype(np.float64).reshape(shp)
        offset += n
    if offset != len(blob):
        raise CheckpointError("blob holds bytes beyond the manifest entries")
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint lacks entries {sorted(missing)}")
    return params, shape, manifest.get("extra", {})


def transfer_init(
    source: Mapping[str, np.ndarray],
    source_shape: ModelShape,
    target_shape: ModelShape,
    rng: np.random.Generator,
    frozen: frozenset[str] = FROZEN_DEFAULT,
) -> tuple[dict[str, np.ndarray], frozenset[str]]:
    """Fresh target parameters with the emotion-specific ones copied from ``source``."""
    if source_shape.d_k != target_shape.d_k or source_shape.bins != target_shape.bins:
        raise CheckpointError(
            f"source d_k/bins {source_shape.d_k}/{source_shape.bins} "
            f"differ from target {target_shape.d_k}/{target_shape.bins}"
        )
    params = init_params(target_shape, rng)
    for name in sorted(frozen):
        if name not in source:
            raise CheckpointError(f"source checkpoint has no entry {name}")
        if name not in params:
            raise CheckpointError(f"target model has no parameter {name}")
        params[name] = np.array(source[name], dtype=np.float64)
    return params, frozenset(frozen)


def self_loop_step(
    graph: Graph,
    P: dict[str, Node],
    state: DualState,
    x: StepInputs,
    prev_g: np.ndarray,
    qmatrix: np.ndarray,
    bins: int,
    variant: str = "full",
    dropout: float = 0.0,
) -> StepOutput:
    """Standard step whose emotion input is synthesized from the previous prediction."""
    prev_g = np.asarray(prev_g, dtype=np.float64)
    if np.any((prev_g < 0) | (prev_g > 1)):
        raise ValueError("prev_g must lie in [0, 1]")
    cm = emotion_input_from_values(graph, P, prev_g, bins, variant)
    return step(graph, P, state, x, cm, qmatrix, variant, dropout)


def train_transfer(
    source: Mapping[str, np.ndarray],
    source_shape: ModelShape,
    config: TrainConfig,
    dataset: Dataset,
) -> TrainResult:
    """Self-loop training on an emotionless dataset, response loss only."""
    if dataset.has_emotions:
        raise ValueError("dataset carries emotions; use train instead")
    config.validate()
    target_shape = dataset.model_shape(config.d_k, config.variant)
    (rng,) = _rngs(config.seed, 5)[4:]
    params, frozen = transfer_init(source, source_shape, target_shape, rng)
    return fit(config, dataset, params=params, frozen=frozen, self_loop=True)
