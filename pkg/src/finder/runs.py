"""Saving and restoring a trained model together with everything needed to use it."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .chem import ElementEmbeddingTable
from .model import FinderConfig, FinderModel
from .train import Normalizer

FORMAT = "finder-model"
EMBED_KEY = "__embedding__"


def save_model(path, model: FinderModel, normalizer: Normalizer, table: ElementEmbeddingTable,
               extra: dict | None = None) -> None:
    symbols = list(table.vectors)
    manifest = {
        "format": FORMAT,
        "model": model.config.to_dict(),
        "dtype": np.dtype(model.dtype).name,
        "normalizer": normalizer.to_dict(),
        "embedding": {"source": table.source, "symbols": symbols},
        **(extra or {}),
    }
    arrays = dict(model.state_dict())
    arrays[EMBED_KEY] = table.matrix(symbols).astype(np.float64)
    save_checkpoint(path, arrays, manifest)


def load_model(path):
    """Returns (model, normalizer, embedding table, manifest)."""
    arrays, manifest = load_checkpoint(path)
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a model checkpoint")
    cfg = FinderConfig.from_dict(manifest["model"])
    with T.precision(np.dtype(manifest.get("dtype", "float32"))):
        model = FinderModel(cfg)
    model.load_state_dict({k: v for k, v in arrays.items() if k != EMBED_KEY})
    emb = manifest["embedding"]
    table = ElementEmbeddingTable(dict(zip(emb["symbols"], arrays[EMBED_KEY])), source=emb["source"])
    norm = Normalizer(**manifest["normalizer"])
    return model, norm, table, manifest
