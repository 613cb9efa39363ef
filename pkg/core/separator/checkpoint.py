"""
AVSA checkpoint container
b"AVSA" | u32 version | u32 entry count | entries of
(u32 name length, utf-8 name, u32 rank, u32 dims[rank], f32 little-endian data),
sorted by name
"""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from config.settings import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, ParserConfig, SeparatorConfig
from core.exceptions import CheckpointError
from core.parser.scene_parser import ScenePredictor
from core.separator.separator_model import SeparatorModel

logger = logging.getLogger(__name__)

SEPARATOR_PREFIX = "separator."
PARSER_PREFIX = "parser."

_U32 = struct.Struct("<I")


def model_entries(model: nn.Module, prefix: str) -> "OrderedDict[str, np.ndarray]":
    """Flatten a module's state dict into prefixed float arrays"""
    return OrderedDict(
        (prefix + name, tensor.detach().cpu().to(torch.float64).numpy())
        for name, tensor in model.state_dict().items()
    )


def save_checkpoint(path: Union[str, Path], models: Mapping[str, nn.Module]) -> Path:
    """Write one or more models, keyed by prefix (e.g. {"separator.": model})"""

    entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for prefix, model in models.items():
        entries.update(model_entries(model, prefix))
    return write_entries(path, entries)


def write_entries(path: Union[str, Path], entries: Mapping[str, np.ndarray]) -> Path:
    """Entries are written sorted by name"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    chunks = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(entries))]
    for name, values in sorted(entries.items()):
        encoded = name.encode("utf-8")
        array = np.asarray(values, dtype="<f4")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(dim) for dim in array.shape)
        chunks.append(np.ascontiguousarray(array).tobytes())

    path.write_bytes(b"".join(chunks))
    logger.info(f"✅ Wrote checkpoint {path} ({len(entries)} entries)")
    return path


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    """Read every entry of an AVSA container"""

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    offset = 0

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(data):
            raise CheckpointError(f"truncated checkpoint {path}")
        chunk = data[offset:offset + size]
        offset += size
        return chunk

    def take_u32() -> int:
        return _U32.unpack(take(4))[0]

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not an AVSA checkpoint")
    version = take_u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(take_u32()):
        name = take(take_u32()).decode("utf-8")
        shape = tuple(take_u32() for _ in range(take_u32()))
        count = int(np.prod(shape)) if shape else 1
        entries[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float64)

    if offset != len(data):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return entries


def _select(entries: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    selected = {name[len(prefix):]: values for name, values in entries.items() if name.startswith(prefix)}
    if not selected:
        raise CheckpointError(f"checkpoint has no '{prefix}' entries")
    return selected


def _load_state(model: nn.Module, state: Dict[str, np.ndarray]):
    expected = model.state_dict()
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint is missing entries: {sorted(missing)}")
    tensors = {}
    for name, tensor in expected.items():
        if tuple(state[name].shape) != tuple(tensor.shape):
            raise CheckpointError(f"entry {name} has shape {state[name].shape}, expected {tuple(tensor.shape)}")
        tensors[name] = torch.as_tensor(state[name], dtype=tensor.dtype)
    model.load_state_dict(tensors)


def load_separator(path: Union[str, Path], entries: Optional[Mapping[str, np.ndarray]] = None) -> SeparatorModel:
    """Rebuild a SeparatorModel, inferring its sizes from the entry shapes"""

    state = _select(entries if entries is not None else load_checkpoint(path), SEPARATOR_PREFIX)
    try:
        n_bins = state["analysis.lift.weight"].shape[0]
        k_r, num_classes = state["label_alignment.linear.weight"].shape
    except KeyError as e:
        raise CheckpointError(f"separator entry missing: {e}") from e
    model = SeparatorModel(SeparatorConfig(k_r=k_r, num_classes=num_classes, n_bins=n_bins))
    _load_state(model, state)
    model.eval()
    return model


def load_parser(path: Union[str, Path], threshold: float = 0.5,
                entries: Optional[Mapping[str, np.ndarray]] = None) -> ScenePredictor:
    """Rebuild a ScenePredictor, inferring its sizes from the entry shapes"""

    state = _select(entries if entries is not None else load_checkpoint(path), PARSER_PREFIX)
    try:
        n_bins = state["visible_encoder.lift.weight"].shape[0]
        num_classes, k_r = state["visible_head.weight"].shape
    except KeyError as e:
        raise CheckpointError(f"parser entry missing: {e}") from e
    model = ScenePredictor(ParserConfig(k_r=k_r, num_classes=num_classes, n_bins=n_bins, threshold=threshold))
    _load_state(model, state)
    model.eval()
    return model
