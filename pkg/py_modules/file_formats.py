"""Binary artifact formats.

All formats are little-endian and row-major.

- TPD1 depth map:   "TPD1", u32 H, u32 W, H·W float32
- camera label:     25 float32 (4×4 camera-to-world ‖ 3×3 intrinsics)
- TPCK checkpoint:  "TPCK", u32 version, u32 count, then per entry
                    u16 name length + UTF-8 name, u8 dtype, u8 rank,
                    u32 dims, raw payload
- TPM1 tri-mask:    "TPM1", u32 R, 3·R·R bytes of 0/1
"""
import json
import os
import struct
from collections import OrderedDict
from typing import Any, Dict, Mapping, Union

import numpy as np
import torch

from errors import InvalidArgumentError

DEPTH_MAGIC = b"TPD1"
CHECKPOINT_MAGIC = b"TPCK"
CHECKPOINT_VERSION = 1
TRIMASK_MAGIC = b"TPM1"

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}

ArrayLike = Union[np.ndarray, torch.Tensor]


def _to_numpy(value: ArrayLike) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu()
        if value.dtype == torch.bool:
            value = value.to(torch.uint8)
        value = value.numpy()
    return np.asarray(value)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ---------------------------------------------------------------- depth maps

def write_depth(path: str, depth: ArrayLike) -> None:
    arr = _to_numpy(depth).astype("<f4")
    if arr.ndim != 2:
        raise InvalidArgumentError(f"depth map must be H×W, got shape {arr.shape}")
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_depth(path: str) -> torch.Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != DEPTH_MAGIC:
        raise InvalidArgumentError(f"{path}: not a TPD1 depth file")
    h, w = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * h * w
    if len(blob) != expected:
        raise InvalidArgumentError(f"{path}: truncated depth payload ({len(blob)} != {expected} bytes)")
    arr = np.frombuffer(blob, dtype="<f4", offset=12).reshape(h, w)
    return torch.from_numpy(arr.astype(np.float32))


# ------------------------------------------------------------- camera labels

def write_camera_label(path: str, label: ArrayLike) -> None:
    arr = _to_numpy(label).astype("<f4").reshape(-1)
    if arr.shape[0] != 25:
        raise InvalidArgumentError(f"camera label must have 25 entries, got {arr.shape[0]}")
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(arr.tobytes())


def read_camera_label(path: str) -> torch.Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) != 100:
        raise InvalidArgumentError(f"{path}: camera label must be 100 bytes, got {len(blob)}")
    return torch.from_numpy(np.frombuffer(blob, dtype="<f4").astype(np.float32))


# --------------------------------------------------------------- checkpoints

def encode_checkpoint(entries: Mapping[str, ArrayLike]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(entries))]
    for name, value in entries.items():
        arr = _to_numpy(value)
        if arr.dtype == np.float32:
            arr = arr.astype("<f4")
        elif arr.dtype == np.float64:
            arr = arr.astype("<f8")
        elif arr.dtype == np.uint8:
            pass
        else:
            raise InvalidArgumentError(f"checkpoint entry '{name}' has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > 0xFF:
            raise InvalidArgumentError(f"checkpoint entry '{name}' cannot be encoded")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> "OrderedDict[str, torch.Tensor]":
    if blob[:4] != CHECKPOINT_MAGIC:
        raise InvalidArgumentError("not a TPCK checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {version}")
    offset = 12
    out: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", blob, offset)
        offset += 2
        if code not in _CODE_DTYPES:
            raise InvalidArgumentError(f"checkpoint entry '{name}' has unknown dtype code {code}")
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        dtype = _CODE_DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = size * dtype.itemsize
        if offset + nbytes > len(blob):
            raise InvalidArgumentError(f"checkpoint entry '{name}' is truncated")
        arr = np.frombuffer(blob, dtype=dtype, count=size, offset=offset).reshape(dims)
        offset += nbytes
        out[name] = torch.from_numpy(arr.copy())
    return out


def save_checkpoint(path: str, entries: Mapping[str, ArrayLike]) -> str:
    blob = encode_checkpoint(entries)
    _ensure_parent(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str) -> "OrderedDict[str, torch.Tensor]":
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def json_entry(payload: Dict[str, Any]) -> torch.Tensor:
    """Pack a JSON document as a u8 checkpoint entry."""
    raw = json.dumps(payload, sort_keys=True).encode("utf-8")
    return torch.tensor(list(raw), dtype=torch.uint8)


def read_json_entry(entry: torch.Tensor) -> Dict[str, Any]:
    return json.loads(bytes(entry.to(torch.uint8).tolist()).decode("utf-8"))


def with_prefix(prefix: str, state: Mapping[str, torch.Tensor]) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((f"{prefix}{k}", v) for k, v in state.items())


def strip_prefix(prefix: str, entries: Mapping[str, torch.Tensor]) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((k[len(prefix):], v) for k, v in entries.items() if k.startswith(prefix))


# ----------------------------------------------------------------- tri-masks

def write_tri_mask(path: str, mask: ArrayLike) -> None:
    arr = _to_numpy(mask)
    if arr.ndim != 3 or arr.shape[0] != 3 or arr.shape[1] != arr.shape[2]:
        raise InvalidArgumentError(f"tri-mask must be 3×R×R, got shape {arr.shape}")
    arr = (arr != 0).astype(np.uint8)
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(TRIMASK_MAGIC)
        f.write(struct.pack("<I", arr.shape[1]))
        f.write(arr.tobytes())


def read_tri_mask(path: str) -> torch.Tensor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != TRIMASK_MAGIC:
        raise InvalidArgumentError(f"{path}: not a TPM1 tri-mask file")
    (res,) = struct.unpack_from("<I", blob, 4)
    if len(blob) != 8 + 3 * res * res:
        raise InvalidArgumentError(f"{path}: truncated tri-mask payload")
    arr = np.frombuffer(blob, dtype=np.uint8, offset=8).reshape(3, res, res)
    return torch.from_numpy(arr != 0)
