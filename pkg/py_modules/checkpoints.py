"""Model-level save/load on top of the TPCK container.

Every checkpoint carries the resolved run configuration under `meta/config`,
and models are rebuilt from that stored configuration, so a checkpoint is
self-describing regardless of the config file of the loading command.
"""
import json
import logging
import os
from typing import Dict, Mapping, Optional

import torch
import torch.nn as nn

from config import TriInvertConfig, config_from_dict, config_to_json
from errors import DependencyError, InvalidArgumentError
from file_formats import json_entry, load_checkpoint, read_json_entry, save_checkpoint, strip_prefix, with_prefix

logger = logging.getLogger(__name__)


def save_model_checkpoint(path: str, cfg: TriInvertConfig, modules: Mapping[str, nn.Module],
                          meta: Optional[Mapping[str, Dict]] = None) -> str:
    entries = {}
    for prefix, module in modules.items():
        state = {k: v.detach().to(torch.float32).cpu() for k, v in module.state_dict().items()}
        entries.update(with_prefix(f"{prefix}/", state))
    entries["meta/config"] = json_entry(json.loads(config_to_json(cfg)))
    for name, payload in (meta or {}).items():
        entries[f"meta/{name}"] = json_entry(payload)
    save_checkpoint(path, entries)
    logger.debug("[checkpoints] wrote %s (%d entries)", path, len(entries))
    return path


def read_entries(path: str, what: str) -> Dict[str, torch.Tensor]:
    if not os.path.exists(path):
        raise DependencyError(f"missing {what} checkpoint: {path}")
    return load_checkpoint(path)


def stored_config(entries: Mapping[str, torch.Tensor]) -> TriInvertConfig:
    if "meta/config" not in entries:
        raise InvalidArgumentError("checkpoint has no meta/config entry")
    return config_from_dict(read_json_entry(entries["meta/config"]))


def stored_meta(entries: Mapping[str, torch.Tensor], name: str) -> Dict:
    key = f"meta/{name}"
    return read_json_entry(entries[key]) if key in entries else {}


def restore(module: nn.Module, entries: Mapping[str, torch.Tensor], prefix: str) -> nn.Module:
    state = strip_prefix(f"{prefix}/", entries)
    if not state:
        raise DependencyError(f"checkpoint has no '{prefix}/' entries")
    module.load_state_dict(state, strict=True)
    return module


def load_generator(path: str, device: torch.device = torch.device("cpu")):
    """(frozen generator in eval mode, its training config)."""
    from triplane_generator import TriplaneGenerator

    entries = read_entries(path, "generator")
    cfg = stored_config(entries)
    generator = restore(TriplaneGenerator(cfg.generator), entries, "generator").to(device)
    generator.eval().requires_grad_(False)
    return generator, cfg


def load_encoder(path: str, device: torch.device = torch.device("cpu")):
    from geometry_encoder import build_encoder

    entries = read_entries(path, "encoder")
    cfg = stored_config(entries)
    encoder = restore(build_encoder(cfg), entries, "encoder").to(device)
    return encoder, cfg, entries


def load_afa(path: str, device: torch.device = torch.device("cpu")):
    from afa_refinement import build_afa

    entries = read_entries(path, "AFA")
    cfg = stored_config(entries)
    afa = restore(build_afa(cfg), entries, "afa").to(device)
    return afa, cfg, entries


def checkpoint_paths(out_dir: str) -> Dict[str, str]:
    ckpt = os.path.join(out_dir, "checkpoints")
    return {
        "generator": os.path.join(ckpt, "generator.tpck"),
        "encoder": os.path.join(ckpt, "encoder.tpck"),
        "afa": os.path.join(ckpt, "afa.tpck"),
        "depth_prior": os.path.join(out_dir, "depth_prior.json"),
        "data": os.path.join(out_dir, "data"),
    }
