"""Run configuration.

One JSON document maps onto the nested dataclasses below; every numeric
default of the pipeline lives here. Unknown keys are rejected so typos fail
loudly instead of silently falling back to a default. Machine-local settings
(artifact root, device, thread count) come from the environment / `.env`.
"""
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

import torch
from dotenv import load_dotenv

from errors import InvalidArgumentError

load_dotenv()

STAGES = ("coarse", "mid", "fine")


@dataclass
class CameraConfig:
    distance: float = 2.7
    fx: float = 2.0
    fy: float = 2.0
    cx: float = 0.5
    cy: float = 0.5
    resolution: int = 64


@dataclass
class RenderConfig:
    t_near: float = 1.2
    t_far: float = 4.4
    samples_per_ray: int = 48
    eps: float = 1e-10


@dataclass
class GeneratorConfig:
    z_dim: int = 128
    w_dim: int = 128
    mapping_layers: int = 4
    channels: int = 64
    plane_channels: int = 16
    plane_resolution: int = 32
    # None -> last layer working at plane_resolution / 2
    tap_layer: Optional[int] = None
    decoder_hidden: int = 64
    density_bias: float = -4.0
    w_avg_samples: int = 10000

    @property
    def num_upsamples(self) -> int:
        ups = math.log2(self.plane_resolution / 4)
        if self.plane_resolution < 8 or ups != int(ups):
            raise InvalidArgumentError(
                f"generator.plane_resolution must be 4·2^k with k >= 1, got {self.plane_resolution}")
        return int(ups)

    @property
    def num_ws(self) -> int:
        return 2 + 2 * self.num_upsamples

    @property
    def tap_index(self) -> int:
        tap = 2 * self.num_upsamples - 2 if self.tap_layer is None else self.tap_layer
        if not 0 <= tap < self.num_ws - 1:
            raise InvalidArgumentError(f"generator.tap_layer {tap} outside [0, {self.num_ws - 2}]")
        return tap

    @property
    def tap_resolution(self) -> int:
        return 4 * 2 ** ((self.tap_index + 1) // 2)


@dataclass
class SceneSpec:
    radius_range: List[float] = field(default_factory=lambda: [0.3, 0.5])
    position_jitter: float = 0.1
    hue_range: List[float] = field(default_factory=lambda: [0.0, 1.0])
    shade_range: List[float] = field(default_factory=lambda: [0.2, 0.8])
    yaws: List[float] = field(default_factory=lambda: [-60.0, -30.0, 0.0, 30.0, 60.0])
    pitch: float = 0.0
    yaw_limit: float = 60.0
    card_depth: float = 0.75
    card_half_size: float = 0.7
    light_direction: List[float] = field(default_factory=lambda: [0.3, 0.6, -0.75])
    ambient: float = 0.35


@dataclass
class DatasetConfig:
    num_scenes: int = 256
    # the last `eval_scenes` scenes are never used for training
    eval_scenes: int = 16
    workers: int = 1
    scene: SceneSpec = field(default_factory=SceneSpec)


@dataclass
class GeneratorTrainingConfig:
    iterations: int = 20000
    min_iterations: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    lr_latent: float = 1e-2
    latent_reg: float = 1e-3
    depth_weight: float = 0.5
    opacity_weight: float = 0.5
    target_psnr: float = 26.0
    heldout_yaws: List[float] = field(default_factory=lambda: [30.0])
    log_every: int = 100
    checkpoint_every: int = 2000
    num_workers: int = 0


@dataclass
class EncoderConfig:
    # fine, mid, coarse, query
    channels: List[int] = field(default_factory=lambda: [32, 64, 128, 128])
    window_attention: bool = True
    window_size: int = 4
    attention_heads: int = 1
    # None -> proportional split of rows 1..L-1 into coarse/mid/fine
    row_groups: Optional[Dict[str, List[int]]] = None


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.8
    lambda3: float = 0.25
    lambda4: float = 0.05
    lambda5: float = 5.0
    lambda6: float = 0.001
    lambda7: float = 0.0001
    r1_gamma: float = 10.0
    r1_squared: bool = True


@dataclass
class Stage1Config:
    iterations: int = 20000
    batch_size: int = 4
    lr_encoder: float = 1e-4
    lr_disc: float = 2e-5
    stage_thresholds: Dict[str, int] = field(default_factory=lambda: {"coarse": 0, "mid": 4000, "fine": 8000})
    use_latent_disc: bool = True
    use_background_loss: bool = True
    generated_fraction: float = 0.5
    log_every: int = 50
    checkpoint_every: int = 1000
    num_workers: int = 0


@dataclass
class DepthPriorConfig:
    samples: int = 1024
    tau: float = 0.5
    batch_size: int = 16


@dataclass
class AfaConfig:
    heads: int = 1
    lr: float = 2.5e-5
    iterations: int = 10000
    batch_size: int = 2
    use_background_loss: bool = True
    use_mix: bool = True
    dilation: int = 1
    tau: float = 0.5
    generated_fraction: float = 0.5
    log_every: int = 50
    checkpoint_every: int = 1000
    num_workers: int = 0


@dataclass
class EditingConfig:
    samples: int = 2000
    quantile: float = 0.1
    l2: float = 1e-3
    epochs: int = 500
    lr: float = 0.1
    rows: Optional[List[int]] = None
    strengths: List[float] = field(default_factory=lambda: [-2.0, -1.0, 0.0, 1.0, 2.0])


@dataclass
class CriticConfig:
    channels: List[int] = field(default_factory=lambda: [16, 32, 64, 64])
    seed: int = 1234


@dataclass
class EvalConfig:
    yaws: List[float] = field(default_factory=lambda: [-60.0, -30.0, 0.0, 30.0, 60.0])
    generator_samples: int = 64
    use_afa: bool = True


@dataclass
class TriInvertConfig:
    seed: int = 0
    camera: CameraConfig = field(default_factory=CameraConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    generator_training: GeneratorTrainingConfig = field(default_factory=GeneratorTrainingConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    depth_prior: DepthPriorConfig = field(default_factory=DepthPriorConfig)
    afa: AfaConfig = field(default_factory=AfaConfig)
    editing: EditingConfig = field(default_factory=EditingConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _coerce(value: Any, typ: Any, key: str) -> Any:
    origin = get_origin(typ)
    if origin is Union:
        args = [a for a in get_args(typ) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if origin in (list, List):
        if not isinstance(value, list):
            raise InvalidArgumentError(f"config key '{key}' expects a list")
        (item,) = get_args(typ)
        return [_coerce(v, item, f"{key}[{i}]") for i, v in enumerate(value)]
    if origin in (dict, Dict):
        if not isinstance(value, dict):
            raise InvalidArgumentError(f"config key '{key}' expects an object")
        _, item = get_args(typ)
        return {str(k): _coerce(v, item, f"{key}.{k}") for k, v in value.items()}
    if is_dataclass(typ):
        if not isinstance(value, dict):
            raise InvalidArgumentError(f"config key '{key}' expects an object")
        return _build(typ, value, f"{key}.")
    if typ is bool:
        if not isinstance(value, bool):
            raise InvalidArgumentError(f"config key '{key}' expects true/false")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidArgumentError(f"config key '{key}' expects an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidArgumentError(f"config key '{key}' expects a number")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise InvalidArgumentError(f"config key '{key}' expects a string")
        return value
    return value


def _build(cls, data: Dict[str, Any], prefix: str = ""):
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise InvalidArgumentError(f"unknown config key '{prefix}{unknown[0]}'")
    kwargs = {name: _coerce(data[name], hints[name], f"{prefix}{name}") for name in data}
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> TriInvertConfig:
    return _build(TriInvertConfig, data)


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> TriInvertConfig:
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise InvalidArgumentError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise InvalidArgumentError("config document must be a JSON object")
    cfg = config_from_dict(data)
    if seed is not None:
        cfg.seed = seed
    return cfg


def config_to_json(cfg: TriInvertConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)


def outputs_root() -> str:
    return os.getenv("TRIINVERT_OUTPUTS", "outputs")


def select_device() -> torch.device:
    name = os.getenv("TRIINVERT_DEVICE", "").strip().lower()
    if name:
        return torch.device(name)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def configure_threads() -> None:
    threads = os.getenv("TRIINVERT_THREADS", "").strip()
    if threads:
        torch.set_num_threads(int(threads))
