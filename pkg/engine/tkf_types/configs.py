"""This script contains the configuration data classes. Values are filled and validated by
tokfuse_config
"""

from dataclasses import dataclass, field
from typing import List, Optional

from .enums import BridgeVariant, CombineVariant, DatasetSource, FusionMethod, HeadType, \
                   OptimAlgorithm

@dataclass
class StageSpec:
    """ One residual stage: its block count, output width and first-block stride """
    num_blocks: int
    out_channels: int
    stride: int

# pylint: disable=too-many-instance-attributes
@dataclass
class BackboneConfig:
    """ Residual CNN layout. Fields left as None are filled from the preset """
    preset: str = 'toy'
    stem_channels: Optional[int] = None
    stage_specs: Optional[List[StageSpec]] = None
    activation: Optional[str] = None
    stem_pool: Optional[str] = None
    stem_kernel: Optional[int] = None

@dataclass
class EncoderConfig:
    """ Transformer dimensions. depth is the model's total block count """
    dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    depth: int = 12
    mixing_depth: int = 2

# pylint: disable=too-many-instance-attributes
@dataclass
class ModelConfig:
    """ Everything needed to build one fusion model """
    variant: str = ''
    fusion_method: FusionMethod = FusionMethod.LAYER_BY_LAYER
    combine_variant: CombineVariant = CombineVariant.UPCONV_CONCAT
    bridge_variant: BridgeVariant = BridgeVariant.UPCONV_MULTI
    use_class_token: bool = False
    head_type: HeadType = HeadType.CHANNEL_WISE
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    patch_size: int = 4
    num_classes: int = 10
    image_size: int = 32
    bridge_width: int = 16
    head_bias: bool = True
    relax_block_budget: bool = False
    freeze_backbone: bool = False
    identity_init: bool = False
    init_std: float = 0.02
    dtype: str = 'float32'

# pylint: disable=too-many-instance-attributes
@dataclass
class OptimConfig:
    """ Optimizer and loop settings """
    algorithm: OptimAlgorithm = OptimAlgorithm.ADAM
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_train_acc: Optional[float] = None

@dataclass
class AugmentConfig:
    """ Training-time augmentation """
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    max_rotation_deg: float = 15.0

@dataclass
class DatasetConfig:
    """ Where the samples come from and how many to use """
    source: DatasetSource = DatasetSource.SYNTHETIC
    path: str = ''
    num_train: int = 256
    num_val: int = 64
    raster_size: int = 64

@dataclass
class GradCheckConfig:
    """ End-to-end gradient verification settings """
    eps: float = 1e-5
    tol: float = 1e-5
    max_coords: int = 100
    max_total_coords: int = 200
    min_scale: float = 1e-3
    batch_size: int = 2

# pylint: disable=too-many-instance-attributes
@dataclass
class RunConfig:
    """ A complete run: model, optimization, data and output """
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)
    seed: int = 0
    out_dir: str = ''
    record_wall_time: bool = False
