""" Run configuration: loading, overrides, presets, validation and serialization """

import copy
import dataclasses
from enum import Enum
import json
import os
import typing
from typing import Optional, Sequence

import tokfuse_env as env
from tokfuse_errors import ConfigError
from tkf_fusion.variants import VARIANTS
from tkf_types.configs import BackboneConfig, ModelConfig, RunConfig, StageSpec
from tkf_types.enums import DatasetSource, FusionMethod, BridgeVariant, CombineVariant

# =============================================================================
# Model constants
# =============================================================================

# Transformer blocks every full-fidelity model applies per forward pass
BLOCK_BUDGET = 12

# Number of mixing blocks in layer by layer fusion
NUM_MIXING_BLOCKS = 5

# Transformer blocks inside each mixing block of a full-fidelity model
MIXING_DEPTH = 2

# Number of backbone stage maps
NUM_STAGES = 5

# Stride of the first block of each residual stage
STAGE_STRIDES = (1, 2, 2, 2)

# Channels of the image
IMAGE_CHANNELS = 3

# Channels of the unified early fusion map
UNIFIED_CHANNELS = 18

# Channels emitted by each bridge
BRIDGE_CHANNELS = 3

# Backbone presets
BACKBONE_PRESETS = {
    'toy': {'stem_channels': 16,
            'num_blocks': (1, 1, 1, 1),
            'out_channels': (16, 32, 64, 128),
            'activation': 'gelu',
            'stem_pool': 'avg',
            'stem_kernel': 3,
           },
    'paper_scale': {'stem_channels': 64,
                    'num_blocks': (3, 4, 23, 3),
                    'out_channels': (256, 512, 1024, 2048),
                    'activation': 'relu',
                    'stem_pool': 'max',
                    'stem_kernel': 7,
                   },
}

# Known activation and stem pooling names
ACTIVATIONS = ('relu', 'gelu')
STEM_POOLS = ('max', 'avg')

# Tensor types a model may compute in
MODEL_DTYPES = ('float32', 'float64')


# =============================================================================
# File name constants
# =============================================================================

# Name of the resolved configuration written with every run
RESOLVED_CONFIG_FILE_NAME = 'resolved_config.json'

# Name of the resolved configuration an evaluation writes; the training record is left alone
EVAL_RESOLVED_CONFIG_FILE_NAME = 'eval_resolved_config.json'

# Name of the per-epoch metrics file
METRICS_FILE_NAME = 'metrics.jsonl'

# Name of the trained weights file
WEIGHTS_FILE_NAME = 'weights.bin'

# Extension of the shipped configuration files
CONFIG_FILE_EXT = '.json'


def _unwrap_optional(hint):
    """ Returns the inner type of an Optional hint, or the hint itself """
    if typing.get_origin(hint) is typing.Union:
        args = [one for one in typing.get_args(hint) if one is not type(None)]
        if len(args) == 1:
            return args[0]
    return hint


def _convert_value(hint, value, path: str):
    """ Converts a JSON value onto a field's declared type
    Arguments:
        hint: the declared type
        value: the JSON value
        path: dotted location used in error messages
    Return:
        Returns the converted value
    Raises:
        ConfigError: when the value can't be the declared type
    """
    # pylint: disable=too-many-return-statements
    if value is None:
        if typing.get_origin(hint) is typing.Union:
            return None
        raise ConfigError(f'Configuration value {path} may not be null')
    hint = _unwrap_optional(hint)

    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f'Configuration value {path} must be an object')
        return _build_dataclass(hint, value, f'{path}.')
    if typing.get_origin(hint) in (list, typing.List):
        if not isinstance(value, list):
            raise ConfigError(f'Configuration value {path} must be a list')
        item_hint = typing.get_args(hint)[0]
        return [_convert_value(item_hint, one, f'{path}[{idx}]') for idx, one in enumerate(value)]
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError as ex:
            choices = ', '.join(one.value for one in hint)
            raise ConfigError(f'Configuration value {path}="{value}" is not one of: {choices}') \
                from ex
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f'Configuration value {path} must be true or false')
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f'Configuration value {path} must be an integer')
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f'Configuration value {path} must be a number')
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f'Configuration value {path} must be a string')
        return value
    return value


def _build_dataclass(cls, data: dict, path: str=''):
    """ Builds a configuration data class from a dictionary, rejecting unknown keys """
    hints = typing.get_type_hints(cls)
    known = {one.name for one in dataclasses.fields(cls)}
    values = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f'Unknown configuration key "{path}{key}"')
        values[key] = _convert_value(hints[key], value, f'{path}{key}')
    return cls(**values)


def config_from_dict(data: dict, explicit_model_fields: Sequence[str]=()) -> RunConfig:
    """ Builds a run configuration from a dictionary, applying any named variant and filling
        the backbone preset
    Arguments:
        data: the configuration tree
        explicit_model_fields: model fields the user set explicitly; a named variant overrides
                               the other model fields but may not contradict these
    Return:
        Returns the resolved RunConfig
    Raises:
        ConfigError: for unknown keys, wrong types, unknown variant names or an explicit
                     field that contradicts the variant
    """
    if not isinstance(data, dict):
        raise ConfigError('The configuration must be a JSON object')
    data = copy.deepcopy(data)

    model_data = data.get('model', {})
    if isinstance(model_data, dict) and model_data.get('variant'):
        variant_name = model_data['variant']
        if variant_name not in VARIANTS:
            raise ConfigError(f'Unknown variant "{variant_name}"; known variants: '
                              f'{", ".join(VARIANTS)}')
        for key, value in VARIANTS[variant_name].model_fields().items():
            value = value.value if isinstance(value, Enum) else value
            if key in explicit_model_fields and model_data.get(key) != value:
                raise ConfigError(f'model.{key}={model_data.get(key)!r} conflicts with variant '
                                  f'"{variant_name}", which sets it to {value!r}')
            model_data[key] = value

    run_config = _build_dataclass(RunConfig, data)
    run_config.model.backbone = resolve_backbone(run_config.model.backbone)
    return run_config


def config_to_dict(run_config: RunConfig) -> dict:
    """ Returns a JSON-ready dictionary of a configuration """
    def plain(value):
        if isinstance(value, Enum):
            return value.value
        if isinstance(value, dict):
            return {key: plain(one) for key, one in value.items()}
        if isinstance(value, list):
            return [plain(one) for one in value]
        return value

    return plain(dataclasses.asdict(run_config))


def resolve_backbone(backbone: BackboneConfig) -> BackboneConfig:
    """ Fills unset backbone fields from its preset
    Arguments:
        backbone: the possibly partial backbone configuration
    Return:
        Returns a complete copy
    Raises:
        ConfigError: for an unknown preset
    """
    if backbone.preset not in BACKBONE_PRESETS:
        raise ConfigError(f'Unknown backbone preset "{backbone.preset}"; known presets: '
                          f'{", ".join(BACKBONE_PRESETS)}')
    preset = BACKBONE_PRESETS[backbone.preset]
    resolved = copy.deepcopy(backbone)
    if resolved.stem_channels is None:
        resolved.stem_channels = preset['stem_channels']
    if resolved.stage_specs is None:
        resolved.stage_specs = [StageSpec(num_blocks=blocks, out_channels=channels, stride=stride)
                                for blocks, channels, stride in
                                zip(preset['num_blocks'], preset['out_channels'], STAGE_STRIDES)]
    for key in ('activation', 'stem_pool', 'stem_kernel'):
        if getattr(resolved, key) is None:
            setattr(resolved, key, preset[key])
    return resolved


def parse_override(override: str) -> tuple:
    """ Splits a key=value override; the value is JSON when it parses, else a string
    Arguments:
        override: the override text
    Return:
        Returns a tuple of the dotted key and the value
    Raises:
        ConfigError: when there's no '=' or no key
    """
    if '=' not in override:
        raise ConfigError(f'Override "{override}" must have the form key=value')
    key, text = override.split('=', 1)
    key = key.strip()
    if not key:
        raise ConfigError(f'Override "{override}" is missing its key')
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    # A bare variant name selects a registered model variant
    if key == 'variant':
        key = 'model.variant'
    return key, value


def apply_overrides(data: dict, overrides: Optional[Sequence[str]]) -> dict:
    """ Applies dotted key=value overrides onto a configuration tree
    Arguments:
        data: the configuration tree
        overrides: the override strings
    Return:
        Returns a new tree with the overrides applied
    Raises:
        ConfigError: when an override walks through a non-object value
    """
    data = copy.deepcopy(data)
    for one_override in overrides or []:
        key, value = parse_override(one_override)
        parts = key.split('.')
        node = data
        for one_part in parts[:-1]:
            child = node.setdefault(one_part, {})
            if not isinstance(child, dict):
                raise ConfigError(f'Override "{one_override}": "{one_part}" is not an object')
            node = child
        node[parts[-1]] = value
    return data


def find_config_file(config_path: str) -> str:
    """ Returns the path of a configuration file; bare names are looked up in the shipped
        configurations
    Arguments:
        config_path: a file path or a shipped configuration name such as "toy"
    Return:
        Returns the path to read
    Raises:
        ConfigError: when no such file exists
    """
    if os.path.isfile(config_path):
        return config_path
    name = config_path if config_path.endswith(CONFIG_FILE_EXT) else \
                                                            config_path + CONFIG_FILE_EXT
    shipped = os.path.join(env.DEFAULT_CONFIGS_PATH, name)
    if os.path.isfile(shipped):
        return shipped
    raise ConfigError(f'Configuration file not found: {config_path}')


def load_run_config(config_path: Optional[str], overrides: Optional[Sequence[str]]=None,
                    seed: Optional[int]=None, out_dir: Optional[str]=None) -> RunConfig:
    """ Loads, overrides and validates a run configuration
    Arguments:
        config_path: the JSON file (or shipped name); None starts from the defaults
        overrides: key=value strings
        seed: overrides the configured seed when set
        out_dir: overrides the configured output folder when set
    Return:
        Returns the validated RunConfig
    Raises:
        ConfigError: for any invalid configuration
    """
    data = {}
    if config_path:
        path = find_config_file(config_path)
        try:
            with open(path, 'r', encoding='utf-8') as infile:
                data = json.load(infile)
        except json.JSONDecodeError as ex:
            raise ConfigError(f'Configuration file {path} is not valid JSON: {ex}') from ex
        except OSError as ex:
            raise ConfigError(f'Unable to read configuration file {path}: {ex}') from ex

    data = apply_overrides(data, overrides)
    explicit_model_fields = [key.split('.')[1] for key, _ in map(parse_override, overrides or [])
                             if key.startswith('model.') and key.count('.') == 1]
    if seed is not None:
        data['seed'] = seed
    if out_dir:
        data['out_dir'] = out_dir

    run_config = config_from_dict(data, explicit_model_fields)
    if not run_config.out_dir:
        run_config.out_dir = env.DEFAULT_OUT_DIR
    validate_run_config(run_config)
    return run_config


def write_resolved_config(run_config: RunConfig, out_dir: str,
                          file_name: str=RESOLVED_CONFIG_FILE_NAME) -> str:
    """ Writes the complete configuration next to a run's outputs
    Arguments:
        run_config: the configuration to write
        out_dir: the folder to write into (created when missing)
        file_name: the name of the written file
    Return:
        Returns the written file's path
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, file_name)
    with open(path, 'w', encoding='utf-8') as outfile:
        json.dump(config_to_dict(run_config), outfile, indent=2, sort_keys=True)
        outfile.write('\n')
    return path


def block_budget(model_config: ModelConfig) -> int:
    """ Returns how many transformer blocks a forward pass of the model applies """
    depth = model_config.encoder.depth
    if model_config.fusion_method == FusionMethod.LATE_PARALLEL:
        return 2 * (depth // 2)
    return depth


def cnn_stage_for_patch(patch_size: int) -> int:
    """ Returns the backbone stage whose stride is half the patch size
    Raises:
        ConfigError: when no stage has that stride
    """
    for stage in range(1, NUM_STAGES + 1):
        if 2 ** stage * 2 == patch_size:
            return stage
    raise ConfigError(f'Late fusion needs a patch size of 4, 8, 16, 32 or 64 so that a backbone '
                      f'stage has half its stride, got {patch_size}')


def _require(condition: bool, message: str) -> None:
    """ Raises a ConfigError with the message when the condition doesn't hold """
    if not condition:
        raise ConfigError(message)


def validate_backbone_config(backbone: BackboneConfig) -> None:
    """ Checks a resolved backbone configuration
    Raises:
        ConfigError: on the first invalid value
    """
    _require(backbone.stem_channels >= 1, 'backbone.stem_channels must be at least 1')
    _require(len(backbone.stage_specs) == len(STAGE_STRIDES),
             f'backbone.stage_specs must have exactly {len(STAGE_STRIDES)} entries')
    for idx, one_spec in enumerate(backbone.stage_specs):
        _require(one_spec.num_blocks >= 1, f'backbone.stage_specs[{idx}].num_blocks must be >= 1')
        _require(one_spec.out_channels >= 1,
                 f'backbone.stage_specs[{idx}].out_channels must be >= 1')
        _require(one_spec.stride == STAGE_STRIDES[idx],
                 f'backbone.stage_specs[{idx}].stride must be {STAGE_STRIDES[idx]} so the '
                 'stage maps have strides 2, 4, 8, 16 and 32')
    _require(backbone.activation in ACTIVATIONS,
             f'backbone.activation must be one of: {", ".join(ACTIVATIONS)}')
    _require(backbone.stem_pool in STEM_POOLS,
             f'backbone.stem_pool must be one of: {", ".join(STEM_POOLS)}')
    _require(backbone.stem_kernel >= 1 and backbone.stem_kernel % 2 == 1,
             'backbone.stem_kernel must be a positive odd number')


def validate_model_config(model: ModelConfig) -> None:
    """ Checks a model configuration, including the variant pairing and block budget
    Raises:
        ConfigError: on the first invalid value
    """
    validate_backbone_config(model.backbone)
    encoder = model.encoder
    _require(encoder.dim >= 1 and encoder.heads >= 1, 'encoder.dim and encoder.heads must be >= 1')
    _require(encoder.dim % encoder.heads == 0,
             f'encoder.heads ({encoder.heads}) must divide encoder.dim ({encoder.dim})')
    _require(encoder.mlp_ratio >= 1, 'encoder.mlp_ratio must be >= 1')
    _require(encoder.depth >= 0 and encoder.mixing_depth >= 0,
             'encoder.depth and encoder.mixing_depth may not be negative')
    _require(model.num_classes >= 1, 'model.num_classes must be >= 1')
    _require(model.patch_size >= 1, 'model.patch_size must be >= 1')
    _require(model.image_size >= 32 and model.image_size % 32 == 0,
             f'model.image_size must be a multiple of 32, got {model.image_size}')
    _require(model.image_size % model.patch_size == 0,
             f'model.patch_size {model.patch_size} must divide model.image_size '
             f'{model.image_size}')
    _require(model.bridge_width >= 1, 'model.bridge_width must be >= 1')
    _require(model.init_std > 0, 'model.init_std must be positive')
    _require(model.dtype in MODEL_DTYPES, f'model.dtype must be one of: {", ".join(MODEL_DTYPES)}')

    method = model.fusion_method
    _require(not model.use_class_token or method == FusionMethod.LAYER_BY_LAYER,
             'model.use_class_token is only valid with layer_by_layer fusion')
    _require(model.combine_variant == CombineVariant.UPCONV_CONCAT or
             method == FusionMethod.LATE_PARALLEL,
             f'model.combine_variant {model.combine_variant.value} needs late_parallel fusion')
    _require(model.bridge_variant == BridgeVariant.UPCONV_MULTI or
             method == FusionMethod.EARLY_FUSION,
             f'model.bridge_variant {model.bridge_variant.value} needs early_fusion')

    if method == FusionMethod.LATE_PARALLEL:
        cnn_stage_for_patch(model.patch_size)
    if method == FusionMethod.LAYER_BY_LAYER:
        _require(encoder.depth >= NUM_MIXING_BLOCKS * encoder.mixing_depth,
                 f'encoder.depth {encoder.depth} is less than the {NUM_MIXING_BLOCKS} x '
                 f'{encoder.mixing_depth} blocks inside the mixing blocks')

    if not model.relax_block_budget:
        _require(encoder.depth == BLOCK_BUDGET and block_budget(model) == BLOCK_BUDGET,
                 f'The model applies {block_budget(model)} transformer blocks; '
                 f'{BLOCK_BUDGET} are required unless model.relax_block_budget is set')
        _require(method != FusionMethod.LAYER_BY_LAYER or encoder.mixing_depth == MIXING_DEPTH,
                 f'encoder.mixing_depth must be {MIXING_DEPTH} for layer_by_layer fusion unless '
                 'model.relax_block_budget is set')


def validate_run_config(run_config: RunConfig) -> None:
    """ Checks a complete run configuration
    Raises:
        ConfigError: on the first invalid value
    """
    validate_model_config(run_config.model)

    optim = run_config.optim
    _require(optim.lr > 0, 'optim.lr must be positive')
    _require(optim.batch_size >= 1, 'optim.batch_size must be >= 1')
    _require(optim.epochs >= 0, 'optim.epochs may not be negative')
    _require(optim.weight_decay >= 0, 'optim.weight_decay may not be negative')
    _require(0 <= optim.momentum < 1, 'optim.momentum must be in [0, 1)')
    _require(0 <= optim.beta1 < 1 and 0 <= optim.beta2 < 1, 'optim.beta1/beta2 must be in [0, 1)')
    _require(optim.adam_eps > 0, 'optim.adam_eps must be positive')
    _require(optim.early_stop_train_acc is None or 0 < optim.early_stop_train_acc <= 1,
             'optim.early_stop_train_acc must be in (0, 1]')

    augment = run_config.augment
    _require(0 <= augment.hflip_prob <= 1 and 0 <= augment.vflip_prob <= 1,
             'augment flip probabilities must be in [0, 1]')
    _require(augment.max_rotation_deg >= 0, 'augment.max_rotation_deg may not be negative')

    dataset = run_config.dataset
    _require(dataset.source != DatasetSource.CIFAR10 or bool(dataset.path),
             'dataset.path is required for cifar10 data')
    _require(dataset.num_train >= 0 and dataset.num_val >= 0,
             'dataset.num_train and dataset.num_val may not be negative')
    _require(dataset.raster_size >= 1, 'dataset.raster_size must be >= 1')

    grad = run_config.gradcheck
    _require(grad.eps > 0 and grad.tol > 0, 'gradcheck.eps and gradcheck.tol must be positive')
    _require(grad.max_coords >= 1 and grad.max_total_coords >= 1,
             'gradcheck.max_coords and gradcheck.max_total_coords must be >= 1')
    _require(grad.min_scale > 0, 'gradcheck.min_scale must be positive')
    _require(grad.batch_size >= 1, 'gradcheck.batch_size must be >= 1')
    _require(run_config.seed >= 0, 'seed may not be negative')
