"""This script contains testing of configuration loading, overrides and validation
"""

import json
import os

import pytest

import tokfuse_config as tcfg
import tokfuse_env as env
from tokfuse_errors import ConfigError
from tkf_types.enums import BridgeVariant, CombineVariant, DatasetSource, FusionMethod, HeadType

# Every configuration shipped with the engine
SHIPPED_CONFIGS = ('toy', 'paper_scale', 'gradcheck')


@pytest.mark.parametrize('name', SHIPPED_CONFIGS)
def test_shipped_configs_load(name):
    """ The shipped configurations are valid as they are """
    run_config = tcfg.load_run_config(name)
    assert run_config.out_dir == env.DEFAULT_OUT_DIR
    assert len(run_config.model.backbone.stage_specs) == 4


def test_dict_round_trip():
    """ A written configuration reads back to the same values """
    run_config = tcfg.load_run_config('toy', overrides=['variant=early_upconv_single'])
    data = tcfg.config_to_dict(run_config)
    assert data['model']['bridge_variant'] == 'upconv_single'
    json.dumps(data)
    assert tcfg.config_from_dict(data) == run_config


def test_unknown_keys_and_values():
    """ Unknown keys, wrong types and unknown enum values are rejected """
    with pytest.raises(ConfigError, match='model.colour'):
        tcfg.config_from_dict({'model': {'colour': 'red'}})
    with pytest.raises(ConfigError, match='fusion_method'):
        tcfg.config_from_dict({'model': {'fusion_method': 'sideways'}})
    with pytest.raises(ConfigError):
        tcfg.config_from_dict({'seed': 'zero'})
    with pytest.raises(ConfigError):
        tcfg.config_from_dict({'model': {'relax_block_budget': 1}})
    with pytest.raises(ConfigError):
        tcfg.config_from_dict({'model': {'variant': 'no_such_variant'}})
    with pytest.raises(ConfigError):
        tcfg.config_from_dict([])


def test_integers_widen_to_floats():
    """ Integer JSON values are accepted for float fields """
    run_config = tcfg.config_from_dict({'optim': {'lr': 1}})
    assert run_config.optim.lr == 1.0 and isinstance(run_config.optim.lr, float)


def test_parse_override():
    """ Values parse as JSON and fall back to strings """
    assert tcfg.parse_override('optim.lr=0.5') == ('optim.lr', 0.5)
    assert tcfg.parse_override('model.head_type=mixing') == ('model.head_type', 'mixing')
    assert tcfg.parse_override('model.relax_block_budget=true') == \
                                                            ('model.relax_block_budget', True)
    assert tcfg.parse_override('a=b=c') == ('a', 'b=c')
    assert tcfg.parse_override('variant=late_copy_add') == ('model.variant', 'late_copy_add')
    with pytest.raises(ConfigError):
        tcfg.parse_override('optim.lr')
    with pytest.raises(ConfigError):
        tcfg.parse_override('=3')


def test_apply_overrides():
    """ Dotted keys create missing objects and leave the input alone """
    data = {'optim': {'lr': 0.1}, 'seed': 3}
    changed = tcfg.apply_overrides(data, ['optim.epochs=4', 'dataset.num_train=8'])
    assert changed == {'optim': {'lr': 0.1, 'epochs': 4}, 'seed': 3,
                       'dataset': {'num_train': 8}}
    assert data == {'optim': {'lr': 0.1}, 'seed': 3}
    with pytest.raises(ConfigError):
        tcfg.apply_overrides(data, ['seed.value=1'])


def test_variant_over_fields():
    """ A named variant replaces the file's model fields, but an explicit override that
        contradicts it is an error
    """
    run_config = tcfg.load_run_config('toy', overrides=['variant=late_copy_concat'])
    model = run_config.model
    assert model.fusion_method == FusionMethod.LATE_PARALLEL
    assert model.head_type == HeadType.CHANNEL_WISE
    assert model.combine_variant == CombineVariant.COPY_CONCAT
    assert model.bridge_variant == BridgeVariant.UPCONV_MULTI

    agreeing = tcfg.load_run_config('toy', overrides=['model.head_type=channel_wise',
                                                      'variant=late_copy_concat'])
    assert agreeing.model.combine_variant == CombineVariant.COPY_CONCAT
    with pytest.raises(ConfigError, match='model.head_type'):
        tcfg.load_run_config('toy', overrides=['model.head_type=mixing',
                                               'variant=late_copy_concat'])
    with pytest.raises(ConfigError, match='late_copy_concat'):
        tcfg.load_run_config('toy', overrides=['variant=late_copy_concat',
                                               'model.fusion_method=early_fusion'])


def test_seed_and_out_dir(tmp_path):
    """ Explicit seed and output folder override the file """
    run_config = tcfg.load_run_config('toy', seed=9, out_dir=str(tmp_path))
    assert run_config.seed == 9
    assert run_config.out_dir == str(tmp_path)


def test_backbone_presets_fill_gaps():
    """ Unset backbone fields come from the preset; set ones are kept """
    run_config = tcfg.config_from_dict({'model': {'backbone': {'preset': 'paper_scale',
                                                               'activation': 'gelu'}}})
    backbone = run_config.model.backbone
    assert backbone.activation == 'gelu'
    assert backbone.stem_pool == 'max'
    assert [one.num_blocks for one in backbone.stage_specs] == [3, 4, 23, 3]
    assert [one.stride for one in backbone.stage_specs] == [1, 2, 2, 2]
    with pytest.raises(ConfigError):
        tcfg.config_from_dict({'model': {'backbone': {'preset': 'huge'}}})


@pytest.mark.parametrize('overrides', [
    ['model.encoder.depth=10'],
    ['model.encoder.heads=5'],
    ['model.image_size=48'],
    ['model.patch_size=5'],
    ['model.dtype="float16"'],
    ['model.use_class_token=true', 'model.fusion_method=early_fusion'],
    ['model.combine_variant=copy_add'],
    ['model.bridge_variant=copy_single'],
    ['model.encoder.mixing_depth=3'],
    ['model.encoder.mixing_depth=1'],
    ['model.fusion_method=late_parallel', 'model.patch_size=2', 'model.image_size=32'],
    ['model.backbone.stem_kernel=4'],
    ['optim.lr=0'],
    ['optim.momentum=1'],
    ['optim.early_stop_train_acc=0'],
    ['augment.hflip_prob=1.5'],
    ['dataset.source=cifar10'],
    ['dataset.num_train=-1'],
    ['gradcheck.eps=0'],
    ['seed=-1'],
])
def test_invalid_values(overrides):
    """ Every out-of-range value is a configuration error """
    with pytest.raises(ConfigError):
        tcfg.load_run_config('toy', overrides=overrides)


def test_block_budget():
    """ Late fusion splits the depth between its branches """
    late = tcfg.load_run_config('toy', overrides=['variant=late_parallel_mixing']).model
    assert tcfg.block_budget(late) == 12
    relaxed = tcfg.load_run_config('toy', overrides=['model.encoder.depth=10',
                                                     'model.relax_block_budget=true']).model
    assert tcfg.block_budget(relaxed) == 10
    shallow = tcfg.load_run_config('toy', overrides=['model.encoder.mixing_depth=1',
                                                     'model.relax_block_budget=true']).model
    assert shallow.encoder.mixing_depth == 1


def test_patch_stage():
    """ The late fusion backbone stage has half the patch stride """
    assert [tcfg.cnn_stage_for_patch(size) for size in (4, 8, 16, 32, 64)] == [1, 2, 3, 4, 5]
    with pytest.raises(ConfigError):
        tcfg.cnn_stage_for_patch(12)


def test_find_config_file(tmp_path):
    """ Paths are used as given and bare names come from the shipped folder """
    assert tcfg.find_config_file('toy') == os.path.join(env.DEFAULT_CONFIGS_PATH, 'toy.json')
    assert tcfg.find_config_file('toy.json') == os.path.join(env.DEFAULT_CONFIGS_PATH, 'toy.json')
    own = tmp_path / 'own.json'
    own.write_text('{}', encoding='utf-8')
    assert tcfg.find_config_file(str(own)) == str(own)
    with pytest.raises(ConfigError):
        tcfg.find_config_file(str(tmp_path / 'none.json'))


def test_bad_json(tmp_path):
    """ Unparseable files are configuration errors """
    path = tmp_path / 'bad.json'
    path.write_text('{"seed": ', encoding='utf-8')
    with pytest.raises(ConfigError, match='not valid JSON'):
        tcfg.load_run_config(str(path))


def test_no_file_uses_defaults():
    """ Without a file the data class defaults apply """
    run_config = tcfg.load_run_config(None)
    assert run_config.model.fusion_method == FusionMethod.LAYER_BY_LAYER
    assert run_config.dataset.source == DatasetSource.SYNTHETIC


def test_write_resolved_config(tmp_path):
    """ The resolved configuration is written sorted and reads back """
    run_config = tcfg.load_run_config('toy', out_dir=str(tmp_path / 'run'))
    path = tcfg.write_resolved_config(run_config, run_config.out_dir)
    assert os.path.basename(path) == tcfg.RESOLVED_CONFIG_FILE_NAME
    with open(path, 'r', encoding='utf-8') as infile:
        data = json.load(infile)
    assert tcfg.config_from_dict(data) == run_config
