# test_config.py
import json

import pytest

from normunit import config as settings
from normunit.config import apply_overrides, get_config, validate_config
from normunit.models.experiment import tier_splits
from normunit.utils.errors import ConfigError


def _paths(error):
    return [message.split(':', 1)[0] for message in error.errors]


def test_defaults_are_valid():
    config = validate_config()
    assert config.schema_version == 1
    assert config.s2ut.target == 'norm'
    assert config.normalizer.tier_splits == ['norm-10min', 'norm-1hr']
    assert config.run_seeds() == [0]


def test_normalized_config_validates_again(tiny_config):
    again = validate_config(tiny_config.to_dict())
    assert again.to_dict() == tiny_config.to_dict()


def test_tier_splits_nest():
    assert tier_splits('10min') == ['norm-10min']
    assert tier_splits('10hr') == ['norm-10min', 'norm-1hr', 'norm-10hr']


def test_negative_aux_weight_is_rejected(tiny_document):
    tiny_document['s2ut']['aux_weight'] = -1
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    assert 's2ut.aux_weight' in _paths(error.value)
    assert error.value.exit_code == 2


def test_unknown_keys_are_rejected(tiny_document):
    tiny_document['s2ut']['aux_wieght'] = 1.0
    tiny_document['extra'] = True
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    assert {'s2ut.aux_wieght', 'extra'} <= set(_paths(error.value))


def test_empty_and_malformed_files(tmp_path):
    empty = tmp_path / 'empty.json'
    empty.write_text('  \n')
    with pytest.raises(ConfigError):
        validate_config(empty)
    broken = tmp_path / 'broken.json'
    broken.write_text('{"seed": ')
    with pytest.raises(ConfigError):
        validate_config(broken)
    listing = tmp_path / 'list.json'
    listing.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        validate_config(listing)
    with pytest.raises(ConfigError):
        validate_config(tmp_path / 'missing.json')


def test_file_source(tmp_path, tiny_document):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps(tiny_document))
    assert validate_config(path).world.seed == 11


def test_every_derived_violation_is_reported(tiny_document):
    tiny_document['normalizer'].update({'frozen_updates': 4, 'kernel_size': 4})
    tiny_document['world']['word_length'] = {'min': 3, 'max': 2}
    tiny_document['world']['base_duration'] = {'min': 1, 'max': 4}
    tiny_document['eval']['thresholds'] = [1.1, 1.0]
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    paths = _paths(error.value)
    for expected in ('normalizer.frozen_updates', 'normalizer.kernel_size', 'world.word_length', 'world.base_duration',
                     'eval.thresholds'):
        assert expected in paths


def test_norm_targets_need_target_language_normalizer(tiny_document):
    tiny_document['normalizer']['language'] = 'src'
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    assert 'normalizer.language' in _paths(error.value)
    tiny_document['s2ut']['target'] = 'orig'
    assert validate_config(tiny_document).normalizer.language == 'src'


def test_cross_speaker_pairs_need_two_non_reference_speakers(tiny_document):
    tiny_document['world']['speakers_per_language'] = 2
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    assert 'world.speakers_per_language' in _paths(error.value)


def test_oversized_corpus_is_rejected(tiny_document):
    tiny_document['world']['sizes']['train'] = 100000
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    assert 'world.sizes' in _paths(error.value)


def test_overrides(tiny_document):
    config = validate_config(tiny_document, ['normalizer.tier=10hr', 'eval.thresholds=[1.0, 1.2]', 'notes=run a'])
    assert config.normalizer.tier_splits == tier_splits('10hr')
    assert config.eval.thresholds == [1.0, 1.2]
    assert config.notes == 'run a'


def test_bad_overrides():
    with pytest.raises(ConfigError) as error:
        apply_overrides({'seed': 1}, ['seed', 'seed.inner=2', '=3'])
    assert len(error.value.errors) == 3


def test_environment_config_classes():
    assert get_config(testing=True) is settings.TestingConfig
    assert settings.TestingConfig.TESTING and settings.TestingConfig.WORKERS == 1


def test_codebook_needs_two_units(tiny_document):
    tiny_document['codebook']['k'] = 1
    with pytest.raises(ConfigError) as error:
        validate_config(tiny_document)
    assert 'codebook.k' in _paths(error.value)
    tiny_document['codebook']['k'] = 2
    assert validate_config(tiny_document).codebook.k == 2
