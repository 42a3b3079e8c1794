# conftest.py
import copy

import numpy as np
import pytest

from normunit.config import validate_config
from normunit.services.experiment_service import ExperimentContext
from normunit.utils.artifacts import ArtifactStore
from normunit.utils.event_publisher import EventPublisher

RECIPE = {'peak_lr': 0.003, 'warmup_steps': 2, 'decay_half_life': 50, 'batch_size': 4}

TINY = {
    'schema_version': 1,
    'seed': 3,
    'world': {
        'seed': 11,
        'vocab_size': 10,
        'inventory_size': 20,
        'word_length': {'min': 2, 'max': 3},
        'sentence_words': {'min': 2, 'max': 3},
        'speakers_per_language': 4,
        'sizes': {
            'norm_10min': 4, 'norm_1hr': 8, 'norm_10hr': 12, 'norm_dev': 4,
            'train': 16, 'mined': 8, 'dev': 4, 'test': 4, 'xspk': 4
        }
    },
    'codebook': {'k': 30, 'max_iter': 20, 'sample_frames': 2000},
    'normalizer': {
        'width': 16, 'heads': 2, 'depth': 1, 'ffn': 32, 'dropout': 0.0,
        'total_updates': 4, 'frozen_updates': 2, 'pretrain_steps': 2, 'eval_every': 2,
        'recipe': RECIPE
    },
    's2ut': {
        'width': 16, 'heads': 2, 'encoder_layers': 1, 'decoder_layers': 1, 'aux_decoder_layers': 1,
        'aux_layer': 1, 'ffn': 32, 'dropout': 0.0, 'steps': 3, 'eval_every': 3, 'dev_limit': 2, 'beam': 2,
        'recipe': RECIPE
    },
    'duration': {'width': 8, 'steps': 3, 'recipe': RECIPE},
    'eval': {'thresholds': [1.0, 1.06, 1.1]}
}


@pytest.fixture
def tiny_document():
    return copy.deepcopy(TINY)


@pytest.fixture
def tiny_config(tiny_document):
    return validate_config(tiny_document)


@pytest.fixture
def experiment(tiny_config, tmp_path):
    return ExperimentContext(config=tiny_config, store=ArtifactStore(tmp_path / 'artifacts'), workers=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def events():
    EventPublisher.keep_history = True
    EventPublisher.clear()
    yield EventPublisher.history
    EventPublisher.keep_history = False
    EventPublisher.clear()
