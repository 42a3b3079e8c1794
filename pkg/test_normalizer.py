# test_normalizer.py
import numpy as np
import pytest

from normunit.services.normalizer_service import NormalizerService, span_mask
from normunit.services.unit_service import UnitService
from normunit.services.world_service import WorldService
from normunit.utils.errors import ConfigError, TrainingError


@pytest.fixture
def world(tiny_config):
    return WorldService.generate_world(tiny_config.world)


def _pairs(world, count, seed, speaker=None):
    inventory = world.inventories['tgt']
    speaker = speaker or world.reference_speaker('tgt')
    renderer = WorldService.renderer(world, 'tgt')
    rng = np.random.default_rng(seed)
    pairs = []
    for index in range(count):
        words = [int(w) for w in rng.integers(0, world.lexicon.vocab_size, size=2)]
        content = world.lexicon.content('tgt', words)
        pairs.append((renderer.render(content, speaker, inventory.codebook(), seed=seed + index), content))
    return pairs


def _model(world, config, seed=0):
    inventory = world.inventories['tgt']
    return NormalizerService.build_model(inventory.prototypes.shape[1], inventory.size, config, seed)


def test_span_mask_stays_inside_valid_frames(rng):
    lengths = [10, 4, 0]
    mask = span_mask(lengths, 10, 0.5, 3, rng)
    for row, length in enumerate(lengths):
        assert not mask[row, length:].any()
    assert not span_mask(lengths, 10, 0.0, 3, rng).any()
    forced = span_mask(lengths, 10, 0.0, 3, rng, at_least_one=True)
    assert forced[0].any() and forced[1].any() and not forced[2].any()


def test_finetune_selects_best_checkpoint(world, tiny_config, events):
    config = tiny_config.normalizer
    model = _model(world, config)
    pairs = _pairs(world, 6, seed=1)
    result = NormalizerService.finetune(model, pairs, config, seed=0)
    assert result.used_pairs == 6 and result.skipped_pairs == 0
    assert result.best_uer == min(point['dev_uer'] for point in result.curve)
    assert NormalizerService.dev_uer(model, pairs) == pytest.approx(result.best_uer)
    assert events[-1]['event_type'] == 'normalizer.checkpoint_selected'


def test_finetune_skips_infeasible_pairs(world, tiny_config):
    config = tiny_config.normalizer
    model = _model(world, config)
    pairs = _pairs(world, 4, seed=2)
    features, content = pairs[0]
    pairs.append((features[:1], content))
    result = NormalizerService.finetune(model, pairs, config, seed=0)
    assert result.skipped_pairs == 1


def test_finetune_without_feasible_pairs_is_training_error(world, tiny_config):
    config = tiny_config.normalizer
    model = _model(world, config)
    features, content = _pairs(world, 1, seed=3)[0]
    with pytest.raises(TrainingError):
        NormalizerService.finetune(model, [(features[:1], content)], config, seed=0)


def test_frozen_blocks_stay_fixed_when_never_unfrozen(world, tiny_config):
    config = tiny_config.normalizer.model_copy(update={'frozen_updates': 2, 'total_updates': 2, 'eval_every': 1})
    model = _model(world, config)
    before = model.state_dict()
    NormalizerService.finetune(model, _pairs(world, 4, seed=4), config, seed=0)
    after = model.state_dict()
    for name in before:
        if name.startswith('blocks.'):
            np.testing.assert_array_equal(before[name], after[name])
    assert any(not np.array_equal(before[name], after[name]) for name in before if name.startswith('ctc_head.'))


def test_pretrain_with_zero_steps_is_a_no_op(world, tiny_config):
    config = tiny_config.normalizer.model_copy(update={'pretrain_steps': 0})
    model = _model(world, config)
    before = model.state_dict()
    features = [features for features, _ in _pairs(world, 2, seed=5)]
    result = NormalizerService.pretrain_proxy(model, features, [[0] * len(f) for f in features], config, seed=0)
    assert result.steps == 0 and np.isnan(result.dev_accuracy)
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, before[name])


def test_pretrain_reports_masked_accuracy(world, tiny_config):
    config = tiny_config.normalizer
    model = _model(world, config)
    codebook = world.inventories['tgt'].codebook()
    features = [features for features, _ in _pairs(world, 4, seed=6)]
    units = [UnitService.quantize(f, codebook) for f in features]
    result = NormalizerService.pretrain_proxy(model, features, units, config, seed=0,
                                              dev_features=features, dev_units=units)
    assert result.steps == config.pretrain_steps
    assert 0.0 <= result.dev_accuracy <= 1.0
    assert result.chance == pytest.approx(1.0 / world.inventories['tgt'].size)


def test_pretrain_rejects_empty_corpus(world, tiny_config):
    with pytest.raises(ConfigError):
        NormalizerService.pretrain_proxy(_model(world, tiny_config.normalizer), [], [], tiny_config.normalizer, 0)


def test_normalize_outputs_reduced_units(world, tiny_config):
    config = tiny_config.normalizer
    model = _model(world, config)
    features, _ = _pairs(world, 1, seed=7)[0]
    units = NormalizerService.normalize(model, features)
    assert UnitService.is_reduced(units)
    assert all(0 <= unit < model.blank for unit in units)
    assert NormalizerService.normalize(model, np.zeros((0, features.shape[1]))) == []
    batch = NormalizerService.normalize_batch(model, [features, np.zeros((0, features.shape[1])), features])
    assert batch == [units, [], units]


@pytest.mark.slow
def test_normalizer_learns_reference_units(world, tiny_config):
    config = tiny_config.normalizer.model_copy(update={
        'total_updates': 400, 'frozen_updates': 0, 'eval_every': 100, 'mask_probability': 0.0,
        'recipe': tiny_config.normalizer.recipe.model_copy(update={'batch_size': 8})
    })
    model = _model(world, config)
    speaker = next(s for s in world.speakers_of('tgt') if not s.is_reference)
    train = _pairs(world, 48, seed=8, speaker=speaker)
    dev = _pairs(world, 8, seed=100, speaker=speaker)
    result = NormalizerService.finetune(model, train, config, seed=0, dev_pairs=dev)
    assert result.best_uer < 50.0
