# test_s2ut.py
import math

import numpy as np
import pytest

from normunit.networks.s2ut_net import Downsampler, special_symbols
from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.services.normalizer_service import pad_features
from normunit.services.s2ut_service import S2utExample, S2utService, _pad_tokens
from normunit.services.unit_service import UnitService
from normunit.utils.errors import ConfigError, UsageError

FEATURE_DIM = 4
SRC_K = 5
TGT_K = 6


def _examples(rng, count, with_speaker=False):
    examples = []
    for index in range(count):
        target = [int(u) for u in rng.integers(0, TGT_K, size=int(rng.integers(1, 4)))]
        examples.append(S2utExample(
            id=f"ex-{index}",
            features=rng.normal(size=(int(rng.integers(6, 14)), FEATURE_DIM)),
            target=target,
            aux=[int(u) for u in rng.integers(0, SRC_K, size=2)],
            speaker=rng.normal(size=3) if with_speaker else None
        ))
    return examples


def _model(config, seed=0, speaker_dim=0):
    return S2utService.build_model(FEATURE_DIM, SRC_K, TGT_K, config, seed, speaker_dim=speaker_dim)


def test_special_symbols_follow_inventory():
    assert special_symbols(100) == (100, 101, 102)


def test_downsampler_length(rng):
    downsampler = Downsampler(FEATURE_DIM, 8, rng)
    for length in range(1, 21):
        assert downsampler.output_length(length) == math.ceil(math.ceil(length / 2) / 2)
        out = downsampler(T.Tensor(rng.normal(size=(1, length, FEATURE_DIM))))
        assert out.shape == (1, downsampler.output_length(length), 8)


def test_beam_one_matches_greedy(tiny_config, rng):
    model = _model(tiny_config.s2ut)
    for example in _examples(rng, 5):
        greedy = S2utService.greedy(model, example.features)
        beam = S2utService.translate(model, example.features, beam=1)
        assert beam.units == greedy.units
        assert beam.truncated == greedy.truncated
        assert beam.score == pytest.approx(greedy.score)


def test_beam_rejects_non_positive_width(tiny_config, rng):
    model = _model(tiny_config.s2ut)
    with pytest.raises(UsageError):
        S2utService.translate(model, rng.normal(size=(8, FEATURE_DIM)), beam=0)


def test_empty_input_translates_to_nothing(tiny_config):
    model = _model(tiny_config.s2ut)
    assert S2utService.translate(model, np.zeros((0, FEATURE_DIM)), beam=3).units == []
    assert S2utService.greedy(model, np.zeros((0, FEATURE_DIM))).units == []


def test_translation_without_eos_is_truncated(tiny_config, rng):
    model = _model(tiny_config.s2ut)
    _, eos, _ = special_symbols(TGT_K)
    model.decoder.output.bias.data[eos] = -1e9
    features = rng.normal(size=(10, FEATURE_DIM))
    result = S2utService.translate(model, features, beam=2, max_length=7)
    assert result.truncated
    assert len(result.units) == 7
    assert all(0 <= unit < TGT_K for unit in result.units)


def test_speaker_fusion_is_identity_for_zero_speaker(tiny_config, rng):
    config = tiny_config.s2ut.model_copy(update={'speaker_fusion': True})
    model = _model(config, speaker_dim=3)
    states = T.Tensor(rng.normal(size=(2, 5, config.width)))
    fused = S2utService.fuse_speaker_embedding(model, states, np.zeros((2, 3)))
    np.testing.assert_allclose(fused.data, states.data)
    with pytest.raises(ConfigError):
        S2utService.fuse_speaker_embedding(model, states, np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        S2utService.translate(model, rng.normal(size=(8, FEATURE_DIM)), beam=1)
    assert S2utService.translate(model, rng.normal(size=(8, FEATURE_DIM)), beam=1, speaker=np.ones(3)).units is not None


def test_fusion_off_matches_the_baseline_bit_exactly(tiny_config, rng):
    examples = _examples(rng, 4)
    baseline = _model(tiny_config.s2ut, seed=7)
    fused = _model(tiny_config.s2ut.model_copy(update={'speaker_fusion': True}), seed=7, speaker_dim=3)
    toggled_off = _model(tiny_config.s2ut.model_copy(update={'speaker_fusion': False}), seed=7, speaker_dim=3)
    shared, with_fusion = baseline.state_dict(), fused.state_dict()
    assert set(with_fusion) - set(shared) == {'fusion.weight', 'fusion.bias'}
    for name, value in shared.items():
        np.testing.assert_array_equal(value, with_fusion[name])
    for example in examples:
        expected = S2utService.translate(baseline, example.features, beam=2)
        actual = S2utService.translate(toggled_off, example.features, beam=2)
        assert actual.units == expected.units
        assert actual.score == expected.score

    config = tiny_config.s2ut.model_copy(update={'steps': 3, 'dropout': 0.1})
    first, second = _model(config, seed=7), _model(config, seed=7, speaker_dim=3)
    S2utService.train(first, examples, config, seed=2)
    S2utService.train(second, examples, config, seed=2)
    trained = second.state_dict()
    for name, value in first.state_dict().items():
        np.testing.assert_array_equal(value, trained[name])


def test_aux_gradients_stop_at_the_attachment_layer(tiny_config, rng):
    config = tiny_config.s2ut.model_copy(update={'encoder_layers': 3, 'aux_layer': 2})
    model = _model(config)
    examples = _examples(rng, 3)
    inputs, lengths = pad_features([example.features for example in examples])
    _, aux_memory, memory_mask = model.encode(inputs, lengths, with_aux=True)
    bos, eos, pad = special_symbols(SRC_K)
    tokens_in, tokens_out, token_lengths = _pad_tokens([example.aux for example in examples], bos, eos, pad)
    logits = model.aux_decode(tokens_in, aux_memory, memory_mask, token_lengths)
    T.backward(F.cross_entropy(logits, tokens_out, ignore_index=pad))

    grads = {name: param.grad for name, param in model.named_parameters()}
    for name, grad in grads.items():
        if name.startswith(('encoder.2.', 'encoder_norm.', 'decoder.')):
            assert not np.any(grad), name
    for prefix in ('downsampler.', 'encoder.0.', 'encoder.1.', 'aux_norm.', 'aux_decoder.'):
        assert any(np.any(grad) for name, grad in grads.items() if name.startswith(prefix)), prefix


def test_fusion_requires_speaker_width(tiny_config):
    config = tiny_config.s2ut.model_copy(update={'speaker_fusion': True})
    with pytest.raises(ConfigError):
        _model(config, speaker_dim=0)
    with pytest.raises(ConfigError):
        S2utService.fuse_speaker_embedding(_model(tiny_config.s2ut), T.Tensor(np.zeros((1, 2, 16))), np.zeros((1, 3)))


def test_zero_aux_weight_leaves_aux_decoder_untouched(tiny_config, rng):
    config = tiny_config.s2ut.model_copy(update={'aux_weight': 0.0})
    model = _model(config)
    before = {name: value for name, value in model.state_dict().items() if name.startswith('aux_decoder.')}
    examples = _examples(rng, 6)
    _, _, auxiliary = S2utService.loss(model, examples[:2], config)
    assert auxiliary == 0.0
    result = S2utService.train(model, examples, config, seed=0)
    assert result.aux_weight == 0.0
    after = model.state_dict()
    for name, value in before.items():
        np.testing.assert_array_equal(value, after[name])


def test_training_keeps_best_dev_checkpoint(tiny_config, rng, events):
    config = tiny_config.s2ut.model_copy(update={'steps': 4, 'eval_every': 2})
    model = _model(config)
    examples = _examples(rng, 6)
    scores = iter([10.0, 5.0])
    result = S2utService.train(model, examples, config, seed=0, dev_examples=examples[:2],
                               scorer=lambda hyps, dev: next(scores))
    assert result.best_step == 2
    assert result.best_bleu == 10.0
    assert [point['dev_bleu'] for point in result.curve] == [10.0, 5.0]
    assert events[-1]['event_type'] == 's2ut.checkpoint_selected'


def test_dev_scoring_keeps_dropout_on_for_later_steps(tiny_config, rng, monkeypatch):
    config = tiny_config.s2ut.model_copy(update={'steps': 4, 'eval_every': 1, 'dropout': 0.1})
    model = _model(config)
    examples = _examples(rng, 6)
    modes = []
    loss = S2utService.loss

    def recording_loss(model, batch, config):
        modes.append(model.training)
        return loss(model, batch, config)

    monkeypatch.setattr(S2utService, 'loss', staticmethod(recording_loss))
    S2utService.train(model, examples, config, seed=0, dev_examples=examples[:2], scorer=lambda hyps, dev: 1.0)
    assert modes == [True, True, True, True]
    assert not model.training


def test_decoding_restores_the_previous_mode(tiny_config, rng):
    model = _model(tiny_config.s2ut)
    features = rng.normal(size=(8, FEATURE_DIM))
    model.train()
    S2utService.greedy(model, features)
    assert model.training
    S2utService.translate(model, features, beam=2)
    assert model.training and model.encoder[0].training
    model.eval()
    S2utService.translate(model, features, beam=2)
    assert not model.training


def test_training_needs_examples(tiny_config):
    with pytest.raises(ConfigError):
        S2utService.train(_model(tiny_config.s2ut), [], tiny_config.s2ut, seed=0)


@pytest.mark.slow
def test_learns_a_copy_task(tiny_config):
    rng = np.random.default_rng(5)
    eye = np.eye(FEATURE_DIM)
    examples = []
    for index in range(64):
        target = [int(u) for u in rng.integers(0, FEATURE_DIM, size=3)]
        features = np.repeat(eye[target], 4, axis=0) + 0.05 * rng.normal(size=(12, FEATURE_DIM))
        examples.append(S2utExample(id=str(index), features=features, target=target, aux=target[:1]))
    config = tiny_config.s2ut.model_copy(update={
        'width': 32, 'heads': 4, 'ffn': 64, 'encoder_layers': 2, 'decoder_layers': 2,
        'steps': 1500, 'eval_every': 500, 'aux_weight': 0.0, 'label_smoothing': 0.0,
        'recipe': tiny_config.s2ut.recipe.model_copy(update={'batch_size': 16, 'warmup_steps': 50,
                                                            'decay_half_life': 2000})
    })
    model = _model(config)
    S2utService.train(model, examples, config, seed=0)
    hyps = [S2utService.translate(model, example.features, beam=2).units for example in examples[:16]]
    assert UnitService.corpus_uer(hyps, [example.target for example in examples[:16]]) < 25.0
