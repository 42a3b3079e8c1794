# normunit/services/s2ut_service.py
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from normunit.networks.s2ut_net import S2utNet, special_symbols
from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.numcore.optim import Adam, OptimizerState, halving_decay
from normunit.services.normalizer_service import pad_features
from normunit.utils.errors import ConfigError, TrainingDivergenceError, UsageError
from normunit.utils.event_publisher import EventPublisher
from normunit.utils.validators import is_finite_number

logger = logging.getLogger(__name__)

LENGTH_FACTOR = 4


@dataclass
class S2utExample:
    """Source features with target units, auxiliary source units and speaker vector."""

    id: str
    features: np.ndarray
    target: list
    aux: list = field(default_factory=list)
    speaker: Optional[np.ndarray] = None
    words: list = field(default_factory=list)


@dataclass
class Translation:
    units: list
    truncated: bool = False
    score: float = 0.0

    def to_dict(self):
        return {'units': self.units, 'truncated': self.truncated, 'score': self.score}


@dataclass
class TrainResult:
    best_step: int
    best_bleu: float
    aux_weight: float
    curve: list = field(default_factory=list)

    def to_dict(self):
        return {
            'best_step': self.best_step,
            'best_bleu': self.best_bleu,
            'aux_weight': self.aux_weight,
            'curve': self.curve
        }


def _pad_tokens(sequences, bos, eos, pad):
    """Teacher-forcing inputs ``[BOS] + y`` and outputs ``y + [EOS]``, padded with PAD."""
    width = max(len(sequence) for sequence in sequences) + 1
    inputs = np.full((len(sequences), width), pad, dtype=np.int64)
    outputs = np.full((len(sequences), width), pad, dtype=np.int64)
    for row, sequence in enumerate(sequences):
        inputs[row, :len(sequence) + 1] = [bos] + list(sequence)
        outputs[row, :len(sequence) + 1] = list(sequence) + [eos]
    return inputs, outputs, [len(sequence) + 1 for sequence in sequences]


class S2utService:
    """Speech-to-unit translation: training with the auxiliary task, greedy and beam decoding."""

    @staticmethod
    def build_model(feature_dim, src_k, tgt_k, config, seed, speaker_dim=0):
        if config.speaker_fusion and speaker_dim <= 0:
            raise ConfigError("s2ut.speaker_fusion: needs a positive speaker vector width")
        return S2utNet(feature_dim, src_k, tgt_k, config, np.random.default_rng(seed), speaker_dim=speaker_dim)

    @staticmethod
    def fuse_speaker_embedding(model, encoder_out, speakers):
        """Per-frame concat of speaker vectors followed by the projection back to encoder width."""
        if model.fusion is None:
            raise ConfigError("s2ut.speaker_fusion: the model was built without speaker fusion")
        return model.fusion(encoder_out, speakers)

    @staticmethod
    def _speakers(model, examples, mean_speaker=None):
        if model.fusion is None:
            return None
        if mean_speaker is not None:
            return np.tile(np.asarray(mean_speaker, dtype=np.float64), (len(examples), 1))
        if any(example.speaker is None for example in examples):
            raise ConfigError("s2ut.speaker_fusion: an example has no speaker vector")
        return np.stack([np.asarray(example.speaker, dtype=np.float64) for example in examples])

    @staticmethod
    def loss(model, examples, config):
        """
        Label-smoothed cross-entropy of the unit decoder plus the weighted auxiliary term.

        Returns:
            Tuple of (total loss tensor, primary value, auxiliary value)
        """
        bos, eos, pad = special_symbols(model.tgt_k)
        inputs, lengths = pad_features([example.features for example in examples])
        with_aux = config.aux_weight > 0.0
        memory, aux_memory, memory_mask = model.encode(
            inputs, lengths, speakers=S2utService._speakers(model, examples), with_aux=with_aux
        )
        tokens_in, tokens_out, token_lengths = _pad_tokens([example.target for example in examples], bos, eos, pad)
        logits = model.decode(tokens_in, memory, memory_mask, token_lengths)
        primary = F.cross_entropy(logits, tokens_out, smoothing=config.label_smoothing, ignore_index=pad)
        if not with_aux:
            return primary, primary.item(), 0.0

        aux_bos, aux_eos, aux_pad = special_symbols(model.src_k)
        aux_in, aux_out, aux_lengths = _pad_tokens([example.aux for example in examples], aux_bos, aux_eos, aux_pad)
        aux_logits = model.aux_decode(aux_in, aux_memory, memory_mask, aux_lengths)
        auxiliary = F.cross_entropy(aux_logits, aux_out, smoothing=config.label_smoothing, ignore_index=aux_pad)
        return primary + auxiliary * config.aux_weight, primary.item(), auxiliary.item()

    @staticmethod
    def train(model, examples, config, seed, dev_examples=None, scorer=None, mean_speaker=None):
        """
        Teacher-forced training; keeps the checkpoint with the best dev score.

        Args:
            model: S2utNet
            examples: Training S2utExamples
            config: S2utConfig
            seed: Batch seed
            dev_examples: Held-out examples for checkpoint selection
            scorer: Callable(hyp unit lists, dev examples) -> dev BLEU
            mean_speaker: Speaker vector used at inference when fusion is on

        Returns:
            TrainResult with the loss and dev-BLEU curve
        """
        if not examples:
            raise ConfigError("s2ut: no training examples")
        rng = np.random.default_rng(seed)
        recipe = config.recipe
        optimizer = Adam(model.named_parameters(), OptimizerState(
            peak_lr=recipe.peak_lr, warmup_steps=recipe.warmup_steps,
            decay_rate=halving_decay(recipe.decay_half_life)
        ))
        dev_examples = (dev_examples or [])[:config.dev_limit]
        best_state, best_bleu, best_step = model.state_dict(), -1.0, 0
        curve = []
        model.train()
        for step in range(config.steps):
            batch = rng.choice(len(examples), size=min(recipe.batch_size, len(examples)), replace=False)
            loss, primary, auxiliary = S2utService.loss(model, [examples[i] for i in batch], config)
            value = loss.item()
            if not is_finite_number(value):
                raise TrainingDivergenceError(f"S2UT loss became {value} at step {step}")
            T.backward(loss)
            optimizer.step()

            last = step + 1 == config.steps
            if (step + 1) % config.eval_every == 0 or last:
                point = {'step': step + 1, 'loss': value, 'primary': primary, 'aux': auxiliary}
                if dev_examples and scorer is not None:
                    hyps = [S2utService.translate(model, example.features, 1, mean_speaker).units
                            for example in dev_examples]
                    point['dev_bleu'] = scorer(hyps, dev_examples)
                    if point['dev_bleu'] > best_bleu:
                        best_state, best_bleu, best_step = model.state_dict(), point['dev_bleu'], step + 1
                else:
                    best_state, best_step = model.state_dict(), step + 1
                curve.append(point)
                logger.info(f"S2UT step {step + 1}: loss {value:.4f} (aux {auxiliary:.4f}), "
                            f"dev BLEU {point.get('dev_bleu', float('nan')):.2f}")

        model.load_state_dict(best_state)
        model.eval()
        EventPublisher.publish('s2ut.checkpoint_selected', {'step': best_step, 'dev_bleu': best_bleu})
        return TrainResult(best_step=best_step, best_bleu=best_bleu, aux_weight=config.aux_weight, curve=curve)

    @staticmethod
    def _encode_one(model, features, speaker):
        speakers = None
        if model.fusion is not None:
            if speaker is None:
                raise ConfigError("s2ut.speaker_fusion: translation needs a speaker vector")
            speakers = np.asarray(speaker, dtype=np.float64)[None, :]
        memory, _, memory_mask = model.encode(features[None, :, :], [features.shape[0]], speakers=speakers,
                                              with_aux=False)
        return memory, memory_mask

    @staticmethod
    def _next_log_probs(model, prefixes, memory, memory_mask):
        count = len(prefixes)
        tiled = T.Tensor(np.repeat(memory.data, count, axis=0))
        logits = model.decode(np.asarray(prefixes, dtype=np.int64), tiled, np.repeat(memory_mask, count, axis=0))
        log_probs = T.log_softmax(logits, axis=-1).data[:, -1, :].copy()
        bos, _, pad = special_symbols(model.tgt_k)
        log_probs[:, bos] = -np.inf
        log_probs[:, pad] = -np.inf
        return log_probs

    @staticmethod
    def greedy(model, features, speaker=None, max_length=None):
        """Argmax rollout until EOS or the length cap."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] == 0:
            return Translation(units=[])
        bos, eos, _ = special_symbols(model.tgt_k)
        with model.evaluating(), T.no_grad():
            memory, memory_mask = S2utService._encode_one(model, features, speaker)
            cap = max_length or LENGTH_FACTOR * memory.shape[1]
            prefix, score = [bos], 0.0
            while len(prefix) - 1 < cap:
                log_probs = S2utService._next_log_probs(model, [prefix], memory, memory_mask)[0]
                token = int(np.argmax(log_probs))
                score += float(log_probs[token])
                if token == eos:
                    return Translation(units=prefix[1:], truncated=False, score=score)
                prefix.append(token)
        return Translation(units=prefix[1:], truncated=True, score=score)

    @staticmethod
    def translate(model, features, beam=5, speaker=None, max_length=None):
        """
        Beam search over target units.

        Candidates are ranked by cumulative log-probability with ties going
        to the earlier hypothesis and lower unit id, so ``beam == 1``
        reproduces ``greedy`` exactly.

        Raises:
            UsageError: If ``beam < 1``
        """
        if beam < 1:
            raise UsageError(f"beam must be >= 1, got {beam}")
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] == 0:
            return Translation(units=[])
        bos, eos, _ = special_symbols(model.tgt_k)
        finished = []
        with model.evaluating(), T.no_grad():
            memory, memory_mask = S2utService._encode_one(model, features, speaker)
            cap = max_length or LENGTH_FACTOR * memory.shape[1]
            alive = [([bos], 0.0)]
            while alive and len(finished) < beam and len(alive[0][0]) - 1 < cap:
                log_probs = S2utService._next_log_probs(model, [prefix for prefix, _ in alive], memory, memory_mask)
                totals = np.asarray([score for _, score in alive])[:, None] + log_probs
                # A lone hypothesis is ranked on its step scores, exactly like the argmax rollout.
                ranking = log_probs if len(alive) == 1 else totals
                order = np.argsort(-ranking.reshape(-1), kind='stable')
                vocab = totals.shape[1]
                survivors = []
                for flat in order[:beam - len(finished)]:
                    row, token = divmod(int(flat), vocab)
                    if not np.isfinite(totals[row, token]):
                        break
                    prefix, _ = alive[row]
                    if token == eos:
                        finished.append((prefix, float(totals[row, token])))
                    else:
                        survivors.append((prefix + [token], float(totals[row, token])))
                alive = survivors

        if finished:
            prefix, score = max(finished, key=lambda item: item[1])
            return Translation(units=prefix[1:], truncated=False, score=score)
        prefix, score = max(alive, key=lambda item: item[1])
        return Translation(units=prefix[1:], truncated=True, score=score)
