# normunit/services/normalizer_service.py
import logging
from dataclasses import dataclass, field

import numpy as np

from normunit import ctc
from normunit.networks.normalizer_net import NormalizerNet
from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.numcore.optim import Adam, OptimizerState, halving_decay
from normunit.services.unit_service import UnitService
from normunit.utils.errors import ConfigError, TrainingDivergenceError, TrainingError
from normunit.utils.event_publisher import EventPublisher
from normunit.utils.validators import is_finite_number

logger = logging.getLogger(__name__)

IGNORE = -1
DECODE_BATCH = 16


@dataclass
class FinetuneResult:
    best_step: int
    best_uer: float
    used_pairs: int
    skipped_pairs: int
    curve: list = field(default_factory=list)

    def to_dict(self):
        return {
            'best_step': self.best_step,
            'best_uer': self.best_uer,
            'used_pairs': self.used_pairs,
            'skipped_pairs': self.skipped_pairs,
            'curve': self.curve
        }


@dataclass
class PretrainResult:
    steps: int
    dev_accuracy: float
    chance: float
    curve: list = field(default_factory=list)

    def to_dict(self):
        return {'steps': self.steps, 'dev_accuracy': self.dev_accuracy, 'chance': self.chance, 'curve': self.curve}


def pad_features(sequences):
    """Zero-pad (T_i, D) arrays into (B, T_max, D) plus lengths."""
    lengths = [int(sequence.shape[0]) for sequence in sequences]
    dim = sequences[0].shape[1]
    batch = np.zeros((len(sequences), max(max(lengths), 1), dim))
    for row, sequence in enumerate(sequences):
        batch[row, :sequence.shape[0]] = sequence
    return batch, lengths


def span_mask(lengths, max_length, probability, span, rng, at_least_one=False):
    """
    Frame mask built from spans: every valid frame starts a span with ``probability``.

    Returns:
        (B, max_length) bool array, never covering padding
    """
    mask = np.zeros((len(lengths), max_length), dtype=bool)
    for row, length in enumerate(lengths):
        starts = np.flatnonzero(rng.random(length) < probability)
        if at_least_one and starts.size == 0 and length > 0:
            starts = np.array([int(rng.integers(length))])
        for start in starts:
            mask[row, start:min(start + span, length)] = True
    return mask


def _schedule(recipe, warmup=None):
    return OptimizerState(
        peak_lr=recipe.peak_lr,
        warmup_steps=warmup if warmup is not None else recipe.warmup_steps,
        decay_rate=halving_decay(recipe.decay_half_life)
    )


class NormalizerService:
    """Speech normalizer: pretraining proxy, CTC finetuning and decoding."""

    @staticmethod
    def build_model(feature_dim, vocab_size, config, seed):
        return NormalizerNet(feature_dim, vocab_size, config, np.random.default_rng(seed))

    @staticmethod
    def pretrain_proxy(model, features, units, config, seed, dev_features=None, dev_units=None):
        """
        Masked-frame orig-unit prediction over unlabeled speech.

        Args:
            model: NormalizerNet
            features: List of (T, D) arrays
            units: Frame-level orig-units per utterance (length T each)
            config: NormalizerConfig (``pretrain_steps`` 0 skips training)
            seed: Batch and mask seed
            dev_features, dev_units: Held-out data for masked-prediction accuracy

        Raises:
            ConfigError: If the unlabeled corpus is empty
        """
        if not features:
            raise ConfigError("normalizer.pretrain_steps: the unlabeled corpus is empty")
        chance = 1.0 / model.vocab_size
        if config.pretrain_steps == 0:
            logger.info("Pretraining disabled")
            return PretrainResult(steps=0, dev_accuracy=float('nan'), chance=chance)

        rng = np.random.default_rng(seed)
        optimizer = Adam(model.named_parameters(), _schedule(config.recipe))
        model.train()
        curve = []
        for step in range(config.pretrain_steps):
            batch = rng.choice(len(features), size=min(config.recipe.batch_size, len(features)), replace=False)
            inputs, lengths = pad_features([features[i] for i in batch])
            mask = span_mask(lengths, inputs.shape[1], config.mask_probability, config.mask_span, rng,
                             at_least_one=True)
            logits, out_lengths = model.unit_logits(inputs, lengths, mask=mask)
            targets = NormalizerService._masked_targets([units[i] for i in batch], mask, model.downsampling,
                                                        logits.shape[1], out_lengths)
            loss = F.cross_entropy(logits, targets, ignore_index=IGNORE)
            value = loss.item()
            if not is_finite_number(value):
                raise TrainingDivergenceError(f"Pretraining loss became {value} at step {step}")
            T.backward(loss)
            optimizer.step()
            if step % 50 == 0:
                curve.append({'step': step, 'loss': value})

        accuracy = float('nan')
        if dev_features:
            accuracy = NormalizerService.masked_accuracy(model, dev_features, dev_units, config, seed)
            logger.info(f"Pretraining dev masked accuracy {accuracy:.3f} (chance {chance:.3f})")
        return PretrainResult(steps=config.pretrain_steps, dev_accuracy=accuracy, chance=chance, curve=curve)

    @staticmethod
    def _masked_targets(units, mask, stride, out_length, out_lengths):
        targets = np.full((len(units), out_length), IGNORE, dtype=np.int64)
        for row, sequence in enumerate(units):
            for position in range(out_lengths[row]):
                frame = position * stride
                if frame < len(sequence) and mask[row, frame]:
                    targets[row, position] = sequence[frame]
        return targets

    @staticmethod
    def masked_accuracy(model, features, units, config, seed):
        rng = np.random.default_rng(seed + 1)
        correct = total = 0
        with model.evaluating(), T.no_grad():
            for start in range(0, len(features), DECODE_BATCH):
                chunk = features[start:start + DECODE_BATCH]
                inputs, lengths = pad_features(chunk)
                mask = span_mask(lengths, inputs.shape[1], config.mask_probability, config.mask_span, rng,
                                 at_least_one=True)
                logits, out_lengths = model.unit_logits(inputs, lengths, mask=mask)
                targets = NormalizerService._masked_targets(units[start:start + DECODE_BATCH], mask,
                                                            model.downsampling, logits.shape[1], out_lengths)
                chosen = targets != IGNORE
                correct += int((np.argmax(logits.data, axis=-1)[chosen] == targets[chosen]).sum())
                total += int(chosen.sum())
        return correct / total if total else float('nan')

    @staticmethod
    def feasible(model, features, target):
        return ctc.is_feasible(target, model.output_lengths([features.shape[0]])[0])

    @staticmethod
    def finetune(model, pairs, config, seed, dev_pairs=None):
        """
        CTC finetuning against reference-speaker units.

        Transformer blocks stay frozen for the first ``frozen_updates``
        updates. The checkpoint with the lowest dev UER is kept.

        Args:
            model: NormalizerNet
            pairs: List of (features, reduced reference units)
            config: NormalizerConfig
            seed: Batch and mask seed
            dev_pairs: Held-out pairs for checkpoint selection (defaults to ``pairs``)

        Returns:
            FinetuneResult

        Raises:
            TrainingError: If no pair is feasible
            TrainingDivergenceError: On a non-finite loss
        """
        usable = [(features, list(target)) for features, target in pairs
                  if NormalizerService.feasible(model, features, target)]
        skipped = len(pairs) - len(usable)
        if skipped:
            logger.warning(f"Skipped {skipped} infeasible CTC pairs (target longer than the downsampled input)")
        if not usable:
            logger.error("No feasible CTC pairs to finetune on")
            raise TrainingError(f"All {len(pairs)} normalizer training pairs are infeasible")
        dev_pairs = dev_pairs or usable

        rng = np.random.default_rng(seed)
        optimizer = Adam(model.named_parameters(), _schedule(config.recipe, warmup=config.recipe.warmup_steps))
        model.train()
        best_state, best_uer, best_step = model.state_dict(), float('inf'), 0
        curve = []
        if config.frozen_updates > 0:
            model.freeze_blocks()

        for step in range(config.total_updates):
            if step == config.frozen_updates:
                model.unfreeze_blocks()
                logger.info(f"Unfroze transformer blocks at update {step}")
            batch = rng.choice(len(usable), size=min(config.recipe.batch_size, len(usable)), replace=False)
            inputs, lengths = pad_features([usable[i][0] for i in batch])
            mask = None
            if config.mask_probability > 0.0:
                mask = span_mask(lengths, inputs.shape[1], config.mask_probability, config.mask_span, rng)
            log_probs, out_lengths = model.ctc_log_probs(inputs, lengths, mask=mask)
            losses = [
                ctc.ctc_loss_op(log_probs[row, :out_lengths[row]], usable[index][1], blank=model.blank)
                for row, index in enumerate(batch)
            ]
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            loss = loss * (1.0 / len(losses))
            value = loss.item()
            if not is_finite_number(value):
                raise TrainingDivergenceError(f"Normalizer CTC loss became {value} at update {step}")
            T.backward(loss)
            optimizer.step()

            last = step + 1 == config.total_updates
            if (step + 1) % config.eval_every == 0 or last:
                uer = NormalizerService.dev_uer(model, dev_pairs)
                curve.append({'step': step + 1, 'loss': value, 'dev_uer': uer})
                logger.info(f"Normalizer update {step + 1}: loss {value:.4f}, dev UER {uer:.2f}")
                if uer < best_uer:
                    best_state, best_uer, best_step = model.state_dict(), uer, step + 1

        model.unfreeze_blocks()
        model.load_state_dict(best_state)
        EventPublisher.publish('normalizer.checkpoint_selected', {'step': best_step, 'dev_uer': best_uer})
        return FinetuneResult(best_step=best_step, best_uer=best_uer, used_pairs=len(usable),
                              skipped_pairs=skipped, curve=curve)

    @staticmethod
    def dev_uer(model, pairs):
        hyps = NormalizerService.normalize_batch(model, [features for features, _ in pairs])
        return UnitService.corpus_uer(hyps, [target for _, target in pairs])

    @staticmethod
    def normalize(model, features):
        """
        Decode one utterance to norm-units.

        Returns:
            Reduced, blank-free unit sequence (empty for empty input)
        """
        return NormalizerService.normalize_batch(model, [features])[0]

    @staticmethod
    def normalize_batch(model, features_list, batch_size=DECODE_BATCH):
        results = [[] for _ in features_list]
        order = [i for i, features in enumerate(features_list) if np.asarray(features).shape[0] > 0]
        with model.evaluating(), T.no_grad():
            for start in range(0, len(order), batch_size):
                chunk = order[start:start + batch_size]
                inputs, lengths = pad_features([np.asarray(features_list[i]) for i in chunk])
                log_probs, out_lengths = model.ctc_log_probs(inputs, lengths)
                for row, index in enumerate(chunk):
                    results[index] = ctc.best_path_decode(log_probs.data[row, :out_lengths[row]], blank=model.blank)
        return results
