# normunit/services/duration_service.py
import logging
from dataclasses import dataclass, field

import numpy as np

from normunit.networks.duration_net import DurationNet
from normunit.numcore import tensor as T
from normunit.numcore.optim import Adam, OptimizerState, halving_decay
from normunit.services.unit_service import UnitService
from normunit.utils.errors import DataError, TrainingDivergenceError, UsageError
from normunit.utils.validators import is_finite_number

logger = logging.getLogger(__name__)

PREDICT_BATCH = 64
MAX_DURATION = 50
MIN_AUDIBLE_FRAMES = 2


@dataclass
class DurationResult:
    steps: int
    weight: float
    dev_loss: float
    curve: list = field(default_factory=list)

    def to_dict(self):
        return {'steps': self.steps, 'weight': self.weight, 'dev_loss': self.dev_loss, 'curve': self.curve}


def _check_durations(data):
    for reduced, durations in data:
        if len(reduced) != len(durations):
            raise DataError(f"Duration datum has {len(reduced)} units and {len(durations)} durations")
        if any(int(duration) <= 0 for duration in durations):
            raise DataError("Duration datum contains a non-positive duration; log duration is undefined")


def _pad(data):
    width = max(max(len(reduced) for reduced, _ in data), 1)
    units = np.zeros((len(data), width), dtype=np.int64)
    targets = np.zeros((len(data), width))
    valid = np.zeros((len(data), width))
    for row, (reduced, durations) in enumerate(data):
        units[row, :len(reduced)] = reduced
        targets[row, :len(durations)] = np.log(np.asarray(durations, dtype=np.float64))
        valid[row, :len(reduced)] = 1.0
    return units, targets, valid


class DurationService:
    """Log-domain duration prediction for reduced unit sequences and the resynthesis proxy."""

    @staticmethod
    def build_model(vocab_size, config, seed):
        return DurationNet(vocab_size, config, np.random.default_rng(seed))

    @staticmethod
    def log_mse(predicted, target, weight=1.0):
        """Weighted mean squared error between log durations (plain arrays)."""
        predicted = np.asarray(predicted, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if np.any(target <= 0) or np.any(predicted <= 0):
            raise DataError("log_mse needs positive durations")
        return float(weight * np.mean((np.log(predicted) - np.log(target)) ** 2))

    @staticmethod
    def _loss(model, data, weight):
        units, targets, valid = _pad(data)
        predicted = model(units)
        error = (predicted - targets) * valid
        return (error * error).sum() * (weight / max(valid.sum(), 1.0))

    @staticmethod
    def train_duration(model, data, config, seed, dev_data=None):
        """
        Fit log durations with weighted MSE.

        Args:
            model: DurationNet
            data: List of (reduced units, durations)
            config: DurationConfig (``weight`` scales the loss)
            seed: Batch seed
            dev_data: Held-out pairs for the reported dev loss

        Raises:
            DataError: On a zero (or negative) duration
        """
        _check_durations(data)
        if dev_data:
            _check_durations(dev_data)
        data = [(reduced, durations) for reduced, durations in data if reduced]
        if not data:
            raise DataError("No non-empty duration data to train on")

        rng = np.random.default_rng(seed)
        recipe = config.recipe
        optimizer = Adam(model.named_parameters(), OptimizerState(
            peak_lr=recipe.peak_lr, warmup_steps=recipe.warmup_steps,
            decay_rate=halving_decay(recipe.decay_half_life)
        ))
        model.train()
        curve = []
        for step in range(config.steps):
            batch = rng.choice(len(data), size=min(recipe.batch_size, len(data)), replace=False)
            loss = DurationService._loss(model, [data[i] for i in batch], config.weight)
            value = loss.item()
            if not is_finite_number(value):
                raise TrainingDivergenceError(f"Duration loss became {value} at step {step}")
            T.backward(loss)
            optimizer.step()
            if step % 100 == 0 or step + 1 == config.steps:
                curve.append({'step': step + 1, 'loss': value})

        model.eval()
        dev_loss = DurationService.evaluate(model, dev_data or data, config.weight)
        logger.info(f"Duration model trained for {config.steps} steps, dev loss {dev_loss:.4f}")
        return DurationResult(steps=config.steps, weight=config.weight, dev_loss=dev_loss, curve=curve)

    @staticmethod
    def evaluate(model, data, weight=1.0):
        data = [(reduced, durations) for reduced, durations in data if reduced]
        if not data:
            return 0.0
        with model.evaluating(), T.no_grad():
            total = count = 0.0
            for start in range(0, len(data), PREDICT_BATCH):
                chunk = data[start:start + PREDICT_BATCH]
                units, targets, valid = _pad(chunk)
                error = (model(units).data - targets) * valid
                total += float((error * error).sum())
                count += float(valid.sum())
        return weight * total / count

    @staticmethod
    def predict_durations(model, reduced):
        """
        Durations ``round(exp(x))`` of the predicted log durations, clamped to [1, MAX_DURATION].

        The expanded length of ``reduced`` therefore stays within
        ``[len(reduced), MAX_DURATION * len(reduced)]``.
        """
        if len(reduced) == 0:
            return []
        with model.evaluating(), T.no_grad():
            log_durations = model(np.asarray([reduced], dtype=np.int64)).data[0]
        log_durations = np.clip(np.nan_to_num(log_durations, nan=0.0), 0.0, np.log(MAX_DURATION))
        durations = np.clip(np.rint(np.exp(log_durations)), 1, MAX_DURATION)
        return [int(duration) for duration in durations]

    @staticmethod
    def predict_and_expand(model, reduced):
        return UnitService.expand(reduced, DurationService.predict_durations(model, reduced))

    @staticmethod
    def resynthesis_proxy_wer(units, content, renderer, codebook, speaker, level='unit', decoder=None,
                              min_frames=MIN_AUDIBLE_FRAMES):
        """
        Render ``units`` with the reference speaker, recognize them back and score against ``content``.

        ``units`` is a frame-level sequence: each run renders for as many
        frames as it lasts. Recognition quantizes the rendered frames and
        drops runs shorter than ``min_frames`` before reducing, so units
        given too short a duration are lost.

        Args:
            units: Frame-level unit sequence (typically reduced units expanded by durations)
            content: Reference reduced units in the same codebook
            renderer: Renderer of the target language
            codebook: Codebook the units index
            speaker: The reference SpeakerProfile
            level: 'unit' scores UER; 'word' decodes both sides with ``decoder`` and scores WER
            min_frames: Shortest run the recognizer keeps

        Returns:
            Percentage error

        Raises:
            UsageError: If ``speaker`` is not the reference speaker or the level is unknown
        """
        if not speaker.is_reference:
            raise UsageError(f"resynthesis_proxy_wer renders with the reference speaker, got '{speaker.id}'")
        reduced, durations = UnitService.reduce([int(unit) for unit in units])
        features = renderer.render(reduced, speaker, codebook, seed=0, durations=durations)
        heard, runs = UnitService.reduce(UnitService.quantize(features, codebook))
        recovered = UnitService.reduce([unit for unit, run in zip(heard, runs) if run >= min_frames])[0]
        if level == 'unit':
            return UnitService.uer(recovered, content)
        if level == 'word':
            if decoder is None:
                raise UsageError("Word-level proxy needs a word decoder")
            return UnitService.uer(decoder.decode(recovered), decoder.decode(content))
        raise UsageError(f"Unknown proxy level '{level}'; expected 'unit' or 'word'")
