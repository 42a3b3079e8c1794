# normunit/models/world.py
from dataclasses import dataclass, field

import numpy as np

from normunit.models.codebook import Codebook

LANGUAGES = ('src', 'tgt')


@dataclass
class Lexicon:
    """
    Toy bilingual lexicon.

    Words are reduced sequences over each language's prototype inventory.
    ``translation[i]`` is the target word for source word ``i``; sentences
    are translated word by word and then adjacent word pairs are swapped.
    """

    src_words: list
    tgt_words: list
    translation: list
    seed: int

    def __post_init__(self):
        self.inverse = [0] * len(self.translation)
        for source, target in enumerate(self.translation):
            self.inverse[target] = source
        self._index = {
            'src': {tuple(word): i for i, word in enumerate(self.src_words)},
            'tgt': {tuple(word): i for i, word in enumerate(self.tgt_words)}
        }

    @property
    def vocab_size(self):
        return len(self.src_words)

    def words(self, language):
        return self.src_words if language == 'src' else self.tgt_words

    def word_id(self, language, units):
        return self._index[language].get(tuple(units))

    @staticmethod
    def _swap_pairs(items):
        items = list(items)
        for i in range(0, len(items) - 1, 2):
            items[i], items[i + 1] = items[i + 1], items[i]
        return items

    def translate_sentence(self, word_ids):
        return self._swap_pairs(self.translation[w] for w in word_ids)

    def inverse_translate_sentence(self, word_ids):
        return [self.inverse[w] for w in self._swap_pairs(word_ids)]

    def content(self, language, word_ids):
        """Concatenate word unit sequences into sentence content."""
        words = self.words(language)
        units = []
        for word_id in word_ids:
            units.extend(words[word_id])
        return units

    def to_dict(self):
        return {
            'src_words': self.src_words,
            'tgt_words': self.tgt_words,
            'translation': self.translation,
            'seed': self.seed
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            src_words=[list(word) for word in data['src_words']],
            tgt_words=[list(word) for word in data['tgt_words']],
            translation=list(data['translation']),
            seed=data['seed']
        )


@dataclass
class SpeakerProfile:
    """
    One speaker's rendering perturbations.

    ``accent`` maps a prototype unit to ``(replacement, probability)``.
    The reference speaker has an all-zero profile.
    """

    id: str
    language: str
    embedding: list
    accent: dict = field(default_factory=dict)
    jitter: float = 0.0
    silence_rate: float = 0.0
    noise: float = 0.0
    is_reference: bool = False

    def confusion_rate(self, content):
        """Expected fraction of ``content`` tokens the accent map replaces."""
        if not content:
            return 0.0
        return float(np.mean([self.accent[unit][1] if unit in self.accent else 0.0 for unit in content]))

    def to_dict(self):
        return {
            'id': self.id,
            'language': self.language,
            'embedding': list(self.embedding),
            'accent': {str(unit): [replacement, probability]
                       for unit, (replacement, probability) in sorted(self.accent.items())},
            'jitter': self.jitter,
            'silence_rate': self.silence_rate,
            'noise': self.noise,
            'is_reference': self.is_reference
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            id=data['id'],
            language=data['language'],
            embedding=list(data['embedding']),
            accent={int(unit): (int(pair[0]), float(pair[1])) for unit, pair in data['accent'].items()},
            jitter=data['jitter'],
            silence_rate=data['silence_rate'],
            noise=data['noise'],
            is_reference=data['is_reference']
        )


@dataclass
class LanguageInventory:
    """Prototype feature space of one language."""

    language: str
    prototypes: np.ndarray
    silence_center: np.ndarray
    base_durations: list
    onset_units: list
    body_units: list
    projection: np.ndarray

    @property
    def size(self):
        return self.prototypes.shape[0]

    @property
    def silence_symbol(self):
        """Symbol id of silence in the prototype-plus-silence table."""
        return self.size

    def codebook(self):
        return Codebook(self.prototypes)

    def symbol_table(self):
        """Prototypes followed by the silence center."""
        return np.vstack([self.prototypes, self.silence_center[None, :]])

    def to_dict(self):
        return {
            'language': self.language,
            'prototypes': self.prototypes.tolist(),
            'silence_center': self.silence_center.tolist(),
            'base_durations': list(self.base_durations),
            'onset_units': list(self.onset_units),
            'body_units': list(self.body_units),
            'projection': self.projection.tolist()
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            language=data['language'],
            prototypes=np.asarray(data['prototypes'], dtype=np.float64),
            silence_center=np.asarray(data['silence_center'], dtype=np.float64),
            base_durations=list(data['base_durations']),
            onset_units=list(data['onset_units']),
            body_units=list(data['body_units']),
            projection=np.asarray(data['projection'], dtype=np.float64)
        )


@dataclass
class SyntheticWorld:
    lexicon: Lexicon
    inventories: dict
    speakers: list
    silence_length: tuple = (3, 8)

    def speaker(self, speaker_id):
        for speaker in self.speakers:
            if speaker.id == speaker_id:
                return speaker
        raise KeyError(speaker_id)

    def speakers_of(self, language):
        return [speaker for speaker in self.speakers if speaker.language == language]

    def reference_speaker(self, language):
        return next(s for s in self.speakers_of(language) if s.is_reference)

    def to_dict(self):
        return {
            'lexicon': self.lexicon.to_dict(),
            'inventories': {language: inventory.to_dict() for language, inventory in self.inventories.items()},
            'speakers': [speaker.to_dict() for speaker in self.speakers],
            'silence_length': list(self.silence_length)
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            lexicon=Lexicon.from_dict(data['lexicon']),
            inventories={language: LanguageInventory.from_dict(inventory)
                         for language, inventory in data['inventories'].items()},
            speakers=[SpeakerProfile.from_dict(speaker) for speaker in data['speakers']],
            silence_length=tuple(data['silence_length'])
        )
