# normunit/models/corpus.py
from dataclasses import dataclass
from typing import Optional

from normunit.utils.errors import CorpusError

PROVENANCES = ('supervised', 'mined', 'normalizer', 'xspk')


@dataclass
class Utterance:
    """
    One rendered utterance.

    ``content`` is the reference reduced sequence over the language's
    prototype inventory; ``features`` is the path of the rendered feature file.
    """

    id: str
    split: str
    language: str
    speaker: str
    content: list
    features: str = ''
    provenance: str = 'supervised'
    score: Optional[float] = None
    seed: int = 0

    def to_row(self):
        return {
            'id': self.id,
            'split': self.split,
            'language': self.language,
            'speaker': self.speaker,
            'features': self.features,
            'units': self.content,
            'provenance': self.provenance,
            'score': self.score
        }

    @classmethod
    def from_row(cls, row):
        """
        Raises:
            CorpusError: If the row names an unknown provenance
        """
        if row['provenance'] not in PROVENANCES:
            raise CorpusError(f"Utterance '{row['id']}' has unknown provenance '{row['provenance']}'")
        score = row.get('score') or ''
        return cls(
            id=row['id'],
            split=row['split'],
            language=row['language'],
            speaker=row['speaker'],
            content=[int(token) for token in row['units'].split()],
            features=row['features'],
            provenance=row['provenance'],
            score=float(score) if score else None
        )


@dataclass
class ParallelPair:
    """Source and target utterance with provenance and (mined only) a similarity score."""

    id: str
    source: Utterance
    target: Utterance
    provenance: str = 'supervised'
    score: Optional[float] = None

    def to_dict(self):
        return {
            'id': self.id,
            'source': self.source.id,
            'target': self.target.id,
            'provenance': self.provenance,
            'score': self.score
        }


def pair_ids(pair_id):
    return f"{pair_id}-src", f"{pair_id}-tgt"


def pairs_from_utterances(utterances):
    """Rebuild pairs from ``<pair>-src`` / ``<pair>-tgt`` utterance ids, in manifest order."""
    by_id = {utterance.id: utterance for utterance in utterances}
    pairs = []
    for utterance in utterances:
        if not utterance.id.endswith('-src'):
            continue
        pair_id = utterance.id[:-len('-src')]
        target = by_id.get(f"{pair_id}-tgt")
        if target is None:
            continue
        pairs.append(ParallelPair(
            id=pair_id,
            source=utterance,
            target=target,
            provenance=utterance.provenance,
            score=utterance.score
        ))
    return pairs
