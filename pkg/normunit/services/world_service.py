# normunit/services/world_service.py
import logging
from pathlib import Path

import numpy as np

from normunit.models.codebook import Codebook
from normunit.models.corpus import Utterance, pair_ids
from normunit.models.world import LANGUAGES, LanguageInventory, Lexicon, SpeakerProfile, SyntheticWorld
from normunit.services.unit_service import UnitService
from normunit.utils.errors import ConfigError, UsageError
from normunit.utils.event_publisher import EventPublisher
from normunit.utils.file_formats import MANIFEST_COLUMNS, read_tsv, write_features, write_tsv
from normunit.utils.parallel import parallel_map
from normunit.utils.validators import is_valid_unit_seq

logger = logging.getLogger(__name__)

PROTOTYPE_ATTEMPTS = 200
SENTENCE_ATTEMPTS = 1000
NORM_TIERS = ('10min', '1hr', '10hr')


def _uniform(rng, bounds):
    return float(rng.uniform(bounds.min, bounds.max))


def _onset_count(world_config):
    return max(1, int(round(world_config.inventory_size * world_config.onset_fraction)))


def _word_capacity(onsets, bodies, length):
    """Distinct reduced words of ``length``: an onset then bodies with no adjacent repeats."""
    if length < 1:
        return 0
    if length == 1:
        return onsets
    return onsets * bodies * max(bodies - 1, 0) ** (length - 2)


class Renderer:
    """Renders unit content to feature frames for one language's feature space."""

    def __init__(self, inventory, silence_length=(3, 8)):
        self.inventory = inventory
        self.silence_length = tuple(silence_length)

    def speaker_offset(self, speaker):
        return self.inventory.projection @ np.asarray(speaker.embedding, dtype=np.float64)

    def render(self, content, speaker, codebook, seed, durations=None):
        """
        Render ``content`` as spoken by ``speaker``.

        Per token: apply the accent confusion, draw a duration (or take the
        given one) and emit that many copies of the token's centroid plus
        the speaker offset. Silence runs are inserted before each token and
        at the end at the speaker's silence rate; Gaussian noise is added to
        every frame. Each perturbation draws from its own stream of ``seed``.

        Args:
            content: Token sequence over ``codebook``
            speaker: SpeakerProfile
            codebook: Codebook whose centroids are the token means
            seed: Rendering seed
            durations: Optional per-token frame counts (skips duration sampling)

        Returns:
            (T, D) feature array
        """
        content = [int(token) for token in content]
        if durations is not None and len(durations) != len(content):
            raise UsageError(f"render got {len(durations)} durations for {len(content)} tokens")
        if durations is None and any(token >= len(self.inventory.base_durations) for token in content):
            raise UsageError("render needs explicit durations for tokens outside the prototype inventory")
        if not is_valid_unit_seq(content, codebook.k):
            raise UsageError(f"render content has tokens outside [0, {codebook.k})")

        accent_rng, duration_rng, silence_rng, noise_rng = (
            np.random.default_rng(stream) for stream in np.random.SeedSequence(seed).spawn(4)
        )
        offset = self.speaker_offset(speaker)
        silence = self.inventory.silence_center
        low, high = self.silence_length

        def silence_run():
            if silence_rng.random() < speaker.silence_rate:
                return [silence] * int(silence_rng.integers(low, high + 1))
            return []

        frames = []
        for position, token in enumerate(content):
            frames.extend(silence_run())
            if token in speaker.accent:
                replacement, probability = speaker.accent[token]
                if accent_rng.random() < probability:
                    token = replacement
            if durations is None:
                base = self.inventory.base_durations[token]
                count = max(1, int(round(base * np.exp(speaker.jitter * duration_rng.standard_normal()))))
            else:
                count = int(durations[position])
            frames.extend([codebook.centroids[token]] * count)
        frames.extend(silence_run())

        if not frames:
            return np.zeros((0, codebook.dim))
        features = np.asarray(frames) + offset
        if speaker.noise > 0.0:
            features = features + speaker.noise * noise_rng.standard_normal(features.shape)
        return features


class WordDecoder:
    """
    Lexicon decoding of fitted units.

    Units map to their nearest prototype symbol (or silence); silence is
    dropped, the symbols are reduced and split at word onsets, and every
    segment becomes its exact word or the nearest word by edit distance.
    """

    def __init__(self, inventory, lexicon, language, codebook=None):
        self.inventory = inventory
        self.lexicon = lexicon
        self.language = language
        self.onsets = set(inventory.onset_units)
        self.words = lexicon.words(language)
        if codebook is None:
            self.symbols = np.arange(inventory.size)
        else:
            self.symbols = np.asarray(UnitService.quantize(codebook.centroids, Codebook(inventory.symbol_table())))

    def to_symbols(self, units):
        symbols = [int(self.symbols[unit]) for unit in units]
        symbols = [symbol for symbol in symbols if symbol != self.inventory.silence_symbol]
        return UnitService.reduce(symbols)[0]

    def segments(self, units):
        segments = []
        for symbol in self.to_symbols(units):
            if symbol in self.onsets or not segments:
                segments.append([symbol])
            else:
                segments[-1].append(symbol)
        return segments

    def nearest_word(self, segment):
        exact = self.lexicon.word_id(self.language, segment)
        if exact is not None:
            return exact
        distances = [UnitService.edit_distance(segment, word).distance for word in self.words]
        return int(np.argmin(distances))

    def decode(self, units):
        return [self.nearest_word(segment) for segment in self.segments(units)]


def _render_job(job):
    inventory, speaker, silence_length, content, seed, path = job
    renderer = Renderer(LanguageInventory.from_dict(inventory), silence_length)
    features = renderer.render(content, SpeakerProfile.from_dict(speaker),
                               Codebook(np.asarray(inventory['prototypes'])), seed)
    write_features(path, features)
    return features.shape[0]


class WorldService:
    """Synthetic bilingual world: inventories, lexicon, speakers and corpora."""

    @staticmethod
    def capacity_errors(world_config):
        """
        Check that the lexicon and corpus sizes are generatable.

        Returns:
            List of error strings (empty when feasible)
        """
        errors = []
        onsets = _onset_count(world_config)
        bodies = world_config.inventory_size - onsets
        lengths = range(world_config.word_length.min, world_config.word_length.max + 1)
        words = sum(_word_capacity(onsets, bodies, length) for length in lengths)
        if world_config.word_length.min < 1:
            errors.append("world.word_length: words need at least one unit")
        if world_config.word_length.max > 1 and bodies < 2:
            errors.append(f"world.onset_fraction: leaves {bodies} body units, need at least 2")
        if words < world_config.vocab_size:
            errors.append(
                f"world.vocab_size: inventory of {world_config.inventory_size} units yields only "
                f"{words} distinct words, {world_config.vocab_size} requested"
            )

        sizes = world_config.sizes
        needed = (sizes.train + sizes.mined + sizes.dev + sizes.test + sizes.xspk
                  + len(LANGUAGES) * (sizes.norm_10hr + sizes.norm_dev))
        sentence_lengths = range(world_config.sentence_words.min, world_config.sentence_words.max + 1)
        sentences = sum(world_config.vocab_size ** length for length in sentence_lengths if length > 0)
        if world_config.sentence_words.min < 1:
            errors.append("world.sentence_words: sentences need at least one word")
        if needed > sentences // 2:
            errors.append(
                f"world.sizes: {needed} distinct sentences requested, the lexicon supports "
                f"{sentences} (at most half may be drawn)"
            )
        return errors

    @staticmethod
    def build_inventory(world_config, language, rng):
        """
        Draw a language's prototypes, durations and speaker projection.

        Prototypes are resampled until they are pairwise at least
        ``min_separation`` apart and as far from the silence center (origin).

        Raises:
            ConfigError: If no separated draw is found
        """
        size, dim = world_config.inventory_size, world_config.feature_dim
        silence_center = np.zeros(dim)
        for attempt in range(PROTOTYPE_ATTEMPTS):
            prototypes = rng.normal(0.0, world_config.prototype_scale, size=(size, dim))
            table = np.vstack([prototypes, silence_center[None, :]])
            gaps = np.sqrt(((table[:, None, :] - table[None, :, :]) ** 2).sum(axis=2))
            np.fill_diagonal(gaps, np.inf)
            if gaps.min() >= world_config.min_separation:
                break
        else:
            raise ConfigError(
                f"world.min_separation: no prototype draw for '{language}' reached separation "
                f"{world_config.min_separation} in {PROTOTYPE_ATTEMPTS} attempts"
            )
        onsets = _onset_count(world_config)
        base = world_config.base_duration
        return LanguageInventory(
            language=language,
            prototypes=prototypes,
            silence_center=silence_center,
            base_durations=[int(d) for d in rng.integers(base.min, base.max + 1, size=size)],
            onset_units=list(range(onsets)),
            body_units=list(range(onsets, size)),
            projection=rng.normal(0.0, world_config.speaker_offset_scale,
                                  size=(dim, world_config.speaker_embedding_dim))
        )

    @staticmethod
    def build_speakers(world_config, inventory, rng):
        """One zero-profile reference speaker followed by perturbed speakers."""
        language = inventory.language
        speakers = [SpeakerProfile(
            id=f"{language}-spk0",
            language=language,
            embedding=[0.0] * world_config.speaker_embedding_dim,
            is_reference=True
        )]
        classes = [inventory.onset_units, inventory.body_units]
        for index in range(1, world_config.speakers_per_language):
            fraction = _uniform(rng, world_config.accent_fraction)
            count = int(round(fraction * inventory.size))
            accent = {}
            for unit in sorted(int(u) for u in rng.choice(inventory.size, size=count, replace=False)):
                peers = [peer for peer in next(c for c in classes if unit in c) if peer != unit]
                if not peers:
                    continue
                accent[unit] = (int(rng.choice(peers)), _uniform(rng, world_config.accent_probability))
            speakers.append(SpeakerProfile(
                id=f"{language}-spk{index}",
                language=language,
                embedding=[float(v) for v in rng.standard_normal(world_config.speaker_embedding_dim)],
                accent=accent,
                jitter=_uniform(rng, world_config.duration_jitter),
                silence_rate=_uniform(rng, world_config.silence_rate),
                noise=_uniform(rng, world_config.noise_sigma)
            ))
        for speaker in speakers:
            rate = speaker.confusion_rate(range(inventory.size))
            logger.info(f"Speaker {speaker.id}: {len(speaker.accent)} accented units, expected confusion {rate:.3f}")
        return speakers

    @staticmethod
    def _draw_word(rng, inventory, length):
        word = [int(rng.choice(inventory.onset_units))]
        while len(word) < length:
            choices = [unit for unit in inventory.body_units if unit != word[-1]]
            word.append(int(rng.choice(choices)))
        return word

    @staticmethod
    def build_lexicon(world_config, seed, inventories=None):
        """
        Draw a bilingual lexicon of distinct reduced words and a translation permutation.

        Raises:
            ConfigError: If the inventory cannot give ``vocab_size`` distinct words
        """
        errors = [error for error in WorldService.capacity_errors(world_config)
                  if not error.startswith('world.sizes')]
        if errors:
            raise ConfigError("Lexicon cannot be built", errors=errors)
        rng = np.random.default_rng(seed)
        if inventories is None:
            inventories = {
                language: WorldService.build_inventory(world_config, language, rng) for language in LANGUAGES
            }

        vocab = {}
        for language in LANGUAGES:
            words, seen = [], set()
            while len(words) < world_config.vocab_size:
                length = int(rng.integers(world_config.word_length.min, world_config.word_length.max + 1))
                word = WorldService._draw_word(rng, inventories[language], length)
                if tuple(word) not in seen:
                    seen.add(tuple(word))
                    words.append(word)
            vocab[language] = words
        translation = [int(i) for i in rng.permutation(world_config.vocab_size)]
        return Lexicon(src_words=vocab['src'], tgt_words=vocab['tgt'], translation=translation, seed=seed)

    @staticmethod
    def generate_world(world_config):
        """Build the complete world (inventories, lexicon, speakers) from ``world_config.seed``."""
        inventory_seq, lexicon_seq, speaker_seq = np.random.SeedSequence(world_config.seed).spawn(3)
        inventory_rng = np.random.default_rng(inventory_seq)
        inventories = {
            language: WorldService.build_inventory(world_config, language, inventory_rng)
            for language in LANGUAGES
        }
        lexicon = WorldService.build_lexicon(
            world_config, int(lexicon_seq.generate_state(1)[0]), inventories=inventories
        )
        speaker_rng = np.random.default_rng(speaker_seq)
        speakers = []
        for language in LANGUAGES:
            speakers.extend(WorldService.build_speakers(world_config, inventories[language], speaker_rng))
        silence = world_config.silence_length
        return SyntheticWorld(lexicon=lexicon, inventories=inventories, speakers=speakers,
                              silence_length=(silence.min, silence.max))

    @staticmethod
    def renderer(world, language):
        return Renderer(world.inventories[language], world.silence_length)

    @staticmethod
    def word_decoder(world, language, codebook=None):
        return WordDecoder(world.inventories[language], world.lexicon, language, codebook)

    @staticmethod
    def decode_words(world, language, units, codebook=None):
        """Word ids of ``units``; ``codebook`` maps fitted units onto prototype symbols when given."""
        return WorldService.word_decoder(world, language, codebook).decode(units)

    @staticmethod
    def reference_words(world, language, content):
        return WorldService.decode_words(world, language, content)

    @staticmethod
    def make_corpora(world, world_config, seed):
        """
        Lay out every split as unrendered utterances.

        Splits: nested normalizer tiers and a normalizer dev set per
        language, supervised train/dev/test pairs, scored mined pairs and
        same-content target speaker pairs for cross-speaker analysis.
        Every sentence is distinct across the corpus.

        Raises:
            ConfigError: If the sizes exceed the generatable sentences

        Returns:
            List of Utterance in manifest order
        """
        errors = WorldService.capacity_errors(world_config)
        if errors:
            raise ConfigError("Requested corpus sizes are not generatable", errors=errors)

        rng = np.random.default_rng(seed)
        sizes, mined = world_config.sizes, world_config.mined
        lexicon = world.lexicon
        seen = set()

        def sentence(unique=True):
            for _ in range(SENTENCE_ATTEMPTS):
                length = int(rng.integers(world_config.sentence_words.min, world_config.sentence_words.max + 1))
                words = tuple(int(w) for w in rng.integers(0, lexicon.vocab_size, size=length))
                if not unique:
                    return list(words)
                if words not in seen:
                    seen.add(words)
                    return list(words)
            raise ConfigError("Could not draw a fresh sentence; increase world.vocab_size or shrink world.sizes")

        def speaker(language, exclude=()):
            candidates = [s.id for s in world.speakers_of(language) if s.id not in exclude]
            return str(rng.choice(candidates))

        def utterance(utterance_id, split, language, words, speaker_id, provenance='supervised', score=None):
            return Utterance(
                id=utterance_id, split=split, language=language, speaker=speaker_id,
                content=lexicon.content(language, words), provenance=provenance, score=score,
                seed=int(rng.integers(2 ** 31))
            )

        utterances = []
        for language in LANGUAGES:
            bounds = {'10min': sizes.norm_10min, '1hr': sizes.norm_1hr, '10hr': sizes.norm_10hr}
            for index in range(sizes.norm_10hr):
                tier = next(name for name in NORM_TIERS if index < bounds[name])
                utterances.append(utterance(f"norm-{language}-{index:05d}", f"norm-{tier}", language,
                                            sentence(), speaker(language), provenance='normalizer'))
            for index in range(sizes.norm_dev):
                utterances.append(utterance(f"normdev-{language}-{index:05d}", 'norm-dev', language,
                                            sentence(), speaker(language), provenance='normalizer'))

        for split in ('train', 'dev', 'test'):
            for index in range(getattr(sizes, split)):
                words = sentence()
                source_id, target_id = pair_ids(f"{split}-{index:05d}")
                utterances.append(utterance(source_id, split, 'src', words, speaker('src')))
                utterances.append(utterance(target_id, split, 'tgt', lexicon.translate_sentence(words),
                                            speaker('tgt')))

        misaligned_count = 0
        for index in range(sizes.mined):
            words = sentence()
            misaligned = bool(rng.random() < mined.misalignment_rate)
            target_words = lexicon.translate_sentence(sentence(unique=False) if misaligned else words)
            if misaligned and target_words == lexicon.translate_sentence(words):
                misaligned = False
            misaligned_count += int(misaligned)
            score = mined.score_base - mined.score_penalty * misaligned + mined.score_noise * rng.standard_normal()
            score = float(np.clip(score, mined.score_range.min, mined.score_range.max))
            source_id, target_id = pair_ids(f"mined-{index:05d}")
            utterances.append(utterance(source_id, 'mined', 'src', words, speaker('src'), 'mined', score))
            utterances.append(utterance(target_id, 'mined', 'tgt', target_words, speaker('tgt'), 'mined', score))

        reference = world.reference_speaker('tgt').id
        for index in range(sizes.xspk):
            words = sentence()
            first = speaker('tgt', exclude=(reference,))
            second = speaker('tgt', exclude=(reference, first))
            for suffix, speaker_id in (('a', first), ('b', second)):
                utterances.append(utterance(f"xspk-{index:05d}-{suffix}", 'xspk', 'tgt', words,
                                            speaker_id, provenance='xspk'))

        logger.info(f"Laid out {len(utterances)} utterances, {misaligned_count} misaligned mined pairs")
        return utterances

    @staticmethod
    def render_corpus(world, utterances, root, workers=1):
        """Render every utterance to ``<root>/features/<id>.nuft``; sets ``features`` to the relative path."""
        root = Path(root)
        jobs = []
        inventories = {language: inventory.to_dict() for language, inventory in world.inventories.items()}
        speakers = {speaker.id: speaker.to_dict() for speaker in world.speakers}
        for utterance in utterances:
            utterance.features = f"features/{utterance.id}.nuft"
            jobs.append((inventories[utterance.language], speakers[utterance.speaker], world.silence_length,
                         utterance.content, utterance.seed, str(root / utterance.features)))
        frames = parallel_map(_render_job, jobs, workers)
        logger.info(f"Rendered {len(jobs)} utterances, {sum(frames)} frames")
        EventPublisher.publish('world.generated', {'utterances': len(jobs), 'frames': int(sum(frames))})
        return utterances

    @staticmethod
    def write_manifest(path, utterances):
        write_tsv(path, MANIFEST_COLUMNS, [utterance.to_row() for utterance in utterances], exact_columns=('score',))

    @staticmethod
    def read_manifest(path):
        return [Utterance.from_row(row) for row in read_tsv(path)]

    @staticmethod
    def select(utterances, splits=None, language=None):
        splits = set(splits) if splits is not None else None
        return [
            utterance for utterance in utterances
            if (splits is None or utterance.split in splits) and (language is None or utterance.language == language)
        ]
