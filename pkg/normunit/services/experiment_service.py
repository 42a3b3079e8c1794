# normunit/services/experiment_service.py
"""
Stage orchestration over the artifact store.

Each stage resolves its directory from its own config block plus the
fingerprints of its upstream stages, so any artifact can be located
without running what produced it. Subcommands run one stage and require
their upstream artifacts; the table reproductions build missing upstream
stages on the way.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np

from normunit.models.codebook import Codebook
from normunit.models.corpus import pairs_from_utterances
from normunit.models.experiment import NormalizerConfig
from normunit.models.report import REPORT_COLUMNS, EvalReport, EvalRow, RunMetadata
from normunit.models.world import LANGUAGES, LanguageInventory, SpeakerProfile, SyntheticWorld
from normunit.numcore import checkpoint
from normunit.services.duration_service import DurationService
from normunit.services.evaluation_service import EvaluationService
from normunit.services.normalizer_service import NormalizerService
from normunit.services.s2ut_service import S2utExample, S2utService
from normunit.services.unit_service import UnitService
from normunit.services.world_service import Renderer, WorldService
from normunit.utils.errors import ConfigError
from normunit.utils.event_publisher import EventPublisher
from normunit.utils.file_formats import (read_codebook, read_features, read_json, read_unit_table, write_codebook,
                                         write_json, write_tsv, write_unit_table)
from normunit.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

NORMALIZE_CHUNK = 64
PAIR_SPLITS = ('train', 'dev', 'test', 'mined')

TABLE2_SYSTEMS = [
    ('orig', {'s2ut': {'target': 'orig', 'speaker_fusion': False}}),
    ('orig+spk', {'s2ut': {'target': 'orig', 'speaker_fusion': True}}),
    ('norm-10min', {'s2ut': {'target': 'norm', 'speaker_fusion': False}, 'normalizer': {'tier': '10min'}}),
    ('norm-1hr', {'s2ut': {'target': 'norm', 'speaker_fusion': False}, 'normalizer': {'tier': '1hr'}}),
    ('norm-10hr', {'s2ut': {'target': 'norm', 'speaker_fusion': False}, 'normalizer': {'tier': '10hr'}}),
]

TABLE3_SYSTEMS = [
    ('orig', {'s2ut': {'target': 'orig', 'speaker_fusion': False}}),
    ('orig+spk', {'s2ut': {'target': 'orig', 'speaker_fusion': True}}),
    ('norm-1hr', {'s2ut': {'target': 'norm', 'speaker_fusion': False}, 'normalizer': {'tier': '1hr'}}),
]


def with_updates(config, updates):
    """Copy of ``config`` with per-block field updates, e.g. ``{'s2ut': {'target': 'orig'}}``."""
    blocks = {name: getattr(config, name).model_copy(update=values) for name, values in updates.items()}
    return config.model_copy(update=blocks)


def system_name(config):
    s2ut = config.s2ut
    name = f"norm-{config.normalizer.tier}" if s2ut.target == 'norm' else 'orig'
    if s2ut.speaker_fusion:
        name += '+spk'
    if config.data.use_mined:
        name += f"+mined@{config.data.threshold:g}"
    return name


def _dump(block):
    return block.model_dump(mode='json')


def _units_file(kind, split, language):
    return f"{kind}/{split}.{language}.units"


def _table(artifact, kind, splits, language):
    table = {}
    for split in splits:
        path = artifact.file(_units_file(kind, split, language))
        if path.exists():
            table.update(read_unit_table(path))
    return table


def _quantize_job(job):
    features_path, content, seed, inventory, reference, silence_length, centroids = job
    codebook = Codebook(np.asarray(centroids), min_k=1)
    orig = UnitService.quantize(read_features(features_path), codebook)
    inventory = LanguageInventory.from_dict(inventory)
    clean = Renderer(inventory, silence_length).render(content, SpeakerProfile.from_dict(reference),
                                                       inventory.codebook(), seed)
    return orig, UnitService.reduce(UnitService.quantize(clean, codebook))[0]


def _normalize_job(job):
    model_path, feature_dim, vocab_size, normalizer, seed, paths = job
    config = NormalizerConfig.model_validate(normalizer)
    model = checkpoint.load(NormalizerService.build_model(feature_dim, vocab_size, config, seed), model_path)
    return NormalizerService.normalize_batch(model, [read_features(path) for path in paths])


@dataclass
class ExperimentContext:
    """What every stage needs: the validated config, the store and the worker count."""

    config: object
    store: object
    workers: int = 1
    build_upstream: bool = False

    def derive(self, config):
        return replace(self, config=config, build_upstream=True)


class S2utTrainer:
    """
    Trains one S2UT system on a pair list and scores it on test.

    Holds every example it may be asked to train on, keyed by pair id, so
    sweeps can hand it different subsets. Picklable for process pools.
    """

    def __init__(self, config, seed, dims, examples, dev_examples, test_examples, decoder, mean_speaker=None):
        self.config = config
        self.seed = seed
        self.dims = dims
        self.examples = examples
        self.dev_examples = dev_examples
        self.test_examples = test_examples
        self.decoder = decoder
        self.mean_speaker = mean_speaker

    def score(self, hyps, examples):
        return EvaluationService.bleu([self.decoder.decode(units) for units in hyps],
                                      [example.words for example in examples])

    def fit(self, pairs):
        feature_dim, src_k, tgt_k, speaker_dim = self.dims
        model = S2utService.build_model(feature_dim, src_k, tgt_k, self.config, self.seed, speaker_dim)
        result = S2utService.train(model, [self.examples[pair.id] for pair in pairs], self.config, self.seed,
                                   self.dev_examples, self.score, self.mean_speaker)
        return model, result

    def __call__(self, pairs, label=''):
        model, _ = self.fit(pairs)
        hyps = [S2utService.translate(model, example.features, self.config.beam, self.mean_speaker).units
                for example in self.test_examples]
        bleu = self.score(hyps, self.test_examples)
        logger.info(f"Trained '{label}' on {len(pairs)} pairs: test BLEU {bleu:.2f}")
        return bleu


class ExperimentService:
    """Runs pipeline stages into content-addressed artifact directories."""

    # Artifact resolution

    @staticmethod
    def world_artifact(ctx):
        return ctx.store.stage('gen-world', {'world': _dump(ctx.config.world)})

    @staticmethod
    def codebook_artifact(ctx):
        return ctx.store.stage('fit-codebook', {'codebook': _dump(ctx.config.codebook)},
                               upstream=[ExperimentService.world_artifact(ctx)])

    @staticmethod
    def quantize_artifact(ctx):
        return ctx.store.stage('quantize', {}, upstream=[ExperimentService.world_artifact(ctx),
                                                         ExperimentService.codebook_artifact(ctx)])

    @staticmethod
    def normalizer_artifact(ctx, seed):
        return ctx.store.stage('train-normalizer', {'normalizer': _dump(ctx.config.normalizer), 'seed': seed},
                               upstream=[ExperimentService.quantize_artifact(ctx)])

    @staticmethod
    def normalize_artifact(ctx, seed):
        return ctx.store.stage('normalize', {}, upstream=[ExperimentService.normalizer_artifact(ctx, seed)])

    @staticmethod
    def duration_artifact(ctx, seed):
        return ctx.store.stage('train-duration', {'duration': _dump(ctx.config.duration), 'seed': seed},
                               upstream=[ExperimentService.quantize_artifact(ctx)])

    @staticmethod
    def _s2ut_upstream(ctx, seed):
        upstream = [ExperimentService.quantize_artifact(ctx)]
        if ctx.config.s2ut.target == 'norm':
            upstream.append(ExperimentService.normalize_artifact(ctx, seed))
        return upstream

    @staticmethod
    def s2ut_artifact(ctx, seed):
        config = {'s2ut': _dump(ctx.config.s2ut), 'data': _dump(ctx.config.data), 'seed': seed}
        return ctx.store.stage('train-s2ut', config, upstream=ExperimentService._s2ut_upstream(ctx, seed))

    @staticmethod
    def translate_artifact(ctx, seed):
        return ctx.store.stage('translate', {}, upstream=[ExperimentService.s2ut_artifact(ctx, seed)])

    @staticmethod
    def evaluate_artifact(ctx, seed):
        return ctx.store.stage('evaluate', {}, upstream=[ExperimentService.translate_artifact(ctx, seed)])

    @staticmethod
    def sweep_artifact(ctx, seed):
        config = {
            's2ut': _dump(ctx.config.s2ut),
            'thresholds': list(ctx.config.eval.thresholds),
            'operating_point': ctx.config.data.threshold,
            'seed': seed
        }
        return ctx.store.stage('sweep-threshold', config, upstream=ExperimentService._s2ut_upstream(ctx, seed))

    @staticmethod
    def table_artifact(ctx, name):
        return ctx.store.stage(name, {'experiment': ctx.config.to_dict(), 'seeds': ctx.config.run_seeds()})

    @staticmethod
    def _need(ctx, artifact, producer, *args):
        """Return a complete upstream artifact, building it only when the context allows."""
        if artifact.complete:
            return artifact
        if ctx.build_upstream:
            return producer(ctx, *args)
        return artifact.require()

    @staticmethod
    def _run(artifact, produce, force):
        if artifact.complete and not force:
            logger.info(f"Stage '{artifact.stage}' is up to date at {artifact.path}")
            return artifact
        artifact.begin()
        produce(artifact)
        artifact.seal()
        return artifact

    @staticmethod
    def _seed(ctx, seed):
        return ctx.config.seed if seed is None else seed

    # Loaders

    @staticmethod
    def _world(ctx):
        artifact = ExperimentService._need(ctx, ExperimentService.world_artifact(ctx), ExperimentService.gen_world)
        world = SyntheticWorld.from_dict(read_json(artifact.file('world.json')))
        return artifact, world, WorldService.read_manifest(artifact.file('manifest.tsv'))

    @staticmethod
    def _codebooks(ctx):
        artifact = ExperimentService._need(ctx, ExperimentService.codebook_artifact(ctx),
                                           ExperimentService.fit_codebook)
        return {language: read_codebook(artifact.file(f"codebook.{language}.txt")) for language in LANGUAGES}

    @staticmethod
    def _quantized(ctx):
        return ExperimentService._need(ctx, ExperimentService.quantize_artifact(ctx), ExperimentService.quantize)

    @staticmethod
    def _normalized(ctx, seed):
        return ExperimentService._need(ctx, ExperimentService.normalize_artifact(ctx, seed),
                                       ExperimentService.normalize, seed)

    @staticmethod
    def _load_normalizer(ctx, seed):
        artifact = ExperimentService._need(ctx, ExperimentService.normalizer_artifact(ctx, seed),
                                           ExperimentService.train_normalizer, seed)
        model = NormalizerService.build_model(ctx.config.world.feature_dim, ctx.config.codebook.k,
                                              ctx.config.normalizer, seed)
        return artifact, checkpoint.load(model, artifact.file('model.nuck'))

    @staticmethod
    def _load_duration(ctx, seed):
        artifact = ExperimentService._need(ctx, ExperimentService.duration_artifact(ctx, seed),
                                           ExperimentService.train_duration, seed)
        model = DurationService.build_model(ctx.config.codebook.k, ctx.config.duration, seed)
        return checkpoint.load(model, artifact.file('model.nuck'))

    @staticmethod
    def _require_target_normalizer(ctx, what):
        if ctx.config.normalizer.language != 'tgt':
            raise ConfigError(f"normalizer.language: {what} needs a target-language normalizer")

    # Stages

    @staticmethod
    def gen_world(ctx, force=False):
        """Generate the world, lay out every split and render all features."""
        config = ctx.config.world

        def produce(artifact):
            world = WorldService.generate_world(config)
            utterances = WorldService.make_corpora(world, config, config.seed)
            WorldService.render_corpus(world, utterances, artifact.path, ctx.workers)
            write_json(artifact.file('world.json'), world.to_dict())
            WorldService.write_manifest(artifact.file('manifest.tsv'), utterances)

        return ExperimentService._run(ExperimentService.world_artifact(ctx), produce, force)

    @staticmethod
    def fit_codebook(ctx, force=False):
        """One k-means codebook per language, fit on a frame sample of its training speech."""
        config = ctx.config.codebook
        world_artifact, _, utterances = ExperimentService._world(ctx)

        def produce(artifact):
            history = {}
            for offset, language in enumerate(LANGUAGES):
                train = WorldService.select(utterances, ['train'], language)
                frames = np.concatenate([read_features(world_artifact.file(u.features)) for u in train])
                rng = np.random.default_rng([ctx.config.world.seed, offset])
                if frames.shape[0] > config.sample_frames:
                    frames = frames[np.sort(rng.choice(frames.shape[0], config.sample_frames, replace=False))]
                codebook = UnitService.kmeans_fit(frames, config.k, seed=int(rng.integers(2 ** 31)),
                                                  tolerance=config.tolerance, max_iter=config.max_iter)
                write_codebook(artifact.file(f"codebook.{language}.txt"), codebook)
                history[language] = codebook.inertia_history
            write_json(artifact.file('inertia.json'), history)

        return ExperimentService._run(ExperimentService.codebook_artifact(ctx), produce, force)

    @staticmethod
    def quantize(ctx, force=False):
        """
        Quantize every utterance to frame-level orig-units, plus the reference units.

        Reference units are the reduced quantization of the same content
        rendered by the language's reference speaker.
        """
        world_artifact, world, utterances = ExperimentService._world(ctx)
        codebooks = ExperimentService._codebooks(ctx)

        def produce(artifact):
            inventories = {language: world.inventories[language].to_dict() for language in LANGUAGES}
            references = {language: world.reference_speaker(language).to_dict() for language in LANGUAGES}
            centroids = {language: codebooks[language].centroids.tolist() for language in LANGUAGES}
            jobs = [(str(world_artifact.file(u.features)), u.content, u.seed, inventories[u.language],
                     references[u.language], world.silence_length, centroids[u.language]) for u in utterances]
            results = parallel_map(_quantize_job, jobs, ctx.workers)
            groups = {}
            for utterance, (orig, ref) in zip(utterances, results):
                group = groups.setdefault((utterance.split, utterance.language), ({}, {}))
                group[0][utterance.id] = orig
                group[1][utterance.id] = ref
            for (split, language), (orig, ref) in sorted(groups.items()):
                write_unit_table(artifact.file(_units_file('orig', split, language)), orig)
                write_unit_table(artifact.file(_units_file('ref', split, language)), ref)
            logger.info(f"Quantized {len(utterances)} utterances into {len(groups)} split tables")

        return ExperimentService._run(ExperimentService.quantize_artifact(ctx), produce, force)

    @staticmethod
    def train_normalizer(ctx, seed=None, force=False):
        """Pretrain (masked orig-unit prediction) then CTC-finetune the normalizer on its tier."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config.normalizer
        language = config.language
        world_artifact, _, utterances = ExperimentService._world(ctx)
        quantized = ExperimentService._quantized(ctx)

        def features_of(selected):
            return [read_features(world_artifact.file(u.features)) for u in selected]

        def produce(artifact):
            unlabeled = WorldService.select(utterances, [f"norm-{tier}" for tier in ('10min', '1hr', '10hr')],
                                            language)
            tier = WorldService.select(utterances, config.tier_splits, language)
            dev = WorldService.select(utterances, ['norm-dev'], language)
            orig = _table(quantized, 'orig', ['norm-10min', 'norm-1hr', 'norm-10hr', 'norm-dev'], language)
            ref = _table(quantized, 'ref', config.tier_splits + ['norm-dev'], language)
            dev_features = features_of(dev)

            model = NormalizerService.build_model(ctx.config.world.feature_dim, ctx.config.codebook.k, config, seed)
            pretrain = NormalizerService.pretrain_proxy(
                model, features_of(unlabeled), [orig[u.id] for u in unlabeled], config, seed,
                dev_features=dev_features, dev_units=[orig[u.id] for u in dev]
            )
            finetune = NormalizerService.finetune(
                model, list(zip(features_of(tier), [ref[u.id] for u in tier])), config, seed,
                dev_pairs=list(zip(dev_features, [ref[u.id] for u in dev]))
            )
            checkpoint.save(model, artifact.file('model.nuck'))
            write_json(artifact.file('result.json'), RunMetadata(
                stage='train-normalizer', fingerprint=artifact.fingerprint, seeds=[seed],
                settings={'language': language, 'tier': config.tier, 'tier_splits': config.tier_splits,
                          'train_utterances': len(tier)},
                results={'pretrain': pretrain.to_dict(), 'finetune': finetune.to_dict()}
            ).to_dict())

        return ExperimentService._run(ExperimentService.normalizer_artifact(ctx, seed), produce, force)

    @staticmethod
    def normalize(ctx, seed=None, force=False):
        """Decode every non-normalizer split of the normalizer's language to norm-units."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config.normalizer
        world_artifact, _, utterances = ExperimentService._world(ctx)
        normalizer_artifact, _ = ExperimentService._load_normalizer(ctx, seed)

        def produce(artifact):
            selected = [u for u in utterances if u.language == config.language and not u.split.startswith('norm')]
            chunks = [selected[start:start + NORMALIZE_CHUNK] for start in range(0, len(selected), NORMALIZE_CHUNK)]
            jobs = [(str(normalizer_artifact.file('model.nuck')), ctx.config.world.feature_dim,
                     ctx.config.codebook.k, _dump(config), seed,
                     [str(world_artifact.file(u.features)) for u in chunk]) for chunk in chunks]
            decoded = [units for batch in parallel_map(_normalize_job, jobs, ctx.workers) for units in batch]
            tables = {}
            for utterance, units in zip(selected, decoded):
                tables.setdefault(utterance.split, {})[utterance.id] = units
            for split, table in sorted(tables.items()):
                write_unit_table(artifact.file(_units_file('norm', split, config.language)), table)
            logger.info(f"Normalized {len(selected)} '{config.language}' utterances")

        return ExperimentService._run(ExperimentService.normalize_artifact(ctx, seed), produce, force)

    @staticmethod
    def train_duration(ctx, seed=None, force=False):
        """Fit the duration predictor on reduced orig-units of target training speech."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config.duration
        quantized = ExperimentService._quantized(ctx)

        def produce(artifact):
            train = [UnitService.reduce(units) for units in _table(quantized, 'orig', ['train'], 'tgt').values()]
            dev = [UnitService.reduce(units) for units in _table(quantized, 'orig', ['dev'], 'tgt').values()]
            model = DurationService.build_model(ctx.config.codebook.k, config, seed)
            result = DurationService.train_duration(model, train, config, seed, dev_data=dev)
            checkpoint.save(model, artifact.file('model.nuck'))
            write_json(artifact.file('result.json'), RunMetadata(
                stage='train-duration', fingerprint=artifact.fingerprint, seeds=[seed],
                settings={'weight': config.weight, 'train_sequences': len(train)}, results=result.to_dict()
            ).to_dict())

        return ExperimentService._run(ExperimentService.duration_artifact(ctx, seed), produce, force)

    @staticmethod
    def trainer(ctx, seed=None, include_mined=None):
        """
        Build the S2UT trainer over supervised (and optionally all mined) pairs.

        Returns:
            Tuple of (S2utTrainer, supervised pairs, mined pairs)
        """
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config
        if config.s2ut.target == 'norm':
            ExperimentService._require_target_normalizer(ctx, "norm-unit S2UT targets")
        include_mined = config.data.use_mined if include_mined is None else include_mined
        world_artifact, world, utterances = ExperimentService._world(ctx)
        quantized = ExperimentService._quantized(ctx)
        normalized = ExperimentService._normalized(ctx, seed) if config.s2ut.target == 'norm' else None

        splits = ['train', 'dev', 'test'] + (['mined'] if include_mined else [])
        pairs = {split: pairs_from_utterances(WorldService.select(utterances, [split])) for split in splits}
        source_units = _table(quantized, 'orig', splits, 'src')
        if normalized is not None:
            targets = _table(normalized, 'norm', splits, 'tgt')
        else:
            targets = {key: UnitService.reduce(units)[0]
                       for key, units in _table(quantized, 'orig', splits, 'tgt').items()}
        reference = WorldService.word_decoder(world, 'tgt')

        def example(pair):
            speaker = None
            if config.s2ut.speaker_fusion:
                speaker = np.asarray(world.speaker(pair.target.speaker).embedding, dtype=np.float64)
            return S2utExample(
                id=pair.id,
                features=read_features(world_artifact.file(pair.source.features)),
                target=list(targets[pair.target.id]),
                aux=UnitService.reduce(source_units[pair.source.id])[0],
                speaker=speaker,
                words=reference.decode(pair.target.content)
            )

        examples = {pair.id: example(pair) for split in splits if split not in ('dev', 'test') for pair in pairs[split]}
        dev = [example(pair) for pair in pairs['dev'][:config.s2ut.dev_limit]]
        test = [example(pair) for pair in pairs['test']]
        mean_speaker = None
        speaker_dim = 0
        if config.s2ut.speaker_fusion:
            speaker_dim = config.world.speaker_embedding_dim
            mean_speaker = np.mean([examples[pair.id].speaker for pair in pairs['train']], axis=0)

        codebooks = ExperimentService._codebooks(ctx)
        trainer = S2utTrainer(
            config.s2ut, seed,
            (config.world.feature_dim, codebooks['src'].k, codebooks['tgt'].k, speaker_dim),
            examples, dev, test, WorldService.word_decoder(world, 'tgt', codebooks['tgt']), mean_speaker
        )
        return trainer, pairs['train'], pairs.get('mined', [])

    @staticmethod
    def train_s2ut(ctx, seed=None, force=False):
        """Train the S2UT system on supervised pairs, plus mined pairs above the threshold when enabled."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config

        def produce(artifact):
            trainer, supervised, mined = ExperimentService.trainer(ctx, seed)
            selected = EvaluationService.select_mined(mined, config.data.threshold) if config.data.use_mined else []
            model, result = trainer.fit(list(supervised) + selected)
            checkpoint.save(model, artifact.file('model.nuck'))
            speaker = None if trainer.mean_speaker is None else [float(v) for v in trainer.mean_speaker]
            write_json(artifact.file('speaker.json'), {'mean': speaker})
            write_json(artifact.file('result.json'), RunMetadata(
                stage='train-s2ut', fingerprint=artifact.fingerprint, seeds=[seed],
                settings={'system': system_name(config), 'aux_weight': config.s2ut.aux_weight,
                          'supervised_pairs': len(supervised), 'mined_pairs': len(selected),
                          'dims': list(trainer.dims)},
                results=result.to_dict()
            ).to_dict())

        return ExperimentService._run(ExperimentService.s2ut_artifact(ctx, seed), produce, force)

    @staticmethod
    def translate(ctx, seed=None, force=False):
        """Beam-decode the test pairs with the trained S2UT model."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config
        s2ut_artifact = ExperimentService._need(ctx, ExperimentService.s2ut_artifact(ctx, seed),
                                                ExperimentService.train_s2ut, seed)
        world_artifact, _, utterances = ExperimentService._world(ctx)

        def produce(artifact):
            settings = read_json(s2ut_artifact.file('result.json'))['settings']
            feature_dim, src_k, tgt_k, speaker_dim = settings['dims']
            model = S2utService.build_model(feature_dim, src_k, tgt_k, config.s2ut, seed, speaker_dim)
            checkpoint.load(model, s2ut_artifact.file('model.nuck'))
            speaker = read_json(s2ut_artifact.file('speaker.json'))['mean']
            hyps, truncated = {}, []
            for pair in pairs_from_utterances(WorldService.select(utterances, ['test'])):
                translation = S2utService.translate(model, read_features(world_artifact.file(pair.source.features)),
                                                    config.s2ut.beam, speaker)
                hyps[pair.id] = translation.units
                if translation.truncated:
                    truncated.append(pair.id)
            if truncated:
                logger.warning(f"{len(truncated)} translations hit the length cap")
            write_unit_table(artifact.file('hyp/test.units'), hyps)
            write_json(artifact.file('translations.json'), {'beam': config.s2ut.beam, 'truncated': truncated})

        return ExperimentService._run(ExperimentService.translate_artifact(ctx, seed), produce, force)

    @staticmethod
    def evaluate(ctx, seed=None, force=False):
        """Score test translations: BLEU on lexicon-decoded words and UER against reference units."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config
        translated = ExperimentService._need(ctx, ExperimentService.translate_artifact(ctx, seed),
                                             ExperimentService.translate, seed)
        _, world, utterances = ExperimentService._world(ctx)
        quantized = ExperimentService._quantized(ctx)
        codebooks = ExperimentService._codebooks(ctx)

        def produce(artifact):
            pairs = pairs_from_utterances(WorldService.select(utterances, ['test']))
            ref_units = _table(quantized, 'ref', ['test'], 'tgt')
            reference = WorldService.word_decoder(world, 'tgt')
            row = EvaluationService.evaluate_system(
                system=system_name(config),
                target=config.s2ut.target,
                corpus='test',
                hyps=read_unit_table(translated.file('hyp/test.units')),
                refs={pair.id: ref_units[pair.target.id] for pair in pairs},
                decoder=WorldService.word_decoder(world, 'tgt', codebooks['tgt']),
                ref_words={pair.id: reference.decode(pair.target.content) for pair in pairs},
                seed=seed
            )
            report = EvalReport(fingerprint=artifact.fingerprint, seeds=[seed])
            report.append(row)
            ExperimentService._write_report(artifact, report, RunMetadata(
                stage='evaluate', fingerprint=artifact.fingerprint, seeds=[seed],
                settings={'system': row.system, 'beam': config.s2ut.beam},
                results={'rows': report.to_rows()}
            ))

        return ExperimentService._run(ExperimentService.evaluate_artifact(ctx, seed), produce, force)

    @staticmethod
    def sweep_threshold(ctx, seed=None, force=False):
        """Train one system per mined-score threshold and export the score-vs-threshold table."""
        seed = ExperimentService._seed(ctx, seed)
        config = ctx.config

        def produce(artifact):
            trainer, supervised, mined = ExperimentService.trainer(ctx, seed, include_mined=True)
            rows = EvaluationService.threshold_sweep(
                trainer, supervised, mined, config.eval.thresholds, operating_point=config.data.threshold,
                parallel=config.eval.parallel_sweep, workers=ctx.workers, out_dir=artifact.path
            )
            write_json(artifact.file('metadata.json'), RunMetadata(
                stage='sweep-threshold', fingerprint=artifact.fingerprint, seeds=[seed],
                settings={'system': system_name(config), 'operating_point': config.data.threshold},
                results={'rows': rows}
            ).to_dict())

        return ExperimentService._run(ExperimentService.sweep_artifact(ctx, seed), produce, force)

    # Table reproductions

    @staticmethod
    def _write_report(artifact, report, metadata):
        write_tsv(artifact.file('report.tsv'), REPORT_COLUMNS, report.to_rows())
        write_json(artifact.file('metadata.json'), metadata.to_dict())

    @staticmethod
    def _system_rows(ctx, systems, extra=None):
        """Evaluate every (system, seed) combination, then append a mean row per system."""
        rows, results = [], {}
        seeds = ctx.config.run_seeds()
        for name, updates in systems:
            variant = ctx.derive(with_updates(ctx.config, {**updates, **(extra or {})}))
            system_rows = []
            for seed in seeds:
                evaluated = ExperimentService.evaluate(variant, seed)
                row = EvalRow(**read_json(evaluated.file('metadata.json'))['results']['rows'][0])
                system_rows.append(row)
                if variant.config.s2ut.target == 'norm':
                    normalizer = ExperimentService.normalizer_artifact(variant, seed)
                    finetune = read_json(normalizer.file('result.json'))['results']['finetune']
                    results.setdefault('normalizer_dev_uer', {}).setdefault(name, []).append(finetune['best_uer'])
            rows.extend(system_rows)
            rows.append(EvalRow(
                system=system_rows[0].system, target=system_rows[0].target, corpus=system_rows[0].corpus,
                bleu=float(np.mean([row.bleu for row in system_rows])),
                uer=float(np.mean([row.uer for row in system_rows])),
                samples=system_rows[0].samples, note=f"mean of {len(seeds)} seeds"
            ))
        return rows, results

    @staticmethod
    def _table_report(ctx, name, build, force):
        def produce(artifact):
            rows, results, settings = build()
            report = EvalReport(fingerprint=artifact.fingerprint, seeds=ctx.config.run_seeds())
            report.extend(rows)
            ExperimentService._write_report(artifact, report, RunMetadata(
                stage=name, fingerprint=artifact.fingerprint, seeds=ctx.config.run_seeds(),
                settings=settings, results=results
            ))
            EventPublisher.publish(f"{name}.completed", {'rows': len(rows)})

        return ExperimentService._run(ExperimentService.table_artifact(ctx, name), produce, force)

    @staticmethod
    def reproduce_table2(ctx, force=False):
        """Orig-unit, orig-unit with speaker fusion and norm-unit targets at three normalizer tiers."""
        ctx = ctx.derive(ctx.config)

        def build():
            rows, results = ExperimentService._system_rows(ctx, TABLE2_SYSTEMS, {'data': {'use_mined': False}})
            return rows, results, {'systems': [name for name, _ in TABLE2_SYSTEMS]}

        return ExperimentService._table_report(ctx, 'reproduce-table2', build, force)

    @staticmethod
    def reproduce_table3(ctx, force=False):
        """Supervised-only against supervised plus filtered mined pairs, for three target kinds."""
        ctx = ctx.derive(ctx.config)

        def build():
            rows, results = [], {}
            for use_mined in (False, True):
                extra = {'data': {'use_mined': use_mined}}
                system_rows, system_results = ExperimentService._system_rows(ctx, TABLE3_SYSTEMS, extra)
                rows.extend(system_rows)
                results[f"use_mined={use_mined}"] = system_results
            return rows, results, {'threshold': ctx.config.data.threshold}

        return ExperimentService._table_report(ctx, 'reproduce-table3', build, force)

    @staticmethod
    def reproduce_table5(ctx, force=False):
        """
        Resynthesis proxy on target dev speech.

        Compares full orig-units (oracle durations), reduced orig-units with
        predicted durations and norm-units with predicted durations, at unit
        and word level, and reports the norm/orig length ratio.
        """
        ctx = ctx.derive(ctx.config)
        ExperimentService._require_target_normalizer(ctx, "the resynthesis table")

        def build():
            seed = ctx.config.run_seeds()[0]
            _, world, utterances = ExperimentService._world(ctx)
            codebook = ExperimentService._codebooks(ctx)['tgt']
            quantized = ExperimentService._quantized(ctx)
            normalized = ExperimentService._normalized(ctx, seed)
            duration = ExperimentService._load_duration(ctx, seed)
            renderer = WorldService.renderer(world, 'tgt')
            speaker = world.reference_speaker('tgt')
            decoder = WorldService.word_decoder(world, 'tgt', codebook)

            dev = WorldService.select(utterances, ['dev'], 'tgt')
            orig = _table(quantized, 'orig', ['dev'], 'tgt')
            ref = _table(quantized, 'ref', ['dev'], 'tgt')
            norm = _table(normalized, 'norm', ['dev'], 'tgt')
            reduced = {u.id: UnitService.reduce(orig[u.id])[0] for u in dev}
            systems = [
                ('orig-full', 'orig', lambda key: orig[key]),
                ('orig-reduced+duration', 'orig', lambda key: DurationService.predict_and_expand(duration, reduced[key])),
                ('norm+duration', 'norm', lambda key: DurationService.predict_and_expand(duration, norm[key]))
            ]
            rows = []
            for name, target, units_of in systems:
                units = {u.id: units_of(u.id) for u in dev}
                scores = {
                    level: float(np.mean([
                        DurationService.resynthesis_proxy_wer(units[u.id], ref[u.id], renderer, codebook, speaker,
                                                              level=level, decoder=decoder)
                        for u in dev
                    ]))
                    for level in ('unit', 'word')
                }
                rows.append(EvalRow(system=name, target=target, corpus='dev', uer=scores['unit'],
                                    proxy_wer=scores[ctx.config.eval.proxy_level], samples=len(dev), seed=seed,
                                    note=f"proxy level {ctx.config.eval.proxy_level}"))
            ratio = EvaluationService.length_ratio([norm[u.id] for u in dev], [reduced[u.id] for u in dev])
            logger.info(f"Norm-units are {100.0 * (1.0 - ratio):.1f}% shorter than reduced orig-units")
            return rows, {'length_ratio': ratio}, {'proxy_level': ctx.config.eval.proxy_level}

        return ExperimentService._table_report(ctx, 'reproduce-table5', build, force)

    @staticmethod
    def reproduce_table6(ctx, force=False):
        """Cross-speaker UER of reduced orig-units against norm-units over same-content speaker pairs."""
        ctx = ctx.derive(ctx.config)
        ExperimentService._require_target_normalizer(ctx, "the cross-speaker table")

        def build():
            seed = ctx.config.run_seeds()[0]
            _, _, utterances = ExperimentService._world(ctx)
            quantized = ExperimentService._quantized(ctx)
            normalized = ExperimentService._normalized(ctx, seed)
            orig = _table(quantized, 'orig', ['xspk'], 'tgt')
            norm = _table(normalized, 'norm', ['xspk'], 'tgt')
            keys = sorted({u.id[:-2] for u in WorldService.select(utterances, ['xspk'], 'tgt')})
            orig_uer = EvaluationService.cross_speaker_uer(
                [(UnitService.reduce(orig[f"{key}-a"])[0], UnitService.reduce(orig[f"{key}-b"])[0]) for key in keys]
            )
            norm_uer = EvaluationService.cross_speaker_uer([(norm[f"{key}-a"], norm[f"{key}-b"]) for key in keys])
            rows = [
                EvalRow(system='orig-reduced', target='orig', corpus='xspk', uer=orig_uer, samples=len(keys), seed=seed),
                EvalRow(system=f"norm-{ctx.config.normalizer.tier}", target='norm', corpus='xspk', uer=norm_uer,
                        samples=len(keys), seed=seed)
            ]
            ratio = norm_uer / orig_uer if orig_uer > 0 else float('nan')
            logger.info(f"Cross-speaker UER: orig {orig_uer:.2f}, norm {norm_uer:.2f} (ratio {ratio:.3f})")
            return rows, {'uer_ratio': ratio}, {'pairs': len(keys)}

        return ExperimentService._table_report(ctx, 'reproduce-table6', build, force)
