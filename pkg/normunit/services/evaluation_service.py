# normunit/services/evaluation_service.py
import logging
import math
from collections import Counter

import numpy as np

from normunit.models.report import EvalRow
from normunit.services.unit_service import UnitService
from normunit.utils.errors import EvaluationError, MetricError, UsageError
from normunit.utils.event_publisher import EventPublisher
from normunit.utils.file_formats import write_tsv
from normunit.utils.parallel import parallel_map
from normunit.utils.validators import is_ascending

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['threshold', 'mined_pairs', 'train_pairs', 'bleu', 'operating_point']
PLOT_COLUMNS = ['threshold', 'bleu']
SUPERVISED_ONLY = 'supervised-only'


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _sweep_job(job):
    trainer, label, pairs = job
    return trainer(pairs, label)


class EvaluationService:
    """Corpus metrics, per-system report rows and the mined-data threshold sweep."""

    @staticmethod
    def bleu(hyps, refs, max_n=4):
        """
        Corpus BLEU over token sequences, scaled to [0, 100].

        Precisions are clipped n-gram matches over hypothesis n-grams. For
        n >= 2 both counts get add-one smoothing; unigram precision is not
        smoothed, so a corpus with no matching token scores 0. Brevity
        penalty is ``exp(1 - r / c)`` when ``c < r``.

        Args:
            hyps: Hypothesis token sequences
            refs: One reference sequence per hypothesis
            max_n: Highest n-gram order

        Raises:
            MetricError: On an empty reference corpus or mismatched counts
        """
        if len(refs) == 0 or sum(len(ref) for ref in refs) == 0:
            raise MetricError("BLEU is undefined for an empty reference corpus")
        if len(hyps) != len(refs):
            raise MetricError(f"BLEU needs one hypothesis per reference, got {len(hyps)} and {len(refs)}")

        matches = [0] * max_n
        totals = [0] * max_n
        hyp_length = ref_length = 0
        for hyp, ref in zip(hyps, refs):
            hyp, ref = list(hyp), list(ref)
            hyp_length += len(hyp)
            ref_length += len(ref)
            for n in range(1, max_n + 1):
                hyp_ngrams, ref_ngrams = _ngrams(hyp, n), _ngrams(ref, n)
                matches[n - 1] += sum(min(count, ref_ngrams[gram]) for gram, count in hyp_ngrams.items())
                totals[n - 1] += sum(hyp_ngrams.values())

        if hyp_length == 0 or matches[0] == 0:
            return 0.0
        log_precision = math.log(matches[0] / totals[0])
        for n in range(1, max_n):
            log_precision += math.log((matches[n] + 1) / (totals[n] + 1))
        brevity = 1.0 if hyp_length >= ref_length else math.exp(1.0 - ref_length / hyp_length)
        return 100.0 * brevity * math.exp(log_precision / max_n)

    @staticmethod
    def evaluate_system(system, target, corpus, hyps, refs, decoder, ref_words=None, seed=None, proxy_wer=None):
        """
        Score one system's translations against oracle references.

        Args:
            system: System id
            target: Target kind of the system ('orig', 'orig+spk', 'norm', 'oracle', ...)
            corpus: Evaluation corpus name
            hyps: Dict of id -> hypothesis units
            refs: Dict of id -> reference units
            decoder: WordDecoder turning unit sequences into word ids
            ref_words: Optional dict of id -> reference word ids (decoded from ``refs`` when absent)
            seed: Seed the system was trained with
            proxy_wer: Optional resynthesis proxy score to carry on the row

        Returns:
            EvalRow with word-level BLEU and unit-level UER

        Raises:
            EvaluationError: If hypothesis and reference ids differ
        """
        missing = sorted(set(refs) - set(hyps))
        extra = sorted(set(hyps) - set(refs))
        if missing or extra:
            logger.error(f"System '{system}' is missing {len(missing)} ids and has {len(extra)} unexpected ids")
            raise EvaluationError(
                f"Hypotheses for '{system}' do not align with the references",
                missing_ids=missing + extra
            )
        ids = sorted(refs)
        hyp_units = [list(hyps[key]) for key in ids]
        ref_units = [list(refs[key]) for key in ids]
        hyp_words = [decoder.decode(units) for units in hyp_units]
        if ref_words is None:
            words = [decoder.decode(units) for units in ref_units]
        else:
            words = [list(ref_words[key]) for key in ids]

        row = EvalRow(
            system=system,
            target=target,
            corpus=corpus,
            bleu=EvaluationService.bleu(hyp_words, words),
            uer=UnitService.corpus_uer(hyp_units, ref_units),
            proxy_wer=proxy_wer,
            samples=len(ids),
            seed=seed
        )
        EventPublisher.publish('evaluation.completed', row.to_dict())
        return row

    @staticmethod
    def select_mined(mined, threshold):
        """Mined pairs whose score reaches ``threshold``."""
        return [pair for pair in mined if pair.score is not None and pair.score >= threshold]

    @staticmethod
    def cross_speaker_uer(pairs):
        """
        Mean per-pair UER between two renderings of the same content.

        Args:
            pairs: List of (first units, second units); the second is the reference side

        Raises:
            MetricError: If no pair has a non-empty reference
        """
        scores = [UnitService.uer(first, second) for first, second in pairs if len(second) > 0]
        if not scores:
            raise MetricError("Cross-speaker UER needs at least one non-empty pair")
        return float(np.mean(scores))

    @staticmethod
    def length_ratio(shorter, longer):
        """Mean length of ``shorter`` sequences over the mean length of ``longer`` ones."""
        denominator = float(np.mean([len(units) for units in longer])) if longer else 0.0
        if denominator == 0.0:
            raise MetricError("Length ratio needs non-empty reference sequences")
        return float(np.mean([len(units) for units in shorter])) / denominator

    @staticmethod
    def threshold_sweep(trainer, supervised, mined, thresholds, operating_point=1.06, parallel=False, workers=1,
                        out_dir=None):
        """
        Train one system per threshold on supervised plus filtered mined pairs.

        A supervised-only row always comes first, and a threshold that keeps
        no mined pair still produces its own row.

        Args:
            trainer: Picklable callable(pairs, label) -> test BLEU
            supervised: Supervised ParallelPairs
            mined: Scored mined ParallelPairs
            thresholds: Ascending score thresholds
            operating_point: Threshold marked as the calibrated default
            parallel: Run trainings over a process pool
            workers: Pool size when ``parallel``
            out_dir: When set, writes ``sweep.tsv`` and ``sweep.plot.tsv`` there

        Returns:
            List of row dicts (threshold None for supervised-only)

        Raises:
            UsageError: If thresholds are not ascending
        """
        thresholds = [float(value) for value in thresholds]
        if not is_ascending(thresholds):
            raise UsageError(f"Sweep thresholds must be ascending, got {thresholds}")

        plans = [(SUPERVISED_ONLY, None, list(supervised))]
        for threshold in thresholds:
            selected = EvaluationService.select_mined(mined, threshold)
            if not selected:
                logger.warning(f"Threshold {threshold} keeps no mined pairs; row is supervised-only data")
            plans.append((f"threshold={threshold:g}", threshold, list(supervised) + selected))

        jobs = [(trainer, label, pairs) for label, _, pairs in plans]
        scores = parallel_map(_sweep_job, jobs, workers if parallel else 1)

        rows = []
        for (label, threshold, pairs), score in zip(plans, scores):
            row = {
                'threshold': threshold,
                'mined_pairs': len(pairs) - len(supervised),
                'train_pairs': len(pairs),
                'bleu': float(score),
                'operating_point': threshold is not None and math.isclose(threshold, operating_point)
            }
            rows.append(row)
            EventPublisher.publish('sweep.row', row)
            logger.info(f"Sweep {label}: {row['train_pairs']} pairs, BLEU {row['bleu']:.2f}")

        if out_dir is not None:
            EvaluationService.write_sweep(out_dir, rows)
        return rows

    @staticmethod
    def write_sweep(out_dir, rows):
        table = [{**row, 'threshold': SUPERVISED_ONLY if row['threshold'] is None else row['threshold'],
                  'operating_point': '*' if row['operating_point'] else ''} for row in rows]
        write_tsv(f"{out_dir}/sweep.tsv", SWEEP_COLUMNS, table)
        write_tsv(f"{out_dir}/sweep.plot.tsv", PLOT_COLUMNS,
                  [row for row in rows if row['threshold'] is not None])
