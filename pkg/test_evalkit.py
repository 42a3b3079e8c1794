# test_evalkit.py
import math
import random

import pytest
from pydantic import ValidationError

from normunit.models.corpus import ParallelPair, Utterance
from normunit.models.report import EvalReport, EvalRow
from normunit.services.evaluation_service import EvaluationService
from normunit.utils.errors import EvaluationError, MetricError, UsageError
from normunit.utils.file_formats import read_tsv


class IdentityDecoder:
    def decode(self, units):
        return list(units)


class CountingTrainer:
    def __call__(self, pairs, label):
        return float(len(pairs))


def _pair(pair_id, score=None):
    source = Utterance(id=f"{pair_id}-src", split='mined', language='src', speaker='src-spk1', content=[1])
    target = Utterance(id=f"{pair_id}-tgt", split='mined', language='tgt', speaker='tgt-spk1', content=[2])
    provenance = 'supervised' if score is None else 'mined'
    return ParallelPair(id=pair_id, source=source, target=target, provenance=provenance, score=score)


@pytest.mark.parametrize('hyps, refs, expected', [
    ([[1, 2, 3, 4]], [[1, 2, 3, 4]], 100.0),
    ([[1, 2, 3]], [[1, 2, 3, 4]], 100.0 * math.exp(-1.0 / 3.0)),
    ([[5, 6, 7]], [[1, 2, 3]], 0.0),
    ([[]], [[1, 2, 3]], 0.0),
    ([[1, 1, 1, 1]], [[1, 2, 3, 4]], 100.0 * (1.0 / 96.0) ** 0.25),
])
def test_bleu_known_values(hyps, refs, expected):
    assert EvaluationService.bleu(hyps, refs) == pytest.approx(expected)


def test_bleu_ignores_corpus_order():
    rng = random.Random(4)
    hyps = [[rng.randrange(5) for _ in range(rng.randint(1, 8))] for _ in range(20)]
    refs = [[rng.randrange(5) for _ in range(rng.randint(1, 8))] for _ in range(20)]
    order = list(range(20))
    rng.shuffle(order)
    assert EvaluationService.bleu([hyps[i] for i in order], [refs[i] for i in order]) == pytest.approx(
        EvaluationService.bleu(hyps, refs))


def test_bleu_errors():
    with pytest.raises(MetricError):
        EvaluationService.bleu([], [])
    with pytest.raises(MetricError):
        EvaluationService.bleu([[1]], [[]])
    with pytest.raises(MetricError):
        EvaluationService.bleu([[1], [2]], [[1]])


def test_evaluate_system_scores_words_and_units(events):
    refs = {'b': [1, 2, 3], 'a': [4, 5, 6, 7]}
    hyps = {'a': [4, 5, 6, 7], 'b': [1, 2]}
    row = EvaluationService.evaluate_system('norm-1hr', 'norm', 'test', hyps, refs, IdentityDecoder(), seed=3)
    assert row.samples == 2 and row.seed == 3
    assert row.uer == pytest.approx(100.0 / 7.0)
    assert row.bleu == pytest.approx(EvaluationService.bleu([[4, 5, 6, 7], [1, 2]], [[4, 5, 6, 7], [1, 2, 3]]))
    assert events[-1]['event_type'] == 'evaluation.completed'
    assert events[-1]['payload'] == row.to_dict()


def test_oracle_hypotheses_score_perfectly():
    refs = {'x': [1, 2, 3, 4, 5], 'y': [2, 3, 4, 5, 6]}
    row = EvaluationService.evaluate_system('oracle', 'oracle', 'test', dict(refs), refs, IdentityDecoder())
    assert row.bleu == pytest.approx(100.0)
    assert row.uer == 0.0


def test_evaluate_system_reports_misaligned_ids():
    with pytest.raises(EvaluationError) as error:
        EvaluationService.evaluate_system('orig', 'orig', 'test', {'a': [1], 'c': [2]},
                                          {'a': [1], 'b': [2]}, IdentityDecoder())
    assert error.value.missing_ids == ['b', 'c']


def test_select_mined_is_monotone_subset():
    mined = [_pair(f"m{i}", score) for i, score in enumerate([1.01, 1.05, 1.07, 1.2])]
    loose = EvaluationService.select_mined(mined, 1.05)
    strict = EvaluationService.select_mined(mined, 1.07)
    assert [p.id for p in loose] == ['m1', 'm2', 'm3']
    assert set(p.id for p in strict) <= set(p.id for p in loose)
    assert EvaluationService.select_mined(mined, 1.5) == []


def test_threshold_sweep_rows(tmp_path, events):
    supervised = [_pair(f"s{i}") for i in range(3)]
    mined = [_pair(f"m{i}", score) for i, score in enumerate([1.01, 1.05, 1.07, 1.2])]
    rows = EvaluationService.threshold_sweep(CountingTrainer(), supervised, mined, [1.0, 1.06, 1.3],
                                             operating_point=1.06, out_dir=tmp_path)
    assert [row['threshold'] for row in rows] == [None, 1.0, 1.06, 1.3]
    assert [row['mined_pairs'] for row in rows] == [0, 4, 2, 0]
    assert [row['bleu'] for row in rows] == [3.0, 7.0, 5.0, 3.0]
    assert [row['operating_point'] for row in rows] == [False, False, True, False]
    assert len([e for e in events if e['event_type'] == 'sweep.row']) == 4

    table = read_tsv(tmp_path / 'sweep.tsv')
    assert table[0]['threshold'] == 'supervised-only'
    assert [line['operating_point'] for line in table] == ['', '', '*', '']
    assert len(read_tsv(tmp_path / 'sweep.plot.tsv')) == 3


def test_threshold_sweep_requires_ascending_thresholds():
    with pytest.raises(UsageError):
        EvaluationService.threshold_sweep(CountingTrainer(), [], [], [1.06, 1.0])


def test_eval_report_is_append_only():
    report = EvalReport(fingerprint='abc', seeds=[0])
    row = EvalRow(system='orig', target='orig', corpus='test', bleu=10.0, samples=4)
    report.append(row)
    report.extend([row.model_copy(update={'system': 'norm-1hr'})])
    assert [r.system for r in report.rows] == ['orig', 'norm-1hr']
    assert report.rows_for('orig') == [row]
    with pytest.raises(UsageError):
        report.append({'system': 'orig'})
    with pytest.raises(ValidationError):
        row.bleu = 3.0


def test_cross_speaker_uer_and_length_ratio():
    assert EvaluationService.cross_speaker_uer([([1, 2], [1, 2]), ([1], [1, 2])]) == pytest.approx(25.0)
    with pytest.raises(MetricError):
        EvaluationService.cross_speaker_uer([([1], [])])
    assert EvaluationService.length_ratio([[1, 2], [1, 2, 3, 4]], [[1] * 6, [1] * 6]) == pytest.approx(0.5)
    with pytest.raises(MetricError):
        EvaluationService.length_ratio([[1]], [])
