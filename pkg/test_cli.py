# test_cli.py
import json

import pytest
from click.testing import CliRunner

from normunit import create_cli
from normunit.config import TestingConfig as CliSettings
from normunit.services.experiment_service import ExperimentService
from normunit.utils.artifacts import ArtifactStore
from normunit.utils.errors import TrainingDivergenceError
from normunit.utils.file_formats import read_json, read_tsv
from run import main


@pytest.fixture
def config_file(tmp_path, tiny_document):
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps(tiny_document))
    return path


def _run(config_file, out, *command):
    return main(['--config', str(config_file), '--out', str(out), '--workers', '1', *command])


def _artifact_path(output):
    return json.loads(output.strip().splitlines()[-1])['path']


def test_validate_config_succeeds(config_file, tmp_path):
    assert _run(config_file, tmp_path / 'out', 'validate-config') == 0


def test_validate_config_prints_normalized_document(config_file, tmp_path):
    runner = CliRunner()
    result = runner.invoke(create_cli(CliSettings), ['--config', str(config_file), 'validate-config'])
    assert result.exit_code == 0
    assert json.loads(result.output)['normalizer']['tier_splits'] == ['norm-10min', 'norm-1hr']


def test_invalid_config_exits_with_two(tmp_path, tiny_document, capsys):
    tiny_document['s2ut']['aux_weight'] = -1
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(tiny_document))
    assert _run(path, tmp_path / 'out', 'validate-config') == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error['type'] == 'ConfigError'
    assert any(message.startswith('s2ut.aux_weight') for message in error['errors'])


def test_missing_upstream_exits_with_three(config_file, tmp_path, capsys):
    assert _run(config_file, tmp_path / 'out', 'fit-codebook') == 3
    assert "gen-world" in capsys.readouterr().err


def test_divergence_exits_with_four(config_file, tmp_path, monkeypatch):
    def diverge(ctx, force=False):
        raise TrainingDivergenceError("loss became nan at step 0")

    monkeypatch.setattr(ExperimentService, 'gen_world', staticmethod(diverge))
    assert _run(config_file, tmp_path / 'out', 'gen-world') == 4


def test_unknown_command_is_usage_error(config_file, tmp_path):
    assert _run(config_file, tmp_path / 'out', 'no-such-stage') == 2


def test_gen_world_is_reproducible(config_file, tmp_path):
    runner = CliRunner()
    cli = create_cli(CliSettings)
    args = ['--config', str(config_file), '--out', str(tmp_path / 'out'), 'gen-world']
    first = runner.invoke(cli, args)
    assert first.exit_code == 0, first.output
    path = _artifact_path(first.output)
    hashes = read_json(f"{path}/hashes.json")
    second = runner.invoke(cli, args)
    assert _artifact_path(second.output) == path
    assert read_json(f"{path}/hashes.json") == hashes
    assert read_json(f"{path}/config.json")['stage'] == 'gen-world'


def test_seed_option_changes_fingerprint_of_seeded_stages(config_file, tmp_path):
    runner = CliRunner()
    cli = create_cli(CliSettings)
    out = str(tmp_path / 'out')
    base = ['--config', str(config_file), '--out', out]
    for stage in ('gen-world', 'fit-codebook', 'quantize'):
        assert runner.invoke(cli, base + [stage]).exit_code == 0
    first = runner.invoke(cli, base + ['--seed', '1', 'train-duration'])
    second = runner.invoke(cli, base + ['--seed', '2', 'train-duration'])
    assert first.exit_code == 0 and second.exit_code == 0
    assert _artifact_path(first.output) != _artifact_path(second.output)
    metadata = read_json(f"{_artifact_path(first.output)}/result.json")
    assert metadata['seeds'] == [1]


@pytest.mark.slow
def test_reproduce_table2_end_to_end(config_file, tmp_path):
    runner = CliRunner()
    result = runner.invoke(create_cli(CliSettings),
                           ['--config', str(config_file), '--out', str(tmp_path / 'out'), 'reproduce-table2'])
    assert result.exit_code == 0, result.output
    rows = read_tsv(f"{_artifact_path(result.output)}/report.tsv")
    systems = {row['system'] for row in rows}
    assert {'orig', 'orig+spk', 'norm-10min', 'norm-1hr', 'norm-10hr'} <= systems
    assert all(int(row['samples']) == 4 for row in rows)


def _invoke_table(config_file, out, table):
    result = CliRunner().invoke(create_cli(CliSettings),
                                ['--config', str(config_file), '--out', str(out), table])
    assert result.exit_code == 0, result.output
    return json.loads(result.output.strip().splitlines()[-1])


@pytest.fixture
def trained_config_file(tmp_path, tiny_document):
    tiny_document['world']['sizes'].update({'norm_10min': 16, 'norm_1hr': 32, 'norm_10hr': 64, 'xspk': 8})
    tiny_document['normalizer'].update({
        'tier': '10hr', 'width': 32, 'depth': 2, 'ffn': 64,
        'total_updates': 400, 'frozen_updates': 50, 'pretrain_steps': 20, 'eval_every': 100
    })
    tiny_document['duration']['steps'] = 200
    path = tmp_path / 'trained.json'
    path.write_text(json.dumps(tiny_document))
    return path


@pytest.mark.slow
def test_reproduce_table2_is_deterministic(config_file, tmp_path):
    first = _invoke_table(config_file, tmp_path / 'first', 'reproduce-table2')
    second = _invoke_table(config_file, tmp_path / 'second', 'reproduce-table2')
    assert first['fingerprint'] == second['fingerprint']
    assert first['content_hash'] == second['content_hash']
    with open(f"{first['path']}/report.tsv", 'rb') as a, open(f"{second['path']}/report.tsv", 'rb') as b:
        assert a.read() == b.read()


@pytest.mark.slow
def test_reproduce_table3_pairs_every_system_with_and_without_mined(config_file, tmp_path):
    artifact = _invoke_table(config_file, tmp_path / 'out', 'reproduce-table3')
    rows = read_tsv(f"{artifact['path']}/report.tsv")
    systems = [row['system'] for row in rows]
    for system in ('orig', 'orig+spk', 'norm-1hr'):
        assert systems.count(system) == 4
    assert all(row['corpus'] for row in rows)
    assert all(int(row['samples']) == 4 for row in rows)
    results = read_json(f"{artifact['path']}/metadata.json")['results']
    assert set(results) == {'use_mined=False', 'use_mined=True'}


@pytest.mark.slow
def test_reproduce_table5_norm_units_are_shorter(trained_config_file, tmp_path):
    artifact = _invoke_table(trained_config_file, tmp_path / 'out', 'reproduce-table5')
    rows = read_tsv(f"{artifact['path']}/report.tsv")
    assert [row['system'] for row in rows] == ['orig-full', 'orig-reduced+duration', 'norm+duration']
    assert all(0.0 <= float(row['uer']) and row['proxy_wer'] != '' for row in rows)
    ratio = read_json(f"{artifact['path']}/metadata.json")['results']['length_ratio']
    assert 0.0 < ratio < 1.0


@pytest.mark.slow
def test_reproduce_table6_norm_units_agree_across_speakers(trained_config_file, tmp_path):
    artifact = _invoke_table(trained_config_file, tmp_path / 'out', 'reproduce-table6')
    rows = {row['system']: row for row in read_tsv(f"{artifact['path']}/report.tsv")}
    assert set(rows) == {'orig-reduced', 'norm-10hr'}
    assert all(int(row['samples']) == 8 for row in rows.values())
    assert float(rows['norm-10hr']['uer']) < float(rows['orig-reduced']['uer'])
    assert read_json(f"{artifact['path']}/metadata.json")['results']['uer_ratio'] < 1.0


def test_rerun_stage_drops_stale_files(tmp_path):
    artifact = ArtifactStore(tmp_path).stage('fit-codebook', {'k': 4}).begin()
    artifact.file('stale.bin').write_bytes(b'old')
    artifact.file('keep.txt').write_text('v1')
    first = artifact.seal()
    assert 'stale.bin' in first

    artifact.begin()
    artifact.file('keep.txt').write_text('v1')
    second = artifact.seal()
    assert not artifact.file('stale.bin').exists()
    assert set(second) == {'config.json', 'keep.txt'}
    assert artifact.complete and artifact.hashes() == second
