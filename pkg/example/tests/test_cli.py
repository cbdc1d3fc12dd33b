import json
import os

import numpy as np
import pytest

from mfsocial.cli import EXIT_NUMERICAL
from mfsocial.cli import EXIT_OK
from mfsocial.cli import EXIT_USAGE
from mfsocial.cli import EXIT_VALIDATION
from mfsocial.cli import cli_main
from mfsocial.cli import dispatch
from mfsocial.exceptions import ConfigurationError

from example.tests.conftest import config_path


def write_config(tmp_path, name, **sections):
    with open(config_path('noise_free.json')) as f:
        document = json.load(f)
    for section, values in sections.items():
        document[section].update(values)
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def read(directory, name):
    with open(os.path.join(directory, name)) as f:
        return json.load(f)


@pytest.mark.parametrize('argv', [
    [],
    ['learn'],
    ['learn', config_path('noise_free.json'), '--bogus'],
    ['transmogrify'],
])
def test_usage_errors(argv):
    assert cli_main(argv) == EXIT_USAGE


def test_malformed_configuration(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('not json')
    assert cli_main(['validate', str(path)]) == EXIT_VALIDATION


def test_zero_control_weight(tmp_path):
    path = write_config(tmp_path, 'zero_r.json', cost={'R': [[0.0]]})
    assert cli_main(['validate', path, '--out-dir',
                     str(tmp_path / 'out')]) == EXIT_VALIDATION


def test_iteration_budget_exhausted(tmp_path):
    path = write_config(tmp_path, 'short.json', learning={'max_iter': 1})
    assert cli_main(['oracle', path, '--out-dir',
                     str(tmp_path / 'out')]) == EXIT_NUMERICAL


def test_validate_prints_the_report(tmp_path, capsys):
    out_dir = str(tmp_path / 'out')
    assert cli_main(['validate', config_path('noise_free.json'),
                     '--out-dir', out_dir]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed['ok'] is True
    assert printed == read(out_dir, 'validation.json')


def test_learn_matches_oracle_on_exact_data(tmp_path):
    out_dir = str(tmp_path / 'out')
    config = config_path('noise_free.json')
    assert cli_main(['oracle', config, '--out-dir', out_dir]) == EXIT_OK
    assert cli_main(['learn', config, '--out-dir', out_dir]) == EXIT_OK
    oracle = read(out_dir, 'oracle.json')
    report = read(out_dir, 'report.json')
    for loop, gain in (('feedback', 'K'), ('feedforward', 'Ks')):
        learned = np.array(report['learned'][loop][gain])
        expected = np.array(oracle[loop][gain])
        assert np.linalg.norm(learned - expected) <= 1e-6
    for name in ('trajectories.csv', 'meanfield.csv', 'convergence.csv',
                 os.path.join('datasets', 'manifest.json')):
        assert os.path.exists(os.path.join(out_dir, name))


def test_runs_are_reproducible(tmp_path):
    config = config_path('noise_free.json')
    first = str(tmp_path / 'first')
    second = str(tmp_path / 'second')
    assert cli_main(['meanfield', config, '--out-dir', first]) == EXIT_OK
    assert cli_main(['meanfield', config, '--out-dir', second]) == EXIT_OK
    with open(os.path.join(first, 'meanfield.csv'), 'rb') as f:
        expected = f.read()
    with open(os.path.join(second, 'meanfield.csv'), 'rb') as f:
        assert f.read() == expected
    assert read(first, 'report.json')['costs'] == {}


def test_dispatch_unknown_command(benchmark):
    with pytest.raises(ConfigurationError):
        dispatch(benchmark, 'reproduce')


def test_unconverged_learning_still_writes_its_outputs(tmp_path):
    path = write_config(tmp_path, 'short.json', learning={'max_iter': 2})
    out_dir = str(tmp_path / 'out')
    assert cli_main(['learn', path, '--out-dir', out_dir]) == EXIT_NUMERICAL
    report = read(out_dir, 'report.json')
    entry = report['convergence']['learned-feedback']
    assert entry['converged'] is False
    assert entry['iterations'] == 2
    assert report['learned']['feedback']['K'] is not None
    assert os.path.exists(os.path.join(out_dir, 'convergence.csv'))


def test_unwritable_output_directory(tmp_path):
    blocker = tmp_path / 'blocker'
    blocker.write_text('')
    out_dir = str(blocker / 'out')
    assert cli_main(['validate', config_path('noise_free.json'),
                     '--out-dir', out_dir]) == EXIT_VALIDATION
