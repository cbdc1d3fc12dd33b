import json
import os

import numpy as np
import pandas as pd
import pytest

from mfsocial import export
from mfsocial.exceptions import ValidationError
from mfsocial.feedback import irl_feedback_iterate


def test_datasets_replay_exactly(noise_free, noise_free_report, tmp_path):
    fb_ds = noise_free_report.feedback_dataset
    ff_ds = noise_free_report.feedforward_dataset
    export.write_datasets(fb_ds, ff_ds, str(tmp_path), 'simpson')

    loaded = export.load_feedback_dataset(str(tmp_path))
    for name, block in fb_ds.blocks().items():
        np.testing.assert_array_equal(loaded.blocks()[name], block)
        assert loaded.blocks()[name].flags['C_CONTIGUOUS']
    assert loaded.plan == fb_ds.plan
    loaded_ff = export.load_feedforward_dataset(str(tmp_path))
    for name, block in ff_ds.blocks().items():
        np.testing.assert_array_equal(loaded_ff.blocks()[name], block)

    replayed, _ = irl_feedback_iterate(loaded, noise_free.get_k0(),
                                       noise_free.get_cost(), xi=1e-9)
    np.testing.assert_array_equal(replayed.K,
                                  noise_free_report.learned_feedback.K)

    manifest = json.loads((tmp_path / 'datasets' / 'manifest.json')
                          .read_text())
    assert (manifest['l'], manifest['n'], manifest['m']) == (551, 2, 1)
    assert manifest['quadrature'] == 'simpson'


def test_missing_manifest(tmp_path):
    with pytest.raises(ValidationError):
        export.load_feedback_dataset(str(tmp_path))


def test_trajectory_table(noise_free_report):
    frame = export.trajectories_frame(noise_free_report.trajectories)
    assert list(frame.columns) == ['t', 'x1', 'x2', 'u1', 'path_id']
    assert len(frame) == 6001
    assert frame['x1'].iloc[0] == 2.0


def test_meanfield_table(noise_free_report):
    frame = export.meanfield_frame(noise_free_report.meanfield.values())
    assert list(frame.columns) == ['t', 'xbar1', 'xbar2', 'method']
    assert set(frame['method']) == {'identified', 'monte-carlo', 'exact'}


def test_convergence_table(noise_free_report):
    frame = export.convergence_frame(noise_free_report.traces)
    assert list(frame.columns) == ['loop', 'k', 'update_norm',
                                   'residual_norm', 'g11', 'g12']
    assert frame['k'].min() == 1


def test_table_formats(tmp_path):
    frame = pd.DataFrame({'a': [0.1, 1.0 / 3.0]})
    path = export.write_table(frame, str(tmp_path), 'values', 'json')
    assert path.endswith('values.json')
    path = export.write_table(frame, str(tmp_path), 'values', 'csv')
    back = pd.read_csv(path, float_precision='round_trip')
    assert back['a'].tolist() == frame['a'].tolist()
    with pytest.raises(ValidationError):
        export.write_table(frame, str(tmp_path), 'values', 'xlsx')


def test_write_run(noise_free_report, tmp_path):
    export.write_run(noise_free_report, str(tmp_path))
    for name in ('trajectories.csv', 'meanfield.csv', 'convergence.csv',
                 'report.json'):
        assert os.path.exists(os.path.join(str(tmp_path), name))
