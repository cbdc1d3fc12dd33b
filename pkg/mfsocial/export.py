"""Writers for run outputs and readers for recorded datasets.

Tables go through pandas; ``fmt`` selects CSV or JSON records. Datasets are
always CSV so that learning can be replayed from them exactly.

"""
import json
import logging
import os

import numpy as np
import pandas as pd

from mfsocial.exceptions import ValidationError
from mfsocial.feedback import FeedbackDataset
from mfsocial.feedforward import FeedforwardDataset
from mfsocial.simulation import SamplingPlan

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
FORMATS = ('csv', 'json')
DATASET_DIR = 'datasets'
MANIFEST = 'manifest.json'


def _ensure_dir(directory):
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_json(document, path):
    _ensure_dir(os.path.dirname(path))
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info("wrote %s", path)
    return path


def write_table(frame, directory, name, fmt='csv'):
    if fmt not in FORMATS:
        raise ValidationError("unknown output format %r" % fmt)
    _ensure_dir(directory)
    path = os.path.join(directory, '%s.%s' % (name, fmt))
    if fmt == 'csv':
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    else:
        frame.to_json(path, orient='records', double_precision=15)
    logger.info("wrote %s", path)
    return path


def trajectories_frame(paths):
    """One row per grid point and path: ``t,x1..xn,u1..um,path_id``."""
    frames = []
    for path in paths:
        n = path.states.shape[1]
        m = path.inputs.shape[1]
        frame = pd.DataFrame({'t': path.times})
        for i in range(n):
            frame['x%d' % (i + 1)] = path.states[:, i]
        for i in range(m):
            frame['u%d' % (i + 1)] = path.inputs[:, i]
        frame['path_id'] = path.path_id
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=['t', 'path_id'])
    return pd.concat(frames, ignore_index=True)


def meanfield_frame(paths):
    """``t,xbar1..xbarn,method`` for each mean-field path."""
    frames = []
    for path in paths:
        frame = pd.DataFrame({'t': path.times})
        for i in range(path.n):
            frame['xbar%d' % (i + 1)] = path.xbar[:, i]
        frame['method'] = path.method
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def convergence_frame(traces):
    rows = [row for trace in traces for row in trace.to_rows()]
    frame = pd.DataFrame(rows)
    leading = ['loop', 'k', 'update_norm', 'residual_norm']
    gains = sorted(c for c in frame.columns if c not in leading)
    return frame[leading + gains]


def write_trajectories(paths, directory, fmt='csv'):
    return write_table(trajectories_frame(paths), directory, 'trajectories',
                       fmt)


def write_meanfield(paths, directory, fmt='csv'):
    return write_table(meanfield_frame(list(paths)), directory, 'meanfield',
                       fmt)


def write_convergence(traces, directory, fmt='csv'):
    return write_table(convergence_frame(traces), directory, 'convergence',
                       fmt)


def write_datasets(fb_ds, ff_ds, directory, rule='trapezoid'):
    """Write both datasets block by block with a manifest naming l, n, m
    and the sampling plan.

    """
    target = os.path.join(directory, DATASET_DIR)
    _ensure_dir(target)
    files = {}
    for prefix, ds in (('feedback', fb_ds), ('feedforward', ff_ds)):
        for name, block in ds.blocks().items():
            filename = '%s_%s.csv' % (prefix, name)
            frame = pd.DataFrame(block, columns=['c%d' % (j + 1) for j in
                                                 range(block.shape[1])])
            frame.to_csv(os.path.join(target, filename), index=False,
                         float_format=FLOAT_FORMAT)
            files['%s.%s' % (prefix, name)] = filename
    manifest = {'l': fb_ds.l, 'n': fb_ds.n, 'm': fb_ds.m,
                'plan': fb_ds.plan.to_document(), 'quadrature': rule,
                'files': files}
    write_json(manifest, os.path.join(target, MANIFEST))
    return target


def _read_manifest(directory):
    path = os.path.join(directory, DATASET_DIR, MANIFEST)
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ValidationError("cannot read dataset manifest %s: %s"
                              % (path, e))


def _read_block(directory, manifest, key):
    path = os.path.join(directory, DATASET_DIR, manifest['files'][key])
    # pandas hands back Fortran-ordered blocks
    block = np.ascontiguousarray(
        pd.read_csv(path, float_precision='round_trip').to_numpy(dtype=float))
    if block.shape[0] != manifest['l']:
        raise ValidationError("%s has %d rows, the manifest says %d"
                              % (path, block.shape[0], manifest['l']))
    return block


def load_feedback_dataset(directory):
    manifest = _read_manifest(directory)
    return FeedbackDataset(
        plan=SamplingPlan(**manifest['plan']),
        **{name: _read_block(directory, manifest, 'feedback.' + name)
           for name in ('delta_xhat', 'Ixx', 'Ixu', 'Iuhat')})


def load_feedforward_dataset(directory):
    manifest = _read_manifest(directory)
    return FeedforwardDataset(
        plan=SamplingPlan(**manifest['plan']),
        **{name: _read_block(directory, manifest, 'feedforward.' + name)
           for name in ('delta_xbarhat', 'Ixbarxbar', 'Ixbarubar')})


def write_run(report, directory, fmt='csv'):
    """Every output of a completed run."""
    quadrature = report.config.get('quadrature', 'trapezoid')
    write_trajectories(report.trajectories, directory, fmt)
    write_datasets(report.feedback_dataset, report.feedforward_dataset,
                   directory, quadrature)
    write_meanfield(report.meanfield.values(), directory, fmt)
    write_convergence(report.traces, directory, fmt)
    write_json(report.to_document(), os.path.join(directory, 'report.json'))
    return directory
