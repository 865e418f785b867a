import os

import numpy as np
import pytest

from mrivit.cli import build_parser, main
from mrivit.constants import Constants
from mrivit.dataset import read_manifest
from mrivit.imaging import load_image
from mrivit.metrics import write_predictions
from mrivit.utils import read_csv

from . import write_class_tree

PER_CLASS = 10


@pytest.fixture(scope='module')
def run(tmpdir_factory):
    """A split data root plus one short tiny-model training run."""
    base = tmpdir_factory.mktemp('cli')
    data_root = str(base.join('data'))
    write_class_tree(data_root, [PER_CLASS] * Constants.NUM_CLASSES)
    paths = {
        'base': str(base),
        'data_root': data_root,
        'manifest': str(base.join('manifest.csv')),
        'output_dir': str(base.join('run')),
        'config': str(base.join('run.cfg')),
    }
    with open(paths['config'], 'w') as handle:
        handle.write('data_root = %s\n' % data_root)
        handle.write('manifest = %s\n' % paths['manifest'])
        handle.write('output_dir = %s\n' % paths['output_dir'])
        handle.write('model = tiny\n')
        handle.write('batch_size = 8\n')
        handle.write('stage1.epochs = 1\n')
        handle.write('stage2.max_epochs = 1\n')
    assert main(['split', '--data-root', data_root, '--out', paths['manifest']]) == 0
    assert main(['train', '--config', paths['config'], '--threads', '2']) == 0
    paths['checkpoint'] = os.path.join(paths['output_dir'], Constants.EMA_CHECKPOINT)
    paths['image'] = os.path.join(data_root, 'meningioma', 'meningioma_000.png')
    return paths


def test_split(run, capsys):
    manifest = run['base'] + '/again.csv'
    assert main(['split', '--data-root', run['data_root'], '--out', manifest]) == 0
    out = capsys.readouterr().out
    assert 'glioma' in out and '25.00' in out
    assignment = read_manifest(manifest)
    assert len(assignment.entries) == 4 * PER_CLASS
    assert len(assignment.subset(Constants.TEST)) == 4
    assert len(assignment.subset(Constants.VAL)) == 4
    with open(manifest) as handle, open(run['manifest']) as first:
        assert handle.read() == first.read()
    summary = list(read_csv(run['base'] + '/again_summary.csv'))
    assert summary[0]['class'] == 'glioma'
    assert summary[0]['train'] == '8'


def test_preprocess(run, capsys):
    cache = run['base'] + '/cache'
    args = ['preprocess', '--manifest', run['manifest'], '--src', run['data_root'],
            '--cache', cache]
    assert main(args) == 0
    assert capsys.readouterr().out == '%d written\n' % (4 * PER_CLASS)
    assert main(args) == 0
    assert capsys.readouterr().out == '0 written\n'


def test_train_outputs(run):
    names = set(os.listdir(run['output_dir']))
    for name in (Constants.RAW_CHECKPOINT, Constants.EMA_CHECKPOINT, Constants.BEST_CHECKPOINT,
                 Constants.TRAIN_REPORT_CSV, Constants.TRAIN_SUMMARY_TXT,
                 Constants.RUN_CONFIG_TXT):
        assert name in names
    records = list(read_csv(os.path.join(run['output_dir'], Constants.TRAIN_REPORT_CSV)))
    assert [row['stage'] for row in records] == ['1', '2']
    with open(os.path.join(run['output_dir'], Constants.TRAIN_SUMMARY_TXT)) as handle:
        summary = handle.read()
    assert 'epochs run: 2' in summary
    assert 'stopping reason: max epochs reached' in summary
    with open(os.path.join(run['output_dir'], Constants.RUN_CONFIG_TXT)) as handle:
        assert 'model = tiny\n' in handle.read()


def test_eval_and_rescore(run, capsys):
    out_dir = run['base'] + '/eval'
    assert main(['eval', '--config', run['config'], '--checkpoint', run['checkpoint'],
                 '--tta', '--out-dir', out_dir]) == 0
    printed = capsys.readouterr().out
    assert printed.splitlines()[0].split()[0] == 'Class'
    predictions = os.path.join(out_dir, Constants.PREDICTIONS_CSV)
    assert len(list(read_csv(predictions))) == 4
    for name in (Constants.METRICS_TXT, Constants.METRICS_CSV, Constants.CONFUSION_CSV,
                 Constants.CONFUSION_NORMALIZED_CSV):
        assert os.path.exists(os.path.join(out_dir, name))

    assert main(['eval', '--predictions', predictions, '--out-dir', run['base'] + '/re']) == 0
    assert capsys.readouterr().out == printed


def test_predict(run, capsys):
    assert main(['predict', '--checkpoint', run['checkpoint'], '--image', run['image'],
                 '--tta']) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] in Constants.CLASS_NAMES
    assert [line.split()[0] for line in lines[1:]] == list(Constants.CLASS_NAMES)
    assert sum(float(line.split()[1]) for line in lines[1:]) == pytest.approx(1.0, abs=1e-5)


def test_rollout(run, capsys):
    out_dir = run['base'] + '/maps'
    assert main(['rollout', '--checkpoint', run['checkpoint'], '--image', run['image'],
                 '--out', out_dir, '--panel']) == 0
    printed = capsys.readouterr().out.splitlines()
    assert [os.path.basename(path) for path in printed] == [
        'meningioma_000_rollout.png', 'meningioma_000_rollout.csv', 'meningioma_000_panel.png']
    for path in printed:
        assert os.path.exists(path)


def test_missing_data_root(tmpdir, capsys):
    code = main(['split', '--data-root', str(tmpdir.join('absent')),
                 '--out', str(tmpdir.join('m.csv'))])
    assert code == Constants.EXIT_USER_ERROR
    assert 'is not a directory' in capsys.readouterr().err


def test_eval_needs_a_source(run, capsys):
    assert main(['eval', '--config', run['config']]) == Constants.EXIT_USER_ERROR
    assert '--checkpoint or --predictions' in capsys.readouterr().err


def test_bad_config(tmpdir, capsys):
    path = str(tmpdir.join('bad.cfg'))
    with open(path, 'w') as handle:
        handle.write('stage3.epochs = 2\n')
    assert main(['split', '--config', path]) == Constants.EXIT_USER_ERROR
    assert 'stage3.epochs' in capsys.readouterr().err


def test_missing_checkpoint(tmpdir, capsys):
    code = main(['predict', '--checkpoint', str(tmpdir.join('none.ckpt')),
                 '--image', str(tmpdir.join('none.png'))])
    assert code == Constants.EXIT_USER_ERROR


def test_command_is_required():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_missing_class_directory(tmpdir, capsys):
    root = str(tmpdir.join('data'))
    write_class_tree(root, [3, 3, 3, 0])
    code = main(['split', '--data-root', root, '--out', str(tmpdir.join('m.csv'))])
    assert code == Constants.EXIT_USER_ERROR
    assert 'pituitary' in capsys.readouterr().err


def test_rescoring_the_published_outcome(tmpdir, capsys):
    rows = [(0, 0, 159), (0, 2, 3), (1, 1, 200), (2, 2, 165), (3, 3, 174), (3, 2, 2)]
    y_true, y_pred = [], []
    for true, predicted, count in rows:
        y_true += [true] * count
        y_pred += [predicted] * count
    path = str(tmpdir.join(Constants.PREDICTIONS_CSV))
    write_predictions(path, ['%d.png' % index for index in range(len(y_true))], y_true, y_pred,
                      np.eye(Constants.NUM_CLASSES)[y_pred])
    assert main(['eval', '--predictions', path, '--out-dir', str(tmpdir.join('out'))]) == 0
    lines = [line.split() for line in capsys.readouterr().out.splitlines()]
    assert lines[3] == ['meningioma', '0.9706', '1.0000', '0.9851', '165']
    assert lines[-1] == ['Overall', 'Acc', '0.9929', '703']


def test_training_is_repeatable(run):
    out_dir = run['base'] + '/again'
    assert main(['train', '--config', run['config'], '--out-dir', out_dir,
                 '--threads', '1']) == 0
    for name in (Constants.TRAIN_REPORT_CSV, Constants.EMA_CHECKPOINT, Constants.RAW_CHECKPOINT):
        with open(os.path.join(out_dir, name), 'rb') as handle, \
                open(os.path.join(run['output_dir'], name), 'rb') as first:
            assert handle.read() == first.read()


def test_split_montage(run):
    path = run['base'] + '/montage/classes.png'
    assert main(['split', '--data-root', run['data_root'], '--out', run['base'] + '/m.csv',
                 '--montage', path]) == 0
    side = Constants.MONTAGE_PER_CLASS * (Constants.MONTAGE_TILE + 2) - 2
    assert load_image(path).shape == (Constants.NUM_CLASSES * (Constants.MONTAGE_TILE + 2) - 2,
                                      side, 3)
