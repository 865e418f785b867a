"""Command-line interface: ``mrivit split|preprocess|train|eval|predict|rollout``.

Exit codes are 0 on success, 1 for user errors (bad paths, layouts, configs
or checkpoints, reported in one line on stderr) and 2 for unexpected
failures (logged with their traceback).
"""
import argparse
import logging
import sys

from .augment import AugmentConfig
from .config import RunConfig, get_config
from .constants import Constants
from .dataset import class_distribution, split_summary
from .facade import Facade
from .imaging import ClaheConfig
from .metrics import format_report
from .training import FullStageConfig, HeadStageConfig
from .utils import format_fixed, format_table

logger = logging.getLogger('mrivit')

_DEFAULTS = RunConfig()

# Command-line flags that map onto config keys; ``None`` keeps the file value.
_OVERRIDES = ('data_root', 'cache_root', 'output_dir', 'manifest', 'seed', 'model', 'threads',
              'batch_size')


def _defaults_note():
    clahe, augment = ClaheConfig(), AugmentConfig()
    stage1, stage2 = HeadStageConfig(), FullStageConfig()
    return (
        "Defaults: CLAHE %dx%d tiles, clip %s; flip p=%s, rotation +/-%s deg, translation "
        "+/-%s, zoom +/-%s, contrast +/-%s; MixUp alpha %s, CutMix alpha %s; stage 1 %d "
        "epochs at lr %g; stage 2 up to %d epochs at lr %g (backbone) / %g (head) annealed "
        "to %g, patience %d; label smoothing %s; EMA decay %s."
        % (clahe.tiles_x, clahe.tiles_y, clahe.clip_limit, augment.hflip_prob,
           augment.rot_degrees, augment.translate_frac, augment.zoom_frac,
           augment.contrast_frac, augment.mixup_alpha, augment.cutmix_alpha, stage1.epochs,
           stage1.head_lr, stage2.max_epochs, stage2.backbone_lr, stage2.head_lr,
           stage2.lr_min, stage2.patience, _DEFAULTS.training.label_smoothing,
           _DEFAULTS.training.ema_decay))


def _add_common(parser):
    parser.add_argument('--config', metavar='FILE',
                        help="key = value configuration file (default: built-in defaults)")
    parser.add_argument('--threads', type=int,
                        help="worker threads, 0 for every core (default: %d)"
                        % _DEFAULTS.threads)
    parser.add_argument('--log-level', default='INFO',
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'),
                        help="logging level on stderr (default: INFO)")


def _add_checkpoint(parser):
    parser.add_argument('--checkpoint', required=True, metavar='FILE',
                        help="checkpoint written by train (e.g. %s)" % Constants.EMA_CHECKPOINT)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='mrivit', description="Brain-tumour MRI classification with a Vision Transformer.",
        epilog=_defaults_note())
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    split = commands.add_parser('split', help="inventory a data root and split it 80/10/10")
    _add_common(split)
    split.add_argument('--data-root', dest='data_root', metavar='DIR',
                       help="directory with one sub-directory per class")
    split.add_argument('--seed', type=int,
                       help="split seed (default: %d)" % _DEFAULTS.seed)
    split.add_argument('--out', dest='manifest', metavar='FILE',
                       help="manifest CSV to write (default: %s)" % _DEFAULTS.manifest)
    split.add_argument('--montage', metavar='FILE',
                       help="also write a PNG with %d training images per class (default: off)"
                       % Constants.MONTAGE_PER_CLASS)

    preprocess = commands.add_parser('preprocess', help="cache CLAHE-processed images")
    _add_common(preprocess)
    preprocess.add_argument('--manifest', metavar='FILE',
                            help="manifest CSV (default: %s)" % _DEFAULTS.manifest)
    preprocess.add_argument('--src', dest='data_root', metavar='DIR',
                            help="data root the manifest paths are relative to")
    preprocess.add_argument('--cache', dest='cache_root', metavar='DIR',
                            help="cache directory receiving the PNG copies")

    train = commands.add_parser('train', help="two-stage fine-tuning with EMA",
                                epilog=_defaults_note())
    _add_common(train)
    train.add_argument('--out-dir', dest='output_dir', metavar='DIR',
                       help="checkpoints and reports (default: %s)" % _DEFAULTS.output_dir)
    train.add_argument('--manifest', metavar='FILE',
                       help="manifest CSV (default: %s)" % _DEFAULTS.manifest)
    train.add_argument('--model', choices=(Constants.PRESET_VIT_B16, Constants.PRESET_TINY),
                       help="model preset (default: %s)" % _DEFAULTS.model)
    train.add_argument('--seed', type=int, help="master seed (default: %d)" % _DEFAULTS.seed)
    train.add_argument('--batch-size', dest='batch_size', type=int,
                       help="batch size (default: %d)" % _DEFAULTS.batch_size)

    evaluate = commands.add_parser('eval', help="score a split and write the metrics report")
    _add_common(evaluate)
    evaluate.add_argument('--checkpoint', metavar='FILE',
                          help="checkpoint to score (required unless --predictions is given)")
    evaluate.add_argument('--predictions', metavar='FILE',
                          help="re-score a saved %s instead of running a model"
                          % Constants.PREDICTIONS_CSV)
    evaluate.add_argument('--manifest', metavar='FILE',
                          help="manifest CSV (default: %s)" % _DEFAULTS.manifest)
    evaluate.add_argument('--split', default=Constants.TEST, choices=Constants.SPLITS,
                          help="split to score (default: test)")
    evaluate.add_argument('--tta', action='store_true',
                          help="average the five test-time views (default: off)")
    evaluate.add_argument('--out-dir', dest='output_dir', metavar='DIR',
                          help="report directory (default: %s)" % _DEFAULTS.output_dir)

    predict = commands.add_parser('predict', help="classify one image")
    _add_common(predict)
    _add_checkpoint(predict)
    predict.add_argument('--image', required=True, metavar='FILE', help="PNG or JPEG scan")
    predict.add_argument('--tta', action='store_true',
                         help="average the five test-time views (default: off)")
    predict.add_argument('--preprocessed', action='store_true',
                         help="the image already went through CLAHE (default: apply it)")

    rollout = commands.add_parser('rollout', help="attention rollout heatmap of one image")
    _add_common(rollout)
    _add_checkpoint(rollout)
    rollout.add_argument('--image', required=True, metavar='FILE', help="PNG or JPEG scan")
    rollout.add_argument('--out', dest='output_dir', metavar='DIR',
                         help="directory for <stem>%s.png and .csv (default: %s)"
                         % (Constants.ROLLOUT_SUFFIX, _DEFAULTS.output_dir))
    rollout.add_argument('--alpha', type=float, default=0.45,
                         help="heatmap opacity (default: 0.45)")
    rollout.add_argument('--panel', action='store_true',
                         help="also write the scan and overlay side by side (default: off)")
    rollout.add_argument('--preprocessed', action='store_true',
                         help="the image already went through CLAHE (default: apply it)")
    return parser


# ---[ COMMANDS ]---

def cmd_split(facade, args):
    outcome = facade.split(montage_path=args.montage)
    distribution = [(name, count, format_fixed(100.0 * share, 2))
                    for name, count, share in class_distribution(outcome.manifest)]
    print(format_table(('class', 'images', 'percent'), distribution))
    rows = []
    for row in split_summary(outcome.assignment):
        if row[0] == 'proportion':
            row = (row[0],) + tuple(format_fixed(value, 4) for value in row[1:])
        rows.append(row)
    print(format_table(('class',) + Constants.SPLITS + ('total',), rows), end='')
    for warning in outcome.manifest.warnings:
        print('warning: %s' % warning, file=sys.stderr)


def cmd_preprocess(facade, args):
    print('%d written' % facade.preprocess())


def cmd_train(facade, args):
    result = facade.train()
    print(result.report.summary(), end='')


def cmd_eval(facade, args):
    if args.predictions:
        report = facade.rescore(args.predictions)
    elif args.checkpoint:
        report = facade.evaluate(args.checkpoint, split=args.split, tta=args.tta)
    else:
        raise ValueError("eval needs --checkpoint or --predictions")
    print(format_report(report), end='')


def cmd_predict(facade, args):
    result = facade.predict(args.checkpoint, args.image, tta=args.tta,
                            preprocessed=args.preprocessed)
    print(Constants.CLASS_NAMES[result.predicted])
    for name, probability in zip(Constants.CLASS_NAMES, result.probabilities):
        print('%s %s' % (name, format_fixed(probability, 6)))


def cmd_rollout(facade, args):
    outcome = facade.rollout(args.checkpoint, args.image, panel=args.panel, alpha=args.alpha,
                             preprocessed=args.preprocessed)
    for path in (outcome.image_path, outcome.grid_path, outcome.panel_path):
        if path:
            print(path)


COMMANDS = {
    'split': cmd_split,
    'preprocess': cmd_preprocess,
    'train': cmd_train,
    'eval': cmd_eval,
    'predict': cmd_predict,
    'rollout': cmd_rollout,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')
    overrides = {key: getattr(args, key) for key in _OVERRIDES if hasattr(args, key)}
    try:
        facade = Facade(get_config(args.config, overrides))
        COMMANDS[args.command](facade, args)
    except (ValueError, OSError) as error:
        print('error: %s' % error, file=sys.stderr)
        return Constants.EXIT_USER_ERROR
    except Exception:  # pylint: disable=W0703
        logger.exception("Unexpected failure while running %s", args.command)
        return Constants.EXIT_INTERNAL_ERROR
    return Constants.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
