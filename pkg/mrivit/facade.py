import logging
import os
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .checkpoint import load_params, save_params
from .config import dump_config, get_config
from .constants import Constants
from .dataset import (
    FileSamples,
    cache_clahe,
    cache_path,
    read_manifest,
    scan_directory,
    split_summary,
    stratified_split,
    write_manifest,
)
from .imaging import clahe, load_image, montage, resize_bilinear, save_png, side_by_side
from .inference import render_rollout, rollout_for_image, tta_predict, write_grid_csv
from .metrics import (
    evaluate,
    read_predictions,
    write_confusion_csv,
    write_predictions,
    write_report,
)
from .model import init_params
from .rng import stream
from .training import train_two_stage
from .utils import write_csv

logger = logging.getLogger('mrivit')

SplitOutcome = namedtuple('SplitOutcome',
                          ['manifest', 'assignment', 'summary_path', 'montage_path'])
RolloutOutcome = namedtuple('RolloutOutcome', ['rollout', 'image_path', 'grid_path', 'panel_path'])


class Facade:
    """Facade exposing the public behaviour of the pipeline.

    Every command of :mod:`mrivit.cli` maps to one method, so the pipeline
    can be driven from Python without going through the command line:

    * :meth:`split` to inventory a data root and write the stratified manifest,
    * :meth:`montage` to draw sample training images of every class,
    * :meth:`preprocess` to cache CLAHE-processed copies of the images,
    * :meth:`train` to run the two-stage fine-tuning,
    * :meth:`evaluate` to score a split (optionally with TTA) and
      :meth:`rescore` to re-check a saved predictions file,
    * :meth:`predict` and :meth:`rollout` for single images.

    .. note::

        Without a ``cache_root`` images are read from ``data_root`` and CLAHE
        is applied on the fly, which gives the same pixels as the cache.
    """
    def __init__(self, config=None):
        self.config = config or get_config()

    # ---[ DATA ]---

    def split(self, data_root=None, manifest_path=None, seed=None, montage_path=None):
        """Scan ``data_root``, split it and write the manifest and its summary.

        :param montage_path: When set, also write a PNG with sample training
            images of every class (see :meth:`montage`).
        :return: ``SplitOutcome(manifest, assignment, summary_path, montage_path)``.
        """
        data_root = data_root or self.config.data_root
        manifest_path = manifest_path or self.config.manifest
        seed = self.config.seed if seed is None else seed
        if not data_root:
            self.config.require('data_root')
        manifest = scan_directory(data_root)
        assignment = stratified_split(manifest, self.config.split_ratios, seed)
        directory = os.path.dirname(os.path.abspath(manifest_path))
        os.makedirs(directory, exist_ok=True)
        write_manifest(assignment, manifest_path)
        summary_path = (os.path.splitext(manifest_path)[0]
                        + Constants.SPLIT_SUMMARY_SUFFIX + '.csv')
        rows = [(row[0],) + tuple(
            value if isinstance(value, int) else repr(float(value)) for value in row[1:])
            for row in split_summary(assignment)]
        write_csv(summary_path, ('class',) + Constants.SPLITS + ('total',), rows)
        logger.info("Wrote manifest of %d images to %s", len(assignment.entries), manifest_path)
        if montage_path:
            self.montage(assignment, montage_path, data_root)
        return SplitOutcome(manifest, assignment, summary_path, montage_path)

    def montage(self, assignment, out_path, data_root=None,
                per_class=Constants.MONTAGE_PER_CLASS, tile=Constants.MONTAGE_TILE):
        """Write one row per class with its first ``per_class`` training images.

        Images are taken in manifest order, so the same split always gives the
        same montage. A class with fewer training images leaves empty cells.
        """
        data_root = data_root or self.config.data_root
        training = assignment.subset(Constants.TRAIN)
        rows = []
        for label in range(Constants.NUM_CLASSES):
            chosen = [entry for entry in training if entry.label == label][:per_class]
            rows.append([load_image(os.path.join(data_root, entry.relative_path))
                         for entry in chosen])
        save_png(montage(rows, tile), out_path)
        logger.info("Wrote a montage of %d images to %s", sum(len(row) for row in rows),
                    out_path)
        return out_path

    def preprocess(self, manifest_path=None, src=None, cache=None):
        """Cache CLAHE output for every manifest entry; return the number written."""
        src = src or self.config.data_root
        cache = cache or self.config.cache_root
        if not src:
            self.config.require('data_root')
        if not cache:
            self.config.require('cache_root')
        assignment = read_manifest(manifest_path or self.config.manifest)
        return cache_clahe(assignment.entries, src, cache, self.config.clahe,
                           threads=self.config.worker_count)

    def samples(self, entries):
        """Samples for ``entries``, read from the cache when one is configured."""
        if self.config.cache_root:
            cached = [entry._replace(relative_path=cache_path(entry.relative_path))
                      for entry in entries]
            return FileSamples(self.config.cache_root, cached)
        self.config.require('data_root')
        clahe_cfg = self.config.clahe
        return FileSamples(self.config.data_root, entries,
                           transform=lambda image: clahe(image, clahe_cfg))

    def load_scan(self, path, preprocessed=False):
        """Read one image, applying CLAHE unless it was already processed."""
        image = load_image(path)
        return image if preprocessed else clahe(image, self.config.clahe)

    # ---[ TRAINING ]---

    def new_params(self):
        """Freshly initialized parameters for the configured model preset."""
        return init_params(self.config.model_config(),
                           stream(self.config.seed, Constants.STREAM_INIT))

    def train(self, out_dir=None, manifest_path=None):
        """Train from scratch and write checkpoints and reports into ``out_dir``.

        :return: :class:`~mrivit.training.TrainResult`.
        """
        out_dir = out_dir or self.config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        assignment = read_manifest(manifest_path or self.config.manifest)
        train_samples = self.samples(assignment.subset(Constants.TRAIN))
        val_samples = self.samples(assignment.subset(Constants.VAL))
        with open(os.path.join(out_dir, Constants.RUN_CONFIG_TXT), 'w',
                  encoding='utf-8') as handle:
            handle.write(dump_config(self.config))

        params = self.new_params()
        logger.info("Training %s (%d parameters) on %d images, validating on %d",
                    self.config.model, params.count(), len(train_samples), len(val_samples))
        result = train_two_stage(
            params, train_samples, val_samples, cfg=self.config.training,
            augment_cfg=self.config.augment, seed=self.config.seed,
            threads=self.config.worker_count, checkpoint_dir=out_dir,
            digest=self.config.checkpoint_digest)
        save_params(params, os.path.join(out_dir, Constants.RAW_CHECKPOINT),
                    self.config.checkpoint_digest)
        save_params(result.params, os.path.join(out_dir, Constants.EMA_CHECKPOINT),
                    self.config.checkpoint_digest)
        result.report.write_csv(os.path.join(out_dir, Constants.TRAIN_REPORT_CSV))
        result.report.write_summary(os.path.join(out_dir, Constants.TRAIN_SUMMARY_TXT))
        return result

    # ---[ EVALUATION ]---

    def _write_metrics(self, report, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        write_report(report, os.path.join(out_dir, Constants.METRICS_TXT),
                     os.path.join(out_dir, Constants.METRICS_CSV))
        write_confusion_csv(report.confusion, os.path.join(out_dir, Constants.CONFUSION_CSV))
        write_confusion_csv(report.confusion,
                            os.path.join(out_dir, Constants.CONFUSION_NORMALIZED_CSV),
                            normalized=True)

    def evaluate(self, checkpoint, split=Constants.TEST, tta=False, out_dir=None,
                 manifest_path=None):
        """Score one split of the manifest with a checkpoint.

        :param str checkpoint: Checkpoint path (EMA weights for final models).
        :param str split: ``train``, ``val`` or ``test``.
        :param bool tta: Average the five test-time views per image.
        :return: :class:`~mrivit.metrics.MetricsReport`; ``predictions.csv``,
            ``metrics.txt``/``metrics.csv`` and both confusion CSVs are
            written into ``out_dir``.
        """
        out_dir = out_dir or self.config.output_dir
        params = load_params(checkpoint)
        assignment = read_manifest(manifest_path or self.config.manifest)
        entries = assignment.subset(split)
        samples = self.samples(entries)

        def score(index):
            return tta_predict(params, samples.image(index), tta=tta)

        with ThreadPoolExecutor(max_workers=self.config.worker_count) as executor:
            results = list(executor.map(score, range(len(samples))))
        labels = [entry.label for entry in entries]
        predicted = [result.predicted for result in results]
        probabilities = [result.probabilities for result in results]
        report = evaluate(labels, predicted)
        os.makedirs(out_dir, exist_ok=True)
        write_predictions(os.path.join(out_dir, Constants.PREDICTIONS_CSV),
                          [entry.relative_path for entry in entries], labels, predicted,
                          probabilities)
        self._write_metrics(report, out_dir)
        logger.info("Evaluated %d %s images (tta=%s): accuracy %.4f",
                    len(entries), split, tta, report.accuracy)
        return report

    def rescore(self, predictions_path, out_dir=None):
        """Recompute every metric from a saved predictions CSV, without a model."""
        y_true, y_pred = read_predictions(predictions_path)
        report = evaluate(y_true, y_pred)
        self._write_metrics(report, out_dir or self.config.output_dir)
        return report

    def predict(self, checkpoint, image_path, tta=False, preprocessed=False):
        """Classify one image; see :func:`~mrivit.inference.tta_predict`."""
        params = load_params(checkpoint)
        return tta_predict(params, self.load_scan(image_path, preprocessed), tta=tta)

    def rollout(self, checkpoint, image_path, out_dir=None, panel=False, alpha=0.45,
                preprocessed=False):
        """Write the Attention Rollout overlay of one image.

        The overlay is drawn on the image as the model sees it (resized to the
        input size). Files are named after the image: ``<stem>_rollout.png``,
        ``<stem>_rollout.csv`` (the normalized patch grid) and, with
        ``panel``, ``<stem>_panel.png`` showing the scan next to the overlay.
        """
        out_dir = out_dir or self.config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        params = load_params(checkpoint)
        image = self.load_scan(image_path, preprocessed)
        rollout = rollout_for_image(params, image, source=image_path)
        size = params.config.image_size
        displayed = resize_bilinear(image, size, size)
        overlay = render_rollout(displayed, rollout, alpha)

        stem = os.path.join(out_dir, os.path.splitext(os.path.basename(image_path))[0])
        image_out = stem + Constants.ROLLOUT_SUFFIX + '.png'
        grid_out = stem + Constants.ROLLOUT_SUFFIX + '.csv'
        save_png(overlay, image_out)
        write_grid_csv(rollout, grid_out)
        panel_out = None
        if panel:
            panel_out = stem + Constants.PANEL_SUFFIX + '.png'
            save_png(side_by_side(displayed, overlay), panel_out)
        logger.info("Rollout of %s written to %s (peak at patch %d)", image_path, image_out,
                    int(np.argmax(rollout.grid)))
        return RolloutOutcome(rollout, image_out, grid_out, panel_out)
