"""Dataset inventory, stratified splitting, CLAHE caching and batch assembly.

The expected directory layout is one sub-directory per class::

    root/
        glioma/      *.png|*.jpg|*.jpeg
        healthy/
        meningioma/
        pituitary/

Manifests are serialized as CSV with a ``relative_path,label,split`` header.
Paths are relative to the data root and always use forward slashes.
"""
import logging
import os
from collections import Counter, namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List

import numpy as np
from PIL import Image

from .constants import Constants
from .exceptions import LayoutException, SplitException
from .imaging import ClaheConfig, clahe, ensure_channels, load_image, resize_bilinear, save_png
from .rng import stream
from .utils import read_csv, round_half_up, write_csv

logger = logging.getLogger('mrivit')

ManifestEntry = namedtuple('ManifestEntry', ['relative_path', 'label'])
SplitEntry = namedtuple('SplitEntry', ['relative_path', 'label', 'split'])
Batch = namedtuple('Batch', ['images', 'labels'])
Batch.__doc__ = """Model input: ``images`` (B, C, H, W) in [0, 1], ``labels`` (B, K)."""


def label_index(name):
    try:
        return Constants.CLASS_NAMES.index(name)
    except ValueError:
        raise LayoutException(
            "Unknown class label %r, expected one of %s"
            % (name, ', '.join(Constants.CLASS_NAMES)))


@dataclass
class Manifest:
    """Labeled file inventory, sorted by relative path."""
    entries: List[ManifestEntry]
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        paths = [entry.relative_path for entry in self.entries]
        if len(set(paths)) != len(paths):
            raise LayoutException("Manifest paths must be unique")
        for entry in self.entries:
            if not 0 <= entry.label < Constants.NUM_CLASSES:
                raise LayoutException(
                    "Invalid label %r for %s" % (entry.label, entry.relative_path))

    def __len__(self):
        return len(self.entries)

    def by_class(self):
        grouped = [[] for _ in Constants.CLASS_NAMES]
        for entry in self.entries:
            grouped[entry.label].append(entry)
        return grouped


@dataclass
class SplitAssignment:
    entries: List[SplitEntry]
    seed: int

    def subset(self, split):
        return [entry for entry in self.entries if entry.split == split]

    def counts(self):
        """Return ``{split: [count per class]}``."""
        table = {split: [0] * Constants.NUM_CLASSES for split in Constants.SPLITS}
        for entry in self.entries:
            table[entry.split][entry.label] += 1
        return table


# ---[ INVENTORY ]---

def _is_readable(path):
    try:
        with Image.open(path) as handle:
            handle.verify()
    except Exception as error:  # pylint: disable=W0703
        return str(error) or error.__class__.__name__
    return None


def scan_directory(root):
    """Build the manifest of ``root``.

    :param root: Data root holding exactly the four class directories.
    :return: A :class:`Manifest`, entries sorted lexicographically by path.
    :raises LayoutException: a class directory is missing or empty, or an
        unexpected directory is present.

    Files that cannot be decoded are skipped; each one is logged and
    recorded in ``Manifest.warnings``.
    """
    if not os.path.isdir(root):
        raise LayoutException("Data root %s is not a directory" % root)
    directories = sorted(
        name for name in os.listdir(root)
        if os.path.isdir(os.path.join(root, name)) and not name.startswith('.'))
    unexpected = [name for name in directories if name not in Constants.CLASS_NAMES]
    if unexpected:
        raise LayoutException(
            "Unexpected directories in %s: %s (expected only %s)"
            % (root, ', '.join(unexpected), ', '.join(Constants.CLASS_NAMES)))
    missing = [name for name in Constants.CLASS_NAMES if name not in directories]
    if missing:
        raise LayoutException("Missing class directories in %s: %s" % (root, ', '.join(missing)))

    entries, warnings = [], []
    for label, name in enumerate(Constants.CLASS_NAMES):
        class_dir = os.path.join(root, name)
        found = 0
        for current, subdirs, files in os.walk(class_dir):
            subdirs.sort()
            for filename in sorted(files):
                if not filename.lower().endswith(Constants.IMAGE_EXTENSIONS):
                    continue
                full_path = os.path.join(current, filename)
                relative = os.path.relpath(full_path, root).replace(os.sep, '/')
                problem = _is_readable(full_path)
                if problem is not None:
                    message = "Skipping unreadable image %s: %s" % (relative, problem)
                    logger.warning(message)
                    warnings.append(message)
                    continue
                entries.append(ManifestEntry(relative, label))
                found += 1
        if not found:
            raise LayoutException("Class directory %s contains no images" % class_dir)

    entries.sort(key=lambda entry: entry.relative_path)
    return Manifest(entries, warnings)


def class_distribution(manifest):
    """Per-class ``(name, count, fraction of the inventory)`` rows."""
    counts = Counter(entry.label for entry in manifest.entries)
    total = len(manifest)
    return [
        (name, counts[label], counts[label] / total if total else 0.0)
        for label, name in enumerate(Constants.CLASS_NAMES)]


# ---[ SPLIT ]---

def split_counts(size, ratios):
    """Return ``(train, val, test)`` counts for a class of ``size`` entries.

    Test and validation each get ``round_half_up(ratio * size)``; training
    takes the remainder.
    """
    n_test = round_half_up(ratios[2] * size)
    n_val = round_half_up(ratios[1] * size)
    return size - n_val - n_test, n_val, n_test


def stratified_split(manifest, ratios=(0.8, 0.1, 0.1), seed=42):
    """Partition ``manifest`` into train/val/test, class by class.

    Each class's path-sorted entries are shuffled with the generator for
    ``(seed, 'split', class index)``; the first test-count entries go to
    test, the next val-count entries to val, the rest to train.

    :raises SplitException: invalid ratios or a class too small to populate
        all three splits.
    """
    if len(ratios) != 3 or any(ratio < 0 for ratio in ratios) \
            or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitException("Split ratios must be three non-negative values summing to 1, "
                             "got %s" % (tuple(ratios),))

    assigned = []
    for label, members in enumerate(manifest.by_class()):
        name = Constants.CLASS_NAMES[label]
        if len(members) < 3:
            raise SplitException(
                "Class %s has %d entries; at least 3 are needed for train/val/test"
                % (name, len(members)))
        n_train, n_val, n_test = split_counts(len(members), ratios)
        if min(n_train, n_val, n_test) < 1:
            raise SplitException(
                "Class %s (%d entries) is too small for ratios %s"
                % (name, len(members), tuple(ratios)))
        ordered = sorted(members, key=lambda entry: entry.relative_path)
        order = stream(seed, Constants.STREAM_SPLIT, label).permutation(len(ordered))
        for position, index in enumerate(order):
            if position < n_test:
                split = Constants.TEST
            elif position < n_test + n_val:
                split = Constants.VAL
            else:
                split = Constants.TRAIN
            entry = ordered[index]
            assigned.append(SplitEntry(entry.relative_path, entry.label, split))

    assigned.sort(key=lambda entry: entry.relative_path)
    return SplitAssignment(assigned, seed)


def split_summary(assignment):
    """Rows of per-class split counts plus totals and overall split proportions.

    :return: list of ``(class, train, val, test, total)`` rows ending with a
        ``total`` row and a ``proportion`` row.
    """
    counts = assignment.counts()
    rows = []
    for label, name in enumerate(Constants.CLASS_NAMES):
        per_split = [counts[split][label] for split in Constants.SPLITS]
        rows.append((name, *per_split, sum(per_split)))
    totals = [sum(counts[split]) for split in Constants.SPLITS]
    grand_total = sum(totals)
    rows.append(('total', *totals, grand_total))
    rows.append(('proportion', *[
        total / grand_total if grand_total else 0.0 for total in totals], 1.0))
    return rows


def write_manifest(assignment, path):
    write_csv(
        path,
        [Constants.COLUMN_PATH, Constants.COLUMN_LABEL, Constants.COLUMN_SPLIT],
        [(entry.relative_path, Constants.CLASS_NAMES[entry.label], entry.split)
         for entry in assignment.entries])


def read_manifest(path, seed=None):
    """Load a manifest CSV written by :func:`write_manifest`."""
    entries = []
    for row in read_csv(path):
        try:
            relative, label, split = (
                row[Constants.COLUMN_PATH], row[Constants.COLUMN_LABEL],
                row[Constants.COLUMN_SPLIT])
        except KeyError as error:
            raise LayoutException("Manifest %s is missing column %s" % (path, error))
        if split not in Constants.SPLITS:
            raise LayoutException("Unknown split %r for %s in %s" % (split, relative, path))
        entries.append(SplitEntry(relative, label_index(label), split))
    return SplitAssignment(entries, seed)


# ---[ CACHE ]---

def cache_path(relative_path):
    """Cached files are always PNG, mirrored under the cache root."""
    return os.path.splitext(relative_path)[0] + '.png'


def _cache_one(entry, src_root, cache_root, cfg):
    source = os.path.join(src_root, entry.relative_path)
    target = os.path.join(cache_root, cache_path(entry.relative_path))
    if os.path.exists(target) and os.path.getmtime(target) >= os.path.getmtime(source):
        return False
    save_png(clahe(load_image(source), cfg), target)
    return True


def cache_clahe(entries, src_root, cache_root, cfg=None, threads=1):
    """Write CLAHE-processed PNG copies of ``entries`` under ``cache_root``.

    :param entries: Manifest or split entries (anything with ``relative_path``).
    :param int threads: Worker threads.
    :return: Number of files written. Outputs newer than their source are
        skipped, so reruns write nothing. A failing file is logged and does
        not stop the others.
    """
    cfg = cfg or ClaheConfig()
    entries = list(getattr(entries, 'entries', entries))

    def work(entry):
        try:
            return _cache_one(entry, src_root, cache_root, cfg)
        except (ValueError, OSError):
            logger.exception("Unable to cache CLAHE output for %s", entry.relative_path)
            return False

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        written = sum(executor.map(work, entries))
    logger.info("CLAHE cache: %d of %d files written", written, len(entries))
    return written


# ---[ BATCHES ]---

def to_model_input(image, image_size, channels):
    """Resize to the model input size and scale to a float32 ``(C, H, W)`` array in [0, 1]."""
    image = resize_bilinear(ensure_channels(image, channels), image_size, image_size)
    return (image.astype(np.float32) / 255.0).transpose(2, 0, 1)


def one_hot(labels, num_classes=Constants.NUM_CLASSES):
    encoded = np.zeros((len(labels), num_classes))
    encoded[np.arange(len(labels)), labels] = 1.0
    return encoded


class FileSamples:
    """Labeled samples read from ``root/<relative_path>``.

    ``transform`` is applied to every decoded image (CLAHE for uncached runs).
    """
    def __init__(self, root, entries, transform=None):
        self.root = root
        self.entries = list(entries)
        self.transform = transform

    def __len__(self):
        return len(self.entries)

    def label(self, index):
        return self.entries[index].label

    def image(self, index):
        image = load_image(os.path.join(self.root, self.entries[index].relative_path))
        return image if self.transform is None else self.transform(image)

    def name(self, index):
        return self.entries[index].relative_path


class MemorySamples:
    """Labeled samples held in memory (synthetic sets, tests)."""
    def __init__(self, images, labels):
        if len(images) != len(labels):
            raise ValueError("Got %d images for %d labels" % (len(images), len(labels)))
        self.images = list(images)
        self.labels = list(labels)

    def __len__(self):
        return len(self.images)

    def label(self, index):
        return self.labels[index]

    def image(self, index):
        return self.images[index]

    def name(self, index):
        return 'sample-%d' % index


def batch_order(size, shuffle_seed, epoch):
    """The permutation of ``range(size)`` used for ``(shuffle_seed, epoch)``."""
    return stream(shuffle_seed, Constants.STREAM_BATCH_ORDER, epoch).permutation(size)


def make_batches(samples, batch_size, shuffle_seed, epoch, image_size, channels,
                 augment=None, threads=1, shuffle=True):
    """Yield the batches of one epoch in deterministic order.

    :param samples: :class:`FileSamples` or :class:`MemorySamples`.
    :param int batch_size: At least 1; the final short batch is kept.
    :param augment: Optional ``augment(image, position)`` callable applied to
        each uint8 image before resizing; ``position`` is the sample's rank in
        the epoch order, so parallel loading stays deterministic.
    :param bool shuffle: Disable for evaluation passes (path order).
    :raises: Loading errors propagate with the offending path in the message.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1, got %r" % batch_size)
    if shuffle:
        order = batch_order(len(samples), shuffle_seed, epoch)
    else:
        order = np.arange(len(samples))

    def load(position):
        index = order[position]
        image = samples.image(index)
        if augment is not None:
            image = augment(image, position)
        return to_model_input(image, image_size, channels)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        for start in range(0, len(order), batch_size):
            positions = range(start, min(start + batch_size, len(order)))
            images = np.stack(list(executor.map(load, positions)))
            labels = one_hot([samples.label(order[position]) for position in positions])
            yield Batch(images, labels)


def batch_indices(samples_count, batch_size, shuffle_seed, epoch, shuffle=True):
    """Per-batch sample indices matching :func:`make_batches`."""
    if shuffle:
        order = batch_order(samples_count, shuffle_seed, epoch)
    else:
        order = np.arange(samples_count)
    return [order[start:start + batch_size] for start in range(0, samples_count, batch_size)]

