"""Confusion matrix and the per-class, macro and weighted metric suite.

Rows of a confusion matrix are true classes and columns predicted classes,
both in ``Constants.CLASS_NAMES`` order. Any metric whose denominator is zero
is reported as 0. Reported values are rounded half-up to four decimals.
"""
from collections import namedtuple

import numpy as np

from .constants import Constants
from .exceptions import ContractException, LayoutException
from .utils import format_fixed, format_table, read_csv, write_csv

ClassMetrics = namedtuple('ClassMetrics', [
    'precision', 'recall', 'f1', 'support', 'true_positives'])
Averages = namedtuple('Averages', ['precision', 'recall', 'f1'])
MetricsReport = namedtuple('MetricsReport', [
    'confusion', 'per_class', 'macro', 'weighted', 'accuracy'])


def confusion(y_true, y_pred, num_classes=Constants.NUM_CLASSES):
    """``cm[t][p]`` counts the samples of true class ``t`` predicted as ``p``."""
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ContractException(
            "Got %d true labels for %d predictions" % (len(y_true), len(y_pred)))
    for labels in (y_true, y_pred):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ContractException("Labels must lie in [0, %d)" % num_classes)
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


def _ratio(numerator, denominator):
    numerator = np.asarray(numerator, dtype=np.float64)
    denominator = np.asarray(denominator, dtype=np.float64)
    return np.divide(numerator, denominator, out=np.zeros_like(numerator),
                     where=denominator > 0)


def per_class_prf(cm):
    """Precision, recall, F1 and support of every class."""
    cm = np.asarray(cm, dtype=np.int64)
    true_positives = np.diag(cm)
    support = cm.sum(axis=1)
    precision = _ratio(true_positives, cm.sum(axis=0))
    recall = _ratio(true_positives, support)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return ClassMetrics(precision, recall, f1, support, true_positives)


def aggregates(per_class):
    """Macro, support-weighted and overall accuracy from :func:`per_class_prf`.

    Weighted recall is computed as correct / total, the closed form of the
    support-weighted mean, so it equals the accuracy exactly.
    """
    total = int(np.sum(per_class.support))
    correct = int(np.sum(per_class.true_positives))
    macro = Averages(*(float(np.mean(values)) for values in per_class[:3]))
    if not total:
        return macro, Averages(0.0, 0.0, 0.0), 0.0
    accuracy = correct / total
    weights = per_class.support.astype(np.float64)
    weighted = Averages(
        float(np.dot(weights, per_class.precision) / total),
        accuracy,
        float(np.dot(weights, per_class.f1) / total))
    return macro, weighted, accuracy


def row_normalize(cm):
    """Divide each row by its sum (recall percentages); empty rows stay zero."""
    cm = np.asarray(cm, dtype=np.float64)
    return _ratio(cm, cm.sum(axis=1, keepdims=True))


def evaluate(y_true, y_pred, num_classes=Constants.NUM_CLASSES):
    """Build the full :class:`MetricsReport` of a set of predictions."""
    cm = confusion(y_true, y_pred, num_classes)
    per_class = per_class_prf(cm)
    macro, weighted, accuracy = aggregates(per_class)
    return MetricsReport(cm, per_class, macro, weighted, accuracy)


# ---[ REPORTING ]---

def report_rows(report):
    """Table rows as strings: class rows, then macro, weighted and accuracy rows."""
    per_class, total = report.per_class, int(np.sum(report.per_class.support))
    rows = []
    for index, name in enumerate(Constants.CLASS_NAMES):
        rows.append([name, format_fixed(per_class.precision[index]),
                     format_fixed(per_class.recall[index]), format_fixed(per_class.f1[index]),
                     str(int(per_class.support[index]))])
    for label, averages in (('Macro Avg', report.macro), ('Weighted Avg', report.weighted)):
        rows.append([label] + [format_fixed(value) for value in averages] + [str(total)])
    rows.append(['Overall Acc', '', '', format_fixed(report.accuracy), str(total)])
    return rows


REPORT_HEADER = ('Class', 'Precision', 'Recall', 'F1-Score', 'Support')


def format_report(report):
    """Aligned plain-text table in the layout of the published results table."""
    return format_table(REPORT_HEADER, report_rows(report))


def write_report(report, text_path, csv_path):
    with open(text_path, 'w', encoding='utf-8') as handle:
        handle.write(format_report(report))
    write_csv(csv_path, REPORT_HEADER, report_rows(report))


def write_confusion_csv(cm, path, normalized=False):
    """Write the raw counts, or the row-normalized fractions with four decimals."""
    header = ['true\\predicted'] + list(Constants.CLASS_NAMES)
    if normalized:
        values = [[format_fixed(value) for value in row] for row in row_normalize(cm)]
    else:
        values = [[str(int(value)) for value in row] for row in np.asarray(cm)]
    write_csv(path, header, [[name] + row for name, row in zip(Constants.CLASS_NAMES, values)])


# ---[ PREDICTIONS ]---

PROBABILITY_COLUMNS = tuple('p_%s' % name for name in Constants.CLASS_NAMES)


def write_predictions(path, names, labels, predicted, probabilities):
    """One row per sample: path, true and predicted class names, probabilities."""
    header = (Constants.COLUMN_PATH, Constants.COLUMN_LABEL,
              Constants.COLUMN_PREDICTED) + PROBABILITY_COLUMNS
    rows = []
    for name, label, guess, row in zip(names, labels, predicted, probabilities):
        rows.append([name, Constants.CLASS_NAMES[label], Constants.CLASS_NAMES[guess]]
                    + [repr(float(value)) for value in row])
    write_csv(path, header, rows)


def read_predictions(path):
    """Return ``(y_true, y_pred)`` label indices from a predictions CSV."""
    y_true, y_pred = [], []
    for number, row in enumerate(read_csv(path), start=2):
        try:
            y_true.append(Constants.CLASS_NAMES.index(row[Constants.COLUMN_LABEL]))
            y_pred.append(Constants.CLASS_NAMES.index(row[Constants.COLUMN_PREDICTED]))
        except (KeyError, ValueError):
            raise LayoutException(
                "%s line %d: expected %s and %s columns holding class names"
                % (path, number, Constants.COLUMN_LABEL, Constants.COLUMN_PREDICTED))
    return y_true, y_pred
