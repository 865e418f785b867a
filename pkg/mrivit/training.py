"""Two-stage fine-tuning.

Stage 1 warms up the classification head with the backbone frozen: gradients
flow through the whole model but the optimizer only updates ``head.*``
parameters, at a constant learning rate. Stage 2 trains every parameter with
separate backbone/head learning rates annealed along a cosine curve, one step
per epoch, and stops early when the validation accuracy of the EMA weights
has not improved for ``patience`` epochs.

An exponential moving average of every parameter is kept from the first step
of stage 1 on. Validation always scores the EMA weights, and the EMA weights
are what training returns.
"""
import logging
import math
import os
from collections import OrderedDict, namedtuple
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .augment import AugmentConfig, mix_batch, pixel_augment
from .checkpoint import save_params
from .constants import Constants
from .dataset import make_batches
from .exceptions import (
    ContractException,
    DimensionException,
    ImproperlyConfigured,
    NonFiniteException,
    TrainingDivergedException,
)
from .model import forward, gradients, is_head
from .rng import stream
from .tensor import (
    Tensor,
    as_tensor,
    backward,
    log_softmax,
    mean,
    mul,
    softmax_array,
    tensor_sum,
)
from .utils import write_csv

logger = logging.getLogger('mrivit')


# ---[ CONFIGURATION ]---

@dataclass(frozen=True)
class HeadStageConfig:
    """Stage 1: head warm-up."""
    epochs: int = 5
    head_lr: float = 1e-3
    weight_decay: float = 1e-4
    backbone_frozen: bool = True


@dataclass(frozen=True)
class FullStageConfig:
    """Stage 2: full fine-tuning with cosine annealing and early stopping."""
    max_epochs: int = 15
    backbone_lr: float = 1e-5
    head_lr: float = 1e-4
    lr_min: float = 1e-7
    weight_decay: float = 1e-4
    patience: int = 5


@dataclass(frozen=True)
class StageConfig:
    stage1: HeadStageConfig = field(default_factory=HeadStageConfig)
    stage2: FullStageConfig = field(default_factory=FullStageConfig)
    label_smoothing: float = 0.1
    batch_size: int = 32
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    early_stopping: bool = True

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ImproperlyConfigured(
                "label_smoothing must lie in [0, 1), got %r" % self.label_smoothing)
        if self.batch_size < 1:
            raise ImproperlyConfigured("batch_size must be at least 1, got %r" % self.batch_size)
        if self.stage1.epochs < 0 or self.stage2.max_epochs < 0:
            raise ImproperlyConfigured("Epoch counts cannot be negative")
        if self.stage2.lr_min <= 0:
            raise ImproperlyConfigured("stage2.lr_min must be positive")
        lrs = (self.stage1.head_lr, self.stage2.backbone_lr, self.stage2.head_lr)
        if min(lrs) <= self.stage2.lr_min:
            raise ImproperlyConfigured(
                "Learning rates %s must all exceed stage2.lr_min=%r" % (lrs, self.stage2.lr_min))
        if self.stage2.patience < 1:
            raise ImproperlyConfigured(
                "patience must be at least 1, got %r" % self.stage2.patience)
        if not all(0.0 <= beta < 1.0 for beta in self.betas) or len(self.betas) != 2:
            raise ImproperlyConfigured("betas must be two values in [0, 1), got %r"
                                       % (self.betas,))
        if not 0.0 <= self.ema_decay < 1.0:
            raise ImproperlyConfigured("ema_decay must lie in [0, 1), got %r" % self.ema_decay)


# ---[ LOSS ]---

def smooth_targets(soft_targets, epsilon=0.1):
    """``(1 - epsilon) * targets + epsilon / K``."""
    targets = np.asarray(soft_targets, dtype=np.float64)
    return (1.0 - epsilon) * targets + epsilon / targets.shape[-1]


def smoothed_soft_cross_entropy(logits, soft_targets, epsilon=0.1):
    """Label-smoothed cross-entropy against soft targets, averaged over the batch.

    :param logits: ``(B, K)`` :class:`~mrivit.tensor.Tensor` (or array).
    :param soft_targets: ``(B, K)`` rows summing to 1 (one-hot or mixed).
    :param float epsilon: Smoothing mass spread uniformly over the K classes.
    :return: Scalar tensor, differentiable w.r.t. ``logits``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(soft_targets)
    if targets.shape != logits.shape or logits.ndim != 2:
        raise DimensionException(
            "Logits %s and targets %s must share a (B, K) shape" % (logits.shape, targets.shape))
    smoothed = smooth_targets(targets, epsilon).astype(logits.dtype)
    per_sample = tensor_sum(mul(log_softmax(logits, axis=-1), Tensor(-smoothed)), axis=-1)
    return mean(per_sample)


# ---[ OPTIMIZER ]---

class AdamWState:
    """First/second moments per parameter name and the shared step counter."""
    def __init__(self, m, v, t=0):
        self.m = m
        self.v = v
        self.t = t

    @classmethod
    def zeros_like(cls, params):
        m = OrderedDict((name, np.zeros_like(array)) for name, array in params.items())
        v = OrderedDict((name, np.zeros_like(array)) for name, array in params.items())
        return cls(m, v)


def adamw_step(params, grads, state, lr, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
    """One AdamW update, applied in place to ``params``.

    :param params: :class:`~mrivit.model.ViTParams` or ``{name: array}``.
    :param grads: ``{name: gradient}``; parameters absent from it are left
        untouched (the stage-1 freeze).
    :param state: :class:`AdamWState`, updated in place.
    :param lr: A float, or ``{name: lr}`` for per-parameter rates.
    :return: ``state``.

    Weight decay is decoupled from the gradient and applied to the pre-update
    value: ``theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta``.
    """
    beta1, beta2 = betas
    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, grad in grads.items():
        theta = params[name]
        if grad.shape != theta.shape:
            raise DimensionException(
                "Gradient for %s has shape %s, expected %s" % (name, grad.shape, theta.shape))
        rate = lr[name] if isinstance(lr, dict) else lr
        if rate <= 0:
            raise ContractException("Learning rate must be positive, got %r" % rate)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        update = rate * m_hat / (np.sqrt(v_hat) + eps) + rate * weight_decay * theta
        theta -= update.astype(theta.dtype, copy=False)
    return state


def cosine_lr(t, T, lr_max, lr_min=1e-7):
    """Cosine annealing from ``lr_max`` at ``t = 0`` to ``lr_min`` at ``t = T``."""
    if T < 1 or not 0 <= t <= T:
        raise ContractException(
            "cosine_lr needs 0 <= t <= T and T >= 1, got t=%r T=%r" % (t, T))
    if t == 0:
        return lr_max
    if t == T:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / T))


# ---[ EMA ]---

class EmaState:
    """Shadow copy of every parameter, moved toward the live weights after each step."""
    def __init__(self, params, decay=0.999):
        if hasattr(params, 'config'):
            self.shadow = params.copy()
        else:
            self.shadow = OrderedDict((name, np.array(array)) for name, array in params.items())
        self.decay = decay


def ema_update(ema, params, decay=None):
    """``shadow <- decay * shadow + (1 - decay) * theta`` for every parameter, in place.

    Written as ``shadow += (1 - decay) * (theta - shadow)`` so that a shadow
    equal to ``theta`` stays bit-identical.
    """
    decay = ema.decay if decay is None else decay
    for name, shadow in ema.shadow.items():
        theta = params[name]
        if theta.shape != shadow.shape:
            raise DimensionException("EMA shadow of %s does not match the parameter" % name)
        shadow += ((1.0 - decay) * (theta - shadow)).astype(shadow.dtype, copy=False)
    return ema


# ---[ REPORT ]---

EpochRecord = namedtuple('EpochRecord', [
    'stage', 'epoch', 'train_loss', 'train_accuracy', 'val_loss', 'val_accuracy',
    'backbone_lr', 'head_lr'])

REPORT_HEADER = EpochRecord._fields


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    stop_reason: str = Constants.STOP_NO_EPOCHS

    def __len__(self):
        return len(self.records)

    def add(self, record):
        self.records.append(record)
        if len(self.records) == 1 or record.val_accuracy > self.best_val_accuracy:
            self.best_epoch = record.epoch
            self.best_val_accuracy = record.val_accuracy
            return True
        return False

    def write_csv(self, path):
        write_csv(path, REPORT_HEADER, [
            [record.stage, record.epoch] + [repr(float(value)) for value in record[2:]]
            for record in self.records])

    def summary(self):
        lines = ['epochs run: %d' % len(self.records)]
        if self.records:
            lines.append('best epoch: %d' % self.best_epoch)
            lines.append('best val accuracy: %.4f' % self.best_val_accuracy)
        lines.append('stopping reason: %s' % self.stop_reason)
        return '\n'.join(lines) + '\n'

    def write_summary(self, path):
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(self.summary())


TrainResult = namedtuple('TrainResult', ['params', 'best_params', 'report'])
EvalResult = namedtuple('EvalResult', ['loss', 'accuracy', 'probabilities', 'labels'])


# ---[ LOOPS ]---

def evaluate_samples(params, samples, batch_size, epsilon=0.0, threads=1):
    """Score ``samples`` in eval mode, without augmentation, in sample order."""
    cfg = params.config
    total_loss, probabilities, labels = 0.0, [], []
    for batch in make_batches(samples, batch_size, 0, 0, cfg.image_size, cfg.channels,
                              threads=threads, shuffle=False):
        logits = forward(params, batch.images).logits
        loss = smoothed_soft_cross_entropy(logits, batch.labels, epsilon)
        total_loss += loss.item() * len(batch.labels)
        probabilities.append(softmax_array(logits.data, axis=-1))
        labels.append(np.argmax(batch.labels, axis=-1))
    count = len(samples)
    if not count:
        return EvalResult(0.0, 0.0, np.zeros((0, cfg.num_classes)), np.zeros(0, dtype=int))
    probabilities = np.concatenate(probabilities)
    labels = np.concatenate(labels)
    accuracy = float(np.mean(np.argmax(probabilities, axis=-1) == labels))
    return EvalResult(total_loss / count, accuracy, probabilities, labels)


def batch_correct(logits, targets):
    """Count rows whose top logit is the dominant class of their (possibly mixed) target."""
    return int(np.sum(np.argmax(logits, axis=-1) == np.argmax(targets, axis=-1)))


def _learning_rates(params, backbone_lr, head_lr):
    return {name: (head_lr if is_head(name) else backbone_lr) for name in params}


def _train_epoch(params, train_samples, cfg, augment_cfg, seed, stage, epoch, state, ema,
                 backbone_lr, head_lr, weight_decay, threads):
    model_cfg = params.config
    lrs = _learning_rates(params, backbone_lr, head_lr)
    trainable = None
    if stage == Constants.STAGE_HEAD and cfg.stage1.backbone_frozen:
        trainable = set(params.head_names())

    def augment(image, position):
        return pixel_augment(image, augment_cfg,
                             stream(seed, Constants.STREAM_PIXEL, epoch, position))

    total_loss, correct, seen = 0.0, 0, 0
    batches = make_batches(train_samples, cfg.batch_size, seed, epoch, model_cfg.image_size,
                           model_cfg.channels, augment=augment, threads=threads)
    for index, batch in enumerate(batches):
        mixed = mix_batch(batch, augment_cfg, stream(seed, Constants.STREAM_MIX, epoch, index))
        try:
            result = forward(params, mixed.images, mode=Constants.MODE_TRAIN,
                             rng=stream(seed, Constants.STREAM_DROPOUT, epoch, index),
                             trainable=True)
            loss = smoothed_soft_cross_entropy(result.logits, mixed.soft_labels,
                                               cfg.label_smoothing)
            backward(loss)
        except NonFiniteException as error:
            raise TrainingDivergedException(
                "Training diverged at stage %d, epoch %d, batch %d (backbone lr %g, head lr "
                "%g): %s" % (stage, epoch + 1, index, backbone_lr, head_lr, error))
        grads = gradients(result.leaves)
        if trainable is not None:
            grads = OrderedDict((name, grad) for name, grad in grads.items() if name in trainable)
        adamw_step(params, grads, state, lrs, weight_decay, cfg.betas, cfg.adam_eps)
        ema_update(ema, params)

        size = len(batch.labels)
        total_loss += loss.item() * size
        correct += batch_correct(result.logits.data, mixed.soft_labels)
        seen += size
    return total_loss / seen, correct / seen


def train_two_stage(params, train_samples, val_samples, cfg=None, augment_cfg=None, seed=42,
                    threads=1, checkpoint_dir=None, digest=Constants.DEFAULT_DIGEST):
    """Run the head warm-up then the full fine-tuning.

    :param params: Initial :class:`~mrivit.model.ViTParams`; updated in place
        (they end as the last raw weights).
    :param train_samples: Training samples (see :mod:`mrivit.dataset`).
    :param val_samples: Validation samples, scored with the EMA weights.
    :param cfg: :class:`StageConfig`.
    :param augment_cfg: :class:`~mrivit.augment.AugmentConfig`.
    :param int seed: Master seed of every random stream.
    :param checkpoint_dir: When set, ``last_raw.ckpt`` and ``last_ema.ckpt``
        are written after every epoch and ``best_ema.ckpt`` on improvement.
    :return: ``TrainResult(params, best_params, report)`` where ``params``
        are the final EMA weights and ``best_params`` the EMA weights of the
        best validation epoch (``None`` when no epoch ran).
    :raises TrainingDivergedException: On a non-finite loss or activation.
    """
    cfg = cfg or StageConfig()
    augment_cfg = augment_cfg or AugmentConfig()
    if not len(train_samples) or not len(val_samples):
        raise ContractException("Training needs non-empty training and validation samples")

    ema = EmaState(params, cfg.ema_decay)
    report = TrainReport()
    best_params = None
    epoch = 0

    def finish_epoch(stage, train_loss, train_accuracy, backbone_lr, head_lr):
        nonlocal best_params
        val = evaluate_samples(ema.shadow, val_samples, cfg.batch_size, cfg.label_smoothing,
                               threads)
        record = EpochRecord(stage, epoch + 1, train_loss, train_accuracy, val.loss,
                             val.accuracy, backbone_lr, head_lr)
        improved = report.add(record)
        logger.info(
            "Stage %d epoch %d: train loss %.4f acc %.4f, val loss %.4f acc %.4f",
            stage, epoch + 1, train_loss, train_accuracy, val.loss, val.accuracy)
        if improved:
            best_params = ema.shadow.copy()
        if checkpoint_dir:
            save_params(params, os.path.join(checkpoint_dir, Constants.RAW_CHECKPOINT), digest)
            save_params(ema.shadow, os.path.join(checkpoint_dir, Constants.EMA_CHECKPOINT),
                        digest)
            if improved:
                save_params(best_params, os.path.join(checkpoint_dir, Constants.BEST_CHECKPOINT),
                            digest)
        return improved

    state = AdamWState.zeros_like(params)
    head_lr = cfg.stage1.head_lr
    backbone_lr = 0.0 if cfg.stage1.backbone_frozen else head_lr
    for _ in range(cfg.stage1.epochs):
        loss, accuracy = _train_epoch(params, train_samples, cfg, augment_cfg, seed,
                                      Constants.STAGE_HEAD, epoch, state, ema, backbone_lr,
                                      head_lr, cfg.stage1.weight_decay, threads)
        finish_epoch(Constants.STAGE_HEAD, loss, accuracy, backbone_lr, head_lr)
        epoch += 1

    stage2 = cfg.stage2
    state = AdamWState.zeros_like(params)
    stale = 0
    for step in range(stage2.max_epochs):
        backbone_lr = cosine_lr(step, stage2.max_epochs, stage2.backbone_lr, stage2.lr_min)
        head_lr = cosine_lr(step, stage2.max_epochs, stage2.head_lr, stage2.lr_min)
        loss, accuracy = _train_epoch(params, train_samples, cfg, augment_cfg, seed,
                                      Constants.STAGE_FULL, epoch, state, ema, backbone_lr,
                                      head_lr, stage2.weight_decay, threads)
        improved = finish_epoch(Constants.STAGE_FULL, loss, accuracy, backbone_lr, head_lr)
        epoch += 1
        stale = 0 if improved else stale + 1
        if cfg.early_stopping and stale >= stage2.patience:
            report.stop_reason = Constants.STOP_PATIENCE
            logger.info("Early stopping after epoch %d: no improvement for %d epochs",
                        epoch, stale)
            break
    else:
        if report.records:
            report.stop_reason = Constants.STOP_MAX_EPOCHS

    logger.info("Training finished after %d epochs (%s); best val accuracy %.4f at epoch %d",
                len(report), report.stop_reason, report.best_val_accuracy, report.best_epoch)
    return TrainResult(ema.shadow, best_params, report)

