"""Run configuration.

Settings are read from a flat ``key = value`` text file::

    # paths
    data_root = /data/brain-mri
    model = tiny
    stage2.max_epochs = 30
    augment.strategy_probs = 0.5, 0.5

Top-level keys are the :class:`RunConfig` fields plus ``batch_size``. Dotted
keys address the nested configurations: ``clahe.*`` (:class:`ClaheConfig`),
``augment.*`` (:class:`AugmentConfig`), ``stage1.*`` and ``stage2.*`` (the two
training stages) and ``training.*`` (the remaining :class:`StageConfig`
fields). Values are parsed after the type of their default: integers, floats,
``true``/``false`` booleans, comma-separated tuples and plain strings.

Unknown keys and unparseable values are rejected when the file is loaded,
not when the value is first used.
"""
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

from .augment import AugmentConfig
from .constants import Constants
from .exceptions import ImproperlyConfigured, MissingFieldException, UnexpectedFieldException
from .imaging import ClaheConfig
from .model import ViTConfig
from .training import FullStageConfig, HeadStageConfig, StageConfig

logger = logging.getLogger('mrivit')

_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')


@dataclass(frozen=True)
class RunConfig:
    data_root: Optional[str] = None
    cache_root: Optional[str] = None
    output_dir: str = 'output'
    manifest: str = 'manifest.csv'
    seed: int = 42
    model: str = Constants.PRESET_VIT_B16
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    threads: int = 0
    checkpoint_digest: str = Constants.DEFAULT_DIGEST
    clahe: ClaheConfig = field(default_factory=ClaheConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    training: StageConfig = field(default_factory=StageConfig)

    @property
    def batch_size(self):
        return self.training.batch_size

    @property
    def worker_count(self):
        """``threads``, or every available core when it is 0."""
        return self.threads or os.cpu_count() or 1

    def model_config(self):
        return ViTConfig.preset(self.model)

    def require(self, *keys):
        """Complain early when a setting without a default is not set."""
        for key in keys:
            if getattr(self, key) in (None, ''):
                raise MissingFieldException(
                    "The %s setting is missing; set it in the config file or pass --%s"
                    % (key, key.replace('_', '-')))


# ---[ KEYS ]---

_TRAINING_SECTIONS = ('stage1', 'stage2')


def _scalar_fields(instance):
    return [item.name for item in fields(instance)
            if not hasattr(getattr(instance, item.name), '__dataclass_fields__')]


def default_values(config=None):
    """Flat ``{key: value}`` view of a :class:`RunConfig`, in file order."""
    config = config or RunConfig()
    values = {}
    for name in _scalar_fields(config):
        values[name] = getattr(config, name)
    values['batch_size'] = config.training.batch_size
    for section in ('clahe', 'augment'):
        nested = getattr(config, section)
        for name in _scalar_fields(nested):
            values['%s.%s' % (section, name)] = getattr(nested, name)
    for section in _TRAINING_SECTIONS:
        nested = getattr(config.training, section)
        for name in _scalar_fields(nested):
            values['%s.%s' % (section, name)] = getattr(nested, name)
    for name in _scalar_fields(config.training):
        if name != 'batch_size':
            values['training.%s' % name] = getattr(config.training, name)
    return values


EXPECTED_FIELDS = tuple(default_values())
REQUIRED_FIELDS = ()
OPTIONAL_FIELDS = EXPECTED_FIELDS


def check_fields(values):
    """Reject unknown keys; every key of the file format is optional."""
    for key in REQUIRED_FIELDS:
        if key not in values:
            raise MissingFieldException("The %s setting is missing" % key)
    for key in values:
        if key not in EXPECTED_FIELDS:
            raise UnexpectedFieldException("The %s setting is unexpected" % key)


# ---[ PARSING ]---

def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(part) for part in text.split(','))
    except ValueError:
        raise ImproperlyConfigured(
            "Invalid value %r for %s (expected %s)" % (raw, key, type(default).__name__))
    return text


def parse_config_text(text, source='<config>'):
    """Parse the ``key = value`` lines of a config file into raw strings."""
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, separator, value = line.partition('=')
        key = key.strip()
        if not separator or not key:
            raise ImproperlyConfigured(
                "%s line %d: expected 'key = value', got %r" % (source, number, line))
        if key in values:
            raise ImproperlyConfigured("%s line %d: %s is set twice" % (source, number, key))
        values[key] = value.strip()
    return values


def read_config_file(path):
    with open(path, encoding='utf-8') as handle:
        return parse_config_text(handle.read(), source=path)


def build_config(values):
    """Turn a flat ``{key: value}`` mapping into a validated :class:`RunConfig`."""
    check_fields(values)
    defaults = default_values()
    typed = {key: _coerce(key, raw, defaults[key]) for key, raw in values.items()}

    def section(prefix):
        return {key.split('.', 1)[1]: value for key, value in typed.items()
                if key.startswith(prefix + '.')}

    try:
        stage1 = replace(HeadStageConfig(), **section('stage1'))
        stage2 = replace(FullStageConfig(), **section('stage2'))
        training_values = section('training')
        if 'batch_size' in typed:
            training_values['batch_size'] = typed['batch_size']
        training = StageConfig(stage1=stage1, stage2=stage2, **training_values)
        top = {key: value for key, value in typed.items()
               if '.' not in key and key != 'batch_size'}
        config = RunConfig(
            clahe=replace(ClaheConfig(), **section('clahe')),
            augment=replace(AugmentConfig(), **section('augment')),
            training=training,
            **top)
        config.model_config()
    except ImproperlyConfigured:
        raise
    except ValueError as error:
        raise ImproperlyConfigured(str(error))
    if config.threads < 0:
        raise ImproperlyConfigured("threads cannot be negative, got %r" % config.threads)
    if len(config.split_ratios) != 3:
        raise ImproperlyConfigured(
            "split_ratios needs three values, got %r" % (config.split_ratios,))
    return config


def get_config(path=None, overrides=None):
    """Return the run configuration.

    :param path: Optional config file; missing keys keep their defaults.
    :param overrides: Optional ``{key: value}`` applied on top of the file
        (command-line flags). ``None`` values are ignored.
    :rtype: :class:`RunConfig`
    :raises UnexpectedFieldException: Unknown key.
    :raises ImproperlyConfigured: Unparseable or out-of-range value.
    """
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    config = build_config(values)
    logger.debug("Configuration: %s", config)
    return config


def dump_config(config):
    """Render the effective configuration in the file format."""
    lines = []
    for key, value in default_values(config).items():
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        elif isinstance(value, tuple):
            value = ', '.join(repr(item) for item in value)
        elif value is None:
            continue
        lines.append('%s = %s' % (key, value))
    return '\n'.join(lines) + '\n'
