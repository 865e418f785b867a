"""Versioned checkpoint container for :class:`~mrivit.model.ViTParams`.

All integers are little-endian::

    magic       8 bytes   b'MRIVITCK'
    version     u32       1
    config      u32 length + utf-8 text, ``key=value`` lines in ViTConfig order
    digest      u8 length + utf-8 backend name
    count       u32       number of parameters
    parameters  count times, in ViTParams order:
                u16 name length + utf-8 name, u8 ndim, u32 per dimension,
                float32 little-endian values (C order)
    digest      raw digest of every preceding byte

Arrays are always stored at 32-bit, so ``load(save(p))`` reproduces float32
parameters bit for bit.
"""
import logging
import os
import struct
from dataclasses import asdict

import numpy as np

from .constants import Constants
from .digests import get_digest
from .exceptions import CheckpointFormatException, ConfigMismatchException, ImproperlyConfigured
from .model import ViTConfig, ViTParams

logger = logging.getLogger('mrivit')

_STORED_DTYPE = np.dtype('<f4')


def _pack_text(fmt, text):
    raw = text.encode('utf-8')
    return struct.pack(fmt, len(raw)) + raw


def serialize(params, digest=Constants.DEFAULT_DIGEST):
    """Return the checkpoint bytes of ``params``."""
    backend = get_digest(digest)
    chunks = [
        Constants.CHECKPOINT_MAGIC,
        struct.pack('<I', Constants.CHECKPOINT_VERSION),
        _pack_text('<I', params.config.to_text()),
        _pack_text('<B', backend.name),
        struct.pack('<I', len(params)),
    ]
    for name, array in params.items():
        chunks.append(_pack_text('<H', name))
        chunks.append(struct.pack('<B', array.ndim))
        chunks.append(struct.pack('<%dI' % array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=_STORED_DTYPE).tobytes())
    payload = b''.join(chunks)
    return payload + backend.compute(payload)


def save_params(params, path, digest=Constants.DEFAULT_DIGEST):
    """Write ``params`` to ``path``; the file is replaced atomically.

    :param params: :class:`~mrivit.model.ViTParams`.
    :param str path: Target file; parent directories are created.
    :param str digest: Digest backend name, see :mod:`mrivit.digests`.
    """
    content = serialize(params, digest)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    temporary = path + '.tmp'
    with open(temporary, 'wb') as handle:
        handle.write(content)
    os.replace(temporary, path)
    logger.debug("Saved %d parameters to %s", len(params), path)


class _Reader:
    def __init__(self, data, source):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CheckpointFormatException("Checkpoint %s is truncated" % self.source)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def text(self, fmt):
        raw = self.take(self.unpack(fmt))
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointFormatException("Checkpoint %s holds invalid text" % self.source)


def config_differences(stored, expected):
    """Names of the ViTConfig fields that differ, in field order."""
    stored, expected = asdict(stored), asdict(expected)
    return [key for key in expected if stored[key] != expected[key]]


def deserialize(data, expected_config=None, source='<bytes>'):
    """Parse checkpoint bytes, see :func:`load_params`."""
    reader = _Reader(data, source)
    if reader.take(len(Constants.CHECKPOINT_MAGIC)) != Constants.CHECKPOINT_MAGIC:
        raise CheckpointFormatException("%s is not a checkpoint (bad magic)" % source)
    version = reader.unpack('<I')
    if version != Constants.CHECKPOINT_VERSION:
        raise CheckpointFormatException(
            "Checkpoint %s has format version %d, expected %d"
            % (source, version, Constants.CHECKPOINT_VERSION))
    config_text = reader.text('<I')
    digest_name = reader.text('<B')
    try:
        backend = get_digest(digest_name)
    except ImproperlyConfigured:
        raise CheckpointFormatException(
            "Checkpoint %s uses unknown digest %r" % (source, digest_name))
    if len(data) < reader.offset + backend.size:
        raise CheckpointFormatException("Checkpoint %s is truncated" % source)
    payload, stored_digest = data[:-backend.size], data[-backend.size:]
    if not backend.verify(payload, stored_digest):
        raise CheckpointFormatException(
            "Checkpoint %s failed its %s check (truncated or corrupted)" % (source, digest_name))

    try:
        config = ViTConfig.from_text(config_text)
    except (ValueError, TypeError) as error:
        raise CheckpointFormatException(
            "Checkpoint %s has an invalid config: %s" % (source, error))
    if expected_config is not None:
        differing = config_differences(config, expected_config)
        if differing:
            raise ConfigMismatchException(
                "Checkpoint %s was saved for a different model; differing fields: %s"
                % (source, ', '.join(differing)))

    reader.data = payload
    count = reader.unpack('<I')
    arrays = []
    for _ in range(count):
        name = reader.text('<H')
        ndim = reader.unpack('<B')
        shape = struct.unpack('<%dI' % ndim, reader.take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(size * _STORED_DTYPE.itemsize)
        values = np.frombuffer(raw, dtype=_STORED_DTYPE).reshape(shape)
        arrays.append((name, values.astype(np.float32)))
    if reader.offset != len(payload):
        raise CheckpointFormatException("Checkpoint %s has trailing bytes" % source)
    try:
        return ViTParams(config, arrays)
    except ValueError as error:
        raise CheckpointFormatException("Checkpoint %s is inconsistent: %s" % (source, error))


def load_params(path, expected_config=None):
    """Read a checkpoint written by :func:`save_params`.

    :param str path: Checkpoint file.
    :param expected_config: Optional :class:`~mrivit.model.ViTConfig` the
        stored model must match.
    :return: float32 :class:`~mrivit.model.ViTParams` with the stored config.
    :raises CheckpointFormatException: Bad magic, version, digest or layout.
    :raises ConfigMismatchException: The stored config differs from
        ``expected_config``; the message names the differing fields.
    """
    with open(path, 'rb') as handle:
        data = handle.read()
    return deserialize(data, expected_config, source=path)
