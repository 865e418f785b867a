"""Seedable random streams.

Every random draw of the pipeline comes from a numpy ``Generator`` backed by
PCG64, whose output is identical across platforms for a given seed. Streams
are derived from a master seed, a purpose tag and optional integer indices::

    >>> from mrivit.rng import stream
    >>> rng = stream(42, 'split', 2)

so that, for instance, the split of class 2 never depends on how many draws
another part of the pipeline made before it.
"""
import zlib

import numpy as np


def purpose_key(purpose):
    """Return a stable 32-bit integer for a purpose tag."""
    return zlib.crc32(purpose.encode('utf-8'))


def stream(master_seed, purpose, *indices):
    """Return the generator for ``(master_seed, purpose, *indices)``.

    :param int master_seed: Run-level seed (42 by default in the pipeline).
    :param str purpose: Purpose tag, see ``Constants.STREAM_*``.
    :param indices: Non-negative integers (class index, epoch, batch...).
    :rtype: :class:`numpy.random.Generator`
    """
    entropy = [int(master_seed), purpose_key(purpose)] + [int(index) for index in indices]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
