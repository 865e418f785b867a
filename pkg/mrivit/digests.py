"""Digests guard checkpoint files against truncation and corruption.

Two backends ship with the package:

* SHA-256 (:class:`Sha256Digest`), the default,
* BLAKE2b (:class:`Blake2bDigest`), faster on 64-bit machines.

The digest is computed over every byte of the checkpoint that precedes it and
appended to the file. The backend name is written inside the checkpoint, so
loading never needs to be told which backend produced a file.

.. note::

    A custom backend can be selected by its python path (for instance
    ``mypackage.digests.Sha3Digest``) wherever a digest name is accepted. It
    must subclass :class:`AbstractDigest` and its :attr:`~AbstractDigest.name`
    must be that same python path (at most 255 bytes) so that the files it
    writes can be loaded again.
"""
import hashlib
import hmac
from importlib import import_module

from .exceptions import ImproperlyConfigured


class AbstractDigest:
    """Abstract base class that defines the common interface.

    Subclasses **must** set :attr:`name` and :attr:`size` and implement
    :meth:`compute`.
    """
    name = None
    """Identifier written into the checkpoint header."""

    size = None
    """Length of the digest in bytes."""

    def compute(self, payload):
        """Return the digest of ``payload`` as raw bytes.

        :param bytes payload: Checkpoint bytes preceding the digest.
        :rtype: ``bytes``
        """
        raise NotImplementedError

    def verify(self, payload, digest):
        """Return ``True`` when ``digest`` matches ``payload``."""
        return hmac.compare_digest(self.compute(payload), digest)


class Sha256Digest(AbstractDigest):
    name = 'sha256'
    size = 32

    def compute(self, payload):
        return hashlib.sha256(payload).digest()


class Blake2bDigest(AbstractDigest):
    name = 'blake2b'
    size = 64

    def compute(self, payload):
        return hashlib.blake2b(payload).digest()


DIGESTS = {
    Sha256Digest.name: Sha256Digest,
    Blake2bDigest.name: Blake2bDigest,
}


def get_digest(name):
    """Return a digest instance from its short name or python path.

    :raises ImproperlyConfigured: When the name matches no backend.
    """
    if name in DIGESTS:
        return DIGESTS[name]()
    module_path, _, class_name = name.rpartition('.')
    if module_path:
        try:
            backend = getattr(import_module(module_path), class_name)
        except (ImportError, AttributeError):
            backend = None
        if isinstance(backend, type) and issubclass(backend, AbstractDigest):
            return backend()
    raise ImproperlyConfigured(
        "Unknown checkpoint digest %r, expected one of %s or a python path to an "
        "AbstractDigest subclass" % (name, ', '.join(sorted(DIGESTS))))
