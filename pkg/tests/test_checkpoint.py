import hashlib
import os
import struct
import unittest

import numpy as np
import pytest

from mrivit.checkpoint import config_differences, deserialize, load_params, save_params, serialize
from mrivit.constants import Constants
from mrivit.digests import AbstractDigest, Blake2bDigest, Sha256Digest, get_digest
from mrivit.exceptions import (
    CheckpointFormatException,
    ConfigMismatchException,
    ImproperlyConfigured,
)

from . import randomized, tiny_config, tiny_params


class Md5Digest(AbstractDigest):
    name = 'tests.test_checkpoint.Md5Digest'
    size = 16

    def compute(self, payload):
        return hashlib.md5(payload).digest()


class TestDigests(unittest.TestCase):
    def test_sha256(self):
        digest = get_digest('sha256')
        assert isinstance(digest, Sha256Digest)
        assert digest.compute(b'').hex() == (
            'e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855')
        assert digest.verify(b'abc', digest.compute(b'abc'))
        assert not digest.verify(b'abd', digest.compute(b'abc'))

    def test_blake2b(self):
        digest = get_digest('blake2b')
        assert isinstance(digest, Blake2bDigest)
        assert len(digest.compute(b'payload')) == digest.size == 64

    def test_python_path(self):
        assert isinstance(get_digest('tests.test_checkpoint.Md5Digest'), Md5Digest)

    def test_unknown(self):
        with pytest.raises(ImproperlyConfigured):
            get_digest('crc32')
        with pytest.raises(ImproperlyConfigured):
            get_digest('tests.test_checkpoint.TestDigests')
        with pytest.raises(ImproperlyConfigured):
            get_digest('no.such.module.Digest')

    def test_abstract(self):
        with pytest.raises(NotImplementedError):
            AbstractDigest().compute(b'')


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.params = randomized(tiny_params())

    def assert_same(self, loaded, params):
        assert loaded.config == params.config
        assert loaded.names() == params.names()
        for name in params:
            assert loaded[name].dtype == np.float32
            np.testing.assert_array_equal(loaded[name], params[name])

    def test_float32_is_bit_exact(self):
        self.assert_same(deserialize(serialize(self.params)), self.params)

    def test_blake2b_and_custom_digests(self):
        self.assert_same(deserialize(serialize(self.params, 'blake2b')), self.params)
        self.assert_same(deserialize(serialize(self.params, Md5Digest.name)), self.params)

    def test_float64_is_stored_at_single_precision(self):
        params = self.params.astype(np.float64)
        loaded = deserialize(serialize(params))
        assert loaded.dtype == np.float32
        np.testing.assert_array_equal(loaded['pos_embed'], self.params['pos_embed'])

    def test_header(self):
        data = serialize(self.params)
        assert data[:8] == Constants.CHECKPOINT_MAGIC
        assert struct.unpack('<I', data[8:12]) == (1,)

    def test_bad_magic(self):
        data = serialize(self.params)
        with pytest.raises(CheckpointFormatException) as info:
            deserialize(b'NOTACKPT' + data[8:])
        assert 'magic' in str(info.value)

    def test_unsupported_version(self):
        data = serialize(self.params)
        with pytest.raises(CheckpointFormatException) as info:
            deserialize(data[:8] + struct.pack('<I', 2) + data[12:])
        assert 'version 2' in str(info.value)

    def test_truncated(self):
        data = serialize(self.params)
        for size in (4, 20, len(data) // 2, len(data) - 1):
            with pytest.raises(CheckpointFormatException):
                deserialize(data[:size])

    def test_corrupted_values(self):
        data = bytearray(serialize(self.params))
        data[len(data) // 2] ^= 0xFF
        with pytest.raises(CheckpointFormatException) as info:
            deserialize(bytes(data))
        assert 'sha256' in str(info.value)

    def test_unknown_digest_in_file(self):
        params = self.params
        data = serialize(params, Md5Digest.name)
        marker = Md5Digest.name.encode('utf-8')
        renamed = data.replace(marker, b'x' * len(marker), 1)
        with pytest.raises(CheckpointFormatException):
            deserialize(renamed)

    def test_config_mismatch_names_fields(self):
        with pytest.raises(ConfigMismatchException) as info:
            deserialize(serialize(self.params), tiny_config(depth=3, num_heads=4))
        assert 'depth' in str(info.value)
        assert 'num_heads' in str(info.value)

    def test_matching_config(self):
        self.assert_same(deserialize(serialize(self.params), tiny_config()), self.params)

    def test_config_differences(self):
        assert config_differences(tiny_config(), tiny_config(mlp_dim=64)) == ['mlp_dim']
        assert config_differences(tiny_config(), tiny_config()) == []


def test_save_and_load(tmpdir):
    params = randomized(tiny_params())
    path = str(tmpdir.join('run', Constants.EMA_CHECKPOINT))
    save_params(params, path)
    loaded = load_params(path, expected_config=params.config)
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])
    assert os.listdir(str(tmpdir.join('run'))) == [Constants.EMA_CHECKPOINT]


def test_save_replaces_existing_file(tmpdir):
    path = str(tmpdir.join('model.ckpt'))
    save_params(tiny_params(seed=1), path)
    second = tiny_params(seed=2)
    save_params(second, path)
    np.testing.assert_array_equal(load_params(path)['cls_token'], second['cls_token'])


def test_unknown_digest_on_save(tmpdir):
    with pytest.raises(ImproperlyConfigured):
        save_params(tiny_params(), str(tmpdir.join('model.ckpt')), digest='md4')
