import struct

import numpy as np
import pytest

from textslider import container
from textslider.artifact import SliderArtifact
from textslider.errors import ConfigurationError, ContainerError


def test_round_trip(rng):
    tensors = {"a": rng.standard_normal((3, 5)).astype(np.float32), "b": np.arange(7, dtype=np.float32)}
    buf = container.to_bytes(tensors, {"kind": "test", "n": 2})
    assert buf[:8] == b"TSLW0001"
    arrays, meta = container.from_bytes(buf)
    assert meta == {"kind": "test", "n": 2}
    for k in tensors:
        assert np.array_equal(arrays[k], tensors[k])
    assert container.to_bytes(arrays, meta) == buf


def test_payload_alignment(rng):
    buf = container.to_bytes({"a": np.ones(3, np.float32), "b": np.ones(5, np.float32)})
    (hlen,) = struct.unpack("<Q", buf[8:16])
    assert (16 + hlen) % 64 == 0
    import json

    header = json.loads(buf[16 : 16 + hlen])
    assert all(t["offset"] % 64 == 0 for t in header["tensors"])
    assert [t["dtype"] for t in header["tensors"]] == ["float32", "float32"]


def test_bad_magic():
    buf = bytearray(container.to_bytes({"a": np.ones(2, np.float32)}))
    buf[:8] = b"NOTMAGIC"
    with pytest.raises(ContainerError):
        container.from_bytes(bytes(buf))


def test_truncated():
    buf = container.to_bytes({"a": np.ones(40, np.float32)})
    for cut in (4, 12, 40, len(buf) - 1):
        with pytest.raises(ContainerError):
            container.from_bytes(buf[:cut])


def test_non_finite_rejected():
    with pytest.raises(ContainerError):
        container.to_bytes({"a": np.array([np.nan], np.float32)})


def test_slider_artifact_round_trip_bytes(trained, tmp_path):
    path = tmp_path / "age.tsl"
    trained.artifact.save(path)
    raw = path.read_bytes()
    back = SliderArtifact.load(path)
    assert back.to_bytes() == raw
    meta = back.metadata()
    assert meta["rank"] == 4
    assert meta["epochs"] == 500
    assert meta["learning_rate"] == 2e-4
    assert meta["prompt_spec"]["positive"] == "person, old"
    assert meta["target_layers"][0][:4] == ["0.q", "0.k", "0.v", "0.out"]


def test_encoder_file_is_not_a_slider(toy_encoder, tmp_path):
    path = tmp_path / "enc.tslw"
    toy_encoder.save(path)
    with pytest.raises(ConfigurationError):
        SliderArtifact.load(path)
