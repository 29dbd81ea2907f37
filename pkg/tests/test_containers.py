import struct

import numpy as np
import pytest

from fazekit.errors import FormatError, VersionError
from fazekit.harness.containers import (ModelContainer, dataset_bytes, model_bytes, read_dataset, read_model,
                                        write_dataset, write_model)
from fazekit.synthdata import Dataset, SyntheticPerson, sample_person


def _model(rng):
    tensors = {"w": rng.normal(size=(4, 3)).astype(np.float32), "b": rng.normal(size=3).astype(np.float32),
               "scalar": np.array(2.5, dtype=np.float32), "k3/w1": rng.normal(size=(2, 2, 2)).astype(np.float32)}
    tensors["w"][0, 0] = np.float32(-0.0)
    tensors["b"][0] = np.float32(1e-40)  # subnormal survives
    return ModelContainer(tensors, "abc123", 42, {"note": "ünïcode", "k": [1, 3]})


def _dataset(rng, n=7, w=8, h=4):
    persons = [sample_person(5, 0), sample_person(5, 1)]
    return Dataset(rng.uniform(0, 1, size=(n, h, w)).astype(np.float32), rng.normal(size=(n, 2)),
                   rng.normal(size=(n, 2)), rng.integers(0, 2, size=n), persons)


def test_model_round_trip_bit_exact(tmp_path, rng):
    m = _model(rng)
    write_model(tmp_path / "m.fazekit", m)
    back = read_model(tmp_path / "m.fazekit")
    assert list(back.tensors) == list(m.tensors)
    for n in m.tensors:
        assert back.tensors[n].tobytes() == m.tensors[n].tobytes()
        assert back.tensors[n].shape == m.tensors[n].shape
    assert (back.config_hash, back.seed, back.metadata) == (m.config_hash, m.seed, m.metadata)
    assert model_bytes(back) == model_bytes(m)


def test_dataset_round_trip_bit_exact(tmp_path, rng):
    ds = _dataset(rng)
    write_dataset(tmp_path / "d.fazedat", ds)
    back = read_dataset(tmp_path / "d.fazedat")
    for a, b in [(ds.images, back.images), (ds.gaze, back.gaze), (ds.head, back.head)]:
        assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(back.person_ids, ds.person_ids)
    assert all(isinstance(p, SyntheticPerson) for p in back.persons)
    assert back.persons == ds.persons
    assert dataset_bytes(back) == dataset_bytes(ds)


@pytest.mark.parametrize("kind", ["model", "dataset"])
def test_bad_magic(tmp_path, rng, kind):
    data = model_bytes(_model(rng)) if kind == "model" else dataset_bytes(_dataset(rng))
    path = tmp_path / "f"
    path.write_bytes(b"XXXXXXXX" + data[8:])
    reader = read_model if kind == "model" else read_dataset
    with pytest.raises(FormatError, match="magic") as e:
        reader(path)
    assert e.value.offset == 0


@pytest.mark.parametrize("kind", ["model", "dataset"])
def test_future_version_rejected(tmp_path, rng, kind):
    data = model_bytes(_model(rng), version=2) if kind == "model" else dataset_bytes(_dataset(rng), version=2)
    path = tmp_path / "f"
    path.write_bytes(data)
    reader = read_model if kind == "model" else read_dataset
    with pytest.raises(VersionError) as e:
        reader(path)
    assert e.value.offset == 8


@pytest.mark.parametrize("cut", [3, 10, 20, 60, -1])
def test_truncated_model(tmp_path, rng, cut):
    data = model_bytes(_model(rng))
    path = tmp_path / "m"
    path.write_bytes(data[:cut])
    with pytest.raises(FormatError) as e:
        read_model(path)
    assert e.value.offset is not None and e.value.offset <= len(data[:cut])


def test_truncated_and_padded_dataset(tmp_path, rng):
    data = dataset_bytes(_dataset(rng))
    for payload in (data[:-5], data + b"\0"):
        (tmp_path / "d").write_bytes(payload)
        with pytest.raises(FormatError, match="records"):
            read_dataset(tmp_path / "d")


def test_trailing_bytes_in_model(tmp_path, rng):
    (tmp_path / "m").write_bytes(model_bytes(_model(rng)) + b"junk")
    with pytest.raises(FormatError, match="trailing"):
        read_model(tmp_path / "m")


def test_dataset_pixel_range(tmp_path, rng):
    ds = _dataset(rng)
    ds.images[0, 0, 0] = 1.5
    with pytest.raises(FormatError):
        dataset_bytes(ds)
    good = bytearray(dataset_bytes(_dataset(rng)))
    # last pixel of the last record
    good[-4:] = struct.pack("<f", -0.25)
    (tmp_path / "d").write_bytes(bytes(good))
    with pytest.raises(FormatError, match="outside"):
        read_dataset(tmp_path / "d")
