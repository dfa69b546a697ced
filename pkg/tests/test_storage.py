import numpy as np
import pytest

from softrom.storage import StorageError, load_bundle, save_bundle


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a": rng.standard_normal((7, 3)),
        "idx": rng.integers(0, 100, size=11),
        "scalarish": np.array(3.25),
    }
    meta = {"kind": "test", "note": "hello", "num": 4}
    p = tmp_path / "bundle.srm"
    save_bundle(p, arrays, meta)
    back, meta2 = load_bundle(p)
    assert meta2 == meta
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype.newbyteorder("<")
        assert np.array_equal(back[k], v)
        assert back[k].tobytes() == np.ascontiguousarray(v).tobytes()


def test_rejects_garbage(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(StorageError):
        load_bundle(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.srm"
    save_bundle(p, {"a": np.arange(10.0)})
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(StorageError):
        load_bundle(p)
