import json

import numpy as np
import pytest

from cfdebias.checkpoint import decode_array, encode_array, load_checkpoint, save_checkpoint
from cfdebias.errors import InvalidArgumentError


def test_arrays_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"w": rng.normal(size=(3, 4, 5)), "b": np.array([np.pi, -0.0, 1e-300, np.nextafter(1, 2)]),
              "s": np.array(2.5)}
    save_checkpoint(tmp_path / "c.json", arrays, {"seed": 1})
    back, meta = load_checkpoint(tmp_path / "c.json")
    assert meta == {"seed": 1}
    for k, v in arrays.items():
        assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()


def test_file_bytes_depend_only_on_contents(tmp_path):
    a = {"x": np.arange(6.0).reshape(2, 3), "y": np.ones(2)}
    b = {"y": np.ones(2), "x": np.arange(6.0).reshape(2, 3)}
    save_checkpoint(tmp_path / "a.json", a, {"k": 1, "j": [1, 2]})
    save_checkpoint(tmp_path / "b.json", b, {"j": [1, 2], "k": 1})
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_rejects_foreign_files(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"arrays": {}}))
    with pytest.raises(InvalidArgumentError):
        load_checkpoint(tmp_path / "x.json")


def test_encode_is_little_endian_float64():
    enc = encode_array(np.array([1, 2], dtype=np.int32))
    assert enc["dtype"] == "<f8" and enc["shape"] == [2]
    assert decode_array(enc).tolist() == [1.0, 2.0]
