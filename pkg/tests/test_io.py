import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtsc.io import (
    FormatError,
    QuantSection,
    checkpoint_digest,
    decode_tensors,
    encode_tensors,
    load_checkpoint,
    load_compressed,
    save_checkpoint,
)

arrays = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4),
    elements=st.floats(allow_nan=True, allow_infinity=True, width=64),
)


@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=5))
def test_round_trip_bit_exact(tensors):
    back, quant = decode_tensors(encode_tensors(tensors))
    assert quant == {}
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == np.shape(tensors[k])
        assert back[k].tobytes() == np.asarray(tensors[k], dtype="<f8").tobytes()


def test_layout():
    raw = encode_tensors({"w": np.array([[1.0, 2.0]])})
    assert raw[:5] == b"MTSC1"
    assert raw[5:9] == (1).to_bytes(4, "little")
    assert raw[9:13] == (1).to_bytes(4, "little") and raw[13:14] == b"w"
    assert raw[14:18] == (2).to_bytes(4, "little")
    assert raw[18:26] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert raw[26:] == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_quant_section_round_trip(tmp_path):
    mask = np.array([True, False, True, True, False, False, True, False, True])
    q = {"w": QuantSection(4, 0.125, mask)}
    path = tmp_path / "c.mtsc"
    save_checkpoint(path, {"w": np.arange(9.0)}, q)
    tensors, quant = load_compressed(path)
    assert quant["w"].bits == 4 and quant["w"].scale == 0.125
    np.testing.assert_array_equal(quant["w"].mask, mask)
    np.testing.assert_array_equal(load_checkpoint(path)["w"], np.arange(9.0))


@pytest.mark.parametrize("raw", [b"MTSC2\x00\x00\x00\x00", b"MTSC1\x01\x00\x00\x00\x05", b""])
def test_corrupt_rejected(raw):
    with pytest.raises(FormatError):
        decode_tensors(raw)


def test_trailing_garbage_rejected():
    with pytest.raises(FormatError):
        decode_tensors(encode_tensors({"a": np.ones(2)}) + b"junk")


def test_digest_stable():
    t = {"a": np.ones(3), "b": np.zeros((2, 2))}
    assert checkpoint_digest(t) == checkpoint_digest({k: v.copy() for k, v in t.items()})
    assert checkpoint_digest(t) != checkpoint_digest({"a": np.ones(3) * 2, "b": np.zeros((2, 2))})
