"""
These are the unit tests for the msgpack artifact encoding
"""
import numpy as np
import pytest

from groundwork.interfaces import Payload, ZData


def test_zdata_numpy():
    data = np.random.random([4, 8, 3])
    unpacked = ZData.decode(ZData.encode(data))

    assert data.dtype == unpacked.dtype, "dtype is wrong."
    assert data.shape == unpacked.shape, "array shape is wrong."
    assert np.array_equal(data, unpacked), "values are bit-exact"
    unpacked[0, 0, 0] = 1.0  # decoded arrays are writable


def test_zdata_non_contiguous():
    data = np.arange(12.0).reshape(3, 4).T
    assert np.array_equal(ZData.decode(ZData.encode(data)), data), "transposed views keep their layout"


def test_zdata_passthrough():
    assert ZData.encode(np.float64(2.5)) == 2.5, "numpy scalars become python scalars"
    assert ZData.encode((1, 2)) == [1, 2], "tuples become lists"
    assert ZData.decode({"origin": [0.0, 1.0]}) == {"origin": [0.0, 1.0]}, "plain dicts pass through"

    with pytest.raises(TypeError):
        ZData.decode({"ztype": "torch.Tensor"})


def test_payload_interface():
    payload = Payload(
        centroids=np.zeros((2, 3, 3)),
        holes=np.eye(2, 3, dtype=bool),
        level=1,
        basis="bspline",
        transform=dict(origin=[1.0, 2.0], spacing=[1.0, 1.0], dims=[2, 3]),
    )
    data = Payload.deserialize(payload.serialize())

    assert data["holes"].dtype == bool, "boolean masks survive"
    assert np.array_equal(data["holes"], payload.holes), "mask values survive"
    assert data["level"] == 1 and data["basis"] == "bspline", "scalars pass through"
    assert data["transform"]["dims"] == [2, 3], "nested dicts pass through"
