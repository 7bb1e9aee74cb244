from types import SimpleNamespace
from typing import Any, Dict, Literal, Union

import msgpack
import numpy as np

ZType = Literal["numpy.ndarray"]


class ZData:
    @staticmethod
    def encode(data: Union[np.ndarray, Any]):
        """This converts arrays to z-format. Everything else passes through."""
        if isinstance(data, np.ndarray):
            # non-contiguous views would otherwise serialize in the wrong order.
            data = np.ascontiguousarray(data)
            return dict(
                ztype="numpy.ndarray",
                b=data.tobytes(),
                dtype=str(data.dtype),
                shape=list(data.shape),
            )
        elif isinstance(data, np.generic):
            return data.item()
        elif isinstance(data, tuple):
            return list(data)
        return data

    @staticmethod
    def get_ztype(data: Dict) -> Union[ZType, None]:
        """check if it is z-payload"""
        if type(data) is dict and "ztype" in data:
            return data["ztype"]

    @staticmethod
    def decode(zdata):
        T = ZData.get_ztype(zdata)
        if not T:
            return zdata
        elif T == "numpy.ndarray":
            array = np.frombuffer(zdata["b"], dtype=zdata["dtype"])
            # we copy the array because the buffered version is non-writable.
            return array.reshape(zdata["shape"]).copy()
        else:
            raise TypeError(f"ZData type {T} is not supported")


class Payload(SimpleNamespace):
    """A flat namespace of arrays and scalars that round-trips through msgpack.

    .. code-block:: python

        msg = Payload(kind="slope-grid", centroids=grid.centroids).serialize()
        data = Payload.deserialize(msg)
    """

    def serialize(self) -> bytes:
        data = {k: ZData.encode(v) for k, v in self.__dict__.items()}
        return msgpack.packb(data, use_bin_type=True)

    @staticmethod
    def deserialize(payload: bytes) -> Dict:
        unpacked = msgpack.unpackb(payload, raw=False)
        return {k: ZData.decode(v) for k, v in unpacked.items()}
