import struct

import numpy as np
import pytest

from tempohier.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from tempohier.data import FeatureSchema
from tempohier.errors import DataError
from tempohier.hierarchy import HierarchySpec
from tempohier.model import ModelConfig, init_model

CARD = (30, 3, 3, 4, 2, 7, 12, 2, 2, 2, 2, 2)


@pytest.fixture(params=[("encdec", "mse"), ("mono", "nbnll")])
def model(request):
    kind, loss = request.param
    cfg = ModelConfig(kind, FeatureSchema(CARD), HierarchySpec(), loss)
    return cfg, init_model(cfg, 3)


def test_round_trip_is_bit_exact(model, tmp_path):
    cfg, params = model
    path = save_checkpoint(tmp_path / "m.ckpt", params, cfg)
    back, cfg2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert set(back) == set(params)
    for k in params:
        assert back[k].dtype == np.float64 and back[k].shape == params[k].shape
        assert back[k].tobytes() == params[k].tobytes()
    assert dumps(back, cfg2) == path.read_bytes()


def test_header_layout(model):
    cfg, params = model
    blob = dumps(params, cfg)
    assert blob[:8] == MAGIC
    assert struct.unpack("<5I", blob[8:28]) == (1, 35, 28, 7, 4)


def test_special_values_survive():
    cfg = ModelConfig("mono", FeatureSchema(CARD))
    params = init_model(cfg, 0)
    params["mono.head.b"] = np.array([-0.0])
    params["mono.in.b"][:3] = [np.inf, 5e-324, -1.7976931348623157e308]
    back, _ = loads(dumps(params, cfg))
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_corrupted_files(model, tmp_path):
    cfg, params = model
    blob = dumps(params, cfg)
    with pytest.raises(DataError, match="magic"):
        loads(b"NOTACKPT" + blob[8:])
    with pytest.raises(DataError, match="version"):
        loads(blob[:8] + struct.pack("<I", 2) + blob[12:])
    with pytest.raises(DataError, match="truncated"):
        loads(blob[:-5])
    with pytest.raises(DataError, match="trailing"):
        loads(blob + b"\0")
    with pytest.raises(DataError, match="not found"):
        load_checkpoint(tmp_path / "none.ckpt")


def test_schema_hash_mismatch(model):
    cfg, params = model
    blob = bytearray(dumps(params, cfg))
    digest = cfg.schema.digest().encode()
    i = blob.index(digest)
    blob[i] = ord("0") if blob[i] != ord("0") else ord("1")
    with pytest.raises(DataError, match="hash"):
        loads(bytes(blob))
