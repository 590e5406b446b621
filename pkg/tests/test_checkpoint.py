"""Checkpoint byte layout, round trips, and geometry validation."""

import struct

import numpy as np
import pytest

from shnet.checkpoint import MAGIC, load_checkpoint, load_into, save_checkpoint
from shnet.config import RunConfig
from shnet.errors import DataError, ShapeError
from shnet.model import build_model
from shnet.text import Vocabulary


@pytest.fixture
def vocab():
    return Vocabulary(["a", "b", "c"])


def tiny_cfg(**kw):
    base = dict(variant="shnet", resolution=16, channels=4, heads=2,
                embed_dim=3, feature_size=2, seed=1)
    base.update(kw)
    return RunConfig(**base)


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = [("alpha.w", rng.normal(size=(3, 4))),
              ("beta.b", rng.normal(size=(5,))),
              ("gamma", np.array(2.5))]
    path = tmp_path / "p.ckpt"
    save_checkpoint(str(path), params)
    back = load_checkpoint(str(path))
    assert list(back) == ["alpha.w", "beta.b", "gamma"]
    for name, arr in params:
        assert np.array_equal(back[name], arr)


def test_byte_layout(tmp_path):
    path = tmp_path / "p.ckpt"
    save_checkpoint(str(path), [("w", np.array([[1.0, 2.0]]))])
    blob = path.read_bytes()
    assert blob.startswith(MAGIC)
    off = len(MAGIC)
    (nlen,) = struct.unpack_from("<I", blob, off)
    assert nlen == 1
    assert blob[off + 4:off + 5] == b"w"
    (rank,) = struct.unpack_from("<I", blob, off + 5)
    assert rank == 2
    assert struct.unpack_from("<II", blob, off + 9) == (1, 2)
    assert struct.unpack_from("<dd", blob, off + 17) == (1.0, 2.0)
    assert len(blob) == off + 17 + 16


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(str(path))


def test_truncated_rejected(tmp_path):
    path = tmp_path / "p.ckpt"
    save_checkpoint(str(path), [("w", np.ones((4, 4)))])
    blob = path.read_bytes()
    path.write_bytes(blob[:-9])
    with pytest.raises(DataError, match="truncated|corrupt"):
        load_checkpoint(str(path))


def test_model_round_trip_and_determinism(tmp_path, vocab):
    cfg = tiny_cfg()
    model = build_model(cfg, vocab)
    path = tmp_path / "m.ckpt"
    save_checkpoint(str(path), model.named_parameters())

    clone = build_model(tiny_cfg(seed=99), vocab)  # different init
    load_into(clone, str(path))
    for (na, pa), (nb, pb) in zip(model.named_parameters(), clone.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)

    # identical parameters serialize to identical bytes
    path2 = tmp_path / "m2.ckpt"
    save_checkpoint(str(path2), clone.named_parameters())
    assert path.read_bytes() == path2.read_bytes()


def test_geometry_mismatch_is_explicit(tmp_path, vocab):
    cfg = tiny_cfg()
    model = build_model(cfg, vocab)
    path = tmp_path / "m.ckpt"
    save_checkpoint(str(path), model.named_parameters())

    wider = build_model(tiny_cfg(channels=8, heads=2), vocab)
    with pytest.raises(ShapeError, match="geometry|mismatch"):
        load_into(wider, str(path))

    other = build_model(tiny_cfg(variant="baseline"), vocab)
    with pytest.raises(ShapeError, match="missing|unexpected"):
        load_into(other, str(path))
