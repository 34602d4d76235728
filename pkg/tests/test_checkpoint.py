import json
import struct

import numpy as np
import pytest

from conftest import SparseStream
from lateral_dae.checkpoint import (
    MAGIC,
    CheckpointError,
    dumps_checkpoint,
    load_checkpoint,
    load_whitener,
    loads_checkpoint,
    save_checkpoint,
    save_whitener,
)
from lateral_dae.checkpoint import Checkpoint
from lateral_dae.data import fit_whitener
from lateral_dae.trainer import TrainConfig, evaluate, make_validation_set, train, validation_cost


@pytest.fixture(scope="module")
def trained():
    stream = SparseStream(8)
    cfg = TrainConfig(variant="mod", layer_sizes=(8, 6, 3), updates=30, valid_interval=10,
                      valid_batches=4, batch=10, seed=2)
    params, history, opt = train(cfg, stream, stream)
    white = fit_whitener(np.random.default_rng(0).standard_normal((200, 8)), 8)
    return cfg, params, history, opt, white, stream


def manifest_of(blob):
    _, _, n = struct.unpack_from("<4sIQ", blob)
    return json.loads(blob[16:16 + n])


class TestRoundTrip:
    def test_save_load_save_identical(self, trained, tmp_path):
        cfg, params, history, opt, white, _ = trained
        a = tmp_path / "a.ldae"
        b = tmp_path / "b.ldae"
        save_checkpoint(a, params, white, opt, history, cfg, {"note": "x"})
        ck = load_checkpoint(a)
        save_checkpoint(b, ck.params, ck.whitener, ck.opt_state, ck.history, ck.config, ck.extra)
        assert a.read_bytes() == b.read_bytes()

    def test_tensors_bit_exact(self, trained, tmp_path):
        cfg, params, history, opt, white, _ = trained
        ck = loads_checkpoint(dumps_checkpoint(Checkpoint(params, white, opt, history, cfg)))
        for k, v in params.all_tensors().items():
            assert ck.params.all_tensors()[k].dtype == v.dtype
            assert ck.params.all_tensors()[k].tobytes() == v.tobytes()
        for k, v in opt.tensors().items():
            assert ck.opt_state.tensors()[k].tobytes() == v.tobytes()
        assert ck.history.records == history.records
        assert ck.config == cfg
        assert ck.spec == params.spec
        np.testing.assert_array_equal(ck.whitener.basis, white.basis)

    def test_reproduces_validation_cost(self, trained, tmp_path):
        cfg, params, *_, stream = trained
        path = tmp_path / "m.ldae"
        save_checkpoint(path, params)
        valid = make_validation_set(stream, 5, 20, 0.5, seed=9)
        assert validation_cost(load_checkpoint(path).params, valid) == validation_cost(params, valid)
        assert evaluate(load_checkpoint(path).params, stream, 3, seed=1) == evaluate(params, stream, 3, seed=1)

    def test_identical_runs_give_identical_files(self, trained, tmp_path):
        cfg, *_, stream = trained
        blobs = []
        for _ in range(2):
            p, h, o = train(cfg, stream, stream)
            blobs.append(dumps_checkpoint(Checkpoint(p, None, o, h, cfg)))
        assert blobs[0] == blobs[1]

    def test_whitener_only(self, trained, tmp_path):
        white = trained[4]
        path = tmp_path / "w.ldae"
        save_whitener(path, white)
        back = load_whitener(path)
        x = np.random.default_rng(1).standard_normal((3, 8))
        np.testing.assert_array_equal(back.forward(x), white.forward(x))

    def test_model_only_file_has_no_whitener(self, trained, tmp_path):
        path = tmp_path / "m.ldae"
        save_checkpoint(path, trained[1])
        with pytest.raises(CheckpointError, match="no whitener"):
            load_whitener(path)


class TestFormat:
    def test_layout(self, trained):
        blob = dumps_checkpoint(Checkpoint(trained[1]))
        magic, version, n = struct.unpack_from("<4sIQ", blob)
        assert magic == MAGIC and version == 1
        man = manifest_of(blob)
        assert man["spec"] == {"variant": "mod", "layer_sizes": [8, 6, 3]}
        offset = 0
        for entry in man["tensors"]:
            assert entry["offset"] == offset
            assert entry["dtype"].startswith("<")
            offset += entry["nbytes"]
        assert len(blob) == 16 + n + offset

    def test_truncated_payload_names_tensor(self, trained):
        blob = dumps_checkpoint(Checkpoint(trained[1]))
        last = manifest_of(blob)["tensors"][-1]["name"]
        with pytest.raises(CheckpointError, match=f"length mismatch: tensor '{last}'"):
            loads_checkpoint(blob[:-3])

    def test_extra_bytes(self, trained):
        blob = dumps_checkpoint(Checkpoint(trained[1]))
        with pytest.raises(CheckpointError, match="length mismatch"):
            loads_checkpoint(blob + b"\0")

    def test_bad_magic(self, trained):
        blob = dumps_checkpoint(Checkpoint(trained[1]))
        with pytest.raises(CheckpointError, match="bad magic"):
            loads_checkpoint(b"XXXX" + blob[4:])

    def test_bad_version(self, trained):
        blob = dumps_checkpoint(Checkpoint(trained[1]))
        with pytest.raises(CheckpointError, match="version"):
            loads_checkpoint(blob[:4] + struct.pack("<I", 99) + blob[8:])

    def test_short_file(self):
        with pytest.raises(CheckpointError):
            loads_checkpoint(b"LD")
