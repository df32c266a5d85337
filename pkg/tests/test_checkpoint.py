import json
import struct

import numpy as np
import pytest

from ctxcomplete.checkpoint import (
    MAGIC,
    BadMagicError,
    CheckpointError,
    CorruptManifestError,
    TruncatedPayloadError,
    VersionMismatchError,
    load_head,
    load_lm,
    save_head,
    save_lm,
)
from ctxcomplete.data import ClassCatalog, Vocab
from ctxcomplete.factorcell import ModelConfig, init_params
from ctxcomplete.instances import HeadConfig, init_instance_head
from ctxcomplete.tensors import Rng
from ctxcomplete.training import AdamState, TrainConfig


@pytest.fixture()
def lm_setup(tiny_vocab):
    cfg = ModelConfig(e=4, h=6, r=2, m=3, feat_dim=4,
                      vocab_size=tiny_vocab.size, max_len=10)
    params = init_params(cfg, Rng(1), dtype=np.float32)
    return params, tiny_vocab


def _saved(tmp_path, lm_setup, **kwargs):
    params, vocab = lm_setup
    path = tmp_path / "model.fcqc"
    save_lm(path, params, vocab, **kwargs)
    return path, params, vocab


class TestRoundTrip:
    def test_arrays_bitwise_identical(self, tmp_path, lm_setup):
        path, params, vocab = _saved(tmp_path, lm_setup)
        loaded = load_lm(path)
        for name in params.FIELDS:
            a, b = getattr(params, name), getattr(loaded.params, name)
            assert a.dtype == b.dtype == np.float32
            assert np.array_equal(a, b)

    def test_vocab_and_catalog_survive(self, tmp_path, lm_setup):
        catalog = ClassCatalog(("car", "dog"))
        path, _, vocab = _saved(tmp_path, lm_setup, catalog=catalog)
        loaded = load_lm(path)
        assert loaded.vocab.tokens == vocab.tokens
        assert loaded.catalog.classes == ("car", "dog")

    def test_model_config_survives(self, tmp_path, lm_setup):
        path, params, _ = _saved(tmp_path, lm_setup)
        assert load_lm(path).params.cfg == params.cfg

    def test_train_config_and_iteration(self, tmp_path, lm_setup):
        cfg = TrainConfig(lr=1e-3, iterations=77)
        path, _, _ = _saved(tmp_path, lm_setup, train_cfg=cfg, iteration=42)
        loaded = load_lm(path)
        assert loaded.iteration == 42
        assert loaded.train_config["lr"] == pytest.approx(1e-3)

    def test_adam_state_round_trips(self, tmp_path, lm_setup):
        params, vocab = lm_setup
        state = AdamState.init(params.to_dict())
        state.t = 9
        for arr in state.m.values():
            arr += 0.25
        path = tmp_path / "model.fcqc"
        save_lm(path, params, vocab, adam_state=state)
        loaded = load_lm(path).adam_state
        assert loaded.t == 9
        for name in state.m:
            assert np.array_equal(loaded.m[name], state.m[name].astype(np.float32))
            assert np.array_equal(loaded.v[name], state.v[name].astype(np.float32))

    def test_rng_state_resumes_the_stream(self, tmp_path, lm_setup):
        params, vocab = lm_setup
        rng = Rng(5)
        rng.normal(7)
        expect = Rng(5)
        expect.normal(7)
        path = tmp_path / "model.fcqc"
        save_lm(path, params, vocab, rng=rng)
        restored = load_lm(path).restore_rng()
        assert np.array_equal(restored.normal(6), expect.normal(6))

    def test_missing_rng_state_is_an_error(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        with pytest.raises(CheckpointError, match="rng"):
            load_lm(path).restore_rng()

    def test_head_checkpoint_round_trip(self, tmp_path, tiny_vocab):
        cfg = HeadConfig(e=4, h=6, vocab_size=tiny_vocab.size, n_classes=3, max_len=10)
        head = init_instance_head(cfg, Rng(2), dtype=np.float32)
        catalog = ClassCatalog(("a", "b", "c"))
        path = tmp_path / "head.fcqc"
        save_head(path, head, tiny_vocab, catalog)
        loaded = load_head(path)
        assert loaded.params.cfg == cfg
        assert np.array_equal(loaded.params.dense_W, head.dense_W)
        for name, arr in head.encoder.to_dict().items():
            assert np.array_equal(getattr(loaded.params.encoder, name), arr)


class TestKindDispatch:
    def test_lm_loader_rejects_head_files(self, tmp_path, tiny_vocab):
        cfg = HeadConfig(e=4, h=6, vocab_size=tiny_vocab.size, n_classes=2, max_len=10)
        head = init_instance_head(cfg, Rng(0), dtype=np.float32)
        path = tmp_path / "head.fcqc"
        save_head(path, head, tiny_vocab, ClassCatalog(("a", "b")))
        with pytest.raises(CheckpointError, match="expected"):
            load_lm(path)

    def test_head_loader_rejects_lm_files(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        with pytest.raises(CheckpointError, match="expected"):
            load_head(path)


class TestFileDamage:
    def test_bad_magic(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        data = bytearray(path.read_bytes())
        data[:4] = b"ZZZZ"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            load_lm(path)

    def test_not_even_a_header(self, tmp_path):
        path = tmp_path / "stub.fcqc"
        path.write_bytes(b"nope")
        with pytest.raises(BadMagicError):
            load_lm(path)

    def test_version_bump_refused(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError, match="99"):
            load_lm(path)

    def test_truncated_fixed_header(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(TruncatedPayloadError):
            load_lm(path)

    def test_truncated_payload(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        data = path.read_bytes()
        path.write_bytes(data[:-20])
        with pytest.raises(TruncatedPayloadError, match="past end"):
            load_lm(path)

    def test_header_json_damage(self, tmp_path, lm_setup):
        path, _, _ = _saved(tmp_path, lm_setup)
        data = bytearray(path.read_bytes())
        data[16] = ord("!")  # first byte of the JSON blob
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptManifestError):
            load_lm(path)


def _handcrafted(path, manifest, payload):
    header = json.dumps({"kind": "lm", "manifest": manifest}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


class TestManifestValidation:
    def test_overlapping_tensors(self, tmp_path):
        path = tmp_path / "bad.fcqc"
        manifest = [
            {"name": "a", "shape": [2], "offset": 0},
            {"name": "b", "shape": [2], "offset": 4},
        ]
        _handcrafted(path, manifest, b"\x00" * 12)
        with pytest.raises(CorruptManifestError, match="overlap"):
            load_lm(path)

    def test_negative_offset(self, tmp_path):
        path = tmp_path / "bad.fcqc"
        _handcrafted(path, [{"name": "a", "shape": [1], "offset": -4}], b"\x00" * 4)
        with pytest.raises(CorruptManifestError, match="negative"):
            load_lm(path)

    def test_missing_entry_fields(self, tmp_path):
        path = tmp_path / "bad.fcqc"
        _handcrafted(path, [{"name": "a", "shape": [1]}], b"\x00" * 4)
        with pytest.raises(CorruptManifestError, match="missing fields"):
            load_lm(path)

    def test_manifest_must_be_a_list(self, tmp_path):
        path = tmp_path / "bad.fcqc"
        header = json.dumps({"kind": "lm", "manifest": "oops"}).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<I", 1) + struct.pack("<Q", len(header)))
            fh.write(header)
        with pytest.raises(CorruptManifestError, match="manifest"):
            load_lm(path)

    def test_tensor_past_eof(self, tmp_path):
        path = tmp_path / "bad.fcqc"
        _handcrafted(path, [{"name": "a", "shape": [64], "offset": 0}], b"\x00" * 8)
        with pytest.raises(TruncatedPayloadError, match="past end"):
            load_lm(path)
