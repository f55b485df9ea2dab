import json

import numpy as np
import pytest

from vqanon import archive
from vqanon.config import SCHEMA_VERSION, from_dict, load_config
from vqanon.errors import DataError


class TestArchive:
    def test_roundtrip_and_layout(self, tmp_path):
        arrays = {"a": np.arange(6, dtype="<f4").reshape(2, 3), "b": np.array([1, 0, 1], dtype="|u1"),
                  "c": np.array([2**40], dtype=">i8")}
        archive.save(tmp_path / "x.bin", "features", arrays, {"k": "v"})
        raw = (tmp_path / "x.bin").read_bytes()
        assert raw[:4] == b"VQAR"
        hlen = int.from_bytes(raw[4:8], "little")
        header = json.loads(raw[8:8 + hlen])
        assert header["kind"] == "features" and header["version"] == 1
        assert [e["dtype"] for e in header["arrays"]] == ["<f4", "|u1", "<i8"]
        back, meta = archive.load(tmp_path / "x.bin", kind="features")
        assert meta == {"k": "v"}
        for k, v in arrays.items():
            np.testing.assert_array_equal(back[k], v)
        assert not (tmp_path / "x.bin.tmp").exists()

    def test_deterministic_bytes(self):
        a = {"z": np.ones(3), "a": np.zeros(2)}
        assert archive.encode("pool", a, {"b": 1, "a": 2}) == archive.encode("pool", dict(a), {"a": 2, "b": 1})

    def test_errors(self):
        good = archive.encode("pool", {"x": np.ones(4)})
        with pytest.raises(DataError, match="bad magic"):
            archive.decode(b"NOPE" + good[4:])
        with pytest.raises(DataError, match="kind"):
            archive.decode(good, kind="checkpoint")
        with pytest.raises(DataError, match="truncated"):
            archive.decode(good[:-8])
        with pytest.raises(TypeError):
            archive.encode("pool", {"x": np.ones(2, dtype=np.complex128)})


class TestConfig:
    def test_empty_is_full_scale_profile(self):
        cfg = from_dict({})
        assert cfg.profile == "paper" and cfg.schema_version == SCHEMA_VERSION
        assert cfg.training.batch_size == 128 and cfg.generator.base_channels == 512
        assert cfg.encoder.channels == 768 and cfg.anonymizer.n_far == 200

    def test_desk_profile(self):
        cfg = from_dict({}, profile="desk")
        assert cfg.training.batch_size == 8 and cfg.generator.base_channels == 256
        assert cfg.training.max_steps == 2000

    def test_explicit_values_beat_profile_and_seed_flag_beats_file(self):
        cfg = from_dict({"profile": "desk", "seed": 5, "training": {"batch_size": 4}}, seed=9)
        assert cfg.training.batch_size == 4 and cfg.training.max_steps == 2000
        assert cfg.seed == 9 and cfg.training.seed == 9 and cfg.anonymizer.rng_seed == 9

    def test_unknown_keys(self):
        with pytest.raises(DataError, match="unknown top-level"):
            from_dict({"bogus": 1})
        with pytest.raises(DataError, match="unknown key"):
            from_dict({"training": {"learning_rate": 1}})
        with pytest.raises(DataError, match="schema_version"):
            from_dict({"schema_version": 99})
        with pytest.raises(DataError, match="invalid section"):
            from_dict({"training": {"segment_frames": 3}})

    def test_echo_roundtrip(self, tmp_path):
        cfg = from_dict({"generator": {"upsample_factors": [10, 4, 4]}}, profile="desk", seed=3)
        p = tmp_path / "c.json"
        p.write_text(cfg.to_json())
        again = load_config(p)
        assert again == cfg

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(DataError, match="invalid JSON"):
            load_config(p)
