"""Tests for CSV and metadata output."""

import hashlib
import json
import math

import pandas as pd

from renewal_quantum.report.writer import config_digest, meta_path, write_csv, write_meta


class TestConfigDigest:
    def test_prefix_and_hash(self):
        digest = config_digest('{"a":1}')
        assert digest == "sha256:" + hashlib.sha256(b'{"a":1}').hexdigest()


class TestMetaPath:
    def test_sidecar_name(self, tmp_path):
        assert meta_path(tmp_path / "run.csv") == tmp_path / "run.csv.meta.json"


class TestWriteCsv:
    def test_creates_parent_and_blank_nan(self, tmp_path):
        frame = pd.DataFrame({"tau": [0.0, 0.1], "series": [1.0, math.nan]})
        path = write_csv(frame, tmp_path / "nested" / "out.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "tau,series"
        assert lines[1] == "0,1"
        assert lines[2] == "0.10000000000000001,"

    def test_round_trip_precision(self, tmp_path):
        value = 1.0 / 3.0
        path = write_csv(pd.DataFrame({"x": [value]}), tmp_path / "out.csv")
        assert float(path.read_text(encoding="utf-8").splitlines()[1]) == value


class TestWriteMeta:
    def test_keys(self, tmp_path):
        csv_path = tmp_path / "out.csv"
        path = write_meta(csv_path, "aged-decay", '{"a":1}', 7, 2, 1.23456, 10)
        meta = json.loads(path.read_text(encoding="utf-8"))
        assert meta["experiment"] == "aged-decay"
        assert meta["config_sha256"] == config_digest('{"a":1}')
        assert meta["seed"] == 7
        assert meta["threads"] == 2
        assert meta["rows"] == 10
        assert meta["wall_time"] == 1.235
        assert set(meta["versions"]) == {"renewal_quantum", "python", "numpy", "scipy", "pandas"}
