"""Tests for the text sinks: exact float round-trips, atomic CSV/JSONL."""

from __future__ import annotations

import json
import math
import os

import numpy as np
import pytest

from rnnlab.io import atomic_write_text, fmt, read_csv, write_csv, write_jsonl


class TestFmt:
    def test_floats_use_shortest_round_trip_repr(self):
        assert fmt(0.1) == "0.1"
        assert fmt(1.0) == "1.0"
        assert fmt(math.pi) == repr(math.pi)
        assert float(fmt(math.pi)) == math.pi

    def test_non_floats_pass_through(self):
        assert fmt(5) == "5"
        assert fmt("cell") == "cell"
        assert fmt("") == ""


class TestCsv:
    def test_round_trip_exact_floats(self, tmp_path):
        path = tmp_path / "m.csv"
        rows = [(0, math.pi, "minimal"), (1, 1e-300, "gru")]
        write_csv(path, ["step", "value", "cell"], rows)
        header, got = read_csv(path)
        assert header == ["step", "value", "cell"]
        assert got == [["0", repr(math.pi), "minimal"], ["1", "1e-300", "gru"]]
        assert float(got[0][1]) == math.pi

    def test_byte_identical_rewrites(self, tmp_path):
        rows = [(i, float(i) / 7.0) for i in range(20)]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, ["i", "v"], rows)
        write_csv(b, ["i", "v"], rows)
        assert a.read_bytes() == b.read_bytes()

    def test_row_width_validated(self, tmp_path):
        with pytest.raises(ValueError, match="row 1"):
            write_csv(tmp_path / "x.csv", ["a", "b"], [(1, 2), (3,)])

    def test_header_only_file(self, tmp_path):
        path = tmp_path / "h.csv"
        write_csv(path, ["a", "b"], [])
        header, rows = read_csv(path)
        assert header == ["a", "b"] and rows == []

    def test_read_empty_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            read_csv(path)

    def test_trailing_newline_present(self, tmp_path):
        path = tmp_path / "n.csv"
        write_csv(path, ["a"], [(1,)])
        assert path.read_text() == "a\n1\n"


class TestJsonl:
    def test_records_round_trip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = [{"step": 0, "v": 0.5}, {"step": 1, "v": [1, 2]}]
        write_jsonl(path, records)
        lines = path.read_text().splitlines()
        assert [json.loads(ln) for ln in lines] == records

    def test_empty_records(self, tmp_path):
        path = tmp_path / "e.jsonl"
        write_jsonl(path, [])
        assert path.read_text() == ""


class TestAtomicity:
    def test_creates_parent_directories(self, tmp_path):
        path = tmp_path / "deep" / "er" / "f.txt"
        atomic_write_text(path, "hello")
        assert path.read_text() == "hello"

    def test_no_temp_files_left_behind(self, tmp_path):
        path = tmp_path / "f.txt"
        atomic_write_text(path, "x" * 1000)
        atomic_write_text(path, "y")
        assert sorted(os.listdir(tmp_path)) == ["f.txt"]
        assert path.read_text() == "y"

    def test_overwrite_replaces_whole_content(self, tmp_path):
        path = tmp_path / "f.csv"
        write_csv(path, ["a"], [(i,) for i in range(100)])
        write_csv(path, ["a"], [(1,)])
        assert path.read_text() == "a\n1\n"

    def test_numpy_scalars_format_as_plain_numbers(self, tmp_path):
        # rows built from numpy arrays must not leak 'np.float64(...)' reprs
        path = tmp_path / "np.csv"
        write_csv(path, ["v"], [(float(np.float64(0.25)),), (int(np.int64(3)),)])
        assert path.read_text() == "v\n0.25\n3\n"
