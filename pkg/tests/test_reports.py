"""Tests for reports module."""

import json

import numpy as np
import pytest

from lib import __version__
from lib.engine import EchoTrain
from lib.errors import AnalysisError
from lib.reports import (
    jsonable,
    read_json,
    read_train_csv,
    write_json,
    write_rows_csv,
    write_train_csv,
)


@pytest.fixture
def train():
    """Short two-segment train with awkward floats."""
    return EchoTrain(
        times=np.array([1e-5, 2e-5, 3e-5, 4e-5]),
        values=np.array([1 + 0j, 0.1 - 0.2j, 1 / 3 + 2 / 7j, -0.0 + 1e-17j]),
        segment_index=np.array([0, 0, 1, 1]),
    )


class TestJsonable:
    """Tests for jsonable."""

    def test_converts_numpy_types(self):
        """Arrays, numpy scalars and bools become plain JSON values."""
        result = jsonable({"a": np.arange(3), "b": np.float64(0.5), "c": np.int32(4), "d": np.bool_(True)})
        assert result == {"a": [0, 1, 2], "b": 0.5, "c": 4, "d": True}
        json.dumps(result)

    def test_non_finite_floats_become_strings(self):
        """NaN and infinity are not valid JSON numbers."""
        assert jsonable([float("nan"), float("inf")]) == ["nan", "inf"]

    def test_complex_becomes_pair(self):
        """Complex numbers are split into re and im."""
        assert jsonable(1 - 2j) == {"re": 1.0, "im": -2.0}


class TestWriteJson:
    """Tests for write_json."""

    def test_stamps_version_and_hash(self, tmp_path):
        """Every document carries the tool version and config hash."""
        path = write_json(tmp_path / "nested" / "out.json", {"x": np.array([1.5])}, "abc123")

        data = read_json(path)
        assert data["version"] == __version__
        assert data["config_hash"] == "abc123"
        assert data["x"] == [1.5]

    def test_output_is_deterministic(self, tmp_path):
        """Key order in the input does not change the file."""
        a = write_json(tmp_path / "a.json", {"b": 1, "a": 2}, "h")
        b = write_json(tmp_path / "b.json", {"a": 2, "b": 1}, "h")
        assert a.read_text() == b.read_text()


class TestCsv:
    """Tests for CSV writers and reader."""

    def test_rows_csv_has_comment_header(self, tmp_path):
        """First line is the provenance comment; extra row keys are ignored."""
        path = write_rows_csv(
            tmp_path / "table.csv",
            [{"value": 0.1, "t2_s": None, "extra": 1}],
            ["value", "t2_s"],
            "deadbeef",
        )

        lines = path.read_text().splitlines()
        assert lines[0] == f"# version={__version__} config_hash=deadbeef"
        assert lines[1] == "value,t2_s"
        assert lines[2] == "0.1,"

    def test_train_round_trip_is_exact(self, tmp_path, train):
        """Floats are written with repr, so reading back loses nothing."""
        path = write_train_csv(tmp_path / "train.csv", train, "h")

        loaded = read_train_csv(path)
        assert np.array_equal(loaded.times, train.times)
        assert np.array_equal(loaded.values, train.values)
        assert np.array_equal(loaded.segment_index, train.segment_index)
        assert loaded.provenance["source"] == str(path)

    def test_rejects_csv_without_train_columns(self, tmp_path):
        """A table that is not an echo train raises AnalysisError."""
        path = write_rows_csv(tmp_path / "other.csv", [{"value": 1.0}], ["value"])
        with pytest.raises(AnalysisError, match="echo-train CSV"):
            read_train_csv(path)
