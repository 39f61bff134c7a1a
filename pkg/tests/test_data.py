"""Dataset container and CSV round-trips."""

import numpy as np
import pytest

from monoflow.data import Dataset, read_dataset_csv, write_dataset_csv


class TestDataset:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(x=np.arange(3.0), y=np.arange(4.0))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            Dataset(x=np.array([1.0, np.inf]), y=np.zeros(2))

    def test_len(self):
        assert len(Dataset(x=np.arange(5.0), y=np.ones(5))) == 5


class TestCsv:
    def test_roundtrip(self, tmp_path):
        data = Dataset(x=np.array([0.1, 1.5, 2.25]),
                       y=np.array([-1.0, 0.333333333333333314, 9.5]))
        path = tmp_path / "d.csv"
        write_dataset_csv(path, data, comments=["seed=3"])
        back = read_dataset_csv(path)
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.y, data.y)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n3,4\n")
        with pytest.raises(ValueError, match="header"):
            read_dataset_csv(path)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1,2\nfoo,4\n")
        with pytest.raises(ValueError, match="line 3"):
            read_dataset_csv(path)

    def test_short_row_reports_number(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1\n")
        with pytest.raises(ValueError, match="line 2"):
            read_dataset_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            read_dataset_csv(path)
