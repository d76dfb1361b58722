import json
import math

import numpy as np
import pytest

from mfgturnpike.io import read_csv, read_field_dump, write_csv, write_field_dump, write_json


def test_json_sanitises_numpy(tmp_path):
    p = write_json(tmp_path / "a.json", {"x": np.float64(1.5), "v": np.arange(3), "bad": math.inf, 2: (1, 2)})
    data = json.loads(p.read_text())
    assert data == {"x": 1.5, "v": [0, 1, 2], "bad": None, "2": [1, 2]}


def test_csv_roundtrip_keeps_full_precision(tmp_path):
    rows = [{"t": 0.1, "v": 1 / 3, "xi": (1, -2)}, {"t": np.float64(0.2), "v": 2.0, "xi": (0, 1)}]
    write_csv(tmp_path / "a.csv", rows, ["t", "v", "xi"])
    back = read_csv(tmp_path / "a.csv")
    assert float(back[0]["v"]) == 1 / 3
    assert back[0]["xi"] == "1 -2"
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "t,v,xi"


def test_empty_csv(tmp_path):
    write_csv(tmp_path / "e.csv", [], ["a", "b"])
    assert read_csv(tmp_path / "e.csv") == []


@pytest.mark.parametrize("dim, nx, nt", [(1, 8, 3), (2, 4, 0)])
def test_field_dump_roundtrip(tmp_path, rng, dim, nx, nt):
    shape = (nt + 1,) + (nx,) * dim
    a, b = rng.normal(size=shape), rng.normal(size=shape)
    path = write_field_dump(tmp_path / "f.bin", dim, nx, nt, 2.5, a, b)
    header, fields = read_field_dump(path)
    assert header == {"dim": dim, "nx": nx, "nt": nt, "T": 2.5}
    np.testing.assert_array_equal(fields[0], a)
    np.testing.assert_array_equal(fields[1], b)
    assert path.stat().st_size == 32 + 2 * a.size * 8


def test_field_dump_checks_size(tmp_path):
    with pytest.raises(ValueError):
        write_field_dump(tmp_path / "f.bin", 1, 8, 3, 1.0, np.zeros(5))
    path = write_field_dump(tmp_path / "g.bin", 1, 8, 0, 1.0, np.zeros(8))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field_dump(path)
