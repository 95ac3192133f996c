import json
import math

import numpy as np
import pytest

import utils


def test_make_rng_is_reproducible():
    a = utils.make_rng(7).uniform(size=5)
    b = utils.make_rng(7).uniform(size=5)
    np.testing.assert_array_equal(a, b)


def test_spawned_streams_differ():
    first, second = utils.spawn_rngs(7, 2)
    assert not np.array_equal(first.uniform(size=4), second.uniform(size=4))


def test_chunk_bounds_cover_range():
    bounds = utils.chunk_bounds(20_000, 8192)
    assert bounds == [(0, 8192), (8192, 16384), (16384, 20000)]


def test_geometric_ladder():
    radii = utils.geometric_ladder(0.25)
    assert len(radii) == 16
    assert radii[0] == 0.25
    assert np.all(np.diff(radii) > 0)
    assert radii[4] == pytest.approx(0.5)


@pytest.mark.parametrize("args", [(0.0,), (1.0, 1.0), (1.0, 2.0, 1)])
def test_geometric_ladder_rejects_bad_input(args):
    with pytest.raises(ValueError):
        utils.geometric_ladder(*args)


def test_dumps_report_is_single_line_json():
    text = utils.dumps_report({"pass": np.bool_(True), "n": np.int64(3), "x": np.float64(0.5),
                               "bad": math.inf, "arr": np.arange(2)})
    assert text.endswith("\n") and text.count("\n") == 1
    assert json.loads(text) == {"pass": True, "n": 3, "x": 0.5, "bad": None, "arr": [0, 1]}


def test_write_csv_keeps_column_order(tmp_path):
    path = utils.write_csv(tmp_path / "out.csv", [{"b": 1, "a": 0.1}], ["a", "b"])
    assert path.read_text().splitlines()[0] == "a,b"
    frame = utils.read_csv(path)
    assert frame["a"].iloc[0] == pytest.approx(0.1, rel=1e-15)
