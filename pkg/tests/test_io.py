import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from seilab import config as C
from seilab.iqfile import MAGIC, read_seiq, write_seiq


@given(arrays(np.complex64, st.tuples(st.integers(1, 4), st.integers(1, 50)),
              elements=st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False, width=64)))
def test_seiq_round_trip_is_exact_for_float32(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("seiq") / "x.seiq"
    write_seiq(path, x, sample_rate=20e6, emitter_id="E1")
    y, meta = read_seiq(path)
    assert np.array_equal(y, x.astype(complex))
    assert meta["shape"] == list(x.shape) and meta["emitter_id"] == "E1"


def test_seiq_layout(tmp_path):
    path = tmp_path / "x.seiq"
    write_seiq(path, np.array([1 + 2j, -3 - 4j]))
    data = path.read_bytes()
    assert data[:8] == MAGIC
    n = int.from_bytes(data[8:12], "little")
    assert json.loads(data[12:12 + n])["format"] == "cf32_le"
    assert np.array_equal(np.frombuffer(data[12 + n:], "<f4"), [1, 2, -3, -4])


def test_seiq_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.seiq"
    bad.write_bytes(b"NOTSEIQ!" + bytes(8))
    with pytest.raises(ValueError):
        read_seiq(bad)
    good = tmp_path / "good.seiq"
    write_seiq(good, np.ones(4, complex))
    good.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_seiq(good)


def test_default_config():
    cfg = C.config_from_dict({})
    assert cfg.seed == 0 and cfg.matrix_sdrs == ["b210", "hackrf"]
    assert C.config_from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_config_seed_propagates_to_lab():
    cfg = C.config_from_dict({"seed": 7, "lab": {"n_train": 12}})
    assert cfg.lab_config().seed == 7 and cfg.lab_config().n_train == 12


@pytest.mark.parametrize("doc", [
    [], {"bogus": 1}, {"seed": -1}, {"seed": 2**64}, {"seed": "1"}, {"lab": {"nope": 1}}, {"lab": 3},
    {"matrix": {"sdrs": ["usrp9"]}}, {"matrix": {"x": 1}}, {"coffee_shop": {"color": "red"}},
])
def test_config_rejects_invalid(doc):
    with pytest.raises(C.ConfigError):
        C.config_from_dict(doc)


def test_load_config_errors(tmp_path):
    with pytest.raises(C.ConfigError):
        C.load_config(tmp_path / "missing.json")
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(C.ConfigError):
        C.load_config(p)
    p.write_text(json.dumps({"seed": 3}))
    assert C.load_config(p).seed == 3
