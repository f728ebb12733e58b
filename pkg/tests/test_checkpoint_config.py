import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rose.checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, save_checkpoint
from rose.config import ConfigError, RunConfig, load_config
from rose.model import ModelSpec, ParamSet, init_params

any_float = st.floats(allow_nan=False, allow_infinity=False, allow_subnormal=True, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=any_float),
       arrays(np.float64, st.integers(0, 5), elements=any_float))
def test_round_trip_is_bit_exact(tmp_path_factory, w, b):
    path = tmp_path_factory.mktemp("ck") / "model.json"
    params = ParamSet(w=w, b=b)
    save_checkpoint(path, params, step=7, config={"k": 1}, classes=np.array([0, 1]))
    loaded, manifest = load_checkpoint(path)
    assert list(loaded) == ["w", "b"]
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
    assert manifest["step"] == 7 and manifest["classes"] == [0, 1]


def test_negative_zero_survives(tmp_path):
    save_checkpoint(tmp_path / "c.json", ParamSet(w=np.array([-0.0, 5e-324])))
    w = load_checkpoint(tmp_path / "c.json")[0]["w"]
    assert np.signbit(w[0]) and w[1] == 5e-324


def test_sidecar_is_little_endian_float64(tmp_path):
    save_checkpoint(tmp_path / "c.json", ParamSet(a=np.array([1.0]), b=np.array([[2.0, 3.0]])))
    raw = (tmp_path / "c.bin").read_bytes()
    np.testing.assert_array_equal(np.frombuffer(raw, "<f8"), [1.0, 2.0, 3.0])
    groups = json.loads((tmp_path / "c.json").read_text())["groups"]
    assert [(g["offset"], g["count"]) for g in groups] == [(0, 1), (8, 2)]


@pytest.fixture
def saved(tmp_path):
    params = init_params(ModelSpec(input_dim=3, hidden_dims=(4,)), 0)
    path = save_checkpoint(tmp_path / "m.json", params)
    return path, tmp_path / "m.bin"


def test_truncated_data(saved):
    path, sidecar = saved
    raw = sidecar.read_bytes()
    sidecar.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated") as info:
        load_checkpoint(path)
    assert info.value.offset == len(raw) - 8


def test_flipped_byte_reports_group_offset(saved):
    path, sidecar = saved
    raw = bytearray(sidecar.read_bytes())
    raw[100] ^= 0xFF
    sidecar.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum") as info:
        load_checkpoint(path)
    assert info.value.offset == 96  # layer0.weight (96 bytes) ends where layer0.bias starts


def test_trailing_bytes(saved):
    path, sidecar = saved
    sidecar.write_bytes(sidecar.read_bytes() + b"\0" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_non_finite_value_located(tmp_path):
    path = tmp_path / "n.json"
    save_checkpoint(path, ParamSet(w=np.zeros(3)))
    manifest = json.loads(path.read_text())
    del manifest["groups"][0]["sha256"]
    path.write_text(json.dumps(manifest))
    (tmp_path / "n.bin").write_bytes(np.array([0.0, np.nan, 0.0], "<f8").tobytes())
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(path)
    assert info.value.offset == 8


def test_bad_manifest(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.json")


def test_checkpoint_bytes_detect_difference(tmp_path):
    a = save_checkpoint(tmp_path / "a.json", ParamSet(w=np.ones(2)))
    b = save_checkpoint(tmp_path / "b.json", ParamSet(w=np.ones(2)))
    c = save_checkpoint(tmp_path / "c.json", ParamSet(w=np.array([1.0, 2.0])))
    # manifests name their own sidecar, so compare sidecars and group records
    assert checkpoint_bytes(a).replace(b"a.bin", b"b.bin") == checkpoint_bytes(b)
    assert checkpoint_bytes(a) != checkpoint_bytes(c).replace(b"c.bin", b"a.bin")


# ---------------------------------------------------------------- config

rose_sections = st.none() | st.fixed_dictionaries({
    "strategy": st.sampled_from(["first", "second", "ensemble"]),
    "c_h_first": st.floats(0.05, 1.0),
    "c_h_second": st.floats(0.05, 1.0),
    "gamma": st.floats(0.05, 0.95),
    "granularity": st.sampled_from(["group", "scalar"]),
})


@st.composite
def configs(draw):
    rose = draw(rose_sections)
    mode = draw(st.sampled_from(["vanilla", "rdrop"] if rose is None else ["rose", "rdrop_rose"]))
    data = draw(st.sampled_from([
        {"kind": "synthetic", "task": {"surface_kind": "magnitude", "noise_std": 0.1, "seed": 4}},
        {"kind": "csv", "train": "train.csv", "eval": "eval.csv"},
        {"kind": "synthetic"},
    ]))
    return {
        "mode": mode,
        "rose": rose,
        "model": {"hidden_dims": draw(st.lists(st.integers(1, 64), min_size=1, max_size=3)),
                  "activation": draw(st.sampled_from(["tanh", "relu"])),
                  "dropout_rate": draw(st.floats(0, 0.9))},
        "optimizer": {"lr": draw(st.floats(1e-5, 1.0)), "weight_decay": draw(st.floats(0, 0.1))},
        "rdrop_weight": draw(st.floats(0, 5)),
        "data": data,
        "epochs": draw(st.integers(0, 20)),
        "batch_size": draw(st.integers(1, 64)),
        "seed": draw(st.integers(0, 2**31)),
    }


@settings(max_examples=100, deadline=None)
@given(configs())
def test_config_round_trip(raw):
    config = RunConfig.from_dict(raw)
    again = RunConfig.from_json(config.to_json())
    assert again == config
    assert again.to_json() == config.to_json()


@pytest.mark.parametrize("raw,match", [
    ({"mode": "vanilla", "rose": {}}, "does not accept"),
    ({"mode": "rose"}, "requires"),
    ({"mode": "vanilla", "colour": 1}, "unknown keys"),
    ({"mode": "vanilla", "model": {"depth": 3}}, "unknown keys"),
    ({"mode": "rose", "rose": {"strategy": "ensemble", "extra": 1}}, "unknown keys"),
    ({"mode": "vanilla", "data": {"kind": "synthetic", "task": {"size": 3}}}, "unknown keys"),
    ({"mode": "vanilla", "data": {"kind": "csv"}}, "train"),
    ({"mode": "vanilla", "epochs": -1}, "epochs"),
    ({"mode": "vanilla", "model": {"dropout_rate": 1.0}}, "dropout"),
    ({"mode": "adam"}, "mode"),
])
def test_config_rejections(raw, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_estimator_params_carry_rose_section():
    config = RunConfig.from_dict({"mode": "rose", "rose": {"strategy": "first", "c_h_first": 0.3}})
    kw = config.estimator_params()
    assert kw["strategy"] == "first" and kw["c_h_first"] == 0.3 and kw["mode"] == "rose"
