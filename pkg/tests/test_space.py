from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hwtune.errors import InvariantError, SchemaError, UnclampableError
from hwtune.space import (
    PRESETS,
    Configuration,
    ParamSpec,
    SearchSpace,
    ViolationKind,
    clamp,
    default_config,
    dump_space,
    from_unit,
    is_valid,
    load_preset,
    load_space,
    sample,
    to_unit,
    validate,
)
from strategies import spaces


def test_resnet_preset_ranges(resnet):
    ranges = {p.name: (p.lower, p.upper, p.log_scale) for p in resnet}
    assert ranges == {
        "learning_rate": (1e-5, 0.2, True),
        "batch_size": (32, 256, True),
        "weight_decay": (1e-6, 0.1, True),
        "momentum": (0.5, 0.99, False),
        "num_epochs": (10, 24, False),
    }


def test_llama_preset_has_nine_params(llama):
    assert len(llama) == 9
    assert (llama["learning_rate"].lower, llama["learning_rate"].upper) == (1e-5, 5e-4)
    assert (llama["lora_r"].lower, llama["lora_r"].upper) == (8, 64)
    assert (llama["lora_dropout"].lower, llama["lora_dropout"].upper) == (0.0, 0.3)


def test_all_presets_load():
    for name in PRESETS:
        space = load_preset(name)
        assert len(space) > 0
        assert is_valid(space, default_config(space))


def test_inverted_range_names_parameter():
    doc = """
name: bad
params:
  - {name: momentum, kind: uniform-float, lower: 0.99, upper: 0.5, default: 0.9}
"""
    with pytest.raises(InvariantError) as err:
        load_space(doc)
    assert err.value.param == "momentum"


def test_log_scale_with_zero_lower_rejected():
    with pytest.raises(InvariantError):
        ParamSpec("lr", "uniform-float", lower=0.0, upper=1.0, default=0.5, log_scale=True)


@pytest.mark.parametrize("doc", ["[1, 2]", "name: x", "name: x\nparams: 3",
                                 "name: x\nparams:\n  - {kind: uniform-int}",
                                 "name: x\nparams:\n  - {name: a, kind: uniform-int, lower: 1}"])
def test_malformed_documents(doc):
    with pytest.raises(SchemaError):
        load_space(doc)


def test_duplicate_names_rejected():
    p = ParamSpec("a", "uniform-int", lower=0, upper=3, default=1)
    with pytest.raises(InvariantError):
        SearchSpace("dup", (p, p))


def test_defaults(resnet, llama):
    assert default_config(resnet).as_dict() == {
        "learning_rate": 0.01, "batch_size": 128, "weight_decay": 5e-4,
        "momentum": 0.9, "num_epochs": 12}
    assert default_config(SearchSpace("empty")).as_dict() == {}
    assert default_config(llama)["learning_rate"] == 4e-4


def test_validate_examples(resnet):
    ok = {"learning_rate": 0.005, "batch_size": 160, "weight_decay": 7e-4,
          "momentum": 0.9, "num_epochs": 12}
    assert validate(resnet, ok) == []
    bad = validate(resnet, {**ok, "learning_rate": 0.3})
    assert [(v.kind, v.name, v.value) for v in bad] == [(ViolationKind.OUT_OF_RANGE, "learning_rate", 0.3)]
    unknown = validate(resnet, {**ok, "optimizer": "adam"})
    assert [(v.kind, v.name) for v in unknown] == [(ViolationKind.UNKNOWN_PARAMETER, "optimizer")]


def test_validate_type_and_missing(resnet):
    cfg = default_config(resnet).as_dict()
    cfg["batch_size"] = "big"
    del cfg["momentum"]
    kinds = {v.name: v.kind for v in validate(resnet, cfg)}
    assert kinds == {"batch_size": ViolationKind.TYPE_MISMATCH,
                     "momentum": ViolationKind.MISSING_PARAMETER}
    assert validate(resnet, {**default_config(resnet).as_dict(), "num_epochs": True})[0].kind \
        == ViolationKind.TYPE_MISMATCH
    assert validate(resnet, {**default_config(resnet).as_dict(), "momentum": math.nan})[0].kind \
        == ViolationKind.TYPE_MISMATCH


def test_clamp_examples(resnet):
    base = default_config(resnet)
    assert clamp(resnet, base.replace(learning_rate=0.3))["learning_rate"] == 0.2
    assert clamp(resnet, base) == base
    assert clamp(resnet, base.replace(batch_size=257.4))["batch_size"] == 256


def test_clamp_rejects_bad_categorical():
    space = SearchSpace("s", (ParamSpec("layout", "categorical", default="nchw", choices=("nchw", "nhwc")),))
    with pytest.raises(UnclampableError):
        clamp(space, {"layout": "chwn"})


def test_sample_deterministic(resnet):
    assert sample(resnet, 7) == sample(resnet, 7)
    assert sample(resnet, 7) != sample(resnet, 8)


def test_sample_adjacent_ints_both_observed():
    space = SearchSpace("s", (ParamSpec("k", "uniform-int", lower=5, upper=6, default=5),))
    seen = {sample(space, seed)["k"] for seed in range(1000)}
    assert seen == {5, 6}


def test_log_uniform_median():
    space = SearchSpace("s", (ParamSpec("lr", "uniform-float", lower=1e-5, upper=1e-1,
                                        default=1e-3, log_scale=True),))
    rng = np.random.default_rng(0)
    draws = [sample(space, rng)["lr"] for _ in range(10_000)]
    assert 8e-4 <= float(np.median(draws)) <= 1.2e-3


@given(spaces(), st.integers(0, 2**32 - 1))
def test_sample_always_valid(space, seed):
    assert validate(space, sample(space, seed)) == []


@given(spaces())
def test_default_always_valid(space):
    assert is_valid(space, default_config(space))


@given(spaces(), st.data())
def test_clamp_idempotent_and_valid(space, data):
    raw = {}
    for p in space.params:
        if p.kind == "categorical":
            raw[p.name] = data.draw(st.sampled_from(p.choices))
        elif p.kind == "uniform-int":
            raw[p.name] = data.draw(st.integers(-10**6, 10**6))
        else:
            raw[p.name] = data.draw(st.floats(-1e9, 1e9, allow_nan=False))
    once = clamp(space, raw)
    assert validate(space, once) == []
    assert clamp(space, once) == once


@given(spaces())
def test_dump_load_round_trip(space):
    assert load_space(dump_space(space)) == space


@given(spaces(), st.integers(0, 10_000))
def test_unit_round_trip(space, seed):
    cfg = sample(space, seed)
    u = to_unit(space, cfg)
    assert np.all((u >= 0) & (u <= 1))
    back = from_unit(space, u)
    assert is_valid(space, back)
    for p in space.params:
        if p.kind == "uniform-float":
            assert math.isclose(back[p.name], cfg[p.name], rel_tol=1e-9, abs_tol=1e-9)
        else:
            assert back[p.name] == cfg[p.name]


def test_configuration_hash_and_replace():
    a = Configuration({"x": 1, "y": 2.0}, "s")
    b = Configuration({"y": 2.0, "x": 1}, "s")
    assert a == b and hash(a) == hash(b)
    assert a.replace(x=3)["x"] == 3 and a["x"] == 1
