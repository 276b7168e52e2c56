from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hwtune.errors import InvalidConfigError, SchemaError
from hwtune.hardware import INT4, INT8, load_profile, profile_from_dict
from hwtune.kerneltune import (
    BENCHMARK_CASES,
    MAX_BLOCK_THREADS,
    KernelConfig,
    LatencyModelParams,
    assignment_from_config,
    benchmark_fixtures,
    config_from_assignment,
    int4_vs_int8_report,
    kernel_space,
    load_kernel_spec,
    model_latency,
    spec_from_dict,
    tune_kernel,
    with_tensor_type,
)

A6000 = load_profile("a6000")
ADRENO = load_profile("adreno740")
FIXTURES = benchmark_fixtures()
SOFTMAX = load_kernel_spec("softmax_1024x64x32")


def test_fifteen_fixtures():
    assert len(FIXTURES) == len(BENCHMARK_CASES) == 15
    assert {s.kernel for s in FIXTURES} == {"softmax", "silu", "rmsnorm", "rope", "matmul"}


def test_prompt_fixture_loads():
    spec = load_kernel_spec("softmax_appendix_e")
    assert spec.default_grid == (32, 1, 1) and spec.default_block == (64, 1, 1)
    assert spec.to_prompt_dict()["default blockDim"] == [64, 1, 1]


def test_tensor_type_aliases():
    spec = with_tensor_type(SOFTMAX, "GGML_TYPE_Q4_0")
    assert spec.tensor_type == "GGML_TYPE_Q4_0"
    with pytest.raises(SchemaError):
        with_tensor_type(SOFTMAX, "bf3")


def test_bad_spec_rejected():
    with pytest.raises(SchemaError):
        spec_from_dict({"kernel": "conv"})


def test_deterministic():
    cfg = SOFTMAX.default_config()
    assert model_latency(SOFTMAX, cfg, A6000) == model_latency(SOFTMAX, cfg, A6000)
    assert tune_kernel(SOFTMAX, A6000, budget=8, seed=3).trace == tune_kernel(SOFTMAX, A6000, budget=8, seed=3).trace


@pytest.mark.parametrize("block", [(64, 16, 1), (256, 8, 1), (32, 32, 2)])
def test_block_limits(block):
    if block[0] * block[1] * block[2] > MAX_BLOCK_THREADS:
        with pytest.raises(InvalidConfigError):
            KernelConfig((1, 1, 1), block)
    else:
        KernelConfig((1, 1, 1), block)


@pytest.mark.parametrize("kwargs", [
    {"grid": (0, 1, 1), "block": (1, 1, 1)},
    {"grid": (1, 1, 1), "block": (257, 1, 1)},
    {"grid": (1, 1), "block": (1, 1, 1)},
    {"grid": (1, 1, 1), "block": (1, 1, 1), "tiling": 3},
    {"grid": (1, 1, 1), "block": (1, 1, 1), "unroll": 17},
    {"grid": (1, 1, 1), "block": (1, 1, 1), "unroll": True},
])
def test_invalid_configs(kwargs):
    with pytest.raises(InvalidConfigError):
        KernelConfig(**kwargs)


def test_unroll_doubling_below_threshold_helps():
    base = KernelConfig((32, 1, 1), (64, 1, 1), 1, 1)
    doubled = KernelConfig((32, 1, 1), (64, 1, 1), 1, 2)
    assert model_latency(SOFTMAX, doubled, A6000) < model_latency(SOFTMAX, base, A6000)


@given(st.integers(5, 15))
def test_register_pressure_beyond_threshold(unroll):
    thr = LatencyModelParams().register_pressure_threshold
    at = model_latency(SOFTMAX, KernelConfig((32, 1, 1), (64, 1, 1), 1, thr), A6000)
    past = model_latency(SOFTMAX, KernelConfig((32, 1, 1), (64, 1, 1), 1, unroll), A6000)
    assert past > at


@given(st.sampled_from(FIXTURES), st.integers(1, 7), st.integers(0, 3))
def test_more_threads_never_slower(spec, k, tiling_exp):
    # Growing block-x with everything else fixed cannot lower utilization.
    grid = spec.default_grid
    small = KernelConfig(grid, (2 ** k, 1, 1), 2 ** tiling_exp, 1)
    large = KernelConfig(grid, (2 ** (k + 1), 1, 1), 2 ** tiling_exp, 1)
    assert model_latency(spec, large, A6000) <= model_latency(spec, small, A6000) + 1e-9


@pytest.mark.parametrize("spec", FIXTURES, ids=lambda s: s.label)
def test_emulated_int4_slower_than_int8(spec):
    rep = int4_vs_int8_report(spec, ADRENO)
    assert rep.faster == INT8 and rep.int4_latency > rep.int8_latency and rep.ratio > 1


def test_native_int4_not_slower_on_a6000():
    for spec in FIXTURES:
        assert int4_vs_int8_report(spec, A6000).faster == INT4


def test_equal_declared_throughput_gives_unit_ratio():
    flat = profile_from_dict({
        "name": "flat",
        "FP16 Performance": "100 TFLOPS",
        "INT8 Performance": "100 TOPS",
        "INT4 Performance": "100 TOPS",
        "Compute Units": 128,
        "Memory": "16 GB",
    })
    rep = int4_vs_int8_report(SOFTMAX, flat)
    assert rep.ratio == pytest.approx(1.0)


def test_budget_one_is_default():
    res = tune_kernel(SOFTMAX, A6000, budget=1)
    assert res.best_config == SOFTMAX.default_config()
    assert len(res.trace) == 1 and res.speedup == 1.0
    with pytest.raises(ValueError):
        tune_kernel(SOFTMAX, A6000, budget=0)


@pytest.mark.parametrize("spec", FIXTURES, ids=lambda s: s.label)
def test_budget_ten_never_worse(spec):
    res = tune_kernel(spec, A6000, budget=10, seed=0)
    assert len(res.trace) == 10
    assert res.best_latency <= res.default_latency
    assert res.best_latency == min(lat for _, lat in res.trace)


def _grid_values(spec):
    return {
        "block_x": sorted({spec.default_block[0], 32, 128, 256}),
        "grid_x": sorted({spec.default_grid[0], 16, 64}),
        "tiling": sorted({spec.default_tiling, 4}),
        "unroll": sorted({spec.default_unroll, 4}),
    }


def test_grid_search_equals_brute_force():
    from hwtune.optimizers import GridSearch

    spec = SOFTMAX
    values = _grid_values(spec)
    n = 1
    for v in values.values():
        n *= len(v)
    strategy = GridSearch(kernel_space(spec), seed=0, values=values, objectives={"latency": "min"})
    res = tune_kernel(spec, A6000, budget=n + 1, strategy=strategy)
    base = assignment_from_config(spec.default_config()).assignments
    brute = min(
        model_latency(spec, config_from_assignment({**base, **dict(zip(values, combo))}), A6000)
        for combo in itertools.product(*values.values())
    )
    assert res.best_latency == pytest.approx(brute, rel=0, abs=0)


def test_assignment_round_trip():
    cfg = KernelConfig((4, 2, 1), (32, 8, 1), 8, 3)
    assert config_from_assignment(assignment_from_config(cfg)) == cfg
    shrunk = config_from_assignment({"grid_x": 1, "grid_y": 1, "grid_z": 1, "block_x": 256,
                                     "block_y": 256, "block_z": 1, "tiling": 1, "unroll": 1})
    assert shrunk.threads_per_block <= MAX_BLOCK_THREADS


def test_kernel_space_default_matches_spec():
    from hwtune.space import default_config

    assert config_from_assignment(default_config(kernel_space(SOFTMAX))) == SOFTMAX.default_config()
