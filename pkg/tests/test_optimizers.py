from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hwtune.agent import ScriptedBackend, mock_agent
from hwtune.errors import BudgetTooSmallError, UnknownObjectiveError
from hwtune.optimizers import (
    MAX,
    MIN,
    NSGA2,
    AgentOptimizer,
    BayesianOptimization,
    GridSearch,
    LocalSearch,
    Observation,
    best_so_far,
    dominates,
    make_optimizer,
    pareto_front,
)
from hwtune.prompt import PromptOptions, render_static
from hwtune.space import (
    UNIFORM_FLOAT,
    Configuration,
    ParamSpec,
    SearchSpace,
    default_config,
    is_valid,
    load_preset,
    to_unit,
)

from strategies import spaces

RESNET = load_preset("resnet_appendix_d")
BASELINES = ["random", "local", "bayesian", "nsga2"]


def line(lo=0.0, hi=2.0) -> SearchSpace:
    return SearchSpace("line", (ParamSpec("x", UNIFORM_FLOAT, lower=lo, upper=hi, default=1.0),))


def sphere(space, config) -> float:
    return -float(np.sum((to_unit(space, config) - 0.3) ** 2))


def drive(opt, fn):
    while not opt.done:
        cfg = opt.ask()
        opt.tell(cfg, fn(cfg))
    return opt


def agent_opt(space, seed=0, budget=10, backend=None):
    static = render_static(space, None, [], PromptOptions(enable_deployment=False))
    return AgentOptimizer(space, backend or mock_agent(seed=seed), static, seed=seed, budget=budget)


@pytest.mark.parametrize("name", BASELINES)
def test_deterministic_and_exact_budget(name):
    runs = [drive(make_optimizer(name, RESNET, seed=4, budget=10),
                  lambda c: {"accuracy": sphere(RESNET, c)}) for _ in range(2)]
    assert [o.config for o in runs[0].observations] == [o.config for o in runs[1].observations]
    assert len(runs[0].observations) == 10
    with pytest.raises(RuntimeError):
        runs[0].ask()


@pytest.mark.parametrize("name", BASELINES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_proposals_valid(name, seed):
    opt = drive(make_optimizer(name, RESNET, seed=seed, budget=10),
                lambda c: {"accuracy": sphere(RESNET, c)})
    assert all(is_valid(RESNET, o.config) for o in opt.observations)
    trace = opt.trace()
    assert all(b >= a for a, b in zip(trace, trace[1:]))


@given(spaces(1, 4), st.integers(0, 1000))
def test_random_and_local_valid_on_any_space(space, seed):
    for name in ("random", "local"):
        opt = drive(make_optimizer(name, space, seed=seed, budget=6),
                    lambda c: {"accuracy": sphere(space, c)})
        assert all(is_valid(space, o.config) for o in opt.observations)


def test_unknown_optimizer_and_bad_budget():
    with pytest.raises(ValueError):
        make_optimizer("annealing", RESNET)
    with pytest.raises(ValueError):
        make_optimizer("random", RESNET, budget=0)


def test_tell_requires_declared_objectives():
    opt = make_optimizer("random", RESNET, objectives={"accuracy": MAX, "latency": MIN})
    with pytest.raises(UnknownObjectiveError):
        opt.tell(opt.ask(), {"accuracy": 0.5})


# ------------------------------------------------------------------ local


def test_local_search_moves_one_coordinate():
    opt = LocalSearch(RESNET, seed=0, budget=6)
    first = opt.ask()
    assert first == default_config(RESNET)
    opt.tell(first, {"accuracy": 0.5})
    for _ in range(5):
        cfg = opt.ask()
        diff = [k for k in RESNET.names if cfg[k] != first[k]]
        assert len(diff) == 1
        opt.tell(cfg, {"accuracy": 0.1})  # never improves, incumbent stays the default


def test_local_search_log_step():
    opt = LocalSearch(RESNET, seed=0, budget=40)
    opt.tell(opt.ask(), {"accuracy": 0.5})
    seen = set()
    for _ in range(30):
        cfg = opt.ask()
        opt.tell(cfg, {"accuracy": 0.1})
        if cfg["learning_rate"] != 0.01:
            seen.add(round(cfg["learning_rate"], 12))
    lo, hi = np.log(1e-5), np.log(0.2)
    step = 0.1 * (hi - lo)
    expected = {round(float(np.exp(np.log(0.01) + s * step)), 12) for s in (-1, 1)}
    assert seen and seen <= expected


# -------------------------------------------------------------------- grid


def test_grid_enumerates_product():
    opt = GridSearch(RESNET, values={"batch_size": [32, 64], "momentum": [0.5, 0.9, 0.99]})
    assert opt.budget == 6
    drive(opt, lambda c: {"accuracy": 0.0})
    pairs = {(o.config["batch_size"], o.config["momentum"]) for o in opt.observations}
    assert len(pairs) == 6


# ---------------------------------------------------------------------- BO


def test_bo_falls_back_on_constant_objective():
    opt = drive(BayesianOptimization(line(), seed=0, budget=6), lambda c: {"accuracy": 1.0})
    assert len(opt.observations) == 6
    assert opt.model_errors


def test_bo_init_rounds():
    assert BayesianOptimization(RESNET, budget=10).init_rounds == 3
    with pytest.raises(ValueError):
        BayesianOptimization(RESNET, budget=10, init_rounds=10)


def test_bo_beats_random_on_line_mean():
    def f(c):
        return {"accuracy": -(c["x"] - 1.37) ** 2}

    gaps = []
    for seed in range(10):
        bo = drive(BayesianOptimization(line(), seed=seed, budget=10), f).best().objectives["accuracy"]
        rs = drive(make_optimizer("random", line(), seed=seed, budget=10), f).best().objectives["accuracy"]
        gaps.append(bo - rs)
    assert np.mean(gaps) > 0


# ------------------------------------------------------------------- NSGA-II


def two_objective(c):
    x = c["x"]
    return {"f1": x ** 2, "f2": (x - 2) ** 2}


def test_nsga2_front_nondominated():
    directions = {"f1": MIN, "f2": MIN}
    opt = drive(NSGA2(line(), seed=0, budget=40, objectives=directions), two_objective)
    front = opt.front()
    assert len(front) >= 2
    for a in front.points:
        for b in opt.observations:
            assert not dominates(b.objectives, a.objectives, directions)
    assert all(0.0 <= p.config["x"] <= 2.0 for p in front.points)


def test_nsga2_budget_checks():
    with pytest.raises(BudgetTooSmallError):
        NSGA2(line(), budget=10, population=8)
    assert NSGA2(line(), budget=10).population == 4


def test_nsga2_deterministic():
    objs = {"f1": MIN, "f2": MIN}
    a = drive(NSGA2(line(), seed=3, budget=20, objectives=objs), two_objective)
    b = drive(NSGA2(line(), seed=3, budget=20, objectives=objs), two_objective)
    assert [o.config for o in a.observations] == [o.config for o in b.observations]


def test_sort_fronts_example():
    F = np.array([[0, 1], [1, 0], [1, 1], [2, 2]], dtype=float)
    assert NSGA2.sort_fronts(F) == [[0, 1], [2], [3]]
    crowd = NSGA2.crowding(F[:2])
    assert np.isinf(crowd).all()


# --------------------------------------------------------------------- agent


def test_agent_rounds_left_countdown():
    opt = drive(agent_opt(RESNET), lambda c: {"accuracy": sphere(RESNET, c)})
    assert [b["rounds_left"] for b in opt.bundle_log] == list(range(10, 0, -1))
    assert opt.observations[0].config == default_config(RESNET)


def test_agent_scripted_configs_in_order():
    replies = [
        '{"learning_rate": 0.01, "batch_size": 128, "weight_decay": 0.0005, "momentum": 0.9, "num_epochs": 12}',
        '{"learning_rate": 0.004, "batch_size": 170, "weight_decay": 0.0009, "momentum": 0.9, "num_epochs": 12}',
    ]
    opt = drive(agent_opt(RESNET, budget=2, backend=ScriptedBackend(replies)), lambda c: {"accuracy": 0.5})
    assert opt.observations[1].config["batch_size"] == 170


def test_agent_budget_one():
    opt = drive(agent_opt(RESNET, budget=1), lambda c: {"accuracy": 0.5})
    assert len(opt.observations) == 1 and opt.ledger.calls == 1


# ---------------------------------------------------------------- best so far


def obs(values):
    return [Observation(Configuration({}), {"a": v}, i + 1) for i, v in enumerate(values)]


def test_best_so_far_examples():
    assert best_so_far(obs([0.1, 0.5, 0.3, 0.7]), "a") == [0.1, 0.5, 0.5, 0.7]
    assert best_so_far(obs([3, 1, 2]), "a", MIN) == [3, 1, 1]
    with pytest.raises(ValueError):
        best_so_far([], "a")
    with pytest.raises(UnknownObjectiveError):
        best_so_far(obs([1]), "b")


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.sampled_from([MAX, MIN]))
def test_best_so_far_monotone(values, direction):
    trace = best_so_far(obs(values), "a", direction)
    pairs = list(zip(trace, trace[1:]))
    assert all(b >= a for a, b in pairs) if direction == MAX else all(b <= a for a, b in pairs)
    assert trace[-1] == (max(values) if direction == MAX else min(values))


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=25))
def test_pareto_front_property(points):
    directions = {"f1": MIN, "f2": MIN}
    observations = [Observation(Configuration({}), {"f1": a, "f2": b}, i) for i, (a, b) in enumerate(points)]
    front = pareto_front(observations, directions)
    assert len(front) >= 1
    for p in front.points:
        assert not any(dominates(o.objectives, p.objectives, directions) for o in observations)
    for o in observations:
        if o not in front.points:
            assert any(dominates(p.objectives, o.objectives, directions) for p in observations)
