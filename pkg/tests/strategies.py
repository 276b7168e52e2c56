"""Hypothesis strategies for random search spaces and configurations."""

from __future__ import annotations

import math

from hypothesis import strategies as st

from hwtune.space import CATEGORICAL, UNIFORM_FLOAT, UNIFORM_INT, ParamSpec, SearchSpace

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def param_specs(draw, name: str):
    kind = draw(st.sampled_from([UNIFORM_FLOAT, UNIFORM_INT, CATEGORICAL]))
    if kind == CATEGORICAL:
        choices = draw(st.one_of(
            st.lists(st.integers(-50, 50), min_size=1, max_size=6, unique=True),
            st.lists(st.text("abcxyz", min_size=1, max_size=4), min_size=1, max_size=6, unique=True),
            st.just([True, False]),
        ))
        return ParamSpec(name, kind, default=draw(st.sampled_from(choices)), choices=tuple(choices))
    log = draw(st.booleans())
    if kind == UNIFORM_INT:
        lo = draw(st.integers(1 if log else -1000, 1000))
        hi = draw(st.integers(lo + 1, lo + 5000))
        default = draw(st.integers(lo, hi))
    else:
        if log:
            lo = 10 ** draw(st.floats(-8, 2))
            hi = lo * 10 ** draw(st.floats(0.01, 6))
        else:
            lo = draw(st.floats(-1e3, 1e3))
            hi = lo + draw(st.floats(1e-3, 1e4))
        if not lo < hi or not math.isfinite(hi):
            hi = lo + 1.0
        default = lo + (hi - lo) * draw(st.floats(0, 1))
        default = min(max(default, lo), hi)
    return ParamSpec(name, kind, lower=lo, upper=hi, default=default, log_scale=log)


@st.composite
def spaces(draw, min_params: int = 1, max_params: int = 6):
    n = draw(st.integers(min_params, max_params))
    return SearchSpace("fuzz", tuple(draw(param_specs(f"p{i}")) for i in range(n)))
