"""Search strategies behind one ask/tell interface with a fixed round budget."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from hwtune.errors import BudgetTooSmallError, ProposalExhaustedError, SingularModelError, UnknownObjectiveError
from hwtune.space import (
    CATEGORICAL,
    UNIFORM_INT,
    Configuration,
    SearchSpace,
    default_config,
    from_unit,
    sample,
    to_unit,
)

log = logging.getLogger(__name__)

MAX, MIN = "max", "min"


@dataclass(frozen=True)
class Observation:
    config: Configuration
    objectives: Mapping[str, float]
    round: int
    info: Mapping[str, Any] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[Observation, ...]
    directions: Mapping[str, str]

    def __len__(self) -> int:
        return len(self.points)

    def best(self, objective: str) -> Observation:
        sign = 1 if self.directions[objective] == MAX else -1
        return max(self.points, key=lambda o: sign * o.objectives[objective])


def _check_directions(objectives: Mapping[str, str]) -> dict[str, str]:
    if not objectives:
        raise ValueError("at least one objective is required")
    for name, d in objectives.items():
        if d not in (MAX, MIN):
            raise ValueError(f"objective {name!r}: direction must be 'max' or 'min', not {d!r}")
    return dict(objectives)


def dominates(a: Mapping[str, float], b: Mapping[str, float], directions: Mapping[str, str]) -> bool:
    """True when ``a`` is at least as good as ``b`` everywhere and strictly better somewhere."""
    strict = False
    for name, d in directions.items():
        x, y = (a[name], b[name]) if d == MAX else (b[name], a[name])
        if x < y:
            return False
        if x > y:
            strict = True
    return strict


def pareto_front(observations: Sequence[Observation], directions: Mapping[str, str]) -> ParetoFront:
    pts = [o for o in observations
           if not any(dominates(p.objectives, o.objectives, directions) for p in observations)]
    return ParetoFront(tuple(pts), dict(directions))


def best_so_far(observations: Sequence[Observation], objective: str, direction: str = MAX) -> list[float]:
    if not observations:
        raise ValueError("no observations")
    if direction not in (MAX, MIN):
        raise ValueError(f"direction must be 'max' or 'min', not {direction!r}")
    pick = max if direction == MAX else min
    out: list[float] = []
    for o in observations:
        if objective not in o.objectives:
            raise UnknownObjectiveError(f"objective {objective!r} not reported in round {o.round}")
        v = float(o.objectives[objective])
        out.append(v if not out else pick(out[-1], v))
    return out


class Optimizer:
    """Base ask/tell optimizer.

    ``ask`` hands out at most ``budget`` proposals; ``tell`` records an
    observation. Subclasses implement ``_propose``.
    """

    name = "base"

    def __init__(self, space: SearchSpace, seed: int = 0, budget: int = 10,
                 objectives: Mapping[str, str] | None = None):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.space = space
        self.seed = int(seed)
        self.budget = int(budget)
        self.objectives = _check_directions(objectives or {"accuracy": MAX})
        self.primary = next(iter(self.objectives))
        self.observations: list[Observation] = []
        self.n_asked = 0

    @property
    def done(self) -> bool:
        return self.n_asked >= self.budget

    def _rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, tag]))

    def ask(self) -> Configuration:
        if self.done:
            raise RuntimeError(f"{self.name}: budget of {self.budget} proposals exhausted")
        config = self._propose()
        self.n_asked += 1
        return config

    def tell(self, config: Configuration, objectives: Mapping[str, float], **info: Any) -> Observation:
        for name in self.objectives:
            if name not in objectives:
                raise UnknownObjectiveError(f"observation lacks declared objective {name!r}")
        obs = Observation(config, {k: float(v) for k, v in objectives.items()},
                          len(self.observations) + 1, dict(info))
        self.observations.append(obs)
        self._observe(obs)
        return obs

    def _propose(self) -> Configuration:
        raise NotImplementedError

    def _observe(self, obs: Observation) -> None:
        pass

    def score(self, obs: Observation) -> float:
        """Primary objective, sign-adjusted so larger is better."""
        v = obs.objectives[self.primary]
        return v if self.objectives[self.primary] == MAX else -v

    def best(self) -> Observation | None:
        return max(self.observations, key=self.score) if self.observations else None

    def trace(self, objective: str | None = None) -> list[float]:
        objective = objective or self.primary
        return best_so_far(self.observations, objective, self.objectives.get(objective, MAX))


class RandomSearch(Optimizer):
    name = "random"

    def _propose(self) -> Configuration:
        return sample(self.space, self._rng(self.n_asked + 1))


class LocalSearch(Optimizer):
    """One-coordinate hill climbing from the default configuration.

    Steps: 10% of the (log-)range for floats and log-scale ints, one unit for
    linear ints, the neighbouring choice for categoricals. A move becomes the
    incumbent only when it strictly improves the primary objective.
    """

    name = "local"
    step_fraction = 0.1

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.incumbent: Observation | None = None
        self.rng = self._rng(0)

    def _observe(self, obs: Observation) -> None:
        if self.incumbent is None or self.score(obs) > self.score(self.incumbent):
            self.incumbent = obs

    def _move(self, p, value: Any, sign: int) -> Any:
        if p.kind == CATEGORICAL:
            i = next(k for k, c in enumerate(p.choices) if c == value and type(c) is type(value)) \
                if value in p.choices else 0
            return p.choices[min(max(i + sign, 0), len(p.choices) - 1)]
        if p.log_scale:
            lo, hi = math.log(p.lower), math.log(p.upper)
            new = math.exp(math.log(value) + sign * self.step_fraction * (hi - lo))
        elif p.kind == UNIFORM_INT:
            new = value + sign
        else:
            new = value + sign * self.step_fraction * (p.upper - p.lower)
        if p.kind == UNIFORM_INT:
            new = int(round(new))
            if new == value:
                new = value + sign
        return min(max(new, p.lower), p.upper)

    def _propose(self) -> Configuration:
        if self.n_asked == 0:
            return default_config(self.space)
        base = self.incumbent.config if self.incumbent else default_config(self.space)
        order = self.rng.permutation(len(self.space.params))
        first_sign = 1 if self.rng.random() < 0.5 else -1
        for idx in order:
            p = self.space.params[int(idx)]
            for sign in (first_sign, -first_sign):
                new = self._move(p, base[p.name], sign)
                if new != base[p.name]:
                    return base.replace(**{p.name: new})
        return base


class GridSearch(Optimizer):
    """Exhaustive scan over a Cartesian grid in a fixed order.

    ``values`` maps parameter names to candidate lists; parameters not listed
    stay at their defaults. Numeric parameters left out of ``values`` can be
    gridded instead with ``points_per_dim``.
    """

    name = "grid"

    def __init__(self, space: SearchSpace, seed: int = 0, budget: int | None = None,
                 objectives: Mapping[str, str] | None = None,
                 values: Mapping[str, Sequence[Any]] | None = None, points_per_dim: int = 0):
        axes = {}
        for p in space.params:
            if values and p.name in values:
                axes[p.name] = list(values[p.name])
            elif points_per_dim > 1:
                if p.kind == CATEGORICAL:
                    axes[p.name] = list(p.choices)
                else:
                    u = np.linspace(0, 1, points_per_dim)
                    axes[p.name] = list(dict.fromkeys(
                        from_unit(_one_param(space, p.name), [x])[p.name] for x in u))
        unknown = set(values or {}) - set(space.names)
        if unknown:
            raise ValueError(f"grid names unknown parameters {sorted(unknown)}")
        base = default_config(space)
        names = list(axes)
        self.points = [base.replace(**dict(zip(names, combo)))
                       for combo in itertools.product(*(axes[n] for n in names))] or [base]
        super().__init__(space, seed, budget or len(self.points), objectives)

    def _propose(self) -> Configuration:
        return self.points[self.n_asked % len(self.points)]


def _one_param(space: SearchSpace, name: str) -> SearchSpace:
    return SearchSpace(space.name, (space[name],))


class BayesianOptimization(Optimizer):
    """GP surrogate (Matern 5/2, unit-cube inputs) with expected improvement.

    EI is maximized over 1024 random candidates: half uniform over the cube,
    half Gaussian perturbations of the incumbent. The winner is snapped to a
    valid configuration not yet evaluated.
    """

    name = "bayesian"
    n_candidates = 1024
    local_fraction = 0.5
    local_sigma = 0.1

    def __init__(self, space: SearchSpace, seed: int = 0, budget: int = 10,
                 objectives: Mapping[str, str] | None = None, init_rounds: int | None = None,
                 xi: float = 0.01):
        if init_rounds is None:
            init_rounds = max(1, min(budget - 1, math.ceil(budget * 0.3)))
        if budget > 1 and not 1 <= init_rounds < budget:
            raise ValueError("init_rounds must satisfy 1 <= init_rounds < budget")
        super().__init__(space, seed, budget, objectives)
        self.init_rounds = init_rounds
        self.xi = xi
        self.model_errors: list[SingularModelError] = []

    def _fit(self):
        from sklearn.gaussian_process import GaussianProcessRegressor
        from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

        X = np.array([to_unit(self.space, o.config) for o in self.observations])
        y = np.array([self.score(o) for o in self.observations])
        if np.ptp(y) == 0:
            raise SingularModelError("all observed objective values are identical")
        d = X.shape[1]
        kernel = (ConstantKernel(1.0, (1e-2, 1e2))
                  * Matern(length_scale=np.full(d, 0.5), length_scale_bounds=(0.1, 10.0), nu=2.5)
                  + WhiteKernel(1e-6, (1e-9, 1e-2)))
        gp = GaussianProcessRegressor(kernel, normalize_y=True, random_state=self.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gp.fit(X, y)
        return gp, y.max()

    def _ei(self, gp, best: float, X: np.ndarray) -> np.ndarray:
        from scipy.stats import norm

        mu, sd = gp.predict(np.atleast_2d(X), return_std=True)
        sd = np.maximum(sd, 1e-12)
        gain = mu - best - self.xi
        z = gain / sd
        return gain * norm.cdf(z) + sd * norm.pdf(z)

    def _propose(self) -> Configuration:
        rng = self._rng(self.n_asked + 1)
        if self.n_asked < self.init_rounds or len(self.observations) < 2:
            return sample(self.space, rng)
        try:
            gp, best = self._fit()
        except SingularModelError as exc:
            log.info("bayesian round %d: %s; proposing at random", self.n_asked + 1, exc)
            self.model_errors.append(exc)
            return sample(self.space, rng)
        d = len(self.space.params)
        cands = rng.random((self.n_candidates, d))
        n_local = int(self.n_candidates * self.local_fraction)
        centre = to_unit(self.space, self.best().config)
        cands[:n_local] = np.clip(centre + rng.normal(0, self.local_sigma, (n_local, d)), 0, 1)
        ei = self._ei(gp, best, cands)
        seen = {o.config for o in self.observations}
        for i in np.argsort(-ei, kind="stable"):
            cfg = from_unit(self.space, cands[i])
            if cfg not in seen:
                return cfg
        return sample(self.space, rng)


class NSGA2(Optimizer):
    """Multi-objective genetic search on unit-cube encodings.

    Fast non-dominated sorting plus crowding distance for survival, binary
    tournaments for mating, SBX crossover and polynomial mutation. ``budget``
    counts evaluations; the last generation is cut short if needed.
    """

    name = "nsga2"

    def __init__(self, space: SearchSpace, seed: int = 0, budget: int = 10,
                 objectives: Mapping[str, str] | None = None, population: int | None = None,
                 eta_c: float = 15.0, eta_m: float = 20.0, crossover_prob: float = 0.9):
        if population is None:
            population = max(4, min(20, (budget // 2) // 2 * 2))
        if population < 4 or population % 2:
            raise ValueError("population must be even and >= 4")
        if budget < 2 * population:
            raise BudgetTooSmallError(f"budget {budget} < 2 x population {population}")
        super().__init__(space, seed, budget, objectives)
        self.population = population
        self.eta_c, self.eta_m, self.pc = eta_c, eta_m, crossover_prob
        self.pm = 1.0 / max(1, len(space.params))
        self.rng = self._rng(0)
        self.queue: list[Configuration] = []
        self.parents: list[tuple[np.ndarray, np.ndarray]] = []
        self.offspring: list[tuple[np.ndarray, np.ndarray]] = []
        self.generation = 0

    def _vector(self, obs: Observation) -> np.ndarray:
        return np.array([obs.objectives[k] if d == MIN else -obs.objectives[k]
                         for k, d in self.objectives.items()], dtype=float)

    def _observe(self, obs: Observation) -> None:
        self.offspring.append((to_unit(self.space, obs.config), self._vector(obs)))

    @staticmethod
    def sort_fronts(F: np.ndarray) -> list[list[int]]:
        n = len(F)
        dominated_by = [[] for _ in range(n)]
        count = np.zeros(n, dtype=int)
        for i in range(n):
            for j in range(n):
                if i != j and np.all(F[i] <= F[j]) and np.any(F[i] < F[j]):
                    dominated_by[i].append(j)
                elif i != j and np.all(F[j] <= F[i]) and np.any(F[j] < F[i]):
                    count[i] += 1
        fronts = [[i for i in range(n) if count[i] == 0]]
        while fronts[-1]:
            nxt = []
            for i in fronts[-1]:
                for j in dominated_by[i]:
                    count[j] -= 1
                    if count[j] == 0:
                        nxt.append(j)
            fronts.append(nxt)
        return fronts[:-1]

    @staticmethod
    def crowding(F: np.ndarray) -> np.ndarray:
        n, m = F.shape
        dist = np.zeros(n)
        if n <= 2:
            return np.full(n, np.inf)
        for k in range(m):
            order = np.argsort(F[:, k], kind="stable")
            span = F[order[-1], k] - F[order[0], k]
            dist[order[0]] = dist[order[-1]] = np.inf
            if span == 0:
                continue
            for a in range(1, n - 1):
                dist[order[a]] += (F[order[a + 1], k] - F[order[a - 1], k]) / span
        return dist

    def _select(self, pool: list[tuple[np.ndarray, np.ndarray]]) -> list[tuple[np.ndarray, np.ndarray, int, float]]:
        F = np.array([f for _, f in pool])
        chosen = []
        for rank, front in enumerate(self.sort_fronts(F)):
            cd = self.crowding(F[front])
            ranked = sorted(zip(front, cd), key=lambda t: -t[1])
            for idx, c in ranked:
                if len(chosen) < self.population:
                    chosen.append((pool[idx][0], pool[idx][1], rank, c))
            if len(chosen) >= self.population:
                break
        return chosen

    def _tournament(self, ranked) -> np.ndarray:
        a, b = self.rng.integers(len(ranked), size=2)
        ra, rb = ranked[a], ranked[b]
        if (ra[2], -ra[3]) <= (rb[2], -rb[3]):
            return ra[0]
        return rb[0]

    def _sbx(self, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c1, c2 = x1.copy(), x2.copy()
        if self.rng.random() > self.pc:
            return c1, c2
        for i in range(len(x1)):
            if self.rng.random() > 0.5 or abs(x1[i] - x2[i]) < 1e-14:
                continue
            u = self.rng.random()
            beta = (2 * u) ** (1 / (self.eta_c + 1)) if u <= 0.5 else (1 / (2 * (1 - u))) ** (1 / (self.eta_c + 1))
            c1[i] = 0.5 * ((1 + beta) * x1[i] + (1 - beta) * x2[i])
            c2[i] = 0.5 * ((1 - beta) * x1[i] + (1 + beta) * x2[i])
        return np.clip(c1, 0, 1), np.clip(c2, 0, 1)

    def _mutate(self, x: np.ndarray) -> np.ndarray:
        y = x.copy()
        for i in range(len(y)):
            if self.rng.random() >= self.pm:
                continue
            u = self.rng.random()
            if u < 0.5:
                delta = (2 * u) ** (1 / (self.eta_m + 1)) - 1
            else:
                delta = 1 - (2 * (1 - u)) ** (1 / (self.eta_m + 1))
            y[i] = y[i] + delta
        return np.clip(y, 0, 1)

    def _children(self) -> list[np.ndarray]:
        ranked = self._select(self.parents)
        units = []
        while len(units) < self.population:
            c1, c2 = self._sbx(self._tournament(ranked), self._tournament(ranked))
            units += [self._mutate(c1), self._mutate(c2)]
        return units[: self.population]

    def _propose(self) -> Configuration:
        if not self.queue:
            pool = self.parents + self.offspring
            if self.generation == 0 or not pool:
                units = [self.rng.random(len(self.space.params)) for _ in range(self.population)]
            else:
                self.parents = [(u, f) for u, f, *_ in self._select(pool)]
                self.offspring = []
                units = self._children()
            self.queue = [from_unit(self.space, u) for u in units]
            self.generation += 1
        return self.queue.pop(0)

    def front(self) -> ParetoFront:
        return pareto_front(self.observations, self.objectives)


class AgentOptimizer(Optimizer):
    """Each round: render the history, assemble the prompt, ask the agent.

    A round is consumed only by an accepted (or repaired) proposal; retries
    inside ``propose`` are free.
    """

    name = "agent"

    def __init__(self, space: SearchSpace | None, backend, static_prompt, seed: int = 0,
                 budget: int = 10, objectives: Mapping[str, str] | None = None,
                 history_policy=None, token_cap: int | None = None, retry_policy=None,
                 ledger=None, kernel_spec=None):
        from hwtune.agent import RetryPolicy, UsageLedger
        from hwtune.kerneltune import kernel_space
        from hwtune.prompt import DEFAULT_TOKEN_CAP, HistoryPolicy

        self.expect = static_prompt.expects
        if self.expect == "kernel":
            if kernel_spec is None:
                raise ValueError("kernel-only agent runs need kernel_spec")
            space = kernel_space(kernel_spec)
        super().__init__(space, seed, budget, objectives)
        self.backend = backend
        self.static = static_prompt
        self.history_policy = history_policy or HistoryPolicy()
        self.token_cap = token_cap or DEFAULT_TOKEN_CAP
        self.retry_policy = retry_policy or RetryPolicy()
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.kernel_spec = kernel_spec
        self.react = bool(static_prompt.react_directive)
        self.last_proposal = None
        self.proposals: list = []
        self.bundle_log: list[dict[str, Any]] = []
        self.records: list = []

    def history(self) -> list:
        from hwtune.records import TrialRecord

        out = []
        for obs, prop in zip(self.observations, self.proposals):
            config = obs.config if self.expect != "kernel" else Configuration({}, self.space.name)
            out.append(TrialRecord(
                round=obs.round, config=config, objectives=dict(obs.objectives),
                kernel_config=obs.info.get("kernel_config", prop.kernel_config),
                loss_trace=obs.info.get("loss_trace"), agent_attempts=prop.attempts,
                repaired=prop.repaired, response_text=prop.response_text))
        return out

    def _propose(self) -> Configuration:
        from hwtune.agent import propose
        from hwtune.kerneltune import assignment_from_config
        from hwtune.prompt import assemble, render_dynamic

        rounds_left = self.budget - self.n_asked
        dyn = render_dynamic(self.history(), rounds_left, self.history_policy, self.react)
        bundle = assemble(self.static, dyn, self.token_cap)
        self.bundle_log.append({
            "round": self.n_asked + 1, "rounds_left": rounds_left,
            "token_estimate": bundle.token_estimate, "verbatim": len(bundle.verbatim_rounds),
            "summaries": len(dyn.summaries) + bundle.summarized - bundle.dropped,
        })
        try:
            prop = propose(self.backend, bundle, self.space if self.expect != "kernel" else None,
                           self.expect, self.retry_policy, self.ledger, self.kernel_spec)
        except ProposalExhaustedError as exc:
            exc.partial_trace = list(self.observations)
            raise
        self.last_proposal = prop
        self.proposals.append(prop)
        if self.expect == "kernel":
            return assignment_from_config(prop.kernel_config, self.space.name)
        return prop.config


OPTIMIZERS = {
    "random": RandomSearch,
    "local": LocalSearch,
    "bayesian": BayesianOptimization,
    "nsga2": NSGA2,
    "grid": GridSearch,
}


def make_optimizer(name: str, space: SearchSpace, seed: int = 0, budget: int = 10,
                   objectives: Mapping[str, str] | None = None, **kwargs: Any) -> Optimizer:
    key = name.lower().replace("-", "_")
    aliases = {"random_search": "random", "local_search": "local", "bo": "bayesian",
               "bayesian_opt": "bayesian", "nsga_ii": "nsga2", "exhaustive": "grid"}
    key = aliases.get(key, key)
    if key == "agent":
        return AgentOptimizer(space, seed=seed, budget=budget, objectives=objectives, **kwargs)
    if key not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted([*OPTIMIZERS, 'agent'])}")
    return OPTIMIZERS[key](space, seed=seed, budget=budget, objectives=objectives, **kwargs)
