"""Monte-Carlo checks of the structural guarantees: concentration, coupling and confidence events."""

from __future__ import annotations

import numpy as np

from .dp import solve_optimal
from .envs import InvariantError, RngTape, coupled_rollout, discretize_mdp, make_random_mdp
from .grid import BudgetGrid
from .harness import ConfigError, ExperimentConfig, run_experiment
from .risk import FiniteDist, cvar_concentration_radius, cvar_exact, empirical_cvar

STANDARD_DISTS = {
    "bernoulli": FiniteDist.bernoulli(0.5),
    "three_atom": FiniteDist.from_arrays([0.0, 0.5, 1.0], [0.2, 0.3, 0.5]),
    "eleven_atom": FiniteDist.from_arrays(np.linspace(0.0, 1.0, 11), np.full(11, 1.0 / 11)),
}
DEFAULT_THRESHOLD = 0.85


def _seed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def concentration_coverage(dist: FiniteDist, n: int, tau: float, delta: float, trials: int, seed: int) -> dict:
    """Fraction of trials whose empirical CVaR of ``n`` draws lies within the concentration radius."""
    radius = cvar_concentration_radius(n, tau, delta)
    exact = cvar_exact(dist, tau)
    cum = np.cumsum(dist.probs)
    hits = 0
    worst = 0.0
    for t in range(trials):
        u = _seed_rng(seed, t).random(n)
        draws = dist.values[np.minimum(np.searchsorted(cum, u, side="right"), dist.values.size - 1)]
        err = abs(empirical_cvar(draws, tau) - exact)
        worst = max(worst, err)
        hits += err <= radius.value
    return {"coverage": hits / trials, "radius": radius.value, "valid": radius.valid,
            "cvar": exact, "max_error": worst, "trials": trials}


def coupling_check(
    S: int, A: int, H: int, eta: float, tau: float, rollouts: int, seed: int,
    instances: int = 50, fine_n: int = 12,
) -> dict:
    """Pathwise sandwich on coupled roll-outs and the optimum ordering between M and disc(M).

    The sandwich uses a continuous-reward random MDP and the optimal grid policy
    of its discretization.  The ordering uses tiny MDPs whose rewards sit on the
    finer ``1/fine_n`` grid, so the optimum of M itself is computed exactly.
    """
    grid = BudgetGrid.from_eta(eta)
    mdp = make_random_mdp(S, A, H, grid.n, seed, off_grid=True)
    disc = discretize_mdp(mdp, eta)
    sol = solve_optimal(disc.mdp, tau, grid)
    tape = RngTape(seed)
    sandwich_ok = 0
    for _ in range(rollouts):
        try:
            coupled_rollout(mdp, eta, sol.policy, sol.b_star_idx, tape)
            sandwich_ok += 1
        except InvariantError:
            pass
    fine = BudgetGrid(fine_n)
    order_ok = 0
    for i in range(instances):
        tiny = make_random_mdp(2, 2, 2, fine_n, seed + 1 + i)
        raw = solve_optimal(tiny, tau, fine).cvar
        coarse = solve_optimal(discretize_mdp(tiny, eta).mdp, tau, grid).cvar
        order_ok += coarse >= raw - 1e-12
    return {
        "sandwich_fraction": sandwich_ok / rollouts if rollouts else 1.0,
        "rollouts": rollouts,
        "ordering_fraction": order_ok / instances if instances else 1.0,
        "instances": instances,
    }


def confidence_events(cfg: ExperimentConfig, parallelism: int | None = None) -> dict:
    """Per learner, the fraction of seeded runs in which each confidence event held at every episode."""
    cfg = ExperimentConfig(**{**cfg.to_json(), "diagnose": True, "csv": None, "json": None}, base_dir=cfg.base_dir)
    res = run_experiment(cfg, parallelism)
    out = {}
    for learner in cfg.learners:
        runs = [h for h in res.histories[learner] if h is not None]
        if not runs:
            out[learner] = {}
            continue
        events = [k for k, v in runs[0].diagnostics.items() if isinstance(v, bool)]
        out[learner] = {e: sum(bool(h.diagnostics[e]) for h in runs) / len(runs) for e in events}
        out[learner]["runs"] = len(runs)
    return {"fractions": out, "errors": res.errors}


def parse_threshold(doc: dict) -> tuple[dict, float]:
    doc = dict(doc)
    threshold = float(doc.pop("threshold", DEFAULT_THRESHOLD))
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    return doc, threshold


def resolve_dist(spec) -> FiniteDist:
    if isinstance(spec, str):
        if spec not in STANDARD_DISTS:
            raise ConfigError(f"unknown distribution {spec!r}; choose from {sorted(STANDARD_DISTS)}")
        return STANDARD_DISTS[spec]
    try:
        return FiniteDist.from_json(spec)
    except ValueError as exc:
        raise ConfigError(f"bad distribution: {exc}") from exc
