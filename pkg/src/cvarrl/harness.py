"""Experiment orchestration: configs, seeded sweeps, regret aggregation and result files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bandits import LEARNERS, run_bandit
from .envs import (
    InstanceError,
    InvariantError,
    MabInstance,
    RngTape,
    TabularMdp,
    discretize_mdp,
    instance_from_json,
    load_instance,
    make_dense_reward_mdp,
    make_hard_mab,
    make_random_mdp,
    make_tree_mdp,
)
from .history import OracleInconsistency, RunHistory, compute_regret_series
from .ucbvi import BONUS_KINDS, run_cvar_ucbvi

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunHistory",
    "build_env",
    "compute_regret_series",
    "default_checkpoints",
    "loglog_slope",
    "run_experiment",
    "run_one",
]

CSV_HEADER = ("mode", "learner", "seed", "episode", "instant_regret", "cum_regret")
CURVE_POINTS = 200
PARALLELISM_ENV = "CVARRL_PARALLELISM"

GENERATORS = {
    "hard_mab": ("mab", make_hard_mab),
    "tree": ("rl", make_tree_mdp),
    "random_mdp": ("rl", make_random_mdp),
    "dense_mdp": ("rl", make_dense_reward_mdp),
}


class ConfigError(ValueError):
    """The experiment configuration is malformed or out of range."""


def fmt(x: float) -> str:
    """Float at 17 significant digits, so a rerun diffs clean."""
    return format(float(x), ".17g")


def default_checkpoints(K: int, count: int = 9) -> list[int]:
    """Log-spaced episodes from ``K / 100`` (at least 1) to ``K``."""
    if K < 1:
        return []
    lo = max(1, K // 100)
    pts = np.unique(np.round(np.geomspace(lo, K, count)).astype(int))
    return [int(p) for p in pts]


def loglog_slope(episodes, regret) -> float:
    """Least-squares slope of ``log(regret)`` against ``log(episode)``; NaN if any regret is 0."""
    x = np.log(np.asarray(episodes, dtype=float))
    y = np.asarray(regret, dtype=float)
    if y.size < 2 or np.any(y <= 0):
        return math.nan
    return float(np.polyfit(x, np.log(y), 1)[0])


def default_parallelism() -> int:
    raw = os.environ.get(PARALLELISM_ENV, "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{PARALLELISM_ENV}={raw!r} is not an integer") from exc
    if value < 1:
        raise ConfigError(f"{PARALLELISM_ENV} must be at least 1")
    return value


@dataclass
class ExperimentConfig:
    """One experiment: an environment, learners, parameters and seeds.

    ``env`` is either ``{"generator": name, "params": {...}}``, ``{"path": file}``
    or ``{"inline": instance-json}``.  For ``rl`` runs ``learners`` lists bonus
    kinds; an MDP with off-grid rewards can be discretized with
    ``"discretize": true``.
    """

    mode: str
    env: dict
    learners: list
    tau: float
    K: int
    seeds: list
    delta: float = 0.1
    eta: float | None = None
    eps: float | None = None
    checkpoints: list | None = None
    csv: str | None = None
    json: str | None = None
    diagnose: bool = False
    backend: str | None = None
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_json(cls, doc: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"mode", "env", "learners", "tau", "K", "seeds"} - set(doc)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        cfg = cls(**doc, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(doc, path.parent)

    def validate(self) -> None:
        if self.mode not in ("mab", "rl"):
            raise ConfigError("mode must be 'mab' or 'rl'")
        allowed = LEARNERS if self.mode == "mab" else BONUS_KINDS
        if isinstance(self.learners, str):
            self.learners = [self.learners]
        if not self.learners or any(l not in allowed for l in self.learners):
            raise ConfigError(f"learners must be a non-empty subset of {allowed}")
        if not isinstance(self.tau, (int, float)) or not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if not isinstance(self.K, int) or self.K < 0:
            raise ConfigError("K must be a non-negative integer")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.eta is not None and not 0.0 < self.eta <= 1.0:
            raise ConfigError("eta must lie in (0, 1]")
        if self.eps is not None and self.eps <= 0.0:
            raise ConfigError("eps must be positive")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.checkpoints is not None:
            if any(not isinstance(c, int) or not 1 <= c <= self.K for c in self.checkpoints):
                raise ConfigError(f"checkpoints must be integers in 1..{self.K}")
        if not isinstance(self.env, dict) or len({"generator", "path", "inline"} & set(self.env)) != 1:
            raise ConfigError("env needs exactly one of 'generator', 'path' or 'inline'")

    @property
    def resolved_eta(self) -> float:
        """Configured eta, or ``K ** -1/2`` when unset."""
        if self.eta is not None:
            return float(self.eta)
        return 1.0 / math.sqrt(max(self.K, 1))

    @property
    def resolved_checkpoints(self) -> list[int]:
        cps = self.checkpoints if self.checkpoints is not None else default_checkpoints(self.K)
        return sorted(set(int(c) for c in cps))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        return doc

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_env(cfg: ExperimentConfig) -> MabInstance | TabularMdp:
    """Instantiate the configured environment; raises :class:`ConfigError` on bad specs."""
    spec = dict(cfg.env)
    try:
        if "generator" in spec:
            name = spec["generator"]
            if name not in GENERATORS:
                raise ConfigError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
            mode, fn = GENERATORS[name]
            params = dict(spec.get("params", {}))
            if name in ("hard_mab", "tree"):
                params.setdefault("tau", cfg.tau)
                params.setdefault("K", cfg.K)
            env = fn(**params)
        elif "path" in spec:
            env = load_instance(Path(cfg.base_dir) / spec["path"])
        else:
            env = instance_from_json(spec["inline"])
        if spec.get("discretize"):
            if not isinstance(env, TabularMdp):
                raise ConfigError("only MDPs can be discretized")
            env = discretize_mdp(env, cfg.resolved_eta).mdp
    except (InstanceError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot build environment: {exc}") from exc
    expected = MabInstance if cfg.mode == "mab" else TabularMdp
    if not isinstance(env, expected):
        raise ConfigError(f"mode {cfg.mode!r} needs a {expected.__name__}")
    return env


def run_one(cfg: ExperimentConfig, env, learner: str, seed: int) -> RunHistory:
    """One seeded run of one learner."""
    tape = RngTape(seed)
    if cfg.mode == "mab":
        return run_bandit(env, learner, cfg.K, cfg.delta, cfg.tau, tape, eps=cfg.eps, diagnose=cfg.diagnose)
    return run_cvar_ucbvi(
        env, learner, cfg.K, cfg.delta, cfg.resolved_eta, cfg.tau, tape,
        backend=cfg.backend, diagnose=cfg.diagnose, checkpoints=cfg.resolved_checkpoints,
    )


def _task(args) -> tuple:
    cfg, learner, seed = args
    try:
        env = build_env(cfg)
        return ("ok", run_one(cfg, env, learner, seed))
    except (InvariantError, OracleInconsistency) as exc:
        return ("invariant", f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # collected per seed, never aborts the sweep
        return ("error", f"{type(exc).__name__}: {exc}")


def build_id() -> str:
    """Content hash of the package sources, standing in for a commit id."""
    root = Path(__file__).parent
    h = hashlib.sha1()
    for p in sorted(root.glob("*.py")) + sorted(root.glob("*.pyx")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


@dataclass
class ResultSet:
    """Aggregated outcome of an experiment, ready to serialize."""

    config: ExperimentConfig
    histories: dict  # learner -> list[RunHistory | None] in seed order
    errors: list
    checkpoints: list

    def aggregate(self, learner: str) -> dict:
        runs = [h for h in self.histories[learner] if h is not None]
        if not runs or not self.checkpoints:
            return {"checkpoints": self.checkpoints, "mean": [], "std": [], "slope": None, "runs": len(runs)}
        idx = np.asarray(self.checkpoints) - 1
        cum = np.array([h.cumulative[idx] for h in runs])
        mean = cum.mean(axis=0)
        std = cum.std(axis=0, ddof=1) if len(runs) > 1 else np.zeros_like(mean)
        slope = loglog_slope(self.checkpoints, mean)
        return {
            "checkpoints": self.checkpoints,
            "mean": mean.tolist(),
            "std": std.tolist(),
            "slope": None if math.isnan(slope) else slope,
            "runs": len(runs),
        }

    def curve(self, learner: str) -> dict:
        """Mean and spread of cumulative regret at up to 200 evenly spaced episodes."""
        runs = [h for h in self.histories[learner] if h is not None]
        K = self.config.K
        if not runs or K == 0:
            return {"episodes": [], "mean": [], "std": []}
        eps = np.unique(np.round(np.linspace(1, K, min(K, CURVE_POINTS))).astype(int))
        cum = np.array([h.cumulative[eps - 1] for h in runs])
        std = cum.std(axis=0, ddof=1) if len(runs) > 1 else np.zeros(eps.size)
        return {"episodes": eps.tolist(), "mean": cum.mean(axis=0).tolist(), "std": std.tolist()}

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for learner in self.config.learners:
            for seed, h in zip(self.config.seeds, self.histories[learner]):
                if h is None:
                    continue
                for ep in self.checkpoints:
                    inst, cum = h.at(ep)
                    w.writerow((self.config.mode, h.learner, seed, ep, fmt(inst), fmt(cum)))
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "config_hash": self.config.digest(),
            "build_id": build_id(),
            "mode": self.config.mode,
            "learners": {
                learner: {
                    "name": next((h.learner for h in self.histories[learner] if h is not None), learner),
                    "aggregate": self.aggregate(learner),
                    "curve": self.curve(learner),
                    "runs": [
                        {"seed": s, **h.to_json()} if h is not None else {"seed": s, "failed": True}
                        for s, h in zip(self.config.seeds, self.histories[learner])
                    ],
                }
                for learner in self.config.learners
            },
            "errors": self.errors,
        }

    def json_text(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @property
    def invariant_failure(self) -> bool:
        return any(e["kind"] == "invariant" for e in self.errors)


def run_experiment(cfg: ExperimentConfig, parallelism: int | None = None, seed_offset: int = 0) -> ResultSet:
    """Run every (learner, seed) pair and write the configured CSV and JSON files.

    Runs are fanned out over ``parallelism`` processes; results are reduced in
    seed order, so output bytes do not depend on the fan-out.
    """
    parallelism = default_parallelism() if parallelism is None else parallelism
    if parallelism < 1:
        raise ConfigError("parallelism must be at least 1")
    if seed_offset:
        cfg = ExperimentConfig(**{**cfg.to_json(), "seeds": [s + seed_offset for s in cfg.seeds]}, base_dir=cfg.base_dir)
        cfg.validate()
    build_env(cfg)  # surface config errors before fanning out
    tasks = [(cfg, learner, seed) for learner in cfg.learners for seed in cfg.seeds]
    if parallelism == 1 or len(tasks) == 1:
        outcomes = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(tasks))) as pool:
            outcomes = list(pool.map(_task, tasks))
    histories = {learner: [] for learner in cfg.learners}
    errors = []
    for (_, learner, seed), (status, payload) in zip(tasks, outcomes):
        if status == "ok":
            histories[learner].append(payload)
        else:
            histories[learner].append(None)
            errors.append({"learner": learner, "seed": seed, "kind": status, "message": payload})
    result = ResultSet(cfg, histories, errors, cfg.resolved_checkpoints)
    base = Path(cfg.base_dir)
    if cfg.csv:
        (base / cfg.csv).write_text(result.csv_text())
    if cfg.json:
        (base / cfg.json).write_text(result.json_text())
    return result
