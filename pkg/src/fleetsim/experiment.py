"""Experiment configuration, orchestration, sweeps, and report emission.

A config fixes the network, the demand source, one or more policies, the
patience values to sweep, and the seeds. Every run is reproducible: all
randomness flows from the run's seed through named sub-streams (demand,
policy initialization, training, evaluation), so identical configs produce
byte-identical report files.

Learning policies train over ``train_cycles`` and are then scored on a fresh
simulation with exploration frozen; heuristic policies are scored directly.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import yaml

from . import agent as agent_mod
from . import baselines
from .agent import Hyperparams, TrainResult
from .demand import DemandConfig, DemandError, Order, clone_orders, parse_trip_records, synth_orders
from .mdp import StateDims, Transition
from .qnet import QNetwork
from .seeding import substream
from .sim import MetricsReport, Simulation, StepOutcome, write_event_log
from .zones import ZoneNetwork, head_width, load_network, load_network_file

POLICIES = ("random", "greedy", "demand_based", "qlearning", "amdqn")

_DAY_NAMES = {
    "monday": 0,
    "tuesday": 1,
    "wednesday": 2,
    "thursday": 3,
    "friday": 4,
    "saturday": 5,
    "sunday": 6,
}


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration; raised before any run."""


@dataclass
class SyntheticDemandSpec:
    rates: dict[int, float] | float
    trip_minutes: tuple[int, int] = (1, 10)
    dest_weights: dict[int, float] | None = None


@dataclass
class TripFileSpec:
    path: str
    columns: dict[str, str] | None = None


@dataclass
class QLearningParams:
    alpha_q: float = 0.1
    epsilon: float = 0.1
    gamma: float = 0.99


@dataclass
class ExperimentConfig:
    net: ZoneNetwork
    policies: list[str]
    patience: list[int]
    seeds: list[int]
    horizon: int
    taxis_per_zone: int
    demand: SyntheticDemandSpec | TripFileSpec
    train_cycles: int | None = None
    start_day: int = 0
    hidden_units: int = 256
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    qlearning: QLearningParams = field(default_factory=QLearningParams)
    output_dir: str | None = None
    save_curves: bool = False
    save_event_logs: bool = False

    def validate(self) -> None:
        if not self.policies:
            raise ConfigError("at least one policy is required")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}; expected one of {POLICIES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.patience:
            raise ConfigError("at least one patience value is required")
        if any(p < 0 for p in self.patience):
            raise ConfigError("patience values must be >= 0")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.train_cycles is not None and self.train_cycles < 0:
            raise ConfigError(f"train_cycles must be >= 0, got {self.train_cycles}")
        if self.taxis_per_zone < 0:
            raise ConfigError(f"taxis_per_zone must be >= 0, got {self.taxis_per_zone}")
        if self.hidden_units < 1:
            raise ConfigError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if not 0 <= self.start_day < 7:
            raise ConfigError(f"start_day must be in [0, 7), got {self.start_day}")
        try:
            self.hyperparams.validate()
        except ValueError as exc:
            raise ConfigError(f"invalid hyperparameters: {exc}") from exc
        if not 0.0 <= self.qlearning.epsilon <= 1.0:
            raise ConfigError("qlearning.epsilon must be in [0, 1]")
        if isinstance(self.demand, SyntheticDemandSpec):
            self._demand_config(patience=0).validate(self.net.num_zones)
        else:
            if not Path(self.demand.path).is_file():
                raise ConfigError(f"trip file not found: {self.demand.path}")

    # -- demand ------------------------------------------------------------

    def _demand_config(self, patience: int, horizon: int | None = None) -> DemandConfig:
        spec = self.demand
        assert isinstance(spec, SyntheticDemandSpec)
        n = self.net.num_zones
        if isinstance(spec.rates, Mapping):
            rates = [0.0] * n
            ext_index = {ext: z for z, ext in enumerate(self.net.external_ids)}
            for ext, rate in spec.rates.items():
                if ext not in ext_index:
                    raise ConfigError(f"demand rate for unknown zone {ext}")
                rates[ext_index[ext]] = float(rate)
        else:
            rates = [float(spec.rates)] * n
        dest_probs = None
        if spec.dest_weights is not None:
            weights = np.zeros(n)
            ext_index = {ext: z for z, ext in enumerate(self.net.external_ids)}
            for ext, w in spec.dest_weights.items():
                if ext not in ext_index:
                    raise ConfigError(f"destination weight for unknown zone {ext}")
                weights[ext_index[ext]] = float(w)
            if weights.sum() <= 0 or (weights < 0).any():
                raise ConfigError("destination weights must be non-negative with a positive sum")
            row = weights / weights.sum()
            dest_probs = [row.tolist()] * n
        return DemandConfig(
            horizon=self.horizon if horizon is None else horizon,
            rates=rates,
            patience=patience,
            dest_probs=dest_probs,
            trip_minutes_min=spec.trip_minutes[0],
            trip_minutes_max=spec.trip_minutes[1],
        )

    def make_orders(self, patience: int, seed: int, horizon: int | None = None) -> list[Order]:
        if isinstance(self.demand, SyntheticDemandSpec):
            return synth_orders(self._demand_config(patience, horizon), self.net, seed)
        with open(self.demand.path, "r", encoding="utf-8") as fh:
            orders, _ = parse_trip_records(fh, self.net, patience, columns=self.demand.columns)
        return orders


# -- config file loading ------------------------------------------------------


def _require_keys(section: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}")


def _as_int_list(value, where: str) -> list[int]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [int(value)]
    if isinstance(value, list):
        return [int(v) for v in value]
    raise ConfigError(f"{where} must be an integer or a list of integers")


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and fully validate a YAML experiment config; fail fast on typos."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(raw, base_dir=path.parent)


def build_config(raw: Mapping, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = base_dir or Path.cwd()
    _require_keys(
        raw,
        {
            "network",
            "demand",
            "policy",
            "patience",
            "seeds",
            "horizon",
            "train_cycles",
            "taxis_per_zone",
            "start_day",
            "hidden_units",
            "hyperparams",
            "qlearning",
            "output_dir",
            "save_curves",
            "save_event_logs",
        },
        "config",
    )
    for key in ("network", "demand", "policy", "patience", "seeds", "horizon", "taxis_per_zone"):
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")

    net_sec = raw["network"]
    _require_keys(net_sec, {"edge_file", "edges", "isolated"}, "network")
    if "edge_file" in net_sec:
        edge_path = Path(net_sec["edge_file"])
        if not edge_path.is_absolute():
            edge_path = base_dir / edge_path
        if not edge_path.is_file():
            raise ConfigError(f"edge file not found: {edge_path}")
        net = load_network_file(edge_path)
    elif "edges" in net_sec:
        net = load_network(
            [tuple(e) for e in net_sec["edges"]],
            extra_zones=net_sec.get("isolated", ()),
        )
    else:
        raise ConfigError("network section needs either edge_file or edges")

    demand_sec = raw["demand"]
    _require_keys(
        demand_sec, {"kind", "rates", "trip_minutes", "dest_weights", "path", "columns"}, "demand"
    )
    kind = demand_sec.get("kind", "synthetic")
    demand: SyntheticDemandSpec | TripFileSpec
    if kind == "synthetic":
        if "rates" not in demand_sec:
            raise ConfigError("synthetic demand needs rates")
        trip_minutes = demand_sec.get("trip_minutes", [1, 10])
        if not (isinstance(trip_minutes, list) and len(trip_minutes) == 2):
            raise ConfigError("trip_minutes must be [min, max]")
        rates = demand_sec["rates"]
        if isinstance(rates, Mapping):
            rates = {int(k): float(v) for k, v in rates.items()}
        dest_weights = demand_sec.get("dest_weights")
        if dest_weights is not None:
            dest_weights = {int(k): float(v) for k, v in dest_weights.items()}
        demand = SyntheticDemandSpec(
            rates=rates,
            trip_minutes=(int(trip_minutes[0]), int(trip_minutes[1])),
            dest_weights=dest_weights,
        )
    elif kind == "trip_file":
        if "path" not in demand_sec:
            raise ConfigError("trip_file demand needs path")
        trip_path = Path(demand_sec["path"])
        if not trip_path.is_absolute():
            trip_path = base_dir / trip_path
        demand = TripFileSpec(path=str(trip_path), columns=demand_sec.get("columns"))
    else:
        raise ConfigError(f"unknown demand kind {kind!r}; expected synthetic or trip_file")

    policy = raw["policy"]
    policies = [policy] if isinstance(policy, str) else [str(p) for p in policy]

    start_day = raw.get("start_day", 0)
    if isinstance(start_day, str):
        try:
            start_day = _DAY_NAMES[start_day.lower()]
        except KeyError:
            raise ConfigError(f"unknown start_day {start_day!r}") from None

    hp_sec = raw.get("hyperparams", {})
    hp_fields = {f for f in Hyperparams.__dataclass_fields__ if f != "max_cycles"}
    _require_keys(hp_sec, hp_fields, "hyperparams")
    hyperparams = Hyperparams(**{k: v for k, v in hp_sec.items()})

    ql_sec = raw.get("qlearning", {})
    _require_keys(ql_sec, {"alpha_q", "epsilon", "gamma"}, "qlearning")
    qlearning = QLearningParams(**{k: float(v) for k, v in ql_sec.items()})

    cfg = ExperimentConfig(
        net=net,
        policies=policies,
        patience=_as_int_list(raw["patience"], "patience"),
        seeds=_as_int_list(raw["seeds"], "seeds"),
        horizon=int(raw["horizon"]),
        train_cycles=None if raw.get("train_cycles") is None else int(raw["train_cycles"]),
        taxis_per_zone=int(raw["taxis_per_zone"]),
        demand=demand,
        start_day=int(start_day),
        hidden_units=int(raw.get("hidden_units", 256)),
        hyperparams=hyperparams,
        qlearning=qlearning,
        output_dir=raw.get("output_dir"),
        save_curves=bool(raw.get("save_curves", False)),
        save_event_logs=bool(raw.get("save_event_logs", False)),
    )
    cfg.validate()
    return cfg


# -- single runs ---------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    policy: str
    patience: int
    seed: int
    metrics: MetricsReport


@dataclass
class SweepReport:
    runs: list[RunResult] = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        """Mean and population-std per (policy, patience) across seeds."""
        groups: dict[tuple[str, int], list[RunResult]] = {}
        for run in self.runs:
            groups.setdefault((run.policy, run.patience), []).append(run)
        rows = []
        for (policy, patience), members in groups.items():
            row: dict = {"policy": policy, "patience": patience, "seeds": len(members)}
            for name in ("failure_rate", "avg_waiting_time", "avg_idle_search_time"):
                values = [
                    getattr(r.metrics, name) for r in members if getattr(r.metrics, name) is not None
                ]
                row[f"{name}_mean"] = statistics.fmean(values) if values else None
                row[f"{name}_std"] = statistics.pstdev(values) if values else None
            for name in ("served", "failed", "total"):
                row[f"{name}_mean"] = statistics.fmean(getattr(r.metrics, name) for r in members)
            rows.append(row)
        return rows

    def mean_failure_rate(self, policy: str, patience: int) -> float | None:
        for row in self.aggregates():
            if row["policy"] == policy and row["patience"] == patience:
                return row["failure_rate_mean"]
        return None


def _drive(
    sim: Simulation,
    cycles: int,
    act_fn: Callable[[Simulation, int, list[int]], dict[int, int]],
    after_step: Callable[[int, StepOutcome], None] | None = None,
    keep_outcomes: bool = False,
) -> list[StepOutcome]:
    outcomes: list[StepOutcome] = []
    for t in range(cycles):
        outcome = sim.step(act_fn(sim, t, sim.vacant_driver_ids()))
        if after_step is not None:
            after_step(t, outcome)
        if keep_outcomes:
            outcomes.append(outcome)
    return outcomes


def _random_actor(cfg: ExperimentConfig, rng: np.random.Generator):
    def act(sim: Simulation, t: int, vacant: list[int]) -> dict[int, int]:
        return {d: baselines.random_policy(sim.drivers[d].zone, cfg.net, rng) for d in vacant}

    return act


def _greedy_actor(cfg: ExperimentConfig):
    def act(sim: Simulation, t: int, vacant: list[int]) -> dict[int, int]:
        snapshot = sim.demand_snapshot()
        return {d: baselines.greedy_policy(sim.drivers[d].zone, cfg.net, snapshot) for d in vacant}

    return act


def _demand_based_actor(cfg: ExperimentConfig, rng: np.random.Generator):
    def act(sim: Simulation, t: int, vacant: list[int]) -> dict[int, int]:
        snapshot = sim.demand_snapshot()
        return {
            d: baselines.demand_based_policy(sim.drivers[d].zone, cfg.net, snapshot, rng)
            for d in vacant
        }

    return act


def _train_tabular(cfg: ExperimentConfig, patience: int, seed: int) -> baselines.QTable:
    """Online tabular learning pass over the training horizon."""
    cycles = cfg.horizon if cfg.train_cycles is None else cfg.train_cycles
    orders = cfg.make_orders(patience, seed, horizon=cycles)
    sim = Simulation(cfg.net, orders, cfg.taxis_per_zone, cfg.start_day)
    table = baselines.QTable(cfg.net)
    rng = substream(seed, "qlearning-train")
    params = cfg.qlearning

    def act(sim: Simulation, t: int, vacant: list[int]) -> dict[int, int]:
        return {
            d: baselines.qlearning_policy(table, sim.observe_state(d), params.epsilon, rng)
            for d in vacant
        }

    def learn(t: int, outcome: StepOutcome) -> None:
        if t == cycles - 1:
            return  # nothing to bootstrap from beyond the horizon
        for rec in outcome.records:
            tr = Transition(rec.state, rec.action, rec.reward, rec.next_state, rec.dt)
            baselines.qlearning_update(table, tr, params.alpha_q, params.gamma)

    _drive(sim, cycles, act, after_step=learn)
    return table


def _train_amdqn(cfg: ExperimentConfig, patience: int, seed: int) -> TrainResult:
    cycles = cfg.horizon if cfg.train_cycles is None else cfg.train_cycles
    orders = cfg.make_orders(patience, seed, horizon=cycles)
    sim = Simulation(cfg.net, orders, cfg.taxis_per_zone, cfg.start_day)
    dims = StateDims(zones=cfg.net.num_zones)
    width = head_width(cfg.net)
    policy = QNetwork.create(dims, width, cfg.hidden_units, substream(seed, "qnet-init"))
    target = policy.copy()
    hp = replace(cfg.hyperparams, max_cycles=cycles)
    return agent_mod.train(sim, policy, target, hp, substream(seed, "amdqn-train"))


def run_single(cfg: ExperimentConfig, policy: str, patience: int, seed: int) -> tuple[
    RunResult, list[StepOutcome], TrainResult | None
]:
    """One (policy, patience, seed) cell: train if needed, then score a fresh pass."""
    keep = cfg.save_event_logs
    train_result: TrainResult | None = None

    eval_orders = cfg.make_orders(patience, seed)
    sim = Simulation(cfg.net, eval_orders, cfg.taxis_per_zone, cfg.start_day)

    if policy == "random":
        outcomes = _drive(sim, cfg.horizon, _random_actor(cfg, substream(seed, "policy")), keep_outcomes=keep)
    elif policy == "greedy":
        outcomes = _drive(sim, cfg.horizon, _greedy_actor(cfg), keep_outcomes=keep)
    elif policy == "demand_based":
        outcomes = _drive(sim, cfg.horizon, _demand_based_actor(cfg, substream(seed, "policy")), keep_outcomes=keep)
    elif policy == "qlearning":
        table = _train_tabular(cfg, patience, seed)
        rng = substream(seed, "qlearning-eval")
        params = cfg.qlearning

        def act(sim: Simulation, t: int, vacant: list[int]) -> dict[int, int]:
            return {
                d: baselines.qlearning_policy(table, sim.observe_state(d), params.epsilon, rng)
                for d in vacant
            }

        outcomes = _drive(sim, cfg.horizon, act, keep_outcomes=keep)
    elif policy == "amdqn":
        train_result = _train_amdqn(cfg, patience, seed)
        outcomes = agent_mod.evaluate(
            sim,
            train_result.policy,
            cfg.horizon,
            substream(seed, "amdqn-eval"),
            epsilon=cfg.hyperparams.epsilon,
            keep_outcomes=keep,
        )
    else:
        raise ConfigError(f"unknown policy {policy!r}")

    result = RunResult(policy=policy, patience=patience, seed=seed, metrics=sim.metrics())
    return result, outcomes, train_result


def run_experiment(cfg: ExperimentConfig) -> SweepReport:
    """All (policy, patience, seed) cells of the config; emits files if configured."""
    cfg.validate()
    report = SweepReport()
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for policy in cfg.policies:
        for patience in cfg.patience:
            for seed in cfg.seeds:
                result, outcomes, train_result = run_single(cfg, policy, patience, seed)
                report.runs.append(result)
                stem = f"{policy}_p{patience}_s{seed}"
                if out_dir and cfg.save_event_logs:
                    write_event_log(out_dir / f"events_{stem}.jsonl", outcomes)
                if out_dir and cfg.save_curves and train_result is not None:
                    agent_mod.write_curves(out_dir / f"curves_{stem}.csv", train_result.curves)
    if out_dir:
        emit_report(report, out_dir)
    return report


def sweep_patience(cfg: ExperimentConfig, patience_list: Sequence[int]) -> SweepReport:
    """Paired-seed sweep: each seed reuses its demand and policy streams per value."""
    if not patience_list:
        raise ConfigError("patience sweep needs at least one value")
    return run_experiment(replace(cfg, patience=[int(p) for p in patience_list]))


# -- report files --------------------------------------------------------------

_RUN_COLUMNS = (
    "policy",
    "patience",
    "seed",
    "failure_rate",
    "avg_waiting_time",
    "avg_idle_search_time",
    "served",
    "failed",
    "total",
)

_AGG_COLUMNS = (
    "policy",
    "patience",
    "seeds",
    "failure_rate_mean",
    "failure_rate_std",
    "avg_waiting_time_mean",
    "avg_waiting_time_std",
    "avg_idle_search_time_mean",
    "avg_idle_search_time_std",
    "served_mean",
    "failed_mean",
    "total_mean",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: SweepReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the member and aggregate tables; identical reports yield identical bytes."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        runs_path = out_dir / "runs.csv"
        with open(runs_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(_RUN_COLUMNS) + "\n")
            for run in report.runs:
                row = {"policy": run.policy, "patience": run.patience, "seed": run.seed}
                row.update(run.metrics.as_row())
                fh.write(",".join(_fmt(row[c]) for c in _RUN_COLUMNS) + "\n")
        agg_path = out_dir / "aggregate.csv"
        with open(agg_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(_AGG_COLUMNS) + "\n")
            for row in report.aggregates():
                fh.write(",".join(_fmt(row[c]) for c in _AGG_COLUMNS) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write report under {out_dir}: {exc}") from exc
    return runs_path, agg_path
