"""Experiment harness: scenarios, the run matrix and the results table."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema

from .engine import FAST_SPEEDS, REALISTIC_SPEEDS, RunResult, SimConfig, World, percent_reduction, run
from .netgraph import RoadNetwork, bundled_network, generate_grid, load_network_file
from .parallel import parallel_run
from .pheromone import PheromoneParams
from .routing import ALGORITHMS, RoutingParams
from .signals import CONTROLLERS, SignalParams

log = logging.getLogger(__name__)

CSV_COLUMNS = ("algorithm", "executor", "vehicle_count", "seed", "mean_travel_s", "mean_wait_s", "wall_clock_ms")
EXECUTORS = ("sequential", "parallel")
SERIES_ORDER = ("dijkstra", "aco", "maco", "maco-p",
                "parallel-dijkstra", "parallel-aco", "parallel-maco", "gmaco-p")


class ScenarioError(ValueError):
    """Invalid scenario or results input; message carries the field path."""


class MissingCellError(KeyError):
    pass


def _params_schema(cls) -> dict[str, Any]:
    props: dict[str, Any] = {}
    for f in fields(cls):
        if f.type in ("int",):
            props[f.name] = {"type": "integer"}
        elif f.type in ("float",):
            props[f.name] = {"type": "number"}
        elif f.type in ("bool",):
            props[f.name] = {"type": "boolean"}
        elif f.type in ("str",):
            props[f.name] = {"type": "string"}
        else:
            props[f.name] = {"type": "array", "items": {"type": "integer"}}
    return {"type": "object", "additionalProperties": False, "properties": props}


_LATENCY = {
    "oneOf": [
        {"type": "number", "minimum": 0},
        {"type": "object", "additionalProperties": False,
         "properties": {"sequential": {"type": "number", "minimum": 0},
                        "parallel": {"type": "number", "minimum": 0}}},
    ]
}

SCENARIO_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["network", "algorithms", "vehicle_counts"],
    "properties": {
        "network": {
            "oneOf": [
                {"type": "string"},
                {"type": "object", "additionalProperties": False, "required": ["builtin"],
                 "properties": {"builtin": {"type": "string"}}},
                {"type": "object", "additionalProperties": False, "required": ["grid"],
                 "properties": {"grid": {
                     "type": "object", "additionalProperties": False, "required": ["rows", "cols"],
                     "properties": {"rows": {"type": "integer", "minimum": 2},
                                    "cols": {"type": "integer", "minimum": 2},
                                    "edge_length": {"type": "number", "exclusiveMinimum": 0},
                                    "lanes": {"type": "integer", "minimum": 1},
                                    "signalized_interior": {"type": "boolean"},
                                    "seed": {"type": "integer", "minimum": 0}}}}},
            ]
        },
        "algorithms": {"type": "array", "minItems": 1, "items": {"enum": list(ALGORITHMS)}},
        "executors": {"type": "array", "minItems": 1, "items": {"enum": list(EXECUTORS)}},
        "controllers": {"type": "object", "additionalProperties": False,
                        "properties": {a: {"enum": list(CONTROLLERS)} for a in ALGORITHMS}},
        "vehicle_counts": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "runs_per_cell": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "engine": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "max_steps": {"type": "integer", "minimum": 0},
                "decision_latency_s": _LATENCY,
                "spawn": {"type": "object", "additionalProperties": False,
                          "properties": {"mode": {"enum": ["all-at-step-0", "uniform"]},
                                         "steps": {"type": "integer", "minimum": 1}}},
                "speed_preset": {"enum": ["fast", "realistic"]},
                "speed_range": {"type": "array", "minItems": 2, "maxItems": 2,
                                "items": {"type": "number", "exclusiveMinimum": 0}},
                "corridor": {"type": "object", "additionalProperties": False, "required": ["pairs", "fraction"],
                             "properties": {"pairs": {"type": "array", "minItems": 1, "items": {
                                 "type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "integer"}}},
                                 "fraction": {"type": "number", "minimum": 0, "maximum": 1}}},
            },
        },
        "pheromone": _params_schema(PheromoneParams),
        "signals": _params_schema(SignalParams),
        "routing": _params_schema(RoutingParams),
    },
}


@dataclass
class Scenario:
    network: RoadNetwork
    algorithms: list[str]
    vehicle_counts: list[int]
    seeds: list[int]
    executors: list[str] = field(default_factory=lambda: ["sequential"])
    controllers: dict[str, str] = field(default_factory=dict)
    workers: int = 0
    output: str = "results"
    latency_s: dict[str, float] = field(default_factory=lambda: {"sequential": 0.0, "parallel": 0.0})
    base: dict[str, Any] = field(default_factory=dict)

    @property
    def runs_per_cell(self) -> int:
        return len(self.seeds)

    def config(self, algorithm: str, executor: str, vehicle_count: int, seed: int) -> SimConfig:
        return SimConfig(self.network, algorithm=algorithm, controller=self.controllers.get(algorithm),
                         vehicle_count=vehicle_count, seed=seed,
                         decision_latency_s=self.latency_s[executor], **self.base)


def _fail(exc: jsonschema.ValidationError) -> ScenarioError:
    where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
    return ScenarioError(f"{where}: {exc.message}")


def _section(doc: dict[str, Any], name: str, cls):
    try:
        return cls(**doc.get(name, {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name}: {exc}") from exc


def parse_scenario(doc: dict[str, Any], base_dir: Path | None = None) -> Scenario:
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise _fail(exc) from exc
    base_dir = base_dir or Path.cwd()

    net_doc = doc["network"]
    if isinstance(net_doc, str):
        path = Path(net_doc)
        net = load_network_file(path if path.is_absolute() else base_dir / path)
    elif "builtin" in net_doc:
        try:
            net = bundled_network(net_doc["builtin"])
        except FileNotFoundError as exc:
            raise ScenarioError(f"network/builtin: no bundled network {net_doc['builtin']!r}") from exc
    else:
        g = net_doc["grid"]
        net = generate_grid(g["rows"], g["cols"], g.get("edge_length", 200.0), g.get("lanes", 3),
                            g.get("signalized_interior", True), g.get("seed", 0))

    eng = doc.get("engine", {})
    latency = eng.get("decision_latency_s", 0.0)
    if isinstance(latency, dict):
        latency_s = {"sequential": latency.get("sequential", 0.0), "parallel": latency.get("parallel", 0.0)}
    else:
        latency_s = {"sequential": latency, "parallel": latency}
    base: dict[str, Any] = {}
    if "dt" in eng:
        base["dt"] = eng["dt"]
    if "max_steps" in eng:
        base["max_steps"] = eng["max_steps"]
    spawn = eng.get("spawn", {})
    if "mode" in spawn:
        base["spawn"] = spawn["mode"]
    if "steps" in spawn:
        base["spawn_steps"] = spawn["steps"]
    if "speed_range" in eng:
        base["speed_range"] = tuple(eng["speed_range"])
    elif eng.get("speed_preset") == "realistic":
        base["speed_range"] = REALISTIC_SPEEDS
    else:
        base["speed_range"] = FAST_SPEEDS
    if "corridor" in eng:
        base["corridor_pairs"] = tuple(tuple(p) for p in eng["corridor"]["pairs"])
        base["corridor_fraction"] = eng["corridor"]["fraction"]
    base["pheromone"] = _section(doc, "pheromone", PheromoneParams)
    if "fixed_cycle_order" in doc.get("signals", {}):
        doc = {**doc, "signals": {**doc["signals"],
                                  "fixed_cycle_order": tuple(doc["signals"]["fixed_cycle_order"])}}
    base["signal"] = _section(doc, "signals", SignalParams)
    base["routing"] = _section(doc, "routing", RoutingParams)

    seeds = doc.get("seeds") or list(range(1, doc.get("runs_per_cell", 20) + 1))
    if "seeds" in doc and "runs_per_cell" in doc and doc["runs_per_cell"] != len(seeds):
        raise ScenarioError("runs_per_cell: must equal the number of listed seeds")
    scenario = Scenario(network=net, algorithms=list(doc["algorithms"]),
                        vehicle_counts=list(doc["vehicle_counts"]), seeds=list(seeds),
                        executors=list(doc.get("executors", ["sequential"])),
                        controllers=dict(doc.get("controllers", {})), workers=doc.get("workers", 0),
                        output=doc.get("output", "results"), latency_s=latency_s, base=base)
    try:  # surface config errors before the first run
        scenario.config(scenario.algorithms[0], scenario.executors[0], scenario.vehicle_counts[0], scenario.seeds[0])
    except ValueError as exc:
        raise ScenarioError(f"engine: {exc}") from exc
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"<root>: malformed JSON: {exc}") from exc
    return parse_scenario(doc, path.parent)


# -- results ------------------------------------------------------------------

def series_label(algorithm: str, executor: str) -> str:
    """Column name used in reports: parallel maco-p is the staged GMACO-P variant."""
    if executor == "sequential":
        return algorithm
    return "gmaco-p" if algorithm == "maco-p" else f"parallel-{algorithm}"


@dataclass(frozen=True)
class ResultRow:
    algorithm: str
    executor: str
    vehicle_count: int
    seed: int
    mean_travel_s: float | None
    mean_wait_s: float | None
    wall_clock_ms: float | None

    @property
    def label(self) -> str:
        return series_label(self.algorithm, self.executor)

    def csv_values(self) -> list[str]:
        def fmt(x: float | None) -> str:
            return "" if x is None else repr(float(x))

        return [self.algorithm, self.executor, str(self.vehicle_count), str(self.seed),
                fmt(self.mean_travel_s), fmt(self.mean_wait_s), fmt(self.wall_clock_ms)]


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def labels(self) -> list[str]:
        present = {r.label for r in self.rows}
        ordered = [s for s in SERIES_ORDER if s in present]
        return ordered + sorted(present - set(ordered))

    def counts(self) -> list[int]:
        return sorted({r.vehicle_count for r in self.rows})

    def aggregate(self) -> dict[tuple[str, int], float]:
        """Mean over seeds of mean_travel_s per (series label, vehicle count)."""
        cells: dict[tuple[str, int], list[float]] = {}
        for r in self.rows:
            if r.mean_travel_s is not None and not math.isnan(r.mean_travel_s):
                cells.setdefault((r.label, r.vehicle_count), []).append(r.mean_travel_s)
        return {k: math.fsum(v) / len(v) for k, v in cells.items()}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.csv_values())

    @classmethod
    def from_csv(cls, path: str | Path) -> ResultTable:
        def num(text: str, where: str) -> float | None:
            text = text.strip()
            if text in ("", "NA", "nan", "NaN"):
                return None
            try:
                return float(text)
            except ValueError:
                raise ScenarioError(f"{where}: not a number: {text!r}") from None

        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
                raise ScenarioError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                where = f"{path}:{lineno}"
                if len(rec) != len(CSV_COLUMNS):
                    raise ScenarioError(f"{where}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
                if rec[1] not in EXECUTORS:
                    raise ScenarioError(f"{where}: executor must be one of {EXECUTORS}")
                try:
                    count, seed = int(rec[2]), int(rec[3])
                except ValueError:
                    raise ScenarioError(f"{where}: vehicle_count and seed must be integers") from None
                rows.append(ResultRow(rec[0].strip(), rec[1], count, seed, num(rec[4], where),
                                      num(rec[5], where), num(rec[6], where)))
        return cls(rows)


def summarize(table: ResultTable, baseline: str, target: str, at_count: int) -> float:
    """Percent reduction of the target series against the baseline at one vehicle count."""
    agg = table.aggregate()
    for label in (baseline, target):
        if (label, at_count) not in agg:
            raise MissingCellError(f"no results for {label!r} at {at_count} vehicles")
    return percent_reduction(agg[(baseline, at_count)], agg[(target, at_count)])


def run_cell(scenario: Scenario, algorithm: str, executor: str, count: int, seed: int,
             workers: int, trace: Callable[[World], None] | None = None) -> RunResult:
    cfg = scenario.config(algorithm, executor, count, seed)
    if executor == "parallel":
        return parallel_run(cfg, workers, trace=trace)
    return run(cfg, trace=trace)


def cells(scenario: Scenario) -> Iterable[tuple[str, str, int, int]]:
    for alg in scenario.algorithms:
        for ex in scenario.executors:
            for count in scenario.vehicle_counts:
                for seed in scenario.seeds:
                    yield alg, ex, count, seed


def run_matrix(scenario: Scenario, workers: int | None = None,
               trace_factory: Callable[[str, str, int, int], Callable[[World], None] | None] | None = None,
               progress: Callable[[ResultRow], None] | None = None) -> ResultTable:
    """Run every (algorithm, executor, vehicle count, seed) cell.

    A failing cell is logged in ``failures`` and skipped; the rest still run.
    """
    workers = scenario.workers if workers is None else workers
    table = ResultTable()
    for alg, ex, count, seed in cells(scenario):
        trace = trace_factory(alg, ex, count, seed) if trace_factory else None
        try:
            res = run_cell(scenario, alg, ex, count, seed, workers, trace)
        except Exception as exc:  # recorded, not fatal
            msg = f"{alg}/{ex}/{count}/{seed}: {type(exc).__name__}: {exc}"
            log.warning("cell failed: %s", msg)
            table.failures.append(msg)
            continue
        finally:
            if trace is not None and hasattr(trace, "close"):
                trace.close()
        if not res.complete:
            log.info("%s/%s/%d/%d incomplete: %d of %d arrived", alg, ex, count, seed,
                     res.completed_count, res.vehicle_count)
        row = ResultRow(alg, ex, count, seed, res.mean_travel_s, res.mean_wait_s, res.wall_clock_ms)
        table.rows.append(row)
        if progress is not None:
            progress(row)
    return table


class StepTrace:
    """Per-step CSV traces: vehicle states and per-signal queue vectors."""

    def __init__(self, states_path: str | Path, signals_path: str | Path):
        self._states = open(states_path, "w", newline="")
        self._signals = open(signals_path, "w", newline="")
        self._sw = csv.writer(self._states)
        self._gw = csv.writer(self._signals)
        self._sw.writerow(["step", "pending", "at_node", "on_edge", "queued", "arrived", "retired"])
        self._gw.writerow(["step", "node", "green"] + [f"q{u}" for u in range(8)])

    def __call__(self, world: World) -> None:
        k = world.step_index
        pending = len(world.pending) - world.pending_pos
        self._sw.writerow([k, pending, len(world.at_node), len(world.on_edge), world.n_queued,
                           world.n_arrived, world.n_retired])
        for sig in world.signals:
            self._gw.writerow([k, sig.node, sig.green] + sig.queue_lengths)

    def close(self) -> None:
        self._states.close()
        self._signals.close()
