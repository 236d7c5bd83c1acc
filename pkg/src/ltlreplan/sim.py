"""Deterministic scenario simulation and the comparative benchmark.

Scenarios pair a ground-truth workspace with a (possibly wrong) prior,
drive the planner tick by tick, and collect completion, replanning, and
travel metrics. ``run_baseline`` executes the same scenario with a
rebuild-from-scratch reactive planner for comparison.
"""

from __future__ import annotations

import copy
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ltlf
from .geometry import Point, Rect, dist
from .planner import (
    DONE,
    EXECUTING,
    Event,
    PLANNING,
    Planner,
    PlannerConfig,
    STOPPED,
    Solution,
)
from .tree import INF, ISOLATED, PlanGraph
from .workspace import (
    Knowledge,
    KnowledgeBase,
    Obstacle,
    ObstacleScript,
    Region,
    Workspace,
    WorkspaceIndex,
    label_of,
    sense,
)


class ScenarioError(Exception):
    pass


@dataclass
class Scenario:
    name: str
    truth: Workspace
    prior: Workspace
    formula: str
    start: Point | None = None
    start_box: Rect | None = None
    v_max: float = 0.5
    dt: float = 0.1
    sense_wh: tuple[float, float] = (3.0, 3.0)
    budget_per_tick: int = 50
    max_time: float = 300.0

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(
            v_max=self.v_max,
            dt=self.dt,
            sense_wh=self.sense_wh,
            budget_per_tick=self.budget_per_tick,
        )


@dataclass
class RunMetrics:
    scenario: str
    planner: str
    seed: int
    completed: bool
    total_time: float
    replan_count: int
    avg_replan_time: float
    travel_dist: float
    trace: list[list[str]]
    events: list[str] = field(default_factory=list)

    def satisfies(self, formula: str) -> bool:
        f = ltlf.parse(formula)
        return ltlf.evaluate(f, [frozenset(t) for t in self.trace])

    def to_json(self) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "planner": self.planner,
                "seed": self.seed,
                "completed": self.completed,
                "total_time": round(self.total_time, 6),
                "replan_count": self.replan_count,
                "avg_replan_time": round(self.avg_replan_time, 6),
                "travel_dist": round(self.travel_dist, 6),
                "trace": self.trace,
            }
        )

    def csv_row(self) -> str:
        return (
            f"{self.scenario},{self.planner},{self.seed},"
            f"{str(self.completed).lower()},{self.total_time:.3f},"
            f"{self.avg_replan_time:.6f},{self.travel_dist:.3f}"
        )


CSV_HEADER = "scenario,planner,seed,completed,total_time,avg_replan_time,travel_dist"


# ---------------------------------------------------------------------------
# Scenario documents
# ---------------------------------------------------------------------------

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "bounds", "regions", "formula"],
    "properties": {
        "name": {"type": "string"},
        "bounds": {"type": "array", "minItems": 4, "maxItems": 4,
                   "items": {"type": "number"}},
        "regions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "rect", "labels"],
                "properties": {
                    "id": {"type": "string"},
                    "rect": {"type": "array", "minItems": 4, "maxItems": 4,
                             "items": {"type": "number"}},
                    "labels": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "shape", "size", "pos"],
                "properties": {
                    "id": {"type": "string"},
                    "shape": {"enum": ["rect", "disc"]},
                    "size": {},
                    "pos": {"type": "array", "minItems": 2, "maxItems": 2,
                            "items": {"type": "number"}},
                    "kind": {"enum": ["static", "dynamic"]},
                    "script": {
                        "type": "object",
                        "required": ["waypoints", "speed"],
                        "properties": {
                            "waypoints": {"type": "array"},
                            "speed": {"type": "number"},
                            "mode": {"enum": ["once", "pingpong"]},
                        },
                    },
                },
            },
        },
        "prior_overrides": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["region", "labels"],
                "properties": {
                    "region": {"type": "string"},
                    "labels": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "formula": {"type": "string"},
        "start": {"type": "array", "minItems": 2, "maxItems": 2,
                  "items": {"type": "number"}},
        "start_box": {"type": "array", "minItems": 4, "maxItems": 4,
                      "items": {"type": "number"}},
        "v_max": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "sense_wh": {"type": "array", "minItems": 2, "maxItems": 2,
                     "items": {"type": "number"}},
        "budget_per_tick": {"type": "integer", "minimum": 0},
        "max_time": {"type": "number", "exclusiveMinimum": 0},
    },
}


def _obstacle_from_doc(doc: dict) -> Obstacle:
    size = doc["size"]
    if doc["shape"] == "rect":
        size = (float(size[0]), float(size[1]))
    else:
        size = float(size)
    script = None
    if doc.get("script"):
        s = doc["script"]
        script = ObstacleScript(
            waypoints=[(float(p[0]), float(p[1])) for p in s["waypoints"]],
            speed=float(s["speed"]),
            mode=s.get("mode", "once"),
        )
    return Obstacle(
        id=doc["id"],
        shape=doc["shape"],
        size=size,
        pos=(float(doc["pos"][0]), float(doc["pos"][1])),
        kind=doc.get("kind", "static"),
        script=script,
    )


def load_scenario(document: dict | str) -> Scenario:
    """Build a validated Scenario from a document or a built-in name."""
    if isinstance(document, str):
        document = builtin_document(document)
    try:
        import jsonschema

        jsonschema.validate(document, SCENARIO_SCHEMA)
    except ImportError:  # pragma: no cover
        pass
    except Exception as e:
        path = "/".join(str(p) for p in getattr(e, "absolute_path", []))
        raise ScenarioError(f"scenario schema violation at '{path}': "
                            f"{getattr(e, 'message', e)}") from None

    bounds = Rect(*[float(v) for v in document["bounds"]])
    regions = [
        Region(r["id"], Rect(*[float(v) for v in r["rect"]]),
               frozenset(r["labels"]))
        for r in document["regions"]
    ]
    obstacles = [_obstacle_from_doc(o) for o in document.get("obstacles", [])]
    truth = Workspace(bounds=bounds, regions=regions, obstacles=obstacles)
    try:
        truth.validate()
    except Exception as e:
        raise ScenarioError(str(e)) from None

    prior = Workspace(
        bounds=bounds,
        regions=copy.deepcopy(regions),
        obstacles=[copy.deepcopy(o) for o in obstacles if o.kind == "static"],
    )
    for ov in document.get("prior_overrides", []):
        prior.region_by_id(ov["region"]).labels = frozenset(ov["labels"])

    formula = document["formula"]
    try:
        ltlf.parse(formula)
    except ltlf.LtlSyntaxError as e:
        raise ScenarioError(f"bad formula: {e}") from None

    start = tuple(document["start"]) if "start" in document else None
    start_box = (
        Rect(*[float(v) for v in document["start_box"]])
        if "start_box" in document
        else None
    )
    if start is None and start_box is None:
        raise ScenarioError("scenario needs either start or start_box")

    return Scenario(
        name=document["name"],
        truth=truth,
        prior=prior,
        formula=formula,
        start=start,
        start_box=start_box,
        v_max=float(document.get("v_max", 0.5)),
        dt=float(document.get("dt", 0.1)),
        sense_wh=tuple(document.get("sense_wh", (3.0, 3.0))),
        budget_per_tick=int(document.get("budget_per_tick", 50)),
        max_time=float(document.get("max_time", 300.0)),
    )


def _base_document(name: str) -> dict:
    # Layout: pond near the start, one grassland close (l1, upper left),
    # one clearly farther (l3, upper right), three static blocks forming
    # two corridors through the middle band.
    return {
        "name": name,
        "bounds": [0.0, 0.0, 5.0, 5.0],
        "regions": [
            {"id": "l1", "rect": [0.8, 3.6, 1.6, 4.4], "labels": ["grassland"]},
            {"id": "l2", "rect": [1.8, 0.6, 2.6, 1.4], "labels": ["pond"]},
            {"id": "l3", "rect": [4.0, 4.0, 4.8, 4.8], "labels": ["grassland"]},
        ],
        "obstacles": [
            {"id": "o1", "shape": "rect", "size": [0.4, 0.4], "pos": [1.3, 2.5]},
            {"id": "o2", "shape": "rect", "size": [0.4, 0.4], "pos": [2.6, 2.5]},
            {"id": "o3", "shape": "rect", "size": [0.4, 0.4], "pos": [3.9, 2.5]},
        ],
        "formula": "F(pond & F grassland)",
        "start_box": [0.5, 0.5, 1.3, 1.3],
        "v_max": 0.5,
        "dt": 0.1,
        "sense_wh": [3.0, 3.0],
        "budget_per_tick": 15,
        "max_time": 300.0,
    }


def _mover() -> dict:
    """Dynamic disc sweeping left to right just above the corridor band."""
    return {
        "id": "u1",
        "shape": "disc",
        "size": 0.2,
        "pos": [1.2, 3.0],
        "kind": "dynamic",
        "script": {
            "waypoints": [[1.2, 3.0], [4.7, 3.0]],
            "speed": 0.2,
        },
    }


def builtin_document(name: str) -> dict:
    """Built-in scenario documents, by name."""
    if name == "X_A":
        doc = _base_document("X_A")
        # the robot believes the near grassland l1 is real; in truth it
        # is bare, so the first plan goes wrong mid-flight
        doc["regions"][0]["labels"] = []
        doc["prior_overrides"] = [{"region": "l1", "labels": ["grassland"]}]
        return doc
    if name == "X_B":
        # labels are right, but a mover sweeps across the corridor exits,
        # starting on the preferred route to l1
        doc = _base_document("X_B")
        doc["obstacles"].append(_mover())
        return doc
    if name == "X_C":
        # wrong l1 label plus the sweeping mover
        doc = _base_document("X_C")
        doc["regions"][0]["labels"] = []
        doc["prior_overrides"] = [{"region": "l1", "labels": ["grassland"]}]
        doc["obstacles"].append(_mover())
        return doc
    if name == "PHI2_DEMO":
        doc = _base_document("PHI2_DEMO")
        doc["formula"] = "(!grassland U pond) & F grassland"
        doc["start"] = [2.2, 1.8]
        del doc["start_box"]
        return doc
    raise ScenarioError(f"unknown built-in scenario {name!r}")


BUILTIN_NAMES = ("X_A", "X_B", "X_C", "PHI2_DEMO")


# ---------------------------------------------------------------------------
# Baseline: rebuild-from-scratch reactive planning
# ---------------------------------------------------------------------------


class BaselinePlanner:
    """Reactive re-planner without a library or root motion.

    Follows its first feasible path; whenever the current path is found
    invalid it saves the execution progress (position and automaton
    state), throws the whole search tree away, and grows a fresh one.
    """

    def __init__(self, truth: Workspace, prior: Workspace, formula: str,
                 start: Point, config: PlannerConfig, seed: int):
        self.cfg = config
        self.truth = truth
        self.formula = ltlf.parse(formula)
        self.dfa = ltlf.preprocess(ltlf.to_dfa(self.formula))
        self.kb = KnowledgeBase(prior, config.obs_threshold)
        self.index = WorkspaceIndex(self.kb.believed, self.dfa.atoms,
                                    config.clearance)
        self.rng = np.random.default_rng(seed)
        self.graph = PlanGraph(self.dfa, self.dfa.init, start,
                               eta=config.eta, gamma=config.gamma,
                               eta_max=config.eta_max)
        self.pos: Point = start
        q0 = self.dfa.step_mask(self.dfa.init, self.index.mask_at(start))
        if q0 is None:
            raise ValueError("start position violates the task formula")
        self.q_exec: int = q0
        self._last_mask = self.index.mask_at(start)
        self.mode = PLANNING
        self.clock = 0.0
        self.travel = 0.0
        self.events: list[Event] = []
        self.executed_labels: list[frozenset[str]] = [label_of(truth, start)]
        self.replan_durations: list[float] = []
        self._replan_wall_open: float | None = None
        self.forbidden_violations = 0
        self.iterations = 0
        self.path: list[int] = []
        self.edge_i = 0
        self._candidates: list[int] = []

    # -- helpers ------------------------------------------------------------

    def _emit(self, kind: str, detail: str = "") -> None:
        self.events.append(Event(self.clock, kind, detail))

    def _path_ids(self, terminal: int) -> list[int] | None:
        g = self.graph
        if terminal not in g.nodes or g.nodes[terminal].part == ISOLATED:
            return None
        path = []
        cur: int | None = terminal
        while cur is not None:
            path.append(cur)
            cur = g.nodes[cur].parent
        if path[-1] != g.root_id:
            return None
        path.reverse()
        return path

    def _segment_safe(self, a: Point, b: Point) -> bool:
        # dynamic obstacles get the blocking margin (belief staleness),
        # static ones the plain clearance
        from .geometry import Disc as _Disc
        from .geometry import seg_disc_distance, seg_rect_distance

        for o in self.kb.believed.obstacles:
            fp = o.footprint()
            lim = (
                self.cfg.block_margin if o.kind == "dynamic"
                else self.cfg.clearance
            )
            d = (
                seg_disc_distance(a, b, fp)
                if isinstance(fp, _Disc)
                else seg_rect_distance(a, b, fp)
            )
            if d < lim:
                return False
        return True

    def _path_valid(self, path: list[int], q_from: int,
                    from_pos: Point | None = None) -> bool:
        g = self.graph
        q: int | None = q_from
        prev = from_pos
        for nid in path:
            node = g.nodes.get(nid)
            if node is None:
                return False
            if prev is not None:
                if not self._segment_safe(prev, node.x):
                    return False
                q = g.run_over_segment(self.index, q, prev, node.x)
                if q is None:
                    return False
            prev = node.x
        nxt = self.dfa.step_mask(q, self.index.mask_at(prev))
        return nxt is not None and nxt in self.dfa.accepting

    def _grow_once(self) -> None:
        self.iterations += 1
        x = self.graph.sample_free(self.index, self.rng)
        report = self.graph.extend(self.index, x)
        self._candidates.extend(report.solutions)

    def _try_install(self) -> bool:
        best: tuple[float, int] | None = None
        kept: list[int] = []
        for nid in self._candidates:
            node = self.graph.nodes.get(nid)
            if node is None or node.part == ISOLATED or node.cost == INF:
                continue
            kept.append(nid)
            if best is None or node.cost < best[0]:
                best = (node.cost, nid)
        self._candidates = kept
        if best is None:
            return False
        path = self._path_ids(best[1])
        if path is None or not self._path_valid(path, self.graph.nodes[path[0]].q):
            return False
        self.path = path
        self.edge_i = 0
        self.mode = EXECUTING
        self._emit("switch", f"path cost={best[0]:.3f}")
        if self._replan_wall_open is not None:
            self.replan_durations.append(
                time.perf_counter() - self._replan_wall_open
            )
            self._replan_wall_open = None
        return True

    def _rebuild(self, reason: str) -> None:
        """Discard the graph and restart from the current hybrid state."""
        self._replan_wall_open = self._replan_wall_open or time.perf_counter()
        self._emit("replan", reason)
        self._emit("stop", reason)
        self.graph = PlanGraph(self.dfa, self.q_exec, self.pos,
                               eta=self.cfg.eta, gamma=self.cfg.gamma,
                               eta_max=self.cfg.eta_max)
        self.path = []
        self.edge_i = 0
        self._candidates = []
        self.mode = STOPPED

    def _advance_pos(self, new_pos: Point) -> None:
        self.travel += dist(self.pos, new_pos)
        self.pos = new_pos
        true_labels = label_of(self.truth, new_pos)
        if self.executed_labels[-1] != true_labels:
            self.executed_labels.append(true_labels)
        mask = self.index.mask_at(new_pos)
        if mask != self._last_mask:
            nxt = self.dfa.step_mask(self.q_exec, mask)
            if nxt is not None:
                self.q_exec = nxt
            self._last_mask = mask

    def _move(self, dt: float) -> None:
        if self.edge_i + 1 >= len(self.path):
            self._check_done()
            return
        target = self.graph.nodes[self.path[self.edge_i + 1]].x
        remaining = dist(self.pos, target)
        step = self.cfg.v_max * dt
        if step < remaining:
            s = step / remaining
            self._advance_pos(
                (self.pos[0] + s * (target[0] - self.pos[0]),
                 self.pos[1] + s * (target[1] - self.pos[1]))
            )
            return
        self._advance_pos(target)
        self.edge_i += 1
        self._emit("arrive", f"node={self.path[self.edge_i]}")
        if self.edge_i + 1 >= len(self.path):
            if not self._check_done():
                self._rebuild("terminal not accepting")

    def _check_done(self) -> bool:
        nxt = self.dfa.step_mask(self.q_exec, self.index.mask_at(self.pos))
        if nxt is not None and nxt in self.dfa.accepting:
            self.mode = DONE
            self._emit("done", f"q={self.q_exec}")
            return True
        return False

    def _validate_current(self) -> bool:
        if self.mode != EXECUTING:
            return True
        rest = self.path[self.edge_i + 1 :]
        return self._path_valid(rest, self.q_exec, self.pos)

    def sense_and_apply(self) -> None:
        changed_any = False
        known_ids = {o.id for o in self.kb.believed.obstacles}
        for k in sense(self.truth, self.pos, self.cfg.sense_wh, self.clock):
            if k.kind == "obs" and k.subject not in known_ids:
                template = self.truth.obstacle_by_id(k.subject)
                assert k.pos is not None
                self.kb.adopt_obstacle(template, k.pos)
                known_ids.add(k.subject)
                changed_any = True
            elif self.kb.apply(k):
                changed_any = True
        if changed_any:
            self.index = WorkspaceIndex(self.kb.believed, self.dfa.atoms,
                                        self.cfg.clearance)
            if self.mode == EXECUTING and not self._validate_current():
                self._rebuild("current path invalid")

    def tick(self, dt: float | None = None) -> list[Event]:
        if self.mode == DONE:
            raise RuntimeError("tick after completion")
        dt = self.cfg.dt if dt is None else dt
        mark = len(self.events)
        if self.mode == EXECUTING:
            self._move(dt)
        if self.mode != DONE:
            self.sense_and_apply()
        if self.mode != DONE:
            for _ in range(self.cfg.budget_per_tick):
                self._grow_once()
            if self.mode in (PLANNING, STOPPED):
                was = self.mode
                if self._try_install() and was == STOPPED:
                    self._emit("resume", "rebuilt")
        self.clock += dt
        return self.events[mark:]


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _draw_start(sc: Scenario, rng: np.random.Generator) -> Point:
    if sc.start is not None:
        return sc.start
    assert sc.start_box is not None
    from .workspace import is_free

    for _ in range(1000):
        x = (
            float(rng.uniform(sc.start_box.x0, sc.start_box.x1)),
            float(rng.uniform(sc.start_box.y0, sc.start_box.y1)),
        )
        if is_free(sc.prior, x) and is_free(sc.truth, x):
            return x
    raise ScenarioError("could not draw a free start position")


def _inside_truth_obstacle(sc: Scenario, pos: Point, t: float) -> bool:
    for o in sc.truth.obstacles:
        fp = o.footprint(o.position_at(t))
        if fp.distance_to_point(pos) == 0.0:
            return True
    return False


def _finish_metrics(sc: Scenario, planner, name: str, seed: int) -> RunMetrics:
    trace: list[list[str]] = []
    for labels in planner.executed_labels:
        row = sorted(labels)
        if not trace or trace[-1] != row:
            trace.append(row)
    durations = planner.replan_durations
    replan_count = sum(1 for e in planner.events if e.kind == "replan")
    return RunMetrics(
        scenario=sc.name,
        planner=name,
        seed=seed,
        completed=planner.mode == DONE,
        total_time=round(planner.clock, 9),
        replan_count=replan_count,
        avg_replan_time=float(np.mean(durations)) if durations else 0.0,
        travel_dist=planner.travel,
        trace=trace,
        events=[e.line() for e in planner.events],
    )


def _run_loop(sc: Scenario, planner, name: str, seed: int) -> RunMetrics:
    safety_hits = 0
    while planner.mode != DONE and planner.clock < sc.max_time:
        planner.tick(sc.dt)
        if _inside_truth_obstacle(sc, planner.pos, planner.clock):
            safety_hits += 1
    metrics = _finish_metrics(sc, planner, name, seed)
    if safety_hits:
        metrics.events.append(f"safety-violations={safety_hits}")
    return metrics


def run(sc: Scenario, seed: int = 0) -> RunMetrics:
    """Simulate the library planner on a scenario."""
    ss = np.random.SeedSequence(seed)
    start_seed, planner_seed = ss.spawn(2)
    start = _draw_start(sc, np.random.default_rng(start_seed))
    planner = Planner(
        truth=copy.deepcopy(sc.truth),
        prior=sc.prior,
        formula=sc.formula,
        start=start,
        config=sc.planner_config(),
        seed=planner_seed,
    )
    return _run_loop(sc, planner, "ours", seed)


def run_baseline(sc: Scenario, seed: int = 0) -> RunMetrics:
    """Simulate the rebuild-from-scratch baseline on a scenario."""
    ss = np.random.SeedSequence(seed)
    start_seed, planner_seed = ss.spawn(2)
    start = _draw_start(sc, np.random.default_rng(start_seed))
    planner = BaselinePlanner(
        truth=copy.deepcopy(sc.truth),
        prior=sc.prior,
        formula=sc.formula,
        start=start,
        config=sc.planner_config(),
        seed=planner_seed,
    )
    return _run_loop(sc, planner, "baseline", seed)


@dataclass
class BatchResult:
    rows: list[RunMetrics]
    means: dict[tuple[str, str], dict[str, float]]

    def csv(self) -> str:
        out = [CSV_HEADER]
        out.extend(r.csv_row() for r in self.rows)
        return "\n".join(out) + "\n"

    def jsonl(self) -> str:
        return "\n".join(r.to_json() for r in self.rows) + "\n"

    def table(self) -> str:
        buf = io.StringIO()
        cols = sorted({k[0] for k in self.means})
        buf.write(f"{'metric':<28}{'planner':<10}")
        for c in cols:
            buf.write(f"{c:>12}")
        buf.write("\n")
        for metric, label in (
            ("total_time", "total completion time (s)"),
            ("avg_replan_time", "avg replanning time (s)"),
            ("travel_dist", "total travel distance (m)"),
            ("completed", "completion rate"),
        ):
            for planner in ("ours", "baseline"):
                if not any(k[1] == planner for k in self.means):
                    continue
                buf.write(f"{label:<28}{planner:<10}")
                for c in cols:
                    v = self.means.get((c, planner), {}).get(metric, math.nan)
                    buf.write(f"{v:>12.3f}")
                buf.write("\n")
        return buf.getvalue()


def batch(
    scenarios: list[Scenario | str],
    seeds: list[int],
    planners: tuple[str, ...] = ("ours", "baseline"),
) -> BatchResult:
    """Run every scenario x planner x seed cell and aggregate means."""
    if not seeds:
        raise ScenarioError("empty seed list")
    rows: list[RunMetrics] = []
    for sc in scenarios:
        scenario = load_scenario(sc) if isinstance(sc, str) else sc
        for planner in planners:
            fn = run if planner == "ours" else run_baseline
            for seed in seeds:
                rows.append(fn(scenario, seed))
    means: dict[tuple[str, str], dict[str, float]] = {}
    for row in rows:
        key = (row.scenario, row.planner)
        acc = means.setdefault(
            key,
            {"total_time": 0.0, "avg_replan_time": 0.0, "travel_dist": 0.0,
             "completed": 0.0, "n": 0.0},
        )
        acc["total_time"] += row.total_time
        acc["avg_replan_time"] += row.avg_replan_time
        acc["travel_dist"] += row.travel_dist
        acc["completed"] += 1.0 if row.completed else 0.0
        acc["n"] += 1.0
    for acc in means.values():
        n = acc.pop("n")
        for k in acc:
            acc[k] /= n
    return BatchResult(rows=rows, means=means)
