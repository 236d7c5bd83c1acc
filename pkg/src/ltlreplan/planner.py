"""Anytime plan-execute-repair loop over the dual-root tree.

The planner grows the tree continuously, keeps a library of accepting
paths deduplicated by event trace and path topology, executes the
least-cost feasible one, and reacts to sensed region-label and obstacle
knowledge by repairing the tree, re-electing from the library, or
stopping in place until a fresh solution appears.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ltlf
from .geometry import Disc, Point, Rect, dist
from .ltlf import Dfa, Formula
from .tree import FUTURE, ISOLATED, INF, PlanGraph
from .workspace import (
    Knowledge,
    KnowledgeBase,
    Obstacle,
    Workspace,
    WorkspaceIndex,
    label_of,
    sense,
)

log = logging.getLogger("ltlreplan.planner")

PLANNING = "planning"
EXECUTING = "executing"
STOPPED = "stopped"
DONE = "done"


@dataclass
class PlannerConfig:
    v_max: float = 0.5  # m/s
    dt: float = 0.1  # s, tick period
    eta: float = 0.5  # m, steering step
    gamma: float = 4.0
    eta_max: float = 1.0
    clearance: float = 0.1  # m
    block_margin: float = 0.4  # m, edge blocking inflation around obstacles
    obs_threshold: float = 0.25  # m, re-plan displacement threshold
    sense_wh: tuple[float, float] = (3.0, 3.0)
    budget_per_tick: int = 50  # extend iterations per tick
    rewire_budget: int = 64  # root-rewire nodes per tick


@dataclass
class Event:
    t: float
    kind: str  # arrive | replan | switch | stop | resume | done
    detail: str = ""

    def line(self) -> str:
        return f"t={self.t:.2f} kind={self.kind} detail={self.detail}"


@dataclass
class ReplanReport:
    subject: str
    invalidated: int = 0
    switched_to: int | None = None
    stopped: bool = False
    blocked_edges: int = 0


@dataclass
class Solution:
    id: int
    terminal: int
    waypoints: list[Point]
    trace: tuple[int, ...]
    signature: tuple[int, ...]
    cost: float
    feasible: bool = True
    reason: str = ""
    final_region: str = ""


# ---------------------------------------------------------------------------
# Homotopy signatures
# ---------------------------------------------------------------------------


def ray_anchors(ws: Workspace) -> list[Point]:
    """Upward-ray anchor points: centroids of regions and obstacles."""
    out: list[Point] = [r.rect.center for r in ws.regions]
    for o in ws.obstacles:
        fp = o.footprint()
        out.append(fp.center)
    return out


def h_signature(waypoints: list[Point], anchors: list[Point]) -> tuple[int, ...]:
    """Reduced word of signed upward-ray crossings along a polyline.

    Token +-(k+1) marks a crossing of anchor k's ray, positive when the
    path passes left to right. Adjacent inverse tokens cancel. An anchor
    whose ray would pass exactly through a waypoint is shifted right by a
    fixed 1e-6 m before counting.
    """
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    xs = [w[0] for w in waypoints]
    adjusted: list[Point] = []
    for ax, ay in anchors:
        for _ in range(16):
            if any(abs(x - ax) < 1e-9 for x in xs):
                ax += 1e-6
            else:
                break
        adjusted.append((ax, ay))

    crossings: list[tuple[int, float, int]] = []  # (segment, t, token)
    for si, (p, q) in enumerate(zip(waypoints, waypoints[1:])):
        for k, (ax, ay) in enumerate(adjusted):
            dp = p[0] - ax
            dq = q[0] - ax
            if dp * dq >= 0.0:
                continue
            t = (ax - p[0]) / (q[0] - p[0])
            y_cross = p[1] + t * (q[1] - p[1])
            if y_cross < ay:
                continue
            token = (k + 1) if q[0] > p[0] else -(k + 1)
            crossings.append((si, t, token))
    crossings.sort(key=lambda c: (c[0], c[1]))

    word: list[int] = []
    for _, _, token in crossings:
        if word and word[-1] == -token:
            word.pop()
        else:
            word.append(token)
    return tuple(word)


# ---------------------------------------------------------------------------
# Solution library
# ---------------------------------------------------------------------------

ADDED = "added"
REPLACED = "replaced"
IGNORED = "ignored"


class SolutionLibrary:
    """Accepting paths, pairwise distinct in (event trace, topology)."""

    def __init__(self):
        self.members: dict[int, Solution] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.members)

    def try_add(self, sol: Solution) -> str:
        """Insert unless a member with the same trace and signature is
        at least as cheap; replaces a strictly costlier twin."""
        for m in self.members.values():
            if m.trace == sol.trace and m.signature == sol.signature:
                if sol.cost < m.cost:
                    sol.id = m.id
                    self.members[m.id] = sol
                    return REPLACED
                return IGNORED
        sol.id = self._next_id
        self._next_id += 1
        self.members[sol.id] = sol
        return ADDED

    def best_feasible(self) -> Solution | None:
        best: Solution | None = None
        for m in self.members.values():
            if m.feasible and m.cost < INF:
                if best is None or m.cost < best.cost or (
                    m.cost == best.cost and m.id < best.id
                ):
                    best = m
        return best

    def remap_terminals(self, remaps: list[tuple[int, int]]) -> None:
        if not remaps:
            return
        table = dict(remaps)
        for m in self.members.values():
            seen = set()
            while m.terminal in table and m.terminal not in seen:
                seen.add(m.terminal)
                m.terminal = table[m.terminal]

    def drop_shadowed_duplicates(self) -> None:
        """After revalidation, keep only the cheapest member per class."""
        by_class: dict[tuple, int] = {}
        doomed: list[int] = []
        for mid in sorted(self.members):
            m = self.members[mid]
            key = (m.trace, m.signature)
            prev = by_class.get(key)
            if prev is None:
                by_class[key] = mid
                continue
            keep, drop = (prev, mid)
            pm = self.members[prev]
            if (m.feasible, -m.cost) > (pm.feasible, -pm.cost):
                keep, drop = (mid, prev)
                by_class[key] = mid
            doomed.append(drop)
        for mid in doomed:
            del self.members[mid]


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------


class Planner:
    """Drives one robot through a partially known workspace."""

    def __init__(
        self,
        truth: Workspace,
        prior: Workspace,
        formula: str | Formula,
        start: Point,
        config: PlannerConfig | None = None,
        seed: int = 0,
    ):
        self.cfg = config or PlannerConfig()
        self.truth = truth
        f = ltlf.parse(formula) if isinstance(formula, str) else formula
        self.formula = f
        self.dfa: Dfa = ltlf.preprocess(ltlf.to_dfa(f))
        if self.dfa.init in self.dfa.bad:
            raise ValueError("task formula is unsatisfiable")
        self.kb = KnowledgeBase(prior, self.cfg.obs_threshold)
        self.index = WorkspaceIndex(
            self.kb.believed, self.dfa.atoms, self.cfg.clearance
        )
        self.rng = np.random.default_rng(seed)
        self.graph = PlanGraph(
            self.dfa, self.dfa.init, start,
            eta=self.cfg.eta, gamma=self.cfg.gamma, eta_max=self.cfg.eta_max,
        )
        self.library = SolutionLibrary()
        self.pos: Point = start
        q0 = self.dfa.step_mask(self.dfa.init, self.index.mask_at(start))
        if q0 is None:
            raise ValueError("start position violates the task formula")
        self.q_exec: int = q0
        self._last_mask = self.index.mask_at(start)
        self.mode = PLANNING
        self.clock = 0.0
        self.travel = 0.0
        self.current_id: int | None = None
        self.events: list[Event] = []
        self.executed_labels: list[frozenset[str]] = [label_of(truth, start)]
        self.replan_durations: list[float] = []
        self._replan_wall_open: float | None = None
        self.forbidden_violations = 0
        self.iterations = 0

    # -- small helpers ------------------------------------------------------

    def _emit(self, kind: str, detail: str = "") -> None:
        ev = Event(self.clock, kind, detail)
        self.events.append(ev)
        log.debug("%s", ev.line())

    def _rebuild_index(self) -> None:
        self.index = WorkspaceIndex(
            self.kb.believed, self.dfa.atoms, self.cfg.clearance
        )

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

    def _anchors(self) -> list[Point]:
        return ray_anchors(self.kb.believed)

    def _trace_of_path(self, path: list[int]) -> tuple[int, ...]:
        g = self.graph
        out: list[int] = [self.index.mask_at(g.nodes[path[0]].x)]
        for a, b in zip(path, path[1:]):
            for m in self.index.masks_for_trace(g._rid_trace(self.index, a, b)):
                if out[-1] != m:
                    out.append(m)
        return tuple(out)

    def _final_region(self, terminal: int) -> str:
        ridx = self.index.region_index_at(self.graph.nodes[terminal].x)
        return self.kb.believed.regions[ridx].id if ridx >= 0 else ""

    def _build_solution(self, terminal: int) -> Solution | None:
        """Solution record for a tree path; None when any edge is blocked.

        Feasibility holds by construction: tree edges carry valid runs and
        the terminal's acceptance flag was just checked by the caller.
        """
        path = self._path_ids(terminal)
        if path is None or len(path) < 1:
            return None
        g = self.graph
        cost = 0.0
        for nid in path[1:]:
            w = g.nodes[nid].eff_weight
            if w == INF:
                return None
            cost += w
        waypoints = [g.nodes[i].x for i in path]
        sig = h_signature(waypoints, self._anchors()) if len(path) > 1 else ()
        return Solution(
            id=-1,
            terminal=terminal,
            waypoints=waypoints,
            trace=self._trace_of_path(path),
            signature=sig,
            cost=cost,
            feasible=True,
            final_region=self._final_region(terminal),
        )

    def validate_solution(self, sol: Solution) -> tuple[bool, str]:
        """Re-run the solution under current beliefs; updates it in place."""
        g = self.graph
        path = self._path_ids(sol.terminal)
        if path is None:
            sol.feasible = False
            sol.reason = "broken transition"
            return False, sol.reason
        q: int | None = g.nodes[path[0]].q
        cost = 0.0
        for a, b in zip(path, path[1:]):
            node = g.nodes[b]
            if node.eff_weight == INF:
                sol.feasible = False
                sol.reason = "blocked edge"
                return False, sol.reason
            cost += node.eff_weight
            q = g.edge_run(self.index, q, a, b)
            if q is None:
                sol.feasible = False
                sol.reason = "broken transition"
                return False, sol.reason
        final_mask = self.index.mask_at(g.nodes[path[-1]].x)
        nxt = self.dfa.step_mask(q, final_mask)
        if nxt is None or nxt not in self.dfa.accepting:
            sol.feasible = False
            sol.reason = "broken transition"
            return False, sol.reason
        sol.cost = cost
        sol.waypoints = [g.nodes[i].x for i in path]
        sol.trace = self._trace_of_path(path)
        if len(sol.waypoints) > 1:
            sol.signature = h_signature(sol.waypoints, self._anchors())
        sol.feasible = True
        sol.reason = ""
        sol.final_region = self._final_region(sol.terminal)
        return True, ""

    def _refresh_costs(self) -> None:
        g = self.graph
        for m in self.library.members.values():
            path = self._path_ids(m.terminal)
            if path is None:
                m.feasible = False
                m.reason = "broken transition"
                continue
            cost = 0.0
            for nid in path[1:]:
                w = g.nodes[nid].eff_weight
                if w == INF:
                    cost = INF
                    break
                cost += w
            if cost == INF:
                m.feasible = False
                m.reason = "blocked edge"
            else:
                m.cost = cost
                m.waypoints = [g.nodes[i].x for i in path]

    def _revalidate_library(self) -> int:
        """Full revalidation under current beliefs; returns invalidations."""
        self.library.remap_terminals(self.graph.drain_merge_log())
        invalid = 0
        for m in self.library.members.values():
            was = m.feasible
            ok, _ = self.validate_solution(m)
            if was and not ok:
                invalid += 1
        self.library.drop_shadowed_duplicates()
        return invalid

    # -- growth --------------------------------------------------------------

    def _grow_once(self) -> int:
        """One sample/extend iteration; returns library insertions."""
        self.iterations += 1
        x = self.graph.sample_free(self.index, self.rng)
        report = self.graph.extend(self.index, x)
        count = 0
        for nid in report.solutions:
            sol = self._build_solution(nid)
            if sol is not None:
                if self.library.try_add(sol) in (ADDED, REPLACED):
                    count += 1
        return count

    def plan_initial(self, budget: int = 4000) -> Solution | None:
        """Grow until the first feasible solution; install and return it."""
        for _ in range(budget):
            self._grow_once()
            best = self.library.best_feasible()
            if best is not None:
                self._install(best, initial=True)
                self._check_done()
                return best
        return None

    def improve_step(self, n: int) -> int:
        """n growth iterations plus a library cost refresh."""
        count = 0
        for _ in range(n):
            count += self._grow_once()
        if count or self.library.members:
            self._refresh_costs()
        return count

    # -- execution ------------------------------------------------------------

    def _install(self, sol: Solution, initial: bool = False,
                 quiet: bool = False) -> None:
        path = self._path_ids(sol.terminal)
        assert path is not None and path[0] == self.graph.root_id
        self.current_id = sol.id
        if len(path) == 1:
            # already at an accepting node
            self.graph.set_current_edge(None)
            self.mode = EXECUTING
            self._close_replan_clock()
            return
        if self.graph.aux_id != path[1]:
            self.graph.set_current_edge(path[1])
        self.mode = EXECUTING
        if not quiet:
            self._emit(
                "switch",
                f"solution={sol.id} cost={sol.cost:.3f} "
                f"final={sol.final_region}{' initial' if initial else ''}",
            )
        self._close_replan_clock()

    def _close_replan_clock(self) -> None:
        if self._replan_wall_open is not None:
            self.replan_durations.append(
                time.perf_counter() - self._replan_wall_open
            )
            self._replan_wall_open = None

    def _open_replan_clock(self) -> None:
        if self._replan_wall_open is None:
            self._replan_wall_open = time.perf_counter()

    def _elect(self, at_arrival: bool) -> None:
        """Switch to the best feasible member when the policy allows.

        From a stop the switch is immediate; while driving it happens at
        node arrivals, or mid-edge when the candidate shares the edge
        under execution.
        """
        best = self.library.best_feasible()
        if best is None:
            return
        if self.mode == STOPPED:
            self._install(best)
            self._emit("resume", f"solution={best.id}")
            return
        if self.current_id == best.id:
            if at_arrival:
                self._install(best, quiet=True)
            return
        path = self._path_ids(best.terminal)
        if path is None:
            return
        shares_edge = (
            len(path) > 1
            and self.graph.current_edge is not None
            and path[1] == self.graph.current_edge[1]
        )
        if at_arrival or shares_edge:
            self._install(best)

    def _enter_stopped(self, reason: str) -> None:
        g = self.graph
        if g.current_edge is not None:
            sid = g.split_current_edge(self.index, self.pos, self.q_exec)
            if sid != g.root_id:
                g.reroot(self.index, sid)
            if g.nodes[g.root_id].q != self.q_exec:
                g.force_root_state(self.index, self.q_exec)
            self.library.remap_terminals(g.drain_merge_log())
        g.set_current_edge(None)
        self.current_id = None
        self._last_mask = self.index.mask_at(self.pos)
        self.mode = STOPPED
        self._emit("stop", reason)

    def _current_member(self) -> Solution | None:
        if self.current_id is None:
            return None
        return self.library.members.get(self.current_id)

    def _current_path(self) -> list[int] | None:
        m = self._current_member()
        if m is None:
            return None
        return self._path_ids(m.terminal)

    def _check_done(self) -> bool:
        mask = self.index.mask_at(self.pos)
        nxt = self.dfa.step_mask(self.q_exec, mask)
        if nxt is not None and nxt in self.dfa.accepting:
            self.mode = DONE
            self._emit("done", f"q={self.q_exec}")
            return True
        return False

    def _move(self, dt: float) -> None:
        g = self.graph
        edge = g.current_edge
        if edge is None:
            path = self._current_path()
            if path is not None and len(path) == 1:
                self._check_done()
            return
        rid, aid = edge
        target = g.nodes[aid].x
        remaining = dist(self.pos, target)
        step = self.cfg.v_max * dt
        if step < remaining:
            s = step / remaining
            new_pos = (
                self.pos[0] + s * (target[0] - self.pos[0]),
                self.pos[1] + s * (target[1] - self.pos[1]),
            )
            self._advance_pos(new_pos)
            return
        # arrival at the edge head
        self._advance_pos(target)
        self._emit("arrive", f"node={aid}")
        path = self._current_path()
        terminal = path[-1] if path else None
        g.advance_root(self.index, None)
        if g.nodes[g.root_id].q != self.q_exec:
            # the drive consumed different labels than the plan assumed
            # (region corners at sampling resolution); the robot state wins
            g.force_root_state(self.index, self.q_exec)
            self.library.remap_terminals(g.drain_merge_log())
            self._revalidate_library()
        self.library.remap_terminals(g.drain_merge_log())
        self._refresh_costs()
        if terminal is not None and aid == terminal:
            if self._check_done():
                return
            # labels changed under us; treat like an invalidation
            self._handle_invalidation("terminal no longer accepting")
            return
        cur = self._current_member()
        if cur is None or not cur.feasible:
            self._handle_invalidation("current solution lost")
            return
        self._elect(at_arrival=True)
        if self.mode != EXECUTING:
            return
        path = self._current_path()
        if path is None or len(path) < 2:
            if path is not None and len(path) == 1 and self._check_done():
                return
            self._handle_invalidation("current path vanished")
        elif g.current_edge is None or g.current_edge[1] != path[1]:
            g.set_current_edge(path[1])

    def _advance_pos(self, new_pos: Point) -> None:
        self.travel += dist(self.pos, new_pos)
        self.pos = new_pos
        true_labels = label_of(self.truth, new_pos)
        if not self.executed_labels or self.executed_labels[-1] != true_labels:
            self.executed_labels.append(true_labels)
        mask = self.index.mask_at(new_pos)
        if mask != self._last_mask:
            nxt = self.dfa.step_mask(self.q_exec, mask)
            if nxt is not None:
                self.q_exec = nxt
            else:
                log.warning("executed into a dead transition at %s", new_pos)
            self._last_mask = mask

    # -- knowledge ------------------------------------------------------------

    def _knowledge_obstacle_footprints(self) -> list[Rect | Disc]:
        out: list[Rect | Disc] = []
        for o in self.kb.believed.obstacles:
            if o.kind == "dynamic":
                out.append(o.footprint())
        return out

    def on_region_knowledge(self, k: Knowledge) -> ReplanReport:
        """Tree repair and re-election after a region label change."""
        report = ReplanReport(subject=k.subject)
        self._rebuild_index()
        g = self.graph
        g.dfs_propagate(self.index, g.root_id)
        g.refresh_partitions_and_costs()
        g.dedup_pass(g.root_id)
        g.refresh_partitions_and_costs()
        self.library.remap_terminals(g.drain_merge_log())
        # accepting flags shift with labels; harvest any new solutions
        for nid in list(g.nodes):
            if nid in g.nodes and g.nodes[nid].part != ISOLATED:
                was = g.nodes[nid].accepting
                if g.refresh_accepting(self.index, nid) and not was:
                    sol = self._build_solution(nid)
                    if sol is not None and sol.feasible:
                        self.library.try_add(sol)
        report.invalidated = self._revalidate_library()
        self._after_knowledge(report)
        return report

    def on_obstacle_knowledge(self, k: Knowledge) -> ReplanReport:
        """Edge blocking and re-election after an obstacle update."""
        report = ReplanReport(subject=k.subject)
        self._rebuild_index()
        report.blocked_edges = self.graph.block_obstacle_edges(
            self._knowledge_obstacle_footprints(), self.cfg.block_margin
        )
        report.invalidated = self._revalidate_library()
        cur_blocked = False
        edge = self.graph.current_edge
        if edge is not None:
            cur_blocked = self.graph.nodes[edge[1]].blocked
        if cur_blocked:
            self._handle_invalidation(f"current edge blocked by {k.subject}")
            report.stopped = self.mode == STOPPED
            if self.mode == EXECUTING:
                report.switched_to = self.current_id
            return report
        self._after_knowledge(report)
        return report

    def _after_knowledge(self, report: ReplanReport) -> None:
        cur = self._current_member()
        invalid = self.mode == EXECUTING and (cur is None or not cur.feasible)
        if invalid:
            self._handle_invalidation(f"knowledge {report.subject}")
            report.stopped = self.mode == STOPPED
            if self.mode == EXECUTING:
                report.switched_to = self.current_id
        elif self.mode == STOPPED:
            # still waiting; a new member may have appeared
            self._elect(at_arrival=False)
            report.stopped = self.mode == STOPPED
            if self.mode == EXECUTING:
                report.switched_to = self.current_id

    def _handle_invalidation(self, reason: str) -> None:
        """Current plan lost: stop in place, re-seat the root, re-elect."""
        self._open_replan_clock()
        self._emit("replan", reason)
        self._enter_stopped(reason)
        self._revalidate_library()
        self._elect(at_arrival=False)

    def sense_and_apply(self) -> list[ReplanReport]:
        """One sensing pass against ground truth, then knowledge handlers."""
        reports: list[ReplanReport] = []
        known_ids = {o.id for o in self.kb.believed.obstacles}
        for k in sense(self.truth, self.pos, self.cfg.sense_wh, self.clock):
            if k.kind == "obs" and k.subject not in known_ids:
                template = self.truth.obstacle_by_id(k.subject)
                assert k.pos is not None
                self.kb.adopt_obstacle(template, k.pos)
                known_ids.add(k.subject)
                changed = True
            else:
                changed = self.kb.apply(k)
            if not changed:
                continue
            if k.kind == "reg":
                reports.append(self.on_region_knowledge(k))
            else:
                reports.append(self.on_obstacle_knowledge(k))
        return reports

    # -- forbidden zones --------------------------------------------------------

    def current_forbidden(self) -> set[str]:
        mask = self.index.mask_at(self.pos)
        idxs = ltlf.forbidden_zone_masks(
            self.dfa, self.q_exec, mask,
            [int(m) for m in self.index.label_masks[:-1]],
        )
        return {self.kb.believed.regions[i].id for i in idxs}

    def _forbidden_safety_check(self) -> None:
        ridx = self.index.region_index_at(self.pos)
        if ridx < 0:
            return
        rid = self.kb.believed.regions[ridx].id
        if rid in self.current_forbidden():
            self.forbidden_violations += 1
            log.error("robot inside forbidden zone %s at t=%.2f", rid, self.clock)

    # -- the tick -----------------------------------------------------------------

    def tick(self, dt: float | None = None) -> list[Event]:
        """One simulation step: move, sense, repair, grow, elect."""
        if self.mode == DONE:
            raise RuntimeError("tick after completion")
        dt = self.cfg.dt if dt is None else dt
        mark = len(self.events)
        if self.mode == EXECUTING:
            self._move(dt)
        if self.mode != DONE:
            self.sense_and_apply()
        if self.mode != DONE:
            self.improve_step(self.cfg.budget_per_tick)
            self.graph.rewire_pass(self.index, self.cfg.rewire_budget)
            self.library.remap_terminals(self.graph.drain_merge_log())
            if self.mode == PLANNING:
                best = self.library.best_feasible()
                if best is not None:
                    self._install(best, initial=True)
                    self._check_done()
            elif self.mode == STOPPED:
                self._elect(at_arrival=False)
            self._forbidden_safety_check()
        self.clock += dt
        return self.events[mark:]
