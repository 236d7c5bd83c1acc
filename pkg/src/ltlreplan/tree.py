"""Dual-root search tree over hybrid (automaton state, position) nodes.

The graph holds the search tree plus a pool of isolated vertices that can
be adopted later by rewiring. Edges are validated by running the pruned
automaton over the event-driven label trace of the segment; a run must
avoid the dead set and end exactly at the child's automaton state.

During execution the root advances along the path being driven, the head
of the edge under execution acts as an auxiliary root with zero
cost-to-come (future costs retrace to it), and the repair operations
``propagate_state`` and ``merge_node`` keep reversed edges consistent and
deduplicate hybrid states.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import Disc, Point, Rect, dist, seg_disc_distance, seg_rect_distance
from .ltlf import Dfa
from .workspace import WorkspaceIndex, region_id_trace

INF = math.inf

# partition tags
PAST = "past"
CURRENT_EDGE = "current"
FUTURE = "future"
ISOLATED = "isolated"

DEFAULT_ETA = 0.5  # m, steering step (v_max * dt_plan)
DEFAULT_GAMMA = 4.0
DEFAULT_ETA_MAX = 1.0  # m, cap on the near radius
COST_EPS = 1e-9


class TreeError(Exception):
    pass


class SamplingBudgetError(TreeError):
    pass


def steer(x_from: Point, x_rand: Point, eta: float) -> Point:
    """Move from x_from toward x_rand by at most eta."""
    dx = x_rand[0] - x_from[0]
    dy = x_rand[1] - x_from[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        raise TreeError("steer: zero-length direction")
    if d <= eta:
        return x_rand
    s = eta / d
    return (x_from[0] + s * dx, x_from[1] + s * dy)


def near_radius(n_tree: int, gamma: float = DEFAULT_GAMMA,
                eta_max: float = DEFAULT_ETA_MAX) -> float:
    """Shrinking neighbor radius, capped at eta_max."""
    if n_tree <= 0:
        return eta_max
    val = gamma * math.sqrt(math.log(n_tree + 1) / (n_tree + 1))
    return min(val, eta_max)


class Node:
    __slots__ = (
        "id", "q", "x", "cost", "parent", "pweight", "blocked",
        "children", "part", "visited", "accepting",
    )

    def __init__(self, nid: int, q: int, x: Point):
        self.id = nid
        self.q = q
        self.x = x
        self.cost = INF
        self.parent: int | None = None
        self.pweight = 0.0  # Euclidean length of the parent edge
        self.blocked = False  # parent edge weight forced to +inf
        self.children: set[int] = set()
        self.part = ISOLATED
        self.visited = False
        self.accepting = False

    @property
    def eff_weight(self) -> float:
        return INF if self.blocked else self.pweight

    def __repr__(self):
        return f"Node({self.id}, q={self.q}, x={self.x}, cost={self.cost}, {self.part})"


@dataclass
class ExtendReport:
    rejected: bool = False
    added: list[int] = field(default_factory=list)
    isolated: list[int] = field(default_factory=list)
    adopted: list[int] = field(default_factory=list)
    solutions: list[int] = field(default_factory=list)


@dataclass
class MergeResult:
    removed_iso: int = 0
    merged: bool = False
    better: int | None = None
    worse: int | None = None

    def __bool__(self) -> bool:  # Alg. 2 always reports success
        return True


class PlanGraph:
    """Search tree plus isolated vertices, with repair operations."""

    def __init__(self, dfa: Dfa, root_q: int, root_x: Point,
                 eta: float = DEFAULT_ETA, gamma: float = DEFAULT_GAMMA,
                 eta_max: float = DEFAULT_ETA_MAX):
        if not dfa.pruned:
            raise TreeError("PlanGraph needs a preprocessed automaton")
        if root_q in dfa.bad:
            raise TreeError("root automaton state is a dead state")
        self.dfa = dfa
        self.eta = eta
        self.gamma = gamma
        self.eta_max = eta_max
        self.nodes: dict[int, Node] = {}
        self.records: dict[Point, set[int]] = {}
        self.v_iso: set[int] = set()
        self._next_id = 0
        cap = 1024
        self._xs = np.zeros(cap)
        self._ys = np.zeros(cap)
        self._alive = np.zeros(cap, dtype=bool)
        self._in_tree = np.zeros(cap, dtype=bool)
        self.n_tree = 0
        self.root_id: int | None = None
        self.aux_id: int | None = None
        self._rid_traces: dict[tuple[int, int], tuple[int, ...]] = {}
        self._rewire_queue: deque[int] = deque()
        # (removed id, surviving id) pairs from merges, for observers that
        # hold node references (e.g. solution terminals)
        self.merge_log: list[tuple[int, int]] = []
        root = self._new_node(root_q, root_x)
        root.cost = 0.0
        root.part = PAST
        self._set_tree_flag(root.id, True)
        self.root_id = root.id

    # -- bookkeeping ------------------------------------------------------

    def _grow(self, need: int) -> None:
        cap = len(self._xs)
        if need < cap:
            return
        new_cap = max(need + 1, cap * 2)
        for name in ("_xs", "_ys", "_alive", "_in_tree"):
            old = getattr(self, name)
            arr = np.zeros(new_cap, dtype=old.dtype)
            arr[:cap] = old
            setattr(self, name, arr)

    def _new_node(self, q: int, x: Point) -> Node:
        nid = self._next_id
        self._next_id += 1
        self._grow(nid)
        node = Node(nid, q, x)
        self.nodes[nid] = node
        self._xs[nid] = x[0]
        self._ys[nid] = x[1]
        self._alive[nid] = True
        self.records.setdefault(x, set()).add(nid)
        return node

    def _set_tree_flag(self, nid: int, in_tree: bool) -> None:
        if bool(self._in_tree[nid]) == in_tree:
            return
        self._in_tree[nid] = in_tree
        self.n_tree += 1 if in_tree else -1

    def _delete_node(self, nid: int) -> None:
        node = self.nodes.pop(nid)
        self._alive[nid] = False
        self._set_tree_flag(nid, False)
        members = self.records.get(node.x)
        if members is not None:
            members.discard(nid)
            if not members:
                del self.records[node.x]
        self.v_iso.discard(nid)

    def same_state_nodes(self, nid: int) -> list[int]:
        """Other graph nodes sharing this node's hybrid state."""
        node = self.nodes[nid]
        return sorted(
            other
            for other in self.records.get(node.x, ())
            if other != nid and self.nodes[other].q == node.q
        )

    def has_state(self, q: int, x: Point) -> bool:
        return any(self.nodes[i].q == q for i in self.records.get(x, ()))

    def tree_node_ids(self) -> list[int]:
        return [i for i, n in self.nodes.items() if n.part != ISOLATED]

    # -- geometry-backed edge semantics ------------------------------------

    def _rid_trace(self, index: WorkspaceIndex, a_id: int, b_id: int) -> tuple[int, ...]:
        key = (a_id, b_id) if a_id < b_id else (b_id, a_id)
        tr = self._rid_traces.get(key)
        if tr is None:
            na, nb = self.nodes[key[0]], self.nodes[key[1]]
            tr = region_id_trace(index.ws, na.x, nb.x)
            self._rid_traces[key] = tr
        return tr if a_id < b_id else tr[::-1]

    def edge_run(self, index: WorkspaceIndex, q_from: int,
                 a_id: int, b_id: int) -> int | None:
        """Pruned run over the edge's event trace; None when it dies."""
        events = index.masks_for_trace(self._rid_trace(index, a_id, b_id))
        q: int | None = q_from
        pruned = self.dfa.delta_pruned
        assert pruned is not None
        for m in events:
            q = pruned[q][m]
            if q is None:
                return None
        return q

    def run_over_segment(self, index: WorkspaceIndex, q_from: int,
                         a: Point, b: Point) -> int | None:
        events = index.masks_for_trace(region_id_trace(index.ws, a, b))
        q: int | None = q_from
        pruned = self.dfa.delta_pruned
        assert pruned is not None
        for m in events:
            q = pruned[q][m]
            if q is None:
                return None
        return q

    def refresh_accepting(self, index: WorkspaceIndex, nid: int) -> bool:
        node = self.nodes[nid]
        nxt = self.dfa.step_mask(node.q, index.mask_at(node.x))
        node.accepting = nxt is not None and nxt in self.dfa.accepting
        return node.accepting

    # -- sampling and neighborhood -----------------------------------------

    def sample_free(self, index: WorkspaceIndex, rng: np.random.Generator,
                    budget: int = 1000) -> Point:
        b = index.ws.bounds
        for _ in range(budget):
            x = (
                float(rng.uniform(b.x0, b.x1)),
                float(rng.uniform(b.y0, b.y1)),
            )
            if index.point_free(x):
                return x
        raise SamplingBudgetError(f"no free sample found in {budget} draws")

    def nearest(self, x: Point) -> int:
        if self.n_tree == 0:
            raise TreeError("tree is empty")
        n = self._next_id
        mask = self._in_tree[:n]
        d2 = (self._xs[:n] - x[0]) ** 2 + (self._ys[:n] - x[1]) ** 2
        d2[~mask] = INF
        return int(np.argmin(d2))  # first minimum = lowest id

    def near_set(self, x: Point, radius: float | None = None) -> list[int]:
        """Tree and isolated nodes within the shrinking radius of x."""
        if radius is None:
            radius = near_radius(self.n_tree, self.gamma, self.eta_max)
        n = self._next_id
        mask = self._alive[:n]
        d2 = (self._xs[:n] - x[0]) ** 2 + (self._ys[:n] - x[1]) ** 2
        hit = mask & (d2 <= radius * radius)
        return [int(i) for i in np.nonzero(hit)[0]]

    # -- growth -------------------------------------------------------------

    def extend(self, index: WorkspaceIndex, x_rand: Point) -> ExtendReport:
        """One sampling-tree extension around a drawn point.

        Steers from the nearest tree node, instantiates the sampled point
        once per live automaton state, connects whichever states admit a
        valid parent, parks the rest as isolated vertices, rewires, and
        reports any nodes that reach acceptance one hop away.
        """
        report = ExtendReport()
        near_id = self.nearest(x_rand)
        x_near = self.nodes[near_id].x
        if x_rand == x_near:
            report.rejected = True
            return report
        x_new = steer(x_near, x_rand, self.eta)
        if not index.point_free(x_new) or not index.segment_clear(x_near, x_new):
            report.rejected = True
            return report

        d_near = dist(x_near, x_new)
        radius = max(
            near_radius(self.n_tree, self.gamma, self.eta_max), d_near + 1e-9
        )
        near_ids = self.near_set(x_new, radius)
        tree_cands = sorted(
            (self.nodes[i].cost, i)
            for i in near_ids
            if self.nodes[i].part != ISOLATED
        )

        rid_cache: dict[int, tuple[int, ...]] = {}  # candidate -> rid trace to x_new

        def events_for(cid: int) -> tuple[int, ...]:
            tr = rid_cache.get(cid)
            if tr is None:
                tr = region_id_trace(index.ws, self.nodes[cid].x, x_new)
                rid_cache[cid] = tr
            return index.masks_for_trace(tr)

        pruned = self.dfa.delta_pruned
        assert pruned is not None
        run_cache: dict[tuple[int, int], int | None] = {}

        def run_from(cid: int) -> int | None:
            q: int | None = self.nodes[cid].q
            key = (cid, q)
            if key in run_cache:
                return run_cache[key]
            for m in events_for(cid):
                q = pruned[q][m]
                if q is None:
                    break
            run_cache[key] = q
            return q

        clear_cache: dict[int, bool] = {}

        def seg_clear(cid: int) -> bool:
            v = clear_cache.get(cid)
            if v is None:
                cx = self.nodes[cid].x
                v = index.segment_clear(cx, x_new) and index.segment_stable(
                    cx, x_new
                )
                clear_cache[cid] = v
            return v

        created: list[int] = []
        for q in self.dfa.live_states():
            if self.has_state(q, x_new):
                continue
            best: int | None = None
            for cost, cid in tree_cands:
                if cost == INF:
                    break
                if run_from(cid) == q and seg_clear(cid):
                    best = cid
                    break
            node = self._new_node(q, x_new)
            created.append(node.id)
            if best is not None:
                self._attach(node.id, best, dist(self.nodes[best].x, x_new))
                report.added.append(node.id)
            else:
                node.part = ISOLATED
                self.v_iso.add(node.id)
                report.isolated.append(node.id)

        # created node ids are the largest in the graph, so (cid, nid) is
        # already the canonical orientation for the trace cache
        for cid, tr in rid_cache.items():
            for nid in created:
                self._rid_traces[(cid, nid)] = tr

        rewire_pool = near_ids + created
        for nid in report.added:
            adopted = self.rewire(index, nid, rewire_pool)
            report.adopted.extend(adopted)

        for nid in report.added + report.adopted:
            if self.refresh_accepting(index, nid):
                report.solutions.append(nid)
        return report

    def _attach(self, cid: int, pid: int, w: float) -> None:
        child, parent = self.nodes[cid], self.nodes[pid]
        child.parent = pid
        child.pweight = w
        child.blocked = False
        parent.children.add(cid)
        child.part = FUTURE if parent.part == FUTURE else PAST
        child.cost = parent.cost + child.eff_weight
        self._set_tree_flag(cid, True)
        self.v_iso.discard(cid)

    def _detach_edge(self, cid: int) -> None:
        child = self.nodes[cid]
        if child.parent is not None:
            self.nodes[child.parent].children.discard(cid)
        child.parent = None

    def _side(self, nid: int) -> str:
        part = self.nodes[nid].part
        return FUTURE if part == FUTURE else PAST

    def rewire(self, index: WorkspaceIndex, nid: int,
               near: list[int] | None = None) -> list[int]:
        """Re-parent near nodes through nid when that strictly cheapens them.

        Isolated vertices joining the tree this way are returned. Future
        nodes are never pulled across to the past side (and vice versa);
        the structural roots are never re-parented.
        """
        node = self.nodes[nid]
        if node.part == ISOLATED or node.cost == INF:
            return []
        if near is None:
            near = self.near_set(node.x)
        adopted: list[int] = []
        for cid in near:
            if cid == nid or cid not in self.nodes:
                continue
            if cid == self.root_id or cid == self.aux_id:
                continue
            cand = self.nodes[cid]
            if cand.part != ISOLATED and self._side(cid) != self._side(nid):
                continue
            w = dist(node.x, cand.x)
            new_cost = node.cost + w
            if not new_cost < cand.cost - COST_EPS:
                continue
            if self.edge_run(index, node.q, nid, cid) != cand.q:
                continue
            if not index.segment_clear(node.x, cand.x):
                continue
            if not index.segment_stable(node.x, cand.x):
                continue
            was_isolated = cand.part == ISOLATED
            self._detach_edge(cid)
            self._attach(cid, nid, w)
            self._recost_subtree(cid)
            if was_isolated:
                adopted.append(cid)
        return adopted

    def _recost_subtree(self, nid: int) -> None:
        stack = [nid]
        while stack:
            cur = stack.pop()
            node = self.nodes[cur]
            parent = self.nodes[node.parent] if node.parent is not None else None
            if parent is not None:
                node.cost = parent.cost + node.eff_weight
                node.part = FUTURE if parent.part == FUTURE else (
                    node.part if cur in (self.root_id, self.aux_id) else PAST
                )
                if cur == self.aux_id:
                    node.cost = 0.0
                    node.part = FUTURE
            stack.extend(node.children)

    # -- Algorithm 1: propagate an automaton state across one edge ----------

    def propagate_state(self, index: WorkspaceIndex, pid: int, cid: int) -> bool:
        """Re-validate the parent->child transition, repairing the child.

        Returns False when no live successor is consistent with the edge
        labels; the caller is expected to detach the child's subtree.
        """
        parent, child = self.nodes[pid], self.nodes[cid]
        run = self.edge_run(index, parent.q, pid, cid)
        if run == child.q:
            return True
        if run is None:
            return False
        if not self.same_state_nodes(cid):
            # keep the old hybrid state alive as an isolated vertex
            copy = self._new_node(child.q, child.x)
            copy.part = ISOLATED
            copy.cost = INF
            self.v_iso.add(copy.id)
        child.q = run
        return True

    def dfs_propagate(self, index: WorkspaceIndex, start: int,
                      skip: int | None = None) -> list[int]:
        """Depth-first propagate_state below start; detaches dead subtrees.

        Returns ids of nodes demoted to (or deleted from) the tree.
        """
        detached: list[int] = []
        stack = [start]
        while stack:
            pid = stack.pop()
            if pid not in self.nodes:
                continue
            for cid in sorted(self.nodes[pid].children):
                if cid == skip:
                    continue
                if self.propagate_state(index, pid, cid):
                    stack.append(cid)
                else:
                    detached.extend(self._demote_subtree(cid))
        return detached

    def _demote_subtree(self, cid: int) -> list[int]:
        """Detach a subtree; keep each state adoptable as isolated."""
        self._detach_edge(cid)
        out: list[int] = []
        stack = [cid]
        while stack:
            cur = stack.pop()
            node = self.nodes[cur]
            stack.extend(node.children)
            node.children.clear()
            node.parent = None
            out.append(cur)
            same = self.same_state_nodes(cur)
            if same:
                self.merge_log.append((cur, same[0]))
                self._delete_node(cur)  # state survives elsewhere
            else:
                node.part = ISOLATED
                node.cost = INF
                node.blocked = False
                self._set_tree_flag(cur, False)
                self.v_iso.add(cur)
        return out

    # -- Algorithm 2: merge duplicated hybrid states ------------------------

    def merge_node(self, mid: int) -> MergeResult:
        """Remove duplicates of a tree node's hybrid state.

        Isolated duplicates are deleted permanently. Of a remaining tree
        duplicate, the parent (or the cheaper node) survives; the loser's
        children are re-hung under the survivor and the loser is deleted.
        """
        res = MergeResult()
        node = self.nodes[mid]
        dups = self.same_state_nodes(mid)
        iso_dups = [d for d in dups if self.nodes[d].part == ISOLATED]
        for d in iso_dups:
            self._delete_node(d)
            res.removed_iso += 1
        tree_dups = [d for d in dups if d not in iso_dups]
        if not tree_dups:
            return res
        sd = tree_dups[0]
        protected = (self.root_id, self.aux_id)
        if mid in protected:
            better, worse = mid, sd
        elif sd in protected:
            better, worse = sd, mid
        elif self.nodes[mid].parent == sd or (
            self.nodes[sd].cost <= node.cost
        ):
            better, worse = sd, mid
        else:
            better, worse = mid, sd
        self.nodes[better].visited = True
        self.nodes[worse].visited = True
        worse_node = self.nodes[worse]
        better_node = self.nodes[better]
        for ch in sorted(worse_node.children):
            child = self.nodes[ch]
            child.parent = better
            better_node.children.add(ch)
            # same continuous position, so the edge weight is unchanged
        worse_node.children.clear()
        self._detach_edge(worse)
        self._delete_node(worse)
        for ch in sorted(better_node.children):
            self._recost_subtree(ch)
        self.merge_log.append((worse, better))
        res.merged = True
        res.better = better
        res.worse = worse
        return res

    def drain_merge_log(self) -> list[tuple[int, int]]:
        out = self.merge_log
        self.merge_log = []
        return out

    def dedup_pass(self, start: int | None = None,
                   skip: int | None = None) -> int:
        """Preorder merge over the subtree under start; returns merges."""
        if start is None:
            start = self.root_id
        if start is None or start not in self.nodes:
            return 0
        for n in self.nodes.values():
            n.visited = False
        merged = 0
        stack = [start]
        while stack:
            nid = stack.pop()
            if nid == skip or nid not in self.nodes:
                continue
            node = self.nodes[nid]
            better_children: list[int] = []
            if not node.visited:
                res = self.merge_node(nid)
                if res.merged:
                    merged += 1
                    if res.worse == nid and res.better is not None:
                        better_children = sorted(self.nodes[res.better].children)
                node.visited = True
            if nid in self.nodes:
                stack.extend(sorted(self.nodes[nid].children))
            else:
                stack.extend(better_children)
        return merged

    # -- dual-root maintenance ----------------------------------------------

    @property
    def current_edge(self) -> tuple[int, int] | None:
        if self.root_id is None or self.aux_id is None:
            return None
        return (self.root_id, self.aux_id)

    def set_current_edge(self, target_id: int | None) -> None:
        """Install the edge root->target as the edge under execution."""
        if target_id is not None:
            if self.nodes[target_id].parent != self.root_id:
                raise TreeError("current edge target must be a child of the root")
        self.aux_id = target_id
        self.refresh_partitions_and_costs()

    def refresh_partitions_and_costs(self) -> None:
        """Re-derive partition tags and dual-base costs from the structure."""
        root = self.root_id
        if root is None:
            return
        rn = self.nodes[root]
        rn.cost = 0.0
        rn.part = CURRENT_EDGE if self.aux_id is not None else PAST
        stack = [root]
        while stack:
            pid = stack.pop()
            pnode = self.nodes[pid]
            for cid in pnode.children:
                cnode = self.nodes[cid]
                if cid == self.aux_id and pid == root:
                    cnode.cost = 0.0
                    cnode.part = FUTURE
                else:
                    cnode.cost = pnode.cost + cnode.eff_weight
                    cnode.part = FUTURE if pnode.part == FUTURE else PAST
                stack.append(cid)

    def _reverse_edge(self, cid: int) -> None:
        """Turn cid's parent edge around, preserving its length."""
        child = self.nodes[cid]
        pid = child.parent
        if pid is None:
            raise TreeError("cannot reverse an edge above a root")
        parent = self.nodes[pid]
        w, blocked = child.pweight, child.blocked
        parent.children.discard(cid)
        child.parent = None
        parent.parent = cid
        parent.pweight = w
        parent.blocked = blocked
        child.children.add(pid)

    def advance_root(self, index: WorkspaceIndex,
                     next_target: int | None) -> None:
        """Arrival at the head of the executed edge: move the root there.

        The executed edge is reversed, the arrival node becomes the root,
        the next path node (if any) becomes the auxiliary root, past-side
        states are re-propagated depth-first and deduplicated, and one
        bounded rewire pass runs from the new root.
        """
        if self.aux_id is None:
            raise TreeError("advance_root: no edge is being executed")
        old_root = self.root_id
        arrived = self.aux_id
        assert old_root is not None
        self._reverse_edge(arrived)
        self.root_id = arrived
        if next_target is not None:
            if self.nodes[next_target].parent != arrived:
                raise TreeError("next target is not a child of the new root")
            self.aux_id = next_target
        else:
            self.aux_id = None
        self.refresh_partitions_and_costs()
        self.dfs_propagate(index, self.root_id, skip=self.aux_id)
        self.refresh_partitions_and_costs()
        self.dedup_pass(self.root_id, skip=self.aux_id)
        self.refresh_partitions_and_costs()
        self.rewire_pass(index)

    def force_root_state(self, index: WorkspaceIndex, q: int) -> None:
        """Overwrite the root's automaton state (robot state is authoritative)
        and re-propagate the whole tree from it."""
        root = self.nodes[self.root_id]
        if root.q == q:
            return
        if q in self.dfa.bad:
            raise TreeError("cannot root at a dead automaton state")
        root.q = q
        self.dfs_propagate(index, self.root_id, skip=self.aux_id)
        self.refresh_partitions_and_costs()
        self.dedup_pass(self.root_id, skip=self.aux_id)
        self.refresh_partitions_and_costs()

    def reroot(self, index: WorkspaceIndex, new_root: int) -> None:
        """Make an arbitrary tree node the root (reversing its root path)."""
        if self.nodes[new_root].part == ISOLATED:
            raise TreeError("cannot root at an isolated vertex")
        chain: list[int] = []
        cur: int | None = new_root
        while cur is not None and cur != self.root_id:
            chain.append(cur)
            cur = self.nodes[cur].parent
        if cur is None:
            raise TreeError("new root is not connected to the current root")
        for nid in chain:
            self._reverse_edge(nid)
        self.root_id = new_root
        self.aux_id = None
        self.refresh_partitions_and_costs()
        self.dfs_propagate(index, new_root)
        self.refresh_partitions_and_costs()
        self.dedup_pass(new_root)
        self.refresh_partitions_and_costs()

    def split_current_edge(self, index: WorkspaceIndex, pos: Point,
                           q_at: int | None = None) -> int:
        """Insert a node at pos on the edge under execution; returns its id.

        Snaps to an endpoint when pos coincides with one. The new node's
        automaton state is the carried-forward execution state when given,
        else the run of the sub-segment from the root.
        """
        edge = self.current_edge
        if edge is None:
            raise TreeError("no current edge to split")
        rid, aid = edge
        root, aux = self.nodes[rid], self.nodes[aid]
        if pos == root.x:
            return rid
        if pos == aux.x:
            return aid
        if q_at is None:
            q_at = self.run_over_segment(index, root.q, root.x, pos)
        if q_at is None or q_at in self.dfa.bad:
            raise TreeError("split point is not reachable from the root state")
        node = self._new_node(q_at, pos)
        self._detach_edge(aid)
        self._attach(node.id, rid, dist(root.x, pos))
        aux.parent = node.id
        aux.pweight = dist(pos, aux.x)
        node.children.add(aid)
        # the executed edge is gone; the caller re-seats the root here
        self.aux_id = None
        self.refresh_partitions_and_costs()
        return node.id

    def rewire_pass(self, index: WorkspaceIndex, budget: int = 64) -> int:
        """Budgeted breadth-first rewire from the root over the past side.

        The traversal cursor persists across calls and restarts at the
        root once exhausted, so repeated calls sweep the whole past side.
        """
        if self.root_id is None:
            return 0
        if not self._rewire_queue:
            self._rewire_queue.append(self.root_id)
        processed = 0
        improved = 0
        while self._rewire_queue and processed < budget:
            nid = self._rewire_queue.popleft()
            if nid not in self.nodes:
                continue
            node = self.nodes[nid]
            if node.part == FUTURE or node.part == ISOLATED:
                continue
            improved += len(self.rewire(index, nid))
            processed += 1
            self._rewire_queue.extend(
                c for c in sorted(node.children) if c != self.aux_id
            )
        return improved

    # -- obstacle blocking ----------------------------------------------------

    def block_obstacle_edges(self, footprints: list[Rect | Disc],
                             margin: float) -> int:
        """Force +inf weights onto tree edges crossing any footprint.

        Every tree edge is re-evaluated, so edges no longer touching any
        footprint revert to their Euclidean weight. Returns the number of
        newly blocked edges.
        """
        newly = 0
        changed = False
        for node in self.nodes.values():
            if node.parent is None or node.part == ISOLATED:
                continue
            a = self.nodes[node.parent].x
            b = node.x
            hit = False
            for fp in footprints:
                if isinstance(fp, Rect):
                    if seg_rect_distance(a, b, fp) < margin:
                        hit = True
                        break
                else:
                    if seg_disc_distance(a, b, fp) < margin:
                        hit = True
                        break
            if hit != node.blocked:
                node.blocked = hit
                changed = True
                if hit:
                    newly += 1
        if changed:
            self.refresh_partitions_and_costs()
        return newly

    # -- diagnostics ----------------------------------------------------------

    def dump(self) -> str:
        """Line-oriented debug dump of nodes and edges."""
        lines = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            lines.append(
                f"node {nid} q={n.q} x={n.x[0]:.6f},{n.x[1]:.6f} "
                f"cost={n.cost:.6f} part={n.part}"
            )
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            if n.parent is not None:
                w = "inf" if n.blocked else f"{n.pweight:.6f}"
                lines.append(f"edge {n.parent} {nid} w={w}")
        return "\n".join(lines) + "\n"

    def scan_invariants(self, index: WorkspaceIndex,
                        expect_deduped: bool = False) -> list[str]:
        """Full structural scan; returns human-readable violations."""
        bad: list[str] = []
        for nid, n in self.nodes.items():
            if n.q in self.dfa.bad:
                bad.append(f"node {nid} carries dead automaton state {n.q}")
            if nid not in self.records.get(n.x, ()):
                bad.append(f"node {nid} missing from its record set")
            if n.part == ISOLATED:
                if n.parent is not None or n.children:
                    bad.append(f"isolated node {nid} has tree links")
                continue
            if n.parent is None:
                if nid != self.root_id:
                    bad.append(f"parentless non-root tree node {nid}")
                continue
            p = self.nodes[n.parent]
            if nid == self.aux_id and n.parent == self.root_id:
                if n.cost != 0.0:
                    bad.append(f"auxiliary root {nid} has nonzero cost")
            else:
                want = p.cost + n.eff_weight
                if want == INF:
                    ok = n.cost == INF
                else:
                    ok = abs(n.cost - want) <= 1e-9
                if not ok:
                    bad.append(
                        f"cost mismatch at {nid}: {n.cost} vs parent {want}"
                    )
            if p.part == FUTURE and n.part != FUTURE:
                bad.append(f"future parent {n.parent} has non-future child {nid}")
            if not n.blocked:
                run = self.edge_run(index, p.q, n.parent, nid)
                if run != n.q:
                    bad.append(
                        f"edge {n.parent}->{nid} run ends at {run}, node has {n.q}"
                    )
        if expect_deduped:
            seen: dict[tuple[int, Point], int] = {}
            for nid, n in self.nodes.items():
                if n.part == ISOLATED:
                    continue
                key = (n.q, n.x)
                if key in seen:
                    bad.append(f"duplicate tree state {key}: {seen[key]} and {nid}")
                seen[key] = nid
        return bad
