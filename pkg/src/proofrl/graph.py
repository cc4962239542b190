"""AND/OR search graph with transposition interning and status propagation.

States are deduplicated by a 128-bit digest of their canonical payload, so
the same state reached through different method interleavings maps to one
node and the search tree becomes a DAG. Status flags (solved, contradictory,
stuck) propagate upward through parent links; cycle-closing edges are
rejected so the graph stays acyclic.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from enum import Enum


class GraphError(Exception):
    pass


class CycleError(GraphError):
    """Inserting this edge would close a cycle through an ancestor."""


class InvariantError(GraphError):
    """A status transition or bookkeeping rule was violated."""


class NodeStatus(Enum):
    OPEN = "open"
    SOLVED = "solved"
    CONTRADICTORY = "contradictory"
    STUCK = "stuck"

    @property
    def resolved(self) -> bool:
        return self in (NodeStatus.SOLVED, NodeStatus.CONTRADICTORY)


@dataclass(frozen=True)
class ProofMethod:
    """One applicable action at a state.

    ``rank`` is the method's position in the environment's heuristic
    ordering; ranks within one state are a permutation of 0..L-1.
    """

    id: str
    text: str
    rank: int


def state_key(payload: bytes) -> bytes:
    """128-bit digest identifying a canonical state payload."""
    return hashlib.blake2b(payload, digest_size=16).digest()


@dataclass
class EdgeStats:
    """Per-(state, action) statistics.

    ``reward`` is the shaped edge reward (always <= -1 once materialized),
    ``prior`` the blended prior probability, ``visits`` the selection count.
    ``child`` stays None while the edge is unmaterialized.
    """

    method: ProofMethod
    prior: float
    visits: int = 0
    reward: float = 0.0
    child: "OrNode | AndNode | None" = None
    excluded: bool = False
    hard_timeout: bool = False

    @property
    def materialized(self) -> bool:
        return self.child is not None


@dataclass
class OrNode:
    """A state where choosing any one successful action suffices.

    ``value`` is the aggregate backed-up value, ``value_net`` the network's
    initial estimate captured at expansion (1.0 for terminal states).
    """

    uid: int
    key: bytes
    payload: bytes
    methods: list[ProofMethod]
    status: NodeStatus = NodeStatus.OPEN
    value: float = 0.0
    value_net: float | None = None
    visit_total: int = 0
    edges: list[EdgeStats] = field(default_factory=list)
    parents: list[tuple["OrNode | AndNode", int]] = field(default_factory=list)
    expanded: bool = False
    extracted: bool = False
    sentinel: bool = False  # stands in for a zero-child method application

    @property
    def is_and(self) -> bool:
        return False

    @property
    def terminal(self) -> bool:
        return not self.methods and self.status.resolved


@dataclass
class AndNode:
    """A case split: all children must be refuted, or any one solved."""

    uid: int
    children: list[OrNode]
    child_visits: list[int]
    status: NodeStatus = NodeStatus.OPEN
    value: float = 1.0
    visit_total: int = 0
    parents: list[tuple["OrNode | AndNode", int]] = field(default_factory=list)
    extracted: bool = False

    @property
    def is_and(self) -> bool:
        return True


class SearchGraph:
    """Owns the node store, the transposition map, and status propagation.

    A graph belongs to exactly one search worker; mutation is single-writer.
    With ``dedup=False`` every interned payload gets a fresh node (tree
    mode), used to measure what deduplication saves.
    """

    def __init__(self, dedup: bool = True, v_floor: float = -50.0):
        self.dedup = dedup
        self.v_floor = v_floor
        self._by_key: dict[bytes, OrNode] = {}
        self.or_nodes: list[OrNode] = []
        self.and_nodes: list[AndNode] = []
        self.root: OrNode | None = None
        self.intern_calls = 0
        self.shared_hits = 0
        self.expansions = 0
        self._next_uid = 0

    # -- construction ------------------------------------------------------

    def intern_state(
        self,
        payload: bytes,
        methods: list[ProofMethod],
        terminal: NodeStatus | None = None,
        parent: "OrNode | AndNode | None" = None,
    ) -> tuple[OrNode, bool]:
        """Return the node for this payload, creating it if unseen.

        Raises CycleError when the payload maps to an existing node that is
        an ancestor of ``parent`` (the edge would close a cycle).
        """
        self.intern_calls += 1
        key = state_key(payload)
        if self.dedup and key in self._by_key:
            node = self._by_key[key]
            if parent is not None and self._is_ancestor(node, parent):
                self.intern_calls -= 1
                raise CycleError(f"payload already on ancestor path (node {node.uid})")
            self.shared_hits += 1
            return node, False
        node = OrNode(uid=self._take_uid(), key=key, payload=payload, methods=list(methods))
        if terminal is not None:
            if terminal not in (NodeStatus.SOLVED, NodeStatus.CONTRADICTORY):
                raise InvariantError(f"terminal status must be resolved, got {terminal}")
            node.status = terminal
            node.value_net = 1.0
            node.value = 1.0
        if self.dedup:
            self._by_key[key] = node
        self.or_nodes.append(node)
        if self.root is None:
            self.root = node
        return node, True

    def new_and_node(self, children: list[OrNode]) -> AndNode:
        if len(children) < 2:
            raise InvariantError("case split needs at least 2 children")
        node = AndNode(
            uid=self._take_uid(), children=list(children),
            child_visits=[0] * len(children),
        )
        for idx, child in enumerate(children):
            child.parents.append((node, idx))
        return node

    def attach_child(self, parent: OrNode, edge_idx: int, child: "OrNode | AndNode") -> None:
        edge = parent.edges[edge_idx]
        if edge.child is not None:
            raise InvariantError("edge already materialized")
        edge.child = child
        child.parents.append((parent, edge_idx))
        if child.is_and:
            self.and_nodes.append(child)

    def _take_uid(self) -> int:
        uid = self._next_uid
        self._next_uid += 1
        return uid

    def _is_ancestor(self, candidate: OrNode, of: "OrNode | AndNode") -> bool:
        seen = set()
        stack: list[OrNode | AndNode] = [of]
        while stack:
            node = stack.pop()
            if node is candidate:
                return True
            if node.uid in seen:
                continue
            seen.add(node.uid)
            stack.extend(p for p, _ in node.parents)
        return False

    # -- status ------------------------------------------------------------

    def set_status(self, node: "OrNode | AndNode", status: NodeStatus) -> list["OrNode | AndNode"]:
        """Set a non-open status and propagate; returns newly flipped nodes.

        The returned list is in flip order (children before the parents they
        caused to flip), with ``node`` first. Idempotent for the same status;
        conflicting transitions between settled statuses raise.
        """
        if status == NodeStatus.OPEN:
            raise InvariantError("cannot set a node back to open")
        if node.status == status:
            return []
        if node.status != NodeStatus.OPEN:
            raise InvariantError(
                f"node {node.uid}: illegal transition {node.status.value} -> {status.value}"
            )
        flipped: list[OrNode | AndNode] = []
        work: list[tuple[OrNode | AndNode, NodeStatus]] = [(node, status)]
        while work:
            cur, st = work.pop(0)
            if cur.status != NodeStatus.OPEN:
                continue
            cur.status = st
            if st == NodeStatus.STUCK:
                cur.value = self.v_floor
            flipped.append(cur)
            for parent, _slot in cur.parents:
                if parent.status != NodeStatus.OPEN:
                    continue
                derived = self._derived_status(parent)
                if derived is not None:
                    work.append((parent, derived))
        return flipped

    def _derived_status(self, node: "OrNode | AndNode") -> NodeStatus | None:
        """Status forced on an open node by its children, or None."""
        if node.is_and:
            statuses = [c.status for c in node.children]
            if any(s == NodeStatus.SOLVED for s in statuses):
                return NodeStatus.SOLVED
            if all(s == NodeStatus.CONTRADICTORY for s in statuses):
                return NodeStatus.CONTRADICTORY
            # Stuck children can never be refuted, so a full refutation is
            # out of reach once the rest is contradictory.
            if all(s in (NodeStatus.CONTRADICTORY, NodeStatus.STUCK) for s in statuses):
                return NodeStatus.STUCK
            return None
        for edge in node.edges:
            if edge.excluded or edge.child is None:
                continue
            if edge.child.status == NodeStatus.SOLVED:
                return NodeStatus.SOLVED
            if edge.child.status == NodeStatus.CONTRADICTORY:
                return NodeStatus.CONTRADICTORY
        if node.edges and all(
            e.excluded or (e.child is not None and e.child.status == NodeStatus.STUCK)
            for e in node.edges
        ):
            return NodeStatus.STUCK
        return None

    def refresh_status(self, node: "OrNode | AndNode") -> list["OrNode | AndNode"]:
        """Apply any status forced by current children (used after exclusions)."""
        if node.status != NodeStatus.OPEN:
            return []
        derived = self._derived_status(node)
        if derived is None:
            return []
        return self.set_status(node, derived)

    # -- reporting ---------------------------------------------------------

    def shared_fraction(self) -> float:
        """Fraction of intern calls that hit an existing node."""
        if self.intern_calls == 0:
            raise InvariantError("no intern calls yet")
        return self.shared_hits / self.intern_calls

    def topological_order(self) -> list["OrNode | AndNode"]:
        """All nodes, parents before children; raises InvariantError on a cycle."""
        order: list[OrNode | AndNode] = []
        marks: dict[int, int] = {}
        all_nodes: list[OrNode | AndNode] = [*self.or_nodes, *self.and_nodes]

        def children_of(node):
            if node.is_and:
                return list(node.children)
            return [e.child for e in node.edges if e.child is not None]

        def visit(node, stack):
            state = marks.get(node.uid, 0)
            if state == 1:
                raise InvariantError("cycle detected in search graph")
            if state == 2:
                return
            marks[node.uid] = 1
            for child in children_of(node):
                visit(child, stack)
            marks[node.uid] = 2
            order.append(node)

        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, 10000 + 4 * len(all_nodes)))
        try:
            for node in all_nodes:
                visit(node, [])
        finally:
            sys.setrecursionlimit(old_limit)
        order.reverse()
        return order

    def to_json(self) -> dict:
        """Dump nodes, edges, and counters (schema in README)."""
        nodes = []
        for n in self.or_nodes:
            nodes.append({
                "uid": n.uid,
                "kind": "or",
                "status": n.status.value,
                "value": n.value,
                "value_net": n.value_net,
                "visit_total": n.visit_total,
                "n_methods": len(n.methods),
                "expanded": n.expanded,
            })
        for n in self.and_nodes:
            nodes.append({
                "uid": n.uid,
                "kind": "and",
                "status": n.status.value,
                "value": n.value,
                "visit_total": n.visit_total,
                "children": [c.uid for c in n.children],
                "child_visits": list(n.child_visits),
            })
        edges = []
        for n in self.or_nodes:
            for i, e in enumerate(n.edges):
                edges.append({
                    "parent": n.uid,
                    "slot": i,
                    "method": e.method.id,
                    "visits": e.visits,
                    "reward": e.reward if e.materialized else None,
                    "prior": e.prior,
                    "child": e.child.uid if e.child is not None else None,
                    "excluded": e.excluded,
                    "hard_timeout": e.hard_timeout,
                })
        return {
            "root": self.root.uid if self.root is not None else None,
            "dedup": self.dedup,
            "intern_calls": self.intern_calls,
            "shared_hits": self.shared_hits,
            "expansions": self.expansions,
            "nodes": nodes,
            "edges": edges,
        }

    def dump_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
