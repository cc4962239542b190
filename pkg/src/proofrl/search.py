"""Monte Carlo graph search: selection, expansion, backup, extraction.

One search iteration descends from the root by PUCT scores, expands the
first unexpanded state it reaches (querying the evaluator once and eagerly
applying the top-N methods), backs values and visit counts up the traversed
path, and emits training examples whenever a node becomes resolved.
Unmaterialized edges are applied lazily on first selection; those calls
belong to the selection phase and do not consume expansion budget.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .env.core import EnvError, EnvTimeout, ProofNode, ProverEnv
from .graph import (
    AndNode,
    CycleError,
    EdgeStats,
    InvariantError,
    NodeStatus,
    OrNode,
    SearchGraph,
)
from .replay import TrainingExample
from .reward import EdgeKind, RewardParams, branching_penalty, edge_reward, soft_time_penalty

SELECTION_RULES = ("exp_discount_puct", "classic_puct")


class SearchError(Exception):
    pass


class ProofValidationError(SearchError):
    """The environment rejected an extracted proof tree (engine bug signal)."""


@dataclass(frozen=True)
class SearchHyperparams:
    gamma: float = 0.97
    c_base: float = 19652.0
    c_init: float = 1.25
    c_and: float = 1.0
    delta: float = 0.05          # pessimistic value penalty for unvisited actions
    top_n: int = 2               # eagerly materialized methods per expansion
    call_timeout: float = 5.0
    retry_timeout: float = 10.0
    selection_rule: str = "exp_discount_puct"
    classic_c: float = 1.25
    exponent_clamp: float = 60.0
    v_floor: float = -50.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.retry_timeout < self.call_timeout:
            raise ValueError("retry_timeout must be >= call_timeout")
        if self.selection_rule not in SELECTION_RULES:
            raise ValueError(f"selection_rule must be one of {SELECTION_RULES}")
        if self.c_base <= 0 or self.c_init < 0 or self.c_and < 0 or self.delta < 0:
            raise ValueError("c_base must be positive; c_init, c_and, delta nonnegative")


@dataclass
class SearchResult:
    status: NodeStatus
    proof: ProofNode | None
    proof_size: int | None
    expansions: int
    examples: list[TrainingExample]
    shared_fraction: float
    wall_clock: float
    validated: bool | None = None

    def to_json(self) -> dict:
        return {
            "status": self.status.value,
            "expansions": self.expansions,
            "proof_size": self.proof_size,
            "examples": len(self.examples),
            "shared_fraction": self.shared_fraction,
            "wall_clock": self.wall_clock,
            "validated": self.validated,
        }


# ---------------------------------------------------------------------------
# score contracts (scalar forms; the kernels vectorize the same math)


def exploration_coefficient(visit_total: int, n_edge: int, params: SearchHyperparams) -> float:
    """[ln((N + c_base + 1)/c_base) + c_init] * sqrt(N) / (n_edge + 1)."""
    if visit_total < 0 or n_edge < 0:
        raise ValueError("counts must be nonnegative")
    log_term = math.log((visit_total + params.c_base + 1.0) / params.c_base) + params.c_init
    return log_term * math.sqrt(visit_total) / (n_edge + 1.0)


def _clamped_pow(gamma: float, value: float, clamp: float) -> float:
    e = min(max(-1.0 - value, -clamp), clamp)
    return gamma ** e


def puct_or_score(
    v_edge: float, prior: float, coeff: float, gamma: float, exponent_clamp: float = 60.0
) -> float:
    """Discounted value score plus prior-weighted exploration."""
    return _clamped_pow(gamma, v_edge, exponent_clamp) + coeff * prior


def puct_and_score(
    v_child: float,
    coeff: float,
    c_and: float,
    arity: int,
    gamma: float,
    exponent_clamp: float = 60.0,
) -> float:
    """Case-split child score: value not inverted, uniform 1/arity prior."""
    if arity < 2:
        raise ValueError("case splits have arity >= 2")
    return _clamped_pow(gamma, v_child, exponent_clamp) + c_and * coeff / arity


def classic_puct_score(
    v_sum: float, n_edge: int, n_parent: int, prior: float, c: float
) -> float:
    """Baseline linear-value PUCT."""
    if n_edge < 0:
        raise ValueError("n_edge must be nonnegative")
    return v_sum / max(n_edge, 1) + c * math.sqrt(n_parent) / (1.0 + n_edge) * prior


# ---------------------------------------------------------------------------
# value targets and extraction


def compute_value_targets(node: OrNode | AndNode) -> dict[int, float]:
    """Network-free value targets over the resolved subgraph below ``node``.

    Terminals are worth 1.0; at OR nodes the best resolved edge's
    reward-plus-child-target wins; at AND nodes the hardest resolved child
    binds. Never reads stored network estimates, so targets are identical
    under any evaluator.
    """
    if not node.status.resolved:
        raise SearchError("value targets are defined on resolved nodes only")
    memo: dict[int, float] = {}

    def visit(n: OrNode | AndNode) -> float:
        if n.uid in memo:
            return memo[n.uid]
        memo[n.uid] = 0.0  # placeholder; resolved subgraphs are acyclic
        if n.is_and:
            vals = [visit(c) for c in n.children if c.status == n.status]
            out = min(vals)
        elif n.terminal or not n.methods:
            out = 1.0
        else:
            vals = [
                e.reward + visit(e.child)
                for e in n.edges
                if e.child is not None and not e.excluded and e.child.status == n.status
            ]
            out = max(vals)
        memo[n.uid] = out
        return out

    visit(node)
    return memo


def _resolved_edges(n: OrNode) -> list[tuple[int, EdgeStats]]:
    return [
        (i, e)
        for i, e in enumerate(n.edges)
        if e.child is not None and not e.excluded and e.child.status == n.status
    ]


def extract_examples(graph: SearchGraph, node: OrNode | AndNode) -> list[TrainingExample]:
    """Emit (observation, action, value target) for newly resolved OR nodes.

    Walks the resolved subgraph below ``node``; every expanded OR node not
    yet extracted contributes one example whose action is the resolved edge
    maximizing reward + child target (ties to the lowest method index).
    """
    targets = compute_value_targets(node)
    examples: list[TrainingExample] = []
    seen: set[int] = set()
    stack: list[OrNode | AndNode] = [node]
    while stack:
        n = stack.pop()
        if n.uid in seen:
            continue
        seen.add(n.uid)
        if n.is_and:
            stack.extend(c for c in n.children if c.status == n.status)
            continue
        if n.terminal or not n.methods:
            continue
        resolved = _resolved_edges(n)
        stack.extend(e.child for _, e in resolved)
        if n.extracted or not n.expanded:
            continue
        best_idx = max(resolved, key=lambda ie: (ie[1].reward + targets[ie[1].child.uid], -ie[0]))[0]
        examples.append(
            TrainingExample(
                observation=tuple(n.methods),
                action=best_idx,
                value_target=targets[n.uid],
            )
        )
        n.extracted = True
    return examples


def build_proof_tree(node: OrNode) -> ProofNode:
    """Extract an environment-checkable tree from a resolved subgraph.

    Solved claims include a single branch per case split; refutations
    include every branch. Edges created for zero-child methods become
    method applications with no children.
    """
    if not node.status.resolved:
        raise SearchError("cannot extract a proof from an unresolved node")
    targets = compute_value_targets(node)

    def best_edge(n: OrNode) -> tuple[int, EdgeStats]:
        return max(
            _resolved_edges(n),
            key=lambda ie: (ie[1].reward + targets[ie[1].child.uid], -ie[0]),
        )

    def visit_or(n: OrNode) -> ProofNode:
        if n.terminal or not n.methods:
            return ProofNode(payload=n.payload)
        _, edge = best_edge(n)
        child = edge.child
        if isinstance(child, AndNode):
            if n.status == NodeStatus.SOLVED:
                solved = [c for c in child.children if c.status == NodeStatus.SOLVED]
                witness = max(solved, key=lambda c: (targets[c.uid], -c.uid))
                subtrees = [visit_or(witness)]
            else:
                subtrees = [visit_or(c) for c in child.children]
        elif child.payload == b"" and not child.methods:
            subtrees = []  # zero-child method: contradictory by design
        else:
            subtrees = [visit_or(child)]
        return ProofNode(payload=n.payload, method=edge.method.id, children=subtrees)

    return visit_or(node)


# ---------------------------------------------------------------------------
# engine


class SearchEngine:
    """Runs search iterations for one lemma over one graph (single writer)."""

    def __init__(
        self,
        env: ProverEnv,
        evaluator,
        params: SearchHyperparams,
        reward_params: RewardParams,
        graph: SearchGraph,
    ):
        self.env = env
        self.evaluator = evaluator
        self.params = params
        self.reward_params = reward_params
        self.graph = graph
        self.examples: list[TrainingExample] = []

    # -- selection helpers ---------------------------------------------------

    def _pick_or_edge(self, node: OrNode) -> int | None:
        edges = node.edges
        n = len(edges)
        child_values = np.zeros(n)
        ns = np.zeros(n, dtype=np.int64)
        priors = np.zeros(n)
        blocked = np.zeros(n, dtype=np.bool_)
        for i, e in enumerate(edges):
            blocked[i] = e.excluded or (
                e.child is not None and e.child.status == NodeStatus.STUCK
            )
            ns[i] = e.visits
            priors[i] = e.prior
            if e.visits > 0 and e.child is not None:
                child_values[i] = e.child.value
        if blocked.all():
            return None
        if self.params.selection_rule == "classic_puct":
            value_sums = ns * (np.array([e.reward for e in edges]) + child_values)
            scores = kernels.classic_puct_scores(
                value_sums, ns, priors, blocked,
                float(node.visit_total), self.params.classic_c,
            )
        else:
            scores = kernels.puct_or_scores(
                child_values, ns, priors, blocked,
                node.value, float(node.visit_total),
                self.params.c_base, self.params.c_init, self.params.delta,
                self.params.gamma, self.params.exponent_clamp,
            )
        return int(np.argmax(scores))

    def _pick_and_child(self, node: AndNode) -> int | None:
        n = len(node.children)
        child_values = np.zeros(n)
        ns = np.zeros(n, dtype=np.int64)
        blocked = np.zeros(n, dtype=np.bool_)
        for i, c in enumerate(node.children):
            blocked[i] = c.status != NodeStatus.OPEN
            ns[i] = node.child_visits[i]
            child_values[i] = c.value
        if blocked.all():
            return None
        scores = kernels.puct_and_scores(
            child_values, ns, blocked, float(node.visit_total),
            self.params.c_base, self.params.c_init, self.params.c_and,
            self.params.gamma, self.params.exponent_clamp,
        )
        return int(np.argmax(scores))

    def select_path(self) -> list[tuple[OrNode | AndNode, int]]:
        """Descend from the root; stop at an unexpanded node, an
        unmaterialized or dead edge, or a non-open node."""
        path: list[tuple[OrNode | AndNode, int]] = []
        node: OrNode | AndNode = self.graph.root
        while True:
            if node.status != NodeStatus.OPEN:
                return path
            if not node.is_and:
                if not node.expanded:
                    return path
                idx = self._pick_or_edge(node)
                if idx is None:
                    return path
                path.append((node, idx))
                edge = node.edges[idx]
                if edge.child is None:
                    return path
                node = edge.child
            else:
                cidx = self._pick_and_child(node)
                if cidx is None:
                    return path
                path.append((node, cidx))
                node = node.children[cidx]

    # -- environment calls ----------------------------------------------------

    def _call_env(self, payload: bytes, method_id: str):
        """Apply one method with the timeout/retry policy.

        Returns (children, elapsed, hard_timeout) or (None, 0.0, True) when
        the method stays unusable and must be excluded.
        """
        try:
            res = self.env.execute_method(payload, method_id, timeout=self.params.call_timeout)
            return res.children, res.elapsed, False
        except EnvTimeout:
            pass
        try:
            res = self.env.execute_method(payload, method_id, timeout=self.params.retry_timeout)
            return res.children, res.elapsed, True
        except EnvTimeout:
            return None, 0.0, True

    def _exclude_edge(self, node: OrNode, edge_idx: int) -> None:
        node.edges[edge_idx].excluded = True
        live = [e for e in node.edges if not e.excluded]
        total = sum(e.prior for e in live)
        if total > 0:
            for e in live:
                e.prior /= total
        self._on_flips(self.graph.refresh_status(node))

    def _materialize(self, node: OrNode, edge_idx: int, path_max_branching: int) -> bool:
        """Apply the edge's method and attach the resulting child node."""
        edge = node.edges[edge_idx]
        children, elapsed, hard = self._call_env(node.payload, edge.method.id)
        if children is None:
            self._exclude_edge(node, edge_idx)
            return False
        edge.hard_timeout = hard
        soft = soft_time_penalty(min(elapsed, self.reward_params.t_clip), self.reward_params.t_clip)
        try:
            if len(children) == 0:
                child: OrNode | AndNode = self.graph.sentinel_terminal(NodeStatus.CONTRADICTORY)
                kind = EdgeKind.TERMINAL
                branch = 0.0
            elif len(children) == 1:
                c = children[0]
                child, _ = self.graph.intern_state(
                    c.payload, list(c.methods), terminal=c.terminal, parent=node
                )
                if c.terminal is not None:
                    kind = EdgeKind.TERMINAL
                    branch = 0.0
                else:
                    kind = EdgeKind.NORMAL
                    branch = branching_penalty(len(c.methods), path_max_branching)
            else:
                members = []
                for c in children:
                    member, _ = self.graph.intern_state(
                        c.payload, list(c.methods), terminal=c.terminal, parent=node
                    )
                    members.append(member)
                child = self.graph.new_and_node(members)
                kind = EdgeKind.TO_AND
                branch = 0.0
        except CycleError:
            self._exclude_edge(node, edge_idx)
            return False
        edge.reward = edge_reward(kind, branch, soft, hard, self.reward_params)
        self.graph.attach_child(node, edge_idx, child)
        self._on_flips(self.graph.refresh_status(child if child.is_and else node))
        if node.status == NodeStatus.OPEN and not child.is_and:
            self._on_flips(self.graph.refresh_status(node))
        return True

    # -- expansion -------------------------------------------------------------

    def expand_node(self, node: OrNode, path_max_branching: int) -> None:
        """Evaluate an unexpanded state and eagerly apply its top-N methods."""
        if node.is_and or node.expanded or node.status != NodeStatus.OPEN:
            raise SearchError("expand_node needs an open, unexpanded OR node")
        if not node.methods:
            self._on_flips(self.graph.set_status(node, NodeStatus.STUCK))
            return
        log_priors, value = self.evaluator.evaluate(node.methods)
        priors = np.exp(np.asarray(log_priors, dtype=np.float64))
        node.value_net = float(value)
        node.value = float(value)
        node.edges = [
            EdgeStats(method=m, prior=float(priors[i])) for i, m in enumerate(node.methods)
        ]
        node.expanded = True
        self.graph.expansions += 1
        order = sorted(range(len(node.edges)), key=lambda i: (-priors[i], i))
        for idx in order[: self.params.top_n]:
            if node.status != NodeStatus.OPEN:
                break
            self._materialize(node, idx, path_max_branching)

    # -- backup ------------------------------------------------------------------

    def backup_path(self, path: list[tuple[OrNode | AndNode, int]]) -> None:
        """Increment visits along the path and recompute values bottom-up."""
        for node, slot in reversed(path):
            if node.is_and:
                node.child_visits[slot] += 1
            else:
                node.edges[slot].visits += 1
            node.visit_total += 1
            self.recompute_value(node)

    def recompute_value(self, node: OrNode | AndNode) -> None:
        if node.status == NodeStatus.STUCK:
            node.value = self.graph.v_floor
            return
        if node.is_and:
            vals = [
                c.value
                for i, c in enumerate(node.children)
                if node.child_visits[i] > 0 and c.status != NodeStatus.CONTRADICTORY
            ]
            node.value = min(vals) if vals else 1.0
            return
        base = node.value_net if node.value_net is not None else 0.0
        num = base
        den = 1.0
        for e in node.edges:
            if e.visits > 0 and e.child is not None:
                num += e.visits * (e.reward + e.child.value)
                den += e.visits
        node.value = num / den

    # -- extraction hooks ----------------------------------------------------------

    def _on_flips(self, flipped: list[OrNode | AndNode]) -> None:
        for n in flipped:
            if n.status.resolved:
                self.examples.extend(extract_examples(self.graph, n))

    # -- iteration -----------------------------------------------------------------

    def step(self) -> None:
        """One Selection -> (Expansion) -> Backup iteration."""
        path: list[tuple[OrNode | AndNode, int]] = []
        node: OrNode | AndNode = self.graph.root
        path_max_branching = 1
        while True:
            if node.status != NodeStatus.OPEN:
                break
            if not node.is_and:
                path_max_branching = max(path_max_branching, len(node.methods))
                if not node.expanded:
                    self.expand_node(node, path_max_branching)
                    break
                idx = self._pick_or_edge(node)
                if idx is None:
                    # every action is excluded or leads nowhere
                    if all(e.excluded for e in node.edges):
                        self._on_flips(self.graph.set_status(node, NodeStatus.STUCK))
                    else:
                        self._on_flips(self.graph.refresh_status(node))
                        if node.status == NodeStatus.OPEN:
                            self._on_flips(self.graph.set_status(node, NodeStatus.STUCK))
                    break
                edge = node.edges[idx]
                path.append((node, idx))
                if edge.child is None:
                    if not self._materialize(node, idx, path_max_branching):
                        path.pop()
                        if node.status != NodeStatus.OPEN:
                            break
                        continue
                node = edge.child
            else:
                cidx = self._pick_and_child(node)
                if cidx is None:
                    self._on_flips(self.graph.refresh_status(node))
                    break
                path.append((node, cidx))
                node = node.children[cidx]
        self.backup_path(path)


def run_search(
    env: ProverEnv,
    evaluator,
    lemma: str,
    budget: int,
    params: SearchHyperparams | None = None,
    reward_params: RewardParams | None = None,
    dedup: bool = True,
    validate: bool = True,
) -> SearchResult:
    """Search one lemma until the root resolves or the budget is spent.

    Extracted proofs are independently validated through the environment's
    proof checker; a rejection raises ProofValidationError instead of being
    swallowed.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    params = params or SearchHyperparams()
    reward_params = reward_params or RewardParams()
    t0 = time.perf_counter()
    init = env.get_initial_system(lemma)
    graph = SearchGraph(dedup=dedup, v_floor=params.v_floor)
    root, _ = graph.intern_state(init.payload, list(init.methods), terminal=init.terminal)
    engine = SearchEngine(env, evaluator, params, reward_params, graph)
    while root.status == NodeStatus.OPEN and graph.expansions < budget:
        engine.step()
    proof = None
    proof_size = None
    validated = None
    if root.status.resolved:
        proof = build_proof_tree(root)
        if validate:
            check = env.check_proof(proof)
            validated = check.valid
            proof_size = check.proof_size
            if not check.valid:
                raise ProofValidationError(
                    f"environment rejected extracted proof: {check.reason}"
                )
        else:
            proof_size = proof.size()
    return SearchResult(
        status=root.status,
        proof=proof,
        proof_size=proof_size,
        expansions=graph.expansions,
        examples=engine.examples,
        shared_fraction=graph.shared_fraction() if graph.intern_calls else 0.0,
        wall_clock=time.perf_counter() - t0,
        validated=validated,
    )
