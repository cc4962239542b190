"""Bundled toy constraint calculus: seeded finite AND/OR spaces with oracle.

Each instance is a procedurally generated DAG of states. Every state carries
a hidden ground truth (does a solution exist below it); method applications
refine a state soundly, so the union of a method's children always preserves
that truth. Universal-style lemmas root at a no-solution state (the proof is
an exhaustive refutation), existential-style lemmas at a has-solution state
(the proof is any witness path).

Method display strings embed weak lexical hints: one token is drawn from a
"low" or "high" vocabulary half depending on whether the method sits on a
minimal proof, with a mixing rate controlled by the instance's hint
informativeness. The heuristic ordering blends the oracle's cost ordering
with a seeded random permutation by the same knob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from ..graph import NodeStatus, ProofMethod
from .core import (
    CheckResult,
    EnvError,
    EnvState,
    ExecResult,
    MethodNotApplicableError,
    PayloadDecodeError,
    ProofNode,
    ProverEnv,
    StateBoundExceeded,
    UnknownLemmaError,
)

POLARITIES = ("universal", "existential")

# Structure sampling rates. Fixed for all instances; the descriptor knobs
# (depth, branching, dup, informativeness, polarity) give enough spread.
P_SPLIT = 0.30
P_WITNESS = 0.15       # true state: method jumps straight to a solved terminal
P_EMPTY = 0.20         # false state: method yields zero children
P_REFUTE_LEAF = 0.15   # false state: method yields one contradictory terminal
SPLIT_ARITIES = (2, 3)

_VERBS = ("resolve", "unfold", "chain", "inspect", "weaken", "bind", "trace", "merge")
_HINT_LOW = tuple(f"h0{i}" for i in range(10))
_HINT_HIGH = tuple(f"h1{i}" for i in range(10))


@dataclass(frozen=True)
class ToyInstance:
    """Descriptor of one generated instance; fully determines the space."""

    lemma: str
    seed: int
    depth: int
    branch_min: int
    branch_max: int
    dup: float
    informativeness: float
    polarity: str
    bound: int = 400

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}")
        if not 1 <= self.branch_min <= self.branch_max:
            raise ValueError("need 1 <= branch_min <= branch_max")
        if not 0.0 <= self.dup <= 1.0 or not 0.0 <= self.informativeness <= 1.0:
            raise ValueError("dup and informativeness must be in [0, 1]")
        if self.depth < 0 or self.bound < 1:
            raise ValueError("depth must be >= 0 and bound >= 1")

    def descriptor(self) -> dict:
        return asdict(self)

    @classmethod
    def from_descriptor(cls, obj: dict) -> "ToyInstance":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        extra = set(obj) - set(known)
        if extra:
            raise EnvError(f"unknown instance fields: {sorted(extra)}")
        return cls(**known)


@dataclass
class ToyMethod:
    mid: str
    text: str
    children: list[int]   # state ids; empty list = contradictory by design


@dataclass
class ToyState:
    sid: int
    truth: bool
    level: int
    terminal: NodeStatus | None = None
    methods: list[ToyMethod] | None = None


class ToyModel:
    """A fully built instance: states, oracle costs, heuristic ordering."""

    def __init__(self, instance: ToyInstance, states: list[ToyState]):
        self.instance = instance
        self.states = states
        self.min_cost: dict[int, int] = {}
        self._compute_costs()

    # -- oracle --------------------------------------------------------------

    def status(self, sid: int) -> NodeStatus:
        return NodeStatus.SOLVED if self.states[sid].truth else NodeStatus.CONTRADICTORY

    @property
    def internal_count(self) -> int:
        return sum(1 for s in self.states if s.terminal is None)

    def _levels_desc(self) -> list[ToyState]:
        return sorted(
            (s for s in self.states if s.terminal is None),
            key=lambda s: (-s.level, s.sid),
        )

    def _method_cost(self, state: ToyState, m: ToyMethod) -> int:
        if state.truth:
            return 1 + min(
                self.min_cost[c] for c in m.children if self.states[c].truth
            )
        return 1 + sum(self.min_cost[c] for c in m.children)

    def _compute_costs(self):
        for s in self.states:
            if s.terminal is not None:
                self.min_cost[s.sid] = 0
        for s in self._levels_desc():
            self.min_cost[s.sid] = min(self._method_cost(s, m) for m in s.methods)

    def minimal_methods(self, sid: int) -> set[str]:
        """Method ids of ``sid`` that lie on some minimal proof."""
        s = self.states[sid]
        best = self.min_cost[sid]
        return {m.mid for m in s.methods if self._method_cost(s, m) == best}

    def oracle(self) -> dict:
        """Exhaustive ground truth: status and optimal cost per state."""
        per_state = {
            s.sid: {
                "status": self.status(s.sid).value if s.terminal is None else s.terminal.value,
                "cost": self.min_cost[s.sid],
            }
            for s in self.states
        }
        return {
            "root_status": per_state[0]["status"],
            "min_proof_size": self.min_cost[0],
            "reachable_or_states": self.internal_count,
            "states": per_state,
        }


def _canonical_descriptor(inst: ToyInstance) -> str:
    return json.dumps(inst.descriptor(), sort_keys=True, separators=(",", ":"))


def state_payload(inst: ToyInstance, sid: int) -> bytes:
    return json.dumps(
        {"g": inst.descriptor(), "n": sid}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")


def decode_payload(payload: bytes) -> tuple[ToyInstance, int]:
    try:
        obj = json.loads(payload.decode("utf-8"))
        inst = ToyInstance.from_descriptor(obj["g"])
        sid = int(obj["n"])
    except (ValueError, KeyError, TypeError, EnvError) as exc:
        raise PayloadDecodeError(f"cannot decode state payload: {exc}") from exc
    return inst, sid


def build_model(inst: ToyInstance) -> ToyModel:
    """Deterministically generate the instance's AND/OR space.

    Raises StateBoundExceeded when the space would exceed the descriptor's
    bound on internal (non-terminal) states.
    """
    struct_rng = np.random.default_rng(
        np.random.SeedSequence([inst.seed, 0xA11CE])
    )
    states: list[ToyState] = []
    pools: dict[tuple[int, bool], list[int]] = {}
    internal = 0

    def new_state(truth: bool, level: int, terminal: NodeStatus | None = None) -> int:
        nonlocal internal
        sid = len(states)
        states.append(ToyState(sid=sid, truth=truth, level=level, terminal=terminal,
                               methods=None if terminal is not None else []))
        if terminal is None:
            internal += 1
            if internal > inst.bound:
                raise StateBoundExceeded(
                    f"instance {inst.lemma}: more than {inst.bound} reachable states"
                )
            pools.setdefault((level, truth), []).append(sid)
        return sid

    def solved_leaf(level: int) -> int:
        return new_state(True, level, terminal=NodeStatus.SOLVED)

    def refuted_leaf(level: int) -> int:
        return new_state(False, level, terminal=NodeStatus.CONTRADICTORY)

    def or_child(level: int, truth: bool, avoid: set[int]) -> int:
        pool = [sid for sid in pools.get((level, truth), []) if sid not in avoid]
        if pool and struct_rng.random() < inst.dup:
            return pool[int(struct_rng.integers(len(pool)))]
        return new_state(truth, level)

    root_truth = inst.polarity == "existential"
    if inst.depth == 0:
        new_state(root_truth, 0,
                  terminal=NodeStatus.SOLVED if root_truth else NodeStatus.CONTRADICTORY)
        return ToyModel(inst, states)

    new_state(root_truth, 0)
    cursor = 0
    while cursor < len(states):
        s = states[cursor]
        cursor += 1
        if s.terminal is not None:
            continue
        at_cap = s.level == inst.depth
        k = int(struct_rng.integers(inst.branch_min, inst.branch_max + 1))
        for j in range(k):
            mid = f"m{j}"
            children: list[int] = []
            r = struct_rng.random()
            if s.truth:
                if at_cap:
                    if r < P_SPLIT:
                        arity = int(struct_rng.choice(SPLIT_ARITIES))
                        children = [solved_leaf(s.level + 1)]
                        children += [refuted_leaf(s.level + 1) for _ in range(arity - 1)]
                    else:
                        children = [solved_leaf(s.level + 1)]
                elif r < P_WITNESS:
                    children = [solved_leaf(s.level + 1)]
                elif r < P_WITNESS + P_SPLIT:
                    arity = int(struct_rng.choice(SPLIT_ARITIES))
                    avoid: set[int] = set()
                    truths = [True] + [bool(struct_rng.random() < 0.25) for _ in range(arity - 1)]
                    for t in truths:
                        c = or_child(s.level + 1, t, avoid)
                        avoid.add(c)
                        children.append(c)
                else:
                    children = [or_child(s.level + 1, True, set())]
            else:
                if at_cap:
                    if r < P_EMPTY:
                        children = []
                    elif r < P_EMPTY + P_SPLIT:
                        arity = int(struct_rng.choice(SPLIT_ARITIES))
                        children = [refuted_leaf(s.level + 1) for _ in range(arity)]
                    else:
                        children = [refuted_leaf(s.level + 1)]
                elif r < P_EMPTY:
                    children = []
                elif r < P_EMPTY + P_REFUTE_LEAF:
                    children = [refuted_leaf(s.level + 1)]
                elif r < P_EMPTY + P_REFUTE_LEAF + P_SPLIT:
                    arity = int(struct_rng.choice(SPLIT_ARITIES))
                    avoid = set()
                    for _ in range(arity):
                        c = or_child(s.level + 1, False, avoid)
                        avoid.add(c)
                        children.append(c)
                else:
                    children = [or_child(s.level + 1, False, set())]
            s.methods.append(ToyMethod(mid=mid, text="", children=children))

    model = ToyModel(inst, states)
    _assign_order_and_text(model)
    return model


def _assign_order_and_text(model: ToyModel) -> None:
    """Fix the heuristic ordering and the hinted display strings.

    Separate stream from structure generation so both stay reproducible.
    """
    inst = model.instance
    rng = np.random.default_rng(np.random.SeedSequence([inst.seed, 0x7E47]))
    info = inst.informativeness
    hint_quality = 0.5 + 0.5 * info
    for s in model.states:
        if s.terminal is not None:
            continue
        costs = [model._method_cost(s, m) for m in s.methods]
        k = len(s.methods)
        cost_pos = {i: p for p, i in enumerate(
            sorted(range(k), key=lambda i: (costs[i], i))
        )}
        noise = rng.random(k)
        span = max(k - 1, 1)
        keys = [info * (cost_pos[i] / span) + (1.0 - info) * noise[i] for i in range(k)]
        order = sorted(range(k), key=lambda i: (keys[i], i))
        best = min(costs)
        reordered = []
        for i in order:
            m = s.methods[i]
            on_min = costs[i] == best
            good_draw = rng.random() < hint_quality
            low = on_min == good_draw
            hint = (_HINT_LOW if low else _HINT_HIGH)[int(rng.integers(10))]
            verb = _VERBS[int(rng.integers(len(_VERBS)))]
            arg = f"c{int(rng.integers(100))}"
            reordered.append(ToyMethod(mid=m.mid, text=f"{verb} {arg} {hint}", children=m.children))
        s.methods = reordered


def oracle_resolve(inst: ToyInstance) -> dict:
    """Brute-force ground truth for an instance (status + optimal cost)."""
    return build_model(inst).oracle()


def load_suite(path: str) -> dict[str, ToyInstance]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise EnvError("suite file must be a JSON list of instance descriptors")
    suite: dict[str, ToyInstance] = {}
    for obj in raw:
        inst = ToyInstance.from_descriptor(obj)
        if inst.lemma in suite:
            raise EnvError(f"duplicate lemma id {inst.lemma}")
        suite[inst.lemma] = inst
    return suite


def save_suite(instances: list[ToyInstance], path: str) -> None:
    with open(path, "w") as fh:
        json.dump([i.descriptor() for i in instances], fh, indent=2, sort_keys=True)
        fh.write("\n")


class ToyEnv(ProverEnv):
    """In-process environment over the toy calculus.

    Stateless by construction: every payload embeds its instance descriptor,
    so any response is a pure function of the request. Built models are
    cached per descriptor purely as an optimization.
    """

    def __init__(self, suite: dict[str, ToyInstance] | None = None):
        self.suite = dict(suite or {})

    @staticmethod
    @lru_cache(maxsize=512)
    def _model_for(descriptor_json: str) -> ToyModel:
        return build_model(ToyInstance.from_descriptor(json.loads(descriptor_json)))

    def _model(self, inst: ToyInstance) -> ToyModel:
        return self._model_for(_canonical_descriptor(inst))

    def _env_state(self, model: ToyModel, sid: int) -> EnvState:
        s = model.states[sid]
        payload = state_payload(model.instance, sid)
        if s.terminal is not None:
            return EnvState(payload=payload, methods=(), terminal=s.terminal)
        methods = tuple(
            ProofMethod(id=m.mid, text=m.text, rank=i) for i, m in enumerate(s.methods)
        )
        return EnvState(payload=payload, methods=methods)

    def get_initial_system(self, lemma: str) -> EnvState:
        if lemma not in self.suite:
            raise UnknownLemmaError(f"unknown lemma {lemma!r}")
        model = self._model(self.suite[lemma])
        return self._env_state(model, 0)

    def execute_method(
        self, payload: bytes, method_id: str, timeout: float | None = None
    ) -> ExecResult:
        inst, sid = decode_payload(payload)
        model = self._model(inst)
        if sid < 0 or sid >= len(model.states):
            raise PayloadDecodeError(f"state id {sid} out of range")
        s = model.states[sid]
        if s.terminal is not None:
            raise MethodNotApplicableError("terminal states have no applicable methods")
        for m in s.methods:
            if m.mid == method_id:
                children = [self._env_state(model, c) for c in m.children]
                # In-process calls report zero cost so runs stay reproducible.
                return ExecResult(children=children, elapsed=0.0)
        raise MethodNotApplicableError(f"method {method_id!r} not applicable at state {sid}")

    def check_proof(self, tree: ProofNode) -> CheckResult:
        try:
            status, size = self._check_node(tree, "root")
        except _ProofInvalid as exc:
            return CheckResult(valid=False, proof_size=0, reason=str(exc))
        return CheckResult(valid=True, proof_size=size)

    def _check_node(self, node: ProofNode, path: str) -> tuple[NodeStatus, int]:
        inst, sid = decode_payload(node.payload)
        model = self._model(inst)
        if sid < 0 or sid >= len(model.states):
            raise _ProofInvalid(f"{path}: unknown state")
        if node.method is None:
            s = model.states[sid]
            if s.terminal is None:
                raise _ProofInvalid(f"{path}: leaf state is not terminal")
            return s.terminal, 0
        try:
            result = self.execute_method(node.payload, node.method)
        except EnvError as exc:
            raise _ProofInvalid(f"{path}: {exc}") from exc
        actual = {c.payload: c for c in result.children}
        size = 1
        statuses: list[NodeStatus] = []
        seen: set[bytes] = set()
        for i, child in enumerate(node.children):
            if child.payload not in actual:
                raise _ProofInvalid(f"{path}.{i}: child does not match any produced system")
            if child.payload in seen:
                raise _ProofInvalid(f"{path}.{i}: duplicate child")
            seen.add(child.payload)
            st, sz = self._check_node(child, f"{path}.{i}")
            statuses.append(st)
            size += sz
        if not result.children:
            return NodeStatus.CONTRADICTORY, size
        if any(st == NodeStatus.SOLVED for st in statuses):
            return NodeStatus.SOLVED, size
        if len(node.children) == len(result.children) and statuses and all(
            st == NodeStatus.CONTRADICTORY for st in statuses
        ):
            return NodeStatus.CONTRADICTORY, size
        raise _ProofInvalid(f"{path}: branches neither witness a solution nor cover all cases")


class _ProofInvalid(EnvError):
    pass


def corpus_lines(instances: list[ToyInstance]) -> list[str]:
    """All method display strings across a suite (tokenizer training corpus)."""
    lines: list[str] = []
    for inst in instances:
        model = build_model(inst)
        for s in model.states:
            if s.terminal is None:
                lines.extend(m.text for m in s.methods)
    return lines
