"""Prover environment abstraction: states, proof trees, wire conversion.

An environment exposes three operations (initial system, method execution,
proof checking). The search engine holds the full state client-side; the
environment is a pure function of (payload, method id).
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field

from ..graph import NodeStatus, ProofMethod


class EnvError(Exception):
    pass


class UnknownLemmaError(EnvError):
    pass


class MethodNotApplicableError(EnvError):
    pass


class PayloadDecodeError(EnvError):
    pass


class EnvTimeout(EnvError):
    """An environment call did not answer within the allotted time."""


class StateBoundExceeded(EnvError):
    """Instance generation or oracle traversal exceeded the state bound."""


@dataclass(frozen=True)
class EnvState:
    """A constraint state as the environment reports it.

    ``payload`` is opaque canonical bytes held by the client and round-trips
    byte-exact through the wire. ``methods`` come in heuristic order (index
    == rank). Terminal states carry no methods.
    """

    payload: bytes
    methods: tuple[ProofMethod, ...]
    terminal: NodeStatus | None = None

    def __post_init__(self):
        if self.terminal is not None and self.methods:
            raise EnvError("terminal states cannot list applicable methods")


@dataclass
class ExecResult:
    children: list[EnvState]
    elapsed: float


@dataclass
class CheckResult:
    valid: bool
    proof_size: int
    reason: str | None = None


@dataclass
class ProofNode:
    """One node of an extracted proof tree.

    Internal nodes carry the applied method id and the child subtrees the
    claim relies on: a solved claim may include a single branch of a case
    split, a refutation must include all of them. Leaves (``method`` None)
    must be terminal states; a node with a method and no children claims the
    method produced zero child systems.
    """

    payload: bytes
    method: str | None = None
    children: list["ProofNode"] = field(default_factory=list)

    def size(self) -> int:
        """Number of method applications in the tree."""
        n = 1 if self.method is not None else 0
        return n + sum(c.size() for c in self.children)

    def to_wire(self) -> dict:
        out: dict = {"state": base64.b64encode(self.payload).decode("ascii")}
        if self.method is not None:
            out["method"] = self.method
            out["children"] = [c.to_wire() for c in self.children]
        return out

    @classmethod
    def from_wire(cls, obj: dict) -> "ProofNode":
        try:
            payload = base64.b64decode(obj["state"], validate=True)
        except Exception as exc:
            raise PayloadDecodeError(f"bad state encoding: {exc}") from exc
        method = obj.get("method")
        children = [cls.from_wire(c) for c in obj.get("children", [])]
        if method is None and children:
            raise EnvError("leaf proof nodes cannot have children")
        return cls(payload=payload, method=method, children=children)


ProofTree = ProofNode


class ProverEnv:
    """Interface all environments implement (in-process toy or HTTP client)."""

    def get_initial_system(self, lemma: str) -> EnvState:
        raise NotImplementedError

    def execute_method(
        self, payload: bytes, method_id: str, timeout: float | None = None
    ) -> ExecResult:
        raise NotImplementedError

    def check_proof(self, tree: ProofNode) -> CheckResult:
        raise NotImplementedError


_TERMINAL_WIRE = {None: "none", NodeStatus.SOLVED: "solved", NodeStatus.CONTRADICTORY: "contradictory"}
_TERMINAL_PARSE = {v: k for k, v in _TERMINAL_WIRE.items()}


def env_state_to_wire(state: EnvState) -> dict:
    return {
        "state": base64.b64encode(state.payload).decode("ascii"),
        "methods": [{"id": m.id, "text": m.text, "rank": m.rank} for m in state.methods],
        "terminal": _TERMINAL_WIRE[state.terminal],
    }


def env_state_from_wire(obj: dict) -> EnvState:
    try:
        payload = base64.b64decode(obj["state"], validate=True)
        methods = tuple(
            ProofMethod(id=m["id"], text=m["text"], rank=int(m["rank"]))
            for m in obj["methods"]
        )
        terminal = _TERMINAL_PARSE[obj["terminal"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise PayloadDecodeError(f"malformed state object: {exc}") from exc
    return EnvState(payload=payload, methods=methods, terminal=terminal)
