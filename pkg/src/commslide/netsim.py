"""Synchronous message passing with locality checks and exact round counts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import Graph, LaplacianOperator

__all__ = [
    "LocalityError",
    "StaleMailboxError",
    "RoundLedger",
    "Mailbox",
    "broadcast_round",
    "neighbor_weighted_sum",
    "Network",
]


class LocalityError(RuntimeError):
    """An agent tried to read a payload from outside its neighbourhood."""


class StaleMailboxError(RuntimeError):
    """A mailbox was read after its round ended."""


@dataclass
class RoundLedger:
    """Counters for communication and local computation."""

    m: int
    comm_rounds: int = 0
    per_edge_messages: dict = field(default_factory=dict)
    subgrad_evals: np.ndarray = None
    stoch_evals: np.ndarray = None
    prox_solves: np.ndarray = None

    def __post_init__(self):
        z = lambda: np.zeros(self.m, dtype=np.int64)  # noqa: E731
        if self.subgrad_evals is None:
            self.subgrad_evals = z()
        if self.stoch_evals is None:
            self.stoch_evals = z()
        if self.prox_solves is None:
            self.prox_solves = z()

    def total_evals(self) -> np.ndarray:
        return self.subgrad_evals + self.stoch_evals

    def to_dict(self) -> dict:
        return {
            "comm_rounds": self.comm_rounds,
            "per_edge_messages": {f"{i + 1}->{j + 1}": n
                                  for (i, j), n in sorted(self.per_edge_messages.items())},
            "per_agent_subgrad_evals": self.subgrad_evals.tolist(),
            "per_agent_stoch_evals": self.stoch_evals.tolist(),
            "per_agent_prox_solves": self.prox_solves.tolist(),
        }


class Mailbox:
    """Inbound payloads of one agent for one round.

    Reads outside ``N_i`` (which includes the agent itself) raise
    :class:`LocalityError`; reads after the next round started raise
    :class:`StaleMailboxError`.
    """

    def __init__(self, owner: int, allowed, payloads: dict, round_id: int, clock):
        self.owner = owner
        self.allowed = frozenset(allowed)
        self._payloads = payloads
        self.round_id = round_id
        self._clock = clock
        self.accessed: list[int] = []

    def get(self, j: int) -> np.ndarray:
        if self._clock[0] != self.round_id:
            raise StaleMailboxError(
                f"agent {self.owner + 1} read a round-{self.round_id} mailbox during round {self._clock[0]}"
            )
        if j not in self.allowed:
            raise LocalityError(f"agent {self.owner + 1} cannot read agent {j + 1}'s payload")
        self.accessed.append(j)
        try:
            return self._payloads[j]
        except KeyError:
            raise LocalityError(f"agent {self.owner + 1} has no payload from agent {j + 1}") from None

    def senders(self):
        return sorted(self.allowed)


def broadcast_round(ledger: RoundLedger, graph: Graph, payloads, clock=None) -> list[Mailbox]:
    """Deliver every agent's payload to its closed neighbourhood.

    ``payloads`` maps agent (0-based) to a vector, or is a sequence/array
    indexed by agent.  The ledger gains one round and one message per
    directed edge; self-delivery is free.
    """
    m = graph.m
    if isinstance(payloads, dict):
        missing = [i + 1 for i in range(m) if i not in payloads]
        if missing:
            raise ValueError(f"missing payload for agents {missing}")
        vals = [payloads[i] for i in range(m)]
    else:
        if len(payloads) != m:
            raise ValueError(f"expected {m} payloads, got {len(payloads)}")
        vals = list(payloads)
    # Snapshot so later mutation by the sender cannot leak into this round.
    vals = [np.array(v, dtype=float, copy=True) for v in vals]
    if clock is None:
        clock = [0]
    clock[0] += 1
    ledger.comm_rounds += 1
    for e in graph.directed_edges():
        ledger.per_edge_messages[e] = ledger.per_edge_messages.get(e, 0) + 1
    boxes = []
    for i in range(m):
        nb = graph.closed_neighborhood(i)
        boxes.append(Mailbox(i, nb, {j: vals[j] for j in nb}, clock[0], clock))
    return boxes


def neighbor_weighted_sum(i: int, mailbox: Mailbox, row: dict) -> np.ndarray:
    """``sum_{j in N_i} L_ij payload_j`` from a single mailbox."""
    if mailbox.owner != i:
        raise LocalityError(f"agent {i + 1} handed agent {mailbox.owner + 1}'s mailbox")
    acc = None
    for j, lij in row.items():
        term = lij * mailbox.get(j)
        acc = term if acc is None else acc + term
    return acc


class Network:
    """A graph, its Laplacian rows and a ledger, advanced round by round."""

    def __init__(self, L: LaplacianOperator):
        self.L = L
        self.graph = L.graph
        self.ledger = RoundLedger(L.m)
        self.rows = L.rows
        self._clock = [0]
        self.mailbox_log: list[list[Mailbox]] = []
        self.keep_log = False

    def broadcast(self, payloads) -> list[Mailbox]:
        boxes = broadcast_round(self.ledger, self.graph, payloads, self._clock)
        if self.keep_log:
            self.mailbox_log.append(boxes)
        return boxes

    def mix(self, payloads) -> np.ndarray:
        """One round followed by every agent's Laplacian-weighted neighbour sum."""
        boxes = self.broadcast(payloads)
        return np.stack([neighbor_weighted_sum(i, boxes[i], self.rows[i])
                         for i in range(self.graph.m)])
