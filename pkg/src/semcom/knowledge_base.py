"""Shared/private knowledge bases, the devices-servers-devices update
protocol, federated parameter averaging, and a deterministic tick-based sim.

Conflict resolution is last-writer-wins on the (version, origin id) tuple.
Private entries replicate only through explicit itinerary handoffs and are
stored outside the shared map, so broadcasts can never carry them. The
simulation is a single-threaded loop over a schedule of events; messages
are totally ordered by (tick, sender id, sequence) and every message and
state transition appears in the trace as one tab-separated line:

    tick <TAB> from <TAB> to <TAB> kind <TAB> key <TAB> version
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, PrivacyError


@dataclass(frozen=True)
class KbEntry:
    key: str
    version: int
    payload: bytes
    origin: str
    region: str = ""
    private: bool = False

    def __post_init__(self):
        if self.version < 1:
            raise InvalidArgumentError("entry version must be >= 1")
        if len(self.payload) == 0:
            raise InvalidArgumentError("entry payload must be non-empty")

    def newer_than(self, other: "KbEntry | None") -> bool:
        if other is None:
            return True
        return (self.version, self.origin) > (other.version, other.origin)


@dataclass
class Node:
    id: str
    kind: str  # {"vehicle", "rsu", "edge_server"}
    region: str = ""
    shared: dict[str, KbEntry] = field(default_factory=dict)
    shared_version: int = 0
    pending: list[KbEntry] = field(default_factory=list)
    private: dict[str, KbEntry] = field(default_factory=dict)
    private_replicas: dict[str, dict[str, KbEntry]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("vehicle", "rsu", "edge_server"):
            raise InvalidArgumentError(f"unknown node kind {self.kind!r}")


def submit_update(server: Node, delta: list[KbEntry], from_node: Node) -> int:
    """Queue a knowledge delta on a server. Rejected whole if any entry is
    privacy-flagged. Returns the number of queued entries."""
    if server.kind != "edge_server":
        raise InvalidArgumentError("updates can only be submitted to an edge server")
    if from_node.kind not in ("vehicle", "rsu"):
        raise InvalidArgumentError("only vehicles and rsus submit updates")
    if any(e.private for e in delta):
        raise PrivacyError("delta contains privacy-flagged entries")
    server.pending.extend(delta)
    return len(delta)


def aggregate(server: Node) -> int:
    """Fold pending deltas into the shared base using last-writer-wins on
    (version, origin). Returns the (possibly bumped) global shared version."""
    applied = False
    for entry in server.pending:
        if entry.newer_than(server.shared.get(entry.key)):
            server.shared[entry.key] = entry
            applied = True
    server.pending.clear()
    if applied:
        server.shared_version += 1
    return server.shared_version


def adopt(node: Node, entries: list[KbEntry], src_version: int) -> list[KbEntry]:
    """Adopt broadcast entries that are newer per LWW; returns what changed."""
    changed = []
    for entry in entries:
        if entry.private:
            raise PrivacyError("broadcast payload contained a private entry")
        if entry.newer_than(node.shared.get(entry.key)):
            node.shared[entry.key] = entry
            changed.append(entry)
    node.shared_version = max(node.shared_version, src_version)
    return changed


def broadcast(server: Node, peers: list[Node]) -> int:
    """Send the full shared entry set to each peer; peers adopt newer
    entries. Private replicas never leave the server. Returns message count."""
    payload = [server.shared[k] for k in sorted(server.shared)]
    assert all(not e.private for e in payload)
    for peer in peers:
        adopt(peer, payload, server.shared_version)
    return len(peers)


def handoff_private(vehicle: Node, itinerary: list[str],
                    registry: dict[str, Node]) -> int:
    """Replicate the vehicle's private base to each itinerary server ahead
    of arrival. Replicas stay private and are excluded from broadcasts.
    Returns the number of replica messages sent."""
    if len(itinerary) == 0:
        raise InvalidArgumentError("itinerary must be non-empty")
    for sid in itinerary:
        if sid not in registry or registry[sid].kind != "edge_server":
            raise InvalidArgumentError(f"unknown server id {sid!r}")
    for sid in itinerary:
        registry[sid].private_replicas[vehicle.id] = dict(vehicle.private)
    return len(itinerary)


# ---------------------------------------------------------------------------
# Federated parameter averaging
# ---------------------------------------------------------------------------

def fed_avg(params: list[list[np.ndarray]], weights: list[float]) -> list[np.ndarray]:
    """Element-wise weighted mean of parameter lists with equal layouts."""
    if len(params) == 0:
        raise InvalidArgumentError("need at least one parameter set")
    if len(weights) != len(params):
        raise InvalidArgumentError("one weight per parameter set is required")
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("weights must be non-negative and sum to 1")
    layout = [p.shape for p in params[0]]
    for ps in params[1:]:
        if [p.shape for p in ps] != layout:
            raise InvalidArgumentError("parameter layouts differ")
    out = [np.zeros_like(p, dtype=np.float64) for p in params[0]]
    for wi, ps in zip(w, params):
        for acc, p in zip(out, ps):
            acc += wi * p
    return out


def metropolis_weights(edges: list[tuple[str, str]], nodes: list[str]) -> dict[str, dict[str, float]]:
    """Doubly-stochastic consensus weights for an undirected server graph."""
    neigh: dict[str, set[str]] = {n: set() for n in nodes}
    for a, b in edges:
        neigh[a].add(b)
        neigh[b].add(a)
    weights: dict[str, dict[str, float]] = {}
    for n in nodes:
        row = {}
        for m in sorted(neigh[n]):
            row[m] = 1.0 / (1.0 + max(len(neigh[n]), len(neigh[m])))
        row[n] = 1.0 - sum(row.values())
        weights[n] = row
    return weights


def consensus_round(params_by_node: dict[str, list[np.ndarray]],
                    edges: list[tuple[str, str]]) -> dict[str, list[np.ndarray]]:
    """One synchronous neighbor-averaging round over the server graph.

    Repeated rounds drive every node to the global parameter mean.
    """
    nodes = sorted(params_by_node)
    weights = metropolis_weights(edges, nodes)
    out = {}
    for n in nodes:
        row = weights[n]
        members = sorted(row)
        out[n] = fed_avg([params_by_node[m] for m in members],
                         [row[m] for m in members])
    return out


# ---------------------------------------------------------------------------
# Discrete-tick simulation
# ---------------------------------------------------------------------------

class KbSim:
    """Deterministic event loop over a topology and an event schedule."""

    def __init__(self, topology: dict, seed: int = 0):
        self.nodes: dict[str, Node] = {}
        self.server_peers: dict[str, list[str]] = {}
        self.attached: dict[str, list[str]] = {}
        self.seed = seed
        self.trace: list[str] = []
        self._seq = 0
        for s in topology.get("servers", []):
            self._add(Node(id=s["id"], kind="edge_server", region=s.get("region", "")))
            self.server_peers[s["id"]] = list(s.get("peers", []))
            self.attached[s["id"]] = []
        for v in topology.get("vehicles", []):
            self._add(Node(id=v["id"], kind="vehicle", region=v.get("region", "")))
            self.attached[v["server"]].append(v["id"])
        for r in topology.get("rsus", []):
            self._add(Node(id=r["id"], kind="rsu", region=r.get("region", "")))
            self.attached[r["server"]].append(r["id"])

    def _add(self, node: Node):
        if node.id in self.nodes:
            raise InvalidArgumentError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node

    def _log(self, tick, frm, to, kind, key="-", version=0):
        self.trace.append(f"{tick}\t{frm}\t{to}\t{kind}\t{key}\t{version}")
        self._seq += 1

    def _broadcast_from(self, tick: int, sid: str, targets: list[str]) -> bool:
        server = self.nodes[sid]
        payload = [server.shared[k] for k in sorted(server.shared)]
        any_change = False
        for tid in targets:
            self._log(tick, sid, tid, "broadcast", "-", server.shared_version)
            changed = adopt(self.nodes[tid], payload, server.shared_version)
            for e in changed:
                self._log(tick, sid, tid, "adopt", e.key, e.version)
                any_change = True
        return any_change

    def run(self, schedule: list[dict]) -> tuple[list[str], dict[str, Node]]:
        for ev in schedule:
            tick = int(ev.get("tick", 0))
            op = ev["op"]
            if op == "submit":
                frm = self.nodes[ev["from"]]
                server = self.nodes[ev["to"]]
                delta = [KbEntry(**e) for e in ev["entries"]]
                submit_update(server, delta, frm)
                for e in delta:
                    self._log(tick, frm.id, server.id, "submit", e.key, e.version)
            elif op == "aggregate":
                server = self.nodes[ev["node"]]
                version = aggregate(server)
                self._log(tick, server.id, server.id, "aggregate", "-", version)
            elif op == "broadcast":
                sid = ev["node"]
                self._broadcast_from(tick, sid, self.server_peers[sid] + self.attached[sid])
            elif op == "handoff":
                vehicle = self.nodes[ev["vehicle"]]
                count = handoff_private(vehicle, ev["itinerary"], self.nodes)
                for sid in ev["itinerary"]:
                    for key in sorted(vehicle.private):
                        self._log(tick, vehicle.id, sid, "handoff",
                                  key, vehicle.private[key].version)
                    if not vehicle.private:
                        self._log(tick, vehicle.id, sid, "handoff", "-", 0)
                del count
            elif op == "round":
                self._full_round(tick)
            else:
                raise InvalidArgumentError(f"unknown schedule op {op!r}")
        return self.trace, self.nodes

    def _full_round(self, tick: int):
        """Aggregate everywhere, flood the server graph to quiescence, then
        push the result down to attached vehicles and rsus."""
        for sid in sorted(self.server_peers):
            version = aggregate(self.nodes[sid])
            self._log(tick, sid, sid, "aggregate", "-", version)
        for _ in range(len(self.server_peers) + 1):
            changed = False
            for sid in sorted(self.server_peers):
                if self._broadcast_from(tick, sid, self.server_peers[sid]):
                    changed = True
            if not changed:
                break
        for sid in sorted(self.server_peers):
            self._broadcast_from(tick, sid, self.attached[sid])


def run_sim(topology: dict, schedule: list[dict], seed: int = 0):
    """Run a schedule against a topology. Returns (trace lines, final nodes).

    Deterministic: identical inputs produce identical traces.
    """
    sim = KbSim(topology, seed=seed)
    return sim.run(schedule)
