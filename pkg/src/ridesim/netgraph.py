"""Road network representation, skim matrices, synthetic grids and graph I/O.

The network is a strongly connected directed graph with free-flow edge speeds;
travel times are continuous seconds. The skim stores both shortest travel time
and the distance of that same minimizing path, so fares (per km) and ETAs
(per second) come from a single lookup.
"""

import csv
import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ridesim.errors import GraphParseError, GraphValidationError
from ridesim.util import fmt_num

NODES_HEADER = ["node_id", "x", "y"]
EDGES_HEADER = ["from", "to", "length_m", "speed_mps"]


@dataclass(frozen=True)
class Node:
    node_id: int
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    length_m: float
    speed_mps: float

    @property
    def travel_time_s(self) -> float:
        return self.length_m / self.speed_mps


@dataclass(frozen=True)
class RoadNetwork:
    """Validated directed road graph. Immutable; safe to share across runs."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    @property
    def n(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> list[list[tuple[int, float, float]]]:
        """Outgoing edges per node as (dst, travel_time_s, length_m)."""
        adj: list[list[tuple[int, float, float]]] = [[] for _ in range(self.n)]
        for e in self.edges:
            adj[e.src].append((e.dst, e.travel_time_s, e.length_m))
        return adj

    def content_key(self) -> str:
        """Canonical string identifying the graph's content (for caching)."""
        parts = [f"n:{nd.node_id},{nd.x!r},{nd.y!r}" for nd in self.nodes]
        parts += [f"e:{e.src},{e.dst},{e.length_m!r},{e.speed_mps!r}" for e in self.edges]
        return "|".join(parts)


@dataclass(frozen=True)
class SkimMatrix:
    """All-pairs shortest travel times and the distances of those paths.

    ``travel_time[u, v]`` is the minimal time in seconds; ``distance[u, v]``
    the length in meters of the same minimizing path (ties broken by minimal
    distance, then lexicographically smallest node sequence). Diagonals are
    exactly zero; strong connectivity guarantees all entries finite.
    """

    travel_time: np.ndarray
    distance: np.ndarray

    def __post_init__(self):
        self.travel_time.setflags(write=False)
        self.distance.setflags(write=False)


def _validate(nodes: list[Node], edges: list[Edge], source: str) -> RoadNetwork:
    n = len(nodes)
    if n == 0:
        raise GraphValidationError(f"{source}: graph has no nodes")
    ids = [nd.node_id for nd in nodes]
    if sorted(ids) != list(range(n)):
        seen: set[int] = set()
        for nd in nodes:
            if nd.node_id in seen:
                raise GraphValidationError(f"{source}: duplicate node id {nd.node_id}")
            seen.add(nd.node_id)
        missing = sorted(set(range(n)) - seen)
        bad = missing[0] if missing else max(ids)
        raise GraphValidationError(
            f"{source}: node ids must be dense in [0, {n}); problem at id {bad}"
        )
    nodes = sorted(nodes, key=lambda nd: nd.node_id)
    for i, e in enumerate(edges):
        if not (0 <= e.src < n) or not (0 <= e.dst < n):
            raise GraphValidationError(
                f"{source}: edge {i} ({e.src}->{e.dst}) references a missing node"
            )
        if e.length_m <= 0:
            raise GraphValidationError(
                f"{source}: edge {i} ({e.src}->{e.dst}) has non-positive length {e.length_m}"
            )
        if e.speed_mps <= 0:
            raise GraphValidationError(
                f"{source}: edge {i} ({e.src}->{e.dst}) has non-positive speed {e.speed_mps}"
            )
    net = RoadNetwork(nodes=tuple(nodes), edges=tuple(edges))
    _check_strong_connectivity(net, source)
    return net


def _check_strong_connectivity(net: RoadNetwork, source: str) -> None:
    fwd: list[list[int]] = [[] for _ in range(net.n)]
    rev: list[list[int]] = [[] for _ in range(net.n)]
    for e in net.edges:
        fwd[e.src].append(e.dst)
        rev[e.dst].append(e.src)
    for label, adj in (("from", fwd), ("towards", rev)):
        reached = _bfs(adj, 0)
        if len(reached) != net.n:
            missing = min(set(range(net.n)) - reached)
            raise GraphValidationError(
                f"{source}: graph is not strongly connected; "
                f"node {missing} is unreachable {label} node 0"
            )


def _bfs(adj: list[list[int]], start: int) -> set[int]:
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return seen


def grid_city(rows: int, cols: int, spacing: float, speed: float) -> RoadNetwork:
    """Manhattan grid of ``rows`` x ``cols`` nodes with bidirectional edges
    between 4-neighbours. Node (r, c) has id ``r * cols + c``; all edges have
    length ``spacing`` meters and the given free-flow speed."""
    if rows < 2 or cols < 2:
        raise GraphValidationError(f"grid_city needs rows, cols >= 2 (got {rows}x{cols})")
    if spacing <= 0 or speed <= 0:
        raise GraphValidationError("grid_city needs spacing > 0 and speed > 0")
    nodes = [
        Node(node_id=r * cols + c, x=c * spacing, y=r * spacing)
        for r in range(rows)
        for c in range(cols)
    ]
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                v = u + 1
                edges.append(Edge(u, v, spacing, speed))
                edges.append(Edge(v, u, spacing, speed))
            if r + 1 < rows:
                v = u + cols
                edges.append(Edge(u, v, spacing, speed))
                edges.append(Edge(v, u, spacing, speed))
    return _validate(nodes, edges, f"grid_city({rows}x{cols})")


def load_graph(path: str | Path, edges_path: str | Path | None = None) -> RoadNetwork:
    """Load and validate a network from the two-file graph CSV format.

    ``path`` is either a directory containing ``nodes.csv`` and ``edges.csv``,
    or the nodes file itself with ``edges_path`` naming the edges file
    (defaulting to a sibling ``edges.csv``).
    """
    p = Path(path)
    if p.is_dir():
        nodes_p, edges_p = p / "nodes.csv", p / "edges.csv"
    else:
        nodes_p = p
        edges_p = Path(edges_path) if edges_path is not None else p.with_name("edges.csv")
    nodes = [
        Node(node_id=r[0], x=r[1], y=r[2])
        for r in _read_rows(nodes_p, NODES_HEADER, (int, float, float))
    ]
    edges = [
        Edge(src=r[0], dst=r[1], length_m=r[2], speed_mps=r[3])
        for r in _read_rows(edges_p, EDGES_HEADER, (int, int, float, float))
    ]
    return _validate(nodes, edges, str(nodes_p.parent))


def _read_rows(path: Path, header: list[str], types: tuple):
    if not path.exists():
        raise GraphParseError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise GraphParseError(
                f"{path}: expected header {','.join(header)}, got "
                f"{','.join(got) if got else '<empty file>'}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise GraphParseError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            try:
                yield tuple(conv(cell) for conv, cell in zip(types, row))
            except ValueError:
                raise GraphParseError(
                    f"{path}: row {lineno}: cannot parse {row!r}"
                ) from None


def save_graph(net: RoadNetwork, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``nodes.csv`` and ``edges.csv`` for ``net`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nodes_p, edges_p = out / "nodes.csv", out / "edges.csv"
    with open(nodes_p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODES_HEADER)
        for nd in net.nodes:
            w.writerow([nd.node_id, fmt_num(nd.x), fmt_num(nd.y)])
    with open(edges_p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGES_HEADER)
        for e in net.edges:
            w.writerow([e.src, e.dst, fmt_num(e.length_m), fmt_num(e.speed_mps)])
    return nodes_p, edges_p


def build_skim(net: RoadNetwork) -> SkimMatrix:
    """All-pairs shortest paths under the lexicographic (time, distance) cost.

    Per source, a Dijkstra search keyed on (travel_time, distance, node) makes
    tie-breaking deterministic: minimal time first, then minimal distance,
    then the lexicographically smallest node sequence.
    """
    n = net.n
    adj = net.adjacency()
    tt = np.zeros((n, n))
    dist = np.zeros((n, n))
    for s in range(n):
        t_row, d_row = _dijkstra_lex(adj, n, s)
        tt[s, :] = t_row
        dist[s, :] = d_row
    return SkimMatrix(travel_time=tt, distance=dist)


def _dijkstra_lex(adj, n: int, source: int) -> tuple[list[float], list[float]]:
    inf = float("inf")
    best_t = [inf] * n
    best_d = [inf] * n
    best_t[source] = 0.0
    best_d[source] = 0.0
    heap: list[tuple[float, float, int]] = [(0.0, 0.0, source)]
    done = [False] * n
    push = heapq.heappush
    pop = heapq.heappop
    while heap:
        t, d, u = pop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, et, el in adj[u]:
            if done[v]:
                continue
            nt = t + et
            nd = d + el
            if nt < best_t[v] or (nt == best_t[v] and nd < best_d[v]):
                best_t[v] = nt
                best_d[v] = nd
                push(heap, (nt, nd, v))
    return best_t, best_d
