"""Per-crop market graph: haversine distances and threshold edges.

Nodes are mandis with coordinates; an undirected edge joins every pair
whose great-circle distance is within the threshold (boundary inclusive).
Node order follows the input list and is preserved everywhere downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import MandiMeta

EARTH_RADIUS_KM = 6371.0


class GraphError(ValueError):
    pass


def _check_coord(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise GraphError(f"coordinates ({lat}, {lon}) out of bounds")


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km on a sphere of radius 6371.0 km."""
    _check_coord(lat1, lon1)
    _check_coord(lat2, lon2)
    p1, l1, p2, l2 = np.radians([lat1, lon1, lat2, lon2])
    h = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2.0) ** 2
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(min(h, 1.0))))


def pairwise_distances_km(mandis: list[MandiMeta]) -> np.ndarray:
    """Dense symmetric matrix of haversine distances (km)."""
    lat = np.radians([m.latitude for m in mandis])
    lon = np.radians([m.longitude for m in mandis])
    dphi = lat[:, None] - lat[None, :]
    dlam = lon[:, None] - lon[None, :]
    h = np.sin(dphi / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlam / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class MandiGraph:
    """Threshold graph over an ordered mandi list; edges are (i, j) with i < j."""

    nodes: list[MandiMeta]
    edges: set[tuple[int, int]]
    threshold_km: float
    _adj: list[list[int]] | None = field(default=None, repr=False, compare=False)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> list[list[int]]:
        if self._adj is None:
            adj: list[list[int]] = [[] for _ in self.nodes]
            for u, v in self.edges:
                adj[u].append(v)
                adj[v].append(u)
            self._adj = [sorted(a) for a in adj]
        return self._adj

    def mean_aggregation_matrix(self) -> np.ndarray:
        """Row-stochastic neighbor-mean operator; all-zero row for isolated nodes."""
        v = self.node_count
        a = np.zeros((v, v))
        for i, neigh in enumerate(self.adjacency()):
            if neigh:
                a[i, neigh] = 1.0 / len(neigh)
        return a

    def without_edges(self) -> "MandiGraph":
        """Ablation copy: same nodes, no edges."""
        return MandiGraph(list(self.nodes), set(), self.threshold_km)


def build_graph(mandis: list[MandiMeta], threshold_km: float) -> MandiGraph:
    """All-pairs threshold graph; distance exactly at the threshold counts."""
    if threshold_km <= 0:
        raise GraphError(f"threshold_km must be positive, got {threshold_km}")
    ids = [m.mandi_id for m in mandis]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise GraphError(f"duplicate mandi_id(s): {dup}")
    d = pairwise_distances_km(mandis)
    iu, ju = np.triu_indices(len(mandis), k=1)
    within = d[iu, ju] <= threshold_km
    edges = {(int(i), int(j)) for i, j in zip(iu[within], ju[within])}
    return MandiGraph(list(mandis), edges, threshold_km)


def neighbors(graph: MandiGraph, node: int) -> list[int]:
    """Sorted adjacent node indices (possibly empty)."""
    if not 0 <= node < graph.node_count:
        raise GraphError(f"node index {node} out of range [0, {graph.node_count})")
    return list(graph.adjacency()[node])


def write_graph(graph: MandiGraph, edges_path: str | Path, nodes_path: str | Path) -> None:
    """Export: TSV edge list with distances plus an order-preserving node file."""
    from .ingest import write_mandi_csv

    write_mandi_csv(nodes_path, graph.nodes)
    d = pairwise_distances_km(graph.nodes)
    with Path(edges_path).open("w", encoding="utf-8") as fh:
        for u, v in sorted(graph.edges):
            fh.write(f"{graph.nodes[u].mandi_id}\t{graph.nodes[v].mandi_id}\t{repr(d[u, v])}\n")


def read_graph(edges_path: str | Path, nodes_path: str | Path, threshold_km: float) -> MandiGraph:
    from .ingest import parse_mandi_csv

    nodes = parse_mandi_csv(nodes_path)
    index = {m.mandi_id: i for i, m in enumerate(nodes)}
    edges = set()
    with Path(edges_path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            u_id, v_id, _dist = line.rstrip("\n").split("\t")
            u, v = index[u_id], index[v_id]
            edges.add((min(u, v), max(u, v)))
    return MandiGraph(nodes, edges, threshold_km)
