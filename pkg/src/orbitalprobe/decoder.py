"""Space-time matching decoder for the planar code.

Two routes share one metric (unit weight per data-qubit step and per round):

* :func:`build_defect_graph` + :func:`mwpm` build the complete defect graph
  with one virtual boundary copy per defect and solve it with a blossom
  matcher.  This is the reference path and the one checked against
  exhaustive enumeration.
* :class:`BatchDecoder` hands the sparse space-time lattice to PyMatching
  for bulk Monte Carlo decoding.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import networkx as nx
import numpy as np
import pymatching

from .planar import PauliFrame, PlanarCodeLattice, SyndromeHistory, build_lattice

__all__ = [
    "BatchDecoder",
    "DefectGraph",
    "MatchingResult",
    "apply_correction_and_score",
    "build_defect_graph",
    "exhaustive_matching",
    "mwpm",
    "space_metric",
]


class DecoderError(RuntimeError):
    pass


# --- lattice metric ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpaceMetric:
    """All-pairs face distances and shortest correction paths for one face type.

    ``dist[a, b]`` counts data qubits on a shortest path between faces;
    ``boundary_dist[a]`` to the nearest matching boundary.  ``parent`` rows
    hold BFS trees (with ``-1`` for the root) and ``via`` the data qubit on
    each tree edge.  Index ``n_faces`` stands for the boundary.
    """

    kind: str
    dist: np.ndarray
    boundary_dist: np.ndarray
    parent: np.ndarray
    via: np.ndarray

    def path_qubits(self, a: int, b: int | None) -> list[int]:
        """Data qubits of a shortest path from face ``a`` to face ``b`` (``None``: boundary)."""
        n = self.dist.shape[0]
        target = n if b is None else b
        qubits = []
        node = target
        # walk the BFS tree rooted at ``a`` back from the target
        while node != a:
            qubits.append(int(self.via[a, node]))
            node = int(self.parent[a, node])
        return qubits


@lru_cache(maxsize=32)
def space_metric(distance: int, kind: str) -> SpaceMetric:
    lat = build_lattice(distance)
    h = lat.check_matrix(kind)
    n_faces, n_data = h.shape
    # adjacency through shared data qubits; single-face qubits touch the boundary
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_faces + 1)]
    for q in range(n_data):
        faces = np.flatnonzero(h[:, q])
        if len(faces) == 2:
            a, b = faces
            adj[a].append((b, q))
            adj[b].append((a, q))
        elif len(faces) == 1:
            adj[faces[0]].append((n_faces, q))
            adj[n_faces].append((faces[0], q))
    for row in adj:
        row.sort()
    total = n_faces + 1
    dist = np.full((total, total), -1, dtype=np.int64)
    parent = np.full((total, total), -1, dtype=np.int64)
    via = np.full((total, total), -1, dtype=np.int64)
    for root in range(n_faces):
        dist[root, root] = 0
        queue = deque([root])
        while queue:
            u = queue.popleft()
            if u == n_faces:
                continue  # paths may end at the boundary but not pass through it
            for v, q in adj[u]:
                if dist[root, v] < 0:
                    dist[root, v] = dist[root, u] + 1
                    parent[root, v] = u
                    via[root, v] = q
                    queue.append(v)
    return SpaceMetric(kind, dist[:n_faces, :n_faces].copy(), dist[:n_faces, n_faces].copy(), parent, via)


# --- complete defect graph -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DefectGraph:
    """Defects plus one virtual boundary node each.

    Nodes ``0..m-1`` are defects ``(face, round)``; node ``m + i`` is the
    boundary copy of defect ``i``.  ``weights`` is the symmetric integer
    matrix over all ``2m`` nodes with ``-1`` for a missing edge.
    """

    kind: str
    distance: int
    defects: tuple
    weights: np.ndarray

    @property
    def n_defects(self) -> int:
        return len(self.defects)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def edges(self):
        n = self.n_nodes
        for a in range(n):
            for b in range(a + 1, n):
                if self.weights[a, b] >= 0:
                    yield a, b, int(self.weights[a, b])

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "distance": self.distance,
            "nodes": [{"id": i, "face": f, "round": t} for i, (f, t) in enumerate(self.defects)]
            + [{"id": self.n_defects + i, "boundary_of": i} for i in range(self.n_defects)],
            "edges": [[a, b, w] for a, b, w in self.edges()],
        })

    @classmethod
    def from_defects(cls, kind: str, distance: int, defects) -> "DefectGraph":
        metric = space_metric(distance, kind)
        defects = tuple((int(f), int(t)) for f, t in defects)
        m = len(defects)
        w = np.full((2 * m, 2 * m), -1, dtype=np.int64)
        if m:
            f = np.array([d[0] for d in defects])
            t = np.array([d[1] for d in defects])
            w[:m, :m] = metric.dist[np.ix_(f, f)] + np.abs(t[:, None] - t[None, :])
            w[m:, m:] = 0
            idx = np.arange(m)
            w[idx, m + idx] = metric.boundary_dist[f]
            w[m + idx, idx] = metric.boundary_dist[f]
            np.fill_diagonal(w, -1)
        return cls(kind, distance, defects, w)


def build_defect_graph(history: SyndromeHistory, lattice: PlanarCodeLattice, kind: str = "Z") -> DefectGraph:
    """Defect graph of one face type from a history that ends in the readout round."""
    det = history.defects(kind)
    rounds, faces = np.nonzero(det)
    graph = DefectGraph.from_defects(kind, lattice.distance, zip(faces, rounds))
    if graph.n_nodes % 2:
        raise DecoderError("odd node count after boundary augmentation")
    return graph


@dataclass(frozen=True)
class MatchingResult:
    pairs: tuple
    weight: int
    graph: DefectGraph


def _check_perfect(pairs, n: int) -> None:
    seen = [x for p in pairs for x in p]
    if len(seen) != n or len(set(seen)) != n:
        raise DecoderError("matching is not perfect")


def mwpm(graph: DefectGraph) -> MatchingResult:
    """Exact minimum-weight perfect matching.

    Solved as a maximum-cardinality maximum-weight matching on flipped
    integer weights, which is exact for integer inputs.
    """
    n = graph.n_nodes
    if n == 0:
        return MatchingResult((), 0, graph)
    if n % 2:
        raise DecoderError("odd node count")
    top = int(graph.weights.max()) + 1
    g = nx.Graph()
    g.add_nodes_from(range(n))
    for a, b, w in graph.edges():
        g.add_edge(a, b, weight=top - w)
    found = nx.max_weight_matching(g, maxcardinality=True)
    pairs = tuple(sorted(tuple(sorted(p)) for p in found))
    _check_perfect(pairs, n)
    weight = int(sum(graph.weights[a, b] for a, b in pairs))
    return MatchingResult(pairs, weight, graph)


def exhaustive_matching(graph: DefectGraph) -> int:
    """Minimum perfect-matching weight by enumeration.

    Uses the equivalent reduced problem: each defect either pairs with
    another defect or with its own boundary copy (leftover boundary copies
    pair among themselves for free).
    """
    m = graph.n_defects
    w = graph.weights
    best = [np.iinfo(np.int64).max]

    def rec(remaining: tuple, acc: int) -> None:
        if acc >= best[0]:
            return
        if not remaining:
            best[0] = acc
            return
        a, rest = remaining[0], remaining[1:]
        if w[a, m + a] >= 0:
            rec(rest, acc + int(w[a, m + a]))
        for i, b in enumerate(rest):
            if w[a, b] >= 0:
                rec(rest[:i] + rest[i + 1:], acc + int(w[a, b]))

    rec(tuple(range(m)), 0)
    return int(best[0]) if m else 0


def correction_from_matching(matching: MatchingResult, lattice: PlanarCodeLattice) -> np.ndarray:
    """Data-qubit correction mask; time-like pairs contribute nothing."""
    g = matching.graph
    metric = space_metric(lattice.distance, g.kind)
    m = g.n_defects
    corr = np.zeros(lattice.n_data, dtype=np.uint8)
    for a, b in matching.pairs:
        if a >= m and b >= m:
            continue
        if b >= m:
            path = metric.path_qubits(g.defects[a][0], None)
        else:
            fa, fb = g.defects[a][0], g.defects[b][0]
            path = [] if fa == fb else metric.path_qubits(fa, fb)
        for q in path:
            corr[q] ^= 1
    return corr


def apply_correction_and_score(matching: MatchingResult, lattice: PlanarCodeLattice, final_frame: PauliFrame) -> int:
    """1 if the corrected frame carries a logical error of the decoded type."""
    corr = correction_from_matching(matching, lattice)
    if matching.graph.kind == "Z":
        residual, logical, h = final_frame.x_mask ^ corr, lattice.logical_z, lattice.check_matrix("Z")
    else:
        residual, logical, h = final_frame.z_mask ^ corr, lattice.logical_x, lattice.check_matrix("X")
    if np.any((h.astype(np.int64) @ residual) % 2):
        raise DecoderError("correction leaves a non-trivial syndrome")
    return int(residual[logical].sum() % 2)


# --- bulk decoding ---------------------------------------------------------------

class BatchDecoder:
    """PyMatching on the explicit space-time lattice of one face type.

    Detector ``t * n_faces + s`` is face ``s`` at round ``t``.  Space edges
    carry the data qubit as fault id; time edges carry none.
    """

    def __init__(self, lattice: PlanarCodeLattice, kind: str, n_rounds: int):
        self.lattice = lattice
        self.kind = kind
        self.n_rounds = n_rounds
        h = lattice.check_matrix(kind)
        n_faces, n_data = h.shape
        self.n_faces = n_faces
        m = pymatching.Matching()
        for t in range(n_rounds):
            base = t * n_faces
            for q in range(n_data):
                faces = np.flatnonzero(h[:, q])
                if len(faces) == 2:
                    m.add_edge(base + int(faces[0]), base + int(faces[1]), fault_ids={q}, weight=1.0)
                else:
                    m.add_boundary_edge(base + int(faces[0]), fault_ids={q}, weight=1.0)
            if t + 1 < n_rounds:
                for s in range(n_faces):
                    m.add_edge(base + s, base + n_faces + s, fault_ids=set(), weight=1.0)
        self._matching = m
        self.logical = lattice.logical_z if kind == "Z" else lattice.logical_x

    def corrections(self, defects: np.ndarray) -> np.ndarray:
        """``(B, n_rounds, n_faces)`` defect bits to ``(B, n_data)`` corrections."""
        shots = defects.reshape(defects.shape[0], -1).astype(np.uint8)
        return self._matching.decode_batch(shots).astype(np.uint8)

    def failures(self, defects: np.ndarray, final_mask: np.ndarray) -> np.ndarray:
        residual = final_mask ^ self.corrections(defects)
        return residual[:, self.logical].sum(axis=1) % 2


def defects_from_reports(reports: np.ndarray) -> np.ndarray:
    """Batched defects ``(B, T, n)``: consecutive-round changes, first round against even."""
    out = reports.copy()
    out[:, 1:] ^= reports[:, :-1]
    return out
