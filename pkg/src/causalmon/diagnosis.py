"""Root-cause analysis of a detected fault.

Per-variable reconstruction-error contributions select the fault variables;
the learned graph is thresholded into a discrete one; and a minimal
weakly-connected subgraph covering all fault variables is searched for.
Its zero-in-degree nodes, ranked by how early each variable first exceeded
the residual limit, are the root-cause candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .model import CAUSAL, ModelParams, model_forward
from .monitoring import sliding_windows

EXACT_SEARCH_LIMIT = 20  # max normal-node count for exhaustive enumeration


@dataclass
class ContributionTrace:
    """Per time index and variable: squared-error contribution; rows sum to
    the residual statistic of the same window.  Unscored leading indices
    hold NaN."""

    index: np.ndarray
    values: np.ndarray  # (T, n) with NaN rows for the first w-1 indices

    def scored(self):
        return ~np.isnan(self.values[:, 0])


@dataclass
class DiscreteCausalGraph:
    adjacency: np.ndarray  # (n, n) of {0, 1}
    threshold: float

    @property
    def n(self):
        return self.adjacency.shape[0]


@dataclass
class FaultSubgraph:
    nodes: list
    edges: list  # directed (i, j) pairs induced by the discrete graph, no self-loops
    fault_nodes: list
    source_nodes: list  # zero in-degree within the subgraph, ranked
    normal_count: int
    disconnected: bool = False
    first_excess: dict = field(default_factory=dict)


def variable_contribution(x, x_hat) -> np.ndarray:
    """Per-variable squared-error sums over one window; sums to the window's
    residual statistic."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return ((x - x_hat) ** 2).sum(axis=0)


def contribution_trace(series, params: ModelParams, chunk=256) -> ContributionTrace:
    """Contributions for every index of a normalized series (causal mode)."""
    series = np.asarray(series, dtype=np.float64)
    w = params.window
    windows = sliding_windows(series, w)
    values = np.full(series.shape, np.nan)
    for start in range(0, len(windows), chunk):
        block = windows[start:start + chunk]
        recon, _, _ = model_forward(block, params, mode=CAUSAL)
        values[w - 1 + start:w - 1 + start + len(block)] = \
            ((recon.data - block) ** 2).sum(axis=1)
    return ContributionTrace(index=np.arange(len(series)), values=values)


def fault_variable_set(contribs: ContributionTrace, alpha_spe, t_start, t_stop) -> list:
    """Variables whose contribution exceeds the residual limit at any index
    of the closed interval [t_start, t_stop]."""
    if t_stop < t_start:
        raise ValueError(f"empty diagnosis interval [{t_start}, {t_stop}]")
    if t_start < 0 or t_stop >= len(contribs.index):
        raise ValueError(f"interval [{t_start}, {t_stop}] outside trace of length "
                         f"{len(contribs.index)}")
    block = contribs.values[t_start:t_stop + 1]
    with np.errstate(invalid="ignore"):  # NaN rows (insufficient history) never exceed
        exceeded = (block > alpha_spe).any(axis=0)
    return [int(i) for i in np.flatnonzero(exceeded)]


def first_excess_times(contribs: ContributionTrace, alpha_spe) -> dict:
    """Earliest index at which each variable's contribution first exceeds
    the limit; variables that never do are absent."""
    out = {}
    with np.errstate(invalid="ignore"):
        over = contribs.values > alpha_spe  # NaN compares False
    for var in range(contribs.values.shape[1]):
        hits = np.flatnonzero(over[:, var])
        if hits.size:
            out[int(var)] = int(contribs.index[hits[0]])
    return out


def truncate_graph(adjacency, threshold) -> DiscreteCausalGraph:
    """Binarize edge weights at the threshold (strictly-above keeps the edge)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    return DiscreteCausalGraph(adjacency=(a > threshold).astype(np.int8),
                               threshold=float(threshold))


def _undirected_neighbors(adjacency):
    a = np.asarray(adjacency) > 0
    both = a | a.T
    np.fill_diagonal(both, False)
    return [set(np.flatnonzero(both[i])) for i in range(len(both))]


def _is_connected(nodes, neighbors):
    nodes = set(nodes)
    if len(nodes) <= 1:
        return True
    start = next(iter(nodes))
    seen = {start}
    frontier = [start]
    while frontier:
        current = frontier.pop()
        for nb in neighbors[current] & nodes:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    return seen == nodes


def _components(nodes, neighbors):
    nodes = set(nodes)
    comps = []
    while nodes:
        start = min(nodes)
        seen = {start}
        frontier = [start]
        while frontier:
            current = frontier.pop()
            for nb in neighbors[current] & nodes:
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        comps.append(sorted(seen))
        nodes -= seen
    return comps


def _exact_cover(fault, candidates, neighbors):
    """Smallest candidate subset whose union with the fault set is weakly
    connected; subsets enumerated by size then lexicographic node order."""
    fault = sorted(fault)
    candidates = sorted(candidates)
    for size in range(len(candidates) + 1):
        for combo in combinations(candidates, size):
            nodes = set(fault) | set(combo)
            if _is_connected(nodes, neighbors):
                return sorted(nodes)
    return None


def _greedy_cover(fault, allowed, neighbors):
    """Steiner-style heuristic: repeatedly join the current components with
    the shortest undirected path through allowed nodes."""
    nodes = set(fault)
    while True:
        comps = _components(nodes, neighbors)
        if len(comps) <= 1:
            return sorted(nodes)
        # BFS from the first component through allowed nodes to any other
        sources = set(comps[0])
        targets = nodes - sources
        parent = {s: None for s in sources}
        frontier = sorted(sources)
        reached = None
        while frontier and reached is None:
            nxt = []
            for current in frontier:
                for nb in sorted(neighbors[current]):
                    if nb in parent or nb not in allowed:
                        continue
                    parent[nb] = current
                    if nb in targets:
                        reached = nb
                        break
                    nxt.append(nb)
                if reached is not None:
                    break
            frontier = nxt
        if reached is None:
            return None  # cannot be joined within this node universe
        node = reached
        while node is not None:
            nodes.add(node)
            node = parent[node]


def optimal_subgraph(graph: DiscreteCausalGraph, fault_nodes, first_excess=None) -> FaultSubgraph:
    """Find a weakly connected node set covering every fault variable with
    as few normal variables as possible.

    Exhaustive when at most ``EXACT_SEARCH_LIMIT`` normal nodes exist (ties
    broken toward the lexicographically smallest node set), greedy
    shortest-path joining otherwise.  If the fault variables cannot all be
    joined even in the full graph, each reachable group is covered
    separately and the result is flagged disconnected.  Self-loops are
    ignored throughout: they say nothing about upstream causes.
    """
    fault_nodes = sorted(set(int(v) for v in fault_nodes))
    if not fault_nodes:
        raise ValueError("fault node set is empty")
    n = graph.n
    if fault_nodes[0] < 0 or fault_nodes[-1] >= n:
        raise ValueError(f"fault nodes {fault_nodes} outside graph of size {n}")
    neighbors = _undirected_neighbors(graph.adjacency)

    # restrict to components of the full graph; fault nodes in different
    # components can never be joined
    full_components = _components(range(n), neighbors)
    groups = []
    for comp in full_components:
        in_comp = [v for v in fault_nodes if v in set(comp)]
        if in_comp:
            groups.append((in_comp, comp))
    disconnected = len(groups) > 1

    chosen = set()
    for group_fault, comp in groups:
        normals = [v for v in comp if v not in group_fault]
        if len(normals) <= EXACT_SEARCH_LIMIT:
            cover = _exact_cover(group_fault, normals, neighbors)
        else:
            cover = _greedy_cover(group_fault, set(comp), neighbors)
        if cover is None:  # unreachable within a component cannot happen, but stay safe
            cover = sorted(group_fault)
        chosen.update(cover)

    nodes = sorted(chosen)
    node_set = set(nodes)
    edges = [(int(i), int(j)) for i in nodes for j in nodes
             if i != j and graph.adjacency[i, j] > 0]
    in_degree = {v: 0 for v in nodes}
    for _, j in edges:
        in_degree[j] += 1
    sources = [v for v in nodes if in_degree[v] == 0]
    excess = dict(first_excess or {})
    sources.sort(key=lambda v: (excess.get(v, np.inf), v))
    return FaultSubgraph(
        nodes=nodes,
        edges=edges,
        fault_nodes=[v for v in fault_nodes if v in node_set],
        source_nodes=sources,
        normal_count=len(node_set.difference(fault_nodes)),
        disconnected=disconnected,
        first_excess=excess,
    )


def graph_edge_f1(predicted, truth) -> float:
    """F1 of predicted edges against a ground-truth binary adjacency."""
    p = np.asarray(predicted) > 0
    t = np.asarray(truth) > 0
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)
