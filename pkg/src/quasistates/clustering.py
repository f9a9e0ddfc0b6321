"""Bisecting k-means over state points, state timelines and cluster merging.

Cluster ids are node ids of the bisection tree (root = 0, children appended
in creation order). Live clusters are the current leaves, plus any clusters
created by :func:`merge_clusters`.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .correlation import StateSeries
from .errors import CannotSplitError, ConfigurationError, DataError
from .ingest import FLOAT_FMT


class Bisection(NamedTuple):
    left: np.ndarray  # member positions (into the input array)
    right: np.ndarray
    centers: np.ndarray  # (2, d)
    inertia: float
    restart: int


@dataclass(frozen=True)
class TreeNode:
    id: int
    parent: int | None
    children: tuple
    members: np.ndarray
    center: np.ndarray
    mean_distance: float
    merged_from: tuple = ()

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class MergeRecord:
    new_id: int
    merged: tuple
    ancestor: int


@dataclass(frozen=True)
class ClusterModel:
    nodes: tuple
    leaves: tuple  # live cluster ids, ascending
    labels: np.ndarray
    threshold: float
    seed: int
    frozen: tuple = ()
    merges: tuple = ()

    @property
    def n_clusters(self) -> int:
        return len(self.leaves)

    @property
    def centers(self) -> np.ndarray:
        return np.array([self.nodes[i].center for i in self.leaves])

    def center(self, cluster_id: int) -> np.ndarray:
        self._check_live(cluster_id)
        return self.nodes[cluster_id].center

    def _check_live(self, cluster_id):
        if cluster_id not in self.leaves:
            raise KeyError(f"cluster {cluster_id} is not a live cluster (live: {list(self.leaves)})")

    def ancestors(self, node_id: int) -> list:
        """Node ids from ``node_id`` up to the root, inclusive."""
        node = self.nodes[node_id]
        if node.merged_from:
            start = common_ancestor(self, node.merged_from)
        else:
            start = node_id
        path = [start]
        while self.nodes[path[-1]].parent is not None:
            path.append(self.nodes[path[-1]].parent)
        return path


@dataclass(frozen=True)
class StateTimeline:
    times: np.ndarray
    states: np.ndarray

    def occupancy(self, state_id: int) -> np.ndarray:
        return self.states == state_id


@dataclass(frozen=True)
class DistanceSeries:
    times: np.ndarray
    values: np.ndarray
    reference: int


@dataclass(frozen=True)
class MergeProposal:
    members: tuple
    references: tuple
    minima: tuple = field(default=())  # x* seen from each reference, aligned

    @property
    def support(self) -> int:
        return len(self.references)


def _coords(points):
    if isinstance(points, StateSeries):
        return points.coords, points.t_end
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x, np.arange(len(x))


def _sq_dist_to(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _farthest_pair(x, chunk=512):
    sq = (x * x).sum(axis=1)
    best, pair = -1.0, (0, 0)
    for lo in range(0, len(x), chunk):
        block = x[lo:lo + chunk]
        d2 = sq[lo:lo + chunk, None] + sq[None, :] - 2.0 * block @ x.T
        k = int(np.argmax(d2))
        i, j = divmod(k, len(x))
        if d2[i, j] > best:
            best, pair = float(d2[i, j]), (lo + i, j)
    return pair


def _lloyd(x, centers, max_iter):
    """Plain Lloyd iterations; returns (labels, centers) or None if a cluster empties."""
    k = len(centers)
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dist_to(x, centers), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            return None
        centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    return labels, centers


def kmeans2(points, seed=0, n_restarts: int = 10, max_iter: int = 200) -> Bisection:
    """Split ``points`` in two with Lloyd's algorithm.

    Restart 0 starts from the two mutually farthest points; restarts
    1..n_restarts-1 from random pairs of distinct points drawn with
    ``seed``. The split with the smallest within-cluster sum of squares
    wins (ties go to the lower restart index). ``left`` is the half that
    contains the lowest point position.
    """
    x, _ = _coords(points)
    if len(x) < 2:
        raise CannotSplitError("need at least two points to split")
    i, j = _farthest_pair(x)
    if not np.any(x[i] != x[j]):
        raise CannotSplitError("all points coincide")
    rng = np.random.default_rng(seed)
    best = None
    for restart in range(n_restarts):
        if restart > 0:
            i = int(rng.integers(len(x)))
            distinct = np.flatnonzero(np.any(x != x[i], axis=1))
            j = int(distinct[rng.integers(len(distinct))])
        fit = _lloyd(x, np.array([x[i], x[j]]), max_iter)
        if fit is None:
            continue
        labels, centers = fit
        inertia = float(((x - centers[labels]) ** 2).sum())
        if best is None or inertia < best[0]:
            best = (inertia, labels, centers, restart)
    if best is None:
        raise CannotSplitError("every restart collapsed to a single cluster")
    inertia, labels, centers, restart = best
    if labels[0] != 0:
        labels = 1 - labels
        centers = centers[::-1]
    return Bisection(
        np.flatnonzero(labels == 0), np.flatnonzero(labels == 1), centers, inertia, restart
    )


def _node(x, node_id, parent, members, merged_from=()):
    center = x[members].mean(axis=0)
    mean_d = float(np.linalg.norm(x[members] - center, axis=1).mean())
    return TreeNode(node_id, parent, (), np.asarray(members, dtype=int), center, mean_d, merged_from)


def _refresh_internal(x, nodes, node_id):
    """Recompute members/center of internal nodes bottom-up after a polish."""
    node = nodes[node_id]
    if not node.children:
        return node.members
    members = np.sort(np.concatenate([_refresh_internal(x, nodes, c) for c in node.children]))
    fresh = _node(x, node_id, node.parent, members)
    nodes[node_id] = replace(fresh, children=node.children)
    return members


def bisecting_kmeans(
    points,
    threshold: float,
    seed: int = 0,
    n_restarts: int = 10,
    max_iter: int = 200,
    polish: bool = True,
    max_rounds: int = 20,
) -> ClusterModel:
    """Divisive 2-means clustering with a mean-distance stop criterion.

    The leaf with the largest mean member-to-center distance is split until
    every leaf's mean distance is below ``threshold``. With ``polish`` the
    leaves are then refined by global Lloyd iterations, so that every point
    is labeled with its nearest center and every center is the mean of its
    members; splitting resumes if a refined leaf exceeds the threshold.
    """
    if not threshold > 0:
        raise ConfigurationError("threshold must be positive")
    x, _ = _coords(points)
    if len(x) == 0:
        raise DataError("no points to cluster")
    nodes = [_node(x, 0, None, np.arange(len(x)))]
    leaves = [0]
    frozen = set()
    for _ in range(max_rounds):
        while True:
            open_ = [i for i in leaves if nodes[i].mean_distance >= threshold and i not in frozen]
            if not open_:
                break
            target = max(open_, key=lambda i: (nodes[i].mean_distance, -i))
            members = nodes[target].members
            try:
                split = kmeans2(x[members], seed=[seed, target], n_restarts=n_restarts,
                                max_iter=max_iter)
            except CannotSplitError as exc:
                warnings.warn(f"cluster {target} left unsplit: {exc}", RuntimeWarning)
                frozen.add(target)
                continue
            left = _node(x, len(nodes), target, members[split.left])
            right = _node(x, len(nodes) + 1, target, members[split.right])
            nodes[target] = replace(nodes[target], children=(left.id, right.id))
            nodes.extend([left, right])
            leaves.remove(target)
            leaves.extend([left.id, right.id])
        if not polish or len(leaves) < 2:
            break
        leaves.sort()
        fit = _lloyd(x, np.array([nodes[i].center for i in leaves]), max_iter)
        if fit is None:
            break
        labels, _centers = fit
        changed = False
        for pos, leaf in enumerate(leaves):
            members = np.flatnonzero(labels == pos)
            if not np.array_equal(members, nodes[leaf].members):
                changed = True
            nodes[leaf] = _node(x, leaf, nodes[leaf].parent, members)
        _refresh_internal(x, nodes, 0)
        if not changed or all(
            nodes[i].mean_distance < threshold or i in frozen for i in leaves
        ):
            break
    leaves.sort()
    labels = np.empty(len(x), dtype=int)
    for leaf in leaves:
        labels[nodes[leaf].members] = leaf
    return ClusterModel(tuple(nodes), tuple(leaves), labels, float(threshold), seed,
                        tuple(sorted(frozen)))


def assign_states(points, model: ClusterModel) -> StateTimeline:
    """Label each point with its nearest live center; ties go to the lowest id."""
    x, times = _coords(points)
    centers = model.centers
    if x.shape[1] != centers.shape[1]:
        raise DataError("points and model differ in dimension")
    d = np.sqrt(_sq_dist_to(x, centers))
    ids = np.asarray(model.leaves)
    return StateTimeline(times, ids[np.argmin(d, axis=1)])


def center_distance_series(points, model: ClusterModel, cluster_id: int) -> DistanceSeries:
    x, times = _coords(points)
    mu = model.center(cluster_id)
    return DistanceSeries(times, np.linalg.norm(x - mu, axis=1), cluster_id)


def common_ancestor(model: ClusterModel, ids) -> int:
    paths = [model.ancestors(i) for i in ids]
    shared = set(paths[0]).intersection(*paths[1:])
    # the deepest shared node is the first one met walking up from any member
    return next(n for n in paths[0] if n in shared)


def merge_clusters(model: ClusterModel, ids, points=None) -> ClusterModel:
    """Combine live clusters into one whose center is the mean of all members.

    ``points`` must be the array the model was fitted on; it is needed to
    recompute the merged center and mean distance.
    """
    ids = tuple(sorted(set(int(i) for i in ids)))
    if len(ids) < 2:
        raise ConfigurationError("merge needs at least two cluster ids")
    for i in ids:
        model._check_live(i)
    if points is None:
        raise DataError("merge_clusters needs the fitted points")
    x, _ = _coords(points)
    members = np.sort(np.concatenate([model.nodes[i].members for i in ids]))
    new_id = len(model.nodes)
    ancestor = common_ancestor(model, ids)
    node = _node(x, new_id, None, members, merged_from=ids)
    labels = model.labels.copy()
    labels[members] = new_id
    leaves = tuple(sorted([i for i in model.leaves if i not in ids] + [new_id]))
    return replace(
        model,
        nodes=model.nodes + (node,),
        leaves=leaves,
        labels=labels,
        merges=model.merges + (MergeRecord(new_id, ids, ancestor),),
    )


def _minima_of(curve):
    minima = getattr(curve, "minima", curve)
    return [float(m[0]) for m in minima]


def propose_merges(model: ClusterModel, potentials, tol: float, min_support: int = 2):
    """Suggest merging clusters whose centers bracket one potential minimum.

    ``potentials`` maps a reference cluster id to its potential curve (or a
    plain list of minima ``(x*, phi, prominence)``) estimated on a common
    time window. For every minimum x* seen from reference r, the live
    clusters j != r with | ||mu_j - mu_r|| - x* | <= tol are collected; a set
    of two or more that descends from one non-root tree node becomes a
    candidate. Candidates seen from at least ``min_support`` distinct
    references are returned, strongest support first. Candidates that are
    strict subsets of another returned candidate are dropped.
    """
    root = 0
    found = {}
    for ref in sorted(potentials):
        mu_r = model.center(ref)
        others = [j for j in model.leaves if j != ref]
        dists = {j: float(np.linalg.norm(model.nodes[j].center - mu_r)) for j in others}
        for x_star in _minima_of(potentials[ref]):
            group = tuple(j for j in others if abs(dists[j] - x_star) <= tol)
            if len(group) < 2 or common_ancestor(model, group) == root:
                continue
            found.setdefault(group, {}).setdefault(ref, x_star)
    supported = {g: refs for g, refs in found.items() if len(refs) >= min_support}
    keep = [
        g for g in supported
        if not any(set(g) < set(other) for other in supported)
    ]
    proposals = [
        MergeProposal(g, tuple(sorted(supported[g])), tuple(supported[g][r] for r in sorted(supported[g])))
        for g in keep
    ]
    proposals.sort(key=lambda p: (-p.support, p.members))
    return proposals


def tree_text(model: ClusterModel) -> str:
    """Indented dump of the bisection tree (members and mean distance per node)."""
    lines = []

    def visit(node_id, depth):
        node = model.nodes[node_id]
        tag = " *" if node_id in model.leaves else ""
        if node_id in model.frozen:
            tag += " (unsplittable)"
        lines.append(
            f"{'  ' * depth}[{node_id}] n={node.size} mean_distance={node.mean_distance:.6f}{tag}"
        )
        for child in node.children:
            visit(child, depth + 1)

    visit(0, 0)
    for rec in model.merges:
        node = model.nodes[rec.new_id]
        lines.append(
            f"merge [{rec.new_id}] <- {list(rec.merged)} (ancestor {rec.ancestor}) "
            f"n={node.size} mean_distance={node.mean_distance:.6f}"
        )
    return "\n".join(lines) + "\n"


def save_model(path, model: ClusterModel):
    payload = {
        "threshold": model.threshold,
        "seed": model.seed,
        "leaves": list(model.leaves),
        "frozen": list(model.frozen),
        "labels": model.labels.tolist(),
        "merges": [[m.new_id, list(m.merged), m.ancestor] for m in model.merges],
        "nodes": [
            {
                "id": n.id,
                "parent": n.parent,
                "children": list(n.children),
                "members": n.members.tolist(),
                "center": [float(v) for v in n.center],
                "mean_distance": n.mean_distance,
                "merged_from": list(n.merged_from),
            }
            for n in model.nodes
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> ClusterModel:
    p = json.loads(Path(path).read_text(encoding="utf-8"))
    nodes = tuple(
        TreeNode(
            n["id"], n["parent"], tuple(n["children"]), np.array(n["members"], dtype=int),
            np.array(n["center"], dtype=float), float(n["mean_distance"]), tuple(n["merged_from"]),
        )
        for n in p["nodes"]
    )
    return ClusterModel(
        nodes, tuple(p["leaves"]), np.array(p["labels"], dtype=int), float(p["threshold"]),
        p["seed"], tuple(p["frozen"]),
        tuple(MergeRecord(a, tuple(b), c) for a, b, c in p["merges"]),
    )


def write_timeline(path, timeline: StateTimeline):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("t,state_id\n")
        for t, s in zip(timeline.times, timeline.states):
            fh.write(f"{int(t)},{int(s)}\n")


def read_timeline(path) -> StateTimeline:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=int, ndmin=2)
    return StateTimeline(data[:, 0], data[:, 1])


def write_centers(path, model: ClusterModel):
    d = model.centers.shape[1]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("state_id," + ",".join(f"x{i}" for i in range(d)) + "\n")
        for i in model.leaves:
            fh.write(f"{i}," + ",".join(FLOAT_FMT % v for v in model.nodes[i].center) + "\n")


def write_proposals(path, proposals):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("reference_id,minimum_x,member_ids,support_count\n")
        for p in proposals:
            members = ";".join(str(m) for m in p.members)
            for ref, x_star in zip(p.references, p.minima):
                fh.write(f"{ref},{FLOAT_FMT % x_star},{members},{p.support}\n")


def read_proposals(path):
    grouped = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    for line in lines:
        ref, x_star, members, _support = line.split(",")
        key = tuple(int(m) for m in members.split(";"))
        grouped.setdefault(key, []).append((int(ref), float(x_star)))
    return [
        MergeProposal(k, tuple(r for r, _ in v), tuple(x for _, x in v)) for k, v in grouped.items()
    ]
