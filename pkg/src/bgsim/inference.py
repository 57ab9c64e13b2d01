"""Unrolled-tree inference: unrolling, dynamic programming, hypotheses,
backtracking and rescoring under the loopy model.

Grid cells are flattened row-major, ``p = y * width + x``.  A DP state is a
pair ``(p, o)`` of cell and occlusion code.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .heatmap import as_stack
from .scoring import DirectionalScore, batch_total_score, check_configuration
from .skeleton import N_OCC, PoseConfiguration, SkeletonModel, farthest_joint, kinetic_bfs

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.1
# naive pairwise maximisation is used up to this many cells under backend="auto"
NAIVE_MAX_CELLS = 144


class ContractError(RuntimeError):
    """An input was not produced by the object it is being combined with."""


@dataclass(frozen=True)
class TreeNode:
    id: int
    joint: int
    is_virtual: bool


@dataclass
class ComputationTree:
    nodes: list[TreeNode]
    parent: dict[int, tuple[int, int]]     # node -> (parent node, edge index)
    children: list[list[int]]
    root: int
    depth: list[int]

    @property
    def n_virtual(self) -> int:
        return sum(n.is_virtual for n in self.nodes)

    def copies(self, joint: int) -> list[int]:
        return [n.id for n in self.nodes if n.joint == joint]

    def real_node(self, joint: int) -> int:
        for n in self.nodes:
            if n.joint == joint and not n.is_virtual:
                return n.id
        raise KeyError(joint)

    def edge_link(self) -> dict[int, int]:
        """Edge index -> the child node whose parent link carries it."""
        return {e: child for child, (_, e) in self.parent.items()}

    def reporting_node(self, joint: int) -> int:
        """Copy of ``joint`` that supplies its reported state.

        Only copies hanging from a real parent (or the root itself) qualify; of
        those the one nearest the root wins, then the lowest node id.
        """
        ok = [c for c in self.copies(joint)
              if c == self.root or not self.nodes[self.parent[c][0]].is_virtual]
        return min(ok, key=lambda c: (self.depth[c], c))


def unroll(model: SkeletonModel, root: int) -> ComputationTree:
    """Orient the loopy graph away from ``root`` and break its loops.

    Kinetic edges form the real tree (breadth-first, edge-list order).  Each
    contextual edge then closes a loop; it is redirected from the endpoint
    visited first to a fresh virtual copy of the other endpoint, in edge-list
    order.
    """
    if not 0 <= root < model.n_joints:
        raise ValueError(f"root {root} is not a joint of the model")
    order, kin_parent, _ = kinetic_bfs(model, root)
    if len(order) != model.n_joints:
        raise ValueError("kinetic edges do not connect every joint to the root")
    node_of = {j: k for k, j in enumerate(order)}
    nodes = [TreeNode(k, j, False) for k, j in enumerate(order)]
    parent: dict[int, tuple[int, int]] = {}
    for j, (pj, e) in kin_parent.items():
        parent[node_of[j]] = (node_of[pj], e)
    for e in model.contextual_edges():
        spec = model.edges[e]
        src, dst = (spec.i, spec.j) if node_of[spec.i] < node_of[spec.j] else (spec.j, spec.i)
        k = len(nodes)
        nodes.append(TreeNode(k, dst, True))
        parent[k] = (node_of[src], e)
    children: list[list[int]] = [[] for _ in nodes]
    for k in range(len(nodes)):
        if k in parent:
            children[parent[k][0]].append(k)
    depth = [0] * len(nodes)
    for k in range(1, len(nodes)):
        depth[k] = depth[parent[k][0]] + 1
    return ComputationTree(nodes, parent, children, 0, depth)


# --- dynamic programming -------------------------------------------------------

@dataclass
class DPTables:
    """Per tree node, ``best[n]`` of shape ``(H*W, 3)`` and, for non-root nodes,
    ``ptr[n]`` of shape ``(H*W, 3, 4)`` giving, for each parent state, the chosen
    ``(child cell, child occlusion, t_ij, t_ji)``."""

    tree: ComputationTree
    shape: tuple[int, int]
    best: list[np.ndarray]
    ptr: list[np.ndarray | None]
    backend: str = "naive"


def unary_tables(model: SkeletonModel, stack: np.ndarray, allowed=None) -> np.ndarray:
    """``(N, H*W, 3)`` unary scores; cells masked out by ``allowed`` get ``-inf``."""
    n = model.n_joints
    flat = stack[:n].reshape(n, -1)
    ind = np.array([1.0, 1.0, 0.0])
    u = (model.unary_weights[:, None, None] * flat[:, :, None] * ind[None, None, :]
         + model.unary_bias[:, None, :])
    if allowed is not None:
        mask = np.asarray(allowed, dtype=bool)[:n].reshape(n, -1)
        u = np.where(mask[:, :, None], u, -np.inf)
    return u


def _axis_terms(w_a, w_b, r_a, r_b, delta):
    """Deformation along one axis: w·[d, d²] for both directions of an edge."""
    d1 = delta - r_a
    d2 = -delta - r_b
    return w_a[0] * d1 + w_a[1] * d1 * d1 + w_b[0] * d2 + w_b[1] * d2 * d2


def _message(spec, parent_is_i: bool, child_best: np.ndarray, shape, backend: str):
    """Max-product message from a child into its parent over all child states
    and type pairs.  Returns ``(msg (P, 3), ptr (P, 3, 4))``."""
    height, width = shape
    n_cells = height * width
    n_t = spec.num_types
    ind = np.array([1.0, 1.0, 0.0])
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    # delta = child - parent if the parent is endpoint i, else parent - child;
    # arrays are indexed [parent coord, child coord]
    sgn = 1.0 if parent_is_i else -1.0
    dx = sgn * (xs[None, :] - xs[:, None])
    dy = sgn * (ys[None, :] - ys[:, None])
    cb = child_best.T.reshape(N_OCC, height, width)

    n_tt = n_t * n_t
    m_all = np.empty((n_tt, N_OCC, n_cells))
    arg_all = np.empty((n_tt, N_OCC, n_cells), dtype=np.int64)
    for t_ij in range(n_t):
        for t_ji in range(n_t):
            wa, wb = spec.deform_weights[0, t_ij], spec.deform_weights[1, t_ji]
            ra, rb = spec.mean_offsets[0, t_ij], spec.mean_offsets[1, t_ji]
            gx = _axis_terms(wa[0:2], wb[0:2], ra[0], rb[0], dx)     # (W parent, W child)
            gy = _axis_terms(wa[2:4], wb[2:4], ra[1], rb[1], dy)     # (H parent, H child)
            k = t_ij * n_t + t_ji
            if backend == "naive":
                # full (parent cell, child cell) table
                g = (gx[None, :, None, :] + gy[:, None, :, None]).reshape(n_cells, n_cells)
                for oc in range(N_OCC):
                    v = child_best[None, :, oc] + g
                    a = np.argmax(v, axis=1)
                    arg_all[k, oc] = a
                    m_all[k, oc] = v[np.arange(n_cells), a]
            else:
                # separable: maximise over child x, then over child y
                v1 = cb[:, :, None, :] + gx[None, None, :, :]        # (3, Hc, Wp, Wc)
                ax = np.argmax(v1, axis=3)
                m1 = np.take_along_axis(v1, ax[..., None], axis=3)[..., 0]   # (3, Hc, Wp)
                v2 = m1[:, None, :, :] + gy[None, :, :, None]        # (3, Hp, Hc, Wp)
                ay = np.argmax(v2, axis=2)                           # (3, Hp, Wp)
                m2 = np.take_along_axis(v2, ay[:, :, None, :], axis=2)[:, :, 0, :]
                cx = np.take_along_axis(ax, ay, axis=1)              # child x per parent cell
                arg_all[k] = (ay * width + cx).reshape(N_OCC, n_cells)
                m_all[k] = m2.reshape(N_OCC, n_cells)

    # constants per (t_ij, t_ji, child occlusion, parent occlusion)
    const = np.zeros((n_t, n_t, N_OCC, N_OCC))
    for oc in range(N_OCC):
        for op in range(N_OCC):
            oi, oj = (op, oc) if parent_is_i else (oc, op)
            const[:, :, oc, op] = spec.occlusion_bias[:, :, oi, oj]
            if spec.is_kinetic:
                const[:, :, oc, op] += (
                    spec.type_weights[0] * spec.type_prior[0][:, None] * ind[oi]
                    + spec.type_weights[1] * spec.type_prior[1][None, :] * ind[oj])
    vals = m_all[:, :, None, :] + const.reshape(n_tt, N_OCC, N_OCC)[..., None]
    vals = vals.reshape(n_tt * N_OCC, N_OCC, n_cells)
    # first maximum: smallest (t_ij, t_ji, child occlusion) wins ties
    k = np.argmax(vals, axis=0)                                   # (3 parent occ, P)
    msg = np.take_along_axis(vals, k[None], axis=0)[0].T          # (P, 3)
    tt, oc = np.divmod(k, N_OCC)
    cell = arg_all.reshape(n_tt * N_OCC, n_cells)[k, np.arange(n_cells)[None, :]]
    ptr = np.stack([cell, oc, tt // n_t, tt % n_t], axis=-1).transpose(1, 0, 2)
    return msg, ptr


def dp_pass(tree: ComputationTree, model: SkeletonModel, maps, backend: str = "auto",
            allowed=None) -> DPTables:
    """Leaf-to-root max-sum pass over the computation tree.

    ``best[n][p, o]`` is node ``n``'s unary score plus, for each child in order,
    the best child subtree score combined with the connecting pair score.
    ``backend`` is ``"naive"`` (full cell-pair tables), ``"separable"``
    (row/column maximisation, exploiting the separable deformation) or
    ``"auto"``.
    """
    stack = as_stack(maps)
    if stack.shape[0] < model.n_joints:
        raise ValueError(f"{stack.shape[0]} maps given for {model.n_joints} joints")
    shape = stack.shape[1:]
    if allowed is not None and np.asarray(allowed).shape[1:] != shape:
        raise ValueError("allowed mask dimensions differ from the maps")
    if backend == "auto":
        backend = "naive" if shape[0] * shape[1] <= NAIVE_MAX_CELLS else "separable"
    if backend not in ("naive", "separable"):
        raise ValueError(f"unknown backend {backend!r}")
    unary = unary_tables(model, stack, allowed)
    n_nodes = len(tree.nodes)
    best: list[np.ndarray] = [None] * n_nodes
    ptr: list[np.ndarray | None] = [None] * n_nodes
    # node ids increase from parent to child, so reverse order is leaves first
    for k in reversed(range(n_nodes)):
        table = unary[tree.nodes[k].joint].copy()
        for c in tree.children[k]:
            _, e = tree.parent[c]
            spec = model.edges[e]
            parent_is_i = spec.i == tree.nodes[k].joint
            msg, p = _message(spec, parent_is_i, best[c], shape, backend)
            table += msg
            ptr[c] = p
        best[k] = table
    return DPTables(tree, shape, best, ptr, backend)


# --- hypotheses and backtracking ------------------------------------------------

@dataclass
class Hypothesis:
    root_position: tuple[int, int]
    root_occlusion: int
    root_type_state: dict[int, tuple[int, int]]
    dp_score: float
    tables_id: int = field(default=0, repr=False, compare=False)


def top_hypotheses(tables: DPTables, tree: ComputationTree | None = None,
                   sigma: float = DEFAULT_SIGMA) -> list[Hypothesis]:
    """Best root states per cell, sorted, keeping the top ``ceil(sigma * H)``.

    ``H`` counts root cells with a finite score.  Order: descending score,
    then row, column and occlusion code ascending.
    """
    if not 0 < sigma <= 1:
        raise ValueError(f"sigma must lie in (0, 1], got {sigma}")
    tree = tables.tree if tree is None else tree
    root = tree.root
    table = tables.best[root]
    occ = np.argmax(table, axis=1)
    score = table[np.arange(len(table)), occ]
    cells = np.flatnonzero(np.isfinite(score))
    keep = math.ceil(sigma * len(cells))
    order = cells[np.lexsort((cells, -score[cells]))][:keep]
    width = tables.shape[1]
    out = []
    for p in order:
        o = int(occ[p])
        types = {tree.parent[c][1]: (int(tables.ptr[c][p, o, 2]), int(tables.ptr[c][p, o, 3]))
                 for c in tree.children[root]}
        y, x = divmod(int(p), width)
        out.append(Hypothesis((x, y), o, types, float(score[p]), id(tables)))
    return out


def backtrack_states(tree: ComputationTree, tables: DPTables, h: Hypothesis):
    """Follow argmax pointers from the root.

    Returns ``(states, link_types)`` where ``states[n] = (cell, occlusion)`` for
    every tree node and ``link_types[n] = (t_ij, t_ji)`` for every non-root node.
    """
    width = tables.shape[1]
    x, y = h.root_position
    p = y * width + x
    if (h.tables_id not in (0, id(tables)) or tables.tree is not tree
            or not 0 <= p < len(tables.best[tree.root])
            or tables.best[tree.root][p, h.root_occlusion] != h.dp_score):
        raise ContractError("hypothesis was not produced from these DP tables")
    states = [None] * len(tree.nodes)
    link_types = [None] * len(tree.nodes)
    states[tree.root] = (p, h.root_occlusion)
    for k in range(len(tree.nodes)):
        pk, ok = states[k]
        for c in tree.children[k]:
            cp, co, t1, t2 = tables.ptr[c][pk, ok]
            states[c] = (int(cp), int(co))
            link_types[c] = (int(t1), int(t2))
    return states, link_types


def backtrack(tree: ComputationTree, tables: DPTables, h: Hypothesis,
              model: SkeletonModel | None = None) -> PoseConfiguration:
    """Expand a root hypothesis into a pose configuration.

    Joints with several copies report the state of the copy chosen by
    :meth:`ComputationTree.reporting_node`.  The returned score is the
    hypothesis' unrolled-tree score.
    """
    states, link_types = backtrack_states(tree, tables, h)
    width = tables.shape[1]
    joints = sorted({n.joint for n in tree.nodes})
    n_joints = len(joints)
    positions = np.zeros((n_joints, 2), dtype=np.int64)
    occlusions = np.zeros(n_joints, dtype=np.int64)
    for j in joints:
        cell, o = states[tree.reporting_node(j)]
        y, x = divmod(cell, width)
        positions[j] = (x, y)
        occlusions[j] = o
    links = tree.edge_link()
    n_edges = max(links, default=-1) + 1 if model is None else len(model.edges)
    rel = np.zeros((n_edges, 2), dtype=np.int64)
    for e, child in links.items():
        rel[e] = link_types[child]
    return PoseConfiguration(positions, rel, occlusions, h.dp_score)


def unrolled_score(tree: ComputationTree, model: SkeletonModel, maps, states, link_types) -> float:
    """Score of a full tree assignment: every node's unary plus every link's pair term."""
    from .scoring import pair_score, unary_score

    stack = as_stack(maps)
    width = stack.shape[2]

    def xy(cell):
        y, x = divmod(cell, width)
        return (x, y)

    s = 0.0
    for n in tree.nodes:
        cell, o = states[n.id]
        s += unary_score(model, stack, n.joint, xy(cell), o)
    links = sorted(tree.parent.items(), key=lambda kv: (not model.edges[kv[1][1]].is_kinetic,
                                                         kv[1][1]))
    for child, (par, e) in links:
        spec = model.edges[e]
        a, b = (par, child) if tree.nodes[par].joint == spec.i else (child, par)
        (ca, oa), (cb, ob) = states[a], states[b]
        s += pair_score(model, stack, spec, xy(ca), xy(cb), *link_types[child], oa, ob)
    return float(s)


def tree_scores(tree: ComputationTree, model: SkeletonModel, maps, configs) -> np.ndarray:
    """Unrolled-model score of pose configurations with every virtual copy
    placed on its joint's reported state: the loopy score plus the extra unary
    terms of the virtual nodes."""
    stack = as_stack(maps)
    if not configs:
        return np.zeros(0)
    base = batch_total_score(model, stack, configs)
    virt = [n.joint for n in tree.nodes if n.is_virtual]
    if not virt:
        return base
    pos = np.stack([c.positions for c in configs])
    occ = np.stack([c.occlusions for c in configs])
    extra = np.zeros(len(configs))
    ind = np.array([1.0, 1.0, 0.0])
    for j in virt:
        x, y, o = pos[:, j, 0], pos[:, j, 1], occ[:, j]
        extra += model.unary_weights[j] * stack[j, y, x] * ind[o] + model.unary_bias[j, o]
    return base + extra


def rescore(model: SkeletonModel, maps, configs) -> list[PoseConfiguration]:
    """Replace each score by the loopy-model score and sort descending (stable).

    Invalid configurations are dropped; their count is logged.
    """
    stack = as_stack(maps)
    valid, skipped = [], 0
    for c in configs:
        try:
            check_configuration(model, stack, c)
        except ValueError:
            skipped += 1
            continue
        valid.append(c)
    if skipped:
        log.warning("rescore skipped %d invalid configuration(s)", skipped)
    scores = batch_total_score(model, stack, valid) if valid else []
    out = []
    for c, s in zip(valid, scores):
        c = c.copy()
        c.score = float(s)
        out.append(c)
    out.sort(key=lambda c: -c.score)
    return out


def _dedupe(configs):
    seen, out = set(), []
    for c in configs:
        k = c.key()
        if k not in seen:
            seen.add(k)
            out.append(c)
    return out


def candidates(model: SkeletonModel, maps, root: int, sigma: float = DEFAULT_SIGMA,
               backend: str = "auto", allowed=None):
    """Unroll from ``root``, run the DP, expand the top hypotheses and rescore.

    Returns ``(tree, rescored configurations)``.
    """
    tree = unroll(model, root)
    tables = dp_pass(tree, model, maps, backend=backend, allowed=allowed)
    configs = [backtrack(tree, tables, h, model) for h in top_hypotheses(tables, tree, sigma)]
    return tree, rescore(model, maps, _dedupe(configs))


def infer(model: SkeletonModel, maps, root: int, sigma: float = DEFAULT_SIGMA,
          backend: str = "auto", allowed=None) -> tuple[PoseConfiguration, DirectionalScore]:
    """Forward and backward unrolled inference, fused.

    The forward tree is rooted at ``root``; the backward tree at the joint
    farthest from it.  Each pass expands and rescores its own top hypotheses.
    ``F`` and ``F'`` are the best loopy-model scores the two passes reach, so
    the pooled candidate with the highest loopy score also maximizes
    ``F + F'`` over the candidate sets (ties: forward candidates first).
    """
    stack = as_stack(maps)
    back_root = farthest_joint(model, root)
    _, fwd = candidates(model, stack, root, sigma, backend, allowed)
    bwd = [] if back_root == root else candidates(model, stack, back_root, sigma, backend, allowed)[1]
    pool = _dedupe(fwd + bwd)
    if not pool:
        raise ValueError("no finite root hypothesis; every cell is masked out")
    k = min(range(len(pool)), key=lambda i: (-pool[i].score, i))
    forward = fwd[0].score if fwd else -np.inf
    backward = bwd[0].score if bwd else forward
    return pool[k], DirectionalScore.from_pair(forward, backward)
