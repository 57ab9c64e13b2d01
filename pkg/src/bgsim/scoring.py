"""Score functions of the bi-directional part model.

All scores are maximised.  ``maps`` may be a ``(J, H, W)`` array or a list of
:class:`~bgsim.heatmap.ConfidenceMap`; the appearance evidence of joint ``i``
at ``p`` is the map value ``maps[i][p]``.

Summation convention: :func:`total_score` adds unary terms in joint order,
then kinetic pair terms in edge-list order, then contextual pair terms in
edge-list order.  Each pair term adds its components in the order they are
written in :func:`kinetic_pair_score` / :func:`contextual_pair_score`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heatmap import as_stack
from .skeleton import EdgeKind, EdgeSpec, PoseConfiguration, SkeletonModel


@dataclass(frozen=True)
class DirectionalScore:
    forward: float
    backward: float
    fused: float

    @classmethod
    def from_pair(cls, forward: float, backward: float) -> "DirectionalScore":
        return cls(float(forward), float(backward), float(fuse_bidirectional(forward, backward)))


def deformation_features(dp) -> np.ndarray:
    dx, dy = float(dp[0]), float(dp[1])
    return np.array([dx, dx * dx, dy, dy * dy])


def occlusion_indicator(o) -> float:
    return 0.0 if int(o) == 2 else 1.0


def _check_pos(stack: np.ndarray, p) -> tuple[int, int]:
    x, y = int(p[0]), int(p[1])
    h, w = stack.shape[1:]
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"position ({x}, {y}) outside {w}x{h} map")
    return x, y


def _edge(model: SkeletonModel, edge) -> EdgeSpec:
    return model.edges[edge] if isinstance(edge, (int, np.integer)) else edge


def _check_types(spec: EdgeSpec, *types):
    for t in types:
        if not 0 <= int(t) < spec.num_types:
            raise ValueError(f"type {t} out of range for edge ({spec.i}, {spec.j}) "
                             f"with {spec.num_types} types")


def unary_score(model: SkeletonModel, maps, joint: int, p, o) -> float:
    stack = as_stack(maps)
    x, y = _check_pos(stack, p)
    o = int(o)
    return (model.unary_weights[joint] * stack[joint, y, x] * occlusion_indicator(o)
            + model.unary_bias[joint, o])


def _deform(w: np.ndarray, dp) -> float:
    mu = deformation_features(dp)
    return float(w[0] * mu[0] + w[1] * mu[1] + w[2] * mu[2] + w[3] * mu[3])


def _displacements(spec: EdgeSpec, p_i, p_j, t_ij: int, t_ji: int):
    r_ij = spec.mean_offsets[0, t_ij]
    r_ji = spec.mean_offsets[1, t_ji]
    d_ij = (p_j[0] - p_i[0] - r_ij[0], p_j[1] - p_i[1] - r_ij[1])
    d_ji = (p_i[0] - p_j[0] - r_ji[0], p_i[1] - p_j[1] - r_ji[1])
    return d_ij, d_ji


def kinetic_pair_score(model: SkeletonModel, maps, edge, p_i, p_j, t_ij, t_ji, o_i, o_j) -> float:
    spec = _edge(model, edge)
    if spec.kind is not EdgeKind.KINETIC:
        raise ValueError(f"edge ({spec.i}, {spec.j}) is not kinetic")
    _check_types(spec, t_ij, t_ji)
    t_ij, t_ji, o_i, o_j = int(t_ij), int(t_ji), int(o_i), int(o_j)
    d_ij, d_ji = _displacements(spec, p_i, p_j, t_ij, t_ji)
    return (_deform(spec.deform_weights[0, t_ij], d_ij)
            + spec.type_weights[0] * spec.type_prior[0, t_ij] * occlusion_indicator(o_i)
            + _deform(spec.deform_weights[1, t_ji], d_ji)
            + spec.type_weights[1] * spec.type_prior[1, t_ji] * occlusion_indicator(o_j)
            + spec.occlusion_bias[t_ij, t_ji, o_i, o_j])


def contextual_pair_score(model: SkeletonModel, maps, edge, p_m, p_n, t_mn, t_nm, o_m, o_n) -> float:
    spec = _edge(model, edge)
    if spec.kind is not EdgeKind.CONTEXTUAL:
        raise ValueError(f"edge ({spec.i}, {spec.j}) is not contextual")
    _check_types(spec, t_mn, t_nm)
    t_mn, t_nm, o_m, o_n = int(t_mn), int(t_nm), int(o_m), int(o_n)
    d_mn, d_nm = _displacements(spec, p_m, p_n, t_mn, t_nm)
    return (_deform(spec.deform_weights[0, t_mn], d_mn)
            + _deform(spec.deform_weights[1, t_nm], d_nm)
            + spec.occlusion_bias[t_mn, t_nm, o_m, o_n])


def pair_score(model: SkeletonModel, maps, edge, p_i, p_j, t_ij, t_ji, o_i, o_j) -> float:
    spec = _edge(model, edge)
    fn = kinetic_pair_score if spec.is_kinetic else contextual_pair_score
    return fn(model, maps, spec, p_i, p_j, t_ij, t_ji, o_i, o_j)


def check_configuration(model: SkeletonModel, stack: np.ndarray, phi: PoseConfiguration) -> None:
    n, n_edges = model.n_joints, len(model.edges)
    if stack.shape[0] < n:
        raise ValueError(f"{stack.shape[0]} maps for {n} joints")
    if phi.positions.shape != (n, 2) or phi.occlusions.shape != (n,):
        raise ValueError("configuration does not match the number of joints")
    if phi.rel_types.shape != (n_edges, 2):
        raise ValueError("configuration does not match the number of edges")
    h, w = stack.shape[1:]
    xs, ys = phi.positions[:, 0], phi.positions[:, 1]
    if np.any(xs < 0) or np.any(xs >= w) or np.any(ys < 0) or np.any(ys >= h):
        raise ValueError("configuration has positions outside the map")
    if np.any(phi.occlusions < 0) or np.any(phi.occlusions > 2):
        raise ValueError("configuration has invalid occlusion codes")
    for e, spec in enumerate(model.edges):
        _check_types(spec, *phi.rel_types[e])


def total_score(model: SkeletonModel, maps, phi: PoseConfiguration) -> float:
    stack = as_stack(maps)
    check_configuration(model, stack, phi)
    pos, occ, types = phi.positions, phi.occlusions, phi.rel_types
    s = 0.0
    for i in range(model.n_joints):
        s += unary_score(model, stack, i, pos[i], occ[i])
    for kind in (EdgeKind.KINETIC, EdgeKind.CONTEXTUAL):
        for e, spec in enumerate(model.edges):
            if spec.kind is kind:
                s += pair_score(model, stack, spec, pos[spec.i], pos[spec.j],
                                types[e, 0], types[e, 1], occ[spec.i], occ[spec.j])
    return float(s)


def best_types(model: SkeletonModel, maps, positions, occlusions) -> np.ndarray:
    """Highest-scoring ``(t_ij, t_ji)`` for each edge given fixed positions and states.

    Ties go to the lexicographically smallest pair.
    """
    stack = as_stack(maps)
    out = np.zeros((len(model.edges), 2), dtype=np.int64)
    for e, spec in enumerate(model.edges):
        best = None
        for a in range(spec.num_types):
            for b in range(spec.num_types):
                v = pair_score(model, stack, spec, positions[spec.i], positions[spec.j], a, b,
                               occlusions[spec.i], occlusions[spec.j])
                if best is None or v > best:
                    best, out[e] = v, (a, b)
    return out


def fuse_bidirectional(forward: float, backward: float) -> float:
    """Ratio ``(F + F') / (|F| + |F'|)``, taken as 0 when both are exactly 0."""
    denom = abs(forward) + abs(backward)
    if denom == 0:
        return 0.0
    # one rounding of a value whose magnitude never exceeds denom keeps |S| <= 1
    return (forward + backward) / denom


def batch_total_score(model: SkeletonModel, maps, configs) -> np.ndarray:
    """:func:`total_score` for many configurations at once, same summation order.

    Configurations are assumed valid (see :func:`check_configuration`).
    """
    stack = as_stack(maps)
    if len(configs) == 0:
        return np.zeros(0)
    pos = np.stack([c.positions for c in configs])        # (K, N, 2)
    occ = np.stack([c.occlusions for c in configs])       # (K, N)
    types = np.stack([c.rel_types for c in configs])      # (K, E, 2)
    ind = np.array([1.0, 1.0, 0.0])
    s = np.zeros(len(configs))
    for i in range(model.n_joints):
        x, y, o = pos[:, i, 0], pos[:, i, 1], occ[:, i]
        s += model.unary_weights[i] * stack[i, y, x] * ind[o] + model.unary_bias[i, o]

    def deform(w, dx, dy):
        return w[:, 0] * dx + w[:, 1] * (dx * dx) + w[:, 2] * dy + w[:, 3] * (dy * dy)

    for kind in (EdgeKind.KINETIC, EdgeKind.CONTEXTUAL):
        for e, spec in enumerate(model.edges):
            if spec.kind is not kind:
                continue
            t1, t2 = types[:, e, 0], types[:, e, 1]
            oi, oj = occ[:, spec.i], occ[:, spec.j]
            pi, pj = pos[:, spec.i], pos[:, spec.j]
            r1, r2 = spec.mean_offsets[0, t1], spec.mean_offsets[1, t2]
            a = deform(spec.deform_weights[0, t1], pj[:, 0] - pi[:, 0] - r1[:, 0],
                       pj[:, 1] - pi[:, 1] - r1[:, 1])
            b = deform(spec.deform_weights[1, t2], pi[:, 0] - pj[:, 0] - r2[:, 0],
                       pi[:, 1] - pj[:, 1] - r2[:, 1])
            bias = spec.occlusion_bias[t1, t2, oi, oj]
            if spec.is_kinetic:
                term = (a + spec.type_weights[0] * spec.type_prior[0, t1] * ind[oi]
                        + b + spec.type_weights[1] * spec.type_prior[1, t2] * ind[oj] + bias)
            else:
                term = a + b + bias
            s += term
    return s
