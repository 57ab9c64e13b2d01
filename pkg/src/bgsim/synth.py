"""Synthetic scenes with known ground truth, and exhaustive inference oracles.

Random numbers come from numpy's PCG64 bit generator
(``numpy.random.default_rng(seed)``), so a scene is a pure function of its
:class:`SceneSpec` on every platform numpy supports.

Scene rendering per joint state:

- visible (0): Gaussian peak of amplitude 1 at the true cell
- self-occluded (1): weaker peak moved toward the nearest other joint of the
  same person
- occluded by other objects (2): peak amplitude ``occluded_amplitude``
  (at most 0.15), or no peak at all when it is 0

Uniform clutter in ``[0, clutter)`` is added on top of every map.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2
from scipy.optimize import linear_sum_assignment

from .heatmap import ConfidenceMap, as_stack, encode_cmf
from .metrics import GroundTruthPerson
from .skeleton import (N_OCC, EdgeSpec, Joint, PoseConfiguration, SkeletonModel,
                       check, kinetic_bfs)

log = logging.getLogger(__name__)

MAX_OCCLUDED_AMPLITUDE = 0.15
SELF_OCCLUDED_AMPLITUDE = 0.6
SELF_OCCLUSION_SHIFT = 2.0
PLACEMENT_ATTEMPTS = 2000
FIT_MIN_SCENES = 10
FIT_ITERATIONS = 50
FIT_SEED = 0

# brute_force_infer limits
CAP_JOINTS = 4
CAP_GRID = 8
CAP_TYPES = 2


@dataclass(frozen=True)
class SceneSpec:
    grid: tuple[int, int] = (48, 32)
    n_persons: int = 1
    occlusion_rate: float = 0.0
    offset_noise_sigma: float = 0.5
    peak_sigma: float = 1.5
    seed: int = 0
    # extensions: self-occlusion share, an exact per-person count of
    # other-occluded joints (overrides occlusion_rate), rendering knobs
    self_occlusion_rate: float = 0.0
    occluded_per_person: int | None = None
    occluded_amplitude: float = 0.0
    clutter: float = 0.1
    min_separation: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        problems = []
        if len(self.grid) != 2 or min(self.grid) < 1:
            problems.append(f"grid must be two positive sizes, got {self.grid}")
        if self.n_persons < 1:
            problems.append(f"n_persons must be >= 1, got {self.n_persons}")
        for name in ("occlusion_rate", "self_occlusion_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.occlusion_rate + self.self_occlusion_rate > 1.0:
            problems.append("occlusion_rate + self_occlusion_rate exceeds 1")
        if self.offset_noise_sigma < 0:
            problems.append("offset_noise_sigma must be >= 0")
        if not self.peak_sigma > 0:
            problems.append("peak_sigma must be > 0")
        if not 0.0 <= self.occluded_amplitude <= MAX_OCCLUDED_AMPLITUDE:
            problems.append(f"occluded_amplitude must lie in [0, {MAX_OCCLUDED_AMPLITUDE}]")
        if self.clutter < 0 or self.min_separation < 0:
            problems.append("clutter and min_separation must be >= 0")
        if self.occluded_per_person is not None and self.occluded_per_person < 0:
            problems.append("occluded_per_person must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            problems.append("seed must be a 64-bit unsigned integer")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)


@dataclass
class Scene:
    spec: SceneSpec
    gts: list[GroundTruthPerson]
    maps: list[ConfidenceMap]
    true_positions: list[np.ndarray] = field(default_factory=list)   # unrounded (N, 2)
    types: list[dict[int, int]] = field(default_factory=list)        # edge -> sampled type

    @property
    def stack(self) -> np.ndarray:
        return as_stack(self.maps)

    def gt_positions(self, person: int) -> np.ndarray:
        return self.gts[person].keypoints[:, :2].astype(np.int64)

    def gt_occlusions(self, person: int) -> np.ndarray:
        return self.gts[person].occlusion


def _mean_offset(spec: EdgeSpec, direction: int) -> np.ndarray:
    return spec.type_prior[direction] @ spec.mean_offsets[direction] / spec.type_prior[direction].sum()


def _canonical_extent(model: SkeletonModel) -> np.ndarray:
    """Joint positions relative to joint 0 using prior-mean offsets."""
    order, parent, _ = kinetic_bfs(model, 0)
    pos = np.zeros((model.n_joints, 2))
    for j in order[1:]:
        p, e = parent[j]
        spec = model.edges[e]
        pos[j] = pos[p] + _mean_offset(spec, 0 if spec.i == p else 1)
    return pos


def _place_roots(spec: SceneSpec, model: SkeletonModel, rng) -> list[np.ndarray]:
    width, height = spec.grid
    ext = _canonical_extent(model)
    lo = np.maximum(-np.floor(ext.min(axis=0)), 0)
    hi = np.array([width - 1, height - 1]) - np.ceil(ext.max(axis=0))
    hi = np.where(hi < lo, np.array([width - 1, height - 1]), hi)
    lo = np.where(hi == np.array([width - 1, height - 1]), np.minimum(lo, 0), lo)
    roots: list[np.ndarray] = []
    attempts = 0
    while len(roots) < spec.n_persons:
        if attempts >= PLACEMENT_ATTEMPTS:
            raise ValueError(f"grid {spec.grid} too small for {spec.n_persons} persons at "
                             f"minimum separation {spec.min_separation}")
        attempts += 1
        cand = np.array([rng.integers(lo[0], hi[0] + 1), rng.integers(lo[1], hi[1] + 1)],
                        dtype=np.float64)
        if all(np.hypot(*(cand - r)) >= spec.min_separation for r in roots):
            roots.append(cand)
    return roots


def _grow(model: SkeletonModel, root_pos, noise: float, rng):
    order, parent, _ = kinetic_bfs(model, 0)
    pos = np.zeros((model.n_joints, 2))
    pos[0] = root_pos
    types = {}
    for j in order[1:]:
        p, e = parent[j]
        spec = model.edges[e]
        d = 0 if spec.i == p else 1
        prior = spec.type_prior[d] / spec.type_prior[d].sum()
        t = int(rng.choice(spec.num_types, p=prior))
        types[e] = t
        pos[j] = pos[p] + spec.mean_offsets[d, t] + rng.normal(0.0, 1.0, 2) * noise
    return pos, types


def _occlusion_states(spec: SceneSpec, n: int, rng) -> np.ndarray:
    if spec.occluded_per_person is not None:
        occ = np.zeros(n, dtype=np.int64)
        occ[rng.choice(n, size=min(spec.occluded_per_person, n), replace=False)] = 2
        return occ
    u = rng.random(n)
    occ = np.zeros(n, dtype=np.int64)
    occ[u < spec.occlusion_rate + spec.self_occlusion_rate] = 1
    occ[u < spec.occlusion_rate] = 2
    return occ


def _gaussian(width, height, center, sigma, amplitude):
    xs = np.arange(width, dtype=np.float64) - center[0]
    ys = np.arange(height, dtype=np.float64) - center[1]
    return amplitude * np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))


def generate_scene(spec: SceneSpec, model: SkeletonModel | None = None) -> Scene:
    """Sample persons, grow their skeletons, assign occlusion states and render maps."""
    if model is None:
        from .skeleton import default_model
        model = default_model()
    rng = np.random.default_rng(int(spec.seed))
    width, height = spec.grid
    n = model.n_joints
    roots = _place_roots(spec, model, rng)
    people = []
    for r in roots:
        true_pos, types = _grow(model, r, spec.offset_noise_sigma, rng)
        cells = np.rint(true_pos).astype(np.int64)
        cells[:, 0] = np.clip(cells[:, 0], 0, width - 1)
        cells[:, 1] = np.clip(cells[:, 1], 0, height - 1)
        occ = _occlusion_states(spec, n, rng)
        people.append((true_pos, types, cells, occ))

    maps = np.zeros((n, height, width))
    for _, _, cells, occ in people:
        for j in range(n):
            center = cells[j].astype(np.float64)
            if occ[j] == 0:
                amp = 1.0
            elif occ[j] == 2:
                amp = spec.occluded_amplitude
            else:
                amp = SELF_OCCLUDED_AMPLITUDE
                others = np.delete(cells, j, axis=0).astype(np.float64)
                d = others - center
                dist = np.hypot(d[:, 0], d[:, 1])
                k = int(np.argmin(dist))
                if dist[k] > 0:
                    center = center + d[k] / dist[k] * min(SELF_OCCLUSION_SHIFT, dist[k])
                center = np.rint(center)
            if amp > 0:
                maps[j] = np.maximum(maps[j], _gaussian(width, height, center, spec.peak_sigma, amp))
    if spec.clutter > 0:
        maps += rng.uniform(0.0, spec.clutter, size=maps.shape)

    gts, true_positions, types = [], [], []
    for true_pos, tp, cells, occ in people:
        vis = np.where(occ == 0, 2, 1)
        kp = np.column_stack([cells, vis]).astype(np.float64)
        span = cells.max(axis=0) - cells.min(axis=0) + 1
        head = float(np.hypot(*(cells[0] - cells[1]))) if n > 1 else 1.0
        gts.append(GroundTruthPerson(kp, math.sqrt(float(span[0] * span[1])),
                                     max(head, 1.0), occ))
        true_positions.append(true_pos)
        types.append(tp)
    cmaps = [ConfidenceMap(maps[j], j) for j in range(n)]
    return Scene(spec, gts, cmaps, true_positions, types)


# --- serialization -------------------------------------------------------------

def scene_ground_truth(scene: Scene, image_id: str) -> dict:
    return {"id": image_id, "width": scene.spec.grid[0], "height": scene.spec.grid[1],
            "persons": [{"keypoints": g.keypoints.astype(int).tolist(),
                         "occlusion": g.occlusion.tolist(), "scale": g.scale,
                         "head_size": g.head_size} for g in scene.gts]}


def scene_files(scene: Scene, image_id: str) -> tuple[bytes, bytes]:
    """CMF bytes and ground-truth JSON bytes for one scene."""
    gt = {"images": [scene_ground_truth(scene, image_id)]}
    return encode_cmf(scene.maps), (json.dumps(gt, indent=1, sort_keys=True) + "\n").encode()


# --- offset fitting ------------------------------------------------------------

def fit_offsets(scenes, model: SkeletonModel, seed: int = FIT_SEED) -> SkeletonModel:
    """Re-estimate every directed edge's per-type mean offsets from scenes.

    Offsets are taken from the unrounded generator positions and clustered
    with k-means (k-means++ start, fixed seed).  Clusters are matched to the
    existing types by minimum total distance to the prior offsets.  Edges with
    fewer samples than types, or whose clustering degenerates, keep their prior
    offsets; they are listed in ``meta["offsets_kept_prior"]``.
    """
    scenes = list(scenes)
    if len(scenes) < FIT_MIN_SCENES:
        raise ValueError(f"fit_offsets needs at least {FIT_MIN_SCENES} scenes, got {len(scenes)}")
    kept = []
    edges = []
    for e, spec in enumerate(model.edges):
        pts = [np.asarray(p, dtype=np.float64) for s in scenes for p in s.true_positions]
        rel = np.array([p[spec.j] - p[spec.i] for p in pts]).reshape(-1, 2)
        offsets = spec.mean_offsets.copy()
        ok = True
        for d, samples in ((0, rel), (1, -rel)):
            fitted = _cluster(samples, spec.mean_offsets[d], seed)
            if fitted is None:
                ok = False
            else:
                offsets[d] = fitted
        if not ok:
            kept.append(e)
            log.warning("edge %d (%d, %d) keeps prior offsets", e, spec.i, spec.j)
        edges.append(replace(spec, mean_offsets=offsets))
    meta = dict(model.meta)
    meta["offsets_kept_prior"] = kept
    return replace(model, edges=edges, meta=meta)


def _cluster(samples: np.ndarray, prior: np.ndarray, seed: int):
    k = len(prior)
    if len(samples) < k:
        return None
    if k == 1:
        return samples.mean(axis=0, keepdims=True)
    try:
        centroids, _ = kmeans2(samples, k, iter=FIT_ITERATIONS, minit="++",
                               missing="raise", seed=np.random.default_rng(seed))
    except ClusterError:
        return None
    cost = np.linalg.norm(prior[:, None, :] - centroids[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    out = np.empty_like(prior)
    out[rows] = centroids[cols]
    return out


# --- exhaustive oracles --------------------------------------------------------

def _state_xy(n_states: int, width: int):
    s = np.arange(n_states)
    cell, occ = np.divmod(s, N_OCC)
    y, x = np.divmod(cell, width)
    return x.astype(np.float64), y.astype(np.float64), occ


def _unary_vector(model, stack, joint):
    width = stack.shape[2]
    n_states = stack.shape[1] * width * N_OCC
    x, y, occ = _state_xy(n_states, width)
    ind = (occ != 2).astype(np.float64)
    val = stack[joint, y.astype(int), x.astype(int)]
    return model.unary_weights[joint] * val * ind + model.unary_bias[joint, occ]


def _pair_table(spec: EdgeSpec, stack):
    """``(S_i, S_j)`` pair score maximised over type pairs, with the argmax
    ``(t_ij, t_ji)`` (first maximum in lexicographic type order)."""
    width = stack.shape[2]
    n_states = stack.shape[1] * width * N_OCC
    x, y, occ = _state_xy(n_states, width)
    xi, yi, oi = x[:, None], y[:, None], occ[:, None]
    xj, yj, oj = x[None, :], y[None, :], occ[None, :]
    ind_i = (oi != 2).astype(np.float64)
    ind_j = (oj != 2).astype(np.float64)
    best = np.full((n_states, n_states), -np.inf)
    arg = np.zeros((n_states, n_states, 2), dtype=np.int64)
    for a, b in itertools.product(range(spec.num_types), repeat=2):
        r1, r2 = spec.mean_offsets[0, a], spec.mean_offsets[1, b]
        w1, w2 = spec.deform_weights[0, a], spec.deform_weights[1, b]
        dx1, dy1 = xj - xi - r1[0], yj - yi - r1[1]
        dx2, dy2 = xi - xj - r2[0], yi - yj - r2[1]
        f1 = w1[0] * dx1 + w1[1] * (dx1 * dx1) + w1[2] * dy1 + w1[3] * (dy1 * dy1)
        f2 = w2[0] * dx2 + w2[1] * (dx2 * dx2) + w2[2] * dy2 + w2[3] * (dy2 * dy2)
        bias = spec.occlusion_bias[a, b][oi, oj]
        if spec.is_kinetic:
            v = (f1 + spec.type_weights[0] * spec.type_prior[0, a] * ind_i
                 + f2 + spec.type_weights[1] * spec.type_prior[1, b] * ind_j + bias)
        else:
            v = f1 + f2 + bias
        better = v > best
        best = np.where(better, v, best)
        arg[better] = (a, b)
    return best, arg


def _exhaustive(unaries, pairs, chunk_budget: int = 4_000_000):
    """Maximise ``sum(unaries[u][s_u]) + sum(table[s_a, s_b])`` over all joint
    states by dense enumeration.  Terms are added unaries first, then pairs, in
    the given order.  Returns ``(score, states)`` of the first maximum in
    lexicographic state order, and the number of states attaining it."""
    sizes = [len(u) for u in unaries]
    n_units = len(unaries)
    rest = int(np.prod(sizes[1:], dtype=np.int64)) if n_units > 1 else 1
    step = max(1, chunk_budget // rest)
    best_val, best_idx, n_best = -np.inf, None, 0

    def axis_view(vec, unit, ndim):
        shape = [1] * ndim
        shape[unit] = -1
        return vec.reshape(shape)

    for start in range(0, sizes[0], step):
        stop = min(sizes[0], start + step)
        views = [unaries[0][start:stop]] + list(unaries[1:])
        total = np.zeros([len(views[0])] + sizes[1:])
        for u in range(n_units):
            total = total + axis_view(views[u], u, n_units)
        for a, b, table in pairs:
            t = table[start:stop] if a == 0 else table
            t = t[:, start:stop] if b == 0 else t
            shape = [1] * n_units
            shape[a], shape[b] = t.shape
            if a > b:
                t = t.T
            total = total + t.reshape(shape)
        k = int(np.argmax(total))
        if total.flat[k] > best_val:
            best_val = float(total.flat[k])
            idx = list(np.unravel_index(k, total.shape))
            idx[0] += start
            best_idx = [int(i) for i in idx]
            n_best = 0
        if total.flat[k] == best_val:
            n_best += int(np.count_nonzero(total == best_val))
    return best_val, best_idx, n_best


def brute_force_infer(model: SkeletonModel, maps, return_count: bool = False):
    """Exact maximiser of the loopy-model total score by enumeration.

    Joints are enumerated as ``(cell, occlusion)`` states; the best type pair
    of each edge is chosen per state pair, which is exact because each type
    pair enters a single term.  Ties resolve to the lexicographically first
    configuration in (joint 0 state, joint 1 state, ...) order.  With
    ``return_count`` the number of maximising joint states is returned too
    (type ties are not counted).
    """
    stack = as_stack(maps)
    height, width = stack.shape[1:]
    if model.n_joints > CAP_JOINTS or width > CAP_GRID or height > CAP_GRID \
            or model.max_types() > CAP_TYPES:
        raise ValueError(f"instance exceeds the brute-force cap ({CAP_JOINTS} joints, "
                         f"{CAP_GRID}x{CAP_GRID} grid, {CAP_TYPES} types)")
    if stack.shape[0] < model.n_joints:
        raise ValueError(f"{stack.shape[0]} maps given for {model.n_joints} joints")
    unaries = [_unary_vector(model, stack, j) for j in range(model.n_joints)]
    order = ([e for e in model.kinetic_edges()] + [e for e in model.contextual_edges()])
    tables = {e: _pair_table(model.edges[e], stack) for e in order}
    pairs = []
    for e in order:
        spec = model.edges[e]
        best, _ = tables[e]
        pairs.append((spec.i, spec.j, best))
    score, states, n_best = _exhaustive(unaries, pairs)
    positions = np.zeros((model.n_joints, 2), dtype=np.int64)
    occ = np.zeros(model.n_joints, dtype=np.int64)
    for j, s in enumerate(states):
        cell, occ[j] = divmod(s, N_OCC)
        positions[j] = (cell % width, cell // width)
    rel = np.zeros((len(model.edges), 2), dtype=np.int64)
    for e, spec in enumerate(model.edges):
        rel[e] = tables[e][1][states[spec.i], states[spec.j]]
    config = PoseConfiguration(positions, rel, occ, score)
    if return_count:
        return config, score, n_best
    return config, score


def brute_force_unrolled(tree, model: SkeletonModel, maps, max_states: float = 5e7):
    """Exact maximum of the unrolled-tree objective (every node's unary plus
    every tree link's pair score) by enumeration over all node states.

    Returns ``(score, states, link_types)`` in the layout of
    :func:`bgsim.inference.backtrack_states`.
    """
    stack = as_stack(maps)
    height, width = stack.shape[1:]
    n_states = height * width * N_OCC
    if float(n_states) ** len(tree.nodes) > max_states:
        raise ValueError("unrolled instance too large to enumerate")
    unaries = [_unary_vector(model, stack, n.joint) for n in tree.nodes]
    links = sorted(tree.parent.items(), key=lambda kv: (not model.edges[kv[1][1]].is_kinetic,
                                                         kv[1][1]))
    tables, pairs = {}, []
    for child, (par, e) in links:
        spec = model.edges[e]
        if e not in tables:
            tables[e] = _pair_table(spec, stack)
        a, b = (par, child) if tree.nodes[par].joint == spec.i else (child, par)
        pairs.append((a, b, tables[e][0]))
    score, states, _ = _exhaustive(unaries, pairs)
    out_states = [divmod(s, N_OCC) for s in states]
    link_types = [None] * len(tree.nodes)
    for child, (par, e) in links:
        spec = model.edges[e]
        a, b = (par, child) if tree.nodes[par].joint == spec.i else (child, par)
        link_types[child] = tuple(int(t) for t in tables[e][1][states[a], states[b]])
    return score, [(int(c), int(o)) for c, o in out_states], link_types


# --- random instances for the oracle suite ---------------------------------------

def _dyadic(rng, lo, hi, denom, size=None):
    """Uniform multiples of ``1/denom`` in ``[lo, hi]``; sums of these stay exact."""
    k = rng.integers(int(round(lo * denom)), int(round(hi * denom)) + 1, size=size)
    return k / denom


def random_model(rng, n_joints: int, n_contextual: int | None = None, max_types: int = 2,
                 dyadic: bool = True) -> SkeletonModel:
    """Random valid model: a random kinetic tree plus contextual edges.

    With ``dyadic`` every parameter is a small multiple of a power of two, so
    every score on an integer grid is an exactly representable sum and is
    independent of summation order.
    """
    def num(lo, hi, denom, size=None):
        if dyadic:
            return _dyadic(rng, lo, hi, denom, size)
        return rng.uniform(lo, hi, size)

    joints = [Joint(k, f"j{k}", 1) for k in range(n_joints)]
    pairs = [(int(rng.integers(0, j)), j) for j in range(1, n_joints)]
    non_tree = [(a, b) for a in range(n_joints) for b in range(a + 1, n_joints)
                if (a, b) not in pairs]
    if n_contextual is None:
        n_contextual = int(rng.integers(0, len(non_tree) + 1))
    pick = rng.permutation(len(non_tree))[:n_contextual]
    ctx = [non_tree[k] for k in sorted(pick)]
    edges = []
    for kind, (a, b) in [("kinetic", p) for p in pairs] + [("contextual", p) for p in ctx]:
        if rng.random() < 0.5:
            a, b = b, a
        t = int(rng.integers(1, max_types + 1))
        lin = num(-0.5, 0.5, 16, (2, t, 2))
        quad = -num(0.0, 0.5, 16, (2, t, 2))
        deform = np.stack([lin[..., 0], quad[..., 0], lin[..., 1], quad[..., 1]], axis=-1)
        edges.append(EdgeSpec(a, b, kind, t, num(-2, 2, 2, (2, t, 2)), deform,
                              num(0, 2, 4, 2), num(0, 1, 4, (2, t)), num(-1, 1, 8, (t, t, 3, 3))))
    model = SkeletonModel(joints, edges, num(0.5, 2, 2, n_joints),
                          num(-1, 1, 8, (n_joints, 3)), np.full(n_joints, 0.1))
    return check(model)


def random_maps(rng, n_joints: int, width: int, height: int, dyadic: bool = True) -> np.ndarray:
    if dyadic:
        return _dyadic(rng, 0, 1, 64, (n_joints, height, width))
    return rng.random((n_joints, height, width))


def random_instance(rng, max_joints: int = CAP_JOINTS, max_grid: int = CAP_GRID,
                    max_types: int = CAP_TYPES, loopy: bool = True, state_budget: float = 3e6,
                    dyadic: bool = True):
    """Random ``(model, maps)`` whose unrolled tree can be enumerated within
    ``state_budget`` joint states."""
    n = int(rng.integers(1, max_joints + 1))
    max_ctx = (n - 1) * (n - 2) // 2
    n_ctx = int(rng.integers(0, max_ctx + 1)) if loopy else 0
    while True:
        units = n + n_ctx
        cells = int(math.floor(state_budget ** (1.0 / units) / N_OCC + 1e-9))
        if cells >= 2 or n_ctx == 0:
            break
        n_ctx -= 1
    cells = max(1, min(cells, max_grid * max_grid))
    width = int(rng.integers(1, min(max_grid, cells) + 1))
    height = int(rng.integers(1, min(max_grid, max(1, cells // width)) + 1))
    model = random_model(rng, n, n_ctx, max_types, dyadic)
    return model, random_maps(rng, n, width, height, dyadic)


# --- oracle suite ------------------------------------------------------------------

@dataclass
class OracleReport:
    instances: int = 0
    loopy: int = 0
    mismatches: list[str] = field(default_factory=list)
    loopy_exact: int = 0

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict:
        return {"instances": self.instances, "loopy": self.loopy,
                "tree": self.instances - self.loopy, "mismatches": len(self.mismatches),
                "mismatch_details": self.mismatches, "loopy_exact": self.loopy_exact}


def check_instance(model: SkeletonModel, maps) -> tuple[list[str], bool]:
    """Compare the DP against the exhaustive oracles on one instance.

    Checks, all with exact float equality:

    - the DP root maximum equals the enumerated maximum of the unrolled-tree
      objective, and the backtracked tree assignment scores exactly that;
    - on tree models, :func:`bgsim.inference.infer` returns the enumerated
      maximum of the loopy-model score, and the same configuration when that
      maximum is unique;
    - on loopy models, the returned score never exceeds the enumerated maximum.

    Returns the list of failures and whether infer reached the loopy maximum.
    """
    from .inference import (backtrack_states, dp_pass, infer, top_hypotheses, unroll,
                            unrolled_score)
    from .scoring import total_score

    problems = []
    tree = unroll(model, 0)
    tables = dp_pass(tree, model, maps)
    top = top_hypotheses(tables, tree, 1.0)[0]
    states, links = backtrack_states(tree, tables, top)
    oracle, _, _ = brute_force_unrolled(tree, model, maps)
    if top.dp_score != oracle:
        problems.append(f"dp {top.dp_score!r} != unrolled oracle {oracle!r}")
    back = unrolled_score(tree, model, maps, states, links)
    if back != top.dp_score:
        problems.append(f"backtracked score {back!r} != dp {top.dp_score!r}")
    config, _ = infer(model, maps, 0)
    best, best_score, n_best = brute_force_infer(model, maps, return_count=True)
    if config.score != total_score(model, maps, config):
        problems.append("infer score differs from the total score of its configuration")
    if not model.contextual_edges():
        if config.score != best_score:
            problems.append(f"infer {config.score!r} != oracle {best_score!r}")
        elif n_best == 1 and not (np.array_equal(config.positions, best.positions)
                                  and np.array_equal(config.occlusions, best.occlusions)):
            problems.append("unique maximiser differs from the inferred configuration")
    elif config.score > best_score:
        problems.append(f"infer {config.score!r} exceeds oracle {best_score!r}")
    return problems, config.score == best_score


def run_oracle_suite(instances: int = 500, seed: int = 0, max_joints: int = CAP_JOINTS,
                     max_grid: int = CAP_GRID, max_types: int = CAP_TYPES) -> OracleReport:
    """Seeded random instances checked with :func:`check_instance`."""
    if max_joints > CAP_JOINTS or max_grid > CAP_GRID or max_types > CAP_TYPES:
        raise ValueError(f"oracle limits exceed the brute-force cap ({CAP_JOINTS} joints, "
                         f"{CAP_GRID}x{CAP_GRID} grid, {CAP_TYPES} types)")
    rng = np.random.default_rng(seed)
    report = OracleReport()
    for k in range(instances):
        model, maps = random_instance(rng, max_joints, max_grid, max_types)
        loopy = bool(model.contextual_edges())
        report.instances += 1
        report.loopy += loopy
        problems, exact = check_instance(model, maps)
        report.mismatches += [f"instance {k}: {p}" for p in problems]
        report.loopy_exact += loopy and exact
    return report
