"""Skeleton graph, parameter tables and model files.

Relationship types are 0-based here (``0 .. T-1``).  Per-edge tables carry a
leading direction axis: index 0 is the ``i -> j`` direction, index 1 is
``j -> i``.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np


class OcclusionState(enum.IntEnum):
    VISIBLE = 0
    SELF_OCCLUDED = 1
    OTHER_OCCLUDED = 2


N_OCC = 3


class EdgeKind(str, enum.Enum):
    KINETIC = "kinetic"
    CONTEXTUAL = "contextual"


@dataclass(frozen=True)
class Joint:
    id: int
    name: str
    stage: int


@dataclass(frozen=True, eq=False)
class EdgeSpec:
    """One constraint edge.

    Array shapes (``T = num_types``):

    - ``mean_offsets``: ``(2, T, 2)``, ``r`` per direction and type, as (dx, dy)
    - ``deform_weights``: ``(2, T, 4)``, weights on ``[dx, dx^2, dy, dy^2]``
    - ``type_weights``: ``(2,)``
    - ``type_prior``: ``(2, T)``, the stand-in for per-type image evidence
    - ``occlusion_bias``: ``(T, T, 3, 3)`` indexed ``[t_ij, t_ji, o_i, o_j]``
    """

    i: int
    j: int
    kind: EdgeKind
    num_types: int
    mean_offsets: np.ndarray
    deform_weights: np.ndarray
    type_weights: np.ndarray
    type_prior: np.ndarray
    occlusion_bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", EdgeKind(self.kind))
        for name in ("mean_offsets", "deform_weights", "type_weights", "type_prior",
                     "occlusion_bias"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def is_kinetic(self) -> bool:
        return self.kind is EdgeKind.KINETIC

    def other(self, joint: int) -> int:
        if joint == self.i:
            return self.j
        if joint == self.j:
            return self.i
        raise ValueError(f"joint {joint} is not an endpoint of edge ({self.i}, {self.j})")

    def __eq__(self, other):
        if not isinstance(other, EdgeSpec):
            return NotImplemented
        return (self.i, self.j, self.kind, self.num_types) == (other.i, other.j, other.kind,
                                                               other.num_types) and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("mean_offsets", "deform_weights", "type_weights", "type_prior",
                      "occlusion_bias"))


@dataclass(frozen=True, eq=False)
class SkeletonModel:
    joints: tuple[Joint, ...]
    edges: tuple[EdgeSpec, ...]
    unary_weights: np.ndarray          # (N,)
    unary_bias: np.ndarray             # (N, 3)
    oks_k: np.ndarray                  # (N,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "edges", tuple(self.edges))
        for name in ("unary_weights", "unary_bias", "oks_k"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    def joint_id(self, name: str) -> int:
        for j in self.joints:
            if j.name == name:
                return j.id
        raise KeyError(name)

    def stage_sets(self) -> list[set[int]]:
        return [{j.id for j in self.joints if j.stage == s} for s in (1, 2, 3)]

    def kinetic_edges(self) -> list[int]:
        return [e for e, spec in enumerate(self.edges) if spec.is_kinetic]

    def contextual_edges(self) -> list[int]:
        return [e for e, spec in enumerate(self.edges) if not spec.is_kinetic]

    def incident(self, joint: int) -> list[int]:
        return [e for e, spec in enumerate(self.edges) if joint in (spec.i, spec.j)]

    def max_types(self) -> int:
        return max((e.num_types for e in self.edges), default=1)

    def restrict(self, joint_ids) -> tuple["SkeletonModel", list[int]]:
        """Sub-model induced on ``joint_ids`` with joints renumbered from 0.

        Returns the sub-model and the list mapping new ids to old ids.
        """
        keep = sorted(set(int(j) for j in joint_ids))
        new_of = {old: new for new, old in enumerate(keep)}
        joints = [replace(self.joints[old], id=new_of[old]) for old in keep]
        edges = [replace(e, i=new_of[e.i], j=new_of[e.j]) for e in self.edges
                 if e.i in new_of and e.j in new_of]
        sub = SkeletonModel(joints, edges, self.unary_weights[keep], self.unary_bias[keep],
                            self.oks_k[keep], dict(self.meta))
        return sub, keep

    def without_contextual(self) -> "SkeletonModel":
        return replace(self, edges=[e for e in self.edges if e.is_kinetic])

    def __eq__(self, other):
        if not isinstance(other, SkeletonModel):
            return NotImplemented
        return (self.joints == other.joints and self.edges == other.edges
                and np.array_equal(self.unary_weights, other.unary_weights)
                and np.array_equal(self.unary_bias, other.unary_bias)
                and np.array_equal(self.oks_k, other.oks_k) and self.meta == other.meta)


@dataclass(eq=False)
class PoseConfiguration:
    """Positions ``(N, 2)`` as (x, y), relationship types ``(E, 2)`` as
    ``(t_ij, t_ji)``, occlusion codes ``(N,)`` and a score."""

    positions: np.ndarray
    rel_types: np.ndarray
    occlusions: np.ndarray
    score: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)
        self.rel_types = np.asarray(self.rel_types, dtype=np.int64).reshape(-1, 2)
        self.occlusions = np.asarray(self.occlusions, dtype=np.int64).reshape(-1)
        self.score = float(self.score)

    def key(self) -> tuple:
        return (self.positions.tobytes(), self.rel_types.tobytes(), self.occlusions.tobytes())

    def same_as(self, other: "PoseConfiguration") -> bool:
        return self.key() == other.key()

    def copy(self) -> "PoseConfiguration":
        return PoseConfiguration(self.positions.copy(), self.rel_types.copy(),
                                 self.occlusions.copy(), self.score)


# --- validation ----------------------------------------------------------------

class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def validate(model: SkeletonModel) -> list[str]:
    """Return a list of invariant violations; empty means the model is valid."""
    out: list[str] = []
    n = model.n_joints
    if n < 1:
        return ["joints: model has no joints"]
    ids = [j.id for j in model.joints]
    if ids != list(range(n)):
        out.append(f"joints: ids must be contiguous from 0 in order, got {ids}")
    names = [j.name for j in model.joints]
    if len(set(names)) != n:
        out.append("joints: duplicate joint names")
    for j in model.joints:
        if j.stage not in (1, 2, 3):
            out.append(f"joints[{j.id}].stage: {j.stage} not in {{1, 2, 3}}")
    for name, shape in (("unary_weights", (n,)), ("unary_bias", (n, 3)), ("oks_k", (n,))):
        a = getattr(model, name)
        if a.shape != shape:
            out.append(f"{name}: shape {a.shape}, expected {shape}")
        elif not np.all(np.isfinite(a)):
            out.append(f"{name}: non-finite entries")
    if model.oks_k.shape == (n,) and np.any(model.oks_k <= 0):
        out.append("oks_k: all constants must be positive")

    seen: dict[frozenset, int] = {}
    for e, spec in enumerate(model.edges):
        tag = f"edges[{e}] ({spec.i}, {spec.j})"
        if not (0 <= spec.i < n and 0 <= spec.j < n):
            out.append(f"{tag}: endpoint out of range")
            continue
        if spec.i == spec.j:
            out.append(f"{tag}: self-loop")
            continue
        key = frozenset((spec.i, spec.j))
        if key in seen:
            out.append(f"{tag}: duplicate of edges[{seen[key]}]")
        else:
            seen[key] = e
        t = spec.num_types
        if t < 1:
            out.append(f"{tag}.num_types: must be >= 1, got {t}")
            continue
        shapes = {"mean_offsets": (2, t, 2), "deform_weights": (2, t, 4), "type_weights": (2,),
                  "type_prior": (2, t), "occlusion_bias": (t, t, 3, 3)}
        for name, shape in shapes.items():
            a = getattr(spec, name)
            if a.shape != shape:
                out.append(f"{tag}.{name}: shape {a.shape}, expected {shape}")
            elif not np.all(np.isfinite(a)):
                out.append(f"{tag}.{name}: non-finite entries")
        w = spec.deform_weights
        if w.shape == (2, t, 4) and (np.any(w[..., 1] > 0) or np.any(w[..., 3] > 0)):
            out.append(f"{tag}.deform_weights: quadratic coefficients must be <= 0")

    uf = _UnionFind(n)
    kin = [spec for spec in model.edges if spec.is_kinetic and 0 <= spec.i < n
           and 0 <= spec.j < n and spec.i != spec.j]
    for spec in kin:
        if not uf.union(spec.i, spec.j):
            out.append(f"ε_K not a tree: kinetic edge ({spec.i}, {spec.j}) closes a cycle")
    if len({uf.find(a) for a in range(n)}) > 1:
        out.append("ε_K not connected: kinetic edges do not span all joints")

    stages = model.stage_sets()
    covered = set().union(*stages)
    if covered != set(range(n)):
        out.append("stages: stage sets do not cover every joint")
    return out


def check(model: SkeletonModel) -> SkeletonModel:
    problems = validate(model)
    if problems:
        raise ValueError("invalid skeleton model: " + "; ".join(problems))
    return model


# --- graph helpers -------------------------------------------------------------

def kinetic_bfs(model: SkeletonModel, root: int) -> tuple[list[int], dict[int, tuple[int, int]],
                                                          dict[int, int]]:
    """Breadth-first walk of the kinetic tree.

    Returns the visiting order, ``{joint: (parent, edge index)}`` and depths.
    Neighbours are expanded in edge-list order.
    """
    if not 0 <= root < model.n_joints:
        raise ValueError(f"unknown joint id {root}")
    adjacency: dict[int, list[int]] = {j: [] for j in range(model.n_joints)}
    for e in model.kinetic_edges():
        spec = model.edges[e]
        adjacency[spec.i].append(e)
        adjacency[spec.j].append(e)
    order, parent, depth = [root], {}, {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for e in adjacency[u]:
            v = model.edges[e].other(u)
            if v in depth:
                continue
            depth[v] = depth[u] + 1
            parent[v] = (u, e)
            order.append(v)
            queue.append(v)
    return order, parent, depth


def out_degree(model: SkeletonModel, joint: int, root: int) -> int:
    """Edges leaving ``joint`` once every edge is oriented away from ``root``.

    Kinetic edges point from parent to child in the kinetic BFS tree; a
    contextual edge points from the endpoint visited first (shallower, then
    earlier in BFS order) to the other.
    """
    n = model.n_joints
    if not (0 <= joint < n):
        raise ValueError(f"unknown joint id {joint}")
    order, parent, _ = kinetic_bfs(model, root)
    rank = {j: k for k, j in enumerate(order)}
    count = sum(1 for child, (p, _) in parent.items() if p == joint)
    for e in model.contextual_edges():
        spec = model.edges[e]
        source = spec.i if rank[spec.i] < rank[spec.j] else spec.j
        count += source == joint
    return count


def farthest_joint(model: SkeletonModel, root: int) -> int:
    """Joint with the largest kinetic hop distance from ``root`` (lowest id on ties)."""
    _, _, depth = kinetic_bfs(model, root)
    return min(depth, key=lambda j: (-depth[j], j))


# --- serialization -------------------------------------------------------------

def _edge_to_dict(spec: EdgeSpec) -> dict:
    def directed(a):
        return {"ij": a[0].tolist(), "ji": a[1].tolist()}

    return {
        "i": spec.i, "j": spec.j, "kind": spec.kind.value, "num_types": spec.num_types,
        "mean_offsets": directed(spec.mean_offsets),
        "deform_weights": directed(spec.deform_weights),
        "type_weights": directed(spec.type_weights),
        "type_prior": directed(spec.type_prior),
        "occlusion_bias": spec.occlusion_bias.tolist(),
    }


def _edge_from_dict(d: dict) -> EdgeSpec:
    def directed(key):
        return [d[key]["ij"], d[key]["ji"]]

    return EdgeSpec(i=int(d["i"]), j=int(d["j"]), kind=d["kind"], num_types=int(d["num_types"]),
                    mean_offsets=directed("mean_offsets"),
                    deform_weights=directed("deform_weights"),
                    type_weights=directed("type_weights"),
                    type_prior=directed("type_prior"),
                    occlusion_bias=d["occlusion_bias"])


def model_to_dict(model: SkeletonModel) -> dict:
    d = {
        "joints": [{"id": j.id, "name": j.name} for j in model.joints],
        "stages": {str(s): sorted(ids) for s, ids in zip((1, 2, 3), model.stage_sets())},
        "edges": [_edge_to_dict(e) for e in model.edges],
        "unary": {"weights": model.unary_weights.tolist(), "bias": model.unary_bias.tolist()},
        "oks_k": model.oks_k.tolist(),
    }
    if model.meta:
        d["meta"] = model.meta
    return d


REQUIRED_KEYS = ("joints", "edges", "unary", "oks_k", "stages")


def model_from_dict(d: dict) -> SkeletonModel:
    missing = [k for k in REQUIRED_KEYS if k not in d]
    if missing:
        raise ValueError(f"skeleton file missing keys: {missing}")
    stage_of = {}
    for s, ids in d["stages"].items():
        for j in ids:
            if int(j) in stage_of:
                raise ValueError(f"joint {j} listed in more than one stage")
            stage_of[int(j)] = int(s)
    joints = [Joint(int(j["id"]), str(j["name"]), stage_of.get(int(j["id"]), 0))
              for j in d["joints"]]
    return SkeletonModel(joints=joints, edges=[_edge_from_dict(e) for e in d["edges"]],
                         unary_weights=d["unary"]["weights"], unary_bias=d["unary"]["bias"],
                         oks_k=d["oks_k"], meta=dict(d.get("meta", {})))


def dumps_model(model: SkeletonModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model: SkeletonModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path, validate_model: bool = True) -> SkeletonModel:
    model = model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    return check(model) if validate_model else model


DEFAULT_MODEL_FILE = "default15.json"


def default_model_path() -> Path:
    return Path(str(resources.files("bgsim") / "models" / DEFAULT_MODEL_FILE))


def default_model() -> SkeletonModel:
    """The shipped 15-joint model (``models/default15.json``)."""
    return load_model(default_model_path())
