"""Three-stage cascade with dynamic base points, and multi-person assembly.

Each stage runs inference over the joints of all stages so far.  The base
point of a stage is the strongest detected response among those joints; it
becomes the root of the unrolled trees.  Joints whose evidence is weak get
their confidence map reinforced by the kinetic neighbours' maps, shifted by
the model's mean offsets, before inference.

Once a person has joints placed, the search for the remaining joints is
confined to per-joint windows around positions predicted from the placed
joints.  This keeps one cascade on one person in multi-person maps and lets
inference run on a cropped grid.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .heatmap import ConfidenceMap, as_stack, find_peaks, fuse_shifted, offset_kernel
from .inference import DEFAULT_SIGMA, infer
from .scoring import DirectionalScore, best_types, pair_score, total_score, unary_score
from .skeleton import PoseConfiguration, SkeletonModel

log = logging.getLogger(__name__)

DETECTION_THRESHOLD = 0.5
DEFAULT_NMS_RADIUS = 5
# window radius: placed joints may move this far; unplaced ones get
# WINDOW_BASE + WINDOW_PER_HOP * (kinetic hops to the nearest placed joint)
REVISION_RADIUS = 2
WINDOW_BASE = 3
WINDOW_PER_HOP = 3


class NoDetectionError(ValueError):
    pass


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[frozenset[int], ...]

    def __post_init__(self):
        stages = tuple(frozenset(int(j) for j in s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        seen: set[int] = set()
        for s in stages:
            if seen & s:
                raise ValueError(f"stage sets overlap on {sorted(seen & s)}")
            seen |= s

    @classmethod
    def from_model(cls, model: SkeletonModel) -> "StagePlan":
        return cls(tuple(model.stage_sets()))

    def active(self, stage_index: int) -> set[int]:
        """Union of the stage sets 1..stage_index."""
        if not 1 <= stage_index <= len(self.stages):
            raise ValueError(f"stage index {stage_index} outside 1..{len(self.stages)}")
        out: set[int] = set()
        for s in self.stages[:stage_index]:
            out |= s
        return out


@dataclass(frozen=True)
class BasePoint:
    stage: int
    joint: int
    position: tuple[int, int]
    response: float


@dataclass
class PersonResult:
    pose: PoseConfiguration
    per_stage_base: list[BasePoint] = field(default_factory=list)
    agreement: float = 0.0
    assigned: np.ndarray | None = None
    directional: DirectionalScore | None = None

    @property
    def score(self) -> float:
        return self.pose.score


def select_base_point(maps, active_joints, allowed=None) -> tuple[int, tuple[int, int], float]:
    """Strongest response among ``active_joints``; ties go to the lower joint
    id, then the first cell in row-major order."""
    stack = as_stack(maps)
    active = sorted(int(j) for j in active_joints)
    if not active:
        raise ValueError("no active joints")
    if active[-1] >= stack.shape[0] or active[0] < 0:
        raise ValueError(f"no confidence map for joint {active[-1]}")
    best = None
    for j in active:
        v = stack[j] if allowed is None else np.where(allowed[j], stack[j], -np.inf)
        k = int(np.argmax(v))
        val = float(v.flat[k])
        if val == -np.inf:
            continue
        if best is None or val > best[2]:
            y, x = divmod(k, stack.shape[2])
            best = (j, (x, y), val)
    if best is None:
        raise ValueError("every cell of the active joints is masked out")
    return best


# --- per-person state -------------------------------------------------------------

@dataclass
class _State:
    positions: np.ndarray          # (N, 2)
    occlusions: np.ndarray         # (N,)
    assigned: np.ndarray           # (N,) bool
    bases: list[BasePoint] = field(default_factory=list)
    directional: DirectionalScore | None = None
    seed: tuple[int, tuple[int, int]] | None = None

    @classmethod
    def empty(cls, n: int, seed=None) -> "_State":
        return cls(np.zeros((n, 2), dtype=np.int64), np.zeros(n, dtype=np.int64),
                   np.zeros(n, dtype=bool), seed=seed)


def _mean_offset(model: SkeletonModel, e: int, src: int) -> np.ndarray:
    spec = model.edges[e]
    d = 0 if spec.i == src else 1
    prior = spec.type_prior[d]
    return prior @ spec.mean_offsets[d] / prior.sum()


def _windows(model: SkeletonModel, state: _State, shape) -> np.ndarray | None:
    """Boolean ``(N, H, W)`` search windows, or None when nothing is placed."""
    if not state.assigned.any():
        return None
    height, width = shape
    n = model.n_joints
    expected = np.zeros((n, 2))
    hops = np.full(n, -1)
    queue = deque()
    for j in np.flatnonzero(state.assigned):
        expected[j] = state.positions[j]
        hops[j] = 0
        queue.append(int(j))
    while queue:
        u = queue.popleft()
        for e in model.kinetic_edges():
            spec = model.edges[e]
            if u not in (spec.i, spec.j):
                continue
            v = spec.other(u)
            if hops[v] < 0:
                hops[v] = hops[u] + 1
                expected[v] = expected[u] + _mean_offset(model, e, u)
                queue.append(v)
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    out = np.zeros((n, height, width), dtype=bool)
    for j in range(n):
        if hops[j] < 0:
            out[j] = True
            continue
        r = REVISION_RADIUS if hops[j] == 0 else WINDOW_BASE + WINDOW_PER_HOP * hops[j]
        cx, cy = np.rint(expected[j])
        out[j] = (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
    return out


def _fuse_weak(model: SkeletonModel, stack, active, weak, strong):
    """Add each strong kinetic neighbour's map, moved by the neighbour-to-joint
    mean offsets, to every weak joint's map."""
    out = stack.copy()
    for w in sorted(weak):
        target = ConfidenceMap(stack[w], w)
        for e in model.kinetic_edges():
            spec = model.edges[e]
            if w not in (spec.i, spec.j):
                continue
            nb = spec.other(w)
            if nb not in strong or nb not in active:
                continue
            d = 0 if spec.i == nb else 1
            kernel = offset_kernel(spec.mean_offsets[d], spec.type_prior[d] / spec.type_prior[d].sum())
            if kernel.size > min(stack.shape[1:]):
                continue
            target = fuse_shifted(target, ConfidenceMap(stack[nb], nb), kernel)
        out[w] = target.values
    return out


def _local_score(model, stack, positions, occlusions, joint, assigned) -> float:
    s = unary_score(model, stack, joint, positions[joint], occlusions[joint])
    for e in model.incident(joint):
        spec = model.edges[e]
        if not (assigned[spec.i] and assigned[spec.j]):
            continue
        best = max(pair_score(model, stack, spec, positions[spec.i], positions[spec.j], a, b,
                              occlusions[spec.i], occlusions[spec.j])
                   for a in range(spec.num_types) for b in range(spec.num_types))
        s += best
    return float(s)


def _crop_box(masks: np.ndarray):
    any_cell = masks.any(axis=0)
    ys, xs = np.nonzero(any_cell)
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def run_stage(stage_index: int, model: SkeletonModel, maps, state: _State | None = None,
              plan: StagePlan | None = None, sigma: float = DEFAULT_SIGMA,
              threshold: float = DETECTION_THRESHOLD, allowed=None,
              backend: str = "auto") -> _State:
    """Infer the joints of stages 1..``stage_index`` and merge them into ``state``.

    When no active joint reaches ``threshold`` the stage is deferred: ``state``
    is returned unchanged and a later stage places these joints.
    """
    stack = as_stack(maps)
    n = model.n_joints
    plan = StagePlan.from_model(model) if plan is None else plan
    state = _State.empty(n) if state is None else state
    active = plan.active(stage_index)
    shape = stack.shape[1:]
    base_allowed = np.ones((n,) + shape, dtype=bool) if allowed is None else np.asarray(allowed, bool)
    win = _windows(model, state, shape)
    masks = base_allowed.copy() if win is None else base_allowed & win
    # a joint whose window is fully claimed falls back to the global mask
    for j in active:
        if not masks[j].any():
            masks[j] = base_allowed[j]
        if not masks[j].any():
            raise NoDetectionError(f"joint {j} has no unclaimed cell")

    peak = {j: float(np.max(np.where(masks[j], stack[j], -np.inf))) for j in active}
    detected = {j for j in active if peak[j] >= threshold}
    if state.seed is not None and not state.bases:
        joint, pos = state.seed
        if joint not in active:
            raise ValueError(f"seed joint {joint} is not active in stage {stage_index}")
        base = (joint, pos, float(stack[joint, pos[1], pos[0]]))
    elif not detected:
        log.info("stage %d deferred: no active joint reaches %.3f", stage_index, threshold)
        return state
    else:
        base = select_base_point(stack, detected, masks)
    joint, pos, response = base
    if not state.bases:
        # the first base point is pinned to its cell
        masks[joint] = False
        masks[joint, pos[1], pos[0]] = True

    weak = {j for j in active if peak[j] < threshold or
            (state.assigned[j] and state.occlusions[j] == 2)}
    fused = _fuse_weak(model, stack, active, weak, detected - weak) if weak else stack

    sub, keep = model.restrict(active)
    y0, y1, x0, x1 = _crop_box(masks[keep])
    sub_maps = fused[keep, y0:y1, x0:x1]
    sub_allowed = masks[keep, y0:y1, x0:x1]
    root = keep.index(joint)
    config, ds = infer(sub, sub_maps, root, sigma, backend, sub_allowed)

    new_pos = state.positions.copy()
    new_occ = state.occlusions.copy()
    for k, j in enumerate(keep):
        new_pos[j] = config.positions[k] + (x0, y0)
        new_occ[j] = config.occlusions[k]
    now_assigned = state.assigned.copy()
    now_assigned[keep] = True
    # joints placed earlier keep their state unless the new one scores
    # strictly better locally, with the new neighbourhood held fixed
    for j in keep:
        if not state.assigned[j]:
            continue
        old_pos, old_occ = new_pos.copy(), new_occ.copy()
        old_pos[j], old_occ[j] = state.positions[j], state.occlusions[j]
        new_local = _local_score(model, fused, new_pos, new_occ, j, now_assigned)
        old_local = _local_score(model, fused, old_pos, old_occ, j, now_assigned)
        if not new_local > old_local:
            new_pos[j], new_occ[j] = state.positions[j], state.occlusions[j]
    return _State(new_pos, new_occ, now_assigned,
                  state.bases + [BasePoint(stage_index, joint, tuple(int(c) for c in pos), response)],
                  ds, state.seed)


def run_cascade(model: SkeletonModel, maps, sigma: float = DEFAULT_SIGMA,
                threshold: float = DETECTION_THRESHOLD, allowed=None, seed=None,
                plan: StagePlan | None = None, backend: str = "auto") -> PersonResult:
    """All stages for one person.  ``seed = (joint, (x, y))`` pins the first
    base point."""
    stack = as_stack(maps)
    plan = StagePlan.from_model(model) if plan is None else plan
    state = _State.empty(model.n_joints, seed)
    for k in range(1, len(plan.stages) + 1):
        state = run_stage(k, model, stack, state, plan, sigma, threshold, allowed, backend)
    if not state.assigned.any():
        raise NoDetectionError("no detectable joints")
    if not state.assigned.all():
        missing = np.flatnonzero(~state.assigned).tolist()
        raise NoDetectionError(f"joints {missing} were never placed")
    types = best_types(model, stack, state.positions, state.occlusions)
    pose = PoseConfiguration(state.positions, types, state.occlusions)
    pose.score = total_score(model, stack, pose)
    agreement = state.directional.fused if state.directional else 0.0
    return PersonResult(pose, state.bases, agreement, state.assigned.copy(), state.directional)


def _claim(allowed: np.ndarray, pose: PoseConfiguration, radius: int) -> None:
    height, width = allowed.shape[1:]
    for j, (x, y) in enumerate(pose.positions):
        allowed[j, max(0, y - radius):min(height, y + radius + 1),
                max(0, x - radius):min(width, x + radius + 1)] = False


def assemble_persons(model: SkeletonModel, maps, sigma: float = DEFAULT_SIGMA,
                     max_persons: int = 10, nms_radius: int = DEFAULT_NMS_RADIUS,
                     threshold: float = DETECTION_THRESHOLD,
                     backend: str = "auto") -> list[PersonResult]:
    """Greedy multi-person assembly.

    The strongest remaining stage-1 peak seeds a cascade; the cells within
    ``nms_radius`` of each joint it places are then removed from that joint
    type's maps for later persons.  Stops when no stage-1 peak reaches
    ``threshold`` or ``max_persons`` is reached.  Results are sorted by score.
    """
    stack = as_stack(maps)
    plan = StagePlan.from_model(model)
    allowed = np.ones(stack.shape, dtype=bool)
    first = plan.stages[0]
    results: list[PersonResult] = []
    while len(results) < max_persons:
        peaks = []
        for j in sorted(first):
            masked = ConfidenceMap(np.where(allowed[j], stack[j], 0.0), j)
            peaks += find_peaks(masked, threshold, nms_radius)
        if not peaks:
            break
        top = min(peaks, key=lambda p: (-p.value, p.joint_id, p.position[1], p.position[0]))
        try:
            person = run_cascade(model, stack, sigma, threshold, allowed,
                                 (top.joint_id, top.position), plan, backend)
        except NoDetectionError as exc:
            log.info("seed %s dropped: %s", top, exc)
            x, y = top.position
            allowed[top.joint_id, y, x] = False
            continue
        results.append(person)
        _claim(allowed, person.pose, nms_radius)
    results.sort(key=lambda r: -r.score)
    return results
