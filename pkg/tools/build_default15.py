"""Regenerate ``src/bgsim/models/default15.json``.

Every default parameter of the shipped model is set here once; the library
itself only ever reads the JSON file.

    python tools/build_default15.py
"""

import math
from pathlib import Path

import numpy as np

from bgsim.skeleton import EdgeSpec, Joint, SkeletonModel, check, save_model

NAMES = ["head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
         "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle", "torso"]
STAGES = {
    1: ["head", "neck", "l_shoulder", "r_shoulder"],
    2: ["l_elbow", "r_elbow", "l_hip", "r_hip", "torso"],
    3: ["l_wrist", "r_wrist", "l_knee", "r_knee", "l_ankle", "r_ankle"],
}
# upright person facing the viewer, cells, y grows downward
CANONICAL = {
    "head": (0, 0), "neck": (0, 3), "l_shoulder": (3, 4), "r_shoulder": (-3, 4),
    "l_elbow": (4, 8), "r_elbow": (-4, 8), "l_wrist": (4, 12), "r_wrist": (-4, 12),
    "torso": (0, 8), "l_hip": (2, 11), "r_hip": (-2, 11), "l_knee": (2, 16),
    "r_knee": (-2, 16), "l_ankle": (2, 21), "r_ankle": (-2, 21),
}
KINETIC = [("head", "neck"), ("neck", "l_shoulder"), ("neck", "r_shoulder"),
           ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"), ("r_shoulder", "r_elbow"),
           ("r_elbow", "r_wrist"), ("neck", "torso"), ("torso", "l_hip"), ("torso", "r_hip"),
           ("l_hip", "l_knee"), ("l_knee", "l_ankle"), ("r_hip", "r_knee"),
           ("r_knee", "r_ankle")]
CONTEXTUAL = [("l_shoulder", "r_shoulder"), ("l_elbow", "r_elbow"), ("l_wrist", "r_wrist"),
              ("l_hip", "r_hip"), ("l_knee", "r_knee"), ("l_ankle", "r_ankle")]
# half-width 2*sigma, sigma from the COCO keypoint constants; neck and torso borrow
# the shoulder and hip values
OKS_K = {"head": 0.052, "neck": 0.158, "l_shoulder": 0.158, "r_shoulder": 0.158,
         "l_elbow": 0.144, "r_elbow": 0.144, "l_wrist": 0.124, "r_wrist": 0.124,
         "l_hip": 0.214, "r_hip": 0.214, "l_knee": 0.174, "r_knee": 0.174,
         "l_ankle": 0.178, "r_ankle": 0.178, "torso": 0.214}

NUM_TYPES = 4
TYPE_ANGLES_DEG = [-30.0, -10.0, 10.0, 30.0]
DEFORM_SIGMA = {"kinetic": 3.0, "contextual": 6.0}
NEAR_IDENTICAL = 1.5


def rotated(v, deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return [round(c * v[0] - s * v[1], 6), round(s * v[0] + c * v[1], 6)]


def make_edge(a, b, kind):
    i, j = NAMES.index(a), NAMES.index(b)
    base = np.subtract(CANONICAL[b], CANONICAL[a])
    fwd = [rotated(base, d) for d in TYPE_ANGLES_DEG]
    offsets = [fwd, [[-x, -y] for x, y in fwd]]
    c = 1.0 / (2.0 * DEFORM_SIGMA[kind] ** 2)
    deform = [[[0.0, -c, 0.0, -c]] * NUM_TYPES] * 2
    bias = np.zeros((NUM_TYPES, NUM_TYPES, 3, 3))
    if kind == "kinetic":
        for o in range(3):
            bias[:, :, o, o] = 0.1
    else:
        for t in range(NUM_TYPES):
            if math.hypot(*fwd[t]) < NEAR_IDENTICAL:
                bias[t, :, 0, 2] = bias[t, :, 2, 0] = -1.0
                bias[:, t, 0, 2] = bias[:, t, 2, 0] = -1.0
    return EdgeSpec(i=i, j=j, kind=kind, num_types=NUM_TYPES, mean_offsets=offsets,
                    deform_weights=deform, type_weights=[1.0, 1.0],
                    type_prior=[[1.0 / NUM_TYPES] * NUM_TYPES] * 2,
                    occlusion_bias=bias)


def build():
    stage_of = {n: s for s, names in STAGES.items() for n in names}
    joints = [Joint(k, n, stage_of[n]) for k, n in enumerate(NAMES)]
    edges = ([make_edge(a, b, "kinetic") for a, b in KINETIC]
             + [make_edge(a, b, "contextual") for a, b in CONTEXTUAL])
    n = len(NAMES)
    meta = {
        "description": "15-joint default model; parameters set analytically, not learned",
        "canonical_positions": {k: list(v) for k, v in CANONICAL.items()},
        "type_angles_deg": TYPE_ANGLES_DEG,
        "deformation_sigma": DEFORM_SIGMA,
        "notes": [
            "type t rotates the canonical limb offset by type_angles_deg[t]",
            "quadratic deformation weight = -1 / (2 * deformation_sigma^2)",
            "unary: w = 1, b = (0, 0, -0.5) for (visible, self-occluded, other-occluded)",
            "kinetic occlusion bias: +0.1 when both endpoints share a state",
            "contextual occlusion bias: -1 for (visible, other-occluded) when the type "
            "places the endpoints within 1.5 cells",
            "type prior uniform 1/T",
            "oks_k = 2 * COCO sigma; neck uses the shoulder value, torso the hip value",
        ],
    }
    model = SkeletonModel(joints=joints, edges=edges, unary_weights=np.ones(n),
                          unary_bias=np.tile([0.0, 0.0, -0.5], (n, 1)),
                          oks_k=[OKS_K[name] for name in NAMES], meta=meta)
    return check(model)


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "bgsim" / "models" / "default15.json"
    save_model(build(), out)
    print(f"wrote {out}")
