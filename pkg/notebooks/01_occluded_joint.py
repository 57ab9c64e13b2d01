# coding: utf-8

# # Recovering a hidden joint
#
# A single synthetic person is rendered with one joint fully hidden: its
# confidence map holds nothing but background clutter. Taking the argmax of
# that map lands anywhere. The cascade instead places the joint from its
# neighbours through the pairwise terms.

# %%
import numpy as np

from bgsim.cascade import run_cascade
from bgsim.skeleton import default_model
from bgsim.synth import SceneSpec, generate_scene

model = default_model()
scene = generate_scene(SceneSpec(seed=7, occluded_per_person=1), model)
stack = scene.stack
gt = scene.gt_positions(0)
hidden = int(np.flatnonzero(scene.gt_occlusions(0) == 2)[0])
print("hidden joint:", model.joints[hidden].name, "at", gt[hidden])

# %% [markdown]
# The unary-only guess for the hidden joint.

# %%
y, x = np.unravel_index(np.argmax(stack[hidden]), stack[hidden].shape)
print("argmax guess:", (x, y), "error", np.hypot(x - gt[hidden, 0], y - gt[hidden, 1]))

# %% [markdown]
# Three cumulative stages: head and shoulders, then elbows, hips and torso,
# then the extremities. Each stage picks its own base point.

# %%
person = run_cascade(model, stack)
for b in person.per_stage_base:
    print(f"stage {b.stage}: base {model.joints[b.joint].name} at {b.position}")
est = person.pose.positions[hidden]
print("cascade:", tuple(est), "error", np.hypot(*(est - gt[hidden])),
      "occlusion state", person.pose.occlusions[hidden])

# %%
errors = np.hypot(*(person.pose.positions - gt).T)
for j, e in zip(model.joints, errors):
    print(f"{j.name:>11s} {e:4.1f}")
