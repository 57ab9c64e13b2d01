# coding: utf-8

# # Two people in one frame
#
# Persons are assembled greedily: the strongest head-and-shoulders peak seeds
# a cascade, the cells it uses are claimed, and the next seed is drawn from
# what remains.

# %%
import numpy as np

from bgsim.cascade import assemble_persons
from bgsim.metrics import evaluate, PredictedPerson
from bgsim.skeleton import default_model
from bgsim.synth import SceneSpec, generate_scene

model = default_model()
scene = generate_scene(SceneSpec(seed=11, n_persons=2, grid=(64, 48), occlusion_rate=0.1),
                       model)
persons = assemble_persons(model, scene.stack)
print(len(persons), "persons")

# %%
for k, r in enumerate(persons):
    errs = [np.hypot(*(r.pose.positions - scene.gt_positions(p)).T).mean() for p in range(2)]
    print(f"person {k}: score {r.score:.2f}, agreement {r.agreement:+.2f}, "
          f"mean error to each ground truth {np.round(errs, 2)}")

# %% [markdown]
# Keypoint AP over the ten COCO thresholds, using the model's per-joint
# falloff constants.

# %%
preds = [PredictedPerson(r.pose.positions, r.score) for r in persons]
result = evaluate([(scene.gts, preds)], k=model.oks_k)
print("mean AP", round(result.mean_ap, 3), "AR", round(result.ar, 3))
