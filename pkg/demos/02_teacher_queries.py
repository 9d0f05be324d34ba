"""How the teacher places its position queries, and what its pseudo-labels look like."""
import numpy as np

from boxseg.model import ModelConfig, init_params, init_teacher_position, scene_inputs, to_frame
from boxseg.model import refine_teacher_position
from boxseg.pseudolabel import teacher_step
from boxseg.scene import SceneConfig, generate_scene, partition_regions

scene = generate_scene(SceneConfig(), seed=3)
unit, centred, _ = scene_inputs(scene.points)
centers = to_frame(scene.points, scene.centers)

# FPS seeds, then each seed becomes a softmax mix of the box centres
pos = init_teacher_position(centers, centred, 16, fps_coords=unit)
print("centres (centred frame)\n", centers.round(2))
print("first 4 position queries\n", pos[:4].round(2))
lo, hi = centers.min(axis=0), centers.max(axis=0)
print("inside centre hull:", bool(np.all((pos >= lo) & (pos <= hi))))

# refinement re-mixes the centres; rows never leave the hull.
# Centred coordinates are O(1), so the softmax is flat and the rows drift
# together toward a weighted centre mean.
for _ in range(3):
    pos = refine_teacher_position(pos, centers)
print("after 3 refinements, still inside:", bool(np.all((pos >= lo) & (pos <= hi))))
print("row spread", np.ptp(pos, axis=0).round(3))

# an untrained teacher already yields structurally valid pseudo-masks
cfg = ModelConfig()
out = teacher_step(init_params(cfg, seed=0), cfg, scene, partition_regions(scene))
m = out.pseudo.m_hat_u
print("pseudo-mask columns sum to one:", bool((m.sum(axis=0) == 1).all()))
print("merged target sizes", out.targets.sum(axis=1))
