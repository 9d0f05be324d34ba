"""A synthetic room, its boxes, and which points the boxes leave ambiguous."""
import numpy as np

from boxseg.evaluation import compute_macc, nearest_center_baseline
from boxseg.scene import SceneConfig, generate_scene, macc_oracle, partition_regions

cfg = SceneConfig()                 # 3-8 blobs, ~2000 points, 10-30% overlap
scene = generate_scene(cfg, seed=42)
print("points", scene.points.shape, "instances", scene.num_instances)
print("classes", scene.classes)

# every box is the tight bound of its own points
k = 0
own = scene.xyz[scene.gt_instance == k]
print("box 0 ==", own.min(axis=0).round(3), own.max(axis=0).round(3))

# count the boxes around each point: 0 background, 1 single, >= 2 overlap
part = partition_regions(scene)
print("background", len(part.background_idx), "single", part.num_single,
      "overlap", part.num_overlap)
print("overlap fraction %.3f" % (part.num_overlap / scene.num_points))

# candidates of the first few ambiguous points
for j in range(3):
    print("overlap point", part.overlap_idx[j], "candidates", part.candidates(j))

# how well does "nearest box centre wins" do?
truth = macc_oracle(part, scene)
base = nearest_center_baseline(part, scene)
print("baseline mACC %.3f" % compute_macc(base, truth, part))
print("truth vs baseline on 10 points:", truth[:10], base.assignment[:10])
