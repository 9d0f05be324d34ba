"""A short student-teacher run, then AP and overlap accuracy on unseen rooms."""
import logging

import numpy as np

from boxseg.evaluation import baseline_macc, evaluate
from boxseg.model import ModelConfig
from boxseg.scene import SceneConfig, generate_scene
from boxseg.training import TrainConfig, train

logging.disable(logging.WARNING)   # quiet the early "empty student mask" notes

scenes = [generate_scene(SceneConfig(), s) for s in range(20)]
held = [generate_scene(SceneConfig(), 1000 + s) for s in range(5)]

cfg = ModelConfig()
state = train(scenes, cfg, TrainConfig(steps=500, seed=0))

tot = np.array([r["total"] for r in state.metrics])
print("loss: first 10 %.3f  last 10 %.3f" % (tot[:10].mean(), tot[-10:].mean()))
print("lr at 0 / peak / end: %.1e %.1e %.1e" % (state.metrics[0]["lr"],
      max(r["lr"] for r in state.metrics), state.metrics[-1]["lr"]))

rep = evaluate(state.student, cfg, held, teacher=state.teacher)
print("AP %.3f  AP50 %.3f  AP25 %.3f" % (rep.ap, rep.ap50, rep.ap25))
print("teacher mACC %.3f  vs baseline %.3f" % (rep.macc, baseline_macc(held)))
