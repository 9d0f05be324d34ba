"""Full model vs. no centre refinement vs. no consistency losses (about a minute)."""
import logging
from dataclasses import replace

from boxseg.evaluation import baseline_macc, evaluate
from boxseg.losses import LossWeights
from boxseg.model import ModelConfig
from boxseg.scene import SceneConfig, generate_scene
from boxseg.training import TrainConfig, train

logging.disable(logging.WARNING)
scenes = [generate_scene(SceneConfig(), s) for s in range(50)]
held = [generate_scene(SceneConfig(), 1000 + s) for s in range(10)]
cfg, base = ModelConfig(), TrainConfig()

rows = {"full": base,
        "no centre refine": replace(base, center_refine=False),
        "no L_q, L_f": replace(base, weights=LossWeights(q=0.0, f=0.0))}
print("%-18s %6s %6s %6s %6s" % ("", "mACC", "AP", "AP50", "AP25"))
for name, tc in rows.items():
    st = train(scenes, cfg, tc)
    r = evaluate(st.student, cfg, held, st.teacher, center_refine=tc.center_refine)
    print("%-18s %6.3f %6.3f %6.3f %6.3f" % (name, r.macc, r.ap, r.ap50, r.ap25))
print("%-18s %6.3f" % ("nearest centre", baseline_macc(held)))
