"""Command-line entry point: ``boxseg <subcommand> ...``.

Failures print one line to stderr of the form
``boxseg-error code=<n> kind=<kind> msg=<json string>`` and exit with ``code``.
Set ``BOXSEG_THREADS`` to use more than one worker process for scene
generation and evaluation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .evaluation import (baseline_macc, compute_macc, corpus_macc, evaluate,
                         nearest_center_baseline)
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .pseudolabel import teacher_step
from .scene import (SceneError, SceneGenerationError, SceneVersionError, generate_scene,
                    load_corpus, macc_oracle, partition_regions, save_scene)
from .training import read_metrics, train, write_metrics

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_PATH = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5
EXIT_SCENE_FORMAT = 6
EXIT_SCENE_VERSION = 7
EXIT_GENERATION = 8

CHECKPOINT_NAME = "checkpoint_final.npz"
RESOLVED_NAME = "config_resolved.json"

log = logging.getLogger("boxseg")


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BOXSEG_THREADS", "1")))
    except ValueError:
        raise CliError(EXIT_CONFIG, "config", "BOXSEG_THREADS must be an integer") from None


def _map(fn, items):
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _corpus(path) -> list:
    p = Path(path)
    if not p.is_dir():
        raise CliError(EXIT_MISSING_PATH, "missing-path", f"corpus directory not found: {p}")
    scenes = load_corpus(p)
    if not scenes:
        raise CliError(EXIT_MISSING_PATH, "missing-path", f"no scene_<seed>.json files in {p}")
    return list(scenes.items())


def _resolve(args, extra: dict | None = None) -> config_mod.RunConfig:
    over: dict = {"train": {}}
    if getattr(args, "seed", None) is not None:
        over["train"]["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        over["train"]["steps"] = args.steps
    if getattr(args, "no_center_refine", False):
        over["train"]["center_refine"] = False
    w = {}
    if getattr(args, "no_loss_q", False):
        w["q"] = 0.0
    if getattr(args, "no_loss_f", False):
        w["f"] = 0.0
    if w:
        over["train"]["weights"] = w
    if extra:
        over = config_mod._merge(over, extra)
    return config_mod.resolve(getattr(args, "config", None), over)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ----------------------------------------------------------------

def _gen_one(job):
    cfg, seed = job
    return seed, generate_scene(cfg, seed)


def cmd_gen_scenes(args) -> None:
    cfg = config_mod.resolve(args.config, {"scene": {"seed": args.seed}})
    out = _out_dir(args.out)
    seeds = range(args.seed, args.seed + args.n)
    for seed, scene in _map(_gen_one, [(cfg.scene, s) for s in seeds]):
        save_scene(scene, out / f"scene_{seed}.json")
    config_mod.save(cfg, out / RESOLVED_NAME)
    print(f"wrote {args.n} scenes to {out}")


def cmd_train(args) -> None:
    cfg = _resolve(args)
    corpus = _corpus(args.corpus)
    out = _out_dir(args.out)
    config_mod.save(cfg, out / RESOLVED_NAME)
    state = train([s for _, s in corpus], cfg.model, cfg.train, progress=True)
    write_metrics(state.metrics, out / "metrics.csv")
    save_checkpoint(out / CHECKPOINT_NAME, cfg.model, state.student, state.teacher,
                    meta={"run_config": cfg.to_dict(), "steps": state.step})
    print(f"trained {state.step} steps; outputs in {out}")


def _load_run(args):
    """Checkpoint plus the run config it was trained with (a --config wins)."""
    path = Path(args.checkpoint)
    if not path.is_file():
        raise CliError(EXIT_MISSING_PATH, "missing-path", f"checkpoint not found: {path}")
    if args.config is not None:
        cfg = config_mod.resolve(args.config)
    else:
        _, _, _, meta = load_checkpoint(path)
        cfg = config_mod.from_dict(meta.get("run_config", {}))
    if getattr(args, "no_center_refine", False):
        cfg.train.center_refine = False
    _, student, teacher, _ = load_checkpoint(path, cfg.model)
    return cfg, student, teacher


def _pseudo_one(job):
    cfg, teacher, seed, scene = job
    part = partition_regions(scene)
    truth = macc_oracle(part, scene)
    out = teacher_step(teacher, cfg.model, scene, part, cfg.train.weights, cfg.train.center_refine)
    macc = compute_macc(out.pseudo, truth, part)
    base = compute_macc(nearest_center_baseline(part, scene), truth, part)
    return {
        "seed": seed,
        "overlap_idx": part.overlap_idx.tolist(),
        "assignments": out.pseudo.assignment.tolist(),
        "macc": None if np.isnan(macc) else macc,
        "baseline_macc": None if np.isnan(base) else base,
    }


def cmd_pseudo_label(args) -> None:
    cfg, student, teacher = _load_run(args)
    corpus = _corpus(args.corpus)
    out = _out_dir(args.out)
    params = teacher if teacher is not None else student
    docs = _map(_pseudo_one, [(cfg, params, seed, s) for seed, s in corpus])
    for d in docs:
        (out / f"pseudo_{d['seed']}.json").write_text(json.dumps(d))
    vals = [np.nan if d["macc"] is None else d["macc"] for d in docs]
    base = [np.nan if d["baseline_macc"] is None else d["baseline_macc"] for d in docs]
    summary = {"mACC": corpus_macc(vals), "baseline_mACC": corpus_macc(base), "scenes": len(docs)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))


def cmd_eval(args) -> None:
    cfg, student, teacher = _load_run(args)
    scenes = [s for _, s in _corpus(args.corpus)]
    report = evaluate(student, cfg.model, scenes, teacher=teacher or student,
                      center_refine=cfg.train.center_refine)
    doc = report.as_dict()
    doc["baseline_mACC"] = baseline_macc(scenes)
    doc["scenes"] = len(scenes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2))
    print(json.dumps({k: doc[k] for k in ("AP", "AP50", "AP25", "mACC")}))


def _report_rows(path: Path, label: str):
    if path.suffix == ".csv":
        rows = read_metrics(path)
        ema = None
        for r in rows:
            ema = r["total"] if ema is None else 0.9 * ema + 0.1 * r["total"]
            yield {"run": label, "kind": "train", "step": r["step"], "metric": "total",
                   "iou": "", "class": "", "value": r["total"]}
            yield {"run": label, "kind": "train", "step": r["step"], "metric": "total_smoothed",
                   "iou": "", "class": "", "value": ema}
            for term in ("bce", "dice", "cls", "q", "f", "lr"):
                yield {"run": label, "kind": "train", "step": r["step"], "metric": term,
                       "iou": "", "class": "", "value": r[term]}
        return
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, "bad-metrics", f"{path}: {exc.msg}") from None
    for m in ("AP", "AP50", "AP25", "mACC", "baseline_mACC"):
        if doc.get(m) is not None:
            yield {"run": label, "kind": "eval", "step": "", "metric": m, "iou": "",
                   "class": "", "value": doc[m]}
    for t, v in doc.get("per_threshold", {}).items():
        yield {"run": label, "kind": "eval", "step": "", "metric": "AP", "iou": t,
               "class": "", "value": v}
    for c, vals in doc.get("per_class", {}).items():
        for m, v in vals.items():
            yield {"run": label, "kind": "eval", "step": "", "metric": m, "iou": "",
                   "class": c, "value": v}


def cmd_report(args) -> None:
    fields = ["run", "kind", "step", "metric", "iou", "class", "value"]
    rows = []
    for item in args.inputs:
        p = Path(item)
        if not p.is_file():
            raise CliError(EXIT_MISSING_PATH, "missing-path", f"metrics file not found: {p}")
        rows.extend(_report_rows(p, p.parent.name or p.stem))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")


# --- plumbing ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="boxseg", description="Box-supervised point-cloud instance segmentation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scenes", help="write a synthetic corpus")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.set_defaults(fn=cmd_gen_scenes)

    def ablations(sp):
        sp.add_argument("--no-center-refine", action="store_true",
                        help="teacher uses the learned position bank instead of box centres")

    t = sub.add_parser("train", help="student-teacher training")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    ablations(t)
    t.add_argument("--no-loss-q", action="store_true", help="drop the query consistency term")
    t.add_argument("--no-loss-f", action="store_true", help="drop the feature consistency term")
    t.set_defaults(fn=cmd_train)

    for name, fn, helptext in (("pseudo-label", cmd_pseudo_label, "score teacher pseudo-masks"),
                               ("eval", cmd_eval, "AP and mACC of a checkpoint")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--corpus", required=True)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--out", required=True)
        e.add_argument("--config")
        ablations(e)
        e.set_defaults(fn=fn)

    r = sub.add_parser("report", help="flatten metrics.csv / metrics.json into one CSV")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"boxseg-error code={code} kind={kind} msg={json.dumps(str(msg))}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_PATH, "missing-path", exc)
    except config_mod.ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, "checkpoint-version", exc)
    except SceneVersionError as exc:
        return _fail(EXIT_SCENE_VERSION, "scene-version", exc)
    except SceneGenerationError as exc:
        return _fail(EXIT_GENERATION, "scene-generation", exc)
    except SceneError as exc:
        return _fail(EXIT_SCENE_FORMAT, "scene-format", exc)
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        return _fail(EXIT_INTERNAL, type(exc).__name__, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
