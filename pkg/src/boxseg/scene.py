"""Synthetic labelled scenes, box-region partition and scene files."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BACKGROUND = -1

# per-class base colours; classes beyond the palette wrap around
PALETTE = np.array([
    [0.90, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.15, 0.30, 0.90],
    [0.90, 0.80, 0.10],
    [0.75, 0.20, 0.80],
    [0.10, 0.80, 0.80],
    [0.95, 0.50, 0.10],
    [0.45, 0.30, 0.15],
])


class SceneError(ValueError):
    pass


class SceneFormatError(SceneError):
    pass


class SceneVersionError(SceneError):
    pass


class SceneGenerationError(SceneError):
    pass


@dataclass
class SceneConfig:
    k_range: tuple[int, int] = (3, 8)
    points_per_instance: tuple[int, int] = (150, 450)
    background_points: int = 350
    room_extent: tuple[float, float, float] = (6.0, 6.0, 2.0)
    overlap_range: tuple[float, float] = (0.10, 0.30)
    num_classes: int = 4
    color_signal: float = 0.8
    color_noise: float = 0.08
    sigma_range: tuple[float, float] = (0.12, 0.45)
    attach_prob: float = 0.7
    max_retries: int = 60
    seed: int = 0

    def validate(self):
        for name in ("k_range", "points_per_instance", "sigma_range", "overlap_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.k_range[0] < 1 or self.points_per_instance[0] < 1:
            raise ValueError("need at least one instance with at least one point")
        lo, hi = self.overlap_range
        if not (0 < lo and hi < 1):
            raise ValueError(f"overlap_range must lie in (0, 1), got {self.overlap_range}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")


@dataclass
class Instance:
    box_min: np.ndarray
    box_max: np.ndarray
    class_id: int

    @property
    def center(self) -> np.ndarray:
        return (self.box_min + self.box_max) / 2

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        return np.all((xyz >= self.box_min) & (xyz <= self.box_max), axis=-1)

    def __eq__(self, other):
        return (isinstance(other, Instance) and self.class_id == other.class_id
                and np.array_equal(self.box_min, other.box_min)
                and np.array_equal(self.box_max, other.box_max))


@dataclass
class Scene:
    points: np.ndarray          # N x 6: xyz, rgb
    gt_instance: np.ndarray     # N, -1 for background
    instances: list[Instance]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def num_instances(self) -> int:
        return len(self.instances)

    @property
    def centers(self) -> np.ndarray:
        return np.stack([inst.center for inst in self.instances])

    @property
    def classes(self) -> np.ndarray:
        return np.array([inst.class_id for inst in self.instances], dtype=np.int64)

    def instance_masks(self) -> np.ndarray:
        """K x N boolean ground-truth masks."""
        return self.gt_instance[None, :] == np.arange(self.num_instances)[:, None]

    def __eq__(self, other):
        return (isinstance(other, Scene)
                and self.points.dtype == other.points.dtype
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.gt_instance, other.gt_instance)
                and self.instances == other.instances)


@dataclass
class RegionPartition:
    inside: np.ndarray          # N x K inclusive box membership
    kind: np.ndarray            # N: 0 background, 1 single box, 2 overlap
    background_idx: np.ndarray
    single_idx: np.ndarray
    overlap_idx: np.ndarray
    single_owner: np.ndarray    # instance of each single-box point
    m_l: np.ndarray = field(repr=False)  # N_l x K one-hot

    BACKGROUND, SINGLE, OVERLAP = 0, 1, 2

    @property
    def num_overlap(self) -> int:
        return len(self.overlap_idx)

    @property
    def num_single(self) -> int:
        return len(self.single_idx)

    @property
    def num_instances(self) -> int:
        return self.inside.shape[1]

    @property
    def m_u(self) -> np.ndarray:
        """N_u x K candidate matrix for overlap points."""
        return self.inside[self.overlap_idx]

    def candidates(self, j: int) -> np.ndarray:
        """Candidate instances of the j-th overlap point (local index)."""
        return np.flatnonzero(self.inside[self.overlap_idx[j]])

    def m_l_full(self) -> np.ndarray:
        """K x N box labels over single-box points, zero elsewhere."""
        out = np.zeros((self.num_instances, len(self.kind)), dtype=bool)
        out[self.single_owner, self.single_idx] = True
        return out


def _truncated_normal(rng, n, sigma, cut=2.5):
    z = rng.standard_normal((n, 3))
    bad = np.any(np.abs(z) > cut, axis=1)
    while bad.any():
        z[bad] = rng.standard_normal((int(bad.sum()), 3))
        bad = np.any(np.abs(z) > cut, axis=1)
    return z * sigma


def _draw_scene(cfg: SceneConfig, rng: np.random.Generator) -> Scene:
    room = np.asarray(cfg.room_extent, dtype=np.float64)
    k = int(rng.integers(cfg.k_range[0], cfg.k_range[1] + 1))
    margin = 0.1
    centers, halves, clouds, classes = [], [], [], []
    for i in range(k):
        sigma = rng.uniform(*cfg.sigma_range, size=3)
        sigma[2] *= 0.6
        half = 2.5 * sigma
        if i > 0 and rng.random() < cfg.attach_prob:
            j = int(rng.integers(i))
            axis = int(rng.integers(2))
            c = centers[j].copy()
            c[axis] += rng.choice([-1.0, 1.0]) * (half[axis] + halves[j][axis]) * rng.uniform(0.55, 0.9)
            other = 1 - axis
            c[other] += rng.uniform(-0.4, 0.4) * min(half[other], halves[j][other])
        else:
            c = rng.uniform(0, 1, size=3) * room
        c[2] = half[2] + 0.05
        lo = np.minimum(half + margin, room / 2)
        c = np.clip(c, lo, room - lo)
        n = int(rng.integers(cfg.points_per_instance[0], cfg.points_per_instance[1] + 1))
        xyz = np.clip(c + _truncated_normal(rng, n, sigma), 0, room)
        centers.append(c)
        halves.append(half)
        clouds.append(xyz)
        classes.append(int(rng.integers(cfg.num_classes)))

    instances = [Instance(xyz.min(axis=0), xyz.max(axis=0), cls) for xyz, cls in zip(clouds, classes)]

    # floor and two walls, kept outside every box
    bg = np.empty((0, 3))
    while len(bg) < cfg.background_points:
        m = cfg.background_points - len(bg)
        cand = rng.uniform(0, 1, size=(m, 3)) * room
        which = rng.integers(3, size=m)
        cand[which == 0, 2] = rng.uniform(0, 0.03, size=int((which == 0).sum()))
        cand[which == 1, 0] = rng.uniform(0, 0.03, size=int((which == 1).sum()))
        cand[which == 2, 1] = rng.uniform(0, 0.03, size=int((which == 2).sum()))
        inside = np.zeros(m, dtype=bool)
        for inst in instances:
            inside |= inst.contains(cand)
        bg = np.concatenate([bg, cand[~inside]])

    palette = PALETTE[np.arange(cfg.num_classes) % len(PALETTE)]
    rgb_parts = []
    for xyz, cls in zip(clouds, classes):
        base = cfg.color_signal * palette[cls] + (1 - cfg.color_signal) * 0.5
        rgb_parts.append(base + rng.normal(0, cfg.color_noise, size=(len(xyz), 3)))
    rgb_parts.append(rng.uniform(0.3, 0.7, size=(len(bg), 3)))
    rgb = np.clip(np.concatenate(rgb_parts), 0, 1)

    xyz = np.concatenate(clouds + [bg])
    gt = np.concatenate([np.full(len(c), i, dtype=np.int64) for i, c in enumerate(clouds)]
                        + [np.full(len(bg), BACKGROUND, dtype=np.int64)])
    order = rng.permutation(len(xyz))
    points = np.concatenate([xyz, rgb], axis=1)[order]
    return Scene(points=np.ascontiguousarray(points), gt_instance=gt[order], instances=instances)


def overlap_fraction(scene: Scene) -> float:
    return partition_regions(scene).num_overlap / scene.num_points


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Draw a scene whose overlap fraction falls inside ``config.overlap_range``.

    Single-instance scenes cannot overlap and skip that check.
    """
    config.validate()
    best = None
    for attempt in range(config.max_retries):
        rng = np.random.default_rng([seed, attempt])
        scene = _draw_scene(config, rng)
        if scene.num_instances == 1:
            return scene
        frac = overlap_fraction(scene)
        lo, hi = config.overlap_range
        if lo <= frac <= hi:
            return scene
        if best is None or abs(frac - (lo + hi) / 2) < abs(best - (lo + hi) / 2):
            best = frac
    raise SceneGenerationError(
        f"seed {seed}: overlap fraction {best:.3f} outside {config.overlap_range} "
        f"after {config.max_retries} attempts")


def generate_corpus(config: SceneConfig, n: int, seed: int | None = None) -> dict[int, Scene]:
    base = config.seed if seed is None else seed
    return {base + i: generate_scene(config, base + i) for i in range(n)}


def partition_regions(scene: Scene) -> RegionPartition:
    xyz = scene.xyz
    inside = np.stack([inst.contains(xyz) for inst in scene.instances], axis=1)
    count = inside.sum(axis=1)
    kind = np.minimum(count, 2).astype(np.int8)
    single_idx = np.flatnonzero(count == 1)
    owner = np.argmax(inside[single_idx], axis=1) if len(single_idx) else np.empty(0, dtype=np.intp)
    m_l = np.zeros((len(single_idx), scene.num_instances), dtype=bool)
    m_l[np.arange(len(single_idx)), owner] = True
    return RegionPartition(
        inside=inside,
        kind=kind,
        background_idx=np.flatnonzero(count == 0),
        single_idx=single_idx,
        overlap_idx=np.flatnonzero(count >= 2),
        single_owner=owner,
        m_l=m_l,
    )


def macc_oracle(partition: RegionPartition, scene: Scene) -> np.ndarray:
    """True instance of every overlap point, in ``overlap_idx`` order."""
    truth = scene.gt_instance[partition.overlap_idx]
    if len(truth):
        ok = truth >= 0
        ok[ok] = partition.inside[partition.overlap_idx[ok], truth[ok]]
        if not ok.all():
            bad = partition.overlap_idx[~ok]
            raise SceneError(f"{len(bad)} overlap points whose instance is not a box candidate "
                             f"(first global index {bad[0]})")
    return truth


# --- files -------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": FORMAT_VERSION,
        "points": scene.points.tolist(),
        "gt_instance": scene.gt_instance.tolist(),
        "instances": [
            {"box_min": inst.box_min.tolist(), "box_max": inst.box_max.tolist(),
             "class_id": int(inst.class_id)}
            for inst in scene.instances
        ],
    }


def _field(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise SceneFormatError(f"{where}: missing field '{key}'")
    return doc[key]


def scene_from_dict(doc: dict, where: str = "scene") -> Scene:
    version = _field(doc, "version", where)
    if version != FORMAT_VERSION:
        raise SceneVersionError(f"{where}: file format version {version}, reader supports {FORMAT_VERSION}")
    try:
        points = np.asarray(_field(doc, "points", where), dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"{where}: field 'points' is not a numeric array ({exc})") from None
    if points.ndim != 2 or points.shape[1] != 6 or points.shape[0] == 0:
        raise SceneFormatError(f"{where}: field 'points' must be N x 6 with N > 0, got {points.shape}")
    raw_gt = _field(doc, "gt_instance", where)
    try:
        gt = np.asarray(raw_gt, dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"{where}: field 'gt_instance' is not an integer array ({exc})") from None
    if gt.shape != (points.shape[0],):
        raise SceneFormatError(f"{where}: field 'gt_instance' has shape {gt.shape}, expected ({points.shape[0]},)")
    instances = []
    for i, item in enumerate(_field(doc, "instances", where)):
        at = f"{where}: instances[{i}]"
        try:
            lo = np.asarray(_field(item, "box_min", at), dtype=np.float64)
            hi = np.asarray(_field(item, "box_max", at), dtype=np.float64)
            cls = int(_field(item, "class_id", at))
        except (TypeError, ValueError) as exc:
            raise SceneFormatError(f"{at}: bad value ({exc})") from None
        if lo.shape != (3,) or hi.shape != (3,):
            raise SceneFormatError(f"{at}: box bounds must be 3-vectors")
        instances.append(Instance(lo, hi, cls))
    if not instances:
        raise SceneFormatError(f"{where}: field 'instances' is empty")
    if gt.min() < BACKGROUND or gt.max() >= len(instances):
        raise SceneFormatError(f"{where}: field 'gt_instance' references a missing instance")
    return Scene(points=points, gt_instance=gt, instances=instances)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)))


def load_scene(path) -> Scene:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scene_from_dict(doc, where=str(path))


_SCENE_NAME = re.compile(r"scene_(-?\d+)\.json$")


def save_corpus(scenes: dict[int, Scene], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for seed, scene in scenes.items():
        save_scene(scene, directory / f"scene_{seed}.json")


def load_corpus(directory) -> dict[int, Scene]:
    """Load every ``scene_<seed>.json`` in a directory, ordered by seed."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    found = []
    for p in directory.iterdir():
        m = _SCENE_NAME.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return {seed: load_scene(p) for seed, p in sorted(found)}
