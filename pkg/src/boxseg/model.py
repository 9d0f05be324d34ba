"""Toy query-based segmenter shared by student and teacher.

Per-point MLP encoder, a stack of decoder layers (cross-attention to point
features, self-attention between queries, feed-forward), and mask/class
heads on the refined content queries. The teacher's position queries are
built from instance centres instead of the learnable bank.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .assign import farthest_point_sampling, normalize_coords
from .tensor import Tensor

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    feature_dim: int = 32
    decoder_layers: int = 2
    num_queries: int = 16
    attention_heads: int = 4
    ffn_dim: int = 64
    num_classes: int = 4
    fourier_freqs: int = 8
    fps_start: int = 0

    @classmethod
    def full_scale(cls, num_classes: int = 18) -> "ModelConfig":
        """Full-size decoder preset (too slow for CPU training here)."""
        return cls(feature_dim=256, decoder_layers=6, num_queries=400,
                   attention_heads=8, ffn_dim=1024, num_classes=num_classes)

    def validate(self):
        if self.feature_dim % self.attention_heads:
            raise ValueError(f"feature_dim {self.feature_dim} not divisible by "
                             f"{self.attention_heads} heads")
        if self.decoder_layers < 1:
            raise ValueError("need at least one decoder layer")
        if self.num_queries < 1:
            raise ValueError("need at least one query")


class ModelParams(dict):
    """Named parameter tensors."""

    def copy(self, requires_grad: bool | None = None) -> "ModelParams":
        out = ModelParams()
        for k, t in self.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out[k] = Tensor(t.data.copy(), requires_grad=rg)
        return out

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams()
        for k, t in self.items():
            out[k] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
        return out

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.items()}

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def size(self) -> int:
        return sum(t.data.size for t in self.values())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c, f, nf = cfg.feature_dim, cfg.ffn_dim, 3 * cfg.fourier_freqs
    shapes = {
        "enc.w1": (6, c), "enc.b1": (c,), "enc.w2": (c, c), "enc.b2": (c,),
        "pe.w_sin": (nf, c), "pe.w_cos": (nf, c), "pe.b": (c,),
        "query_pos": (cfg.num_queries, 3),
        "cls.w": (c, cfg.num_classes + 1), "cls.b": (cfg.num_classes + 1,),
    }
    for i in range(cfg.decoder_layers):
        for att in ("cross", "self"):
            for w in ("wq", "wk", "wv", "wo"):
                shapes[f"dec{i}.{att}.{w}"] = (c, c)
        shapes.update({
            f"dec{i}.ffn.w1": (c, f), f"dec{i}.ffn.b1": (f,),
            f"dec{i}.ffn.w2": (f, c), f"dec{i}.ffn.b2": (c,),
        })
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"dec{i}.{ln}.g"] = (c,)
            shapes[f"dec{i}.{ln}.b"] = (c,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                requires_grad: bool = True) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, shape in param_shapes(cfg).items():
        if name == "query_pos":
            arr = rng.uniform(-1, 1, size=shape)
        elif name.endswith(".g"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=requires_grad)
    return params


# --- building blocks -----------------------------------------------------------

def _const(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def encode_points(params: ModelParams, points) -> Tensor:
    """Per-point two-layer MLP; no mixing between points."""
    x = _const(points, params["enc.w1"])
    h = T.relu(x @ params["enc.w1"] + params["enc.b1"])
    return h @ params["enc.w2"] + params["enc.b2"]


def fourier_encoding(params: ModelParams, xyz, num_freqs: int) -> Tensor:
    """sin/cos of each coordinate at octave frequencies, projected to C_f."""
    xyz = _const(xyz, params["pe.b"])
    freqs = np.pi * 2.0 ** np.arange(num_freqs)
    spread = np.kron(np.eye(3), freqs[None, :]).astype(xyz.dtype)  # 3 x 3F
    arg = xyz @ Tensor(spread)
    return T.sin(arg) @ params["pe.w_sin"] + T.cos(arg) @ params["pe.w_cos"] + params["pe.b"]


def _layer_norm(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return T.layer_norm(x) * params[prefix + ".g"] + params[prefix + ".b"]


def attention(params: ModelParams, prefix: str, q_in: Tensor, k_in: Tensor, v_in: Tensor,
              heads: int) -> Tensor:
    q = q_in @ params[prefix + ".wq"]
    k = k_in @ params[prefix + ".wk"]
    v = v_in @ params[prefix + ".wv"]
    wo = params[prefix + ".wo"]
    d = q.shape[1] // heads
    out = None
    for h in range(heads):
        s, e = h * d, (h + 1) * d
        logits = T.scale(T.cols(q, s, e) @ T.transpose(T.cols(k, s, e)), 1.0 / np.sqrt(d))
        head = (T.rowwise_softmax(logits) @ T.cols(v, s, e)) @ T.rows(wo, slice(s, e))
        out = head if out is None else out + head
    return out


def center_attention(q_pos, centers) -> Tensor:
    """softmax(q_pos . centers^T) . centers -- rows are convex combinations of centres."""
    q_pos = q_pos if isinstance(q_pos, Tensor) else Tensor(np.asarray(q_pos, dtype=np.float64))
    centers = _const(centers, q_pos)
    return T.rowwise_softmax(q_pos @ T.transpose(centers)) @ centers


def init_teacher_position(centers: np.ndarray, coords: np.ndarray, n_q: int, start: int = 0,
                          fps_coords: np.ndarray | None = None) -> np.ndarray:
    """softmax(P_fps . C^T) . C with P_fps the FPS picks among ``coords``.

    ``fps_coords`` (any affine image of ``coords``, e.g. the unit cube) is
    used for the sampling itself when given.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("need at least one instance centre")
    picks = farthest_point_sampling(coords if fps_coords is None else fps_coords, n_q, start)
    p_fps = np.asarray(coords, dtype=np.float64)[picks]
    return center_attention(p_fps, centers).data


def refine_teacher_position(q_pos: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return center_attention(np.asarray(q_pos, dtype=np.float64), centers).data


def init_student_queries(params: ModelParams, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Zero content queries and the learnable position bank."""
    pos = params["query_pos"]
    content = Tensor(np.zeros((cfg.num_queries, cfg.feature_dim), dtype=pos.dtype))
    return content, pos


def decoder_forward(params: ModelParams, cfg: ModelConfig, feats: Tensor, content: Tensor,
                    position, coords, centers: np.ndarray | None = None) -> tuple[Tensor, object]:
    """Run all decoder layers.

    With ``centers`` given (teacher mode) the position queries are pulled
    towards the instance centres after every layer but the last; otherwise
    they stay fixed for the whole pass.
    """
    key_pe = fourier_encoding(params, coords, cfg.fourier_freqs)
    keys = feats + key_pe
    x = content
    for i in range(cfg.decoder_layers):
        qpe = fourier_encoding(params, position, cfg.fourier_freqs)
        a = attention(params, f"dec{i}.cross", x + qpe, keys, feats, cfg.attention_heads)
        x = _layer_norm(x + a, params, f"dec{i}.ln1")
        xq = x + qpe
        s = attention(params, f"dec{i}.self", xq, xq, x, cfg.attention_heads)
        x = _layer_norm(x + s, params, f"dec{i}.ln2")
        h = T.relu(x @ params[f"dec{i}.ffn.w1"] + params[f"dec{i}.ffn.b1"])
        f = h @ params[f"dec{i}.ffn.w2"] + params[f"dec{i}.ffn.b2"]
        x = _layer_norm(x + f, params, f"dec{i}.ln3")
        if centers is not None and i < cfg.decoder_layers - 1:
            position = refine_teacher_position(_array(position), centers)
    return x, position


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def mask_logits(q_content: Tensor, feats: Tensor) -> Tensor:
    return q_content @ T.transpose(feats)


def predict_masks(q_content: Tensor, feats: Tensor) -> Tensor:
    """rho = sigmoid(Q_c . F^T), one row per query."""
    return T.sigmoid(mask_logits(q_content, feats))


def predict_classes(params: ModelParams, q_content: Tensor) -> Tensor:
    """Class logits; the last column is 'no object'."""
    return q_content @ params["cls.w"] + params["cls.b"]


# --- whole forward pass ----------------------------------------------------------

def scene_frame(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-scene (mid, half-extent) of the centred query frame."""
    xyz = points[:, :3]
    lo, hi = xyz.min(axis=0), xyz.max(axis=0)
    half = float((hi - lo).max()) / 2
    return (lo + hi) / 2, np.float64(half if half > 0 else 1.0)


def to_frame(points: np.ndarray, xyz: np.ndarray) -> np.ndarray:
    """Map scene-unit coordinates (points or box centres) into the centred
    frame: the longest scene axis spans [-1, 1]."""
    mid, half = scene_frame(points)
    return (np.asarray(xyz, dtype=np.float64) - mid) / half


def scene_inputs(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit-cube coordinates (FPS), centred coordinates (positional
    encodings, centre attention) and the encoder input."""
    unit = normalize_coords(points[:, :3])
    centred = to_frame(points, points[:, :3])
    return unit, centred, np.concatenate([centred, 2 * points[:, 3:6] - 1], axis=1)


@dataclass
class ForwardOut:
    feats: Tensor
    content: Tensor
    position: object
    logits: Tensor          # N_Q x N mask logits
    class_logits: Tensor

    @property
    def rho(self) -> np.ndarray:
        return T._sigmoid(self.logits.data)


def forward(params: ModelParams, cfg: ModelConfig, points: np.ndarray,
            centers: np.ndarray | None = None) -> ForwardOut:
    """Full pass. ``centers`` (scene units) switches on teacher-style positions."""
    dtype = params["enc.w1"].dtype
    unit, coords, enc_in = scene_inputs(points)
    feats = encode_points(params, enc_in.astype(dtype))
    content, position = init_student_queries(params, cfg)
    c_norm = None
    if centers is not None:
        c_norm = to_frame(points, centers)
        position = init_teacher_position(c_norm, coords, cfg.num_queries, cfg.fps_start,
                                         fps_coords=unit).astype(dtype)
        c_norm = c_norm.astype(dtype)
    content, position = decoder_forward(params, cfg, feats, content, position,
                                        coords.astype(dtype), c_norm)
    return ForwardOut(feats, content, position, mask_logits(content, feats),
                      predict_classes(params, content))


# --- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, cfg: ModelConfig, student: ModelParams, teacher: ModelParams | None = None,
                    meta: dict | None = None) -> None:
    header = {"version": CHECKPOINT_VERSION, "model_config": asdict(cfg), "meta": meta or {}}
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for k, t in student.items():
        arrays[f"student/{k}"] = t.data
    if teacher is not None:
        for k, t in teacher.items():
            arrays[f"teacher/{k}"] = t.data
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, cfg: ModelConfig | None = None):
    """Returns (config, student, teacher or None, meta).

    If ``cfg`` is given every array shape is checked against it.
    """
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
        header = json.loads(bytes(data["__header__"]).decode())
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')}, "
                              f"reader supports {CHECKPOINT_VERSION}")
    stored = ModelConfig(**header["model_config"])
    cfg = cfg or stored
    expected = param_shapes(cfg)
    groups = {"student": ModelParams(), "teacher": ModelParams()}
    for key in data.files:
        if key == "__header__":
            continue
        group, name = key.split("/", 1)
        groups[group][name] = Tensor(data[key], requires_grad=(group == "student"))
    for group, params in groups.items():
        if not params and group == "teacher":
            continue
        if params.shapes() != expected:
            bad = sorted(set(expected) ^ set(params.shapes())) or [
                k for k in expected if params[k].shape != expected[k]]
            raise CheckpointError(f"{path}: {group} parameters do not match the model config "
                                  f"(first mismatch: {bad[0]})")
    teacher = groups["teacher"] or None
    return cfg, groups["student"], teacher, header.get("meta", {})
