"""A small deterministic joint-attention diffusion transformer.

Image-latent tokens occupy indices ``[0, n_img)`` of the joint sequence and
text tokens ``[n_img, n_img + n_txt)``. Every attention site routes its
pre-softmax logits and value matrix through an attention processor, which is
where interventions and probes plug in.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Protocol

import numpy as np

from .errors import ConfigError, DomainError
from .numerics import RngStream, matmul, softmax_rows

STEP_RULES = ("residual", "residual_half")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 8
    n_heads: int = 4
    d_model: int = 64
    n_img: int = 64
    n_txt: int = 16
    n_steps: int = 20
    init_seed: int = 0
    vocab: int = 256
    patch: int = 4
    latent_dim: int = 8
    mlp_ratio: int = 2
    step_rule: str = "residual"
    # proxy for classifier-free guidance scale: multiplies the text-token inputs
    cond_strength: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_layers", "n_heads", "d_model", "n_img", "n_txt", "n_steps",
                     "vocab", "patch", "latent_dim", "mlp_ratio"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        side = math.isqrt(self.n_img)
        if side * side != self.n_img:
            raise ConfigError(f"n_img={self.n_img} must be a perfect square")
        if not 0 <= self.init_seed < 2**64:
            raise ConfigError("init_seed must be a 64-bit unsigned integer")
        if self.step_rule not in STEP_RULES:
            raise ConfigError(f"unknown step_rule {self.step_rule!r}; choose from {STEP_RULES}")
        if self.step_rule == "residual_half" and self.n_steps < 2:
            raise ConfigError("residual_half needs n_steps >= 2")
        if not math.isfinite(self.cond_strength):
            raise ConfigError("cond_strength must be finite")

    @property
    def seq_len(self) -> int:
        return self.n_img + self.n_txt

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def image_size(self) -> int:
        return math.isqrt(self.n_img) * self.patch

    @property
    def middle_layer(self) -> int:
        """Default intervention layer, ``n_layers // 2``."""
        return self.n_layers // 2

    def effective_steps(self) -> int:
        return self.n_steps // 2 if self.step_rule == "residual_half" else self.n_steps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Prompt:
    id: int
    token_ids: tuple[int, ...]
    text: str = ""


@dataclass
class GenerationOutput:
    image: np.ndarray
    pooled_features: np.ndarray
    per_step_latents: list[np.ndarray] | None = None


@dataclass(frozen=True)
class Site:
    """Location of one attention call inside a generation."""

    layer: int
    step: int
    t_norm: float


class AttentionProcessor(Protocol):
    def begin_step(self, step: int, t_norm: float) -> None: ...

    def attend(self, site: Site, logits: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Receive ``(H, N, N)`` logits and ``(H, N, head_dim)`` values; return the pair to use."""
        ...

    def observe(self, site: Site, probs: np.ndarray, block_output: np.ndarray) -> None: ...


class IdentityProcessor:
    """The unmodified attention path."""

    def begin_step(self, step, t_norm):
        pass

    def attend(self, site, logits, values):
        return logits, values

    def observe(self, site, probs, block_output):
        pass


def normalized_time(step_index: int, T: int) -> float:
    """``step_index / T``; step 0 is the noisiest step."""
    if T < 1 or not 0 <= step_index < T:
        raise DomainError(f"step index {step_index} outside [0, {T})")
    return step_index / T


def _sinusoid(positions: np.ndarray, d: int) -> np.ndarray:
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = positions[:, None] * freqs[None, :]
    out = np.zeros((len(positions), d))
    out[:, 0:2 * half:2] = np.sin(ang)
    out[:, 1:2 * half:2] = np.cos(ang)
    return out


def _layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x ** 3)))


@dataclass
class Model:
    config: ModelConfig
    weights: dict[str, np.ndarray] = field(repr=False)
    pos_img: np.ndarray = field(repr=False)
    pos_txt: np.ndarray = field(repr=False)

    def layer(self, i: int, name: str) -> np.ndarray:
        return self.weights[f"layer{i}.{name}"]


def _init(root: RngStream, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    w = root.child(name).uniform_array(int(np.prod(shape)), -bound, bound).reshape(shape)
    w.setflags(write=False)
    return w


def build_model(config: ModelConfig) -> Model:
    config.validate()
    d, hidden = config.d_model, config.d_model * config.mlp_ratio
    patch_px = config.patch * config.patch * 3
    root = RngStream(config.init_seed).child("weights")
    w: dict[str, np.ndarray] = {
        # embedding rows are one-hot lookups, so fan_in is 1
        "embed": _init(root, "embed", (config.vocab, d), 1),
        "w_in": _init(root, "w_in", (config.latent_dim, d), config.latent_dim),
        "w_time": _init(root, "w_time", (d, d), d),
        "w_out": _init(root, "w_out", (d, config.latent_dim), d),
        "w_dec": _init(root, "w_dec", (config.latent_dim, patch_px), config.latent_dim),
    }
    for i in range(config.n_layers):
        for name in ("wq", "wk", "wv", "wo"):
            w[f"layer{i}.{name}"] = _init(root, f"layer{i}.{name}", (d, d), d)
        w[f"layer{i}.w1"] = _init(root, f"layer{i}.w1", (d, hidden), d)
        w[f"layer{i}.w2"] = _init(root, f"layer{i}.w2", (hidden, d), hidden)
    pos_img = 0.5 * _sinusoid(np.arange(config.n_img, dtype=np.float64), d)
    pos_txt = 0.5 * _sinusoid(np.arange(config.n_txt, dtype=np.float64), d)
    return Model(config, w, pos_img, pos_txt)


def encode_prompt(model: Model, prompt: Prompt) -> np.ndarray:
    """Embedding lookup plus fixed positional offsets, shape ``(n_txt, d_model)``."""
    cfg = model.config
    ids = np.asarray(prompt.token_ids, dtype=np.int64)
    if ids.shape != (cfg.n_txt,):
        raise DomainError(f"prompt {prompt.id} has {ids.size} tokens, expected {cfg.n_txt}")
    if ids.min() < 0 or ids.max() >= cfg.vocab:
        raise DomainError(f"prompt {prompt.id} has token ids outside [0, {cfg.vocab})")
    return model.weights["embed"][ids] + model.pos_txt


def _time_features(model: Model, t_norm: float) -> np.ndarray:
    emb = _sinusoid(np.array([t_norm * 1000.0]), model.config.d_model)
    return matmul(emb, model.weights["w_time"])[0]


def _block(model: Model, i: int, h: np.ndarray, site: Site, processor) -> np.ndarray:
    cfg = model.config
    n, H, dh = h.shape[0], cfg.n_heads, cfg.head_dim
    a = _layer_norm(h)

    def heads(x):
        return np.ascontiguousarray(x.reshape(n, H, dh).transpose(1, 0, 2))

    q = heads(matmul(a, model.layer(i, "wq")))
    k = heads(matmul(a, model.layer(i, "wk")))
    v = heads(matmul(a, model.layer(i, "wv")))
    logits = matmul(q, np.ascontiguousarray(k.transpose(0, 2, 1))) * (1.0 / math.sqrt(dh))
    logits, v = processor.attend(site, logits, v)
    probs = softmax_rows(logits)
    o = matmul(probs, v).transpose(1, 0, 2).reshape(n, cfg.d_model)
    attn_out = matmul(o, model.layer(i, "wo"))
    processor.observe(site, probs, attn_out)
    h = h + attn_out
    return h + matmul(_gelu(matmul(_layer_norm(h), model.layer(i, "w1"))), model.layer(i, "w2"))


def decode_image(model: Model, latent: np.ndarray) -> np.ndarray:
    cfg = model.config
    side = math.isqrt(cfg.n_img)
    px = 1.0 / (1.0 + np.exp(-matmul(latent, model.weights["w_dec"])))
    img = px.reshape(side, side, cfg.patch, cfg.patch, 3).transpose(0, 2, 1, 3, 4)
    return np.clip(img.reshape(cfg.image_size, cfg.image_size, 3), 0.0, 1.0)


def forward_denoise(model: Model, prompt: Prompt, seed: int, processor=None,
                    keep_trajectory: bool = False) -> GenerationOutput:
    """Run the full denoising loop for one (prompt, seed) pair.

    The initial latent is drawn from the ``"latent"`` child of ``RngStream(seed)``;
    each step applies ``x <- x - (1/T) f(x, t)``.
    """
    cfg = model.config
    processor = processor if processor is not None else IdentityProcessor()
    T = cfg.effective_steps()
    x = RngStream(seed).child("latent").normal_array(cfg.n_img * cfg.latent_dim)
    x = x.reshape(cfg.n_img, cfg.latent_dim)
    txt = encode_prompt(model, prompt) * cfg.cond_strength
    trajectory = [x.copy()] if keep_trajectory else None
    h = None
    for step in range(T):
        t_norm = normalized_time(step, T)
        processor.begin_step(step, t_norm)
        h_img = matmul(x, model.weights["w_in"]) + model.pos_img + _time_features(model, t_norm)
        h = np.concatenate([h_img, txt], axis=0)
        for i in range(cfg.n_layers):
            h = _block(model, i, h, Site(i, step, t_norm), processor)
        f = matmul(h[: cfg.n_img], model.weights["w_out"])
        x = x - (1.0 / T) * f
        if trajectory is not None:
            trajectory.append(x.copy())
    pooled = h[: cfg.n_img].mean(axis=0)
    return GenerationOutput(decode_image(model, x), pooled, trajectory)
