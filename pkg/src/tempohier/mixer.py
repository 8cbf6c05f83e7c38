"""TSMixer backbone: residual time-mixing / feature-mixing blocks with a temporal head.

Parameters live in flat ``{name: ndarray}`` dicts so that several backbones
(encoder, decoder, embedder tables) can share one namespace under prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError

LN_EPS = 1e-5


@dataclass(frozen=True)
class MixerConfig:
    input_len: int
    output_len: int
    n_features: int
    hidden: int = 32
    blocks: int = 2
    heads: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("input_len", "output_len", "n_features", "hidden", "blocks", "heads"):
            if getattr(self, name) <= 0:
                raise ContractError(f"MixerConfig.{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")


def param_shapes(cfg: MixerConfig) -> dict[str, tuple[int, ...]]:
    L, d = cfg.input_len, cfg.hidden
    shapes: dict[str, tuple[int, ...]] = {
        "in.W": (cfg.n_features, d),
        "in.b": (d,),
    }
    for i in range(cfg.blocks):
        p = f"blk{i}."
        shapes.update(
            {
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "time.W": (L, L),
                p + "time.b": (L,),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "feat1.W": (d, d),
                p + "feat1.b": (d,),
                p + "feat2.W": (d, d),
                p + "feat2.b": (d,),
            }
        )
    shapes["tproj.W"] = (L, cfg.output_len)
    shapes["tproj.b"] = (cfg.output_len,)
    shapes["head.W"] = (d, cfg.heads)
    shapes["head.b"] = (cfg.heads,)
    return shapes


def param_count(cfg: MixerConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: MixerConfig, seed: int | np.random.Generator, prefix: str = "") -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) for linear layers, unit gain / zero bias for layer norms."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = {}
    shapes = param_shapes(cfg)
    for name, shape in shapes.items():
        if ".ln" in "." + name:
            out[prefix + name] = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
            continue
        fan_in = shapes[name[:-1] + "W"][0]
        bound = 1.0 / np.sqrt(fan_in)
        out[prefix + name] = rng.uniform(-bound, bound, size=shape)
    return out


def mixer_block(x, p: dict, prefix: str, cfg: MixerConfig, train: bool = False, rng=None):
    """One pre-norm residual block on ``x`` of shape [..., L, d]."""
    z = ad.layer_norm(x, p[prefix + "ln1.g"], p[prefix + "ln1.b"], LN_EPS)
    u = ad.relu(ad.linear(ad.swapaxes(z, -1, -2), p[prefix + "time.W"], p[prefix + "time.b"]))
    u = ad.dropout(u, cfg.dropout, rng, train)
    x = x + ad.swapaxes(u, -1, -2)
    z = ad.layer_norm(x, p[prefix + "ln2.g"], p[prefix + "ln2.b"], LN_EPS)
    v = ad.relu(ad.linear(z, p[prefix + "feat1.W"], p[prefix + "feat1.b"]))
    v = ad.dropout(v, cfg.dropout, rng, train)
    v = ad.linear(v, p[prefix + "feat2.W"], p[prefix + "feat2.b"])
    return x + v


def backbone_forward(features, p: dict, cfg: MixerConfig, prefix: str = "", train: bool = False, rng=None):
    """Map [..., L, F] covariates to [..., L_out, heads]."""
    features = ad.as_tensor(features)
    if features.shape[-2:] != (cfg.input_len, cfg.n_features):
        raise DimensionError(
            f"backbone input has trailing shape {features.shape[-2:]}, "
            f"expected ({cfg.input_len}, {cfg.n_features})"
        )
    x = ad.linear(features, p[prefix + "in.W"], p[prefix + "in.b"])
    for i in range(cfg.blocks):
        x = mixer_block(x, p, f"{prefix}blk{i}.", cfg, train, rng)
    x = ad.linear(ad.swapaxes(x, -1, -2), p[prefix + "tproj.W"], p[prefix + "tproj.b"])
    return ad.linear(ad.swapaxes(x, -1, -2), p[prefix + "head.W"], p[prefix + "head.b"])
