"""Encoder-decoder temporal-hierarchy model, the monolithic variant, and their losses.

Parameter names are prefixed by module: ``emb.`` (categorical embedding
tables, shared), ``enc.`` (coarse-level backbone), ``dec.`` (deviation
backbone) and ``mono.`` (single backbone baseline).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import FeatureBatch, FeatureSchema
from .errors import ContractError, DataError, TrainingError
from .hierarchy import HierarchySpec, bin_average, center_deviations, readout, upsample
from .mixer import MixerConfig, backbone_forward, init_params, param_count
from .optim import AdamState, adam_step, clip_gradients

LOSS_KINDS = ("mse", "nbnll")
MODEL_KINDS = ("encdec", "mono")
MU_FLOOR = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    schema: FeatureSchema
    spec: HierarchySpec = HierarchySpec()
    loss: str = "mse"
    hidden: int | None = None
    blocks: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.loss not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind {self.loss!r}")
        if self.hidden is None:
            object.__setattr__(self, "hidden", 32 if self.kind == "encdec" else 64)

    @property
    def heads(self) -> int:
        return 2 if self.loss == "nbnll" else 1

    def mixer(self, role: str) -> MixerConfig:
        L, F = self.spec.window, self.schema.width
        if role == "enc":
            return MixerConfig(L, self.spec.k, F, self.hidden, self.blocks, self.heads, self.dropout)
        if role == "dec":
            return MixerConfig(L, self.spec.h, F + 1, self.hidden, self.blocks, self.heads, self.dropout)
        if role == "mono":
            return MixerConfig(L, self.spec.h, F, self.hidden, self.blocks, self.heads, self.dropout)
        raise ContractError(f"unknown role {role!r}")

    @property
    def roles(self) -> tuple[str, ...]:
        return ("enc", "dec") if self.kind == "encdec" else ("mono",)

    def backbone_param_count(self) -> int:
        return sum(param_count(self.mixer(r)) for r in self.roles)


@dataclass
class ForecastPair:
    """Fine (length h) and coarse (length k) outputs, batched over axis 0.

    For the negative-binomial loss ``fine``/``coarse`` are the coherent raw
    location signals and the ``*_dispersion`` fields hold alpha > 0.
    """

    fine: object
    coarse: object
    fine_dispersion: object = None
    coarse_dispersion: object = None


def init_model(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for _, name, r, n_emb in cfg.schema.embedded:
        params[f"emb.{name}"] = rng.standard_normal((r, n_emb))
    for role in cfg.roles:
        params.update(init_params(cfg.mixer(role), rng, prefix=f"{role}."))
    return params


def as_constants(params: dict[str, np.ndarray]) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v) for k, v in params.items()}


def embed_features(batch: FeatureBatch, params: dict, schema: FeatureSchema) -> ad.Tensor:
    """Replace embedded categorical channels by table rows; keep binaries and continuous."""
    cat = batch.cat
    if cat.shape[-1] != len(schema.cardinalities):
        raise DataError(f"batch has {cat.shape[-1]} categorical columns, schema has {len(schema.cardinalities)}")
    parts = []
    for j, (name, r) in enumerate(zip(schema.cat_names, schema.cardinalities)):
        col = cat[..., j]
        bad = (col < 0) | (col >= r)
        if bad.any():
            raise DataError(f"feature {name}: index {int(col[bad][0])} outside vocabulary of size {r}")
        if schema.is_embedded(j):
            parts.append(ad.take_rows(params[f"emb.{name}"], col))
        else:
            parts.append(ad.Tensor(col[..., None].astype(np.float64)))
    parts.append(ad.Tensor(batch.cont))
    return ad.concat(parts, axis=-1)


def _split_heads(out: ad.Tensor):
    loc = out[..., 0]
    disp = ad.softplus(out[..., 1]) + MU_FLOOR if out.shape[-1] > 1 else None
    return loc, disp


def forward(cfg: ModelConfig, params: dict, batch: FeatureBatch, train: bool = False, rng=None) -> ForecastPair:
    """Encoder predicts bin levels; decoder predicts centered deviations from a detached copy."""
    if cfg.kind != "encdec":
        return mono_forward(cfg, params, batch, train, rng)
    spec = cfg.spec
    x = embed_features(batch, params, cfg.schema)
    coarse, coarse_disp = _split_heads(backbone_forward(x, params, cfg.mixer("enc"), "enc.", train, rng))
    frozen = ad.detach(coarse)
    B = x.shape[0]
    cond = np.concatenate([np.zeros((B, spec.c)), upsample(frozen.values, spec)], axis=1)
    x_dec = ad.concat([x, ad.Tensor(cond[..., None])], axis=-1)
    d_raw, fine_disp = _split_heads(backbone_forward(x_dec, params, cfg.mixer("dec"), "dec.", train, rng))
    fine = readout(frozen, center_deviations(d_raw, spec), spec)
    return ForecastPair(fine, coarse, fine_disp, coarse_disp)


def mono_forward(cfg: ModelConfig, params: dict, batch: FeatureBatch, train: bool = False, rng=None) -> ForecastPair:
    """Single backbone straight to the fine horizon; coarse is its bin average."""
    x = embed_features(batch, params, cfg.schema)
    fine, fine_disp = _split_heads(backbone_forward(x, params, cfg.mixer("mono"), "mono.", train, rng))
    return ForecastPair(fine, bin_average(fine, cfg.spec), fine_disp, None)


# -- losses ----------------------------------------------------------------


def nbnll(y, mu, alpha) -> ad.Tensor:
    """Elementwise negative-binomial NLL in mean/dispersion form (y may be non-integer)."""
    y = ad.as_tensor(y)
    inv = 1.0 / ad.as_tensor(alpha)
    am = alpha * mu
    log1p_am = ad.log(1.0 + am)
    ll = (
        ad.lgamma(y + inv)
        - ad.Tensor(ad.lgamma_values(y.values + 1.0))
        - ad.lgamma(inv)
        - inv * log1p_am
        + y * (ad.log(am) - log1p_am)
    )
    return -ll


def _loss(pred, target, kind, scale, dispersion) -> ad.Tensor:
    scale = ad.as_tensor(scale)
    if kind == "mse":
        return ad.mean(ad.square((pred - target) * scale))
    if kind == "nbnll":
        if dispersion is None:
            raise ContractError("negative-binomial loss needs a dispersion output")
        mu = ad.softplus(pred) * scale + MU_FLOOR
        return ad.mean(nbnll(target * scale, mu, dispersion))
    raise ContractError(f"unknown loss kind {kind!r}")


def encoder_loss(coarse, y, spec: HierarchySpec, kind: str = "mse", scale=1.0, dispersion=None) -> ad.Tensor:
    """Loss of the coarse forecast against bin averages of the daily targets ``y``."""
    return _loss(coarse, bin_average(np.asarray(y, dtype=np.float64), spec), kind, scale, dispersion)


def decoder_loss(fine, y, kind: str = "mse", scale=1.0, dispersion=None) -> ad.Tensor:
    return _loss(fine, np.asarray(y, dtype=np.float64), kind, scale, dispersion)


def _scales(batch: FeatureBatch, rescale: bool):
    s = batch.scale[:, None]
    return batch.y_future / s, (s if rescale else np.ones_like(s))


def compute_losses(cfg: ModelConfig, pair: ForecastPair, batch: FeatureBatch, rescale: bool = False):
    """(l_enc, l_dec); l_enc is None for the monolithic model."""
    y, scale = _scales(batch, rescale)
    if np.isnan(y).any():
        raise DataError("batch has no future targets")
    l_dec = decoder_loss(pair.fine, y, cfg.loss, scale, pair.fine_dispersion)
    if cfg.kind == "mono":
        return None, l_dec
    return encoder_loss(pair.coarse, y, cfg.spec, cfg.loss, scale, pair.coarse_dispersion), l_dec


def point_forecast(cfg: ModelConfig, pair: ForecastPair, scale) -> tuple[np.ndarray, np.ndarray]:
    """Fine and coarse forecasts in original units; always mutually coherent."""
    s = np.asarray(scale, dtype=np.float64)[:, None]
    fine = ad.as_tensor(pair.fine).values
    if cfg.loss == "nbnll":
        fine = np.logaddexp(0.0, fine) * s
        return fine, bin_average(fine, cfg.spec)
    coarse = ad.as_tensor(pair.coarse).values
    return fine * s, coarse * s


def predict(cfg: ModelConfig, params: dict[str, np.ndarray], batch: FeatureBatch) -> tuple[np.ndarray, np.ndarray]:
    pair = forward(cfg, as_constants(params), batch)
    return point_forecast(cfg, pair, batch.scale)


# -- training step ----------------------------------------------------------


def role_of(name: str) -> str:
    return name.split(".", 1)[0]


def route_gradients(cfg: ModelConfig, tape: ad.Tape, leaves: dict[str, ad.Tensor], l_enc, l_dec):
    """Encoder params from l_enc, decoder params from l_dec, embedder from their sum.

    Returns (combined, enc_grads, dec_grads); the latter two cover every leaf.
    """
    g_dec = ad.gradients_for(ad.backward(l_dec, tape), leaves)
    if l_enc is None:
        return dict(g_dec), None, g_dec
    g_enc = ad.gradients_for(ad.backward(l_enc, tape), leaves)
    combined = {}
    for name in leaves:
        role = role_of(name)
        if role == "enc":
            combined[name] = g_enc[name]
        elif role == "dec":
            combined[name] = g_dec[name]
        else:
            combined[name] = g_enc[name] + g_dec[name]
    return combined, g_enc, g_dec


def training_step(cfg: ModelConfig, params: dict[str, np.ndarray], batch: FeatureBatch, state: AdamState,
                  rescale: bool = False, clip: float = 1.0, rng=None):
    """One forward pass, routed gradients, global clipping, one Adam update.

    Returns (new params, l_enc value or None, l_dec value).
    """
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    pair = forward(cfg, leaves, batch, train=cfg.dropout > 0, rng=rng)
    l_enc, l_dec = compute_losses(cfg, pair, batch, rescale)
    enc_val = None if l_enc is None else l_enc.item()
    dec_val = l_dec.item()
    if not np.isfinite(dec_val) or (enc_val is not None and not np.isfinite(enc_val)):
        raise TrainingError(f"non-finite loss: l_enc={enc_val}, l_dec={dec_val}")
    grads, _, _ = route_gradients(cfg, tape, leaves, l_enc, l_dec)
    grads = clip_gradients(grads, clip)
    params, _ = adam_step(params, grads, state)
    return params, enc_val, dec_val
