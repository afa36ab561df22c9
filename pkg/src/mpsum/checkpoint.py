"""Versioned single-file JSON checkpoint.

Arrays are stored as ``{"shape": [...], "data": [...]}`` with float64 values
written by ``repr`` so a load/save cycle reproduces the file byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .config import RunConfig
from .errors import CheckpointError
from .head import BatchNormState, LinearHead
from .lora import LoraAdapter
from .poincare import BallScaler, PoincareCompressor
from .ssm import LAYER_FIELDS, EncoderConfig, LayerParams, MambaParams, Vocabulary

FORMAT_TAG = "mpsum_checkpoint_v1"

PREPROCESSING = {"lowercase": True, "strip_urls": True, "strip_digits": True,
                 "strip_punctuation": True, "sentence_delimiters": ".!?;"}


@dataclass
class Checkpoint:
    vocab: Vocabulary
    params: MambaParams
    compressor: PoincareCompressor | None  # None when compression is ablated
    batchnorm: BatchNormState
    head: LinearHead
    config: RunConfig
    adapters: dict[str, LoraAdapter] | None = None
    preprocessing: dict | None = None

    @property
    def seed(self) -> int:
        return self.config.seed


def _arr(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _unarr(d) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def to_dict(ck: Checkpoint) -> dict:
    p = ck.params
    return {
        "format_tag": FORMAT_TAG,
        "seed": ck.config.seed,
        "config": ck.config.to_dict(),
        "preprocessing": ck.preprocessing or PREPROCESSING,
        "vocabulary": list(ck.vocab.tokens),
        "encoder": {
            "config": asdict(p.config),
            "embedding": _arr(p.embedding),
            "layers": [{k: _arr(getattr(lp, k)) for k in LAYER_FIELDS} for lp in p.layers],
        },
        "adapters": None if ck.adapters is None else {
            name: {"target": ad.target, "alpha": ad.alpha, "dropout": ad.dropout,
                   "a": _arr(ad.a), "b": _arr(ad.b)}
            for name, ad in sorted(ck.adapters.items())
        },
        "compressor": None if ck.compressor is None else {
            "scale": ck.compressor.scaler.scale,
            "max_radius": ck.compressor.scaler.max_radius,
            "centroids": _arr(ck.compressor.centroids),
        },
        "batchnorm": {
            "gamma": _arr(ck.batchnorm.gamma), "beta": _arr(ck.batchnorm.beta),
            "running_mean": _arr(ck.batchnorm.running_mean),
            "running_var": _arr(ck.batchnorm.running_var),
            "momentum": ck.batchnorm.momentum, "eps": ck.batchnorm.eps,
        },
        "head": {"w": _arr(ck.head.w), "b": float(ck.head.b)},
        "thresholds": {"threshold": ck.config.threshold, "top_k": ck.config.top_k,
                       "tau_rouge": ck.config.tau_rouge},
    }


def from_dict(d: dict) -> Checkpoint:
    if not isinstance(d, dict) or d.get("format_tag") != FORMAT_TAG:
        tag = d.get("format_tag") if isinstance(d, dict) else None
        raise CheckpointError(f"unsupported checkpoint format {tag!r}; expected {FORMAT_TAG!r}")
    try:
        enc = d["encoder"]
        enc_cfg = EncoderConfig(**enc["config"])
        layers = [LayerParams(**{k: _unarr(layer[k]) for k in LAYER_FIELDS})
                  for layer in enc["layers"]]
        params = MambaParams(enc_cfg, _unarr(enc["embedding"]), layers)
        adapters = None
        if d["adapters"] is not None:
            adapters = {name: LoraAdapter(a["target"], _unarr(a["a"]), _unarr(a["b"]),
                                          a["alpha"], a["dropout"])
                        for name, a in d["adapters"].items()}
        comp = d["compressor"]
        compressor = None if comp is None else PoincareCompressor(
            BallScaler(comp["scale"], comp["max_radius"]), _unarr(comp["centroids"]))
        bn = d["batchnorm"]
        batchnorm = BatchNormState(_unarr(bn["gamma"]), _unarr(bn["beta"]),
                                   _unarr(bn["running_mean"]), _unarr(bn["running_var"]),
                                   bn["momentum"], bn["eps"])
        head = LinearHead(_unarr(d["head"]["w"]), d["head"]["b"])
        config = RunConfig.from_dict(d["config"])
        return Checkpoint(Vocabulary(list(d["vocabulary"])), params, compressor, batchnorm,
                          head, config, adapters, d["preprocessing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None


def dumps(ck: Checkpoint) -> str:
    return json.dumps(to_dict(ck), sort_keys=True, separators=(",", ":")) + "\n"


def save(ck: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(ck))


def load(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    return from_dict(data)
