"""Two-layer recurrent forecasters with an optional attention readout.

Three variants share one wiring: recurrent layer -> batch normalisation (per
time step, over the batch) -> dropout -> recurrent layer -> readout -> scalar
score for the next day's return.

* ``lstm``      unidirectional layers, readout from the last hidden state
* ``bilstm``    bidirectional layers, readout from the two terminal states
* ``at-bilstm`` bidirectional layers; dot-product attention over layer-2
  states, queried by the terminal state, concatenated with it for the readout

The backward pass is written by hand layer by layer.  Forward caches are
single-use: reusing one raises :class:`StaleCacheError`.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import (
    LstmCellParams,
    attention_backward,
    attention_forward,
    batch_norm_backward,
    batch_norm_forward,
    bilstm_backward,
    bilstm_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    glorot_uniform,
    init_lstm_cell,
    lstm_layer_backward,
    lstm_layer_forward,
)
from .rmsprop import RmsPropState


class Variant(enum.Enum):
    LSTM = "lstm"
    BILSTM = "bilstm"
    AT_BILSTM = "at-bilstm"


class UnknownVariantError(ValueError):
    def __init__(self, tag):
        super().__init__(f"unknown model variant {tag!r}")


class ShapeMismatchError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """A forward cache was consumed twice."""


def variant_from_string(tag: str) -> Variant:
    try:
        return Variant(tag)
    except ValueError:
        raise UnknownVariantError(tag) from None


@dataclass
class RecurrentLayerParams:
    fwd: LstmCellParams
    bwd: LstmCellParams | None  # None for a unidirectional layer

    @property
    def output_width(self) -> int:
        width = self.fwd.hidden_dim
        return width if self.bwd is None else 2 * width

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"fwd.{k}": v for k, v in self.fwd.tensors().items()}
        if self.bwd is not None:
            out.update({f"bwd.{k}": v for k, v in self.bwd.tensors().items()})
        return out


@dataclass
class NetworkParams:
    variant: Variant
    layer1: RecurrentLayerParams
    layer2: RecurrentLayerParams
    bn_gamma: np.ndarray        # one slot per (time step, layer-1 feature)
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray          # shape (1,)
    dropout_rate: float
    input_dim: int
    hidden_units: int
    window_length: int
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"layer1.{k}": v for k, v in self.layer1.tensors().items()}
        out.update({f"layer2.{k}": v for k, v in self.layer2.tensors().items()})
        out.update({
            "bn.gamma": self.bn_gamma,
            "bn.beta": self.bn_beta,
            "bn.running_mean": self.bn_running_mean,
            "bn.running_var": self.bn_running_var,
            "head.w": self.head_w,
            "head.b": self.head_b,
        })
        return out

    def trainable_tensors(self) -> dict[str, np.ndarray]:
        # running statistics are tracked, not trained
        return {
            name: t for name, t in self.tensors().items()
            if not name.startswith("bn.running_")
        }


def init_network(variant: Variant, input_dim: int, hidden_units: int,
                 window_length: int, rng: np.random.Generator,
                 *, dropout_rate: float = 0.2, bn_eps: float = 1e-5,
                 bn_momentum: float = 0.1) -> NetworkParams:
    """Fresh parameters.  `hidden_units` counts units per direction."""
    if variant not in Variant:
        raise UnknownVariantError(variant)
    bidirectional = variant is not Variant.LSTM

    def layer(in_dim):
        fwd = init_lstm_cell(rng, in_dim, hidden_units)
        bwd = init_lstm_cell(rng, in_dim, hidden_units) if bidirectional else None
        return RecurrentLayerParams(fwd, bwd)

    layer1 = layer(input_dim)
    k1 = layer1.output_width
    layer2 = layer(k1)
    k2 = layer2.output_width
    head_in = 2 * k2 if variant is Variant.AT_BILSTM else k2
    bn_width = window_length * k1
    return NetworkParams(
        variant=variant,
        layer1=layer1,
        layer2=layer2,
        bn_gamma=np.ones(bn_width),
        bn_beta=np.zeros(bn_width),
        bn_running_mean=np.zeros(bn_width),
        bn_running_var=np.ones(bn_width),
        head_w=glorot_uniform(rng, head_in, 1, (head_in,)),
        head_b=np.zeros(1),
        dropout_rate=dropout_rate,
        input_dim=input_dim,
        hidden_units=hidden_units,
        window_length=window_length,
        bn_eps=bn_eps,
        bn_momentum=bn_momentum,
    )


def _recurrent_forward(layer: RecurrentLayerParams, seq: np.ndarray):
    if layer.bwd is None:
        return lstm_layer_forward(layer.fwd, seq)
    return bilstm_forward(layer.fwd, layer.bwd, seq)


def _recurrent_backward(layer: RecurrentLayerParams, caches, dY: np.ndarray):
    if layer.bwd is None:
        dseq, grads = lstm_layer_backward(layer.fwd, caches, dY)
        return dseq, {f"fwd.{k}": v for k, v in grads.items()}
    dseq, grads_f, grads_b = bilstm_backward(layer.fwd, layer.bwd, caches, dY)
    merged = {f"fwd.{k}": v for k, v in grads_f.items()}
    merged.update({f"bwd.{k}": v for k, v in grads_b.items()})
    return dseq, merged


def _terminal_state(Y: np.ndarray, bidirectional: bool, h: int) -> np.ndarray:
    """The state that has seen the whole window: last step of the forward
    direction, first step of the backward one."""
    if not bidirectional:
        return Y[:, -1, :]
    return np.concatenate([Y[:, -1, :h], Y[:, 0, h:]], axis=1)


def forward(params: NetworkParams, windows: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None):
    """Score each window.

    `windows` is (m, T, d) or a single (T, d); a single window returns a
    float.  `mode` is "train" (batch statistics, active dropout, cache usable
    for :func:`backward`) or "infer".  Training mode updates the batch-norm
    running statistics in place.
    """
    x = np.asarray(windows, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None, :, :]
    if x.ndim != 3:
        raise ShapeMismatchError(f"windows must be 2- or 3-d, got {x.shape}")
    m, T, d = x.shape
    if T != params.window_length or d != params.input_dim:
        raise ShapeMismatchError(
            f"window {T}x{d}, network expects "
            f"{params.window_length}x{params.input_dim}"
        )
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")

    Y1, l1_caches = _recurrent_forward(params.layer1, x)
    k1 = Y1.shape[2]
    flat = Y1.reshape(m, T * k1)
    normed, bn_cache, new_mean, new_var = batch_norm_forward(
        flat, params.bn_gamma, params.bn_beta, mode,
        params.bn_running_mean, params.bn_running_var,
        eps=params.bn_eps, momentum=params.bn_momentum,
    )
    if mode == "train":
        params.bn_running_mean[:] = new_mean
        params.bn_running_var[:] = new_var
    dropped, drop_cache = dropout_forward(normed, params.dropout_rate, mode, rng)
    Y2, l2_caches = _recurrent_forward(params.layer2, dropped.reshape(m, T, k1))

    h = params.hidden_units
    bidirectional = params.layer2.bwd is not None
    terminal = _terminal_state(Y2, bidirectional, h)
    if params.variant is Variant.AT_BILSTM:
        context, attn_weights, attn_cache = attention_forward(Y2, terminal)
        head_in = np.concatenate([context, terminal], axis=1)
    else:
        attn_weights, attn_cache = None, None
        head_in = terminal
    scores, head_cache = dense_forward(params.head_w, params.head_b, head_in)

    cache = {
        "mode": mode,
        "used": False,
        "shape": (m, T, k1),
        "l1": l1_caches,
        "bn": bn_cache,
        "drop": drop_cache,
        "l2": l2_caches,
        "Y2_width": Y2.shape[2],
        "attn": attn_cache,
        "attn_weights": attn_weights,
        "head": head_cache,
    }
    return (float(scores[0]) if single else scores), cache


def backward(params: NetworkParams, cache: dict, dscores: np.ndarray):
    """Gradients of a scalar loss with respect to every trainable tensor.

    `dscores` is the loss gradient at the per-window scores.  The cache must
    come from a train-mode forward and is consumed by the call.
    """
    if cache["used"]:
        raise StaleCacheError("forward cache already consumed")
    if cache["mode"] != "train":
        raise ValueError("backward needs a cache from a train-mode forward")
    cache["used"] = True

    m, T, k1 = cache["shape"]
    dscores = np.asarray(dscores, dtype=np.float64)
    if dscores.shape != (m,):
        raise ShapeMismatchError(f"dscores {dscores.shape}, batch {m}")

    grads: dict[str, np.ndarray] = {}
    dhead_in, dw, db = dense_backward(params.head_w, cache["head"], dscores)
    grads["head.w"] = dw
    grads["head.b"] = db

    h = params.hidden_units
    bidirectional = params.layer2.bwd is not None
    k2 = cache["Y2_width"]
    if params.variant is Variant.AT_BILSTM:
        dcontext = dhead_in[:, :k2]
        dterminal = dhead_in[:, k2:].copy()
        dY2, dquery = attention_backward(cache["attn"], dcontext)
        dterminal += dquery
    else:
        dterminal = dhead_in
        dY2 = np.zeros((m, T, k2))
    if bidirectional:
        dY2[:, -1, :h] += dterminal[:, :h]
        dY2[:, 0, h:] += dterminal[:, h:]
    else:
        dY2[:, -1, :] += dterminal

    dl2_in, l2_grads = _recurrent_backward(params.layer2, cache["l2"], dY2)
    grads.update({f"layer2.{k}": v for k, v in l2_grads.items()})

    dflat = dropout_backward(cache["drop"], dl2_in.reshape(m, T * k1))
    dflat, dgamma, dbeta = batch_norm_backward(cache["bn"], dflat)
    grads["bn.gamma"] = dgamma
    grads["bn.beta"] = dbeta

    _, l1_grads = _recurrent_backward(params.layer1, cache["l1"], dflat.reshape(m, T, k1))
    grads.update({f"layer1.{k}": v for k, v in l1_grads.items()})
    return grads


def mse_loss(scores: np.ndarray, targets: np.ndarray):
    """Mean squared error and its gradient with respect to the scores."""
    err = scores - targets
    return float(np.mean(err * err)), 2.0 * err / len(err)


# --- checkpointing ---------------------------------------------------------
#
# Layout: magic, 8-byte little-endian header length, JSON header, then each
# tensor's float64 bytes in header order.  No timestamps or other varying
# state, so identical contents produce identical files.

_MAGIC = b"RNNTRADER-CKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(path, params: NetworkParams,
                    opt_state: RmsPropState | None = None,
                    extra_tensors: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write params (+ optimizer accumulators, extra arrays, metadata).

    The file is a versioned binary blob; loading reproduces every tensor
    bit for bit.
    """
    tensors = dict(params.tensors())
    if opt_state is not None:
        tensors.update({f"opt.r.{k}": v for k, v in opt_state.r.items()})
    if extra_tensors:
        overlap = set(extra_tensors) & set(tensors)
        if overlap:
            raise ValueError(f"extra tensor names collide: {sorted(overlap)}")
        tensors.update(extra_tensors)
    names = sorted(tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "variant": params.variant.value,
        "input_dim": params.input_dim,
        "hidden_units": params.hidden_units,
        "window_length": params.window_length,
        "dropout_rate": params.dropout_rate,
        "bn_eps": params.bn_eps,
        "bn_momentum": params.bn_momentum,
        "optimizer": None if opt_state is None else {
            "learning_rate": opt_state.learning_rate,
            "rho": opt_state.rho,
            "delta": opt_state.delta,
        },
        "extra_names": sorted(extra_tensors) if extra_tensors else [],
        "meta": meta or {},
        "tensors": [
            {"name": n, "shape": list(tensors[n].shape)} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def _cell_from(tensors: dict[str, np.ndarray], prefix: str) -> LstmCellParams:
    names = ("W_f", "W_i", "W_o", "W_c", "U_f", "U_i", "U_o", "U_c",
             "b_f", "b_i", "b_o", "b_c")
    return LstmCellParams(**{n: tensors[f"{prefix}.{n}"] for n in names})


def load_checkpoint(path):
    """Returns (params, opt_state | None, extra_tensors, meta)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(
                f"{path}: format version {header['format_version']}, "
                f"expected {FORMAT_VERSION}"
            )
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(count * 8)
            tensors[spec["name"]] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()

    variant = variant_from_string(header["variant"])
    bidirectional = variant is not Variant.LSTM

    def layer(idx):
        fwd = _cell_from(tensors, f"layer{idx}.fwd")
        bwd = _cell_from(tensors, f"layer{idx}.bwd") if bidirectional else None
        return RecurrentLayerParams(fwd, bwd)

    params = NetworkParams(
        variant=variant,
        layer1=layer(1),
        layer2=layer(2),
        bn_gamma=tensors["bn.gamma"],
        bn_beta=tensors["bn.beta"],
        bn_running_mean=tensors["bn.running_mean"],
        bn_running_var=tensors["bn.running_var"],
        head_w=tensors["head.w"],
        head_b=tensors["head.b"],
        dropout_rate=header["dropout_rate"],
        input_dim=header["input_dim"],
        hidden_units=header["hidden_units"],
        window_length=header["window_length"],
        bn_eps=header["bn_eps"],
        bn_momentum=header["bn_momentum"],
    )
    opt_state = None
    if header["optimizer"] is not None:
        opt = header["optimizer"]
        opt_state = RmsPropState(
            learning_rate=opt["learning_rate"], rho=opt["rho"], delta=opt["delta"],
            r={k[len("opt.r."):]: v for k, v in tensors.items()
               if k.startswith("opt.r.")},
        )
    extras = {name: tensors[name] for name in header["extra_names"]}
    return params, opt_state, extras, header["meta"]
