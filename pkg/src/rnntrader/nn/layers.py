"""Building blocks for the recurrent forecasters, with hand-written gradients.

Every forward function returns a cache holding exactly what its backward
needs.  Arrays are float64 throughout; batch is always the leading axis.
Caches are plain tuples, unpacked positionally in the matching backward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid


class BatchTooSmallError(ValueError):
    """Batch statistics need at least two rows."""


class InvalidRateError(ValueError):
    def __init__(self, rate):
        super().__init__(f"dropout rate {rate!r} not in [0, 1)")


@dataclass
class LstmCellParams:
    """Gate weights: W_* act on the input, U_* on the previous hidden state."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_o: np.ndarray
    U_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.b_f.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "W_f": self.W_f, "W_i": self.W_i, "W_o": self.W_o, "W_c": self.W_c,
            "U_f": self.U_f, "U_i": self.U_i, "U_o": self.U_o, "U_c": self.U_c,
            "b_f": self.b_f, "b_i": self.b_i, "b_o": self.b_o, "b_c": self.b_c,
        }


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_lstm_cell(rng: np.random.Generator, input_dim: int,
                   hidden_dim: int) -> LstmCellParams:
    """Glorot-uniform weights, zero biases except the forget gate's, set to 1
    so early training does not erase the cell state."""
    def w():
        return glorot_uniform(rng, input_dim, hidden_dim, (hidden_dim, input_dim))

    def u():
        return glorot_uniform(rng, hidden_dim, hidden_dim, (hidden_dim, hidden_dim))

    return LstmCellParams(
        W_f=w(), W_i=w(), W_o=w(), W_c=w(),
        U_f=u(), U_i=u(), U_o=u(), U_c=u(),
        b_f=np.ones(hidden_dim), b_i=np.zeros(hidden_dim),
        b_o=np.zeros(hidden_dim), b_c=np.zeros(hidden_dim),
    )


def lstm_cell_forward(cell: LstmCellParams, x: np.ndarray, h_prev: np.ndarray,
                      c_prev: np.ndarray):
    """One step: x (m, d), h_prev and c_prev (m, h) -> (h, c, cache).

    f, i, o are sigmoid gates; the candidate state g is tanh.  The new cell
    state blends the old one through f with the gated candidate, so
    |c| <= |c_prev| + 1 elementwise.
    """
    f = sigmoid(x @ cell.W_f.T + h_prev @ cell.U_f.T + cell.b_f)
    i = sigmoid(x @ cell.W_i.T + h_prev @ cell.U_i.T + cell.b_i)
    o = sigmoid(x @ cell.W_o.T + h_prev @ cell.U_o.T + cell.b_o)
    g = np.tanh(x @ cell.W_c.T + h_prev @ cell.U_c.T + cell.b_c)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (x, h_prev, c_prev, f, i, o, g, tc)
    return h, c, cache


def lstm_cell_backward(cell: LstmCellParams, cache, dh: np.ndarray,
                       dc: np.ndarray, grads: dict[str, np.ndarray]):
    """Backward through one step.

    dh, dc: gradients arriving at this step's h and c.  Parameter gradients
    accumulate into `grads` (keyed like the cell tensors); returns
    (dx, dh_prev, dc_prev).
    """
    x, h_prev, c_prev, f, i, o, g, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    df = dct * c_prev
    di = dct * g
    dg = dct * i
    dc_prev = dct * f
    # through the gate nonlinearities to the pre-activations
    daf = df * f * (1.0 - f)
    dai = di * i * (1.0 - i)
    dao = do * o * (1.0 - o)
    dag = dg * (1.0 - g * g)
    grads["W_f"] += daf.T @ x
    grads["W_i"] += dai.T @ x
    grads["W_o"] += dao.T @ x
    grads["W_c"] += dag.T @ x
    grads["U_f"] += daf.T @ h_prev
    grads["U_i"] += dai.T @ h_prev
    grads["U_o"] += dao.T @ h_prev
    grads["U_c"] += dag.T @ h_prev
    grads["b_f"] += daf.sum(axis=0)
    grads["b_i"] += dai.sum(axis=0)
    grads["b_o"] += dao.sum(axis=0)
    grads["b_c"] += dag.sum(axis=0)
    dx = daf @ cell.W_f + dai @ cell.W_i + dao @ cell.W_o + dag @ cell.W_c
    dh_prev = daf @ cell.U_f + dai @ cell.U_i + dao @ cell.U_o + dag @ cell.U_c
    return dx, dh_prev, dc_prev


def lstm_layer_forward(cell: LstmCellParams, seq: np.ndarray):
    """Run the cell over seq (m, T, d) from zero state; returns hidden states
    (m, T, h) and the per-step caches."""
    m, T, _ = seq.shape
    h = cell.hidden_dim
    hs = np.empty((m, T, h))
    h_t = np.zeros((m, h))
    c_t = np.zeros((m, h))
    caches = []
    for t in range(T):
        h_t, c_t, cache = lstm_cell_forward(cell, seq[:, t, :], h_t, c_t)
        hs[:, t, :] = h_t
        caches.append(cache)
    return hs, caches


def _zero_grads(cell: LstmCellParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in cell.tensors().items()}


def lstm_layer_backward(cell: LstmCellParams, caches, dhs: np.ndarray):
    """Backpropagation through time; dhs (m, T, h) holds the gradient arriving
    at each step's output.  Returns (dseq, parameter grads)."""
    m, T, h = dhs.shape
    d = cell.input_dim
    grads = _zero_grads(cell)
    dseq = np.empty((m, T, d))
    dh_carry = np.zeros((m, h))
    dc_carry = np.zeros((m, h))
    for t in reversed(range(T)):
        dx, dh_carry, dc_carry = lstm_cell_backward(
            cell, caches[t], dhs[:, t, :] + dh_carry, dc_carry, grads
        )
        dseq[:, t, :] = dx
    return dseq, grads


def bilstm_forward(fwd: LstmCellParams, bwd: LstmCellParams, seq: np.ndarray):
    """Independent forward and reversed passes, concatenated per time step.

    Output (m, T, 2h): [:h] is the forward cell after seeing steps 0..t,
    [h:] the backward cell after seeing steps T-1..t.
    """
    hs_f, caches_f = lstm_layer_forward(fwd, seq)
    hs_b_rev, caches_b = lstm_layer_forward(bwd, seq[:, ::-1, :])
    hs_b = hs_b_rev[:, ::-1, :]
    return np.concatenate([hs_f, hs_b], axis=2), (caches_f, caches_b)


def bilstm_backward(fwd: LstmCellParams, bwd: LstmCellParams, caches,
                    dY: np.ndarray):
    """Returns (dseq, forward-cell grads, backward-cell grads)."""
    caches_f, caches_b = caches
    h = fwd.hidden_dim
    dseq_f, grads_f = lstm_layer_backward(fwd, caches_f, dY[:, :, :h])
    dseq_b_rev, grads_b = lstm_layer_backward(bwd, caches_b, dY[:, ::-1, h:])
    return dseq_f + dseq_b_rev[:, ::-1, :], grads_f, grads_b


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically safe softmax: the row maximum is subtracted before
    exponentiation, which leaves the result unchanged."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention_forward(hidden_seq: np.ndarray, query: np.ndarray):
    """Dot-product attention over the per-step hidden states.

    hidden_seq (m, T, k), query (m, k).  Scores are plain dot products, so
    there is nothing to learn here; gradients flow to both arguments.
    Returns (context (m, k), weights (m, T), cache).
    """
    scores = np.einsum("mtk,mk->mt", hidden_seq, query)
    weights = softmax(scores, axis=1)
    context = np.einsum("mt,mtk->mk", weights, hidden_seq)
    return context, weights, (hidden_seq, query, weights)


def attention_backward(cache, dcontext: np.ndarray):
    """Returns (dhidden_seq, dquery) for the given context gradient."""
    hidden_seq, query, weights = cache
    dweights = np.einsum("mk,mtk->mt", dcontext, hidden_seq)
    dhidden = np.einsum("mt,mk->mtk", weights, dcontext)
    # softmax backward: rows of weights sum to one
    dscores = weights * (dweights - np.sum(dweights * weights, axis=1, keepdims=True))
    dquery = np.einsum("mt,mtk->mk", dscores, hidden_seq)
    dhidden += np.einsum("mt,mk->mtk", dscores, query)
    return dhidden, dquery


def batch_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                       mode: str, running_mean: np.ndarray,
                       running_var: np.ndarray, *, eps: float = 1e-5,
                       momentum: float = 0.1):
    """Normalise each column of x (m, k) to zero mean and unit variance.

    Training uses the batch's own statistics (population variance, divide by
    m) and folds them into the running estimates; inference uses the running
    estimates unchanged.  Returns (y, cache, new_running_mean, new_running_var).
    """
    if mode == "train":
        m = x.shape[0]
        if m < 2:
            raise BatchTooSmallError(f"batch of {m} has no spread to normalise")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv
        y = gamma * xhat + beta
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * var
        return y, (xhat, inv, gamma), new_mean, new_var
    if mode == "infer":
        xhat = (x - running_mean) / np.sqrt(running_var + eps)
        return gamma * xhat + beta, None, running_mean, running_var
    raise ValueError(f"unknown mode {mode!r}")


def batch_norm_backward(cache, dy: np.ndarray):
    """Returns (dx, dgamma, dbeta); only valid for train-mode caches."""
    xhat, inv, gamma = cache
    m = dy.shape[0]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * gamma
    dx = (inv / m) * (
        m * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
    )
    return dx, dgamma, dbeta


def dropout_forward(x: np.ndarray, rate: float, mode: str,
                    rng: np.random.Generator | None = None):
    """Inverted dropout: kept entries are scaled by 1/(1-rate) during
    training so inference is the identity.  Returns (y, cache)."""
    if not (0.0 <= rate < 1.0):
        raise InvalidRateError(rate)
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * mask * scale, (mask, scale)


def dropout_backward(cache, dy: np.ndarray) -> np.ndarray:
    if cache is None:
        return dy
    mask, scale = cache
    return dy * mask * scale


def dense_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray):
    """Scalar head: x (m, k) @ w (k,) + b -> scores (m,)."""
    return x @ w + b[0], x


def dense_backward(w: np.ndarray, cache, dscores: np.ndarray):
    """Returns (dx, dw, db)."""
    x = cache
    dw = x.T @ dscores
    db = np.array([dscores.sum()])
    dx = np.outer(dscores, w)
    return dx, dw, db
