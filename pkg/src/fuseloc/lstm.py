"""Recurrent stream encoders.

The cell follows the peephole variant used throughout this project: the
output gate sees the *current* memory cell through an elementwise weight
vector, i.e.

    cand_t = tanh(Wxc x_t + Whc h_{t-1} + bc)
    f_t    = sigmoid(Wxf x_t + Whf h_{t-1} + bf)
    i_t    = sigmoid(Wxi x_t + Whi h_{t-1} + bi)
    c_t    = f_t * c_{t-1} + i_t * cand_t
    o_t    = sigmoid(Wxo x_t + Who h_{t-1} + wco * c_t + bo)
    h_t    = o_t * tanh(c_t)

A single fused graph node evaluates one step for a whole batch; its
hand-derived backward rule is validated against the finite-difference
oracle in the test suite. Setting ``peephole=False`` zeroes and freezes
``wco``, giving the textbook cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, _sigmoid_values, concat, mul, slice_last

GATE_ORDER = "cfio"  # candidate, forget, input, output


class LstmParams:
    """Weights of one cell, stored gate-stacked for fused evaluation.

    ``w_x`` is (4*n_hidden, n_input), ``w_h`` is (4*n_hidden, n_hidden)
    and ``bias`` is (4*n_hidden,), rows grouped in GATE_ORDER. Per-gate
    views (``w_xc`` ... ``b_o``) expose the individual blocks; they alias
    the underlying storage, so writes through them update the cell.
    """

    def __init__(self, n_input: int, n_hidden: int, rng: np.random.Generator | None = None,
                 peephole: bool = True, forget_bias: float = 1.0):
        self.n_input = n_input
        self.n_hidden = n_hidden
        self.peephole = peephole
        if rng is None:
            w_x = np.zeros((4 * n_hidden, n_input))
            w_h = np.zeros((4 * n_hidden, n_hidden))
            w_co = np.zeros(n_hidden)
        else:
            bound = 1.0 / np.sqrt(n_hidden)
            w_x = rng.uniform(-bound, bound, (4 * n_hidden, n_input))
            w_h = rng.uniform(-bound, bound, (4 * n_hidden, n_hidden))
            w_co = rng.uniform(-bound, bound, n_hidden) if peephole else np.zeros(n_hidden)
        bias = np.zeros(4 * n_hidden)
        bias[n_hidden:2 * n_hidden] = forget_bias
        self.w_x = Tensor(w_x, requires_grad=True, name="w_x")
        self.w_h = Tensor(w_h, requires_grad=True, name="w_h")
        self.bias = Tensor(bias, requires_grad=True, name="bias")
        self.w_co = Tensor(w_co, requires_grad=peephole, name="w_co")

    def _gate(self, array: np.ndarray, gate: str) -> np.ndarray:
        i = GATE_ORDER.index(gate)
        return array[i * self.n_hidden:(i + 1) * self.n_hidden]

    # per-gate aliases into the stacked storage
    @property
    def w_xc(self):
        return self._gate(self.w_x.data, "c")

    @property
    def w_xf(self):
        return self._gate(self.w_x.data, "f")

    @property
    def w_xi(self):
        return self._gate(self.w_x.data, "i")

    @property
    def w_xo(self):
        return self._gate(self.w_x.data, "o")

    @property
    def w_hc(self):
        return self._gate(self.w_h.data, "c")

    @property
    def w_hf(self):
        return self._gate(self.w_h.data, "f")

    @property
    def w_hi(self):
        return self._gate(self.w_h.data, "i")

    @property
    def w_ho(self):
        return self._gate(self.w_h.data, "o")

    @property
    def b_c(self):
        return self._gate(self.bias.data, "c")

    @property
    def b_f(self):
        return self._gate(self.bias.data, "f")

    @property
    def b_i(self):
        return self._gate(self.bias.data, "i")

    @property
    def b_o(self):
        return self._gate(self.bias.data, "o")

    def parameters(self) -> list[Tensor]:
        ps = [self.w_x, self.w_h, self.bias]
        if self.peephole:
            ps.append(self.w_co)
        return ps


@dataclass
class LstmState:
    """Hidden and memory-cell pair carried between steps."""
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, n_hidden: int, batch: int | None = None) -> "LstmState":
        shape = (n_hidden,) if batch is None else (batch, n_hidden)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_step(params: LstmParams, x, prev: LstmState) -> LstmState:
    """Advance one step; ``x`` is a (d,) vector or (B, d) batch."""
    x_data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if x_data.shape[-1] != params.n_input:
        raise ShapeError(
            f"lstm_step input dim {x_data.shape} does not match weights "
            f"({params.n_input} expected)")
    if prev.h.data.shape[-1] != params.n_hidden:
        raise ShapeError(
            f"lstm_step state dim {prev.h.data.shape} does not match hidden size "
            f"{params.n_hidden}")
    hc = _fused_step(params, x, prev.h, prev.c)
    n = params.n_hidden
    return LstmState(h=slice_last(hc, 0, n), c=slice_last(hc, n, 2 * n))


def _sigmoid_inplace(x: np.ndarray) -> np.ndarray:
    """Logistic function via the tanh identity, overwriting ``x``."""
    x *= 0.5
    np.tanh(x, out=x)
    x += 1.0
    x *= 0.5
    return x


def _fused_step(params: LstmParams, x, h_prev: Tensor, c_prev: Tensor) -> Tensor:
    """One cell update as a single graph node returning [h_t ; c_t].

    The body works in place on scratch buffers; the hand-derived reverse
    rule below is checked against finite differences in the tests.
    """
    n = params.n_hidden
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    hd, cd = h_prev.data, c_prev.data
    w_x, w_h, bias, w_co = params.w_x, params.w_h, params.bias, params.w_co

    z = xd @ w_x.data.T
    z += hd @ w_h.data.T
    z += bias.data
    cand = np.tanh(z[..., :n])
    f = _sigmoid_inplace(z[..., n:2 * n].copy())
    i = _sigmoid_inplace(z[..., 2 * n:3 * n].copy())
    out = np.empty(hd.shape[:-1] + (2 * n,))
    h, c = out[..., :n], out[..., n:]
    np.multiply(f, cd, out=c)
    c += i * cand
    zo = z[..., 3 * n:]
    zo += w_co.data * c
    o = _sigmoid_inplace(zo)  # aliases z, safe: z is never reused
    tc = np.tanh(c)
    np.multiply(o, tc, out=h)

    def grad_fn(g):
        gh, gc_in = g[..., :n], g[..., n:]
        batched = gh.ndim == 2
        go = gh * tc
        gc = gh * o
        gc *= 1.0 - tc * tc
        gc += gc_in
        gz = np.empty(gh.shape[:-1] + (4 * n,))
        gzc, gzf, gzi, gzo = (gz[..., :n], gz[..., n:2 * n],
                              gz[..., 2 * n:3 * n], gz[..., 3 * n:])
        np.multiply(go, o, out=gzo)
        gzo *= 1.0 - o
        gwco = (gzo * c).sum(axis=0) if batched else gzo * c
        gc += gzo * w_co.data
        np.multiply(gc, cd, out=gzf)
        gzf *= f
        gzf *= 1.0 - f
        np.multiply(gc, cand, out=gzi)
        gzi *= i
        gzi *= 1.0 - i
        np.multiply(gc, i, out=gzc)
        gzc *= 1.0 - cand * cand
        gc_prev = gc * f
        if batched:
            gwx = gz.T @ xd
            gwh = gz.T @ hd
            gb = gz.sum(axis=0)
        else:
            gwx = np.outer(gz, xd)
            gwh = np.outer(gz, hd)
            gb = gz
        grads = [gwx, gwh, gb, gwco, gz @ w_h.data, gc_prev]
        if isinstance(x, Tensor):
            grads.insert(0, gz @ w_x.data if x.requires_grad else None)
        return grads

    parents = (w_x, w_h, bias, w_co, h_prev, c_prev)
    if isinstance(x, Tensor):
        parents = (x,) + parents
    return Tensor._from_op(out, parents, grad_fn)


@dataclass
class StreamEncoder:
    """Stacked (optionally bidirectional) recurrent encoder for one sensor.

    ``layers[l]`` holds the forward-direction cell of layer ``l`` and
    ``layers_back[l]`` the reverse-direction cell when bidirectional.
    """

    n_input: int
    n_hidden: int
    n_layers: int = 2
    bidirectional: bool = False
    dropout: float = 0.2
    peephole: bool = True
    layers: list[LstmParams] = field(default_factory=list)
    layers_back: list[LstmParams] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_layers < 1:
            raise ValueError("need at least one layer")

    @property
    def output_dim(self) -> int:
        return 2 * self.n_hidden if self.bidirectional else self.n_hidden

    def init_params(self, rng: np.random.Generator) -> "StreamEncoder":
        self.layers = []
        self.layers_back = []
        d = self.n_input
        for _ in range(self.n_layers):
            self.layers.append(LstmParams(d, self.n_hidden, rng, peephole=self.peephole))
            if self.bidirectional:
                self.layers_back.append(
                    LstmParams(d, self.n_hidden, rng, peephole=self.peephole))
            d = self.output_dim
        return self

    def parameters(self) -> list[Tensor]:
        ps: list[Tensor] = []
        for cell in self.layers + self.layers_back:
            ps.extend(cell.parameters())
        return ps


def _dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, survivors scaled."""
    return (rng.random(shape) >= p) / (1.0 - p)


def _run_direction(cell: LstmParams, steps: list, batch: int | None) -> list[Tensor]:
    state = LstmState.zeros(cell.n_hidden, batch)
    outputs = []
    for x_t in steps:
        state = lstm_step(cell, x_t, state)
        outputs.append(state.h)
    return outputs


def run_sequence(encoder: StreamEncoder, inputs, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> list[Tensor]:
    """Top-layer hidden states h_1..h_T for a (T, d) or (B, T, d) input.

    In ``train`` mode each layer's output (including the top layer) gets
    an independent inverted-dropout mask per step; ``eval`` mode applies
    none, so repeated evaluation is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not encoder.layers:
        raise ValueError("encoder parameters not initialized; call init_params")
    arr = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs, dtype=np.float64)
    if arr.ndim == 2:
        batch = None
        steps = [arr[t] for t in range(arr.shape[0])]
    elif arr.ndim == 3:
        batch = arr.shape[0]
        steps = [arr[:, t, :] for t in range(arr.shape[1])]
    else:
        raise ShapeError(f"run_sequence expects (T, d) or (B, T, d) inputs, got {arr.shape}")
    if len(steps) < 1:
        raise ShapeError("run_sequence needs at least one time step")

    drop = mode == "train" and encoder.dropout > 0.0
    if drop and rng is None:
        raise ValueError("train-mode dropout needs an rng")

    current: list = steps
    for layer_idx in range(encoder.n_layers):
        if encoder.bidirectional:
            fwd = _run_direction(encoder.layers[layer_idx], current, batch)
            bwd = _run_direction(encoder.layers_back[layer_idx], current[::-1], batch)
            outs = [concat([fwd[t], bwd[len(current) - 1 - t]]) for t in range(len(current))]
        else:
            outs = _run_direction(encoder.layers[layer_idx], current, batch)
        if drop:
            outs = [mul(h, _dropout_mask(h.data.shape, encoder.dropout, rng)) for h in outs]
        current = outs
    return current


def run_bidirectional(encoder: StreamEncoder, inputs, mode: str = "eval",
                      rng: np.random.Generator | None = None) -> list[Tensor]:
    """Per-step [forward ; backward] states; step t spans both directions."""
    if not encoder.bidirectional:
        raise ValueError("encoder was not built with bidirectional=True")
    return run_sequence(encoder, inputs, mode=mode, rng=rng)
