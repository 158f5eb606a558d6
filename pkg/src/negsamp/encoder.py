"""Context encoders with exact analytic gradients.

Two encoders produce the context vector for the next-word classifier:

* ``window`` - mean of the last ``window_size`` input embeddings through
  one affine map and a tanh.  Cheap, feed-forward, used to keep gradient
  and pipeline tests fast.
* ``lstm`` - a standard stacked LSTM cell (input, forget, output,
  candidate gates) written directly in numpy.

Both operate on unroll windows of shape (T, B, input_dim).  Hidden state
crosses window boundaries; gradients do not (truncated backpropagation
through time).  Dropout is applied to non-recurrent connections only and
is identity in eval mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .validation import check_positive_int, check_unit_interval

__all__ = ["EncoderSpec", "init_params", "init_state", "forward", "backward", "grad_check"]

KINDS = ("window", "lstm")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    input_dim: int
    hidden_dim: int
    layers: int = 1
    window_size: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        check_positive_int(self.input_dim, "input_dim")
        check_positive_int(self.hidden_dim, "hidden_dim")
        check_positive_int(self.layers, "layers")
        check_positive_int(self.window_size, "window_size")
        check_unit_interval(self.dropout, "dropout", closed_right=False)


@dataclass
class WindowState:
    prev: np.ndarray  # (window_size - 1, B, input_dim), most recent last


@dataclass
class LstmState:
    layers: list  # per layer: [h, c], each (B, hidden_dim)


@dataclass
class Cache:
    spec: EncoderSpec
    masks: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)


INIT_SCALE = 0.05
FORGET_BIAS = 1.0


def init_params(spec: EncoderSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform [-0.05, 0.05] weights; LSTM forget-gate bias starts at 1."""
    if spec.kind == "window":
        return {
            "proj": rng.uniform(-INIT_SCALE, INIT_SCALE, size=(spec.input_dim, spec.hidden_dim)),
            "bias": np.zeros(spec.hidden_dim),
        }
    params = {}
    h = spec.hidden_dim
    for layer in range(spec.layers):
        in_dim = spec.input_dim if layer == 0 else h
        params[f"w{layer}"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(in_dim + h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = FORGET_BIAS
        params[f"b{layer}"] = bias
    return params


def init_state(spec: EncoderSpec, batch_size: int):
    if spec.kind == "window":
        return WindowState(prev=np.zeros((spec.window_size - 1, batch_size, spec.input_dim)))
    h = spec.hidden_dim
    return LstmState(
        layers=[[np.zeros((batch_size, h)), np.zeros((batch_size, h))] for _ in range(spec.layers)]
    )


def _draw_masks(spec: EncoderSpec, shape_in, shape_hid, rng: np.random.Generator) -> dict:
    """Inverted-dropout masks for every non-recurrent connection."""
    p = spec.dropout
    keep = 1.0 - p

    def mask(shape):
        return (rng.random(shape) >= p) / keep

    masks = {"out": mask(shape_hid)}
    if spec.kind == "lstm":
        masks["in0"] = mask(shape_in)
        for layer in range(1, spec.layers):
            masks[f"in{layer}"] = mask(shape_hid)
    return masks


def forward(
    spec: EncoderSpec,
    params: dict,
    state,
    inputs: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    masks: dict | None = None,
):
    """Run one unroll window.

    ``inputs`` is (T, B, input_dim).  Returns (contexts, new_state, cache)
    with contexts (T, B, hidden_dim).  In training mode dropout masks are
    drawn from ``rng`` unless supplied explicitly (gradient checks pass a
    frozen set); in eval mode dropout is the identity.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != spec.input_dim:
        raise ValueError(f"inputs must be (T, B, {spec.input_dim}), got {inputs.shape}")
    t_len, batch, _ = inputs.shape
    use_dropout = train and spec.dropout > 0.0
    if use_dropout and masks is None:
        if rng is None:
            raise ValueError("training with dropout needs an rng or explicit masks")
        masks = _draw_masks(
            spec, (t_len, batch, spec.input_dim), (t_len, batch, spec.hidden_dim), rng
        )
    if not use_dropout:
        masks = {}

    if spec.kind == "window":
        return _window_forward(spec, params, state, inputs, masks)
    return _lstm_forward(spec, params, state, inputs, masks)


def backward(spec: EncoderSpec, params: dict, cache: Cache, d_contexts: np.ndarray):
    """Gradients of a scalar loss wrt parameters and this window's inputs.

    ``d_contexts`` is the loss gradient at the encoder outputs.  Gradient
    flow stops at the state carried in from the previous window.
    """
    d_contexts = np.asarray(d_contexts, dtype=np.float64)
    if cache.spec != spec:
        raise ValueError("cache does not match this encoder spec")
    if spec.kind == "window":
        return _window_backward(spec, params, cache, d_contexts)
    return _lstm_backward(spec, params, cache, d_contexts)


def _window_forward(spec, params, state: WindowState, inputs, masks):
    w = spec.window_size
    t_len = inputs.shape[0]
    ext = np.concatenate([state.prev, inputs], axis=0) if w > 1 else inputs
    if w > 1:
        stacked = np.stack([ext[t : t + w] for t in range(t_len)], axis=0)  # (T, w, B, in)
        means = stacked.mean(axis=1)
    else:
        means = inputs
    ctx = np.tanh(means @ params["proj"] + params["bias"])
    out = ctx * masks["out"] if "out" in masks else ctx
    new_state = WindowState(prev=ext[ext.shape[0] - (w - 1) :].copy() if w > 1 else state.prev)
    cache = Cache(spec=spec, masks=masks, data={"means": means, "ctx": ctx, "t_len": t_len})
    return out, new_state, cache


def _window_backward(spec, params, cache, d_out):
    w = spec.window_size
    means, ctx = cache.data["means"], cache.data["ctx"]
    t_len = cache.data["t_len"]
    d_ctx = d_out * cache.masks["out"] if "out" in cache.masks else d_out
    d_pre = d_ctx * (1.0 - ctx * ctx)
    grads = {
        "proj": np.einsum("tbi,tbh->ih", means, d_pre),
        "bias": d_pre.sum(axis=(0, 1)),
    }
    d_means = d_pre @ params["proj"].T / w
    batch, in_dim = d_means.shape[1], d_means.shape[2]
    d_ext = np.zeros((w - 1 + t_len, batch, in_dim))
    for t in range(t_len):
        d_ext[t : t + w] += d_means[t]
    return grads, d_ext[w - 1 :]


def _lstm_forward(spec, params, state: LstmState, inputs, masks):
    h_dim = spec.hidden_dim
    t_len, batch, _ = inputs.shape
    steps = []
    new_layers = [[h.copy(), c.copy()] for h, c in state.layers]
    x_seq = inputs
    for layer in range(spec.layers):
        key = f"in{layer}"
        x_drop = x_seq * masks[key] if key in masks else x_seq
        w_mat, b_vec = params[f"w{layer}"], params[f"b{layer}"]
        h, c = new_layers[layer]
        layer_steps = []
        h_out = np.empty((t_len, batch, h_dim))
        for t in range(t_len):
            z = np.concatenate([h, x_drop[t]], axis=1)
            a = z @ w_mat + b_vec
            i = expit(a[:, :h_dim])
            f = expit(a[:, h_dim : 2 * h_dim])
            o = expit(a[:, 2 * h_dim : 3 * h_dim])
            g = np.tanh(a[:, 3 * h_dim :])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            layer_steps.append({"z": z, "i": i, "f": f, "o": o, "g": g,
                                "c_prev": c, "tanh_c": tanh_c})
            h, c = h_new, c_new
            h_out[t] = h_new
        new_layers[layer] = [h, c]
        steps.append(layer_steps)
        x_seq = h_out
    out = x_seq * masks["out"] if "out" in masks else x_seq
    cache = Cache(spec=spec, masks=masks, data={"steps": steps, "t_len": t_len, "batch": batch})
    return out, LstmState(layers=new_layers), cache


def _lstm_backward(spec, params, cache, d_out):
    h_dim = spec.hidden_dim
    t_len, batch = cache.data["t_len"], cache.data["batch"]
    steps = cache.data["steps"]
    masks = cache.masks
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}

    d_x_seq = d_out * masks["out"] if "out" in masks else d_out.copy()
    for layer in range(spec.layers - 1, -1, -1):
        w_mat = params[f"w{layer}"]
        layer_steps = steps[layer]
        d_h_next = np.zeros((batch, h_dim))
        d_c_next = np.zeros((batch, h_dim))
        d_below = np.empty((t_len, batch, w_mat.shape[0] - h_dim))
        for t in range(t_len - 1, -1, -1):
            s = layer_steps[t]
            d_h = d_x_seq[t] + d_h_next
            d_c = d_c_next + d_h * s["o"] * (1.0 - s["tanh_c"] ** 2)
            d_o = d_h * s["tanh_c"]
            d_i = d_c * s["g"]
            d_f = d_c * s["c_prev"]
            d_g = d_c * s["i"]
            d_a = np.concatenate(
                [
                    d_i * s["i"] * (1.0 - s["i"]),
                    d_f * s["f"] * (1.0 - s["f"]),
                    d_o * s["o"] * (1.0 - s["o"]),
                    d_g * (1.0 - s["g"] ** 2),
                ],
                axis=1,
            )
            grads[f"w{layer}"] += s["z"].T @ d_a
            grads[f"b{layer}"] += d_a.sum(axis=0)
            d_z = d_a @ w_mat.T
            d_h_next = d_z[:, :h_dim]
            d_below[t] = d_z[:, h_dim:]
            d_c_next = d_c * s["f"]
        # d_h_next / d_c_next now point into the previous window: truncated.
        key = f"in{layer}"
        d_x_seq = d_below * masks[key] if key in masks else d_below
    return grads, d_x_seq


def grad_check(
    spec: EncoderSpec,
    seed: int = 0,
    unroll: int = 5,
    batch: int = 2,
    step: float = 1e-5,
) -> dict[str, float]:
    """Central-difference check of backward against forward.

    Builds a random window, random carried-in state and a fixed random
    linear readout, then compares analytic gradients per parameter block
    (plus the input block) against (L(p+h) - L(p-h)) / 2h.  Reported
    errors are max component differences normalized by the block's
    gradient scale, floored at 1.
    """
    rng = np.random.default_rng(seed)
    params = init_params(spec, rng)
    inputs = rng.normal(size=(unroll, batch, spec.input_dim))
    readout = rng.normal(size=(unroll, batch, spec.hidden_dim))
    state = init_state(spec, batch)
    if spec.kind == "lstm":
        state = LstmState(
            layers=[
                [rng.normal(scale=0.1, size=(batch, spec.hidden_dim)) for _ in range(2)]
                for _ in range(spec.layers)
            ]
        )
    elif spec.window_size > 1:
        state = WindowState(prev=rng.normal(size=(spec.window_size - 1, batch, spec.input_dim)))

    train = spec.dropout > 0.0
    masks = None
    if train:
        masks = _draw_masks(
            spec,
            (unroll, batch, spec.input_dim),
            (unroll, batch, spec.hidden_dim),
            rng,
        )

    def loss_at(p_dict, x):
        out, _, _ = forward(spec, p_dict, state, x, train=train, masks=masks)
        return float((out * readout).sum())

    out, _, cache = forward(spec, params, state, inputs, train=train, masks=masks)
    grads, d_inputs = backward(spec, params, cache, readout)

    report = {}
    blocks = dict(grads)
    blocks["inputs"] = d_inputs
    for name, analytic in blocks.items():
        numeric = np.zeros_like(analytic)
        target = inputs if name == "inputs" else params[name]
        flat = target.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi = loss_at(params, inputs)
            flat[idx] = orig - step
            lo = loss_at(params, inputs)
            flat[idx] = orig
            num_flat[idx] = (hi - lo) / (2.0 * step)
        scale = max(1.0, float(np.abs(analytic).max()), float(np.abs(numeric).max()))
        report[name] = float(np.abs(analytic - numeric).max() / scale)
    return report
