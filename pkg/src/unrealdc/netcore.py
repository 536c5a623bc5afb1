"""Four-head recurrent convolutional network.

conv1 -> conv2 -> fc -> LSTM, with heads:
  policy     softmax over actions, from the LSTM output
  value      linear scalar, from the LSTM output
  rp         3-way reward-sign logits, from the conv2 features of the
             last three frames
  pc         deconvolved Q map (grid_h, grid_w, actions), from a ReLU
             fully connected layer on the LSTM output

All layer code is written against :mod:`unrealdc.autodiff` and accepts
either plain ndarrays (inference) or Tensor leaves (training).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad

RP_FRAMES = 3
LSTM_FORGET_BIAS = 1.0


class ShapeError(ValueError):
    """Input dimensions do not match the network configuration."""


class NonFiniteLossError(RuntimeError):
    """The loss evaluated to a non-finite value."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable or does not match the expected config."""


@dataclass(frozen=True)
class NetworkConfig:
    input_h: int = 84
    input_w: int = 84
    conv1_filters: int = 16
    conv1_kernel: int = 8
    conv1_stride: int = 4
    conv2_filters: int = 32
    conv2_kernel: int = 4
    conv2_stride: int = 2
    fc_size: int = 256
    lstm_size: int = 256
    unroll: int = 20
    n_actions: int = 5
    pc_grid_h: int = 7
    pc_grid_w: int = 7
    pc_deconv_kernel: int = 3
    pc_deconv_stride: int = 2
    pc_hidden_channels: int = 16
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def conv1_out(self):
        h = (self.input_h - self.conv1_kernel) // self.conv1_stride + 1
        w = (self.input_w - self.conv1_kernel) // self.conv1_stride + 1
        return h, w

    @property
    def conv2_out(self):
        h1, w1 = self.conv1_out
        h = (h1 - self.conv2_kernel) // self.conv2_stride + 1
        w = (w1 - self.conv2_kernel) // self.conv2_stride + 1
        return h, w

    @property
    def conv2_flat(self):
        h, w = self.conv2_out
        return h * w * self.conv2_filters

    @property
    def pc_hidden_grid(self):
        k, s = self.pc_deconv_kernel, self.pc_deconv_stride
        h, rem_h = divmod(self.pc_grid_h - k, s)
        w, rem_w = divmod(self.pc_grid_w - k, s)
        if rem_h or rem_w or h < 0 or w < 0:
            raise ShapeError("pc grid is not reachable by the deconvolution geometry")
        return h + 1, w + 1

    def validate(self):
        h1, w1 = self.conv1_out
        h2, w2 = self.conv2_out
        if min(h1, w1, h2, w2) < 1:
            raise ShapeError("convolution stack does not fit the input dims")
        if self.input_h % self.pc_grid_h or self.input_w % self.pc_grid_w:
            raise ShapeError("input dims must divide into the pc grid")
        self.pc_hidden_grid
        return self

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def paper_config(n_actions: int, dtype: str = "float32") -> NetworkConfig:
    return NetworkConfig(n_actions=n_actions, dtype=dtype).validate()


def small_config(n_actions: int, dtype: str = "float32") -> NetworkConfig:
    return NetworkConfig(
        input_h=21, input_w=21,
        conv1_filters=8, conv1_kernel=4, conv1_stride=2,
        conv2_filters=16, conv2_kernel=3, conv2_stride=2,
        fc_size=64, lstm_size=64, unroll=20,
        n_actions=n_actions,
        pc_grid_h=7, pc_grid_w=7,
        pc_deconv_kernel=3, pc_deconv_stride=2, pc_hidden_channels=8,
        dtype=dtype,
    ).validate()


def tiny_config(n_actions: int, dtype: str = "float64") -> NetworkConfig:
    return NetworkConfig(
        input_h=8, input_w=8,
        conv1_filters=2, conv1_kernel=3, conv1_stride=2,
        conv2_filters=2, conv2_kernel=2, conv2_stride=1,
        fc_size=8, lstm_size=8, unroll=4,
        n_actions=n_actions,
        pc_grid_h=2, pc_grid_w=2,
        pc_deconv_kernel=2, pc_deconv_stride=2, pc_hidden_channels=4,
        dtype=dtype,
    ).validate()


class Parameters(dict):
    """Named weight arrays plus the config that determines their shapes."""

    def __init__(self, config: NetworkConfig, arrays: dict):
        super().__init__(arrays)
        self.config = config

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.items()}


@dataclass
class RecurrentState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "RecurrentState":
        return cls(
            hidden=np.zeros(config.lstm_size, dtype=config.np_dtype),
            cell=np.zeros(config.lstm_size, dtype=config.np_dtype),
        )

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.hidden.copy(), self.cell.copy())


@dataclass
class ForwardOutput:
    policy: np.ndarray        # (n_actions,), simplex
    value: float
    rp_logits: np.ndarray     # (3,): zero, positive, negative
    pc_q: np.ndarray          # (pc_grid_h, pc_grid_w, n_actions)
    next_state: RecurrentState


def _param_shapes(cfg: NetworkConfig) -> dict:
    h0, w0 = cfg.pc_hidden_grid
    return {
        "conv1_w": (cfg.conv1_filters, cfg.conv1_kernel, cfg.conv1_kernel, 3),
        "conv1_b": (cfg.conv1_filters,),
        "conv2_w": (cfg.conv2_filters, cfg.conv2_kernel, cfg.conv2_kernel, cfg.conv1_filters),
        "conv2_b": (cfg.conv2_filters,),
        "fc_w": (cfg.conv2_flat, cfg.fc_size),
        "fc_b": (cfg.fc_size,),
        "lstm_w": (cfg.fc_size + cfg.lstm_size, 4 * cfg.lstm_size),
        "lstm_b": (4 * cfg.lstm_size,),
        "policy_w": (cfg.lstm_size, cfg.n_actions),
        "policy_b": (cfg.n_actions,),
        "value_w": (cfg.lstm_size, 1),
        "value_b": (1,),
        "rp_w": (RP_FRAMES * cfg.conv2_flat, 3),
        "rp_b": (3,),
        "pcfc_w": (cfg.lstm_size, h0 * w0 * cfg.pc_hidden_channels),
        "pcfc_b": (h0 * w0 * cfg.pc_hidden_channels,),
        "pcdeconv_w": (cfg.pc_hidden_channels, cfg.pc_deconv_kernel,
                       cfg.pc_deconv_kernel, cfg.n_actions),
        "pcdeconv_b": (cfg.n_actions,),
    }


def _fan_in(name: str, shape: tuple) -> int:
    if name.endswith("_b"):
        return 0
    if name.startswith("conv") and name.endswith("_w"):
        return shape[1] * shape[2] * shape[3]
    if name == "pcdeconv_w":
        return shape[0] * shape[1] * shape[2]
    return shape[0]


def init_params(config: NetworkConfig, seed: int) -> Parameters:
    """Fan-in-scaled uniform weights, zero biases, deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype
    arrays = {}
    for name, shape in _param_shapes(config).items():
        fan = _fan_in(name, shape)
        if fan == 0:
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(fan)
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Parameters(config, arrays)


# -- forward pieces (polymorphic over ndarray / Tensor) --------------------


def _check_frames(cfg: NetworkConfig, frames: np.ndarray):
    if frames.ndim != 4 or frames.shape[1:] != (cfg.input_h, cfg.input_w, 3):
        raise ShapeError(
            f"conv1 input: expected (t, {cfg.input_h}, {cfg.input_w}, 3), got {frames.shape}"
        )


def conv_features(p, cfg: NetworkConfig, frames):
    """conv1+conv2 with ReLU; frames (n, h, w, 3) -> (n, conv2_flat)."""
    x = ad.relu(ad.conv2d(frames, p["conv1_w"], p["conv1_b"], cfg.conv1_stride))
    x = ad.relu(ad.conv2d(x, p["conv2_w"], p["conv2_b"], cfg.conv2_stride))
    return ad.reshape(x, (frames.shape[0], cfg.conv2_flat))


def lstm_sequence(p, cfg: NetworkConfig, fc_seq, state: RecurrentState):
    """Thread the LSTM over (t, fc_size); returns ((t, lstm), final state)."""
    n = cfg.lstm_size
    h = state.hidden.reshape(1, n)
    c = state.cell.reshape(1, n)
    steps = fc_seq.shape[0]
    hs = []
    for t in range(steps):
        x_t = ad.take(fc_seq, (slice(t, t + 1), slice(None)))
        hc = ad.lstm_cell(x_t, h, c, p["lstm_w"], p["lstm_b"], LSTM_FORGET_BIAS)
        h = ad.take(hc, (slice(None), slice(0, n)))
        c = ad.take(hc, (slice(None), slice(n, 2 * n)))
        hs.append(h)
    h_seq = ad.concat(hs, axis=0) if steps > 1 else hs[0]
    final = RecurrentState(
        hidden=ad.constant(h).reshape(n).copy(),
        cell=ad.constant(c).reshape(n).copy(),
    )
    return h_seq, final


def policy_log_probs(p, h_seq):
    return ad.log_softmax(ad.matmul(h_seq, p["policy_w"]) + p["policy_b"], axis=-1)


def values_from(p, h_seq):
    v = ad.matmul(h_seq, p["value_w"]) + p["value_b"]
    return ad.reshape(v, (-1,))


def rp_logits_from_windows(p, cfg: NetworkConfig, windows):
    """Reward-sign logits from 3-frame windows (b, 3, h, w, 3) -> (b, 3)."""
    b = windows.shape[0]
    flat_frames = ad.reshape(windows, (b * RP_FRAMES, cfg.input_h, cfg.input_w, 3))
    feats = conv_features(p, cfg, flat_frames)
    stacked = ad.reshape(feats, (b, RP_FRAMES * cfg.conv2_flat))
    return ad.matmul(stacked, p["rp_w"]) + p["rp_b"]


def pc_q_from(p, cfg: NetworkConfig, h_seq):
    """Pixel-control Q maps (t, pc_grid_h, pc_grid_w, n_actions)."""
    h0, w0 = cfg.pc_hidden_grid
    hidden = ad.relu(ad.matmul(h_seq, p["pcfc_w"]) + p["pcfc_b"])
    steps = hidden.shape[0]
    grid = ad.reshape(hidden, (steps, h0, w0, cfg.pc_hidden_channels))
    return ad.conv2d_transpose(grid, p["pcdeconv_w"], p["pcdeconv_b"], cfg.pc_deconv_stride)


def rp_windows_from_sequence(frames: np.ndarray) -> np.ndarray:
    """Rolling last-3-frame windows over a sequence, zero-padded in front."""
    t = frames.shape[0]
    padded = np.concatenate(
        [np.zeros((RP_FRAMES - 1,) + frames.shape[1:], dtype=frames.dtype), frames], axis=0
    )
    return np.stack([padded[i : i + RP_FRAMES] for i in range(t)], axis=0)


def forward(params: Parameters, frames, state: RecurrentState) -> list:
    """Evaluate every head per timestep, threading the recurrent state.

    ``frames`` is a sequence of observations (t, h, w, 3) or a list of
    (h, w, 3) arrays, length <= the configured unroll. RP windows are
    zero-padded before the first frame, i.e. the sequence is treated as
    episode-initial.
    """
    cfg = params.config
    frames = np.asarray(frames, dtype=cfg.np_dtype)
    if frames.ndim == 3:
        frames = frames[None]
    _check_frames(cfg, frames)
    if frames.shape[0] > cfg.unroll:
        raise ShapeError(f"sequence length {frames.shape[0]} exceeds unroll {cfg.unroll}")

    feats = conv_features(params, cfg, frames)
    fc = ad.relu(feats @ params["fc_w"] + params["fc_b"])

    n = cfg.lstm_size
    h = state.hidden.reshape(1, n).astype(cfg.np_dtype)
    c = state.cell.reshape(1, n).astype(cfg.np_dtype)
    rp_all = rp_logits_from_windows(params, cfg, rp_windows_from_sequence(frames))

    outputs = []
    for t in range(frames.shape[0]):
        carried = RecurrentState(hidden=h.reshape(n), cell=c.reshape(n))
        h_t, nxt = lstm_sequence(params, cfg, fc[t : t + 1], carried)
        logits = h_t @ params["policy_w"] + params["policy_b"]
        policy = ad.softmax(logits, axis=-1)[0]
        value = float((h_t @ params["value_w"] + params["value_b"])[0, 0])
        pc_q = pc_q_from(params, cfg, h_t)[0]
        outputs.append(
            ForwardOutput(
                policy=policy,
                value=value,
                rp_logits=rp_all[t],
                pc_q=pc_q,
                next_state=nxt,
            )
        )
        h = nxt.hidden.reshape(1, n)
        c = nxt.cell.reshape(1, n)
    return outputs


def policy_step(params: Parameters, frame, state: RecurrentState):
    """One inference step of the policy head: (policy probs, next state)."""
    cfg = params.config
    frames = np.asarray(frame, dtype=cfg.np_dtype)[None]
    _check_frames(cfg, frames)
    feats = conv_features(params, cfg, frames)
    fc = ad.relu(feats @ params["fc_w"] + params["fc_b"])
    h_seq, nxt = lstm_sequence(params, cfg, fc, state)
    logits = h_seq @ params["policy_w"] + params["policy_b"]
    return ad.softmax(logits, axis=-1)[0], nxt


def value_step(params: Parameters, frame, state: RecurrentState) -> float:
    """One inference step of the value head (state is not advanced)."""
    cfg = params.config
    frames = np.asarray(frame, dtype=cfg.np_dtype)[None]
    _check_frames(cfg, frames)
    feats = conv_features(params, cfg, frames)
    fc = ad.relu(feats @ params["fc_w"] + params["fc_b"])
    h_seq, _ = lstm_sequence(params, cfg, fc, state)
    return float((h_seq @ params["value_w"] + params["value_b"])[0, 0])


def gradients(params: Parameters, loss_fn) -> dict:
    """Exact gradients of ``loss_fn`` with respect to every parameter.

    ``loss_fn`` receives a dict mapping parameter names to Tensor leaves
    and must return a scalar (Tensor, or a plain constant for losses that
    do not touch the network).
    """
    leaves = {k: ad.Tensor(v) for k, v in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, ad.Tensor):
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"loss is not finite: {loss!r}")
        return params.zeros_like()
    if not np.all(np.isfinite(loss.value)):
        raise NonFiniteLossError(f"loss is not finite: {loss.value!r}")
    loss.backward()
    return {
        k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(v))
        for k, v in params.items()
    }


def loss_value(params: Parameters, loss_fn) -> float:
    """Evaluate ``loss_fn`` at ``params`` without keeping gradients."""
    out = loss_fn({k: ad.Tensor(v) for k, v in params.items()})
    return float(out.value) if isinstance(out, ad.Tensor) else float(out)


# -- checkpoints ------------------------------------------------------------


def save_params(path, params: Parameters):
    """Write named little-endian float32 arrays plus a config fingerprint."""
    cfg_json = json.dumps(asdict(params.config), sort_keys=True)
    payload = {k: v.astype("<f4") for k, v in params.items()}
    payload["__config_json"] = np.frombuffer(cfg_json.encode(), dtype=np.uint8)
    payload["__fingerprint"] = np.frombuffer(
        params.config.fingerprint().encode(), dtype=np.uint8
    )
    np.savez(path, **payload)


def load_params(path, expected_config: NetworkConfig | None = None) -> Parameters:
    """Load a checkpoint; fingerprint mismatches are errors."""
    with np.load(path) as data:
        try:
            cfg_json = bytes(data["__config_json"]).decode()
            stored_fp = bytes(data["__fingerprint"]).decode()
        except KeyError as exc:
            raise CheckpointError(f"not a parameter checkpoint: missing {exc}") from exc
        config = NetworkConfig(**json.loads(cfg_json))
        if config.fingerprint() != stored_fp:
            raise CheckpointError("checkpoint fingerprint does not match its stored config")
        if expected_config is not None and expected_config.fingerprint() != stored_fp:
            raise CheckpointError(
                "checkpoint config fingerprint does not match the expected config"
            )
        dtype = config.np_dtype
        arrays = {
            k: data[k].astype(dtype) for k in data.files if not k.startswith("__")
        }
    params = Parameters(config, arrays)
    shapes = _param_shapes(config)
    if set(params) != set(shapes):
        raise CheckpointError("checkpoint parameter names do not match the config")
    for k, shape in shapes.items():
        if params[k].shape != shape:
            raise CheckpointError(f"checkpoint array {k} has shape {params[k].shape}, expected {shape}")
    return params
