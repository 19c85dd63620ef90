"""Noise-prediction network: a small temporal CNN over the trajectory axis
with residual blocks and a sinusoidal timestep embedding, implemented in
numpy with exact hand-written reverse-mode gradients.

The final layer is zero-initialized so a fresh model predicts zero noise.
Checkpoints are a JSON header plus a little-endian float32 parameter blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special

CHECKPOINT_MAGIC = b"DNZ1"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def sinusoidal_embedding(t: int, dim: int) -> np.ndarray:
    """Classic sin/cos positional features of the integer timestep."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


@dataclass
class Normalizer:
    """Per-dimension affine map of trajectory states into [-1, 1]."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self):
        return np.maximum(0.5 * (self.hi - self.lo), 1e-8)

    def encode(self, x):
        return (np.asarray(x, dtype=float) - self.mid) / self.half

    def decode(self, z):
        return self.mid + self.half * np.asarray(z, dtype=float)

    @classmethod
    def from_data(cls, data):
        flat = np.asarray(data, dtype=float).reshape(-1, np.asarray(data).shape[-1])
        return cls(lo=flat.min(axis=0), hi=flat.max(axis=0))


@dataclass
class DenoiserConfig:
    H: int
    d: int
    channels: int = 32
    n_blocks: int = 2
    kernel: int = 5
    time_dim: int = 16

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel width must be odd")
        if self.n_blocks < 1:
            raise ValueError("need at least one hidden block")


def _silu(u):
    """SiLU activation and its derivative."""
    s = special.expit(u)
    return u * s, s * (1.0 + u * (1.0 - s))


# -- conv1d with 'same' zero padding, via sliding windows -------------------


def _conv_forward(W, b, x):
    """x: (B, C_in, H) -> (B, C_out, H)."""
    C_out, C_in, K = W.shape
    B, _, H = x.shape
    pad = K // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)  # (B, C_in, H, K)
    cols = cols.transpose(1, 3, 0, 2).reshape(C_in * K, B * H)
    y = (W.reshape(C_out, C_in * K) @ cols + b[:, None]).reshape(C_out, B, H)
    return y.transpose(1, 0, 2), cols


def _conv_backward(W, cols, dy, x_shape):
    """Gradients of a same-padded conv1d; returns (dW, db, dx)."""
    C_out, C_in, K = W.shape
    B, _, H = x_shape
    pad = K // 2
    dy2 = dy.transpose(1, 0, 2).reshape(C_out, B * H)
    dW = (dy2 @ cols.T).reshape(W.shape)
    db = dy2.sum(axis=1)
    dcols = (W.reshape(C_out, C_in * K).T @ dy2).reshape(C_in, K, B, H)
    dxp = np.zeros((B, C_in, H + 2 * pad))
    for k in range(K):
        dxp[:, :, k:k + H] += dcols[:, k].transpose(1, 0, 2)
    dx = dxp[:, :, pad:pad + H]
    return dW, db, dx


class DenoiserModel:
    """Parametric noise predictor eps(tau_t, t)."""

    def __init__(self, config: DenoiserConfig, params: dict[str, np.ndarray],
                 normalizer: Normalizer, meta: dict | None = None,
                 alpha_bar: np.ndarray | None = None):
        self.config = config
        self.params = params
        self.normalizer = normalizer
        self.meta = dict(meta or {})
        # optional schedule table: when present the raw network output is
        # rescaled by 1/sqrt(1 - alpha_bar_t), so the network itself only has
        # to fit the O(1) residual tau_t - sqrt(alpha_bar_t) tau_0 instead of
        # reproducing the ~1/sqrt(beta_1) gain that eps carries at small t
        self.alpha_bar = None if alpha_bar is None else np.asarray(alpha_bar, dtype=float)

    # -- forward / backward --------------------------------------------------

    def forward(self, x, t: int):
        """x: (B, H, d) or (H, d); returns (eps_hat with same shape, cache)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 2
        if single:
            x = x[None]
        cfg = self.config
        if x.shape[1:] != (cfg.H, cfg.d):
            raise ValueError(f"input shape {x.shape[1:]} does not match ({cfg.H}, {cfg.d})")
        p = self.params
        emb = sinusoidal_embedding(t, cfg.time_dim)
        h = x.transpose(0, 2, 1)  # (B, d, H)
        cache = {"emb": emb, "single": single}
        h, cache["in_cols"] = _conv_forward(p["in.W"], p["in.b"], h)
        # learned positional bias: convs are translation-equivariant along the
        # horizon, but trajectories are not, so give each slot its own offset
        h = h + p["pos"][None]
        cache["in_x_shape"] = (x.shape[0], cfg.d, cfg.H)
        blocks = []
        for i in range(cfg.n_blocks):
            pre = f"blk{i}."
            # FiLM conditioning: per-channel scale and shift from the timestep
            scale = p[pre + "sW"] @ emb + p[pre + "sb"]
            shift = p[pre + "tW"] @ emb + p[pre + "tb"]
            u_lin, cols_a = _conv_forward(p[pre + "a.W"], p[pre + "a.b"], h)
            u = u_lin * (1.0 + scale)[None, :, None] + shift[None, :, None]
            a1, da1_du = _silu(u)
            v, cols_b = _conv_forward(p[pre + "b.W"], p[pre + "b.b"], a1)
            h_new = h + v  # plain additive residual keeps the trunk unbounded
            blocks.append({"h_in_shape": h.shape, "cols_a": cols_a, "u_lin": u_lin,
                           "scale": scale, "da1_du": da1_du, "a1": a1, "cols_b": cols_b})
            h = h_new
        y, cache["out_cols"] = _conv_forward(p["out.W"], p["out.b"], h)
        cache["out_x_shape"] = h.shape
        cache["blocks"] = blocks
        gain = 1.0
        if self.alpha_bar is not None and 1 <= t <= self.alpha_bar.shape[0]:
            gain = 1.0 / np.sqrt(1.0 - self.alpha_bar[t - 1])
        cache["gain"] = gain
        out = gain * y.transpose(0, 2, 1)
        return (out[0] if single else out), cache

    def predict(self, x, t: int):
        return self.forward(x, t)[0]

    def backward(self, cache, dout):
        """Parameter gradients for upstream gradient dout (same shape as output)."""
        dout = np.asarray(dout, dtype=float)
        if cache["single"]:
            dout = dout[None]
        p = self.params
        cfg = self.config
        emb = cache["emb"]
        grads = {}
        dy = cache["gain"] * dout.transpose(0, 2, 1)
        dW, db, dh = _conv_backward(p["out.W"], cache["out_cols"], dy, cache["out_x_shape"])
        grads["out.W"], grads["out.b"] = dW, db
        for i in reversed(range(cfg.n_blocks)):
            pre = f"blk{i}."
            blk = cache["blocks"][i]
            dW, db, da1 = _conv_backward(p[pre + "b.W"], blk["cols_b"], dh, blk["a1"].shape)
            grads[pre + "b.W"], grads[pre + "b.b"] = dW, db
            du = da1 * blk["da1_du"]
            d_shift = du.sum(axis=(0, 2))
            grads[pre + "tW"] = np.outer(d_shift, emb)
            grads[pre + "tb"] = d_shift
            d_scale = (du * blk["u_lin"]).sum(axis=(0, 2))
            grads[pre + "sW"] = np.outer(d_scale, emb)
            grads[pre + "sb"] = d_scale
            du_lin = du * (1.0 + blk["scale"])[None, :, None]
            dW, db, dh_a = _conv_backward(p[pre + "a.W"], blk["cols_a"], du_lin, blk["h_in_shape"])
            grads[pre + "a.W"], grads[pre + "a.b"] = dW, db
            dh = dh + dh_a  # residual path + conv path
        grads["pos"] = dh.sum(axis=0)
        dW, db, _ = _conv_backward(p["in.W"], cache["in_cols"], dh, cache["in_x_shape"])
        grads["in.W"], grads["in.b"] = dW, db
        return grads


def eps_predict(model: DenoiserModel, tau_t, t: int):
    """Deterministic noise prediction for a single (H, d) trajectory."""
    return model.predict(tau_t, t)


def backprop(model: DenoiserModel, tau_t, t: int, upstream_grad):
    """Exact parameter gradients of sum(upstream_grad * eps_predict)."""
    _, cache = model.forward(tau_t, t)
    return model.backward(cache, upstream_grad)


def init_model(config: DenoiserConfig, normalizer: Normalizer, rng,
               meta: dict | None = None, schedule=None) -> DenoiserModel:
    C, d, K, E = config.channels, config.d, config.kernel, config.time_dim
    params = {}

    def conv_init(c_out, c_in):
        scale = 1.0 / np.sqrt(c_in * K)
        return rng.uniform(-scale, scale, size=(c_out, c_in, K))

    params["in.W"] = conv_init(C, d)
    params["in.b"] = np.zeros(C)
    params["pos"] = rng.uniform(-0.1, 0.1, size=(C, config.H))
    for i in range(config.n_blocks):
        pre = f"blk{i}."
        params[pre + "a.W"] = conv_init(C, C)
        params[pre + "a.b"] = np.zeros(C)
        params[pre + "b.W"] = conv_init(C, C)
        params[pre + "b.b"] = np.zeros(C)
        params[pre + "tW"] = rng.uniform(-1, 1, size=(C, E)) / np.sqrt(E)
        params[pre + "tb"] = np.zeros(C)
        params[pre + "sW"] = rng.uniform(-1, 1, size=(C, E)) / np.sqrt(E)
        params[pre + "sb"] = np.zeros(C)
    params["out.W"] = np.zeros((d, C, K))
    params["out.b"] = np.zeros(d)
    alpha_bar = None if schedule is None else schedule.alpha_bar
    return DenoiserModel(config, params, normalizer, meta=meta, alpha_bar=alpha_bar)


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 32
    max_steps: int = 5000
    patience: int = 10  # validation evaluations without improvement
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_steps", "patience", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _validation_loss(schedule, model, val_data, val_ts, val_eps):
    from .diffusion import forward_sample

    loss = 0.0
    for t in np.unique(val_ts):
        sel = val_ts == t
        tau_t = forward_sample(schedule, val_data[sel], int(t), val_eps[sel])
        eps_hat = model.predict(tau_t, int(t))
        loss += float(np.sum((eps_hat - val_eps[sel]) ** 2))
    return loss / val_data.shape[0]


def train(train_data, val_data, schedule, model: DenoiserModel, cfg: TrainConfig,
          log_file=None):
    """Minibatch training of the noise predictor with Adam and early stopping.

    train_data/val_data: normalized trajectory arrays (M, H, d). Validation
    uses a frozen (t, eps) draw so successive evaluations are comparable.
    Returns (model, history). The model keeps the best-validation parameters.
    """
    from .diffusion import training_loss

    train_data = np.asarray(train_data, dtype=float)
    if train_data.shape[0] == 0:
        raise ValueError("empty training dataset")
    if model.alpha_bar is None:
        model.alpha_bar = np.asarray(schedule.alpha_bar, dtype=float)
    val_data = np.asarray(val_data, dtype=float)
    if val_data.shape[0] == 0:
        val_data = train_data
    rng = np.random.default_rng(cfg.seed)
    val_rng = np.random.default_rng(cfg.seed + 1)
    val_ts = val_rng.integers(1, schedule.N + 1, size=val_data.shape[0])
    val_eps = val_rng.standard_normal(val_data.shape)

    opt = Adam(model.params, lr=cfg.learning_rate)
    history = []
    best_loss = np.inf
    best_params = None
    bad_evals = 0
    for step in range(1, cfg.max_steps + 1):
        # cosine decay towards zero: the constant-lr stochastic floor otherwise
        # dominates the final loss
        opt.lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * (step - 1) / cfg.max_steps))
        idx = rng.integers(0, train_data.shape[0], size=cfg.batch_size)
        loss, grads = training_loss(schedule, model, train_data[idx], rng)
        opt.step(model.params, grads)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            vloss = _validation_loss(schedule, model, val_data, val_ts, val_eps)
            rec = {"step": step, "train_loss": loss, "val_loss": vloss}
            history.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            if vloss < best_loss - 1e-12:
                best_loss = vloss
                best_params = {k: v.copy() for k, v in model.params.items()}
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    break
    if best_params is not None:
        model.params = best_params
    return model, history


# -- checkpoint I/O ----------------------------------------------------------


def save_model(model: DenoiserModel, path):
    names = sorted(model.params)
    blob = b"".join(model.params[k].astype("<f4").tobytes() for k in names)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "H": model.config.H, "d": model.config.d,
            "channels": model.config.channels, "n_blocks": model.config.n_blocks,
            "kernel": model.config.kernel, "time_dim": model.config.time_dim,
        },
        "normalizer": {"lo": model.normalizer.lo.tolist(), "hi": model.normalizer.hi.tolist()},
        "meta": model.meta,
        "alpha_bar": None if model.alpha_bar is None else model.alpha_bar.tolist(),
        "params": [{"name": k, "shape": list(model.params[k].shape)} for k in names],
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(blob)


def load_model(path) -> DenoiserModel:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        if raw[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError("bad magic bytes")
        (hlen,) = struct.unpack("<I", raw[4:8])
        header = json.loads(raw[8:8 + hlen].decode())
        blob = raw[8 + hlen:]
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, IndexError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise CheckpointError("parameter blob checksum mismatch")
    params = {}
    off = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = blob[off:off + 4 * n]
        if len(chunk) != 4 * n:
            raise CheckpointError("parameter blob truncated")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").astype(float).reshape(shape)
        off += 4 * n
    if off != len(blob):
        raise CheckpointError("parameter blob has trailing bytes")
    cfg = DenoiserConfig(**header["config"])
    norm = Normalizer(lo=np.asarray(header["normalizer"]["lo"]),
                      hi=np.asarray(header["normalizer"]["hi"]))
    return DenoiserModel(cfg, params, norm, meta=header.get("meta", {}),
                         alpha_bar=header.get("alpha_bar"))
