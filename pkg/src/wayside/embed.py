"""
Signal windows, a small dense VAE written against numpy, and the
handcrafted statistical baseline.

The VAE maps a fixed-length accelerometer window to a diagonal Gaussian
posterior; the downstream embedding is the deterministic concatenation of the
posterior mean and log-variance (``2 * latent_dim`` values).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

WINDOW_LENGTH = 1024
FORMAT_MAGIC = b"WSVAE"
FORMAT_VERSION = 1


class NumericError(FloatingPointError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str = "loss diverged"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignalWindow:
    values: np.ndarray
    normalization: tuple[float, float]   # (mean, std) removed from the raw window

    @property
    def raw(self) -> np.ndarray:
        mean, std = self.normalization
        return self.values * std + mean


def normalize_window(raw) -> SignalWindow:
    raw = np.asarray(raw, dtype=float)
    mean = float(raw.mean())
    std = float(raw.std())
    if std == 0:
        return SignalWindow(np.zeros_like(raw), (mean, 0.0))
    return SignalWindow((raw - mean) / std, (mean, std))


def make_window(accel, length: int = WINDOW_LENGTH) -> SignalWindow:
    """Resample a whole-passage trace to ``length`` samples and z-normalize it.

    Resampling takes the RMS of ``length`` contiguous, nearly equal blocks, so
    short impact bursts keep their energy instead of being aliased away.
    Traces shorter than ``length`` are linearly interpolated instead.
    """
    x = np.asarray(accel, dtype=float)
    if x.size == 0:
        raise ValueError("empty trace")
    if x.size < length:
        src = np.linspace(0.0, 1.0, x.size)
        dst = np.linspace(0.0, 1.0, length)
        return normalize_window(np.interp(dst, src, np.abs(x)))
    edges = np.linspace(0, x.size, length + 1).astype(np.int64)
    sums = np.add.reduceat(x ** 2, edges[:-1])
    counts = np.diff(edges)
    return normalize_window(np.sqrt(sums / counts))


def stack_windows(windows) -> np.ndarray:
    arr = np.stack([w.values if isinstance(w, SignalWindow) else np.asarray(w, float)
                    for w in windows])
    if arr.ndim != 2:
        raise ValueError("windows must be one-dimensional and of equal length")
    return arr


# ---------------------------------------------------------------------------
# VAE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VaeParams:
    """Weights of the encoder/decoder stacks.

    ``encoder[i]`` and ``decoder[i]`` are ``(W, b)`` pairs; hidden layers use
    ReLU, the last encoder layer outputs ``[mu, logvar]`` and the last decoder
    layer is linear.
    """

    encoder: tuple[tuple[np.ndarray, np.ndarray], ...]
    decoder: tuple[tuple[np.ndarray, np.ndarray], ...]
    latent_dim: int
    beta: float = 1.412

    def __post_init__(self):
        if self.encoder[-1][0].shape[1] != 2 * self.latent_dim:
            raise ValueError("encoder output must be 2 * latent_dim")
        if self.decoder[0][0].shape[0] != self.latent_dim:
            raise ValueError("decoder input must be latent_dim")

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(W.shape[1] for W, _ in self.encoder[:-1])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in self.encoder + self.decoder:
            out += [W, b]
        return out

    def with_arrays(self, arrays) -> "VaeParams":
        it = iter(arrays)
        enc = tuple((next(it), next(it)) for _ in self.encoder)
        dec = tuple((next(it), next(it)) for _ in self.decoder)
        return replace(self, encoder=enc, decoder=dec)

    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_vae(input_dim: int, latent_dim: int = 20, hidden=(256,), beta: float = 1.412,
             seed: int = 0) -> VaeParams:
    """He-style uniform fan-in initialization, zero biases."""
    rng = np.random.default_rng(seed)

    def stack(sizes):
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / fan_in)
            layers.append((rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return tuple(layers)

    hidden = tuple(hidden)
    enc = stack((input_dim,) + hidden + (2 * latent_dim,))
    dec = stack((latent_dim,) + hidden[::-1] + (input_dim,))
    return VaeParams(enc, dec, latent_dim, beta)


def _mlp(x, layers):
    """Forward through ReLU hidden layers and a linear output; keeps pre-activations."""
    acts = [x]
    pre = []
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        acts.append(h)
    return h, acts, pre


def _mlp_backward(grad_out, layers, acts, pre):
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (pre[i] > 0)
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        g = g @ W.T
    return grads, g


def kl_divergence(mu, logvar) -> float:
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)), summed over latents, averaged over rows."""
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    return float(np.mean(-0.5 * np.sum(1.0 + logvar - mu ** 2 - np.exp(logvar), axis=1)))


@dataclass
class _Trace:
    x: np.ndarray
    eps: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    xhat: np.ndarray
    enc: tuple
    dec: tuple


def _forward(params: VaeParams, x, eps):
    out, enc_acts, enc_pre = _mlp(x, params.encoder)
    L = params.latent_dim
    mu, logvar = out[:, :L], out[:, L:]
    z = mu + np.exp(0.5 * logvar) * eps
    xhat, dec_acts, dec_pre = _mlp(z, params.decoder)
    return _Trace(x, eps, mu, logvar, z, xhat, (enc_acts, enc_pre), (dec_acts, dec_pre))


def _losses(params: VaeParams, tr: _Trace):
    recon = float(np.mean(np.sum((tr.x - tr.xhat) ** 2, axis=1)))
    kl = kl_divergence(tr.mu, tr.logvar)
    return recon + params.beta * kl, recon, kl


def elbo_loss(x, params: VaeParams, rng=None, eps=None):
    """Negative ELBO of a batch: ``(loss, recon_term, kl_term)``.

    ``recon_term`` is the squared reconstruction error summed over window
    samples and averaged over rows (unit-variance Gaussian likelihood up to
    constants); ``loss = recon_term + beta * kl_term``.  Pass ``eps`` to freeze
    the reparameterization noise, otherwise it is drawn from ``rng``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if eps is None:
        rng = np.random.default_rng() if rng is None else rng
        eps = rng.standard_normal((x.shape[0], params.latent_dim))
    tr = _forward(params, x, eps)
    loss, recon, kl = _losses(params, tr)
    if not np.isfinite(loss):
        raise NumericError("non-finite value in the VAE forward pass")
    return loss, recon, kl


def elbo_gradients(params: VaeParams, x, eps, kl_scale: float = 1.0):
    """Backpropagated gradients of :func:`elbo_loss` w.r.t. every array of ``params``.

    ``kl_scale`` multiplies the KL contribution to the gradient and exists only
    so that tests can check that a wrong gradient is caught.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tr = _forward(params, x, eps)
    B = x.shape[0]
    g_xhat = 2.0 * (tr.xhat - x) / B
    dec_grads, g_z = _mlp_backward(g_xhat, params.decoder, *tr.dec)
    std = np.exp(0.5 * tr.logvar)
    k = kl_scale * params.beta / B
    g_mu = g_z + k * tr.mu
    g_logvar = g_z * tr.eps * 0.5 * std + k * 0.5 * (np.exp(tr.logvar) - 1.0)
    enc_grads, _ = _mlp_backward(np.hstack([g_mu, g_logvar]), params.encoder, *tr.enc)
    out = []
    for gW, gb in enc_grads + dec_grads:
        out += [gW, gb]
    return out


def gradient_check(params: VaeParams, x, epsilon: float = 1e-5, seed: int = 0,
                   grad_fn=None) -> float:
    """Max relative error between backprop gradients and central differences.

    The reparameterization noise is frozen so the loss is a deterministic
    function of the parameters.  Intended for small networks.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eps = np.random.default_rng(seed).standard_normal((x.shape[0], params.latent_dim))
    grad_fn = elbo_gradients if grad_fn is None else grad_fn
    analytic = grad_fn(params, x, eps)
    arrays = [a.copy() for a in params.arrays()]
    worst = 0.0
    for ai, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        g_bp = analytic[ai].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp = elbo_loss(x, params.with_arrays(arrays), eps=eps)[0]
            flat[j] = orig - epsilon
            lm = elbo_loss(x, params.with_arrays(arrays), eps=eps)[0]
            flat[j] = orig
            g_fd = (lp - lm) / (2 * epsilon)
            denom = max(abs(g_bp[j]), abs(g_fd), 1e-12)
            worst = max(worst, abs(g_bp[j] - g_fd) / denom)
    return worst


@dataclass(frozen=True)
class VaeConfig:
    lr: float = 5e-4
    epochs: int = 150
    batch: int = 64
    beta: float = 1.412
    latent_dim: int = 20
    hidden: tuple[int, ...] = (256,)
    optimizer: str = "sgd"        # "sgd" (momentum) or "adam"
    momentum: float = 0.9
    val_fraction: float = 0.2
    clip_norm: float | None = 10.0   # global gradient-norm clip, None disables
    seed: int = 0


@dataclass
class TrainHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    val_initial: float = float("nan")

    @property
    def best_val(self) -> float:
        return min(self.val) if self.val else float("nan")

    def to_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "val_initial": self.val_initial}


def _split(n: int, fraction: float, rng):
    order = rng.permutation(n)
    n_val = int(round(n * fraction))
    if n - n_val < 1:
        raise ValueError("need at least one training window")
    return order[n_val:], order[:n_val]


def train_vae(windows, config: VaeConfig = VaeConfig()) -> tuple[VaeParams, TrainHistory]:
    """Fit a VAE by minibatch gradient descent on the negative ELBO.

    A ``val_fraction`` share of the windows is held out; the history records
    the mean training loss and the validation loss after every epoch (the
    validation noise is fixed so the curve is comparable across epochs).
    """
    X = stack_windows(windows)
    if X.shape[0] < 1:
        raise ValueError("no windows")
    ss = np.random.SeedSequence(config.seed)
    init_seq, split_seq, noise_seq, val_seq = ss.spawn(4)
    params = init_vae(X.shape[1], config.latent_dim, config.hidden, config.beta,
                      seed=int(np.random.default_rng(init_seq).integers(2 ** 31)))
    tr_idx, va_idx = _split(X.shape[0], config.val_fraction, np.random.default_rng(split_seq))
    Xtr = X[tr_idx]
    Xva = X[va_idx] if va_idx.size else X[tr_idx]
    rng = np.random.default_rng(noise_seq)
    val_eps = np.random.default_rng(val_seq).standard_normal((Xva.shape[0], config.latent_dim))

    hist = TrainHistory()
    try:
        hist.val_initial = elbo_loss(Xva, params, eps=val_eps)[0]
    except NumericError:
        raise TrainingError(0, "non-finite loss at initialization")
    arrays = [a.copy() for a in params.arrays()]
    vel = [np.zeros_like(a) for a in arrays]
    sq = [np.zeros_like(a) for a in arrays]
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(Xtr.shape[0])
        losses = []
        for start in range(0, order.size, config.batch):
            xb = Xtr[order[start:start + config.batch]]
            eps = rng.standard_normal((xb.shape[0], config.latent_dim))
            p = params.with_arrays(arrays)
            try:
                losses.append(elbo_loss(xb, p, eps=eps)[0])
            except NumericError:
                raise TrainingError(epoch)
            grads = elbo_gradients(p, xb, eps)
            if config.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > config.clip_norm:
                    grads = [g * (config.clip_norm / norm) for g in grads]
            step += 1
            for i, g in enumerate(grads):
                if config.optimizer == "adam":
                    vel[i] = 0.9 * vel[i] + 0.1 * g
                    sq[i] = 0.999 * sq[i] + 0.001 * g * g
                    mhat = vel[i] / (1 - 0.9 ** step)
                    vhat = sq[i] / (1 - 0.999 ** step)
                    arrays[i] -= config.lr * mhat / (np.sqrt(vhat) + 1e-8)
                else:
                    vel[i] = config.momentum * vel[i] - config.lr * g
                    arrays[i] += vel[i]
        params = params.with_arrays(arrays)
        train_loss = float(np.mean(losses))
        try:
            val_loss = elbo_loss(Xva, params, eps=val_eps)[0]
        except NumericError:
            raise TrainingError(epoch)
        if not np.isfinite(train_loss):
            raise TrainingError(epoch)
        hist.train.append(train_loss)
        hist.val.append(val_loss)
    return params.with_arrays([a.copy() for a in arrays]), hist


@dataclass(frozen=True)
class Embedding:
    mu: np.ndarray
    logvar: np.ndarray

    @property
    def fused_view(self) -> np.ndarray:
        return np.concatenate([self.mu, self.logvar])


def encode(x, params: VaeParams) -> Embedding:
    """Posterior mean and log-variance of one window (no sampling)."""
    v = x.values if isinstance(x, SignalWindow) else np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size != params.input_dim:
        raise ValueError(f"expected a window of length {params.input_dim}")
    out, _, _ = _mlp(v[None, :], params.encoder)
    L = params.latent_dim
    return Embedding(out[0, :L].copy(), out[0, L:].copy())


def encode_batch(windows, params: VaeParams) -> np.ndarray:
    """Fused ``[mu, logvar]`` rows for a batch of windows."""
    X = stack_windows(windows)
    if X.shape[1] != params.input_dim:
        raise ValueError(f"expected windows of length {params.input_dim}")
    out, _, _ = _mlp(X, params.encoder)
    return out


def search_vae(windows, n_trials: int = 50, seed: int = 0, max_epochs: int = 150):
    """Seeded random search over learning rate, latent size, epochs, batch size and KL weight.

    Returns ``(best VaeConfig, trials)`` where ``trials`` lists
    ``(config, best validation loss)`` in draw order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    trials = []
    for t in range(n_trials):
        cfg = VaeConfig(
            lr=float(10 ** rng.uniform(-4, -2.5)),
            latent_dim=int(rng.choice([8, 12, 16, 20, 24, 32])),
            epochs=int(rng.integers(10, max_epochs + 1)),
            batch=int(rng.choice([32, 64, 128])),
            beta=float(rng.uniform(0.5, 2.0)),
            seed=seed + t,
        )
        try:
            _, hist = train_vae(windows, cfg)
            score = hist.best_val
        except TrainingError:
            score = float("inf")
        trials.append((cfg, score))
    best = min(trials, key=lambda p: p[1])[0]
    return best, trials


def save_vae(path, params: VaeParams, seed: int = 0, history: TrainHistory | None = None) -> None:
    """Binary model file: magic, version byte, u32 header size, JSON header, float64 payload."""
    arrays = params.arrays()
    header = {
        "latent_dim": params.latent_dim,
        "input_dim": params.input_dim,
        "hidden": list(params.hidden),
        "beta": params.beta,
        "seed": seed,
        "history": history.to_dict() if history is not None else None,
        "arrays": [list(a.shape) for a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(blob)) + blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_vae(path) -> tuple[VaeParams, dict]:
    data = Path(path).read_bytes()
    if data[:5] != FORMAT_MAGIC:
        raise ValueError("not a VAE model file")
    if data[5] != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {data[5]}")
    (n,) = struct.unpack("<I", data[6:10])
    header = json.loads(data[10:10 + n])
    offset = 10 + n
    arrays = []
    for shape in header["arrays"]:
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).copy())
        offset += 8 * size
    proto = init_vae(header["input_dim"], header["latent_dim"], tuple(header["hidden"]),
                     header["beta"])
    return proto.with_arrays(arrays), header


# ---------------------------------------------------------------------------
# Handcrafted baseline
# ---------------------------------------------------------------------------

def handcrafted_features(x, n_dominant: int = 3, n_fft: int = 16) -> np.ndarray:
    """Statistical and spectral summary of a window.

    ``[mean, std, range, skewness, excess kurtosis, spectral energy,
    n_dominant dominant frequency bins, first n_fft FFT magnitudes]``.
    A :class:`SignalWindow` is described on its raw (un-normalized) scale.
    Skewness and kurtosis of a zero-variance window are defined as 0.
    """
    v = x.raw if isinstance(x, SignalWindow) else np.asarray(x, dtype=float)
    if v.size == 0:
        raise ValueError("empty window")
    std = v.std()
    if std == 0:
        skew = kurt = 0.0
    else:
        skew = float(stats.skew(v))
        kurt = float(stats.kurtosis(v))
    spec = np.abs(np.fft.rfft(v))
    energy = float(np.sum(v ** 2))
    ac = spec[1:]
    top = np.argsort(-ac, kind="stable")[:n_dominant] + 1
    dom = np.zeros(n_dominant)
    dom[:top.size] = top
    mags = np.zeros(n_fft)
    mags[:min(n_fft, spec.size)] = spec[:n_fft]
    return np.concatenate([[v.mean(), std, np.ptp(v), skew, kurt, energy], dom, mags])
