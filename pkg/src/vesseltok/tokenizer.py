"""Set-latent VAE over centerline point sets, at toy scale.

Encoder: Fourier features -> linear embedding -> cross-attention from FPS
query points onto all points -> self-attention stack -> mean / log-variance
heads giving K x C tokens. Decoder: lift tokens to width d -> self-attention
stack -> Fourier-embedded query points cross-attend to the tokens -> sigmoid
occupancy.
"""

from __future__ import annotations

import json
import math
import struct
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffkit as dk
from .diffkit import Tensor
from .field import DEFAULT_RADIUS, OccupancyGrid, sample_queries
from .graph import SpatialGraph, farthest_point_sampling, rotation_matrix

# values used for the full-scale model; the toy defaults below are smaller
FULL_SCALE_LR_PEAK = 5e-5
FULL_SCALE_LR_MIN = 1e-6
DEFAULT_QUERIES = 2048
BCE_CLAMP = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    token_count: int = 32
    channel_dim: int = 4
    hidden_dim: int = 64
    heads: int = 4
    encoder_self_layers: int = 2
    decoder_self_layers: int = 4
    fourier_frequencies: int = 8
    kl_weight: float = 1e-3
    ff_mult: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.token_count < 1 or self.channel_dim < 1:
            raise ConfigError("token_count and channel_dim must be >= 1")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        if self.fourier_frequencies < 1:
            raise ConfigError("fourier_frequencies must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**_coerce(cls, d))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 500
    lr_peak: float = 1e-3
    lr_min: float = 1e-5
    warmup_steps: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_queries: int = DEFAULT_QUERIES
    near_fraction: float = 0.5
    sigma_lo: float = 0.005
    sigma_hi: float = 0.05
    radius: float = DEFAULT_RADIUS
    augment: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> TrainSchedule:
        return cls(**_coerce(cls, d))


def _coerce(cls, d: dict) -> dict:
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for k, v in d.items():
        if k not in types:
            raise ConfigError(f"unknown {cls.__name__} key {k!r}")
        t = types[k]
        if t == "bool" and isinstance(v, str):
            v = v.strip().lower() in ("1", "true", "yes", "on")
        elif t in ("int", "float", "bool"):
            v = {"int": int, "float": float, "bool": bool}[t](v)
        out[k] = v
    return out


def read_kv_config(path) -> dict:
    """Flat ``key = value`` text file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_kv_config(d: dict, path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in d.items()))


@dataclass
class LatentTokens:
    mu: object
    log_var: object
    sample: object = None
    eps: np.ndarray | None = None


class Params(dict):
    """Named float64 parameter arrays."""

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.items()}

    def copy(self) -> Params:
        return Params({k: v.copy() for k, v in self.items()})

    def count(self) -> int:
        return sum(v.size for v in self.values())


# ---------------------------------------------------------------------------
# features and parameters

def fourier_encode(points, n_freq: int) -> np.ndarray:
    """Per axis: [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(F-1) pi x), cos(...)]."""
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    freqs = (2.0 ** np.arange(n_freq)) * np.pi
    ang = x[:, :, None] * freqs  # (N, 3, F)
    sc = np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(len(x), 3, 2 * n_freq)
    return np.concatenate([x[:, :, None], sc], axis=-1).reshape(len(x), 3 * (1 + 2 * n_freq))


def _block_shapes(prefix: str, d: int, ff: int, cross: bool) -> list[tuple[str, tuple]]:
    out = [(f"{prefix}.ln1.g", (d,)), (f"{prefix}.ln1.b", (d,))]
    if cross:
        out += [(f"{prefix}.lnkv.g", (d,)), (f"{prefix}.lnkv.b", (d,))]
    out += [(f"{prefix}.wq", (d, d)), (f"{prefix}.wk", (d, d)), (f"{prefix}.wv", (d, d)),
            (f"{prefix}.wo", (d, d)), (f"{prefix}.bo", (d,)),
            (f"{prefix}.ln2.g", (d,)), (f"{prefix}.ln2.b", (d,)),
            (f"{prefix}.ff1.w", (d, ff)), (f"{prefix}.ff1.b", (ff,)),
            (f"{prefix}.ff2.w", (ff, d)), (f"{prefix}.ff2.b", (d,))]
    return out


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    d, c = cfg.hidden_dim, cfg.channel_dim
    ff = cfg.ff_mult * d
    fin = 3 * (1 + 2 * cfg.fourier_frequencies)
    shapes = [("enc.embed.w", (fin, d)), ("enc.embed.b", (d,))]
    shapes += _block_shapes("enc.cross", d, ff, True)
    for i in range(cfg.encoder_self_layers):
        shapes += _block_shapes(f"enc.self{i}", d, ff, False)
    shapes += [("enc.ln.g", (d,)), ("enc.ln.b", (d,)),
               ("enc.mu.w", (d, c)), ("enc.mu.b", (c,)),
               ("enc.logvar.w", (d, c)), ("enc.logvar.b", (c,)),
               ("dec.lift.w", (c, d)), ("dec.lift.b", (d,))]
    for i in range(cfg.decoder_self_layers):
        shapes += _block_shapes(f"dec.self{i}", d, ff, False)
    shapes += [("dec.embed.w", (fin, d)), ("dec.embed.b", (d,))]
    shapes += _block_shapes("dec.cross", d, ff, True)
    shapes += [("dec.ln.g", (d,)), ("dec.ln.b", (d,)),
               ("dec.head.w", (d, 1)), ("dec.head.b", (1,))]
    return shapes


def init_params(cfg: ModelConfig) -> Params:
    rng = np.random.default_rng(cfg.seed)
    p = Params()
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            p[name] = np.ones(shape)
        elif len(shape) == 1:
            p[name] = np.zeros(shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if name.startswith("enc.logvar"):
                std *= 0.1
            p[name] = rng.normal(0.0, std, shape)
    return p


# ---------------------------------------------------------------------------
# network

def _linear(x: Tensor, P, name: str) -> Tensor:
    return x @ P[f"{name}.w"] + P[f"{name}.b"]


def _ln(x: Tensor, P, name: str) -> Tensor:
    return dk.layer_norm(x, P[f"{name}.g"], P[f"{name}.b"])


def _attention(xq: Tensor, xkv: Tensor, P, prefix: str, heads: int) -> Tensor:
    nq, d = xq.shape
    nk = xkv.shape[0]
    dh = d // heads

    def split(t, n):
        return dk.transpose(dk.reshape(t, (n, heads, dh)), (1, 0, 2))

    q = split(xq @ P[f"{prefix}.wq"], nq)
    k = split(xkv @ P[f"{prefix}.wk"], nk)
    v = split(xkv @ P[f"{prefix}.wv"], nk)
    att = dk.softmax((q @ dk.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh)), axis=-1)
    o = dk.reshape(dk.transpose(att @ v, (1, 0, 2)), (nq, d))
    return o @ P[f"{prefix}.wo"] + P[f"{prefix}.bo"]


def _mlp(x: Tensor, P, prefix: str) -> Tensor:
    return _linear(dk.gelu(_linear(x, P, f"{prefix}.ff1")), P, f"{prefix}.ff2")


def _self_block(x: Tensor, P, prefix: str, heads: int) -> Tensor:
    h = _ln(x, P, f"{prefix}.ln1")
    x = x + _attention(h, h, P, prefix, heads)
    return x + _mlp(_ln(x, P, f"{prefix}.ln2"), P, prefix)


def _cross_block(xq: Tensor, xkv: Tensor, P, prefix: str, heads: int) -> Tensor:
    x = xq + _attention(_ln(xq, P, f"{prefix}.ln1"), _ln(xkv, P, f"{prefix}.lnkv"),
                        P, prefix, heads)
    return x + _mlp(_ln(x, P, f"{prefix}.ln2"), P, prefix)


def encode_tensors(points, cfg: ModelConfig, P) -> tuple[Tensor, Tensor]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < cfg.token_count:
        raise ValueError(f"need at least {cfg.token_count} points to encode, got {len(pts)}")
    qi = farthest_point_sampling(pts, cfg.token_count)
    feats = fourier_encode(pts, cfg.fourier_frequencies)
    x = _linear(Tensor(feats), P, "enc.embed")
    q = _linear(Tensor(feats[qi]), P, "enc.embed")
    h = _cross_block(q, x, P, "enc.cross", cfg.heads)
    for i in range(cfg.encoder_self_layers):
        h = _self_block(h, P, f"enc.self{i}", cfg.heads)
    h = _ln(h, P, "enc.ln")
    return _linear(h, P, "enc.mu"), _linear(h, P, "enc.logvar")


def decode_tensors(z, query_points, cfg: ModelConfig, P) -> Tensor:
    z = dk.as_tensor(z)
    if z.shape != (cfg.token_count, cfg.channel_dim):
        raise ConfigError(f"latent shape {z.shape} does not match config "
                          f"({cfg.token_count}, {cfg.channel_dim})")
    qp = np.asarray(query_points, dtype=np.float64).reshape(-1, 3)
    t = _linear(z, P, "dec.lift")
    for i in range(cfg.decoder_self_layers):
        t = _self_block(t, P, f"dec.self{i}", cfg.heads)
    q = _linear(Tensor(fourier_encode(qp, cfg.fourier_frequencies)), P, "dec.embed")
    o = _cross_block(q, t, P, "dec.cross", cfg.heads)
    o = _ln(o, P, "dec.ln")
    return dk.reshape(dk.sigmoid(_linear(o, P, "dec.head")), (len(qp),))


def _frozen(params: Params) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def encode(points, cfg: ModelConfig, params: Params) -> LatentTokens:
    mu, lv = encode_tensors(points, cfg, _frozen(params))
    return LatentTokens(mu.data, lv.data)


def reparameterize(latent: LatentTokens, seed=None, eps=None) -> LatentTokens:
    """sample = mu + exp(0.5 * log_var) * eps with eps ~ N(0, I).

    ``eps`` overrides the draw (e.g. zeros). Works on arrays or on tensors, in
    which case the sample stays on the tape.
    """
    mu, lv = latent.mu, latent.log_var
    shape = mu.shape
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), shape)
    if isinstance(mu, Tensor) or isinstance(lv, Tensor):
        sample = dk.as_tensor(mu) + dk.exp(dk.as_tensor(lv) * 0.5) * Tensor(eps)
    else:
        sample = mu + np.exp(0.5 * lv) * eps
    return LatentTokens(mu, lv, sample, np.array(eps))


def decode(z, query_points, cfg: ModelConfig, params: Params,
           batch: int = 32768) -> np.ndarray:
    """Occupancy probabilities in (0, 1), one per query point."""
    z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    qp = np.asarray(query_points, dtype=np.float64).reshape(-1, 3)
    P = _frozen(params)
    out = np.empty(len(qp))
    for s in range(0, len(qp), batch):
        out[s:s + batch] = decode_tensors(z, qp[s:s + batch], cfg, P).data
    if not len(qp):
        decode_tensors(z, qp, cfg, P)
    return out


def decode_grid(z, grid: OccupancyGrid, cfg: ModelConfig, params: Params,
                batch: int = 32768) -> OccupancyGrid:
    """Probability field at every voxel centre of ``grid``."""
    idx = np.indices(grid.dims).reshape(3, -1).T
    probs = decode(z, grid.centers(idx), cfg, params, batch)
    return OccupancyGrid(probs.reshape(grid.dims), grid.origin, grid.spacing)


def kl_divergence(mu, log_var) -> Tensor:
    """KL(N(mu, diag(exp(log_var))) || N(0, I)) summed over all entries."""
    mu, lv = dk.as_tensor(mu), dk.as_tensor(log_var)
    return (mu * mu + dk.exp(lv) - lv - 1.0).sum() * 0.5


def bce(probs, labels) -> Tensor:
    p = dk.clip(dk.as_tensor(probs), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return -(dk.log(p) * y + dk.log(1.0 - p) * (1.0 - y)).mean()


def loss(probs, labels, latent: LatentTokens, kl_weight: float) -> Tensor:
    """Mean BCE over queries plus ``kl_weight`` times the latent KL."""
    return bce(probs, labels) + kl_divergence(latent.mu, latent.log_var) * kl_weight


def compression_ratio(node_counts: Sequence[int], K: int, C: int) -> float:
    """Mean over graphs of 3 N_i / (K C), as one correctly rounded int division."""
    node_counts = list(node_counts)
    if not node_counts:
        raise ValueError("need at least one node count")
    if K < 1 or C < 1:
        raise ValueError("K and C must be >= 1")
    return 3 * sum(int(n) for n in node_counts) / (K * C * len(node_counts))


MICRO_CONFIG = dict(token_count=4, channel_dim=2, hidden_dim=16, heads=2,
                    encoder_self_layers=1, decoder_self_layers=1, fourier_frequencies=2)


def loss_gradient_check(points, query_points, labels, cfg: ModelConfig, params: Params,
                        eps_noise, per_tensor: int = 4, h: float = 1e-6,
                        seed: int = 0) -> dict[str, float]:
    """Compare the tape gradient of the full training loss with central
    differences on ``per_tensor`` random entries of every parameter tensor.

    The reparameterization noise is held fixed at ``eps_noise``. Returns the
    max relative error per tensor name, with the error scaled by
    max(1, |g_ad|, |g_fd|).
    """
    def total(P):
        mu, lv = encode_tensors(points, cfg, P)
        lat = reparameterize(LatentTokens(mu, lv), eps=eps_noise)
        return loss(decode_tensors(lat.sample, query_points, cfg, P), labels,
                    lat, cfg.kl_weight)

    P = params.tensors()
    grads = dk.backward(total(P))
    rng = np.random.default_rng(seed)
    work = params.copy()
    errs = {}
    for name in sorted(work):
        arr = work[name].reshape(-1)
        g_ad = grads.get(P[name], np.zeros_like(work[name])).reshape(-1)
        picks = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
        worst = 0.0
        for i in picks:
            old = arr[i]
            arr[i] = old + h
            fp = total(_frozen(work)).item()
            arr[i] = old - h
            fm = total(_frozen(work)).item()
            arr[i] = old
            fd = (fp - fm) / (2 * h)
            worst = max(worst, abs(g_ad[i] - fd) / max(1.0, abs(g_ad[i]), abs(fd)))
        errs[name] = worst
    return errs


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    params: Params
    history: list[dict] = field(default_factory=list)


def cosine_lr(step: int, total: int, sched: TrainSchedule) -> float:
    if step < sched.warmup_steps:
        return sched.lr_peak * (step + 1) / sched.warmup_steps
    span = max(1, total - sched.warmup_steps)
    t = min(1.0, (step - sched.warmup_steps) / span)
    return sched.lr_min + 0.5 * (sched.lr_peak - sched.lr_min) * (1 + math.cos(math.pi * t))


def _stream(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def train(dataset, cfg: ModelConfig, sched: TrainSchedule,
          params: Params | None = None, log_every: int = 0) -> TrainResult:
    """AdamW with cosine decay, batch size 1.

    ``dataset`` holds graphs or (graph, QuerySet) pairs. A given QuerySet is
    used in the first epoch; every later epoch draws fresh queries (after a
    random rotation when ``sched.augment``) from a seed stream keyed by
    (schedule seed, epoch, sample).
    """
    items = [(d, None) if isinstance(d, SpatialGraph) else tuple(d) for d in dataset]
    if not items:
        raise ValueError("cannot train on an empty dataset")
    params = init_params(cfg) if params is None else params.copy()
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    total = sched.epochs * len(items)
    step = 0
    history = []
    for epoch in range(sched.epochs):
        sums = np.zeros(3)
        for i, (graph, qs) in enumerate(items):
            rng = _stream(sched.seed, epoch, i)
            g = graph
            if sched.augment:
                g = graph.with_nodes(graph.nodes @ rotation_matrix(rng).T)
            if qs is None or epoch > 0 or sched.augment:
                qs = sample_queries(g, sched.radius, sched.n_queries, sched.near_fraction,
                                    (sched.sigma_lo, sched.sigma_hi), seed=rng.integers(2**63))
            P = params.tensors()
            mu, lv = encode_tensors(g.nodes, cfg, P)
            lat = reparameterize(LatentTokens(mu, lv), seed=_stream(cfg.seed, 1, step).integers(2**63))
            probs = decode_tensors(lat.sample, qs.points, cfg, P)
            rec = bce(probs, qs.labels)
            kl = kl_divergence(mu, lv)
            tot = rec + kl * cfg.kl_weight
            dk.backward(tot)
            lr = cosine_lr(step, total, sched)
            step += 1
            _adamw(params, P, m, v2, step, lr, sched)
            sums += (rec.item(), kl.item(), tot.item())
        sums /= len(items)
        history.append({"epoch": epoch, "bce": float(sums[0]), "kl": float(sums[1]),
                        "total": float(sums[2])})
        if log_every and (epoch % log_every == 0 or epoch == sched.epochs - 1):
            print(f"epoch {epoch:5d}  bce {sums[0]:.5f}  kl {sums[1]:.3f}  total {sums[2]:.5f}")
    return TrainResult(params, history)


def _adamw(params, P, m, v, step, lr, s: TrainSchedule) -> None:
    b1, b2 = s.beta1, s.beta2
    c1 = 1 - b1 ** step
    c2 = 1 - b2 ** step
    for k, w in params.items():
        g = P[k].grad
        if g is None:
            continue
        if w.ndim >= 2 and s.weight_decay:
            w *= 1 - lr * s.weight_decay
        m[k] = b1 * m[k] + (1 - b1) * g
        v[k] = b2 * v[k] + (1 - b2) * g * g
        w -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + s.adam_eps)


def write_history_csv(history: list[dict], path) -> None:
    lines = ["epoch,bce,kl,total"]
    lines += [f"{h['epoch']},{h['bce']!r},{h['kl']!r},{h['total']!r}" for h in history]
    Path(path).write_text("\n".join(lines) + "\n")


def read_history_csv(path) -> list[dict]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for r in rows:
        e, b, k, t = r.split(",")
        out.append({"epoch": int(e), "bce": float(b), "kl": float(k), "total": float(t)})
    return out


# ---------------------------------------------------------------------------
# binary files

_CKPT_MAGIC = b"VTCK"
_TOK_MAGIC = b"VTTK"


def save_checkpoint(params: Params, cfg: ModelConfig, path, extra: dict | None = None) -> None:
    """Little-endian: magic, u32 version, u32 header length, JSON header
    (config plus extras), u32 tensor count, then per tensor u16 name length,
    name, u8 ndim, u32 dims, f64 payload in C order. Tensors are written in
    sorted name order."""
    header = json.dumps({"config": cfg.to_dict(), **(extra or {})}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC + struct.pack("<II", 1, len(header)) + header)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[Params, ModelConfig, dict]:
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != 1:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(data[off:off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = Params()
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nl].decode()
        off += nl
        (nd,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{nd}I", data, off)
        off += 4 * nd
        n = int(np.prod(shape)) if nd else 1
        params[name] = np.frombuffer(data, "<f8", n, off).reshape(shape).astype(np.float64)
        off += 8 * n
    cfg = ModelConfig.from_dict(header.pop("config"))
    expected = dict(param_shapes(cfg))
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise ConfigError(f"{path}: tensors do not match the stored config")
    return params, cfg, header


def save_tokens(latent: LatentTokens, path) -> None:
    """Magic, u32 version, u32 K, u32 C, then mu and log_var as f64 K x C."""
    mu = np.ascontiguousarray(latent.mu, dtype="<f8")
    lv = np.ascontiguousarray(latent.log_var, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_TOK_MAGIC + struct.pack("<III", 1, *mu.shape))
        f.write(mu.tobytes())
        f.write(lv.tobytes())


def load_tokens(path) -> LatentTokens:
    data = Path(path).read_bytes()
    if data[:4] != _TOK_MAGIC:
        raise ConfigError(f"{path}: not a token file")
    version, K, C = struct.unpack_from("<III", data, 4)
    if version != 1:
        raise ConfigError(f"{path}: unsupported token version {version}")
    n = K * C
    mu = np.frombuffer(data, "<f8", n, 16).reshape(K, C).astype(np.float64)
    lv = np.frombuffer(data, "<f8", n, 16 + 8 * n).reshape(K, C).astype(np.float64)
    return LatentTokens(mu, lv)
