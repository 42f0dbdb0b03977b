"""Three-channel LSTM encoder-decoder trajectory predictor.

Channel 1 maps the OV's encoder state through a linear layer, channel 2
runs convolutional social pooling over the 4x3 tensor of encoder states,
channel 3 is graph attention from the OV to its neighbours. The fused
context drives an LSTM decoder that emits a bivariate Gaussian per
future step.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import FUTURE_LEN, HISTORY_LEN, STEP, Sample
from .errors import InvalidParameter, NumericalError, ShapeError
from .scene import OV_CELL, SV_SLOTS

SIGMA_MIN, SIGMA_MAX = 1e-3, 1e3
RHO_SCALE = 0.999

POSITION_SETS = {"pos": 1, "pos+vel": 2, "pos+vel+acc": 3}
MOTION_SETS = ("abs", "abs+rel")
CHANNEL_SETS = ((1,), (1, 2), (1, 3), (1, 2, 3))


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    encoder_hidden: int = 64
    decoder_hidden: int = 128
    conv1_filters: int = 64
    conv2_filters: int = 16
    gat_dim: int = 64
    ch1_dim: int = 32
    history_len: int = HISTORY_LEN
    future_len: int = FUTURE_LEN
    leaky_slope: float = 0.1
    pool_stride: int = 1
    sv_weights: str = "shared"
    # positions are taken relative to the OV at t0 and divided by pos_scale
    pos_scale: float = 10.0
    vel_scale: float = 10.0
    acc_scale: float = 1.0
    # "origin": mu = OV position at t0 + scaled output; "cv": the constant-velocity
    # extrapolation from t0 is added as well, so the decoder learns the deviation
    output_anchor: str = "origin"
    # multiplier on the decoder's position output; None means pos_scale
    output_scale: float | None = None
    # initial standard deviation of the position heads (metres)
    sigma_init: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "encoder_hidden", "decoder_hidden", "conv1_filters",
                     "conv2_filters", "gat_dim", "ch1_dim", "history_len", "future_len",
                     "pool_stride"):
            if getattr(self, name) <= 0:
                raise InvalidParameter(f"ModelConfig.{name} must be positive")
        if self.future_len != FUTURE_LEN:
            raise InvalidParameter("future_len must equal tf / dt = 25")
        if self.sv_weights not in ("shared", "per_slot"):
            raise InvalidParameter("sv_weights must be 'shared' or 'per_slot'")
        if not SIGMA_MIN <= self.sigma_init <= SIGMA_MAX:
            raise InvalidParameter("sigma_init must lie within the sigma clip range")
        if self.output_anchor not in ("origin", "cv"):
            raise InvalidParameter("output_anchor must be 'origin' or 'cv'")


@dataclass(frozen=True)
class AblationConfig:
    """Which interaction channels are active and which input features feed the encoders."""

    channels: tuple[int, ...] = (1, 2, 3)
    positions: str = "pos+vel+acc"
    motion: str = "abs+rel"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(sorted(set(self.channels))))
        if 1 not in self.channels or not set(self.channels) <= {1, 2, 3}:
            raise InvalidParameter(f"channels must include 1 and be within 1-3: {self.channels}")
        if self.positions not in POSITION_SETS:
            raise InvalidParameter(f"unknown position feature set {self.positions!r}")
        if self.motion not in MOTION_SETS:
            raise InvalidParameter(f"unknown motion feature set {self.motion!r}")

    @property
    def feature_set(self) -> str:
        return f"{self.positions}/{self.motion}"

    @property
    def uses_neighbours(self) -> bool:
        return len(self.channels) > 1

    def ov_columns(self) -> list[int]:
        return list(range(2 * POSITION_SETS[self.positions]))

    def sv_columns(self) -> list[int]:
        cols = self.ov_columns()
        if self.motion == "abs+rel":
            cols = cols + [6 + c for c in cols]
        return cols


def all_feature_sets() -> list[AblationConfig]:
    return [AblationConfig(positions=p, motion=m) for p in POSITION_SETS for m in MOTION_SETS]


def all_channel_sets() -> list[AblationConfig]:
    return [AblationConfig(channels=c) for c in CHANNEL_SETS]


def config_fingerprint(*configs) -> str:
    doc = [asdict(c) for c in configs]
    text = json.dumps(doc, sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GaussianParams:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0 and abs(self.rho) < 1):
            raise InvalidParameter("sigma must be positive and |rho| < 1")

    def covariance(self) -> np.ndarray:
        sx, sy, r = self.sigma_x, self.sigma_y, self.rho
        return np.array([[sx * sx, r * sx * sy], [r * sx * sy, sy * sy]])


@dataclass(frozen=True)
class GaussianTrajectory:
    """Per-step bivariate Gaussians over the prediction horizon."""

    mu: np.ndarray  # (25, 2)
    sigma: np.ndarray  # (25, 2)
    rho: np.ndarray  # (25,)
    t0: float = 0.0
    dt: float = STEP

    @property
    def steps(self) -> list[GaussianParams]:
        return [
            GaussianParams(m[0], m[1], s[0], s[1], r)
            for m, s, r in zip(self.mu, self.sigma, self.rho)
        ]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(1, len(self.mu) + 1)

    def __len__(self):
        return len(self.mu)


@dataclass
class Batch:
    """Stacked model inputs for a list of samples."""

    ov: np.ndarray  # (B, 16, 6)
    sv: np.ndarray  # (B, 11, 16, 12)
    mask: np.ndarray  # (B, 11) bool
    origin: np.ndarray  # (B, 2)
    future: np.ndarray | None = None  # (B, 25, 2)

    def __len__(self):
        return len(self.ov)

    @classmethod
    def from_samples(cls, samples) -> "Batch":
        n = len(samples)
        ov = np.stack([s.ov_history for s in samples]) if n else np.zeros((0, HISTORY_LEN, 6))
        sv = np.zeros((n, len(SV_SLOTS), HISTORY_LEN, 12))
        mask = np.zeros((n, len(SV_SLOTS)), bool)
        for b, s in enumerate(samples):
            for k, slot in enumerate(SV_SLOTS):
                h = s.sv_histories.get(slot)
                if h is not None:
                    sv[b, k] = h
                    mask[b, k] = True
        origin = ov[:, -1, :2].copy()
        future = None
        if n and all(len(s.ov_future) == FUTURE_LEN for s in samples):
            future = np.stack([s.ov_future for s in samples])
        return cls(ov, sv, mask, origin, future)

    def subset(self, index) -> "Batch":
        fut = None if self.future is None else self.future[index]
        return Batch(self.ov[index], self.sv[index], self.mask[index], self.origin[index], fut)


@dataclass
class Forward:
    """Decoder outputs as graph tensors, plus intermediates used in tests."""

    mu: Tensor  # (B, 25, 2)
    sigma: Tensor  # (B, 25, 2)
    rho: Tensor  # (B, 25)
    context: Tensor
    extras: dict = field(default_factory=dict)

    def trajectories(self, t0s=None) -> list[GaussianTrajectory]:
        n = self.mu.shape[0]
        t0s = [0.0] * n if t0s is None else t0s
        return [
            GaussianTrajectory(self.mu.data[b], self.sigma.data[b], self.rho.data[b], t0s[b])
            for b in range(n)
        ]


def _glorot(rng, fan_in, fan_out, shape):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _bias(rng, fan_in, shape):
    lim = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


class Predictor:
    """The trajectory prediction network and its parameters."""

    def __init__(self, config: ModelConfig | None = None, ablation: AblationConfig | None = None):
        self.config = config or ModelConfig()
        self.ablation = ablation or AblationConfig()
        self.params: dict[str, Tensor] = {}
        self._init_params()

    # parameters

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _linear(self, rng, name, n_in, n_out):
        self._add(f"{name}.W", _glorot(rng, n_in, n_out, (n_in, n_out)))
        self._add(f"{name}.b", _bias(rng, n_in, (n_out,)))

    def _lstm(self, rng, name, n_in, hidden):
        self._add(f"{name}.W_ih", _glorot(rng, n_in, 4 * hidden, (n_in, 4 * hidden)))
        self._add(f"{name}.W_hh", _glorot(rng, hidden, 4 * hidden, (hidden, 4 * hidden)))
        self._add(f"{name}.b", _bias(rng, hidden, (4 * hidden,)))

    def _init_params(self):
        cfg, abl = self.config, self.ablation
        rng = np.random.default_rng(cfg.seed)
        n_ov, n_sv = len(abl.ov_columns()), len(abl.sv_columns())
        E, H = cfg.embed_dim, cfg.encoder_hidden
        self._linear(rng, "ov_emb", n_ov, E)
        self._lstm(rng, "ov_enc", E, H)
        self._linear(rng, "ch1", H, cfg.ch1_dim)
        if abl.uses_neighbours:
            names = ["sv"] if cfg.sv_weights == "shared" else [f"sv{k}" for k in range(len(SV_SLOTS))]
            for name in names:
                self._linear(rng, f"{name}_emb", n_sv, E)
                self._lstm(rng, f"{name}_enc", E, H)
        if 2 in abl.channels:
            F1, F2 = cfg.conv1_filters, cfg.conv2_filters
            self._add("conv1.W", _glorot(rng, H * 4, F1 * 4, (F1, H, 2, 2)))
            self._add("conv1.b", _bias(rng, H * 4, (F1,)))
            self._add("conv2.W", _glorot(rng, F1 * 2, F2 * 2, (F2, F1, 1, 2)))
            self._add("conv2.b", _bias(rng, F1 * 2, (F2,)))
        if 3 in abl.channels:
            G = cfg.gat_dim
            self._add("gat.W", _glorot(rng, H, G, (H, G)))
            self._add("gat.a", _glorot(rng, 2 * G, 1, (2 * G,)))
        self._lstm(rng, "dec", self.context_dim, cfg.decoder_hidden)
        self._linear(rng, "out", cfg.decoder_hidden, 5)
        self.params["out.b"].data[2:4] = math.log(cfg.sigma_init)

    @property
    def context_dim(self) -> int:
        cfg, ch = self.config, self.ablation.channels
        return (
            cfg.ch1_dim
            + (self.pool_rows * cfg.conv2_filters if 2 in ch else 0)
            + (cfg.gat_dim if 3 in ch else 0)
        )

    @property
    def pool_rows(self) -> int:
        return (3 - 2) // self.config.pool_stride + 1

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) - set(state)
        if missing:
            raise InvalidParameter(f"missing parameters {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=float)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {k}: incompatible shapes {arr.shape} and {p.shape}")
            p.data = arr.copy()

    def fingerprint(self) -> str:
        return config_fingerprint(self.config, self.ablation)

    # input preparation

    def _inputs(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        scale6 = np.array([cfg.pos_scale] * 2 + [cfg.vel_scale] * 2 + [cfg.acc_scale] * 2)
        origin6 = np.zeros((len(batch), 1, 6))
        origin6[:, 0, :2] = batch.origin
        ov = (batch.ov - origin6) / scale6
        sv_abs = (batch.sv[..., :6] - origin6[:, None]) / scale6
        sv_rel = batch.sv[..., 6:] / scale6
        sv = np.concatenate([sv_abs, sv_rel], axis=-1) * batch.mask[..., None, None]
        return ov[..., self.ablation.ov_columns()], sv[..., self.ablation.sv_columns()]

    # building blocks

    def _lstm_step(self, prefix: str, zx: Tensor, h: Tensor, c: Tensor, hidden: int):
        z = zx + h @ self.params[f"{prefix}.W_hh"]
        i = ad.sigmoid(z[:, :hidden])
        f = ad.sigmoid(z[:, hidden : 2 * hidden])
        g = ad.tanh(z[:, 2 * hidden : 3 * hidden])
        o = ad.sigmoid(z[:, 3 * hidden :])
        c = f * c + i * g
        return o * ad.tanh(c), c

    def _encode(self, prefix: str, x: np.ndarray):
        """Embedding + LSTM over a ``(N, T, F)`` history; returns final ``(h, c)``."""
        p, cfg = self.params, self.config
        x = np.asarray(x, dtype=float)
        if x.ndim != 3:
            raise ShapeError(f"encode: expected (N, T, F) history, got {x.shape}")
        n, steps, width = x.shape
        W = p[f"{prefix}_emb.W"]
        if width != W.shape[0]:
            raise ShapeError(f"encode: incompatible shapes {x.shape} and {W.shape}")
        hidden = cfg.encoder_hidden
        h = Tensor(np.zeros((n, hidden)))
        c = Tensor(np.zeros((n, hidden)))
        for t in range(steps):
            emb = ad.leaky_relu(x[:, t] @ W + p[f"{prefix}_emb.b"], cfg.leaky_slope)
            zx = emb @ p[f"{prefix}_enc.W_ih"] + p[f"{prefix}_enc.b"]
            h, c = self._lstm_step(f"{prefix}_enc", zx, h, c, hidden)
        return h, c

    def encode_vehicle(self, history, role: str = "ov", slot: int = 0):
        """Encoder state ``(h, c)`` for feature histories of shape ``(16, F)`` or ``(N, 16, F)``."""
        x = np.asarray(history, dtype=float)
        single = x.ndim == 2
        if single:
            x = x[None]
        if role == "ov":
            prefix = "ov"
        elif role == "sv":
            if not self.ablation.uses_neighbours:
                raise InvalidParameter("this configuration has no SV encoder")
            prefix = "sv" if self.config.sv_weights == "shared" else f"sv{slot}"
        else:
            raise InvalidParameter(f"unknown role {role!r}")
        h, c = self._encode(prefix, x)
        if single:
            return h[0], c[0]
        return h, c

    def _encode_svs(self, sv: np.ndarray) -> Tensor:
        n, k = sv.shape[:2]
        if self.config.sv_weights == "shared":
            h, _ = self._encode("sv", sv.reshape((n * k,) + sv.shape[2:]))
            return ad.reshape(h, (n, k, -1))
        hs = [self._encode(f"sv{j}", sv[:, j])[0] for j in range(k)]
        return ad.stack(hs, axis=1)

    def channel1(self, h_ov: Tensor) -> Tensor:
        p = self.params
        return ad.as_tensor(h_ov) @ p["ch1.W"] + p["ch1.b"]

    def assemble_social_tensor(self, h_ov: Tensor, h_sv: Tensor, mask: np.ndarray) -> Tensor:
        """Place encoder states into a ``(B, H, 4, 3)`` grid; empty cells are zero."""
        h_ov, h_sv = ad.as_tensor(h_ov), ad.as_tensor(h_sv)
        masked = h_sv * np.asarray(mask, float)[..., None]
        cells = []
        for r in range(4):
            for c in range(3):
                if (r, c) == OV_CELL:
                    cells.append(h_ov)
                else:
                    cells.append(masked[:, SV_SLOTS.index((r, c))])
        grid = ad.stack(cells, axis=-1)
        return ad.reshape(grid, grid.shape[:-1] + (4, 3))

    def conv_social_pool(self, social: Tensor) -> Tensor:
        p, cfg = self.params, self.config
        social = ad.as_tensor(social)
        if social.shape[-3:] != (cfg.encoder_hidden, 4, 3):
            raise ShapeError(
                f"conv_social_pool: incompatible shapes {social.shape} and "
                f"{(cfg.encoder_hidden, 4, 3)}"
            )
        h1 = ad.leaky_relu(ad.conv2d(social, p["conv1.W"], p["conv1.b"]), cfg.leaky_slope)
        h2 = ad.leaky_relu(ad.conv2d(h1, p["conv2.W"], p["conv2.b"]), cfg.leaky_slope)
        pooled = ad.maxpool2d(h2, (2, 1), (cfg.pool_stride, 1))
        lead = pooled.shape[:-3]
        return ad.reshape(pooled, lead + (-1,))

    def graph_attention(self, h_ov: Tensor, h_sv: Tensor, mask: np.ndarray):
        """Attention-pooled neighbour context; returns ``(c_ch3, alpha, scores)``."""
        p, cfg = self.params, self.config
        G = cfg.gat_dim
        wh_sv = ad.as_tensor(h_sv) @ p["gat.W"]  # (B, K, G)
        wh_ov = ad.as_tensor(h_ov) @ p["gat.W"]  # (B, G)
        a = p["gat.a"]
        score_sv = wh_sv @ a[:G]  # (B, K)
        score_ov = ad.reshape(wh_ov @ a[G:], (-1, 1))
        e = ad.leaky_relu(score_sv + score_ov, cfg.leaky_slope)
        alpha = ad.softmax(e, axis=-1, mask=mask)
        pooled = ad.sum_(wh_sv * ad.reshape(alpha, alpha.shape + (1,)), axis=1)
        return ad.tanh(pooled), alpha, e

    def fuse_context(self, parts) -> Tensor:
        return ad.concat(list(parts), axis=-1)

    def decode_future(self, context: Tensor, origin=None):
        """Unroll the decoder with ``context`` as input at every step.

        Returns ``(mu, sigma, rho)`` tensors of shapes ``(B, 25, 2)``,
        ``(B, 25, 2)`` and ``(B, 25)``; ``mu`` is offset by ``origin``.
        """
        p, cfg = self.params, self.config
        context = ad.as_tensor(context)
        n = context.shape[0]
        zx = context @ p["dec.W_ih"] + p["dec.b"]
        hidden = cfg.decoder_hidden
        h = Tensor(np.zeros((n, hidden)))
        c = Tensor(np.zeros((n, hidden)))
        hs = []
        for _ in range(cfg.future_len):
            h, c = self._lstm_step("dec", zx, h, c, hidden)
            hs.append(h)
        raw = ad.stack(hs, axis=1) @ p["out.W"] + p["out.b"]  # (B, 25, 5)
        return self.gaussian_head(raw, origin)

    def gaussian_head(self, raw: Tensor, origin=None):
        cfg = self.config
        mu = raw[..., 0:2] * (cfg.pos_scale if cfg.output_scale is None else cfg.output_scale)
        if origin is not None:
            origin = np.asarray(origin, float)
            mu = mu + (origin[:, None, :] if origin.ndim == 2 else origin)
        log_sigma = ad.clip(raw[..., 2:4], math.log(SIGMA_MIN), math.log(SIGMA_MAX))
        sigma = ad.exp(log_sigma)
        rho = ad.tanh(raw[..., 4]) * RHO_SCALE
        if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(sigma.data))):
            raise NumericalError("non-finite decoder output")
        return mu, sigma, rho

    # full model

    def forward(self, batch: Batch) -> Forward:
        ov_x, sv_x = self._inputs(batch)
        ch = self.ablation.channels
        h_ov, _ = self._encode("ov", ov_x)
        parts = [self.channel1(h_ov)]
        extras = {"h_ov": h_ov}
        if self.ablation.uses_neighbours:
            h_sv = self._encode_svs(sv_x)
            extras["h_sv"] = h_sv
            if 2 in ch:
                social = self.assemble_social_tensor(h_ov, h_sv, batch.mask)
                parts.append(self.conv_social_pool(social))
            if 3 in ch:
                c3, alpha, _ = self.graph_attention(h_ov, h_sv, batch.mask)
                parts.append(c3)
                extras["alpha"] = alpha
        context = self.fuse_context(parts)
        mu, sigma, rho = self.decode_future(context, self.anchor(batch))
        return Forward(mu, sigma, rho, context, extras)

    def anchor(self, batch: Batch) -> np.ndarray:
        """``(B, 25, 2)`` positions the decoder output is added to."""
        out = np.repeat(batch.origin[:, None, :], self.config.future_len, axis=1)
        if self.config.output_anchor == "cv":
            tau = STEP * np.arange(1, self.config.future_len + 1)
            out = out + batch.ov[:, -1, None, 2:4] * tau[None, :, None]
        return out

    def predict(self, sample: Sample) -> GaussianTrajectory:
        fwd = self.forward(Batch.from_samples([sample]))
        return fwd.trajectories([sample.t0])[0]

    def predict_many(self, samples, batch_size: int = 256) -> list[GaussianTrajectory]:
        out = []
        for k in range(0, len(samples), batch_size):
            chunk = samples[k : k + batch_size]
            fwd = self.forward(Batch.from_samples(chunk))
            out.extend(fwd.trajectories([s.t0 for s in chunk]))
        return out


def baseline_predict(sample: Sample, model: str = "cv", dt: float = STEP,
                     steps: int = FUTURE_LEN) -> np.ndarray:
    """Constant-velocity or constant-acceleration extrapolation from ``t0``."""
    if len(sample.ov_history) == 0:
        raise InvalidParameter("OV history is empty")
    x, y, vx, vy, ax, ay = sample.ov_history[-1]
    tau = dt * np.arange(1, steps + 1)
    if model == "cv":
        ax = ay = 0.0
    elif model != "ca":
        raise InvalidParameter(f"unknown baseline {model!r}")
    return np.column_stack([x + vx * tau + 0.5 * ax * tau**2, y + vy * tau + 0.5 * ay * tau**2])
