"""Deep concrete k-means: an MLP autoencoder regularizes a latent space in
which centroids and the encoder are trained jointly through the
straight-through assignment loss.  Training follows the two-phase recipe:
reconstruction-only pretraining, k-means++ centroid init in the pretrained
latent space, then the joint loop in which the decoder receives only
reconstruction gradients and the centroids only (weighted) clustering
gradients.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam, Node, Sgd, Tape, constant, parameter, zero_grad
from .concrete import (
    ConfigError,
    TemperatureSchedule,
    concrete_sample,
    gumbel_sample,
    hard_assign,
    rbf_log_probs,
    straight_through,
)
from .kmeans import InputError, kmeans_fit, kmeanspp_init

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Encoder layer widths; the decoder is the mirror image."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be >= 1 positive ints, got {self.widths}")

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]


@dataclass
class TrainConfig:
    k: int
    sigma: float = 1.0
    schedule: TemperatureSchedule | None = None   # None: floor at 50% of joint phase
    ckm_weight: float = 1.0                       # weight of the clustering loss
    pretrain_lr: float = 1e-3
    joint_lr: float = 1e-3
    batch_size: int = 256
    pretrain_epochs: int = 50
    joint_epochs: int = 100
    seed: int = 0
    anneal_per: str = "epoch"                     # "epoch" or "step"
    joint_optimizer: str = "adam"                 # "adam" or "sgd"

    def __post_init__(self):
        if self.k < 1 or self.sigma <= 0 or self.ckm_weight < 0 \
                or self.pretrain_lr <= 0 or self.joint_lr <= 0 \
                or self.batch_size < 1 or self.pretrain_epochs < 0 \
                or self.joint_epochs < 0:
            raise ConfigError(f"invalid train config: {self}")
        if self.anneal_per not in ("epoch", "step"):
            raise ConfigError(f"anneal_per must be 'epoch' or 'step', "
                              f"got {self.anneal_per!r}")
        if self.joint_optimizer not in ("adam", "sgd"):
            raise ConfigError(f"joint_optimizer must be 'adam' or 'sgd', "
                              f"got {self.joint_optimizer!r}")


class Autoencoder:
    """Fully connected encoder/decoder pair with relu hidden layers and linear
    output layers; parameters are persistent autodiff leaves."""

    def __init__(self, input_dim: int, spec: MlpSpec,
                 enc: list[tuple[Node, Node]], dec: list[tuple[Node, Node]]):
        self.input_dim = input_dim
        self.spec = spec
        self.enc = enc
        self.dec = dec

    @classmethod
    def initialize(cls, input_dim: int, spec: MlpSpec,
                   rng: np.random.Generator) -> "Autoencoder":
        enc_dims = (input_dim, *spec.widths)
        dec_dims = (spec.widths[-1], *spec.widths[-2::-1], input_dim)

        def he_layer(fan_in, fan_out):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            return parameter(w), parameter(np.zeros((1, fan_out)))

        enc = [he_layer(a, b) for a, b in zip(enc_dims, enc_dims[1:])]
        dec = [he_layer(a, b) for a, b in zip(dec_dims, dec_dims[1:])]
        return cls(input_dim, spec, enc, dec)

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def encoder_params(self) -> list[Node]:
        return [node for pair in self.enc for node in pair]

    def decoder_params(self) -> list[Node]:
        return [node for pair in self.dec for node in pair]

    def params(self) -> list[Node]:
        return self.encoder_params() + self.decoder_params()

    @staticmethod
    def _forward(layers: list[tuple[Node, Node]], x: Node) -> Node:
        out = x
        for i, (w, b) in enumerate(layers):
            out = out @ w + b
            if i < len(layers) - 1:
                out = out.relu()
        return out

    def encode(self, x: Node) -> Node:
        if x.value.shape[1] != self.input_dim:
            raise ConfigError(f"input dim {x.value.shape[1]} != {self.input_dim}")
        return self._forward(self.enc, x)

    def decode(self, z: Node) -> Node:
        if z.value.shape[1] != self.latent_dim:
            raise ConfigError(f"latent dim {z.value.shape[1]} != {self.latent_dim}")
        return self._forward(self.dec, z)

    def transform(self, X: np.ndarray, batch_size: int = 2048) -> np.ndarray:
        """Embed a full dataset (no gradient bookkeeping kept)."""
        X = np.asarray(X, dtype=np.float64)
        chunks = []
        for start in range(0, X.shape[0], batch_size):
            with Tape():
                chunks.append(self.encode(constant(X[start:start + batch_size])).value)
        return np.vstack(chunks)

    def copy(self) -> "Autoencoder":
        enc = [(parameter(w.value), parameter(b.value)) for w, b in self.enc]
        dec = [(parameter(w.value), parameter(b.value)) for w, b in self.dec]
        return Autoencoder(self.input_dim, self.spec, enc, dec)


def ae_loss(ae: Autoencoder, xb: Node) -> Node:
    """Batch reconstruction error: sum of squared l2 residuals."""
    return (xb - ae.decode(ae.encode(xb))).sq_frobenius()


def ckm_loss(ae: Autoencoder, xb: Node, m: Node, sigma: float, tau: float,
             rng: np.random.Generator, *, sample: bool = True,
             hard: bool = True) -> Node:
    """Latent clustering loss: sum_i ||z_i - h_i M||^2 with h_i the (relaxed or
    straight-through hardened) concrete assignment.  Gradients reach both the
    encoder and the centroids.

    ``sample=False`` zeroes the Gumbel noise and ``hard=False`` skips the
    straight-through rounding; together they give the deterministic soft
    relaxation used for descent sanity checks.
    """
    z = ae.encode(xb)
    log_probs = rbf_log_probs(z, m, sigma)
    n, k = log_probs.value.shape
    gumbel = gumbel_sample(n, k, rng) if sample else np.zeros((n, k))
    h = concrete_sample(log_probs, gumbel, tau)
    if hard:
        h = straight_through(h)
    return (z - h @ m).sq_frobenius()


@dataclass
class TrainResult:
    autoencoder: Autoencoder
    centroids: np.ndarray
    labels: np.ndarray
    history: dict[str, list[float]] = field(repr=False)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def pretrain(ae: Autoencoder, X: np.ndarray, cfg: TrainConfig,
             rng: np.random.Generator | None = None) -> list[float]:
    """Minibatch Adam on the reconstruction loss; returns per-epoch means."""
    X = np.asarray(X, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    batch_size = min(cfg.batch_size, X.shape[0])
    opt = Adam(lr=cfg.pretrain_lr)
    params = ae.params()
    history = []
    for _ in range(cfg.pretrain_epochs):
        epoch_loss = 0.0
        for batch in _batches(X.shape[0], batch_size, rng):
            zero_grad(params)
            with Tape() as tape:
                loss = ae_loss(ae, constant(X[batch]))
                tape.backward(loss)
            opt.step(params)
            epoch_loss += loss.value[0, 0]
        history.append(epoch_loss / X.shape[0])
    return history


def train_ckm(X: np.ndarray, spec: MlpSpec, cfg: TrainConfig,
              ae: Autoencoder | None = None) -> TrainResult:
    """Two-phase training: pretrain the autoencoder, seed centroids with
    k-means++ in the pretrained latent space, then jointly update encoder
    (both losses), decoder (reconstruction only), and centroids (weighted
    clustering loss only).  Passing a pretrained ``ae`` skips phase one; the
    model is copied, never mutated.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < cfg.k:
        raise InputError(f"need at least k={cfg.k} points, got {n}")
    rng = np.random.default_rng(cfg.seed)

    history: dict[str, list[float]] = {"pretrain_ae": [], "joint_ae": [], "joint_ckm": []}
    if ae is None:
        ae = Autoencoder.initialize(X.shape[1], spec, rng)
        history["pretrain_ae"] = pretrain(ae, X, cfg, rng)
    else:
        ae = ae.copy()

    m = parameter(kmeanspp_init(ae.transform(X), cfg.k, rng))
    params = ae.params() + [m]

    batch_size = min(cfg.batch_size, n)
    steps_per_epoch = (n + batch_size - 1) // batch_size
    if cfg.anneal_per == "epoch":
        total = max(1, cfg.joint_epochs)
    else:
        total = max(1, cfg.joint_epochs * steps_per_epoch)
    schedule = cfg.schedule or TemperatureSchedule.reach_floor_at(total)
    opt = Adam(lr=cfg.joint_lr) if cfg.joint_optimizer == "adam" else Sgd(cfg.joint_lr)

    step = 0
    for epoch in range(cfg.joint_epochs):
        tau = schedule.tau_at(epoch if cfg.anneal_per == "epoch" else step)
        ae_total = ckm_total = 0.0
        for batch in _batches(n, batch_size, rng):
            if cfg.anneal_per == "step":
                tau = schedule.tau_at(step)
            zero_grad(params)
            with Tape() as tape:
                xb = constant(X[batch])
                recon = ae_loss(ae, xb)
                cluster = ckm_loss(ae, xb, m, cfg.sigma, tau, rng)
                tape.backward(recon + cluster.scale(cfg.ckm_weight))
            opt.step(params)
            step += 1
            ae_total += recon.value[0, 0]
            ckm_total += cluster.value[0, 0]
        history["joint_ae"].append(ae_total / n)
        history["joint_ckm"].append(ckm_total / n)

    labels = hard_assign(ae.transform(X), m.value, cfg.sigma)
    return TrainResult(ae, m.value.copy(), labels, history)


def ae_km(X: np.ndarray, spec: MlpSpec, cfg: TrainConfig,
          ae: Autoencoder | None = None, restarts: int = 10) -> TrainResult:
    """Two-step baseline: embed with a (pre)trained autoencoder, then run
    best-of-``restarts`` classic k-means in the frozen latent space."""
    X = np.asarray(X, dtype=np.float64)
    history: dict[str, list[float]] = {"pretrain_ae": [], "joint_ae": [], "joint_ckm": []}
    if ae is None:
        rng = np.random.default_rng(cfg.seed)
        ae = Autoencoder.initialize(X.shape[1], spec, rng)
        history["pretrain_ae"] = pretrain(ae, X, cfg, rng)
    else:
        ae = ae.copy()
    result = kmeans_fit(ae.transform(X), cfg.k, seed=cfg.seed, restarts=restarts)
    return TrainResult(ae, result.centroids, result.labels, history)


def save_checkpoint(path, ae: Autoencoder, centroids: np.ndarray,
                    cfg: TrainConfig) -> None:
    """Single-file npz container: format version, architecture, config, and all
    parameter tensors.  Round-trip load reproduces identical hard assignments."""
    cfg_dict = asdict(cfg)
    cfg_dict["schedule"] = asdict(cfg.schedule) if cfg.schedule else None
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "input_dim": ae.input_dim,
        "widths": list(ae.spec.widths),
        "config": cfg_dict,
        "seed": cfg.seed,
    }
    arrays = {"centroids": np.asarray(centroids, dtype=np.float64)}
    for i, (w, b) in enumerate(ae.enc):
        arrays[f"enc_w{i}"], arrays[f"enc_b{i}"] = w.value, b.value
    for i, (w, b) in enumerate(ae.dec):
        arrays[f"dec_w{i}"], arrays[f"dec_b{i}"] = w.value, b.value
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[Autoencoder, np.ndarray, TrainConfig]:
    with np.load(path) as blob:
        meta = json.loads(str(blob["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint version {meta.get('format_version')}")
        spec = MlpSpec(tuple(meta["widths"]))
        cfg_dict = dict(meta["config"])
        sched = cfg_dict.pop("schedule", None)
        cfg = TrainConfig(**cfg_dict,
                          schedule=TemperatureSchedule(**sched) if sched else None)
        n_enc = len(spec.widths)
        enc = [(parameter(blob[f"enc_w{i}"]), parameter(blob[f"enc_b{i}"]))
               for i in range(n_enc)]
        dec = [(parameter(blob[f"dec_w{i}"]), parameter(blob[f"dec_b{i}"]))
               for i in range(n_enc)]
        ae = Autoencoder(meta["input_dim"], spec, enc, dec)
        centroids = blob["centroids"].copy()
    return ae, centroids, cfg
