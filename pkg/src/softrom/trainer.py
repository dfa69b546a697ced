"""Autoencoder training: Adam with post-step non-negativity projection.

The objective is the mass-weighted reconstruction loss over mini-batches,
(1/|B|) sum_i || f(g(u_i)) - u_i ||_M^2. After every optimizer step the
convex-stage z-weights are clamped at zero so the architectural convexity
guarantee holds at all times.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convexnet import icnn_backprop, icnn_forward, init_icnn, project_nonneg
from .decoder import (
    FullspaceConvexModel,
    MlpParams,
    SymmetricConvexModel,
    VanillaModel,
    init_from_pca,
    init_mlp,
    init_vanilla_from_pca,
    mlp_backprop,
    mlp_forward,
    save_checkpoint,
)
from .mesh import LumpedMass
from .subspace import compute_pca


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "convex_symmetric"  # convex_symmetric | vanilla | convex_fullspace
    k: int = 5
    r: int = 10
    epochs: int = 50000
    learning_rate: float = 1e-4
    batch_size: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1000
    pca_init: bool = True
    icnn_hidden: list[int] = field(default_factory=lambda: [64, 64])
    encoder_hidden: list[int] = field(default_factory=lambda: [128, 128])
    mlp_hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "softplus"
    softplus_beta: float = 10.0
    # standard (non-PCA) init: initial decoder response as a fraction of the
    # data scale; small values let training grow the last linear map out of
    # smooth data residuals
    init_response_fraction: float = 0.03

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise TrainError("epochs, learning rate, and batch size must be positive")


@dataclass
class LossReport:
    epoch: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    wall_ms: np.ndarray
    aborted_at: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "grad_norm", "wall_ms"])
            for row in zip(self.epoch, self.loss, self.grad_norm, self.wall_ms):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), f"{row[3]:.3f}"])


class Adam:
    """Standard Adam over a dict of named parameter arrays (updated in place)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for n, p in self.params.items():
            g = grads[n]
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# loss

def recon_loss(model, batch: np.ndarray, mass: LumpedMass) -> float:
    """(1/|B|) sum ||f(g(u)) - u||_M^2 over the columns of batch."""
    if batch.ndim == 1:
        batch = batch[:, None]
    if batch.shape[1] == 0:
        raise TrainError("empty batch")
    q = model.encode(batch)
    resid = model.decode(q) - batch
    return float(np.sum(mass.diag[:, None] * resid * resid) / batch.shape[1])


def loss_and_grads(model, batch: np.ndarray, mass: LumpedMass):
    if batch.ndim == 1:
        batch = batch[:, None]
    nb = batch.shape[1]
    q = model.encode(batch)
    resid = model.decode(q) - batch
    loss = float(np.sum(mass.diag[:, None] * resid * resid) / nb)
    d_u = (2.0 / nb) * mass.diag[:, None] * resid
    dec_grads, dq = model.decoder_backprop(q, d_u)
    from .decoder import encoder_backprop

    enc_grads = encoder_backprop(model.enc, batch, dq)
    return loss, {**dec_grads, **enc_grads}


# ---------------------------------------------------------------------------
# model construction + training loop

def build_model(config: TrainConfig, snapshots, mass: LumpedMass,
                rng: np.random.Generator):
    U = snapshots.U if hasattr(snapshots, "U") else np.asarray(snapshots)
    n = U.shape[0]
    rank_needed = config.r if config.pca_init else min(U.shape)
    basis = compute_pca(U, mass, min(rank_needed, min(U.shape)))
    if config.model == "convex_symmetric":
        enc, dec = init_from_pca(basis, mass, config.k, config.r,
                                 icnn_hidden=config.icnn_hidden,
                                 encoder_hidden=config.encoder_hidden, rng=rng,
                                 activation=config.activation, beta=config.softplus_beta,
                                 pca_init=config.pca_init, snapshots=U,
                                 init_response_fraction=config.init_response_fraction)
        return SymmetricConvexModel(enc, dec)
    if config.model == "vanilla":
        enc, dec = init_vanilla_from_pca(basis, mass, config.k, config.r,
                                         mlp_hidden=config.mlp_hidden,
                                         encoder_hidden=config.encoder_hidden, rng=rng,
                                         pca_init=config.pca_init, snapshots=U,
                                         init_response_fraction=config.init_response_fraction)
        return VanillaModel(enc, dec)
    if config.model == "convex_fullspace":
        # convexity straight to full space: the non-negativity constraints
        # reach the output layer, so the decoder cannot be PCA-initialized;
        # the encoder still is, to keep the comparison about the decoder
        convex = init_icnn(rng, config.k, config.icnn_hidden, n,
                           activation=config.activation, beta=config.softplus_beta,
                           wz_scale=0.5)
        enc, _ = init_from_pca(basis, mass, config.k, config.k,
                               icnn_hidden=[4], encoder_hidden=config.encoder_hidden,
                               rng=rng, pca_init=config.pca_init and basis.rank >= config.k,
                               snapshots=U)
        return FullspaceConvexModel(enc, convex)
    raise TrainError(f"unknown model kind {config.model!r}")


def train(config: TrainConfig, snapshots, mass: LumpedMass, init=None,
          out_dir=None, log_every: int = 0):
    """Returns (model, LossReport). Deterministic for a given seed."""
    U = snapshots.U if hasattr(snapshots, "U") else np.asarray(snapshots)
    rng = np.random.default_rng(config.seed)
    model = init if init is not None else build_model(config, snapshots, mass, rng)
    params = dict(model.param_items())
    if not params:
        raise TrainError(f"model kind {model.kind!r} has no trainable parameters")
    opt = Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2,
               config.adam_eps)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    s = U.shape[1]
    bs = min(config.batch_size, s)
    ep_idx, ep_loss, ep_gnorm, ep_wall = [], [], [], []
    best = (np.inf, None)
    last_good = None
    aborted_at = None
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(s)
        losses = []
        gnorm = 0.0
        nan_hit = False
        for start in range(0, s, bs):
            batch = U[:, order[start : start + bs]]
            loss, grads = loss_and_grads(model, batch, mass)
            if not np.isfinite(loss):
                nan_hit = True
                break
            opt.step(grads)
            for icnn in model.icnn_params():
                project_nonneg(icnn)
            losses.append(loss)
            gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if nan_hit:
            aborted_at = epoch
            if last_good is not None:
                for n, p in params.items():
                    p[...] = last_good[n]
            break
        mean_loss = float(np.mean(losses))
        ep_idx.append(epoch)
        ep_loss.append(mean_loss)
        ep_gnorm.append(gnorm)
        ep_wall.append((time.perf_counter() - t0) * 1000.0)
        if mean_loss < best[0]:
            best = (mean_loss, {n: p.copy() for n, p in params.items()})
        if (epoch + 1) % config.checkpoint_every == 0 or epoch == config.epochs - 1:
            for icnn in model.icnn_params():
                icnn.validate()  # constraints must survive every optimizer step
            last_good = {n: p.copy() for n, p in params.items()}
            if out_dir is not None:
                save_checkpoint(out_dir / f"epoch{epoch + 1:07d}.ckpt", model,
                                meta={"epoch": epoch + 1, "loss": mean_loss})
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: loss {mean_loss:.6e}")
    report = LossReport(epoch=np.array(ep_idx), loss=np.array(ep_loss),
                        grad_norm=np.array(ep_gnorm), wall_ms=np.array(ep_wall),
                        aborted_at=aborted_at)
    if out_dir is not None:
        report.to_csv(out_dir / "loss.csv")
        if best[1] is not None:
            final = {n: p.copy() for n, p in params.items()}
            for n, p in params.items():
                p[...] = best[1][n]
            save_checkpoint(out_dir / "best.ckpt", model, meta={"loss": best[0]})
            for n, p in params.items():
                p[...] = final[n]
        save_checkpoint(out_dir / "final.ckpt", model, meta={"epochs": config.epochs})
    return model, report


# ---------------------------------------------------------------------------
# 2-d didactic fit: z = x^2 + y^2 on a disk, evaluated on the annulus outside

@dataclass
class Didactic2DResult:
    kind: str
    params: object
    rmse_inside: float
    rmse_annulus: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        """X is (2, B); returns (B,)."""
        if self.kind == "icnn":
            return icnn_forward(self.params, X)[0]
        return mlp_forward(self.params, X)[0]


def _disk_samples(rng, n, r_inner, r_outer):
    # area-uniform radius, uniform angle
    rr = np.sqrt(rng.uniform(r_inner**2, r_outer**2, n))
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([rr * np.cos(th), rr * np.sin(th)])


def fit_didactic_2d(kind: str, seed: int = 0, epochs: int = 4000,
                    n_samples: int = 1500, lr: float = 1e-2):
    """Train a scalar model on z = x^2 + y^2 sampled in the radius-2 disk and
    report RMSE inside the disk and on the radius [2, 4] annulus."""
    if kind not in ("icnn", "mlp"):
        raise TrainError(f"didactic model kind must be icnn or mlp, got {kind!r}")
    rng = np.random.default_rng(seed)
    X = _disk_samples(rng, n_samples, 0.0, 2.0)
    z = (X**2).sum(axis=0)

    if kind == "icnn":
        net = init_icnn(rng, 2, [64, 64], 1, activation="softplus", beta=1.0, wz_scale=1.0)
        params = dict(net.param_items())

        def forward(Q):
            return icnn_forward(net, Q)[0]

        def backward(Q, up):
            grads, _ = icnn_backprop(net, Q, up[None, :])
            return dict(grads.items())

        def project():
            project_nonneg(net)
    else:
        net = init_mlp(rng, [2, 64, 64, 1], activation="tanh")
        params = dict(net.param_items("mlp"))

        def forward(Q):
            return mlp_forward(net, Q)[0]

        def backward(Q, up):
            mg, _ = mlp_backprop(net, Q, up[None, :])
            return {f"mlp.{i}.{key}": g[key] for i, g in enumerate(mg) for key in ("W", "b")}

        def project():
            pass

    opt = Adam(params, lr)
    nb = X.shape[1]
    for _ in range(epochs):
        pred = forward(X)
        up = 2.0 * (pred - z) / nb
        opt.step(backward(X, up))
        project()

    X_in = _disk_samples(rng, 2000, 0.0, 2.0)
    X_out = _disk_samples(rng, 2000, 2.0, 4.0)
    rmse_in = float(np.sqrt(np.mean((forward(X_in) - (X_in**2).sum(axis=0)) ** 2)))
    rmse_out = float(np.sqrt(np.mean((forward(X_out) - (X_out**2).sum(axis=0)) ** 2)))
    return Didactic2DResult(kind=kind, params=net, rmse_inside=rmse_in, rmse_annulus=rmse_out)
