"""Displacement decoders and the encoder.

The main decoder maps latent q through a convex stage into an intermediate
space of dimension r (k < r << N), forms the odd difference of the convex
stage at q and -q, and applies a sign-unconstrained linear map W back to full
space:

    u = W (f_c(q) - f_c(-q))

so decode(-q) = -decode(q) bit for bit and decode(0) = 0 exactly. W can be
initialized from a mass-weighted PCA basis (halved, since the odd difference
doubles the linear response near the origin).

Also here: the encoder (a linear projection plus a small nonlinear
correction), the unconstrained vanilla decoder baseline, and the
direct-to-full-space convex ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import convexnet
from .convexnet import IcnnParams, icnn_backprop, icnn_forward, icnn_jacobian, init_icnn
from .mesh import LumpedMass
from .storage import load_bundle, save_bundle
from .subspace import PcaBasis


class DecoderError(ValueError):
    pass


# ---------------------------------------------------------------------------
# small plain MLP (encoder correction, vanilla decoder stage)

def _tanh(x):
    return np.tanh(x)


def _tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _softplus1(x):
    return np.logaddexp(0.0, x)


def _softplus1_grad(x):
    from scipy.special import expit

    return expit(x)


_MLP_ACTS = {"tanh": (_tanh, _tanh_grad), "softplus": (_softplus1, _softplus1_grad)}


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray


@dataclass
class MlpParams:
    layers: list[DenseLayer]
    activation: str = "tanh"

    def param_items(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, l in enumerate(self.layers):
            out.append((f"{prefix}.{i}.W", l.W))
            out.append((f"{prefix}.{i}.b", l.b))
        return out


def init_mlp(rng: np.random.Generator, dims: list[int], activation: str = "tanh",
             last_zero: bool = False) -> MlpParams:
    layers = []
    for i in range(len(dims) - 1):
        W = rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i])
        if last_zero and i == len(dims) - 2:
            W = np.zeros_like(W)
        layers.append(DenseLayer(W=W, b=np.zeros(dims[i + 1])))
    return MlpParams(layers=layers, activation=activation)


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    act, _ = _MLP_ACTS[p.activation]
    h = x
    for i, l in enumerate(p.layers):
        pre = l.W @ h + (l.b if h.ndim == 1 else l.b[:, None])
        h = pre if i == len(p.layers) - 1 else act(pre)
    return h


def mlp_jacobian(p: MlpParams, x: np.ndarray) -> np.ndarray:
    act, gact = _MLP_ACTS[p.activation]
    h, J = x, np.eye(x.shape[0])
    for i, l in enumerate(p.layers):
        pre = l.W @ h + l.b
        J = l.W @ J
        if i < len(p.layers) - 1:
            J = gact(pre)[:, None] * J
            h = act(pre)
    return J


def mlp_backprop(p: MlpParams, x: np.ndarray, upstream: np.ndarray):
    """Gradients of <upstream, mlp(x)>; returns (per-layer grads list, dx)."""
    act, gact = _MLP_ACTS[p.activation]
    hs, pres = [x], []
    h = x
    for i, l in enumerate(p.layers):
        pre = l.W @ h + (l.b if h.ndim == 1 else l.b[:, None])
        pres.append(pre)
        h = pre if i == len(p.layers) - 1 else act(pre)
        hs.append(h)
    grads = [None] * len(p.layers)
    delta = upstream
    for i in range(len(p.layers) - 1, -1, -1):
        dpre = delta if i == len(p.layers) - 1 else delta * gact(pres[i])
        if x.ndim == 1:
            grads[i] = {"W": np.outer(dpre, hs[i]), "b": dpre.copy()}
        else:
            grads[i] = {"W": dpre @ hs[i].T, "b": dpre.sum(axis=1)}
        delta = p.layers[i].W.T @ dpre
    return grads, delta


# ---------------------------------------------------------------------------
# parameter structs

@dataclass
class DecoderParams:
    """Symmetric convex decoder: odd difference of a convex stage, then W."""

    convex: IcnnParams  # k -> r
    W: np.ndarray       # (N, r), sign-unconstrained

    @property
    def k(self) -> int:
        return self.convex.input_dim

    @property
    def r(self) -> int:
        return self.convex.output_dim

    @property
    def n_dofs(self) -> int:
        return self.W.shape[0]

    def validate(self) -> None:
        self.convex.validate()
        if self.W.shape[1] != self.r:
            raise DecoderError("W columns must match the convex stage output dim")
        if self.r < self.k:
            raise DecoderError(f"need r >= k, got k={self.k}, r={self.r}")

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [("dec.W", self.W)] + self.convex.param_items("dec.icnn")


@dataclass
class EncoderParams:
    """Mass-weighted linear projection plus a small nonlinear correction.

    encode(u) = P u + C(P u); initializing the correction's last layer at
    zero makes the initial encoder exactly the projection.
    """

    proj: np.ndarray  # (k, N)
    mlp: MlpParams    # k -> hidden -> k

    @property
    def k(self) -> int:
        return self.proj.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.proj.shape[1]

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [("enc.proj", self.proj)] + self.mlp.param_items("enc.mlp")


@dataclass
class VanillaDecoderParams:
    """Unconstrained baseline: plain MLP into r, then the linear map W."""

    mlp: MlpParams   # k -> hidden -> r, softplus (asymptotically linear growth,
                     # same growth class as the convex stage)
    W: np.ndarray    # (N, r)

    @property
    def k(self) -> int:
        return self.mlp.layers[0].W.shape[1]

    @property
    def r(self) -> int:
        return self.mlp.layers[-1].W.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.W.shape[0]

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [("dec.W", self.W)] + self.mlp.param_items("dec.mlp")


# ---------------------------------------------------------------------------
# spec operations

def decode(dec: DecoderParams, q: np.ndarray) -> np.ndarray:
    """u = W (f_c(q) - f_c(-q)); odd by construction, 0 at the origin."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != dec.k:
        raise DecoderError(f"latent size {q.shape[0]} != k={dec.k}")
    z = icnn_forward(dec.convex, q) - icnn_forward(dec.convex, -q)
    return dec.W @ z


def decode_jacobian(dec: DecoderParams, q: np.ndarray) -> np.ndarray:
    """J(q) = W (J_c(q) + J_c(-q)); an even function of q."""
    jc = icnn_jacobian(dec.convex, q) + icnn_jacobian(dec.convex, -q)
    return dec.W @ jc


def decode_rows(dec: DecoderParams, q: np.ndarray, vertices: np.ndarray):
    """Displacements and Jacobian rows for the given vertices only."""
    rows = (3 * np.asarray(vertices, dtype=np.int64)[:, None] + np.arange(3)).reshape(-1)
    za = icnn_forward(dec.convex, q)
    zb = icnn_forward(dec.convex, -q)
    jc = icnn_jacobian(dec.convex, q) + icnn_jacobian(dec.convex, -q)
    Wr = dec.W[rows]
    return Wr @ (za - zb), Wr @ jc


def decoder_backprop(dec: DecoderParams, q: np.ndarray, d_u: np.ndarray):
    """Gradients of <d_u, decode(q)> w.r.t. all decoder tensors and q."""
    za = icnn_forward(dec.convex, q)
    zb = icnn_forward(dec.convex, -q)
    s = dec.W.T @ d_u
    if q.ndim == 1:
        dW = np.outer(d_u, za - zb)
    else:
        dW = d_u @ (za - zb).T
    ga, din_a = icnn_backprop(dec.convex, q, s)
    gb, din_b = icnn_backprop(dec.convex, -q, -s)
    ga.add(gb)
    grads = {"dec.W": dW}
    grads.update(dict(ga.items("dec.icnn")))
    return grads, din_a - din_b


def encode(enc: EncoderParams, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != enc.n_dofs:
        raise DecoderError(f"input size {u.shape[0]} != N={enc.n_dofs}")
    y = enc.proj @ u
    return y + mlp_forward(enc.mlp, y)


def encoder_backprop(enc: EncoderParams, u: np.ndarray, d_q: np.ndarray):
    y = enc.proj @ u
    mgrads, dy_mlp = mlp_backprop(enc.mlp, y, d_q)
    dy = d_q + dy_mlp
    dproj = np.outer(dy, u) if u.ndim == 1 else dy @ u.T
    grads = {"enc.proj": dproj}
    for i, g in enumerate(mgrads):
        grads[f"enc.mlp.{i}.W"] = g["W"]
        grads[f"enc.mlp.{i}.b"] = g["b"]
    return grads


def decode_vanilla(params: VanillaDecoderParams, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != params.k:
        raise DecoderError(f"latent size {q.shape[0]} != k={params.k}")
    return params.W @ mlp_forward(params.mlp, q)


def vanilla_jacobian(params: VanillaDecoderParams, q: np.ndarray) -> np.ndarray:
    return params.W @ mlp_jacobian(params.mlp, q)


def vanilla_backprop(params: VanillaDecoderParams, q: np.ndarray, d_u: np.ndarray):
    z = mlp_forward(params.mlp, q)
    s = params.W.T @ d_u
    dW = np.outer(d_u, z) if q.ndim == 1 else d_u @ z.T
    mgrads, dq = mlp_backprop(params.mlp, q, s)
    grads = {"dec.W": dW}
    for i, g in enumerate(mgrads):
        grads[f"dec.mlp.{i}.W"] = g["W"]
        grads[f"dec.mlp.{i}.b"] = g["b"]
    return grads, dq


# ---------------------------------------------------------------------------
# initialization

def _match_output_scale(decode_fn, scaled: list[np.ndarray], k: int,
                        mass: LumpedMass, snapshots: np.ndarray | None,
                        fraction: float = 0.1) -> None:
    """Scale the given parameter arrays (in place) so decoding a unit latent
    draw lands at a small fraction of the data's displacement scale.

    The standard-init twin of the latent standardization. Starting the final
    linear map deliberately small lets training grow its columns out of data
    residuals (rank-limited, spatially smooth directions) instead of leaving
    white-noise columns in the decoded field."""
    if snapshots is None or snapshots.size == 0:
        return
    target = fraction * float(np.median([np.sqrt(u @ (mass.diag * u)) for u in snapshots.T]))
    rng = np.random.default_rng(12345)
    resp = []
    for _ in range(16):
        u = decode_fn(rng.standard_normal(k))
        resp.append(np.sqrt(u @ (mass.diag * u)))
    c = float(np.median(resp))
    if c > 0 and target > 0:
        for arr in scaled:
            arr *= target / c


def _code_scales(proj: np.ndarray, snapshots: np.ndarray | None) -> np.ndarray:
    """Per-dimension std of the initial projection codes over the snapshot
    set; used to standardize the latent space so noise magnitudes mean the
    same thing for every model."""
    k = proj.shape[0]
    if snapshots is None:
        return np.ones(k)
    codes = proj @ snapshots
    s = codes.std(axis=1)
    return np.maximum(s, 1e-8 * max(float(s.max()), 1e-30) + 1e-300)


def init_from_pca(basis: PcaBasis, mass: LumpedMass, k: int, r: int,
                  icnn_hidden: list[int] | None = None,
                  encoder_hidden: list[int] | None = None,
                  rng: np.random.Generator | None = None,
                  activation: str = "softplus", beta: float = 10.0,
                  pca_init: bool = True,
                  snapshots: np.ndarray | None = None,
                  init_response_fraction: float = 0.03) -> tuple[EncoderParams, DecoderParams]:
    """Build an encoder/decoder pair; with pca_init the last linear map is
    half the rank-r basis and the convex stage starts near-linear, so the
    initial model reproduces the rank-k linear model up to small corrections.

    When snapshots are given the latent space is standardized: the encoder
    projection is scaled so training codes start with unit variance, and the
    decoder absorbs the inverse scale.
    """
    rng = rng or np.random.default_rng(0)
    icnn_hidden = icnn_hidden if icnn_hidden is not None else [64, 64]
    encoder_hidden = encoder_hidden if encoder_hidden is not None else [128, 128]
    if r < k:
        raise DecoderError(f"need r >= k, got k={k}, r={r}")

    if pca_init:
        if basis.rank < r:
            raise DecoderError(f"basis rank {basis.rank} < r={r}")
        B_r = basis.B[:, :r]
        proj = np.ascontiguousarray(basis.B[:, :k].T * mass.diag[None, :])
        s = _code_scales(proj, snapshots)
        proj /= s[:, None]
        wq_last = np.vstack([np.diag(s), 0.01 * rng.standard_normal((r - k, k))])
        convex = init_icnn(rng, k, icnn_hidden, r, activation=activation, beta=beta,
                           wz_scale=0.01, wq_last=wq_last)
        W = np.ascontiguousarray(0.5 * B_r)
    else:
        # same near-linear convex stage as the data-driven path; standard
        # here means only that no basis seeds the linear maps
        n = basis.n_dofs
        convex = init_icnn(rng, k, icnn_hidden, r, activation=activation, beta=beta,
                           wz_scale=0.01)
        W = rng.standard_normal((n, r)) / np.sqrt(r)
        proj = rng.standard_normal((k, n)) / np.sqrt(n)
        proj /= _code_scales(proj, snapshots)[:, None]
        tmp = DecoderParams(convex=convex, W=W)
        _match_output_scale(lambda q: decode(tmp, q), [W], k, mass, snapshots,
                            fraction=init_response_fraction)

    mlp = init_mlp(rng, [k] + encoder_hidden + [k], activation="tanh", last_zero=True)
    enc = EncoderParams(proj=proj, mlp=mlp)
    dec = DecoderParams(convex=convex, W=W)
    dec.validate()
    return enc, dec


def init_vanilla_from_pca(basis: PcaBasis, mass: LumpedMass, k: int, r: int,
                          mlp_hidden: list[int] | None = None,
                          encoder_hidden: list[int] | None = None,
                          rng: np.random.Generator | None = None,
                          pca_init: bool = True,
                          snapshots: np.ndarray | None = None,
                          init_response_fraction: float = 0.03,
                          ) -> tuple[EncoderParams, VanillaDecoderParams]:
    """Baseline with the same staged structure and PCA-initialized last layer,
    but an unconstrained nonlinear stage. Latent standardization as in
    init_from_pca."""
    rng = rng or np.random.default_rng(0)
    mlp_hidden = mlp_hidden if mlp_hidden is not None else [64, 64]
    encoder_hidden = encoder_hidden if encoder_hidden is not None else [128, 128]
    if pca_init:
        if basis.rank < r:
            raise DecoderError(f"basis rank {basis.rank} < r={r}")
        W = np.ascontiguousarray(basis.B[:, :r])
        proj = np.ascontiguousarray(basis.B[:, :k].T * mass.diag[None, :])
    else:
        n = basis.n_dofs
        W = rng.standard_normal((n, r)) / np.sqrt(r)
        proj = rng.standard_normal((k, n)) / np.sqrt(n)
    proj /= _code_scales(proj, snapshots)[:, None]
    dec_mlp = init_mlp(rng, [k] + mlp_hidden + [r], activation="softplus")
    if not pca_init:
        tmp = VanillaDecoderParams(mlp=dec_mlp, W=W)
        _match_output_scale(lambda q: decode_vanilla(tmp, q), [W], k, mass, snapshots,
                            fraction=init_response_fraction)
    enc_mlp = init_mlp(rng, [k] + encoder_hidden + [k], activation="tanh", last_zero=True)
    return (EncoderParams(proj=proj, mlp=enc_mlp),
            VanillaDecoderParams(mlp=dec_mlp, W=W))


# ---------------------------------------------------------------------------
# uniform model wrappers used by the reduced solver and trainer

class SymmetricConvexModel:
    kind = "convex_symmetric"

    def __init__(self, enc: EncoderParams | None, dec: DecoderParams):
        self.enc = enc
        self.dec = dec

    @property
    def k(self):
        return self.dec.k

    @property
    def n_dofs(self):
        return self.dec.n_dofs

    def decode(self, q):
        return decode(self.dec, q)

    def jacobian(self, q):
        return decode_jacobian(self.dec, q)

    def jacobian_rows(self, q, rows):
        jc = icnn_jacobian(self.dec.convex, q) + icnn_jacobian(self.dec.convex, -q)
        return self.dec.W[rows] @ jc

    def encode(self, u):
        return encode(self.enc, u)

    def decoder_backprop(self, q, d_u):
        return decoder_backprop(self.dec, q, d_u)

    def param_items(self):
        items = self.dec.param_items()
        if self.enc is not None:
            items += self.enc.param_items()
        return items

    def icnn_params(self):
        return [self.dec.convex]


class VanillaModel:
    kind = "vanilla"

    def __init__(self, enc: EncoderParams | None, dec: VanillaDecoderParams):
        self.enc = enc
        self.dec = dec

    @property
    def k(self):
        return self.dec.k

    @property
    def n_dofs(self):
        return self.dec.n_dofs

    def decode(self, q):
        return decode_vanilla(self.dec, q)

    def jacobian(self, q):
        return vanilla_jacobian(self.dec, q)

    def jacobian_rows(self, q, rows):
        return self.dec.W[rows] @ mlp_jacobian(self.dec.mlp, q)

    def encode(self, u):
        return encode(self.enc, u)

    def decoder_backprop(self, q, d_u):
        return vanilla_backprop(self.dec, q, d_u)

    def param_items(self):
        items = self.dec.param_items()
        if self.enc is not None:
            items += self.enc.param_items()
        return items

    def icnn_params(self):
        return []


class LinearModel:
    kind = "linear"

    def __init__(self, basis: PcaBasis, mass: LumpedMass):
        self.basis = basis
        self.mass = mass

    @property
    def k(self):
        return self.basis.k

    @property
    def n_dofs(self):
        return self.basis.n_dofs

    def decode(self, q):
        return self.basis.B @ q

    def jacobian(self, q):
        return self.basis.B

    def jacobian_rows(self, q, rows):
        return self.basis.B[rows]

    def encode(self, u):
        return self.basis.B.T @ (self.mass.diag * u.T).T if u.ndim > 1 \
            else self.basis.B.T @ (self.mass.diag * u)

    def param_items(self):
        return []

    def icnn_params(self):
        return []


class FullspaceConvexModel:
    """Ablation: the convex stage maps straight to full space (odd difference,
    no trailing linear map, so no PCA initialization is possible)."""

    kind = "convex_fullspace"

    def __init__(self, enc: EncoderParams | None, convex: IcnnParams):
        self.enc = enc
        self.convex = convex

    @property
    def k(self):
        return self.convex.input_dim

    @property
    def n_dofs(self):
        return self.convex.output_dim

    def decode(self, q):
        return icnn_forward(self.convex, q) - icnn_forward(self.convex, -q)

    def jacobian(self, q):
        return icnn_jacobian(self.convex, q) + icnn_jacobian(self.convex, -q)

    def jacobian_rows(self, q, rows):
        return self.jacobian(q)[rows]

    def encode(self, u):
        return encode(self.enc, u)

    def decoder_backprop(self, q, d_u):
        ga, din_a = icnn_backprop(self.convex, q, d_u)
        gb, din_b = icnn_backprop(self.convex, -q, -d_u)
        ga.add(gb)
        return dict(ga.items("dec.icnn")), din_a - din_b

    def param_items(self):
        items = self.convex.param_items("dec.icnn")
        if self.enc is not None:
            items += self.enc.param_items()
        return items

    def icnn_params(self):
        return [self.convex]


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def _mlp_meta(m: MlpParams):
    return {"activation": m.activation, "dims": [m.layers[0].W.shape[1]] + [l.W.shape[0] for l in m.layers]}


def _icnn_meta(p: IcnnParams):
    return {"activation": p.activation, "beta": p.beta,
            "widths": [p.input_dim] + p.widths}


def save_checkpoint(path, model, meta: dict | None = None) -> None:
    arrays = {name: arr for name, arr in model.param_items()}
    info = {"kind": "checkpoint", "version": CHECKPOINT_VERSION, "model": model.kind}
    if model.kind == "linear":
        arrays["basis.B"] = model.basis.B
        arrays["basis.sv"] = model.basis.singular_values
        arrays["mass.diag"] = model.mass.diag
        info["basis_rank"] = model.basis.rank
    else:
        if model.enc is not None:
            info["encoder"] = _mlp_meta(model.enc.mlp)
        if model.kind == "convex_symmetric":
            info["icnn"] = _icnn_meta(model.dec.convex)
        elif model.kind == "convex_fullspace":
            info["icnn"] = _icnn_meta(model.convex)
        elif model.kind == "vanilla":
            info["mlp"] = _mlp_meta(model.dec.mlp)
    info.update(meta or {})
    save_bundle(path, arrays, info)


def _rebuild_icnn(arrays, meta, prefix):
    widths = meta["widths"]
    layers = []
    for i in range(len(widths) - 1):
        Wq = arrays[f"{prefix}.{i}.Wq"]
        Wz = arrays.get(f"{prefix}.{i}.Wz")
        b = arrays[f"{prefix}.{i}.b"]
        layers.append(convexnet.IcnnLayer(Wq=Wq, Wz=Wz, b=b))
    return IcnnParams(layers=layers, activation=meta["activation"], beta=meta["beta"])


def _rebuild_mlp(arrays, meta, prefix):
    dims = meta["dims"]
    layers = [DenseLayer(W=arrays[f"{prefix}.{i}.W"], b=arrays[f"{prefix}.{i}.b"])
              for i in range(len(dims) - 1)]
    return MlpParams(layers=layers, activation=meta["activation"])


def load_checkpoint(path):
    """Returns (model, meta)."""
    arrays, meta = load_bundle(path)
    if meta.get("kind") != "checkpoint":
        raise DecoderError(f"{path}: not a checkpoint bundle")
    kind = meta["model"]
    enc = None
    if "encoder" in meta:
        enc = EncoderParams(proj=arrays["enc.proj"], mlp=_rebuild_mlp(arrays, meta["encoder"], "enc.mlp"))
    if kind == "linear":
        basis = PcaBasis(B=arrays["basis.B"], singular_values=arrays["basis.sv"],
                         rank=int(meta["basis_rank"]))
        model = LinearModel(basis, LumpedMass(diag=arrays["mass.diag"]))
    elif kind == "convex_symmetric":
        dec = DecoderParams(convex=_rebuild_icnn(arrays, meta["icnn"], "dec.icnn"), W=arrays["dec.W"])
        model = SymmetricConvexModel(enc, dec)
    elif kind == "convex_fullspace":
        model = FullspaceConvexModel(enc, _rebuild_icnn(arrays, meta["icnn"], "dec.icnn"))
    elif kind == "vanilla":
        dec = VanillaDecoderParams(mlp=_rebuild_mlp(arrays, meta["mlp"], "dec.mlp"), W=arrays["dec.W"])
        model = VanillaModel(enc, dec)
    else:
        raise DecoderError(f"unknown model kind {kind!r}")
    return model, meta
