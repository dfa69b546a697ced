"""Input-convex feed-forward core: constrained forward pass, Jacobian, backprop.

Layer recursion: z_{i+1} = g_i(Wz_i z_i + Wq_i q + b_i) with z_0 = 0 (the
first layer has no z-weight). Every output coordinate is convex in q as long
as all Wz entries are non-negative and the activations are convex and
non-decreasing; the final layer uses the identity activation, which preserves
the guarantee while allowing negative outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class NetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# activations (value and derivative on pre-activations)

def _softplus(x, beta):
    return np.logaddexp(0.0, beta * x) / beta


def _softplus_grad(x, beta):
    return expit(beta * x)


def _relu(x, beta):
    return np.maximum(x, 0.0)


def _relu_grad(x, beta):
    return (x > 0).astype(np.float64)


_ACTIVATIONS = {"softplus": (_softplus, _softplus_grad), "relu": (_relu, _relu_grad)}


@dataclass
class IcnnLayer:
    Wq: np.ndarray               # (h_out, k)
    Wz: np.ndarray | None = None  # (h_out, h_in); None on the first layer
    b: np.ndarray = None          # (h_out,)

    def __post_init__(self):
        if self.b is None:
            self.b = np.zeros(self.Wq.shape[0])


@dataclass
class IcnnParams:
    layers: list[IcnnLayer]
    activation: str = "softplus"
    beta: float = 10.0

    @property
    def input_dim(self) -> int:
        return self.layers[0].Wq.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].Wq.shape[0]

    @property
    def widths(self) -> list[int]:
        return [l.Wq.shape[0] for l in self.layers]

    def validate(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise NetError(f"unknown activation {self.activation!r}")
        if self.layers[0].Wz is not None:
            raise NetError("first layer must have no z-weight (z_0 = 0 convention)")
        prev = None
        for i, l in enumerate(self.layers):
            if l.Wq.shape[1] != self.input_dim:
                raise NetError(f"layer {i}: skip weight input dim mismatch")
            if i > 0:
                if l.Wz is None:
                    raise NetError(f"layer {i}: missing z-weight")
                if l.Wz.shape != (l.Wq.shape[0], prev):
                    raise NetError(f"layer {i}: z-weight shape mismatch")
                if np.any(l.Wz < 0):
                    raise NetError(f"layer {i}: z-weight has negative entries")
            for a in (l.Wq, l.Wz, l.b):
                if a is not None and not np.all(np.isfinite(a)):
                    raise NetError(f"layer {i}: non-finite parameters")
            prev = l.Wq.shape[0]

    def copy(self) -> "IcnnParams":
        return IcnnParams(
            layers=[IcnnLayer(l.Wq.copy(), None if l.Wz is None else l.Wz.copy(), l.b.copy())
                    for l in self.layers],
            activation=self.activation, beta=self.beta)

    def param_items(self, prefix: str = "icnn") -> list[tuple[str, np.ndarray]]:
        items = []
        for i, l in enumerate(self.layers):
            items.append((f"{prefix}.{i}.Wq", l.Wq))
            if l.Wz is not None:
                items.append((f"{prefix}.{i}.Wz", l.Wz))
            items.append((f"{prefix}.{i}.b", l.b))
        return items


def init_icnn(rng: np.random.Generator, k: int, hidden: list[int], r: int,
              activation: str = "softplus", beta: float = 10.0,
              wz_scale: float = 1.0, wq_last: np.ndarray | None = None) -> IcnnParams:
    """Fan-in scaled Gaussian skip weights; |Gaussian| non-negative z-weights.

    wz_scale shrinks the z-path (near-linear start); wq_last overrides the
    output layer's skip weight.
    """
    widths = [k] + list(hidden) + [r]
    layers = []
    for i in range(len(widths) - 1):
        h_out = widths[i + 1]
        Wq = rng.standard_normal((h_out, k)) / np.sqrt(k)
        Wz = None
        if i > 0:
            h_in = widths[i]
            Wz = np.abs(rng.standard_normal((h_out, h_in))) * (wz_scale / np.sqrt(h_in))
        layers.append(IcnnLayer(Wq=Wq, Wz=Wz, b=np.zeros(h_out)))
    if wq_last is not None:
        if wq_last.shape != layers[-1].Wq.shape:
            raise NetError("wq_last shape mismatch")
        layers[-1].Wq = wq_last.copy()
    return IcnnParams(layers=layers, activation=activation, beta=beta)


# ---------------------------------------------------------------------------
# evaluation

def _forward_cached(params: IcnnParams, q: np.ndarray):
    act, _ = _ACTIVATIONS[params.activation]
    last = len(params.layers) - 1
    z = None
    pres, zs = [], []
    for i, l in enumerate(params.layers):
        pre = l.Wq @ q + (l.b if q.ndim == 1 else l.b[:, None])
        if l.Wz is not None:
            pre = pre + l.Wz @ z
        zs.append(z)
        pres.append(pre)
        z = pre if i == last else act(pre, params.beta)
    return z, pres, zs


def icnn_forward(params: IcnnParams, q: np.ndarray) -> np.ndarray:
    """Evaluate the network; q may be a vector (k,) or a batch (k, B)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != params.input_dim:
        raise NetError(f"input dim {q.shape[0]} != {params.input_dim}")
    out, _, _ = _forward_cached(params, q)
    return out


def icnn_jacobian(params: IcnnParams, q: np.ndarray) -> np.ndarray:
    """Exact (r, k) Jacobian at a single point via forward accumulation."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != params.input_dim:
        raise NetError("jacobian expects a single (k,) input")
    act, grad_act = _ACTIVATIONS[params.activation]
    last = len(params.layers) - 1
    z, dz = None, None
    for i, l in enumerate(params.layers):
        pre = l.Wq @ q + l.b
        dpre = l.Wq.copy()
        if l.Wz is not None:
            pre = pre + l.Wz @ z
            dpre = dpre + l.Wz @ dz
        if i == last:
            return dpre
        z = act(pre, params.beta)
        dz = grad_act(pre, params.beta)[:, None] * dpre
    raise AssertionError("unreachable")


@dataclass
class IcnnGrads:
    layers: list[dict] = field(default_factory=list)  # per layer: Wq, Wz, b arrays

    def items(self, prefix: str = "icnn") -> list[tuple[str, np.ndarray]]:
        out = []
        for i, g in enumerate(self.layers):
            out.append((f"{prefix}.{i}.Wq", g["Wq"]))
            if g.get("Wz") is not None:
                out.append((f"{prefix}.{i}.Wz", g["Wz"]))
            out.append((f"{prefix}.{i}.b", g["b"]))
        return out

    def add(self, other: "IcnnGrads") -> "IcnnGrads":
        for a, b in zip(self.layers, other.layers):
            for key in a:
                if a[key] is not None:
                    a[key] += b[key]
        return self


def icnn_backprop(params: IcnnParams, q: np.ndarray, upstream: np.ndarray):
    """Gradients of <upstream, forward(q)> w.r.t. all parameters and q.

    Batched inputs (k, B) with upstream (r, B) accumulate gradients over the
    batch; the returned input gradient matches q's shape.
    """
    q = np.asarray(q, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape[0] != params.output_dim or upstream.ndim != q.ndim:
        raise NetError("upstream shape mismatch")
    _, pres, zs = _forward_cached(params, q)
    _, grad_act = _ACTIVATIONS[params.activation]
    last = len(params.layers) - 1

    grads = IcnnGrads(layers=[{} for _ in params.layers])
    dq = np.zeros_like(q)
    delta = upstream  # d loss / d z_{i+1}
    for i in range(last, -1, -1):
        l = params.layers[i]
        dpre = delta if i == last else delta * grad_act(pres[i], params.beta)
        if q.ndim == 1:
            grads.layers[i]["Wq"] = np.outer(dpre, q)
            grads.layers[i]["b"] = dpre.copy()
            if l.Wz is not None:
                grads.layers[i]["Wz"] = np.outer(dpre, zs[i])
        else:
            grads.layers[i]["Wq"] = dpre @ q.T
            grads.layers[i]["b"] = dpre.sum(axis=1)
            if l.Wz is not None:
                grads.layers[i]["Wz"] = dpre @ zs[i].T
        if l.Wz is None:
            grads.layers[i]["Wz"] = None
        dq += l.Wq.T @ dpre
        if l.Wz is not None:
            delta = l.Wz.T @ dpre
    return grads, dq


def project_nonneg(params: IcnnParams) -> IcnnParams:
    """Clamp every z-weight entry at zero, in place. Idempotent."""
    for l in params.layers:
        if l.Wz is not None:
            np.maximum(l.Wz, 0.0, out=l.Wz)
    return params


# ---------------------------------------------------------------------------
# standalone parameter checkpoints

def save_icnn(params: IcnnParams, path) -> None:
    from .storage import save_bundle

    arrays = dict(params.param_items("icnn"))
    save_bundle(path, arrays, meta={
        "kind": "icnn", "widths": [params.input_dim] + params.widths,
        "activation": params.activation, "beta": params.beta,
    })


def load_icnn(path) -> IcnnParams:
    from .storage import load_bundle

    arrays, meta = load_bundle(path)
    if meta.get("kind") != "icnn":
        raise NetError(f"{path}: not a network parameter bundle")
    widths = meta["widths"]
    layers = [IcnnLayer(Wq=arrays[f"icnn.{i}.Wq"], Wz=arrays.get(f"icnn.{i}.Wz"),
                        b=arrays[f"icnn.{i}.b"]) for i in range(len(widths) - 1)]
    params = IcnnParams(layers=layers, activation=meta["activation"], beta=meta["beta"])
    params.validate()
    return params
