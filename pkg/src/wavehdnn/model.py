"""WaveHDNN forward pass, the LightGCN baseline, and the checkpoint format.

Parameters live in an ordered ``dict[str, np.ndarray]``. Forward functions
take either those arrays (inference) or tape leaves of the same names
(training); everything routes through :mod:`wavehdnn.diffcore`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from . import spectral
from .hypergraph import HypergraphView, ShapeError, SparseMatrix

LN_EPS = 1e-5
ABLATIONS = ("full", "no_het", "no_wave")


# -- parameters ---------------------------------------------------------------

def _mlp_names(prefix):
    return [f"{prefix}.w1", f"{prefix}.b1", f"{prefix}.w2", f"{prefix}.b2"]


def wave_param_names(layers: int) -> list[str]:
    names = []
    for layer in range(layers):
        names += [f"wave.lambda_user.{layer}", f"wave.lambda_item.{layer}", f"wave.W.{layer}"]
    return names


def het_param_names() -> list[str]:
    return _mlp_names("mlp1") + _mlp_names("mlp2") + _mlp_names("mlp_final")


def param_names(kind: str, layers: int) -> list[str]:
    """Fixed tensor order, also the checkpoint order."""
    if kind == "lightgcn":
        return ["user_embed", "item_embed"]
    return ["user_embed", "item_embed"] + het_param_names() + wave_param_names(layers)


def _uniform(rng, shape, half_width):
    return rng.uniform(-half_width, half_width, size=shape)


def init_params(num_users: int, num_items: int, dim: int = 64, layers: int = 3,
                seed: int = 0, kind: str = "wavehdnn") -> dict[str, np.ndarray]:
    """Seeded initial parameters.

    Embeddings are uniform with half-width 0.1/sqrt(d); MLP weights use
    Glorot-uniform with zero biases; every Lambda starts at one and every W at
    identity plus uniform noise of half-width 0.01.
    """
    rng = np.random.default_rng(seed)
    d = dim
    p = {
        "user_embed": _uniform(rng, (num_users, d), 0.1 / np.sqrt(d)),
        "item_embed": _uniform(rng, (num_items, d), 0.1 / np.sqrt(d)),
    }
    if kind == "lightgcn":
        return p
    for prefix, fan_in in (("mlp1", d), ("mlp2", d), ("mlp_final", 2 * d)):
        p[f"{prefix}.w1"] = _uniform(rng, (fan_in, d), np.sqrt(6.0 / (fan_in + d)))
        p[f"{prefix}.b1"] = np.zeros((1, d))
        p[f"{prefix}.w2"] = _uniform(rng, (d, d), np.sqrt(6.0 / (2 * d)))
        p[f"{prefix}.b2"] = np.zeros((1, d))
    for layer in range(layers):
        p[f"wave.lambda_user.{layer}"] = np.ones((num_users, 1))
        p[f"wave.lambda_item.{layer}"] = np.ones((num_items, 1))
        p[f"wave.W.{layer}"] = np.eye(d) + _uniform(rng, (d, d), 0.01)
    return {k: p[k] for k in param_names(kind, layers)}


def infer_shape(params: dict) -> tuple[int, int, int, int]:
    """(num_users, num_items, dim, layers) from a parameter dict."""
    nu, d = params["user_embed"].shape
    ni = params["item_embed"].shape[0]
    layers = sum(1 for k in params if k.startswith("wave.W."))
    return nu, ni, d, layers


# -- operators fixed by the graph -------------------------------------------

class SideWavelet:
    """Wavelet operator over a side's full id range.

    Ids dropped from the view (no train interactions) pass through unchanged.
    """

    def __init__(self, op: spectral.WaveletOperator, node_ids, num_ids: int):
        self.op = op
        self.node_ids = np.asarray(node_ids, dtype=np.int64)
        self.num_ids = int(num_ids)
        self.complete = len(self.node_ids) == self.num_ids

    def apply(self, direction: str, X: np.ndarray) -> np.ndarray:
        if X.shape[0] != self.num_ids:
            raise ShapeError(f"wavelet over {self.num_ids} ids applied to {X.shape}")
        if self.complete:
            return spectral.apply(self.op, direction, X)
        out = X.copy()
        out[self.node_ids] = spectral.apply(self.op, direction, X[self.node_ids])
        return out

    def forward(self, x):
        # both operators are symmetric, so each is its own adjoint
        fn = lambda a: self.apply(spectral.FORWARD, a)  # noqa: E731
        return dc.linear_map(fn, fn, x)

    def inverse(self, x):
        fn = lambda a: self.apply(spectral.INVERSE, a)  # noqa: E731
        return dc.linear_map(fn, fn, x)


@dataclass
class Graph:
    """Everything the forward pass needs that is derived from train interactions."""

    num_users: int
    num_items: int
    to_item: SparseMatrix | None = None      # items x users, mean over member users
    to_user: SparseMatrix | None = None      # users x items, mean over incident items
    wave_user: SideWavelet | None = None
    wave_item: SideWavelet | None = None
    lightgcn_adj: SparseMatrix | None = None
    info: dict = field(default_factory=dict)


def build_graph(user_view: HypergraphView, item_view: HypergraphView, scale: float = 1.0,
                mode: str = "auto", order: int = 10, need_wavelets: bool = True,
                need_lightgcn: bool = False) -> Graph:
    g = Graph(user_view.num_node_ids, user_view.num_edge_ids)
    g.to_item, g.to_user = user_view.full_operators()
    if need_wavelets:
        ou = spectral.build_wavelet(user_view, scale, mode, order)
        oi = spectral.build_wavelet(item_view, scale, mode, order)
        g.wave_user = SideWavelet(ou, user_view.node_ids, user_view.num_node_ids)
        g.wave_item = SideWavelet(oi, item_view.node_ids, item_view.num_node_ids)
        g.info.update(wavelet_mode=ou.mode, scale=scale, order=ou.order or order,
                      lam_max_user=ou.lam_max, lam_max_item=oi.lam_max)
    if need_lightgcn:
        g.lightgcn_adj = lightgcn_adjacency(user_view)
    return g


# -- encoders ---------------------------------------------------------------

@dataclass
class ChannelOutputs:
    channel: str
    user_layers: list
    item_layers: list
    user_final: dc.Variable
    item_final: dc.Variable


def mlp(p, prefix, x):
    h = dc.relu(dc.add(dc.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return dc.add(dc.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def _as_var(x):
    return x if isinstance(x, dc.Variable) else dc.Variable(x)


def _layer_mean(layers):
    acc = layers[0]
    for x in layers[1:]:
        acc = dc.add(acc, x)
    return dc.scale(acc, 1.0 / len(layers))


def het_encoder_forward(params, graph: Graph, X_u, X_i, layers: int) -> ChannelOutputs:
    """Heterophily-aware diffusion on the user-side hypergraph (items are hyperedges).

    Each layer updates items from their member users, then users from their
    items, both through LN(mean-aggregate(MLP(.))) plus a residual. The last
    layer's tables are concatenated with the inputs and passed through
    ``mlp_final``.
    """
    xu, xi = _as_var(X_u), _as_var(X_i)
    us, its = [xu], [xi]
    for _ in range(layers):
        xi = dc.add(dc.row_layer_norm(dc.sparse_dense_matmul(graph.to_item, mlp(params, "mlp1", xu)),
                                      LN_EPS), xi)
        xu = dc.add(dc.row_layer_norm(dc.sparse_dense_matmul(graph.to_user, mlp(params, "mlp2", xi)),
                                      LN_EPS), xu)
        us.append(xu)
        its.append(xi)
    if layers > 0:
        us[-1] = mlp(params, "mlp_final", dc.concat_columns(us[-1], us[0]))
        its[-1] = mlp(params, "mlp_final", dc.concat_columns(its[-1], its[0]))
    return ChannelOutputs("heterophily", us, its, _layer_mean(us), _layer_mean(its))


def _wave_layer(wave: SideWavelet, lam, W, x):
    h = wave.inverse(dc.matmul(x, W))
    h = wave.forward(dc.mul(h, lam))
    return dc.add(h, x)


def wave_encoder_forward(params, graph: Graph, X_u, X_i, layers: int) -> ChannelOutputs:
    """Wavelet hypergraph convolution per side: Theta diag(Lambda) Theta' X W + X."""
    xu, xi = _as_var(X_u), _as_var(X_i)
    us, its = [xu], [xi]
    for layer in range(layers):
        W = params[f"wave.W.{layer}"]
        xu = _wave_layer(graph.wave_user, params[f"wave.lambda_user.{layer}"], W, xu)
        xi = _wave_layer(graph.wave_item, params[f"wave.lambda_item.{layer}"], W, xi)
        us.append(xu)
        its.append(xi)
    return ChannelOutputs("wavelet", us, its, _layer_mean(us), _layer_mean(its))


def fuse(het: ChannelOutputs | None, wave: ChannelOutputs | None):
    """Sum of the two channels' final tables; a missing channel is bypassed."""
    if het is None and wave is None:
        raise ValueError("at least one channel is required")
    if wave is None:
        return het.user_final, het.item_final
    if het is None:
        return wave.user_final, wave.item_final
    for a, b in ((het.user_final, wave.user_final), (het.item_final, wave.item_final)):
        if a.shape != b.shape:
            raise ShapeError(f"fuse: {a.shape} vs {b.shape}")
    return dc.add(het.user_final, wave.user_final), dc.add(het.item_final, wave.item_final)


@dataclass
class ForwardResult:
    E_u: dc.Variable
    E_i: dc.Variable
    het: ChannelOutputs | None = None
    wave: ChannelOutputs | None = None


def wavehdnn_forward(params, graph: Graph, layers: int, ablation: str = "full") -> ForwardResult:
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    X_u, X_i = params["user_embed"], params["item_embed"]
    het = None if ablation == "no_het" else het_encoder_forward(params, graph, X_u, X_i, layers)
    wave = None if ablation == "no_wave" else wave_encoder_forward(params, graph, X_u, X_i, layers)
    E_u, E_i = fuse(het, wave)
    return ForwardResult(E_u, E_i, het, wave)


def score_all(E_u: np.ndarray, E_i: np.ndarray, user: int) -> np.ndarray:
    if not 0 <= user < E_u.shape[0]:
        raise ShapeError(f"user {user} out of range [0, {E_u.shape[0]})")
    return E_i @ E_u[user]


# -- LightGCN ---------------------------------------------------------------

def lightgcn_adjacency(user_view: HypergraphView) -> SparseMatrix:
    """``D^-1/2 A D^-1/2`` on the (users + items) bipartite graph."""
    nu, ni = user_view.num_node_ids, user_view.num_edge_ids
    coo = user_view.H.to_scipy().tocoo()
    R = sp.csr_matrix((np.ones(coo.nnz), (user_view.node_ids[coo.row], user_view.edge_ids[coo.col])),
                      shape=(nu, ni))
    A = sp.bmat([[None, R], [R.T, None]], format="csr")
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    return SparseMatrix.from_scipy(sp.diags(inv) @ A @ sp.diags(inv))


def lightgcn_forward(params, graph: Graph, layers: int) -> ForwardResult:
    nu = params["user_embed"].shape[0]
    e = dc.concat_rows(params["user_embed"], params["item_embed"])
    snaps = [e]
    for _ in range(layers):
        e = dc.sparse_dense_matmul(graph.lightgcn_adj, e)
        snaps.append(e)
    final = _layer_mean(snaps)
    n = final.shape[0]
    E_u = dc.gather_rows(final, np.arange(nu))
    E_i = dc.gather_rows(final, np.arange(nu, n))
    return ForwardResult(E_u, E_i)


def forward(kind: str, params, graph: Graph, layers: int, ablation: str = "full") -> ForwardResult:
    if kind == "lightgcn":
        return lightgcn_forward(params, graph, layers)
    return wavehdnn_forward(params, graph, layers, ablation)


def final_embeddings(kind, params, graph, layers, ablation="full") -> tuple[np.ndarray, np.ndarray]:
    res = forward(kind, params, graph, layers, ablation)
    return res.E_u.value, res.E_i.value


# -- checkpoint ---------------------------------------------------------------

MAGIC = b"WHDNN"
FORMAT_VERSION = 1
MODEL_KINDS = ("wavehdnn", "lightgcn")


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(params: dict, kind: str = "wavehdnn", layers: int | None = None) -> bytes:
    """Serialize to the bit-exact checkpoint layout (see README).

    ``layers`` is required for LightGCN, whose depth is not visible in its
    parameters.
    """
    nu, d = params["user_embed"].shape
    ni = params["item_embed"].shape[0]
    if layers is None:
        if kind == "lightgcn":
            raise ValueError("layers must be given for lightgcn checkpoints")
        layers = infer_shape(params)[3]
    return _pack(params, kind, nu, ni, d, layers)


def _pack(params, kind, nu, ni, d, layers) -> bytes:
    names = param_names(kind, layers)
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", FORMAT_VERSION)
    buf += struct.pack("<4Q", nu, ni, d, layers)
    buf += struct.pack("<II", MODEL_KINDS.index(kind), len(names))
    for name in names:
        a = np.ascontiguousarray(params[name], dtype="<f8")
        buf += struct.pack("<I", a.ndim)
        buf += struct.pack(f"<{a.ndim}Q", *a.shape)
        buf += a.tobytes(order="C")
    buf += struct.pack("<Q", sum(buf) % (1 << 64))
    return bytes(buf)


def save_checkpoint(path, params: dict, kind: str = "wavehdnn", layers: int | None = None) -> bytes:
    data = checkpoint_bytes(params, kind, layers)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


@dataclass
class Checkpoint:
    kind: str
    num_users: int
    num_items: int
    dim: int
    layers: int
    params: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)


def parse_checkpoint(data: bytes) -> Checkpoint:
    try:
        return _parse(data)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None


def _parse(data: bytes) -> Checkpoint:
    if len(data) < 5 + 4 + 32 + 8 + 8 or data[:5] != MAGIC:
        raise CheckpointError("not a WHDNN checkpoint")
    body, (checksum,) = data[:-8], struct.unpack("<Q", data[-8:])
    if sum(body) % (1 << 64) != checksum:
        raise CheckpointError("checksum mismatch")
    off = 5
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    nu, ni, d, layers = struct.unpack_from("<4Q", body, off)
    off += 32
    kind_idx, count = struct.unpack_from("<II", body, off)
    off += 8
    if kind_idx >= len(MODEL_KINDS):
        raise CheckpointError(f"unknown model kind {kind_idx}")
    kind = MODEL_KINDS[kind_idx]
    names = param_names(kind, layers)
    if count != len(names):
        raise CheckpointError(f"expected {len(names)} tensors, found {count}")
    params = {}
    for name in names:
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", body, off)
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(body):
        raise CheckpointError("trailing bytes before checksum")
    return Checkpoint(kind, nu, ni, d, layers, params)
