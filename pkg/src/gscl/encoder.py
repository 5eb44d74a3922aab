"""GCN encoder, two-layer projection head and parameter checkpoints."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import Graph

ACTIVATIONS = ("relu", "prelu", "rrelu", "linear")
# rrelu in evaluation mode uses the mean of its slope range [1/8, 1/3]
RRELU_SLOPE = (1.0 / 8.0 + 1.0 / 3.0) / 2.0
PRELU_INIT = 0.25
PARAMS_MAGIC = b"GSCLP1"
MATRIX_MAGIC = b"GSCLM1"


@dataclass
class EncoderParams:
    """GCN weights ``W_1..W_L`` followed by the projection head.

    ``prelu_slopes`` holds one learnable scalar per GCN hidden activation and
    one for the projection hidden layer; it is empty for other activations.
    """

    layer_weights: list
    proj_weights: list
    proj_biases: list
    activation: str = "relu"
    prelu_slopes: list = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.prelu_slopes is None:
            self.prelu_slopes = []
        dims = [w.shape for w in self.layer_weights]
        for (_, out), (nxt, _) in zip(dims, dims[1:]):
            if out != nxt:
                raise ValueError(f"GCN layer dims do not chain: {dims}")
        if len(self.proj_weights) != 2 or len(self.proj_biases) != 2:
            raise ValueError("projection head needs two weight matrices and two biases")

    @property
    def in_dim(self):
        return self.layer_weights[0].shape[0]

    @property
    def hidden_dim(self):
        return self.layer_weights[-1].shape[1]

    def arrays(self) -> list:
        """Flat list of every trainable array, in checkpoint order."""
        return [*self.layer_weights, *self.proj_weights, *self.proj_biases, *self.prelu_slopes]

    @classmethod
    def from_arrays(cls, arrays, num_layers, activation):
        arrays = list(arrays)
        layers = arrays[:num_layers]
        proj_w = arrays[num_layers:num_layers + 2]
        proj_b = arrays[num_layers + 2:num_layers + 4]
        slopes = arrays[num_layers + 4:]
        return cls(layers, proj_w, proj_b, activation, slopes)

    def astype(self, dtype):
        return EncoderParams.from_arrays([a.astype(dtype) for a in self.arrays()],
                                         len(self.layer_weights), self.activation)

    def copy(self):
        return self.astype(self.layer_weights[0].dtype)


def init_params(layer_dims, proj_dims=None, activation="relu", seed=0, dtype=np.float32) -> EncoderParams:
    """Glorot-uniform weights, zero biases.

    ``layer_dims`` is ``[D_in, D_1, ..., D_L]``; ``proj_dims`` is the
    projection ``[D_p_hidden, D_p_out]`` and defaults to ``[D_L, D_L]``.
    """
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2 or min(layer_dims) < 1:
        raise ValueError("layer_dims needs an input dim and at least one layer, all >= 1")
    if proj_dims is None:
        proj_dims = [layer_dims[-1], layer_dims[-1]]
    proj_dims = [int(d) for d in proj_dims]
    if len(proj_dims) != 2 or min(proj_dims) < 1:
        raise ValueError("proj_dims must be two positive sizes")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)

    layers = [glorot(a, b) for a, b in zip(layer_dims, layer_dims[1:])]
    chain = [layer_dims[-1], *proj_dims]
    proj_w = [glorot(a, b) for a, b in zip(chain, chain[1:])]
    proj_b = [np.zeros(d, dtype=dtype) for d in proj_dims]
    slopes = []
    if activation == "prelu":
        slopes = [np.full(1, PRELU_INIT, dtype=dtype) for _ in range(len(layers))]
    return EncoderParams(layers, proj_w, proj_b, activation, slopes)


def normalize_adjacency(g: Graph, dtype=np.float64) -> sp.csr_matrix:
    """Symmetric GCN propagation matrix with self-loops, D^-1/2 (A+I) D^-1/2."""
    n = g.num_nodes
    data = np.ones(g.num_edges, dtype=np.float64)
    adj = sp.csr_matrix((data, g.csr_targets, g.csr_offsets), shape=(n, n))
    adj = adj + sp.identity(n, format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scaling = sp.diags(inv_sqrt)
    return (scaling @ adj @ scaling).tocsr().astype(dtype)


def _activate(x, activation, slope=None):
    if activation == "relu":
        return ad.relu(x)
    if activation == "prelu":
        return ad.prelu(x, slope)
    if activation == "rrelu":
        return ad.leaky_relu(x, RRELU_SLOPE)
    return x


def encode_tensor(adj, x, layer_weights, activation="relu", slopes=()):
    """Tape version of :func:`encode` over tensors."""
    h = x
    last = len(layer_weights) - 1
    for i, w in enumerate(layer_weights):
        h = ad.spmm(adj, ad.matmul(h, w))
        if i < last:
            h = _activate(h, activation, slopes[i] if slopes else None)
    return h


def project_tensor(h, proj_weights, proj_biases, activation="relu", slope=None):
    hidden = _activate(ad.add(ad.matmul(h, proj_weights[0]), proj_biases[0]), activation, slope)
    return ad.add(ad.matmul(hidden, proj_weights[1]), proj_biases[1])


def _check_in_dim(features, params):
    if features.shape[1] != params.in_dim:
        raise ValueError(
            f"feature dim {features.shape[1]} does not match first layer input {params.in_dim}"
        )


def encode(g: Graph, params: EncoderParams, adj=None) -> np.ndarray:
    """Hidden representations ``H`` (no activation after the last GCN layer)."""
    _check_in_dim(g.features, params)
    dtype = params.layer_weights[0].dtype
    if adj is None:
        adj = normalize_adjacency(g, dtype)
    slopes = [ad.Tensor(s) for s in params.prelu_slopes]
    h = encode_tensor(adj, ad.Tensor(g.features.astype(dtype)), params.layer_weights,
                      params.activation, slopes)
    return h.value


def project(h, params: EncoderParams) -> np.ndarray:
    """Projection head output ``Z = act(H W1 + b1) W2 + b2``."""
    h = np.asarray(h)
    if h.shape[1] != params.proj_weights[0].shape[0]:
        raise ValueError("embedding dim does not match projection input")
    slope = params.prelu_slopes[-1] if params.activation == "prelu" else None
    return project_tensor(ad.Tensor(h), params.proj_weights, params.proj_biases,
                          params.activation, slope).value


def forward_tensors(adj, features, leaves, num_layers, activation):
    """Encoder and projection on tape; ``leaves`` follows ``EncoderParams.arrays``.

    Returns ``(H, Z)`` tensors.
    """
    layers = leaves[:num_layers]
    proj_w = leaves[num_layers:num_layers + 2]
    proj_b = leaves[num_layers + 2:num_layers + 4]
    slopes = leaves[num_layers + 4:]
    h = encode_tensor(adj, features, layers, activation, slopes[:-1] if slopes else ())
    z = project_tensor(h, proj_w, proj_b, activation, slopes[-1] if slopes else None)
    return h, z


# ---------------------------------------------------------------------------
# binary formats
# ---------------------------------------------------------------------------

_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_params(params: EncoderParams, path):
    """Checkpoint: magic, u32 num_layers, u32 activation code, u32 array count,
    then per array u32 ndim and u64 dims, then every array as little-endian f32."""
    arrays = params.arrays()
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<III", len(params.layer_weights), _ACT_CODES[params.activation],
                             len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_params(path) -> EncoderParams:
    blob = Path(path).read_bytes()
    if not blob.startswith(PARAMS_MAGIC):
        raise ValueError(f"{path}: not a parameter checkpoint")
    pos = len(PARAMS_MAGIC)
    num_layers, act, count = struct.unpack_from("<III", blob, pos)
    pos += 12
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shapes.append(struct.unpack_from(f"<{ndim}Q", blob, pos))
        pos += 8 * ndim
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(blob, "<f4", size, pos).reshape(shape).astype(np.float32))
        pos += 4 * size
    return EncoderParams.from_arrays(arrays, num_layers, ACTIVATIONS[act])


def save_matrix(mat, path):
    """Embedding matrix: magic, u64 rows, u64 cols, little-endian f32 payload."""
    mat = np.ascontiguousarray(mat, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", *mat.shape))
        fh.write(mat.tobytes())


def load_matrix(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(MATRIX_MAGIC):
        raise ValueError(f"{path}: not an embedding matrix file")
    rows, cols = struct.unpack_from("<QQ", blob, len(MATRIX_MAGIC))
    off = len(MATRIX_MAGIC) + 16
    return np.frombuffer(blob, "<f4", rows * cols, off).reshape(rows, cols).astype(np.float32)
