"""Hyperbolic multimodal bag model.

Each modality's instances are projected linearly and sent onto the Poincaré
ball with the exponential map at the origin.  Attention pooling and
channel fusion act in the tangent space at the origin (log map in, exp map
out), and a linear hazard head reads the fused point's tangent vector.

The forward functions take a mapping of parameter arrays; passing graph
tensors instead differentiates the whole pipeline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from . import diffengine as de
from .geometry import exp_map0, log_map0

MODALITIES = ("path", "gen")
CHECKPOINT_MAGIC = b"HSPC"
CHECKPOINT_VERSION = 1
MASK_FILL = -1e30


@dataclass
class PatientBag:
    patient_id: str
    pathology: np.ndarray
    genomics: np.ndarray
    time_months: float
    censor: int

    def __post_init__(self):
        self.pathology = np.atleast_2d(np.asarray(self.pathology, dtype=np.float64))
        self.genomics = np.atleast_2d(np.asarray(self.genomics, dtype=np.float64))
        if self.pathology.shape[0] < 1 or self.genomics.shape[0] < 1:
            raise ValueError(f"{self.patient_id}: bags need at least one instance")
        if self.pathology.shape[1] != self.genomics.shape[1]:
            raise ValueError(f"{self.patient_id}: modality feature widths differ")
        if not (np.all(np.isfinite(self.pathology)) and np.all(np.isfinite(self.genomics))):
            raise ValueError(f"{self.patient_id}: non-finite features")
        if not self.time_months > 0:
            raise ValueError(f"{self.patient_id}: survival time must be positive")
        if self.censor not in (0, 1):
            raise ValueError(f"{self.patient_id}: censor must be 0 or 1")


@dataclass
class FusionParams:
    """Named parameter matrices plus the head count they were built for.

    Every tensor is 2-D (biases and queries included) so checkpoints stay
    a flat list of matrices.
    """

    tensors: dict = field(default_factory=dict)
    n_heads: int = 4

    @property
    def d(self) -> int:
        return self.tensors["path.proj.W"].shape[0]

    @property
    def d_h(self) -> int:
        return self.tensors["path.proj.W"].shape[1]

    @property
    def n_bins(self) -> int:
        return self.tensors["hazard.W"].shape[1]

    def copy(self) -> "FusionParams":
        return FusionParams({k: v.copy() for k, v in self.tensors.items()}, self.n_heads)


def init_params(d, d_h=32, n_bins=4, n_heads=4, rng=None, zero=False) -> FusionParams:
    if d_h % n_heads:
        raise ValueError(f"d_h={d_h} is not divisible by n_heads={n_heads}")
    rng = np.random.default_rng(rng)
    d_head = d_h // n_heads

    def dense(n_in, n_out, gain=1.0):
        if zero:
            return np.zeros((n_in, n_out))
        return rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))

    t = {}
    for m in MODALITIES:
        t[f"{m}.proj.W"] = dense(d, d_h)
        t[f"{m}.proj.b"] = np.zeros((1, d_h))
        t[f"{m}.attn.key"] = dense(d_h, d_h)
        t[f"{m}.attn.value"] = dense(d_h, d_h)
        t[f"{m}.attn.query"] = dense(d_head, n_heads).T.copy()
    t["fuse.W"] = dense(3 * d_h, d_h)
    t["hazard.W"] = dense(d_h, n_bins, gain=0.1)
    t["hazard.b"] = np.zeros((1, n_bins))
    return FusionParams(t, n_heads)


class PatientEmbedding(NamedTuple):
    fused: object
    path: object
    gen: object
    logits: object


def embed_bag(instances, weight, bias, c):
    """Linear projection of every instance followed by the origin exp map."""
    return exp_map0(de.matmul(instances, weight) + bias, c)


def attention_pool(points, key, value, query, c, mask=None, return_weights=False):
    """Multi-head attention pooling of ball points in the origin tangent space.

    Each head scores instances against a learned query, softmaxes over the
    instances and averages the value projections.  Heads are concatenated
    and mapped back onto the ball.  ``points`` is ``(M, d_h)`` or batched
    ``(B, M, d_h)``; ``mask`` (same leading shape, True = real instance)
    excludes padding rows.
    """
    n_heads, d_head = de.value_of(query).shape
    lead = de.value_of(points).shape[:-1]
    u = log_map0(points, c)
    k = de.reshape(de.matmul(u, key), lead + (n_heads, d_head))
    v = de.reshape(de.matmul(u, value), lead + (n_heads, d_head))
    scores = de.sum(k * query, axis=-1) / np.sqrt(d_head)  # (..., M, heads)
    if mask is not None:
        scores = de.where(np.asarray(mask, dtype=bool)[..., None], scores, MASK_FILL)
    weights = de.exp(scores - de.logsumexp(scores, axis=-2, keepdims=True))
    pooled = de.sum(de.reshape(weights, lead + (n_heads, 1)) * v, axis=-3)
    out = exp_map0(de.reshape(pooled, lead[:-1] + (n_heads * d_head,)), c)
    if return_weights:
        return out, de.value_of(weights)
    return out


def channel_fuse(x_p, x_g, weight, c):
    """Fuse two ball points: linear map of ``[u, v, u*v]`` in tangent space."""
    u = log_map0(x_p, c)
    v = log_map0(x_g, c)
    stacked = de.concat([u, v, u * v], axis=-1)
    return exp_map0(de.matmul(stacked, weight), c)


def hazard_logits(fused, params, c):
    return de.matmul(log_map0(fused, c), params["hazard.W"]) + params["hazard.b"][0]


def _modality_point(instances, params, prefix, c, mask=None):
    pts = embed_bag(instances, params[f"{prefix}.proj.W"], params[f"{prefix}.proj.b"][0], c)
    return attention_pool(pts, params[f"{prefix}.attn.key"], params[f"{prefix}.attn.value"],
                          params[f"{prefix}.attn.query"], c, mask=mask)


def _unwrap(params):
    return params.tensors if isinstance(params, FusionParams) else params


def forward_patient(bag: PatientBag, params: Mapping, c) -> PatientEmbedding:
    """Full pipeline for one patient: per-modality pooling, fusion, hazard head."""
    params = _unwrap(params)
    x_p = _modality_point(bag.pathology, params, "path", c)
    x_g = _modality_point(bag.genomics, params, "gen", c)
    fused = channel_fuse(x_p, x_g, params["fuse.W"], c)
    return PatientEmbedding(fused, x_p, x_g, hazard_logits(fused, params, c))


def pad_bags(matrices):
    """Stack ragged ``(M_i, d)`` matrices into ``(B, M_max, d)`` plus a row mask."""
    m_max = max(m.shape[0] for m in matrices)
    out = np.zeros((len(matrices), m_max, matrices[0].shape[1]))
    mask = np.zeros((len(matrices), m_max), dtype=bool)
    for i, m in enumerate(matrices):
        out[i, :m.shape[0]] = m
        mask[i, :m.shape[0]] = True
    return out, mask


def forward_batch(bags, params: Mapping, c) -> PatientEmbedding:
    """Vectorised :func:`forward_patient` over a list of bags (padded + masked)."""
    params = _unwrap(params)
    path, path_mask = pad_bags([b.pathology for b in bags])
    gen, gen_mask = pad_bags([b.genomics for b in bags])
    x_p = _modality_point(path, params, "path", c, path_mask)
    x_g = _modality_point(gen, params, "gen", c, gen_mask)
    fused = channel_fuse(x_p, x_g, params["fuse.W"], c)
    return PatientEmbedding(fused, x_p, x_g, hazard_logits(fused, params, c))


# -- checkpoints -----------------------------------------------------------

class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: FusionParams, c: float, extra: Mapping | None = None):
    """Write ``HSPC`` checkpoint: magic, u32 version, then named f64 matrices.

    Curvature and head count travel as 1x1 ``meta.*`` matrices.
    """
    tensors = dict(params.tensors)
    tensors["meta.curvature"] = np.array([[c]])
    tensors["meta.n_heads"] = np.array([[params.n_heads]], dtype=np.float64)
    for k, v in (extra or {}).items():
        tensors[f"meta.{k}"] = np.atleast_2d(np.asarray(v, dtype=np.float64))
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise CheckpointError(f"{name}: checkpoint tensors must be 2-D")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<QQ", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[FusionParams, float, dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos, tensors = 8, {}
    while pos < len(data):
        try:
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            rows, cols = struct.unpack_from("<QQ", data, pos + 2 + n)
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated tensor header") from exc
        pos += 2 + n + 16
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload for {name}")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
        pos += nbytes
    meta = {k[5:]: v for k, v in tensors.items() if k.startswith("meta.")}
    params = {k: v for k, v in tensors.items() if not k.startswith("meta.")}
    c = float(meta.pop("curvature")[0, 0])
    n_heads = int(meta.pop("n_heads")[0, 0])
    return FusionParams(params, n_heads), c, meta
