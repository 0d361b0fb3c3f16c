"""Dataset files and the synthetic hierarchical survival generator.

On disk a dataset is a directory holding ``manifest.ndjson`` plus one
pathology and one genomics matrix per patient in the ``HSPM`` format::

    magic   4 bytes  b"HSPM"
    version u32 LE   1
    rows    u64 LE
    cols    u64 LE
    dtype   u8       0 = float32
    payload rows*cols little-endian values, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .fusion import PatientBag

MATRIX_MAGIC = b"HSPM"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIQQB")
_DTYPES = {0: np.dtype("<f4")}
MANIFEST_NAME = "manifest.ndjson"
REQUIRED_FIELDS = ("patient_id", "time_months", "censor", "pathology_path", "genomics_path")


class MatrixFormatError(ValueError):
    pass


class BadMagicError(MatrixFormatError):
    pass


class VersionMismatchError(MatrixFormatError):
    pass


class TruncatedPayloadError(MatrixFormatError):
    pass


class UnknownDtypeError(MatrixFormatError):
    pass


class ManifestError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def write_matrix(path, matrix, dtype_code: int = 0):
    """Store a 2-D matrix; values are cast to the dtype's storage type."""
    if dtype_code not in _DTYPES:
        raise UnknownDtypeError(f"unknown dtype code {dtype_code}")
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to store non-finite values")
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_code])
    header = _HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, arr.shape[0], arr.shape[1], dtype_code)
    Path(path).write_bytes(header + arr.tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MATRIX_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header is truncated")
    _, version, rows, cols, code = _HEADER.unpack_from(data)
    if version != MATRIX_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {MATRIX_VERSION}")
    if code not in _DTYPES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPES[code]
    expected = rows * cols * dtype.itemsize
    payload = data[_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()


# -- manifests -------------------------------------------------------------

@dataclass
class ManifestRecord:
    patient_id: str
    time_months: float
    censor: int
    pathology_path: Path
    genomics_path: Path
    extra: dict = field(default_factory=dict)


@dataclass
class Manifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time_months for r in self.records], dtype=np.float64)

    @property
    def censors(self) -> np.ndarray:
        return np.array([r.censor for r in self.records], dtype=np.int64)

    def load_bag(self, i) -> PatientBag:
        r = self.records[i]
        return PatientBag(r.patient_id, read_matrix(r.pathology_path), read_matrix(r.genomics_path),
                          r.time_months, r.censor)

    def bags(self) -> list[PatientBag]:
        return [self.load_bag(i) for i in range(len(self.records))]


def _validate_record(obj, path, line, base: Path, seen: set) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise ManifestError(path, line, "record is not a key-value object")
    for key in REQUIRED_FIELDS:
        if key not in obj:
            raise ManifestError(path, line, f"missing field {key!r}")
    pid = str(obj["patient_id"])
    if pid in seen:
        raise ManifestError(path, line, f"duplicate patient_id {pid!r}")
    censor = obj["censor"]
    if isinstance(censor, bool) or censor not in (0, 1):
        raise ManifestError(path, line, f"censor must be 0 or 1, got {censor!r}")
    try:
        time = float(obj["time_months"])
    except (TypeError, ValueError):
        raise ManifestError(path, line, f"time_months is not a number: {obj['time_months']!r}") from None
    if not (np.isfinite(time) and time > 0):
        raise ManifestError(path, line, f"time_months must be positive, got {time}")
    paths = []
    for key in ("pathology_path", "genomics_path"):
        p = base / obj[key]
        if not p.is_file():
            raise ManifestError(path, line, f"{key} does not resolve: {p}")
        paths.append(p)
    seen.add(pid)
    extra = {k: v for k, v in obj.items() if k not in REQUIRED_FIELDS}
    return ManifestRecord(pid, time, int(censor), paths[0], paths[1], extra)


def read_manifest(path) -> Manifest:
    """Parse and validate a newline-delimited JSON manifest.

    Feature paths are resolved relative to the manifest's directory; the
    matrices themselves are only read by :meth:`Manifest.load_bag`.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    base = path.parent
    records, seen = [], set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(path, line_no, f"malformed record: {exc.msg}") from None
            records.append(_validate_record(obj, path, line_no, base, seen))
    return Manifest(records)


# -- synthetic generator ---------------------------------------------------

@dataclass
class SynthConfig:
    n_patients: int = 500
    mp_range: tuple = (8, 16)
    m_g: int = 6
    d: int = 16
    censor_rate: float = 0.45
    tree_depth: int = 3
    branching: int = 2
    noise_scale: float = 0.1
    risk_spread: float = 6.0
    base_rate: float = 1.0 / 30.0
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 8:
            raise ValueError("n_patients must be at least 8")
        if not 0 <= self.censor_rate < 1:
            raise ValueError("censor_rate must lie in [0, 1)")
        lo, hi = self.mp_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid M_p range {self.mp_range}")
        if self.m_g < 1 or self.d < 1 or self.tree_depth < 1 or self.branching < 2:
            raise ValueError("m_g, d, tree_depth must be >= 1 and branching >= 2")
        if self.noise_scale < 0 or self.base_rate <= 0:
            raise ValueError("noise_scale must be >= 0 and base_rate > 0")

    @property
    def n_leaves(self) -> int:
        return self.branching ** self.tree_depth


def leaf_rates(config: SynthConfig) -> np.ndarray:
    """Event rate per leaf; monotone increasing in leaf index."""
    rel = np.arange(config.n_leaves) / max(config.n_leaves - 1, 1) - 0.5
    return config.base_rate * np.exp(config.risk_spread * rel)


def censor_horizon(config: SynthConfig) -> float:
    """Upper end of the uniform censoring window hitting ``censor_rate``.

    With ``C ~ U(0, H)`` and ``T ~ Exp(rate)`` we have
    ``P(C < T) = (1 - exp(-rate H)) / (rate H)``, averaged over leaves.
    """
    if config.censor_rate == 0:
        return np.inf
    rates = leaf_rates(config)

    def gap(log_h):
        x = rates * np.exp(log_h)
        return np.mean(-np.expm1(-x) / x) - config.censor_rate

    return float(np.exp(brentq(gap, -30.0, 30.0, xtol=1e-14)))


def _ancestor_paths(config: SynthConfig) -> np.ndarray:
    """Node ids along the root-to-leaf path, shape ``(n_leaves, depth)``."""
    b, depth = config.branching, config.tree_depth
    paths = np.zeros((config.n_leaves, depth), dtype=np.int64)
    for leaf in range(config.n_leaves):
        node, offset = 0, 0
        for level in range(depth):
            digit = (leaf // b ** (depth - 1 - level)) % b
            node = node * b + digit
            paths[leaf, level] = offset + node
            offset += b ** (level + 1)  # ids of shallower levels come first
    return paths


def generate_synthetic(config: SynthConfig, out_dir) -> Manifest:
    """Write a synthetic dataset and return its validated manifest.

    Patients sit at leaves of a balanced tree.  Pathology instances encode
    the ancestor path truncated at a random depth; genomic pathways are fixed
    linear views of the path truncated at a pathway-specific depth.  Event
    times are exponential with a leaf-monotone rate and are right-censored
    by an independent uniform censoring time.
    """
    rng = np.random.default_rng(config.seed)
    out = Path(out_dir)
    (out / "pathology").mkdir(parents=True, exist_ok=True)
    (out / "genomics").mkdir(parents=True, exist_ok=True)

    d, depth = config.d, config.tree_depth
    paths = _ancestor_paths(config)
    n_nodes = int(paths.max()) + 1
    node_code = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_nodes, d))
    pathway_mix = rng.normal(0.0, 1.0 / np.sqrt(d), size=(config.m_g, d, d))
    pathway_depth = 1 + np.arange(config.m_g) % depth
    horizon = censor_horizon(config)
    rates = leaf_rates(config)

    # prefix sums of node codes along each leaf's path: (n_leaves, depth, d)
    prefix = np.cumsum(node_code[paths], axis=1)

    lines = []
    for i in range(config.n_patients):
        pid = f"P{i:05d}"
        leaf = int(rng.integers(config.n_leaves))
        m_p = int(rng.integers(config.mp_range[0], config.mp_range[1] + 1))
        levels = rng.integers(0, depth, size=m_p)
        pathology = prefix[leaf, levels] + config.noise_scale * rng.normal(size=(m_p, d))
        genomics = np.stack([prefix[leaf, pathway_depth[m] - 1] @ pathway_mix[m] for m in range(config.m_g)])
        genomics = genomics + config.noise_scale * rng.normal(size=genomics.shape)

        event = rng.exponential(1.0 / rates[leaf])
        censor_time = rng.uniform(0.0, horizon) if np.isfinite(horizon) else np.inf
        censor = int(censor_time < event)
        time = max(float(min(event, censor_time)), 1e-3)

        write_matrix(out / "pathology" / f"{pid}.hspm", pathology)
        write_matrix(out / "genomics" / f"{pid}.hspm", genomics)
        lines.append(json.dumps({
            "patient_id": pid,
            "time_months": time,
            "censor": censor,
            "pathology_path": f"pathology/{pid}.hspm",
            "genomics_path": f"genomics/{pid}.hspm",
            "leaf": leaf,
            "latent_risk": float(rates[leaf] / config.base_rate),
        }))
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return read_manifest(out / MANIFEST_NAME)
