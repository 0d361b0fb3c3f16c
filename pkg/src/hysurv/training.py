"""Desk-scale training and evaluation loop."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffengine as de
from .fusion import FusionParams, forward_batch, init_params
from .losses import (HazardOutput, LossConfig, censor_constraint, nll_survival, penalty_sum,
                     ranking_loss, total_loss)
from .survstats import (assign_bins, concordance_index, logrank_test, quantile_edges,
                        records_from_arrays, stratify)

log = logging.getLogger(__name__)

INIT_MODES = ("random", "zeros")


@dataclass
class RunConfig:
    """Every knob of a run.  Keys double as config-file keys and CLI flags."""

    seed: int = 0
    curvature: float = 1.0
    lam: float = 0.1
    gamma: float = 0.001
    alpha: float = 1.0
    tau: float = 0.1
    K: float = 0.1
    c_low: float = 1.5
    c_high: float = 1.2
    n_ranks: int = 3
    rank_width_months: float = 6.0
    negative_gap_months: float = 24.0
    penalty_mode: str = "standard"
    swap_censor_targets: bool = False
    n_bins: int = 4
    d_h: int = 32
    n_heads: int = 4
    epochs: int = 30
    learning_rate: float = 0.003
    batch_size: int = 32
    init: str = "random"
    data: str = ""
    out: str = "run"
    checkpoint: str = ""

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            setattr(self, f.name, _coerce(f.name, f.type, value))
        self.validate()

    def validate(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        if self.d_h < 1 or self.n_heads < 1 or self.d_h % self.n_heads:
            raise ValueError("d_h must be a positive multiple of n_heads")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        self.loss_config()  # range checks for every loss hyperparameter

    def loss_config(self) -> LossConfig:
        return LossConfig(c=self.curvature, K=self.K, alpha=self.alpha, lam=self.lam, gamma=self.gamma,
                          n_ranks=self.n_ranks, tau=self.tau, rank_width_months=self.rank_width_months,
                          negative_gap_months=self.negative_gap_months, c_low=self.c_low,
                          c_high=self.c_high, penalty_mode=self.penalty_mode,
                          swap_censor_targets=self.swap_censor_targets)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _coerce(name, type_name, value):
    kind = _TYPES[type_name if isinstance(type_name, str) else type_name.__name__]
    if kind is bool and isinstance(value, str):
        low = value.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {value!r}")
        return low in ("true", "1", "yes")
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name}: expected {kind.__name__}, got {value!r}") from None
    if kind is float and not np.isfinite(out):
        raise ValueError(f"{name}: must be finite")
    if kind is int and isinstance(value, float) and value != out:
        raise ValueError(f"{name}: expected an integer, got {value!r}")
    return out


def is_validation(patient_id: str) -> bool:
    """Deterministic 80/20 split keyed on the patient id."""
    digest = hashlib.sha256(patient_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % 5 == 0


def split_indices(bags):
    val = np.array([is_validation(b.patient_id) for b in bags])
    return np.flatnonzero(~val), np.flatnonzero(val)


def predict_risk(bags, params: FusionParams, c) -> np.ndarray:
    logits = forward_batch(bags, params.tensors, c).logits
    return HazardOutput(logits).risk


def evaluate_cindex(bags, params, c) -> float:
    risk = predict_risk(bags, params, c)
    records = records_from_arrays([b.time_months for b in bags], [b.censor for b in bags], risk)
    return concordance_index(records)


def stratified_logrank(bags, risk):
    groups = stratify(risk)
    times = np.array([b.time_months for b in bags])
    censors = np.array([b.censor for b in bags])
    recs = records_from_arrays(times, censors, risk)
    low = [r for r, g in zip(recs, groups) if g == "low"]
    high = [r for r, g in zip(recs, groups) if g == "high"]
    return logrank_test(low, high)


def _batches(order, batch_size):
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def batch_objective(bags, labels, cfg: LossConfig, components: dict | None = None):
    """Closure computing the composite loss of ``bags`` from a parameter dict."""
    times = np.array([b.time_months for b in bags])
    censors = np.array([b.censor for b in bags])
    has_rank_pairs = any(np.any((np.abs(times - t) < cfg.n_ranks * cfg.rank_width_months)
                                & (np.arange(len(times)) != i)) for i, t in enumerate(times))

    def objective(params):
        out = forward_batch(bags, params, cfg.c)
        surv = nll_survival(out.logits, labels, censors)
        rank = ranking_loss(out.fused, times, cfg) if has_rank_pairs else 0.0
        pen = penalty_sum(out.gen, out.path, cfg)
        cens = censor_constraint(out.fused, censors, cfg.c, cfg.c_low, cfg.c_high, cfg.swap_censor_targets)
        total = total_loss(surv, rank + cfg.alpha * pen, cens, cfg.lam, cfg.gamma)
        if components is not None:
            components.update(loss_surv=surv, loss_rank=rank, penalty_sum=pen, loss_censor=cens,
                              loss_total=total)
        return total

    return objective


@dataclass
class TrainResult:
    params: FusionParams
    edges: np.ndarray
    metrics: list = field(default_factory=list)
    train_idx: np.ndarray = None
    val_idx: np.ndarray = None


def train(bags, config: RunConfig, metrics_path=None) -> TrainResult:
    """Fit fusion parameters with Adam on the composite loss.

    One metrics record per epoch is appended to ``metrics_path`` (ndjson) if
    given.  Everything is seeded from ``config.seed``.
    """
    cfg = config.loss_config()
    train_idx, val_idx = split_indices(bags)
    if len(train_idx) < config.n_bins or len(val_idx) < 2:
        raise ValueError("dataset too small for the 80/20 split")
    times = np.array([b.time_months for b in bags])
    censors = np.array([b.censor for b in bags])
    edges = quantile_edges(times[train_idx], censors[train_idx], config.n_bins)
    labels = assign_bins(times, edges)

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    d = bags[0].pathology.shape[1]
    params = init_params(d, config.d_h, config.n_bins, config.n_heads, rng=np.random.default_rng(seeds[0]),
                         zero=config.init == "zeros")
    shuffle_rng = np.random.default_rng(seeds[1])
    opt = de.Adam(config.learning_rate)
    result = TrainResult(params, edges, [], train_idx, val_idx)
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            sums = dict.fromkeys(("loss_total", "loss_surv", "loss_rank", "penalty_sum", "loss_censor"), 0.0)
            chunks = _batches(shuffle_rng.permutation(train_idx), config.batch_size)
            for chunk in chunks:
                comps = {}
                graph = de.Graph(batch_objective([bags[i] for i in chunk], labels[chunk], cfg, comps))
                graph.evaluate(params.tensors)
                grads = graph.backward()
                bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
                if bad:
                    raise FloatingPointError(f"epoch {epoch}: non-finite gradient for {bad[0]}")
                params = FusionParams(opt.step(params.tensors, grads), params.n_heads)
                for k in sums:
                    sums[k] += float(de.value_of(comps[k]))
            record = {"epoch": epoch}
            record.update({k: v / len(chunks) for k, v in sums.items()})
            record["val_cindex"] = evaluate_cindex([bags[i] for i in val_idx], params, cfg.c)
            result.metrics.append(record)
            log.info("epoch %d: %s", epoch, record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    result.params = params
    return result
