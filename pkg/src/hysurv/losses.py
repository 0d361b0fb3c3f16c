"""Training objectives: discrete-hazard NLL, ranking contrastive loss,
entailment-cone penalty, censor-conditioned radius constraint.

Every loss is written with :mod:`hysurv.diffengine` primitives so it can be
evaluated on plain arrays or differentiated through a graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .geometry import LorentzPoint, check_curvature, geodesic_distance, lift_to_lorentz, lorentz_inner

HAZARD_EPS = 1e-7
PENALTY_MODES = ("standard", "literal")
DEGENERATE_TOL = 1e-12


@dataclass
class LossConfig:
    c: float = 1.0
    K: float = 0.1
    alpha: float = 1.0
    lam: float = 0.1
    gamma: float = 0.001
    n_ranks: int = 3
    tau: tuple = (0.1, 0.1, 0.1)
    rank_width_months: float = 6.0
    negative_gap_months: float = 24.0
    c_low: float = 1.5
    c_high: float = 1.2
    penalty_mode: str = "standard"
    swap_censor_targets: bool = False

    def __post_init__(self):
        self.c = check_curvature(self.c)
        if np.isscalar(self.tau):
            self.tau = (float(self.tau),) * self.n_ranks
        self.tau = tuple(float(t) for t in self.tau)
        if self.n_ranks < 1:
            raise ValueError("n_ranks must be at least 1")
        if len(self.tau) != self.n_ranks:
            raise ValueError(f"need {self.n_ranks} temperatures, got {len(self.tau)}")
        if any(t <= 0 for t in self.tau):
            raise ValueError("temperatures must be positive")
        if self.K <= 0:
            raise ValueError("K must be positive")
        for name, label in (("alpha", "alpha"), ("lam", "lambda"), ("gamma", "gamma")):
            if getattr(self, name) < 0:
                raise ValueError(f"{label} must be nonnegative")
        if not self.c_low > self.c_high >= 1.0:
            raise ValueError(f"need c_low > c_high >= 1, got c_low={self.c_low}, c_high={self.c_high}")
        if self.rank_width_months <= 0:
            raise ValueError("rank_width_months must be positive")
        if self.negative_gap_months < self.n_ranks * self.rank_width_months:
            raise ValueError("negative_gap_months must not overlap the positive bands")
        if self.penalty_mode not in PENALTY_MODES:
            raise ValueError(f"penalty_mode must be one of {PENALTY_MODES}")


# -- survival likelihood ---------------------------------------------------

@dataclass
class HazardOutput:
    """Per-interval hazards and the implied survival curve (plain arrays)."""

    logits: np.ndarray
    hazards: np.ndarray = field(init=False)
    survival: np.ndarray = field(init=False)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.hazards = np.clip(de.sigmoid(self.logits), HAZARD_EPS, 1 - HAZARD_EPS)
        self.survival = np.cumprod(1.0 - self.hazards, axis=-1)

    @property
    def risk(self):
        """Scalar risk score, higher meaning earlier expected death."""
        return -np.sum(self.survival, axis=-1)


def nll_survival(logits, labels, censors):
    """Censored discrete-hazard negative log-likelihood, averaged over the batch.

    ``logits`` has shape ``(B, N_t)``; ``labels`` are interval indices in
    ``1..N_t``; ``censors`` is 1 for unobserved outcomes and 0 for deaths.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    censors = np.atleast_1d(np.asarray(censors, dtype=np.float64))
    if de.value_of(logits).ndim == 1:
        logits = de.reshape(logits, (1, -1))
    batch, n_bins = de.value_of(logits).shape
    if np.any(labels < 1) or np.any(labels > n_bins):
        raise ValueError(f"interval labels must lie in 1..{n_bins}")

    h = de.clamp(de.sigmoid(logits), HAZARD_EPS, 1.0 - HAZARD_EPS)
    log_surv_step = de.log(1.0 - h)
    upper = np.triu(np.ones((n_bins, n_bins)))
    log_s = de.matmul(log_surv_step, upper)  # log S(t) = sum_{j<=t} log(1 - h_j)
    log_s_pad = de.concat([np.zeros((batch, 1)), log_s], axis=1)
    rows = np.arange(batch)
    log_s_prev = log_s_pad[rows, labels - 1]
    log_s_at = log_s_pad[rows, labels]
    log_h_at = de.log(h[rows, labels - 1])
    per_sample = -(1.0 - censors) * (log_s_prev + log_h_at) - censors * log_s_at
    return de.mean(per_sample)


# -- ranking contrastive loss ----------------------------------------------

def critic(q_emb, p_emb, c):
    """Embedding similarity: negative geodesic distance."""
    return -geodesic_distance(q_emb, p_emb, c)


@dataclass
class RankedBatch:
    query: int
    positives: list  # list of index arrays, nearest band first
    negatives: np.ndarray

    @property
    def has_positives(self) -> bool:
        return any(len(p) for p in self.positives)


def build_rank_sets(times, query: int, config: LossConfig) -> RankedBatch:
    """Group batch members into survival-time bands around ``times[query]``.

    Band ``i`` holds samples with ``(i-1) w <= |dt| < i w``; samples with
    ``|dt| >= negative_gap`` are negatives; anything in between is dropped.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2:
        raise ValueError("ranking needs a batch of at least two samples")
    gap = np.abs(times - times[query])
    idx = np.arange(times.size)
    others = idx != query
    w = config.rank_width_months
    positives = [idx[others & (gap >= i * w) & (gap < (i + 1) * w)] for i in range(config.n_ranks)]
    negatives = idx[others & (gap >= config.negative_gap_months)]
    return RankedBatch(query, positives, negatives)


def ranked_terms(scores, ranked: RankedBatch, taus):
    """Sum of per-rank terms for one query given its critic row."""
    total = 0.0
    for i, pos in enumerate(ranked.positives):
        if len(pos) == 0:
            continue
        denom_idx = np.concatenate([*ranked.positives[i:], ranked.negatives])
        scaled = scores / taus[i]
        num = de.logsumexp(scaled[pos], axis=0)
        den = de.logsumexp(scaled[denom_idx], axis=0)
        total = total + (den - num)
    return total


def ranking_contrastive(embeddings, ranked: RankedBatch, config: LossConfig):
    """Ranking loss for one query: sum over bands of ``-log(num / den)``."""
    if not ranked.has_positives:
        raise ValueError("all positive rank sets are empty")
    q = embeddings[ranked.query]
    scores = critic(q, embeddings, config.c)
    return ranked_terms(scores, ranked, config.tau)


def ranking_loss(embeddings, times, config: LossConfig):
    """Mean of :func:`ranking_contrastive` over every query with a positive."""
    times = np.asarray(times, dtype=np.float64)
    n = times.size
    pairwise = None
    total, used = 0.0, 0
    for q in range(n):
        ranked = build_rank_sets(times, q, config)
        if not ranked.has_positives:
            continue
        if pairwise is None:
            e = embeddings
            pairwise = critic(de.reshape(e, (n, 1, -1)), de.reshape(e, (1, n, -1)), config.c)
        total = total + ranked_terms(pairwise[q], ranked, config.tau)
        used += 1
    if used == 0:
        raise ValueError("no query in the batch has a nonempty positive set")
    return total / used


# -- entailment cones --------------------------------------------------------

def half_aperture(x_g: LorentzPoint, c, K):
    """Half-aperture of the cone at ``x_g``: ``asin(2K / (sqrt(c) ||space||))``."""
    space_norm = de.norm(x_g.space, axis=-1)
    if np.any(de.value_of(space_norm) <= 0):
        raise ValueError("entailment cone is undefined at the hyperboloid apex")
    return de.asin(de.clamp(2.0 * K / (np.sqrt(c) * space_norm), 0.0, 1.0))


def exterior_angle(x_g: LorentzPoint, x_p: LorentzPoint, c, return_degenerate=False):
    """Angle at ``x_g`` between the cone axis and the geodesic towards ``x_p``.

    Coincident pairs, where the expression has no direction, yield 0 and are
    reported through the optional degenerate mask.  Rounding puts the
    ``(c<x_g, x_p>_L)^2 - 1`` term of a coincident pair within a few ulps of
    zero on either side, so anything below ``DEGENERATE_TOL`` counts.
    """
    inner = c * lorentz_inner(x_g, x_p)
    space_norm = de.norm(x_g.space, axis=-1)
    if np.any(de.value_of(space_norm) <= 0):
        raise ValueError("exterior angle is undefined at the hyperboloid apex")
    root_arg = inner * inner - 1.0
    degenerate = de.value_of(root_arg) <= DEGENERATE_TOL
    num = x_p.time + x_g.time * inner
    den = space_norm * de.sqrt(de.clamp(root_arg, 1e-300))
    angle = de.acos(de.clamp(num / den, -1.0, 1.0))
    angle = de.where(degenerate, 0.0, angle) if np.any(degenerate) else angle
    if return_degenerate:
        return angle, degenerate
    return angle


def penalty_from_angles(ext, aper, mode="standard"):
    if mode == "standard":
        return de.relu(ext - aper)
    if mode == "literal":
        return de.relu(1.0 - (ext - aper) / np.pi)
    raise ValueError(f"unknown penalty mode {mode!r}")


def entailment_penalty(x_g: LorentzPoint, x_p: LorentzPoint, c, K, mode="standard"):
    """Cone violation penalty per pair (no reduction)."""
    return penalty_from_angles(exterior_angle(x_g, x_p, c), half_aperture(x_g, c, K), mode)


def penalty_sum(gen_emb, path_emb, config: LossConfig):
    """Summed penalty over per-patient (genomics, pathology) ball embeddings."""
    x_g = lift_to_lorentz(gen_emb, config.c)
    x_p = lift_to_lorentz(path_emb, config.c)
    return de.sum(entailment_penalty(x_g, x_p, config.c, config.K, config.penalty_mode))


def arcl_loss(embeddings, times, gen_emb, path_emb, config: LossConfig):
    """Ranking loss regularised by ``alpha`` times the summed cone penalty."""
    return ranking_loss(embeddings, times, config) + config.alpha * penalty_sum(gen_emb, path_emb, config)


# -- censor-conditioned constraint -------------------------------------------

def target_radii(c, c_low, c_high, swap=False):
    """Target norms ``(r_0, r_1)`` for uncensored and censored samples."""
    if c_high < 1:
        raise ValueError("c_high must be >= 1 (arcosh domain)")
    if not c_low > c_high:
        raise ValueError("c_low must exceed c_high")
    scale = np.sqrt(1.0 / c)
    r0, r1 = scale * np.arccosh(c_high), scale * np.arccosh(c_low)
    return (r1, r0) if swap else (r0, r1)


def censor_constraint(fused, censors, c, c_low, c_high, swap=False):
    """Mean absolute gap between each embedding norm and its group's target."""
    censors = np.asarray(censors)
    r0, r1 = target_radii(c, c_low, c_high, swap)
    norms = de.norm(fused, axis=-1)
    total = 0.0
    for flag, radius in ((0, r0), (1, r1)):
        idx = np.flatnonzero(censors == flag)
        if idx.size:
            total = total + de.mean(de.abs(norms[idx] - radius))
    return total


def total_loss(surv, arcl_reg, censor, lam=0.1, gamma=0.001):
    return surv + lam * arcl_reg + gamma * censor
