"""Finite-difference audits of every training objective.

Each case draws a random, well-conditioned input (away from clamp edges and
from the ``max(0, .)`` kink), builds a scalar function of named leaves and
hands it to :func:`hysurv.diffengine.finite_diff_check`.  Ball-valued inputs
are parameterised by tangent vectors so perturbations never leave the ball.
"""

from __future__ import annotations

import numpy as np

from . import diffengine as de
from .fusion import PatientBag, forward_batch, init_params
from .geometry import exp_map0, lift_to_lorentz
from .losses import (LossConfig, censor_constraint, entailment_penalty, exterior_angle, half_aperture,
                     nll_survival, penalty_sum, ranking_loss, target_radii, total_loss)

LOSS_NAMES = ("nll_survival", "ranking_contrastive", "entailment_penalty_standard",
              "entailment_penalty_literal", "censor_constraint", "total_loss")


def _nll_case(rng, batch=8, n_bins=4):
    labels = rng.integers(1, n_bins + 1, size=batch)
    censors = rng.integers(0, 2, size=batch)
    return (lambda p: nll_survival(p["logits"], labels, censors),
            {"logits": rng.normal(size=(batch, n_bins))})


def _ranking_case(rng, cfg, batch=10, dim=6):
    times = rng.uniform(1.0, 60.0, size=batch)
    times[1] = times[0] + 1.0  # guarantees at least one nonempty band
    return (lambda p: ranking_loss(exp_map0(p["tangent"], cfg.c), times, cfg),
            {"tangent": 0.6 * rng.normal(size=(batch, dim))})


def _well_posed_pairs(rng, cfg, n_pairs, dim):
    """Tangent pairs whose cone geometry is away from every clamp and kink."""
    g_rows, p_rows = [], []
    while len(g_rows) < n_pairs:
        tg = rng.normal(size=dim) * rng.uniform(0.3, 1.5) / np.sqrt(dim)
        tp = rng.normal(size=dim) * rng.uniform(0.3, 1.5) / np.sqrt(dim)
        xg = lift_to_lorentz(exp_map0(tg, cfg.c), cfg.c)
        xp = lift_to_lorentz(exp_map0(tp, cfg.c), cfg.c)
        s = np.linalg.norm(xg.space)
        inner = cfg.c * (-xg.time * xp.time + xg.space @ xp.space)
        cos_arg = (xp.time + xg.time * inner) / (s * np.sqrt(max(inner * inner - 1.0, 1e-300)))
        if 2 * cfg.K / (np.sqrt(cfg.c) * s) > 0.95 or abs(cos_arg) > 0.95:
            continue
        gap = float(exterior_angle(xg, xp, cfg.c) - half_aperture(xg, cfg.c, cfg.K))
        if abs(gap) < 0.05:
            continue
        g_rows.append(tg)
        p_rows.append(tp)
    return np.array(g_rows), np.array(p_rows)


def _penalty_case(rng, mode, n_pairs=8, dim=6):
    cfg = LossConfig(penalty_mode=mode)
    tg, tp = _well_posed_pairs(rng, cfg, n_pairs, dim)

    def f(p):
        xg = lift_to_lorentz(exp_map0(p["gen"], cfg.c), cfg.c)
        xp = lift_to_lorentz(exp_map0(p["path"], cfg.c), cfg.c)
        return de.sum(entailment_penalty(xg, xp, cfg.c, cfg.K, mode))

    return f, {"gen": tg, "path": tp}


def _censor_case(rng, cfg, batch=12, dim=6):
    censors = rng.integers(0, 2, size=batch)
    censors[:2] = (0, 1)
    r0, r1 = target_radii(cfg.c, cfg.c_low, cfg.c_high)
    tangent = rng.normal(size=(batch, dim))
    radius = np.where(censors == 0, r0, r1) + rng.choice([-1, 1], batch) * rng.uniform(0.05, 0.2, batch)
    # tangent length giving the requested ball radius: artanh(sqrt(c) r) / sqrt(c)
    length = np.arctanh(np.sqrt(cfg.c) * np.clip(radius, 0.05, 0.95)) / np.sqrt(cfg.c)
    tangent *= (length / np.linalg.norm(tangent, axis=1))[:, None]
    return (lambda p: censor_constraint(exp_map0(p["tangent"], cfg.c), censors, cfg.c, cfg.c_low, cfg.c_high),
            {"tangent": tangent})


def _total_case(rng, cfg, batch=4, d=6, d_h=8, n_bins=4):
    bags = [PatientBag(f"a{i}", rng.normal(size=(int(rng.integers(2, 5)), d)),
                       rng.normal(size=(3, d)), float(rng.uniform(1, 30)), int(i % 2))
            for i in range(batch)]
    bags[1].time_months = bags[0].time_months + 2.0
    times = np.array([b.time_months for b in bags])
    censors = np.array([b.censor for b in bags])
    labels = rng.integers(1, n_bins + 1, size=batch)
    params = init_params(d, d_h, n_bins, n_heads=2, rng=rng).tensors
    for k in params:
        if k.endswith(".b"):
            params[k] = 0.1 * rng.normal(size=params[k].shape)

    def f(p):
        out = forward_batch(bags, p, cfg.c)
        arcl = ranking_loss(out.fused, times, cfg) + cfg.alpha * penalty_sum(out.gen, out.path, cfg)
        cens = censor_constraint(out.fused, censors, cfg.c, cfg.c_low, cfg.c_high)
        return total_loss(nll_survival(out.logits, labels, censors), arcl, cens, cfg.lam, cfg.gamma)

    return f, params


def audit_case(name, seed, step=1e-5):
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    if name == "nll_survival":
        f, point = _nll_case(rng)
    elif name == "ranking_contrastive":
        f, point = _ranking_case(rng, cfg)
    elif name == "entailment_penalty_standard":
        f, point = _penalty_case(rng, "standard")
    elif name == "entailment_penalty_literal":
        f, point = _penalty_case(rng, "literal")
    elif name == "censor_constraint":
        f, point = _censor_case(rng, cfg)
    elif name == "total_loss":
        f, point = _total_case(rng, cfg)
    else:
        raise KeyError(f"unknown loss {name!r}")
    return de.finite_diff_check(f, point, step)


def gradient_audit(seed=0, names=LOSS_NAMES, step=1e-5) -> dict[str, float]:
    """Max relative error per loss for one seed."""
    return {name: audit_case(name, seed, step).max_rel_error for name in names}
