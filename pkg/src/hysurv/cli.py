"""Command-line entry point.

    hysurv gen --n 200 --seed 7 --out data/
    hysurv train --data data/ --seed 7 --out run/
    hysurv eval --data data/ --checkpoint run/model.hspc
    hysurv km --data data/ --checkpoint run/model.hspc --csv km.csv
    hysurv logrank --data data/ --checkpoint run/model.hspc
    hysurv gradcheck --seed 1

Every flag can also be given as a ``key = value`` line in ``--config``
(dashes become underscores); flags win.  Exit codes: 0 success,
1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .audit import LOSS_NAMES, gradient_audit
from .dataio import ManifestError, MatrixFormatError, SynthConfig, generate_synthetic, read_manifest
from .fusion import CheckpointError, load_checkpoint, save_checkpoint
from .survstats import km_estimate, records_from_arrays, stratify, write_km_csv
from .training import RunConfig, evaluate_cindex, predict_risk, split_indices, stratified_logrank, train

GRADCHECK_TOLERANCE = 1e-4
RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
# config-file / flag spellings that differ from attribute names
ALIASES = {"lambda": "lam", "n": "n_patients"}
GEN_KEYS = {"n_patients", "mp_min", "mp_max", "m_g", "d", "censor_rate", "tree_depth", "branching",
            "noise_scale", "risk_spread", "base_rate"}


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _add_run_flags(p, keys):
    for key in keys:
        flag = "--" + ("lambda" if key == "lam" else key.replace("_", "-"))
        p.add_argument(flag, dest=key, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hysurv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("gen", help="write a synthetic dataset")
    gen.add_argument("--config")
    gen.add_argument("--n", dest="n_patients", default=None)
    _add_run_flags(gen, ["seed", "out"] + sorted(GEN_KEYS - {"n_patients"}))

    train_keys = sorted(RUN_KEYS - {"checkpoint"})
    tr = sub.add_parser("train", help="fit the model and write a checkpoint")
    tr.add_argument("--config")
    _add_run_flags(tr, train_keys)

    for name, helptext in (("eval", "print the C-index of a checkpoint"),
                           ("km", "write stratified Kaplan-Meier curves as CSV"),
                           ("logrank", "log-rank test between median-split risk groups")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        _add_run_flags(p, ["data", "checkpoint", "out"])
        p.add_argument("--split", choices=("all", "train", "val"), default="all")
        if name == "km":
            p.add_argument("--csv", default=None)

    gc = sub.add_parser("gradcheck", help="finite-difference audit of every loss")
    gc.add_argument("--config")
    _add_run_flags(gc, ["seed"])
    return parser


def _merged(args) -> dict:
    """Config-file values overridden by explicitly given flags."""
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = ALIASES.get(key, key)
            if key not in RUN_KEYS | GEN_KEYS:
                raise ValidationError(f"{path}:{line_no}: unknown key {key!r}")
            values[key] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "split", "csv"):
            values[key] = value
    return values


def _run_config(values) -> RunConfig:
    try:
        return RunConfig(**{k: v for k, v in values.items() if k in RUN_KEYS})
    except ValueError as exc:
        raise ValidationError(f"invalid config: {exc}") from None


def _cmd_gen(values):
    kwargs = {}
    for key in GEN_KEYS - {"mp_min", "mp_max"}:
        if key in values:
            field_type = {f.name: f.type for f in dataclasses.fields(SynthConfig)}[key]
            kwargs[key] = int(values[key]) if field_type == "int" else float(values[key])
    if "mp_min" in values or "mp_max" in values:
        kwargs["mp_range"] = (int(values.get("mp_min", 8)), int(values.get("mp_max", 16)))
    kwargs["seed"] = int(values.get("seed", 0))
    out = Path(values.get("out", "data"))
    try:
        config = SynthConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid generator config: {exc}") from None
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = generate_synthetic(config, out)
    except OSError as exc:
        raise ValidationError(f"cannot write dataset to {out}: {exc}") from None
    (out / "gen_config.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items()))
    print(f"wrote {len(manifest)} patients to {out} (censored fraction {manifest.censors.mean():.3f})")


def _load_bags(data):
    if not data:
        raise ValidationError("--data is required")
    path = Path(data)
    if not path.exists():
        raise ValidationError(f"dataset not found: {path}")
    return read_manifest(path).bags()


def _cmd_train(values):
    cfg = _run_config(values)
    bags = _load_bags(cfg.data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text().replace("lam = ", "lambda = "))
    result = train(bags, cfg, metrics_path=out / "metrics.ndjson")
    save_checkpoint(out / "model.hspc", result.params, cfg.curvature, extra={"edges": result.edges})
    last = result.metrics[-1]["val_cindex"] if result.metrics else float("nan")
    print(f"trained {cfg.epochs} epochs; validation C-index {last:.4f}; checkpoint {out / 'model.hspc'}")


def _scored_subset(values, split):
    cfg = _run_config(values)
    if not cfg.checkpoint:
        raise ValidationError("--checkpoint is required")
    if not Path(cfg.checkpoint).is_file():
        raise ValidationError(f"checkpoint not found: {cfg.checkpoint}")
    params, c, _ = load_checkpoint(cfg.checkpoint)
    bags = _load_bags(cfg.data)
    if split != "all":
        train_idx, val_idx = split_indices(bags)
        bags = [bags[i] for i in (val_idx if split == "val" else train_idx)]
    return bags, params, c, cfg


def _cmd_eval(values, split):
    bags, params, c, _ = _scored_subset(values, split)
    print(f"c_index {evaluate_cindex(bags, params, c)!r}")


def _cmd_km(values, split, csv_path):
    bags, params, c, cfg = _scored_subset(values, split)
    risk = predict_risk(bags, params, c)
    groups = stratify(risk)
    recs = records_from_arrays([b.time_months for b in bags], [b.censor for b in bags], risk)
    curves = [(g, km_estimate([r for r, lab in zip(recs, groups) if lab == g])) for g in ("low", "high")]
    path = Path(csv_path or Path(cfg.out) / "km.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_km_csv(path, curves)
    print(f"wrote {path}")


def _cmd_logrank(values, split):
    bags, params, c, _ = _scored_subset(values, split)
    chi2, p = stratified_logrank(bags, predict_risk(bags, params, c))
    print(f"chi_square {chi2!r}")
    print(f"p_value {p!r}")


def _cmd_gradcheck(values):
    cfg = _run_config(values)
    report = gradient_audit(cfg.seed)
    for name in LOSS_NAMES:
        print(f"{name} {report[name]:.3e}")
    worst = max(report.values())
    if worst > GRADCHECK_TOLERANCE:
        print(f"gradient audit failed: max relative error {worst:.3e} > {GRADCHECK_TOLERANCE:g}",
              file=sys.stderr)
        return 2
    return 0


def run(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ValidationError("a subcommand is required: gen | train | eval | km | logrank | gradcheck")
        values = _merged(args)
        if args.command == "gen":
            _cmd_gen(values)
        elif args.command == "train":
            _cmd_train(values)
        elif args.command == "eval":
            _cmd_eval(values, args.split)
        elif args.command == "km":
            _cmd_km(values, args.split, args.csv)
        elif args.command == "logrank":
            _cmd_logrank(values, args.split)
        elif args.command == "gradcheck":
            return _cmd_gradcheck(values)
    except (ValidationError, ManifestError, MatrixFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
