"""``tfcam`` command line: generate -> train -> evaluate -> explain, plus compare.

Exit codes: 0 success, 2 usage or validation error, 3 runtime or numeric
failure.  Every subcommand accepts ``--config FILE.json`` whose keys mirror
the long flag names (dashes as underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace


from . import checkpoint
from .checkpoint import CheckpointError, atomic_write
from .data import (DataFormatError, GeneratorSpec, IMPUTE_POLICIES, Preprocessor, SplitSpec,
                   generate_cohort, load_csv, split)
from .evaluation import (REPORT_COLUMNS, UndefinedMetricError, capability_flags, rows_to_csv,
                         rows_to_text, compare_models, score)
from .explainability import (InfluenceQuery, alpha_csv, attention_csv, build_influence_hierarchy,
                             export_graph, feature_importance, importance_csv, profile_csv,
                             temporal_profile)
from .models import CAPABILITIES, MODEL_KINDS, ModelConfig, NumericalError
from .training import predict, train

logger = logging.getLogger("tfcam")

LOG_ENV = "TFCAM_LOG_LEVEL"


class UsageError(Exception):
    """Bad input detected before or during setup (exit 2)."""


class RunError(Exception):
    """Failure while computing (exit 3)."""


DEFAULTS = {
    "generate": {"patients": 1422, "prevalence": 0.06, "timesteps": 8, "signal": 1.0,
                 "noise": 0.25, "seed": 7, "spec": None, "spec_out": None, "output": None},
    "train": {"model": "tfcam", "data": None, "output": None, "history": None, "seed": 0,
              "split_seed": None, "split": "0.7,0.1,0.2", "impute": "carry_forward",
              "policy": "auto", "epochs": 50, "embed_dim": 32, "lstm_hidden": 32,
              "layers": 2, "heads": 4, "causal": True, "lr": 1e-3, "batch_size": 64,
              "pos_weight": None},
    "evaluate": {"checkpoint": None, "data": None, "output": None, "subset": "test",
                 "threshold": 0.5},
    "explain": {"checkpoint": None, "data": None, "output": None, "level": None,
                "subset": "all", "depth": 3, "top_k": 3, "scope": "cohort",
                "root": "prediction"},
    "compare": {"data": None, "output": None, "seeds": [0, 1, 2], "split_seed": 0,
                "split": "0.7,0.1,0.2", "impute": "carry_forward", "policy": "auto",
                "epochs": 50, "embed_dim": 32, "lstm_hidden": 32, "layers": 2, "heads": 4,
                "causal": True, "lr": 1e-3, "batch_size": 64, "jobs": 1},
}


def _model_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--lstm-hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--no-causal", dest="causal", action="store_const", const=False)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)


def _data_flags(p):
    p.add_argument("--split", help="train,val,test fractions (default 0.7,0.1,0.2)")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--impute", choices=IMPUTE_POLICIES)
    p.add_argument("--policy", help="auto | zscore | log1p_zscore | none")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfcam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic cohort CSV and its spec JSON")
    g.add_argument("--patients", type=int)
    g.add_argument("--prevalence", type=float)
    g.add_argument("--timesteps", type=int)
    g.add_argument("--signal", type=float, help="progressor trend strength")
    g.add_argument("--noise", type=float, help="within-patient noise as a fraction of SD")
    g.add_argument("--seed", type=int)
    g.add_argument("--spec", help="GeneratorSpec JSON to start from")
    g.add_argument("--spec-out", help="where to write the spec (default <output>.spec.json)")
    g.add_argument("-o", "--output")

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    t.add_argument("--model", choices=MODEL_KINDS)
    t.add_argument("--data")
    t.add_argument("--seed", type=int)
    t.add_argument("--history", help="per-epoch loss CSV (default <output>.history.csv)")
    t.add_argument("--pos-weight", type=float)
    t.add_argument("-o", "--output")
    _data_flags(t)
    _model_flags(t)

    e = sub.add_parser("evaluate", help="score checkpoints on their held-out split")
    e.add_argument("--checkpoint", nargs="+")
    e.add_argument("--data")
    e.add_argument("--subset", choices=("train", "val", "test", "all"))
    e.add_argument("--threshold", type=float)
    e.add_argument("-o", "--output", help="report CSV; a .txt table is written alongside")

    x = sub.add_parser("explain", help="temporal, feature or cross-temporal explanations")
    x.add_argument("--checkpoint")
    x.add_argument("--data")
    x.add_argument("--level", choices=("temporal", "feature", "influence", "cross"))
    x.add_argument("--subset", choices=("train", "val", "test", "all"))
    x.add_argument("--depth", type=int)
    x.add_argument("--top-k", type=int)
    x.add_argument("--scope", help="cohort | patient:<id>")
    x.add_argument("--root", help="prediction | <feature>@t<k>")
    x.add_argument("-o", "--output", help="output directory")

    c = sub.add_parser("compare", help="train lstm, retain and tfcam over several seeds")
    c.add_argument("--data")
    c.add_argument("--seeds", type=int, nargs="+")
    c.add_argument("--jobs", type=int)
    c.add_argument("-o", "--output", help="report CSV; a .txt table is written alongside")
    _data_flags(c)
    _model_flags(c)

    for p in (g, t, e, x, c):
        p.add_argument("--config", help="JSON file with default values for any flag")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults < config file < explicit flags."""
    defaults = DEFAULTS[args.command]
    merged = dict(defaults)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(file_values) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys for '{args.command}': {unknown}")
        merged.update(file_values)
        explicit = set(file_values)
    else:
        explicit = set()
    for key, value in vars(args).items():
        if key in defaults and value is not None:
            merged[key] = value
            explicit.add(key)
    merged["_explicit"] = explicit
    return merged


def _require(opts, *keys):
    for key in keys:
        if opts.get(key) in (None, ""):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _check_readable(path):
    if not os.path.isfile(path) or not os.access(path, os.R_OK):
        raise UsageError(f"cannot read {path}")


def _check_writable(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise UsageError(f"cannot write to {path}")


def _sibling(path, suffix):
    return os.path.splitext(path)[0] + suffix


def _split_spec(opts) -> SplitSpec:
    try:
        fracs = [float(v) for v in str(opts["split"]).split(",")]
        if len(fracs) != 3:
            raise ValueError("need three fractions")
        seed = opts["split_seed"] if opts["split_seed"] is not None else opts.get("seed", 0)
        return SplitSpec(*fracs, stratified=True, seed=seed)
    except ValueError as exc:
        raise UsageError(f"bad --split: {exc}") from None


def _policy(value):
    if isinstance(value, str) and value.startswith("{"):
        return json.loads(value)
    return value


def _load_data(path, impute="carry_forward"):
    _check_readable(path)
    try:
        return load_csv(path, impute)
    except DataFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write_text(path, text):
    atomic_write(path, text.encode("utf-8"))


def cmd_generate(opts) -> int:
    _require(opts, "output")
    _check_writable(opts["output"])
    spec_out = opts["spec_out"] or _sibling(opts["output"], ".spec.json")
    _check_writable(spec_out)
    try:
        if opts["spec"]:
            _check_readable(opts["spec"])
            with open(opts["spec"], encoding="utf-8") as fh:
                spec = GeneratorSpec.from_json(fh.read())
        else:
            spec = GeneratorSpec()
        overrides = {"n_patients": "patients", "prevalence": "prevalence",
                     "n_timesteps": "timesteps", "signal_strength": "signal",
                     "noise_fraction": "noise", "seed": "seed"}
        changes = {field: opts[key] for field, key in overrides.items()
                   if not opts["spec"] or key in opts["_explicit"]}
        spec = replace(spec, **changes)
        dataset = generate_cohort(spec)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    _write_text(opts["output"], dataset.to_csv())
    _write_text(spec_out, spec.to_json())
    logger.info("wrote %d patients (%d positive) to %s", dataset.n_patients,
                int(dataset.y.sum()), opts["output"])
    return 0


def _model_config(opts, kind, n_features, n_timesteps, seed) -> ModelConfig:
    try:
        return ModelConfig(
            model_kind=kind, n_features=n_features, n_timesteps=n_timesteps,
            embed_dim=opts["embed_dim"], lstm_hidden=opts["lstm_hidden"],
            n_layers=opts["layers"], n_heads=opts["heads"], causal_attention=opts["causal"],
            seed=seed, learning_rate=opts["lr"], epochs=opts["epochs"],
            batch_size=opts["batch_size"], pos_weight=opts.get("pos_weight"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _prepare(dataset, split_spec, policy):
    try:
        parts = split(dataset, split_spec)
        pre = Preprocessor(_policy(policy), feature_names=dataset.feature_names).fit(parts[0])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return parts, pre


def cmd_train(opts) -> int:
    _require(opts, "data", "output")
    _check_readable(opts["data"])
    _check_writable(opts["output"])
    history_path = opts["history"] or _sibling(opts["output"], ".history.csv")
    _check_writable(history_path)
    dataset = _load_data(opts["data"], opts["impute"])
    split_spec = _split_spec(opts)
    (train_ds, _, _), pre = _prepare(dataset, split_spec, opts["policy"])
    config = _model_config(opts, opts["model"], dataset.n_features, dataset.n_timesteps,
                           opts["seed"])
    try:
        model = train(pre.transform(train_ds), config)
    except NumericalError as exc:
        for path in (opts["output"], history_path):
            if os.path.exists(path):
                os.unlink(path)
        raise RunError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model.metadata.update({
        "feature_names": dataset.feature_names,
        "time_labels": dataset.time_labels,
        "split": {"train": split_spec.train, "val": split_spec.val, "test": split_spec.test,
                  "stratified": split_spec.stratified, "seed": split_spec.seed},
        "impute": opts["impute"],
        "preprocessor": pre.to_dict(),
    })
    checkpoint.save(model, opts["output"])
    lines = ["epoch,mean_loss"] + [f"{k},{loss!r}" for k, loss in enumerate(model.history)]
    _write_text(history_path, "\n".join(lines) + "\n")
    logger.info("trained %s for %d epochs -> %s", config.model_kind, config.epochs,
                opts["output"])
    return 0


def _load_checkpoint(path):
    _check_readable(path)
    try:
        return checkpoint.load(path)
    except (CheckpointError, ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _scaled_subset(model, dataset, subset):
    cfg = model.config
    meta = model.metadata
    if (dataset.n_timesteps, dataset.n_features) != (cfg.n_timesteps, cfg.n_features):
        raise UsageError(
            f"dataset has T={dataset.n_timesteps}, F={dataset.n_features} but the checkpoint "
            f"expects T={cfg.n_timesteps}, F={cfg.n_features}")
    names = meta.get("feature_names")
    if names is not None and names != dataset.feature_names:
        raise UsageError("dataset feature columns differ from those the model was trained on")
    if subset != "all":
        s = meta.get("split")
        if s is None:
            raise UsageError("checkpoint has no split record; use --subset all")
        parts = split(dataset, SplitSpec(s["train"], s["val"], s["test"], s["stratified"],
                                         s["seed"]), require_classes=False)
        dataset = parts[("train", "val", "test").index(subset)]
    if "preprocessor" in meta:
        dataset = Preprocessor.from_dict(meta["preprocessor"]).transform(dataset)
    return dataset


def cmd_evaluate(opts) -> int:
    _require(opts, "checkpoint", "data")
    paths = opts["checkpoint"] if isinstance(opts["checkpoint"], list) else [opts["checkpoint"]]
    for path in paths + [opts["data"]]:
        _check_readable(path)
    if opts["output"]:
        _check_writable(opts["output"])
    models = [_load_checkpoint(p) for p in paths]
    raw = {}
    rows = []
    for path, model in zip(paths, models):
        impute = model.metadata.get("impute", "carry_forward")
        if impute not in raw:
            raw[impute] = _load_data(opts["data"], impute)
        data = _scaled_subset(model, raw[impute], opts["subset"])
        try:
            report = score(predict(model, data.X), data.y, model.config.model_kind,
                           model.config.seed, opts["threshold"])
        except UndefinedMetricError as exc:
            raise RunError(f"{path}: {exc}") from None
        row = {"model": model.config.model_kind}
        row.update({c: getattr(report, c) for c in ("auroc", "f1", "precision", "recall",
                                                     "accuracy")})
        row.update(capability_flags(model.config.model_kind))
        rows.append(row)
    text = rows_to_text(rows, REPORT_COLUMNS)
    if opts["output"]:
        _write_text(opts["output"], rows_to_csv(rows, REPORT_COLUMNS))
        _write_text(_sibling(opts["output"], ".txt"), text)
    sys.stdout.write(text)
    return 0


def _capability_error(kind, level):
    caps = ", ".join(f"{k}: {'/'.join(l for l, ok in v.items() if ok) or 'none'}"
                     for k, v in CAPABILITIES.items())
    return UsageError(f"model '{kind}' does not support {level}-level explanations "
                      f"(capabilities: {caps})")


def cmd_explain(opts) -> int:
    _require(opts, "checkpoint", "data", "output", "level")
    _check_readable(opts["checkpoint"])
    _check_readable(opts["data"])
    model = _load_checkpoint(opts["checkpoint"])
    kind = model.config.model_kind
    level = "cross" if opts["level"] == "influence" else opts["level"]
    if not CAPABILITIES[kind][level]:
        raise _capability_error(kind, opts["level"])
    query = None
    if level == "cross":
        try:
            query = InfluenceQuery(root=opts["root"], depth=opts["depth"],
                                   fan_out=opts["top_k"], scope=opts["scope"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    out_dir = opts["output"]
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out_dir}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise UsageError(f"cannot write to {out_dir}")
    dataset = _scaled_subset(model, _load_data(opts["data"], model.metadata.get(
        "impute", "carry_forward")), opts["subset"])
    art = model.explain(dataset.X)

    def write(name, text):
        _write_text(os.path.join(out_dir, name), text if isinstance(text, str) else
                    text.decode("utf-8"))

    if level == "temporal":
        write("alpha.csv", alpha_csv(art.alpha, dataset.patient_ids))
        profile = temporal_profile(art.alpha, dataset.y)
        for warning in profile.warnings:
            logger.warning(warning)
        write("temporal_profile.csv", profile_csv(profile))
    elif level == "feature":
        write("importance.csv", importance_csv(
            feature_importance(art.contributions, dataset.feature_names)))
    else:
        try:
            graph = build_influence_hierarchy(query, art.contributions,
                                              art.aggregated_attention,
                                              dataset.feature_names, dataset.patient_ids)
        except (KeyError, ValueError) as exc:
            raise UsageError(str(exc).strip("'\"")) from None
        if graph.truncated:
            logger.warning("hierarchy depth truncated to the available history")
        write("influence.dot", export_graph(graph, "dot"))
        write("influence.json", export_graph(graph, "json"))
        if query.patient_id is None:
            write("attention.csv", attention_csv(art.aggregated_attention.mean(axis=0),
                                                 ["cohort"]))
        else:
            k = dataset.patient_ids.index(query.patient_id)
            write("attention.csv", attention_csv(art.aggregated_attention[k],
                                                 [query.patient_id]))
    return 0


def cmd_compare(opts) -> int:
    _require(opts, "data")
    _check_readable(opts["data"])
    if opts["output"]:
        _check_writable(opts["output"])
    dataset = _load_data(opts["data"], opts["impute"])
    configs = [_model_config(opts, kind, dataset.n_features, dataset.n_timesteps, 0)
               for kind in ("lstm", "retain", "tfcam")]
    try:
        report = compare_models(dataset, configs, opts["seeds"], _split_spec(opts),
                                _policy(opts["policy"]), n_jobs=opts["jobs"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for (kind, seed), message in report.errors.items():
        logger.error("%s seed %d failed: %s", kind, seed, message)
    if not report.per_seed:
        raise RunError("every training run failed")
    text = report.to_text()
    if opts["output"]:
        _write_text(opts["output"], report.to_csv())
        _write_text(_sibling(opts["output"], ".txt"), text)
        seed_cols = ("model", "seed", "auroc", "f1", "precision", "recall", "accuracy",
                     "tp", "fp", "tn", "fn")
        _write_text(_sibling(opts["output"], ".seeds.csv"),
                    rows_to_csv(report.seed_rows(), seed_cols))
    sys.stdout.write(text)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "explain": cmd_explain, "compare": cmd_compare}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"tfcam {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RunError, ArithmeticError, UndefinedMetricError) as exc:
        print(f"tfcam {args.command}: failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
