"""Command-line interface: train, predict, benchmark, project, partitions, rerun.

Exit codes: 0 success, 1 other library error, 2 configuration error,
3 data error, 4 convergence or numerical failure.

Every output embeds the run configuration and library version: a ``config``
key in JSON files, a leading ``# config: {...}`` line in CSV files and an
HTML comment in markdown. Output paths and ``--jobs`` are not part of the
configuration, so ``ssvdd rerun`` on any output reproduces it byte for byte.
"""

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, datasets
from .data import (
    OUTLIER,
    TARGET,
    SplitSpec,
    Standardizer,
    binarize_majority,
    load_csv,
    load_features,
    make_partitions,
    mean_pairwise_distance,
    partitions_to_json,
)
from .errors import ConfigurationError, DataError, SchemaError, SsvddError
from .kernel import KernelSpec
from .modelselect import METHOD_ORDER, GridSpec, benchmark, get_method
from .subspace import HyperParams, SsvddModel, predict, represent, train

ENV_SEED = "SSVDD_SEED"
ENV_JOBS = "SSVDD_JOBS"


@dataclass
class RunConfig:
    """Everything that determines a run's output, minus output paths and job count."""

    subcommand: str
    inputs: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return {"subcommand": self.subcommand, "inputs": self.inputs, "settings": self.settings}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["subcommand"], dict(d["inputs"]), dict(d["settings"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed embedded config: {exc}") from None


def _embed(cfg):
    return {"run_config": cfg.to_dict(), "version": __version__}


def _csv_with_config(cfg, header, rows):
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(_embed(cfg), sort_keys=True, separators=(',', ':'))}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# data plumbing


def _load_dataset(inputs, settings):
    """OneClassDataset from either a bundled name or a CSV path."""
    if inputs.get("dataset"):
        ds = datasets.load(inputs["dataset"])
        if settings.get("target"):
            ds = binarize_majority(ds.base, settings["target"])
        return ds
    if not inputs.get("input"):
        raise ConfigurationError("either --input or --dataset is required")
    ds = load_csv(inputs["input"], settings.get("label", "class"))
    return binarize_majority(ds, settings.get("target"))


def _hyperparams(s, X_target_std):
    kernel = None
    if s["mode"] == "kernel":
        if s.get("sigma") is not None:
            kernel = KernelSpec(float(s["sigma"]))
        else:
            base = mean_pairwise_distance(X_target_std)
            kernel = KernelSpec(float(s.get("sigma_scale", 1.0)) * (base if base > 0 else 1.0))
    psi = s.get("psi")
    if psi is None:
        return HyperParams(C=s["C"], kernel=kernel, seed=s["seed"])
    return HyperParams(
        C=s["C"], beta=s["beta"], eta=s["eta"], d=s["d"], psi=psi, k_max=s["kmax"],
        seed=s["seed"], kernel=kernel,
    )


def _fit(cfg):
    """Train on the target rows of the configured dataset."""
    s = cfg.settings
    ds = _load_dataset(cfg.inputs, s)
    X = ds.features
    std = Standardizer.fit(X) if s["standardize"] else None
    X_t = X[ds.is_target]
    if X_t.shape[0] < 2:
        raise DataError("need at least 2 target rows to train")
    params = _hyperparams(s, std.apply(X_t) if std is not None else X_t)
    model = train(X_t, params, standardizer=std, standardize=False)
    return ds, model


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg, outputs, jobs=1):
    _, model = _fit(cfg)
    doc = model.to_dict()
    doc.update(_embed(cfg))
    _write(outputs["output"], json.dumps(doc, indent=1))
    rep = {"report": model.report.to_dict(), "r_squared": model.r_squared,
           "kkt_residual": model.solution.kkt_residual}
    rep.update(_embed(cfg))
    _write(_report_path(outputs["output"]), json.dumps(rep, indent=1))


def _report_path(model_path):
    p = Path(model_path)
    return p.with_name(p.stem + ".report.json")


def _read_model(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from None
    return SsvddModel.from_dict(doc)


def cmd_predict(cfg, outputs, jobs=1):
    model = _read_model(cfg.inputs["model"])
    Xq = load_features(cfg.inputs["input"], cfg.settings.get("label"))
    rows = []
    if Xq.shape[0]:
        labels, d2 = predict(model, Xq)
        r2 = model.r_squared
        rows = [[i, _fmt(d), _fmt(r2), lab] for i, (d, lab) in enumerate(zip(d2, labels))]
    text = _csv_with_config(cfg, ["row_id", "dist_sq", "r_squared", "label"], rows)
    _write(outputs["output"], text)


def cmd_benchmark(cfg, outputs, jobs=1):
    s = cfg.settings
    ds = _load_dataset(cfg.inputs, s)
    grid = GridSpec.from_dict(s["grid"])
    split = SplitSpec(**s["split"])
    name = cfg.inputs.get("dataset") or Path(cfg.inputs["input"]).stem
    report = benchmark(ds, grid, s["methods"], split, name=name, folds=s["folds"],
                       standardize=s["standardize"], jobs=jobs, sample_std=s["sample_std"])
    report.config = _embed(cfg)
    fmt = s["format"]
    out = Path(outputs["output"])
    if fmt == "json":
        _write(out, report.to_json())
        # flat table alongside for plotting
        _write(out.with_suffix(".csv"), _prefix_csv(cfg, report.to_csv()))
    elif fmt == "csv":
        _write(out, _prefix_csv(cfg, report.to_csv()))
    else:
        meta = json.dumps(_embed(cfg), sort_keys=True, separators=(",", ":"))
        _write(out, f"<!-- config: {meta} -->\n" + report.to_markdown())


def _prefix_csv(cfg, body):
    meta = json.dumps(_embed(cfg), sort_keys=True, separators=(",", ":"))
    return f"# config: {meta}\n" + body


def cmd_project(cfg, outputs, jobs=1):
    s = cfg.settings
    if cfg.inputs.get("model"):
        model = _read_model(cfg.inputs["model"])
        ds = _load_dataset(cfg.inputs, s)
    else:
        if s.get("d") != 2:
            raise ConfigurationError(
                f"project needs a 2-dimensional subspace; got d={s.get('d')}"
            )
        ds, model = _fit(cfg)
    if model.projection is None or model.projection.shape[0] != 2:
        d = None if model.projection is None else model.projection.shape[0]
        raise ConfigurationError(f"project needs a model with d=2; this model has d={d}")
    X = ds.features
    Z = represent(model, X)
    _, d2 = predict(model, X)
    c = model.center
    r2 = model.r_squared
    rows = []
    for i in range(X.shape[0]):
        label = TARGET if ds.is_target[i] else OUTLIER
        rows.append([i, _fmt(Z[0, i]), _fmt(Z[1, i]), label, _fmt(d2[i]), _fmt(r2),
                     _fmt(c[0]), _fmt(c[1])])
    header = ["row_id", "z1", "z2", "label", "dist_sq", "r_squared", "center_1", "center_2"]
    _write(outputs["output"], _csv_with_config(cfg, header, rows))


def cmd_partitions(cfg, outputs, jobs=1):
    ds = _load_dataset(cfg.inputs, cfg.settings)
    spec = SplitSpec(**cfg.settings["split"])
    doc = json.loads(partitions_to_json(make_partitions(ds, spec), spec))
    doc.update(_embed(cfg))
    _write(outputs["output"], json.dumps(doc, indent=1))


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "project": cmd_project,
    "partitions": cmd_partitions,
}


def run(cfg, outputs, jobs=1):
    if cfg.subcommand not in COMMANDS:
        raise ConfigurationError(f"unknown subcommand {cfg.subcommand!r} in config")
    COMMANDS[cfg.subcommand](cfg, outputs, jobs)


def read_embedded_config(path):
    """Recover the RunConfig embedded in any output file."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    first = text.split("\n", 1)[0]
    if first.startswith("# config: "):
        meta = json.loads(first[len("# config: "):])
    elif first.startswith("<!-- config: "):
        meta = json.loads(first[len("<!-- config: "):-len(" -->")])
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            raise SchemaError(f"{path} carries no embedded config") from None
        meta = doc.get("config", doc)
    if "run_config" not in meta:
        raise SchemaError(f"{path} carries no embedded config")
    return RunConfig.from_dict(meta["run_config"])


# ---------------------------------------------------------------------------
# argument parsing


def _env_int(name, default):
    v = os.environ.get(name)
    if v is None or v == "":
        return default
    try:
        return int(v)
    except ValueError:
        raise ConfigurationError(f"environment variable {name} must be an integer, got {v!r}")


def _num(text):
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _int(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def _num_list(text):
    return [_num(t) for t in text.split(",") if t.strip()]


def _int_list(text):
    return [_int(t) for t in text.split(",") if t.strip()]


def _psi(text):
    if text == "none":
        return None
    if text in {"1", "2", "3", "4"}:
        return int(text)
    raise argparse.ArgumentTypeError("psi must be 1, 2, 3, 4 or none")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _data_args(p, label=True):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="CSV file with features and a label column")
    src.add_argument("--dataset", choices=sorted(datasets.BUNDLED), help="bundled dataset")
    if label:
        p.add_argument("--label", default="class", help="label column name or index")
        p.add_argument("--target", help="target class name (default: largest class; "
                       "bundled datasets use their documented target)")


def _standardize_arg(p):
    p.add_argument("--no-standardize", dest="standardize", action="store_false",
                   help="skip z-scoring (statistics come from all rows of the training data)")


def _model_args(p, default_d=None):
    p.add_argument("--mode", choices=["linear", "kernel"], default="linear")
    p.add_argument("--psi", type=_psi, default=None, help="regularizer 1-4, or none for plain SVDD")
    p.add_argument("--d", type=_int, default=default_d, help="subspace dimension")
    p.add_argument("--C", type=_num, default=0.1)
    p.add_argument("--beta", type=_num, default=0.0)
    p.add_argument("--eta", type=_num, default=0.1)
    p.add_argument("--kmax", type=_int, default=50)
    sig = p.add_mutually_exclusive_group()
    sig.add_argument("--sigma", type=_num, help="absolute RBF width")
    sig.add_argument("--sigma-scale", type=_num,
                     help="RBF width as a multiple of the mean pairwise training distance")
    _standardize_arg(p)


def _seed_arg(p):
    p.add_argument("--seed", type=_int, default=None,
                   help=f"random seed (default: ${ENV_SEED} or 0)")


def build_parser():
    parser = _Parser(
        prog="ssvdd",
        description="Subspace support vector data description: one-class training, "
        "prediction and benchmarking.",
        epilog=f"Environment: {ENV_SEED} sets the default --seed; {ENV_JOBS} sets the "
        "default --jobs. Exit codes: 2 configuration error, 3 data error, "
        "4 convergence or numerical failure.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on the target rows of a dataset")
    _data_args(p)
    _model_args(p)
    _seed_arg(p)
    p.add_argument("--output", required=True, help="model JSON; a .report.json is written beside it")

    p = sub.add_parser("predict", help="score query rows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV of query rows")
    p.add_argument("--label", default=None, help="label column to drop from the query file")
    p.add_argument("--output", required=True, help="predictions CSV")

    p = sub.add_parser("benchmark", help="cross-validated grid search over random partitions")
    _data_args(p)
    p.add_argument("--methods", default="all",
                   help=f"comma-separated subset of {','.join(METHOD_ORDER)}, or all")
    p.add_argument("--C-values", type=_num_list, default=None)
    # negative lists need the --flag=-1,0 form
    p.add_argument("--beta-exponents", type=_int_list, default=None,
                   help="comma list of l for beta = 10^l, e.g. --beta-exponents=-4,0,4")
    p.add_argument("--sigma-exponents", type=_int_list, default=None,
                   help="comma list of l for sigma = 10^l x mean distance")
    p.add_argument("--d-values", type=_int_list, default=None)
    p.add_argument("--eta", type=_num, default=0.1)
    p.add_argument("--kmax", type=_int, default=50)
    p.add_argument("--partitions", type=_int, default=5)
    p.add_argument("--train-fraction", type=_num, default=0.7)
    p.add_argument("--folds", type=_int, default=5)
    p.add_argument("--sample-std", action="store_true", help="report sample std in markdown")
    p.add_argument("--format", choices=["json", "csv", "md"], default="json",
                   help="json also writes the flat CSV beside the report")
    _standardize_arg(p)
    _seed_arg(p)
    p.add_argument("--jobs", type=_int, default=None,
                   help=f"parallel candidate evaluations (default: ${ENV_JOBS} or 1)")
    p.add_argument("--output", required=True)

    p = sub.add_parser("project", help="export 2-D subspace coordinates of every sample")
    _data_args(p)
    p.add_argument("--model", default=None, help="existing d=2 model instead of training")
    _model_args(p, default_d=2)
    _seed_arg(p)
    p.add_argument("--output", required=True)

    p = sub.add_parser("partitions", help="write the partition manifest")
    _data_args(p)
    p.add_argument("--partitions", type=_int, default=5)
    p.add_argument("--train-fraction", type=_num, default=0.7)
    _seed_arg(p)
    p.add_argument("--output", required=True)

    p = sub.add_parser("rerun", help="repeat the run embedded in an output file")
    p.add_argument("--from", dest="source", required=True, help="any file written by ssvdd")
    p.add_argument("--output", required=True)
    p.add_argument("--jobs", type=_int, default=None)
    return parser


def _inputs(a):
    return {k: getattr(a, k) for k in ("input", "dataset", "model") if getattr(a, k, None)}


def config_from_args(a):
    seed = a.seed if getattr(a, "seed", None) is not None else _env_int(ENV_SEED, 0)
    if seed < 0:
        raise ConfigurationError("seed must be non-negative")
    s = {}
    if a.subcommand in ("train", "project", "benchmark", "partitions"):
        s["label"] = a.label
        s["target"] = a.target
    if a.subcommand in ("train", "project"):
        if a.mode == "linear" and (a.sigma is not None or a.sigma_scale is not None):
            raise ConfigurationError("--sigma/--sigma-scale only apply to --mode kernel")
        s.update(mode=a.mode, psi=a.psi, d=a.d, C=a.C, beta=a.beta, eta=a.eta, kmax=a.kmax,
                 standardize=a.standardize, seed=seed)
        if a.mode == "kernel":
            if a.sigma is not None:
                s["sigma"] = a.sigma
            else:
                s["sigma_scale"] = a.sigma_scale if a.sigma_scale is not None else 1.0
        if a.psi is not None and a.d is None:
            raise ConfigurationError("--d is required with --psi 1-4")
    elif a.subcommand == "predict":
        s["label"] = a.label
    elif a.subcommand == "benchmark":
        methods = list(METHOD_ORDER) if a.methods == "all" else [
            m.strip() for m in a.methods.split(",") if m.strip()
        ]
        for m in methods:
            get_method(m)
        grid = GridSpec()
        overrides = {
            "C_values": a.C_values, "beta_exponents": a.beta_exponents,
            "sigma_exponents": a.sigma_exponents, "d_values": a.d_values,
        }
        gd = grid.to_dict()
        gd.update({k: v for k, v in overrides.items() if v is not None})
        gd.update(eta=a.eta, k_max=a.kmax)
        GridSpec.from_dict(gd)
        s.update(
            methods=[m for m in METHOD_ORDER if m in methods], grid=gd,
            split={"train_fraction": a.train_fraction, "partition_count": a.partitions,
                   "seed": seed},
            folds=a.folds, standardize=a.standardize, sample_std=a.sample_std, format=a.format,
        )
    if a.subcommand == "partitions":
        s["split"] = {"train_fraction": a.train_fraction, "partition_count": a.partitions,
                      "seed": seed}
    return RunConfig(a.subcommand, _inputs(a), s)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        jobs = args.jobs if getattr(args, "jobs", None) is not None else _env_int(ENV_JOBS, 1)
        if jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        if args.subcommand == "rerun":
            cfg = read_embedded_config(args.source)
        else:
            cfg = config_from_args(args)
        run(cfg, {"output": args.output}, jobs)
    except SsvddError as exc:
        print(f"ssvdd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError, ValueError) as exc:
        # malformed embedded configs and invalid value combinations
        print(f"ssvdd: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ssvdd: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
