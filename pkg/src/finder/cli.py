"""Command-line entry point: train, predict, screen-enz, export-eam, compare.

Run directory written by ``train``::

    config.json      fully resolved run configuration (rerun with --config)
    model.ckpt       best-validation checkpoint
    history.csv      epoch, train_loss, val_MAE, lr
    metrics.json     test-set MAE / RMSE / R2 / MAD:MAE
    test_predictions.csv   per-sample target, prediction, error, uncertainty
    train.log

With ``--train-sizes`` each size gets its own subdirectory ``size_<n>`` and a
``sweep.csv`` / ``sweep.json`` summary is written at the top level.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError
from .chem import ElementEmbeddingTable, FormulaError, parse_formula, to_integer_formula
from .data import DataError, build_graph, load_dataset, read_rows
from .graph import DEFAULT_CUTOFF, build_formula_graph
from .model import ABLATIONS, FinderConfig, FinderModel, export_eam
from .runs import load_model, save_model
from .spectra import Spectrum, cooccurrence, resample, screen
from .stats import fit_power_law, t_test
from .train import SPLIT_PRESETS, TrainConfig, compute_metrics, predict, split, train, write_history

log = logging.getLogger("finder")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run configuration

MODEL_KEYS = ("hidden_dim", "n_layers", "edge_hidden", "message_hidden", "pool_hidden", "conv_filters",
              "conv_kernel", "dense_widths", "n_points", "weight_decay")


@dataclass
class RunConfig:
    dataset: str = ""
    run_dir: str = "runs/default"
    domain: str = "formula"
    seed: int = 0
    embedding: str | None = None  # None: one-hot
    cutoff: float = DEFAULT_CUTOFF
    node_cap: int = 64
    precision: str = "float32"
    ablations: list[str] = field(default_factory=list)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    train_sizes: list[int] | None = None

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**{**self.train, "seed": self.seed})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad training settings: {exc}") from exc

    def model_config(self, input_dim: int, target: str) -> FinderConfig:
        bad = set(self.model) - set(MODEL_KEYS)
        if bad:
            raise UsageError(f"unknown model keys {sorted(bad)}")
        m = dict(self.model)
        m.setdefault("hidden_dim", 200)
        try:
            return FinderConfig(input_dim=input_dim, key_dim=m["hidden_dim"], domain=self.domain, target=target,
                                ablations=tuple(self.ablations), seed=self.seed, **m)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad model settings: {exc}") from exc


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _resolve_run_config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    for name in ("dataset", "run_dir", "domain", "seed", "embedding", "cutoff", "node_cap", "precision"):
        v = getattr(args, name)
        if v is not None:
            setattr(rc, name, v)
    if args.ablation:
        rc.ablations = sorted(set(rc.ablations) | set(args.ablation))
    if args.train_sizes:
        rc.train_sizes = _ints(args.train_sizes)
    tr = dict(rc.train)
    for name, key in (("batch_size", "batch_size"), ("max_epochs", "max_epochs"), ("patience", "patience"),
                      ("lr", "lr"), ("clip", "clip")):
        v = getattr(args, name)
        if v is not None:
            tr[key] = v
    if args.split:
        tr["ratios"] = list(SPLIT_PRESETS[args.split]) if args.split in SPLIT_PRESETS else \
            [float(x) for x in args.split.split(",")]
    rc.train = tr
    md = dict(rc.model)
    for name in ("hidden_dim", "n_layers", "pool_hidden", "conv_filters"):
        v = getattr(args, name)
        if v is not None:
            md[name] = v
    for name in ("edge_hidden", "message_hidden", "dense_widths"):
        v = getattr(args, name)
        if v is not None:
            md[name] = _ints(v)
    rc.model = md
    if not rc.dataset:
        raise UsageError("--dataset is required")
    if rc.domain not in ("formula", "crystal"):
        raise UsageError(f"unknown domain {rc.domain!r}")
    if rc.precision not in ("float32", "float64"):
        raise UsageError("--precision must be float32 or float64")
    return rc


def _table(rc: RunConfig) -> ElementEmbeddingTable:
    if not rc.embedding:
        return ElementEmbeddingTable.one_hot()
    try:
        return ElementEmbeddingTable.load(rc.embedding)
    except OSError as exc:
        raise DataError(f"cannot read embedding file: {exc}") from exc


# ---------------------------------------------------------------------------
# train


def _log_to(run_dir: Path):
    h = logging.FileHandler(run_dir / "train.log", mode="w")
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("finder").addHandler(h)
    return h


def _write_predictions(path, data, mu, unc):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if data.targets.ndim == 1:
            w.writerow(["composition", "target", "prediction", "abs_error", "uncertainty"])
            for name, y, m, u in zip(data.names, data.targets, mu, unc):
                w.writerow([name, repr(float(y)), repr(float(m)), repr(float(abs(m - y))), repr(float(u))])
        else:
            w.writerow(["composition", "mean_abs_error", "mean_uncertainty"])
            for name, y, m, u in zip(data.names, data.targets, mu, unc):
                w.writerow([name, repr(float(np.abs(m - y).mean())), repr(float(u.mean()))])


def _train_one(rc: RunConfig, data, idx, run_dir: Path, table) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    tr_idx, va_idx, te_idx = idx
    target = "scalar" if data.targets.ndim == 1 else "spectrum"
    if target == "spectrum":
        rc.model.setdefault("n_points", int(data.targets.shape[1]))
    mcfg = rc.model_config(table.dim, target)
    tcfg = rc.train_config()
    with T.precision(np.dtype(rc.precision)):
        model = FinderModel(mcfg)
    log.info("model: %d parameters, ablations=%s", model.num_parameters(), list(mcfg.ablations))
    train_set, val_set, test_set = data.subset(tr_idx), data.subset(va_idx), data.subset(te_idx)
    log.info("split: %d train / %d val / %d test", len(train_set), len(val_set), len(test_set))
    try:
        res = train(model, train_set, val_set, tcfg,
                    progress=lambda r: log.info("epoch %d loss %.6g val_MAE %.6g", r["epoch"], r["train_loss"],
                                                r["val_MAE"]))
    except T.NonFiniteError as exc:
        if getattr(exc, "history", None):
            write_history(exc.history, run_dir / "history.csv")
        raise
    write_history(res.history, run_dir / "history.csv")
    save_model(run_dir / "model.ckpt", model, res.normalizer, table,
               {"best_epoch": res.best_epoch, "train": tcfg.to_dict(), "cutoff": rc.cutoff,
                "node_cap": rc.node_cap})
    mu, unc = predict(model, test_set.graphs, res.normalizer, tcfg.eval_batch_size)
    metrics = compute_metrics(test_set.targets, mu, unc)
    summary = {**metrics.summary(), "best_epoch": res.best_epoch, "best_val_MAE": res.best_val_mae,
               "epochs": len(res.history), "n_train": len(train_set), "n_parameters": model.num_parameters()}
    (run_dir / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_predictions(run_dir / "test_predictions.csv", test_set, mu, unc)
    log.info("test: %s", json.dumps(metrics.summary(), sort_keys=True))
    return summary


def cmd_train(args) -> int:
    rc = _resolve_run_config(args)
    run_dir = Path(rc.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = _log_to(run_dir)
    try:
        rc.save(run_dir / "config.json")
        table = _table(rc)
        data = load_dataset(rc.dataset, table, rc.domain, rc.cutoff, rc.node_cap, skip_bad=True)
        tcfg = rc.train_config()
        idx = split(len(data), tcfg.ratios, rc.seed)
        if not rc.train_sizes:
            summary = _train_one(rc, data, idx, run_dir, table)
            _emit(summary, args.format)
            return EXIT_OK
        rows = []
        for n in rc.train_sizes:
            if n > len(idx[0]):
                raise UsageError(f"train size {n} exceeds the {len(idx[0])} available training samples")
            s = _train_one(rc, data, (idx[0][:n], idx[1], idx[2]), run_dir / f"size_{n}", table)
            rows.append({"train_size": n, "MAE": s["MAE"], "RMSE": s["RMSE"], "R2": s["R2"]})
        with open(run_dir / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        out = {"sizes": rows}
        if len(rows) >= 2:
            slope, intercept = fit_power_law([r["train_size"] for r in rows], [r["MAE"] for r in rows])
            out.update(slope=slope, intercept=intercept)
        (run_dir / "sweep.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
        _emit(out, args.format)
        return EXIT_OK
    finally:
        logging.getLogger("finder").removeHandler(handler)
        handler.close()


# ---------------------------------------------------------------------------
# predict


def _emit(obj, fmt, fh=None):
    fh = fh or sys.stdout
    if fmt == "json":
        fh.write(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")
    else:
        items = obj if isinstance(obj, list) else [obj]
        flat = [{k: v for k, v in it.items() if not isinstance(v, (list, dict))} for it in items]
        if flat and flat[0]:
            w = csv.DictWriter(fh, fieldnames=list(flat[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(flat)


def _load(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"{path}: checkpoint not found")
    return load_model(p)


def _input_rows(args) -> list[dict]:
    rows = [{"composition": c} for c in (args.composition or [])]
    if args.input:
        rows += read_rows(args.input)
    if not rows:
        raise UsageError("give --input or --composition")
    return rows


def cmd_predict(args) -> int:
    model, norm, table, manifest = _load(args.checkpoint)
    cfg = model.config
    rows = _input_rows(args)
    kind = "crystal" if any(r.get("structure_file") for r in rows) else "formula"
    if kind != cfg.domain:
        raise DataError(f"checkpoint is a {cfg.domain}-domain model but the input is {kind}-domain")
    base = Path(args.input).parent if args.input else Path(".")
    graphs, good = [], []
    results = [{"composition": r.get("composition", ""), "error": ""} for r in rows]
    for k, r in enumerate(rows):
        try:
            graphs.append(build_graph(r, table, cfg.domain, base, manifest.get("cutoff", DEFAULT_CUTOFF)))
            good.append(k)
        except (FormulaError, KeyError, ValueError, OSError) as exc:
            results[k]["error"] = str(exc).strip('"')
            log.warning("row %d (%s): %s", k + 1, r.get("composition"), exc)
    if graphs:
        mu, unc = predict(model, graphs, norm)
        for k, m, u in zip(good, mu, unc):
            results[k]["mean"], results[k]["uncertainty"] = m, u
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        if args.format == "json":
            recs = [{**r, **{k: np.asarray(r[k]).tolist() for k in ("mean", "uncertainty") if k in r}}
                    for r in results]
            out.write(json.dumps(recs, indent=2) + "\n")
        elif cfg.target == "scalar":
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["composition", "mean", "uncertainty", "error"])
            for r in results:
                vals = [repr(float(r[k])) if k in r else "" for k in ("mean", "uncertainty")]
                w.writerow([r["composition"], *vals, r["error"]])
        else:
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["composition", "part", "error", *[f"p{i}" for i in range(cfg.n_points)]])
            for r in results:
                for part in ("mean", "uncertainty"):
                    vals = [repr(float(x)) for x in r[part]] if part in r else []
                    w.writerow([r["composition"], part, r["error"], *vals])
    finally:
        if args.output:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# screen-enz


def _spectrum_from_row(row: dict, col: str, kind: str, base: Path) -> Spectrum | None:
    if row.get(col):
        return Spectrum(np.array([float(x) for x in row[col].split(";")]), kind)
    fcol = row.get(f"{col}_file")
    if fcol:
        pts = np.loadtxt(base / fcol, ndmin=2)
        return resample(pts[:, :2], kind)
    return None


def cmd_screen_enz(args) -> int:
    path = Path(args.candidates)
    rows = read_rows(path)
    models = None
    if not args.use_provided_spectra:
        if not args.re or not args.im:
            raise UsageError("--re and --im checkpoints are required unless --use-provided-spectra is set")
        models = (_load(args.re), _load(args.im))
        for (m, *_), name in zip(models, ("--re", "--im")):
            if m.config.target != "spectrum":
                raise UsageError(f"{name} checkpoint is not a spectrum model")
    items = []
    for k, row in enumerate(rows):
        comp = row.get("composition", "")
        hull = row.get("e_hull_meV")
        hull = None if hull in (None, "") else float(hull)
        try:
            if models is None:
                re = _spectrum_from_row(row, "eps_re", "eps_re", path.parent)
                im = _spectrum_from_row(row, "eps_im", "eps_im", path.parent)
                if re is None or im is None:
                    raise DataError("both eps_re and eps_im spectra are required")
            else:
                spec = []
                for (model, norm, table, manifest), kind in zip(models, ("eps_re", "eps_im")):
                    g = build_graph(row, table, model.config.domain, path.parent,
                                    manifest.get("cutoff", DEFAULT_CUTOFF))
                    mu, _ = predict(model, [g], norm)
                    spec.append(Spectrum(mu[0], kind))
                re, im = spec
        except (DataError, FormulaError, KeyError, ValueError, OSError) as exc:
            log.warning("candidate %d (%s) skipped: %s", k + 1, comp, exc)
            continue
        items.append((comp, re, im, hull))
    found = screen(items)
    report = [{"composition": c.composition, "omega_co": c.omega_co, "eps_im_at_co": c.eps_im_at_co,
               "e_hull_meV": c.e_hull_meV, "later_crossings": ";".join(repr(x) for x in c.later_crossings)}
              for c in found]
    comps = []
    for c in found:
        try:
            comps.append(parse_formula(c.composition))
        except FormulaError:
            log.warning("%s: cannot parse for co-occurrence counting", c.composition)
    edges = cooccurrence(comps, args.min_count)
    edge_rows = [{"element_a": a, "element_b": b, "count": n} for (a, b), n in edges.items()]
    cols = ["composition", "omega_co", "eps_im_at_co", "e_hull_meV", "later_crossings"]
    _write_table(args.output, report, cols, args.format)
    if args.edges:
        _write_table(args.edges, edge_rows, ["element_a", "element_b", "count"], args.format)
    return EXIT_OK


def _write_table(path, rows, cols, fmt):
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        if fmt == "json":
            out.write(json.dumps(rows, indent=2) + "\n")
        else:
            w = csv.DictWriter(out, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    finally:
        if path:
            out.close()


# ---------------------------------------------------------------------------
# export-eam


def cmd_export_eam(args) -> int:
    model, _, table, manifest = _load(args.checkpoint)
    if model.config.domain != "formula":
        raise UsageError("edge attribute matrices need a formula-domain checkpoint")
    f = to_integer_formula(parse_formula(args.composition), node_cap=manifest.get("node_cap", 64))
    g = build_formula_graph(f, table)
    eam = export_eam(model, g, args.layer)
    labels = list(g.node_elements)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        if args.format == "json":
            out.write(json.dumps({"elements": labels, "matrix": eam.tolist()}, indent=2) + "\n")
        else:
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["", *labels])
            for lab, row in zip(labels, eam):
                w.writerow([lab, *[repr(float(x)) for x in row]])
    finally:
        if args.output:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def _group_values(paths, metric: str):
    """Either summary statistics (mean, std, n) or a list of per-run values."""
    values = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise DataError(f"{p}: no such file")
        text = p.read_text()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            values += [float(x) for x in text.replace(",", " ").split()]
            continue
        if isinstance(obj, list):
            values += [float(x) for x in obj]
        elif {"mean", "std", "n"} <= set(obj):
            if len(paths) != 1:
                raise UsageError("a summary-statistics file must be the only file in its group")
            return float(obj["mean"]), float(obj["std"]), int(obj["n"])
        elif "runs" in obj:
            values += [float(x) for x in obj["runs"]]
        elif metric in obj:
            values.append(float(obj[metric]))
        else:
            raise DataError(f"{p}: no {metric!r} entry")
    if len(values) < 2:
        raise UsageError(f"need at least two runs per group, got {len(values)}")
    v = np.array(values)
    return float(v.mean()), float(v.std(ddof=1)), len(v)


def _stats_arg(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--stats expects mean,std,n; got {text!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


def cmd_compare(args) -> int:
    a = _stats_arg(args.stats_a) if args.stats_a else _group_values(args.a or [], args.metric)
    b = _stats_arg(args.stats_b) if args.stats_b else _group_values(args.b or [], args.metric)
    try:
        t, p = t_test(*a, *b)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit({"mean_a": a[0], "std_a": a[1], "n_a": a[2], "mean_b": b[0], "std_b": b[1], "n_b": b[2],
           "t": t, "df": a[2] + b[2] - 2, "p": p, "significant": bool(p < args.alpha)}, args.format)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="finder", description="Attention-gated message passing for materials properties.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and evaluate it on the held-out split")
    t.add_argument("--config", help="resolved config.json from an earlier run")
    t.add_argument("--dataset")
    t.add_argument("--run-dir", dest="run_dir")
    t.add_argument("--domain", choices=("formula", "crystal"))
    t.add_argument("--seed", type=int)
    t.add_argument("--embedding", help="element embedding table; one-hot when omitted")
    t.add_argument("--cutoff", type=float)
    t.add_argument("--node-cap", dest="node_cap", type=int)
    t.add_argument("--precision", choices=("float32", "float64"))
    t.add_argument("--ablation", action="append", choices=ABLATIONS)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--clip", type=float)
    t.add_argument("--split", help=f"preset ({', '.join(SPLIT_PRESETS)}) or train,val,test ratios")
    t.add_argument("--train-sizes", dest="train_sizes", help="comma-separated training-set sizes to sweep")
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--n-layers", dest="n_layers", type=int)
    t.add_argument("--pool-hidden", dest="pool_hidden", type=int)
    t.add_argument("--conv-filters", dest="conv_filters", type=int)
    t.add_argument("--edge-hidden", dest="edge_hidden")
    t.add_argument("--message-hidden", dest="message_hidden")
    t.add_argument("--dense-widths", dest="dense_widths")
    t.add_argument("--format", choices=("csv", "json"), default="json")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict mean and uncertainty for new inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="delimited file with a composition (and optionally structure_file) column")
    p.add_argument("--composition", action="append")
    p.add_argument("--output")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_predict)

    s = sub.add_parser("screen-enz", help="screen candidates for low-loss epsilon-near-zero behaviour")
    s.add_argument("--re", help="checkpoint of the real-part spectrum model")
    s.add_argument("--im", help="checkpoint of the imaginary-part spectrum model")
    s.add_argument("--candidates", required=True)
    s.add_argument("--use-provided-spectra", action="store_true",
                   help="read eps_re/eps_im spectra from the candidate file instead of predicting them")
    s.add_argument("--min-count", type=int, default=5)
    s.add_argument("--output")
    s.add_argument("--edges", help="where to write element co-occurrence counts")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_screen_enz)

    e = sub.add_parser("export-eam", help="edge attribute matrix for one composition")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--composition", required=True)
    e.add_argument("--layer", type=int)
    e.add_argument("--output")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.set_defaults(func=cmd_export_eam)

    c = sub.add_parser("compare", help="two-sample t-test between two sets of runs")
    c.add_argument("--a", nargs="+", help="metrics files (or value lists) for the first group")
    c.add_argument("--b", nargs="+")
    c.add_argument("--stats-a", help="mean,std,n for the first group")
    c.add_argument("--stats-b")
    c.add_argument("--metric", default="MAE")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--format", choices=("csv", "json"), default="json")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except T.NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormulaError, CheckpointError, KeyError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
