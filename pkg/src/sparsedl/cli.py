"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.  Outputs go to ``--out`` (a directory, created if needed).
Metrics JSON holds only quantities derived from the predictions, so
repeated runs with the same seed and worker count write identical bytes;
wall-clock times go to ``timings.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import (
    DataError,
    Dictionary,
    FormatError,
    NumericalError,
    RunConfig,
    SparseCodes,
    load_model,
    save_model,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    changes = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        changes[k] = v
    if changes:
        merged = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
        merged.update(changes)
        cfg = RunConfig.from_mapping(merged)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    return cfg.replace(**over) if over else cfg


def _load(path, part="train", limit=None):
    from .data_io import load_dataset

    ds = load_dataset(path, part)
    if limit is not None and limit < ds.N:
        ds = ds.subset(np.arange(limit))
    return ds


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_recover(args, cfg, out):
    from .data_io import SynthSpec, synth_recovery
    from .dictionary_learning import atom_recovery, learn_dictionary

    spec = SynthSpec(args.d, args.k, args.n, args.t, args.sigma, cfg.seed)
    D_true, _, Y = synth_recovery(spec)
    methods = ["ksvd", "approx"] if args.method == "both" else [args.method]
    result = {}
    for m in methods:
        D, _, trace = learn_dictionary(Y, args.k, args.t, args.iters, m, seed=cfg.seed, workers=cfg.workers)
        rate = atom_recovery(D_true, D.atoms)
        result[m] = {"recovery": rate, "final_objective": trace.objective[-1]}
        print(f"{m}: recovered {100 * rate:.1f}% of atoms")
    if out is not None:
        _write_json(out / "recovery.json", result)


def cmd_train_dict(args, cfg, out):
    from .dictionary_learning import learn_dictionary

    ds = _load(args.data, args.part, args.limit)
    method = {"mod": "mod", "ksvd": "ksvd", "aksvd": "approx"}[args.method]
    D, _, trace = learn_dictionary(ds.Y, args.k, args.t, args.iters, method, seed=cfg.seed, workers=cfg.workers)
    print(f"{args.method}: final ||Y - DX||_F^2 = {trace.objective[-1]:.6g}")
    if out is not None:
        save_model(D, out / "dictionary.sdlm")
        lines = ["iteration,coding_objective,objective,replaced"]
        lines += [f"{i + 1},{a!r},{b!r},{r}" for i, (a, b, r) in enumerate(zip(trace.coding_objective, trace.objective, trace.replaced))]
        (out / "trace.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_code(args, cfg, out):
    from .bayesian import GgPrior, HyperParams, NoiseModel, em_hyperparameters, map_code
    from .dictionary_learning import DksvdModel
    from .sparse_coding import batch_omp, ista_l1

    D = load_model(args.dict)
    if isinstance(D, DksvdModel):
        D = D.shared
    if not isinstance(D, Dictionary):
        raise DataError(f"{args.dict} does not hold a dictionary")
    ds = _load(args.data, args.part, args.limit)
    if ds.d != D.d:
        raise DataError(f"dimension mismatch: data has d={ds.d}, dictionary has d={D.d}")
    stats = {"method": args.method}
    if args.method == "omp":
        eps = cfg.omp_rel_tol * np.linalg.norm(ds.Y, axis=0)
        codes = batch_omp(ds.Y, D, args.t, eps, cfg.workers)
    else:
        cols, extra = [], []
        for j in range(ds.N):
            y = ds.Y[:, j]
            if args.method == "ista":
                r = ista_l1(y, D, args.lam, cfg.ista_max_iter, cfg.ista_tol)
            elif args.method == "map":
                r = map_code(y, D, GgPrior(args.alpha, args.beta), NoiseModel(args.sigma2), cfg.ista_max_iter, cfg.ista_tol)
            else:
                r, th = em_hyperparameters(y, D, HyperParams(args.sigma2, args.alpha), beta=args.beta, map_max_iter=cfg.ista_max_iter, map_tol=cfg.ista_tol)
                extra.append({"sigma2": th.sigma2, "alpha": th.alpha, "em_iterations": len(th.q_history), "converged": th.converged})
            cols.append(r.coef)
        codes = SparseCodes.from_dense(np.stack(cols, axis=1) if cols else np.zeros((D.K, 0)))
        if extra:
            stats["hyperparameters"] = extra
    X = codes.to_dense()
    resid = np.linalg.norm(ds.Y - D.atoms @ X, axis=0)
    stats["mean_nnz"] = float(codes.nnz_per_column().mean()) if ds.N else 0.0
    stats["mean_residual"] = float(resid.mean()) if ds.N else 0.0
    print(f"{args.method}: mean nnz {stats['mean_nnz']:.3f}, mean residual {stats['mean_residual']:.6g}")
    if out is not None:
        save_model(codes, out / "codes.sdlm")
        _write_json(out / "code_stats.json", stats)


def cmd_dksvd(args, cfg, out):
    from .dictionary_learning import dksvd, linear_predict
    from .metrics import metrics

    ds = _load(args.data, args.part, args.limit)
    alpha = cfg.dksvd_alpha if args.alpha is None else args.alpha
    t0 = time.perf_counter()
    model, _, _ = dksvd(ds.Y, ds.one_hot(), alpha, args.k, args.t, args.iters, ridge_lambda=cfg.ridge_lambda, seed=cfg.seed, workers=cfg.workers)
    seconds = time.perf_counter() - t0
    from .sparse_coding import batch_omp

    codes = batch_omp(ds.Y, model.shared, args.t, cfg.omp_rel_tol * np.linalg.norm(ds.Y, axis=0), cfg.workers)
    bundle = metrics(linear_predict(model.W, codes), ds.labels, ds.n_classes)
    print(f"dksvd: training accuracy of the linear classifier {100 * bundle.accuracy:.2f}%")
    if out is not None:
        save_model(model, out / "dksvd.sdlm")
        (out / "metrics.json").write_text(bundle.to_json(), encoding="utf-8")
        _write_json(out / "timings.json", {"dksvd_seconds": seconds})


def cmd_scmlp_train(args, cfg, out):
    from .data_io import SplitSpec, split
    from .pipeline import train_scmlp

    ds = _load(args.data, "train", args.limit)
    if args.val_data:
        train_set, val_set = ds, _load(args.val_data, "train")
    elif args.val > 0:
        train_set, val_set, _ = split(ds, SplitSpec(ds.N - args.val, args.val, 0, seed=cfg.seed))
    else:
        train_set, val_set = ds, None
    model, report = train_scmlp(train_set, val_set, cfg)
    msg = f"scmlp: trained on {train_set.N} samples; dictionary {report.dictionary_seconds:.1f}s, MLP {report.mlp_seconds:.1f}s"
    if report.mlp_val_acc is not None:
        msg += f"; validation accuracy MLP {100 * report.mlp_val_acc:.2f}%, linear {100 * report.linear_val_acc:.2f}%"
    print(msg)
    if report.mlp_below_linear:
        print("warning: MLP validation accuracy is below the linear read-out", file=sys.stderr)
    if out is not None:
        save_model(model, out / "model.sdlm")
        (out / "training.csv").write_text(report.training.to_csv(), encoding="utf-8")
        (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
        _write_json(out / "timings.json", {"dictionary_seconds": report.dictionary_seconds, "mlp_seconds": report.mlp_seconds})
        summary = {"mlp_below_linear": report.mlp_below_linear, "mlp_val_acc": report.mlp_val_acc, "linear_val_acc": report.linear_val_acc}
        _write_json(out / "train_summary.json", summary)


def cmd_scmlp_eval(args, cfg, out):
    from .pipeline import ScmlpModel, evaluate_scmlp

    model = load_model(args.model)
    if not isinstance(model, ScmlpModel):
        raise DataError(f"{args.model} does not hold an SCMLP model")
    ds = _load(args.data, args.part, args.limit)
    bundle = evaluate_scmlp(model, ds)
    print(f"scmlp: accuracy {100 * bundle.accuracy:.2f}%, macro-F1 {bundle.macro_f1:.4f}, linear read-out {100 * bundle.extra['linear_accuracy']:.2f}%")
    if out is not None:
        (out / "metrics.json").write_text(bundle.to_json(), encoding="utf-8")
        _write_json(out / "timings.json", {"seconds": bundle.seconds})


def cmd_fisher(args, cfg, out):
    from .fisher import fisher_g, scatter

    if args.codes:
        codes = load_model(args.codes)
        if not isinstance(codes, SparseCodes):
            raise DataError(f"{args.codes} does not hold sparse codes")
        X = codes.to_dense()
        labels = _load(args.data, args.part, args.limit).labels if args.data else None
        if labels is None:
            raise UsageError("--codes needs --data for the labels")
    else:
        ds = _load(args.data, args.part, args.limit)
        X, labels = ds.Y, ds.labels
    sp = scatter(X, labels)
    g = fisher_g(X, labels, args.eta, args.sign)
    res = {"trace_Sw": float(np.trace(sp.Sw)), "trace_SB": float(np.trace(sp.SB)), "g": g, "eta": args.eta, "sign": args.sign}
    print(f"tr(Sw) = {res['trace_Sw']:.6g}, tr(SB) = {res['trace_SB']:.6g}, g = {g:.6g}")
    if out is not None:
        _write_json(out / "fisher.json", res)


def cmd_plot(args, cfg, out):
    from .plot import plot_csv

    target = Path(args.out or ".")
    if target.suffix.lower() != ".svg":
        target.mkdir(parents=True, exist_ok=True)
        target = target / "figure.svg"
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
    kind = plot_csv(Path(args.input).read_text(encoding="utf-8"), target, args.metric)
    print(f"wrote {kind} to {target}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are suppressed so a flag given before the subcommand survives
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value configuration file")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker threads for batch coding")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (plot: file or directory)")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE", help="override a config entry")

    p = _Parser(prog="sparsedl", description="Sparse coding, dictionary learning and SCMLP classification.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    def data_opts(sp, required=True):
        sp.add_argument("--data", required=required, help=".npz file, MNIST IDX directory or class-per-directory image tree")
        sp.add_argument("--part", default="train", choices=["train", "test"], help="MNIST part")
        sp.add_argument("--limit", type=int, default=None, help="use only the first N samples")

    sp = add("synth-recover", cmd_synth_recover, "atom recovery on synthetic data")
    sp.add_argument("--d", type=int, default=20)
    sp.add_argument("--k", type=int, default=50)
    sp.add_argument("--n", type=int, default=1500)
    sp.add_argument("--t", type=int, default=3)
    sp.add_argument("--iters", type=int, default=30)
    sp.add_argument("--sigma", type=float, default=0.0)
    sp.add_argument("--method", choices=["ksvd", "approx", "both"], default="ksvd")

    sp = add("train-dict", cmd_train_dict, "learn a dictionary")
    data_opts(sp)
    sp.add_argument("--method", choices=["mod", "ksvd", "aksvd"], default="ksvd")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--t", type=int, required=True)
    sp.add_argument("--iters", type=int, default=10)

    sp = add("code", cmd_code, "sparse-code data against a stored dictionary")
    data_opts(sp)
    sp.add_argument("--dict", required=True)
    sp.add_argument("--method", choices=["omp", "ista", "map", "em"], default="omp")
    sp.add_argument("--t", type=int, default=3)
    sp.add_argument("--lam", type=float, default=0.1)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--sigma2", type=float, default=0.01)

    sp = add("dksvd", cmd_dksvd, "discriminative K-SVD")
    data_opts(sp)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--t", type=int, required=True)
    sp.add_argument("--iters", type=int, default=20)
    sp.add_argument("--alpha", type=float, default=None)

    sp = add("scmlp-train", cmd_scmlp_train, "train the sparse-code MLP pipeline")
    sp.add_argument("--data", required=True)
    sp.add_argument("--val-data", default=None, help="separate validation set")
    sp.add_argument("--val", type=int, default=0, help="hold out this many training samples for validation")
    sp.add_argument("--limit", type=int, default=None)

    sp = add("scmlp-eval", cmd_scmlp_eval, "evaluate a trained pipeline")
    data_opts(sp)
    sp.add_argument("--model", required=True)

    sp = add("fisher", cmd_fisher, "scatter traces and the Fisher term")
    data_opts(sp, required=False)
    sp.add_argument("--codes", default=None, help="stored sparse codes (labels come from --data)")
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--sign", choices=["printed", "discriminative"], default="printed")

    sp = add("plot", cmd_plot, "SVG figure from a training report or class-count CSV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--metric", choices=["accuracy", "loss"], default="accuracy")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_usage())
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise UsageError(parser.format_usage())
        for name in ("seed", "config", "workers", "out", "set"):
            if not hasattr(args, name):
                setattr(args, name, None)
        cfg = _config(args)
        out = None if args.command == "plot" or args.out is None else _outdir(args)
        args.func(args, cfg, out)
    except UsageError as e:
        print(str(e).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, FormatError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
