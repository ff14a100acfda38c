"""Command-line interface: every workflow as one seeded, deterministic subcommand.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Results go to stdout or --out files; diagnostics to stderr. Text output files
start with a comment line recording the tool version and the resolved config.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from resmem import __version__, datastore, evalsuite, knn, model, residual, synth, theory
from resmem.errors import DataFormatError, NumericError, ShapeMismatch
from resmem.residual import HyperParams


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _ints(text: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError as exc:
        raise _UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _floats(text: str) -> List[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError as exc:
        raise _UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _config_line(args: argparse.Namespace) -> str:
    # threads cannot affect results (ordered reductions), so it is left out
    # and output files stay byte-identical across thread counts
    pairs = sorted(
        (k, v)
        for k, v in vars(args).items()
        if k not in ("func", "subcommand", "threads")
    )
    return " ".join(f"{k.replace('_', '-')}={_fmt(v)}" for k, v in pairs)


def _echo_config(args: argparse.Namespace) -> None:
    print(f"tool=resmem version={__version__} subcommand={args.subcommand}")
    threads = getattr(args, "threads", None)
    suffix = f" threads={threads}" if threads is not None else ""
    print(f"config {_config_line(args)}{suffix}")


def _header(args: argparse.Namespace) -> str:
    return f"# resmem {__version__} {args.subcommand} {_config_line(args)}\n"


def _write_csv(path, args, header_cols, rows) -> None:
    with open(path, "w") as fh:
        fh.write(_header(args))
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _load_labeled(path) -> datastore.EmbeddingDataset:
    ds = datastore.load_dataset(path)
    if ds.labels is None:
        raise ShapeMismatch(f"{path}: labels required")
    return ds


# -- subcommands ---------------------------------------------------------------

def _cmd_demo_synth(args) -> int:
    ds = synth.demo_synthetic(args.seed, args.n, args.d, args.c)
    datastore.save_dataset(ds, args.out)
    _echo_config(args)
    print(f"written n={ds.n} d={ds.d} c={ds.c} out={args.out}")
    return 0


def _cmd_train_base(args) -> int:
    ds = _load_labeled(args.data)
    cfg = model.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    params = model.init_mlp(ds.d, args.hidden, ds.c, seed=args.seed)
    params, trace = model.train_sgd(params, ds.embeddings, ds.labels, cfg)
    model.save_mlp(params, args.out)
    _echo_config(args)
    for epoch, loss in enumerate(trace):
        print(f"epoch={epoch} loss={loss!r}")
    print(f"written out={args.out}")
    return 0


def _cmd_build_index(args) -> int:
    ds = datastore.load_dataset(args.data)
    params = model.load_mlp(args.model)
    emb, _ = evalsuite.model_outputs(params, ds)
    index = knn.build_ivf_index(emb, args.ivf_lists, iters=args.ivf_iters, seed=args.seed)
    knn.save_ivf(index, args.out)
    _echo_config(args)
    print(f"written n={index.n} d={index.d} n-list={index.n_list} out={args.out}")
    return 0


def _cmd_build_residuals(args) -> int:
    ds = _load_labeled(args.data)
    params = model.load_mlp(args.model)
    store = evalsuite.make_store(params, ds, args.temp, m=args.top_m)
    residual.save_store(store, args.out)
    _echo_config(args)
    print(f"written n={store.n} c={store.c} m={store.m} temp={store.temperature!r} out={args.out}")
    return 0


def _cmd_eval(args) -> int:
    train_ds = _load_labeled(args.data)
    eval_ds = _load_labeled(args.eval_data) if args.eval_data else train_ds
    params = model.load_mlp(args.model)

    emb, _ = evalsuite.model_outputs(params, train_ds)
    if args.index:
        index = knn.load_ivf(args.index, emb)
        n_probe = args.n_probe if args.n_probe else index.n_list
    else:
        index = knn.build_exact_index(emb)
        n_probe = 1
    if args.residuals:
        store = residual.load_store(args.residuals)
    else:
        store = evalsuite.make_store(params, train_ds, args.temp, m=args.top_m)

    hp = HyperParams(k=args.k, sigma=args.sigma, temperature=args.temp)
    metrics = evalsuite.evaluate(params, index, store, eval_ds, hp, n_probe, args.threads)
    _echo_config(args)
    for key in ("acc_base", "acc_resmem", "gain", "tpr", "fpr"):
        print(f"{key}={getattr(metrics, key)!r}")
    print(f"n_eval={metrics.n_eval}")
    if args.out:
        _write_csv(
            args.out,
            args,
            ["k", "sigma", "temp", "n_probe", "acc_base", "acc_resmem", "gain", "tpr", "fpr"],
            [[hp.k, hp.sigma, hp.temperature, n_probe, metrics.acc_base,
              metrics.acc_resmem, metrics.gain, metrics.tpr, metrics.fpr]],
        )
    return 0


def _parse_rule(text: str) -> evalsuite.SelectionRule:
    if text == "acc":
        return evalsuite.MaxAccuracy()
    if text.startswith("tpr-cap="):
        try:
            return evalsuite.MaxTprFprCap(cap=float(text.split("=", 1)[1]))
        except ValueError as exc:
            raise _UsageError(f"bad cap in rule {text!r}") from exc
    raise _UsageError(f"unknown rule {text!r}; use acc or tpr-cap=<cap>")


def _cmd_sweep(args) -> int:
    ds = _load_labeled(args.data)
    fractions = _floats(args.split)
    if len(fractions) != 3:
        raise _UsageError("--split needs three comma-separated fractions")
    spec = datastore.SplitSpec(fractions=tuple(fractions), seed=args.split_seed)
    train_ds, val_ds, test_ds = datastore.split(ds, spec)
    if train_ds is None or val_ds is None:
        raise ShapeMismatch("sweep requires nonempty train and val splits")
    params = model.load_mlp(args.model)
    rule = _parse_rule(args.rule)
    result = evalsuite.sweep(
        params,
        train_ds,
        val_ds,
        ks=_ints(args.grid_k),
        sigmas=_floats(args.grid_sigma),
        temps=_floats(args.grid_temp),
        rule=rule,
        n_probes=_ints(args.grid_nprobe) if args.grid_nprobe else (1,),
        m=args.top_m,
        threads=args.threads,
    )
    _echo_config(args)
    best = result.best
    print(
        f"selected k={best.hp.k} sigma={best.hp.sigma!r} temp={best.hp.temperature!r} "
        f"n_probe={best.n_probe} acc_resmem={best.metrics.acc_resmem!r} "
        f"tpr={best.metrics.tpr!r} fpr={best.metrics.fpr!r}"
    )
    if test_ds is not None:
        store = evalsuite.make_store(params, train_ds, best.hp.temperature, m=args.top_m)
        emb, _ = evalsuite.model_outputs(params, train_ds)
        index = knn.build_exact_index(emb)
        test_metrics = evalsuite.evaluate(
            params, index, store, test_ds, best.hp, best.n_probe, args.threads
        )
        print(
            f"test acc_base={test_metrics.acc_base!r} acc_resmem={test_metrics.acc_resmem!r} "
            f"gain={test_metrics.gain!r}"
        )
    if args.out:
        rows = [
            [r.hp.k, r.hp.sigma, r.hp.temperature, r.n_probe, r.metrics.acc_base,
             r.metrics.acc_resmem, r.metrics.gain, r.metrics.tpr, r.metrics.fpr]
            for r in result.rows
        ]
        _write_csv(
            args.out,
            args,
            ["k", "sigma", "temp", "n_probe", "acc_base", "acc_resmem", "gain", "tpr", "fpr"],
            rows,
        )
    return 0


def _cmd_theory_sim(args) -> int:
    prob = theory.make_problem(args.d, args.L, seed=args.seed,
                               random_direction=args.random_direction)
    table = theory.risk_curve(prob, _ints(args.n_grid), args.trials, args.m_test, args.threads)
    _echo_config(args)
    cols = ["n", "total_mean", "total_se", "t1_mean", "t1_se", "t2_mean", "t2_se",
            "erm_mean", "erm_se", "nn_mean", "nn_se"]
    rows = []
    for row in table.rows:
        rows.append([
            row.n,
            row.mean["total"], row.se["total"],
            row.mean["t1"], row.se["t1"],
            row.mean["t2"], row.se["t2"],
            row.mean["erm_only"], row.se["erm_only"],
            row.mean["pure_nn"], row.se["pure_nn"],
        ])
        print(f"n={row.n} total_mean={row.mean['total']!r} total_se={row.se['total']!r}")
    if args.out:
        _write_csv(args.out, args, cols, rows)
    return 0


def _cmd_znn_check(args) -> int:
    rows = theory.znn_concentration(args.d, _ints(args.n_grid), args.trials,
                                    seed=args.seed, threads=args.threads)
    _echo_config(args)
    out_rows = []
    for row in rows:
        out_rows.append([row.n, row.mean, row.se, row.bound, row.ratio])
        print(f"n={row.n} zn_mean={row.mean!r} bound={row.bound!r} ratio={row.ratio!r}")
    if args.out:
        _write_csv(args.out, args, ["n", "zn_mean", "zn_se", "bound", "ratio"], out_rows)
    return 0


_FIELD_TO_COLUMN = {"total": "total", "t1": "t1", "t2": "t2", "erm": "erm", "nn": "nn"}
_FIELD_TO_RISK = {"total": "total", "t1": "t1", "t2": "t2", "erm": "erm_only", "nn": "pure_nn"}


def _cmd_rate_fit(args) -> int:
    if args.field not in _FIELD_TO_COLUMN:
        raise _UsageError(f"unknown field {args.field!r}; choose from {sorted(_FIELD_TO_COLUMN)}")
    with open(args.infile) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ShapeMismatch(f"{args.infile}: no rows")
    header = lines[0].split(",")
    col = f"{_FIELD_TO_COLUMN[args.field]}_mean"
    if "n" not in header or col not in header:
        raise ShapeMismatch(f"{args.infile}: missing column n or {col}")
    n_i, v_i = header.index("n"), header.index(col)
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        field = _FIELD_TO_RISK[args.field]
        mean = {f: 0.0 for f in theory.RISK_FIELDS}
        mean[field] = float(parts[v_i])
        rows.append(theory.RiskRow(n=int(parts[n_i]), mean=mean, se={}))
    slope = theory.rate_fit(theory.RiskTable(rows=rows), _FIELD_TO_RISK[args.field])
    _echo_config(args)
    print(f"slope={slope!r}")
    return 0


# -- parser wiring --------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="resmem", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("demo-synth", _cmd_demo_synth, "generate Gaussian-mixture data")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--c", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("train-base", _cmd_train_base, "train the base classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("build-index", _cmd_build_index, "build an inverted-file index")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--ivf-lists", type=int, required=True)
    p.add_argument("--ivf-iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("build-residuals", _cmd_build_residuals, "build the residual store")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--temp", type=float, default=1.0)
    p.add_argument("--top-m", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("eval", _cmd_eval, "evaluate base vs combined predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="memorized (training) set")
    p.add_argument("--eval-data", default=None, help="held-out set; defaults to --data")
    p.add_argument("--index", default=None, help="RIVF file; exact scan when omitted")
    p.add_argument("--residuals", default=None, help="RRES file; built from --data when omitted")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--temp", type=float, default=1.0)
    p.add_argument("--top-m", type=int, default=None)
    p.add_argument("--n-probe", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)

    p = add("sweep", _cmd_sweep, "grid-search hyperparameters on a validation split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="0.6,0.2,0.2")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--rule", default="acc")
    p.add_argument("--grid-k", required=True)
    p.add_argument("--grid-sigma", required=True)
    p.add_argument("--grid-temp", required=True)
    p.add_argument("--grid-nprobe", default=None)
    p.add_argument("--top-m", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)

    p = add("theory-sim", _cmd_theory_sim, "Monte-Carlo risk curves for the linear problem")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--L", type=float, default=0.5)
    p.add_argument("--n-grid", default="16,64,256,1024,4096")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--m-test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-direction", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)

    p = add("znn-check", _cmd_znn_check, "nearest-neighbor distance concentration table")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n-grid", default="4,16,64,256,1024")
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)

    p = add("rate-fit", _cmd_rate_fit, "log-log slope of a risk-table column")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--field", default="t1")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise _UsageError("--threads must be >= 1")
        return args.func(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"resmem: error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"resmem: data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"resmem: numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"resmem: io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
