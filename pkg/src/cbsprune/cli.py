"""Command-line entry points: train-toy, gradgen, prune, evaluate, compare.

Exit codes: 0 success, 2 usage, 3 I/O or file format, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import mlp
from .errors import FormatError, NumericError
from .fisher import DenseHessian, EmpiricalFisher
from .pipeline import make_inverse, make_loss_eval, prune
from .tensor_io import (
    METHODS,
    ComparisonRecord,
    GradientMatrix,
    RunConfig,
    load_dataset_csv,
    load_gradient_matrix,
    load_weight_store,
    read_config_file,
    save_dataset_csv,
    save_gradient_matrix,
    save_weight_store,
    write_report,
)

log = logging.getLogger("cbsprune")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------

def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _load_batch(path) -> mlp.LabeledBatch:
    x, y = load_dataset_csv(path)
    return mlp.LabeledBatch(x, y)


def _load_net(path):
    store = load_weight_store(path)
    return store, mlp.MlpNetwork.from_store(store)


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_mapping(read_config_file(args.config), cfg)
    flags = {name: getattr(args, name, None) for name in (
        "sparsity", "method", "seed", "epsilon", "tau", "rho", "steps_max", "noimp_max",
        "buckets", "samples", "k", "damping", "block_size", "loss_eval")}
    return RunConfig.from_mapping(flags, cfg)


def _load_hessian(args, n):
    if args.hessian:
        store = load_weight_store(args.hessian)
        h = store[store.names[0]]
        if h.shape != (n, n):
            raise FormatError(f"Hessian file holds shape {h.shape}, weights need ({n}, {n})")
        return DenseHessian(h)
    if not args.grads:
        raise UsageError("one of --grads or --hessian is required")
    return EmpiricalFisher(load_gradient_matrix(args.grads, expected_n=n))


def _network_or_none(store):
    try:
        return mlp.MlpNetwork.from_store(store)
    except ValueError:
        return None


# --- subcommands ----------------------------------------------------------------

def cmd_train_toy(args) -> int:
    try:
        arch = _int_list(args.arch)
    except ValueError:
        raise UsageError(f"invalid --arch {args.arch!r}; expected comma-separated layer widths") from None
    if len(arch) < 2 or min(arch) < 1:
        raise UsageError(f"invalid --arch {args.arch!r}")
    generator = mlp.DATASETS[args.data]
    kwargs = {"noise": args.noise} if args.data == "rings" and args.noise is not None else {}
    data = generator(args.n, seed=args.seed, **kwargs)
    if arch[0] != data.inputs.shape[1] or arch[-1] < int(data.labels.max()) + 1:
        raise UsageError(f"--arch {args.arch} does not fit {args.data} (2 features, 2 classes)")
    train, test = mlp.train_test_split(data, args.test_fraction, seed=args.seed)
    hyper = mlp.TrainHyper(args.epochs, args.lr, args.batch_size, args.momentum)
    net, loss = mlp.train_toy(arch, train, hyper, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weight_store(net.to_store(), out / "weights.wts")
    save_dataset_csv(data.inputs, data.labels, out / "dataset.csv")
    save_dataset_csv(train.inputs, train.labels, out / "train.csv")
    save_dataset_csv(test.inputs, test.labels, out / "test.csv")
    print(f"train_loss={loss!r} train_accuracy={mlp.accuracy(net, train)!r} "
          f"test_accuracy={mlp.accuracy(net, test)!r} n_params={net.n_params}")
    return 0


def cmd_gradgen(args) -> int:
    _, net = _load_net(args.weights)
    batch = _load_batch(args.dataset)
    if batch.inputs.shape[1] != net.layer_dims[0] or batch.labels.max() >= net.n_classes:
        raise FormatError(f"dataset {args.dataset} does not match the network shape {net.layer_dims}")
    if args.k > len(batch) and not args.replace:
        raise UsageError(f"--k {args.k} exceeds the {len(batch)} examples; pass --replace to sample with replacement")
    rows = mlp.gradgen(net, batch, args.k, seed=args.seed, replace=args.replace)
    save_gradient_matrix(GradientMatrix(rows), args.out)
    print(f"K={rows.shape[0]} N={rows.shape[1]} out={args.out}")
    return 0


def cmd_prune(args) -> int:
    cfg = _resolve_config(args)
    store = load_weight_store(args.weights)
    w = store.flatten()
    hessian = _load_hessian(args, store.n)
    net, calib = _network_or_none(store), None
    if cfg.loss_eval == "network":
        if not args.dataset or net is None:
            raise UsageError("--loss-eval network needs an MLP weight file and --dataset for the calibration batch")
        calib = _load_batch(args.dataset)
    loss_eval = make_loss_eval(cfg, hessian, w, net, calib)
    start = time.perf_counter()
    outcome = prune(cfg.method, w, hessian, cfg, boundaries=store.layer_ranges(), loss_eval=loss_eval)
    elapsed = time.perf_counter() - start
    save_weight_store(store.unflatten(outcome.weights), args.out)
    if args.mask_out:
        Path(args.mask_out).write_text("".join(f"{i}\n" for i in outcome.mask.indices))
    print(f"method={cfg.method} sparsity={cfg.sparsity!r} seed={cfg.seed} pruned={outcome.mask.size} "
          f"N={store.n} surrogate_loss={outcome.surrogate_loss!r} runtime_s={elapsed:.3f}")
    return 0


def cmd_evaluate(args) -> int:
    store, net = _load_net(args.weights)
    batch = _load_batch(args.dataset)
    parts = [f"accuracy={mlp.accuracy(net, batch)!r}", f"loss={mlp.sample_loss(net, batch)!r}"]
    w = store.flatten()
    if args.grads or args.hessian:
        if not args.reference:
            raise UsageError("surrogate evaluation needs --reference (the unpruned weights)")
        ref = load_weight_store(args.reference).flatten()
        if ref.shape != w.shape:
            raise FormatError("--reference has a different parameter count")
        hessian = _load_hessian(args, store.n)
        pruned = np.flatnonzero(w == 0.0)
        parts.append(f"pruned={pruned.size}")
        parts.append(f"surrogate_loss={hessian.quadratic(w - ref)!r}")
    print(" ".join(parts))
    return 0


def compare_records(net, store, train, test, methods, sparsities, seeds, base_cfg, grads=None, timing=True):
    """One :class:`ComparisonRecord` per (method, sparsity, seed)."""
    w = store.flatten()
    records = []
    for seed in seeds:
        rows = grads if grads is not None else mlp.gradgen(
            net, train, base_cfg.k, seed=seed, replace=base_cfg.k > len(train))
        fisher = EmpiricalFisher(rows)
        inverse = None
        for method in methods:
            for r in sparsities:
                cfg = base_cfg.replace(method=method, sparsity=r, seed=seed)
                cfg.validate()
                if inverse is None and method in ("wfs", "cbs"):
                    inverse = make_inverse(fisher, cfg, store.layer_ranges())
                loss_eval = make_loss_eval(cfg, fisher, w, net, train)
                start = time.perf_counter()
                try:
                    outcome = prune(method, w, fisher, cfg, inverse=inverse,
                                    boundaries=store.layer_ranges(), loss_eval=loss_eval)
                except NumericError as exc:
                    raise NumericError(f"{method} at sparsity {r} seed {seed}: {exc}") from exc
                elapsed = time.perf_counter() - start if timing else 0.0
                acc = mlp.accuracy(net.with_flat(outcome.weights), test)
                records.append(ComparisonRecord(method, r, seed, max(outcome.surrogate_loss, 0.0), acc, elapsed))
    return records


def summary_rows(records):
    groups = {}
    for rec in sorted(records):
        groups.setdefault((rec.method, rec.sparsity), []).append(rec)
    return [
        (m, r, "mean", float(np.mean([x.surrogate_loss for x in g])),
         float(np.mean([x.accuracy for x in g])), float(np.mean([x.runtime_s for x in g])))
        for (m, r), g in sorted(groups.items())
    ]


def cmd_compare(args) -> int:
    methods = _str_list(args.methods)
    if not methods:
        raise UsageError("--methods is empty")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s) {unknown}")
    sparsities = _float_list(args.sparsities)
    seeds = _int_list(args.seeds)
    if not sparsities or not seeds:
        raise UsageError("--sparsities and --seeds must be non-empty")
    cfg = _resolve_config(args)
    store, net = _load_net(args.weights)
    train = _load_batch(args.train)
    test = _load_batch(args.dataset)
    grads = load_gradient_matrix(args.grads, expected_n=store.n).rows if args.grads else None
    records = compare_records(net, store, train, test, methods, sparsities, seeds, cfg, grads, timing=not args.no_timing)
    summary = summary_rows(records)
    write_report(records, args.out, summary)
    for m, r, _, surr, acc, _ in summary:
        print(f"{m:6s} sparsity={r:<5} mean_accuracy={acc:.4f} mean_surrogate={surr:.6g}")
    return 0


# --- parser ---------------------------------------------------------------------

def _add_algorithm_flags(p):
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float, help="minimum swap improvement (default 1e-4)")
    p.add_argument("--tau", type=int, help="max net failed swap attempts per step (default 20)")
    p.add_argument("--rho", type=int, help="candidate window radius (default 10)")
    p.add_argument("--steps-max", dest="steps_max", type=int, help="default 50")
    p.add_argument("--noimp-max", dest="noimp_max", type=int, help="default 5")
    p.add_argument("--buckets", type=int, help="randomized construction bucket count (default 64)")
    p.add_argument("--samples", type=int, help="randomized construction sample count (default 16)")
    p.add_argument("--damping", type=float, help="inverse Fisher damping (default 1e-4)")
    p.add_argument("--block-size", dest="block_size", type=int, help="inverse Fisher block size; 0 = one block per layer")
    p.add_argument("--k", type=int, help="gradient samples for the Fisher (default 200)")
    p.add_argument("--loss-eval", dest="loss_eval", choices=["surrogate", "network"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbsprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train a small MLP on a synthetic dataset")
    p.add_argument("--arch", required=True, help="layer widths, e.g. 2,16,16,2")
    p.add_argument("--data", choices=sorted(mlp.DATASETS), default="rings")
    p.add_argument("--n", type=int, default=800, help="dataset size")
    p.add_argument("--noise", type=float, help="ring radial noise (rings only)")
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.25)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("gradgen", help="per-sample gradients at the trained point (GRD1)")
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replace", action="store_true", help="sample examples with replacement")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradgen)

    p = sub.add_parser("prune", help="prune a weight file with one method")
    p.add_argument("--weights", required=True)
    p.add_argument("--grads", help="GRD1 gradient file for the empirical Fisher")
    p.add_argument("--hessian", help="WTS1 file holding one explicit N x N Hessian tensor")
    p.add_argument("--dataset", help="calibration batch for --loss-eval network")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", dest="mask_out", help="write pruned indices, one per line")
    _add_algorithm_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("evaluate", help="accuracy and optional surrogate loss of a weight file")
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--grads")
    p.add_argument("--hessian")
    p.add_argument("--reference", help="unpruned weights, needed for the surrogate loss")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="method x sparsity x seed comparison report (CSV)")
    p.add_argument("--weights", required=True)
    p.add_argument("--train", required=True, help="gradient source and calibration batch")
    p.add_argument("--dataset", required=True, help="test set for accuracy")
    p.add_argument("--grads", help="fixed GRD1 file instead of per-seed gradient sampling")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--sparsities", default="0.9,0.95")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--no-timing", dest="no_timing", action="store_true",
                   help="write 0 runtimes so reports are byte-reproducible")
    p.add_argument("--out", required=True)
    _add_algorithm_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
