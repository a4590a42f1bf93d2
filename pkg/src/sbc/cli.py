"""Operator entry point: catalog ingestion, index building, queries, and the
benchmark/experiment commands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from sbc.core import ConfigError, DomainError, StorageError
from sbc.dbranch import DBranchConfig
from sbc.bench import DatasetUnavailable
from sbc import bench, engine

__all__ = ["main", "build_parser"]


def _emit(args, payload: dict, human: str = "") -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True, default=str))
    elif human:
        print(human)


def _load_catalog(path: str):
    p = Path(path)
    if p.suffix == ".csv":
        return engine.load_catalog_csv(p)
    return engine.load_catalog_packed(p, mmap=True)


def cmd_ingest(args) -> int:
    dataset = engine.load_catalog_csv(args.input)
    engine.save_catalog_packed(dataset, args.out)
    payload = {"ok": True, "n": dataset.n, "d": dataset.d,
               "has_labels": dataset.has_labels, "out": str(args.out)}
    _emit(args, payload, f"ingested {dataset.n} rows x {dataset.d} features -> {args.out}.bin")
    return 0


def cmd_build_index(args) -> int:
    catalog = _load_catalog(args.catalog)
    iset = engine.preprocess(
        catalog, k=args.k, D=args.D, leaf_size=args.leaf_size,
        layout=args.layout, seed=args.seed, out_dir=args.out,
        catalog_path=str(Path(args.catalog).resolve()),
    )
    iset.close()
    payload = {"ok": True, "k": args.k, "D": args.D, "out": str(args.out),
               "subsets": iset.manifest["subsets"], "seed": args.seed}
    _emit(args, payload, f"built {args.k} indexes (D={args.D}) under {args.out}")
    return 0


def cmd_query(args) -> int:
    iset = engine.load_index_set(args.index_dir)
    query_set = engine.load_catalog_csv(args.query)
    if not query_set.has_labels:
        raise DomainError(f"{args.query}: query file needs a 'label' column")
    cfg = DBranchConfig(
        subsets=iset.subsets,
        p=args.p if args.p else max(1, int(round(np.sqrt(len(iset.subsets))))),
        mu=args.mu,
        variant=args.variant,
        p_m=args.pm,
        rng_seed=args.seed,
    )
    result = engine.process_query(iset, query_set, cfg,
                                  ensemble_size=args.ensemble, threads=args.threads)
    payload = {
        "ok": True,
        "positive_ids": [int(i) for i in result.positive_ids],
        "per_branch_counts": result.per_branch_counts,
        "timings": result.timings,
        "seed": args.seed,
    }
    verified = None
    if args.verify_scan:
        manifest_catalog = iset.manifest.get("catalog", {}).get("path")
        catalog_path = args.catalog or manifest_catalog
        if not catalog_path:
            raise ConfigError("--verify-scan needs --catalog or a manifest catalog path")
        catalog = _load_catalog(catalog_path)
        from sbc.dbranch import ensemble_fit, fit_decision_branches

        fitted = ensemble_fit(query_set, cfg, args.ensemble) if args.ensemble > 1 \
            else fit_decision_branches(query_set, cfg)
        oracle_ids = engine.scan_oracle(catalog, fitted)
        verified = bool(np.array_equal(oracle_ids, result.positive_ids))
        payload["verify_scan"] = "MATCH" if verified else "MISMATCH"
    if args.out:
        with open(args.out, "w") as fh:
            for i in result.positive_ids:
                fh.write(f"{int(i)}\n")
    shown = ",".join(str(int(i)) for i in result.positive_ids[:40])
    if len(result.positive_ids) > 40:
        shown += f",... ({len(result.positive_ids) - 40} more)"
    lines = [f"{len(result.positive_ids)} positives: {shown}",
             f"t_train={result.timings['t_train']:.3f}s "
             f"t_query={result.timings['t_query']:.3f}s"]
    if verified is not None:
        lines.append("verify-scan: " + ("MATCH" if verified else "MISMATCH"))
    _emit(args, payload, "\n".join(lines))
    iset.close()
    return 0 if verified in (None, True) else 1


def cmd_bench(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    report = bench.run_benchmark(config, data_dir=args.data_dir,
                                 threads=args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench.write_report_csv(report, out_dir / "report.csv")
    with open(out_dir / "report.json", "w") as fh:
        json.dump({"rows": report.rows, "config": report.config}, fh, indent=2)
    payload = {"ok": True, "rows": report.rows}
    _emit(args, payload,
          "\n".join(f"{r['dataset']:>10} {r['model']:<22} "
                    f"F1 {r['f1_mean']:.3f} +- {r['f1_std']:.3f}"
                    for r in report.rows))
    return 0


def cmd_scaling(args) -> int:
    rows = bench.scaling_experiment(
        n_grid=args.n_grid, D=args.D, leaf_budget=args.leaf_budget,
        leaf_size=args.leaf_size, n_boxes=args.boxes, repeats=args.repeats,
        seed=args.seed,
    )
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write("N,mean_t,std_t\n")
        for n, mean_t, std_t in rows:
            fh.write(f"{n},{mean_t!r},{std_t!r}\n")
    slope = bench.fit_loglog_slope([r[0] for r in rows], [r[1] for r in rows]) \
        if len(rows) > 1 else None
    payload = {"ok": True, "rows": rows, "loglog_slope": slope, "out": str(out)}
    _emit(args, payload,
          "\n".join(f"N={n:>9} mean={m * 1e6:9.1f}us" for n, m, _ in rows)
          + (f"\nlog-log slope: {slope:.3f}" if slope is not None else ""))
    return 0


def cmd_leafsize(args) -> int:
    rows = bench.leaf_size_experiment(
        sizes=args.sizes, n=args.n, d=args.d, D_values=args.D_values,
        mode=args.mode, seed=args.seed,
    )
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write("D,leaf_size,mode,mean_query_s,inner_memory_bytes\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    payload = {"ok": True, "rows": rows, "out": str(out)}
    _emit(args, payload,
          "\n".join(f"D={d} leaf_size={ls:>6} {mode} "
                    f"t={t * 1e3:8.3f}ms mem={mem}B" for d, ls, mode, t, mem in rows))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from sbc.service import create_app

    app = create_app(index_dir=args.index_dir, catalog_path=args.catalog,
                     static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbc",
        description="search-by-classification over pre-built k-d tree indexes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a CSV catalog and pack it")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output base path (.bin/.json)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-index", help="sample subsets and build indexes")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--leaf-size", type=int, default=5632, dest="leaf_size")
    p.add_argument("--layout", choices=["Ts", "Ta"], default="Ts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="answer a labeled query set via the indexes")
    p.add_argument("--index-dir", required=True, dest="index_dir")
    p.add_argument("--query", required=True, help="CSV with id, features, label")
    p.add_argument("--variant", choices=["B", "Ts", "Ta"], default="B")
    p.add_argument("--p", type=int, default=0, help="subsets tested per box (0: sqrt k)")
    p.add_argument("--mu", type=int, default=1)
    p.add_argument("--pm", type=int, default=20)
    p.add_argument("--ensemble", type=int, default=1, metavar="M")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--catalog", default=None, help="catalog for --verify-scan")
    p.add_argument("--verify-scan", action="store_true", dest="verify_scan")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="write positive ids, one per line")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="run the benchmark protocol from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data-dir", default=None, dest="data_dir")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scaling", help="k-d tree traversal scaling curve")
    p.add_argument("--out", required=True)
    p.add_argument("--n-grid", type=int, nargs="+", dest="n_grid",
                   default=[10_000, 100_000, 1_000_000])
    p.add_argument("--D", type=int, default=3)
    p.add_argument("--leaf-budget", type=int, default=10, dest="leaf_budget")
    p.add_argument("--leaf-size", type=int, default=256, dest="leaf_size")
    p.add_argument("--boxes", type=int, default=300)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("leafsize", help="query time and memory across leaf sizes")
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", type=int, nargs="+",
                   default=[22, 176, 704, 5632, 22582])
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--D-values", type=int, nargs="+", default=[3, 6], dest="D_values")
    p.add_argument("--mode", choices=["warm", "cold"], default="warm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_leafsize)

    p = sub.add_parser("serve", help="run the interactive HTTP service")
    p.add_argument("--index-dir", required=True, dest="index_dir")
    p.add_argument("--catalog", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static-dir", default=None, dest="static_dir")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, ConfigError, DatasetUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StorageError as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
