"""Command-line entry point: ``edapipe <subcommand>``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 golden
mismatch, 5 stage failure. ``EDAPIPE_SEED`` supplies the default seed;
``--config FILE`` reads flat ``key = value`` defaults that explicit
flags override.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

from . import __version__, acquisition, manifest as manifest_mod
from .errors import (ConfigError, DataError, EdapipeError, GoldenMismatch,
                     StageFailure)
from .evaluation import (CvResult, class_report, grid_configs, load_cm_csv,
                         macro_gmean, macro_gmean_detail, run_cv, weighted_tpr)
from .features import DatasetMatrix, FEATURE_COLUMNS, LABEL_COLUMNS, assemble_dataset
from .goldens import run_golden_checks
from .ingest import DEFAULT_RATE_CAP, IngestServer
from .models import (MlpConfig, RfConfig, save_model, train_mlp, train_rf)
from .plots import render_session_svg
from .select import encode_class, min_max_normalize, rank_features, select_top_k
from .signal import load_session, process_session

TARGETS = tuple(LABEL_COLUMNS)


def _default_seed() -> int:
    env = os.environ.get("EDAPIPE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"EDAPIPE_SEED: not an integer: {env!r}") from exc
    return 1


def _parse_config_file(path: str) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config file line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        for cast in (int, float):
            try:
                values[key] = cast(value)
                break
            except ValueError:
                continue
        else:
            values[key] = value
    return values


def _resolve_out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"out: {path} is not writable: {exc}") from exc
    return out


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args, argv) -> int:
    config = acquisition.SessionConfig(
        subject_id=args.subject,
        mvc_force=args.mvc_force,
        occlusion_pressure=args.occlusion_pressure,
        stretch_force=args.stretch_force,
        vas_post=args.vas,
        sample_rate=args.rate,
        seed=args.seed,
    )
    out = _resolve_out_dir(args.out)
    record = acquisition.simulate_subject(config)
    store = acquisition.SessionStore(out)
    store.write_session(record)
    manifest_mod.write_manifest(
        out / "manifest.json", "simulate", argv,
        config=config.__dict__ | {"frames": len(record.frames)},
        seed=args.seed, inputs=[], outputs=[out],
    )
    print(f"simulated {len(record.frames)} frames for {args.subject} -> {out}")
    return 0


def cmd_serve(args, argv) -> int:
    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"listen: expected host:port, got {args.listen!r}")
    store = acquisition.SessionStore(_resolve_out_dir(args.store))
    server = IngestServer(store, host, int(port), rate_cap=args.rate_cap)
    server.start()
    actual = server.address
    print(f"ingest service on {actual[0]}:{actual[1]} "
          f"(rate cap {args.rate_cap}/min per connection)")
    try:
        if args.max_seconds is not None:
            time.sleep(args.max_seconds)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


PROCESS_HEADER = ["t_ms", "sc_uS", "tonic_uS", "phasic_uS", "psm_cm",
                  "psm_filtered_cm"]


def cmd_process(args, argv) -> int:
    record = load_session(args.session)
    processed = process_session(record)
    rows = [
        [int(t), _fmt(sc), _fmt(to), _fmt(ph), _fmt(pc), _fmt(pf)]
        for t, sc, to, ph, pc, pf in zip(
            processed.t_ms, processed.conductance.values,
            processed.tonic.values, processed.phasic.values,
            processed.psm_cm.values, processed.psm_filtered_cm.values,
        )
    ]
    out = Path(args.out)
    _write_csv(out, PROCESS_HEADER, rows)
    outputs = [out]
    if args.svg:
        render_session_svg(processed, args.svg)
        outputs.append(Path(args.svg))
    manifest_mod.write_manifest(
        manifest_mod.manifest_path_for(out), "process", argv,
        config={"session": str(args.session)}, seed=None,
        inputs=[args.session], outputs=outputs,
    )
    print(f"processed {len(rows)} samples, {len(processed.peaks)} peaks -> {out}")
    return 0


def cmd_features(args, argv) -> int:
    store = acquisition.SessionStore(args.store)
    session_ids = store.list_sessions()
    if not session_ids:
        raise DataError(f"no sessions under {args.store}")
    processed = [process_session(store.read_session(s)) for s in session_ids]
    dataset = assemble_dataset(processed)
    out = Path(args.out)
    dataset.to_csv(out)
    manifest_mod.write_manifest(
        manifest_mod.manifest_path_for(out), "features", argv,
        config={"store": str(args.store), "sessions": session_ids,
                "rows": len(dataset)},
        seed=None, inputs=[args.store], outputs=[out],
    )
    print(f"assembled {len(dataset)} rows x {len(dataset.values[0]) + 2} "
          f"columns from {len(session_ids)} sessions -> {out}")
    return 0


RANKING_HEADER = ["rank", "feature", "p_value", "selected", "removable"]


def cmd_select(args, argv) -> int:
    dataset = DatasetMatrix.from_csv(args.dataset)
    normalized = min_max_normalize(dataset.values)
    ranking = rank_features(normalized, args.target, cutoff=args.cutoff)
    chosen = set(select_top_k(ranking, args.k))
    rows = []
    for rank, (j, name, p) in enumerate(
            zip(ranking.order, ranking.names, ranking.p_values), 1):
        rows.append([rank, name, _fmt(p), str(j in chosen).lower(),
                     str(name in ranking.removable).lower()])
    out = Path(args.report)
    _write_csv(out, RANKING_HEADER, rows)
    manifest_mod.write_manifest(
        manifest_mod.manifest_path_for(out), "select", argv,
        config={"dataset": str(args.dataset), "target": args.target,
                "k": args.k, "cutoff": args.cutoff},
        seed=None, inputs=[args.dataset], outputs=[out],
    )
    print(f"ranked {len(rows)} features for {args.target} -> {out}")
    return 0


def _model_config(args, top_k: int):
    if args.model == "mlp":
        return MlpConfig(input_dim=top_k, hidden_nodes=args.hidden,
                         learning_rate=args.lr, momentum=args.momentum,
                         epochs=args.epochs, seed=args.seed)
    if args.model == "rf":
        return RfConfig(n_trees=args.trees, bag_percent=args.bag,
                        batch_size=args.batch_size, seed=args.seed)
    raise ConfigError(f"model: must be mlp or rf, got {args.model!r}")


def cmd_train(args, argv) -> int:
    dataset = DatasetMatrix.from_csv(args.dataset)
    normalized = min_max_normalize(dataset.values)
    y = encode_class(normalized.column(args.target))
    ranking = rank_features(normalized, args.target)
    feat_idx = select_top_k(ranking, args.k)
    X = normalized.values[:, :len(FEATURE_COLUMNS)][:, feat_idx]
    config = _model_config(args, args.k)
    model = train_mlp(X, y, config) if args.model == "mlp" \
        else train_rf(X, y, config)
    out = Path(args.out)
    save_model(model, out)
    manifest_mod.write_manifest(
        manifest_mod.manifest_path_for(out), "train", argv,
        config={"dataset": str(args.dataset), "target": args.target,
                "model": args.model, "k": args.k,
                "features": [FEATURE_COLUMNS[j] for j in feat_idx],
                "model_config": {k: v for k, v in config.__dict__.items()}},
        seed=args.seed, inputs=[args.dataset], outputs=[out],
    )
    print(f"trained {args.model} on {len(dataset)} rows -> {out}")
    return 0


SWEEP_HEADER = ["target", "family", "top_k", "hidden_nodes", "bag_percent",
                "weighted_tpr", "macro_gmean"]


def _sweep_row(target: str, family: str, config, result: CvResult) -> list:
    hidden = config.hidden_nodes if family == "mlp" else ""
    bag = config.bag_percent if family == "rf" else ""
    return [target, family, result.top_k, hidden, bag,
            _fmt(result.weighted_tpr), _fmt(result.macro_gmean)]


def cmd_evaluate(args, argv) -> int:
    dataset = DatasetMatrix.from_csv(args.dataset)
    rows = []
    if args.grid == "paper":
        for top_k, config in grid_configs(args.target, args.model, args.seed):
            result = run_cv(dataset, args.target, config, top_k=top_k,
                            k_folds=args.folds, seed=args.seed,
                            normalization=args.normalization)
            rows.append(_sweep_row(args.target, args.model, config, result))
    else:
        config = _model_config(args, args.k)
        result = run_cv(dataset, args.target, config, top_k=args.k,
                        k_folds=args.folds, seed=args.seed,
                        normalization=args.normalization)
        rows.append(_sweep_row(args.target, args.model, config, result))
        print(f"confusion matrix (rows = actual):\n{result.cm}")
    out = Path(args.report)
    _write_csv(out, SWEEP_HEADER, rows)
    manifest_mod.write_manifest(
        manifest_mod.manifest_path_for(out), "evaluate", argv,
        config={"dataset": str(args.dataset), "target": args.target,
                "model": args.model, "grid": args.grid or "single",
                "folds": args.folds, "normalization": args.normalization},
        seed=args.seed, inputs=[args.dataset], outputs=[out],
    )
    for row in rows:
        print(f"{row[0]:>9} {row[1]:>4} k={row[2]} hidden={row[3] or '-'} "
              f"bag={row[4] or '-'}: wtpr={float(row[5]):.4f} "
              f"gmean={float(row[6]):.4f}")
    return 0


def cmd_metrics(args, argv) -> int:
    cm = load_cm_csv(args.cm)
    detail = macro_gmean_detail(cm)
    report = class_report(cm)
    print(f"confusion matrix (rows = actual):\n{cm}")
    print(f"weighted TPR: {weighted_tpr(cm):.6f}")
    print(f"macro G-mean: {macro_gmean(cm):.6f}")
    print("class     sens    spec    tp_rate fp_rate precision f1")
    for i, name in enumerate(("low", "medium", "high")):
        print(f"{name:<8} {detail.sensitivity[i]:.4f}  "
              f"{detail.specificity[i]:.4f}  {report.tp_rate[i]:.4f}  "
              f"{report.fp_rate[i]:.4f}  {report.precision[i]:.4f}    "
              f"{report.f_measure[i]:.4f}")
    for flag in detail.degenerate + report.flags:
        print(f"note: {flag}")
    return 0


def cmd_goldens(args, argv) -> int:
    checks = run_golden_checks()
    failures = 0
    for c in checks:
        status = "PASS" if c.ok else "FAIL"
        if not c.ok:
            failures += 1
        print(f"{status} {c.case} {c.metric}: got {c.got:.6f}, "
              f"want {c.want:.6f} +/- {c.tol}")
    print(f"{len(checks) - failures}/{len(checks)} golden checks passed")
    if failures:
        raise GoldenMismatch(f"{failures} golden checks failed")
    return 0


def _stage(name: str, fn, *fn_args, **fn_kwargs):
    try:
        return fn(*fn_args, **fn_kwargs)
    except EdapipeError:
        raise
    except Exception as exc:
        raise StageFailure(f"stage {name!r} failed: {exc}") from exc


def run_demo(out_dir: Path, seed: int, n_subjects: int = 15,
             folds: int = 10) -> dict:
    """simulate -> process -> features -> select -> evaluate, all targets."""
    store = _stage("simulate", _demo_simulate, out_dir, seed, n_subjects)
    processed = _stage(
        "process", lambda: [process_session(store.read_session(s))
                            for s in store.list_sessions()]
    )
    _stage("plot", render_session_svg, processed[-1], out_dir / "trace.svg")

    dataset = _stage("features", assemble_dataset, processed)
    dataset.to_csv(out_dir / "dataset.csv")

    normalized = min_max_normalize(dataset.values)
    for target in TARGETS:
        ranking = _stage("select", rank_features, normalized, target)
        rows = [[r, n, _fmt(p)] for r, (n, p) in enumerate(
            zip(ranking.names, ranking.p_values), 1)]
        _write_csv(out_dir / f"ranking_{target}.csv",
                   ["rank", "feature", "p_value"], rows)

    sweep_rows = []
    winners = []
    for target in TARGETS:
        for family in ("rf", "mlp"):
            best = None
            for top_k, config in grid_configs(target, family, seed):
                result = _stage(
                    "evaluate", run_cv, dataset, target, config,
                    top_k=top_k, k_folds=folds, seed=seed,
                )
                sweep_rows.append(_sweep_row(target, family, config, result))
                if best is None or result.weighted_tpr > best[1].weighted_tpr:
                    best = (config, result)
            winners.append((target, family) + best)
    _write_csv(out_dir / "sweep.csv", SWEEP_HEADER, sweep_rows)

    results_rows = [
        _sweep_row(target, family, config, result)
        for target, family, config, result in winners
    ]
    _write_csv(out_dir / "results.csv", SWEEP_HEADER, results_rows)
    return {
        "rows": len(dataset),
        "winners": winners,
    }


def _demo_simulate(out_dir: Path, seed: int,
                   n_subjects: int) -> acquisition.SessionStore:
    store = acquisition.SessionStore(out_dir)
    for record in acquisition.simulate_cohort(n_subjects, seed=seed):
        store.write_session(record)
    return store


def cmd_demo(args, argv) -> int:
    out = _resolve_out_dir(args.out)
    t0 = time.monotonic()
    summary = run_demo(out, args.seed, n_subjects=args.subjects,
                       folds=args.folds)
    manifest_mod.write_manifest(
        out / "manifest.json", "demo", argv,
        config={"subjects": args.subjects, "folds": args.folds,
                "rows": summary["rows"]},
        seed=args.seed, inputs=[], outputs=[out],
    )
    print(f"demo on {args.subjects} subjects, {summary['rows']} dataset rows "
          f"({time.monotonic() - t0:.1f} s)")
    print(f"{'target':>9} {'family':>6} {'k':>2} {'config':>8} "
          f"{'wTPR':>7} {'G-mean':>7}")
    for target, family, config, result in summary["winners"]:
        param = (f"h={config.hidden_nodes}" if family == "mlp"
                 else f"bag={config.bag_percent:g}%")
        print(f"{target:>9} {family:>6} {result.top_k:>2} {param:>8} "
              f"{result.weighted_tpr:>7.4f} {result.macro_gmean:>7.4f}")
    print(f"artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edapipe",
        description="EDA/PSM acquisition, processing, and pain-intensity "
                    "classification pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="flat key=value defaults file")
        return p

    p = add("simulate", cmd_simulate, "simulate one subject session")
    p.add_argument("--subject", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--vas", type=float, default=5.0)
    p.add_argument("--mvc-force", type=float, default=120.0)
    p.add_argument("--occlusion-pressure", type=float, default=200.0)
    p.add_argument("--stretch-force", type=float, default=20.0)
    p.add_argument("--rate", type=float, default=2.0)

    p = add("serve", cmd_serve, "run the frame ingest service")
    p.add_argument("--listen", default="127.0.0.1:7070")
    p.add_argument("--store", required=True)
    p.add_argument("--rate-cap", type=int, default=DEFAULT_RATE_CAP)
    p.add_argument("--max-seconds", type=float, default=None,
                   help="stop after this long (default: run forever)")

    p = add("process", cmd_process, "condition one session into series CSV")
    p.add_argument("--session", required=True,
                   help="a sessions/<id> directory")
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None)

    p = add("features", cmd_features, "assemble the windowed dataset")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)

    p = add("select", cmd_select, "rank features per ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True, choices=TARGETS)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--cutoff", type=float, default=0.05)
    p.add_argument("--report", required=True)

    def add_model_args(p):
        p.add_argument("--dataset", required=True)
        p.add_argument("--target", required=True, choices=TARGETS)
        p.add_argument("--model", required=True, choices=("mlp", "rf"))
        p.add_argument("--k", type=int, default=3)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--hidden", type=int, default=50)
        p.add_argument("--lr", type=float, default=0.3)
        p.add_argument("--momentum", type=float, default=0.2)
        p.add_argument("--epochs", type=int, default=500)
        p.add_argument("--trees", type=int, default=100)
        p.add_argument("--bag", type=float, default=23.0)
        p.add_argument("--batch-size", type=int, default=50)

    p = add("train", cmd_train, "fit one model on the full dataset")
    add_model_args(p)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "stratified cross-validated evaluation")
    add_model_args(p)
    p.add_argument("--grid", choices=("paper",), default=None,
                   help="run the full configuration sweep")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--normalization", choices=("full", "per_fold"),
                   default="full")
    p.add_argument("--report", required=True)

    p = add("metrics", cmd_metrics, "metrics from an external confusion matrix")
    p.add_argument("--cm", required=True, help="3x3 CSV, rows = actual class")

    p = add("demo", cmd_demo, "end-to-end pipeline on a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subjects", type=int, default=15)
    p.add_argument("--folds", type=int, default=10)

    add("goldens", cmd_goldens, "verify metrics against golden tables")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]):
    """File values become subparser defaults; explicit flags still win."""
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return
    values = _parse_config_file(path)
    # Defaults propagate through the subparser that declares the dest.
    for action in parser._subparsers._group_actions:
        for sub in action.choices.values():
            known = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in values.items() if k in known})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse uses exit code 2 for bad usage
            return int(exc.code or 0)
        if getattr(args, "seed", None) is None and hasattr(args, "seed"):
            args.seed = _default_seed()
        return args.fn(args, argv)
    except ConfigError as exc:
        print(f"edapipe: configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"edapipe: data error: {exc}", file=sys.stderr)
        return 3
    except GoldenMismatch as exc:
        print(f"edapipe: {exc}", file=sys.stderr)
        return 4
    except StageFailure as exc:
        print(f"edapipe: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
