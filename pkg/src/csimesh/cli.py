"""Command-line interface: simulate, ingest, features, study, sweep, stats, report.

All outputs are plain CSV/JSON; there is no interactive mode.  The output
directory and the collector ports can also be set through the environment
variables CSIMESH_OUT_DIR, CSIMESH_SERVER_PORT, and CSIMESH_BURST_PORT.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import protocol, report as reportmod, study as studymod, synth
from .learn import MlpConfig
from .pipeline import (
    DEFAULT_FRAME_MS,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    extract_features_batch,
    link_series_from_frames,
    synchronize,
)
from .protocol import (
    BadLength,
    BadMagic,
    CrcMismatch,
    CsiCollector,
    TimestampUnwrapper,
    decode_packet,
    encode_packet,
    iter_capture,
    write_capture,
)
from .study import FEATURE_TABLE_COLUMNS, StudyConfig, forward_chain_folds


def _default_out() -> str:
    return os.environ.get("CSIMESH_OUT_DIR", ".")


def _env_port(name: str, default: int) -> int:
    return int(os.environ.get(name, default))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- simulate ----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    timeline_kwargs = {}
    if args.day_length_s is not None:
        timeline_kwargs["day_length_s"] = args.day_length_s
    if args.empty_target is not None:
        timeline_kwargs["empty_target"] = args.empty_target
    config = synth.SimConfig(
        scenario=args.scenario,
        days=args.days,
        seed=args.seed,
        timeline=synth.TimelineParams(**timeline_kwargs),
    )
    run = synth.run_simulation(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    packets_path = out / "packets.bin"
    labels_path = out / "labels.csv"
    meta_path = out / "sim_meta.json"

    total = 0
    with open(packets_path, "wb") as fp:
        for day in range(1, config.days + 1):
            buf = run.encode_day(day)
            fp.write(buf)
            total += run.cycles_per_day * len(run.node_order) * (len(run.node_order) - 1)
    with open(labels_path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(("day", "cycle_index", "start_us", "end_us", "label", "state"))
        for row in run.labels():
            writer.writerow(row)
    meta_path.write_text(json.dumps(run.meta(), indent=2, sort_keys=True))
    print(f"simulate: {total} packets over {config.days} days -> {packets_path}")
    print(f"simulate: empty fraction {run.timeline.empty_fraction():.3f}")
    return 0


# --- ingest ------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    counts = {"decoded": 0, "bad_magic": 0, "bad_length": 0, "crc_mismatch": 0}
    if args.infile:
        with open(out_path, "wb") as dst:
            def valid_packets():
                for buf in iter_capture(args.infile):
                    try:
                        decode_packet(buf)
                    except BadMagic:
                        counts["bad_magic"] += 1
                    except BadLength:
                        counts["bad_length"] += 1
                    except CrcMismatch:
                        counts["crc_mismatch"] += 1
                    else:
                        counts["decoded"] += 1
                        yield buf

            write_capture(dst, valid_packets())
    else:
        ports = (
            [int(p) for p in args.ports.split(",")]
            if args.ports
            else [
                _env_port("CSIMESH_SERVER_PORT", protocol.DEFAULT_SERVER_PORT),
                _env_port("CSIMESH_BURST_PORT", protocol.DEFAULT_BURST_PORT),
            ]
        )
        deadline = time.monotonic() + args.duration
        with CsiCollector(host=args.listen, ports=ports) as collector, open(out_path, "wb") as dst:
            print(f"ingest: listening on {collector.ports} for {args.duration}s")
            while time.monotonic() < deadline and counts["decoded"] < args.count:
                pkt = collector.poll()
                if pkt is None:
                    time.sleep(0.005)
                    continue
                write_capture(dst, [encode_packet(pkt)])
                counts["decoded"] += 1
            counts["bad_magic"] = collector.stats.bad_magic
            counts["bad_length"] = collector.stats.bad_length
            counts["crc_mismatch"] = collector.stats.crc_mismatch
            print(f"ingest: ring dropped {collector.dropped}")
    print(
        "ingest: decoded={decoded} bad_magic={bad_magic} "
        "bad_length={bad_length} crc_mismatch={crc_mismatch}".format(**counts)
    )
    return 0


# --- features ----------------------------------------------------------------


def _load_label_index(path: str) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    per_day: dict[int, tuple[list[int], list[int]]] = {}
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        next(reader)
        for row in reader:
            day = int(row[0])
            starts, labels = per_day.setdefault(day, ([], []))
            starts.append(int(row[2]))
            labels.append(int(row[4]))
    return {
        d: (np.array(s, dtype=np.int64), np.array(l, dtype=np.int8))
        for d, (s, l) in per_day.items()
    }


def _window_label(
    label_index: dict[int, tuple[np.ndarray, np.ndarray]], day: int, start_us: int, end_us: int
) -> int | None:
    if day not in label_index:
        return None
    starts, labels = label_index[day]
    i0 = max(0, int(np.searchsorted(starts, start_us, side="right")) - 1)
    i1 = max(0, int(np.searchsorted(starts, end_us, side="right")) - 1)
    span = labels[i0 : i1 + 1]
    if span.size == 0:
        return None
    return int(span.mean() >= 0.5)


def cmd_features(args: argparse.Namespace) -> int:
    meta = json.loads(Path(args.meta).read_text())
    node_ids = [int(n) for n in meta["node_ids"]]
    slot_ms = float(meta["slot_ms"])
    day_us = int(meta["day_length_us"])
    label_index = _load_label_index(args.labels) if args.labels else None

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    unwrappers: dict[int, TimestampUnwrapper] = {}
    columns = list(FEATURE_TABLE_COLUMNS)
    if label_index is None:
        columns.remove("label")

    n_rows = 0
    with open(out_path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(columns)

        def flush_day(day: int, packets: list, ts64s: list[int]) -> None:
            nonlocal n_rows
            frames = synchronize(
                packets, node_ids, slot_ms=slot_ms, frame_ms=args.frame_ms, timestamps=ts64s
            )
            links = sorted({link for f in frames for link in f.packets})
            for link in links:
                ts, amps = link_series_from_frames(frames, link)
                if len(ts) < args.window:
                    continue
                feats, flags = extract_features_batch(amps, args.window, args.stride)
                for widx in range(feats.shape[0]):
                    start = int(ts[widx * args.stride])
                    end = int(ts[widx * args.stride + args.window - 1])
                    row = [link[0], link[1], day, widx, start, end]
                    row.extend(_fmt(v) for v in feats[widx])
                    if label_index is not None:
                        label = _window_label(label_index, day, start, end)
                        row.append("" if label is None else label)
                    row.append(";".join(sorted(flags[widx])))
                    writer.writerow(row)
                    n_rows += 1

        current_day = None
        day_packets: list = []
        day_ts: list[int] = []
        for buf in iter_capture(args.packets):
            pkt = decode_packet(buf)
            unwrapper = unwrappers.setdefault(pkt.node_id, TimestampUnwrapper())
            ts64 = unwrapper.unwrap(pkt.timestamp_us)
            day = ts64 // day_us + 1
            if current_day is None:
                current_day = day
            if day != current_day:
                flush_day(int(current_day), day_packets, day_ts)
                day_packets, day_ts = [], []
                current_day = day
            day_packets.append(pkt)
            day_ts.append(ts64)
        if day_packets:
            flush_day(int(current_day), day_packets, day_ts)
    print(f"features: wrote {n_rows} windows -> {out_path}")
    return 0


# --- study / sweep -----------------------------------------------------------


def _parse_config_spec(spec: str, args: argparse.Namespace) -> StudyConfig:
    parts = spec.split(":")
    mlp_cfg = MlpConfig(max_epochs=args.mlp_epochs)
    base = dict(
        classifier=args.classifier,
        seed=args.seed,
        l2_lambda=args.l2_lambda,
        max_iter=args.max_iter,
        mlp=mlp_cfg,
    )
    if parts[0] == "all":
        return StudyConfig(policy="all", **base)
    if parts[0] == "top_k":
        criterion = parts[1] if len(parts) > 1 else args.criterion
        k = int(parts[2]) if len(parts) > 2 else args.links
        return StudyConfig(policy="top_k", criterion=criterion, k=k, **base)
    if parts[0] == "random_k":
        k = int(parts[1]) if len(parts) > 1 else args.links
        return StudyConfig(policy="random_k", k=k, **base)
    raise SystemExit(f"unknown config spec {spec!r}")


def cmd_study(args: argparse.Namespace) -> int:
    dataset = studymod.load_dataset(args.features)
    day_count = int(dataset.days.max())
    folds = forward_chain_folds(day_count, args.min_train_days)
    all_results = []
    scores_rows = []
    for spec in args.configs.split(","):
        config = _parse_config_spec(spec.strip(), args)
        results = studymod.run_configuration(dataset, folds, config, keep_scores=bool(args.scores_csv))
        all_results.extend(results)
        mean, std, n = studymod.summarize_aucs(results)
        print(f"study: {config.config_id}: AUC {mean:.3f} +/- {std:.3f} over {n} folds")
        if args.scores_csv:
            for r in results:
                if r.scores is None:
                    continue
                for i, (s, yl) in enumerate(zip(r.scores, r.test_labels)):
                    scores_rows.append((f"{r.fold.test_day}:{i}", _fmt(s), int(yl), r.fold.test_day, r.config_id))
    meta = {
        "features": str(args.features),
        "day_count": day_count,
        "min_train_days": args.min_train_days,
        "seed": args.seed,
        "classifier": args.classifier,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    studymod.save_results(all_results, out, meta=meta)
    if args.scores_csv:
        with open(args.scores_csv, "w", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(("sample_id", "score", "label", "fold", "configuration"))
            writer.writerows(scores_rows)
    print(f"study: wrote {out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    dataset = studymod.load_dataset(args.features)
    day_count = int(dataset.days.max())
    folds = forward_chain_folds(day_count, args.min_train_days)
    counts = [int(c) for c in args.counts.split(",")]
    config = StudyConfig(
        policy="top_k",
        criterion=args.criterion,
        classifier=args.classifier,
        seed=args.seed,
        l2_lambda=args.l2_lambda,
        max_iter=args.max_iter,
        mlp=MlpConfig(max_epochs=args.mlp_epochs),
    )
    sweep = studymod.link_count_sweep(dataset, folds, counts, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "features": str(args.features),
        "counts": counts,
        "criterion": args.criterion,
        "classifier": args.classifier,
        "seed": args.seed,
        "min_train_days": args.min_train_days,
    }
    studymod.save_results(sweep.all_results(), out / "sweep_results.json", meta=meta)
    with open(out / "sweep.csv", "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(("link_count", "mean_auc", "std_auc", "fold_count"))
        for row in sweep.rows:
            writer.writerow((row.link_count, _fmt(row.mean_auc), _fmt(row.std_auc), row.fold_count))
    for row in sweep.rows:
        print(f"sweep: {row.link_count:3d} links -> AUC {row.mean_auc:.3f} +/- {row.std_auc:.3f}")
    print(f"sweep: wrote {out / 'sweep.csv'}")
    return 0


# --- stats / report ------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    results, meta = studymod.load_results(args.results)
    by_config: dict[str, list] = {}
    for r in results:
        by_config.setdefault(r.config_id, []).append(r)
    summaries = []
    for pair in args.pairs.split(","):
        cid_a, cid_b = pair.split(":")
        if cid_a not in by_config or cid_b not in by_config:
            raise SystemExit(f"stats: missing configuration in {pair!r}")
        summary = studymod.compare_configurations(
            by_config[cid_a], by_config[cid_b], seed=args.seed
        )
        summaries.append(summary.to_dict())
        print(
            f"stats: {cid_a} vs {cid_b}: diff {summary.mean_diff:+.3f} "
            f"t={summary.t_stat:.2f} (p={summary.t_p:.4f}) "
            f"W={summary.wilcoxon_w:.1f} (p={summary.wilcoxon_p:.4f}) "
            f"d={summary.cohens_d:.2f} CI[{summary.ci_lo:+.3f},{summary.ci_hi:+.3f}]"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"meta": meta, "comparisons": summaries}, indent=2, sort_keys=True))
    print(f"stats: wrote {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    results, meta = studymod.load_results(args.results)
    sweep_rows = []
    if args.sweep_results:
        sweep_fold_results, sweep_meta = studymod.load_results(args.sweep_results)
        results = results + sweep_fold_results
        by_count: dict[int, list] = {}
        for r in sweep_fold_results:
            count = len(r.selected) if r.selected else 0
            by_count.setdefault(count, []).append(r)
        for count in sorted(c for c in by_count if c > 0):
            mean, std, n = studymod.summarize_aucs(by_count[count])
            sweep_rows.append(studymod.SweepRow(count, mean, std, n))
    pairs = [tuple(p.split(":")) for p in args.pairs.split(",")] if args.pairs else []
    report = reportmod.build_report(
        results,
        meta=meta,
        sweep=sweep_rows,
        compare_pairs=pairs,
        seed=args.seed,
        node_count=args.nodes,
        slot_ms=args.slot_ms,
    )
    written = reportmod.emit_report(report, args.out)
    for path in written:
        print(f"report: wrote {path}")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csimesh",
        description="Multi-link WiFi CSI occupancy sensing: simulator, codec, and study harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scenario -> packet capture + labels")
    p.add_argument("--scenario", default="table1_livingroom")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--days", type=int, default=12)
    p.add_argument("--day-length-s", type=float, default=None)
    p.add_argument("--empty-target", type=float, default=None)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="UDP or capture file -> validated packet file")
    p.add_argument("--in", dest="infile", default=None, help="existing capture to re-validate")
    p.add_argument("--listen", default="0.0.0.0")
    p.add_argument("--ports", default=None, help="comma-separated UDP ports")
    p.add_argument("--count", type=int, default=1_000_000)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--out", default=str(Path(_default_out()) / "ingest.bin"))
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", help="packet capture -> per-window feature table")
    p.add_argument("--packets", required=True)
    p.add_argument("--meta", required=True, help="sim_meta.json with node order and timing")
    p.add_argument("--labels", default=None, help="labels.csv to join onto windows")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    p.add_argument("--frame-ms", type=float, default=DEFAULT_FRAME_MS)
    p.add_argument("--out", default=str(Path(_default_out()) / "features.csv"))
    p.set_defaults(func=cmd_features)

    def add_study_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--features", required=True)
        p.add_argument("--min-train-days", type=int, default=2)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--classifier", default="logistic", choices=("logistic", "mlp", "random"))
        p.add_argument("--criterion", default="snr")
        p.add_argument("--links", type=int, default=1, help="k for top_k/random_k policies")
        p.add_argument("--l2-lambda", type=float, default=0.01)
        p.add_argument("--max-iter", type=int, default=500)
        p.add_argument("--mlp-epochs", type=int, default=30)

    p = sub.add_parser("study", help="feature table -> per-fold results for configurations")
    add_study_common(p)
    p.add_argument("--configs", default="top_k:snr:1,random_k:1,all")
    p.add_argument("--policy", default=None, help="shorthand: run just this policy")
    p.add_argument("--scores-csv", default=None)
    p.add_argument("--out", default=str(Path(_default_out()) / "study_results.json"))
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("sweep", help="link-count sweep with top-k selection")
    add_study_common(p)
    p.add_argument("--counts", default="1,3,10,36,72")
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="per-fold results -> paired comparison statistics")
    p.add_argument("--results", required=True)
    p.add_argument("--pairs", required=True, help="configA:configB[,configC:configD]")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=str(Path(_default_out()) / "stats.json"))
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="results -> CSV/JSON report bundle")
    p.add_argument("--results", required=True)
    p.add_argument("--sweep-results", default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--nodes", type=int, default=9)
    p.add_argument("--slot-ms", type=float, default=80.0)
    p.add_argument("--out", default=str(Path(_default_out()) / "report"))
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "study" and args.policy:
        args.configs = args.policy
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
