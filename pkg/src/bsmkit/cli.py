"""Command-line entry point tying the pipeline together.

Subcommands mirror the stages: gen (synthetic scenarios), prep (trace ->
windows), prompts (windows -> balanced text dataset), simulate (RSU/TA
loop), train-baseline, eval, bench (latency), serve-check (remote server
probe). Every run echoes its resolved configuration to stderr, and all
randomness flows from --seed, so identical invocations produce identical
outputs. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from bsmkit import attacksim, gateway, metrics, nn, preprocess, promptgen, sim, traceio
from bsmkit.features import FEATURE_NAMES, extract_feature_matrix
from bsmkit.model import (
    CLASS_ORDER,
    AttackClass,
    FineTuneManifest,
    ToolkitError,
    attack_class_from_code,
)

PROG = "bsmkit"


def _parse_mix(text: str) -> dict[AttackClass, int]:
    mix: dict[AttackClass, int] = {}
    for part in text.split(","):
        code, _, count = part.partition("=")
        if not count:
            raise ValueError(f"mix entry {part!r} is not CODE=N")
        mix[attack_class_from_code(code.strip())] = int(count)
    return mix


def _parse_floats(text: str, n: int, what: str) -> tuple[float, ...]:
    values = tuple(float(v) for v in text.split(","))
    if len(values) != n:
        raise ValueError(f"{what} needs {n} comma-separated numbers, got {text!r}")
    return values


def _parse_rsus(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(";"):
        x, y = _parse_floats(chunk, 2, "RSU position")
        out.append((x, y))
    return out


def _scenario_from_args(args: argparse.Namespace) -> attacksim.ScenarioConfig:
    if getattr(args, "scenario", None):
        doc = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
        if "seed" not in doc:
            doc["seed"] = args.seed
        return attacksim.scenario_from_dict(doc)
    if not args.mix:
        raise ValueError("either --scenario or --mix is required")
    x0, y0, x1, y1 = _parse_floats(args.area, 4, "--area")
    cfg = attacksim.ScenarioConfig(
        seed=args.seed,
        duration=args.duration,
        n_vehicles=args.vehicles,
        attack_mix=_parse_mix(args.mix),
        beacon_interval=args.interval,
        area=attacksim.Rect(x0, y0, x1, y1),
        speed_range=_parse_floats(args.speed_range, 2, "--speed-range"),
        dos_rate_multiplier=args.dos_mult,
        sybil_pseudos=args.sybil_pseudos,
        delay=args.delay,
        stop_time_fraction=args.stop_fraction,
        replay_lag=args.replay_lag,
    )
    cfg.validate()
    return cfg


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vehicles", type=int, default=10, help="total vehicle count")
    p.add_argument("--mix", help="per-class counts, e.g. A0=6,A13=2,A1=2; must sum to --vehicles")
    p.add_argument("--duration", type=float, default=60.0, help="scenario length, seconds")
    p.add_argument("--interval", type=float, default=1.0, help="beacon interval, seconds")
    p.add_argument("--area", default="0,0,1000,1000", help="driving area x0,y0,x1,y1 in meters")
    p.add_argument("--speed-range", default="5,15", help="base speed range lo,hi in m/s")
    p.add_argument("--dos-mult", type=int, default=10, help="rate multiplier for flooding classes")
    p.add_argument("--sybil-pseudos", type=int, default=5, help="pseudonyms per Sybil attacker")
    p.add_argument("--delay", type=float, default=2.0, help="staleness for delayed-content attackers")
    p.add_argument("--stop-fraction", type=float, default=0.5, help="when stop-style attackers halt")
    p.add_argument("--replay-lag", type=float, default=1.0, help="replay attackers trail by this many seconds")


def _expand_trace_paths(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.name == attacksim.MANIFEST_FILENAME:
                    continue
                if child.suffix in (".json", ".log"):
                    paths.append(child)
        else:
            paths.append(p)
    if not paths:
        raise ValueError(f"no trace files under {inputs}")
    return paths


def _build_classifier(args: argparse.Namespace):
    spec = args.classifier
    if spec == "oracle":
        return gateway.OracleClassifier()
    if spec == "stub":
        return gateway.StubClassifier()
    if spec == "remote":
        return gateway.RemoteClassifier(base_url=getattr(args, "url", None))
    if spec.startswith("native:"):
        model, meta = nn.load_checkpoint(spec.split(":", 1)[1])
        return gateway.NativeClassifier(model, args.task, transform=_transform_from_meta(meta))
    raise ValueError(f"unknown classifier {spec!r}; use oracle|stub|remote|native:CKPT")


def _transform_from_meta(meta: dict):
    if "feature_mean" not in meta:
        return None
    mean = np.asarray(meta["feature_mean"], dtype=np.float64)
    std = np.asarray(meta["feature_std"], dtype=np.float64)
    return lambda x: (x - mean) / std


def _window_labels(windows, task: str) -> np.ndarray:
    if task == "binary":
        return np.array([0 if w.label.is_benign else 1 for w in windows], dtype=np.int64)
    index = {cls: i for i, cls in enumerate(CLASS_ORDER)}
    return np.array([index[w.label] for w in windows], dtype=np.int64)


def _emit_report(rep: metrics.EvalReport, fmt: str, out: str | None) -> None:
    if fmt == "json":
        text = rep.to_json()
    elif fmt == "csv":
        text = rep.to_csv()
    else:
        text = rep.to_text_table()
    if out:
        Path(out).write_text(text, encoding="utf-8")
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None}
    print(f"config: {json.dumps(resolved, default=str, sort_keys=True)}", file=sys.stderr)


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _scenario_from_args(args)
    manifest = attacksim.gen_scenario(cfg, args.out)
    print(f"run {manifest.run_id}: {len(manifest.files)} trace files under {args.out}")
    for code, filename in manifest.files.items():
        print(f"  {code}: {filename} ({manifest.counts[code]} messages)")
    return 0


def cmd_prep(args: argparse.Namespace) -> int:
    files = [traceio.read_trace_file(p) for p in _expand_trace_paths(args.inputs)]
    wcfg = preprocess.WindowingConfig(
        window_size=args.window, stride=args.stride, drop_incomplete=not args.keep_partial
    )
    windows = preprocess.run_pipeline(files, wcfg)
    preprocess.write_windows(windows, args.out)
    per_class: dict[str, int] = {}
    for w in windows:
        per_class[w.label.code] = per_class.get(w.label.code, 0) + 1
    skipped = sum(f.skipped for f in files)
    print(f"{len(windows)} windows -> {args.out} (skipped {skipped} non-position lines)")
    for code in sorted(per_class):
        print(f"  {code}: {per_class[code]}")
    return 0


def cmd_prompts(args: argparse.Namespace) -> int:
    windows = preprocess.read_windows(args.input)
    if not windows:
        raise ValueError(f"no windows in {args.input}")
    textualize = (
        promptgen.textualize_columnwise if args.style == "column" else promptgen.textualize_rowwise
    )
    samples = [textualize(w) for w in windows]
    if args.truncate:
        samples = [promptgen.truncate_prompt(s, args.truncate) for s in samples]
    if args.balance:
        spec = promptgen.BalanceSpec(per_class=args.balance, classes=args.classes, seed=args.seed)
        report = promptgen.balance_and_export(samples, spec, args.out)
        print(f"{report.total} samples -> {report.path}")
        for key, count in report.per_class.items():
            print(f"  {key}: {count}")
        manifest = FineTuneManifest(
            per_class_samples=args.balance,
            window_size=windows[0].window_size,
            label_set="binary" if args.classes == "binary" else "multiclass",
        )
        manifest_path = Path(str(args.out) + ".manifest.json")
        manifest_path.write_text(manifest.to_json(), encoding="utf-8")
        print(f"manifest -> {manifest_path}")
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            for s in samples:
                fh.write(
                    json.dumps(
                        {"text": s.text, "label": s.label.code, "binary_label": s.binary_label}
                    )
                )
                fh.write("\n")
        print(f"{len(samples)} samples -> {args.out}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scfg = _scenario_from_args(args)
    cfg = sim.SimConfig(
        scenario=scfg,
        rsu_positions=_parse_rsus(args.rsus),
        classifier=_build_classifier(args),
        window_size=args.window,
        sensing_range=args.range,
        ta_threshold=args.ta_k,
        revocation_enabled=not args.no_revoke,
        task=args.task,
    )
    outcome = sim.run(cfg)
    summary = sim.outcome_summary(outcome)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        sim.write_event_log(outcome, out_dir / "events.jsonl")
        (out_dir / "summary.json").write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
        (out_dir / "latencies.csv").write_text(sim.latency_csv(outcome), encoding="utf-8")
        print(f"outcome -> {out_dir}: {len(outcome.reports)} reports, {len(outcome.revocations)} revocations")
    else:
        json.dump(summary, sys.stdout, indent=2)
        print()
    return 0


def _split(n: int, test_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_frac)))
    return perm[n_test:], perm[:n_test]


def cmd_train_baseline(args: argparse.Namespace) -> int:
    windows = preprocess.read_windows(args.input)
    if len(windows) < 4:
        raise ValueError(f"only {len(windows)} windows; need at least 4 to split")
    x = extract_feature_matrix(windows)
    y = _window_labels(windows, args.task)
    k = 2 if args.task == "binary" else len(CLASS_ORDER)
    train_idx, test_idx = _split(len(windows), args.test_frac, args.seed)

    mean = x[train_idx].mean(axis=0)
    std = x[train_idx].std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std

    if args.model == "logreg":
        model = nn.make_logreg(len(FEATURE_NAMES), k, seed=args.seed)
    else:
        model = nn.Mlp([len(FEATURE_NAMES), 32, 16, k], seed=args.seed, dropout=0.2)
    tcfg = nn.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed
    )
    result = nn.train(model, xs[train_idx], y[train_idx], tcfg)

    preds = model.predict(xs[test_idx])
    cm = metrics.confusion(
        preds.tolist(), y[test_idx].tolist(), k,
        metrics.BINARY_CLASS_NAMES if args.task == "binary" else metrics.ATTACK_CLASS_NAMES,
    )
    rep = metrics.report(cm, window_size=windows[0].window_size)
    print(f"final train loss {result.loss_curve[-1]:.4f} over {args.epochs} epochs", file=sys.stderr)
    _emit_report(rep, args.format, None)
    if args.out:
        meta = {
            "task": args.task,
            "feature_mean": mean.tolist(),
            "feature_std": std.tolist(),
            "held_out_accuracy": rep.accuracy,
        }
        nn.save_checkpoint(args.out, model, meta)
        print(f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, meta = nn.load_checkpoint(args.model)
    task = meta.get("task", args.task)
    windows = preprocess.read_windows(args.input)
    if not windows:
        raise ValueError(f"no windows in {args.input}")
    x = extract_feature_matrix(windows)
    transform = _transform_from_meta(meta)
    if transform is not None:
        x = transform(x)
    y = _window_labels(windows, task)
    k = 2 if task == "binary" else len(CLASS_ORDER)
    preds = model.predict(x)
    cm = metrics.confusion(
        preds.tolist(), y.tolist(), k,
        metrics.BINARY_CLASS_NAMES if task == "binary" else metrics.ATTACK_CLASS_NAMES,
    )
    rep = metrics.report(cm, window_size=windows[0].window_size)
    _emit_report(rep, args.format, args.out)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    table = gateway.bench_latency(
        _build_classifier(args), sizes, samples_per_size=args.samples, seed=args.seed, task=args.task
    )
    csv = table.to_csv()
    if args.out:
        Path(args.out).write_text(csv, encoding="utf-8")
        print(f"csv -> {args.out}")
    else:
        sys.stdout.write(csv)
    print(f"latency trend across window sizes: {table.verdict}")
    return 0


def cmd_serve_check(args: argparse.Namespace) -> int:
    client = gateway.RemoteClassifier(base_url=args.url, timeout=args.timeout)
    health = client.health()
    print(f"server up: model={health['model']} quantization={health['quantization']}")
    prompt = gateway.synthetic_prompt(4, np.random.default_rng(args.seed))
    verdict = client.classify([prompt], args.task)[0]
    print(f"classify ok: label={verdict.label} compute_ms={verdict.compute_ms}")
    matrix = client.embed(prompt)
    print(f"embed ok: shape={matrix.shape[0]}x{matrix.shape[1]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    common.add_argument("--format", choices=("table", "json", "csv"), default="table")
    common.add_argument("--config", help="JSON file of flag defaults (CLI flags win)")

    parser = argparse.ArgumentParser(
        prog=PROG, description="V2X misbehavior-detection pipeline toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic scenario")
    _add_scenario_flags(p)
    p.add_argument("--out", required=True, help="output directory for traces + manifest")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prep", parents=[common], help="traces -> deduped, windowed records")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="trace files or directories")
    p.add_argument("--window", type=int, default=10, help="messages per window")
    p.add_argument("--stride", type=int, help="window stride (default: tumbling)")
    p.add_argument("--keep-partial", action="store_true", help="keep trailing partial windows")
    p.add_argument("--out", required=True, help="output windows JSONL")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("prompts", parents=[common], help="windows -> text classification dataset")
    p.add_argument("--in", dest="input", required=True, help="windows JSONL")
    p.add_argument("--style", choices=("column", "row"), default="column")
    p.add_argument("--balance", type=int, help="samples per class (omit to export everything)")
    p.add_argument("--classes", choices=("binary", "all"), default="binary")
    p.add_argument("--truncate", type=int, help="hard character cap per prompt")
    p.add_argument("--out", required=True, help="output dataset JSONL")
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("simulate", parents=[common], help="run the RSU / trust-authority loop")
    _add_scenario_flags(p)
    p.add_argument("--scenario", help="scenario JSON file (overrides inline flags)")
    p.add_argument("--classifier", default="oracle", help="oracle|stub|remote|native:CKPT")
    p.add_argument("--url", help="remote server URL (default: MDS_MODEL_URL)")
    p.add_argument("--task", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--ta-k", type=int, default=2, help="distinct RSUs needed to revoke")
    p.add_argument("--rsus", default="500,500", help="positions 'x1,y1;x2,y2;...'")
    p.add_argument("--range", type=float, default=500.0, help="RSU sensing range, meters")
    p.add_argument("--no-revoke", action="store_true", help="report but never revoke")
    p.add_argument("--out", help="output directory (events.jsonl, summary.json, latencies.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-baseline", parents=[common], help="train the feature baseline")
    p.add_argument("--in", dest="input", required=True, help="windows JSONL")
    p.add_argument("--task", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--model", choices=("logreg", "mlp"), default="logreg")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--out", help="checkpoint output path")
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on windows")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--in", dest="input", required=True, help="windows JSONL")
    p.add_argument("--task", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="latency benchmark across window sizes")
    p.add_argument("--classifier", default="stub", help="oracle|stub|remote|native:CKPT")
    p.add_argument("--url", help="remote server URL (default: MDS_MODEL_URL)")
    p.add_argument("--task", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--sizes", default="10,20,50,100", help="comma-separated window sizes")
    p.add_argument("--samples", type=int, default=20, help="prompts per size (min 5)")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve-check", parents=[common], help="probe a model server")
    p.add_argument("--url", help="server URL (default: MDS_MODEL_URL)")
    p.add_argument("--task", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_serve_check)

    # Subcommands parse into their own namespace, so config-file defaults
    # must be pushed into each subparser, not just the top-level parser.
    parser.subcommand_parsers = dict(sub.choices)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    if "--config" in argv:
        config_path = argv[argv.index("--config") + 1]
        try:
            defaults = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot load config {config_path}: {exc}", file=sys.stderr)
            return 1
        resolved = {k.replace("-", "_"): v for k, v in defaults.items()}
        parser.set_defaults(**resolved)
        for sub_parser in parser.subcommand_parsers.values():
            sub_parser.set_defaults(**resolved)
    args = parser.parse_args(argv)
    _print_config(args)
    try:
        return args.func(args)
    except (ToolkitError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
