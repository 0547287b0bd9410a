"""Command-line entry point: ``fxcast {synth,select,bench,explain}``.

Exit codes: 0 success, 2 usage or validation error, 3 data error, 4 benchmark
finished with failed cells, 5 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence


from fxcast import __version__
from fxcast.data import (
    DATE_FEATURE,
    FIXTURES,
    SeriesFrame,
    SynthSpec,
    dump_schema,
    forward_fill,
    frame_schema,
    load_csv,
    load_schema,
    make_folds,
    make_windows,
    norm_fit_end,
    synth_generate,
    write_csv,
    zscore_apply,
    zscore_fit,
)
from fxcast.errors import (
    AttributionError,
    CheckpointError,
    DataError,
    DimensionError,
    FxcastError,
    ParameterError,
    SchemaError,
)
from fxcast.explain import HORIZON_MEAN, explain_windows
from fxcast.featsel import SelectionConfig, SelectionResult, wrapper_select
from fxcast.models import ARCHITECTURES, toy_hparams
from fxcast.models import checkpoint
from fxcast.train_eval import (
    BENCH_PAIRS,
    BenchConfig,
    TrainConfig,
    emit_report,
    format_table,
    run_benchmark,
)

log = logging.getLogger("fxcast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL, EXIT_CHECKPOINT = 0, 2, 3, 4, 5

DEFAULTS: dict[str, dict[str, Any]] = {
    "synth": {"t": 700, "f": 6, "planted": 0, "seed": 0, "noise": 0.1, "lag": 16, "start": "2015-01-01"},
    "select": {"lam": 1.0, "L": 32, "H": 16, "max_features": 10, "patience": 2, "holdout": 0.2},
    "bench": {"models": list(ARCHITECTURES), "pairs": [list(p) for p in BENCH_PAIRS], "epochs": 1000,
              "batch_size": 32, "lr": 1e-3, "seed": 0, "width": None, "hparams": {}, "jobs": 1,
              "time_budget": None, "checkpoints": False, "lam": 1.0, "max_features": 10},
    "explain": {"windows": None, "fold": None, "method": "grad_cam", "reduction": HORIZON_MEAN},
}
DATA_DEFAULTS = {"data": None, "schema": None, "synth": None, "date_from": None, "date_to": None,
                 "features": None}


class UsageError(FxcastError):
    """Invalid flag values or flag combinations."""


# ---------------------------------------------------------------- parsing


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _pairs(text: str) -> list[list[int]]:
    out = []
    for item in _csv_list(text):
        try:
            L, H = item.split(":")
            out.append([int(L), int(H)])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad pair {item!r}; expected L:H") from None
    return out


def _index_range(text: str) -> list[int]:
    try:
        if ":" in text:
            a, b = text.split(":")
            return list(range(int(a), int(b)))
        return [int(v) for v in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad window range {text!r}; expected a:b or i,j,k") from None


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data source (exactly one of --data / --synth)")
    g.add_argument("--data", help="CSV file with a leading date column")
    g.add_argument("--schema", help="schema JSON (default: schema.json beside the CSV)")
    g.add_argument("--synth", help="synthetic data spec, e.g. T=700,F=6,seed=0,planted_feature=2")
    g.add_argument("--from", dest="date_from", help="first date to keep (ISO)")
    g.add_argument("--to", dest="date_to", help="last date to keep (ISO)")
    g.add_argument("--features", help="comma list, a fixture name (paper-2024-selected) or 'auto'")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fxcast", description="Exchange-rate forecasting benchmark harness.")
    p.add_argument("--version", action="version", version=f"fxcast {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("synth", help="write a planted-signal synthetic dataset")
    common(s)
    s.add_argument("--t", type=int)
    s.add_argument("--f", type=int)
    s.add_argument("--planted", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--lag", type=int)
    s.add_argument("--start")

    s = sub.add_parser("select", help="ridge wrapper feature selection")
    common(s)
    _add_data_flags(s)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--L", type=int)
    s.add_argument("--H", type=int)
    s.add_argument("--max-features", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--holdout", type=float)

    s = sub.add_parser("bench", help="five-fold benchmark over models and (L, H) pairs")
    common(s)
    _add_data_flags(s)
    s.add_argument("--models", type=_csv_list)
    s.add_argument("--pairs", type=_pairs, help="comma list of L:H")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--width", type=int, help="cap every model width (desk-scale runs)")
    s.add_argument("--jobs", type=int)
    s.add_argument("--time-budget", type=float, help="wall-clock seconds for the whole grid")
    s.add_argument("--checkpoints", action="store_true", default=None,
                   help="save the model trained in every fold under checkpoints/")
    s.add_argument("--lambda", dest="lam", type=float, help="ridge lambda for --features auto")
    s.add_argument("--max-features", type=int)

    s = sub.add_parser("explain", help="Grad-CAM heatmaps for a saved model")
    common(s)
    _add_data_flags(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--windows", type=_index_range, help="window indices, a:b or i,j (default: validation block)")
    s.add_argument("--fold", type=int, help="fold whose normalization to use (default: from checkpoint)")
    s.add_argument("--method", choices=("grad_cam", "input_gradient"))
    s.add_argument("--reduction", help="horizon_mean or step:<k>")
    return p


def effective_config(args: argparse.Namespace) -> dict[str, Any]:
    """Built-in defaults, then the config file, then explicitly given flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.command != "synth":
        cfg = DATA_DEFAULTS | cfg
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        cfg.update(file_cfg)
    for k, v in vars(args).items():
        if k in cfg and v is not None:
            cfg[k] = v
    return cfg


# ---------------------------------------------------------------- data


def _parse_synth(text: str) -> SynthSpec:
    fields = SynthSpec.__dataclass_fields__
    kw: dict[str, Any] = {}
    for item in _csv_list(text):
        key, _, val = item.partition("=")
        if key not in fields:
            raise UsageError(f"unknown synth field {key!r}; expected one of {sorted(fields)}")
        try:
            kw[key] = val if key == "start" else (float(val) if fields[key].type in ("float", float) else int(val))
        except ValueError:
            raise UsageError(f"bad value {val!r} for synth field {key!r}") from None
    return SynthSpec(**kw)


def load_frame(cfg: dict[str, Any]) -> SeriesFrame:
    if (cfg["data"] is None) == (cfg["synth"] is None):
        raise UsageError("give exactly one data source: --data or --synth")
    if cfg["data"] is not None:
        data = Path(cfg["data"])
        if not data.is_file():
            raise DataError(f"data file not found: {data}")
        schema_path = Path(cfg["schema"]) if cfg["schema"] else data.parent / "schema.json"
        frame = load_csv(data, load_schema(schema_path))
    else:
        frame = synth_generate(_parse_synth(cfg["synth"]))
    frame = frame.between(cfg["date_from"], cfg["date_to"])
    if len(frame) == 0:
        raise DataError("no rows left after the date filter")
    return forward_fill(frame)


def resolve_features(frame: SeriesFrame, cfg: dict[str, Any], sel: SelectionConfig | None = None):
    """Returns (frame, model input features with the target first, selection result or None)."""
    spec = cfg["features"]
    result = None
    if spec is None:
        names = [n for n in frame.names if n != frame.target_name]
    elif isinstance(spec, str) and spec in FIXTURES:
        names = list(FIXTURES[spec])
        result = SelectionResult(names, [], sel.lam if sel else float("nan"))
    elif spec == "auto":
        cands = [n for n in frame.names if n != frame.target_name]
        result = wrapper_select(frame, cands, sel or SelectionConfig())
        names = list(result.selected)
    else:
        names = _csv_list(spec) if isinstance(spec, str) else list(spec)
    if DATE_FEATURE in names:
        frame = frame.with_date_feature()
    missing = [n for n in names if n not in frame.names]
    if missing:
        raise DataError(f"features not in the data: {missing}")
    features = [frame.target_name] + [n for n in names if n != frame.target_name]
    return frame, features, result


# ---------------------------------------------------------------- outputs


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def write_manifest(out: Path, command: str, cfg: dict[str, Any], files: Sequence[Path]) -> Path:
    rel = sorted(str(Path(f).relative_to(out)) for f in files)
    m = out / "manifest.json"
    m.write_text(json.dumps({"command": command, "version": __version__, "config": cfg,
                             "files": rel}, indent=2, sort_keys=True) + "\n")
    return m


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: dict[str, Any], out: Path) -> int:
    spec = SynthSpec(T=cfg["t"], F=cfg["f"], seed=cfg["seed"], planted_feature=cfg["planted"],
                     noise_std=cfg["noise"], lag=cfg["lag"], start=cfg["start"])
    frame = synth_generate(spec)
    data, schema = out / "data.csv", out / "schema.json"
    write_csv(frame, data)
    dump_schema(frame_schema(frame), schema)
    write_manifest(out, "synth", cfg, [data, schema])
    print(f"wrote {len(frame)} rows x {len(frame.names)} columns to {data}")
    return EXIT_OK


def _selection_config(cfg: dict[str, Any]) -> SelectionConfig:
    return SelectionConfig(lam=cfg["lam"], L=cfg.get("L", 32), H=cfg.get("H", 16),
                           max_features=cfg["max_features"], patience=cfg.get("patience", 2),
                           holdout=cfg.get("holdout", 0.2))


def cmd_select(cfg: dict[str, Any], out: Path) -> int:
    frame = load_frame(cfg)
    sel = _selection_config(cfg)
    sel.validate()
    spec = cfg["features"]
    if isinstance(spec, str) and spec in FIXTURES:
        result = SelectionResult(list(FIXTURES[spec]), [], sel.lam)
    else:
        if spec is None or spec == "auto":
            cands = [n for n in frame.names if n != frame.target_name]
        else:
            cands = _csv_list(spec) if isinstance(spec, str) else list(spec)
            missing = [n for n in cands if n not in frame.names]
            if missing:
                raise DataError(f"candidate features not in the data: {missing}")
        result = wrapper_select(frame, cands, sel)
    return _finish_select(cfg, out, result)


def _finish_select(cfg, out: Path, result: SelectionResult) -> int:
    path = out / "selection.json"
    result.save(path)
    write_manifest(out, "select", cfg, [path])
    print("selected: " + ", ".join(result.selected))
    return EXIT_OK


def _bench_config(cfg: dict[str, Any], features: list[str]) -> BenchConfig:
    train = TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"])
    train.validate()
    models = list(cfg["models"])
    unknown = [m for m in models if m not in ARCHITECTURES]
    if unknown:
        raise UsageError(f"unknown models {unknown}; choose from {', '.join(ARCHITECTURES)}")
    hparams: dict[str, dict[str, Any]] = {}
    for m in models:
        hp = toy_hparams(m, cfg["width"]) if cfg["width"] else {}
        hp = hp | {k: tuple(v) if isinstance(v, list) else v for k, v in cfg["hparams"].get(m, {}).items()}
        if hp:
            hparams[m] = hp
    if cfg["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    return BenchConfig(train=train, features=tuple(features), hparams=hparams,
                       time_budget=cfg["time_budget"], jobs=cfg["jobs"])


def cmd_bench(cfg: dict[str, Any], out: Path) -> int:
    if cfg["width"] is not None and cfg["width"] < 1:
        raise UsageError("--width must be >= 1")
    pairs = [tuple(p) for p in cfg["pairs"]]
    if not pairs or any(len(p) != 2 or min(p) < 1 for p in pairs):
        raise UsageError(f"bad (L, H) pairs {cfg['pairs']}")
    # validate the cheap flags before touching data
    _bench_config(cfg, [])
    frame = load_frame(cfg)
    sel = SelectionConfig(lam=cfg["lam"], max_features=cfg["max_features"])
    frame, features, _ = resolve_features(frame, cfg, sel)
    bench = _bench_config(cfg, features)
    if cfg["checkpoints"]:
        bench = replace(bench, checkpoint_dir=str(out / "checkpoints"))
    table = run_benchmark(frame, cfg["models"], pairs, bench)
    files = emit_report(table, out)
    if cfg["checkpoints"]:
        files += sorted((out / "checkpoints").glob("*.fxck"))
    write_manifest(out, "bench", cfg | {"features": features}, files)
    sys.stdout.write(format_table(table))
    failed = [r for r in table.runs if not r.ok]
    for r in failed:
        print(f"FAILED {r.model} L={r.L} H={r.H}: {r.error}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_explain(cfg: dict[str, Any], out: Path, checkpoint_path: str) -> int:
    try:
        model, extra = checkpoint.load(checkpoint_path)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {checkpoint_path}: {exc}") from None
    frame = load_frame(cfg)
    stored = extra.get("features")
    from_checkpoint = cfg["features"] is None and stored is not None
    if from_checkpoint:
        cfg = cfg | {"features": [f for f in stored if f != frame.target_name]}
    try:
        frame, features, _ = resolve_features(frame, cfg)
    except DataError as exc:
        if from_checkpoint:
            raise CheckpointError(f"data does not match the checkpoint: {exc}") from None
        raise
    c = model.config
    if stored is not None and list(stored) != features:
        raise CheckpointError(f"checkpoint was trained on features {stored}, data gives {features}")
    if len(features) != c.F:
        raise CheckpointError(f"checkpoint expects F={c.F} features, data gives {len(features)}")
    try:
        probe = make_windows(frame, [frame.target_name], c.L, c.H)
    except DataError as exc:
        raise DataError(f"data cannot be windowed at L={c.L}, H={c.H}: {exc}") from None
    k = int(extra.get("k", 5))
    folds = make_folds(probe, k)
    fold = cfg["fold"] if cfg["fold"] is not None else int(extra.get("fold", k - 1))
    if not 0 <= fold < k:
        raise UsageError(f"--fold {fold} out of range for {k} folds")
    stats = zscore_fit(frame, norm_fit_end(folds, fold, c.L))
    ws = make_windows(zscore_apply(frame, stats), features, c.L, c.H)
    indices = cfg["windows"] if cfg["windows"] is not None else [int(i) for i in folds.val_indices(fold)]
    bad = [i for i in indices if not 0 <= i < len(ws)]
    if not indices or bad:
        raise UsageError(f"window indices {bad or indices} out of range [0, {len(ws)})")
    reduction = cfg["reduction"]
    stamps = [[str(s) for s in ws.input_timestamps(i)] for i in indices]
    run = explain_windows(model, ws.inputs, indices, out, features, stamps, cfg["method"], reduction)
    write_manifest(out, "explain", cfg | {"checkpoint": str(checkpoint_path), "fold": fold,
                                          "windows": indices}, run.files)
    mass = run.aggregate.column_mass()
    top = max(mass, key=mass.get)
    print(f"{len(indices)} windows; top feature: {top}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        out = _prepare_out(args.out)
        if args.command == "synth":
            return cmd_synth(cfg, out)
        if args.command == "select":
            return cmd_select(cfg, out)
        if args.command == "bench":
            return cmd_bench(cfg, out)
        return cmd_explain(cfg, out, args.checkpoint)
    except CheckpointError as exc:
        print(f"fxcast: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (UsageError, ParameterError, AttributionError, DimensionError) as exc:
        print(f"fxcast: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, FileNotFoundError) as exc:
        print(f"fxcast: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
