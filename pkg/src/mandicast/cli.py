"""Command-line interface: pipeline stages as subcommands.

Every subcommand exits 0 on success and nonzero with a stage-tagged
message on stderr otherwise.  ``--config`` points at a key=value text
file whose entries provide defaults; explicit flags win.  Model-schedule
keys (``epochs``, ``lr``, ``lr_after_drop``, ``lr_drop_epoch``,
``val_every``) are accepted in the config file and forwarded to training.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import model, pipeline, synth
from .features import SNIPPET_LENGTHS

MODEL_KEYS = {
    "epochs": int,
    "lr": float,
    "lr_after_drop": float,
    "lr_drop_epoch": int,
    "val_every": int,
    "conv_channels": int,
    "kernel": int,
    "pool_window": int,
    "pool_stride": int,
    "fc_hidden": int,
    "sage_hidden": int,
    "sage_out": int,
}

SPEC_KEYS = {
    "crop": str,
    "threshold_km": float,
    "seed": int,
    "prices": str,
    "weather": str,
    "mandis": str,
    "horizons": str,
}


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--crop", help="crop name (default: tomato)")
    p.add_argument("--horizon", action="append", type=int, metavar="N",
                   help=f"snippet length in days, repeatable; choices {SNIPPET_LENGTHS}")
    p.add_argument("--threshold-km", type=float, help="graph edge threshold (default: 200)")
    p.add_argument("--seed", type=int, help="experiment seed (default: 0)")
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--out", type=Path, required=True, help="experiment artifact directory")
    p.add_argument("--prices", type=Path, help="price/arrival CSV")
    p.add_argument("--weather", type=Path, help="hourly weather CSV")
    p.add_argument("--mandis", type=Path, help="mandi metadata CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mandicast",
        description="Crop price forecasting over a geospatial market graph",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("ingest", "validate inputs and shortlist mandis"),
        ("curate", "clean the shortlisted series"),
        ("build-graph", "build and export the threshold graph"),
        ("snippets", "cut curated series into n-day snippets"),
        ("train", "train one model per horizon"),
        ("predict", "predict the test year from saved checkpoints"),
        ("evaluate", "write the per-horizon metric report"),
        ("baselines", "persistence and edge-less comparisons"),
        ("pipeline", "run all stages in order"),
    ]:
        _add_shared_flags(sub.add_parser(name, help=text))

    sp = sub.add_parser("synth", help="generate a synthetic scenario")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--crop", default="tomato")
    sp.add_argument("--mandi-count", type=int, default=30)
    sp.add_argument("--correlation-km", type=float, default=200.0)
    sp.add_argument("--seasonal-amplitude", type=float, default=800.0)
    sp.add_argument("--noise", type=float, default=10.0)
    sp.add_argument("--missing-rate", type=float, default=0.25)
    sp.add_argument("--misreport-rate", type=float, default=0.01)
    sp.add_argument("--start-year", type=int, default=2014)
    sp.add_argument("--end-year", type=int, default=2018)
    return parser


def _build_spec(args: argparse.Namespace) -> pipeline.ExperimentSpec:
    config: dict[str, str] = {}
    if args.config:
        config = pipeline.parse_config_file(args.config)
    unknown = set(config) - set(MODEL_KEYS) - set(SPEC_KEYS)
    if unknown:
        raise pipeline.SpecError(f"unknown config keys: {sorted(unknown)}")

    def pick(flag_value, key: str, default):
        if flag_value is not None:
            return flag_value
        if key in config:
            return SPEC_KEYS[key](config[key])
        return default

    horizons = args.horizon
    if horizons is None and "horizons" in config:
        horizons = [int(h) for h in config["horizons"].split(",")]
    if horizons is None:
        horizons = list(SNIPPET_LENGTHS)

    prices = pick(args.prices, "prices", None)
    weather = pick(args.weather, "weather", None)
    mandis = pick(args.mandis, "mandis", None)
    missing = [n for n, v in [("--prices", prices), ("--weather", weather), ("--mandis", mandis)] if v is None]
    if missing:
        raise pipeline.SpecError(f"missing required input path(s): {', '.join(missing)}")

    overrides = {k: MODEL_KEYS[k](v) for k, v in config.items() if k in MODEL_KEYS}
    return pipeline.ExperimentSpec(
        prices_path=Path(prices),
        weather_path=Path(weather),
        mandis_path=Path(mandis),
        crop=pick(args.crop, "crop", "tomato"),
        horizons=tuple(horizons),
        threshold_km=pick(args.threshold_km, "threshold_km", 200.0),
        seed=pick(args.seed, "seed", 0),
        model_overrides=overrides,
    )


def _run_stage_command(command: str, args: argparse.Namespace) -> None:
    spec = _build_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "pipeline":
        report = pipeline.run_pipeline(spec, out)
        for n in sorted(report.rows):
            r = report.rows[n]
            print(f"n={n:2d}  rmse={r.rmse:.2f}  mae={r.mae:.2f}  cov={r.cov_percent:.2f}%  "
                  f"r2={r.r2:.4f}  pearson={r.pearson:.4f}")
        return
    stage_map = {
        "ingest": lambda: pipeline.stage_ingest(spec, out),
        "curate": lambda: pipeline.stage_curate(spec, out),
        "build-graph": lambda: pipeline.stage_graph(spec, out),
        "snippets": lambda: pipeline.stage_snippets(spec, out),
        "evaluate": lambda: pipeline.stage_evaluate(spec, out),
        "baselines": lambda: pipeline.run_baselines(spec, out),
    }
    if command in ("train", "predict"):
        stage = pipeline.stage_train if command == "train" else pipeline.stage_predict
        for n in spec.horizons:
            try:
                stage(spec, out, n)
            except Exception as exc:
                raise pipeline.StageError(command, exc) from exc
        return
    try:
        stage_map[command]()
    except pipeline.StageError:
        raise
    except Exception as exc:
        raise pipeline.StageError(command, exc) from exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            spec = synth.SyntheticSpec(
                n_mandis=args.mandi_count,
                seed=args.seed,
                correlation_km=args.correlation_km,
                seasonal_amplitude=args.seasonal_amplitude,
                noise_level=args.noise,
                years=(args.start_year, args.end_year),
                missing_rate=args.missing_rate,
                misreport_rate=args.misreport_rate,
                crop=args.crop,
            )
            paths = synth.generate(spec, args.out)
            print(f"wrote {paths.mandis}, {paths.prices}, {paths.weather}, {paths.misreports}")
        else:
            _run_stage_command(args.command, args)
    except pipeline.StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (pipeline.SpecError, model.ModelError, ValueError, OSError) as exc:
        print(f"error [cli] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
