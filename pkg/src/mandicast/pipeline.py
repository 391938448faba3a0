"""Experiment orchestration: staged pipeline, baselines and artifacts.

Every stage reads its inputs from disk and writes its outputs under the
experiment directory, so any downstream stage can be rerun from cached
artifacts and reproduce the full-run outputs byte for byte.

Artifacts (under ``--out``):

* ``shortlist.txt``            mandis passing the data-availability rule
* ``curated.csv`` / ``audit.csv``  cleaned daily series and flag log
* ``graph_nodes.csv`` / ``graph_edges.tsv``
* ``snippets_n{N}.csv`` / ``weather_n{N}.bin``  (raw, unnormalized)
* ``model_n{N}.ckpt`` / ``train_log_n{N}.csv``
* ``predictions_n{N}.csv``     test-year predictions vs actuals
* ``report.csv``               five metrics per horizon
* ``baselines.csv``            graph model vs persistence vs edge-less
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import curate, features, geograph, ingest, metrics, model

STAGES = (
    "ingest",
    "curate",
    "build-graph",
    "snippets",
    "train",
    "predict",
    "evaluate",
    "baselines",
)

PREDICTIONS_HEADER = ["mandi_id", "start_date", "predicted", "actual"]
BASELINES_HEADER = ["arm", "horizon_days", "rmse", "mae", "cov_percent", "r2", "pearson"]
ARMS = ("graph_model", "persistence", "no_edges")


class SpecError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


@dataclass
class ExperimentSpec:
    """One experiment: crop, horizons, fixed year roles, inputs and knobs."""

    prices_path: Path
    weather_path: Path
    mandis_path: Path
    crop: str = "tomato"
    horizons: tuple[int, ...] = features.SNIPPET_LENGTHS
    threshold_km: float = 200.0
    seed: int = 0
    train_years: tuple[int, ...] = (2014, 2015, 2016)
    val_year: int = 2017
    test_year: int = 2018
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prices_path = Path(self.prices_path)
        self.weather_path = Path(self.weather_path)
        self.mandis_path = Path(self.mandis_path)
        self.horizons = tuple(sorted(set(int(n) for n in self.horizons)))
        if not self.horizons:
            raise SpecError("horizon set is empty")
        bad = [n for n in self.horizons if n not in features.SNIPPET_LENGTHS]
        if bad:
            raise SpecError(f"unsupported horizons {bad}; allowed: {features.SNIPPET_LENGTHS}")
        roles = [*self.train_years, self.val_year, self.test_year]
        if len(set(roles)) != len(roles):
            raise SpecError(f"train/validation/test years overlap: {roles}")

    @property
    def all_years(self) -> range:
        lo = min(*self.train_years, self.val_year, self.test_year)
        hi = max(*self.train_years, self.val_year, self.test_year)
        return range(lo, hi + 1)

    @property
    def span(self) -> tuple[date, date]:
        years = self.all_years
        return date(years.start, 1, 1), date(years.stop - 1, 12, 31)

    def model_config(self, n: int) -> model.ModelConfig:
        return model.ModelConfig(
            n=n, threshold_km=self.threshold_km, seed=self.seed, **self.model_overrides
        )


def parse_config_file(path: str | Path) -> dict[str, str]:
    """key=value lines; blank lines and #-comments ignored."""
    out: dict[str, str] = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise SpecError(f"{path}:{i}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# stages

def stage_ingest(spec: ExperimentSpec, out: Path) -> list[str]:
    """Validate inputs and write the shortlist (metadata file order)."""
    records = ingest.parse_price_csv(spec.prices_path)
    mandis = ingest.parse_mandi_csv(spec.mandis_path)
    ingest.parse_weather_csv(spec.weather_path)
    qualified = ingest.shortlist_mandis(records, spec.crop, spec.all_years)
    known = {m.mandi_id for m in mandis}
    missing_meta = sorted(qualified - known)
    if missing_meta:
        raise ingest.ParseError(f"shortlisted mandis missing metadata: {missing_meta}")
    shortlist = [m.mandi_id for m in mandis if m.mandi_id in qualified]
    if not shortlist:
        raise SpecError(f"no mandi passes the availability rule for crop {spec.crop!r}")
    (out / "shortlist.txt").write_text("".join(f"{m}\n" for m in shortlist), encoding="utf-8")
    return shortlist


def read_shortlist(out: Path) -> list[str]:
    return (out / "shortlist.txt").read_text(encoding="utf-8").split()


def stage_curate(spec: ExperimentSpec, out: Path) -> None:
    """Curate price and arrival series for every shortlisted mandi."""
    shortlist = read_shortlist(out)
    records = ingest.parse_price_csv(spec.prices_path)
    start, end = spec.span
    series_list, kinds, events = [], [], []
    for mandi_id in shortlist:
        for kind, field_name in (("price", "modal_price"), ("arrival", "arrival")):
            raw = curate.series_from_records(records, mandi_id, spec.crop, start, end, field_name)
            audit: list[curate.FlagEvent] = []
            cured = curate.curate_series(raw, audit)
            series_list.append(cured)
            kinds.append(kind)
            if kind == "price":
                events.extend(audit)
    curate.write_series_csv(out / "curated.csv", series_list, kinds)
    curate.write_audit_csv(out / "audit.csv", events)


def stage_graph(spec: ExperimentSpec, out: Path) -> geograph.MandiGraph:
    shortlist = set(read_shortlist(out))
    mandis = [m for m in ingest.parse_mandi_csv(spec.mandis_path) if m.mandi_id in shortlist]
    graph = geograph.build_graph(mandis, spec.threshold_km)
    geograph.write_graph(graph, out / "graph_edges.tsv", out / "graph_nodes.csv")
    return graph


def load_graph(spec: ExperimentSpec, out: Path) -> geograph.MandiGraph:
    return geograph.read_graph(out / "graph_edges.tsv", out / "graph_nodes.csv", spec.threshold_km)


def stage_snippets(spec: ExperimentSpec, out: Path) -> None:
    """Cut curated series into snippets for every horizon (raw features)."""
    shortlist = read_shortlist(out)
    curated = curate.read_series_csv(out / "curated.csv")
    weather = {w.mandi_id: w for w in ingest.parse_weather_csv(spec.weather_path)}
    meta = {m.mandi_id: m for m in ingest.parse_mandi_csv(spec.mandis_path)}
    for n in spec.horizons:
        snippets: list[features.Snippet] = []
        for mandi_id in shortlist:
            price = curated[(mandi_id, spec.crop, "price")]
            arrival = curated[(mandi_id, spec.crop, "arrival")]
            snippets.extend(
                features.build_snippets(price, arrival, weather[mandi_id], meta[mandi_id], n)
            )
        features.write_snippets_csv(out / f"snippets_n{n}.csv", snippets)
        features.write_weather_blocks(out / f"weather_n{n}.bin", snippets)


def load_snippets(out: Path, n: int) -> list[features.Snippet]:
    return features.read_snippets_csv(out / f"snippets_n{n}.csv", out / f"weather_n{n}.bin")


def group_time_slices(snippets: list[features.Snippet], node_order: list[str]
                      ) -> list[list[features.Snippet]]:
    """Group snippets into full-graph slices, chronological, in node order."""
    position = {m: i for i, m in enumerate(node_order)}
    by_date: dict[date, list[features.Snippet]] = {}
    for s in snippets:
        by_date.setdefault(s.start_date, []).append(s)
    groups = []
    for start in sorted(by_date):
        group = by_date[start]
        if len(group) != len(node_order):
            raise model.ModelError(
                f"slice at {start} covers {len(group)} of {len(node_order)} mandis"
            )
        groups.append(sorted(group, key=lambda s: position[s.mandi_id]))
    return groups


@dataclass
class SliceSplit:
    train: list[model.TimeSlice]
    val: list[model.TimeSlice]
    test: list[model.TimeSlice]
    stats: features.NormStats


def split_and_normalize(spec: ExperimentSpec, snippets: list[features.Snippet],
                        node_order: list[str], config: model.ModelConfig) -> SliceSplit:
    """Fit the normalizer on training years, normalize, split by year role."""
    groups = group_time_slices(snippets, node_order)
    train_raw = [s for g in groups for s in g if s.start_date.year in spec.train_years]
    if not train_raw:
        raise model.ModelError("no snippets in the training years")
    stats = features.fit_normalizer(train_raw)
    split = SliceSplit([], [], [], stats)
    for group in groups:
        year = group[0].start_date.year
        if any(s.target is None for s in group):
            continue  # final block: no target, not usable for any split
        ts = model.make_slice([features.apply_normalizer(stats, s) for s in group], config)
        if year in spec.train_years:
            split.train.append(ts)
        elif year == spec.val_year:
            split.val.append(ts)
        elif year == spec.test_year:
            split.test.append(ts)
    return split


def stage_train(spec: ExperimentSpec, out: Path, n: int) -> model.Checkpoint:
    graph = load_graph(spec, out)
    node_order = [m.mandi_id for m in graph.nodes]
    config = spec.model_config(n)
    split = split_and_normalize(spec, load_snippets(out, n), node_order, config)
    result = model.train_model(config, split.train, split.val, graph, split.stats)
    model.save_checkpoint(result.checkpoint, out / f"model_n{n}.ckpt")
    model.write_train_log(out / f"train_log_n{n}.csv", result.log)
    return result.checkpoint


def stage_predict(spec: ExperimentSpec, out: Path, n: int) -> None:
    graph = load_graph(spec, out)
    node_order = [m.mandi_id for m in graph.nodes]
    checkpoint = model.load_checkpoint(out / f"model_n{n}.ckpt")
    groups = group_time_slices(load_snippets(out, n), node_order)
    rows = []
    for group in groups:
        if group[0].start_date.year != spec.test_year or any(s.target is None for s in group):
            continue
        normalized = [features.apply_normalizer(checkpoint.stats, s) for s in group]
        predicted = model.predict_prices(checkpoint, normalized, graph)
        for s, p in zip(group, predicted):
            rows.append((s.mandi_id, s.start_date.isoformat(), float(p), float(s.target)))
    with (out / f"predictions_n{n}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for mandi_id, start, pred, actual in rows:
            writer.writerow([mandi_id, start, repr(pred), repr(actual)])


def read_predictions(out: Path, n: int) -> metrics.EvalPairs:
    predicted, actual = [], []
    with (out / f"predictions_n{n}.csv").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != PREDICTIONS_HEADER:
            raise metrics.MetricError(f"bad predictions header for n={n}")
        for _mandi, _start, pred, act in reader:
            predicted.append(float(pred))
            actual.append(float(act))
    return metrics.EvalPairs(np.array(predicted), np.array(actual))


def stage_evaluate(spec: ExperimentSpec, out: Path) -> metrics.EvalReport:
    report = metrics.build_report({n: read_predictions(out, n) for n in spec.horizons})
    metrics.write_report_csv(out / "report.csv", report)
    return report


def stage_baselines(spec: ExperimentSpec, out: Path) -> dict[str, metrics.EvalReport]:
    """Persistence and edge-less comparisons on the identical test pairs."""
    graph = load_graph(spec, out)
    node_order = [m.mandi_id for m in graph.nodes]
    edgeless = graph.without_edges()
    reports: dict[str, dict[int, metrics.EvalPairs]] = {arm: {} for arm in ARMS}
    for n in spec.horizons:
        reports["graph_model"][n] = read_predictions(out, n)
        snippets = load_snippets(out, n)
        groups = group_time_slices(snippets, node_order)
        predicted, actual = [], []
        for group in groups:
            for s in group:
                if s.start_date.year == spec.test_year and s.target is not None:
                    predicted.append(float(s.features[features.PRICE_IDX]))
                    actual.append(float(s.target))
        reports["persistence"][n] = metrics.EvalPairs(np.array(predicted), np.array(actual))

        config = spec.model_config(n)
        split = split_and_normalize(spec, snippets, node_order, config)
        result = model.train_model(config, split.train, split.val, edgeless, split.stats)
        preds, actuals = [], []
        for ts in split.test:
            normalized_pred = model.predict_prices(
                result.checkpoint,
                _slice_snippets(groups, ts.start_date, split.stats),
                edgeless,
            )
            preds.append(normalized_pred)
            actuals.append(ts.targets_raw)
        reports["no_edges"][n] = metrics.EvalPairs(np.concatenate(preds), np.concatenate(actuals))

    out_reports = {arm: metrics.build_report(by_n) for arm, by_n in reports.items()}
    with (out / "baselines.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BASELINES_HEADER)
        for arm in ARMS:
            for n in spec.horizons:
                r = out_reports[arm].rows[n]
                writer.writerow(
                    [arm, n, repr(r.rmse), repr(r.mae), repr(r.cov_percent), repr(r.r2), repr(r.pearson)]
                )
    return out_reports


def _slice_snippets(groups: list[list[features.Snippet]], start: date,
                    stats: features.NormStats) -> list[features.Snippet]:
    for group in groups:
        if group[0].start_date == start:
            return [features.apply_normalizer(stats, s) for s in group]
    raise model.ModelError(f"no snippet group at {start}")


def run_pipeline(spec: ExperimentSpec, out: str | Path) -> metrics.EvalReport:
    """All stages in order; any failure is tagged with its stage name."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        stage_ingest(spec, out)
    except Exception as exc:
        raise StageError("ingest", exc) from exc
    try:
        stage_curate(spec, out)
    except Exception as exc:
        raise StageError("curate", exc) from exc
    try:
        stage_graph(spec, out)
    except Exception as exc:
        raise StageError("build-graph", exc) from exc
    try:
        stage_snippets(spec, out)
    except Exception as exc:
        raise StageError("snippets", exc) from exc
    for n in spec.horizons:
        try:
            stage_train(spec, out, n)
        except Exception as exc:
            raise StageError("train", exc) from exc
        try:
            stage_predict(spec, out, n)
        except Exception as exc:
            raise StageError("predict", exc) from exc
    try:
        return stage_evaluate(spec, out)
    except Exception as exc:
        raise StageError("evaluate", exc) from exc


def run_baselines(spec: ExperimentSpec, out: str | Path) -> dict[str, metrics.EvalReport]:
    try:
        return stage_baselines(spec, Path(out))
    except StageError:
        raise
    except Exception as exc:
        raise StageError("baselines", exc) from exc
