"""Bias-sensitivity study and the staged pipeline runner.

The bias study perturbs a day's realized counts-as-rates by a growing margin
delta, in the same direction for both processes or in opposing directions,
and tracks how the inventory decision and its replayed cost move.

The pipeline is a chain of stages (ingest, train, forecast, optimize,
evaluate, bias) that communicate through files under the run's output
directory. Each stage can run on its own provided its upstream artifacts
exist; ``run_pipeline`` simply runs them all in order. Every text artifact
starts with a comment carrying the config hash and seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from . import classical, neural
from .config import RunConfig, derive_seed
from .errors import BikecastError, DataError, StageError
from .evaluate import (
    BenchmarkResult,
    DecisionSummary,
    benchmark,
    cumulative_error,
    point_metrics,
    replay_cost,
    rows_to_csv,
    rpd,
    summaries_to_csv,
)
from .ingest import (
    DemandSeries,
    EventStream,
    aggregate,
    attach_covariates,
    build_covariates,
    demand_from_csv,
    demand_to_csv,
    parse_stations,
    parse_trips,
    parse_weather,
    split,
    to_event_streams,
    top_stations,
)
from .inventory import PenaltyConfig, udf_curve
from .queueing import RateSeries
from .synthetic import peaked_day

BIAS_KINDS = ("same_side", "opposite_1", "opposite_2")


@dataclass(frozen=True)
class BiasSpec:
    kind: str
    delta: float

    def __post_init__(self):
        if self.kind not in BIAS_KINDS:
            raise DataError(f"unknown bias kind {self.kind!r}")
        if self.delta < 0:
            raise DataError("delta must be non-negative")


@dataclass
class BiasCurve:
    kind: str
    deltas: np.ndarray
    s_star: np.ndarray
    cost: np.ndarray
    ce: np.ndarray


@dataclass
class BiasStudyResult:
    curves: dict[str, BiasCurve]
    oracle_s: int
    oracle_cost: float

    def to_csv(self) -> str:
        lines = ["kind,delta,s_star,cost"]
        for kind in BIAS_KINDS:
            curve = self.curves[kind]
            for d, s, c in zip(curve.deltas, curve.s_star, curve.cost):
                lines.append(f"{kind},{d:.10g},{int(s)},{c:.10g}")
        return "\n".join(lines) + "\n"


def apply_bias(rates: RateSeries, spec: BiasSpec) -> RateSeries:
    """Shift both rate curves by delta, same side or opposing sides.

    Downward shifts truncate at zero, so the perturbed series is always a
    valid rate series.
    """
    d = spec.delta
    if spec.kind == "same_side":
        mu, lam = rates.pickup_rates + d, rates.return_rates + d
    elif spec.kind == "opposite_1":
        mu, lam = rates.pickup_rates + d, np.maximum(rates.return_rates - d, 0.0)
    else:
        mu, lam = np.maximum(rates.pickup_rates - d, 0.0), rates.return_rates + d
    return RateSeries(interval_minutes=rates.interval_minutes,
                      pickup_rates=mu, return_rates=lam)


def default_delta_grid(delta_max: float = 25.0, step: float = 0.5) -> np.ndarray:
    n = int(round(delta_max / step))
    return np.arange(n + 1) * step


def bias_study(day_counts: DemandSeries, events: EventStream, capacity: int,
               penalties: PenaltyConfig = PenaltyConfig(),
               delta_grid: np.ndarray | None = None,
               substeps_per_interval: int = 60) -> BiasStudyResult:
    """Decision and replay cost under each bias pattern across the delta grid.

    The unbiased rates are the day's realized counts-as-rates, so delta=0
    reproduces the perfect-information oracle decision for every pattern.
    """
    if day_counts.n_days != 1:
        raise DataError("bias study expects exactly one day of counts")
    if delta_grid is None:
        delta_grid = default_delta_grid()
    base = RateSeries(
        interval_minutes=day_counts.interval_minutes,
        pickup_rates=day_counts.pickups.astype(float),
        return_rates=day_counts.returns.astype(float),
    )
    curves = {}
    for kind in BIAS_KINDS:
        s_stars = np.zeros(len(delta_grid), dtype=int)
        costs = np.zeros(len(delta_grid))
        ces = np.zeros(len(delta_grid))
        for i, d in enumerate(delta_grid):
            biased = apply_bias(base, BiasSpec(kind, float(d)))
            curve = udf_curve(biased, capacity, penalties, substeps_per_interval)
            s_stars[i] = curve.s_star
            costs[i] = replay_cost(events, curve.s_star, capacity, penalties).cost
            ces[i] = cumulative_error(day_counts.pickups, day_counts.returns,
                                      biased.pickup_rates, biased.return_rates)
        curves[kind] = BiasCurve(kind=kind, deltas=delta_grid.astype(float),
                                 s_star=s_stars, cost=costs, ce=ces)
    oracle_s = int(curves["same_side"].s_star[0])
    oracle_cost = float(curves["same_side"].cost[0])
    return BiasStudyResult(curves=curves, oracle_s=oracle_s, oracle_cost=oracle_cost)


# -- pipeline stages ----------------------------------------------------------


@dataclass
class StationData:
    station: str
    capacity: int
    series: DemandSeries


@dataclass
class PipelineResult:
    out_dir: str
    overall: list[DecisionSummary]
    per_station: dict[str, BenchmarkResult]
    metrics_rows: list[dict]
    bias: BiasStudyResult
    artifacts: list[str] = field(default_factory=list)


class _stage:
    """Re-raise stage failures with the stage name attached."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(
                exc, (BikecastError, OSError, ValueError, KeyError)):
            raise StageError(self.name, str(exc)) from exc
        return False


def _write(path: str, text: str, header: str = "") -> str:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        fh.write(text)
    return path


def _require(path: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run the {produced_by} stage first")
    return path


def _read_commented(path: str) -> str:
    with open(path) as fh:
        return "".join(ln for ln in fh if not ln.startswith("#"))


def stage_ingest(config: RunConfig) -> dict[str, StationData]:
    """Parse inputs, select stations, and write per-station demand files."""
    with _stage("ingest"):
        capacities = parse_stations(_require_input(config.stations_path))
        trips = parse_trips(_require_input(config.trips_path))
        selected = list(config.stations) or top_stations(trips, config.top_n)
        missing = [s for s in selected if s not in capacities]
        if missing:
            raise DataError(f"stations without metadata: {missing}")
        streams = to_event_streams(trips)
        weather = parse_weather(_require_input(config.weather_path))
        day_range = (config.start_date, config.end_date)
        covariates = build_covariates(weather, day_range, config.interval_minutes)
        header = config.artifact_header()
        data: dict[str, StationData] = {}
        lines = ["station_id,capacity"]
        for sid in selected:
            if sid not in streams:
                raise DataError(f"station {sid} has no events in the trip file")
            series = attach_covariates(
                aggregate(streams[sid], config.interval_minutes, day_range), covariates)
            data[sid] = StationData(station=sid, capacity=capacities[sid], series=series)
            _write(_demand_path(config, sid), demand_to_csv(series), header)
            lines.append(f"{sid},{capacities[sid]}")
        _write(_selected_path(config), "\n".join(lines) + "\n", header)
        return data


def _require_input(path: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    return path


def _demand_path(config: RunConfig, sid: str) -> str:
    return os.path.join(config.out_dir, "demand", f"station_{sid}.csv")


def _selected_path(config: RunConfig) -> str:
    return os.path.join(config.out_dir, "demand", "stations_selected.csv")


def _model_path(config: RunConfig, sid: str, name: str) -> str:
    ext = "json" if name in ("ha", "lr") else "ckpt"
    return os.path.join(config.out_dir, "models", f"{sid}_{name}.{ext}")


def _forecast_path(config: RunConfig, sid: str, name: str) -> str:
    return os.path.join(config.out_dir, "forecasts", f"{sid}_{name}.csv")


def load_ingested(config: RunConfig) -> dict[str, StationData]:
    """Read back what stage_ingest wrote."""
    path = _require(_selected_path(config), "ingest")
    data: dict[str, StationData] = {}
    for line in _read_commented(path).splitlines()[1:]:
        sid, cap = line.split(",")
        series = demand_from_csv(
            _require(_demand_path(config, sid), "ingest"), sid, config.interval_minutes)
        data[sid] = StationData(station=sid, capacity=int(cap), series=series)
    return data


def _train_config(config: RunConfig) -> neural.TrainConfig:
    return neural.TrainConfig(
        hidden_width=config.hidden_width,
        learning_rate=config.learning_rate,
        batch_days=config.batch_days,
        max_epochs=config.max_epochs,
        patience=config.patience,
    )


def stage_train(config: RunConfig) -> dict[str, dict]:
    """Fit every configured model per station and write model artifacts."""
    with _stage("train"):
        data = load_ingested(config)
        train_cfg = _train_config(config)
        header = config.artifact_header()
        fitted: dict[str, dict] = {}
        for sid in sorted(data):
            fitted[sid] = {}
            parts = split(data[sid].series)
            for name in sorted(config.models):
                if name == "ha":
                    model = classical.fit_ha(parts.train)
                    _write(_model_path(config, sid, name),
                           header + classical.model_to_json(model) + "\n")
                elif name == "lr":
                    model = classical.fit_lr(parts.train)
                    _write(_model_path(config, sid, name),
                           header + classical.model_to_json(model) + "\n")
                elif name == "ma":
                    continue  # fitted per forecast day from the rolling window
                elif name == "movprnn":
                    model = neural.train(name, parts, train_cfg,
                                         derive_seed(config.seed, f"train:{sid}:{name}"),
                                         targets=("pickups", "returns"))
                    neural.save_checkpoint(model, _model_path(config, sid, name))
                else:
                    model = {}
                    for target in ("pickups", "returns"):
                        m = neural.train(name, parts, train_cfg,
                                         derive_seed(config.seed,
                                                     f"train:{sid}:{name}:{target}"),
                                         targets=(target,))
                        neural.save_checkpoint(
                            m, _model_path(config, sid, f"{name}_{target}"))
                        model[target] = m
                fitted[sid][name] = model
        return fitted


def load_models(config: RunConfig, stations: list[str]) -> dict[str, dict]:
    fitted: dict[str, dict] = {}
    for sid in stations:
        fitted[sid] = {}
        for name in sorted(config.models):
            if name == "ma":
                fitted[sid][name] = None
            elif name in ("ha", "lr"):
                path = _require(_model_path(config, sid, name), "train")
                fitted[sid][name] = classical.model_from_json(_read_commented(path))
            elif name == "movprnn":
                path = _require(_model_path(config, sid, name), "train")
                fitted[sid][name] = neural.load_checkpoint(path)
            else:
                fitted[sid][name] = {
                    target: neural.load_checkpoint(
                        _require(_model_path(config, sid, f"{name}_{target}"), "train"))
                    for target in ("pickups", "returns")
                }
    return fitted


def _test_days(series: DemandSeries) -> tuple[DemandSeries, list[date]]:
    test = split(series).test
    return test, [test.day(i).start.date() for i in range(test.n_days)]


def _rate_series_csv(days: list[date], series_list: list[RateSeries]) -> str:
    lines = ["date,slot,pickup_rate,return_rate"]
    for day, rates in zip(days, series_list):
        for slot in range(len(rates)):
            lines.append(f"{day.isoformat()},{slot},"
                         f"{rates.pickup_rates[slot]:.10g},{rates.return_rates[slot]:.10g}")
    return "\n".join(lines) + "\n"


def stage_forecast(config: RunConfig) -> dict[str, dict[str, list[RateSeries]]]:
    """Predict every test day with every model; one CSV per station and model."""
    with _stage("forecast"):
        data = load_ingested(config)
        fitted = load_models(config, sorted(data))
        header = config.artifact_header()
        predictions: dict[str, dict[str, list[RateSeries]]] = {}
        for sid in sorted(data):
            series = data[sid].series
            test, days = _test_days(series)
            predictions[sid] = {name: [] for name in sorted(config.models)}
            for i, day in enumerate(days):
                day_cov = test.day(i).covariates
                for name in sorted(config.models):
                    model = fitted[sid][name]
                    if name == "ha":
                        rates = model.predict_day(day)
                    elif name == "ma":
                        profile = classical.fit_ma(series, day,
                                                   window_days=config.ma_window_days)
                        rates = profile.predict_day(day)
                    elif name == "lr":
                        rates = model.predict_day(day_cov, config.interval_minutes)
                    elif name == "movprnn":
                        fc = neural.predict_rates(
                            model, day_cov.values, n_samples=config.forecast_samples,
                            seed=derive_seed(config.seed, f"forecast:{sid}:{name}:{day}"))
                        rates = fc.to_rate_series(config.interval_minutes)
                    else:
                        fcs = {
                            target: neural.predict_rates(
                                model[target], day_cov.values,
                                n_samples=config.forecast_samples,
                                seed=derive_seed(
                                    config.seed, f"forecast:{sid}:{name}:{target}:{day}"))
                            for target in ("pickups", "returns")
                        }
                        rates = neural.combine_forecasts(fcs["pickups"], fcs["returns"],
                                                         config.interval_minutes)
                    predictions[sid][name].append(rates)
            for name in sorted(config.models):
                _write(_forecast_path(config, sid, name),
                       _rate_series_csv(days, predictions[sid][name]), header)
        return predictions


def load_forecasts(config: RunConfig, sid: str, name: str,
                   interval_minutes: int) -> tuple[list[date], list[RateSeries]]:
    path = _require(_forecast_path(config, sid, name), "forecast")
    by_day: dict[str, list[tuple[float, float]]] = {}
    for line in _read_commented(path).splitlines()[1:]:
        day, _slot, p, r = line.split(",")
        by_day.setdefault(day, []).append((float(p), float(r)))
    days = [date.fromisoformat(d) for d in sorted(by_day)]
    series_list = [
        RateSeries(interval_minutes=interval_minutes,
                   pickup_rates=np.array([p for p, _ in by_day[d.isoformat()]]),
                   return_rates=np.array([r for _, r in by_day[d.isoformat()]]))
        for d in days
    ]
    return days, series_list


def stage_optimize(config: RunConfig) -> dict[str, dict[str, list[int]]]:
    """Turn every forecast into a starting-inventory decision."""
    with _stage("optimize"):
        data = load_ingested(config)
        penalties = PenaltyConfig(config.lost_pickup_penalty, config.lost_return_penalty)
        header = config.artifact_header()
        decisions: dict[str, dict[str, list[int]]] = {}
        for sid in sorted(data):
            decisions[sid] = {}
            lines = ["date,model,s_star,expected_cost"]
            for name in sorted(config.models):
                days, forecasts = load_forecasts(config, sid, name,
                                                 config.interval_minutes)
                picks = []
                for day, rates in zip(days, forecasts):
                    curve = udf_curve(rates, data[sid].capacity, penalties,
                                      config.substeps_per_interval)
                    picks.append(curve.s_star)
                    lines.append(f"{day.isoformat()},{name},{curve.s_star},"
                                 f"{curve.values[curve.s_star]:.10g}")
                decisions[sid][name] = picks
            _write(os.path.join(config.out_dir, "decisions", f"{sid}.csv"),
                   "\n".join(lines) + "\n", header)
        return decisions


def stage_evaluate(config: RunConfig) -> tuple[list[DecisionSummary],
                                               dict[str, BenchmarkResult], list[dict]]:
    """Benchmark every model's forecasts against replayed reality."""
    with _stage("evaluate"):
        data = load_ingested(config)
        penalties = PenaltyConfig(config.lost_pickup_penalty, config.lost_return_penalty)
        trips = parse_trips(_require_input(config.trips_path),
                            station_filter=set(data))
        streams = to_event_streams(trips)
        header = config.artifact_header()

        all_rows: list[dict] = []
        metrics_rows: list[dict] = []
        per_station: dict[str, BenchmarkResult] = {}
        cost_acc: dict[str, list[float]] = {}
        ce_acc: dict[str, list[float]] = {}
        oracle_acc: list[float] = []
        for sid in sorted(data):
            series = data[sid].series
            test, days = _test_days(series)
            predictions = {}
            for name in sorted(config.models):
                fdays, forecasts = load_forecasts(config, sid, name,
                                                  config.interval_minutes)
                if fdays != days:
                    raise DataError(f"forecast days for {sid}/{name} do not match the "
                                    f"test split")
                predictions[name] = forecasts
            day_counts = [test.day(i) for i in range(test.n_days)]
            day_events = [streams[sid].slice_day(d) for d in days]
            result = benchmark(predictions, day_events, day_counts, data[sid].capacity,
                               penalties, config.substeps_per_interval)
            per_station[sid] = result
            all_rows.extend(result.rows)
            for summary in result.summaries:
                if summary.model == "oracle":
                    oracle_acc.append(summary.mean_cost)
                else:
                    cost_acc.setdefault(summary.model, []).append(summary.mean_cost)
                    ce_acc.setdefault(summary.model, []).append(summary.mean_ce)
            for name in sorted(config.models):
                pred_p = np.concatenate([r.pickup_rates for r in predictions[name]])
                pred_r = np.concatenate([r.return_rates for r in predictions[name]])
                for proc, actual, pred in (("pickups", test.pickups, pred_p),
                                           ("returns", test.returns, pred_r)):
                    rep = point_metrics(actual, pred)
                    for metric in ("rmse", "mae", "r_squared"):
                        value = getattr(rep, metric)
                        if value is None:
                            continue
                        metrics_rows.append({"station": sid, "date": "test",
                                             "model": name,
                                             "metric": f"{metric}_{proc}",
                                             "value": float(value)})

        mean_oracle = float(np.mean(oracle_acc)) if oracle_acc else 0.0
        overall = [DecisionSummary(model="oracle", mean_cost=mean_oracle,
                                   rpd=rpd(mean_oracle, mean_oracle), mean_ce=0.0)]
        for name in sorted(cost_acc):
            mean_cost = float(np.mean(cost_acc[name]))
            overall.append(DecisionSummary(
                model=name, mean_cost=mean_cost, rpd=rpd(mean_cost, mean_oracle),
                mean_ce=float(np.mean(ce_acc[name]))))
        _write(os.path.join(config.out_dir, "reports", "metrics.csv"),
               rows_to_csv(metrics_rows + all_rows), header)
        _write(os.path.join(config.out_dir, "reports", "summary.csv"),
               summaries_to_csv(overall), header)
        return overall, per_station, metrics_rows


def stage_bias(config: RunConfig) -> BiasStudyResult:
    """Bias study on the bundled peaked synthetic day."""
    with _stage("bias"):
        penalties = PenaltyConfig(config.lost_pickup_penalty, config.lost_return_penalty)
        day_counts, day_events = peaked_day(seed=config.bias_seed,
                                            interval_minutes=config.interval_minutes)
        study = bias_study(day_counts, day_events, config.bias_capacity, penalties,
                           default_delta_grid(config.bias_delta_max,
                                              config.bias_delta_step),
                           config.substeps_per_interval)
        _write(os.path.join(config.out_dir, "reports", "bias_curves.csv"),
               study.to_csv(), config.artifact_header())
        return study


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Run every stage in order; deterministic given config and seed."""
    stage_ingest(config)
    stage_train(config)
    stage_forecast(config)
    stage_optimize(config)
    overall, per_station, metrics_rows = stage_evaluate(config)
    study = stage_bias(config)
    artifacts = []
    for root, _dirs, files in os.walk(config.out_dir):
        for name in sorted(files):
            artifacts.append(os.path.join(root, name))
    return PipelineResult(out_dir=config.out_dir, overall=overall,
                          per_station=per_station, metrics_rows=metrics_rows,
                          bias=study, artifacts=sorted(artifacts))
