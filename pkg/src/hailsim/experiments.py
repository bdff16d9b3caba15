"""Experiment orchestration: build inputs, run a pipeline, write artifacts atomically."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
import platform
import shutil
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baseline import extract_deadheading, read_gps_csv, street_adec, street_adm, write_days_csv, write_gps_csv
from .calibration import EdgeTimeCalibrator, hourly_speed_profile
from .io import ConfigError, DataError, ExperimentConfig, load_trips, read_fleet_csv
from .kpi import METRICS
from .mfd import MfdModel
from .network import RoadNetwork, TravelTimeTensor, all_pairs_shortest_times, load_network, read_edge_times_csv, write_edge_times_csv
from .policy import parse_scenarios, run_demand_experiment, run_fleet_sweep, run_geofencing
from .simulator import SimConfig, TripTable, derive_seed, monte_carlo, run_day, t_interval
from .synth import SynthSpec, generate_synthetic_instance, synthetic_gps

logger = logging.getLogger(__name__)

EXPERIMENTS = ("comparison", "sweep", "geofence", "demand", "calibrate", "baseline", "tensor", "synth")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class StageError(RuntimeError):
    """An error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        if isinstance(self.cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(self.cause, (DataError, FileNotFoundError, ValueError, KeyError)):
            return EXIT_DATA
        return EXIT_INTERNAL


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        logger.debug("stage %s", self.name)
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


@dataclass
class Inputs:
    network: RoadNetwork
    trips: Optional[TripTable] = None
    tensor: Optional[TravelTimeTensor] = None
    edge_times: Optional[np.ndarray] = None
    targets: Optional[tuple] = None
    observations: Optional[np.ndarray] = None
    synth: object = None
    diagnostics: dict = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _synth_spec(cfg) -> SynthSpec:
    try:
        return SynthSpec(**cfg.synth)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad synth spec: {e}") from None


def load_inputs(cfg: ExperimentConfig, need_tensor: bool = True, need_trips: bool = True) -> Inputs:
    """Network, trips, travel times and fleet targets from files or a synthetic spec."""
    if cfg.nodes is None:
        with _Stage("synthesize"):
            spec = _synth_spec(cfg)
            inst = generate_synthetic_instance(spec, cfg.synth_seed)
        tensor = None
        if need_tensor:
            with _Stage("tensor"):
                tensor = inst.tensor()
        targets = tuple(cfg.active_targets) if cfg.active_targets is not None else inst.active_targets
        obs = None
        if tensor is not None:
            tr = inst.trips
            obs = np.column_stack([tr.origin, tr.destination, tr.request_hour,
                                   tensor.times[tr.request_hour, tr.origin, tr.destination]])
        return Inputs(inst.network, inst.trips, tensor, inst.edge_times, targets, obs, inst, {})

    with _Stage("load-network"):
        network = load_network(cfg.nodes, cfg.edges)
    trips = obs = None
    diag = {}
    if need_trips:
        with _Stage("load-trips"):
            if cfg.trips is None:
                raise ConfigError("this experiment needs a trips file")
            loaded = load_trips(cfg.trips, network, cfg.snap_radius, cfg.min_duration, cfg.max_duration)
            trips, obs, diag = loaded.trips, loaded.observations, dict(loaded.diagnostics)
    tensor = edge_times = None
    if need_tensor:
        with _Stage("tensor"):
            if cfg.tensor is not None:
                tensor = TravelTimeTensor.load_npz(cfg.tensor)
                if tensor.n_nodes != network.n_nodes:
                    raise DataError("tensor cache does not match the network")
            elif cfg.edge_times is not None:
                edge_times = read_edge_times_csv(cfg.edge_times, network)
                tensor = all_pairs_shortest_times(edge_times, network)
            else:
                raise ConfigError("need a tensor cache or an edge_times file")
            edge_times = tensor.edge_times
    targets = None
    with _Stage("fleet"):
        if cfg.active_targets is not None:
            targets = tuple(cfg.active_targets)
        elif cfg.fleet is not None:
            targets = read_fleet_csv(cfg.fleet)
    return Inputs(network, trips, tensor, edge_times, targets, obs, None, diag)


def sim_config(cfg: ExperimentConfig, targets, t_max_pu=None, t_max_queue=None) -> SimConfig:
    if targets is None:
        raise ConfigError("hourly fleet targets are required (active_targets or fleet file)")
    try:
        return SimConfig(targets,
                         t_max_pu=float(_as_list(cfg.t_max_pu)[0] if t_max_pu is None else t_max_pu),
                         t_max_queue=float(_as_list(cfg.t_max_queue)[0] if t_max_queue is None else t_max_queue),
                         period=cfg.period, fleet_size=cfg.fleet_size, record_events=cfg.record_events)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _summary_rows(group, summary):
    return [(group, m, s.mean, s.ci_low, s.ci_high, s.n) for m, s in summary.items()]


SUMMARY_HEADER = ["group", "metric", "mean", "ci_low", "ci_high", "n"]


# -- experiments -----------------------------------------------------------


def _comparison(cfg, out: Path, seeds: dict) -> None:
    inp = load_inputs(cfg)
    rows = []
    grid = list(itertools.product(_as_list(cfg.t_max_pu), _as_list(cfg.t_max_queue)))
    first = True
    for tp, tq in grid:
        scfg = sim_config(cfg, inp.targets, tp, tq)
        group = f"ride-hailing:t_max_pu={float(tp):g}:t_max_queue={float(tq):g}"
        with _Stage(f"simulate[{group}]"):
            mc = monte_carlo(inp.trips, inp.tensor, inp.network, scfg, cfg.runs, cfg.seed, "comparison",
                             keep_results=first and cfg.record_events, keep_events=cfg.record_events, n_jobs=cfg.jobs)
        seeds[group] = "comparison"
        rows += _summary_rows(group, mc.summary)
        for m in ("queue", "pickup"):
            s = t_interval([v for v in (r.overall.value(m) for r in mc.reports) if v is not None])
            rows.append((group, m, s.mean, s.ci_low, s.ci_high, s.n))
        if first:
            mc.reports[0].to_csv(out / "kpi_run0.csv")
            mc.reports[0].to_json(out / "kpi_run0.json")
            if cfg.record_events:
                mc.results[0].events.write(out / "events_run0.csv")
            first = False
    with _Stage("street-baseline"):
        street = _street_kpis(cfg, inp, out)
    if street is not None:
        for m in METRICS:
            rows.append(("street-hailing", m, street.get(m), None, None, street.get("n")))
    _write_rows(out / "comparison.csv", SUMMARY_HEADER, rows)


def _street_kpis(cfg, inp: Inputs, out: Path) -> Optional[dict]:
    if cfg.gps is not None:
        points, _ = read_gps_csv(cfg.gps)
        n_trips = len(inp.trips) if inp.trips is not None else 0
    elif inp.synth is not None:
        points = synthetic_gps(inp.synth, n_taxis=max(1, min(50, inp.synth.spec.fleet_size)), seed=cfg.seed)
        n_trips = len(inp.synth.trips)
    else:
        return None
    res = extract_deadheading(points, cfg.gps_max_gap_s)
    write_days_csv(out / "street_deadheading.csv", res.days)
    if n_trips == 0:
        return None
    return {"service_rate": None, "apwt": cfg.street_apwt, "adm": street_adm(res.days, n_trips),
            "adec": street_adec(res.segments, n_trips), "n": n_trips}


def _mfd(cfg) -> Optional[MfdModel]:
    if cfg.mfd is None:
        return None
    try:
        return MfdModel.from_dict(cfg.mfd)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad mfd model: {e}") from None


def _sweep(cfg, out: Path, seeds: dict) -> None:
    inp = load_inputs(cfg)
    scfg = sim_config(cfg, inp.targets)
    model = _mfd(cfg)
    with _Stage("fleet-sweep"):
        points = run_fleet_sweep(inp.trips, inp.tensor, inp.network, scfg, cfg.factors, model, cfg.runs, cfg.seed,
                                 cfg.taxi_share, stage="sweep", n_jobs=cfg.jobs)
    seeds["sweep"] = "sweep"
    long_rows, wide = [], []
    for p in points:
        long_rows += _summary_rows(f"F={p.factor}", p.summary)
        row = [p.factor, replace(scfg, fleet_factor=p.factor).fleet]
        for m in METRICS:
            s = p.summary[m]
            row += [s.mean, s.ci_low, s.ci_high, p.normalized[m]]
        wide.append(row)
    header = ["factor", "fleet"] + [f"{m}_{k}" for m in METRICS for k in ("mean", "ci_low", "ci_high", "normalized")]
    _write_rows(out / "sweep.csv", SUMMARY_HEADER, long_rows)
    _write_rows(out / "sweep_summary.csv", header, wide)


def _geofence(cfg, out: Path, seeds: dict) -> None:
    inp = load_inputs(cfg)
    scfg = sim_config(cfg, inp.targets)
    with _Stage("geofence"):
        res = run_geofencing(inp.trips, inp.tensor, inp.network, scfg, cfg.geofence_variant, cfg.runs, cfg.seed,
                             cfg.reallocation, cfg.op1_t_max_pu, cfg.op1_t_max_queue, n_jobs=cfg.jobs)
    seeds["geofence"] = ["geofence-unified"] + [f"geofence-operator{o.operator_id}" for o in res.partition.operators]
    _write_rows(out / "geofence.csv", SUMMARY_HEADER, res.rows())
    _write_rows(out / "geofence_partition.csv", ["operator", "zone_rule", "trips", "share", "fleet"],
                [(op.operator_id, op.zone_rule, len(t), sh, f) for op, t, sh, f in
                 zip(res.partition.operators, res.partition.trips, res.partition.shares, res.partition.fleets)])


def _demand(cfg, out: Path, seeds: dict) -> None:
    inp = load_inputs(cfg)
    scfg = sim_config(cfg, inp.targets)
    try:
        scen = parse_scenarios(cfg.scenarios, cfg.deletion_count)
    except (ValueError, AttributeError) as e:
        raise ConfigError(f"bad scenario list: {e}") from None
    with _Stage("demand"):
        outs = run_demand_experiment(inp.trips, inp.tensor, inp.network, scfg, scen, cfg.runs, cfg.seed, cfg.alpha,
                                     cfg.z_threshold, frozenset(cfg.peak_hours))
    seeds["demand"] = ["demand-sim"] + [f"demand-delete:{o.label.name}" for o in outs]
    rows, tests, samples, status = [], [], [], []
    for o in outs:
        status.append((o.label.name, o.label.kind, o.label.deletion_count, o.n_matching, int(o.feasible)))
        if not o.feasible:
            continue
        rows += _summary_rows(o.label.name, o.summary)
        for m, t in o.tests.items():
            tests.append((o.label.name, m, t.mean_diff, t.statistic, t.p_value, int(t.significant)))
        for i, r in enumerate(o.reports):
            for m in METRICS:
                samples.append((o.label.name, i, m, r.overall.value(m)))
    _write_rows(out / "demand.csv", SUMMARY_HEADER, rows)
    _write_rows(out / "demand_tests.csv", ["scenario", "metric", "mean_diff_vs_random", "t", "p_value", "significant"], tests)
    _write_rows(out / "demand_samples.csv", ["scenario", "run", "metric", "value"], samples)
    _write_rows(out / "demand_scenarios.csv", ["scenario", "kind", "deletion_count", "matching_trips", "feasible"], status)


def _calibrate(cfg, out: Path, seeds: dict) -> None:
    inp = load_inputs(cfg, need_tensor=cfg.nodes is None)
    if inp.observations is None or not len(inp.observations):
        raise StageError("calibrate", DataError("no trip observations to calibrate from"))
    with _Stage("calibrate"):
        params = dict(cfg.calibration)
        try:
            est = EdgeTimeCalibrator(inp.network, **params)
        except TypeError as e:
            raise ConfigError(f"bad calibration settings: {e}") from None
        obs = inp.observations
        est.fit(obs[:, :3].astype(np.int64), obs[:, 3])
    write_edge_times_csv(out / "edge_times.csv", est.edge_times_)
    speeds = hourly_speed_profile(est.edge_times_, inp.network)
    _write_rows(out / "speed_profile.csv", ["hour", "speed_kmh"], enumerate(speeds.tolist()))
    _write_rows(out / "calibration_loss.csv", ["hour", "iteration", "mse"],
                [(h, i, v) for h, hist in sorted(est.loss_history_.items()) for i, v in enumerate(hist)])
    if inp.diagnostics:
        _write_rows(out / "trip_diagnostics.csv", ["key", "count"], sorted(inp.diagnostics.items()))


def _baseline(cfg, out: Path, seeds: dict) -> None:
    if cfg.gps is None and cfg.nodes is not None:
        raise StageError("baseline", ConfigError("baseline needs a gps file"))
    inp = load_inputs(cfg, need_tensor=False, need_trips=cfg.trips is not None or cfg.nodes is None)
    with _Stage("baseline"):
        if cfg.gps is not None:
            points, bad = read_gps_csv(cfg.gps)
        else:
            points, bad = synthetic_gps(inp.synth, n_taxis=max(1, min(50, inp.synth.spec.fleet_size)), seed=cfg.seed), 0
        res = extract_deadheading(points, cfg.gps_max_gap_s)
    write_days_csv(out / "street_deadheading.csv", res.days)
    n = len(inp.trips) if inp.trips is not None else 0
    rows = [("segments", len(res.segments)), ("gap_segments", res.diagnostics["gap_segments"]),
            ("unparseable_rows", bad), ("malformed", res.diagnostics["malformed"]),
            ("unknown_status", res.diagnostics["unknown_status"]), ("total_km", res.total_km),
            ("total_min", res.total_min), ("n_trips", n)]
    if n:
        rows += [("street_adm", street_adm(res.days, n)), ("street_adec", street_adec(res.segments, n))]
    _write_rows(out / "street_summary.csv", ["key", "value"], rows)


def _tensor(cfg, out: Path, seeds: dict) -> None:
    inp = load_inputs(cfg, need_trips=False)
    inp.tensor.to_csv(out / "tensor.csv")
    inp.tensor.save_npz(out / "tensor.npz")


def _synth(cfg, out: Path, seeds: dict) -> None:
    with _Stage("synthesize"):
        spec = _synth_spec(cfg)
        inst = generate_synthetic_instance(spec, cfg.synth_seed)
        inst.write(out)
        write_gps_csv(out / "gps.csv", synthetic_gps(inst, n_taxis=max(1, min(50, spec.fleet_size)), seed=cfg.seed))


_RUNNERS = {"comparison": _comparison, "sweep": _sweep, "geofence": _geofence, "demand": _demand,
            "calibrate": _calibrate, "baseline": _baseline, "tensor": _tensor, "synth": _synth}

# files whose content is not byte-stable (zip containers carry timestamps)
_UNHASHED = {"tensor.npz"}


def _versions() -> dict:
    import scipy
    import sklearn

    return {"hailsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


def run_experiment(cfg: ExperimentConfig, experiment: str) -> int:
    """Run one experiment; outputs appear in ``cfg.out`` only if it succeeds.

    Returns the process exit status: 0 ok, 1 configuration error, 2 data
    error, 3 internal error.
    """
    if experiment not in _RUNNERS:
        logger.error("unknown experiment %r", experiment)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        cfg.validate()
    except ConfigError as e:
        logger.error("config: %s", e)
        return EXIT_CONFIG
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out.parent))
    try:
        seeds: dict = {}
        try:
            _RUNNERS[experiment](cfg, staging, seeds)
        except StageError:
            raise
        except ConfigError as e:
            raise StageError("config", e) from e
        except Exception as e:  # noqa: BLE001 - reported with the stage name below
            raise StageError(experiment, e) from e
        files = {}
        for p in sorted(staging.iterdir()):
            if p.name not in _UNHASHED:
                files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {"experiment": experiment, "config_hash": cfg.digest(), "config": _portable(cfg),
                    "seed": cfg.seed, "seed_streams": seeds, "versions": _versions(), "outputs": files}
        with open(staging / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
            f.write("\n")
        out.mkdir(parents=True, exist_ok=True)
        for p in sorted(staging.iterdir()):
            os.replace(p, out / p.name)
        return EXIT_OK
    except StageError as e:
        logger.error("stage %s failed: %s: %s", e.stage, type(e.cause).__name__, e.cause)
        return e.exit_code
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def _portable(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    d.pop("out", None)
    d.pop("jobs", None)
    return d


def replay_seed(master: int, stage: str, index: int) -> np.random.SeedSequence:
    """The per-run seed stream an experiment used, for re-running one run by hand."""
    return derive_seed(master, stage, index)


def simulate_once(cfg: ExperimentConfig, index: int = 0):
    """One seeded day under ``cfg`` (first t_max_pu / t_max_queue), events on."""
    inp = load_inputs(cfg)
    scfg = replace(sim_config(cfg, inp.targets), record_events=True)
    return run_day(inp.trips, inp.tensor, inp.network, scfg, derive_seed(cfg.seed, "comparison", index))
