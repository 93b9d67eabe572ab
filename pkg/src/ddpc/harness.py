"""Scenario configuration, closed-loop execution, and the CLI front end.

A scenario lives in one INI-style file with sections [plant], [shared],
[deepc], [kmpc], [reference], [run].  The [shared] section is the single
source for horizon, weights, sampling time, and constraint boxes; both
controllers are built from the same parsed object, and any of those keys
appearing inside [deepc] or [kmpc] fails validation, so the two loops can
never drift apart in tuning.

Subcommands:

* ``gen-data``  excite the plant, write the identification dataset CSV
* ``identify``  fit the lifted linear model, write it as JSON
* ``run``       closed-loop run(s), write RunLog CSV(s)
* ``compare``   metrics of two logs, normalized to a chosen baseline

Exit codes: 0 success, 2 configuration/input error, 3 an applied input
violated its bounds, 4 solver degradation above threshold.

Determinism contract: with fixed seeds, gen-data and run produce
byte-identical files across repeated executions on one machine.  Wall-clock
solve times are therefore excluded from logs unless ``--timings`` is given;
timing summaries still print to stdout.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ddpc.dataio import (ExcitationSpec, TrajectoryDataset, generate_step_excitation,
                         load_dataset, minimum_data_length,
                         persistent_excitation_check, save_dataset)
from ddpc.deepc import DeepcConfig, DeepcController, init_window
from ddpc.hankel import partition_blocks
from ddpc.koopman import KmpcController, identify_edmd, load_model, save_model
from ddpc.metrics import (MetricsRecord, RunLog, comparison_table, load_runlog,
                          metrics_from_log, normalize_comparison,
                          save_comparison_csv, save_runlog)
from ddpc.plant import (LtiPlant, PasteurizerSurrogate, PlantInterface,
                        PASTEURIZER_CONSTANTS, steady_state_solve)
from ddpc.qp_core import QpStatus, SolverOptions

# run exits with code 4 when more than this fraction of steps fail to solve
DEGRADATION_FRACTION = 0.05

_SHARED_KEYS = frozenset(
    ["n", "ts", "q_diag", "r_diag", "u_lo", "u_hi", "y_lo", "y_hi"])


class ScenarioError(Exception):
    """Configuration or input problem; maps to exit code 2."""


def _floats(text: str, n: Optional[int] = None, what: str = "value") -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ScenarioError(f"cannot parse {what} from '{text}'") from exc
    if n is not None and vals.shape != (n,):
        raise ScenarioError(f"{what} needs {n} comma-separated numbers, got '{text}'")
    return vals


def _matrix(text: str, what: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split(",")] for row in text.split(";")]
        mat = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"cannot parse {what} from '{text}'") from exc
    if mat.ndim != 2:
        raise ScenarioError(f"{what} must be a matrix (rows split by ';')")
    return mat


@dataclass
class ScenarioConfig:
    """Typed view of one scenario file plus its provenance hash."""

    path: Path
    plant_kind: str
    noise_std: float
    lti_matrices: Optional[Dict[str, np.ndarray]]
    dist_time: Optional[int]
    dist_value: Optional[np.ndarray]
    shared: DeepcConfig          # single-sourced tuning; KMPC reads N/Q/R/bounds
    Ts: float
    dataset_path: Path
    condensed: bool
    model_path: Path
    n_z: int
    kf_weights: Tuple[float, float, float]  # (q_z, q_d, r_y)
    ref_channel: int
    ref_levels: np.ndarray
    ref_times: np.ndarray
    T_sim: int
    seed: int
    initial_u: np.ndarray
    excite_T: int
    excite_hold: Tuple[int, int]
    excite_seed: int
    hash: str = ""

    @property
    def n_u(self) -> int:
        return self.shared.n_u

    @property
    def n_y(self) -> int:
        return self.shared.n_y


def _scenario_hash(cp: configparser.ConfigParser, seed: int) -> str:
    """Digest over plant parameters, shared tuning, reference, and seed."""
    h = hashlib.sha256()
    for section in ("plant", "shared", "reference"):
        for key in sorted(cp[section]):
            h.update(f"{section}.{key}={cp[section][key]}\n".encode())
    if cp["plant"].get("kind", "pasteurizer").strip() == "pasteurizer":
        for key in sorted(PASTEURIZER_CONSTANTS):
            h.update(f"const.{key}={PASTEURIZER_CONSTANTS[key]!r}\n".encode())
    h.update(f"seed={seed}\n".encode())
    return h.hexdigest()


def parse_scenario(path, seed_override: Optional[int] = None) -> ScenarioConfig:
    """Read and validate a scenario file; all paths resolve against its folder."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc

    for section in ("plant", "shared", "deepc", "kmpc", "reference", "run"):
        if section not in cp:
            raise ScenarioError(f"{path}: missing [{section}] section")
    for section in ("deepc", "kmpc"):
        stray = _SHARED_KEYS & set(cp[section])
        if stray:
            raise ScenarioError(
                f"{path}: [{section}] must not redefine shared tuning key(s) "
                f"{sorted(stray)}; they live in [shared] only")

    def _req(section: str, key: str) -> str:
        if key not in cp[section]:
            raise ScenarioError(f"{path}: [{section}] is missing required key '{key}'")
        return cp[section][key]

    try:
        sec = cp["shared"]
        N = int(_req("shared", "n"))
        Ts = float(_req("shared", "ts"))
        q_diag = _floats(_req("shared", "q_diag"), what="[shared] q_diag")
        r_diag = _floats(_req("shared", "r_diag"), what="[shared] r_diag")
        n_y, n_u = q_diag.shape[0], r_diag.shape[0]
        u_lo = _floats(_req("shared", "u_lo"), n_u, "[shared] u_lo")
        u_hi = _floats(_req("shared", "u_hi"), n_u, "[shared] u_hi")
        y_lo = _floats(_req("shared", "y_lo"), n_y, "[shared] y_lo")
        y_hi = _floats(_req("shared", "y_hi"), n_y, "[shared] y_hi")

        sec = cp["deepc"]
        T_ini = int(_req("deepc", "t_ini"))
        lambda_g = float(_req("deepc", "lambda_g"))
        lambda_sigma: Optional[float] = sec.getfloat("lambda_sigma")
        if lambda_sigma == 0:
            lambda_sigma = None
        dataset_path = (path.parent / sec.get("dataset", "dataset.csv")).resolve()
        condensed = sec.getboolean("condensed", fallback=True)

        shared = DeepcConfig(
            T_ini=T_ini, N=N, Q=np.diag(q_diag), R=np.diag(r_diag),
            lambda_g=lambda_g, lambda_sigma=lambda_sigma,
            u_bounds=np.column_stack([u_lo, u_hi]),
            y_bounds=np.column_stack([y_lo, y_hi]))

        sec = cp["kmpc"]
        model_path = (path.parent / sec.get("model", "model.json")).resolve()
        n_z = int(_req("kmpc", "n_z"))
        kf = (sec.getfloat("q_z", fallback=0.1),
              sec.getfloat("q_d", fallback=1.0),
              sec.getfloat("r_y", fallback=0.5))

        sec = cp["plant"]
        plant_kind = sec.get("kind", "pasteurizer").strip()
        noise_std = sec.getfloat("noise_std", fallback=0.0)
        lti_matrices = None
        if plant_kind == "lti":
            lti_matrices = {"A": _matrix(sec.get("a"), "[plant] a"),
                            "B": _matrix(sec.get("b"), "[plant] b"),
                            "C": _matrix(sec.get("c"), "[plant] c")}
            if sec.get("d", None):
                lti_matrices["D"] = _matrix(sec.get("d"), "[plant] d")
            if sec.get("x0", None):
                lti_matrices["x0"] = _floats(sec.get("x0"), what="[plant] x0")
        elif plant_kind != "pasteurizer":
            raise ScenarioError(f"unknown plant kind '{plant_kind}'")
        dist_time = sec.getint("dist_time", fallback=None)
        dist_value = (_floats(sec.get("dist_value"), n_y, "[plant] dist_value")
                      if sec.get("dist_value", None) else None)
        if (dist_time is None) != (dist_value is None):
            raise ScenarioError("dist_time and dist_value must be set together")

        sec = cp["reference"]
        ref_channel = sec.getint("channel", fallback=1) - 1
        ref_levels = _floats(_req("reference", "levels"), what="[reference] levels")
        ref_times = _floats(_req("reference", "times"), what="[reference] times")
        if ref_levels.shape != ref_times.shape:
            raise ScenarioError("[reference] levels and times must pair up")
        if ref_times[0] != 0:
            raise ScenarioError("[reference] times must start at 0")
        if np.any(np.diff(ref_times) <= 0):
            raise ScenarioError("[reference] times must increase strictly")
        if not 0 <= ref_channel < n_y:
            raise ScenarioError(f"[reference] channel must lie in 1..{n_y}")

        sec = cp["run"]
        T_sim = int(_req("run", "t_sim"))
        seed = sec.getint("seed", fallback=0)
        if seed_override is not None:
            seed = seed_override
        initial_u = _floats(_req("run", "initial_u"), n_u, "[run] initial_u")
        excite_T = sec.getint("excite_t", fallback=4000)
        excite_hold = (sec.getint("excite_hold_min", fallback=20),
                       sec.getint("excite_hold_max", fallback=50))
        excite_seed = sec.getint("excite_seed", fallback=seed)
    except ScenarioError:
        raise
    except (ValueError, TypeError, configparser.Error) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc

    if T_sim < 1:
        raise ScenarioError("[run] t_sim must be >= 1")

    return ScenarioConfig(
        path=path, plant_kind=plant_kind, noise_std=noise_std,
        lti_matrices=lti_matrices, dist_time=dist_time, dist_value=dist_value,
        shared=shared, Ts=Ts, dataset_path=dataset_path, condensed=condensed,
        model_path=model_path, n_z=n_z, kf_weights=kf,
        ref_channel=ref_channel, ref_levels=ref_levels, ref_times=ref_times,
        T_sim=T_sim, seed=seed, initial_u=initial_u,
        excite_T=excite_T, excite_hold=excite_hold, excite_seed=excite_seed,
        hash=_scenario_hash(cp, seed))


def build_plant(cfg: ScenarioConfig, dist_offset: int = 0) -> PlantInterface:
    """Fresh plant instance per the [plant] section, seeded from the scenario.

    dist_offset shifts the disturbance schedule so its times count from the
    start of the logged loop even when warmup samples run first.
    """
    disturbance = None
    if cfg.dist_time is not None:
        t_on, value = cfg.dist_time + dist_offset, cfg.dist_value

        def disturbance(k, _t=t_on, _v=value):
            return _v if k >= _t else np.zeros_like(_v)

    if cfg.plant_kind == "pasteurizer":
        if disturbance is not None:
            raise ScenarioError("output disturbance schedule is lti-only")
        return PasteurizerSurrogate(Ts=cfg.Ts, noise_std=cfg.noise_std,
                                    seed=cfg.seed)
    m = cfg.lti_matrices
    plant = LtiPlant(m["A"], m["B"], m["C"], D=m.get("D"), x0=m.get("x0"),
                     disturbance=disturbance, noise_std=cfg.noise_std,
                     seed=cfg.seed)
    plant.Ts = cfg.Ts
    return plant


def build_reference(cfg: ScenarioConfig, length: int,
                    fill: np.ndarray) -> np.ndarray:
    """Piecewise-constant profile on the tracked channel; others hold `fill`."""
    r = np.tile(np.asarray(fill, dtype=float).reshape(1, -1), (length, 1))
    for t_sw, level in zip(cfg.ref_times.astype(int), cfg.ref_levels):
        if t_sw < length:
            r[t_sw:, cfg.ref_channel] = level
    return r


def _log_extras(cfg: ScenarioConfig, controller: str) -> Dict[str, str]:
    extras = {
        "ts": repr(cfg.Ts),
        "n": str(cfg.shared.N),
        "q_diag": ",".join(repr(float(v)) for v in np.diag(cfg.shared.Q)),
        "r_diag": ",".join(repr(float(v)) for v in np.diag(cfg.shared.R)),
        "u_lo": ",".join(repr(float(v)) for v in cfg.shared.u_bounds[:, 0]),
        "u_hi": ",".join(repr(float(v)) for v in cfg.shared.u_bounds[:, 1]),
        "y_lo": ",".join(repr(float(v)) for v in cfg.shared.y_bounds[:, 0]),
        "y_hi": ",".join(repr(float(v)) for v in cfg.shared.y_bounds[:, 1]),
        "ref_channel": str(cfg.ref_channel + 1),
        "ref_levels": ",".join(repr(float(v)) for v in cfg.ref_levels),
        "ref_times": ",".join(str(int(v)) for v in cfg.ref_times),
        "t_sim": str(cfg.T_sim),
        "rate_convention": "first-step input move counted as zero",
    }
    if controller == "deepc":
        extras["t_ini"] = str(cfg.shared.T_ini)
        extras["lambda_g"] = repr(cfg.shared.lambda_g)
        extras["lambda_sigma"] = repr(cfg.shared.lambda_sigma)
    else:
        extras["n_z"] = str(cfg.n_z)
    if cfg.plant_kind == "pasteurizer":
        for key in sorted(PASTEURIZER_CONSTANTS):
            extras[f"surrogate_{key}"] = repr(PASTEURIZER_CONSTANTS[key])
    return extras


def _build_controller(cfg: ScenarioConfig, name: str,
                      options: Optional[SolverOptions]):
    if name == "deepc":
        if not cfg.dataset_path.exists():
            raise ScenarioError(
                f"dataset not found: {cfg.dataset_path} (run gen-data first)")
        data = load_dataset(cfg.dataset_path)
        if data.n_u != cfg.n_u or data.n_y != cfg.n_y:
            raise ScenarioError(
                f"dataset has {data.n_u} inputs / {data.n_y} outputs; scenario "
                f"expects {cfg.n_u} / {cfg.n_y}")
        blocks = partition_blocks(data.u, data.y, cfg.shared.T_ini, cfg.shared.N)
        return DeepcController(blocks, cfg.shared, options=options,
                               condensed=cfg.condensed)
    if name == "kmpc":
        if not cfg.model_path.exists():
            raise ScenarioError(
                f"model not found: {cfg.model_path} (run identify first)")
        model = load_model(cfg.model_path)
        if model.n_u != cfg.n_u or model.n_y != cfg.n_y:
            raise ScenarioError("model dimensions do not match the scenario")
        q_z, q_d, r_y = cfg.kf_weights
        n_xi = model.n_z + model.n_y
        Q_KF = np.diag(np.concatenate([np.full(model.n_z, q_z),
                                       np.full(model.n_y, q_d)]))
        return KmpcController(model, cfg.shared, options=options,
                              Q_KF=Q_KF, R_KF=r_y * np.eye(model.n_y),
                              P0=np.eye(n_xi))
    raise ScenarioError(f"unknown controller '{name}'")


def run_closed_loop(cfg: ScenarioConfig, controller_name: str,
                    options: Optional[SolverOptions] = None,
                    record_timings: bool = False) -> RunLog:
    """Warm up the plant at the scenario's initial input, then run T_sim steps.

    The plant starts at the exact steady state of initial_u; a warmup of
    T_ini samples at that input fills the measurement window (and gives both
    controllers identical starting conditions, since the plant is seeded the
    same way regardless of controller).
    """
    T_ini = cfg.shared.T_ini
    plant = build_plant(cfg, dist_offset=T_ini)
    x_ss = steady_state_solve(plant, cfg.initial_u)
    plant.reset(x_ss)

    warm_u = np.tile(cfg.initial_u, (T_ini, 1))
    warm_y = np.empty((T_ini, cfg.n_y))
    for k in range(T_ini):
        warm_y[k] = plant.step(cfg.initial_u)

    if cfg.plant_kind == "pasteurizer":
        y_ss = x_ss
    else:
        y_ss = plant.C @ x_ss
    N = cfg.shared.N
    r_full = build_reference(cfg, cfg.T_sim + N, fill=y_ss)

    controller = _build_controller(cfg, controller_name, options)
    if controller_name == "deepc":
        controller.start(init_window(warm_u, warm_y, T_ini))
    else:
        controller.start(cfg.initial_u)

    log = RunLog.accumulate(controller=controller_name, plant=cfg.plant_kind,
                            config_hash=cfg.hash, seed=cfg.seed,
                            **_log_extras(cfg, controller_name))
    for t in range(cfg.T_sim):
        y = plant.measure()
        u = controller.step(y, r_full[t:t + N])
        plant.advance(u)
        rec = controller.last_record
        log.append(t * cfg.Ts, u, y, r_full[t],
                   rec.qp_status.value,
                   solve_time=rec.solve_time if record_timings else 0.0,
                   objective=rec.objective)
    return log.finish()


@dataclass
class ComparisonReport:
    """Everything compare prints: metrics, percentages, safety counters."""

    base_label: str
    other_label: str
    base: MetricsRecord
    other: MetricsRecord
    percent: Dict[str, Optional[float]]
    violations: Dict[str, int]
    solve_time_mean: Dict[str, float]
    solve_time_max: Dict[str, float]


def _violation_count(log: RunLog) -> int:
    lo = _floats(log.extra["u_lo"], log.n_u, "u_lo header")
    hi = _floats(log.extra["u_hi"], log.n_u, "u_hi header")
    bad = (log.u < lo) | (log.u > hi)
    return int(np.any(bad, axis=1).sum())


def compare_logs(log_a: RunLog, log_b: RunLog, base: str = "b") -> ComparisonReport:
    """Metrics for two runs of the same scenario, normalized to one of them."""
    if log_a.config_hash != log_b.config_hash:
        raise ScenarioError(
            "logs come from different scenarios (config hash mismatch); "
            "refusing to compare")
    if log_a.T_sim != log_b.T_sim:
        raise ScenarioError("logs differ in length")
    if log_a.n_u != log_b.n_u or log_a.n_y != log_b.n_y:
        raise ScenarioError("logs differ in channel counts")
    if not np.array_equal(log_a.r, log_b.r):
        raise ScenarioError("logs were run against different references")
    for key in ("q_diag", "r_diag"):
        if log_a.extra.get(key) != log_b.extra.get(key):
            raise ScenarioError(f"logs disagree on {key}")

    Q = np.diag(_floats(log_a.extra["q_diag"], log_a.n_y, "q_diag header"))
    R = np.diag(_floats(log_a.extra["r_diag"], log_a.n_u, "r_diag header"))
    tracked = int(log_a.extra.get("ref_channel", "1")) - 1
    energy_ch = log_a.n_u - 1
    rec_a = metrics_from_log(log_a, Q, R, tracked, energy_ch)
    rec_b = metrics_from_log(log_b, Q, R, tracked, energy_ch)

    if base not in ("a", "b"):
        raise ScenarioError("base must be 'a' or 'b'")
    base_log, base_rec = (log_a, rec_a) if base == "a" else (log_b, rec_b)
    other_log, other_rec = (log_b, rec_b) if base == "a" else (log_a, rec_a)

    def _label(log: RunLog) -> str:
        return log.controller

    return ComparisonReport(
        base_label=_label(base_log), other_label=_label(other_log),
        base=base_rec, other=other_rec,
        percent=normalize_comparison(base_rec, other_rec),
        violations={_label(log_a): _violation_count(log_a),
                    _label(log_b): _violation_count(log_b)},
        solve_time_mean={_label(log_a): float(log_a.solve_time.mean()),
                         _label(log_b): float(log_b.solve_time.mean())},
        solve_time_max={_label(log_a): float(log_a.solve_time.max()),
                        _label(log_b): float(log_b.solve_time.max())},
    )


def _print_report(report: ComparisonReport) -> None:
    print(comparison_table(report.base, report.other,
                           base_label=report.base_label,
                           other_label=report.other_label))
    print()
    for label, count in report.violations.items():
        print(f"input-bound violations [{label}]: {count}")
    timed = any(v > 0 for v in report.solve_time_max.values())
    if timed:
        for label in report.solve_time_mean:
            print(f"solve time [{label}]: mean {report.solve_time_mean[label]:.4f} s, "
                  f"max {report.solve_time_max[label]:.4f} s")
    else:
        print("solve times: not recorded (run with --timings to include them)")
    print("note: percentages use 100% = baseline; the input-rate sum counts "
          "the first step's move as zero in both runs")


def cmd_gen_data(cfg: ScenarioConfig, out: Path) -> int:
    plant = build_plant(cfg)
    x_ss = steady_state_solve(plant, cfg.initial_u)
    plant.reset(x_ss)
    spec = ExcitationSpec(
        n_u=cfg.n_u, T=cfg.excite_T, Ts=cfg.Ts,
        lo=cfg.shared.u_bounds[:, 0], hi=cfg.shared.u_bounds[:, 1],
        step_duration_range=cfg.excite_hold, seed=cfg.excite_seed)
    u = generate_step_excitation(spec)
    y = np.empty((cfg.excite_T, cfg.n_y))
    for t in range(cfg.excite_T):
        y[t] = plant.step(u[t])
    dataset = TrajectoryDataset(u=u, y=y, Ts=cfg.Ts)
    save_dataset(dataset, out)

    order = cfg.shared.T_ini
    rank, full = persistent_excitation_check(u, order)
    need = minimum_data_length(cfg.n_u, cfg.shared.T_ini, cfg.shared.N, order)
    print(f"wrote {cfg.excite_T} samples to {out}")
    print(f"excitation rank at order {order}: {rank} / {cfg.n_u * order}"
          f" ({'full' if full else 'DEFICIENT'})")
    print(f"minimum useful length for these horizons: {need}")
    if cfg.excite_T < need:
        print(f"warning: dataset is shorter than {need}; the predictor cannot "
              "span every trajectory", file=sys.stderr)
    return 0


def cmd_identify(cfg: ScenarioConfig, data_path: Path, out: Path) -> int:
    if not data_path.exists():
        raise ScenarioError(f"dataset not found: {data_path} (run gen-data first)")
    dataset = load_dataset(data_path)
    model = identify_edmd(dataset, cfg.n_z)
    save_model(model, out)
    print(f"identified lifted model: {model.n_z} states, "
          f"{model.n_u} inputs, {model.n_y} outputs")
    print(f"one-step training residual (relative): {model.residual:.3e}")
    print(f"wrote {out}")
    return 0


def cmd_run(cfg: ScenarioConfig, controllers: List[str], out: Path,
            parallel: bool, record_timings: bool) -> int:
    def _one(name: str) -> Tuple[str, RunLog, float]:
        t0 = time.perf_counter()
        log = run_closed_loop(cfg, name, record_timings=record_timings)
        return name, log, time.perf_counter() - t0

    if len(controllers) > 1 and parallel:
        with ThreadPoolExecutor(max_workers=len(controllers)) as pool:
            results = list(pool.map(_one, controllers))
    else:
        results = [_one(name) for name in controllers]

    worst = 0
    for name, log, elapsed in results:
        if len(controllers) == 1:
            log_path = out
        else:
            log_path = out.with_name(f"{out.stem}_{name}{out.suffix or '.csv'}")
        save_runlog(log, log_path)
        statuses = np.array(log.status)
        n_bad = int(np.sum(statuses != QpStatus.Optimal.value))
        violations = _violation_count(log)
        print(f"[{name}] {log.T_sim} steps in {elapsed:.1f} s -> {log_path}")
        print(f"[{name}] non-optimal steps: {n_bad} "
              f"({100.0 * n_bad / log.T_sim:.1f}%), "
              f"input-bound violations: {violations}")
        if violations > 0:
            worst = max(worst, 3)
        elif n_bad > DEGRADATION_FRACTION * log.T_sim:
            worst = max(worst, 4)
    return worst


def cmd_compare(path_a: Path, path_b: Path, base: str, out: Optional[Path]) -> int:
    log_a = load_runlog(path_a)
    log_b = load_runlog(path_b)
    report = compare_logs(log_a, log_b, base=base)
    _print_report(report)
    if out is not None:
        save_comparison_csv(report.base, report.other, out)
        print(f"wrote {out}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ddpc",
        description="data-driven predictive control scenarios: dataset "
                    "generation, model identification, closed-loop runs, and "
                    "controller comparison")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="excite the plant, write dataset CSV")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None,
                   help="defaults to the [deepc] dataset path")

    p = sub.add_parser("identify", help="fit the lifted model from a dataset")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", type=Path, default=None,
                   help="defaults to the [deepc] dataset path")
    p.add_argument("--out", type=Path, default=None,
                   help="defaults to the [kmpc] model path")

    p = sub.add_parser("run", help="closed-loop run, write RunLog CSV")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--controller", choices=["deepc", "kmpc", "both"],
                   required=True)
    p.add_argument("--out", required=True, type=Path,
                   help="log path; with 'both', a controller suffix is added")
    p.add_argument("--parallel", action="store_true",
                   help="run both controllers concurrently")
    p.add_argument("--timings", action="store_true",
                   help="record wall-clock solve times (breaks byte-level "
                        "reproducibility of the log)")

    p = sub.add_parser("compare", help="metrics of two logs, normalized")
    p.add_argument("log_a", type=Path)
    p.add_argument("log_b", type=Path)
    p.add_argument("--base", choices=["a", "b"], default="b",
                   help="which log is the 100%% baseline (default b)")
    p.add_argument("--out", type=Path, default=None, help="also write CSV")

    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            cfg = parse_scenario(args.config, args.seed)
            return cmd_gen_data(cfg, args.out or cfg.dataset_path)
        if args.command == "identify":
            cfg = parse_scenario(args.config, args.seed)
            return cmd_identify(cfg, args.data or cfg.dataset_path,
                                args.out or cfg.model_path)
        if args.command == "run":
            cfg = parse_scenario(args.config, args.seed)
            names = ["deepc", "kmpc"] if args.controller == "both" \
                else [args.controller]
            return cmd_run(cfg, names, args.out, args.parallel, args.timings)
        if args.command == "compare":
            return cmd_compare(args.log_a, args.log_b, args.base, args.out)
        raise ScenarioError(f"unknown command {args.command}")
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
