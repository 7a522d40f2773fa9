"""Time-stepped analytical model, windowed simulator statistics, validation and I/O."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import connectivity, kinematics, metrics, psffa
from .config import ScenarioConfig
from .edca import ServiceState, solve_fixed_point, transmission_time

PER_AC = ("ts", "std", "L", "dL", "rho", "sigma", "ps", "pd", "pdr")
COLUMNS = ("t", "n_tr") + tuple(f"{name}{q}" for q in (0, 1) for name in PER_AC)


class PipelineError(RuntimeError):
    """A module failure, tagged with the step time and vehicle concerned."""

    def __init__(self, message: str, t: float, vehicle: tuple[int, int] | None = None):
        where = f"t={t:.2f}s" + (f", vehicle {vehicle}" if vehicle else "")
        super().__init__(f"{where}: {message}")
        self.t = t
        self.vehicle = vehicle


@dataclass
class TimeSeries:
    """One row per time step; columns as in :data:`COLUMNS`."""

    data: dict[str, np.ndarray]
    mode: str = "analytical"
    seed: int | None = None
    velocities: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        missing = [c for c in COLUMNS if c not in self.data]
        if missing:
            raise ValueError(f"missing columns {missing}")
        lengths = {len(self.data[c]) for c in COLUMNS}
        if len(lengths) > 1:
            raise ValueError("columns differ in length")

    def __len__(self) -> int:
        return len(self.data["t"])

    def __getitem__(self, column: str) -> np.ndarray:
        return self.data[column]

    @classmethod
    def empty(cls, mode: str = "analytical", seed: int | None = None) -> TimeSeries:
        return cls({c: np.zeros(0) for c in COLUMNS}, mode, seed)

    @property
    def filename(self) -> str:
        return f"{self.mode}.csv" if self.seed is None else f"{self.mode}_seed{self.seed}.csv"


def _vehicle_label(config: ScenarioConfig, k: int) -> tuple[int, int]:
    m = config.platoon_size
    return (k // m + 1, k % m + 1)


class _ServiceCache:
    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        self.store: dict[tuple[int, float, float], ServiceState] = {}

    def get(self, n_tr: int, lam0: float, lam1: float) -> ServiceState:
        key = (int(n_tr), lam0, lam1)
        s = self.store.get(key)
        if s is None:
            c = self.cfg
            s = solve_fixed_point(int(n_tr), lam0, lam1, c.edca, c.frame,
                                  c.fp_tolerance, c.fp_max_iter)
            self.store[key] = s
        return s


def run_analysis(config: ScenarioConfig) -> TimeSeries:
    """Evolve motion, connectivity, access statistics, queues and metrics step by step."""
    n_steps = config.n_steps
    dt = config.dt
    tgt = config.target_index
    label = config.target
    t_tr = transmission_time(config.frame)
    t_slot = config.edca.slot_time
    services = _ServiceCache(config)
    klb = psffa.KlbFitCache(config.klb_degree, config.klb_rho_max)
    out = {c: np.empty(n_steps + 1) for c in COLUMNS}
    velocities = np.empty((n_steps + 1, config.n_vehicles))

    state = kinematics.initial_state(config)
    L = [0.0, 0.0]
    ldot = [0.0, 0.0]
    pd = [0.0, 0.0]

    for k in range(n_steps + 1):
        t = config.t_start + k * dt
        if k > 0:
            try:
                state = kinematics.step_scenario(state, config)
            except kinematics.KinematicsError as exc:
                vs = getattr(exc, "vehicles", [None])
                who = _vehicle_label(config, vs[0]) if vs and vs[0] is not None else None
                raise PipelineError(str(exc), t, who) from exc
        velocities[k] = state.v
        h = connectivity.build_matrix(state.x, state.y, config.transmission_range)
        counts = connectivity.in_range_counts(h)
        lam = (config.lambda0.at(t), config.lambda1.at(t))
        sig0 = np.empty(config.n_vehicles)
        sig1 = np.empty(config.n_vehicles)
        mine = None
        for n_tr in np.unique(counts):
            try:
                s = services.get(int(n_tr), *lam)
            except ArithmeticError as exc:
                who = _vehicle_label(config, int(np.flatnonzero(counts == n_tr)[0]))
                raise PipelineError(str(exc), t, who) from exc
            sel = counts == n_tr
            sig0[sel], sig1[sel] = s.sigma
            if n_tr == counts[tgt]:
                mine = s

        c2 = mine.c2
        inverters = (partial(psffa.pk_invert, c2=c2[0]), klb.get(c2[1]))
        row_rho = [0.0, 0.0]
        for q in (0, 1):
            mu = mine.mu[q]
            try:
                if k == 0:
                    if config.initial_queue == "steady":
                        L[q] = psffa.steady_state_length(lam[q], mu, c2[q], q, inverters[q])
                    ldot[q] = psffa.psffa_rate(L[q], lam[q], mu, inverters[q])
                    pd[q] = metrics.initial_delay(L[q], lam[q]) if lam[q] > 0 else 0.0
                else:
                    prev = L[q]
                    L[q], ldot[q] = psffa.psffa_step(L[q], lam[q], mu, inverters[q], dt)
                    pd[q] = (metrics.delay_update(pd[q], L[q] - prev, lam[q])
                             if lam[q] > 0 else 0.0)
            except ArithmeticError as exc:
                raise PipelineError(str(exc), t, label) from exc
            row_rho[q] = inverters[q](L[q])

        out["t"][k] = t
        out["n_tr"][k] = counts[tgt]
        for q in (0, 1):
            served = mine.mu[q] * row_rho[q]
            try:
                p = (metrics.pdr(h, sig0, sig1, served, lam[q], tgt, t_tr, t_slot)
                     if lam[q] > 0 else math.nan)
            except metrics.MetricsError:
                p = math.nan  # isolated target: nobody to deliver to
            for name, value in (("ts", mine.ts[q]), ("std", math.sqrt(mine.ds[q])),
                                ("L", L[q]), ("dL", ldot[q]), ("rho", row_rho[q]),
                                ("sigma", mine.sigma[q]), ("ps", mine.ps[q]),
                                ("pd", pd[q]), ("pdr", p)):
                out[f"{name}{q}"][k] = value
    return TimeSeries(out, "analytical", None, velocities)


# ---------------------------------------------------------------------------
# simulator statistics


def _window_sum(per_step: np.ndarray, half: int) -> np.ndarray:
    """Sum over the centred window ``[k - half, k + half]``, clipped at the ends."""
    n = per_step.shape[0]
    c = np.concatenate([np.zeros((1,) + per_step.shape[1:]), np.cumsum(per_step, axis=0)])
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return c[hi] - c[lo]


def window_half_width(config: ScenarioConfig, window: float | None = None) -> int:
    w = config.sim_window if window is None else window
    if w <= 0:
        raise ValueError("window must be > 0")
    return max(0, int(round(w / config.dt / 2)))


def windowed_series(records, config: ScenarioConfig, window: float | None = None) -> TimeSeries:
    """Pool one or more simulation records into centred-window statistics."""
    records = list(records)
    first = records[0]
    n = len(first.t)
    half = window_half_width(config, window)
    width = np.minimum(np.arange(n) + half + 1, n) - np.maximum(np.arange(n) - half, 0)
    span = width * config.dt
    out = {"t": first.t.copy(), "n_tr": first.n_tr.astype(float)}
    slot = config.edca.slot_time
    for q in (0, 1):
        acc = np.zeros((n, 8))
        for rec in records:
            p = rec.packets[q]
            st = p["step"]
            deliv = p["delivered"]
            service = p["done"] - p["hol"]
            sojourn = p["done"] - p["arrival"]
            np.add.at(acc[:, 0], st[deliv], 1.0)
            np.add.at(acc[:, 1], st[deliv], sojourn[deliv])
            np.add.at(acc[:, 2], st[deliv], service[deliv])
            np.add.at(acc[:, 3], st[deliv], service[deliv] ** 2)
            np.add.at(acc[:, 4], st, p["n_recv"].astype(float))
            np.add.at(acc[:, 5], st, p["n_ok"].astype(float))
            acc[:, 6] += rec.senses[:, q, 0]
            acc[:, 7] += rec.senses[:, q, 1]
        arrivals = sum(rec.arrivals[:, q] for rec in records).astype(float)
        tx = sum(rec.tx_count[:, q] for rec in records).astype(float)
        w = _window_sum(acc, half)
        wa = _window_sum(arrivals, half)
        wt = _window_sum(tx, half)
        n_runs = len(records)
        with np.errstate(invalid="ignore", divide="ignore"):
            cnt = w[:, 0]
            ts = w[:, 2] / cnt
            var = np.maximum(w[:, 3] / cnt - ts ** 2, 0.0)
            pd = w[:, 1] / cnt
            # Little's law estimates
            lam_hat = wa / (span * n_runs)
            L = lam_hat * pd
            rho = np.minimum(cnt * ts / (span * n_runs), 1.0)
            out[f"ts{q}"] = ts
            out[f"std{q}"] = np.sqrt(var)
            out[f"L{q}"] = L
            out[f"dL{q}"] = np.gradient(L, config.dt) if n > 1 else np.zeros(n)
            out[f"rho{q}"] = rho
            out[f"sigma{q}"] = np.minimum(wt * slot / (span * n_runs), 1.0)
            out[f"ps{q}"] = w[:, 7] / w[:, 6]
            out[f"pd{q}"] = pd
            out[f"pdr{q}"] = w[:, 5] / w[:, 4]
    seed = first.seed if len(records) == 1 else None
    return TimeSeries(out, "sim", seed, first.velocities)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    """Largest relative deviation (%) between the pooled simulation and the model."""

    deviation: dict[str, float]
    seeds: tuple[int, ...]
    window: float
    analysis: TimeSeries = field(repr=False)
    simulation: TimeSeries = field(repr=False)

    def table(self) -> str:
        lines = ["metric   AC0 max dev (%)   AC1 max dev (%)"]
        for m in ("pd", "pdr"):
            lines.append(f"{m.upper():<8} {self.deviation[m + '0']:>15.3f}   "
                         f"{self.deviation[m + '1']:>15.3f}")
        return "\n".join(lines)


def max_deviation(sim: np.ndarray, ana: np.ndarray, valid: np.ndarray | None = None) -> float:
    """``max |sim - ana| / |ana| * 100`` over finite entries (and ``valid``)."""
    mask = np.isfinite(sim) & np.isfinite(ana) & (ana != 0)
    if valid is not None:
        mask &= valid
    if not mask.any():
        return math.nan
    return float(np.max(np.abs(sim[mask] - ana[mask]) / np.abs(ana[mask])) * 100.0)


def _simulate_one(config: ScenarioConfig, duration: float | None, seed: int):
    from .sim import simulate_raw

    return simulate_raw(config, seed, duration)


def run_validation(config: ScenarioConfig, seeds, window: float | None = None,
                   duration: float | None = None, workers: int | None = None,
                   analysis: TimeSeries | None = None) -> ValidationReport:
    """Compare pooled multi-seed simulation windows with equally windowed model output.

    Only steps whose window lies entirely inside the run are compared.
    """
    seeds = tuple(sorted(int(s) for s in seeds))
    if not seeds:
        raise ValueError("need at least one seed")
    if duration is not None:
        config = _with_horizon(config, duration)
    if analysis is None:
        analysis = run_analysis(config)
    job = partial(_simulate_one, config, None)
    if workers == 1 or len(seeds) == 1:
        records = [job(s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, seeds))
    sim = windowed_series(records, config, window)
    half = window_half_width(config, window)
    n = len(analysis)
    idx = np.arange(n)
    inside = (idx >= half) & (idx <= n - 1 - half)
    dev = {}
    for q in (0, 1):
        for m in ("pd", "pdr"):
            col = f"{m}{q}"
            ana = analysis[col].astype(float)
            ok = np.isfinite(ana)
            smooth = _window_sum(np.where(ok, ana, 0.0), half) / _window_sum(ok.astype(float), half)
            dev[col] = max_deviation(sim[col], smooth, inside)
    w = config.sim_window if window is None else window
    return ValidationReport(dev, seeds, w, analysis, sim)


def _with_horizon(config: ScenarioConfig, duration: float) -> ScenarioConfig:
    from dataclasses import replace

    if duration <= 0:
        raise ValueError("duration must be > 0")
    return replace(config, t_end=config.t_start + duration)


# ---------------------------------------------------------------------------
# output


def write_csv(series: TimeSeries, path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for k in range(len(series)):
                w.writerow([repr(float(series.data[c][k])) for c in COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path: str | Path, mode: str = "analytical", seed: int | None = None) -> TimeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = tuple(rows[0])
    if header != COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    body = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(COLUMNS))
    return TimeSeries({c: body[:, i].copy() for i, c in enumerate(COLUMNS)}, mode, seed)


def _write_table(path: Path, header, columns) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) for x in row])
    return path


def emit_outputs(series: TimeSeries, out_dir: str | Path,
                 config: ScenarioConfig | None = None) -> list[Path]:
    """Write the full CSV plus one small table per figure-style view."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    prefix = series.filename[:-4]
    paths = [write_csv(series, out / series.filename)]
    t = series["t"]
    try:
        if series.velocities is not None and len(series.velocities) == len(t):
            n = series.velocities.shape[1]
            m = config.platoon_size if config is not None else n
            names = [f"v_{k // m + 1}_{k % m + 1}" for k in range(n)]
            paths.append(_write_table(out / f"{prefix}_fig10_velocity.csv", ["t", *names],
                                      [t, *series.velocities.T]))
        paths.append(_write_table(out / f"{prefix}_fig11_ntr.csv", ["t", "n_tr"],
                                  [t, series["n_tr"]]))
        paths.append(_write_table(out / f"{prefix}_fig12_service.csv",
                                  ["t", "ts0", "std0", "ts1", "std1"],
                                  [t, series["ts0"], series["std0"], series["ts1"], series["std1"]]))
        paths.append(_write_table(out / f"{prefix}_fig14_pd.csv", ["t", "pd0", "pd1"],
                                  [t, series["pd0"], series["pd1"]]))
        paths.append(_write_table(out / f"{prefix}_fig15_pdr.csv", ["t", "pdr0", "pdr1"],
                                  [t, series["pdr0"], series["pdr1"]]))
    except OSError as exc:
        raise OSError(f"cannot write outputs in {out}: {exc}") from exc
    return paths


def write_report(report: ValidationReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "validation.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "ac", "max_deviation_pct", "seeds", "window_s"])
        for m in ("pd", "pdr"):
            for q in (0, 1):
                w.writerow([m, q, repr(report.deviation[f"{m}{q}"]),
                            " ".join(map(str, report.seeds)), repr(report.window)])
    return path
