"""Scenario configs, seeded sweeps and CSV/Markdown reports.

Config files are JSON with angles in degrees, powers in dBm, rate floors in
bps/Hz and lengths in metres. They are converted to SI/linear units on load
and written back so that a write-then-load cycle gives an identical Scenario.
"""

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .ao import BaselineKind, run_ao
from .channels import PathLossModel, Scenario, dbm_to_watt, rate_to_sinr, watt_to_dbm

WORKERS_ENV = "FSTAR_WORKERS"

_ANGLES = ("phi_t", "phi_r", "psi_r", "phi_R", "psi_R", "phi_T", "psi_T", "phi_b")
_REQUIRED = ("M", "K", "Q", "L", "wavelength_m", "kappa", "aperture_side_m", "min_spacing_m",
             "p_max_dbm", "qos_rate_bps_hz", "noise_dbm_r", "noise_dbm_t", "angles_deg", "distances_m")
_DISTANCES = ("bs_surface", "surface_R", "surface_T", "bs_R")


class ConfigError(ValueError):
    pass


def _line_of(text, key):
    """1-based line of the first occurrence of "key" in the JSON text, or None."""
    if text is None:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _err(msg, text=None, key=None):
    line = _line_of(text, key) if key else None
    return ConfigError(f"line {line}: {msg}" if line else msg)


def _inverse(value, forward, backward):
    """Shortest decimal x with forward(x) == value exactly, else a nearby float that maps back."""
    x = float(backward(value))
    for digits in range(1, 18):
        cand = float(f"{x:.{digits}g}")
        if float(forward(cand)) == value:
            return cand
    for k in range(1, 64):
        for cand in (x + k * math.ulp(x), x - k * math.ulp(x)):
            if float(forward(cand)) == value:
                return cand
    return x


def _to_deg(rad):
    return _inverse(float(rad), math.radians, math.degrees)


def _to_dbm(w):
    return _inverse(float(w), lambda d: float(dbm_to_watt(d)), lambda v: float(watt_to_dbm(v)))


def _to_rate(sinr):
    return _inverse(float(sinr), rate_to_sinr, lambda g: math.log2(1 + g))


def scenario_from_dict(d, text=None) -> Scenario:
    for key in _REQUIRED:
        if key not in d:
            raise _err(f"missing required field '{key}'")
    ang, dist = d["angles_deg"], d["distances_m"]
    for key in _ANGLES:
        if key not in ang:
            raise _err(f"missing required field 'angles_deg.{key}'", text, "angles_deg")
    for key in _DISTANCES:
        if key not in dist:
            raise _err(f"missing required field 'distances_m.{key}'", text, "distances_m")
    pl = d.get("pathloss", {})
    try:
        pathloss = PathLossModel(**pl)
    except TypeError as e:
        raise _err(f"bad pathloss block: {e}", text, "pathloss") from None
    rad = lambda v: np.array([math.radians(x) for x in np.atleast_1d(v)], dtype=float)
    try:
        return Scenario(
            M=int(d["M"]), K=int(d["K"]), Q=int(d["Q"]), L=int(d["L"]),
            wavelength=float(d["wavelength_m"]), kappa=float(d["kappa"]),
            aperture_side=float(d["aperture_side_m"]), min_spacing=float(d["min_spacing_m"]),
            p_max=float(dbm_to_watt(d["p_max_dbm"])),
            gamma_min=float(rate_to_sinr(d["qos_rate_bps_hz"])),
            noise_r=dbm_to_watt(np.asarray(d["noise_dbm_r"], dtype=float)).reshape(-1),
            noise_t=dbm_to_watt(np.asarray(d["noise_dbm_t"], dtype=float)).reshape(-1),
            phi_t=math.radians(ang["phi_t"]), phi_r=math.radians(ang["phi_r"]),
            psi_r=math.radians(ang["psi_r"]),
            phi_R=rad(ang["phi_R"]), psi_R=rad(ang["psi_R"]),
            phi_T=rad(ang["phi_T"]), psi_T=rad(ang["psi_T"]), phi_b=rad(ang["phi_b"]),
            d_bs_surface=float(dist["bs_surface"]), d_R=np.asarray(dist["surface_R"], dtype=float),
            d_T=np.asarray(dist["surface_T"], dtype=float), d_b=np.asarray(dist["bs_R"], dtype=float),
            seed=int(d.get("seed", 0)), pathloss=pathloss,
            weights_r=d.get("weights_r"), weights_t=d.get("weights_t"))
    except (TypeError, ValueError) as e:
        msg = str(e)
        key = next((k for k in list(d) + list(ang) + list(dist) if k.split("_")[0] in msg), None)
        raise _err(f"invalid scenario: {msg}", text, key) from None


def scenario_to_dict(s: Scenario) -> dict:
    lst = lambda a, f: [f(x) for x in np.atleast_1d(a)]
    d = {
        "M": s.M, "K": s.K, "Q": s.Q, "L": s.L,
        "wavelength_m": s.wavelength, "kappa": s.kappa,
        "aperture_side_m": s.aperture_side, "min_spacing_m": s.min_spacing,
        "p_max_dbm": _to_dbm(s.p_max), "qos_rate_bps_hz": _to_rate(s.gamma_min),
        "noise_dbm_r": lst(s.noise_r, _to_dbm), "noise_dbm_t": lst(s.noise_t, _to_dbm),
        "angles_deg": {
            "phi_t": _to_deg(s.phi_t), "phi_r": _to_deg(s.phi_r), "psi_r": _to_deg(s.psi_r),
            "phi_R": lst(s.phi_R, _to_deg), "psi_R": lst(s.psi_R, _to_deg),
            "phi_T": lst(s.phi_T, _to_deg), "psi_T": lst(s.psi_T, _to_deg),
            "phi_b": lst(s.phi_b, _to_deg)},
        "distances_m": {
            "bs_surface": s.d_bs_surface, "surface_R": lst(s.d_R, float),
            "surface_T": lst(s.d_T, float), "bs_R": lst(s.d_b, float)},
        "seed": s.seed,
        "pathloss": asdict(s.pathloss),
    }
    if not np.all(s.weights_r == 1) or not np.all(s.weights_t == 1):
        d["weights_r"] = lst(s.weights_r, float)
        d["weights_t"] = lst(s.weights_t, float)
    return d


def loads_scenario(text) -> Scenario:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError("line 1: top level must be an object")
    return scenario_from_dict(d, text)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    try:
        return loads_scenario(text)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def write_scenario(s: Scenario, path):
    with open(path, "w") as fh:
        fh.write(dumps_scenario(s))


def default_scenario() -> Scenario:
    text = resources.files("fstar_noma").joinpath("data/default_scenario.json").read_text()
    return loads_scenario(text)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_PARAMS = ("L", "p_max_dBm", "aperture_side", "qos_rate", "M")


@dataclass
class SweepSpec:
    param: str
    values: list
    schemes: list = field(default_factory=lambda: [k.value for k in BaselineKind])
    seeds: list = field(default_factory=lambda: list(range(10)))
    out: str = "results"
    max_outer: int = 50

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter '{self.param}', expected one of {SWEEP_PARAMS}")
        if not self.values or not self.schemes or not self.seeds:
            raise ConfigError("values, schemes and seeds must be non-empty")
        self.schemes = [BaselineKind(s).value for s in self.schemes]


def load_sweep_spec(path) -> SweepSpec:
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    for key in ("param", "values"):
        if key not in d:
            raise ConfigError(f"{path}: missing required field '{key}'")
    try:
        return SweepSpec(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def apply_param(base: Scenario, param, value) -> Scenario:
    if param == "L":
        return base.with_updates(L=int(value))
    if param == "M":
        return base.with_updates(M=int(value))
    if param == "p_max_dBm":
        return base.with_updates(p_max=float(dbm_to_watt(value)))
    if param == "aperture_side":
        return base.with_updates(aperture_side=float(value))
    if param == "qos_rate":
        return base.with_updates(gamma_min=float(rate_to_sinr(value)))
    raise ConfigError(f"unknown sweep parameter '{param}'")


ROW_FIELDS = ("param", "value", "scheme", "seed", "rate", "iterations", "converged", "status", "wall_time")


def run_cell(base: Scenario, param, value, scheme, seed, max_outer=50) -> dict:
    t0 = time.perf_counter()
    row = dict(param=param, value=value, scheme=scheme, seed=seed)
    try:
        scen = apply_param(base, param, value).with_updates(seed=int(seed))
        st = run_ao(scen, scheme, max_outer=max_outer)
        if st.failed_stage:
            row.update(rate=float("nan"), iterations=st.iterations, converged=False, status="infeasible")
        else:
            row.update(rate=st.objective, iterations=st.iterations, converged=st.converged, status="ok")
    except Exception as e:   # recorded per cell, the sweep continues
        row.update(rate=float("nan"), iterations=0, converged=False, status=f"error: {e}")
    row["wall_time"] = time.perf_counter() - t0
    return row


def _cell(args):
    return run_cell(*args)


def workers_from_env(default=1):
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, default)))
    except ValueError:
        return default


def run_sweep(spec: SweepSpec, base: Scenario, workers=None) -> list:
    """One AO run per (value, scheme, seed); rows sorted by that key whatever the completion order."""
    workers = workers_from_env() if workers is None else workers
    jobs = [(base, spec.param, v, s, seed, spec.max_outer)
            for v in spec.values for s in spec.schemes for seed in spec.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_cell, jobs))
    else:
        rows = [_cell(j) for j in jobs]
    order = {(v, s, seed): i for i, (_, _, v, s, seed, _) in enumerate(jobs)}
    return sorted(rows, key=lambda r: order[(r["value"], r["scheme"], r["seed"])])


def aggregate(rows) -> list:
    """Mean / std / count of the rate per (value, scheme), skipping failed cells."""
    cells = {}
    for r in rows:
        cells.setdefault((r["value"], r["scheme"]), []).append(r["rate"])
    out = []
    for (v, s), rates in cells.items():
        ok = np.array([x for x in rates if np.isfinite(x)])
        out.append(dict(value=v, scheme=s, mean=float(ok.mean()) if ok.size else float("nan"),
                        std=float(ok.std()) if ok.size else float("nan"), n=int(ok.size),
                        failed=len(rates) - int(ok.size)))
    return out


_ORDER = [BaselineKind.F_STAR.value, BaselineKind.D_F_STAR.value, BaselineKind.T_STAR.value, BaselineKind.OMA.value]


def verdicts(agg, param) -> list:
    """Trend checks as (name, passed, detail) tuples."""
    means = {(a["value"], a["scheme"]): a["mean"] for a in agg}
    values = sorted({a["value"] for a in agg})
    schemes = [s for s in _ORDER if any(a["scheme"] == s for a in agg)]
    out = []
    for v in values:
        seq = [(s, means.get((v, s))) for s in schemes]
        ok = all(a[1] >= b[1] for a, b in zip(seq, seq[1:]))
        out.append((f"ordering at {param}={v}", ok, " >= ".join(f"{s} {m:.4f}" for s, m in seq)))
    if param in ("L", "p_max_dBm", "M") and len(values) > 1:
        for s in schemes:
            seq = [means[(v, s)] for v in values]
            ok = all(b >= a for a, b in zip(seq, seq[1:]))
            out.append((f"{s} non-decreasing in {param}", ok, ", ".join(f"{x:.4f}" for x in seq)))
    if param == "p_max_dBm" and 15 in values and (15, "F_STAR") in means and (15, "T_STAR") in means:
        r = means[(15, "F_STAR")] / means[(15, "T_STAR")]
        out.append(("F_STAR / T_STAR at 15 dBm >= 1.05", r >= 1.05, f"ratio {r:.4f}"))
    return out


def rows_to_csv(rows, timing=True) -> str:
    fields = ROW_FIELDS if timing else ROW_FIELDS[:-1]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in fields})
    return buf.getvalue()


def write_report(rows, out_dir, param=None):
    """results.csv (one row per run) and summary.md (means and trend verdicts)."""
    os.makedirs(out_dir, exist_ok=True)
    param = param or (rows[0]["param"] if rows else "")
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write(rows_to_csv(rows))
    agg = aggregate(rows)
    lines = [f"# Sweep over {param}", "", "| value | scheme | mean rate | std | runs | failed |",
             "|---|---|---|---|---|---|"]
    for a in sorted(agg, key=lambda a: (a["value"], _ORDER.index(a["scheme"]) if a["scheme"] in _ORDER else 9)):
        lines.append(f"| {a['value']} | {a['scheme']} | {a['mean']:.4f} | {a['std']:.4f} | {a['n']} | {a['failed']} |")
    lines += ["", "## Trend verdicts", ""]
    for name, ok, detail in verdicts(agg, param):
        lines.append(f"- {'PASS' if ok else 'FAIL'} {name}: {detail}")
    with open(os.path.join(out_dir, "summary.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return agg
