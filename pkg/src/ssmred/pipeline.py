"""Config-driven orchestration: data, embedding, chart, normal form, analytics."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .forced import FrcPoint, backbone, calibrate_forcing, frc_sweep
from .geometry import SingularFitError, fit_ssm, lift, project
from .normalform import (ConvergenceError, DefectiveJacobianError, ReducedModel,
                         UnsupportedStructureError, conjugacy_error, estimate_linear_part,
                         estimate_linear_part_map, fit_normal_form, fit_normal_form_map,
                         resonance_structure, simulate_reduced, to_polar)
from .oracle import (ModalSystem, ResonanceError, lift_and_sample, oracle_polar,
                     solve_autonomous_ssm)
from .systems import (DivergenceError, duffing, duffing_double_well, modal_field,
                      pair_block_transform, polynomial_observable, slow_fast_poly,
                      stuart_landau, integrate_rk4)
from .trajectory import (TimeSeries, delay_embed, finite_diff_derivative, load_csv,
                         min_embedding_dimension, nmte, save_csv)

log = logging.getLogger(__name__)

EXIT_CODES = {"io": 1, "fit": 2, "normalform": 3, "analytics": 4}

DEFAULTS = {
    "seed": 0,
    "input": {},
    "embedding": {"p": 5, "shift": 1, "auto": False},
    "geometry": {"d": 2, "M": 3, "mode": "default", "ridge": 0.0, "refine": False},
    "normalform": {"N": 3, "delta": 1e-8, "mode": "derivative", "regression_order": None,
                   "amplitude_cutoff": None, "readout_channel": 0, "max_iter": 500},
    "forcing": None,
    "orderscan": {"orders": [3, 5, 7]},
    "compare": {"tolerance": 0.02, "oracle_order": 7},
    "outputs": {"directory": "out"},
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = EXIT_CODES[stage]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path) -> dict:
    try:
        raw = serialize.read_json(path)
    except (OSError, ValueError) as exc:
        raise StageError("io", f"cannot read config {path}: {exc}") from exc
    return resolve_config(raw, base_dir=Path(path).parent)


def resolve_config(raw: dict, base_dir=None) -> dict:
    cfg = _merge(DEFAULTS, raw)
    cfg["_base_dir"] = str(base_dir) if base_dir is not None else "."
    geo, nf, emb = cfg["geometry"], cfg["normalform"], cfg["embedding"]
    if not 1 <= int(geo["d"]) <= 8:
        raise StageError("fit", "geometry.d must lie in [1, 8]")
    if not 2 <= int(geo["M"]) <= 9:
        raise StageError("fit", "geometry.M must lie in [2, 9]")
    if not 2 <= int(nf["N"]) <= 11:
        raise StageError("normalform", "normalform.N must lie in [2, 11]")
    if emb["auto"]:
        emb["p"] = min_embedding_dimension(int(geo["d"]))
    if int(emb["p"]) < 1 or int(emb["shift"]) < 1:
        raise StageError("fit", "embedding.p and embedding.shift must be positive")
    if nf["mode"] not in ("derivative", "map"):
        raise StageError("normalform", f"unknown normal-form mode {nf['mode']!r}")
    return cfg


# -------------------------------------------------------------- systems


def build_system(spec: dict):
    """Vector field and (when available) its modal description from a config block."""
    name = spec.get("system")
    params = dict(spec.get("params", {}))
    modal = None
    if name == "stuart_landau":
        field_ = stuart_landau(**params)
    elif name == "duffing":
        field_ = duffing(**params)
    elif name == "duffing_double_well":
        field_ = duffing_double_well(**params)
    elif name == "slow_fast_poly":
        for key in ("slow",):
            if key in params:
                params[key] = complex(*params[key])
        if "fast" in params:
            params["fast"] = tuple(complex(*v) for v in params["fast"])
        modal = slow_fast_poly(**params)
        field_ = modal_field(modal)
    elif name == "modal_linear":
        lam = [complex(*v) for v in params["eigenvalues"]]
        full = [v for lp in lam for v in (lp, np.conj(lp))]
        modal = ModalSystem(np.array(full), {}, pair_block_transform(len(lam)))
        field_ = modal_field(modal)
    else:
        raise StageError("io", f"unknown system {name!r}")
    return field_, modal


def build_observable(spec, n: int):
    if spec is None:
        return lambda x: np.asarray(x)
    order = int(spec.get("order", 3))
    channels = []
    for ch in spec["channels"]:
        channels.append({tuple(int(v) for v in expo): float(c) for expo, c in ch})
    return polynomial_observable(n, order, channels)


def _initial_states(spec: dict, field_, modal, oracle_cache: dict):
    if "initial_normal" in spec:
        if modal is None:
            raise StageError("io", "initial_normal needs a modal system")
        if "model" not in oracle_cache:
            try:
                oracle_cache["model"] = solve_autonomous_ssm(modal, 1, 7)
            except ResonanceError as exc:
                raise StageError("normalform", f"oracle: {exc}") from exc
        out = []
        for rho, phase in spec["initial_normal"]:
            z = rho * np.exp(1j * phase)
            out.append(lift_and_sample(oracle_cache["model"], modal,
                                       np.array([[z], [np.conj(z)]]))[:, 0])
        return out
    return [np.asarray(x0, dtype=float) for x0 in spec["initial_conditions"]]


def generate_data(spec: dict, seed: int):
    """Simulate trajectories for a synthetic config block.

    Returns the observed series, their roles and the modal system (if any).
    """
    field_, modal = build_system(spec)
    observe = build_observable(spec.get("observable"), field_.dim)
    dt = float(spec.get("dt", 0.01))
    duration = float(spec.get("duration", 50.0))
    starts = _initial_states(spec, field_, modal, {})
    roles = list(spec.get("roles", ["train"] * len(starts)))
    if len(roles) != len(starts):
        raise StageError("io", "one role per initial condition is required")
    noise = spec.get("noise") or {}
    level = float(noise.get("level", 0.0))
    noisy_roles = set(noise.get("roles", ["train"]))
    rng = np.random.default_rng(seed)
    series = []
    for x0, role in zip(starts, roles):
        try:
            states = integrate_rk4(field_, x0, (0.0, duration), dt)
        except DivergenceError as exc:
            raise StageError("io", f"simulation diverged: {exc}") from exc
        values = np.atleast_2d(observe(states.values))
        if level > 0 and role in noisy_roles:
            scale = level * np.max(np.abs(values), axis=1, keepdims=True)
            values = values + scale * rng.standard_normal(values.shape)
        series.append(TimeSeries(0.0, dt, values))
    return series, roles, modal


def load_data(cfg: dict):
    inp = cfg["input"]
    if "synth" in inp:
        return generate_data(inp["synth"], int(cfg["seed"]))
    if "csv" in inp:
        base = Path(cfg.get("_base_dir", "."))
        series = []
        for name in inp["csv"]:
            path = Path(name)
            if not path.is_absolute():
                path = base / path
            try:
                series.append(load_csv(path))
            except (OSError, ValueError) as exc:
                raise StageError("io", str(exc)) from exc
        roles = list(inp.get("roles", ["train"] * len(series)))
        return series, roles, None
    raise StageError("io", "config input needs a 'synth' or 'csv' block")


# --------------------------------------------------------------- stages


@dataclass
class PipelineResult:
    chart: object
    model: ReducedModel
    polar: object
    metrics: dict
    frc: list = field(default_factory=list)  # (f, [FrcPoint])
    backbone: object = None
    warnings: list = field(default_factory=list)


def _embed(series, cfg, warnings):
    emb, d = cfg["embedding"], int(cfg["geometry"]["d"])
    p, shift = int(emb["p"]), int(emb["shift"])
    ambient = series[0].channels * p
    if ambient < 2 * d + 1:
        msg = f"ambient dimension {ambient} is below 2d+1={2 * d + 1}; proceeding"
        log.warning(msg)
        warnings.append(msg)
    dts = {round(s.dt, 12) for s in series}
    if len(dts) != 1:
        raise StageError("io", "all trajectories must share the same time step")
    try:
        return [delay_embed(s, p, shift) for s in series]
    except ValueError as exc:
        raise StageError("io", str(exc)) from exc


def _reduce(chart, embedded):
    etas = [project(chart, e.points) for e in embedded]
    return etas, [finite_diff_derivative(x, e.dt) for x, e in zip(etas, embedded)]


def _readout(chart, cfg, embedded):
    channel = cfg["normalform"].get("readout_channel")
    if channel is None:
        return None
    return chart.V1[int(channel) * embedded[0].p]


def fit_linear(cfg, chart, etas, etads, embedded):
    nf = cfg["normalform"]
    order = nf.get("regression_order") or max(int(nf["N"]), 5)
    readout = _readout(chart, cfg, embedded)
    try:
        if nf["mode"] == "map":
            X = np.hstack([e[:, :-1] for e in etas])
            Y = np.hstack([e[:, 1:] for e in etas])
            return estimate_linear_part_map(X, Y, embedded[0].dt, nf["amplitude_cutoff"],
                                            order, readout)
        return estimate_linear_part(np.hstack(etas), np.hstack(etads), nf["amplitude_cutoff"],
                                    order, readout)
    except (DefectiveJacobianError, ValueError) as exc:
        raise StageError("normalform", f"linear part: {exc}") from exc


def fit_reduced(cfg, linear, etas, etads, dt, N=None, initial=None):
    nf = cfg["normalform"]
    N = int(nf["N"]) if N is None else int(N)
    structure = resonance_structure(linear, N, float(nf["delta"]))
    try:
        if nf["mode"] == "map":
            X = np.hstack([e[:, :-1] for e in etas])
            Y = np.hstack([e[:, 1:] for e in etas])
            return fit_normal_form_map(X, Y, dt, linear, structure, int(nf["max_iter"]))
        return fit_normal_form(np.hstack(etas), np.hstack(etads), linear, structure,
                               int(nf["max_iter"]), initial=initial)
    except (ConvergenceError, UnsupportedStructureError, ValueError) as exc:
        raise StageError("normalform", str(exc)) from exc


def trajectory_nmte(chart, model, embedded) -> list[float]:
    out = []
    for e in embedded:
        eta0 = project(chart, e.points[:, 0])
        pred = simulate_reduced(model, eta0, e.dt, e.points.shape[1] - 1)
        out.append(nmte(e.points, lift(chart, pred)))
    return out


def _forcing_amplitudes(polar, spec):
    if "amplitudes" in spec:
        return [float(f) for f in spec["amplitudes"]]
    if "calibration" in spec:
        return [calibrate_forcing(polar, float(c["Omega"]), float(c["rho0"]))
                for c in spec["calibration"]]
    raise StageError("analytics", "forcing block needs 'amplitudes' or 'calibration'")


def run_analytics(polar, spec, max_amplitude):
    if spec is None:
        return [], None
    try:
        rho_max = float(spec.get("rho_max") or 1.2 * max_amplitude)
        grid = np.linspace(rho_max / int(spec.get("n_rho", 400)), rho_max,
                           int(spec.get("n_rho", 400)))
        curves = [(f, frc_sweep(polar, f, grid)) for f in _forcing_amplitudes(polar, spec)]
        window = spec.get("Omega_range")
        if window is not None:
            lo, hi = (float(v) for v in window)
            curves = [(f, [pt for pt in pts if lo <= pt.Omega <= hi]) for f, pts in curves]
        return curves, backbone(polar, grid, max_amplitude)
    except (ValueError, ArithmeticError) as exc:
        raise StageError("analytics", str(exc)) from exc


def run_pipeline(cfg: dict, out_dir=None) -> PipelineResult:
    warnings: list[str] = []
    series, roles, _ = load_data(cfg)
    embedded = _embed(series, cfg, warnings)
    train = [e for e, r in zip(embedded, roles) if r == "train"]
    test = [e for e, r in zip(embedded, roles) if r == "test"]
    if not train:
        raise StageError("io", "no training trajectories")
    geo = cfg["geometry"]
    try:
        chart = fit_ssm(train, int(geo["d"]), int(geo["M"]), geo["mode"],
                        geo.get("projection"), float(geo["ridge"]), bool(geo["refine"]))
    except (SingularFitError, ValueError) as exc:
        raise StageError("fit", str(exc)) from exc
    etas, etads = _reduce(chart, train)
    linear = fit_linear(cfg, chart, etas, etads, train)
    model = fit_reduced(cfg, linear, etas, etads, train[0].dt)
    try:
        polar = to_polar(model)
    except UnsupportedStructureError as exc:
        raise StageError("normalform", str(exc)) from exc

    samples = sum(e.shape[1] for e in etas)
    metrics = {
        "conjugacy_residual": model.conjugacy_residual,
        "conjugacy_error_train": model.conjugacy_residual / samples,
        "chart_residual": chart.residual,
        "embedding_dimension": int(cfg["embedding"]["p"]),
        "nmte_train": float(np.mean(trajectory_nmte(chart, model, train))),
        "polar": serialize.polar_to_dict(polar),
        "warnings": warnings,
    }
    if test:
        t_etas, t_etads = _reduce(chart, test)
        scores = trajectory_nmte(chart, model, test)
        metrics["nmte_test"] = float(np.mean(scores))
        metrics["nmte_test_each"] = scores
        metrics["conjugacy_error_test"] = conjugacy_error(
            model, np.hstack(t_etas), np.hstack(t_etads)) / sum(e.shape[1] for e in t_etas)
    max_amp = float(model.metadata["max_amplitude"])
    metrics["max_training_amplitude"] = max_amp
    curves, bb = run_analytics(polar, cfg.get("forcing"), max_amp)
    result = PipelineResult(chart, model, polar, metrics, curves, bb, warnings)
    if out_dir is not None:
        write_outputs(result, cfg, out_dir)
    return result


# --------------------------------------------------------------- output


def write_frc_csv(curves, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Omega", "rho0", "psi0", "stable", "branch", "f"])
        for f, points in curves:
            for pt in points:
                w.writerow([repr(pt.Omega), repr(pt.rho0), repr(pt.psi0),
                            int(pt.stable), pt.branch, repr(float(f))])


def read_frc_csv(path):
    curves: dict[float, list] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            pt = FrcPoint(float(row["Omega"]), float(row["rho0"]), float(row["psi0"]),
                          bool(int(row["stable"])), int(row["branch"]))
            curves.setdefault(float(row["f"]), []).append(pt)
    return list(curves.items())


def write_backbone_csv(bb, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "omega"])
        for rho, om in bb:
            w.writerow([repr(rho), repr(om)])


def read_backbone_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["rho"]) for r in rows]),
            np.array([float(r["omega"]) for r in rows]))


def write_outputs(result: PipelineResult, cfg: dict, out_dir) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        serialize.write_json(serialize.chart_to_dict(result.chart), out / "chart.json")
        serialize.write_json(serialize.model_to_dict(result.model), out / "model.json")
        serialize.write_json(result.metrics, out / "metrics.json")
        if result.backbone is not None:
            write_frc_csv(result.frc, out / "frc.csv")
            write_backbone_csv(result.backbone, out / "backbone.csv")
    except OSError as exc:
        raise StageError("io", f"cannot write outputs to {out}: {exc}") from exc


# ------------------------------------------------------------ orderscan


def run_orderscan(cfg: dict, orders=None):
    """Conjugacy error per sample for nested normal-form orders.

    Each order is warm-started from the previous fit so the training error
    cannot increase along the list.
    """
    orders = sorted(int(n) for n in (orders or cfg["orderscan"]["orders"]))
    series, roles, _ = load_data(cfg)
    embedded = _embed(series, cfg, [])
    train = [e for e, r in zip(embedded, roles) if r == "train"]
    test = [e for e, r in zip(embedded, roles) if r == "test"]
    geo = cfg["geometry"]
    try:
        chart = fit_ssm(train, int(geo["d"]), int(geo["M"]), geo["mode"],
                        geo.get("projection"), float(geo["ridge"]), bool(geo["refine"]))
    except (SingularFitError, ValueError) as exc:
        raise StageError("fit", str(exc)) from exc
    etas, etads = _reduce(chart, train)
    linear = fit_linear(cfg, chart, etas, etads, train)
    if test:
        t_etas, t_etads = _reduce(chart, test)
        Xt, Xtd = np.hstack(t_etas), np.hstack(t_etads)
    rows, previous = [], None
    P = sum(e.shape[1] for e in etas)
    for N in orders:
        model = fit_reduced(cfg, linear, etas, etads, train[0].dt, N=N, initial=previous)
        previous = model
        test_err = conjugacy_error(model, Xt, Xtd) / Xt.shape[1] if test else float("nan")
        rows.append((N, model.conjugacy_residual / P, test_err))
    return rows


def write_orderscan_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "train_error", "test_error"])
        for N, tr, te in rows:
            w.writerow([N, repr(float(tr)), repr(float(te))])


# -------------------------------------------------------- oracle compare


def run_oracle_compare(cfg: dict) -> dict:
    spec = cfg["input"].get("synth")
    if not spec:
        raise StageError("io", "oracle comparison needs a synthetic modal system")
    _, modal = build_system(spec)
    if modal is None:
        raise StageError("io", f"system {spec.get('system')!r} has no modal description")
    order = int(cfg["compare"].get("oracle_order", 7))
    try:
        oracle = solve_autonomous_ssm(modal, 1, order)
        truth = oracle_polar(oracle)
    except (ResonanceError, ValueError) as exc:
        raise StageError("normalform", f"oracle: {exc}") from exc
    result = run_pipeline(cfg)
    a_fit, w_fit = result.polar.coeffs(0)
    a_ref, w_ref = truth.coeffs(0)
    tol = float(cfg["compare"]["tolerance"])
    # cubic order: constant and rho^2 coefficients
    rows, ok = [], True
    for name, fit, ref in (("alpha", a_fit, a_ref), ("omega", w_fit, w_ref)):
        for k in range(2):
            got = float(fit[k]) if k < len(fit) else 0.0
            want = float(ref[k]) if k < len(ref) else 0.0
            if abs(want) > 1e-12:
                err, kind = abs(got - want) / abs(want), "relative"
            else:
                err, kind = abs(got - want), "absolute"
            passed = err <= tol
            ok &= passed
            rows.append({"coefficient": f"{name}_{2 * k}", "oracle": want, "data": got,
                         "error": err, "error_kind": kind, "pass": passed})
    return {"tolerance": tol, "pass": bool(ok), "coefficients": rows,
            "metrics": result.metrics}


def run_simulate(cfg: dict, out_dir) -> list[str]:
    series, roles, _ = load_data(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, s in enumerate(series):
        name = f"trajectory_{i:03d}.csv"
        save_csv(s, out / name)
        names.append(name)
    serialize.write_json({"csv": names, "roles": roles}, out / "trajectories.json")
    return names
