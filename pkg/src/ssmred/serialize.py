"""JSON encoding of charts, reduced models, polar models and forcing specs.

Complex numbers are written as ``[re, im]`` pairs; arrays become nested
lists. Output uses sorted keys so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .forced import ForcingSpec, Harmonic, PolarModel
from .geometry import SsmChart
from .normalform import LinearPart, ReducedModel, ResonanceStructure, to_polar
from .polybasis import exponent_matrix


def encode_complex(a) -> list:
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    out = np.empty(arr.shape[:-1], dtype=complex)
    # set parts directly so signed zeros survive the round trip
    out.real, out.imag = arr[..., 0], arr[..., 1]
    return out


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return json.loads(path.read_text())


# ----------------------------------------------------------------- chart


def chart_to_dict(chart: SsmChart) -> dict:
    return {
        "p": chart.p, "d": chart.d, "M": chart.M,
        "U1": chart.U1, "V1": chart.V1, "V": chart.V,
        "ordering": "graded-lex", "residual": chart.residual, "mode": chart.mode,
    }


def chart_from_dict(data: dict) -> SsmChart:
    if data.get("ordering", "graded-lex") != "graded-lex":
        raise ValueError("unsupported monomial ordering")
    return SsmChart(int(data["p"]), int(data["d"]), int(data["M"]),
                    np.asarray(data["U1"], dtype=float).reshape(data["p"], data["d"]),
                    np.asarray(data["V1"], dtype=float).reshape(data["p"], data["d"]),
                    np.asarray(data["V"], dtype=float).reshape(data["p"], -1),
                    float(data["residual"]), data.get("mode", "default"))


# ----------------------------------------------------------------- polar


def polar_to_dict(polar: PolarModel) -> dict:
    out = {"powers": polar.powers, "alpha": polar.alpha, "omega": polar.omega}
    if polar.modes == 1 and polar.powers.shape[1] == polar.powers[0].max() + 1:
        a, w = polar.coeffs(0)
        out["alpha_coeffs"], out["omega_coeffs"] = a, w
    return out


def polar_from_dict(data: dict) -> PolarModel:
    return PolarModel(np.asarray(data["powers"], dtype=int),
                      np.asarray(data["alpha"], dtype=float),
                      np.asarray(data["omega"], dtype=float))


# ----------------------------------------------------------------- model


def model_to_dict(model: ReducedModel) -> dict:
    structure = model.structure
    try:
        polar = polar_to_dict(to_polar(model))
    except ValueError:
        polar = None
    return {
        "Lambda": encode_complex(model.linear.Lambda),
        "B": encode_complex(model.linear.B),
        "jacobian": model.linear.jacobian,
        "N": structure.order,
        "delta": structure.delta,
        "S": [list(rc) for rc in structure.pairs],
        "Ncoef": encode_complex(model.Ncoef),
        "Hstar": encode_complex(model.Hstar),
        "H": encode_complex(model.H),
        "polar": polar,
        "residuals": {"conjugacy": model.conjugacy_residual},
        "metadata": model.metadata,
        "ordering": "graded-lex",
    }


def model_from_dict(data: dict) -> ReducedModel:
    lam = decode_complex(data["Lambda"])
    d = len(lam)
    order = int(data["N"])
    E = exponent_matrix(d, 2, order)
    B = decode_complex(data["B"]).reshape(d, d)
    linear = LinearPart(np.asarray(data["jacobian"], dtype=float).reshape(d, d), B, lam)
    im = lam.imag
    Delta = im[:, None] - im @ E.exponents
    mask = np.zeros((d, E.size), dtype=bool)
    for r, c in data["S"]:
        mask[r, c] = True
    structure = ResonanceStructure(order, E, Delta, mask, float(data["delta"]))
    shape = (d, E.size)
    return ReducedModel(linear, structure,
                        decode_complex(data["Ncoef"]).reshape(shape),
                        decode_complex(data["Hstar"]).reshape(shape),
                        decode_complex(data["H"]).reshape(shape),
                        float(data["residuals"]["conjugacy"]),
                        dict(data.get("metadata", {})))


# --------------------------------------------------------------- forcing


def forcing_to_dict(spec: ForcingSpec) -> dict:
    return {
        "Omega": spec.Omega,
        "harmonics": [{"mode": h.mode, "k": list(h.k), "f": h.f, "phi": h.phi, "sign": h.sign}
                      for h in spec.harmonics],
    }


def forcing_from_dict(data: dict) -> ForcingSpec:
    return ForcingSpec(np.asarray(data["Omega"], dtype=float),
                       tuple(Harmonic(int(h["mode"]), tuple(int(v) for v in h["k"]),
                                      float(h["f"]), float(h.get("phi", 0.0)),
                                      int(h.get("sign", 1)))
                             for h in data["harmonics"]))
