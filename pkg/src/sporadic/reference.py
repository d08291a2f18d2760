"""Bundled unicycle example and the published reference design.

The reference values are printed to three significant digits, so every
check against them needs a rounding allowance. Two entries are not usable
as printed: ``J`` repeats ``Z`` (wrong shape), and ``O`` repeats ``Q``.
``J`` is recovered from the published holder as ``P2 (H - C_p B_p D_c)``;
``Q = O`` is kept, which leaves ``Q - O`` exactly singular.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import numpy as np

from .lmi import Certificate
from .model import (
    ClosedLoopMatrices,
    ControllerParams,
    HolderParams,
    PlantModel,
    assemble_closed_loop,
    build_P1,
    factor_U,
)

__all__ = [
    "load_json",
    "unicycle_config",
    "unicycle_plant",
    "reference_values",
    "reference_design",
    "reference_design_json",
]

# split of gamma**2 = 100 between the two subsystems (not printed with the reference data)
REFERENCE_GAMMA1 = 99.0
REFERENCE_GAMMA2 = 1.0


def load_json(name: str) -> dict:
    return json.loads(resources.files("sporadic.data").joinpath(name).read_text())


def unicycle_config() -> dict:
    return load_json("unicycle.json")


def unicycle_plant() -> PlantModel:
    return PlantModel.from_json_dict(unicycle_config()["plant"])


@lru_cache(maxsize=1)
def _raw() -> dict:
    return load_json("reference_values.json")


def reference_values() -> dict:
    """Printed values as arrays, plus the derived ``J``."""
    raw = _raw()
    out = {k: np.array(v, dtype=float) for k, v in raw["variables"].items()}
    ctrl = ControllerParams.from_json_dict(raw["controller"])
    hold = HolderParams.from_json_dict(raw["holder"])
    plant = unicycle_plant()
    out["J"] = out["P2"] @ (hold.H - plant.C_p @ plant.B_p @ ctrl.D_c)
    out.update(
        controller=ctrl,
        holder=hold,
        delta=float(raw["delta"]),
        gamma=float(raw["gamma"]),
        T1=float(raw["T1"]),
        T2=float(raw["T2"]),
        holder_spectrum=np.array(raw["holder_spectrum"]),
    )
    return out


def reference_design(use_printed_U: bool = False) -> dict:
    """Plant, published controller/holder, closed loop and certificate.

    ``P1`` uses ``U = (I - X Y) V^-T`` by default; the printed ``U`` is
    available with ``use_printed_U``. ``S`` is the printed ``F_i``.
    """
    v = reference_values()
    plant = unicycle_plant()
    U = v["U"] if use_printed_U else factor_U(v["X"], v["Y"], v["V"])
    P1 = build_P1(v["X"], v["Y"], U, v["V"])
    cert = Certificate(
        P1=P1, P2=v["P2"], S=v["F_i"], R=v["R"], Q=v["Q"], O=v["O"], delta=v["delta"],
        gamma1=REFERENCE_GAMMA1, gamma2=REFERENCE_GAMMA2, gamma=v["gamma"], T2=v["T2"],
    )
    cl: ClosedLoopMatrices = assemble_closed_loop(plant, v["controller"], v["holder"])
    return {
        "plant": plant,
        "controller": v["controller"],
        "holder": v["holder"],
        "certificate": cert,
        "closed_loop": cl,
        "T1": v["T1"],
        "T2": v["T2"],
        "gamma": v["gamma"],
        "U": U,
    }


def reference_design_json() -> dict:
    """The reference design in the design-file format used by the CLI."""
    d = reference_design()
    return {
        "comment": "Published reference design (values rounded to three significant digits).",
        "feasible": True,
        "T1": d["T1"],
        "T2": d["T2"],
        "gamma": d["gamma"],
        "verify_slack": 5e-2,
        "plant": d["plant"].to_json_dict(),
        "controller": d["controller"].to_json_dict(),
        "holder": d["holder"].to_json_dict(),
        "certificate": d["certificate"].to_json_dict(),
        "delta": d["certificate"].delta,
    }
