"""Tracker configuration: all tunables plus JSON round-tripping."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .deformation import DeformParams
from .errors import InputError
from .mesh_gen import MeshGenParams

FLOW_SOURCES = ("auto", "external", "builtin")


@dataclass
class TrackerConfig:
    """Aggregated tunables for a tracking run.

    flow_source: "external" requires .flo files for every frame pair,
    "builtin" always runs the block-matching estimator, and "auto" uses
    files when present (files override the estimator).
    """

    mesh: MeshGenParams = field(default_factory=MeshGenParams)
    deform: DeformParams = field(default_factory=DeformParams)
    history_length: int = 5
    dilate_occlusion: bool = False
    flow_source: str = "auto"
    flow_levels: int = 3

    def __post_init__(self):
        if self.history_length < 3:
            raise InputError("history_length must be >= 3")
        if self.flow_source not in FLOW_SOURCES:
            raise InputError(f"flow_source must be one of {FLOW_SOURCES}")
        if self.flow_levels < 1:
            raise InputError("flow_levels must be >= 1")

    def to_dict(self) -> dict:
        m = self.mesh
        d = self.deform
        return {
            "mesh": {
                "target_vertex_count": m.target_vertex_count,
                "max_relax_iters": m.max_relax_iters,
                "move_tolerance": m.move_tolerance,
                "h0": m.h0,
            },
            "deform": {
                "lambda": d.lam,
                "theta": d.theta,
                "max_iters": d.max_iters,
                "min_iters": d.min_iters,
                "density_radius": d.density_radius,
                "density_threshold": d.density_threshold,
                "outside_tolerance": d.outside_tolerance,
                "allow_scaling": d.allow_scaling,
            },
            "propagation": {
                "history_length": self.history_length,
                "dilate_occlusion": self.dilate_occlusion,
            },
            "flow": {
                "source": self.flow_source,
                "levels": self.flow_levels,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        if not isinstance(data, dict):
            raise InputError("config root must be a JSON object")
        _reject_unknown(data, {"mesh", "deform", "propagation", "flow"}, "config")
        mesh_d = dict(data.get("mesh", {}))
        _reject_unknown(mesh_d, {"target_vertex_count", "max_relax_iters",
                                 "move_tolerance", "h0"}, "mesh")
        deform_d = dict(data.get("deform", {}))
        _reject_unknown(deform_d, {"lambda", "theta", "max_iters", "min_iters",
                                   "density_radius", "density_threshold",
                                   "outside_tolerance", "allow_scaling"}, "deform")
        prop_d = dict(data.get("propagation", {}))
        _reject_unknown(prop_d, {"history_length", "dilate_occlusion"}, "propagation")
        flow_d = dict(data.get("flow", {}))
        _reject_unknown(flow_d, {"source", "levels"}, "flow")
        if "lambda" in deform_d:
            deform_d["lam"] = deform_d.pop("lambda")
        try:
            mesh = MeshGenParams(**mesh_d)
            deform = DeformParams(**deform_d)
            return cls(mesh=mesh, deform=deform,
                       history_length=prop_d.get("history_length", 5),
                       dilate_occlusion=prop_d.get("dilate_occlusion", False),
                       flow_source=flow_d.get("source", "auto"),
                       flow_levels=flow_d.get("levels", 3))
        except (ValueError, TypeError) as exc:
            raise InputError(f"invalid config value: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "TrackerConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "TrackerConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _reject_unknown(data: dict, allowed: set, section: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise InputError(f"unknown {section} config keys: {sorted(unknown)}")
