"""JSON model documents.

The document stores the generating template and parameters together with
the full body table, so models that were rescaled or carry a payload load
back field-identical.  Floats are written with ``repr`` precision by the
json module, which makes the round trip exact.
"""
import json
import os
import re

import jsonschema

from .errors import SchemaViolation, TemplateInvalid
from .model import (
    BaseSpec,
    Body,
    Box,
    Capsule,
    DesignParams,
    Frame,
    JointSpec,
    LimbTemplate,
    LinkSpec,
    Payload,
    RobotModel,
    check_inertia,
)

FORMAT = "marm-model"
VERSION = 1

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_mat9 = {"type": "array", "items": _num, "minItems": 9, "maxItems": 9}
_mat3 = {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}

_joint_fields = {
    "name": {"type": "string"},
    "kind": {"enum": ["yaw", "pitch"]},
    "offset_length": {"type": "number", "minimum": 0},
    "position_limits": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    "velocity_limit": {"type": "number", "exclusiveMinimum": 0},
    "torque_limit": {"type": "number", "exclusiveMinimum": 0},
    "actuator_mass": {"type": "number", "minimum": 0},
}
_joint_spec = {
    "type": "object",
    "properties": _joint_fields,
    "required": list(_joint_fields),
    "additionalProperties": False,
}

_collision = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"type": {"const": "capsule"}, "a": _vec3, "b": _vec3, "radius": {"type": "number", "minimum": 0}},
            "required": ["type", "a", "b", "radius"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"const": "box"}, "center": _vec3, "half_extents": _vec3, "rotation": _mat9},
            "required": ["type", "center", "half_extents", "rotation"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "properties": {
        "format": {"const": FORMAT},
        "version": {"const": VERSION},
        "name": {"type": "string"},
        "n_limbs": {"type": "integer", "minimum": 1},
        "template": {
            "type": "object",
            "properties": {
                "name": {"type": "string"},
                "module_sequence": {"type": "array", "items": _joint_spec, "minItems": 1},
                "ankle_style": {"enum": ["offset", "inline"]},
                "dof_count": {"enum": [6, 7]},
                "adjustable_link_indices": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                "segment_lengths": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "link_radii": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "link_density": {"type": "number", "minimum": 0},
                "min_link_length": {"type": "number", "minimum": 0},
            },
            "required": [
                "name", "module_sequence", "ankle_style", "dof_count", "adjustable_link_indices",
                "segment_lengths", "link_radii", "link_density", "min_link_length",
            ],
            "additionalProperties": False,
        },
        "params": {
            "type": "object",
            "properties": {"L1": {"type": "number", "exclusiveMinimum": 0}, "L2": {"type": "number", "exclusiveMinimum": 0}},
            "required": ["L1", "L2"],
            "additionalProperties": False,
        },
        "base": {
            "type": "object",
            "properties": {
                "mass": {"type": "number", "minimum": 0},
                "half_extents": _vec3,
                "mount_radius": {"type": "number", "minimum": 0},
                "n_limbs": {"type": "integer", "minimum": 1},
            },
            "required": ["mass", "half_extents", "mount_radius", "n_limbs"],
            "additionalProperties": False,
        },
        "links": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "length": {"type": "number", "minimum": 0},
                    "mass": {"type": "number", "minimum": 0},
                    "inertia": _mat3,
                    "com_offset": _vec3,
                    "collision": {"type": "array", "items": _collision},
                },
                "required": ["name", "length", "mass", "inertia", "com_offset", "collision"],
                "additionalProperties": False,
            },
        },
        "joints": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "spec": _joint_spec,
                    "parent": {"type": "integer", "minimum": -1},
                    "link": {"type": "integer", "minimum": 1},
                    "position": _vec3,
                    "rotation": _mat9,
                    "limb": {"type": "integer", "minimum": -1},
                },
                "required": ["spec", "parent", "link", "position", "rotation", "limb"],
                "additionalProperties": False,
            },
        },
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"name": {"type": "string"}, "body": {"type": "integer", "minimum": -1}, "position": _vec3, "rotation": _mat9},
                "required": ["name", "body", "position", "rotation"],
                "additionalProperties": False,
            },
        },
        "payloads": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "frame": {"type": "string"},
                    "name": {"type": "string"},
                    "mass": {"type": "number", "minimum": 0},
                    "across_flats": {"type": "number", "exclusiveMinimum": 0},
                    "thickness": {"type": "number", "exclusiveMinimum": 0},
                },
                "required": ["frame", "name", "mass", "across_flats", "thickness"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["format", "version", "name", "n_limbs", "template", "params", "base", "links", "joints", "frames", "payloads"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# save


def _joint_doc(j):
    return {
        "name": j.name,
        "kind": j.kind,
        "offset_length": j.offset_length,
        "position_limits": list(j.position_limits),
        "velocity_limit": j.velocity_limit,
        "torque_limit": j.torque_limit,
        "actuator_mass": j.actuator_mass,
    }


def _collision_doc(c):
    if isinstance(c, Capsule):
        return {"type": "capsule", "a": list(c.a), "b": list(c.b), "radius": c.radius}
    return {"type": "box", "center": list(c.center), "half_extents": list(c.half_extents), "rotation": list(c.rotation)}


def _link_doc(link):
    return {
        "name": link.name,
        "length": link.length,
        "mass": link.mass,
        "inertia": [list(r) for r in link.inertia],
        "com_offset": list(link.com_offset),
        "collision": [_collision_doc(c) for c in link.collision],
    }


def model_to_document(model):
    t = model.template
    return {
        "format": FORMAT,
        "version": VERSION,
        "name": model.name,
        "n_limbs": model.n_limbs,
        "template": {
            "name": t.name,
            "module_sequence": [_joint_doc(j) for j in t.module_sequence],
            "ankle_style": t.ankle_style,
            "dof_count": t.dof_count,
            "adjustable_link_indices": list(t.adjustable_link_indices),
            "segment_lengths": list(t.segment_lengths),
            "link_radii": list(t.link_radii),
            "link_density": t.link_density,
            "min_link_length": t.min_link_length,
        },
        "params": {"L1": model.params.L1, "L2": model.params.L2},
        "base": {
            "mass": model.base_spec.mass,
            "half_extents": list(model.base_spec.half_extents),
            "mount_radius": model.base_spec.mount_radius,
            "n_limbs": model.base_spec.n_limbs,
        },
        "links": [_link_doc(model.base_link)] + [_link_doc(b.link) for b in model.bodies],
        "joints": [
            {
                "spec": _joint_doc(b.joint),
                "parent": b.parent,
                "link": k + 1,
                "position": list(b.position),
                "rotation": list(b.rotation),
                "limb": b.limb,
            }
            for k, b in enumerate(model.bodies)
        ],
        "frames": [{"name": f.name, "body": f.body, "position": list(f.position), "rotation": list(f.rotation)} for f in model.frames],
        "payloads": [
            {"frame": fr, "name": p.name, "mass": p.mass, "across_flats": p.across_flats, "thickness": p.thickness}
            for fr, p in model.payloads
        ],
    }


def dumps(model):
    return json.dumps(model_to_document(model), indent=1) + "\n"


def save_model(model, path=None):
    """Return the model document; also write it to ``path`` when given."""
    doc = model_to_document(model)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(dumps(model))
    return doc


# ---------------------------------------------------------------------------
# load


def _path_str(parts):
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _schema_error(doc):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if not errors:
        return None
    e = errors[0]
    parts = list(e.absolute_path)
    if e.validator == "required":
        m = re.match(r"'([^']+)' is a required property", e.message)
        if m:
            parts.append(m.group(1))
    return SchemaViolation(_path_str(parts) or "<root>", e.message)


def _t3(x):
    return tuple(float(v) for v in x)


def _joint(d):
    return JointSpec(
        name=d["name"],
        kind=d["kind"],
        offset_length=float(d["offset_length"]),
        position_limits=_t3(d["position_limits"]),
        velocity_limit=float(d["velocity_limit"]),
        torque_limit=float(d["torque_limit"]),
        actuator_mass=float(d["actuator_mass"]),
    )


def _collision(d):
    if d["type"] == "capsule":
        return Capsule(_t3(d["a"]), _t3(d["b"]), float(d["radius"]))
    return Box(_t3(d["center"]), _t3(d["half_extents"]), _t3(d["rotation"]))


def _link(d):
    return LinkSpec(
        name=d["name"],
        length=float(d["length"]),
        mass=float(d["mass"]),
        inertia=tuple(_t3(r) for r in d["inertia"]),
        com_offset=_t3(d["com_offset"]),
        collision=tuple(_collision(c) for c in d["collision"]),
    )


def load_model(doc):
    """Build a model from a document (dict, JSON text or file path); raises ``SchemaViolation``."""
    if isinstance(doc, os.PathLike):
        doc = os.fspath(doc)
    if isinstance(doc, str):
        text = doc
        if not doc.lstrip().startswith("{"):
            with open(doc) as fh:
                text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaViolation("<root>", f"not valid JSON: {exc}") from None
    err = _schema_error(doc)
    if err is not None:
        raise err

    for k, ld in enumerate(doc["links"]):
        try:
            check_inertia(ld["mass"], ld["inertia"], f"links[{k}]")
        except ValueError as exc:
            raise SchemaViolation(f"links[{k}].inertia", str(exc)) from None
    t = doc["template"]
    try:
        template = LimbTemplate(
            name=t["name"],
            module_sequence=tuple(_joint(j) for j in t["module_sequence"]),
            ankle_style=t["ankle_style"],
            dof_count=int(t["dof_count"]),
            adjustable_link_indices=tuple(int(i) for i in t["adjustable_link_indices"]),
            segment_lengths=_t3(t["segment_lengths"]),
            link_radii=_t3(t["link_radii"]),
            link_density=float(t["link_density"]),
            min_link_length=float(t["min_link_length"]),
        )
    except TemplateInvalid as exc:
        raise SchemaViolation("template", str(exc)) from None
    links = [_link(d) for d in doc["links"]]
    n_links = len(links)
    bodies = []
    for k, jd in enumerate(doc["joints"]):
        if jd["link"] >= n_links:
            raise SchemaViolation(f"joints[{k}].link", "index out of range")
        if jd["parent"] >= k:
            raise SchemaViolation(f"joints[{k}].parent", "parents must precede children")
        try:
            spec = _joint(jd["spec"])
        except TemplateInvalid as exc:
            raise SchemaViolation(f"joints[{k}].spec", str(exc)) from None
        bodies.append(
            Body(
                link=links[jd["link"]],
                joint=spec,
                parent=int(jd["parent"]),
                position=_t3(jd["position"]),
                rotation=_t3(jd["rotation"]),
                limb=int(jd["limb"]),
            )
        )
    names = [f["name"] for f in doc["frames"]]
    if len(set(names)) != len(names):
        raise SchemaViolation("frames", "frame names must be unique")
    frames = tuple(Frame(f["name"], int(f["body"]), _t3(f["position"]), _t3(f["rotation"])) for f in doc["frames"])
    b = doc["base"]
    return RobotModel(
        name=doc["name"],
        base_link=links[0],
        bodies=tuple(bodies),
        frames=frames,
        n_limbs=int(doc["n_limbs"]),
        template=template,
        params=DesignParams(float(doc["params"]["L1"]), float(doc["params"]["L2"])),
        base_spec=BaseSpec(float(b["mass"]), _t3(b["half_extents"]), float(b["mount_radius"]), int(b["n_limbs"])),
        payloads=tuple(
            (p["frame"], Payload(p["name"], float(p["mass"]), float(p["across_flats"]), float(p["thickness"]))) for p in doc["payloads"]
        ),
    )
