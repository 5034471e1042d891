"""File formats: XYZ / ASCII-PLY clouds, OBJ / OFF meshes, checkpoints."""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from .autodiff import Tensor
from .config import RunConfig
from .errors import CheckpointError, InvalidInputError, ParseError
from .geometry import PointCloud, TriangleMesh

CHECKPOINT_FORMAT_VERSION = 1

CLOUD_FORMATS = ("xyz", "ply_ascii")
MESH_FORMATS = ("obj", "off")


def _format_from_path(path: str, kinds: tuple) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    mapping = {"xyz": "xyz", "ply": "ply_ascii", "obj": "obj", "off": "off"}
    fmt = mapping.get(ext)
    if fmt is None or fmt not in kinds:
        raise InvalidInputError(f"cannot infer a supported format from {path!r}")
    return fmt


# ----------------------------------------------------------------------
# point clouds
# ----------------------------------------------------------------------

def load_cloud(path: str, format: str | None = None) -> PointCloud:
    fmt = format or _format_from_path(path, CLOUD_FORMATS)
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt == "ply_ascii":
        return _load_ply_ascii(path)
    raise InvalidInputError(f"unknown cloud format {fmt!r}")


def save_cloud(path: str, cloud: PointCloud, format: str | None = None) -> None:
    fmt = format or _format_from_path(path, CLOUD_FORMATS)
    if fmt == "xyz":
        with open(path, "w") as fh:
            for p in cloud.points:
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    elif fmt == "ply_ascii":
        with open(path, "w") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write("end_header\n")
            for p in cloud.points:
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    else:
        raise InvalidInputError(f"unknown cloud format {fmt!r}")


def _load_xyz(path: str) -> PointCloud:
    points = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) < 3:
                raise ParseError("expected 'x y z'", line=lineno)
            try:
                points.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError:
                raise ParseError(f"bad coordinate in {stripped!r}", line=lineno) from None
    if not points:
        raise ParseError("file contains no points")
    return PointCloud(np.array(points))


def _load_ply_ascii(path: str) -> PointCloud:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1)
    elements: list[tuple[str, int]] = []
    vertex_props: list[str] = []
    current_elem = None
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise ParseError("only ascii PLY is supported", line=i)
        elif tokens[0] == "element":
            current_elem = tokens[1]
            elements.append((tokens[1], int(tokens[2])))
        elif tokens[0] == "property":
            if current_elem == "vertex" and tokens[1] != "list":
                vertex_props.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = i
            break
    if body_start is None:
        raise ParseError("missing end_header")
    for axis in ("x", "y", "z"):
        if axis not in vertex_props:
            raise ParseError(f"vertex element lacks property {axis!r}")
    cols = [vertex_props.index(a) for a in ("x", "y", "z")]

    body = [ln for ln in lines[body_start:] if ln.strip()]
    cursor = 0
    points = None
    for name, count in elements:
        if cursor + count > len(body):
            raise ParseError(f"element {name!r} declares {count} rows but "
                             f"only {len(body) - cursor} remain")
        if name == "vertex":
            rows = body[cursor:cursor + count]
            try:
                points = np.array(
                    [[float(r.split()[c]) for c in cols] for r in rows])
            except (ValueError, IndexError):
                raise ParseError("malformed vertex row") from None
        cursor += count
    if points is None:
        raise ParseError("no vertex element in header")
    return PointCloud(points)


# ----------------------------------------------------------------------
# meshes
# ----------------------------------------------------------------------

def load_mesh(path: str, format: str | None = None) -> TriangleMesh:
    fmt = format or _format_from_path(path, MESH_FORMATS)
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "off":
        return _load_off(path)
    raise InvalidInputError(f"unknown mesh format {fmt!r}")


def _fan_triangulate(poly: list[int]) -> list[list[int]]:
    return [[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)]


def _load_obj(path: str) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise ParseError("vertex needs 3 coordinates", line=lineno)
                vertices.append([float(t) for t in tokens[1:4]])
            elif tokens[0] == "f":
                poly = []
                for tok in tokens[1:]:
                    idx_str = tok.split("/")[0]
                    try:
                        idx = int(idx_str)
                    except ValueError:
                        raise ParseError(f"bad face index {tok!r}", line=lineno) from None
                    if idx == 0:
                        raise ParseError("OBJ face indices are 1-based; 0 is invalid",
                                         line=lineno)
                    # negative indices count back from the current vertex list
                    resolved = idx - 1 if idx > 0 else len(vertices) + idx
                    if not 0 <= resolved < len(vertices):
                        raise ParseError(f"face index {idx} out of range", line=lineno)
                    poly.append(resolved)
                if len(poly) < 3:
                    raise ParseError("face needs at least 3 vertices", line=lineno)
                faces.extend(_fan_triangulate(poly))
    if not vertices:
        raise ParseError("OBJ file contains no vertices")
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.intp).reshape(-1, 3))


def _load_off(path: str) -> TriangleMesh:
    with open(path) as fh:
        tokens_lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in tokens_lines if ln]
    if not lines or not lines[0].startswith("OFF"):
        raise ParseError("missing OFF header", line=1)
    rest = lines[0][3:].strip()
    body = ([rest] if rest else []) + lines[1:]
    counts = body[0].split()
    if len(counts) < 2:
        raise ParseError("missing vertex/face counts")
    nv, nf = int(counts[0]), int(counts[1])
    if len(body) < 1 + nv + nf:
        raise ParseError("truncated OFF body")
    vertices = np.array([[float(t) for t in body[1 + i].split()[:3]]
                         for i in range(nv)])
    faces: list[list[int]] = []
    for i in range(nf):
        tokens = body[1 + nv + i].split()
        cnt = int(tokens[0])
        poly = [int(t) for t in tokens[1:1 + cnt]]
        if len(poly) != cnt or cnt < 3:
            raise ParseError(f"malformed face row {tokens!r}")
        for idx in poly:
            if not 0 <= idx < nv:
                raise ParseError(f"face index {idx} out of range")
        faces.extend(_fan_triangulate(poly))
    return TriangleMesh(vertices, np.array(faces, dtype=np.intp).reshape(-1, 3))


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(path: str, config: RunConfig,
                    params: dict[str, Tensor]) -> None:
    """Byte-stable structured-text checkpoint: sorted JSON with base64 data."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config.to_dict(),
        "params": {
            name: {
                "shape": list(t.value.shape),
                "dtype": "float64",
                "data": base64.b64encode(
                    np.ascontiguousarray(t.value, dtype=np.float64).tobytes()
                ).decode("ascii"),
            }
            for name, t in params.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path: str) -> tuple[RunConfig, dict[str, np.ndarray]]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a valid checkpoint: {exc}") from None
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != {CHECKPOINT_FORMAT_VERSION}")
    config = RunConfig.from_dict(payload["config"])
    params = {}
    for name, entry in payload["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
        params[name] = arr
    return config, params


def restore_params(params: dict[str, Tensor], stored: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameter tensors; mismatch is an error."""
    missing = set(params) - set(stored)
    extra = set(stored) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter names mismatch (missing={sorted(missing)[:3]}, "
            f"extra={sorted(extra)[:3]})")
    for name, tensor in params.items():
        if stored[name].shape != tensor.value.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {stored[name].shape} "
                f"vs model {tensor.value.shape}")
        tensor.value = stored[name].copy()
