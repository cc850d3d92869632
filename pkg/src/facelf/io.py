"""Readers and writers for every artifact the pipeline exchanges.

* PFM depth maps (little-endian float32, bottom-up scanlines)
* light field containers: ``view_{vv}_{uu}.png`` sub-views plus ``meta.json``
* ground truth directories: ``depth.pfm``, ``mask.png``, ``gt.json``
* ASCII PLY meshes with 9 significant digits
* network weights: magic, JSON header, contiguous little-endian blobs
* JSON manifests
* depth-map pairs and fitted surfaces, each with a JSON sidecar
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .lightfield import CameraRig, LightField


class FormatError(Exception):
    code = "format"


class MalformedHeaderError(FormatError):
    code = "malformed-header"


class TruncatedFileError(FormatError):
    code = "truncated"


class EndiannessError(FormatError):
    code = "endianness"


# ------------------------------------------------------------------ PFM


def write_pfm(path, data) -> None:
    """Write a 2D (``Pf``) or HxWx3 (``PF``) float32 image, little-endian."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM holds 2D or HxWx3 data, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def _read_token_line(fh) -> bytes:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise MalformedHeaderError("PFM header line not terminated")
    return line.strip()


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise MalformedHeaderError(f"bad PFM magic {magic[:8]!r}")
        try:
            w, h = (int(t) for t in _read_token_line(fh).split())
            scale = float(_read_token_line(fh))
        except ValueError as exc:
            raise MalformedHeaderError(f"bad PFM dimensions or scale: {exc}") from exc
        if w <= 0 or h <= 0 or scale == 0.0:
            raise MalformedHeaderError("PFM dimensions must be positive and scale non-zero")
        channels = 3 if magic == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = fh.read(count * 4)
        if len(raw) < count * 4:
            raise TruncatedFileError(f"PFM payload has {len(raw)} of {count * 4} bytes")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape)[::-1].copy()


# ------------------------------------------------------------ containers


def _view_name(v: int, u: int) -> str:
    return f"view_{v:02d}_{u:02d}.png"


def write_meta(path, rig: CameraRig, angular_res, spatial_res, extra=None) -> None:
    meta = {"angular_res": list(angular_res), "spatial_res": list(spatial_res)}
    meta.update(rig.to_dict())
    if extra:
        meta.update(extra)
    # json emits shortest round-trip reprs (up to 17 significant digits)
    Path(path).write_text(json.dumps(meta, indent=2))


def read_meta(path) -> dict:
    try:
        meta = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from exc
    for key in ("angular_res", "spatial_res", "focal_px", "baseline", "focus_depth", "principal_point"):
        if key not in meta:
            raise MalformedHeaderError(f"{path}: missing {key!r}")
    return meta


def rig_from_meta(meta: dict) -> CameraRig:
    return CameraRig.from_dict(meta)


def write_lightfield(lf: LightField, directory, rig: CameraRig | None = None) -> Path:
    rig = rig or lf.rig
    if rig is None:
        raise ValueError("a CameraRig is required to write a container")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    q = np.round(lf.samples * 255.0).astype(np.uint8)
    V, U = q.shape[:2]
    for v in range(V):
        for u in range(U):
            Image.fromarray(q[v, u], mode="RGB").save(d / _view_name(v, u))
    write_meta(d / "meta.json", rig, lf.angular_res, lf.spatial_res)
    return d


def read_lightfield(directory) -> LightField:
    d = Path(directory)
    meta = read_meta(d / "meta.json")
    U, V = meta["angular_res"]
    X, Y = meta["spatial_res"]
    out = np.empty((V, U, Y, X, 3), dtype=np.uint8)
    for v in range(V):
        for u in range(U):
            p = d / _view_name(v, u)
            if not p.exists():
                raise TruncatedFileError(f"missing sub-view {p.name}")
            img = np.asarray(Image.open(p).convert("RGB"))
            if img.shape != (Y, X, 3):
                raise MalformedHeaderError(f"{p.name} has shape {img.shape}, expected {(Y, X, 3)}")
            out[v, u] = img
    return LightField(out.astype(np.float32) / np.float32(255.0), rig_from_meta(meta))


def write_ground_truth(gt, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pfm(d / "depth.pfm", gt.depth_map)
    Image.fromarray(gt.mask.astype(np.uint8) * 255, mode="L").save(d / "mask.png")
    info = {"landmarks": None if gt.landmarks is None else np.asarray(gt.landmarks).tolist()}
    (d / "gt.json").write_text(json.dumps(info, indent=2))
    return d


def read_ground_truth(directory):
    from .synth import GroundTruth

    d = Path(directory)
    depth = read_pfm(d / "depth.pfm").astype(np.float64)
    mask = np.asarray(Image.open(d / "mask.png")) > 127
    lm = None
    if (d / "gt.json").exists():
        info = json.loads((d / "gt.json").read_text())
        lm = None if info.get("landmarks") is None else np.asarray(info["landmarks"])
    return GroundTruth(depth, mask, lm)


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 127


def write_mask(path, mask) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, mode="L").save(path)


# ------------------------------------------------------------------ PLY


def write_ply(path, vertices, faces=None, comments=()) -> None:
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces, dtype=np.int64)
    lines = ["ply", "format ascii 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines += [f"element vertex {len(vertices)}",
              "property float x", "property float y", "property float z",
              f"element face {len(faces)}",
              "property list uchar int vertex_indices",
              "end_header"]
    body = ["%.9g %.9g %.9g" % tuple(p) for p in vertices]
    body += ["3 %d %d %d" % tuple(f) for f in faces]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_ply(path):
    """Return ``(vertices, faces, comments)`` of an ASCII PLY."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise MalformedHeaderError("missing 'ply' magic")
    n_vert = n_face = None
    comments = []
    i = 1
    while i < len(text):
        line = text[i].strip()
        i += 1
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format" and parts[1] != "ascii":
            raise MalformedHeaderError(f"only ASCII PLY is supported, got {parts[1]}")
        if parts[0] == "comment":
            comments.append(line[len("comment "):])
        elif parts[0] == "element" and parts[1] == "vertex":
            n_vert = int(parts[2])
        elif parts[0] == "element" and parts[1] == "face":
            n_face = int(parts[2])
    else:
        raise MalformedHeaderError("PLY header has no end_header")
    if n_vert is None:
        raise MalformedHeaderError("PLY header declares no vertices")
    n_face = n_face or 0
    body = text[i:]
    if len(body) < n_vert + n_face:
        raise TruncatedFileError(f"PLY body has {len(body)} of {n_vert + n_face} lines")
    verts = np.array([[float(t) for t in body[k].split()[:3]] for k in range(n_vert)]).reshape(-1, 3)
    faces = np.array([[int(t) for t in body[n_vert + k].split()[1:4]] for k in range(n_face)],
                     dtype=np.int64).reshape(-1, 3)
    return verts, faces, comments


# -------------------------------------------------------------- weights

WEIGHTS_MAGIC = b"FLFW"
WEIGHTS_VERSION = 1


def write_weights(path, header: dict, arrays) -> None:
    """Serialize ``arrays`` (ordered ``(name, ndarray)`` pairs) after a JSON header."""
    arrays = list(arrays)
    dtypes = {a.dtype for _, a in arrays}
    if len(dtypes) != 1:
        raise ValueError("all parameter arrays must share one dtype")
    dt = np.dtype(dtypes.pop()).newbyteorder("<")
    head = dict(header)
    head["byteorder"] = "little"
    head["dtype"] = dt.name
    head["params"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    hbytes = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def read_weights(path):
    """Return ``(header, [(name, ndarray), ...])`` in declaration order."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise MalformedHeaderError("bad weights magic")
    if len(raw) < 12:
        raise TruncatedFileError("weights header truncated")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != WEIGHTS_VERSION:
        raise MalformedHeaderError(f"unsupported weights version {version}")
    if len(raw) < 12 + hlen:
        raise TruncatedFileError("weights header truncated")
    try:
        header = json.loads(raw[12:12 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedHeaderError(f"weights header is not JSON: {exc}") from exc
    if header.get("byteorder") != "little":
        raise EndiannessError(f"weights declare byteorder {header.get('byteorder')!r}")
    dt = np.dtype(header["dtype"]).newbyteorder("<")
    off = 12 + hlen
    out = []
    for spec in header["params"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = n * dt.itemsize
        if off + nbytes > len(raw):
            raise TruncatedFileError(f"weights blob for {spec['name']} truncated")
        arr = np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape(spec["shape"])
        out.append((spec["name"], arr.astype(dt.newbyteorder("=")).copy()))
        off += nbytes
    if off != len(raw):
        raise MalformedHeaderError(f"{len(raw) - off} trailing bytes after weights blob")
    return header, out


# ----------------------------------------------------- depth pairs, surfaces

DEPTH_PAIR_META = "pair.json"


def write_depth_pair(directory, dm_h, dm_v, rig: CameraRig, extra=None) -> Path:
    """``depth_h.pfm``, ``depth_v.pfm`` (NaN where invalid) and ``pair.json``."""
    d = ensure_dir(directory)
    write_pfm(d / "depth_h.pfm", np.where(dm_h.valid, dm_h.depth, np.nan))
    write_pfm(d / "depth_v.pfm", np.where(dm_v.valid, dm_v.depth, np.nan))
    meta = {"kind": "depth-pair", "horizontal": "depth_h.pfm", "vertical": "depth_v.pfm",
            "shape": list(dm_h.shape)}
    meta.update(rig.to_dict())
    if extra:
        meta.update(extra)
    (d / DEPTH_PAIR_META).write_text(json.dumps(meta, indent=2))
    return d


def read_depth_pair(directory):
    """Return ``(dm_h, dm_v, rig, meta)``."""
    from .lightfield import DepthMap

    d = Path(directory)
    try:
        meta = json.loads((d / DEPTH_PAIR_META).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{d / DEPTH_PAIR_META}: {exc}") from exc
    if meta.get("kind") != "depth-pair":
        raise MalformedHeaderError(f"{d}: not a depth pair")
    dm_h = DepthMap(read_pfm(d / meta["horizontal"]).astype(np.float64))
    dm_v = DepthMap(read_pfm(d / meta["vertical"]).astype(np.float64))
    return dm_h, dm_v, CameraRig.from_dict(meta), meta


SURFACE_COMMENT = "facelf surface grid"


def write_surface(path, surface, extra=None) -> Path:
    """PLY mesh plus ``.pfm`` node heights and ``.json`` axes next to it."""
    path = Path(path)
    ensure_dir(path.parent)
    gy, gx = surface.nodes.shape
    verts, faces = surface.to_mesh()
    write_ply(path, verts, faces, comments=[f"{SURFACE_COMMENT} {gx} {gy}"])
    write_pfm(path.with_suffix(".pfm"), surface.nodes)
    info = {"kind": "surface-grid", "x_axis": surface.x_axis.tolist(),
            "y_axis": surface.y_axis.tolist(), "iterations": surface.iterations}
    if extra:
        info.update(extra)
    path.with_suffix(".json").write_text(json.dumps(info, indent=2))
    return path


def read_surface(path):
    """SurfaceGrid from a PLY written by :func:`write_surface`."""
    from .fusion import SurfaceGrid

    verts, _, comments = read_ply(path)
    dims = [c[len(SURFACE_COMMENT):].split() for c in comments if c.startswith(SURFACE_COMMENT)]
    if not dims or len(dims[0]) != 2:
        raise MalformedHeaderError(f"{path}: PLY lacks the surface grid comment")
    gx, gy = (int(t) for t in dims[0])
    if len(verts) != gx * gy:
        raise MalformedHeaderError(f"{path}: {len(verts)} vertices for a {gx}x{gy} grid")
    g = verts.reshape(gy, gx, 3)
    return SurfaceGrid(g[..., 2], g[0, :, 0], g[:, 0, 1])


# ------------------------------------------------------------- manifest


def write_manifest(path, entries) -> None:
    Path(path).write_text(json.dumps(list(entries), indent=2))


def read_manifest(path) -> list:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedHeaderError(f"{path}: manifest must be a JSON array")
    return data


def resolve(base, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
