"""On-disk formats: PNG, PFM, the binary scene container, JSON helpers and run manifests.

Scene container layout (all integers little-endian)::

    offset 0   8 bytes   magic b"SPLATNAV"
    offset 8   u32       container version (currently 1)
    offset 12  u64       header length L in bytes
    offset 20  L bytes   UTF-8 JSON header (sorted keys)
    ...        payload   raw little-endian arrays back to back, positions
                         given in header["arrays"][name] = {offset, dtype, shape}
                         with offsets relative to the payload start
    end - 32   32 bytes  SHA-256 of every preceding byte

The header also carries intrinsics, trajectory frame ids and image paths,
per-submap metadata, clustering labels, the config tree and optional
analytic geometry. A pretty-printed copy of the header is written next to
the container as ``<name>.json``.
"""

from __future__ import annotations

import hashlib
import io
import json
import platform
import struct
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from splatnav.background import AppearanceMLP, BackgroundModel, MlpWeights
from splatnav.geometry import RoomGeometry
from splatnav.scene import CameraPose, GaussianSet, Intrinsics, SceneBundle, SubmapModel, TrajectoryFrame

MAGIC = b"SPLATNAV"
CONTAINER_VERSION = 1


class SceneFormatError(ValueError):
    pass


# ---------------------------------------------------------------- images

def write_png(path, img: np.ndarray) -> None:
    """8-bit PNG from floats in [0, 1] (H, W) or (H, W, 3); bool arrays become 1-bit masks."""
    img = np.asarray(img)
    if img.dtype == bool:
        Image.fromarray(img).convert("1").save(path, format="PNG")
        return
    u8 = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_png(buf, img)
    return buf.getvalue()


def read_png(path_or_bytes) -> np.ndarray:
    """Floats in [0, 1]; 1-bit images come back as bool."""
    src = io.BytesIO(path_or_bytes) if isinstance(path_or_bytes, (bytes, bytearray)) else path_or_bytes
    with Image.open(src) as im:
        if im.mode == "1":
            return np.asarray(im, dtype=bool)
        arr = np.asarray(im.convert("RGB" if im.mode not in ("L",) else "L"))
    return arr.astype(np.float64) / 255.0


def write_pfm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(pfm_bytes(img))


def pfm_bytes(img: np.ndarray) -> bytes:
    """Little-endian PFM (negative scale); rows stored bottom to top as the format requires."""
    img = np.asarray(img, dtype="<f4")
    if img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    elif img.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError("PFM holds 1 or 3 channels")
    h, w = img.shape[:2]
    return tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii") + np.ascontiguousarray(img[::-1]).tobytes()


def read_pfm(path_or_bytes) -> np.ndarray:
    data = bytes(path_or_bytes) if isinstance(path_or_bytes, (bytes, bytearray)) else Path(path_or_bytes).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise ValueError("not a PFM file")
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    ch = 3 if parts[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3][: w * h * ch * 4], dtype=dtype).reshape(h, w, ch)[::-1]
    arr = arr.astype(np.float64)
    return arr[..., 0] if ch == 1 else arr


# ---------------------------------------------------------------- JSON

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj, indent: int | None = 1) -> str:
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(_jsonable(obj), indent=indent, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> Any:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- scene container

class _Payload:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.directory: dict[str, dict] = {}
        self.offset = 0

    def add(self, name: str, arr: np.ndarray) -> None:
        arr = np.asarray(arr)
        dt = "<i8" if arr.dtype.kind in "iub" else "<f8"
        raw = np.ascontiguousarray(arr.astype(dt)).tobytes()
        self.directory[name] = {"offset": self.offset, "dtype": dt, "shape": list(arr.shape)}
        self.chunks.append(raw)
        self.offset += len(raw)


def _mlp_meta(payload: _Payload, prefix: str, mlp: MlpWeights) -> int:
    for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        payload.add(f"{prefix}.W{i}", W)
        payload.add(f"{prefix}.b{i}", b)
    return len(mlp.weights)


def scene_header_and_payload(scene: SceneBundle) -> tuple[dict, bytes]:
    p = _Payload()
    traj = scene.trajectory
    p.add("trajectory.frame_id", np.array([f.frame_id for f in traj], dtype=np.int64))
    p.add("trajectory.rotation", np.array([f.pose.rotation for f in traj]).reshape(-1, 3, 3))
    p.add("trajectory.translation", np.array([f.pose.translation for f in traj]).reshape(-1, 3))
    submaps = []
    for sm in scene.submaps:
        pre = f"submap{sm.submap_id}"
        g = sm.gaussians
        for name in ("positions", "scales", "rotations", "opacities", "sh_coeffs"):
            p.add(f"{pre}.{name}", getattr(g, name))
        p.add(f"{pre}.centroid", sm.centroid)
        p.add(f"{pre}.member_frames", np.array(sm.member_frames, dtype=np.int64))
        submaps.append({
            "submap_id": sm.submap_id,
            "background": {"sh_degree": sm.background.sh_degree, "embed_dim": sm.background.embed_dim,
                           "layers": _mlp_meta(p, f"{pre}.bg", sm.background.mlp)},
            "appearance": {"position_scale": sm.appearance.position_scale,
                           "layers": _mlp_meta(p, f"{pre}.app", sm.appearance.mlp)},
        })
    K = scene.intrinsics
    header = {
        "format": "splatnav-scene",
        "version": CONTAINER_VERSION,
        "up_axis": "z",
        "units": "m",
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height},
        "image_paths": [f.image_path for f in traj],
        "submaps": submaps,
        "clustering": _jsonable(scene.clustering),
        "config": _jsonable(scene.config),
        "geometry": scene.geometry.to_dict() if scene.geometry is not None else None,
        "arrays": p.directory,
    }
    return header, b"".join(p.chunks)


def save_scene(scene: SceneBundle, path, sidecar: bool = True) -> None:
    header, payload = scene_header_and_payload(scene)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", CONTAINER_VERSION, len(hbytes)) + hbytes + payload
    Path(path).write_bytes(body + hashlib.sha256(body).digest())
    if sidecar:
        Path(str(path) + ".json").write_text(dumps(header))


def load_scene(path) -> SceneBundle:
    data = Path(path).read_bytes()
    if len(data) < 52 or data[:8] != MAGIC:
        raise SceneFormatError(f"{path}: not a splatnav scene container")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SceneFormatError(f"{path}: checksum mismatch, file is corrupt")
    version, hlen = struct.unpack("<IQ", body[8:20])
    if version != CONTAINER_VERSION:
        raise SceneFormatError(f"{path}: unsupported container version {version}")
    header = json.loads(body[20:20 + hlen].decode("utf-8"))
    payload = body[20 + hlen:]

    def arr(name):
        d = header["arrays"][name]
        n = int(np.prod(d["shape"])) if d["shape"] else 1
        a = np.frombuffer(payload, dtype=d["dtype"], count=n, offset=d["offset"])
        return a.reshape(d["shape"]).astype(np.int64 if d["dtype"] == "<i8" else np.float64)

    def mlp(prefix, layers):
        return MlpWeights([arr(f"{prefix}.W{i}") for i in range(layers)], [arr(f"{prefix}.b{i}") for i in range(layers)])

    ids = arr("trajectory.frame_id")
    R = arr("trajectory.rotation")
    t = arr("trajectory.translation")
    paths = header.get("image_paths") or [None] * len(ids)
    traj = [TrajectoryFrame(int(ids[i]), CameraPose(R[i], t[i]), paths[i]) for i in range(len(ids))]
    submaps = []
    for meta in header["submaps"]:
        pre = f"submap{meta['submap_id']}"
        gs = GaussianSet(*(arr(f"{pre}.{n}") for n in ("positions", "scales", "rotations", "opacities", "sh_coeffs")))
        bgm = meta["background"]
        bg = BackgroundModel(mlp(f"{pre}.bg", bgm["layers"]), bgm["sh_degree"], bgm["embed_dim"])
        app = AppearanceMLP(mlp(f"{pre}.app", meta["appearance"]["layers"]), meta["appearance"]["position_scale"])
        submaps.append(SubmapModel(meta["submap_id"], gs, bg, app, arr(f"{pre}.centroid"),
                                   [int(v) for v in arr(f"{pre}.member_frames")]))
    k = header["intrinsics"]
    geometry = RoomGeometry.from_dict(header["geometry"]) if header.get("geometry") else None
    scene = SceneBundle(submaps, traj, Intrinsics(k["fx"], k["fy"], k["cx"], k["cy"], k["width"], k["height"]),
                        header.get("config", {}), geometry, header.get("clustering", {}))
    scene.validate()
    return scene


def load_trajectory_csv(path, up_axis: str = "z") -> list[TrajectoryFrame]:
    """Import adapter for external pose logs.

    Expected columns, comma separated, one frame per line (``#`` comments allowed)::

        frame_id, tx, ty, tz, qw, qx, qy, qz[, image_path]

    The quaternion is the world-from-camera rotation (OpenCV camera axes).
    With ``up_axis="y"`` the world is converted to +Z-up via (x, y, z) -> (x, -z, y).
    """
    from splatnav.scene import quat_to_rotmat, y_up_to_z_up

    conv = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    frames = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        cols = [c.strip() for c in line.split(",")]
        if len(cols) < 8:
            raise ValueError(f"{path}:{lineno}: expected at least 8 columns")
        fid = int(cols[0])
        t = np.array([float(c) for c in cols[1:4]])
        q = np.array([float(c) for c in cols[4:8]])
        R = quat_to_rotmat(q / np.linalg.norm(q))
        if up_axis == "y":
            t = y_up_to_z_up(t)
            R = conv @ R
        elif up_axis != "z":
            raise ValueError("up_axis must be 'z' or 'y'")
        frames.append(TrajectoryFrame(fid, CameraPose(R, t), cols[8] if len(cols) > 8 else None))
    return frames


# ---------------------------------------------------------------- manifests

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dumps(cfg, indent=None).encode()).hexdigest()


def write_manifest(out_dir, command: str, inputs: list, cfg: dict, outputs: list) -> dict:
    """manifest.json next to the outputs: input digests, config hash, tool versions.

    ``run_hash`` covers every input byte and every config value, nothing else,
    so it changes exactly when one of those does.
    """
    import numba
    import scipy

    from splatnav import __version__

    ins = {str(p): sha256_file(p) for p in inputs}
    chash = config_hash(cfg)
    run = hashlib.sha256(dumps({"command": command, "inputs": sorted(ins.values()), "config": chash},
                               indent=None).encode()).hexdigest()
    manifest = {
        "command": command,
        "inputs": ins,
        "config_hash": chash,
        "run_hash": run,
        "outputs": [str(p) for p in outputs],
        "versions": {"splatnav": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "numba": numba.__version__},
    }
    write_json(Path(out_dir) / "manifest.json", manifest)
    return manifest
