"""Model persistence and scenario/manifest JSON I/O.

Model files are a single self-describing binary: an 8-byte magic, a length-
prefixed JSON header (symmetry, seed, embedding metadata, blob directory,
mesh hash), then raw little-endian array blobs. Writing the same model twice
produces byte-identical files, so content hashes are usable as provenance.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .meshes import MarkerRegion, TriMesh
from .obsgen import ScenarioConfig
from .rotkit import CameraIntrinsics, Pose, Rotation
from .symmodel import DescriptorEmbedding, SymModel, SymmetrySpec

__all__ = [
    "save_model",
    "load_model",
    "model_sha256",
    "file_sha256",
    "scenario_to_dict",
    "scenario_from_dict",
    "load_scenario",
    "save_scenario",
    "canonical_json",
]

MAGIC = b"PDMODL01"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _blob(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()


def save_model(model: SymModel, path) -> str:
    """Write the model; returns the file's sha256."""
    blobs: list[tuple[str, np.ndarray]] = [
        ("points", model.points),
        ("descriptors", model.descriptors),
        ("frame_quats", model.frame_quats),
        ("mesh_vertices", model.mesh.vertices),
        ("mesh_triangles", model.mesh.triangles.astype(np.int32)),
        ("emb_weights", model.embedding.weights),
        ("emb_phases", model.embedding.phases),
    ]
    if model.marker_embedding is not None:
        blobs.append(("marker_emb_weights", model.marker_embedding.weights))
        blobs.append(("marker_emb_phases", model.marker_embedding.phases))

    directory = []
    offset = 0
    payload = bytearray()
    for name, arr in blobs:
        raw = _blob(arr)
        directory.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
        offset += len(raw)

    mesh_hash = hashlib.sha256(
        _blob(model.mesh.vertices) + _blob(model.mesh.triangles.astype(np.int32))
    ).hexdigest()
    header = {
        "format": "posedistrib-model",
        "version": FORMAT_VERSION,
        "symmetry": model.symmetry.to_dict(),
        "seed": model.seed,
        "descriptor_dim": model.descriptor_dim,
        "angular_scale": model.angular_scale,
        "marker": None
        if model.marker is None
        else {
            "center": [float(v) for v in model.marker.center],
            "half_extents": [float(v) for v in model.marker.half_extents],
        },
        "mesh_sha256": mesh_hash,
        "blobs": directory,
    }
    head = canonical_json(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(head), dtype="<u8").tobytes())
        f.write(head)
        f.write(bytes(payload))
    return file_sha256(path)


def load_model(path) -> SymModel:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a model file")
        (hlen,) = np.frombuffer(f.read(8), dtype="<u8")
        header = json.loads(f.read(int(hlen)).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header.get('version')}")
        payload = f.read()

    arrays = {}
    for ent in header["blobs"]:
        raw = payload[ent["offset"] : ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"]).newbyteorder("<"))
        arrays[ent["name"]] = arr.reshape(ent["shape"]).astype(ent["dtype"])

    mesh = TriMesh(arrays["mesh_vertices"], arrays["mesh_triangles"])
    embedding = DescriptorEmbedding(arrays["emb_weights"], arrays["emb_phases"])
    marker = None
    marker_embedding = None
    if header.get("marker"):
        marker = MarkerRegion(
            center=tuple(header["marker"]["center"]),
            half_extents=tuple(header["marker"]["half_extents"]),
        )
        marker_embedding = DescriptorEmbedding(
            arrays["marker_emb_weights"], arrays["marker_emb_phases"]
        )
    return SymModel(
        arrays["points"],
        arrays["descriptors"],
        arrays["frame_quats"],
        SymmetrySpec.from_dict(header["symmetry"]),
        mesh,
        header["seed"],
        embedding,
        marker=marker,
        marker_embedding=marker_embedding,
        angular_scale=header.get("angular_scale", 1.0),
    )


def model_sha256(model: SymModel) -> str:
    """Content hash of the model's arrays and metadata (not a file hash)."""
    h = hashlib.sha256()
    for arr in (model.points, model.descriptors, model.frame_quats):
        h.update(_blob(arr))
    h.update(canonical_json(model.symmetry.to_dict()).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Scenario JSON
# ---------------------------------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "camera": {
            "fx": cfg.camera.fx,
            "fy": cfg.camera.fy,
            "cx": cfg.camera.cx,
            "cy": cfg.camera.cy,
            "width": cfg.camera.width,
            "height": cfg.camera.height,
        },
        "gt_pose": {
            "rotvec": [float(v) for v in cfg.gt_pose.rotation.as_rotvec()],
            "translation_m": [float(v) for v in cfg.gt_pose.translation],
        },
        "noise": {
            "descriptor_rad": cfg.noise_desc,
            "frame_rad": cfg.noise_frame,
            "mask_erosion_px": cfg.noise_mask,
        },
        "occluder_polygon_px": None
        if cfg.occluder is None
        else [[float(x), float(y)] for x, y in cfg.occluder],
        "outlier_rate": cfg.outlier_rate,
        "seed": cfg.seed,
    }


def scenario_from_dict(d: dict) -> ScenarioConfig:
    cam = d["camera"]
    noise = d.get("noise", {})
    occ = d.get("occluder_polygon_px")
    return ScenarioConfig(
        camera=CameraIntrinsics(
            fx=float(cam["fx"]),
            fy=float(cam["fy"]),
            cx=float(cam["cx"]),
            cy=float(cam["cy"]),
            width=int(cam["width"]),
            height=int(cam["height"]),
        ),
        gt_pose=Pose(
            Rotation.from_rotvec(d["gt_pose"]["rotvec"]),
            np.asarray(d["gt_pose"]["translation_m"], dtype=np.float64),
        ),
        noise_desc=float(noise.get("descriptor_rad", 0.0)),
        noise_frame=float(noise.get("frame_rad", 0.0)),
        noise_mask=int(noise.get("mask_erosion_px", 0)),
        occluder=None if occ is None else tuple((float(x), float(y)) for x, y in occ),
        outlier_rate=float(d.get("outlier_rate", 0.0)),
        seed=int(d.get("seed", 0)),
    )


def load_scenario(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as f:
        return scenario_from_dict(json.load(f))


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(scenario_to_dict(cfg)))
