"""Service handlers: pure request -> response functions.

The CLI calls these directly for in-process runs; the FastAPI app wraps the
same functions, so local and remote behavior are identical. Handlers never
write files; artifacts come back inline and the caller decides where they
live.
"""

from __future__ import annotations

import base64
import hashlib
import os
import tempfile
from dataclasses import replace as _dc_replace

import numpy as np

from .. import meshes
from ..estimator import EstimatorParams, RansacParams, RefineParams, estimate_distribution
from ..matcher import all_hypotheses
from ..metrics import gt_pose_set, pr_report
from ..modelio import (
    canonical_json,
    load_model,
    model_sha256,
    save_model,
    scenario_from_dict,
)
from ..obsgen import render
from ..plots import mollweide_svg
from ..symmodel import SymmetrySpec, build_symmodel, eval_losses
from . import schemas

__all__ = [
    "build_model",
    "run",
    "sweep",
    "losses",
    "gt_set",
    "ServiceError",
]


class ServiceError(ValueError):
    """Invalid request or unusable input; maps to HTTP 422 / CLI exit 2."""


DEFAULT_SYMMETRY = {
    "cylinder": SymmetrySpec("continuous"),
    "hex_prism": SymmetrySpec("discrete", n=6),
    "cube_with_corner": SymmetrySpec("asymmetric"),
    "prism_with_marker": SymmetrySpec("discrete", n=6),
    "sphere": SymmetrySpec("asymmetric"),
}


def _mesh_from_spec(spec: schemas.MeshSpec):
    """(mesh, marker, default_symmetry) for a mesh request."""
    n_sources = sum(x is not None for x in (spec.primitive, spec.ply_path, spec.ply_text))
    if n_sources != 1:
        raise ServiceError("specify exactly one of primitive, ply_path, ply_text")
    if spec.primitive is not None:
        kw = {}
        if spec.primitive in ("cylinder", "hex_prism", "prism_with_marker"):
            if spec.radius is not None:
                kw["radius" if spec.primitive == "cylinder" else "circumradius"] = spec.radius
            if spec.height is not None:
                kw["height"] = spec.height
        if spec.primitive == "sphere" and spec.radius is not None:
            kw["radius"] = spec.radius
        if spec.primitive == "cube_with_corner" and spec.edge is not None:
            kw["edge"] = spec.edge
        if spec.primitive == "prism_with_marker":
            mesh, marker = meshes.prism_with_marker(**kw)
            return mesh, marker, DEFAULT_SYMMETRY[spec.primitive]
        mesh = meshes.BUNDLED_MESHES[spec.primitive](**kw)
        return mesh, None, DEFAULT_SYMMETRY[spec.primitive]
    if spec.ply_text is not None:
        with tempfile.NamedTemporaryFile("w", suffix=".ply", delete=False) as f:
            f.write(spec.ply_text)
            tmp = f.name
        try:
            mesh = meshes.load_ply(tmp)
        finally:
            os.unlink(tmp)
        return mesh, None, SymmetrySpec("asymmetric")
    if not os.path.exists(spec.ply_path):
        raise ServiceError(f"mesh file not found: {spec.ply_path}")
    return meshes.load_ply(spec.ply_path), None, SymmetrySpec("asymmetric")


def _symmetry_from_model(sym: schemas.SymmetryModel) -> SymmetrySpec:
    try:
        return SymmetrySpec(kind=sym.kind, axis=tuple(sym.axis), n=sym.n)
    except ValueError as e:
        raise ServiceError(str(e)) from e


def build_model(req: schemas.BuildModelRequest) -> schemas.BuildModelResponse:
    mesh, marker, default_sym = _mesh_from_spec(req.mesh)
    symmetry = default_sym if req.symmetry is None else _symmetry_from_model(req.symmetry)
    try:
        model = build_symmodel(
            mesh,
            symmetry,
            max_points=req.max_points,
            descriptor_dim=req.descriptor_dim,
            seed=req.seed,
            marker=marker,
        )
    except (ValueError, meshes.DegenerateMesh) as e:
        raise ServiceError(str(e)) from e
    with tempfile.NamedTemporaryFile(suffix=".pdm", delete=False) as f:
        tmp = f.name
    try:
        sha = save_model(model, tmp)
        with open(tmp, "rb") as f:
            raw = f.read()
    finally:
        os.unlink(tmp)
    return schemas.BuildModelResponse(
        model_b64=base64.b64encode(raw).decode("ascii"),
        sha256=sha,
        n_points=len(model),
        descriptor_dim=model.descriptor_dim,
        symmetry=schemas.SymmetryModel(
            kind=model.symmetry.kind, axis=tuple(model.symmetry.axis), n=model.symmetry.n
        ),
        spacing_m=model.spacing,
        diameter_m=model.diameter,
    )


def _resolve_model(model_b64, model_path):
    if (model_b64 is None) == (model_path is None):
        raise ServiceError("specify exactly one of model_b64, model_path")
    if model_b64 is not None:
        raw = base64.b64decode(model_b64)
        with tempfile.NamedTemporaryFile(suffix=".pdm", delete=False) as f:
            f.write(raw)
            tmp = f.name
        try:
            model = load_model(tmp)
        finally:
            os.unlink(tmp)
        return model
    if not os.path.exists(model_path):
        raise ServiceError(f"model file not found: {model_path}")
    return load_model(model_path)


def _estimator_params(est: schemas.EstimatorModel) -> EstimatorParams:
    try:
        return EstimatorParams(
            grid_level=est.grid_level,
            tau_desc=est.tau_desc,
            tau_dens=est.tau_dens,
            tau_score=est.tau_score,
            ransac=RansacParams(**est.ransac.model_dump()),
            refine=RefineParams(**est.refine.model_dump()),
            seed=est.seed,
            parallel=est.parallel,
        )
    except ValueError as e:
        raise ServiceError(str(e)) from e


def _provenance(req_model_b64, req_model_path, model, scenario_dict, estimator_dict) -> dict:
    scen_sha = hashlib.sha256(canonical_json(scenario_dict).encode()).hexdigest()
    manifest = {
        "model_sha256": model_sha256(model),
        "scenario_sha256": scen_sha,
        "estimator": estimator_dict,
    }
    return {
        **manifest,
        "manifest_sha256": hashlib.sha256(canonical_json(manifest).encode()).hexdigest(),
    }


def _render_scenario(model, scenario: schemas.ScenarioModel):
    cfg = scenario_from_dict(scenario.model_dump())
    try:
        return cfg, render(model, cfg)
    except ValueError as e:
        raise ServiceError(str(e)) from e


def run(req: schemas.RunRequest) -> schemas.RunResponse:
    model = _resolve_model(req.model_b64, req.model_path)
    cfg, obs = _render_scenario(model, req.scenario)
    params = _estimator_params(req.estimator)
    provenance = _provenance(
        req.model_b64, req.model_path, model, req.scenario.model_dump(), req.estimator.model_dump()
    )

    hyp = all_hypotheses(obs, model, params.tau_desc)
    dist = estimate_distribution(obs, model, cfg.camera, params, hypotheses=hyp)
    dist.provenance = provenance

    gt = gt_pose_set(
        model,
        cfg.gt_pose,
        occlusion_aware=req.metrics.occlusion_aware,
        obs=obs,
        step_deg=req.metrics.gt_step_deg,
    )
    report = None
    curves = None
    if len(gt):
        report = pr_report(
            dist, gt, model, cfg.camera,
            mspd_fractions=tuple(req.metrics.mspd_fractions),
            mssd_fractions=tuple(req.metrics.mssd_fractions),
        )
        curves = report.curves_csv()

    gt_quats = np.array([p.rotation.quat for p in gt.poses]) if len(gt) else None
    final_quats = np.array([p.pose.rotation.quat for p in dist.poses]).reshape(-1, 4)
    final_scores = np.array([p.score for p in dist.poses])
    warning = "no pose found" if dist.status != "ok" else None
    svg = mollweide_svg(
        final_quats, weights=final_scores, gt_quats=gt_quats,
        title="final pose distribution", warning=warning,
    )

    stage_svgs = None
    if req.dump_stages:
        from ..estimator import prune_hypotheses
        from ..so3grid import build_grid

        pruned = prune_hypotheses(hyp, build_grid(params.grid_level), params.tau_dens)
        stage_svgs = {
            "initial": mollweide_svg(hyp.quats, gt_quats=gt_quats, title="rotation hypotheses"),
            "pruned": mollweide_svg(pruned.quats, gt_quats=gt_quats, title="density-filtered hypotheses"),
            "final": svg,
        }

    hyp_records = hyp.to_records() if req.dump_hypotheses else None
    return schemas.RunResponse(
        status=dist.status,
        distribution=dist.to_dict(),
        pr_report=None if report is None else report.to_dict(),
        pr_curves_csv=curves,
        mollweide_svg=svg,
        stage_svgs=stage_svgs,
        hypotheses=hyp_records,
        provenance=provenance,
    )


def _apply_axis(base: schemas.RunRequest, axis: str, value: float) -> schemas.RunRequest:
    req = base.model_copy(deep=True)
    if axis == "k":
        req.estimator.grid_level = int(round(value))
    elif axis == "tau_corr":
        req.estimator.tau_desc = float(value)
    elif axis == "tau_dens":
        req.estimator.tau_dens = int(round(value))
    elif axis == "tau_score":
        req.estimator.tau_score = float(value)
    else:  # pragma: no cover
        raise ServiceError(f"unknown sweep axis {axis}")
    return req


def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    if not req.values:
        raise ServiceError("sweep needs at least one value")
    rows = []
    provenance = {}
    for v in req.values:
        one = _apply_axis(req.base, req.axis, v)
        one.dump_stages = False
        one.dump_hypotheses = False
        res = run(one)
        provenance = res.provenance
        rep = res.pr_report or {}
        rows.append(
            schemas.SweepRow(
                value=float(v),
                status=res.status,
                n_poses=len(res.distribution["poses"]),
                precision_mpd=rep.get("precision_mpd", 0.0),
                recall_mpd=rep.get("recall_mpd", 0.0),
                precision_msd=rep.get("precision_msd", 0.0),
                recall_msd=rep.get("recall_msd", 0.0),
                precision_msd_avg=rep.get("precision_msd_avg", 0.0),
                recall_msd_avg=rep.get("recall_msd_avg", 0.0),
            )
        )
    lines = [
        f"{req.axis},status,n_poses,P_MPD,R_MPD,P_MSD,R_MSD,P_MSD_avg,R_MSD_avg"
    ]
    for r in rows:
        lines.append(
            f"{r.value:.6g},{r.status},{r.n_poses},{r.precision_mpd:.6g},{r.recall_mpd:.6g},"
            f"{r.precision_msd:.6g},{r.recall_msd:.6g},{r.precision_msd_avg:.6g},{r.recall_msd_avg:.6g}"
        )
    return schemas.SweepResponse(
        axis=req.axis, rows=rows, csv="\n".join(lines) + "\n", provenance=provenance
    )


def losses(req: schemas.LossesRequest) -> schemas.LossesResponse:
    from ..rotkit import Pose, Rotation, random_rotations

    model = _resolve_model(req.model_b64, req.model_path)
    base_cfg = scenario_from_dict(req.scenario.model_dump())
    configs = [base_cfg]
    if req.count > 1:
        seed = req.vary_pose_seed if req.vary_pose_seed is not None else base_cfg.seed
        rng = np.random.default_rng([seed, 77])
        quats = random_rotations(req.count - 1, rng)
        for i in range(req.count - 1):
            pose = Pose(Rotation.from_quat(quats[i]), base_cfg.gt_pose.translation)
            configs.append(_dc_replace(base_cfg, gt_pose=pose, seed=base_cfg.seed + i + 1))
    observations = []
    for cfg in configs:
        try:
            observations.append(render(model, cfg))
        except ValueError as e:
            raise ServiceError(f"scenario cannot be rendered: {e}") from e
    l_desc, l_lf = eval_losses(model, observations)
    provenance = _provenance(None, None, model, req.scenario.model_dump(), {})
    return schemas.LossesResponse(
        l_desc=l_desc,
        l_lf_rad=l_lf,
        n_observations=len(observations),
        n_pixels=int(sum(o.n_mask for o in observations)),
        provenance=provenance,
    )


def gt_set(req: schemas.GtSetRequest) -> schemas.GtSetResponse:
    model = _resolve_model(req.model_b64, req.model_path)
    cfg, obs = _render_scenario(model, req.scenario)
    gt = gt_pose_set(
        model,
        cfg.gt_pose,
        occlusion_aware=req.occlusion_aware,
        obs=obs if req.occlusion_aware else None,
        step_deg=req.step_deg,
    )
    provenance = _provenance(None, None, model, req.scenario.model_dump(), {})
    return schemas.GtSetResponse(gt_set=gt.to_dict(), n_poses=len(gt), provenance=provenance)
