"""Command-line client for the estimation service.

The CLI is a thin client: it parses arguments and files into the service's
request models, dispatches them (in-process by default, over HTTP with
--server), and writes the returned artifacts to disk. All business logic
lives behind the service handlers, so local and remote runs behave alike.

Exit codes: 0 success, 2 invalid input, 3 pipeline found no pose,
4 I/O failure.
"""

from __future__ import annotations

import base64
import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from .modelio import canonical_json, file_sha256
from .service import handlers, schemas

EXIT_VALIDATION = 2
EXIT_NO_POSE = 3
EXIT_IO = 4

DEFAULT_OUT_ENV = "POSEDISTRIB_OUT"


class Client:
    """Dispatches request models to in-process handlers or a remote server."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def call(self, path: str, handler, request, response_cls):
        if self.server is None:
            return handler(request)
        import httpx

        r = httpx.post(
            f"{self.server}/api/{path}",
            json=json.loads(request.model_dump_json()),
            timeout=3600.0,
        )
        if r.status_code == 422:
            detail = r.json().get("detail", r.text)
            raise handlers.ServiceError(str(detail))
        r.raise_for_status()
        return response_cls(**r.json())


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _model_ref(client: Client, model_path: str) -> dict:
    """model_b64 for remote calls, a plain path for in-process ones."""
    if not os.path.exists(model_path):
        _fail(EXIT_IO, f"model file not found: {model_path}")
    if client.server is None:
        return {"model_path": model_path}
    with open(model_path, "rb") as f:
        return {"model_b64": base64.b64encode(f.read()).decode("ascii")}


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        _fail(EXIT_IO, f"{what} file not found: {path}")
    except json.JSONDecodeError as e:
        _fail(EXIT_VALIDATION, f"{what} is not valid JSON: {e}")


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        _fail(EXIT_IO, f"cannot write {path}: {e}")


@click.group()
@click.version_option(__version__)
def main():
    """Pose-distribution estimation on symmetry-aware object models."""


@main.command("build-model")
@click.option("--primitive", type=click.Choice(schemas.PRIMITIVES), default=None,
              help="Bundled mesh to use instead of a PLY file.")
@click.option("--mesh-ply", type=click.Path(), default=None, help="ASCII PLY mesh path.")
@click.option("--radius", type=float, default=None)
@click.option("--height", type=float, default=None)
@click.option("--edge", type=float, default=None)
@click.option("--symmetry", type=click.Choice(["asymmetric", "discrete", "continuous"]),
              default=None, help="Override the primitive's natural symmetry.")
@click.option("--n", "n_fold", type=int, default=None, help="Fold count for discrete symmetry.")
@click.option("--axis", default="0,0,1", help="Symmetry axis, comma separated.")
@click.option("--max-points", type=int, default=4000, show_default=True)
@click.option("--descriptor-dim", type=int, default=12, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Model file to write.")
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
def cmd_build_model(primitive, mesh_ply, radius, height, edge, symmetry, n_fold, axis,
                    max_points, descriptor_dim, seed, out_path, server):
    """Build a symmetry-aware model file from a mesh."""
    client = Client(server)
    sym = None
    if symmetry is not None:
        try:
            ax = tuple(float(v) for v in axis.split(","))
        except ValueError:
            _fail(EXIT_VALIDATION, f"cannot parse axis {axis!r}")
        sym = schemas.SymmetryModel(kind=symmetry, axis=ax, n=n_fold or 1)
    elif n_fold is not None:
        _fail(EXIT_VALIDATION, "--n requires --symmetry discrete")
    mesh = schemas.MeshSpec(primitive=primitive, radius=radius, height=height, edge=edge)
    if mesh_ply is not None:
        if client.server is None:
            mesh.ply_path = mesh_ply
        else:
            try:
                mesh.ply_text = Path(mesh_ply).read_text(encoding="ascii")
            except OSError as e:
                _fail(EXIT_IO, f"cannot read {mesh_ply}: {e}")
    try:
        req = schemas.BuildModelRequest(
            mesh=mesh, symmetry=sym, max_points=max_points,
            descriptor_dim=descriptor_dim, seed=seed,
        )
        resp = client.call("models/build", handlers.build_model, req, schemas.BuildModelResponse)
    except handlers.ServiceError as e:
        _fail(EXIT_VALIDATION, str(e))
    try:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_bytes(base64.b64decode(resp.model_b64))
    except OSError as e:
        _fail(EXIT_IO, f"cannot write {out_path}: {e}")
    click.echo(
        f"wrote {out_path}: {resp.n_points} points, D={resp.descriptor_dim}, "
        f"symmetry={resp.symmetry.kind}(n={resp.symmetry.n}), sha256={resp.sha256}"
    )


@main.command("make-scenario")
@click.option("--rotvec", default="0.4,-0.3,0.2", show_default=True)
@click.option("--translation", default="0,0,0.5", show_default=True)
@click.option("--focal", type=float, default=300.0, show_default=True)
@click.option("--crop", type=int, default=128, show_default=True)
@click.option("--noise-desc", type=float, default=0.0, show_default=True)
@click.option("--noise-frame", type=float, default=0.0, show_default=True)
@click.option("--noise-mask", type=int, default=0, show_default=True)
@click.option("--occluder", default=None,
              help="Polygon as x1,y1;x2,y2;... in pixel coordinates.")
@click.option("--outlier-rate", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_make_scenario(rotvec, translation, focal, crop, noise_desc, noise_frame,
                      noise_mask, occluder, outlier_rate, seed, out_path):
    """Write a scenario JSON file."""
    try:
        rv = [float(v) for v in rotvec.split(",")]
        t = [float(v) for v in translation.split(",")]
        occ = None
        if occluder:
            occ = [[float(a) for a in pt.split(",")] for pt in occluder.split(";")]
    except ValueError:
        _fail(EXIT_VALIDATION, "cannot parse pose or occluder values")
    doc = {
        "camera": {"fx": focal, "fy": focal, "cx": crop / 2, "cy": crop / 2,
                   "width": crop, "height": crop},
        "gt_pose": {"rotvec": rv, "translation_m": t},
        "noise": {"descriptor_rad": noise_desc, "frame_rad": noise_frame,
                  "mask_erosion_px": noise_mask},
        "occluder_polygon_px": occ,
        "outlier_rate": outlier_rate,
        "seed": seed,
    }
    _write(Path(out_path), canonical_json(doc))
    click.echo(f"wrote {out_path}")


def _load_manifest(manifest_path: str):
    doc = _load_json(manifest_path, "manifest")
    for key in ("model_path", "scenario_path"):
        if key not in doc:
            _fail(EXIT_VALIDATION, f"manifest is missing {key!r}")
    base = Path(manifest_path).parent
    model_path = str((base / doc["model_path"]).resolve())
    scenario_path = str((base / doc["scenario_path"]).resolve())
    scenario = _load_json(scenario_path, "scenario")
    est = doc.get("estimator", {})
    if "seed" in doc:
        est = {**est, "seed": doc["seed"]}
    try:
        estimator = schemas.EstimatorModel(**est)
        metrics = schemas.MetricsModel(**doc.get("metrics", {}))
        scenario_model = schemas.ScenarioModel(**scenario)
    except Exception as e:
        _fail(EXIT_VALIDATION, f"manifest/scenario validation failed: {e}")
    out_dir = doc.get("output_dir") or os.environ.get(DEFAULT_OUT_ENV, "out")
    out_dir = str((base / out_dir).resolve()) if not os.path.isabs(out_dir) else out_dir
    return model_path, scenario_model, estimator, metrics, out_dir


def _run_request(client, model_path, scenario_model, estimator, metrics,
                 dump_stages=False, dump_hypotheses=False) -> schemas.RunRequest:
    return schemas.RunRequest(
        **_model_ref(client, model_path),
        scenario=scenario_model,
        estimator=estimator,
        metrics=metrics,
        dump_stages=dump_stages,
        dump_hypotheses=dump_hypotheses,
    )


@main.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_override", default=None, help="Output directory override.")
@click.option("--dump-stages", is_flag=True, help="Also write per-stage rotation plots.")
@click.option("--dump-hypotheses", is_flag=True, help="Also write the raw hypothesis set JSON.")
@click.option("--seed", type=int, default=None, help="Estimator seed override.")
@click.option("--server", default=None)
def cmd_run(manifest_path, out_override, dump_stages, dump_hypotheses, seed, server):
    """Run one scenario end to end and write its artifacts."""
    client = Client(server)
    model_path, scenario_model, estimator, metrics, out_dir = _load_manifest(manifest_path)
    if seed is not None:
        estimator = estimator.model_copy(update={"seed": seed})
    out = Path(out_override or out_dir)
    try:
        req = _run_request(client, model_path, scenario_model, estimator, metrics,
                           dump_stages, dump_hypotheses)
        resp = client.call("run", handlers.run, req, schemas.RunResponse)
    except handlers.ServiceError as e:
        _fail(EXIT_VALIDATION, str(e))

    _write(out / "distribution.json", canonical_json(resp.distribution))
    if resp.pr_report is not None:
        _write(out / "pr_report.json",
               canonical_json({**resp.pr_report, "provenance": resp.provenance}))
    if resp.pr_curves_csv:
        _write(out / "pr_curves.csv", resp.pr_curves_csv)
    _write(out / "mollweide.svg", resp.mollweide_svg)
    if resp.stage_svgs:
        for name, svg in resp.stage_svgs.items():
            _write(out / "stages" / f"{name}.svg", svg)
    if resp.hypotheses is not None:
        _write(out / "hypotheses.json", canonical_json(resp.hypotheses))

    n = len(resp.distribution["poses"])
    click.echo(f"status={resp.status} poses={n} out={out} "
               f"manifest_sha256={resp.provenance['manifest_sha256']}")
    if resp.status != "ok":
        diag = resp.distribution.get("diagnostics", {})
        click.echo(f"diagnostics: {json.dumps(diag, sort_keys=True)}", err=True)
        sys.exit(EXIT_NO_POSE)


@main.command("sweep")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--axis", required=True, type=click.Choice(["k", "tau_corr", "tau_dens", "tau_score"]))
@click.option("--values", required=True, help="Comma-separated values for the axis.")
@click.option("--out", "out_override", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--server", default=None)
def cmd_sweep(manifest_path, axis, values, out_override, seed, server):
    """Re-run the manifest across one hyperparameter axis; write a CSV table."""
    client = Client(server)
    model_path, scenario_model, estimator, metrics, out_dir = _load_manifest(manifest_path)
    if seed is not None:
        estimator = estimator.model_copy(update={"seed": seed})
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        _fail(EXIT_VALIDATION, f"cannot parse values {values!r}")
    out = Path(out_override or out_dir)
    try:
        base = _run_request(client, model_path, scenario_model, estimator, metrics)
        req = schemas.SweepRequest(base=base, axis=axis, values=vals)
        resp = client.call("sweep", handlers.sweep, req, schemas.SweepResponse)
    except handlers.ServiceError as e:
        _fail(EXIT_VALIDATION, str(e))
    _write(out / f"sweep_{axis}.csv", resp.csv)
    _write(out / f"sweep_{axis}.json",
           canonical_json({"axis": resp.axis,
                           "rows": [r.model_dump() for r in resp.rows],
                           "provenance": resp.provenance}))
    click.echo(resp.csv.rstrip("\n"))
    click.echo(f"wrote {out / f'sweep_{axis}.csv'}")


@main.command("losses")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--count", type=int, default=1, show_default=True,
              help="Number of renders; extra ones use random poses.")
@click.option("--vary-pose-seed", type=int, default=None)
@click.option("--out", "out_path", default=None, help="Optional JSON report path.")
@click.option("--server", default=None)
def cmd_losses(model_path, scenario_path, count, vary_pose_seed, out_path, server):
    """Evaluate the descriptor and local-frame consistency objectives."""
    client = Client(server)
    scenario = _load_json(scenario_path, "scenario")
    try:
        req = schemas.LossesRequest(
            **_model_ref(client, model_path),
            scenario=schemas.ScenarioModel(**scenario),
            count=count,
            vary_pose_seed=vary_pose_seed,
        )
        resp = client.call("losses", handlers.losses, req, schemas.LossesResponse)
    except handlers.ServiceError as e:
        _fail(EXIT_VALIDATION, str(e))
    doc = resp.model_dump()
    if out_path:
        _write(Path(out_path), canonical_json(doc))
    click.echo(f"L_desc={resp.l_desc:.6f} L_LF={resp.l_lf_rad:.3e} rad "
               f"({resp.n_observations} renders, {resp.n_pixels} pixels)")


@main.command("gt-set")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--occlusion-aware/--no-occlusion-aware", default=True, show_default=True)
@click.option("--step-deg", type=float, default=1.0, show_default=True)
@click.option("--out", "out_path", default=None)
@click.option("--server", default=None)
def cmd_gt_set(model_path, scenario_path, occlusion_aware, step_deg, out_path, server):
    """Dump the ground-truth pose set implied by symmetry and visibility."""
    client = Client(server)
    scenario = _load_json(scenario_path, "scenario")
    try:
        req = schemas.GtSetRequest(
            **_model_ref(client, model_path),
            scenario=schemas.ScenarioModel(**scenario),
            occlusion_aware=occlusion_aware,
            step_deg=step_deg,
        )
        resp = client.call("gt-set", handlers.gt_set, req, schemas.GtSetResponse)
    except handlers.ServiceError as e:
        _fail(EXIT_VALIDATION, str(e))
    if out_path:
        _write(Path(out_path), canonical_json({**resp.gt_set, "provenance": resp.provenance}))
    click.echo(f"{resp.n_poses} ground-truth poses"
               + (f", wrote {out_path}" if out_path else ""))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8601, show_default=True)
def cmd_serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
