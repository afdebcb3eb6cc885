"""Command-line entry points: generate, register, train, evaluate, ablate, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .errors import LongitrackError


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise click.BadParameter(f"shape must be Z,Y,X, got '{text}'")
    return tuple(parts)  # type: ignore[return-value]


@click.group()
def main():
    """Verified longitudinal lesion tracking workbench."""


@main.command()
@click.option("--n-cases", type=int, required=True, help="Total cases to generate.")
@click.option("--shape", default="48,48,48", show_default=True, help="Grid extents Z,Y,X.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ambiguity", "n_ambiguity", type=int, default=0, show_default=True,
              help="How many of the cases are ambiguity-benchmark cases.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def generate(n_cases, shape, seed, n_ambiguity, out_dir):
    """Write a synthetic longitudinal dataset (NIfTI volumes + manifest)."""
    from .manifest import save_manifest
    from .synth import generate_dataset

    cases = generate_dataset(n_cases, _parse_shape(shape), seed=seed, n_ambiguity=n_ambiguity)
    path = save_manifest(cases, out_dir)
    click.echo(f"wrote {len(cases)} cases to {path}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--method", type=click.Choice(["truth", "affine"]), default="truth", show_default=True)
@click.option("--error-vox", type=float, default=1.0, show_default=True,
              help="Injected mean landmark error (truth method only).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def register(data_dir, method, error_vox, seed, out_dir):
    """Compute registration fields for every case; fields stored as 4D NIfTI."""
    from .harness import RegistrationSpec, case_registration
    from .manifest import load_manifest
    from .nifti import save_nifti

    cases = load_manifest(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = RegistrationSpec(method=method, error_vox=error_vox, seed=seed)
    summary = {}
    for case in cases:
        reg = case_registration(case, spec)
        name = f"{case.case_id}_reg_field.nii.gz"
        save_nifti(out_dir / name, reg.field.disp, case.baseline[0].spacing,
                   case.baseline[0].origin)
        summary[case.case_id] = {"method": reg.method.value,
                                 "residual_error_vox": reg.residual_error_vox,
                                 "field": name}
        click.echo(f"{case.case_id}: {reg.method.value} "
                   f"(residual {reg.residual_error_vox:.2f} vox)")
    (out_dir / "registration.json").write_text(json.dumps(
        {"schema": 1, "method": method, "error_vox": error_vox, "seed": seed,
         "cases": summary}, indent=2))


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path, exists=True),
              help="JSON file of LongitudinalSegmenter parameters.")
@click.option("--data", "data_dir", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--log", "log_path", type=click.Path(path_type=Path), default=None,
              help="Line-delimited JSON training log.")
def train(config_path, data_dir, out_path, log_path):
    """Train a segmenter on a dataset directory and save the checkpoint."""
    from .estimator import LongitudinalSegmenter
    from .manifest import load_manifest

    params = {}
    if config_path is not None:
        params = json.loads(Path(config_path).read_text())
    est = LongitudinalSegmenter(**params)
    cases = load_manifest(data_dir)
    est.fit(cases, log_path=log_path)
    est.save(out_path)
    tail = [e for e in est.history_.entries if e.get("event") == "end"]
    best = tail[-1]["best_val_dsc"] if tail else None
    click.echo(f"saved checkpoint to {out_path}"
               + (f" (best val DSC {best:.3f})" if best is not None else ""))


@main.command()
@click.option("--pred", "pred_dir", type=click.Path(path_type=Path, exists=True), required=True,
              help="Directory of per-lesion binary masks (*.nii.gz).")
@click.option("--gt", "gt_dir", type=click.Path(path_type=Path, exists=True), required=True,
              help="Directory of matching ground-truth masks (same filenames).")
@click.option("--tolerance-mm", type=float, default=2.0, show_default=True)
@click.option("--dsc-threshold", type=float, default=0.1, show_default=True)
@click.option("--n-bootstrap", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
def evaluate(pred_dir, gt_dir, tolerance_mm, dsc_threshold, n_bootstrap, seed, out_path):
    """Score aligned per-lesion mask files and write a bootstrap report."""
    from .metrics import LesionScore, build_report, score_lesion
    from .nifti import load_nifti

    gt_files = sorted(Path(gt_dir).glob("*.nii.gz"))
    if not gt_files:
        raise click.ClickException(f"no *.nii.gz ground-truth masks in {gt_dir}")
    scores = []
    for gt_file in gt_files:
        pred_file = Path(pred_dir) / gt_file.name
        if not pred_file.exists():
            raise click.ClickException(f"missing prediction for {gt_file.name}")
        gt_arr, spacing, _ = load_nifti(gt_file)
        pred_arr, _, _ = load_nifti(pred_file)
        d, s, hit = score_lesion(pred_arr != 0, gt_arr != 0, tolerance_mm, spacing,
                                 dsc_threshold)
        scores.append(LesionScore(gt_file.name.replace(".nii.gz", ""), 1, d, s, hit))
    report = build_report(scores, tolerance_mm, n_bootstrap, seed)
    Path(out_path).write_text(report.to_json())
    click.echo(f"{len(scores)} lesions: {report.table_row()}  -> {out_path}")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(path_type=Path), default=None,
              help="ExperimentSpec JSON; omit for the built-in default grid.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def ablate(spec_path, out_dir):
    """Run the ablation grid and write results.json plus a rendered table."""
    from .harness import ExperimentSpec, run_ablation

    spec = (ExperimentSpec.from_json(Path(spec_path).read_text())
            if spec_path else ExperimentSpec())
    result = run_ablation(spec, out_dir=out_dir, log=click.echo)
    click.echo(result.table())


@main.command()
@click.option("--data", "data_dir", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(path_type=Path), default=None)
@click.option("--method", type=click.Choice(["truth", "affine"]), default="truth", show_default=True)
@click.option("--error-vox", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(data_dir, model_path, method, error_vox, seed, host, port):
    """Serve the verify/correct loop over HTTP."""
    import uvicorn

    from .estimator import LongitudinalSegmenter
    from .harness import RegistrationSpec
    from .manifest import load_manifest
    from .service import create_app

    cases = load_manifest(data_dir)
    est = LongitudinalSegmenter.load(model_path) if model_path else None
    app = create_app(cases, est, RegistrationSpec(method=method, error_vox=error_vox, seed=seed))
    click.echo(f"serving {len(cases)} cases on http://{host}:{port} "
               + ("(no model: verification disabled)" if est is None else ""))
    uvicorn.run(app, host=host, port=port, log_level="warning")


def cli_main():
    try:
        main(standalone_mode=True)
    except LongitrackError as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    main()
