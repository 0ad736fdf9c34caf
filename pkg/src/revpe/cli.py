"""Command-line surface: simulate / distort / unwarp / correct / evaluate.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.  Diagnostics go to stderr; figures are rendered next to their
reports.
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .container import VolumeContainer, read_volume, write_volume
from .config import (
    default_config,
    load_config,
    parse_phantom_spec,
    serialize_config,
    serialize_phantom_spec,
)
from .core import (
    FormatError,
    InvalidInputError,
    NumericalError,
    PePolarity,
    ReversedPePair,
)
from .distortion import forward_distort, unwarp as unwarp_op
from .figures import save_comparison_figure, save_loss_trace_figure, save_slice_figure
from .metrics import mask_median_otsu, psnr, ssim
from .nifti import read_nifti_basic
from .optimize import estimate_volume
from .phantom import PhantomSpec, make_dataset

POLARITIES = {"bu": PePolarity.BLIP_UP, "bd": PePolarity.BLIP_DOWN}


def _provenance(seed=None, config_text: str | None = None) -> dict[str, str]:
    prov = {"command": " ".join(sys.argv), "version": __version__}
    if seed is not None:
        prov["seed"] = str(seed)
    if config_text is not None:
        prov["config_sha256"] = hashlib.sha256(config_text.encode()).hexdigest()
    return prov


def _load_any(path) -> VolumeContainer:
    if str(path).endswith((".nii", ".nii.gz")):
        return read_nifti_basic(path)
    return read_volume(path)


@click.group()
@click.version_option(__version__)
@click.option("--threads", type=int, default=1, show_default=True, help="Slice parallelism.")
@click.option("--seed", type=int, default=None, help="Override stored seeds.")
@click.option("--verbose", is_flag=True, help="Chatty progress on stderr.")
@click.pass_context
def cli(ctx, threads, seed, verbose):
    """Reversed phase-encode EPI distortion toolkit."""
    ctx.obj = {"threads": threads, "seed": seed, "verbose": verbose}


def _log(ctx, msg):
    if ctx.obj.get("verbose"):
        click.echo(msg, err=True)


@cli.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="Phantom spec file; defaults are used when omitted.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def simulate(ctx, spec_path, out_dir):
    """Generate a phantom dataset: image, field, and distorted pair."""
    if spec_path is not None:
        spec_text = Path(spec_path).read_text()
        spec = parse_phantom_spec(spec_text)
    else:
        spec = PhantomSpec()
        spec_text = serialize_phantom_spec(spec)
    if ctx.obj["seed"] is not None:
        spec = PhantomSpec(**{**spec.__dict__, "seed": ctx.obj["seed"]})
        spec_text = serialize_phantom_spec(spec)
    ds = make_dataset(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(seed=spec.seed, config_text=spec_text)
    write_volume(VolumeContainer("image", ds.image, provenance=prov), out / "image.epiv")
    write_volume(VolumeContainer("field", ds.field, provenance=prov), out / "field.epiv")
    write_volume(VolumeContainer("image", ds.pair.blip_up, provenance=prov), out / "bu.epiv")
    write_volume(VolumeContainer("image", ds.pair.blip_down, provenance=prov), out / "bd.epiv")
    (out / "provenance.txt").write_text(
        "".join(f"{k}={v}\n" for k, v in sorted(prov.items()))
        + f"rigid_sx={ds.rigid.sx!r}\nrigid_sy={ds.rigid.sy!r}\nrigid_r={ds.rigid.r!r}\n"
    )
    (out / "spec.cfg").write_text(spec_text)
    _log(ctx, f"wrote phantom dataset to {out}")


def _apply_rowwise(ctx, image_path, field_path, out_path, fn):
    img = _load_any(image_path)
    fld = read_volume(field_path)
    if fld.kind != "field":
        raise FormatError(f"{field_path}: expected a field container, got {fld.kind!r}")
    if img.data.shape != fld.data.shape:
        raise InvalidInputError(
            f"image dims {img.data.shape} != field dims {fld.data.shape}"
        )
    out_slices = [fn(i, f) for i, f in zip(img.slices, fld.slices)]
    prov = _provenance()
    write_volume(
        VolumeContainer("image", np.stack(out_slices), provenance=prov), out_path
    )
    _log(ctx, f"wrote {out_path}")


@cli.command()
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--field", "field_path", type=click.Path(exists=True), required=True)
@click.option("--polarity", type=click.Choice(["bu", "bd"]), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def distort(ctx, image_path, field_path, polarity, out_path):
    """Forward-distort an image volume with a displacement field."""
    pol = POLARITIES[polarity]
    _apply_rowwise(ctx, image_path, field_path, out_path,
                   lambda i, f: forward_distort(i, f, pol))


@cli.command()
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--field", "field_path", type=click.Path(exists=True), required=True)
@click.option("--polarity", type=click.Choice(["bu", "bd"]), required=True)
@click.option("--density-comp", is_flag=True, help="Weight out pileup before unwarping.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def unwarp(ctx, image_path, field_path, polarity, density_comp, out_path):
    """Unwarp a distorted volume with the transpose operator."""
    pol = POLARITIES[polarity]
    _apply_rowwise(ctx, image_path, field_path, out_path,
                   lambda i, f: unwarp_op(i, f, pol, compensate=density_comp))


@cli.command()
@click.option("--bu", "bu_path", type=click.Path(exists=True), required=True)
@click.option("--bd", "bd_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def correct(ctx, bu_path, bd_path, config_path, out_dir):
    """Estimate the correct image, field, and rigid motion for each slice."""
    bu = _load_any(bu_path)
    bd = _load_any(bd_path)
    if bu.data.shape != bd.data.shape:
        raise InvalidInputError(f"bu dims {bu.data.shape} != bd dims {bd.data.shape}")
    if config_path is not None:
        cfg = load_config(config_path)
        cfg_text = Path(config_path).read_text()
    else:
        cfg = default_config()
        cfg_text = serialize_config(cfg)
    pairs = [ReversedPePair(u, d) for u, d in zip(bu.slices, bd.slices)]
    _log(ctx, f"correcting {len(pairs)} slice(s) with {ctx.obj['threads']} thread(s)")
    results = estimate_volume(pairs, cfg, threads=ctx.obj["threads"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(config_text=cfg_text)
    write_volume(
        VolumeContainer("image", np.stack([r.image for r in results]), provenance=prov),
        out / "image.epiv",
    )
    write_volume(
        VolumeContainer("field", np.stack([r.field for r in results]), provenance=prov),
        out / "field.epiv",
    )
    with open(out / "rigid.txt", "w") as fh:
        for i, r in enumerate(results):
            fh.write(
                f"slice={i} sx={r.rigid.sx!r} sy={r.rigid.sy!r} r={r.rigid.r!r} "
                f"converged={r.converged}\n"
            )
    with open(out / "loss_trace.txt", "w") as fh:
        for i, r in enumerate(results):
            for li, trace in enumerate(r.loss_trace):
                for it, val in enumerate(trace):
                    fh.write(f"slice={i} level={li} iter={it} loss={val!r}\n")
    (out / "config.cfg").write_text(cfg_text)
    mid = len(results) // 2
    save_slice_figure(out / "image.png", results[mid].image, f"corrected image (slice {mid})")
    save_slice_figure(out / "field.png", results[mid].field,
                      f"displacement field, px (slice {mid})", cmap="RdBu_r")
    save_loss_trace_figure(out / "loss_trace.png", results[mid].loss_trace,
                           f"objective (slice {mid})")
    _log(ctx, f"wrote correction results to {out}")


@cli.command()
@click.option("--ref", "ref_path", type=click.Path(exists=True), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--mask-from", "mask_path", type=click.Path(exists=True), default=None,
              help="Image volume whose median-Otsu mask restricts the metrics.")
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.pass_context
def evaluate(ctx, ref_path, test_path, mask_path, report_path):
    """PSNR/SSIM report between a reference and a test volume."""
    ref = _load_any(ref_path)
    tst = _load_any(test_path)
    if ref.data.shape != tst.data.shape:
        raise InvalidInputError(f"ref dims {ref.data.shape} != test dims {tst.data.shape}")
    masks = None
    if mask_path is not None:
        msrc = _load_any(mask_path)
        if msrc.data.shape != ref.data.shape:
            raise InvalidInputError(
                f"mask source dims {msrc.data.shape} != ref dims {ref.data.shape}"
            )
        masks = [mask_median_otsu(s) for s in msrc.slices]
    rows = []
    for i, (r, t) in enumerate(zip(ref.slices, tst.slices)):
        m = masks[i] if masks is not None else None
        rows.append((i, psnr(r, t, m), ssim(r, t, m)))
    mean_psnr = float(np.mean([p for _, p, _ in rows]))
    mean_ssim = float(np.mean([s for _, _, s in rows]))
    report = Path(report_path)
    report.parent.mkdir(parents=True, exist_ok=True)
    with open(report, "w") as fh:
        for i, p, s in rows:
            fh.write(f"slice={i} psnr_db={p!r} ssim={s!r}\n")
        fh.write(f"mean_psnr_db={mean_psnr!r}\n")
        fh.write(f"mean_ssim={mean_ssim!r}\n")
        fh.write("\n")
        fh.write(f"{'slice':>6} {'PSNR [dB]':>12} {'SSIM':>8}\n")
        for i, p, s in rows:
            fh.write(f"{i:>6} {p:>12.4f} {s:>8.4f}\n")
        fh.write(f"{'mean':>6} {mean_psnr:>12.4f} {mean_ssim:>8.4f}\n")
    mid = len(ref.slices) // 2
    save_comparison_figure(
        report.with_suffix(".png"), ref.slices[mid], tst.slices[mid],
        f"slice {mid}: PSNR {rows[mid][1]:.2f} dB, SSIM {rows[mid][2]:.4f}",
    )
    click.echo(f"mean_psnr_db={mean_psnr!r}")
    click.echo(f"mean_ssim={mean_ssim!r}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except (FormatError, InvalidInputError) as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except NumericalError as e:
        click.echo(f"numerical failure: {e}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
