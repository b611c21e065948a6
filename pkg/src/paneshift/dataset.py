"""Deterministic, parallel distortion of image/mask datasets.

Every image gets its own seed derived from the run's master seed and the
image id, so the outputs do not depend on worker count or scheduling.  Each
output image is accompanied by a JSON sidecar that is sufficient to rebuild
its displacement field bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .distortion import (
    RNG_ALGORITHM,
    DisplacementField,
    DistortionCoefficients,
    RandomStream,
    build_global_field,
    check_sigma,
    mean_pixel_shift,
    sample_global_coeffs,
)
from .grid import (
    DEFAULT_COLS,
    DEFAULT_ROWS,
    DEFAULT_STRIP_WIDTH,
    GridDistortionSpec,
    build_grid_field,
    build_grid_spec,
    patch_layout,
)
from .imageio import (
    IMAGE_SUFFIXES,
    MASK_SUFFIXES,
    image_size,
    pair_by_stem,
    read_image,
    read_labels,
    write_image,
    write_labels,
)
from .warp import (
    DEFAULT_IGNORE_LABEL,
    FillPolicy,
    LabeledPair,
    LabelMask,
    crop_pair,
    valid_crop_box,
    warp_pair,
)

log = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".distortion.json"
SUMMARY_NAME = "run_summary.json"
IMAGES_DIR = "images"
MASKS_DIR = "annotations"


class DatasetError(Exception):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SidecarError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: Path
    mask_path: Path


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    ignore_label: int = DEFAULT_IGNORE_LABEL

    def __len__(self):
        return len(self.entries)


def scan_dataset(image_root, mask_root, ignore_label: int = DEFAULT_IGNORE_LABEL, fail_fast: bool = False) -> DatasetManifest:
    """Pair images with masks by relative path stem and check their sizes.

    Raises :class:`DatasetError` listing every orphan, unreadable file or
    size mismatch (only the first one with ``fail_fast``).
    """
    pairs, problems = pair_by_stem(image_root, mask_root, IMAGE_SUFFIXES, MASK_SUFFIXES)
    if problems and fail_fast:
        raise DatasetError(problems[:1])
    entries = []
    for image_id, image_path, mask_path in pairs:
        try:
            isize = image_size(image_path)
            msize = image_size(mask_path)
        except OSError as exc:
            problems.append(f"{image_id}: unreadable file ({exc})")
        else:
            if isize != msize:
                problems.append(f"{image_id}: image is {isize[0]}x{isize[1]} but mask is {msize[0]}x{msize[1]}")
            else:
                entries.append(ManifestEntry(image_id, image_path, mask_path))
        if problems and fail_fast:
            raise DatasetError(problems[:1])
    if problems:
        raise DatasetError(problems)
    return DatasetManifest(tuple(entries), ignore_label)


def derive_image_seed(master_seed: int, image_id: str) -> int:
    """64-bit seed: BLAKE2b-64 of the little-endian master seed and the UTF-8 id."""
    h = hashlib.blake2b(digest_size=8)
    h.update((int(master_seed) & ((1 << 64) - 1)).to_bytes(8, "little"))
    h.update(image_id.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class DistortionConfig:
    model: str
    sigma: float
    master_seed: int
    rows: int = DEFAULT_ROWS
    cols: int = DEFAULT_COLS
    strip_width: int = DEFAULT_STRIP_WIDTH
    fill: FillPolicy = FillPolicy()
    crop_valid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_sigma(self.sigma, self.model))
        if isinstance(self.fill, str):
            object.__setattr__(self, "fill", FillPolicy.parse(self.fill))
        if self.model == "grid" and (self.rows < 1 or self.cols < 1 or self.strip_width < 0):
            raise ValueError("grid needs rows, cols >= 1 and strip_width >= 0")

    def echo(self) -> dict:
        out = asdict(self)
        out["fill"] = str(self.fill)
        if self.model == "global":
            for key in ("rows", "cols", "strip_width"):
                out.pop(key)
        return out


@dataclass
class Distortion:
    """A realized distortion of one image: the field plus its parameters."""

    field: DisplacementField
    coefficients: np.ndarray
    seed: int
    grid: GridDistortionSpec | None = None


def realize(config: DistortionConfig, width: int, height: int, seed: int) -> Distortion:
    """Sample coefficients from ``seed`` and build the field."""
    if config.model == "global":
        coeffs = sample_global_coeffs(config.sigma, RandomStream(seed))
        field_ = build_global_field(width, height, coeffs)
        return Distortion(field_, np.array([[list(coeffs)]], dtype=np.float64), seed)
    spec = build_grid_spec(width, height, config.sigma, seed, config.rows, config.cols, config.strip_width)
    return Distortion(build_grid_field(spec, width, height), np.array(spec.coeffs), seed, spec)


def make_sidecar(config: DistortionConfig, distortion: Distortion, image_id: str, crop_box=None) -> dict:
    f = distortion.field
    grid = config.model == "grid"
    return {
        "version": __version__,
        "id": image_id,
        "model": config.model,
        "sigma": config.sigma,
        "master_seed": config.master_seed,
        "image_seed": distortion.seed,
        "rng_algorithm": RNG_ALGORITHM,
        "width": f.width,
        "height": f.height,
        "rows": config.rows if grid else 1,
        "cols": config.cols if grid else 1,
        "strip_width": config.strip_width if grid else 0,
        "coefficients": distortion.coefficients.reshape(-1, 2).tolist(),
        "mean_pixel_shift": mean_pixel_shift(f),
        "fill_policy": str(config.fill),
        "crop_valid": config.crop_valid,
        "crop_box": list(crop_box) if crop_box is not None else None,
        "field_sha256": f.checksum(),
    }


def write_sidecar(path, sidecar: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_sidecar(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def rebuild_field_from_sidecar(sidecar: dict, width: int | None = None, height: int | None = None, verify: bool = True) -> DisplacementField:
    """Rebuild the displacement field recorded in ``sidecar``.

    Coefficients are taken verbatim from the sidecar.  With ``verify`` the
    result must hash to the recorded ``field_sha256``.
    """
    version = str(sidecar.get("version", ""))
    if version.split(".")[:2] != __version__.split(".")[:2]:
        raise SidecarError(f"sidecar version {version!r} is incompatible with {__version__}")
    if sidecar.get("rng_algorithm") != RNG_ALGORITHM:
        raise SidecarError(f"unsupported rng algorithm {sidecar.get('rng_algorithm')!r}")
    width = int(sidecar["width"]) if width is None else width
    height = int(sidecar["height"]) if height is None else height
    if "width" in sidecar and (width, height) != (sidecar["width"], sidecar["height"]):
        raise SidecarError(
            f"sidecar describes a {sidecar['width']}x{sidecar['height']} field, asked for {width}x{height}"
        )
    coeffs = np.asarray(sidecar["coefficients"], dtype=np.float64)
    model = sidecar["model"]
    if model == "global":
        if coeffs.shape != (1, 2):
            raise SidecarError("global sidecar must hold exactly one coefficient pair")
        field_ = build_global_field(width, height, DistortionCoefficients(*map(float, coeffs[0])))
    elif model == "grid":
        rows, cols = int(sidecar["rows"]), int(sidecar["cols"])
        if coeffs.shape != (rows * cols, 2):
            raise SidecarError(f"grid sidecar must hold {rows * cols} coefficient pairs")
        spec = GridDistortionSpec(
            patch_layout(width, height, rows, cols),
            coeffs.reshape(rows, cols, 2),
            int(sidecar["strip_width"]),
            float(sidecar["sigma"]),
            int(sidecar["image_seed"]),
        )
        field_ = build_grid_field(spec, width, height)
    else:
        raise SidecarError(f"unknown model {model!r}")
    expected = sidecar.get("field_sha256")
    if verify and expected is not None and field_.checksum() != expected:
        raise SidecarError("rebuilt field does not match the recorded checksum")
    return field_


def distort_pair(pair: LabeledPair, config: DistortionConfig, seed: int, image_id: str):
    """Distort one pair; returns ``(warped_pair, sidecar)``."""
    h, w = pair.mask.shape
    distortion = realize(config, w, h, seed)
    out = warp_pair(pair, distortion.field, config.fill)
    box = None
    if config.crop_valid:
        box = valid_crop_box(distortion.field)
        out = crop_pair(out, box)
    return out, make_sidecar(config, distortion, image_id, box)


@dataclass
class EntryResult:
    id: str
    ok: bool
    mean_pixel_shift: float | None = None
    error: str | None = None


def output_paths(out_root, image_id: str):
    out_root = Path(out_root)
    return (
        out_root / IMAGES_DIR / f"{image_id}.png",
        out_root / MASKS_DIR / f"{image_id}.png",
        out_root / IMAGES_DIR / f"{image_id}{SIDECAR_SUFFIX}",
    )


def process_entry(entry: ManifestEntry, config: DistortionConfig, out_root, ignore_label: int) -> EntryResult:
    try:
        pair = LabeledPair(read_image(entry.image_path), LabelMask(read_labels(entry.mask_path), ignore_label))
        seed = derive_image_seed(config.master_seed, entry.id)
        out, sidecar = distort_pair(pair, config, seed, entry.id)
        image_path, mask_path, sidecar_path = output_paths(out_root, entry.id)
        write_image(image_path, out.image)
        write_labels(mask_path, out.mask.labels)
        write_sidecar(sidecar_path, sidecar)
        return EntryResult(entry.id, True, sidecar["mean_pixel_shift"])
    except (OSError, ValueError) as exc:
        return EntryResult(entry.id, False, error=f"{type(exc).__name__}: {exc}")


def _process_star(args):
    return process_entry(*args)


@dataclass
class RunSummary:
    config: dict
    total: int
    succeeded: int
    failed: int
    failures: list = field(default_factory=list)
    mean_pixel_shift: float | None = None
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


def default_jobs() -> int:
    env = os.environ.get("PANESHIFT_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def distort_dataset(manifest: DatasetManifest, config: DistortionConfig, out_root, jobs: int | None = None, fail_fast: bool = False) -> RunSummary:
    """Distort every entry of ``manifest`` into ``out_root``.

    Outputs land at ``images/<id>.png``, ``annotations/<id>.png`` and
    ``images/<id>.distortion.json``; ``run_summary.json`` goes at the root.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    tasks = [(entry, config, out_root, manifest.ignore_label) for entry in manifest.entries]

    results = []
    if jobs == 1 or len(tasks) <= 1:
        for task in tasks:
            result = _process_star(task)
            results.append(result)
            if fail_fast and not result.ok:
                break
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(_process_star, tasks, chunksize=max(1, len(tasks) // (jobs * 4))):
                results.append(result)
                if fail_fast and not result.ok:
                    pool.shutdown(cancel_futures=True)
                    break

    results.sort(key=lambda r: r.id)
    failures = [{"id": r.id, "error": r.error} for r in results if not r.ok]
    for failure in failures:
        log.warning("failed to distort %s: %s", failure["id"], failure["error"])
    shifts = [r.mean_pixel_shift for r in results if r.ok]
    summary = RunSummary(
        config=config.echo(),
        total=len(manifest),
        succeeded=len(shifts),
        failed=len(manifest) - len(shifts),
        failures=failures,
        mean_pixel_shift=float(np.mean(shifts)) if shifts else None,
    )
    (out_root / SUMMARY_NAME).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary
