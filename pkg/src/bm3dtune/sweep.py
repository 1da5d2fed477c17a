"""Grid sweep of the hard-threshold multiplier: per-value MSE curves, argmin
labels, and reproducible training-dataset generation with JSONL manifests."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bm3d import Bm3dProfile, denoise, profile_from_text, profile_to_text
from .imagecore import NoiseSpec, add_awgn, as_image, derive_seed, load_image, mse, save_image

__all__ = [
    "LambdaGrid",
    "SweepResult",
    "TrainingExample",
    "ManifestRecord",
    "DatasetManifest",
    "sweep_lambdas",
    "generate_dataset",
    "emit_curve",
    "load_manifest",
    "save_manifest",
]

MANIFEST_NAME = "manifest.jsonl"
PROFILE_NAME = "profile.cfg"


@dataclass(frozen=True)
class LambdaGrid:
    """The 17-point multiplier grid 1.0, 1.125, ..., 2.875, 3.0."""

    start: float = 1.0
    step: float = 0.125
    count: int = 17

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")

    def value(self, i: int) -> float:
        if not 0 <= i < self.count:
            raise IndexError(f"grid index {i} out of range [0, {self.count})")
        return self.start + i * self.step

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(self.start + i * self.step for i in range(self.count))

    def to_dict(self) -> dict:
        return {"start": self.start, "step": self.step, "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "LambdaGrid":
        return cls(start=float(d["start"]), step=float(d["step"]), count=int(d["count"]))


@dataclass
class SweepResult:
    grid: LambdaGrid
    mses: list[float]
    lambda_star: float
    mse_star: float


@dataclass
class TrainingExample:
    """One labeled pair: a noisy image and the grid value that best denoises it."""

    clean_path: str
    noisy_path: str
    sigma: float
    seed: int
    lambda_star: float


@dataclass
class ManifestRecord(TrainingExample):
    mse_star: float = 0.0
    mses: list[float] = field(default_factory=list)
    grid: LambdaGrid = field(default_factory=LambdaGrid)

    def to_json(self) -> str:
        return json.dumps(
            {
                "clean_path": self.clean_path,
                "noisy_path": self.noisy_path,
                "sigma": self.sigma,
                "seed": self.seed,
                "lambda_star": self.lambda_star,
                "mse_star": self.mse_star,
                "mses": self.mses,
                "grid": self.grid.to_dict(),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        return cls(
            clean_path=d["clean_path"],
            noisy_path=d["noisy_path"],
            sigma=float(d["sigma"]),
            seed=int(d["seed"]),
            lambda_star=float(d["lambda_star"]),
            mse_star=float(d["mse_star"]),
            mses=[float(v) for v in d["mses"]],
            grid=LambdaGrid.from_dict(d["grid"]),
        )


@dataclass
class DatasetManifest:
    """All records of a generated dataset plus the grid and BM3D profile they
    were produced with. `base_dir` anchors the records' relative paths;
    `failures` lists (clean_path, sigma, error) for skipped inputs."""

    records: list[ManifestRecord]
    grid: LambdaGrid
    profile: Bm3dProfile
    base_dir: Path
    failures: list[tuple[str, float, str]] = field(default_factory=list)

    def resolve(self, relpath: str) -> Path:
        return (self.base_dir / relpath).resolve()

    def records_for(self, sigma: float) -> list[ManifestRecord]:
        return [r for r in self.records if r.sigma == sigma]


# ---------------------------------------------------------------------------
# Sweeping
# ---------------------------------------------------------------------------

def _sweep_point(args):
    clean, noisy, sigma, lam, profile = args
    return mse(denoise(noisy, sigma, lam, profile), clean)


def sweep_lambdas(clean, noisy, sigma: float, grid: LambdaGrid | None = None,
                  profile: Bm3dProfile | None = None, workers: int = 1) -> SweepResult:
    """Denoise at every grid value and record the MSE against the clean image.

    The argmin label breaks ties toward the smaller multiplier. With
    workers > 1 the grid points run in separate processes; results are
    assembled in grid order either way.
    """
    clean = as_image(clean)
    noisy = as_image(noisy)
    if clean.shape != noisy.shape:
        raise ValueError(f"image dimensions differ: {clean.shape} vs {noisy.shape}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    grid = grid or LambdaGrid()
    profile = profile or Bm3dProfile()

    jobs = [(clean, noisy, sigma, lam, profile) for lam in grid.values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            mses = list(pool.map(_sweep_point, jobs))
    else:
        mses = [_sweep_point(job) for job in jobs]

    best = int(np.argmin(mses))  # first minimum = smallest lambda on ties
    return SweepResult(grid=grid, mses=mses,
                       lambda_star=grid.value(best), mse_star=mses[best])


def emit_curve(sweep: SweepResult, path) -> None:
    """Write the sweep as CSV: header then one "<lambda>,<mse>" row per
    grid point (lambda with 3 decimals, MSE with 6 significant digits)."""
    lines = ["lambda,mse"]
    for lam, value in zip(sweep.grid.values, sweep.mses):
        lines.append(f"{lam:.3f},{value:.6g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _dataset_job(args):
    """Corrupt one clean image at one noise level and sweep it. Returns
    either ("ok", record fields...) or ("fail", clean_path, sigma, error)."""
    clean_path, sigma, seed, noisy_path, grid, profile = args
    try:
        clean = load_image(clean_path)
        noisy = add_awgn(clean, NoiseSpec(sigma=sigma, seed=seed))
        save_image(noisy, noisy_path)
        noisy = load_image(noisy_path)  # labels describe the 8-bit file on disk
        result = sweep_lambdas(clean, noisy, sigma, grid, profile)
        return ("ok", result.mses, result.lambda_star, result.mse_star)
    except Exception as exc:  # noqa: BLE001 - per-record isolation
        return ("fail", f"{type(exc).__name__}: {exc}")


def generate_dataset(clean_dir, sigmas, base_seed: int, out_dir,
                     grid: LambdaGrid | None = None,
                     profile: Bm3dProfile | None = None,
                     workers: int = 1) -> DatasetManifest:
    """Build a labeled dataset from every PGM in `clean_dir` at every noise
    level in `sigmas`.

    Per (image, sigma): corrupt with a seed derived from (base_seed, file
    name, sigma), save the noisy PGM under out_dir/noisy/, sweep the grid,
    and append a manifest record. Reruns with the same arguments produce
    byte-identical output; failed records are skipped and reported via
    `manifest.failures`.
    """
    grid = grid or LambdaGrid()
    profile = profile or Bm3dProfile()
    clean_dir = Path(clean_dir)
    out_dir = Path(out_dir)

    clean_files = sorted(clean_dir.glob("*.pgm"))
    if not clean_files:
        raise ValueError(f"no .pgm images found in {clean_dir}")

    noisy_dir = out_dir / "noisy"
    noisy_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for clean_path in clean_files:
        for sigma in sigmas:
            if sigma <= 0:
                raise ValueError(f"sigma must be > 0, got {sigma}")
            seed = derive_seed(base_seed, clean_path.name, sigma)
            noisy_path = noisy_dir / f"{clean_path.stem}_s{sigma:g}.pgm"
            jobs.append((str(clean_path), float(sigma), seed, str(noisy_path), grid, profile))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_dataset_job, jobs))
    else:
        outcomes = [_dataset_job(job) for job in jobs]

    records: list[ManifestRecord] = []
    failures: list[tuple[str, float, str]] = []
    for job, outcome in zip(jobs, outcomes):
        clean_path, sigma, seed, noisy_path = job[:4]
        if outcome[0] == "ok":
            _, mses, lambda_star, mse_star = outcome
            records.append(ManifestRecord(
                clean_path=os.path.relpath(clean_path, out_dir),
                noisy_path=os.path.relpath(noisy_path, out_dir),
                sigma=sigma,
                seed=seed,
                lambda_star=lambda_star,
                mse_star=mse_star,
                mses=mses,
                grid=grid,
            ))
        else:
            failures.append((clean_path, sigma, outcome[1]))

    manifest = DatasetManifest(records=records, grid=grid, profile=profile,
                               base_dir=out_dir, failures=failures)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    (out_dir / PROFILE_NAME).write_text(profile_to_text(profile), encoding="ascii")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    text = "".join(record.to_json() + "\n" for record in manifest.records)
    Path(path).write_text(text, encoding="ascii")


def load_manifest(path) -> DatasetManifest:
    """Read a JSONL manifest; a profile.cfg sidecar is honored when present."""
    path = Path(path)
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ManifestRecord.from_json(line))
    grid = records[0].grid if records else LambdaGrid()
    for record in records:
        if record.grid != grid:
            raise ValueError("manifest mixes records from different grids")
    profile_path = path.parent / PROFILE_NAME
    if profile_path.exists():
        profile = profile_from_text(profile_path.read_text(encoding="ascii"))
    else:
        profile = Bm3dProfile()
    return DatasetManifest(records=records, grid=grid, profile=profile,
                           base_dir=path.parent)
