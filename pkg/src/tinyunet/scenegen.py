"""Synthetic nadir radar scenes of oil slicks on sea water.

Stand-in for an externally generated radar dataset. Each pixel carries the
specular power reflectance of an air / oil / sea-water stack at nine
frequencies, attenuated by wind-driven surface roughness and perturbed by
multiplicative Gaussian noise. Labels are the slick thickness in whole
millimetres (class 0 is clean water, 1..10 are slick thicknesses).

All physical constants below are surrogate choices, documented where they
are defined.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

C0 = 299_792_458.0
EPS0 = 8.854_187_8128e-12
NUM_CLASSES = 11

# Fraction of a scene set held out for validation (51 of 555 scenes).
VAL_FRACTION = 51 / 555

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "tinyunet-sceneset"


class DataError(Exception):
    """Dataset on disk is missing, malformed or fails its checksum."""


@dataclass(frozen=True)
class RadarConfig:
    frequencies_ghz: tuple = tuple(float(f) for f in range(4, 13))
    incidence_deg: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.frequencies_ghz, dtype=float)
        if f.size != 9:
            raise ValueError(f"expected 9 radar channels, got {f.size}")
        if np.any(np.diff(f) <= 0):
            raise ValueError("radar frequencies must be strictly increasing")
        if self.incidence_deg != 0.0:
            raise ValueError("only nadir incidence is modelled")

    @property
    def frequencies_hz(self) -> np.ndarray:
        return np.asarray(self.frequencies_ghz, dtype=float) * 1e9


@dataclass(frozen=True)
class SceneConfig:
    width: int = 32
    length: int = 32
    wind_speed: float = 5.0
    oil_permittivity: float = 3.0
    water_temp: float = 20.0
    salinity: float = 35.0
    # rms surface height per unit wind speed, metres per (m/s)
    rms_height_coeff: float = 1.0e-4
    # relative multiplicative noise
    noise_std: float = 0.01
    max_blobs: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 2.0 <= self.wind_speed <= 8.0:
            raise ValueError(f"wind speed {self.wind_speed} outside [2, 8] m/s")
        if self.width < 1 or self.length < 1:
            raise ValueError("scene grid must be at least 1x1")
        if self.noise_std < 0 or self.rms_height_coeff < 0:
            raise ValueError("noise_std and rms_height_coeff must be non-negative")
        if self.max_blobs < 0:
            raise ValueError("max_blobs must be >= 0 (0 gives clean water)")


@dataclass
class SceneSet:
    """Aligned radar cubes (9, W, L) and label maps (W, L)."""

    cubes: list
    labels: list
    configs: list = field(default_factory=list)
    indices: list = field(default_factory=list)

    def __len__(self):
        return len(self.cubes)

    def inputs(self) -> np.ndarray:
        return np.stack(self.cubes).astype(np.float32)

    def targets(self) -> np.ndarray:
        return np.stack(self.labels).astype(np.int64)

    def subset(self, idx) -> "SceneSet":
        idx = list(idx)
        return SceneSet(
            [self.cubes[i] for i in idx],
            [self.labels[i] for i in idx],
            [self.configs[i] for i in idx] if self.configs else [],
            [self.indices[i] for i in idx] if self.indices else [],
        )


# ---------------------------------------------------------------------------
# Dielectric and scattering models
# ---------------------------------------------------------------------------

def _static_permittivity(t, s):
    # Klein & Swift (1977) fit for sea water
    eps_t = 87.134 - 1.949e-1 * t - 1.276e-2 * t**2 + 2.491e-4 * t**3
    a = 1.0 + 1.613e-5 * t * s - 3.656e-3 * s + 3.210e-5 * s**2 - 4.232e-7 * s**3
    return eps_t * a


def _relaxation_time(t, s):
    tau_t = 1.1109e-10 - 3.824e-12 * t + 6.938e-14 * t**2 - 5.096e-16 * t**3
    b = 1.0 + 2.282e-5 * t * s - 7.638e-4 * s - 7.760e-6 * s**2 + 1.105e-8 * s**3
    return tau_t * b / (2 * math.pi)


def _ionic_conductivity(t, s):
    if s == 0:
        return 0.0
    sigma25 = s * (0.182521 - 1.46192e-3 * s + 2.09324e-5 * s**2 - 1.28205e-7 * s**3)
    d = 25.0 - t
    alpha = (2.033e-2 + 1.266e-4 * d + 2.464e-6 * d**2
             - s * (1.849e-5 - 2.551e-7 * d + 2.551e-8 * d**2))
    return sigma25 * math.exp(-d * alpha)


def water_permittivity(frequency, temp=20.0, salinity=35.0, conductivity=True):
    """Complex relative permittivity of sea water (single Debye relaxation).

    Uses the Klein-Swift coefficient fits with a high-frequency limit of 4.9
    and an ionic conduction loss term. Imaginary part is non-negative
    (``exp(-i omega t)`` convention). ``conductivity=False`` drops the
    conduction term.
    """
    f = np.asarray(frequency, dtype=float)
    eps_inf = 4.9
    eps_s = _static_permittivity(temp, salinity)
    tau = _relaxation_time(temp, salinity)
    omega = 2 * math.pi * f
    eps = eps_inf + (eps_s - eps_inf) / (1 - 1j * omega * tau)
    if conductivity:
        eps = eps + 1j * _ionic_conductivity(temp, salinity) / (omega * EPS0)
    return eps


def layered_reflectance(thickness_mm, frequency, oil_eps=3.0, water_eps=None):
    """Power reflectance |r|^2 of an air / oil slab / water stack at normal incidence.

    ``water_eps`` defaults to :func:`water_permittivity` at 20 C, 35 ppt.
    Broadcasts over ``thickness_mm`` and ``frequency`` (Hz).
    """
    d = np.asarray(thickness_mm, dtype=float) * 1e-3
    if np.any(d < 0):
        raise ValueError("thickness must be non-negative")
    f = np.asarray(frequency, dtype=float)
    if water_eps is None:
        water_eps = water_permittivity(f)
    n_oil = np.sqrt(np.asarray(oil_eps, dtype=complex))
    n_w = np.sqrt(np.asarray(water_eps, dtype=complex))
    r12 = (1 - n_oil) / (1 + n_oil)
    r23 = (n_oil - n_w) / (n_oil + n_w)
    beta = 2 * math.pi * f * n_oil / C0
    # round-trip phase; decays for lossy oil under the Im >= 0 convention
    phase = np.exp(2j * beta * d)
    r = (r12 + r23 * phase) / (1 + r12 * r23 * phase)
    return np.abs(r) ** 2


def roughness_attenuation(wind_speed, frequency, coeff):
    """Coherent specular loss exp(-(2 k sigma)^2) with sigma = coeff * wind."""
    k = 2 * math.pi * np.asarray(frequency, dtype=float) / C0
    sigma = coeff * np.asarray(wind_speed, dtype=float)
    return np.exp(-((2 * k * sigma) ** 2))


def class_signatures(scene_cfg: SceneConfig, radar_cfg: RadarConfig | None = None):
    """Noise-free 9-channel signal for each thickness class, shape (11, 9)."""
    radar_cfg = radar_cfg or RadarConfig()
    f = radar_cfg.frequencies_hz
    eps_w = water_permittivity(f, scene_cfg.water_temp, scene_cfg.salinity)
    d = np.arange(NUM_CLASSES, dtype=float)[:, None]
    refl = layered_reflectance(d, f[None, :], scene_cfg.oil_permittivity, eps_w[None, :])
    return refl * roughness_attenuation(scene_cfg.wind_speed, f, scene_cfg.rms_height_coeff)[None, :]


def check_signatures(sig, min_gap=1e-4):
    """Raise if any two class signatures differ by less than ``min_gap`` in every channel."""
    gaps = np.abs(sig[:, None, :] - sig[None, :, :]).max(axis=-1)
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < min_gap:
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        raise ValueError(f"thickness classes {i} and {j} are indistinguishable (gap {gaps.min():.2e})")
    return gaps


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

def slick_thickness_map(width, length, rng, max_blobs=3):
    """Integer thickness map (mm) from thresholded anisotropic Gaussian bumps."""
    yy, xx = np.meshgrid(np.arange(width), np.arange(length), indexing="ij")
    field_mm = np.zeros((width, length))
    n_blobs = int(rng.integers(1, max_blobs + 1)) if max_blobs > 0 else 0
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, width), rng.uniform(0, length)
        sy, sx = rng.uniform(0.12, 0.3, size=2) * np.array([width, length])
        theta = rng.uniform(0, math.pi)
        peak = rng.uniform(4.0, 11.0)
        dy, dx = yy - cy, xx - cx
        u = math.cos(theta) * dy + math.sin(theta) * dx
        v = -math.sin(theta) * dy + math.cos(theta) * dx
        bump = peak * np.exp(-0.5 * ((u / sy) ** 2 + (v / sx) ** 2))
        field_mm = np.maximum(field_mm, bump)
    return np.clip(np.floor(field_mm + 0.5), 0, NUM_CLASSES - 1).astype(np.uint8)


def generate_scene(scene_cfg: SceneConfig, radar_cfg: RadarConfig | None = None):
    """Return ``(cube, labels)``: float32 (9, W, L) reflectance and uint8 (W, L) classes."""
    radar_cfg = radar_cfg or RadarConfig()
    rng = np.random.default_rng(scene_cfg.seed)
    labels = slick_thickness_map(scene_cfg.width, scene_cfg.length, rng, scene_cfg.max_blobs)
    sig = class_signatures(scene_cfg, radar_cfg)
    check_signatures(sig)
    cube = sig[labels].transpose(2, 0, 1)
    if scene_cfg.noise_std > 0:
        cube = cube * (1.0 + rng.normal(0.0, scene_cfg.noise_std, size=cube.shape))
    return cube.astype(np.float32), labels


def split_sizes(count):
    n_val = math.ceil(count * VAL_FRACTION)
    return count - n_val, n_val


def scene_seed(master_seed, index):
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def scene_configs(count, master_seed, base: SceneConfig | None = None, wind_range=(2.0, 8.0)):
    """Per-scene configs; wind and seed depend only on (master_seed, index)."""
    base = base or SceneConfig()
    out = []
    for i in range(count):
        seed = scene_seed(master_seed, i)
        wind = float(np.random.default_rng([seed, 1]).uniform(*wind_range))
        out.append(replace(base, seed=seed, wind_speed=wind))
    return out


def generate_set(count, master_seed=0, base: SceneConfig | None = None,
                 radar_cfg: RadarConfig | None = None, wind_range=(2.0, 8.0)):
    """Generate ``count`` scenes and split them into (train, val) SceneSets.

    The last ``ceil(count * 51/555)`` scene indices form the validation split.
    """
    if count < 2:
        raise ValueError("need at least 2 scenes for a train/val split")
    cfgs = scene_configs(count, master_seed, base, wind_range)
    cubes, labels = zip(*(generate_scene(c, radar_cfg) for c in cfgs))
    full = SceneSet(list(cubes), list(labels), cfgs, list(range(count)))
    n_train, _ = split_sizes(count)
    return full.subset(range(n_train)), full.subset(range(n_train, count))


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------

def _record_bytes(cube, labels):
    return np.ascontiguousarray(cube, dtype="<f4").tobytes() + np.ascontiguousarray(labels, dtype=np.uint8).tobytes()


def _manifest_digest(manifest):
    body = {k: v for k, v in manifest.items() if k != "checksum"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def save_set(out_dir, train: SceneSet, val: SceneSet, master_seed, radar_cfg=None, wind_range=(2.0, 8.0)):
    """Write per-scene binary records plus a JSON manifest; returns the manifest path."""
    radar_cfg = radar_cfg or RadarConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = []
    for split, ss in (("train", train), ("val", val)):
        for idx, cfg, cube, lab in zip(ss.indices, ss.configs, ss.cubes, ss.labels):
            name = f"scene_{idx:05d}.bin"
            data = _record_bytes(cube, lab)
            (out / name).write_bytes(data)
            scenes.append({
                "index": idx, "split": split, "file": name,
                "seed": cfg.seed, "wind_speed": cfg.wind_speed,
                "sha256": hashlib.sha256(data).hexdigest(),
            })
    base = asdict(train.configs[0])
    base.pop("seed")
    base.pop("wind_speed")
    manifest = {
        "format": FORMAT_TAG,
        "version": 1,
        "master_seed": master_seed,
        "count": len(scenes),
        "radar": asdict(radar_cfg),
        "scene": base,
        "wind_range": list(wind_range),
        "scenes": scenes,
    }
    manifest["radar"]["frequencies_ghz"] = list(radar_cfg.frequencies_ghz)
    manifest["checksum"] = _manifest_digest(manifest)
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(data_dir):
    path = Path(data_dir) / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"no manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise DataError(f"{path} is not a scene-set manifest")
    if manifest.get("checksum") != _manifest_digest(manifest):
        raise DataError(f"manifest checksum mismatch in {path}")
    return manifest


def load_set(data_dir):
    """Load (train, val) SceneSets, verifying manifest and record checksums."""
    manifest = read_manifest(data_dir)
    base = dict(manifest["scene"])
    w, l = base["width"], base["length"]
    n_cube = 9 * w * l * 4
    sets = {"train": SceneSet([], [], [], []), "val": SceneSet([], [], [], [])}
    for rec in manifest["scenes"]:
        path = Path(data_dir) / rec["file"]
        if not path.is_file():
            raise DataError(f"missing scene record {path}")
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != rec["sha256"] or len(data) != n_cube + w * l:
            raise DataError(f"scene record {path} is corrupt")
        cube = np.frombuffer(data[:n_cube], dtype="<f4").reshape(9, w, l).astype(np.float32)
        labels = np.frombuffer(data[n_cube:], dtype=np.uint8).reshape(w, l).copy()
        ss = sets[rec["split"]]
        ss.cubes.append(cube)
        ss.labels.append(labels)
        ss.configs.append(SceneConfig(**base, seed=rec["seed"], wind_speed=rec["wind_speed"]))
        ss.indices.append(rec["index"])
    return sets["train"], sets["val"]


def regenerate(data_dir, out_dir):
    """Rebuild a scene set from a manifest alone (seeds and configs)."""
    manifest = read_manifest(data_dir)
    radar = RadarConfig(tuple(manifest["radar"]["frequencies_ghz"]), manifest["radar"]["incidence_deg"])
    base = SceneConfig(**manifest["scene"])
    train, val = generate_set(manifest["count"], manifest["master_seed"], base, radar,
                              tuple(manifest["wind_range"]))
    return save_set(out_dir, train, val, manifest["master_seed"], radar, tuple(manifest["wind_range"]))


def write_pgm(path, labels, scale=25):
    """Write a label map as a binary greyscale PGM (class * ``scale``)."""
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError("label map must be 2-D")
    img = np.clip(lab.astype(np.int64) * scale, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return os.fspath(path)
