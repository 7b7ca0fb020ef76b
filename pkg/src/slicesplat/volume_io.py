"""Slice-stack ingestion, manifest parsing, and image/volume plumbing.

The canonical on-disk format is 8-bit binary PGM (P5); PNG is accepted for
ingestion. A manifest is plain `key = value` text with `#` comments; every
path inside it is resolved relative to the manifest's directory. Held-out
slices produced by z-subsampling live outside the observed SliceStack so
training code cannot touch them.
"""

import fnmatch
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .model import timestamp_of_slice


@dataclass
class SliceStack:
    """Observed slices only; timestamps strictly increasing in [0, 1]."""

    slices: list
    timestamps: np.ndarray
    anisotropy: int = 1
    pixel_size_nm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.slices) < 2:
            raise ValueError("a slice stack needs at least 2 observed slices")
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.slices) != self.timestamps.size:
            raise ValueError("slice/timestamp count mismatch")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        first = self.slices[0].shape
        for i, s in enumerate(self.slices):
            if s.shape != first:
                raise ValueError(f"slice {i} has shape {s.shape}, "
                                 f"expected {first}")

    @property
    def n(self) -> int:
        return len(self.slices)

    @property
    def height(self) -> int:
        return self.slices[0].shape[0]

    @property
    def width(self) -> int:
        return self.slices[0].shape[1]


@dataclass
class HeldOutEntry:
    """One withheld ground-truth slice: full-stack index and timestamp."""

    index: int
    t: float
    image: np.ndarray = None
    filename: str = ""


# -- manifest -----------------------------------------------------------------

def _parse_triple(text: str):
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError(f"expected three numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_bool(text: str):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# key -> (parser, default); None default means "unset"
MANIFEST_SCHEMA = {
    "slices_dir": (str, None),
    "pattern": (str, "*.pgm"),
    "width": (int, None),
    "height": (int, None),
    "anisotropy": (int, 6),
    "pixel_size_nm": (_parse_triple, (1.0, 1.0, 1.0)),
    "out_dir": (str, "out"),
    "seed": (int, 0),
    # model / network
    "init_gaussians": (int, 1000),
    "init_scale_px": (float, 1.5),
    "init_opacity": (float, 0.1),
    "net_width": (int, 128),
    "net_depth": (int, 6),
    "l_pos": (int, 10),
    "l_time": (int, 6),
    "mean_scale_frac": (float, 0.1),
    # training stages
    "warmup_iters": (int, 2000),
    "joint_iters": (int, 1000),
    "pseudo_iters": (int, 15000),
    "ema_decay": (float, 0.995),
    "dssim_weight": (float, 0.2),
    "pseudo_ramp_end": (int, 10000),
    "pseudo_w_lo": (float, 0.1),
    "pseudo_w_hi": (float, 1.0),
    "pseudo_ramp_exponential": (_parse_bool, False),
    "pseudo_frac_start": (float, 0.2),
    "pseudo_frac_end": (float, 0.5),
    # learning rates
    "lr_position": (float, 1.6e-4),
    "lr_position_final": (float, 1.6e-6),
    "lr_scale": (float, 5e-3),
    "lr_rotation": (float, 1e-3),
    "lr_opacity": (float, 5e-2),
    "lr_intensity": (float, 2.5e-3),
    "lr_deform": (float, 8e-4),
    "lr_deform_final": (float, 1.6e-6),
    # density control
    "densify_from": (int, 500),
    "densify_until": (int, 3000),
    "densify_every": (int, 100),
    "opacity_reset_at": (int, 1500),
    "grad_threshold": (float, 2e-4),
    "max_clone_scale_px": (float, 4.0),
    "split_factor": (float, 1.6),
    "prune_opacity": (float, 0.005),
    "cap_factor": (float, 4.0),
    # output cadence
    "checkpoint_every": (int, 5000),
    "log_every": (int, 1),
}


@dataclass
class Manifest:
    """Typed key-value config; unknown keys are rejected at parse time."""

    values: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".") -> "Manifest":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"manifest line {lineno}: expected "
                                 f"'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in MANIFEST_SCHEMA:
                raise ValueError(f"manifest line {lineno}: unknown key "
                                 f"{key!r}")
            parser, _ = MANIFEST_SCHEMA[key]
            try:
                values[key] = parser(val)
            except ValueError as exc:
                raise ValueError(f"manifest line {lineno}: bad value for "
                                 f"{key!r}: {exc}") from exc
        return cls(values, base_dir)

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path, "r") as fh:
            text = fh.read()
        return cls.from_text(text, os.path.dirname(os.path.abspath(path)))

    def get(self, key: str):
        if key not in MANIFEST_SCHEMA:
            raise KeyError(f"unknown manifest key {key!r}")
        return self.values.get(key, MANIFEST_SCHEMA[key][1])

    def set(self, key: str, value) -> None:
        if key not in MANIFEST_SCHEMA:
            raise KeyError(f"unknown manifest key {key!r}")
        self.values[key] = value

    def resolve_path(self, key: str) -> str:
        val = self.get(key)
        if val is None:
            raise ValueError(f"manifest key {key!r} is required but unset")
        return os.path.normpath(os.path.join(self.base_dir, val))

    def resolved_text(self) -> str:
        """Every key with its effective value, defaults included."""
        lines = []
        for key in MANIFEST_SCHEMA:
            val = self.get(key)
            if val is None:
                continue
            if isinstance(val, tuple):
                val = " ".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines)

    def to_text(self) -> str:
        """Only explicitly set keys, for writing manifests to disk."""
        lines = []
        for key in MANIFEST_SCHEMA:
            if key in self.values:
                val = self.values[key]
                if isinstance(val, tuple):
                    val = " ".join(str(v) for v in val)
                lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


# -- image files --------------------------------------------------------------

def write_slice(image: np.ndarray, path) -> None:
    """Clamp to [0,1], quantize round-half-up to 8 bits, write PGM P5."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("write_slice expects a 2D image")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5)
    data = np.clip(q, 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comments
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    payload = data[pos:pos + w * h]
    if len(payload) != w * h:
        raise ValueError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w) / 255.0


def read_slice(path) -> np.ndarray:
    """Load one grayscale slice (PGM P5 or PNG) as float64 in [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return _read_pgm(path)
    from PIL import Image
    with Image.open(path) as img:
        gray = img.convert("L")
        return np.asarray(gray, dtype=np.float64) / 255.0


def load_stack(manifest: Manifest) -> SliceStack:
    """Read all slices matching the manifest pattern, filename order."""
    directory = manifest.resolve_path("slices_dir")
    pattern = manifest.get("pattern")
    try:
        names = sorted(n for n in os.listdir(directory)
                       if fnmatch.fnmatch(n, pattern))
    except OSError as exc:
        raise ValueError(f"cannot list slices_dir {directory!r}: {exc}") \
            from exc
    if len(names) < 2:
        raise ValueError(f"{directory}: found {len(names)} slices matching "
                         f"{pattern!r}, need at least 2")
    slices = []
    for name in names:
        path = os.path.join(directory, name)
        try:
            img = read_slice(path)
        except Exception as exc:
            raise ValueError(f"cannot read slice {path}: {exc}") from exc
        if slices and img.shape != slices[0].shape:
            raise ValueError(f"{path}: dimensions {img.shape} differ from "
                             f"first slice {slices[0].shape}")
        slices.append(img)
    for key, dim in (("width", slices[0].shape[1]),
                     ("height", slices[0].shape[0])):
        want = manifest.get(key)
        if want is not None and want != dim:
            raise ValueError(f"manifest {key}={want} but slices are {dim}")
    n = len(slices)
    ts = np.array([timestamp_of_slice(k, n) for k in range(n)])
    return SliceStack(slices, ts, manifest.get("anisotropy"),
                      manifest.get("pixel_size_nm"))


# -- volumes and subsampling ---------------------------------------------------

def stack_from_volume(volume: np.ndarray,
                      pixel_size_nm=(1.0, 1.0, 1.0)) -> SliceStack:
    """Full isotropic stack: one observed slice per z plane."""
    volume = np.asarray(volume, dtype=np.float64)
    d = volume.shape[0]
    ts = np.array([timestamp_of_slice(k, d) for k in range(d)])
    return SliceStack([volume[k] for k in range(d)], ts, 1, pixel_size_nm)


def subsample_z(full: SliceStack, a: int):
    """Keep every a-th slice as observed; everything else becomes held out.

    Held-out timestamps sit on the fractional grid between observed
    neighbors: full index j maps to t = j / (a * (n_obs - 1)).
    """
    a = int(a)
    if a < 2:
        raise ValueError("anisotropy factor must be >= 2")
    n = full.n
    if (n - 1) % a != 0:
        raise ValueError(f"stack of {n} slices cannot be subsampled by "
                         f"a={a}: need (n - 1) divisible by a")
    observed_idx = list(range(0, n, a))
    n_obs = len(observed_idx)
    obs_ts = np.array([timestamp_of_slice(k, n_obs) for k in range(n_obs)])
    observed = SliceStack([full.slices[j] for j in observed_idx], obs_ts,
                          a, full.pixel_size_nm)
    held = []
    for j in range(n):
        if j % a == 0:
            continue
        t = j / (a * (n_obs - 1))
        held.append(HeldOutEntry(index=j, t=t, image=full.slices[j]))
    return observed, held


def trilinear_slice(volume: np.ndarray, t: float) -> np.ndarray:
    """Ground-truth slice at normalized depth t in [0, 1] by z blending."""
    volume = np.asarray(volume, dtype=np.float64)
    d = volume.shape[0]
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    z = t * (d - 1)
    z0 = int(math.floor(z))
    z1 = min(z0 + 1, d - 1)
    f = z - z0
    return (1.0 - f) * volume[z0] + f * volume[z1]


# -- interpolation baselines ---------------------------------------------------

def nearest_slice(stack: SliceStack, t: float) -> np.ndarray:
    """Copy of the observed slice with the closest timestamp (ties: lower)."""
    diffs = np.abs(stack.timestamps - t)
    return stack.slices[int(np.argmin(diffs))].copy()


def linear_blend(stack: SliceStack, t: float) -> np.ndarray:
    """Linear interpolation between the two flanking observed slices."""
    ts = stack.timestamps
    if t <= ts[0]:
        return stack.slices[0].copy()
    if t >= ts[-1]:
        return stack.slices[-1].copy()
    k = int(np.searchsorted(ts, t, side="right") - 1)
    k = min(k, stack.n - 2)
    w = (t - ts[k]) / (ts[k + 1] - ts[k])
    return (1.0 - w) * stack.slices[k] + w * stack.slices[k + 1]


# -- held-out map files ---------------------------------------------------------

def write_heldout(entries, map_path, image_dir) -> None:
    """Write held-out images as PGM plus a text map: `index t filename`."""
    os.makedirs(image_dir, exist_ok=True)
    with open(map_path, "w") as fh:
        for e in entries:
            name = e.filename or f"heldout_{e.index:04d}.pgm"
            write_slice(e.image, os.path.join(image_dir, name))
            fh.write(f"{e.index} {e.t:.12g} {name}\n")


def read_heldout(map_path, image_dir) -> list:
    entries = []
    with open(map_path, "r") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            idx, t, name = line.split()
            img = read_slice(os.path.join(image_dir, name))
            entries.append(HeldOutEntry(int(idx), float(t), img, name))
    return entries
