"""Hyperspectral scenes on disk and synthetic scene generation.

A scene ``<name>`` is stored as three sibling files:

``<name>.json``
    header ``{name, height, width, bands, class_count, class_names}``
``<name>.cube``
    little-endian float32 values, band-interleaved-by-pixel
    (row-major over ``height x width x bands``)
``<name>.labels``
    little-endian uint16 class indices, row-major over ``height x width``;
    index 0 is always background.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, SceneLoadError
from .ndcore import rng_stream

HEADER_KEYS = ("name", "height", "width", "bands", "class_count", "class_names")
CUBE_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u2")


@dataclass(eq=False)
class SceneCube:
    name: str
    values: np.ndarray
    class_count: int
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise ConfigurationError(
                f"scene values must be height x width x bands with bands >= 1, "
                f"got shape {self.values.shape}"
            )
        if self.class_count < 2:
            raise ConfigurationError(f"class_count must be >= 2, got {self.class_count}")
        if not self.class_names:
            self.class_names = default_class_names(self.class_count)
        if len(self.class_names) != self.class_count:
            raise ConfigurationError(
                f"{len(self.class_names)} class names for {self.class_count} classes"
            )

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]


@dataclass(eq=False)
class LabelMap:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2:
            raise ConfigurationError(f"label map must be 2-D, got shape {self.labels.shape}")

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


def default_class_names(class_count):
    return ["background"] + [f"class_{c}" for c in range(1, class_count)]


def validate_scene(scene, labels):
    if (labels.height, labels.width) != (scene.height, scene.width):
        raise ConfigurationError(
            f"label map {labels.labels.shape} does not match scene "
            f"{scene.height}x{scene.width}"
        )
    if labels.labels.size and int(labels.labels.max()) >= scene.class_count:
        raise ConfigurationError(
            f"label {int(labels.labels.max())} >= class_count {scene.class_count}"
        )
    if not np.all(np.isfinite(scene.values)):
        raise ConfigurationError("scene values contain NaN or Inf")


def scene_paths(path):
    """Return the ``(header, cube, labels)`` paths for a scene base path or header path."""
    path = Path(path)
    if path.suffix in (".json", ".cube", ".labels"):
        path = path.with_suffix("")
    return (
        path.with_name(path.name + ".json"),
        path.with_name(path.name + ".cube"),
        path.with_name(path.name + ".labels"),
    )


def save_scene(scene, labels, path):
    validate_scene(scene, labels)
    header_path, cube_path, labels_path = scene_paths(path)
    header = {
        "name": scene.name,
        "height": scene.height,
        "width": scene.width,
        "bands": scene.bands,
        "class_count": scene.class_count,
        "class_names": list(scene.class_names),
    }
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
        cube_path.write_bytes(scene.values.astype(CUBE_DTYPE, copy=False).tobytes())
        labels_path.write_bytes(labels.labels.astype(LABEL_DTYPE, copy=False).tobytes())
    except OSError as exc:
        raise OSError(f"could not write scene to {header_path.parent}: {exc}") from exc
    return header_path


def _read(path, field_name):
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise SceneLoadError(f"missing {field_name} file: {path}", field=field_name) from None


def load_scene(path):
    header_path, cube_path, labels_path = scene_paths(path)
    raw = _read(header_path, "header")
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SceneLoadError(f"{header_path}: invalid JSON ({exc})", field="header") from None
    for key in HEADER_KEYS:
        if key not in header:
            raise SceneLoadError(f"{header_path}: header missing '{key}'", field=key)
    h, w, b, c = (int(header[k]) for k in ("height", "width", "bands", "class_count"))
    if b < 1:
        raise SceneLoadError(f"{header_path}: bands must be >= 1, got {b}", field="bands")
    if c < 2:
        raise SceneLoadError(
            f"{header_path}: class_count must be >= 2, got {c}", field="class_count"
        )
    if len(header["class_names"]) != c:
        raise SceneLoadError(
            f"{header_path}: {len(header['class_names'])} class_names for class_count {c}",
            field="class_names",
        )

    cube_bytes = _read(cube_path, "cube")
    expected = h * w * b * CUBE_DTYPE.itemsize
    if len(cube_bytes) != expected:
        raise SceneLoadError(
            f"{cube_path}: size mismatch, expected {expected} bytes for "
            f"{h}x{w}x{b} float32, found {len(cube_bytes)}",
            field="cube",
        )
    label_bytes = _read(labels_path, "labels")
    expected = h * w * LABEL_DTYPE.itemsize
    if len(label_bytes) != expected:
        raise SceneLoadError(
            f"{labels_path}: size mismatch, expected {expected} bytes for "
            f"{h}x{w} uint16, found {len(label_bytes)}",
            field="labels",
        )
    values = np.frombuffer(cube_bytes, dtype=CUBE_DTYPE).reshape(h, w, b)
    label_arr = np.frombuffer(label_bytes, dtype=LABEL_DTYPE).reshape(h, w)
    if label_arr.size and int(label_arr.max()) >= c:
        raise SceneLoadError(
            f"{labels_path}: label {int(label_arr.max())} >= class_count {c}", field="labels"
        )
    if not np.all(np.isfinite(values)):
        raise SceneLoadError(f"{cube_path}: values contain NaN or Inf", field="cube")
    scene = SceneCube(header["name"], values, c, list(header["class_names"]))
    return scene, LabelMap(label_arr)


@dataclass
class SynthSpec:
    """Parameters for a synthetic scene made of square class regions.

    ``signatures`` optionally lists ``(center_band, width_bands, amplitude)`` for
    each non-background class; by default classes get evenly spaced Gaussian
    bumps along the spectral axis.
    """

    height: int = 60
    width: int = 60
    bands: int = 16
    class_count: int = 4
    noise_sigma: float = 0.05
    background_fraction: float = 0.2
    region_size: int = 4
    seed: int = 0
    base_level: float = 0.1
    background_level: float = 0.3
    signatures: list = None
    name: str = "synthetic"

    def validate(self):
        problems = []
        for key in ("height", "width", "bands", "region_size"):
            if int(getattr(self, key)) < 1:
                problems.append(f"{key} must be >= 1")
        if self.class_count < 2:
            problems.append("class_count must be >= 2")
        if not 0.0 <= self.background_fraction < 1.0:
            problems.append("background_fraction must lie in [0, 1)")
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be >= 0")
        if self.signatures is not None and len(self.signatures) != self.class_count - 1:
            problems.append(
                f"signatures must list {self.class_count - 1} (center, width, amplitude) triples"
            )
        if problems:
            raise ConfigurationError("invalid SynthSpec: " + "; ".join(problems))

    def to_dict(self):
        return asdict(self)


def class_signatures(spec):
    """Mean spectra, one row per class; row 0 is the flat background curve."""
    bands = np.arange(spec.bands, dtype=np.float64)
    n_real = spec.class_count - 1
    params = spec.signatures
    if params is None:
        spacing = spec.bands / n_real
        params = [((c + 0.5) * spacing, max(spacing / 2.0, 1.0), 1.0) for c in range(n_real)]
    curves = [np.full(spec.bands, spec.background_level)]
    for center, width, amplitude in params:
        curves.append(spec.base_level + amplitude * np.exp(-0.5 * ((bands - center) / width) ** 2))
    return np.stack(curves)


def synth_scene(spec):
    spec.validate()
    h, w, rs = spec.height, spec.width, spec.region_size
    n_rows, n_cols = -(-h // rs), -(-w // rs)
    label_rng = rng_stream(spec.seed, "synth_labels")
    is_background = label_rng.random((n_rows, n_cols)) < spec.background_fraction
    drawn = label_rng.integers(1, spec.class_count, size=(n_rows, n_cols))
    regions = np.where(is_background, 0, drawn)
    labels = np.repeat(np.repeat(regions, rs, axis=0), rs, axis=1)[:h, :w]

    values = class_signatures(spec)[labels]
    if spec.noise_sigma > 0:
        values = values + spec.noise_sigma * rng_stream(spec.seed, "synth_noise").standard_normal(
            values.shape
        )
    scene = SceneCube(spec.name, values.astype(np.float32), spec.class_count)
    return scene, LabelMap(labels)
