"""Point clouds: container, file parsing, normalization and synthetic shapes."""
import csv
import io
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateCloudError, ParseError
from .rng import stream

SHAPES = ("sphere", "cube", "cylinder", "torus")


@dataclass(frozen=True)
class PointCloud:
    """``N`` points in 3D with an optional class label.

    ``scale`` is the cumulative factor applied by :func:`normalize`;
    a length in normalized units divided by ``scale`` is a length in the
    file's original units.
    """

    points: np.ndarray
    label: int | None = None
    id: str = ""
    scale: float = 1.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points):
        return replace(self, points=points)


@dataclass
class LabeledDataset:
    samples: list
    class_names: list
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = len(self.class_names)
        seen = set()
        for s in self.samples:
            if s.label is None or not 0 <= s.label < c:
                raise ValueError(f"sample {s.id!r} has label {s.label} outside [0, {c})")
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)


# ---------------------------------------------------------------- parsing


def _as_text(source):
    if isinstance(source, str):
        return source
    if hasattr(source, "read"):
        return source.read()
    raise TypeError("expected a string or a readable text stream")


def _content_lines(text):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield num, line.split()


def _floats(tokens, num):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric coordinate in {' '.join(tokens)!r}", num) from None


def parse_off(source, label=None, id=""):
    """Read the vertices of an OFF file; faces are checked for count and dropped.

    Accepts the common ``OFF<nv> <nf> <ne>`` header variant where the counts
    follow the magic token without a newline.
    """
    lines = _content_lines(_as_text(source))
    try:
        num, tokens = next(lines)
    except StopIteration:
        raise ParseError("empty input, expected 'OFF' header", 1) from None
    head = tokens[0]
    if not head.startswith("OFF"):
        raise ParseError(f"expected 'OFF' header, got {head!r}", num)
    rest = tokens[1:]
    if head != "OFF":
        rest = [head[3:]] + rest
    if not rest:
        try:
            num, rest = next(lines)
        except StopIteration:
            raise ParseError("missing vertex/face counts", num + 1) from None
    if len(rest) < 2:
        raise ParseError("header needs vertex and face counts", num)
    try:
        n_verts, n_faces = int(rest[0]), int(rest[1])
    except ValueError:
        raise ParseError(f"counts must be integers, got {' '.join(rest)!r}", num) from None
    if n_verts < 0 or n_faces < 0:
        raise ParseError("counts must be non-negative", num)
    if n_verts == 0:
        raise ParseError("file declares zero vertices; a point cloud needs at least one", num)

    verts = []
    for _ in range(n_verts):
        try:
            num, tokens = next(lines)
        except StopIteration:
            raise ParseError(
                f"declared {n_verts} vertices but found {len(verts)}", num + 1
            ) from None
        if len(tokens) < 3:
            raise ParseError("vertex line needs three coordinates", num)
        verts.append(_floats(tokens[:3], num))
    for f in range(n_faces):
        try:
            num, tokens = next(lines)
        except StopIteration:
            raise ParseError(f"declared {n_faces} faces but found {f}", num + 1) from None
        try:
            int(tokens[0])
        except ValueError:
            raise ParseError(f"face line must start with a vertex count, got {tokens[0]!r}", num) from None
    return PointCloud(np.array(verts), label=label, id=id)


def parse_xyz(source, label=None, id=""):
    """One point per non-empty line; columns past the third are ignored."""
    pts = []
    for num, tokens in _content_lines(_as_text(source)):
        if len(tokens) < 3:
            raise ParseError("expected at least three numbers", num)
        pts.append(_floats(tokens[:3], num))
    if not pts:
        raise ParseError("no points found", 1)
    return PointCloud(np.array(pts), label=label, id=id)


def parse_csv(source, label=None, id=""):
    """CSV with a header containing ``x,y,z`` columns."""
    reader = csv.reader(io.StringIO(_as_text(source)))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty CSV", 1) from None
    try:
        cols = [header.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ParseError(f"CSV header must contain x,y,z, got {header}", 1) from None
    pts = []
    for num, row in enumerate(reader, start=2):
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) <= max(cols):
            raise ParseError("too few columns", num)
        pts.append(_floats([row[c] for c in cols], num))
    if not pts:
        raise ParseError("no points found", 2)
    return PointCloud(np.array(pts), label=label, id=id)


def format_xyz(cloud):
    """XYZ text using ``repr`` floats, so parsing it back is exact."""
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist())


_READERS = {".off": parse_off, ".xyz": parse_xyz, ".pts": parse_xyz, ".txt": parse_xyz, ".csv": parse_csv}


def read_cloud(path, label=None, id=None):
    ext = os.path.splitext(path)[1].lower()
    if ext not in _READERS:
        raise ParseError(f"unsupported file extension {ext!r} for {path}")
    with open(path, encoding="utf-8") as fh:
        return _READERS[ext](fh, label=label, id=id if id is not None else path)


def load_manifest(path, split="test", class_names=None):
    """Dataset from a manifest of ``path,label`` lines (paths relative to the manifest)."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for num, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.rsplit(",", 1)]
            if len(parts) != 2:
                raise ParseError("expected 'path,label'", num)
            try:
                entries.append((parts[0], int(parts[1])))
            except ValueError:
                raise ParseError(f"label must be an integer, got {parts[1]!r}", num) from None
    if not entries:
        raise ParseError(f"manifest {path} lists no samples")
    n_classes = max(lbl for _, lbl in entries) + 1
    if class_names is None:
        class_names = [str(c) for c in range(n_classes)]
    samples = []
    for rel, lbl in entries:
        full = rel if os.path.isabs(rel) else os.path.join(base, rel)
        samples.append(normalize(read_cloud(full, label=lbl, id=rel)))
    return LabeledDataset(samples, list(class_names), split=split)


# ---------------------------------------------------------- normalization


def normalize(cloud):
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    radius = float(np.sqrt((centered**2).sum(axis=1)).max())
    if not radius > 0.0:
        raise DegenerateCloudError(f"cloud {cloud.id!r}: all points coincide")
    out = centered / radius
    # a second pass absorbs rounding so normalize is idempotent to ~1e-16
    out = out - out.mean(axis=0)
    r2 = float(np.sqrt((out**2).sum(axis=1)).max())
    out = out / r2
    return replace(cloud, points=out, scale=cloud.scale / (radius * r2))


# ---------------------------------------------------------- synthetic data


def _surface_sample(kind, n, rng):
    """Uniform samples on a centrally symmetric surface, in antipodal pairs."""
    half = (n + 1) // 2
    if kind == "sphere":
        v = rng.standard_normal((half, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
    elif kind == "cube":
        face_axis = rng.integers(0, 3, size=half)
        sign = np.where(rng.random(half) < 0.5, -1.0, 1.0)
        pts = rng.uniform(-1.0, 1.0, size=(half, 3))
        pts[np.arange(half), face_axis] = sign
    elif kind == "cylinder":
        radius, height = 0.5, 2.0
        side, cap = 2 * math.pi * radius * height, 2 * math.pi * radius**2
        on_side = rng.random(half) < side / (side + cap)
        theta = rng.uniform(0.0, 2 * math.pi, size=half)
        rho = np.where(on_side, radius, radius * np.sqrt(rng.random(half)))
        z_side = rng.uniform(-height / 2, height / 2, size=half)
        z_cap = np.where(rng.random(half) < 0.5, -height / 2, height / 2)
        pts = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), np.where(on_side, z_side, z_cap)])
    elif kind == "torus":
        big, small = 1.0, 0.3
        tube = np.empty(0)
        while tube.size < half:
            cand = rng.uniform(0.0, 2 * math.pi, size=2 * half)
            keep = rng.random(2 * half) * (big + small) < big + small * np.cos(cand)
            tube = np.concatenate([tube, cand[keep]])
        tube = tube[:half]
        phi = rng.uniform(0.0, 2 * math.pi, size=half)
        ring = big + small * np.cos(tube)
        pts = np.column_stack([ring * np.cos(phi), ring * np.sin(phi), small * np.sin(tube)])
    else:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPES}")
    return np.concatenate([pts, -pts])[:n]


def generate_shape(kind, n_points, noise_std=0.0, seed=0, label=None, id=None, normalized=True):
    """Sample a noisy synthetic surface, deterministic in all arguments."""
    if kind not in SHAPES:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPES}")
    if n_points < 8:
        raise ValueError("n_points must be at least 8")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = stream(seed, "shape", kind, int(n_points))
    pts = _surface_sample(kind, n_points, rng)
    if noise_std > 0:
        pts = pts + noise_std * rng.standard_normal(pts.shape)
    cloud = PointCloud(pts, label=label, id=id if id is not None else f"{kind}-{seed}")
    return normalize(cloud) if normalized else cloud


def synthetic_dataset(split="train", n_samples=200, n_points=128, noise_std=0.02, seed=0, kinds=SHAPES):
    """Balanced dataset over ``kinds``; sample ``j`` has class ``j % len(kinds)``."""
    samples = []
    for j in range(n_samples):
        c = j % len(kinds)
        sample_seed = int(stream(seed, "dataset", split, j).integers(0, 2**62))
        samples.append(
            generate_shape(kinds[c], n_points, noise_std, sample_seed, label=c, id=f"{split}-{j:05d}")
        )
    return LabeledDataset(samples, list(kinds), split=split, meta={"seed": seed, "n_points": n_points})
