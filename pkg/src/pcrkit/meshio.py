"""OFF mesh parsing, point sampling, normalization, noise and cloud file I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PCRC_MAGIC = b"PCRC"
DEFAULT_POINTS = 1024
OVERSAMPLE = 10


class OffParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self) -> None:
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
            raise ValueError("face index out of range")
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "vertices", verts)


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_off(data: bytes | str) -> Mesh:
    """Parse an OFF mesh. Polygons with more than three vertices are fan-triangulated.

    Accepts the ModelNet quirk where the counts are glued to the header
    (``OFF490 518 0``).
    """
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise OffParseError("empty file", 1) from None
    if not header.startswith("OFF"):
        raise OffParseError(f"expected OFF header, got {header[:20]!r}", lineno)
    rest = header[3:].strip()
    if not rest:
        try:
            lineno, rest = next(lines)
        except StopIteration:
            raise OffParseError("missing counts line", lineno + 1) from None
    try:
        counts = [int(v) for v in rest.split()]
        n_verts, n_faces = counts[0], counts[1]
    except (ValueError, IndexError):
        raise OffParseError(f"bad counts {rest!r}", lineno) from None
    if n_verts < 0 or n_faces < 0:
        raise OffParseError("negative counts", lineno)

    verts = np.empty((n_verts, 3))
    for i in range(n_verts):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise OffParseError(f"truncated: expected {n_verts} vertices, got {i}", lineno + 1) from None
        parts = line.split()
        if len(parts) < 3:
            raise OffParseError("vertex needs 3 coordinates", lineno)
        try:
            verts[i] = [float(v) for v in parts[:3]]
        except ValueError:
            raise OffParseError(f"bad vertex {line!r}", lineno) from None

    tris: list[tuple[int, int, int]] = []
    for i in range(n_faces):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise OffParseError(f"truncated: expected {n_faces} faces, got {i}", lineno + 1) from None
        try:
            parts = [int(v) for v in line.split()]
        except ValueError:
            raise OffParseError(f"bad face {line!r}", lineno) from None
        k = parts[0] if parts else 0
        idx = parts[1 : 1 + k]
        if k < 3 or len(idx) != k:
            raise OffParseError(f"face needs at least 3 indices, got {line!r}", lineno)
        for v in idx:
            if not 0 <= v < n_verts:
                raise OffParseError(f"face index {v} out of range for {n_verts} vertices", lineno)
        for j in range(1, k - 1):
            tris.append((idx[0], idx[j], idx[j + 1]))
    return Mesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def format_off(mesh: Mesh) -> str:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    out += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    return "\n".join(out) + "\n"


def face_areas(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def area_weighted_sample(mesh: Mesh, m: int, rng: np.random.Generator) -> np.ndarray:
    areas = face_areas(mesh)
    total = areas.sum()
    if len(areas) == 0 or total <= 0:
        raise ValueError("mesh has no face with positive area")
    face_idx = rng.choice(len(areas), size=m, p=areas / total)
    r1 = np.sqrt(rng.random(m))[:, None]
    r2 = rng.random(m)[:, None]
    tri = mesh.vertices[mesh.faces[face_idx]]
    return (1 - r1) * tri[:, 0] + r1 * (1 - r2) * tri[:, 1] + r1 * r2 * tri[:, 2]


def farthest_point_sample(cloud: np.ndarray, n: int) -> np.ndarray:
    """Greedy max-min subset of ``n`` points, seeded from index 0."""
    pts = np.asarray(cloud, dtype=np.float64)
    if n > len(pts):
        raise ValueError(f"cannot pick {n} points from a cloud of {len(pts)}")
    if n <= 0:
        return pts[:0].copy()
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = 0
    dist = np.sum((pts - pts[0]) ** 2, axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return pts[chosen].copy()


def normalize_unit_box(cloud: np.ndarray) -> np.ndarray:
    """Uniformly scale into a unit cube, then move the centroid to the origin."""
    pts = np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
    if extent > 0:
        pts = pts / extent
    return pts - pts.mean(axis=0)


def add_gaussian_noise(cloud: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    pts = np.asarray(cloud, dtype=np.float64)
    return pts + rng.normal(0.0, sigma, size=pts.shape)


def sample_mesh(mesh: Mesh, n: int, rng: np.random.Generator, oversample: int = OVERSAMPLE) -> np.ndarray:
    """Area-sample ``oversample * n`` points, FPS down to ``n``, normalize."""
    dense = area_weighted_sample(mesh, oversample * n, rng)
    return normalize_unit_box(farthest_point_sample(dense, n))


def write_xyz(path: str | Path, cloud: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as f:
        for x, y, z in np.asarray(cloud, dtype=np.float64):
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path: str | Path) -> np.ndarray:
    pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if pts.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return pts


def pack_cloud(cloud: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(cloud, dtype="<f4").reshape(-1, 3)
    return PCRC_MAGIC + struct.pack("<I", len(pts)) + pts.tobytes()


def unpack_cloud(blob: bytes) -> np.ndarray:
    if blob[:4] != PCRC_MAGIC:
        raise ValueError("not a PCRC cloud")
    (count,) = struct.unpack("<I", blob[4:8])
    body = blob[8:]
    if len(body) != count * 12:
        raise ValueError(f"PCRC body holds {len(body)} bytes, expected {count * 12}")
    return np.frombuffer(body, dtype="<f4").reshape(count, 3).astype(np.float64)


def save_cloud(path: str | Path, cloud: np.ndarray) -> None:
    """Write ASCII for ``.xyz`` paths, packed binary otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".xyz":
        write_xyz(path, cloud)
    else:
        path.write_bytes(pack_cloud(cloud))


def load_cloud(path: str | Path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] == PCRC_MAGIC:
        return unpack_cloud(blob)
    return read_xyz(path)


CLOUD_SUFFIXES = (".pcrc", ".xyz")


def list_clouds(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES)
