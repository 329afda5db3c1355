"""Procedural OFF meshes standing in for ModelNet models in tests and demos.

Each model is a union of axis-aligned boxes, emitted as quad faces so the OFF
text exercises fan triangulation.
"""

from __future__ import annotations

_BOX_FACES = [
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (2, 3, 7, 6),
    (1, 2, 6, 5),
    (0, 4, 7, 3),
]


def _boxes_to_off(boxes: list[tuple[tuple[float, float, float], tuple[float, float, float]]]) -> str:
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, ...]] = []
    for (x0, y0, z0), (x1, y1, z1) in boxes:
        base = len(verts)
        verts += [
            (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
            (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
        ]
        faces += [tuple(base + i for i in f) for f in _BOX_FACES]
    lines = ["OFF", f"{len(verts)} {len(faces)} 0"]
    lines += [f"{x:g} {y:g} {z:g}" for x, y, z in verts]
    lines += [f"{len(f)} " + " ".join(str(i) for i in f) for f in faces]
    return "\n".join(lines) + "\n"


def chair_off() -> str:
    """Chair with one armrest and a lamp-like post, so it has no mirror symmetry."""
    legs = [
        ((x, y, 0.0), (x + 0.06, y + 0.06, 0.45))
        for x, y in [(0.0, 0.0), (0.44, 0.0), (0.0, 0.44), (0.44, 0.44)]
    ]
    return _boxes_to_off(
        legs
        + [
            ((0.0, 0.0, 0.45), (0.5, 0.5, 0.52)),  # seat
            ((0.0, 0.44, 0.52), (0.5, 0.5, 1.0)),  # back
            ((0.44, 0.05, 0.52), (0.5, 0.44, 0.7)),  # right armrest
            ((0.0, 0.0, 0.52), (0.05, 0.05, 0.62)),  # front-left stub
        ]
    )


def airplane_off() -> str:
    return _boxes_to_off(
        [
            ((-0.8, -0.07, -0.06), (0.8, 0.07, 0.08)),  # fuselage
            ((-0.1, -0.75, -0.01), (0.25, 0.75, 0.02)),  # wings
            ((-0.8, -0.25, 0.0), (-0.62, 0.25, 0.02)),  # tailplane
            ((-0.8, -0.01, 0.08), (-0.6, 0.02, 0.35)),  # fin
            ((0.05, 0.3, -0.12), (0.3, 0.38, -0.01)),  # single engine pod
        ]
    )
