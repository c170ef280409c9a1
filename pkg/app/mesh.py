"""
Quadrilateral meshes of the unit square.
Uniform and boundary-graded (1-irregular) meshes, face extraction and penalty geometry.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .config import Config
from .errors import ConfigError, MeshTopologyError

# Coordinates are dyadic, so this rounding only merges exact duplicates.
_KEY_DECIMALS = 13


@dataclass(frozen=True)
class Face:
    """A flat mesh facet with its fixed unit normal."""
    index: int
    kind: str  # "interior" | "boundary"
    normal: np.ndarray
    k_ext: int
    k_int: Optional[int]
    endpoints: np.ndarray
    length: float

    @property
    def is_interior(self) -> bool:
        return self.kind == "interior"

    @property
    def tangent(self) -> np.ndarray:
        """Unit vector along the face, from the first to the second endpoint."""
        d = self.endpoints[1] - self.endpoints[0]
        return d / self.length

    @property
    def elements(self) -> Tuple[int, ...]:
        if self.k_int is None:
            return (self.k_ext,)
        return (self.k_ext, self.k_int)


@dataclass(frozen=True)
class Mesh2D:
    """Axis-aligned rectangular mesh; elements are corner indices (ll, lr, ur, ul)."""
    vertices: np.ndarray
    elements: np.ndarray
    levels: np.ndarray
    boxes: np.ndarray = field(repr=False)

    @classmethod
    def from_boxes(cls, boxes: Sequence[Sequence[float]], levels: Sequence[int]) -> "Mesh2D":
        """
        Build a mesh from rectangles (x0, y0, x1, y1).

        Args:
            boxes: One rectangle per element
            levels: Refinement level per element

        Returns:
            Mesh2D: Mesh with deduplicated vertices
        """
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        if np.any(boxes[:, 2] <= boxes[:, 0]) or np.any(boxes[:, 3] <= boxes[:, 1]):
            raise MeshTopologyError("degenerate element rectangle")
        index: Dict[Tuple[float, float], int] = {}
        vertices: List[Tuple[float, float]] = []

        def vid(x: float, y: float) -> int:
            key = (round(x, _KEY_DECIMALS), round(y, _KEY_DECIMALS))
            if key not in index:
                index[key] = len(vertices)
                vertices.append((x, y))
            return index[key]

        elements = np.array(
            [[vid(x0, y0), vid(x1, y0), vid(x1, y1), vid(x0, y1)] for x0, y0, x1, y1 in boxes],
            dtype=np.int64,
        )
        return cls(
            vertices=np.array(vertices, dtype=float),
            elements=elements,
            levels=np.asarray(levels, dtype=np.int64).copy(),
            boxes=boxes.copy(),
        )

    @property
    def n_elements(self) -> int:
        return len(self.boxes)

    @cached_property
    def widths(self) -> np.ndarray:
        """Per-element (hx, hy)."""
        return self.boxes[:, 2:] - self.boxes[:, :2]

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_K = diam K, the rectangle diagonal."""
        w = self.widths
        return np.hypot(w[:, 0], w[:, 1])

    @cached_property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def areas(self) -> np.ndarray:
        w = self.widths
        return w[:, 0] * w[:, 1]

    @cached_property
    def centroids(self) -> np.ndarray:
        return 0.5 * (self.boxes[:, :2] + self.boxes[:, 2:])

    def fingerprint(self) -> bytes:
        """Stable byte representation used for checkpoint hashes."""
        return self.boxes.tobytes() + self.levels.tobytes()


def build_uniform_quad_mesh(k: int) -> Mesh2D:
    """
    Regular subdivision of (0,1)^2 into 4**k squares of width 2**-k.

    Args:
        k: Subdivision level, 1 <= k <= HJB_DG_MAX_UNIFORM_LEVEL

    Returns:
        Mesh2D: Conforming uniform mesh, row-major element order
    """
    if k < 1:
        raise ConfigError(f"uniform mesh level must be >= 1, got {k}")
    if k > Config.MAX_UNIFORM_LEVEL:
        raise ConfigError(
            f"uniform mesh level {k} exceeds the memory guard HJB_DG_MAX_UNIFORM_LEVEL={Config.MAX_UNIFORM_LEVEL}"
        )
    n = 2 ** k
    w = 1.0 / n
    boxes = [(i * w, j * w, (i + 1) * w, (j + 1) * w) for j in range(n) for i in range(n)]
    return Mesh2D.from_boxes(boxes, [k] * len(boxes))


def _touches_boundary(box: Tuple[float, float, float, float]) -> bool:
    x0, y0, x1, y1 = box
    return x0 == 0.0 or y0 == 0.0 or x1 == 1.0 or y1 == 1.0


def _split(box: Tuple[float, float, float, float]) -> List[Tuple[float, float, float, float]]:
    x0, y0, x1, y1 = box
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return [(x0, y0, xm, ym), (xm, y0, x1, ym), (x0, ym, xm, y1), (xm, ym, x1, y1)]


def build_graded_quad_mesh(levels: int) -> Mesh2D:
    """
    Mesh graded geometrically towards the whole boundary.

    Starts from the 2x2 partition; each of the levels-1 passes splits every
    element touching the boundary into four.

    Args:
        levels: Number of mesh generations, >= 1

    Returns:
        Mesh2D: 1-irregular mesh
    """
    if levels < 1:
        raise ConfigError(f"graded mesh levels must be >= 1, got {levels}")
    if levels > Config.MAX_GRADED_LEVEL:
        raise ConfigError(
            f"graded mesh levels {levels} exceed the memory guard HJB_DG_MAX_GRADED_LEVEL={Config.MAX_GRADED_LEVEL}"
        )
    cells = [(box, 1) for box in _split((0.0, 0.0, 1.0, 1.0))]
    for _ in range(levels - 1):
        refined = []
        for box, level in cells:
            if _touches_boundary(box):
                refined.extend((child, level + 1) for child in _split(box))
            else:
                refined.append((box, level))
        cells = refined
    logger.debug(f"graded mesh: levels={levels}, elements={len(cells)}")
    return Mesh2D.from_boxes([c[0] for c in cells], [c[1] for c in cells])


def _line_faces(coord: float, lower: List[Tuple[float, float, int]], upper: List[Tuple[float, float, int]],
                vertical: bool) -> List[dict]:
    """
    Facets on one mesh line.

    `lower` holds the edges of elements on the negative side of the line
    (their right/top edge lies on it), `upper` those on the positive side.
    """
    faces = []
    if not lower or not upper:
        # boundary line
        side, sign = (upper, -1.0) if not lower else (lower, 1.0)
        for lo, hi, elem in sorted(side):
            faces.append(dict(kind="boundary", sign=sign, k_ext=elem, k_int=None, lo=lo, hi=hi))
        return faces

    lower = sorted(lower)
    upper = sorted(upper)
    for edges in (lower, upper):
        for (lo0, hi0, _), (lo1, hi1, _) in zip(edges, edges[1:]):
            if lo1 != hi0:
                raise MeshTopologyError(f"gap or overlap along line {'x' if vertical else 'y'}={coord}")
    if lower[0][0] != upper[0][0] or lower[-1][1] != upper[-1][1]:
        raise MeshTopologyError(f"sides of line {'x' if vertical else 'y'}={coord} cover different spans")

    breaks = sorted({e[0] for e in lower} | {e[1] for e in lower} | {e[0] for e in upper} | {e[1] for e in upper})
    facets_per_edge: Dict[Tuple[int, float], int] = {}
    li = ui = 0
    for lo, hi in zip(breaks, breaks[1:]):
        while lower[li][1] <= lo:
            li += 1
        while upper[ui][1] <= lo:
            ui += 1
        el, eu = lower[li], upper[ui]
        full_lower = el[0] == lo and el[1] == hi
        full_upper = eu[0] == lo and eu[1] == hi
        if not (full_lower or full_upper):
            raise MeshTopologyError(
                f"facet [{lo}, {hi}] on line {coord} is not a full edge of either neighbour"
            )
        for e in (el, eu):
            facets_per_edge[(e[2], e[0])] = facets_per_edge.get((e[2], e[0]), 0) + 1
        faces.append(dict(kind="interior", sign=1.0, k_ext=el[2], k_int=eu[2], lo=lo, hi=hi))
    if max(facets_per_edge.values()) > 2:
        raise MeshTopologyError(f"line {coord} is more than 1-irregular")
    return faces


def extract_faces(mesh: Mesh2D) -> List[Face]:
    """
    Enumerate all facets of a 1-irregular rectangular mesh.

    Interior facets appear once with n_F in +x or +y, so K_ext is the
    left/bottom neighbour. Boundary facets carry outward normals. Where a
    hanging node splits an edge, faces are the fine-side facets.

    Args:
        mesh: Mesh to traverse

    Returns:
        List[Face]: Faces ordered by (vertical lines by x, horizontal lines by y, position)

    Raises:
        MeshTopologyError: If neighbouring edges do not match up to 1-irregularity
    """
    vertical: Dict[float, Tuple[list, list]] = {}
    horizontal: Dict[float, Tuple[list, list]] = {}
    for e, (x0, y0, x1, y1) in enumerate(mesh.boxes):
        vertical.setdefault(round(x1, _KEY_DECIMALS), ([], []))[0].append((y0, y1, e))
        vertical.setdefault(round(x0, _KEY_DECIMALS), ([], []))[1].append((y0, y1, e))
        horizontal.setdefault(round(y1, _KEY_DECIMALS), ([], []))[0].append((x0, x1, e))
        horizontal.setdefault(round(y0, _KEY_DECIMALS), ([], []))[1].append((x0, x1, e))

    faces: List[Face] = []
    for is_vertical, lines in ((True, vertical), (False, horizontal)):
        for coord in sorted(lines):
            lower, upper = lines[coord]
            for item in _line_faces(coord, lower, upper, is_vertical):
                if is_vertical:
                    normal = np.array([item["sign"], 0.0])
                    endpoints = np.array([[coord, item["lo"]], [coord, item["hi"]]])
                else:
                    normal = np.array([0.0, item["sign"]])
                    endpoints = np.array([[item["lo"], coord], [item["hi"], coord]])
                faces.append(Face(
                    index=len(faces),
                    kind=item["kind"],
                    normal=normal,
                    k_ext=item["k_ext"],
                    k_int=item["k_int"],
                    endpoints=endpoints,
                    length=float(item["hi"] - item["lo"]),
                ))
    return faces


def penalty_geometry(h: Sequence[float], p: Sequence[int]) -> Tuple[float, int]:
    """(h~_F, p~_F) from the diameters and degrees of the one or two adjacent elements."""
    return float(min(h)), int(max(p))


def face_penalty_geometry(mesh: Mesh2D, face: Face, p: Sequence[int]) -> Tuple[float, int]:
    """
    Face quantities entering the penalties.

    Interior: (min(h_K, h_K'), max(p_K, p_K')); boundary: (h_K, p_K).

    Args:
        mesh: Mesh the face belongs to
        face: The face
        p: Per-element spatial degrees

    Returns:
        Tuple[float, int]: (h_tilde, p_tilde)
    """
    elems = face.elements
    return penalty_geometry([mesh.diameters[e] for e in elems], [p[e] for e in elems])


def faces_per_element(mesh: Mesh2D, faces: Sequence[Face]) -> np.ndarray:
    """Number of faces on the boundary of each element."""
    counts = np.zeros(mesh.n_elements, dtype=np.int64)
    for f in faces:
        for e in f.elements:
            counts[e] += 1
    return counts


def diameter_ratio(mesh: Mesh2D, faces: Sequence[Face]) -> float:
    """Largest h_max/h_min over interior faces (c_T of the commensurate-diameter condition)."""
    ratios = [
        max(mesh.diameters[f.k_ext], mesh.diameters[f.k_int]) / min(mesh.diameters[f.k_ext], mesh.diameters[f.k_int])
        for f in faces if f.is_interior
    ]
    return float(max(ratios)) if ratios else 1.0


def dump_mesh(mesh: Mesh2D, faces: Sequence[Face], path: Union[str, Path]) -> None:
    """Write the plain-text debug dump of elements and faces."""
    lines = ["# elements: id x0 y0 x1 y1 level"]
    for e, (x0, y0, x1, y1) in enumerate(mesh.boxes):
        lines.append(f"{e} {x0:.17g} {y0:.17g} {x1:.17g} {y1:.17g} {mesh.levels[e]}")
    lines.append("# faces: id kind kext kint nx ny x0 y0 x1 y1")
    for f in faces:
        (x0, y0), (x1, y1) = f.endpoints
        k_int = -1 if f.k_int is None else f.k_int
        lines.append(
            f"{f.index} {f.kind} {f.k_ext} {k_int} {f.normal[0]:g} {f.normal[1]:g} "
            f"{x0:.17g} {y0:.17g} {x1:.17g} {y1:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
