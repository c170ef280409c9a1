"""
Tests for mesh construction and face extraction.
"""

import numpy as np
import pytest

from app.config import Config
from app.errors import ConfigError, MeshTopologyError
from app.mesh import (
    Mesh2D,
    build_graded_quad_mesh,
    build_uniform_quad_mesh,
    diameter_ratio,
    dump_mesh,
    extract_faces,
    face_penalty_geometry,
    faces_per_element,
)


class TestUniformMesh:
    """Test regular subdivisions of the unit square."""

    def test_counts(self):
        """Test element and vertex counts."""
        mesh = build_uniform_quad_mesh(2)
        assert mesh.n_elements == 16
        assert len(mesh.vertices) == 25
        assert np.isclose(mesh.h, np.sqrt(2) / 4)
        assert np.isclose(mesh.areas.sum(), 1.0)

    def test_geometry_cached(self):
        """Test derived element geometry is computed once per mesh."""
        mesh = build_uniform_quad_mesh(2)
        assert mesh.diameters is mesh.diameters
        assert mesh.widths is mesh.widths
        assert "diameters" in vars(mesh)
        assert np.allclose(mesh.diameters, np.sqrt(2) / 4)

    def test_faces(self):
        """Test a 2x2 mesh has 4 interior and 8 boundary faces."""
        faces = extract_faces(build_uniform_quad_mesh(1))
        assert sum(f.is_interior for f in faces) == 4
        assert sum(not f.is_interior for f in faces) == 8
        assert [f.index for f in faces] == list(range(12))

    def test_normals(self):
        """Test boundary normals point outward and interior ones along +x or +y."""
        mesh = build_uniform_quad_mesh(2)
        for f in extract_faces(mesh):
            mid = f.endpoints.mean(axis=0)
            if f.is_interior:
                assert f.normal[0] >= 0 and f.normal[1] >= 0
                # K_ext lies on the side the normal points away from
                c = mesh.centroids[f.k_ext]
                assert np.dot(mid - c, f.normal) > 0
            else:
                inside = np.array([0.5, 0.5])
                assert np.dot(mid - inside, f.normal) > 0

    def test_faces_per_element(self):
        """Test every element of a conforming mesh has four faces."""
        mesh = build_uniform_quad_mesh(2)
        assert np.all(faces_per_element(mesh, extract_faces(mesh)) == 4)

    def test_level_guards(self):
        """Test invalid and oversized levels raise ConfigError."""
        with pytest.raises(ConfigError):
            build_uniform_quad_mesh(0)
        with pytest.raises(ConfigError):
            build_uniform_quad_mesh(Config.MAX_UNIFORM_LEVEL + 1)


class TestGradedMesh:
    """Test meshes graded towards the boundary."""

    def test_counts(self):
        """Test element counts per generation."""
        assert build_graded_quad_mesh(1).n_elements == 4
        assert build_graded_quad_mesh(2).n_elements == 16
        assert build_graded_quad_mesh(3).n_elements == 52

    def test_levels(self):
        """Test the finest elements touch the boundary."""
        mesh = build_graded_quad_mesh(3)
        finest = mesh.levels == mesh.levels.max()
        boxes = mesh.boxes[finest]
        touches = (boxes[:, 0] == 0) | (boxes[:, 1] == 0) | (boxes[:, 2] == 1) | (boxes[:, 3] == 1)
        assert np.all(touches)
        assert set(mesh.levels) == {2, 3}

    def test_hanging_faces(self):
        """Test faces cover the boundary exactly and every element edge."""
        mesh = build_graded_quad_mesh(3)
        faces = extract_faces(mesh)
        boundary = sum(f.length for f in faces if not f.is_interior)
        assert np.isclose(boundary, 4.0)
        perimeter = 2 * mesh.widths.sum()
        covered = sum(f.length * len(f.elements) for f in faces)
        assert np.isclose(covered, perimeter)
        assert diameter_ratio(mesh, faces) == pytest.approx(2.0)

    def test_penalty_geometry(self):
        """Test interior faces use the smaller diameter and larger degree."""
        mesh = build_graded_quad_mesh(3)
        p = 3 + (mesh.levels.max() - mesh.levels)
        for f in extract_faces(mesh):
            h, pt = face_penalty_geometry(mesh, f, p)
            assert h == min(mesh.diameters[e] for e in f.elements)
            assert pt == max(p[e] for e in f.elements)

    def test_faces_per_element_bounded(self):
        """Test 1-irregular graded meshes keep at most six faces per element."""
        mesh = build_graded_quad_mesh(4)
        counts = faces_per_element(mesh, extract_faces(mesh))
        assert counts.max() <= 6
        assert counts.min() == 4


class TestTopologyErrors:
    """Test inconsistent meshes are rejected."""

    def test_mismatched_spans(self):
        """Test neighbours covering different spans raise MeshTopologyError."""
        mesh = Mesh2D.from_boxes([(0.0, 0.0, 0.5, 1.0), (0.5, 0.0, 1.0, 0.5)], [1, 1])
        with pytest.raises(MeshTopologyError):
            extract_faces(mesh)

    def test_degenerate_box(self):
        """Test zero-width rectangles are rejected."""
        with pytest.raises(MeshTopologyError):
            Mesh2D.from_boxes([(0.0, 0.0, 0.0, 1.0)], [1])


class TestDump:
    """Test the plain-text mesh dump."""

    def test_dump(self, tmp_path):
        """Test both sections are written."""
        mesh = build_uniform_quad_mesh(1)
        faces = extract_faces(mesh)
        path = tmp_path / "mesh.txt"
        dump_mesh(mesh, faces, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# elements")
        assert lines[5].startswith("# faces")
        assert len(lines) == 2 + 4 + 12
        assert lines[-1].split()[3] == "-1"

