import struct

import numpy as np
import pytest

from oodkit.centroids import (
    CentroidSet,
    GENERATOR_ITERATIVE,
    generate_iterative,
    generate_simplex,
    load_centroids,
    save_centroids,
)
from oodkit.errors import DimensionError, MalformedFileError, VersionMismatchError


def test_simplex_gram_exact():
    cs = generate_simplex(4, 4)
    gram = cs.gram()
    target = -1.0 / 3.0
    off = gram[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off - target)) < 1e-12
    assert np.max(np.abs(np.diag(gram) - 1.0)) < 1e-12


@pytest.mark.parametrize("c,n", [(2, 1), (3, 2), (5, 4), (5, 12), (10, 10)])
def test_simplex_pairwise_cosines(c, n):
    cs = generate_simplex(c, n)
    assert cs.vectors.shape == (c, n)
    off = cs.gram()[~np.eye(c, dtype=bool)]
    assert np.allclose(off, -1.0 / (c - 1), atol=1e-9)


def test_simplex_needs_enough_dimensions():
    with pytest.raises(DimensionError):
        generate_simplex(5, 3)
    with pytest.raises(DimensionError):
        generate_simplex(1, 4)


def test_iterative_antipodal_pair():
    cs = generate_iterative(2, 3, seed=0, steps=2000)
    cos = float(cs.vectors[0] @ cs.vectors[1])
    assert cos == pytest.approx(-1.0, abs=1e-4)


def test_iterative_hexagon_spacing():
    # 6 points on a circle settle into a regular hexagon: min angle 60 deg.
    cs = generate_iterative(6, 2, seed=3, steps=3000)
    gram = np.clip(cs.gram(), -1.0, 1.0)
    np.fill_diagonal(gram, -1.0)
    min_angle = np.arccos(np.max(gram))
    assert min_angle == pytest.approx(np.pi / 3.0, abs=1e-3)


def test_iterative_matches_simplex_geometry():
    # With c <= n+1 the repulsion optimum is the regular simplex.
    cs = generate_iterative(4, 3, seed=1, steps=4000)
    off = cs.gram()[~np.eye(4, dtype=bool)]
    assert np.allclose(off, -1.0 / 3.0, atol=1e-3)


def test_iterative_deterministic():
    a = generate_iterative(5, 3, seed=9, steps=200)
    b = generate_iterative(5, 3, seed=9, steps=200)
    assert np.array_equal(a.vectors, b.vectors)
    c = generate_iterative(5, 3, seed=10, steps=200)
    assert not np.array_equal(a.vectors, c.vectors)


def test_centroid_set_validates_norms():
    with pytest.raises(DimensionError):
        CentroidSet(2, 2, np.array([[1.0, 0.0], [0.0, 2.0]]))
    with pytest.raises(DimensionError):
        CentroidSet(3, 2, np.eye(2))


def test_save_load_round_trip(tmp_path):
    cs = generate_iterative(5, 4, seed=2, steps=200)
    path = tmp_path / "c.pdcc"
    save_centroids(cs, path)
    loaded = load_centroids(path)
    assert loaded.class_count == 5
    assert loaded.feature_dim == 4
    assert loaded.generator == GENERATOR_ITERATIVE
    assert np.array_equal(loaded.vectors, cs.vectors)
    # re-saving reproduces the file byte for byte
    path2 = tmp_path / "c2.pdcc"
    save_centroids(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_truncated_file(tmp_path):
    cs = generate_simplex(3, 3)
    path = tmp_path / "c.pdcc"
    save_centroids(cs, path)
    data = path.read_bytes()
    for cut in (0, 4, len(data) // 2, len(data) - 1):
        short = tmp_path / "short.pdcc"
        short.write_bytes(data[:cut])
        with pytest.raises(MalformedFileError):
            load_centroids(short)


def test_load_rejects_bad_magic(tmp_path):
    cs = generate_simplex(3, 3)
    path = tmp_path / "c.pdcc"
    save_centroids(cs, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    bad = tmp_path / "bad.pdcc"
    bad.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_centroids(bad)


def test_load_rejects_future_version(tmp_path):
    cs = generate_simplex(3, 3)
    path = tmp_path / "c.pdcc"
    save_centroids(cs, path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    bad = tmp_path / "bad.pdcc"
    bad.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_centroids(bad)
