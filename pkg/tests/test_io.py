"""Matrix Market parsing and the synthetic generators."""

from __future__ import annotations

import io

import numpy as np
import pytest

from spgemm3d.errors import BadParams, ParseError, UnsupportedField
from spgemm3d.mmio import mm_to_string, read_mm, write_mm
from spgemm3d.sparse import bit_identical, from_triples
from spgemm3d.synth import gen_er, gen_rmat

from util import FLOAT_SR, INT_SR, PATTERN_SR, rand_mat


def _read_str(text):
    return read_mm(io.StringIO(text))


def test_integer_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    path = tmp_path / "m.mtx"
    for _ in range(20):
        m = rand_mat(rng, int(rng.integers(1, 30)), int(rng.integers(1, 30)),
                     0.3, lo=-9, hi=9)
        write_mm(path, m)
        back, sr = read_mm(path)
        assert bit_identical(back, m)
        assert sr is INT_SR


def test_real_round_trip_is_exact():
    vals = [0.1, -1.5e300, 2.0 ** -1060, 3.141592653589793, -7.0]
    m = from_triples(5, 2, [(i, i % 2, v) for i, v in enumerate(vals)],
                     FLOAT_SR)
    back, sr = _read_str(mm_to_string(m))
    assert sr is FLOAT_SR
    assert bit_identical(back, m)       # repr round-trips every double


def test_pattern_round_trip():
    rng = np.random.default_rng(6)
    m = rand_mat(rng, 12, 9, 0.3, sr=PATTERN_SR)
    text = mm_to_string(m)
    assert "pattern" in text.splitlines()[0]
    back, sr = _read_str(text)
    assert sr is PATTERN_SR
    assert bit_identical(back, m)


def test_symmetric_expansion_and_one_based_indices():
    text = """%%MatrixMarket matrix coordinate integer symmetric
% lower triangle only
3 3 3
1 1 5
3 1 2
3 2 -1
"""
    m, _ = _read_str(text)
    want = from_triples(3, 3, [(0, 0, 5), (2, 0, 2), (0, 2, 2),
                               (2, 1, -1), (1, 2, -1)], INT_SR)
    assert bit_identical(m, want)


def test_duplicates_merge_and_comments_are_skipped():
    text = """%%MatrixMarket matrix coordinate integer general
% a comment
2 2 3

1 1 4
% another comment
1 1 -1
2 1 7

"""
    m, _ = _read_str(text)
    assert bit_identical(m, from_triples(2, 2, [(0, 0, 3), (1, 0, 7)], INT_SR))


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError, match="line 1"):
        _read_str("not a banner\n")
    with pytest.raises(ParseError, match="line 2"):
        _read_str("%%MatrixMarket matrix coordinate integer general\n1 2\n")
    with pytest.raises(ParseError, match="line 3"):
        _read_str("%%MatrixMarket matrix coordinate integer general\n"
                  "2 2 1\n1 1\n")
    with pytest.raises(ParseError, match="line 3"):
        _read_str("%%MatrixMarket matrix coordinate integer general\n"
                  "2 2 1\n3 1 9\n")
    with pytest.raises(ParseError, match="line 3"):
        _read_str("%%MatrixMarket matrix coordinate integer general\n"
                  "2 2 1\n1 1 2.5\n")
    with pytest.raises(ParseError, match="ended after 1"):
        _read_str("%%MatrixMarket matrix coordinate integer general\n"
                  "2 2 3\n1 1 2\n")
    with pytest.raises(ParseError, match="line 4"):
        _read_str("%%MatrixMarket matrix coordinate integer general\n"
                  "2 2 1\n1 1 2\n2 2 5\n")
    with pytest.raises(ParseError, match="square"):
        _read_str("%%MatrixMarket matrix coordinate integer symmetric\n"
                  "2 3 1\n1 1 2\n")


def test_unsupported_headers():
    for banner in (
        "%%MatrixMarket matrix coordinate complex general",
        "%%MatrixMarket matrix array integer general",
        "%%MatrixMarket vector coordinate integer general",
        "%%MatrixMarket matrix coordinate integer hermitian",
        "%%MatrixMarket matrix coordinate integer skew-symmetric",
    ):
        with pytest.raises(UnsupportedField):
            _read_str(banner + "\n1 1 0\n")


def test_gen_er_is_deterministic_and_calibrated():
    a = gen_er(200, 150, 0.1, seed=42)
    b = gen_er(200, 150, 0.1, seed=42)
    assert bit_identical(a, b)
    c = gen_er(200, 150, 0.1, seed=43)
    assert not bit_identical(a, c)
    expect = 200 * 150 * 0.1
    assert 0.8 * expect < a.nnz < 1.2 * expect
    assert gen_er(5, 5, 0.0).nnz == 0
    assert gen_er(5, 5, 1.0).nnz == 25
    assert gen_er(0, 7, 0.5).shape == (0, 7)
    with pytest.raises(BadParams):
        gen_er(5, 5, 1.5)
    with pytest.raises(BadParams):
        gen_er(-1, 5, 0.5)


def test_gen_rmat_shape_determinism_and_skew():
    m = gen_rmat(8, edge_factor=8, seed=3)
    assert m.shape == (256, 256)
    assert 0 < m.nnz <= 8 * 256            # merged duplicates only shrink it
    assert bit_identical(m, gen_rmat(8, edge_factor=8, seed=3))
    cols = m.entry_cols()
    top_left = int(np.sum((m.row_idx < 128) & (cols < 128)))
    bottom_right = int(np.sum((m.row_idx >= 128) & (cols >= 128)))
    assert top_left > 2 * bottom_right     # a=0.57 versus d=0.05
    with pytest.raises(BadParams):
        gen_rmat(-1)
    with pytest.raises(BadParams):
        gen_rmat(4, edge_factor=0)
    with pytest.raises(BadParams):
        gen_rmat(4, a=0.5, b=0.5, c=0.5, d=0.5)


def test_gen_rmat_quadrant_probabilities_are_honored():
    # degenerate corners pin every edge to one cell
    m = gen_rmat(6, edge_factor=2, seed=0, a=1.0, b=0.0, c=0.0, d=0.0)
    assert m.nnz == 1 and m.row_idx[0] == 0 and m.entry_cols()[0] == 0
    m = gen_rmat(6, edge_factor=2, seed=0, a=0.0, b=0.0, c=0.0, d=1.0)
    assert m.nnz == 1 and m.row_idx[0] == 63 and m.entry_cols()[0] == 63
    m = gen_rmat(4, edge_factor=2, seed=0, a=0.0, b=1.0, c=0.0, d=0.0)
    assert m.nnz == 1 and m.row_idx[0] == 0 and m.entry_cols()[0] == 15
    m = gen_rmat(4, edge_factor=2, seed=0, a=0.0, b=0.0, c=1.0, d=0.0)
    assert m.nnz == 1 and m.row_idx[0] == 15 and m.entry_cols()[0] == 0
