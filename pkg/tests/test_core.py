import numpy as np
import pytest

from conftest import make_matrix, uniform_axis
from vocscan import (
    AbundanceMatrix,
    GroundTruthAnnotation,
    RTAxis,
    ValidationError,
    WindowBoundsError,
    derive_rng,
    derive_seed,
    intervals_overlap,
    n_windows,
    rt_of_window,
    tic,
    window,
)


class TestRTAxis:
    def test_rejects_non_increasing(self):
        with pytest.raises(ValidationError):
            RTAxis(np.array([1.0, 1.0, 2.0]))
        with pytest.raises(ValidationError):
            RTAxis(np.array([1.0, 0.5]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            RTAxis(np.array([1.0, np.nan]))
        with pytest.raises(ValidationError):
            RTAxis(np.array([1.0, np.inf]))

    def test_rejects_empty_and_bad_shape(self):
        with pytest.raises(ValidationError):
            RTAxis(np.array([]))
        with pytest.raises(ValidationError):
            RTAxis(np.zeros((3, 2)))

    def test_values_read_only(self):
        axis = uniform_axis(5)
        with pytest.raises(ValueError):
            axis.values[0] = 99.0

    def test_len_and_span(self):
        axis = RTAxis(np.array([0.5, 1.0, 3.0]))
        assert len(axis) == 3
        assert axis.span == 2.5

    def test_nearest_row_basic(self):
        axis = RTAxis(np.array([1.0, 2.0, 4.0]))
        assert axis.nearest_row(0.0) == 0
        assert axis.nearest_row(1.1) == 0
        assert axis.nearest_row(1.9) == 1
        assert axis.nearest_row(3.2) == 2
        assert axis.nearest_row(100.0) == 2

    def test_nearest_row_tie_prefers_earlier(self):
        axis = RTAxis(np.array([1.0, 2.0]))
        assert axis.nearest_row(1.5) == 0
        axis = RTAxis(np.array([0.0, 2.0, 4.0]))
        assert axis.nearest_row(3.0) == 1

    def test_nearest_row_matches_argmin_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(1, 50))
            values = np.sort(rng.uniform(0.0, 10.0, size=n))
            values += np.arange(n) * 1e-6  # enforce strict increase
            axis = RTAxis(values)
            for rt in rng.uniform(-1.0, 11.0, size=20):
                expected = int(np.argmin(np.abs(values - rt)))
                assert axis.nearest_row(float(rt)) == expected


class TestAbundanceMatrix:
    def test_rejects_negative_values(self):
        values = np.zeros((4, 3))
        values[1, 2] = -0.5
        with pytest.raises(ValidationError):
            make_matrix(4, 3, values=values)

    def test_rejects_non_finite(self):
        values = np.zeros((4, 3))
        values[0, 0] = np.nan
        with pytest.raises(ValidationError):
            make_matrix(4, 3, values=values)

    def test_rejects_axis_length_mismatch(self):
        with pytest.raises(ValidationError):
            AbundanceMatrix(values=np.zeros((4, 3)), axis=uniform_axis(5), sample_id="s")

    def test_rejects_bad_epoch(self):
        with pytest.raises(ValidationError):
            make_matrix(4, 3, column_epoch=0)

    def test_values_read_only(self):
        mat = make_matrix(4, 3)
        with pytest.raises(ValueError):
            mat.values[0, 0] = 1.0

    def test_shape_properties(self):
        mat = make_matrix(7, 5)
        assert mat.n_rows == 7
        assert mat.channels == 5


class TestAnnotation:
    def test_valid(self):
        ann = GroundTruthAnnotation(sample_id="s", label=3, start_rt=1.0, peak_rt=1.5, end_rt=2.0)
        assert ann.interval == (1.0, 2.0)

    def test_rejects_bad_label(self):
        with pytest.raises(ValidationError):
            GroundTruthAnnotation(sample_id="s", label=0, start_rt=1.0, peak_rt=1.5, end_rt=2.0)

    def test_rejects_bad_ordering(self):
        with pytest.raises(ValidationError):
            GroundTruthAnnotation(sample_id="s", label=1, start_rt=2.0, peak_rt=1.5, end_rt=3.0)
        with pytest.raises(ValidationError):
            GroundTruthAnnotation(sample_id="s", label=1, start_rt=1.0, peak_rt=3.5, end_rt=3.0)


class TestWindows:
    def test_count_formula(self):
        mat = make_matrix(6000, 2)
        assert n_windows(mat, 80) == 5921

    def test_count_matches_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            rows = int(rng.integers(80, 400))
            delta = int(rng.integers(2, 80))
            mat = make_matrix(rows, 1)
            starts = [k for k in range(rows) if k + delta <= rows]
            assert n_windows(mat, delta) == len(starts)

    def test_window_contents_and_bounds(self):
        values = np.arange(40.0).reshape(10, 4)
        mat = make_matrix(10, 4, values=values)
        w = window(mat, 3, 4)
        assert np.array_equal(w, values[3:7])
        with pytest.raises(ValueError):
            w[0, 0] = -1.0
        assert n_windows(mat, 4) == 7
        window(mat, 6, 4)
        with pytest.raises(WindowBoundsError):
            window(mat, 7, 4)
        with pytest.raises(WindowBoundsError):
            window(mat, -1, 4)

    def test_window_bounds_error_is_index_error(self):
        mat = make_matrix(10, 2)
        with pytest.raises(IndexError):
            window(mat, 9, 4)

    def test_rt_of_first_window_is_middle_row(self):
        mat = make_matrix(120, 2)
        assert rt_of_window(mat, 0, 80) == mat.axis.values[40]
        assert rt_of_window(mat, 5, 80) == mat.axis.values[45]
        assert rt_of_window(mat, 2, 7) == mat.axis.values[5]

    def test_tic_sums_rows(self):
        values = np.arange(12.0).reshape(4, 3)
        mat = make_matrix(4, 3, values=values)
        assert np.array_equal(tic(mat), values.sum(axis=1))


class TestIntervalOverlap:
    def test_closed_endpoints_touch(self):
        assert intervals_overlap((0.0, 1.0), (1.0, 2.0))
        assert intervals_overlap((1.0, 2.0), (0.0, 1.0))

    def test_disjoint(self):
        assert not intervals_overlap((0.0, 1.0), (1.1, 2.0))
        assert not intervals_overlap((3.0, 4.0), (0.0, 2.9))

    def test_containment_and_identity(self):
        assert intervals_overlap((0.0, 5.0), (1.0, 2.0))
        assert intervals_overlap((1.0, 2.0), (1.0, 2.0))


class TestRngDerivation:
    def test_same_stream_is_identical(self):
        a = derive_rng(7, 1, 2).uniform(size=8)
        b = derive_rng(7, 1, 2).uniform(size=8)
        assert np.array_equal(a, b)

    def test_different_streams_differ(self):
        a = derive_rng(7, 1, 2).uniform(size=8)
        b = derive_rng(7, 1, 3).uniform(size=8)
        c = derive_rng(8, 1, 2).uniform(size=8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_derive_seed_is_stable_uint64(self):
        s1 = derive_seed(3, 4)
        s2 = derive_seed(3, 4)
        assert isinstance(s1, int)
        assert s1 == s2
        assert 0 <= s1 < 2**64
        assert derive_seed(3, 5) != s1
