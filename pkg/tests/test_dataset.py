import numpy as np
import pytest

from conftest import RT_STEP, make_matrix, random_matrix, uniform_axis
from vocscan import (
    ContractError,
    ElutionTooLongWarning,
    ExtractionError,
    GroundTruthAnnotation,
    LabeledDataset,
    Manifest,
    SampleEntry,
    SamplingError,
    SplitError,
    VocTableEntry,
    augment_full,
    augment_intensity,
    augment_translation,
    build_dataset,
    extract_datapoint,
    load_dataset,
    normalize,
    normalize_values,
    sample_negatives,
    save_dataset,
    split_by_participant,
)
from vocscan.dataset import translation_offsets


def ann_rows(matrix, row_start: int, row_end: int, label: int = 1) -> GroundTruthAnnotation:
    """Annotation whose interval endpoints sit exactly on matrix rows."""
    axis = matrix.axis.values
    return GroundTruthAnnotation(
        sample_id=matrix.sample_id,
        label=label,
        start_rt=float(axis[row_start]),
        peak_rt=float((axis[row_start] + axis[row_end]) / 2.0),
        end_rt=float(axis[row_end]),
    )


@pytest.fixture
def matrix300():
    return random_matrix(300, 6, np.random.default_rng(0))


class TestExtraction:
    def test_window_centered_on_interval_midpoint(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        dp = extract_datapoint(matrix300, ann, 80)
        assert np.array_equal(dp.values, matrix300.values[80:160])
        assert np.array_equal(dp.row_rts, matrix300.axis.values[80:160])
        assert dp.label == 1
        assert dp.provenance.anchor_row == 80
        assert dp.provenance.shift == 0 and dp.provenance.variant == 0
        assert not dp.normalized

    def test_midpoint_tie_prefers_earlier_row(self):
        mat = make_matrix(200, 3, step=1.0)
        ann = ann_rows(mat, 100, 101)  # midpoint exactly between two rows
        dp = extract_datapoint(mat, ann, 80)
        assert dp.provenance.anchor_row == 100 - 40

    def test_odd_delta_center_offset(self, matrix300):
        ann = ann_rows(matrix300, 119, 121)
        # delta=7 leaves no translation slack at all, so the warning fires.
        with pytest.warns(ElutionTooLongWarning):
            dp = extract_datapoint(matrix300, ann, 7)
        assert np.array_equal(dp.values, matrix300.values[117:124])

    def test_out_of_bounds_raises(self, matrix300):
        with pytest.raises(ExtractionError):
            extract_datapoint(matrix300, ann_rows(matrix300, 20, 40), 80)
        with pytest.raises(ExtractionError):
            extract_datapoint(matrix300, ann_rows(matrix300, 260, 290), 80)

    def test_long_elution_warns_but_extracts(self, matrix300):
        with pytest.warns(ElutionTooLongWarning):
            dp = extract_datapoint(matrix300, ann_rows(matrix300, 110, 172), 80)
        assert dp.delta == 80

    def test_elution_at_limit_is_silent(self, matrix300):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            extract_datapoint(matrix300, ann_rows(matrix300, 110, 170), 80)  # 61 rows


class TestTranslationOffsets:
    def test_even_count_favors_right(self):
        assert list(translation_offsets(20)) == list(range(-9, 11))

    def test_odd_count_symmetric(self):
        assert list(translation_offsets(5)) == [-2, -1, 0, 1, 2]

    def test_single(self):
        assert list(translation_offsets(1)) == [0]

    def test_counts(self):
        for s in range(1, 40):
            offs = list(translation_offsets(s))
            assert len(offs) == s
            assert 0 in offs
        with pytest.raises(ContractError):
            translation_offsets(0)


class TestTranslation:
    def test_each_shift_is_the_slid_window(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        points = augment_translation(matrix300, ann, 80, shifts=20)
        assert len(points) == 20
        assert [p.provenance.shift for p in points] == list(range(-9, 11))
        for p in points:
            start = 80 + p.provenance.shift
            assert p.provenance.anchor_row == start
            assert np.array_equal(p.values, matrix300.values[start : start + 80])
            assert np.array_equal(p.row_rts, matrix300.axis.values[start : start + 80])
            assert p.label == 1

    def test_zero_shift_equals_plain_extraction(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        base = extract_datapoint(matrix300, ann, 80)
        shifted = augment_translation(matrix300, ann, 80, shifts=20)
        center = next(p for p in shifted if p.provenance.shift == 0)
        assert np.array_equal(center.values, base.values)

    def test_out_of_bounds_shift_raises(self, matrix300):
        # Anchor row 7: offset -9 would start at row -2.
        ann = ann_rows(matrix300, 42, 52)
        with pytest.raises(ExtractionError):
            augment_translation(matrix300, ann, 80, shifts=20)


class TestIntensityAugmentation:
    def setup_point(self):
        rng = np.random.default_rng(8)
        mat = make_matrix(300, 5, values=rng.uniform(1.0, 100.0, size=(300, 5)))
        ann = ann_rows(mat, 100, 140)
        return mat, ann, extract_datapoint(mat, ann, 80)

    def test_matches_replayed_formula_bitwise(self):
        mat, ann, dp = self.setup_point()
        aug = augment_intensity(dp, ann, np.random.default_rng(42), r_max=0.1)
        r = np.random.default_rng(42).uniform(0.0, 0.1)
        mid = (ann.start_rt + ann.end_rt) / 2.0
        sigma = (ann.end_rt - ann.start_rt) / 4.0
        expected = dp.values.copy()
        mask = (dp.row_rts > ann.start_rt) & (dp.row_rts < ann.end_rt)
        factor = np.exp(-0.5 * ((dp.row_rts[mask] - mid) / sigma) ** 2) * r + 1.0
        expected[mask] *= factor[:, None]
        assert np.array_equal(aug.values, expected)

    def test_rows_outside_interval_untouched(self):
        mat, ann, dp = self.setup_point()
        aug = augment_intensity(dp, ann, np.random.default_rng(1))
        outside = (dp.row_rts <= ann.start_rt) | (dp.row_rts >= ann.end_rt)
        assert outside.any()
        assert np.array_equal(aug.values[outside], dp.values[outside])

    def test_single_factor_per_row_preserves_ion_ratios(self):
        mat, ann, dp = self.setup_point()
        aug = augment_intensity(dp, ann, np.random.default_rng(2))
        ratio = aug.values / dp.values
        spread = ratio.max(axis=1) - ratio.min(axis=1)
        assert np.all(spread <= 1e-12 * ratio.max(axis=1))

    def test_recovered_factor_is_gaussian_in_rt(self):
        mat, ann, dp = self.setup_point()
        aug = augment_intensity(dp, ann, np.random.default_rng(3), r_max=0.1)
        inside = (dp.row_rts > ann.start_rt) & (dp.row_rts < ann.end_rt)
        factors = (aug.values / dp.values)[inside, 0]
        mid = (ann.start_rt + ann.end_rt) / 2.0
        sigma = (ann.end_rt - ann.start_rt) / 4.0
        g = np.exp(-0.5 * ((dp.row_rts[inside] - mid) / sigma) ** 2)
        rs = (factors - 1.0) / g
        assert np.all(np.abs(rs - rs[0]) <= 1e-12 * abs(rs[0]))
        assert 0.0 <= rs[0] <= 0.1
        # Boost peaks at the row nearest the apex.
        assert np.argmax(factors) == np.argmin(np.abs(dp.row_rts[inside] - mid))

    def test_zero_r_max_is_identity(self):
        mat, ann, dp = self.setup_point()
        aug = augment_intensity(dp, ann, np.random.default_rng(4), r_max=0.0)
        assert np.array_equal(aug.values, dp.values)

    def test_rejects_normalized_input(self):
        mat, ann, dp = self.setup_point()
        with pytest.raises(ContractError):
            augment_intensity(normalize(dp), ann, np.random.default_rng(0))

    def test_variant_recorded(self):
        mat, ann, dp = self.setup_point()
        aug = augment_intensity(dp, ann, np.random.default_rng(0), variant=3)
        assert aug.provenance.variant == 3
        assert aug.provenance.shift == dp.provenance.shift


class TestAugmentFull:
    def test_count_and_order(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        points = augment_full(matrix300, ann, np.random.default_rng(0), 80, shifts=20, variants_per_shift=4)
        assert len(points) == 100
        tags = [(p.provenance.shift, p.provenance.variant) for p in points]
        assert tags == [(s, v) for s in range(-9, 11) for v in range(5)]

    def test_base_points_equal_translation_outputs(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        full = augment_full(matrix300, ann, np.random.default_rng(0), 80, shifts=8, variants_per_shift=2)
        bases = [p for p in full if p.provenance.variant == 0]
        plain = augment_translation(matrix300, ann, 80, shifts=8)
        for a, b in zip(bases, plain):
            assert np.array_equal(a.values, b.values)

    def test_deterministic(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        a = augment_full(matrix300, ann, np.random.default_rng(5), 80)
        b = augment_full(matrix300, ann, np.random.default_rng(5), 80)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))

    def test_zero_variants_is_translation_only(self, matrix300):
        ann = ann_rows(matrix300, 100, 140)
        full = augment_full(matrix300, ann, np.random.default_rng(0), 80, shifts=6, variants_per_shift=0)
        assert len(full) == 6
        assert all(p.provenance.variant == 0 for p in full)


class TestNormalization:
    def test_formula_and_bounds(self):
        rng = np.random.default_rng(9)
        values = rng.uniform(-5.0, 50.0, size=(30, 4))
        out = normalize_values(values)
        assert np.array_equal(out, (values - values.min()) / (values.max() - values.min()))
        assert out.min() == 0.0 and out.max() == 1.0

    def test_constant_grid_becomes_zeros(self):
        assert not normalize_values(np.full((5, 3), 7.7)).any()

    def test_normalize_point_sets_flag_and_keeps_metadata(self, matrix300):
        dp = extract_datapoint(matrix300, ann_rows(matrix300, 100, 140), 80)
        ndp = normalize(dp)
        assert ndp.normalized
        assert ndp.label == dp.label
        assert ndp.provenance == dp.provenance
        assert np.array_equal(ndp.row_rts, dp.row_rts)
        assert np.array_equal(ndp.values, normalize_values(dp.values))


class TestNegativeSampling:
    def test_windows_avoid_annotations(self, matrix300):
        anns = [ann_rows(matrix300, 60, 90), ann_rows(matrix300, 200, 230, label=2)]
        points = sample_negatives(matrix300, anns, 12, np.random.default_rng(0), 80)
        assert len(points) == 12
        starts = [p.provenance.anchor_row for p in points]
        assert len(set(starts)) == 12
        for p in points:
            assert p.label == 0
            for a in anns:
                assert p.row_rts[-1] < a.start_rt or p.row_rts[0] > a.end_rt

    def test_deterministic(self, matrix300):
        anns = [ann_rows(matrix300, 60, 90)]
        a = sample_negatives(matrix300, anns, 5, np.random.default_rng(3), 80)
        b = sample_negatives(matrix300, anns, 5, np.random.default_rng(3), 80)
        assert [p.provenance.anchor_row for p in a] == [p.provenance.anchor_row for p in b]

    def test_insufficient_free_space_raises(self, matrix300):
        anns = [ann_rows(matrix300, 10, 290)]
        with pytest.raises(SamplingError):
            sample_negatives(matrix300, anns, 1, np.random.default_rng(0), 80)

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(77)
        checked = 0
        for _ in range(50):
            rows = int(rng.integers(120, 260))
            delta = int(rng.integers(20, 81))
            mat = random_matrix(rows, 2, rng)
            anns = []
            for label in range(1, int(rng.integers(1, 4)) + 1):
                a = int(rng.integers(0, rows - 12))
                b = a + int(rng.integers(2, 12))
                anns.append(ann_rows(mat, a, min(b, rows - 1), label=label))
            axis = mat.axis.values
            valid = [
                k
                for k in range(rows - delta + 1)
                if all(axis[k + delta - 1] < a.start_rt or axis[k] > a.end_rt for a in anns)
            ]
            want = min(len(valid), 200)
            if want == 0:
                continue
            points = sample_negatives(mat, anns, want, np.random.default_rng(checked), delta)
            got = {p.provenance.anchor_row for p in points}
            assert got <= set(valid)
            assert len(got) == want
            checked += len(points)
        assert checked >= 2000


class TestBuildDataset:
    def make_samples(self):
        rng = np.random.default_rng(21)
        m1 = random_matrix(600, 5, rng)
        m2 = random_matrix(600, 5, rng)
        return [
            (m1, [ann_rows(m1, 80, 110, label=1), ann_rows(m1, 180, 210, label=2)]),
            (m2, [ann_rows(m2, 150, 180, label=1)]),
        ]

    def test_counts_and_balance(self):
        ds = build_dataset(self.make_samples(), seed=0, delta=80, shifts=4, variants_per_shift=1)
        # 3 annotations x 4 shifts x (1 + 1 variants) = 24 positives, 1:1 negatives.
        assert len(ds) == 48
        assert ds.class_counts == {0: 24, 1: 16, 2: 8}
        assert ds.n_classes == 3
        assert all(p.normalized for p in ds.points)
        x, y = ds.to_arrays()
        assert x.shape == (48, 80, 5)
        assert y.shape == (48,)

    def test_negative_ratio(self):
        ds = build_dataset(
            self.make_samples(), seed=0, delta=80, shifts=4, variants_per_shift=1, negative_ratio=0.5
        )
        assert ds.class_counts[0] == 12
        ds0 = build_dataset(
            self.make_samples(), seed=0, delta=80, shifts=4, variants_per_shift=1, negative_ratio=0.0
        )
        assert 0 not in ds0.class_counts

    def test_deterministic(self):
        a = build_dataset(self.make_samples(), seed=11, delta=80, shifts=4, variants_per_shift=2)
        b = build_dataset(self.make_samples(), seed=11, delta=80, shifts=4, variants_per_shift=2)
        assert len(a) == len(b)
        assert all(np.array_equal(p.values, q.values) for p, q in zip(a.points, b.points))
        c = build_dataset(self.make_samples(), seed=12, delta=80, shifts=4, variants_per_shift=2)
        assert any(not np.array_equal(p.values, q.values) for p, q in zip(a.points, c.points))

    def test_unnormalized_option(self):
        ds = build_dataset(
            self.make_samples(), seed=0, delta=80, shifts=2, variants_per_shift=0, normalize_points=False
        )
        assert not any(p.normalized for p in ds.points)


def manifest_for_split(n_participants: int, samples_each: int = 2) -> Manifest:
    entries = []
    for p in range(n_participants):
        for s in range(samples_each):
            entries.append(
                SampleEntry(
                    sample_id=f"p{p}s{s}", matrix_path="x.csv", participant_id=f"p{p:02d}", split="train"
                )
            )
    return Manifest(samples=tuple(entries), voc_table=(VocTableEntry(1, "a"),))


class TestSplitByParticipant:
    def test_leave_one_participant_out(self):
        man = manifest_for_split(5)
        folds = split_by_participant(man, 5)
        assert len(folds) == 5
        all_ids = {s.sample_id for s in man.samples}
        for train, val in folds:
            assert set(train) | set(val) == all_ids
            assert not set(train) & set(val)
            val_participants = {v[:2] for v in val}
            assert len(val_participants) == 1
        covered = [v for _, val in folds for v in val]
        assert sorted(covered) == sorted(all_ids)

    def test_uneven_fold_sizes_differ_by_at_most_one(self):
        man = manifest_for_split(7, samples_each=1)
        folds = split_by_participant(man, 3)
        sizes = [len(val) for _, val in folds]
        assert sorted(sizes) == [2, 2, 3]

    def test_no_participant_straddles_a_split(self):
        man = manifest_for_split(6, samples_each=3)
        for train, val in split_by_participant(man, 3):
            assert not {v[:2] for v in val} & {t[:2] for t in train}

    def test_errors(self):
        man = manifest_for_split(3)
        with pytest.raises(SplitError):
            split_by_participant(man, 1)
        with pytest.raises(SplitError):
            split_by_participant(man, 4)


class TestDatasetCache:
    def test_round_trip(self, tmp_path, matrix300):
        ds = build_dataset(
            [(matrix300, [ann_rows(matrix300, 100, 115)])], seed=0, delta=40, shifts=4, variants_per_shift=1
        )
        path = tmp_path / "ds.npz"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert len(back) == len(ds)
        for p, q in zip(ds.points, back.points):
            assert np.array_equal(p.values, q.values)
            assert np.array_equal(p.row_rts, q.row_rts)
            assert (p.label, p.normalized, p.provenance) == (q.label, q.normalized, q.provenance)

    def test_refuses_empty(self, tmp_path):
        with pytest.raises(ContractError):
            save_dataset(LabeledDataset(points=()), tmp_path / "ds.npz")
