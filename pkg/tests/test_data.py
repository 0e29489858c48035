import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from stan_eeg import edf
from stan_eeg.data import (
    INTERICTAL,
    PREICTAL,
    LabelConfig,
    LabeledWindow,
    Normalizer,
    Recording,
    balance,
    convert_chbmit,
    label_window,
    labeled_windows,
    load_dataset,
    load_edf,
    make_training_set,
    parse_chbmit_summary,
    read_onsets,
    save_dataset,
    window_offsets,
)
from stan_eeg.errors import ConfigError, DataInsufficiencyError, ParseError, UnsupportedFormatError, ValidationError
from stan_eeg.synthetic import SyntheticDatasetSpec, SyntheticSpec, generate_dataset, generate_synthetic, read_spec

H = 3600.0
M = 60.0


def mean_coupling(x):
    c = np.corrcoef(x)
    return c[np.triu_indices(len(c), 1)].mean()


class TestLabelWindow:
    def test_worked_examples(self):
        assert label_window(3000, [3600]) == PREICTAL
        assert label_window(3600 + 5 * H, [3600]) == INTERICTAL
        assert label_window(1800, [3600]) is None

    @pytest.mark.parametrize("t,expected", [
        (3600 - 15 * M, PREICTAL), (3600 - 1, PREICTAL), (3600, None), (3600 - 15 * M - 1, None),
        (3600 + 4 * H, None), (3600 + 4 * H + 1, INTERICTAL), (3600 + 2 * H, None),
    ])
    def test_zone_boundaries(self, t, expected):
        assert label_window(t, [3600]) == expected

    def test_grid_matches_zone_oracle(self):
        onsets = [5 * H, 14 * H]
        for t in np.arange(0, 20 * H, 97.0):
            d = [t - o for o in onsets]
            if any(-15 * M <= x < 0 for x in d):
                want = PREICTAL
            elif all(abs(x) > 4 * H for x in d):
                want = INTERICTAL
            else:
                want = None
            assert label_window(t, onsets) == want, t

    def test_straddling_window_discarded(self):
        assert label_window(3599.5, [3600], window_len=1.0) is None
        assert label_window(3599.0, [3600], window_len=1.0) == PREICTAL

    @given(st.floats(0, 50 * H), st.lists(st.floats(0, 50 * H), min_size=1, max_size=4))
    def test_labels_are_exclusive(self, t, onsets):
        lab = label_window(t, sorted(onsets))
        pre = any(o - 15 * M <= t < o for o in onsets)
        inter = all(abs(t - o) > 4 * H for o in onsets)
        assert not (pre and inter)
        assert lab == (PREICTAL if pre else INTERICTAL if inter else None)


def rec_with(onsets, duration=2000, n=3, rate=4, name="r", subject="s"):
    x = np.arange(n * duration * rate, dtype=float).reshape(n, -1)
    return Recording([f"C{i}" for i in range(n)], rate, x, onsets, subject, name)


class TestRecordingAndWindows:
    def test_onset_validation(self):
        with pytest.raises(ValidationError):
            rec_with([3000])
        with pytest.raises(ValidationError):
            rec_with([500, 400])

    def test_windows_tile_without_overlap(self):
        rec = rec_with([1500])
        offs = window_offsets(rec)
        np.testing.assert_array_equal(np.diff(offs), 1.0)
        ws = labeled_windows(rec, LabelConfig(horizon=300, margin=600))
        assert all(w.window.shape == (3, 4) for w in ws)
        assert all(w.offset % 1.0 == 0 for w in ws)
        pre = [w.offset for w in ws if w.label == PREICTAL]
        assert pre == list(np.arange(1200.0, 1500.0))
        inter = [w.offset for w in ws if w.label == INTERICTAL]
        assert max(inter) < 1500 - 600 and min(inter) == 0

    def test_balance_equal_counts_and_determinism(self, rng):
        ws = [LabeledWindow(np.zeros((2, 2)), PREICTAL if i < 5 else INTERICTAL, "a", "r", float(i)) for i in range(40)]
        out = balance(ws, np.random.default_rng(0))
        assert sum(w.label == PREICTAL for w in out) == sum(w.label == INTERICTAL for w in out) == 5
        again = balance(ws, np.random.default_rng(0))
        assert [w.offset for w in out] == [w.offset for w in again]

    def test_balance_paper_sized_example(self):
        ws = [LabeledWindow(None, PREICTAL, "a", "r", float(i)) for i in range(900)]
        ws += [LabeledWindow(None, INTERICTAL, "a", "r", float(i)) for i in range(40000)]
        out = balance(ws, np.random.default_rng(1))
        assert len(out) == 1800

    def test_balance_already_equal_unchanged(self):
        ws = [LabeledWindow(None, i % 2, "a", "r", float(i)) for i in range(10)]
        assert sorted(w.offset for w in balance(ws, np.random.default_rng(0))) == list(map(float, range(10)))

    def test_missing_class_names_subject(self):
        ws = [LabeledWindow(None, INTERICTAL, "chb07", "r", 0.0)]
        with pytest.raises(DataInsufficiencyError, match="chb07"):
            balance(ws, np.random.default_rng(0))

    def test_make_training_set(self):
        recs = [rec_with([1500], name="a"), rec_with([1800], name="b")]
        ws = make_training_set(recs, 0, LabelConfig(horizon=300, margin=600))
        labels = [w.label for w in ws]
        assert labels.count(PREICTAL) == labels.count(INTERICTAL) == 600

    def test_normalizer(self, rng):
        x = rng.standard_normal((10, 3, 8)) * [[2.0], [5.0], [0.5]] + [[1.0], [-3.0], [0.0]]
        norm = Normalizer.fit(x)
        z = norm(x)
        np.testing.assert_allclose(z.mean(axis=(0, 2)), 0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=(0, 2)), 1, atol=1e-12)
        back = Normalizer.from_dict(norm.to_dict())
        np.testing.assert_array_equal(back(x), z)


class TestEdf:
    def test_round_trip_within_quantisation(self, tmp_path, rng):
        x = rng.standard_normal((2, 10 * 16)) * 40
        p = tmp_path / "s01_r01.edf"
        edf.write_edf(p, x, 16, ["Fp1-F7", "F7-T7"])
        hdr, labels, y, rate = edf.read_edf(p)
        assert labels == ["Fp1-F7", "F7-T7"] and rate == 16.0
        step = edf.quantisation_step(hdr)
        assert np.all(np.abs(y - x) <= step[:, None] / 2 + 1e-9)

    def test_load_edf_exclusion_and_sidecar(self, tmp_path, rng):
        p = tmp_path / "chb01_03.edf"
        edf.write_edf(p, rng.standard_normal((3, 20)), 4, ["A", "P7-T7", "B"])
        p.with_suffix(".onsets").write_text("# onsets\n2.5\n")
        rec = load_edf(p, exclude=["p7-t7"])
        assert rec.channels == ["A", "B"] and rec.seizure_onsets == [2.5] and rec.subject_id == "chb01"

    def test_everything_excluded(self, tmp_path, rng):
        p = tmp_path / "a.edf"
        edf.write_edf(p, rng.standard_normal((1, 4)), 4, ["A"])
        with pytest.raises(ConfigError):
            load_edf(p, exclude=["A"])

    def test_onset_beyond_duration(self, tmp_path, rng):
        p = tmp_path / "a.edf"
        edf.write_edf(p, rng.standard_normal((1, 8)), 4, ["A"])
        with pytest.raises(ValidationError):
            load_edf(p, onsets=[5.0])

    def test_malformed_header_reports_offset(self, tmp_path, rng):
        p = tmp_path / "a.edf"
        edf.write_edf(p, rng.standard_normal((1, 8)), 4, ["A"])
        raw = bytearray(p.read_bytes())
        raw[252:256] = b"xx  "
        p.write_bytes(bytes(raw))
        with pytest.raises(ParseError, match="offset 252"):
            load_edf(p)
        p.write_bytes(bytes(raw[:100]))
        with pytest.raises(ParseError):
            load_edf(p)

    def test_truncated_records(self, tmp_path, rng):
        p = tmp_path / "a.edf"
        edf.write_edf(p, rng.standard_normal((1, 8)), 4, ["A"])
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(ParseError, match="records"):
            edf.read_edf(p)

    def test_mixed_sample_rates(self, tmp_path, rng):
        p = tmp_path / "a.edf"
        edf.write_edf(p, rng.standard_normal((2, 8)), 4, ["A", "B"])
        raw = bytearray(p.read_bytes())
        hdr = edf.read_header(bytes(raw))
        spr_offset = 256 + 2 * (16 + 80 + 8 + 8 + 8 + 8 + 8 + 80) + 8  # second signal's samples field
        raw[spr_offset:spr_offset + 8] = b"2       "
        body = bytes(hdr.n_records * (4 + 2) * 2)
        p.write_bytes(bytes(raw[:hdr.header_bytes]) + body)
        with pytest.raises(UnsupportedFormatError):
            load_edf(p)

    def test_dataset_round_trip(self, tmp_path):
        recs = generate_dataset(SyntheticDatasetSpec(subjects=1, recordings_per_subject=2, duration=60, onset=50,
                                                      ramp=20, sample_rate=8))
        save_dataset(tmp_path, recs)
        back = load_dataset(tmp_path)
        assert [r.name for r in back] == ["s01_r01", "s01_r02"]
        assert back[0].seizure_onsets == [50.0] and back[0].subject_id == "s01"
        assert back[0].samples.shape == recs[0].samples.shape

    def test_empty_dataset_dir(self, tmp_path):
        with pytest.raises(ConfigError):
            load_dataset(tmp_path)


SUMMARY = """Data Sampling Rate: 256 Hz

File Name: chb01_03.edf
File Start Time: 13:43:04
Number of Seizures in File: 1
Seizure Start Time: 2996 seconds
Seizure End Time: 3036 seconds

File Name: chb01_04.edf
Number of Seizures in File: 0

File Name: chb01_15.edf
Number of Seizures in File: 2
Seizure 1 Start Time: 1732 seconds
Seizure 1 End Time: 1772 seconds
Seizure 2 Start Time: 3000 seconds
Seizure 2 End Time: 3010 seconds
"""


class TestChbmit:
    def test_parse_summary(self):
        assert parse_chbmit_summary(SUMMARY) == {
            "chb01_03.edf": [2996.0], "chb01_04.edf": [], "chb01_15.edf": [1732.0, 3000.0]}

    def test_convert_writes_sidecars(self, tmp_path):
        s = tmp_path / "chb01-summary.txt"
        s.write_text(SUMMARY)
        convert_chbmit(s)
        assert read_onsets(tmp_path / "chb01_15.onsets") == [1732.0, 3000.0]
        assert read_onsets(tmp_path / "chb01_04.onsets") == []


class TestSynthetic:
    spec = dict(n_channels=6, duration=1200, onsets=(1100.0,), ramp=300.0, sample_rate=32, seed=3)

    def window_couplings(self, rec, start, stop):
        return [mean_coupling(rec.window(t, 10.0)) for t in np.arange(start, stop, 10.0)]

    def test_seeded_bit_identical(self):
        a, b = generate_synthetic(SyntheticSpec(**self.spec)), generate_synthetic(SyntheticSpec(**self.spec))
        assert np.array_equal(a.samples, b.samples)

    def test_zero_strength_indistinguishable(self):
        rec = generate_synthetic(SyntheticSpec(**self.spec, strength=0.0))
        pre = self.window_couplings(rec, 1100 - 300, 1100)
        inter = self.window_couplings(rec, 0, 300)
        assert stats.ttest_ind(pre, inter).pvalue > 0.01

    def test_strong_signature_raises_coupling(self):
        rec = generate_synthetic(SyntheticSpec(**self.spec, strength=10.0))
        late_pre = np.mean(self.window_couplings(rec, 1100 - 120, 1100))
        inter = np.mean(self.window_couplings(rec, 0, 600))
        assert late_pre - inter > 0.3

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(strength=-1)

    def test_dataset_layout(self):
        spec = SyntheticDatasetSpec(subjects=2, recordings_per_subject=3, duration=40, onset=30, ramp=10, sample_rate=8)
        recs = generate_dataset(spec)
        assert [r.subject_id for r in recs] == ["s01"] * 3 + ["s02"] * 3
        assert len({r.samples.tobytes() for r in recs}) == 6

    def test_fixture_spec_parses(self):
        from pathlib import Path
        spec = read_spec(Path(__file__).parent.parent / "fixtures" / "toy.cfg")
        assert spec.subjects == 2 and spec.sample_rate == 16 and spec.onset == 360.0

    def test_spec_unknown_key(self, tmp_path):
        p = tmp_path / "s.cfg"
        p.write_text("[synthetic]\nbogus = 1\n")
        with pytest.raises(ConfigError):
            read_spec(p)
