import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from affmixer.config import ClipSpec
from affmixer.data import (
    Manifest, SampleRecord, SequenceStore, SyntheticSpec, generate_synthetic, load_feature_sequences, load_manifest,
    sample_clips, save_manifest,
)
from affmixer.data.clips import ClipLoader, clip_windows
from affmixer.data.formats import read_annotation, read_features, write_annotation, write_features
from affmixer.data.synthetic import labels_from_parameters, sample_parameters
from affmixer.errors import DataValidationError, DimensionError
from oracles import decode_sequence

HEADER = json.dumps({"format": "affmixer-manifest", "version": 1})


def write_manifest(tmp_path, *records, header=HEADER):
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n".join([header, *(json.dumps(r) for r in records)]) + "\n")
    return path


def feature_manifest(tmp_path, lengths, dim=16):
    recs = []
    for i, n in enumerate(lengths):
        write_features(tmp_path / f"f{i}.npy", np.random.default_rng(i).normal(size=(n, dim)))
        recs.append(SampleRecord(f"s{i}", "train", 30.0, features=f"f{i}.npy"))
    m = Manifest(recs, tmp_path)
    save_manifest(m, tmp_path / "manifest.jsonl")
    return load_manifest(tmp_path / "manifest.jsonl")


class TestManifest:
    def test_empty_file_warns(self, tmp_path, caplog):
        (tmp_path / "m.jsonl").write_text("")
        assert len(load_manifest(tmp_path / "m.jsonl")) == 0
        assert "empty" in caplog.text

    def test_missing_paths_are_all_listed(self, tmp_path):
        path = write_manifest(tmp_path, {"id": "a", "split": "train", "frames": "nope_a"},
                              {"id": "b", "split": "val", "features": "nope_b.npy"})
        with pytest.raises(DataValidationError, match="nope_a.*nope_b"):
            load_manifest(path)

    @pytest.mark.parametrize("records,match", [
        ([{"id": "a", "split": "train", "frames": "x"}, {"id": "a", "split": "val", "frames": "y"}], "duplicate"),
        ([{"id": "a", "split": "dev", "frames": "x"}], "split"),
        ([{"id": "a", "split": "train"}], "exactly one"),
        ([{"id": "a", "split": "train", "frames": "x", "annotations": {"pose": "p.csv"}}], "unknown annotation"),
        ([{"split": "train", "frames": "x"}], ":2:"),
    ])
    def test_record_errors(self, tmp_path, records, match):
        with pytest.raises(DataValidationError, match=match):
            load_manifest(write_manifest(tmp_path, *records), check_paths=False)

    def test_bad_header(self, tmp_path):
        with pytest.raises(DataValidationError, match=":1:"):
            load_manifest(write_manifest(tmp_path, header='{"format": "other"}'))

    def test_round_trip(self, tiny_data, tmp_path):
        save_manifest(tiny_data, tmp_path / "copy.jsonl")
        again = load_manifest(tmp_path / "copy.jsonl", check_paths=False)
        assert again.records == tiny_data.records


class TestAnnotations:
    def test_round_trip_with_sentinels(self, tmp_path):
        values = np.array([[0.5, -0.25], [0.1, 0.9], [-1.0, 1.0]])
        valid = np.array([[True, True], [False, True], [True, False]])
        write_annotation(tmp_path / "va.csv", "va", values, valid)
        got, got_valid = read_annotation(tmp_path / "va.csv", "va")
        np.testing.assert_array_equal(got_valid, valid)
        np.testing.assert_array_equal(got[valid], values[valid])

    def test_emi_scale(self, tmp_path):
        write_annotation(tmp_path / "emi.csv", "emi", np.array([0.0, 0.25, 0.5, 0.75, 1.0, 0.33]))
        got, valid = read_annotation(tmp_path / "emi.csv", "emi")
        np.testing.assert_allclose(got, [0.0, 0.25, 0.5, 0.75, 1.0, 0.33])
        assert valid.all()

    def test_task_mismatch_and_columns(self, tmp_path):
        write_annotation(tmp_path / "ah.csv", "ah", np.zeros((3, 1)))
        with pytest.raises(DataValidationError, match="task"):
            read_annotation(tmp_path / "ah.csv", "au")
        (tmp_path / "bad.csv").write_text("#affmixer-annotation v1 task=va sentinel=-5\nv,a\n0.1\n")
        with pytest.raises(DataValidationError, match=":3:"):
            read_annotation(tmp_path / "bad.csv", "va")

    def test_feature_dim_check(self, tmp_path):
        write_features(tmp_path / "f.npy", np.zeros((5, 8)))
        assert read_features(tmp_path / "f.npy", 8).shape == (5, 8)
        with pytest.raises(DimensionError):
            read_features(tmp_path / "f.npy", 16)


class TestClips:
    def test_sequential_example(self):
        spec = ClipSpec(length=4, stride=4, policy="sequential")
        assert clip_windows(10, spec) == [0, 4, 8]

    def test_clip_contents_and_padding(self, tmp_path):
        m = feature_manifest(tmp_path, [10], dim=4)
        batches = list(sample_clips(m, ClipSpec(length=4, stride=4, policy="sequential"), feature_dim=4))
        idx = [b.frame_index[0].tolist() for b in batches]
        assert idx == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, -1, -1]]
        last = batches[-1]
        assert last.frame_mask[0].tolist() == [True, True, False, False]
        assert torch.all(last.features[0, 2:] == 0)

    def test_single_frame_clips(self, tmp_path):
        m = feature_manifest(tmp_path, [7], dim=4)
        assert len(list(sample_clips(m, ClipSpec(length=1, stride=1, policy="sequential"), feature_dim=4))) == 7

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 60), t=st.integers(1, 12), stride=st.integers(1, 12), seed=st.integers(0, 99))
    def test_windows_cover_every_frame(self, n, t, stride, seed):
        spec = ClipSpec(length=t, stride=stride, policy="sequential")
        starts = clip_windows(n, spec)
        covered = {i for s in starts for i in range(s, min(s + t, n))}
        if stride <= t:
            assert covered == set(range(n))
        assert starts == sorted(starts) and starts[0] == 0
        rs = clip_windows(n, ClipSpec(length=t, stride=stride), np.random.default_rng(seed))
        assert 0 <= rs[0] < stride and all(s < n for s in rs)

    def test_loader_is_deterministic(self, tiny_data):
        spec = ClipSpec(length=8, stride=4)
        a = ClipLoader(SequenceStore(tiny_data, "train"), spec, 3, seed=5)
        b = ClipLoader(SequenceStore(tiny_data, "train"), spec, 3, seed=5)
        assert a.clip_index(0) == b.clip_index(0)
        assert a.clip_index(0) != a.clip_index(1)
        first = list(a.epoch(1))[2]
        again = b.batch_at(a.batches_per_epoch() + 2)
        assert first.sample_ids == again.sample_ids
        assert torch.equal(first.frames, again.frames)

    def test_feature_sequences(self, tmp_path, caplog):
        m = feature_manifest(tmp_path, [100, 0], dim=512)
        clips = list(load_feature_sequences(m, ClipSpec(length=10, stride=10, policy="sequential"), 512))
        assert len(clips) == 10
        assert all(c.features.shape == (1, 10, 512) for c in clips)
        assert "empty" in caplog.text

    def test_empty_frame_dir_pads(self, tmp_path):
        (tmp_path / "frames").mkdir()
        m = Manifest([SampleRecord("e", "train", 30.0, frames="frames")], tmp_path)
        (batch,) = list(sample_clips(m, ClipSpec(length=4, stride=4), image_size=32))
        assert batch.frames.shape == (1, 4, 3, 32, 32) and not batch.frame_mask.any()


class TestSynthetic:
    def test_deterministic(self, tmp_path):
        spec = SyntheticSpec(seed=7, length=6, image_size=32, n_train=2, n_val=1)
        generate_synthetic(spec, tmp_path / "a")
        generate_synthetic(spec, tmp_path / "b")
        for rel in ("train_0001/va.csv", "val_0000/au.csv", "train_0000/frames/000003.png"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_labels_decode_from_pixels(self, tiny_data):
        for rec in tiny_data.records:
            decoded = decode_sequence(tiny_data.resolve(rec.frames))
            for task in ("au", "va", "ah"):
                values, valid = read_annotation(tiny_data.resolve(rec.annotations[task]), task)
                np.testing.assert_allclose(decoded[task][valid], values[valid], atol=1e-9, err_msg=f"{rec.id}/{task}")
            emi, _ = read_annotation(tiny_data.resolve(rec.annotations["emi"]), "emi")
            np.testing.assert_allclose(decoded["emi"], emi, atol=1e-12)

    def test_dark_frames(self):
        spec = SyntheticSpec(au_rate=0.0, luminance_range=(0.0, 0.0), motion_range=(0.0, 0.0))
        labels = labels_from_parameters(spec, sample_parameters(spec, np.random.default_rng(0), 10))
        assert not labels["au"].any()
        np.testing.assert_array_equal(labels["va"], -1.0)

    def test_invalid_rate_plants_sentinels(self, tiny_data):
        n_invalid = 0
        for rec in tiny_data.records:
            _, valid = read_annotation(tiny_data.resolve(rec.annotations["au"]), "au")
            n_invalid += (~valid).sum()
        assert n_invalid > 0
