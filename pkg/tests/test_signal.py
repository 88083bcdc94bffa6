"""Preprocessing, windowing, features, augmentation and the synthetic generator."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skelnas import signal as sg
from skelnas.dataset import (SchemaError, build_windows, convert_container, read_container,
                             stratified_split, write_container)
from skelnas.signal import (AugmentRanges, DegenerateGeometryError, MalformedInputError, RawSequence, Window,
                            augment, augment_batch, butterworth_lowpass, compute_features, extract_features,
                            median_filter, resample_30hz, segment_windows, trunk_normalize, window_count)
from skelnas.skeleton import SkeletonError, parse_skeleton
from skelnas.synth import SynthConfig, generate_synthetic


def _seq(frames, fps=30.0, label=None, vid="v"):
    return RawSequence(vid, fps, np.asarray(frames, float), label)


def _random_frames(rng, t=40):
    return rng.normal(size=(t, 29, 2)) + np.array([5.0, -2.0])


class TestSkeleton:
    def test_asset_shape(self, skel):
        assert skel.vertex_count == 29
        assert skel.is_connected()
        assert skel.central_joint == 0
        a = skel.adjacency()
        assert (a == a.T).all() and np.trace(a) == 0

    def test_tree_parents(self, skel):
        par = skel.parents()
        assert par[skel.central_joint] == skel.central_joint
        assert sum(par == np.arange(29)) == 1

    def test_bad_assets_rejected(self):
        with pytest.raises(SkeletonError):
            parse_skeleton("vertices: 3\ncentral_joint: 0\ntrunk_pair: 0 1\n0 0\n")
        with pytest.raises(SkeletonError):
            parse_skeleton("vertices: 3\ncentral_joint: 5\ntrunk_pair: 0 1\n0 1\n")


class TestResample:
    def test_identity_at_30hz(self, rng):
        s = _seq(_random_frames(rng))
        assert np.array_equal(resample_30hz(s).frames, s.frames)

    def test_60hz_takes_even_samples(self, rng):
        f = _random_frames(rng, 100)
        out = resample_30hz(_seq(f, fps=60.0))
        assert out.fps == 30.0 and out.n_frames == 50
        np.testing.assert_allclose(out.frames, f[::2], atol=1e-12)

    def test_matches_direct_interpolation(self, rng):
        f = _random_frames(rng, 37)
        out = resample_30hz(_seq(f, fps=17.0))
        t_in = np.arange(37) / 17.0
        t_out = np.arange(out.n_frames) / 30.0
        ref = np.stack([np.interp(t_out, t_in, f[:, j, c]) for j in range(29) for c in range(2)], -1)
        np.testing.assert_allclose(out.frames.reshape(-1, 58), ref, atol=1e-12)
        assert abs(t_out[-1] - t_in[-1]) < 1 / 30

    def test_constant_stays_constant(self):
        f = np.tile(np.arange(58.0).reshape(1, 29, 2), (20, 1, 1))
        out = resample_30hz(_seq(f, fps=17.0))
        np.testing.assert_allclose(out.frames, np.broadcast_to(f[0], out.frames.shape))

    def test_single_frame_rejected(self):
        with pytest.raises(MalformedInputError):
            resample_30hz(_seq(np.zeros((1, 29, 2)), fps=60.0))


class TestMedianFilter:
    def _one(self, values):
        f = np.zeros((len(values), 29, 2))
        f[:, 3, 1] = values
        return median_filter(_seq(f)).frames[:, 3, 1]

    def test_impulse_removed(self):
        np.testing.assert_array_equal(self._one([0, 0, 10, 0, 0]), [0, 0, 0, 0, 0])

    def test_ramp_kept(self):
        np.testing.assert_array_equal(self._one([1, 2, 3, 4, 5]), [1, 2, 3, 4, 5])

    def test_constant_kept(self):
        np.testing.assert_array_equal(self._one([4.0] * 7), [4.0] * 7)


class TestTrunkNormalize:
    def test_centred_unit_trunk_unchanged(self, skel, rng):
        f = rng.normal(size=(30, 29, 2))
        f[:, 0] = 0.0
        f[:, 2] = [0.0, 0.5]
        out = trunk_normalize(_seq(f), skel).frames
        np.testing.assert_allclose(out, f, atol=1e-12)

    def test_pelvis_median_at_origin(self, skel, rng):
        out = trunk_normalize(_seq(_random_frames(rng)), skel).frames
        np.testing.assert_allclose(np.median(out[:, 0], axis=0), 0.0, atol=1e-12)

    def test_zero_trunk(self, skel):
        with pytest.raises(DegenerateGeometryError):
            trunk_normalize(_seq(np.ones((5, 29, 2))), skel)

    @settings(max_examples=40, deadline=None)
    @given(dx=st.floats(-1e3, 1e3), dy=st.floats(-1e3, 1e3), s=st.floats(0.05, 50.0), seed=st.integers(0, 2**16))
    def test_similarity_invariance(self, skel, dx, dy, s, seed):
        f = _random_frames(np.random.default_rng(seed), 20)
        a = trunk_normalize(_seq(f), skel).frames
        b = trunk_normalize(_seq(f * s + np.array([dx, dy])), skel).frames
        np.testing.assert_allclose(a, b, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_idempotent(self, skel, seed):
        once = trunk_normalize(_seq(_random_frames(np.random.default_rng(seed))), skel)
        twice = trunk_normalize(once, skel)
        np.testing.assert_allclose(twice.frames, once.frames, atol=1e-9)


class TestWindows:
    @pytest.mark.parametrize("t,n", [(300, 3), (150, 1), (149, 0), (151, 1), (225, 2), (450, 5)])
    def test_count(self, t, n):
        assert window_count(t) == n
        ws = segment_windows(_seq(np.zeros((t, 29, 2))))
        assert len(ws) == n

    def test_starts_and_overlap(self):
        f = np.arange(300, dtype=float)[:, None, None] * np.ones((1, 29, 2))
        ws = segment_windows(_seq(f))
        assert [w.frames[0, 0, 0] for w in ws] == [0, 75, 150]
        assert all(w.frames.shape == (150, 29, 2) for w in ws)
        np.testing.assert_array_equal(ws[0].frames[75:], ws[1].frames[:75])

    @settings(max_examples=30, deadline=None)
    @given(t=st.integers(1, 700))
    def test_windows_cover_prefix(self, t):
        f = np.arange(t, dtype=float)[:, None, None] * np.ones((1, 29, 2))
        ws = segment_windows(_seq(f))
        covered = sorted({int(x) for w in ws for x in w.frames[:, 0, 0]})
        if ws:
            assert covered == list(range(ws[-1].start + 150))
        assert len(ws) == window_count(t)

    def test_needs_30hz(self):
        with pytest.raises(MalformedInputError):
            segment_windows(_seq(np.zeros((200, 29, 2)), fps=25.0))


class TestFeatures:
    def test_shapes(self, skel, rng):
        fs = extract_features(Window(rng.normal(size=(150, 29, 2)), "v", 0), skel)
        assert fs.P.shape == (4, 150, 29)
        for x in (fs.V, fs.A, fs.B):
            assert x.shape == (2, 150, 29)
        assert all(np.isfinite(x).all() for x in fs.as_tuple())

    def test_relative_positions(self, skel, rng):
        f = rng.normal(size=(150, 29, 2))
        fs = compute_features(f, skel)
        np.testing.assert_allclose(fs.P[2:], np.moveaxis(f - f[:, :1], -1, 0))
        np.testing.assert_allclose(fs.P[:2], np.moveaxis(f, -1, 0))

    def test_static_pose(self, skel, rng):
        f = np.broadcast_to(rng.normal(size=(1, 29, 2)), (150, 29, 2))
        fs = compute_features(f, skel)
        assert np.abs(fs.V).max() < 1e-12 and np.abs(fs.A).max() < 1e-9

    def test_linear_motion(self, skel):
        t = np.arange(150)
        f = np.zeros((150, 29, 2))
        f[:, 5, 0] = 0.1 * t / 30
        fs = compute_features(f, skel)
        np.testing.assert_allclose(fs.V[0, 1:-1, 5], 0.1, atol=1e-12)
        assert np.abs(fs.A[0, :, 5]).max() < 1e-9

    def test_bone_horizontal(self):
        b = sg.bone_features(np.array([[[0.0, 0.0], [0.5, 0.0]]]), np.array([0, 0]))
        np.testing.assert_allclose(b[0, 1], [0.5, np.pi])  # child (0.5, 0) -> parent (0, 0) points along -x
        b = sg.bone_features(np.array([[[0.5, 0.0], [0.0, 0.0]]]), np.array([0, 0]))
        np.testing.assert_allclose(b[0, 1], [0.5, 0.0])
        np.testing.assert_array_equal(b[0, 0], [0.0, 0.0])

    def test_angle_range(self, rng):
        b = sg.bone_features(rng.normal(size=(500, 2, 2)), np.array([0, 0]))
        assert (b[:, 1, 1] > -np.pi).all() and (b[:, 1, 1] <= np.pi).all()
        b = sg.bone_features(np.array([[[0.0, 0.0], [1.0, 0.0]]]), np.array([0, 0]))
        assert b[0, 1, 1] == np.pi

    def test_batch_matches_single(self, skel, rng):
        f = rng.normal(size=(3, 150, 29, 2))
        batch = compute_features(f, skel)
        one = compute_features(f[1], skel)
        for a, b in zip(batch.as_tuple(), one.as_tuple()):
            np.testing.assert_allclose(a[1], b, atol=1e-12)

    def test_velocity_integrates_back(self, skel, rng):
        """x[t+1] = x[t-1] + 2 V[t] / fps along each parity chain of the central difference."""
        x = np.cumsum(rng.normal(size=(150, 29, 2)), axis=0)
        v = np.moveaxis(compute_features(x, skel).V, 0, -1)
        for start in (0, 1):
            rebuilt = x[start] + np.cumsum(2 * v[start + 1:-1:2] / 30.0, axis=0)
            np.testing.assert_allclose(rebuilt, x[start + 2::2][:len(rebuilt)], atol=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**16), scale=st.floats(1e-3, 1e3))
    def test_finite_for_finite_input(self, skel, seed, scale):
        f = np.random.default_rng(seed).normal(size=(150, 29, 2)) * scale
        assert all(np.isfinite(x).all() for x in compute_features(f, skel).as_tuple())


class TestButterworth:
    def _single_pass_gain(self, freq, cutoff=5.0, fs=30.0):
        """Amplitude ratio on the steady-state tail of a filtered sinusoid."""
        t = np.arange(6000) / fs
        y = butterworth_lowpass(np.sin(2 * np.pi * freq * t), cutoff, fs, zero_phase=False)
        tail = y[3000:]
        return np.sqrt(2 * np.mean(tail ** 2))

    def test_gain_at_cutoff(self):
        assert abs(self._single_pass_gain(5.0) - 2 ** -0.5) < 1e-3

    def test_octave_attenuation(self):
        assert -20 * np.log10(self._single_pass_gain(10.0)) >= 45.0

    def test_dc_gain(self):
        np.testing.assert_allclose(butterworth_lowpass(np.full(300, 3.0)), 3.0, atol=1e-9)

    @pytest.mark.parametrize("cut", [0.0, 15.0, 20.0, -1.0])
    def test_bad_cutoff(self, cut):
        with pytest.raises(ValueError):
            butterworth_lowpass(np.zeros(100), cut)


class TestAugment:
    def test_identity(self, rng):
        w = Window(rng.normal(size=(150, 29, 2)), "v", 0, 1)
        out = augment(w, rng, AugmentRanges.identity())
        np.testing.assert_allclose(out.frames, w.frames, atol=1e-15)
        assert out.label == 1

    def test_rotation_preserves_distances(self, rng):
        f = rng.normal(size=(150, 29, 2))
        out = augment(Window(f, "v", 0), rng, AugmentRanges((1, 1), (-3, 3), (0, 0))).frames
        d = lambda x: np.linalg.norm(x[:, :, None] - x[:, None, :], axis=-1)  # noqa: E731
        np.testing.assert_allclose(d(out), d(f), atol=1e-6)

    def test_scale_multiplies_bones(self, skel, rng):
        f = rng.normal(size=(150, 29, 2))
        out = augment(Window(f, "v", 0), rng, AugmentRanges((1.2, 1.2), (0, 0), (0, 0))).frames
        b0 = compute_features(f, skel).B[0]
        b1 = compute_features(out, skel).B[0]
        np.testing.assert_allclose(b1, 1.2 * b0, atol=1e-6)

    def test_batch_shapes_and_independence(self, rng):
        f = np.repeat(rng.normal(size=(1, 150, 29, 2)), 4, axis=0)
        out = augment_batch(f, rng)
        assert out.shape == f.shape
        assert not np.allclose(out[0], out[1])

    def test_bad_ranges(self):
        with pytest.raises(ValueError):
            AugmentRanges(scale=(0.0, 1.0))


class TestSynthetic:
    def test_deterministic(self):
        cfg = SynthConfig(videos_per_class=2, frames_per_video=200)
        a, b = generate_synthetic(cfg), generate_synthetic(cfg)
        assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))

    def test_windows_per_video(self, skel):
        seqs = generate_synthetic(SynthConfig(videos_per_class=1))
        ws = build_windows(seqs, skel)
        assert len(ws) == 10 and len(ws.videos()) == 2

    @pytest.mark.parametrize("seed", [0, 3, 1234])
    def test_velocity_magnitude_separates(self, skel, seed):
        """Class 0 moves its limbs more: mean |V| per window splits the classes."""
        seqs = generate_synthetic(SynthConfig(videos_per_class=10, seed=seed))
        ws = build_windows(seqs, skel)
        v = compute_features(ws.frames, skel).V
        score = np.linalg.norm(v, axis=1).mean(axis=(1, 2))
        assert score[ws.labels == 0].min() > score[ws.labels == 1].max()

    def test_noise_and_counts_validated(self):
        with pytest.raises(ValueError):
            SynthConfig(noise_std=-1.0)
        with pytest.raises(ValueError):
            SynthConfig(videos_per_class=0)


class TestContainer:
    def test_round_trip(self, tmp_path):
        seqs = generate_synthetic(SynthConfig(videos_per_class=1, frames_per_video=160))
        p = tmp_path / "d.jsonl"
        write_container(p, seqs)
        back = read_container(p)
        assert [s.video_id for s in back] == [s.video_id for s in seqs]
        assert all(np.array_equal(a.frames, b.frames) and a.label == b.label for a, b in zip(seqs, back))

    def test_converter_orders_fields(self, tmp_path):
        src = tmp_path / "in.jsonl"
        src.write_text('{"frames": %s, "label": 1, "fps": 30, "video_id": "x"}\n'
                       % np.zeros((2, 29, 2)).tolist())
        assert convert_container(src, tmp_path / "out.jsonl") == 1
        line = (tmp_path / "out.jsonl").read_text().splitlines()[0]
        assert line.index('"schema"') < line.index('"video_id"') < line.index('"frames"')

    def test_schema_errors(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"video_id": "x", "fps": 30, "frames": [[[0, 0]]], "label": 1}\n')
        with pytest.raises(SchemaError, match="record 1"):
            read_container(p)
        p.write_text('{"video_id": "x", "fps": 30, "frames": [], "label": 3}\n')
        with pytest.raises(SchemaError):
            read_container(p)

    def test_split_is_by_video_and_stratified(self):
        seqs = generate_synthetic(SynthConfig(videos_per_class=8, frames_per_video=150))
        parts = stratified_split(seqs, (0.5, 0.25, 0.25), seed=3)
        ids = [{s.video_id for s in p} for p in parts]
        assert sum(len(i) for i in ids) == 16 and not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        for p, n in zip(parts, (4, 2, 2)):
            assert sum(s.label == 1 for s in p) == n
