import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmmaction import (
    ContractError,
    PcaModel,
    PipelineConfig,
    ProtocolError,
    SampleRecord,
    Split,
    StateError,
    StreamPlan,
    SvmModel,
    SynthSpec,
    build_streams,
    classify,
    evaluate,
    extract_sample,
    generate_synthetic_dataset,
    load_plan,
    read_manifest,
    render_grid,
    resolve_split,
    save_plan,
    stack_clip,
    train,
)
from dmmaction.neural import extract_features
from dmmaction.pipeline import template_count
from conftest import desk_config


@pytest.fixture(scope="module")
def split(small_dataset):
    return resolve_split(small_dataset, "cross-subject")


@pytest.fixture(scope="module")
def trained(small_dataset, split):
    return train(small_dataset, split, desk_config())


class TestBuildStreams:
    def test_default_config_has_132_streams(self):
        plan = build_streams(PipelineConfig())
        assert len(plan.streams) == 132

    def test_minimal_config_single_stream(self):
        cfg = desk_config(
            poses=("standing",), planes=("xy",), angles=(0.0,),
            depth_windows=(5,), rgb_windows=(),
        )
        assert len(build_streams(cfg).streams) == 1

    def test_benchmark_style_count(self):
        cfg = desk_config(
            angles=(-30.0, 0.0, 30.0), depth_windows=(5, "all"), rgb_windows=(10, 16)
        )
        assert len(build_streams(cfg).streams) == 1 * (3 * 3 * 2 + 2)

    def test_enumeration_deterministic_and_unique(self):
        a = build_streams(desk_config())
        b = build_streams(desk_config())
        ids = [s.id for s in a.streams]
        assert ids == [s.id for s in b.streams]
        assert len(set(ids)) == len(ids)

    def test_stream_ids_carry_coordinates(self):
        plan = build_streams(desk_config())
        dmm = [s for s in plan.streams if s.kind == "dmm"]
        rgb = [s for s in plan.streams if s.kind == "rgb"]
        assert len(dmm) == 6 and len(rgb) == 1
        assert all(s.id.startswith("standing/dmm/") for s in dmm)
        assert rgb[0].id == "standing/rgb/r10"
        assert rgb[0].rgb_len == 10

    @given(
        st.integers(1, 2),
        st.integers(1, 3),
        st.integers(1, 3),
        st.integers(1, 2),
        st.integers(0, 2),
    )
    @settings(max_examples=30, deadline=None)
    def test_count_formula(self, n_poses, n_planes, n_angles, n_windows, n_rgb):
        cfg = desk_config(
            poses=("sitting", "standing")[:n_poses],
            planes=("xy", "yz", "xz")[:n_planes],
            angles=tuple(15.0 * i for i in range(n_angles)),
            depth_windows=tuple(range(5, 5 + n_windows)),
            rgb_windows=tuple(range(10, 10 + n_rgb)),
        )
        expected = n_poses * (n_planes * n_angles * n_windows + n_rgb)
        assert len(build_streams(cfg).streams) == expected


class TestTemplateCount:
    def test_finite_window(self):
        assert template_count(20, 5) == 15

    def test_all_window(self):
        assert template_count(20, "all") == 18

    def test_too_short_gives_zero(self):
        assert template_count(5, 10) == 0

    @given(st.integers(3, 60), st.integers(2, 12))
    @settings(max_examples=40, deadline=None)
    def test_formula(self, n, w):
        assert template_count(n, w) == max(0, n - w)
        assert template_count(n, "all") == n - 2


class TestExtractSample:
    def test_determinism(self, small_dataset):
        cfg = desk_config(angles=(0.0,))
        rec = small_dataset[0]
        a = extract_sample(rec, cfg)
        b = extract_sample(rec, cfg)
        assert a.features.keys() == b.features.keys()
        for sid in a.features:
            fa, fb = a.features[sid], b.features[sid]
            assert (fa is None) == (fb is None)
            if fa:
                for va, vb in zip(fa, fb):
                    assert np.array_equal(va.values, vb.values)

    def test_unconfigured_pose_rejected(self, small_dataset):
        cfg = desk_config(poses=("sitting",))
        with pytest.raises(ContractError, match="pose"):
            extract_sample(small_dataset[0], cfg)

    def test_too_short_sequence_skips_with_warning(self, small_dataset):
        cfg = desk_config(angles=(0.0,), clip_len=30)
        result = extract_sample(small_dataset[0], cfg)
        dmm_sids = [sid for sid in result.features if "/dmm/" in sid]
        assert dmm_sids
        assert all(result.features[sid] == [] for sid in dmm_sids)
        assert any("too short" in w or "skip" in w for w in result.warnings)

    def test_missing_rgb_marks_stream_absent(self, small_dataset):
        cfg = desk_config(angles=(0.0,))
        rec = dataclasses.replace(small_dataset[0], rgb_path=None)
        result = extract_sample(rec, cfg)
        assert result.features["standing/rgb/r10"] is None
        assert any("rgb" in w.lower() for w in result.warnings)

    def test_depth_as_rgb_fills_appearance_stream(self, small_dataset):
        cfg = desk_config(angles=(0.0,), depth_as_rgb=True)
        rec = dataclasses.replace(small_dataset[0], rgb_path=None)
        result = extract_sample(rec, cfg)
        assert result.features["standing/rgb/r10"]

    def test_alpha_zero_equals_bypass_variant(self, small_dataset):
        cfg = desk_config()
        bypass = desk_config(bypass_view_synthesis=True)
        rec = small_dataset[1]
        a = extract_sample(rec, cfg)
        b = extract_sample(rec, bypass)
        for plane in ("xy", "yz", "xz"):
            sid = f"standing/dmm/{plane}/w5/a0"
            for va, vb in zip(a.features[sid], b.features[sid]):
                assert np.array_equal(va.values, vb.values)

    def test_provenance_routing(self, small_dataset):
        cfg = desk_config(angles=(0.0,), poses=("sitting", "standing"))
        result = extract_sample(small_dataset[0], cfg)
        assert all(sid.startswith("standing/") for sid in result.features)
        for sid, feats in result.features.items():
            if not feats:
                continue
            for f in feats:
                assert f.provenance.pose == "standing"
                assert f.provenance.kind == ("rgb" if "/rgb/" in sid else "dmm")
                assert f.provenance.clip_end is not None

    def test_static_scene_features_equal_zero_template_network_output(self, tmp_path):
        cfg = desk_config(angles=(0.0,))
        spec = SynthSpec(
            actions=("slide", "static"), subjects=2, cameras=1,
            frames=20, width=48, height=36,
        )
        manifest = generate_synthetic_dataset(tmp_path, spec, seed=6)
        rec = next(r for r in read_manifest(manifest) if r.label == "static")
        plan = build_streams(cfg)
        result = extract_sample(rec, cfg, plan)
        plane_shapes = {"xy": (36, 48), "yz": (64, 36), "xz": (48, 64)}
        segments = []
        for plane in ("xy", "yz", "xz"):
            sid = f"standing/dmm/{plane}/w5/a0"
            frame = render_grid(np.zeros(plane_shapes[plane]), cfg.render_size)
            clip = stack_clip([frame] * cfg.clip_len, cfg.clip_len - 1, cfg.clip_len)
            segments.append(extract_features(clip, plan.network(sid)).values)
        expected = np.concatenate(segments)
        got = result.features["standing/dmm/xy/w5/a0"]
        assert len(got) >= 1
        for f in got:
            assert np.array_equal(f.values, expected)


class TestSplits:
    def test_cross_subject_default(self, small_dataset, split):
        train_subjects = {small_dataset[i].subject for i in split.train_indices}
        test_subjects = {small_dataset[i].subject for i in split.test_indices}
        assert train_subjects == {"s00", "s02"}
        assert test_subjects == {"s01", "s03"}
        assert "cross-subject" in split.description

    def test_cross_subject_explicit(self, small_dataset):
        s = resolve_split(
            small_dataset, "cross-subject", train_subjects=("s00", "s01", "s02")
        )
        assert {small_dataset[i].subject for i in s.test_indices} == {"s03"}

    def test_cross_subject_unknown_subject(self, small_dataset):
        with pytest.raises(ProtocolError, match="unknown train subjects"):
            resolve_split(small_dataset, "cross-subject", train_subjects=("s99",))

    def test_cross_subject_empty_test(self, small_dataset):
        everyone = tuple(sorted({r.subject for r in small_dataset}))
        with pytest.raises(ProtocolError, match="test side would be empty"):
            resolve_split(small_dataset, "cross-subject", train_subjects=everyone)

    def test_cross_view_two_cameras(self, tmp_path):
        spec = SynthSpec(actions=("slide", "bob"), subjects=2, cameras=2, frames=6)
        records = read_manifest(generate_synthetic_dataset(tmp_path, spec, seed=0))
        s = resolve_split(records, "cross-view")
        assert {records[i].camera for i in s.train_indices} == {"c0"}
        assert {records[i].camera for i in s.test_indices} == {"c1"}

    def test_cross_view_single_camera_rejected(self, small_dataset):
        with pytest.raises(ProtocolError):
            resolve_split(small_dataset, "cross-view")

    def test_repetition_splits(self, small_dataset):
        tripled = [r for r in small_dataset for _ in range(3)]
        one = resolve_split(tripled, "one-third")
        two = resolve_split(tripled, "two-thirds")
        assert len(one.train_indices) == len(small_dataset)
        assert len(one.test_indices) == 2 * len(small_dataset)
        assert len(two.train_indices) == 2 * len(small_dataset)
        assert len(two.test_indices) == len(small_dataset)

    def test_repetition_split_needs_repetitions(self, small_dataset):
        with pytest.raises(ProtocolError, match="repetition"):
            resolve_split(small_dataset, "one-third")

    def test_manual_split(self, small_dataset):
        s = resolve_split(
            small_dataset, "manual", train_indices=(0, 1, 2), test_indices=(3,)
        )
        assert s.train_indices == (0, 1, 2)
        assert s.test_indices == (3,)

    def test_manual_overlap_rejected(self, small_dataset):
        with pytest.raises(ProtocolError, match="overlap"):
            resolve_split(
                small_dataset, "manual", train_indices=(0, 1), test_indices=(1, 2)
            )

    def test_manual_out_of_bounds_rejected(self, small_dataset):
        with pytest.raises(ProtocolError, match="outside"):
            resolve_split(
                small_dataset, "manual", train_indices=(0,), test_indices=(99,)
            )

    def test_unknown_protocol_rejected(self, small_dataset):
        with pytest.raises(ProtocolError, match="unknown split protocol"):
            resolve_split(small_dataset, "leave-one-out")

    def test_leaky_split_rejected_by_train(self, small_dataset):
        by_subject = {}
        for i, r in enumerate(small_dataset):
            by_subject.setdefault(r.subject, []).append(i)
        leak = by_subject["s00"]
        leaky = Split(
            "cross-subject",
            tuple(leak[:1]) + tuple(by_subject["s01"]),
            tuple(leak[1:]) + tuple(by_subject["s02"]),
            "hand-built leak",
        )
        with pytest.raises(ProtocolError, match="both sides"):
            train(small_dataset, leaky, desk_config())


class TestTrain:
    def test_streams_reach_training_accuracy(self, trained):
        report = trained.train_report
        assert report.per_stream
        for sid, acc in report.per_stream.items():
            assert acc >= 0.95, f"{sid}: {acc}"

    def test_all_streams_trained(self, trained):
        assert trained.trained
        assert set(trained.svm) == {s.id for s in trained.streams}
        assert trained.labels == ("bob", "slide")

    def test_missing_class_raises_protocol_error(self, small_dataset):
        slide = tuple(i for i, r in enumerate(small_dataset) if r.label == "slide")
        rest = tuple(i for i in range(len(small_dataset)) if i not in slide)
        s = resolve_split(
            small_dataset, "manual", train_indices=slide, test_indices=rest
        )
        with pytest.raises(ProtocolError, match="absent"):
            train(small_dataset, s, desk_config())

    def test_retrain_bit_identical_model_files(self, small_dataset, split, tmp_path):
        cfg_a = desk_config(angles=(0.0,), out_dir=str(tmp_path / "a"))
        cfg_b = desk_config(angles=(0.0,), out_dir=str(tmp_path / "b"))
        train(small_dataset, split, cfg_a)
        train(small_dataset, split, cfg_b)
        files_a = sorted((tmp_path / "a" / "streams").iterdir())
        files_b = sorted((tmp_path / "b" / "streams").iterdir())
        assert [f.name for f in files_a] == [f.name for f in files_b]
        assert files_a
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes(), fa.name


def _rigged_plan(dmm_scores, rgb_scores=None, labels=("bob", "slide")):
    """Plan whose streams ignore features: zero weights, biases = ln(score)."""
    cfg = desk_config(planes=("xy",), angles=(0.0,))
    plan = build_streams(cfg)
    plan.labels = tuple(labels)
    dim = cfg.fc_units_effective
    pca = PcaModel(
        mean=np.zeros(dim),
        components=np.eye(1, dim),
        variance_fractions=np.array([1.0]),
    )
    def svm_for(scores):
        return SvmModel(
            weights=np.zeros((len(labels), 1)),
            biases=np.array([math.log(s) for s in scores]),
            labels=tuple(labels),
            regularization=1e-3,
        )
    plan.pca["standing/dmm/xy/w5/a0"] = pca
    plan.svm["standing/dmm/xy/w5/a0"] = svm_for(dmm_scores)
    if rgb_scores is not None:
        plan.pca["standing/rgb/r10"] = pca
        plan.svm["standing/rgb/r10"] = svm_for(rgb_scores)
    return plan


class TestClassify:
    def test_untrained_plan_rejected(self, small_dataset):
        with pytest.raises(StateError):
            classify(small_dataset[0], build_streams(desk_config()))

    def test_correct_on_training_samples(self, small_dataset, split, trained):
        for i in split.train_indices:
            predicted, fused, row = classify(small_dataset[i], trained)
            assert predicted == small_dataset[i].label
            assert row.truth == small_dataset[i].label
            assert abs(float(fused.values.sum()) - 1.0) < 1e-6

    def test_two_sided_fusion_arithmetic(self, small_dataset):
        plan = _rigged_plan(dmm_scores=(0.6, 0.4), rgb_scores=(0.2, 0.8))
        predicted, fused, _ = classify(small_dataset[0], plan)
        assert np.allclose(fused.values, [0.4, 0.6], atol=1e-9)
        assert predicted == "slide"

    def test_tie_breaks_to_lowest_class(self, small_dataset):
        plan = _rigged_plan(dmm_scores=(0.5, 0.5), rgb_scores=(0.5, 0.5))
        predicted, fused, _ = classify(small_dataset[0], plan)
        assert np.allclose(fused.values, [0.5, 0.5], atol=1e-12)
        assert predicted == "bob"

    def test_no_rgb_falls_back_to_depth_side(self, small_dataset):
        plan = _rigged_plan(dmm_scores=(0.6, 0.4), rgb_scores=None)
        predicted, fused, _ = classify(small_dataset[0], plan)
        assert np.allclose(fused.values, [0.6, 0.4], atol=1e-9)
        assert predicted == "bob"

    def test_stream_order_invariance(self, small_dataset):
        plan = _rigged_plan(dmm_scores=(0.3, 0.7), rgb_scores=(0.9, 0.1))
        reordered = StreamPlan(
            cfg=plan.cfg,
            streams=tuple(reversed(plan.streams)),
            labels=plan.labels,
            pca=plan.pca,
            svm=plan.svm,
        )
        _, a, _ = classify(small_dataset[0], plan)
        _, b, _ = classify(small_dataset[0], reordered)
        assert np.array_equal(a.values, b.values)


class TestEvaluate:
    def test_cross_subject_report(self, small_dataset, split, trained):
        report = evaluate(small_dataset, split, trained)
        assert report.n_test == len(split.test_indices)
        assert report.labels == ("bob", "slide")
        assert int(report.counts.sum()) == report.n_test
        for i in range(len(report.labels)):
            row = float(report.confusion[i].sum())
            assert row == pytest.approx(100.0, abs=0.5) or row == 0.0
        assert 0.0 <= report.overall <= 1.0
        assert report.per_stream_accuracy

    def test_perfect_on_training_side(self, small_dataset, split, trained):
        back = Split("manual", split.test_indices, split.train_indices, "train side")
        report = evaluate(small_dataset, back, trained)
        assert report.overall == 1.0
        assert np.allclose(np.diag(report.confusion), 100.0)
        assert np.allclose(report.confusion - np.diag(np.diag(report.confusion)), 0.0)

    def test_untrained_plan_rejected(self, small_dataset, split):
        with pytest.raises(StateError):
            evaluate(small_dataset, split, build_streams(desk_config()))

    def test_empty_test_side_rejected(self, small_dataset, trained):
        empty = Split("manual", tuple(range(len(small_dataset))), (), "no test")
        with pytest.raises(ProtocolError, match="empty test"):
            evaluate(small_dataset, empty, trained)

    def test_unknown_test_label_rejected(self, small_dataset, trained):
        stranger = dataclasses.replace(small_dataset[0], label="arc")
        records = list(small_dataset) + [stranger]
        s = Split("manual", (0, 1), (len(records) - 1,), "stranger")
        with pytest.raises(ProtocolError, match="not in the training set"):
            evaluate(records, s, trained)

    def test_report_determinism(self, small_dataset, split, trained):
        a = evaluate(small_dataset, split, trained)
        b = evaluate(small_dataset, split, trained)
        assert a.to_csv() == b.to_csv()

    def test_csv_layout(self, small_dataset, split, trained):
        csv = evaluate(small_dataset, split, trained).to_csv()
        lines = csv.splitlines()
        assert lines[0].startswith("overall_accuracy,")
        assert lines[1] == f"n_test,{len(split.test_indices)}"
        assert lines[2].startswith("split,cross-subject")
        assert lines[3] == "truth\\prediction,bob,slide"
        assert any(line.startswith("per_class_accuracy,bob,") for line in lines)
        assert any(line.startswith("stream_accuracy,") for line in lines)

    def test_text_report_mentions_split(self, small_dataset, split, trained):
        text = evaluate(small_dataset, split, trained).to_text()
        assert "cross-subject" in text
        assert "overall accuracy" in text


class TestPlanPersistence:
    def test_save_load_round_trip_preserves_report(
        self, small_dataset, split, trained, tmp_path
    ):
        save_plan(trained, tmp_path / "plan")
        loaded = load_plan(tmp_path / "plan")
        assert loaded.labels == trained.labels
        assert set(loaded.svm) == set(trained.svm)
        a = evaluate(small_dataset, split, trained)
        b = evaluate(small_dataset, split, loaded)
        assert a.to_csv() == b.to_csv()

    def test_save_untrained_rejected(self, tmp_path):
        with pytest.raises(StateError):
            save_plan(build_streams(desk_config()), tmp_path / "plan")

    def test_load_missing_models_rejected(self, tmp_path):
        root = tmp_path / "plan"
        (root / "streams").mkdir(parents=True)
        from dmmaction import config_to_text
        (root / "config.txt").write_text(config_to_text(desk_config()))
        (root / "labels.txt").write_text("bob\nslide\n")
        with pytest.raises(StateError, match="no stream models"):
            load_plan(root)
