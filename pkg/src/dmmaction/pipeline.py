"""End-to-end orchestration: stream plans, extraction, training, evaluation.

A stream is one (pose, plane, window, angle) depth pipeline or one
(pose, rgb window) appearance pipeline, each owning a network, a PCA
basis, and an SVM bank.  The orchestrator runs samples through every
stream of their pose bank and fuses per-stream scores by averaging,
depth streams first, then depth with appearance.

Everything here is sequential and deterministic: stream weights derive
from (seed, stream id), so a plan rebuilds bit-identically from its
saved config, and per-stream state is only ever touched by one pass at
a time.  Report aggregation is a single ordered reduction.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dmm as dmm_mod
from .config import PipelineConfig, config_to_text, load_config
from .dmm import ALL, Clip, Window, render_grid, stack_clip
from .errors import (
    ContractError,
    EmptyInputError,
    FormatError,
    ProtocolError,
    StateError,
)
from .geometry import (
    BinParams,
    Intrinsics,
    RotationSpec,
    project_cartesian,
    sequence_centroid,
    synthesize_view,
)
from .learn import (
    PcaModel,
    ScoreVector,
    SvmModel,
    fuse_scores,
    load_models,
    pca_fit,
    pca_project,
    save_models,
    svm_score,
    svm_train,
)
from .motion import MagnitudeMap, estimate_flow, flow_magnitude, normalize_magnitude
from .neural import (
    FeatureVector,
    NetworkSpec,
    Provenance,
    c3d_network,
    concat_views,
    desk_network,
    extract_features,
    stream_rng,
)
from .videoio import DepthFrame, DepthSequence, read_depth_bin, read_rgb_sequence

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Stream enumeration


@dataclass(frozen=True)
class Stream:
    """One classifier slot in the plan."""

    id: str
    pose: str
    kind: str  # "dmm" | "rgb"
    plane: str | None = None
    window: Window | None = None
    angle: float | None = None
    rgb_len: int | None = None


def _dmm_stream_id(pose: str, plane: str, window: Window, angle: float) -> str:
    return f"{pose}/dmm/{plane}/w{window}/a{angle:g}"


def _rgb_stream_id(pose: str, rgb_len: int) -> str:
    return f"{pose}/rgb/r{rgb_len}"


@dataclass
class TrainReport:
    """Per-stream training accuracy and anything skipped along the way."""

    per_stream: dict[str, float] = field(default_factory=dict)
    n_train: int = 0
    warnings: tuple[str, ...] = ()


@dataclass
class StreamPlan:
    """All streams of a config plus their trained models.

    Network weights are a pure function of (cfg.seed, stream id), so they
    are built on demand; only the small desk networks are kept cached,
    the canonical stack is too large to hold one copy per stream.
    """

    cfg: PipelineConfig
    streams: tuple[Stream, ...]
    labels: tuple[str, ...] | None = None
    pca: dict[str, PcaModel] = field(default_factory=dict)
    svm: dict[str, SvmModel] = field(default_factory=dict)
    train_report: TrainReport | None = None
    _networks: dict[str, NetworkSpec] = field(default_factory=dict, repr=False)

    def stream(self, stream_id: str) -> Stream:
        for s in self.streams:
            if s.id == stream_id:
                return s
        raise ContractError(f"unknown stream id {stream_id!r}")

    def network(self, stream_id: str) -> NetworkSpec:
        cached = self._networks.get(stream_id)
        if cached is not None:
            return cached
        net = _build_network(self.cfg, self.stream(stream_id))
        if self.cfg.network_preset == "desk":
            self._networks[stream_id] = net
        return net

    def trained_for(self, pose: str) -> bool:
        bank = [s.id for s in self.streams if s.pose == pose]
        return self.labels is not None and any(sid in self.svm for sid in bank)

    @property
    def trained(self) -> bool:
        return self.labels is not None and bool(self.svm)


def build_streams(cfg: PipelineConfig) -> StreamPlan:
    """Enumerate every classifier stream of a config, in a fixed order.

    Order is pose-major: all depth streams of a pose (plane, then window,
    then angle), then its appearance streams, then the next pose.

    Returns:
        An untrained StreamPlan whose stream count equals
        poses * (planes * angles * windows + rgb windows).
    """
    streams: list[Stream] = []
    for pose in cfg.poses:
        for plane in cfg.planes:
            for window in cfg.depth_windows:
                for angle in cfg.angles:
                    streams.append(
                        Stream(
                            id=_dmm_stream_id(pose, plane, window, angle),
                            pose=pose,
                            kind="dmm",
                            plane=plane,
                            window=window,
                            angle=angle,
                        )
                    )
        for r in cfg.rgb_windows:
            streams.append(
                Stream(id=_rgb_stream_id(pose, r), pose=pose, kind="rgb", rgb_len=r)
            )
    return StreamPlan(cfg=cfg, streams=tuple(streams))


def _build_network(cfg: PipelineConfig, s: Stream) -> NetworkSpec:
    rng = stream_rng(cfg.seed, s.id)
    height, width = cfg.render_size
    clip_len = s.rgb_len if s.kind == "rgb" else cfg.clip_len
    if cfg.network_preset == "desk":
        return desk_network(
            rng,
            name=s.id,
            clip_len=clip_len,
            height=height,
            width=width,
            conv_maps=cfg.desk_conv_maps,
            fc_units=cfg.fc_units_effective,
        )
    return c3d_network(
        rng,
        name=s.id,
        clip_len=clip_len,
        height=height,
        width=width,
        fc_units=cfg.fc_units_effective,
    )


# ---------------------------------------------------------------------------
# Dataset records


@dataclass(frozen=True)
class SampleRecord:
    """One sequence of the dataset, as described by the manifest."""

    depth_path: Path
    rgb_path: Path | None
    label: str
    subject: str
    camera: str
    pose: str
    crop_path: Path | None = None


def read_manifest(path: str | Path) -> list[SampleRecord]:
    """Parse a tab-separated dataset manifest.

    Each line: depth path, rgb path or '-', label, subject id, camera id,
    pose, and optionally a crop-box file path or '-'.  Paths are resolved
    relative to the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    records: list[SampleRecord] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) not in (6, 7):
            raise FormatError(
                f"line {lineno}: expected 6 or 7 tab-separated fields, got {len(parts)}"
            )
        depth, rgb, label, subject, camera, pose = parts[:6]
        crop = parts[6] if len(parts) == 7 else "-"
        records.append(
            SampleRecord(
                depth_path=root / depth,
                rgb_path=None if rgb == "-" else root / rgb,
                label=label,
                subject=subject,
                camera=camera,
                pose=pose,
                crop_path=None if crop == "-" else root / crop,
            )
        )
    if not records:
        raise EmptyInputError(f"manifest {path} has no records")
    return records


def _apply_crop(seq: DepthSequence, crop_path: Path) -> DepthSequence:
    """Zero out everything outside the per-frame person box.

    The crop file holds one `x y w h` line per frame.  Masking instead of
    slicing keeps frame dimensions uniform across the sequence.
    """
    lines = [ln for ln in crop_path.read_text().splitlines() if ln.strip()]
    if len(lines) != len(seq.frames):
        raise FormatError(
            f"crop file {crop_path} has {len(lines)} boxes for "
            f"{len(seq.frames)} frames"
        )
    frames = []
    for f, line in zip(seq.frames, lines):
        try:
            x, y, w, h = (int(tok) for tok in line.split())
        except ValueError as exc:
            raise FormatError(f"bad crop line {line!r} in {crop_path}") from exc
        if x < 0 or y < 0 or w < 1 or h < 1 or x + w > f.width or y + h > f.height:
            raise FormatError(
                f"crop box {(x, y, w, h)} outside {f.width}x{f.height} frame"
            )
        grid = np.zeros_like(f.depth)
        grid[y : y + h, x : x + w] = f.depth[y : y + h, x : x + w]
        frames.append(DepthFrame(f.width, f.height, grid, f.timestamp_index))
    return DepthSequence(tuple(frames))


# ---------------------------------------------------------------------------
# Feature extraction


@dataclass
class ExtractResult:
    """Per-stream clip features for one sample.

    features maps stream id to a list of feature vectors (one per clip),
    an empty list when the sequence was too short for that stream, or
    None when the stream needs RGB input the sample does not have.  Only
    the streams of the sample's pose bank appear.
    """

    features: dict[str, list[FeatureVector] | None]
    warnings: tuple[str, ...] = ()


def template_count(n_maps: int, window: Window) -> int:
    """How many templates a window setting yields on an n_maps sequence."""
    if window == ALL:
        return max(0, n_maps - 2)
    return max(0, n_maps - int(window))


def _flow_weights(
    maps: list, cfg: PipelineConfig
) -> list[MagnitudeMap]:
    """Normalized motion-magnitude weights for each consecutive map pair."""
    raw = []
    for a, b in zip(maps, maps[1:]):
        flow = estimate_flow(
            a.grid, b.grid, iterations=cfg.flow_iterations, smoothness=cfg.flow_smoothness
        )
        raw.append(flow_magnitude(flow))
    if cfg.flow_normalization == "pair":
        return [normalize_magnitude(m) for m in raw]
    peak = max((float(np.max(m.g)) for m in raw), default=0.0)
    if peak <= 0.0:
        return [MagnitudeMap(np.zeros_like(m.g), normalized=True) for m in raw]
    return [MagnitudeMap(m.g / peak, normalized=True) for m in raw]


def _resize_rgb(pixels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if pixels.shape[:2] == size:
        return pixels
    resized = dmm_mod._resize_bilinear(pixels.astype(np.float64), size)
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


def _clip_ends(n_frames: int, lam: int) -> list[int]:
    """Stride-lam tiling: clips end at lam-1, 2*lam-1, ... within range."""
    return list(range(lam - 1, n_frames, lam))


def _combine_planes(per_plane: dict[str, list[FeatureVector]], planes) -> list[FeatureVector]:
    """Concatenate per-plane features clip by clip into one view vector."""
    n_clips = len(per_plane[planes[0]])
    combined = []
    for j in range(n_clips):
        feats = [per_plane[p][j] for p in planes]
        if tuple(planes) == ("xy", "yz", "xz"):
            combined.append(concat_views(*feats))
        else:
            values = np.concatenate([f.values for f in feats])
            combined.append(
                FeatureVector(values, feats[0].provenance.without_plane())
            )
    return combined


def extract_sample(
    rec: SampleRecord, cfg: PipelineConfig, plan: StreamPlan | None = None
) -> ExtractResult:
    """Run one sample through every stream of its pose bank.

    Depth side: crop mask, synthesize each view angle (the original maps
    stand in for angle 0), project onto the configured planes, weight
    consecutive differences by normalized flow magnitude, accumulate
    over each window setting, render, stack clips, extract and
    concatenate per-plane features.  Appearance side: tile the RGB (or
    jet-rendered depth) frames into window-length clips and extract.

    Args:
        rec: manifest record; its pose must be one of cfg.poses.
        cfg: pipeline configuration.
        plan: optional plan whose cached networks should be reused.

    Returns:
        ExtractResult keyed by stream id; streams the sequence is too
        short for get an empty list and a warning, appearance streams
        without RGB input get None.
    """
    if rec.pose not in cfg.poses:
        raise ContractError(
            f"sample pose {rec.pose!r} is not one of the configured poses {cfg.poses}"
        )
    plan = plan if plan is not None else build_streams(cfg)
    bank = [s for s in plan.streams if s.pose == rec.pose]
    warnings: list[str] = []
    features: dict[str, list[FeatureVector] | None] = {}

    depth_seq = read_depth_bin(rec.depth_path)
    if rec.crop_path is not None:
        depth_seq = _apply_crop(depth_seq, rec.crop_path)
    intr = Intrinsics.default_for(depth_seq.width, depth_seq.height, cfg.focal_px)
    bins = BinParams(cfg.depth_bin_mm, cfg.depth_bin_count)
    n = len(depth_seq.frames)

    dmm_streams = [s for s in bank if s.kind == "dmm"]
    rgb_streams = [s for s in bank if s.kind == "rgb"]

    angles = sorted({s.angle for s in dmm_streams})
    pivot = None
    plane_maps: dict[tuple[float, str], list] = {}
    weights: dict[tuple[float, str], list[MagnitudeMap]] = {}
    for alpha in angles:
        if alpha == 0.0 or cfg.bypass_view_synthesis:
            view = depth_seq
        else:
            if pivot is None:
                pivot = sequence_centroid(depth_seq, intr)
            view = synthesize_view(depth_seq, RotationSpec(alpha), intr, pivot=pivot)
        collected: dict[str, list] = {p: [] for p in ("xy", "yz", "xz")}
        for f in view.frames:
            m_xy, m_yz, m_xz = project_cartesian(f, bins)
            collected["xy"].append(m_xy)
            collected["yz"].append(m_yz)
            collected["xz"].append(m_xz)
        for p in cfg.planes:
            plane_maps[(alpha, p)] = collected[p]
            weights[(alpha, p)] = _flow_weights(collected[p], cfg)

    for window in cfg.depth_windows:
        for alpha in angles:
            sids = {p: _dmm_stream_id(rec.pose, p, window, alpha) for p in cfg.planes}
            n_templates = template_count(n, window)
            if n_templates < cfg.clip_len:
                warnings.append(
                    f"{rec.depth_path}: {n} frames give {n_templates} templates "
                    f"for window {window}, need {cfg.clip_len}; skipping"
                )
                for sid in sids.values():
                    features[sid] = []
                continue
            per_plane: dict[str, list[FeatureVector]] = {}
            for p in cfg.planes:
                maps = plane_maps[(alpha, p)]
                rendered = [
                    dmm_mod.render_template(
                        dmm_mod.accumulate_ramdmm(
                            maps,
                            weights[(alpha, p)],
                            t,
                            window,
                            angle=alpha,
                            floor=cfg.noise_floor,
                        ),
                        cfg.render_size,
                    )
                    for t in range(n_templates)
                ]
                net = plan.network(sids[p])
                plane_feats = []
                for end in _clip_ends(n_templates, cfg.clip_len):
                    clip = stack_clip(rendered, end, cfg.clip_len)
                    prov = Provenance(
                        pose=rec.pose,
                        kind="dmm",
                        plane=p,
                        window=window,
                        angle=alpha,
                        clip_end=end,
                    )
                    plane_feats.append(extract_features(clip, net, prov))
                per_plane[p] = plane_feats
            combined = _combine_planes(per_plane, cfg.planes)
            for sid in sids.values():
                features[sid] = combined

    if rgb_streams:
        rgb_frames = _appearance_frames(rec, cfg, depth_seq, warnings)
        for s in rgb_streams:
            if rgb_frames is None:
                features[s.id] = None
                continue
            if len(rgb_frames) < s.rgb_len:
                warnings.append(
                    f"{rec.depth_path}: {len(rgb_frames)} appearance frames, "
                    f"need {s.rgb_len}; skipping {s.id}"
                )
                features[s.id] = []
                continue
            net = plan.network(s.id)
            feats = []
            for end in _clip_ends(len(rgb_frames), s.rgb_len):
                clip = Clip(np.stack(rgb_frames[end - s.rgb_len + 1 : end + 1]))
                prov = Provenance(
                    pose=rec.pose, kind="rgb", window=s.rgb_len, clip_end=end
                )
                feats.append(extract_features(clip, net, prov))
            features[s.id] = feats
    return ExtractResult(features=features, warnings=tuple(warnings))


def _appearance_frames(rec, cfg, depth_seq, warnings) -> list[np.ndarray] | None:
    """RGB frames resized to the render size, or jet-rendered depth."""
    if cfg.depth_as_rgb:
        return [render_grid(f.depth, cfg.render_size) for f in depth_seq.frames]
    if rec.rgb_path is None:
        warnings.append(f"{rec.depth_path}: no RGB input, appearance streams absent")
        return None
    rgb = read_rgb_sequence(rec.rgb_path)
    return [_resize_rgb(f.pixels, cfg.render_size) for f in rgb.frames]


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class Split:
    """Index partition of a dataset plus how it was derived."""

    protocol: str
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    description: str


def _repetition_index(records: list[SampleRecord]) -> list[int]:
    """Occurrence order within each (label, subject, camera) group.

    Manifest row order defines repetition order; the dataset preparer is
    responsible for listing repetitions chronologically.
    """
    seen: dict[tuple[str, str, str], int] = {}
    out = []
    for r in records:
        key = (r.label, r.subject, r.camera)
        out.append(seen.get(key, 0))
        seen[key] = out[-1] + 1
    return out


def resolve_split(
    records: list[SampleRecord],
    protocol: str,
    train_subjects: tuple[str, ...] | None = None,
    train_cameras: tuple[str, ...] | None = None,
    train_indices: tuple[int, ...] | None = None,
    test_indices: tuple[int, ...] | None = None,
) -> Split:
    """Partition dataset indices under a named protocol.

    cross-subject holds out whole subjects (default: odd positions in
    the sorted subject list test); cross-view holds out whole cameras
    (default: all but the first camera test); one-third and two-thirds
    put the first one or two repetitions of each (label, subject,
    camera) group in train; manual takes explicit index lists.
    """
    n = len(records)
    if protocol == "manual":
        if train_indices is None or test_indices is None:
            raise ProtocolError("manual protocol needs explicit train and test indices")
        train, test = tuple(train_indices), tuple(test_indices)
        if set(train) & set(test):
            raise ProtocolError("train and test indices overlap")
        bad = [i for i in train + test if not 0 <= i < n]
        if bad:
            raise ProtocolError(f"indices {bad} outside the {n}-record dataset")
        desc = f"manual: {len(train)} train / {len(test)} test"
    elif protocol == "cross-subject":
        subjects = sorted({r.subject for r in records})
        if train_subjects is None:
            train_subjects = tuple(subjects[::2])
        chosen = set(train_subjects)
        unknown = chosen - set(subjects)
        if unknown:
            raise ProtocolError(f"unknown train subjects {sorted(unknown)}")
        if chosen == set(subjects):
            raise ProtocolError("every subject is in train; test side would be empty")
        train = tuple(i for i, r in enumerate(records) if r.subject in chosen)
        test = tuple(i for i, r in enumerate(records) if r.subject not in chosen)
        desc = (
            "cross-subject: train="
            + ";".join(sorted(chosen))
            + " test="
            + ";".join(s for s in subjects if s not in chosen)
        )
    elif protocol == "cross-view":
        cameras = sorted({r.camera for r in records})
        if train_cameras is None:
            train_cameras = (cameras[0],)
        chosen = set(train_cameras)
        unknown = chosen - set(cameras)
        if unknown:
            raise ProtocolError(f"unknown train cameras {sorted(unknown)}")
        if chosen == set(cameras):
            raise ProtocolError("every camera is in train; test side would be empty")
        train = tuple(i for i, r in enumerate(records) if r.camera in chosen)
        test = tuple(i for i, r in enumerate(records) if r.camera not in chosen)
        desc = (
            "cross-view: train="
            + ";".join(sorted(chosen))
            + " test="
            + ";".join(c for c in cameras if c not in chosen)
        )
    elif protocol in ("one-third", "two-thirds"):
        reps = _repetition_index(records)
        keep = 1 if protocol == "one-third" else 2
        train = tuple(i for i in range(n) if reps[i] < keep)
        test = tuple(i for i in range(n) if reps[i] >= keep)
        if not test:
            raise ProtocolError(
                f"{protocol} split leaves no test samples; "
                "records need more repetitions per (label, subject, camera)"
            )
        desc = f"{protocol}: first {keep} repetition(s) per group train"
    else:
        raise ProtocolError(f"unknown split protocol {protocol!r}")
    _check_disjoint(records, protocol, train, test)
    return Split(protocol, train, test, desc)


def _check_disjoint(records, protocol, train, test):
    if protocol == "cross-subject":
        shared = {records[i].subject for i in train} & {records[i].subject for i in test}
        if shared:
            raise ProtocolError(
                f"subjects {sorted(shared)} appear on both sides of a cross-subject split"
            )
    if protocol == "cross-view":
        shared = {records[i].camera for i in train} & {records[i].camera for i in test}
        if shared:
            raise ProtocolError(
                f"cameras {sorted(shared)} appear on both sides of a cross-view split"
            )


# ---------------------------------------------------------------------------
# Training


def train(
    records: list[SampleRecord], split: Split, cfg: PipelineConfig
) -> StreamPlan:
    """Fit every stream's PCA + SVM on the training side of a split.

    Args:
        records: full dataset.
        split: resolved index partition; every label must occur in train.
        cfg: pipeline configuration; cfg.out_dir, when set, receives the
            persisted plan.

    Returns:
        The trained StreamPlan; plan.train_report carries per-stream
        training accuracy and skip warnings.
    """
    plan = build_streams(cfg)
    _check_disjoint(records, split.protocol, split.train_indices, split.test_indices)
    labels = tuple(sorted({r.label for r in records}))
    train_labels = {records[i].label for i in split.train_indices}
    missing = [lab for lab in labels if lab not in train_labels]
    if missing:
        raise ProtocolError(f"classes {missing} absent from the training split")
    plan.labels = labels

    per_stream_feats: dict[str, list[FeatureVector]] = {s.id: [] for s in plan.streams}
    per_stream_labels: dict[str, list[str]] = {s.id: [] for s in plan.streams}
    warnings: list[str] = []
    for i in split.train_indices:
        rec = records[i]
        result = extract_sample(rec, cfg, plan)
        warnings.extend(result.warnings)
        for sid, feats in result.features.items():
            if not feats:
                continue
            per_stream_feats[sid].extend(feats)
            per_stream_labels[sid].extend([rec.label] * len(feats))

    report = TrainReport(n_train=len(split.train_indices))
    train_poses = {records[i].pose for i in split.train_indices}
    for s in plan.streams:
        feats = per_stream_feats[s.id]
        if len(feats) < 2:
            if s.pose in train_poses:
                warnings.append(f"stream {s.id}: {len(feats)} training clips, skipped")
            continue
        stream_labels = per_stream_labels[s.id]
        if len(set(stream_labels)) < 2:
            warnings.append(f"stream {s.id}: single-class training data, skipped")
            continue
        pca = pca_fit(feats, cfg.pca_target)
        projected = np.stack([pca_project(pca, f) for f in feats])
        svm = svm_train(
            projected,
            stream_labels,
            regularization=cfg.svm_regularization,
            epochs=cfg.svm_epochs,
            seed=[cfg.seed, zlib.crc32(s.id.encode()), 1],
        )
        plan.pca[s.id] = pca
        plan.svm[s.id] = svm
        predictions = [
            svm.labels[int(np.argmax(svm_score(svm, x, normalize=False).values))]
            for x in projected
        ]
        correct = sum(p == y for p, y in zip(predictions, stream_labels))
        report.per_stream[s.id] = correct / len(stream_labels)
    report.warnings = tuple(warnings)
    plan.train_report = report
    for w in warnings:
        log.warning("%s", w)
    if cfg.out_dir is not None:
        save_plan(plan, cfg.out_dir)
    return plan


# ---------------------------------------------------------------------------
# Classification and evaluation


@dataclass(frozen=True)
class ReportRow:
    """One classified sample, as consumed by evaluate."""

    truth: str
    predicted: str
    stream_predictions: dict[str, str]


def classify(
    rec: SampleRecord, plan: StreamPlan
) -> tuple[str, ScoreVector, ReportRow]:
    """Fuse every trained stream of the sample's pose bank into one label.

    Depth stream scores are averaged into one vector, appearance stream
    scores into another, and the final vector is the mean of the two
    (depth alone when no appearance stream produced a score).  The label
    is the argmax, ties broken toward the lowest class index.
    """
    cfg = plan.cfg
    if plan.labels is None or not plan.trained_for(rec.pose):
        raise StateError(
            f"plan has no trained streams for pose {rec.pose!r}; train it first"
        )
    result = extract_sample(rec, cfg, plan)
    normalize = cfg.score_mode == "softmax"
    dmm_scores: list[ScoreVector] = []
    rgb_scores: list[ScoreVector] = []
    stream_predictions: dict[str, str] = {}
    for s in plan.streams:
        if s.pose != rec.pose:
            continue
        feats = result.features.get(s.id)
        if not feats or s.id not in plan.svm:
            continue
        pca, svm = plan.pca[s.id], plan.svm[s.id]
        clip_scores = [
            svm_score(svm, pca_project(pca, f), normalize=normalize) for f in feats
        ]
        score = fuse_scores(clip_scores)
        stream_predictions[s.id] = plan.labels[int(np.argmax(score.values))]
        (dmm_scores if s.kind == "dmm" else rgb_scores).append(score)
    if not dmm_scores and not rgb_scores:
        raise ContractError(
            f"no stream produced a score for {rec.depth_path}; sequence too short"
        )
    sides = []
    if rgb_scores:
        sides.append(fuse_scores(rgb_scores))
    if dmm_scores:
        sides.append(fuse_scores(dmm_scores))
    fused = fuse_scores(sides)
    predicted = plan.labels[int(np.argmax(fused.values))]
    return predicted, fused, ReportRow(rec.label, predicted, stream_predictions)


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary over the test side of a split.

    confusion is row-stochastic in percent (rows = truth); rows of
    classes with no test samples are all zero.
    """

    labels: tuple[str, ...]
    counts: np.ndarray
    confusion: np.ndarray
    per_class: tuple[float, ...]
    overall: float
    split_description: str
    per_stream_accuracy: dict[str, float]
    n_test: int

    def to_csv(self) -> str:
        lines = [f"overall_accuracy,{self.overall:.6f}", f"n_test,{self.n_test}"]
        lines.append(f"split,{self.split_description}")
        lines.append("truth\\prediction," + ",".join(self.labels))
        for i, lab in enumerate(self.labels):
            lines.append(
                f"{lab}," + ",".join(f"{v:.6f}" for v in self.confusion[i])
            )
        for lab, acc in zip(self.labels, self.per_class):
            lines.append(f"per_class_accuracy,{lab},{acc:.6f}")
        for sid, acc in self.per_stream_accuracy.items():
            lines.append(f"stream_accuracy,{sid},{acc:.6f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(lab) for lab in self.labels) + 2
        lines = [
            f"split: {self.split_description}",
            f"test samples: {self.n_test}",
            f"overall accuracy: {self.overall:.4f}",
            "",
            " " * width + "".join(f"{lab:>{width}}" for lab in self.labels),
        ]
        for i, lab in enumerate(self.labels):
            row = "".join(f"{v:>{width}.1f}" for v in self.confusion[i])
            lines.append(f"{lab:<{width}}" + row)
        lines.append("")
        for lab, acc in zip(self.labels, self.per_class):
            lines.append(f"{lab}: {acc:.4f}")
        return "\n".join(lines) + "\n"

    @property
    def best_stream_accuracy(self) -> float:
        return max(self.per_stream_accuracy.values(), default=0.0)


def evaluate(
    records: list[SampleRecord], split: Split, plan: StreamPlan
) -> EvalReport:
    """Classify the test side of a split and tabulate the results."""
    if not plan.trained:
        raise StateError("plan is untrained; run train first")
    if not split.test_indices:
        raise ProtocolError("split has an empty test side")
    labels = plan.labels
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    stream_hits: dict[str, int] = {}
    stream_totals: dict[str, int] = {}
    for i in split.test_indices:
        rec = records[i]
        if rec.label not in index:
            raise ProtocolError(f"test label {rec.label!r} was not in the training set")
        _, _, row = classify(rec, plan)
        counts[index[row.truth], index[row.predicted]] += 1
        for sid, pred in row.stream_predictions.items():
            stream_totals[sid] = stream_totals.get(sid, 0) + 1
            stream_hits[sid] = stream_hits.get(sid, 0) + (pred == row.truth)
    row_sums = counts.sum(axis=1)
    confusion = np.zeros_like(counts, dtype=np.float64)
    nonzero = row_sums > 0
    confusion[nonzero] = 100.0 * counts[nonzero] / row_sums[nonzero, None]
    per_class = tuple(
        float(counts[i, i] / row_sums[i]) if row_sums[i] else 0.0
        for i in range(len(labels))
    )
    overall = float(np.trace(counts) / counts.sum())
    per_stream = {
        sid: stream_hits[sid] / stream_totals[sid]
        for sid in sorted(stream_totals)
    }
    return EvalReport(
        labels=labels,
        counts=counts,
        confusion=confusion,
        per_class=per_class,
        overall=overall,
        split_description=split.description,
        per_stream_accuracy=per_stream,
        n_test=len(split.test_indices),
    )


# ---------------------------------------------------------------------------
# Plan persistence


def _model_filename(stream_id: str) -> str:
    return stream_id.replace("/", "__") + ".models"


def save_plan(plan: StreamPlan, out_dir: str | Path) -> Path:
    """Persist config, labels, and per-stream models under out_dir.

    Network weights are not stored; they rebuild from (seed, stream id).
    """
    out = Path(out_dir)
    (out / "streams").mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(plan.cfg))
    if plan.labels is None:
        raise StateError("cannot save an untrained plan")
    (out / "labels.txt").write_text("\n".join(plan.labels) + "\n")
    for sid in sorted(plan.svm):
        save_models(out / "streams" / _model_filename(sid), plan.pca[sid], plan.svm[sid])
    return out


def load_plan(plan_dir: str | Path) -> StreamPlan:
    """Rebuild a trained plan saved by save_plan."""
    root = Path(plan_dir)
    cfg = load_config(root / "config.txt")
    plan = build_streams(cfg)
    plan.labels = tuple((root / "labels.txt").read_text().split())
    for s in plan.streams:
        path = root / "streams" / _model_filename(s.id)
        if path.exists():
            pca, svm = load_models(path)
            plan.pca[s.id] = pca
            plan.svm[s.id] = svm
    if not plan.svm:
        raise StateError(f"no stream models found under {root}")
    return plan
