"""File formats and serializable configuration.

Formats: trajectory text, tracklet JSON-lines, mask PGM (binary, 8- or
16-bit), dense-flow DPFL binary, filter-signal JSON, annotated-pair
JSON-lines, and CSV reports. Every reader raises a positioned
:class:`ParseError` on malformed input; write∘read is the identity (bitwise
for binary formats, value-exact at 9 printed significant digits for text).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidInput, ParseError
from .evalmetrics import AnnotatedPair
from .filtering import FilterConfig, FilterSignals
from .geometry import Pose, Trajectory
from .masking import DynamicMask, FlowField, MaskingConfig
from .sfm import SfmConfig
from .tracking import Tracklet

FLOW_MAGIC = b"DPFL"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable constant in one serializable object."""

    fps: float = 12.0
    track_grid_rows: int = 42
    track_grid_cols: int = 42
    track_stride_seconds: float = 5.0 / 12.0
    track_length_seconds: float = 2.5
    eval_sampson_thresholds: tuple[float, ...] = (5.0, 10.0, 30.0)
    filtering: FilterConfig = field(default_factory=FilterConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    sfm: SfmConfig = field(default_factory=SfmConfig)

    def __post_init__(self):
        for name in (
            "fps",
            "track_grid_rows",
            "track_grid_cols",
            "track_stride_seconds",
            "track_length_seconds",
        ):
            if getattr(self, name) <= 0:
                raise InvalidInput(f"{name} must be positive")
        if any(t <= 0 for t in self.eval_sampson_thresholds):
            raise InvalidInput("eval thresholds must be positive")


def config_to_dict(config: PipelineConfig) -> dict:
    out = dataclasses.asdict(config)
    out["eval_sampson_thresholds"] = list(config.eval_sampson_thresholds)
    return out


def _merge_dataclass(cls, defaults, overrides: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise InvalidInput(f"unknown {path} keys: {sorted(unknown)}")
    return dataclasses.replace(defaults, **overrides)


def config_from_dict(data: dict) -> PipelineConfig:
    """Build a config from a (possibly partial) plain dict of overrides."""
    if not isinstance(data, dict):
        raise InvalidInput("config document must be a JSON object")
    data = dict(data)
    base = PipelineConfig()
    nested = {}
    for key, cls, default in (
        ("filtering", FilterConfig, base.filtering),
        ("masking", MaskingConfig, base.masking),
        ("sfm", SfmConfig, base.sfm),
    ):
        sub = data.pop(key, None)
        if sub is not None:
            if not isinstance(sub, dict):
                raise InvalidInput(f"config section {key!r} must be an object")
            nested[key] = _merge_dataclass(cls, default, sub, key)
    if "eval_sampson_thresholds" in data:
        data["eval_sampson_thresholds"] = tuple(float(t) for t in data["eval_sampson_thresholds"])
    top = _merge_dataclass(PipelineConfig, base, data, "config")
    return dataclasses.replace(top, **nested) if nested else top


def write_config(path: str | Path, config: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")


def read_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    try:
        return config_from_dict(data)
    except (InvalidInput, TypeError) as exc:
        raise ParseError(f"bad config: {exc}", path=str(path)) from exc


# ---------------------------------------------------------------------------
# trajectory text
# ---------------------------------------------------------------------------

def write_trajectory(path: str | Path, traj: Trajectory) -> None:
    """One `frame tx ty tz qx qy qz qw` line per registered frame.

    The stored quaternion/translation encode the world-to-camera transform.
    Unregistered frames are omitted and restored on read via the num_frames
    header.
    """
    lines = ["# trajectory v1", f"# fps {traj.fps:.9g}", f"# num_frames {len(traj.frames)}"]
    for f, p in traj.frames:
        if p is None:
            continue
        vals = [p.t[0], p.t[1], p.t[2], p.quat[0], p.quat[1], p.quat[2], p.quat[3]]
        lines.append(str(f) + " " + " ".join(f"{v:.9g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    fps = 12.0
    num_frames = None
    poses: dict[int, Pose] = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "fps":
                try:
                    fps = float(parts[1])
                except ValueError as exc:
                    raise ParseError("bad fps header", path=str(path), line=ln) from exc
            elif len(parts) == 2 and parts[0] == "num_frames":
                try:
                    num_frames = int(parts[1])
                except ValueError as exc:
                    raise ParseError("bad num_frames header", path=str(path), line=ln) from exc
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(
                f"expected 8 columns (frame tx ty tz qx qy qz qw), got {len(parts)}",
                path=str(path),
                line=ln,
            )
        try:
            frame = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", path=str(path), line=ln) from exc
        if frame in poses:
            raise ParseError(f"duplicate frame {frame}", path=str(path), line=ln)
        poses[frame] = Pose(np.array(vals[3:7]), np.array(vals[0:3]))
    if num_frames is None:
        num_frames = (max(poses) + 1) if poses else 0
    if poses and max(poses) >= num_frames:
        raise ParseError(
            f"frame {max(poses)} outside declared num_frames {num_frames}", path=str(path)
        )
    frames = [(f, poses.get(f)) for f in range(num_frames)]
    return Trajectory(frames=frames, fps=fps)


# ---------------------------------------------------------------------------
# tracklets JSON-lines
# ---------------------------------------------------------------------------

def write_tracklets(path: str | Path, tracklets: list[Tracklet]) -> None:
    with open(path, "w") as fh:
        for tr in tracklets:
            fh.write(
                json.dumps(
                    {
                        "id": tr.id,
                        "start_frame": tr.start_frame,
                        "points": [[float(x), float(y)] for x, y in tr.points],
                        "visible": [int(v) for v in tr.visible],
                    }
                )
                + "\n"
            )


def read_tracklets(path: str | Path) -> list[Tracklet]:
    path = Path(path)
    out = []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=ln) from exc
        try:
            tracklet = Tracklet(
                id=int(rec["id"]),
                start_frame=int(rec["start_frame"]),
                points=np.asarray(rec["points"], dtype=np.float64),
                visible=np.asarray(rec["visible"], dtype=bool),
            )
        except (KeyError, TypeError, ValueError, DimensionMismatch, InvalidInput) as exc:
            raise ParseError(f"bad tracklet record: {exc}", path=str(path), line=ln) from exc
        out.append(tracklet)
    return out


# ---------------------------------------------------------------------------
# PGM masks and label maps
# ---------------------------------------------------------------------------

def write_mask(path: str | Path, mask: DynamicMask) -> None:
    """Binary PGM (P5, maxval 255): dynamic pixels are 255."""
    h, w = mask.bitmap.shape
    payload = (mask.bitmap.astype(np.uint8) * 255).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + payload)


def write_labelmap(path: str | Path, labels: np.ndarray) -> None:
    """Binary PGM (P5, maxval 65535, big-endian samples) of uint16 class ids."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise DimensionMismatch(f"label map must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + arr.astype(">u2").tobytes())


def _read_pgm(path: Path) -> tuple[int, int, int, np.ndarray]:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ParseError("not a binary PGM (missing P5 magic)", path=str(path), offset=0)
    # header: P5, width, height, maxval as whitespace-separated tokens
    # (comment lines starting with '#' allowed), then one whitespace byte
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path=str(path), offset=pos)
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"non-numeric PGM header field: {exc}", path=str(path), offset=2) from exc
    if w <= 0 or h <= 0 or maxval <= 0 or maxval > 65535:
        raise ParseError(f"bad PGM dimensions {w}x{h} maxval {maxval}", path=str(path), offset=2)
    bytes_per = 1 if maxval < 256 else 2
    need = w * h * bytes_per
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise ParseError(
            f"truncated PGM raster: expected {need} bytes, got {len(raster)}",
            path=str(path),
            offset=pos + len(raster),
        )
    dt = np.uint8 if bytes_per == 1 else np.dtype(">u2")
    arr = np.frombuffer(raster, dtype=dt).reshape(h, w)
    return w, h, maxval, arr


def read_mask(
    path: str | Path, frame_index: int = 0, expected_shape: tuple[int, int] | None = None
) -> DynamicMask:
    path = Path(path)
    w, h, maxval, arr = _read_pgm(path)
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise DimensionMismatch(
            f"mask is {h}x{w}, expected {expected_shape[0]}x{expected_shape[1]}"
        )
    return DynamicMask(frame_index, arr.astype(np.int64) > maxval // 2)


def read_labelmap(path: str | Path, expected_shape: tuple[int, int] | None = None) -> np.ndarray:
    path = Path(path)
    w, h, _maxval, arr = _read_pgm(path)
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise DimensionMismatch(
            f"label map is {h}x{w}, expected {expected_shape[0]}x{expected_shape[1]}"
        )
    return arr.astype(np.uint16)


# ---------------------------------------------------------------------------
# dense flow (DPFL binary)
# ---------------------------------------------------------------------------

def write_flow(path: str | Path, flow: FlowField) -> None:
    """Magic "DPFL", little-endian u32 width/height, row-major f32 (u, v)."""
    h, w = flow.shape
    header = FLOW_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + flow.uv.astype("<f4").tobytes())


def read_flow(
    path: str | Path,
    frame_a: int = 0,
    frame_b: int = 1,
    expected_shape: tuple[int, int] | None = None,
) -> FlowField:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != FLOW_MAGIC:
        raise ParseError("bad flow magic (expected DPFL)", path=str(path), offset=0)
    if len(data) < 12:
        raise ParseError("truncated flow header", path=str(path), offset=len(data))
    w, h = struct.unpack("<II", data[4:12])
    if w == 0 or h == 0:
        raise ParseError(f"bad flow dimensions {w}x{h}", path=str(path), offset=4)
    need = w * h * 2 * 4
    raster = data[12 : 12 + need]
    if len(raster) != need:
        raise ParseError(
            f"truncated flow payload: expected {need} bytes, got {len(raster)}",
            path=str(path),
            offset=12 + len(raster),
        )
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise DimensionMismatch(
            f"flow is {h}x{w}, expected {expected_shape[0]}x{expected_shape[1]}"
        )
    uv = np.frombuffer(raster, dtype="<f4").reshape(h, w, 2).astype(np.float64)
    return FlowField(frame_a, frame_b, uv)


# ---------------------------------------------------------------------------
# filter signals JSON
# ---------------------------------------------------------------------------

_SEQ_FIELDS = ("focal_seq", "mask_fraction_seq", "flow_seq", "track_loss_seq")
_SCALAR_FIELDS = (
    "classifier_acceptable",
    "classifier_interaction",
    "distortion_alpha",
    "track_median_move",
    "track_windowed_move",
)


def signals_to_dict(signals: FilterSignals) -> dict:
    out: dict = {"signal_fps": signals.signal_fps}
    for name in _SCALAR_FIELDS:
        v = getattr(signals, name)
        out[name] = None if v is None else float(v)
    for name in _SEQ_FIELDS:
        v = getattr(signals, name)
        out[name] = None if v is None else [float(x) for x in v]
    out["vlm_answers"] = None if signals.vlm_answers is None else [bool(b) for b in signals.vlm_answers]
    return out


def signals_from_dict(data: dict) -> FilterSignals:
    if not isinstance(data, dict):
        raise InvalidInput("signals document must be a JSON object")
    known = set(_SCALAR_FIELDS) | set(_SEQ_FIELDS) | {"vlm_answers", "signal_fps"}
    unknown = set(data) - known
    if unknown:
        raise InvalidInput(f"unknown signal keys: {sorted(unknown)}")
    kwargs: dict = {}
    for name in _SCALAR_FIELDS:
        if data.get(name) is not None:
            kwargs[name] = float(data[name])
    for name in _SEQ_FIELDS:
        if data.get(name) is not None:
            kwargs[name] = np.asarray(data[name], dtype=np.float64)
    if data.get("vlm_answers") is not None:
        kwargs["vlm_answers"] = [bool(b) for b in data["vlm_answers"]]
    if data.get("signal_fps") is not None:
        kwargs["signal_fps"] = float(data["signal_fps"])
    return FilterSignals(**kwargs)


def write_signals(path: str | Path, signals: FilterSignals) -> None:
    Path(path).write_text(json.dumps(signals_to_dict(signals), indent=2, sort_keys=True) + "\n")


def read_signals(path: str | Path) -> FilterSignals:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    try:
        return signals_from_dict(data)
    except (InvalidInput, TypeError, ValueError) as exc:
        raise ParseError(f"bad signals document: {exc}", path=str(path)) from exc


# ---------------------------------------------------------------------------
# annotated pairs JSON-lines
# ---------------------------------------------------------------------------

def write_pairs(path: str | Path, pairs: list[AnnotatedPair]) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "video": p.video,
                        "frame_a": p.frame_a,
                        "frame_b": p.frame_b,
                        "xa": float(p.point_a[0]),
                        "ya": float(p.point_a[1]),
                        "xb": float(p.point_b[0]),
                        "yb": float(p.point_b[1]),
                    }
                )
                + "\n"
            )


def read_pairs(path: str | Path) -> list[AnnotatedPair]:
    path = Path(path)
    out = []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=ln) from exc
        try:
            out.append(
                AnnotatedPair(
                    video=str(rec["video"]),
                    frame_a=int(rec["frame_a"]),
                    frame_b=int(rec["frame_b"]),
                    point_a=(float(rec["xa"]), float(rec["ya"])),
                    point_b=(float(rec["xb"]), float(rec["yb"])),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad pair record: {exc}", path=str(path), line=ln) from exc
    return out


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------

def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise InvalidInput(
                f"row has {len(row)} fields, header has {len(header)}"
            )
        lines.append(",".join(_csv_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    s = str(v)
    if "," in s or '"' in s or "\n" in s:
        raise InvalidInput(f"CSV cell needs quoting, which this report format forbids: {s!r}")
    return s


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError("empty CSV", path=str(path), line=1)
    header = lines[0].split(",")
    rows = []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != len(header):
            raise ParseError(
                f"row has {len(cells)} fields, header has {len(header)}",
                path=str(path),
                line=ln,
            )
        rows.append(cells)
    return header, rows


# ---------------------------------------------------------------------------
# correspondence archive (JSON-lines, one record per frame pair)
# ---------------------------------------------------------------------------

def write_correspondences(path: str | Path, corr) -> None:
    """One record per frame pair: frame_a, frame_b, points_a, points_b, ids."""
    with open(path, "w") as fh:
        for (i, j), (pts_i, pts_j, ids) in corr.items():
            fh.write(
                json.dumps(
                    {
                        "frame_a": i,
                        "frame_b": j,
                        "points_a": [[float(x), float(y)] for x, y in pts_i],
                        "points_b": [[float(x), float(y)] for x, y in pts_j],
                        "ids": [int(t) for t in ids],
                    }
                )
                + "\n"
            )


def read_correspondences(path: str | Path):
    from .tracking import CorrespondenceSet

    path = Path(path)
    pairs = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=ln) from exc
        try:
            key = (int(rec["frame_a"]), int(rec["frame_b"]))
            pts_a = np.asarray(rec["points_a"], dtype=np.float64).reshape(-1, 2)
            pts_b = np.asarray(rec["points_b"], dtype=np.float64).reshape(-1, 2)
            ids = np.asarray(rec["ids"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad correspondence record: {exc}", path=str(path), line=ln) from exc
        if len(pts_a) != len(pts_b) or len(pts_a) != len(ids):
            raise ParseError("points_a, points_b and ids lengths differ", path=str(path), line=ln)
        if key in pairs:
            raise ParseError(f"duplicate frame pair {key}", path=str(path), line=ln)
        pairs[key] = (pts_a, pts_b, ids)
    return CorrespondenceSet(pairs=pairs)
