"""Synthetic moving-shape video corpus: generation, subsampling and IO.

Clips are (N, C, H, W) float32 tensors in [0, 1]. A single rigid shape
(disc or square) translates with toroidal wraparound over a solid or
gradient background, so motion direction and speed are known ground truth.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

SHARD_MAGIC = b"CNMO"
SHARD_VERSION = 1

# name -> unit direction (dx, dy); +x is rightward, +y is downward
DIRECTIONS = {
    "move_right": (1.0, 0.0),
    "move_left": (-1.0, 0.0),
    "move_up": (0.0, -1.0),
    "move_down": (0.0, 1.0),
    "move_down_right": (0.7071067811865476, 0.7071067811865476),
    "move_down_left": (-0.7071067811865476, 0.7071067811865476),
    "move_up_right": (0.7071067811865476, -0.7071067811865476),
    "move_up_left": (-0.7071067811865476, -0.7071067811865476),
}

DEFAULT_CLASS_NAMES = ["move_right", "move_left", "move_up", "move_down"]


@dataclass(frozen=True)
class MotionClass:
    """Discrete stand-in for a text prompt: an id plus a direction name."""

    id: int
    name: str


@dataclass
class ClipMeta:
    motion_class: int = 0
    speed: float = 0.0
    seed: int = 0


@dataclass
class VideoClip:
    """A pixel video: frames (N, C, H, W) float32 plus generation metadata."""

    frames: np.ndarray
    meta: ClipMeta = field(default_factory=ClipMeta)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]

    def validate(self) -> None:
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (N, C, H, W), got shape {self.frames.shape}")
        if self.n_frames < 2:
            raise ValueError("a clip needs at least 2 frames")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")


@dataclass
class DatasetSpec:
    """Parameters of the synthetic corpus.

    `n_frames_long` is the raw generated length; training clips are
    subsampled from it with a frame interval in [3, 10], so it must be at
    least 10x the target clip length.
    """

    n_clips: int = 200
    n_frames_long: int = 160
    resolution: tuple[int, int] = (32, 32)
    channels: int = 3
    motion_classes: list[MotionClass] = field(
        default_factory=lambda: [MotionClass(i, n) for i, n in enumerate(DEFAULT_CLASS_NAMES)]
    )
    speed_range: tuple[float, float] = (0.0, 4.0)
    background_kind: str = "solid"
    # Shape half-extent range in pixels. Large shapes relative to the frame
    # keep inter-frame SSIM low at high speeds, so the whole 0..19 bucket
    # range stays populated.
    shape_half_range: tuple[float, float] = (8.0, 12.0)
    n_frames_target: int = 16

    @property
    def null_class_id(self) -> int:
        """Reserved class id used for classifier-free guidance drop."""
        return len(self.motion_classes)

    def class_by_id(self, class_id: int) -> MotionClass:
        for mc in self.motion_classes:
            if mc.id == class_id:
                return mc
        raise ValueError(f"unknown motion class id {class_id}")

    def class_by_name(self, name: str) -> MotionClass:
        for mc in self.motion_classes:
            if mc.name == name:
                return mc
        raise ValueError(f"unknown motion class {name!r}")

    def validate(self) -> None:
        if self.n_clips < 0:
            raise ValueError("n_clips must be non-negative")
        if self.n_frames_long < 10 * self.n_frames_target:
            raise ValueError(
                f"n_frames_long={self.n_frames_long} too short for interval sampling; "
                f"need at least {10 * self.n_frames_target}"
            )
        if self.background_kind not in ("solid", "gradient"):
            raise ValueError(f"unknown background_kind {self.background_kind!r}")
        if not (0 <= self.speed_range[0] <= self.speed_range[1]):
            raise ValueError(f"bad speed_range {self.speed_range}")
        ids = sorted(mc.id for mc in self.motion_classes)
        if ids != list(range(len(ids))):
            raise ValueError("motion class ids must be dense 0..K-1")
        for mc in self.motion_classes:
            if mc.name not in DIRECTIONS:
                raise ValueError(f"no direction defined for class {mc.name!r}")


def _coverage(center: tuple[float, float], half: float, kind: str,
              h: int, w: int) -> np.ndarray:
    """Anti-aliased coverage mask of a shape at a float center, toroidal."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = (xx - center[0] + w / 2.0) % w - w / 2.0
    dy = (yy - center[1] + h / 2.0) % h - h / 2.0
    if kind == "disc":
        dist = np.hypot(dx, dy)
        return np.clip(half + 0.5 - dist, 0.0, 1.0)
    if kind == "square":
        cx = np.clip(half + 0.5 - np.abs(dx), 0.0, 1.0)
        cy = np.clip(half + 0.5 - np.abs(dy), 0.0, 1.0)
        return cx * cy
    raise ValueError(f"unknown shape kind {kind!r}")


def _background(rng: np.random.Generator, spec: DatasetSpec,
                shape_color: np.ndarray) -> np.ndarray:
    """Static background (C, H, W), kept away from the shape color."""
    h, w = spec.resolution
    c = spec.channels
    for _ in range(64):
        c0 = rng.uniform(0.0, 0.85, size=c)
        c1 = rng.uniform(0.0, 0.85, size=c) if spec.background_kind == "gradient" else c0
        if max(np.abs(c0 - shape_color).max(), np.abs(c1 - shape_color).max()) >= 0.25:
            break
    if spec.background_kind == "solid":
        return np.broadcast_to(c0[:, None, None], (c, h, w)).copy()
    axis = int(rng.integers(0, 2))  # 0: ramp along x, 1: along y
    length = w if axis == 0 else h
    ramp = np.linspace(0.0, 1.0, length)
    bg = c0[:, None] + (c1 - c0)[:, None] * ramp[None, :]
    if axis == 0:
        return np.broadcast_to(bg[:, None, :], (c, h, w)).copy()
    return np.broadcast_to(bg[:, :, None], (c, h, w)).copy()


def generate_clip(spec: DatasetSpec, motion_class: MotionClass | int,
                  speed: float, seed: int) -> VideoClip:
    """Render a deterministic clip: one shape translating at `speed` px/frame.

    Shape kind, size, colors and start position come from `seed` alone, so
    the same seed at a different speed shares geometry and differs only in
    trajectory.
    """
    if isinstance(motion_class, int):
        motion_class = spec.class_by_id(motion_class)
    if motion_class.id >= len(spec.motion_classes) or motion_class.id < 0:
        raise ValueError(f"invalid motion class id {motion_class.id}")
    lo, hi = spec.speed_range
    if not (lo <= speed <= hi):
        raise ValueError(f"speed {speed} outside range [{lo}, {hi}]")

    h, w = spec.resolution
    rng = np.random.default_rng(seed)
    kind = "disc" if rng.random() < 0.5 else "square"
    half = rng.uniform(*spec.shape_half_range)
    shape_color = rng.uniform(0.15, 1.0, size=spec.channels)
    bg = _background(rng, spec, shape_color)
    start = rng.uniform(0.0, w), rng.uniform(0.0, h)

    dx, dy = DIRECTIONS[motion_class.name]
    frames = np.empty((spec.n_frames_long, spec.channels, h, w), dtype=np.float32)
    for i in range(spec.n_frames_long):
        cx = start[0] + i * speed * dx
        cy = start[1] + i * speed * dy
        cov = _coverage((cx, cy), half, kind, h, w)
        frames[i] = (bg * (1.0 - cov) + shape_color[:, None, None] * cov).astype(np.float32)
    return VideoClip(frames, ClipMeta(motion_class.id, float(speed), int(seed)))


def subsample(clip: VideoClip, interval: int, n: int) -> VideoClip:
    """Take frames {0, interval, ..., (n-1)*interval}; metadata carries over."""
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    if (n - 1) * interval >= clip.n_frames:
        raise ValueError(
            f"cannot take {n} frames at interval {interval} from a "
            f"{clip.n_frames}-frame clip"
        )
    frames = clip.frames[0 : (n - 1) * interval + 1 : interval].copy()
    return VideoClip(frames, replace(clip.meta))


def export_clip(clip: VideoClip, path, format: str = "gif", fps: int = 8) -> None:
    """Write a clip as per-frame PNGs, an animated GIF, or the raw shard."""
    from pathlib import Path

    path = Path(path)
    if format == "png_dir":
        path.mkdir(parents=True, exist_ok=True)
        for i in range(clip.n_frames):
            _to_image(clip.frames[i]).save(path / f"frame_{i:04d}.png")
    elif format == "gif":
        path.parent.mkdir(parents=True, exist_ok=True)
        images = [_to_image(clip.frames[i]) for i in range(clip.n_frames)]
        images[0].save(path, save_all=True, append_images=images[1:],
                       duration=int(round(1000.0 / fps)), loop=0)
    elif format == "raw":
        save_dataset([clip], path)
    else:
        raise ValueError(f"unknown export format {format!r}")


def _to_image(frame: np.ndarray) -> Image.Image:
    arr = np.clip(frame, 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        return Image.fromarray(arr[0], mode="L")
    return Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB")


def load_image(path) -> np.ndarray:
    """Read a PNG as (C, H, W) float32 in [0, 1]."""
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0).copy()


def save_dataset(clips: list[VideoClip], path) -> None:
    """Write a shard: header, per-clip metadata + f32 frames, trailing CRC32."""
    if clips:
        shape = clips[0].frames.shape
        for c in clips:
            if c.frames.shape != shape:
                raise ValueError(
                    f"shard clips must share one shape; got {c.frames.shape} vs {shape}"
                )
        n, ch, h, w = shape
    else:
        n = ch = h = w = 0

    payload = bytearray()
    for c in clips:
        payload += struct.pack("<IfQ", c.meta.motion_class, c.meta.speed, c.meta.seed)
        payload += np.ascontiguousarray(c.frames, dtype="<f4").tobytes()

    header = SHARD_MAGIC + struct.pack("<IIIIII", SHARD_VERSION, len(clips), n, ch, h, w)
    crc = zlib.crc32(payload)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", crc))


def load_dataset(path) -> list[VideoClip]:
    """Read a shard back; raises ValueError on any corruption."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 32 or data[:4] != SHARD_MAGIC:
        raise ValueError("not a clip shard: bad magic")
    version, n_clips, n, ch, h, w = struct.unpack("<IIIIII", data[4:28])
    if version != SHARD_VERSION:
        raise ValueError(f"unsupported shard version {version}")
    payload = data[28:-4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ValueError("shard payload CRC mismatch")

    meta_size = struct.calcsize("<IfQ")
    frame_bytes = n * ch * h * w * 4
    expected = n_clips * (meta_size + frame_bytes)
    if len(payload) != expected:
        raise ValueError(f"shard payload size {len(payload)} != expected {expected}")

    clips = []
    off = 0
    for _ in range(n_clips):
        cls, speed, seed = struct.unpack_from("<IfQ", payload, off)
        off += meta_size
        frames = np.frombuffer(payload, dtype="<f4", count=n * ch * h * w, offset=off)
        frames = frames.reshape(n, ch, h, w).copy()
        off += frame_bytes
        clips.append(VideoClip(frames, ClipMeta(cls, speed, seed)))
    return clips


def generate_dataset(spec: DatasetSpec, seed: int = 0) -> list[VideoClip]:
    """Generate `spec.n_clips` clips with classes, speeds and clip seeds
    drawn deterministically from `seed`."""
    spec.validate()
    rng = np.random.default_rng(seed)
    clips = []
    for _ in range(spec.n_clips):
        mc = spec.motion_classes[int(rng.integers(0, len(spec.motion_classes)))]
        speed = float(rng.uniform(*spec.speed_range))
        clip_seed = int(rng.integers(0, 2**63))
        clips.append(generate_clip(spec, mc, speed, clip_seed))
    return clips
