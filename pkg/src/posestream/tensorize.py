"""Snippet sampling and pose-tensor assembly.

A video is split into K equal segments and one snippet frame is chosen per
segment (uniformly at random within the segment, or at its midpoint). The
pose tensor stacks, per snippet, the (x, y) coordinates of every joint
visit along the skeleton's traversal path into one row of width 2L, with a
velocity channel (row-to-row first difference) and an acceleration channel
(difference of differences) alongside; both derivative channels have an
all-zero first row. Result shape: K x 2L x 3.

Tensor cache file (little-endian binary)::

    magic b"PTEN" | u32 version | u32 K | u32 width | u32 channels
    | str topology id | str sampling mode | u64 seed | str config hash
    | u32 record count
    then per record:
    | str video id | i32 label (-1 if absent) | u32 source frame count
    | u32 x K snippet frame indices | float32 x (K*width*channels) payload

where ``str`` is a u16 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .preprocess import NormalizedPoseSequence
from .skeleton import TraversalPath

CACHE_MAGIC = b"PTEN"
CACHE_VERSION = 1
CHANNELS = 3

SAMPLING_MODES = ("random", "center")


@dataclass(frozen=True)
class SnippetPlan:
    """Chosen frame index per segment for one video."""

    frames: tuple[int, ...]
    mode: str
    seed: int
    num_frames: int

    def __post_init__(self) -> None:
        if any(f < 0 or f >= self.num_frames for f in self.frames):
            raise ValueError("snippet frame index outside the video")
        if any(b < a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("snippet frames must be non-decreasing")

    @property
    def k(self) -> int:
        return len(self.frames)


def plan_snippets(
    num_frames: int, k: int = 15, mode: str = "random", seed: int = 0
) -> SnippetPlan:
    """Pick one frame per segment.

    Segment s covers frame indices [floor(s*F/K), floor((s+1)*F/K)). Random
    mode draws uniformly inside each segment from a generator seeded with
    ``seed``; center mode takes (lo + hi) // 2. When F < K some segments
    are empty; an empty segment reuses the nearest earlier chosen frame
    (leading empties borrow from the first non-empty segment), keeping the
    plan length K and monotone.
    """
    if num_frames < 1:
        raise ValueError("cannot sample snippets from an empty video")
    if k < 1:
        raise ValueError(f"segment count must be >= 1, got {k}")
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode '{mode}'; use one of {SAMPLING_MODES}")

    rng = np.random.default_rng(seed)
    chosen: list[int | None] = []
    for s in range(k):
        lo = (s * num_frames) // k
        hi = ((s + 1) * num_frames) // k
        if hi <= lo:
            chosen.append(None)
        elif mode == "center":
            chosen.append((lo + hi) // 2)
        else:
            chosen.append(int(rng.integers(lo, hi)))

    first = next(i for i, c in enumerate(chosen) if c is not None)
    for i in range(first):
        chosen[i] = chosen[first]
    for i in range(first + 1, k):
        if chosen[i] is None:
            chosen[i] = chosen[i - 1]
    return SnippetPlan(
        frames=tuple(chosen), mode=mode, seed=seed, num_frames=num_frames  # type: ignore[arg-type]
    )


@dataclass
class PoseTensor:
    """K x 2L x 3 tensor for one video plus its provenance."""

    data: np.ndarray
    video: str
    label: int | None
    topology: str
    plan: SnippetPlan

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != CHANNELS:
            raise ValueError(f"tensor must have shape (K, width, {CHANNELS}), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError(f"tensor for video '{self.video}' contains non-finite values")

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def build_pose_tensor(
    pose: NormalizedPoseSequence,
    path: TraversalPath,
    plan: SnippetPlan,
    divide_by_gap: bool = False,
) -> PoseTensor:
    """Assemble the position/velocity/acceleration tensor for one video.

    Row k of channel 0 concatenates the (x, y) of each traversal-path joint
    at snippet frame k. Channel 1 row k is channel0[k] - channel0[k-1] and
    channel 2 repeats the differencing on channel 1; row 0 of both is zero.
    Differences are taken between chosen snippets as-is; with
    ``divide_by_gap`` they are divided by the frame gap instead (repeated
    frames count as gap 1).

    The pose must be fully filled; missing joints are a caller error.
    """
    if plan.num_frames != pose.num_frames:
        raise ValueError(
            f"plan covers {plan.num_frames} frames but video '{pose.video}' has {pose.num_frames}"
        )
    if np.any(pose.visibility == 0):
        raise ValueError(
            f"video '{pose.video}' still has missing joints; interpolate before tensorizing"
        )
    if max(path.joints) >= pose.num_joints:
        raise ValueError(
            f"traversal path references joint {max(path.joints)}, pose has {pose.num_joints}"
        )

    frames = np.asarray(plan.frames, dtype=np.intp)
    joints = np.asarray(path.joints, dtype=np.intp)
    positions = pose.coords[frames][:, joints, :].reshape(plan.k, 2 * len(joints))

    velocity = np.zeros_like(positions)
    acceleration = np.zeros_like(positions)
    if plan.k > 1:
        velocity[1:] = positions[1:] - positions[:-1]
        if divide_by_gap:
            gaps = np.maximum(np.diff(frames), 1).astype(np.float64)
            velocity[1:] /= gaps[:, None]
        acceleration[1:] = velocity[1:] - velocity[:-1]
        if divide_by_gap:
            acceleration[1:] /= gaps[:, None]

    return PoseTensor(
        data=np.stack([positions, velocity, acceleration], axis=-1),
        video=pose.video,
        label=pose.label,
        topology=path.topology,
        plan=plan,
    )


# ---------------------------------------------------------------------------
# Tensor cache I/O
# ---------------------------------------------------------------------------

def _write_str(handle: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for cache header")
    handle.write(struct.pack("<H", len(raw)))
    handle.write(raw)


def _read_str(handle: BinaryIO) -> str:
    (length,) = struct.unpack("<H", handle.read(2))
    return handle.read(length).decode("utf-8")


def write_tensor_cache(
    path: str | Path,
    tensors: Sequence[PoseTensor],
    seed: int = 0,
    config_hash: str = "",
) -> None:
    """Write tensors of one run to a binary cache file (float32 payload)."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("refusing to write an empty tensor cache")
    k, width = tensors[0].k, tensors[0].width
    topology = tensors[0].topology
    mode = tensors[0].plan.mode
    for t in tensors:
        if (t.k, t.width, t.topology) != (k, width, topology):
            raise ValueError(
                f"tensor '{t.video}' shape/topology differs from the first tensor in the cache"
            )
    with open(path, "wb") as handle:
        handle.write(CACHE_MAGIC)
        handle.write(struct.pack("<IIII", CACHE_VERSION, k, width, CHANNELS))
        _write_str(handle, topology)
        _write_str(handle, mode)
        handle.write(struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))
        _write_str(handle, config_hash)
        handle.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            _write_str(handle, t.video)
            label = -1 if t.label is None else int(t.label)
            handle.write(struct.pack("<iI", label, t.plan.num_frames))
            handle.write(np.asarray(t.plan.frames, dtype="<u4").tobytes())
            handle.write(t.data.astype("<f4").tobytes())


@dataclass
class TensorCache:
    tensors: list[PoseTensor]
    topology: str
    seed: int
    config_hash: str

    @property
    def k(self) -> int:
        return self.tensors[0].k

    @property
    def width(self) -> int:
        return self.tensors[0].width


def read_tensor_cache(path: str | Path) -> TensorCache:
    """Read a cache written by write_tensor_cache; payload returns as float64."""
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != CACHE_MAGIC:
            raise ValueError(f"{path}: not a pose tensor cache (bad magic {magic!r})")
        version, k, width, channels = struct.unpack("<IIII", handle.read(16))
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        if channels != CHANNELS:
            raise ValueError(f"{path}: expected {CHANNELS} channels, found {channels}")
        topology = _read_str(handle)
        mode = _read_str(handle)
        (seed,) = struct.unpack("<Q", handle.read(8))
        config_hash = _read_str(handle)
        (count,) = struct.unpack("<I", handle.read(4))
        tensors = []
        for _ in range(count):
            video = _read_str(handle)
            label, num_frames = struct.unpack("<iI", handle.read(8))
            frames = np.frombuffer(handle.read(4 * k), dtype="<u4")
            payload = np.frombuffer(handle.read(4 * k * width * channels), dtype="<f4")
            plan = SnippetPlan(
                frames=tuple(int(f) for f in frames),
                mode=mode,
                seed=int(seed),
                num_frames=num_frames,
            )
            tensors.append(
                PoseTensor(
                    data=payload.astype(np.float64).reshape(k, width, channels),
                    video=video,
                    label=None if label < 0 else label,
                    topology=topology,
                    plan=plan,
                )
            )
    return TensorCache(tensors=tensors, topology=topology, seed=int(seed), config_hash=config_hash)


def stack_tensors(tensors: Iterable[PoseTensor]) -> tuple[np.ndarray, np.ndarray]:
    """(N, K, width, 3) data array and (N,) label array for training/eval."""
    tensors = list(tensors)
    missing = [t.video for t in tensors if t.label is None]
    if missing:
        raise ValueError(f"tensors without labels: {missing[:5]}")
    data = np.stack([t.data for t in tensors])
    labels = np.array([t.label for t in tensors], dtype=np.int64)
    return data, labels
