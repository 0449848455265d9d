"""Semantic goal grounding: instruction + image -> pixel target or absence.

Two interchangeable grounders sit behind the same call shape:

* MockGrounder -- simulation ground truth.  Projects the episode's hidden
  goal through the current camera pose, adds seeded Gaussian pixel noise,
  and reports absence when the goal is behind the camera, out of frame, or
  occluded (single ray test against world geometry, blocked before 95% of
  the distance).
* RemoteGrounder -- posts {"prompt", "image" (base64 PNG), "width",
  "height"} as JSON to a configured endpoint and parses a {"found", "x",
  "y"} object out of the reply, tolerating code fences and surrounding
  prose.

Grounders are safe to call from a worker thread; results can be handed to
the control loop through the single-slot latest-wins Mailbox.
"""

from __future__ import annotations

import base64
import enum
import json
import struct
import threading
import time
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, PixelTarget, Point3, Pose, project
from .simulator import World, line_of_sight

OCCLUSION_FRACTION = 0.95


class EmptyInstructionError(ValueError):
    """Instruction text is empty or whitespace."""


class ParseError(ValueError):
    """No well-formed grounding object could be extracted from the reply."""


class OutOfBoundsError(ValueError):
    """Reply coordinates fall outside the image."""


class GroundingUnavailableError(RuntimeError):
    """Remote grounding transport failed (connection, timeout, HTTP error)."""


class GroundingStatus(enum.Enum):
    FOUND = "found"
    ABSENT = "absent"


@dataclass(frozen=True)
class Image:
    """RGB image, 8 bits per channel, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] * px.shape[1] == 0:
            raise ValueError("pixels must be a non-empty (h, w, 3) uint8 array")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GroundingResult:
    status: GroundingStatus
    pixel: PixelTarget | None = None
    latency: float = 0.0

    def __post_init__(self):
        if self.status == GroundingStatus.FOUND and self.pixel is None:
            raise ValueError("Found result requires a pixel")
        if self.status == GroundingStatus.ABSENT and self.pixel is not None:
            raise ValueError("Absent result cannot carry a pixel")

    @property
    def found(self) -> bool:
        return self.status == GroundingStatus.FOUND


@dataclass(frozen=True)
class GroundingConfig:
    period: float = 2.0  # seconds between re-grounding queries (0.5 Hz)
    pixel_noise_sigma: float = 0.0  # mock only, pixels
    latency_model: float = 0.0  # simulated seconds per query

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")


def build_prompt(instruction: str, width: int, height: int) -> str:
    """Deterministic grounding prompt for a remote model endpoint."""
    if not instruction or not instruction.strip():
        raise EmptyInstructionError("instruction must be non-empty")
    return (
        "You are the vision module of an autonomous drone. "
        f"The attached image is {width}x{height} pixels; pixel (0, 0) is the "
        "top-left corner, x grows rightward, y grows downward.\n"
        f"Navigation instruction: {instruction}\n"
        "Survey the whole scene, identify every object matching the "
        "instruction, and pick the single most likely destination. "
        "Respond with exactly one JSON object and nothing else:\n"
        '  {"found": true, "x": <pixel x>, "y": <pixel y>}\n'
        "If the destination is not visible in this image, respond with:\n"
        '  {"found": false}\n'
    )


def _candidate_objects(raw: str):
    """Balanced-brace JSON candidates, in order of appearance."""
    depth = 0
    start = -1
    for i, ch in enumerate(raw):
        if ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                try:
                    yield json.loads(raw[start : i + 1])
                except (json.JSONDecodeError, RecursionError):
                    continue


def parse_response(raw: str, width: int, height: int) -> GroundingResult:
    """Extract the first well-formed grounding object from arbitrary reply text.

    Tolerates code fences and surrounding prose; never raises anything but
    ParseError / OutOfBoundsError.
    """
    if not isinstance(raw, str):
        raise ParseError("reply is not text")
    for obj in _candidate_objects(raw):
        if not isinstance(obj, dict) or not isinstance(obj.get("found"), bool):
            continue
        if obj["found"] is False:
            return GroundingResult(GroundingStatus.ABSENT)
        x, y = obj.get("x"), obj.get("y")
        if isinstance(x, bool) or isinstance(y, bool):
            continue
        if not isinstance(x, (int, float)) or not isinstance(y, (int, float)):
            continue
        if not (0 <= x <= width and 0 <= y <= height):
            raise OutOfBoundsError(
                f"pixel ({x}, {y}) outside [0, {width}] x [0, {height}]"
            )
        return GroundingResult(GroundingStatus.FOUND, PixelTarget(float(x), float(y)))
    raise ParseError("no grounding object found in reply")


class MockGrounder:
    """Ground-truth grounder for simulation.

    Deterministic: the pixel noise for query q is a pure function of
    (seed, q), so identical call sequences reproduce identical results.
    """

    needs_image = False

    def __init__(
        self,
        goal,
        world: World,
        intrinsics: CameraIntrinsics,
        pixel_noise_sigma: float = 0.0,
        seed: int = 0,
        latency: float = 0.0,
    ):
        self.goal = np.asarray(goal, dtype=float).reshape(3)
        self.world = world
        self.intrinsics = intrinsics
        self.pixel_noise_sigma = float(pixel_noise_sigma)
        self.seed = int(seed)
        self.latency = float(latency)
        self._query_index = 0
        self._lock = threading.Lock()

    def ground(self, image: Image | None, instruction: str, camera_pose: Pose) -> GroundingResult:
        with self._lock:
            q = self._query_index
            self._query_index += 1
        cam = camera_pose.inverse().apply(self.goal)
        if cam[2] <= 0.0:
            return GroundingResult(GroundingStatus.ABSENT, latency=self.latency)
        exact = project(Point3.from_vec(cam, "camera"), self.intrinsics)
        if not self.intrinsics.contains(exact):
            return GroundingResult(GroundingStatus.ABSENT, latency=self.latency)
        if not line_of_sight(
            self.world, camera_pose.translation, self.goal, OCCLUSION_FRACTION
        ):
            return GroundingResult(GroundingStatus.ABSENT, latency=self.latency)
        x, y = exact.x, exact.y
        if self.pixel_noise_sigma > 0.0:
            rng = np.random.default_rng([self.seed, q])
            dx, dy = rng.normal(0.0, self.pixel_noise_sigma, size=2)
            x = min(max(x + dx, 0.0), float(self.intrinsics.width))
            y = min(max(y + dy, 0.0), float(self.intrinsics.height))
        return GroundingResult(
            GroundingStatus.FOUND, PixelTarget(x, y), latency=self.latency
        )


class RemoteGrounder:
    """Client for a remote grounding endpoint (the cloud side of the split)."""

    needs_image = True

    def __init__(self, url: str, auth_token: str | None = None, timeout: float = 10.0):
        self.url = url
        self.auth_token = auth_token
        self.timeout = float(timeout)

    def ground(self, image: Image, instruction: str, camera_pose: Pose | None = None) -> GroundingResult:
        prompt = build_prompt(instruction, image.width, image.height)
        body = json.dumps(
            {
                "prompt": prompt,
                "image": base64.b64encode(encode_png(image.pixels)).decode("ascii"),
                "width": image.width,
                "height": image.height,
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        request = urllib.request.Request(self.url, data=body, headers=headers)
        t0 = time.monotonic()
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as reply:
                raw = reply.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise GroundingUnavailableError(f"grounding endpoint failed: {exc}") from exc
        latency = time.monotonic() - t0
        result = parse_response(raw, image.width, image.height)
        return GroundingResult(result.status, result.pixel, latency)


def ground(grounder, image: Image | None, instruction: str, camera_pose: Pose | None = None) -> GroundingResult:
    """Query any grounder implementation through the common call shape."""
    return grounder.ground(image, instruction, camera_pose)


class Mailbox:
    """Single-slot, thread-safe handoff: the latest posted value wins."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = None
        self._fresh = False

    def post(self, value) -> None:
        with self._lock:
            self._value = value
            self._fresh = True

    def take(self):
        """Return (value, fresh) and mark the slot consumed."""
        with self._lock:
            value, fresh = self._value, self._fresh
            self._fresh = False
            return value, fresh


def encode_png(pixels: np.ndarray) -> bytes:
    """Minimal 8-bit RGB PNG encoding (filter 0, one zlib IDAT)."""
    px = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = px.shape
    raw = b"".join(b"\x00" + px[r].tobytes() for r in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 6))
        + chunk(b"IEND", b"")
    )
