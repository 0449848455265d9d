"""Grounding interface tests: prompt/parse contract, mock oracle, wire protocol.

The remote tests spin up a real HTTP server on localhost so the request
schema (JSON body with prompt / base64 PNG image / dimensions) and the
reply parsing are exercised end to end.
"""

import base64
import json
import threading
import zlib
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from vlnav.geometry import CameraIntrinsics, PixelTarget, Pose
from vlnav.grounding import (
    EmptyInstructionError,
    GroundingConfig,
    GroundingResult,
    GroundingStatus,
    GroundingUnavailableError,
    Image,
    Mailbox,
    MockGrounder,
    OutOfBoundsError,
    ParseError,
    RemoteGrounder,
    build_prompt,
    encode_png,
    parse_response,
)
from vlnav.simulator import Box, World

CAM = CameraIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=240.0, width=640, height=480)
EMPTY_WORLD = World((), np.array([[-50.0] * 3, [50.0] * 3]))


class TestBuildPrompt:
    def test_embeds_instruction_verbatim(self):
        prompt = build_prompt("fly to the blue tent", 640, 480)
        assert "fly to the blue tent" in prompt

    def test_states_dimensions_and_schema(self):
        prompt = build_prompt("go", 640, 480)
        assert "640x480" in prompt
        assert '"found"' in prompt and '"x"' in prompt and '"y"' in prompt
        assert '{"found": false}' in prompt

    def test_deterministic(self):
        a = build_prompt("same input", 320, 240)
        b = build_prompt("same input", 320, 240)
        assert a == b

    @pytest.mark.parametrize("bad", ["", "   ", "\n"])
    def test_empty_instruction_rejected(self, bad):
        with pytest.raises(EmptyInstructionError):
            build_prompt(bad, 640, 480)


class TestParseResponse:
    def test_plain_schema_found(self):
        r = parse_response('{"found": true, "x": 320, "y": 240}', 640, 480)
        assert r.found
        assert (r.pixel.x, r.pixel.y) == (320.0, 240.0)

    def test_plain_schema_absent(self):
        r = parse_response('{"found": false}', 640, 480)
        assert r.status == GroundingStatus.ABSENT
        assert r.pixel is None

    def test_out_of_bounds_rejected(self):
        with pytest.raises(OutOfBoundsError):
            parse_response('{"found": true, "x": 900, "y": 10}', 640, 480)

    def test_code_fence_tolerated(self):
        raw = 'Sure! Here is the answer:\n```json\n{"found": true, "x": 12, "y": 34}\n```\nDone.'
        r = parse_response(raw, 640, 480)
        assert (r.pixel.x, r.pixel.y) == (12.0, 34.0)

    def test_prose_wrapped_object(self):
        raw = "I looked around {not json} and decided {\"found\": false} was right."
        assert not parse_response(raw, 640, 480).found

    def test_first_well_formed_object_wins(self):
        raw = '{"found": true} then {"found": true, "x": 1, "y": 2}'
        r = parse_response(raw, 640, 480)  # first object lacks x/y -> skipped
        assert (r.pixel.x, r.pixel.y) == (1.0, 2.0)

    def test_garbage_raises_parse_error(self):
        with pytest.raises(ParseError):
            parse_response("no json here at all", 640, 480)

    def test_never_raises_untyped_errors(self):
        rng = np.random.default_rng(0)
        chars = np.array(list('{}[]":,truefalse0123456789.xy \n'))
        for _ in range(300):
            raw = "".join(rng.choice(chars, size=rng.integers(0, 60)))
            try:
                result = parse_response(raw, 640, 480)
                assert isinstance(result, GroundingResult)
            except (ParseError, OutOfBoundsError):
                pass

    def test_boundary_coordinates_inclusive(self):
        r = parse_response('{"found": true, "x": 640, "y": 480}', 640, 480)
        assert r.found


class TestMockGrounder:
    def pose_at(self, position, yaw=0.0):
        # body at position, camera looking along world +x (camera extrinsics
        # folded in by the caller); here we pass camera-to-world directly.
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
        yawm = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        return Pose(yawm @ rot, position)

    def test_goal_on_optical_axis(self):
        g = MockGrounder([5.0, 0.0, 0.0], EMPTY_WORLD, CAM, pixel_noise_sigma=0.0)
        r = g.ground(None, "go", self.pose_at([0.0, 0.0, 0.0]))
        assert r.found
        assert (r.pixel.x, r.pixel.y) == (CAM.cx, CAM.cy)

    def test_goal_behind_camera_absent(self):
        g = MockGrounder([-5.0, 0.0, 0.0], EMPTY_WORLD, CAM)
        assert not g.ground(None, "go", self.pose_at([0.0, 0.0, 0.0])).found

    def test_goal_outside_frame_absent(self):
        # 80 degrees off axis, FOV half-angle is atan(320/320) = 45 degrees
        g = MockGrounder([1.0, 8.0, 0.0], EMPTY_WORLD, CAM)
        assert not g.ground(None, "go", self.pose_at([0.0, 0.0, 0.0])).found

    def test_occluded_goal_absent(self):
        wall = Box(np.array([2.5, 0.0, 0.0]), np.array([0.4, 4.0, 4.0]))
        world = World((wall,), np.array([[-50.0] * 3, [50.0] * 3]))
        g = MockGrounder([5.0, 0.0, 0.0], world, CAM)
        assert not g.ground(None, "go", self.pose_at([0.0, 0.0, 0.0])).found

    def test_blocked_beyond_95_percent_still_found(self):
        # Obstacle face at 96% of the way to the goal: not "occluded".
        wall = Box(np.array([4.9, 0.0, 0.0]), np.array([0.2, 2.0, 2.0]))
        world = World((wall,), np.array([[-50.0] * 3, [50.0] * 3]))
        g = MockGrounder([5.0, 0.0, 0.0], world, CAM)
        assert g.ground(None, "go", self.pose_at([0.0, 0.0, 0.0])).found

    def test_noise_statistics_and_bounds(self):
        g = MockGrounder([5.0, 0.5, -0.3], EMPTY_WORLD, CAM, pixel_noise_sigma=5.0, seed=7)
        pose = self.pose_at([0.0, 0.0, 0.0])
        exact = MockGrounder([5.0, 0.5, -0.3], EMPTY_WORLD, CAM).ground(None, "go", pose).pixel
        xs, ys = [], []
        for _ in range(1000):
            r = g.ground(None, "go", pose)
            assert r.found
            assert 0.0 <= r.pixel.x <= CAM.width and 0.0 <= r.pixel.y <= CAM.height
            xs.append(r.pixel.x)
            ys.append(r.pixel.y)
        # mean within 1 sigma of the exact projection
        assert abs(np.mean(xs) - exact.x) <= 5.0
        assert abs(np.mean(ys) - exact.y) <= 5.0

    def test_deterministic_per_query_index(self):
        pose = self.pose_at([0.0, 0.0, 0.0])
        a = MockGrounder([5.0, 0.2, 0.1], EMPTY_WORLD, CAM, pixel_noise_sigma=3.0, seed=42)
        b = MockGrounder([5.0, 0.2, 0.1], EMPTY_WORLD, CAM, pixel_noise_sigma=3.0, seed=42)
        for _ in range(5):
            ra, rb = a.ground(None, "go", pose), b.ground(None, "go", pose)
            assert (ra.pixel.x, ra.pixel.y) == (rb.pixel.x, rb.pixel.y)

    def test_latency_reported(self):
        g = MockGrounder([5.0, 0.0, 0.0], EMPTY_WORLD, CAM, latency=0.7)
        assert g.ground(None, "go", self.pose_at([0.0, 0.0, 0.0])).latency == 0.7


class _Endpoint(BaseHTTPRequestHandler):
    reply: bytes = b'{"found": true, "x": 5, "y": 2}'
    status: int = 200
    last_request: dict | None = None
    last_headers: dict | None = None

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        _Endpoint.last_request = json.loads(self.rfile.read(length))
        _Endpoint.last_headers = dict(self.headers)
        self.send_response(self.status)
        self.end_headers()
        self.wfile.write(self.reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def endpoint():
    server = HTTPServer(("127.0.0.1", 0), _Endpoint)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Endpoint.reply = b'{"found": true, "x": 5, "y": 2}'
    _Endpoint.status = 200
    _Endpoint.last_request = None
    yield f"http://127.0.0.1:{server.server_port}/ground"
    server.shutdown()


def tiny_image(w=8, h=6):
    rng = np.random.default_rng(1)
    return Image(rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8))


class TestRemoteGrounder:
    def test_round_trip_and_request_schema(self, endpoint):
        img = tiny_image()
        g = RemoteGrounder(endpoint, auth_token="sekrit", timeout=5.0)
        r = g.ground(img, "find the red box", None)
        assert r.found and (r.pixel.x, r.pixel.y) == (5.0, 2.0)
        req = _Endpoint.last_request
        assert set(req) == {"prompt", "image", "width", "height"}
        assert "find the red box" in req["prompt"]
        assert req["width"] == 8 and req["height"] == 6
        png = base64.b64decode(req["image"])
        assert png[:8] == b"\x89PNG\r\n\x1a\n"
        assert _Endpoint.last_headers["Authorization"] == "Bearer sekrit"

    def test_prose_wrapped_reply(self, endpoint):
        _Endpoint.reply = b'The target is visible.\n```json\n{"found": true, "x": 3, "y": 4}\n```'
        r = RemoteGrounder(endpoint).ground(tiny_image(), "go", None)
        assert (r.pixel.x, r.pixel.y) == (3.0, 4.0)

    def test_absent_reply(self, endpoint):
        _Endpoint.reply = b'{"found": false}'
        assert not RemoteGrounder(endpoint).ground(tiny_image(), "go", None).found

    def test_http_error_raises_unavailable(self, endpoint):
        _Endpoint.status = 500
        with pytest.raises(GroundingUnavailableError):
            RemoteGrounder(endpoint).ground(tiny_image(), "go", None)

    def test_connection_refused_raises_unavailable(self):
        g = RemoteGrounder("http://127.0.0.1:9/nothing", timeout=0.5)
        with pytest.raises(GroundingUnavailableError):
            g.ground(tiny_image(), "go", None)

    def test_parse_error_propagates(self, endpoint):
        _Endpoint.reply = b"word salad"
        with pytest.raises(ParseError):
            RemoteGrounder(endpoint).ground(tiny_image(), "go", None)


class TestPng:
    def test_png_structure_and_pixels(self):
        rng = np.random.default_rng(3)
        px = rng.integers(0, 255, size=(5, 7, 3), dtype=np.uint8)
        data = encode_png(px)
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        # IHDR: width, height, bit depth 8, color type 2 (RGB)
        assert data[16:24] == (7).to_bytes(4, "big") + (5).to_bytes(4, "big")
        assert data[24] == 8 and data[25] == 2
        # decode the IDAT payload and compare raw scanlines
        idat_start = data.index(b"IDAT") + 4
        idat_len = int.from_bytes(data[idat_start - 8 : idat_start - 4], "big")
        raw = zlib.decompress(data[idat_start : idat_start + idat_len])
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(5, 1 + 7 * 3)
        assert (rows[:, 0] == 0).all()  # filter byte per scanline
        np.testing.assert_array_equal(rows[:, 1:].reshape(5, 7, 3), px)


class TestMailbox:
    def test_latest_wins(self):
        box = Mailbox()
        box.post(1)
        box.post(2)
        value, fresh = box.take()
        assert value == 2 and fresh
        value, fresh = box.take()
        assert value == 2 and not fresh

    def test_thread_handoff(self):
        box = Mailbox()
        done = threading.Event()

        def worker():
            for i in range(100):
                box.post(i)
            done.set()

        threading.Thread(target=worker).start()
        assert done.wait(5.0)
        value, fresh = box.take()
        assert fresh and value == 99


def test_grounding_config_validation():
    with pytest.raises(ValueError):
        GroundingConfig(period=0.0)
    assert GroundingConfig().period == 2.0  # 0.5 Hz re-grounding default


def test_result_invariants():
    with pytest.raises(ValueError):
        GroundingResult(GroundingStatus.FOUND, None)
    with pytest.raises(ValueError):
        GroundingResult(GroundingStatus.ABSENT, PixelTarget(1.0, 2.0))
