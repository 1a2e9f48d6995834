"""Top-down rasterizer and lossless PNG frame storage.

Frames are ego-centered with the vehicle heading up; a pixel is road when
it lies within half a lane width of any segment centerline.  Intensities
are quantized to 256 levels on construction so that the 8-bit PNG files
round-trip bit-exactly.  Frame metadata (frame id, sim time, action
category) rides along in a PNG tEXt chunk.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .track import TrackSpec
from .sim import EgoState

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
META_KEYWORD = b"drivevqa"

# palette, in 255ths
GRAY_LEVELS = {"background": 20, "road": 110, "marking": 210, "obstacle": 240, "ego": 255}
RGB_LEVELS = {
    "background": (24, 32, 24),
    "road": (110, 110, 110),
    "marking": (210, 210, 60),
    "obstacle": (230, 60, 60),
    "ego": (60, 120, 230),
}

MARKING_HALF_WIDTH = 0.15  # m


class InvalidConfig(ValueError):
    """Render configuration cannot produce an image."""


class FormatError(ValueError):
    """Frame file is corrupt or not a supported PNG."""


@dataclass(frozen=True)
class RenderConfig:
    width: int = 64
    height: int = 64
    channels: int = 1
    meters_per_pixel: float = 0.5
    view: str = "chase"  # "chase" biases the viewport ahead of the ego
    draw_ego: bool = True

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig("frame dimensions must be positive")
        if self.channels not in (1, 3):
            raise InvalidConfig("channels must be 1 or 3")
        if self.meters_per_pixel <= 0:
            raise InvalidConfig("meters_per_pixel must be positive")
        if self.view not in ("ego", "chase"):
            raise InvalidConfig(f"unknown view {self.view!r}")


PAPER_SCALE = RenderConfig(width=640, height=480, channels=3, meters_per_pixel=0.1)


def quantize(data) -> np.ndarray:
    """Snap intensities in [0,1] to exact 255ths (stored as float32)."""
    arr = np.asarray(data, dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    return q.astype(np.float32) / np.float32(255.0)


@dataclass
class Frame:
    width: int
    height: int
    channels: int
    data: np.ndarray  # (height, width, channels) float32 in [0,1], 255ths
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = quantize(self.data).reshape(self.height, self.width, self.channels)

    def to_bytes(self) -> np.ndarray:
        return np.round(self.data * 255.0).astype(np.uint8)

    def __eq__(self, other):
        return (isinstance(other, Frame)
                and (self.width, self.height, self.channels)
                == (other.width, other.height, other.channels)
                and np.array_equal(self.data, other.data)
                and self.meta == other.meta)


# ---------------------------------------------------------------------------
# rasterization

def _pixel_world_coords(state: EgoState, cfg: RenderConfig):
    """World (x, y) of every pixel center, image up aligned with heading."""
    cx = cfg.width / 2.0
    cy = cfg.height / 2.0 if cfg.view == "ego" else cfg.height * 0.78
    jj, ii = np.meshgrid(np.arange(cfg.width), np.arange(cfg.height))
    x_img = (jj + 0.5 - cx) * cfg.meters_per_pixel
    y_img = (cy - ii - 0.5) * cfg.meters_per_pixel
    yaw = state.pose.yaw
    fwd = (math.cos(yaw), math.sin(yaw))
    right = (math.sin(yaw), -math.cos(yaw))
    wx = state.pose.x + y_img * fwd[0] + x_img * right[0]
    wy = state.pose.y + y_img * fwd[1] + x_img * right[1]
    return wx, wy, x_img, y_img


def _dist_to_edge(edge_geom, wx, wy):
    g = edge_geom
    if g.kind == "straight":
        ux, uy = math.cos(g.start.yaw), math.sin(g.start.yaw)
        relx, rely = wx - g.start.x, wy - g.start.y
        t = np.clip(relx * ux + rely * uy, 0.0, g.length)
        return np.hypot(relx - t * ux, rely - t * uy)
    cx, cy = g.center()
    a0 = math.atan2(g.start.y - cy, g.start.x - cx)
    sweep = g.length / g.radius
    beta = np.arctan2(wy - cy, wx - cx)
    rel = np.mod(g.turn * (beta - a0), 2.0 * math.pi)
    radial = np.abs(np.hypot(wx - cx, wy - cy) - g.radius)
    inside = rel <= sweep
    ex, ey = g.point_at(g.length)
    d_ends = np.minimum(np.hypot(wx - g.start.x, wy - g.start.y),
                        np.hypot(wx - ex, wy - ey))
    return np.where(inside, radial, d_ends)


def render_frame(track: TrackSpec, state: EgoState, cfg: RenderConfig | None = None,
                 meta: dict | None = None) -> Frame:
    """Deterministic ego-centered top-down view of the whole track."""
    cfg = cfg or RenderConfig()
    wx, wy, x_img, y_img = _pixel_world_coords(state, cfg)

    dist = np.full(wx.shape, np.inf)
    for edge in track.edges:
        dist = np.minimum(dist, _dist_to_edge(edge.geom, wx, wy))
    road = dist <= track.lane_width / 2.0
    marking = dist <= MARKING_HALF_WIDTH

    obstacle = np.zeros(wx.shape, dtype=bool)
    for (xmin, ymin, xmax, ymax) in track.obstacles:
        obstacle |= (wx >= xmin) & (wx <= xmax) & (wy >= ymin) & (wy <= ymax)

    # ego glyph is fixed in the image because the view is ego-aligned
    if cfg.draw_ego:
        ego = (np.abs(x_img) <= 0.8) & (np.abs(y_img) <= 1.5)
    else:
        ego = np.zeros(wx.shape, dtype=bool)

    if cfg.channels == 1:
        img = np.full(wx.shape, GRAY_LEVELS["background"], dtype=np.uint8)
        img[road] = GRAY_LEVELS["road"]
        img[marking] = GRAY_LEVELS["marking"]
        img[obstacle] = GRAY_LEVELS["obstacle"]
        img[ego] = GRAY_LEVELS["ego"]
        data = img[:, :, None]
    else:
        img = np.empty((cfg.height, cfg.width, 3), dtype=np.uint8)
        img[:, :] = RGB_LEVELS["background"]
        img[road] = RGB_LEVELS["road"]
        img[marking] = RGB_LEVELS["marking"]
        img[obstacle] = RGB_LEVELS["obstacle"]
        img[ego] = RGB_LEVELS["ego"]
        data = img
    return Frame(cfg.width, cfg.height, cfg.channels,
                 data.astype(np.float32) / np.float32(255.0), dict(meta or {}))


# ---------------------------------------------------------------------------
# PNG i/o

def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_frame(frame: Frame) -> bytes:
    """Lossless 8-bit PNG (grayscale or RGB) with metadata in a tEXt chunk."""
    pixels = frame.to_bytes()
    color_type = 0 if frame.channels == 1 else 2
    header = struct.pack(">IIBBBBB", frame.width, frame.height, 8, color_type, 0, 0, 0)
    rows = b"".join(b"\x00" + pixels[i].tobytes() for i in range(frame.height))
    meta_payload = META_KEYWORD + b"\x00" + json.dumps(
        frame.meta, sort_keys=True).encode("utf-8")
    return (PNG_SIGNATURE
            + _chunk(b"IHDR", header)
            + _chunk(b"tEXt", meta_payload)
            + _chunk(b"IDAT", zlib.compress(rows, 6))
            + _chunk(b"IEND", b""))


def write_frame(frame: Frame, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_frame(frame))


def _unfilter(raw: bytes, height: int, width: int, channels: int) -> np.ndarray:
    stride = width * channels
    if len(raw) != height * (stride + 1):
        raise FormatError("pixel data length mismatch")
    out = np.zeros((height, stride), dtype=np.uint8)
    raw = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    for i in range(height):
        ftype = int(raw[i, 0])
        line = raw[i, 1:].astype(np.int32)
        prev = out[i - 1].astype(np.int32) if i > 0 else np.zeros(stride, np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = np.zeros(stride, np.int32)
            for j in range(stride):
                a = cur[j - channels] if j >= channels else 0
                b = prev[j]
                c = prev[j - channels] if j >= channels else 0
                if ftype == 1:
                    pred = a
                elif ftype == 3:
                    pred = (a + b) // 2
                else:
                    p = a + b - c
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                    pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                cur[j] = (line[j] + pred) & 0xFF
        else:
            raise FormatError(f"unsupported PNG filter type {ftype}")
        out[i] = cur.astype(np.uint8)
    return out.reshape(height, width, channels)


def read_frame(path) -> Frame:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(PNG_SIGNATURE):
        raise FormatError(f"{path}: not a PNG file")
    offset = len(PNG_SIGNATURE)
    ihdr = None
    idat = b""
    meta: dict = {}
    saw_end = False
    while offset < len(blob):
        if offset + 8 > len(blob):
            raise FormatError(f"{path}: truncated chunk header")
        (length,) = struct.unpack_from(">I", blob, offset)
        tag = blob[offset + 4:offset + 8]
        payload = blob[offset + 8:offset + 8 + length]
        if len(payload) != length or offset + 12 + length > len(blob):
            raise FormatError(f"{path}: truncated chunk {tag!r}")
        (crc,) = struct.unpack_from(">I", blob, offset + 8 + length)
        if crc != (zlib.crc32(tag + payload) & 0xFFFFFFFF):
            raise FormatError(f"{path}: CRC mismatch in chunk {tag!r}")
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"tEXt" and payload.startswith(META_KEYWORD + b"\x00"):
            try:
                meta = json.loads(payload[len(META_KEYWORD) + 1:].decode("utf-8"))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: corrupt metadata chunk") from exc
        elif tag == b"IEND":
            saw_end = True
            break
        offset += 12 + length
    if ihdr is None or not saw_end:
        raise FormatError(f"{path}: missing IHDR or IEND")
    width, height, depth, color_type, comp, filt, interlace = ihdr
    if depth != 8 or color_type not in (0, 2) or comp or filt or interlace:
        raise FormatError(f"{path}: unsupported PNG layout")
    channels = 1 if color_type == 0 else 3
    try:
        raw = zlib.decompress(idat)
    except zlib.error as exc:
        raise FormatError(f"{path}: corrupt pixel data ({exc})") from exc
    pixels = _unfilter(raw, height, width, channels)
    return Frame(width, height, channels,
                 pixels.astype(np.float32) / np.float32(255.0), meta)
