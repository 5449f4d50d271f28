"""Screenshot harness: raster type, pixel budget, and render providers.

Three providers implement the same contract: the deterministic layout
engine (default for tests and offline runs), a fixture store that
replays recorded PNGs keyed by document hash, and a headless-Chromium
driver speaking the devtools protocol (see :mod:`uidiff.browser`).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .dom import HtmlDocument, is_complete, parse, serialize
from .layout import Block, render_layout, scale_blocks

__all__ = [
    "MAX_PIXELS",
    "ChromiumRenderProvider",
    "FixtureRenderProvider",
    "LayoutRenderProvider",
    "ProviderUnavailable",
    "RasterImage",
    "RenderProvider",
    "RenderTimeout",
    "fit_pixel_budget",
    "is_blank",
    "render",
]

MAX_PIXELS = 1003520  # fixed pixel budget renders are scaled down to
DEFAULT_VIEWPORT_WIDTH = 1280


class RenderTimeout(RuntimeError):
    """The provider did not produce a screenshot in time."""


class ProviderUnavailable(RuntimeError):
    """The provider cannot serve this request (missing fixture, dead browser)."""


@dataclass
class RasterImage:
    """Row-major RGB screenshot, 8 bits per channel."""

    pixels: np.ndarray  # uint8, shape (height, width, 3)

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected (h, w, 3) pixels, got shape {arr.shape}")
        self.pixels = arr

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels).save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    @staticmethod
    def from_png_bytes(data: bytes) -> "RasterImage":
        img = Image.open(io.BytesIO(data)).convert("RGB")
        return RasterImage(np.asarray(img, dtype=np.uint8))

    @staticmethod
    def load(path: str | Path) -> "RasterImage":
        return RasterImage.from_png_bytes(Path(path).read_bytes())

    @staticmethod
    def solid(width: int, height: int, color: tuple[int, int, int]) -> "RasterImage":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:, :] = color
        return RasterImage(arr)


def fit_pixel_budget(img: RasterImage, budget: int = MAX_PIXELS) -> RasterImage:
    """Uniformly downscale so width*height <= budget; no-op when already under.

    Dimensions are floored after scaling by sqrt(budget / (w*h)), which
    preserves the aspect ratio up to the 1-px flooring error and makes
    the operation idempotent.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    w, h = img.width, img.height
    if w * h <= budget:
        return img
    factor = math.sqrt(budget / (w * h))
    new_w = max(1, math.floor(w * factor))
    new_h = max(1, math.floor(h * factor))
    resized = Image.fromarray(img.pixels).resize((new_w, new_h), Image.BOX)
    return RasterImage(np.asarray(resized, dtype=np.uint8))


def budget_scale_factor(img: RasterImage, budget: int = MAX_PIXELS) -> float:
    """The factor fit_pixel_budget would apply (1.0 when under budget)."""
    w, h = img.width, img.height
    if w * h <= budget:
        return 1.0
    return math.sqrt(budget / (w * h))


def is_blank(img: RasterImage) -> bool:
    """True when almost nothing differs from the dominant corner color.

    A pixel counts as content when any channel deviates from the
    dominant corner color by more than 8; the page is blank when fewer
    than 0.5% of pixels are content.
    """
    px = img.pixels
    corners = [px[0, 0], px[0, -1], px[-1, 0], px[-1, -1]]
    keys = [tuple(int(v) for v in c) for c in corners]
    dominant = max(keys, key=lambda k: (keys.count(k), -keys.index(k)))
    diff = np.abs(px.astype(np.int16) - np.array(dominant, dtype=np.int16))
    content = np.any(diff > 8, axis=2)
    return float(content.mean()) < 0.005


# ---------------------------------------------------------------------------
# providers

class RenderProvider(ABC):
    """Turns a document into a full-page screenshot plus text blocks."""

    name = "abstract"

    def __init__(self, viewport_width: int = DEFAULT_VIEWPORT_WIDTH, timeout: float = 30.0):
        self.viewport_width = viewport_width
        self.timeout = timeout

    @abstractmethod
    def render_document(self, doc: HtmlDocument) -> tuple[RasterImage, list[Block]]:
        ...

    def render_text(self, text: str) -> tuple[RasterImage, list[Block]]:
        return self.render_document(parse(text))


class LayoutRenderProvider(RenderProvider):
    """Deterministic in-process renderer; the fixture-grade provider."""

    name = "layout"

    def render_document(self, doc: HtmlDocument) -> tuple[RasterImage, list[Block]]:
        result = render_layout(doc, self.viewport_width)
        return RasterImage(result.pixels), result.blocks


class FixtureRenderProvider(RenderProvider):
    """Replays stored screenshots keyed by document hash.

    Renders are bit-reproducible across machines because nothing is
    computed: the PNG and block records are read back verbatim.  With a
    ``record_with`` provider attached, unknown documents are rendered
    once and persisted.
    """

    name = "fixture"

    def __init__(
        self,
        store_dir: str | Path,
        viewport_width: int = DEFAULT_VIEWPORT_WIDTH,
        record_with: Optional[RenderProvider] = None,
    ):
        super().__init__(viewport_width)
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.record_with = record_with

    def key_for(self, doc: HtmlDocument) -> str:
        payload = f"{self.viewport_width}\n{serialize(doc)}".encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:24]

    def render_document(self, doc: HtmlDocument) -> tuple[RasterImage, list[Block]]:
        key = self.key_for(doc)
        png = self.store_dir / f"{key}.png"
        meta = self.store_dir / f"{key}.blocks.json"
        if not png.exists():
            if self.record_with is None:
                raise ProviderUnavailable(f"no stored render for key {key}")
            img, blocks = self.record_with.render_document(doc)
            png.write_bytes(img.to_png_bytes())
            meta.write_text(
                json.dumps([b.to_record() for b in blocks]), encoding="utf-8"
            )
        img = RasterImage.from_png_bytes(png.read_bytes())
        blocks = [Block.from_record(r) for r in json.loads(meta.read_text(encoding="utf-8"))]
        return img, blocks


class ChromiumRenderProvider(RenderProvider):
    """Headless-Chromium screenshots over the devtools wire protocol."""

    name = "chromium"

    def __init__(
        self,
        executable: str = "chromium",
        viewport_width: int = DEFAULT_VIEWPORT_WIDTH,
        timeout: float = 30.0,
    ):
        super().__init__(viewport_width, timeout)
        self.executable = executable
        self._session = None

    def _ensure_session(self):
        if self._session is None:
            from .browser import BrowserSession

            self._session = BrowserSession(self.executable, self.timeout)
        return self._session

    def render_document(self, doc: HtmlDocument) -> tuple[RasterImage, list[Block]]:
        session = self._ensure_session()
        png, block_records = session.screenshot_html(serialize(doc), self.viewport_width)
        img = RasterImage.from_png_bytes(png)
        blocks = [
            Block(r["x"], r["y"], r["w"], r["h"], r["text"], tuple(r["color"]))
            for r in block_records
        ]
        return img, blocks

    def close(self) -> None:
        if self._session is not None:
            self._session.close()
            self._session = None


def render(
    doc: HtmlDocument,
    provider: RenderProvider,
    viewport_width: Optional[int] = None,
) -> tuple[RasterImage, list[Block]]:
    """Render a complete document; blocks come from the same session."""
    if not is_complete(serialize(doc)):
        raise ValueError("document is not complete (missing html open/close tags)")
    if viewport_width is not None and viewport_width != provider.viewport_width:
        provider.viewport_width = viewport_width
    return provider.render_document(doc)


def scaled_render(
    doc: HtmlDocument, provider: RenderProvider, budget: int = MAX_PIXELS
) -> tuple[RasterImage, list[Block]]:
    """Render, then apply the pixel budget to image and block geometry."""
    img, blocks = render(doc, provider)
    factor = budget_scale_factor(img, budget)
    if factor < 1.0:
        img = fit_pixel_budget(img, budget)
        blocks = scale_blocks(blocks, factor)
    return img, blocks
