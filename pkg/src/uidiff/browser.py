"""Minimal headless-Chromium driver over the devtools wire protocol.

Implements just enough of the protocol for the render harness: launch
with a debugging port, open a tab, navigate to a data: URL, query
element geometry, and capture a full-page screenshot.  The WebSocket
client is a small RFC 6455 implementation over stdlib sockets (text
frames, client side only) because the environment carries no websocket
package.
"""

from __future__ import annotations

import base64
import json
import os
import secrets
import socket
import struct
import subprocess
import tempfile
import time
import urllib.request
from typing import Optional
from urllib.parse import urlsplit

from .render import ProviderUnavailable, RenderTimeout

_BLOCK_SCRIPT = """
(() => {
  const out = [];
  const walker = document.createTreeWalker(document.body, NodeFilter.SHOW_ELEMENT);
  while (walker.nextNode()) {
    const el = walker.currentNode;
    const hasText = Array.from(el.childNodes).some(
      n => n.nodeType === Node.TEXT_NODE && n.textContent.trim().length > 0);
    if (!hasText) continue;
    const r = el.getBoundingClientRect();
    if (r.width <= 0 || r.height <= 0) continue;
    const cs = getComputedStyle(el);
    const m = cs.color.match(/\\d+/g) || ['0', '0', '0'];
    out.push({
      x: r.x + window.scrollX, y: r.y + window.scrollY, w: r.width, h: r.height,
      text: el.innerText.trim().replace(/\\s+/g, ' '),
      color: [Number(m[0]), Number(m[1]), Number(m[2])],
    });
  }
  return JSON.stringify(out);
})()
"""


class _WebSocket:
    """Client-side text-frame WebSocket over a plain socket."""

    def __init__(self, url: str, timeout: float):
        parts = urlsplit(url)
        host = parts.hostname or "127.0.0.1"
        port = parts.port or 80
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        key = base64.b64encode(secrets.token_bytes(16)).decode()
        path = parts.path + (f"?{parts.query}" if parts.query else "")
        handshake = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        self.sock.sendall(handshake.encode())
        response = b""
        while b"\r\n\r\n" not in response:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ProviderUnavailable("websocket handshake failed")
            response += chunk
        if b" 101 " not in response.split(b"\r\n", 1)[0]:
            raise ProviderUnavailable("websocket upgrade refused")

    def send_text(self, payload: str) -> None:
        data = payload.encode("utf-8")
        mask = secrets.token_bytes(4)
        header = bytearray([0x81])  # FIN + text opcode
        n = len(data)
        if n < 126:
            header.append(0x80 | n)
        elif n < 1 << 16:
            header.append(0x80 | 126)
            header += struct.pack(">H", n)
        else:
            header.append(0x80 | 127)
            header += struct.pack(">Q", n)
        header += mask
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
        self.sock.sendall(bytes(header) + masked)

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise ProviderUnavailable("websocket closed")
            buf += chunk
        return buf

    def recv_text(self) -> str:
        while True:
            b0, b1 = self._read_exact(2)
            opcode = b0 & 0x0F
            length = b1 & 0x7F
            if length == 126:
                length = struct.unpack(">H", self._read_exact(2))[0]
            elif length == 127:
                length = struct.unpack(">Q", self._read_exact(8))[0]
            if b1 & 0x80:  # masked server frame: protocol violation, unmask anyway
                mask = self._read_exact(4)
                payload = bytes(
                    b ^ mask[i % 4] for i, b in enumerate(self._read_exact(length))
                )
            else:
                payload = self._read_exact(length)
            if opcode == 0x1:
                return payload.decode("utf-8")
            if opcode == 0x9:  # ping -> pong
                pong = bytearray([0x8A, 0x80 | len(payload)])
                mask = secrets.token_bytes(4)
                pong += mask + bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
                self.sock.sendall(bytes(pong))
            elif opcode == 0x8:
                raise ProviderUnavailable("websocket closed by peer")
            # continuation/binary frames are not used by the protocol

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class BrowserSession:
    """One headless browser process plus one devtools page connection."""

    def __init__(self, executable: str, timeout: float = 30.0):
        self.timeout = timeout
        self.profile = tempfile.mkdtemp(prefix="uidiff-chrome-")
        self.port = self._free_port()
        try:
            self.proc = subprocess.Popen(
                [
                    executable,
                    "--headless=new",
                    "--disable-gpu",
                    "--no-sandbox",
                    "--hide-scrollbars",
                    f"--remote-debugging-port={self.port}",
                    f"--user-data-dir={self.profile}",
                    "about:blank",
                ],
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise ProviderUnavailable(f"cannot launch browser {executable!r}: {exc}")
        self.ws = self._connect()
        self._msg_id = 0
        self._command("Page.enable", {})
        self._command("Runtime.enable", {})

    @staticmethod
    def _free_port() -> int:
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            return s.getsockname()[1]

    def _connect(self) -> _WebSocket:
        deadline = time.monotonic() + self.timeout
        last_error: Optional[Exception] = None
        while time.monotonic() < deadline:
            try:
                with urllib.request.urlopen(
                    f"http://127.0.0.1:{self.port}/json/list", timeout=2
                ) as resp:
                    tabs = json.loads(resp.read())
                pages = [t for t in tabs if t.get("type") == "page"]
                if pages:
                    return _WebSocket(pages[0]["webSocketDebuggerUrl"], self.timeout)
            except Exception as exc:  # browser still booting
                last_error = exc
            time.sleep(0.2)
        raise ProviderUnavailable(f"browser devtools endpoint never came up: {last_error}")

    def _command(self, method: str, params: dict) -> dict:
        self._msg_id += 1
        msg_id = self._msg_id
        self.ws.send_text(json.dumps({"id": msg_id, "method": method, "params": params}))
        deadline = time.monotonic() + self.timeout
        while True:
            if time.monotonic() > deadline:
                raise RenderTimeout(f"no reply to {method}")
            msg = json.loads(self.ws.recv_text())
            if msg.get("id") == msg_id:
                if "error" in msg:
                    raise ProviderUnavailable(f"{method} failed: {msg['error']}")
                return msg.get("result", {})

    def _wait_event(self, name: str) -> None:
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            msg = json.loads(self.ws.recv_text())
            if msg.get("method") == name:
                return
        raise RenderTimeout(f"event {name} never fired")

    def screenshot_html(self, html: str, viewport_width: int) -> tuple[bytes, list[dict]]:
        self._command(
            "Emulation.setDeviceMetricsOverride",
            {"width": viewport_width, "height": 800, "deviceScaleFactor": 1, "mobile": False},
        )
        url = "data:text/html;base64," + base64.b64encode(html.encode("utf-8")).decode()
        self._command("Page.navigate", {"url": url})
        self._wait_event("Page.loadEventFired")
        blocks_raw = self._command(
            "Runtime.evaluate", {"expression": _BLOCK_SCRIPT, "returnByValue": True}
        )
        blocks = json.loads(blocks_raw.get("result", {}).get("value", "[]"))
        metrics = self._command("Page.getLayoutMetrics", {})
        content = metrics.get("cssContentSize") or metrics.get("contentSize", {})
        height = int(content.get("height", 800)) or 800
        shot = self._command(
            "Page.captureScreenshot",
            {
                "format": "png",
                "captureBeyondViewport": True,
                "clip": {
                    "x": 0,
                    "y": 0,
                    "width": viewport_width,
                    "height": height,
                    "scale": 1,
                },
            },
        )
        return base64.b64decode(shot["data"]), blocks

    def close(self) -> None:
        try:
            self.ws.close()
        finally:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
            if os.path.isdir(self.profile):
                import shutil

                shutil.rmtree(self.profile, ignore_errors=True)
