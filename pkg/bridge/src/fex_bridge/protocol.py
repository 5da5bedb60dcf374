"""FEX0 server loop over stdin/stdout.

Frames (u32 and f32 little-endian):
  handshake  out: "FEX0" + dim
  request    in:  "IMG0" + H + W + C + H*W*C f32
  response   out: "VEC0" + dim f32
  shutdown   in:  "END0" -> exit 0

Any malformed or truncated frame: write nothing further, exit 2.
"""

from __future__ import annotations

import struct
import sys

import numpy as np

_U32 = struct.Struct("<I")
MAX_SIDE = 1 << 14

EXIT_OK = 0
EXIT_PROTOCOL = 2


class Malformed(Exception):
    pass


def _read_exact(stream, n: int) -> bytes:
    buf = stream.read(n)
    if buf is None or len(buf) != n:
        raise Malformed(f"truncated read: wanted {n} bytes, got {len(buf or b'')}")
    return buf


def serve(extract, dim: int, stdin=None, stdout=None) -> int:
    """Run the request loop; returns the process exit code."""
    inp = stdin if stdin is not None else sys.stdin.buffer
    out = stdout if stdout is not None else sys.stdout.buffer
    out.write(b"FEX0" + _U32.pack(dim))
    out.flush()
    while True:
        try:
            magic = _read_exact(inp, 4)
            if magic == b"END0":
                return EXIT_OK
            if magic != b"IMG0":
                raise Malformed(f"bad frame magic {magic!r}")
            h = _U32.unpack(_read_exact(inp, 4))[0]
            w = _U32.unpack(_read_exact(inp, 4))[0]
            c = _U32.unpack(_read_exact(inp, 4))[0]
            if not (1 <= h <= MAX_SIDE and 1 <= w <= MAX_SIDE and c in (1, 3)):
                raise Malformed(f"bad image header {h}x{w}x{c}")
            payload = _read_exact(inp, h * w * c * 4)
            img = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
            if c == 1:
                img = np.repeat(img, 3, axis=2)
            try:
                vec = extract(img)
            except ValueError as exc:
                raise Malformed(str(exc)) from exc
            if vec.shape != (dim,):
                raise Malformed(f"extractor produced shape {vec.shape}, dim is {dim}")
        except Malformed as exc:
            print(f"fex-bridge: protocol error: {exc}", file=sys.stderr)
            return EXIT_PROTOCOL
        out.write(b"VEC0" + np.asarray(vec, dtype="<f4").tobytes(order="C"))
        out.flush()
