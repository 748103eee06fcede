"""Image files: binary PGM for eyeballing, raw float64 sidecars for pipelines.

PGM maps [-1, 1] linearly onto [0, 255] (8-bit, lossy by quantization only).
The raw format is lossless and is what every pipeline stage reads and writes;
lossy formats would erode adversarial perturbations.

Raw layout (all little-endian): magic "APIM0001" | uint32 rank |
rank x uint32 dims | row-major float64 data. See docs/FORMATS.md.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

RAW_MAGIC = b"APIM0001"


def write_pgm(path, img):
    """8-bit binary PGM of a single-channel (1, H, W) or (H, W) image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise ValueError(f"PGM supports one channel, got shape {img.shape}")
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"expected (H, W) or (1, H, W), got shape {img.shape}")
    h, w = img.shape
    u8 = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(u8.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM back into a (1, H, W) float image in [-1, 1]."""
    blob = Path(path).read_bytes()

    def fail(offset, why):
        raise ValueError(f"{path}: PGM parse error at byte {offset}: {why}")

    if blob[:3] != b"P5\n":
        fail(0, "expected P5 magic")
    pos = 3
    fields = []
    while len(fields) < 3:  # width, height, maxval; comments allowed
        end = blob.find(b"\n", pos)
        if end < 0:
            fail(pos, "truncated header")
        line = blob[pos:end]
        if not line.startswith(b"#"):
            fields.extend(line.split())
        pos = end + 1
    try:
        w, h, maxval = (int(v) for v in fields[:3])
    except ValueError:
        fail(pos, f"non-integer header fields {fields[:3]}")
    if maxval != 255:
        fail(pos, f"unsupported maxval {maxval}")
    if len(blob) - pos != w * h:
        fail(pos, f"expected {w * h} pixel bytes, found {len(blob) - pos}")
    u8 = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    return (u8.astype(np.float64) / 127.5 - 1.0).reshape(1, h, w)


def write_raw(path, arr):
    """Lossless float64 tensor file."""
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_raw(path) -> np.ndarray:
    blob = Path(path).read_bytes()

    def fail(offset, why):
        raise ValueError(f"{path}: raw parse error at byte {offset}: {why}")

    if blob[:8] != RAW_MAGIC:
        fail(0, "bad magic")
    pos = 8
    try:
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
    except struct.error as e:
        fail(pos, str(e))
    count = int(np.prod(dims)) if rank else 1
    if len(blob) - pos != 8 * count:
        fail(pos, f"expected {8 * count} data bytes, found {len(blob) - pos}")
    return np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).copy()


def save_image(directory, stem: str, img):
    """Write both forms: `<stem>.raw` (authoritative) and `<stem>.pgm` (view)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_raw(directory / f"{stem}.raw", img)
    write_pgm(directory / f"{stem}.pgm", img)


def load_images(directory) -> tuple[np.ndarray, list[str]]:
    """All raw images in a directory, sorted by filename; returns (stack, stems)."""
    paths = sorted(Path(directory).glob("*.raw"))
    if not paths:
        raise ValueError(f"no .raw images found in {directory}")
    stack = np.stack([read_raw(p) for p in paths])
    return stack, [p.stem for p in paths]
