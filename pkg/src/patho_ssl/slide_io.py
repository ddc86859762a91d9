"""Slide raster files: binary PPM pixels, sibling PGM label masks, manifests.

A slide on disk is `<name>.ppm` (P6, maxval 255) for pixels and
`<name>.labels.pgm` (P5, maxval 255) for the aligned label mask.  A slide
manifest is a text file listing one PPM path per line, `#` starting a
comment; slide ids are assigned by manifest order.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataFormatError
from .slides import Slide


def _read_pnm_header(data: bytes, magic: bytes, path: str):
    """Parse a PNM header, returning (width, height, payload offset).

    Accepts arbitrary whitespace and `#` comments between tokens, which is
    what the netpbm family allows.
    """
    if not data.startswith(magic):
        raise DataFormatError(f"{path}: expected {magic.decode()} magic")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise DataFormatError(f"{path}: truncated header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise DataFormatError(f"{path}: unterminated comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    # Exactly one whitespace byte separates the maxval from the payload.
    pos += 1
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric header field") from exc
    if maxval != 255:
        raise DataFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise DataFormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, pos


def write_ppm(path: str, pixels: np.ndarray):
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    w, h, off = _read_pnm_header(data, b"P6", path)
    expect = w * h * 3
    payload = data[off : off + expect]
    if len(payload) != expect:
        raise DataFormatError(f"{path}: expected {expect} raster bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm(path: str, mask: np.ndarray):
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    w, h, off = _read_pnm_header(data, b"P5", path)
    expect = w * h
    payload = data[off : off + expect]
    if len(payload) != expect:
        raise DataFormatError(f"{path}: expected {expect} mask bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def labels_path_for(ppm_path: str) -> str:
    stem, ext = os.path.splitext(ppm_path)
    return stem + ".labels.pgm"


def save_slide(slide: Slide, ppm_path: str):
    """Write pixels and, when present, the sibling label mask."""
    write_ppm(ppm_path, slide.pixels)
    if slide.labels is not None:
        write_pgm(labels_path_for(ppm_path), slide.labels)


def load_slide(ppm_path: str, slide_id: int, with_labels: bool = True) -> Slide:
    """Load a slide; with_labels=False skips the mask so labels stay unread."""
    pixels = read_ppm(ppm_path)
    labels = None
    if with_labels:
        lp = labels_path_for(ppm_path)
        if os.path.exists(lp):
            labels = read_pgm(lp)
            if labels.shape != pixels.shape[:2]:
                raise DataFormatError(f"{lp}: label mask does not match pixel raster")
    h, w = pixels.shape[:2]
    return Slide(slide_id=slide_id, width=w, height=h, pixels=pixels, labels=labels)


def write_manifest(path: str, ppm_paths: list[str]):
    with open(path, "w", newline="\n") as f:
        for p in ppm_paths:
            f.write(p + "\n")


def read_manifest(path: str) -> list[str]:
    """Paths listed in a manifest, resolved relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            out.append(line if os.path.isabs(line) else os.path.join(base, line))
    return out


def load_slides(manifest_path: str, with_labels: bool = True) -> list[Slide]:
    """Load every slide in the manifest; ids follow manifest order."""
    return [
        load_slide(p, slide_id=i, with_labels=with_labels)
        for i, p in enumerate(read_manifest(manifest_path))
    ]
