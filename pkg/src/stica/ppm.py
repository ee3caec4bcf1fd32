"""Binary PPM (P6) image writing/reading and strip layout helpers."""

from __future__ import annotations

import numpy as np


def to_u8(img):
    """(3,H,W) float in [0,1] or (H,W,3) uint8 -> (H,W,3) uint8."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr if arr.ndim == 3 and arr.shape[-1] == 3 else arr.transpose(1, 2, 0)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    """Write an image as binary P6."""
    u8 = to_u8(img)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def read_ppm(path):
    """Read binary P6 back as (H,W,3) uint8."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError("not a P6 PPM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pix.reshape(h, w, 3).copy()


def hstrip(images, pad=2, pad_value=255):
    """Concatenate images horizontally with a separator band."""
    u8s = [to_u8(im) for im in images]
    h = max(im.shape[0] for im in u8s)
    sep = np.full((h, pad, 3), pad_value, dtype=np.uint8)
    parts = []
    for i, im in enumerate(u8s):
        if im.shape[0] != h:
            canvas = np.zeros((h, im.shape[1], 3), dtype=np.uint8)
            canvas[: im.shape[0]] = im
            im = canvas
        if i:
            parts.append(sep)
        parts.append(im)
    return np.concatenate(parts, axis=1)


def vstrip(images, pad=2, pad_value=255):
    """Concatenate images vertically with a separator band."""
    u8s = [to_u8(im) for im in images]
    w = max(im.shape[1] for im in u8s)
    sep = np.full((pad, w, 3), pad_value, dtype=np.uint8)
    parts = []
    for i, im in enumerate(u8s):
        if im.shape[1] != w:
            canvas = np.zeros((im.shape[0], w, 3), dtype=np.uint8)
            canvas[:, : im.shape[1]] = im
            im = canvas
        if i:
            parts.append(sep)
        parts.append(im)
    return np.concatenate(parts, axis=0)
