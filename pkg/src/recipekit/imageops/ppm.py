"""Binary PPM (P6, maxval 255) reading and writing."""

import numpy as np

from .geometry import ImageError, check_image


def _tokens(data):
    """Yield ``(token, end offset)`` for header fields, skipping comments."""
    i, n = 0, len(data)
    while i < n:
        ch = data[i : i + 1]
        if ch.isspace():
            i += 1
        elif ch == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        else:
            j = i
            while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def decode_ppm(data):
    fields = []
    end = 0
    for tok, end in _tokens(data):
        fields.append(tok)
        if len(fields) == 4:
            break
    if len(fields) < 4 or fields[0] != b"P6":
        raise ImageError("not a binary PPM (P6) file")
    try:
        width, height, maxval = (int(t) for t in fields[1:])
    except ValueError:
        raise ImageError(f"bad PPM header fields {fields[1:]}") from None
    if maxval != 255:
        raise ImageError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ImageError(f"bad PPM dimensions {width}x{height}")
    start = end + 1  # single whitespace byte after maxval
    need = width * height * 3
    raster = data[start : start + need]
    if len(raster) != need:
        raise ImageError(f"truncated PPM raster: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img):
    img = check_image(img, np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path, img):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
