"""File formats: PNG/PPM images, PFM and raw-grid depth, prompts, configs.

Raw grids roundtrip bit-exactly; lossy formats roundtrip within their
quantization step. The run-config reader rejects unknown keys so typos fail
loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ParameterError
from .grids import MaskGrid, RgbGrid, ScalarGrid

RAW_MAGIC = b"RDGR"
RAW_VERSION = 1
_RAW_HEAD = struct.Struct("<4sHBBII")
_RAW_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}

MODEL_MIN_SIDE = 518
SCORER_SIDE = 512


# ---------------------------------------------------------------- raw grids

def save_raw_grid(grid: ScalarGrid, path, dtype: str = "f64") -> None:
    code = {"f64": 0, "f32": 1}.get(dtype)
    if code is None:
        raise ParameterError(f"unsupported raw dtype {dtype!r}")
    h, w = grid.shape
    head = _RAW_HEAD.pack(RAW_MAGIC, RAW_VERSION, code, 0, h, w)
    payload = np.ascontiguousarray(grid.values,
                                   dtype=_RAW_DTYPES[code]).tobytes()
    Path(path).write_bytes(head + payload)


def load_raw_grid(path) -> ScalarGrid:
    data = Path(path).read_bytes()
    if len(data) < _RAW_HEAD.size:
        raise FormatError("raw grid shorter than its header")
    magic, version, code, _, h, w = _RAW_HEAD.unpack_from(data)
    if magic != RAW_MAGIC:
        raise FormatError(f"bad raw-grid magic {magic!r}")
    if version != RAW_VERSION:
        raise FormatError(f"unsupported raw-grid version {version}")
    if code not in _RAW_DTYPES:
        raise FormatError(f"unknown raw-grid dtype code {code}")
    dt = _RAW_DTYPES[code]
    expected = _RAW_HEAD.size + dt.itemsize * h * w
    if len(data) != expected:
        raise FormatError(
            f"raw grid is {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype=dt, offset=_RAW_HEAD.size)
    return ScalarGrid(values.reshape(h, w).astype(np.float64))


# ---------------------------------------------------------------------- PFM

def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    out = []
    pos = 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("truncated header")
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos])
    return out, pos + 1  # past the single whitespace ending the header


def load_pfm(path) -> ScalarGrid:
    """Grayscale PFM; the scale's sign encodes endianness, rows bottom-up."""
    data = Path(path).read_bytes()
    try:
        (magic, ws, hs, scale_s), offset = _tokens(data, 4)
        w, h = int(ws), int(hs)
        scale = float(scale_s)
    except (FormatError, ValueError) as e:
        raise FormatError(f"malformed PFM header: {e}") from e
    if magic == b"PF":
        raise FormatError("color PFM is not supported for depth grids")
    if magic != b"Pf":
        raise FormatError(f"bad PFM magic {magic!r}")
    if scale == 0:
        raise FormatError("PFM scale must be nonzero")
    dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = offset + 4 * h * w
    if len(data) < expected:
        raise FormatError(f"PFM payload short: {len(data)} < {expected}")
    flat = np.frombuffer(data, dtype=dt, count=h * w, offset=offset)
    return ScalarGrid(np.flipud(flat.reshape(h, w)).astype(np.float64))


def save_pfm(grid: ScalarGrid, path) -> None:
    h, w = grid.shape
    head = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    payload = np.flipud(grid.values).astype("<f4").tobytes()
    Path(path).write_bytes(head + payload)


# ------------------------------------------------------------------- images

def _from_pil(img: Image.Image) -> np.ndarray:
    if img.mode == "P":
        img = img.convert("RGB")
    if img.mode in ("RGBA", "LA"):
        img = img.convert(img.mode[:-1])
    if img.mode in ("L", "RGB"):
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("I", "I;16"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    else:
        raise FormatError(f"unsupported image mode {img.mode!r}")
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=2)
    return arr


def _load_ppm(data: bytes) -> np.ndarray:
    try:
        (magic, ws, hs, maxval_s), offset = _tokens(data, 4)
        w, h = int(ws), int(hs)
        maxval = int(maxval_s)
    except (FormatError, ValueError) as e:
        raise FormatError(f"malformed PPM header: {e}") from e
    if magic != b"P6":
        raise FormatError(f"only binary P6 PPM is supported, got {magic!r}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"PPM maxval {maxval} out of range")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = h * w * 3
    if len(data) < offset + dt.itemsize * count:
        raise FormatError("PPM payload short")
    flat = np.frombuffer(data, dtype=dt, count=count, offset=offset)
    return flat.reshape(h, w, 3).astype(np.float64) / maxval


def load_image(path) -> RgbGrid:
    """8/16-bit PNG or binary PPM mapped to [0, 1] by max-value division."""
    p = Path(path)
    if not p.exists():
        raise FormatError(f"no such image file: {p}")
    if p.suffix.lower() in (".ppm", ".pnm"):
        return RgbGrid(_load_ppm(p.read_bytes()))
    try:
        with Image.open(p) as img:
            return RgbGrid(_from_pil(img))
    except FormatError:
        raise
    except Exception as e:
        raise FormatError(f"cannot read image {p}: {e}") from e


def save_image(rgb: RgbGrid, path) -> None:
    """8-bit PNG with round-to-nearest quantization."""
    arr = np.rint(rgb.values * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def load_depth(path, png_scale: float | None = None
               ) -> tuple[ScalarGrid, MaskGrid]:
    """Depth grid plus validity mask; zero pixels mean missing, not depth."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".pfm":
        grid = load_pfm(p)
    elif suffix == ".rdgr":
        grid = load_raw_grid(p)
    elif suffix == ".png":
        if png_scale is None:
            raise ParameterError("16-bit PNG depth needs a scale factor")
        try:
            with Image.open(p) as img:
                if img.mode not in ("I", "I;16", "L"):
                    raise FormatError(
                        f"unsupported depth PNG mode {img.mode!r}")
                raw = np.asarray(img, dtype=np.float64)
        except FormatError:
            raise
        except Exception as e:
            raise FormatError(f"cannot read depth PNG {p}: {e}") from e
        grid = ScalarGrid(raw * png_scale)
    else:
        raise FormatError(f"unsupported depth format {suffix!r}")
    return grid, MaskGrid(grid.values > 0)


def save_depth(grid: ScalarGrid, path, png_scale: float | None = None) -> None:
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".pfm":
        save_pfm(grid, p)
    elif suffix == ".rdgr":
        save_raw_grid(grid, p)
    elif suffix == ".png":
        if png_scale is None:
            raise ParameterError("16-bit PNG depth needs a scale factor")
        raw = np.rint(grid.values / png_scale)
        if raw.min() < 0 or raw.max() > 65535:
            raise ParameterError("depth does not fit in 16 bits at this scale")
        Image.fromarray(raw.astype(np.uint16)).save(p, format="PNG")
    else:
        raise FormatError(f"unsupported depth format {suffix!r}")


def load_mask(path) -> MaskGrid:
    try:
        with Image.open(Path(path)) as img:
            arr = np.asarray(img.convert("L"))
    except Exception as e:
        raise FormatError(f"cannot read mask {path}: {e}") from e
    return MaskGrid(arr != 0)


def save_mask(mask: MaskGrid, path) -> None:
    arr = np.where(mask.values, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path), format="PNG")


def load_prompt(image_path) -> str:
    """First line of the <stem>.prompt.txt sidecar, or '' if absent."""
    sidecar = Path(image_path).with_suffix("").parent / \
        (Path(image_path).stem + ".prompt.txt")
    if not sidecar.exists():
        return ""
    text = sidecar.read_text(encoding="utf-8")
    return text.splitlines()[0].strip() if text else ""


# ----------------------------------------------------------------- resizing

def resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling; identity sizes copy exactly."""
    in_h, in_w = values.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return values.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5,
                 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5,
                 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = ys - y0
    wx = xs - x0
    if values.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    v00 = values[np.ix_(y0, x0)]
    v01 = values[np.ix_(y0, x1)]
    v10 = values[np.ix_(y1, x0)]
    v11 = values[np.ix_(y1, x1)]
    top = v00 * (1.0 - wx) + v01 * wx
    bot = v10 * (1.0 - wx) + v11 * wx
    return top * (1.0 - wy) + bot * wy


def resize_for_model(img: RgbGrid) -> RgbGrid:
    """Aspect-preserving resize so the shorter side measures 518 pixels."""
    h, w = img.shape[:2]
    if min(h, w) == MODEL_MIN_SIDE:
        return img
    if h <= w:
        out_h = MODEL_MIN_SIDE
        out_w = int(round(w * MODEL_MIN_SIDE / h))
    else:
        out_w = MODEL_MIN_SIDE
        out_h = int(round(h * MODEL_MIN_SIDE / w))
    return RgbGrid(np.clip(resize_bilinear(img.values, out_h, out_w),
                           0.0, 1.0))


@dataclass(frozen=True)
class PadGeometry:
    """Where the image sits inside its zero-padded square."""

    orig_h: int
    orig_w: int
    top: int
    left: int
    square: int


def pad_to_square(values: np.ndarray) -> tuple[np.ndarray, PadGeometry]:
    h, w = values.shape[:2]
    square = max(h, w)
    top = (square - h) // 2
    left = (square - w) // 2
    shape = (square, square) + values.shape[2:]
    out = np.zeros(shape, dtype=values.dtype)
    out[top:top + h, left:left + w] = values
    return out, PadGeometry(h, w, top, left, square)


def unpad_from_square(values: np.ndarray, geom: PadGeometry) -> np.ndarray:
    return values[geom.top:geom.top + geom.orig_h,
                  geom.left:geom.left + geom.orig_w]


def scorer_transform(values: np.ndarray,
                     side: int = SCORER_SIDE) -> tuple[np.ndarray, PadGeometry]:
    """Zero-pad to a centered square, then resize to the scorer's side."""
    padded, geom = pad_to_square(values)
    return resize_bilinear(padded, side, side), geom


def scorer_untransform(values: np.ndarray, geom: PadGeometry) -> np.ndarray:
    """Map a scorer-side field back to the original image footprint."""
    back = resize_bilinear(values, geom.square, geom.square)
    return unpad_from_square(back, geom)


# -------------------------------------------------------------- run configs

def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*options: str):
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} not one of {options}")
        return s
    return conv


CONFIG_SCHEMA = {
    "iterations": int,
    "lr_disparity": float,
    "lr_camera": float,
    "lambda1": float,
    "ensemble_runs": int,
    "seed": int,
    "parameterization": _choice("direct", "smoothed"),
    "smoothness": _choice("squared", "l1"),
    "clamp_gradient": _choice("literal", "straight_through"),
    "camera": _choice("orthographic", "perspective"),
    "camera_param": float,
    "optimize_camera": _parse_bool,
    "b": float,
    "optimize_b": _parse_bool,
    "prompt": str,
    "export_dir": str,
    "timesteps": int,
    "beta_start": float,
    "beta_end": float,
    "t_min": int,
    "t_max": int,
    "weighting": _choice("one_minus_alpha_bar", "constant"),
    "scorer_timeout": float,
    "depth_cap": float,
    "eval_resize": _choice("bilinear", "none"),
}


def parse_run_config(text: str) -> dict:
    """key=value lines with '#' comments; unknown or repeated keys fail."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_SCHEMA:
            raise FormatError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate config key {key!r}")
        try:
            out[key] = CONFIG_SCHEMA[key](value)
        except ValueError as e:
            raise FormatError(f"line {lineno}: bad value for {key}: {e}") from e
    return out


def load_run_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"no such config file: {p}")
    return parse_run_config(p.read_text(encoding="utf-8"))
