"""Validated raster, heat-map, instance-map and feature-grid file I/O.

Formats:
  - images: 8/16-bit grayscale or color PNG, PGM (P2/P5) in; 8-bit PNG out
  - heat maps: PFM (grayscale ``Pf``, Debevec convention: rows bottom-up,
    negative scale = little-endian) or raw float32-LE grid with a JSON
    sidecar ``{"width", "height", "word"}``
  - instance maps: 16-bit PNG label image + JSON sidecar mapping id -> class
  - feature stacks / weight dumps: raw float32-LE planes with a JSON sidecar
    carrying ``channels``
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .imagery import ColorImage, FeatureStack, GrayImage, HeatMap, InstanceMap, InterestMask

__all__ = [
    "ImageFormatError",
    "load_gray",
    "load_color",
    "save_gray",
    "save_color",
    "save_mask",
    "load_mask",
    "read_pfm",
    "write_pfm",
    "load_heatmap",
    "save_heatmap",
    "load_heatmap_dir",
    "load_instance_map",
    "save_instance_map",
    "load_raw_grid",
    "save_raw_grid",
    "load_feature_stack",
    "save_feature_stack",
]


class ImageFormatError(ValueError):
    """Unsupported or corrupt raster data; message carries path and cause."""


def _open_raster(path: Path) -> Image.Image:
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        img = Image.open(path)
        img.load()
        return img
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"cannot decode raster {path}: {exc}") from exc


def _gray_array(img: Image.Image, path: Path) -> np.ndarray:
    arr = np.asarray(img)
    if img.mode == "L":
        return arr.astype(np.float64) / 255.0
    if img.mode in ("I;16", "I;16B", "I;16L"):
        return arr.astype(np.float64) / 65535.0
    if img.mode == "I":
        # Pillow maps 16-bit grayscale PNG to 32-bit ints; full scale is 65535.
        if arr.max(initial=0) > 65535:
            raise ImageFormatError(f"unsupported bit depth (> 16) in {path}")
        return arr.astype(np.float64) / 65535.0
    raise ImageFormatError(f"unsupported grayscale mode {img.mode!r} in {path}")


def load_gray(path: str | Path) -> GrayImage:
    """Load an 8/16-bit grayscale PNG or PGM, scaled to [0, 1].

    Color rasters are rejected; use :func:`load_color`.
    """
    path = Path(path)
    img = _open_raster(path)
    if img.mode in ("RGB", "RGBA", "P"):
        raise ImageFormatError(f"{path} is a color raster; use load_color")
    return GrayImage(_gray_array(img, path))


def load_color(path: str | Path) -> ColorImage:
    """Load an 8-bit color raster (PNG), scaled to [0, 1]."""
    path = Path(path)
    img = _open_raster(path)
    if img.mode == "L" or img.mode.startswith("I"):
        raise ImageFormatError(f"{path} is grayscale; use load_gray")
    rgb = np.asarray(img.convert("RGB")).astype(np.float64) / 255.0
    return ColorImage(rgb)


def _quantize8(a: np.ndarray) -> np.ndarray:
    # round-half-up at the export boundary only
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_gray(img: GrayImage, path: str | Path) -> None:
    Image.fromarray(_quantize8(img.data), mode="L").save(Path(path), format="PNG")


def save_color(img: ColorImage, path: str | Path) -> None:
    Image.fromarray(_quantize8(img.data)).save(Path(path), format="PNG")


def save_mask(mask: InterestMask, path: str | Path) -> None:
    """Export a binary mask as an 8-bit PNG with values {0, 255}."""
    Image.fromarray((mask.data * 255).astype(np.uint8), mode="L").save(Path(path), format="PNG")


def load_mask(path: str | Path) -> InterestMask:
    g = load_gray(path)
    return InterestMask((g.data >= 0.5).astype(np.uint8))


def read_pfm(path: str | Path) -> tuple[np.ndarray, str | None]:
    """Read a grayscale PFM. Returns (grid, word-from-sidecar-if-any)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ImageFormatError(f"{path}: not a grayscale PFM (header {header!r})")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ImageFormatError(f"{path}: malformed PFM dimension line")
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        count = width * height
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ImageFormatError(f"{path}: truncated PFM payload")
    endian = "<" if scale < 0 else ">"
    grid = np.frombuffer(raw, dtype=endian + "f4").reshape(height, width)
    # PFM stores rows bottom-up
    grid = np.flipud(grid).astype(np.float64)
    word = None
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        word = json.loads(sidecar.read_text()).get("word")
    return grid, word


def write_pfm(grid: np.ndarray, path: str | Path) -> None:
    grid = np.asarray(grid, dtype=np.float32)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{grid.shape[1]} {grid.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(grid).astype("<f4").tobytes())


def load_heatmap(path: str | Path) -> HeatMap:
    """Load a heat map from PFM or from a raw float grid + sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        grid, word = read_pfm(path)
        return HeatMap(np.clip(grid, 0.0, 1.0), word=word)
    grid, meta = load_raw_grid(path)
    if grid.ndim == 3:
        if grid.shape[0] != 1:
            raise ImageFormatError(f"{path}: heat map must be single channel")
        grid = grid[0]
    return HeatMap(np.clip(grid, 0.0, 1.0), word=meta.get("word"))


def save_heatmap(m: HeatMap, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(m.data, path)
        if m.word is not None:
            path.with_suffix(".json").write_text(json.dumps({"word": m.word}))
        return
    save_raw_grid(m.data, path, word=m.word)


def load_heatmap_dir(directory: str | Path) -> dict[str, dict[str, HeatMap]]:
    """Scan a directory for per-word, per-modality heat maps.

    File naming: ``<word>.<modality>.pfm`` or ``<word>.<modality>.raw`` with
    modality in {ir, vis}. Returns ``{word: {modality: HeatMap}}``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"heat-map directory not found: {directory}")
    out: dict[str, dict[str, HeatMap]] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in (".pfm", ".raw"):
            continue
        parts = path.stem.rsplit(".", 1)
        if len(parts) != 2 or parts[1] not in ("ir", "vis"):
            continue
        word, modality = parts
        m = load_heatmap(path)
        out.setdefault(word.lower(), {})[modality] = (
            m if m.word is not None else HeatMap(m.data, word=word.lower())
        )
    return out


def load_instance_map(path: str | Path, sidecar: str | Path | None = None) -> InstanceMap:
    """Load a 16-bit PNG label image plus its id -> class sidecar."""
    path = Path(path)
    img = _open_raster(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ImageFormatError(f"{path}: instance map must be single channel")
    sidecar = Path(sidecar) if sidecar is not None else path.with_suffix(".json")
    if not sidecar.exists():
        raise FileNotFoundError(f"instance-map sidecar not found: {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
        classes = {int(k): str(v) for k, v in meta["classes"].items()}
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ImageFormatError(f"malformed instance sidecar {sidecar}: {exc}") from exc
    return InstanceMap(arr.astype(np.int32), classes)


def save_instance_map(m: InstanceMap, path: str | Path, sidecar: str | Path | None = None) -> None:
    path = Path(path)
    if m.labels.max(initial=0) > 65535:
        raise ImageFormatError("instance ids exceed 16-bit range")
    Image.fromarray(m.labels.astype(np.uint16)).save(path, format="PNG")
    sidecar = Path(sidecar) if sidecar is not None else path.with_suffix(".json")
    sidecar.write_text(json.dumps({"classes": {str(k): v for k, v in m.classes.items()}}, indent=2))


def load_raw_grid(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a raw float32-LE grid described by its JSON sidecar.

    Returns (array, sidecar dict); shape (H, W) for single-channel data,
    (C, H, W) when the sidecar declares ``channels`` > 1.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise FileNotFoundError(f"raw-grid sidecar not found: {sidecar}")
    meta = json.loads(sidecar.read_text())
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, ValueError) as exc:
        raise ImageFormatError(f"malformed raw-grid sidecar {sidecar}: {exc}") from exc
    channels = int(meta.get("channels", 1))
    payload = path.read_bytes()
    expected = width * height * channels * 4
    if len(payload) != expected:
        raise ImageFormatError(
            f"{path}: payload is {len(payload)} bytes, sidecar implies {expected}"
        )
    grid = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if channels == 1:
        return grid.reshape(height, width), meta
    return grid.reshape(channels, height, width), meta


def save_raw_grid(
    grid: np.ndarray, path: str | Path, word: str | None = None, **extra
) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        channels, (height, width) = 1, grid.shape
    elif grid.ndim == 3:
        channels, height, width = grid.shape
    else:
        raise ImageFormatError(f"raw grid must be 2-D or 3-D, got shape {grid.shape}")
    path = Path(path)
    path.write_bytes(grid.astype("<f4").tobytes())
    meta = {"width": width, "height": height, "channels": channels, "word": word}
    meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_feature_stack(path: str | Path, level: int = 0) -> FeatureStack:
    grid, _ = load_raw_grid(path)
    if grid.ndim == 2:
        grid = grid[None, :, :]
    return FeatureStack(grid, level=level)


def save_feature_stack(fs: FeatureStack, path: str | Path) -> None:
    save_raw_grid(fs.channels, path, level=fs.level)
