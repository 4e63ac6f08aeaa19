"""Dataset loading: binary netpbm rasters, DRIVE-layout folders, label maps.

Images are float64 (3, H, W) in [0, 1]; masks boolean (H, W); label maps
uint8 (H, W) with ids 0=background, 1=optic disc, 2=fovea, 3=vessel.
DRIVE ships TIFF/GIF which must be converted first, e.g.:

    convert 21_training.tif 21_training.ppm
    convert 21_training_mask.gif 21_training_mask.pgm
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

LABEL_BACKGROUND = 0
LABEL_OPTIC_DISC = 1
LABEL_FOVEA = 2
LABEL_VESSEL = 3


def read_pnm(path):
    """Read a binary 8-bit PGM (P5) or PPM (P6). Returns a uint8 array of
    shape (H, W) or (H, W, 3)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if blob[:2] not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PGM/PPM file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit rasters are supported (maxval 255)")
    channels = 3 if blob[:2] == b"P6" else 1
    count = width * height * channels
    if len(blob) - pos < count:
        raise DataError(f"{path}: pixel data truncated")
    data = np.frombuffer(blob, dtype=np.uint8, count=count, offset=pos)
    if channels == 3:
        return data.reshape(height, width, 3).copy()
    return data.reshape(height, width).copy()


def write_pnm(path, arr):
    """Write a uint8 array as binary PGM (2-D) or PPM ((H, W, 3))."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 2:
        magic, h, w = b"P5", *arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic, h, w = b"P6", arr.shape[0], arr.shape[1]
    else:
        raise DataError(f"unsupported raster shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def image_from_raster(raw):
    """uint8 (H, W, 3) -> float64 (3, H, W) in [0, 1]."""
    return np.moveaxis(raw.astype(np.float64) / 255.0, 2, 0)


def raster_from_image(img):
    """float64 (3, H, W) in [0, 1] -> uint8 (H, W, 3)."""
    return np.moveaxis(np.clip(np.rint(img * 255.0), 0, 255), 0, 2).astype(np.uint8)


@dataclass
class FundusRecord:
    record_id: str
    image: np.ndarray
    mask: np.ndarray
    truth: np.ndarray | None = None

    def __post_init__(self):
        shape = self.image.shape[1:]
        if self.mask.shape != shape:
            raise DataError(
                f"record {self.record_id}: mask shape {self.mask.shape} "
                f"does not match image {shape}"
            )
        if self.truth is not None and self.truth.shape != shape:
            raise DataError(
                f"record {self.record_id}: truth shape {self.truth.shape} "
                f"does not match image {shape}"
            )


def compose_truth(vessel, od, fovea, mask=None):
    """Merge binary regions into a label map: vessel beats optic disc beats
    fovea beats background at overlaps. Outside the mask (when given)
    everything is background."""
    vessel = np.asarray(vessel, dtype=bool)
    od = np.asarray(od, dtype=bool)
    fovea = np.asarray(fovea, dtype=bool)
    truth = np.zeros(vessel.shape, dtype=np.uint8)
    truth[fovea] = LABEL_FOVEA
    truth[od] = LABEL_OPTIC_DISC
    truth[vessel] = LABEL_VESSEL
    if mask is not None:
        truth[~np.asarray(mask, dtype=bool)] = LABEL_BACKGROUND
    return truth


def _index_by_id(folder, suffixes=(".ppm", ".pgm")):
    """Map leading-integer file ids to paths, e.g. 21_training.ppm -> '21'."""
    found = {}
    for path in sorted(folder.iterdir()):
        if path.suffix.lower() not in suffixes:
            continue
        m = re.match(r"(\d+)", path.name)
        if m:
            found[m.group(1)] = path
    return found


def load_drive(root, split):
    """Load a DRIVE split (pre-converted to PPM/PGM).

    Expects root/<training|test>/{images,mask,1st_manual} and optionally an
    od_fovea/ folder with one region raster per image (1 = optic disc,
    2 = fovea). Without it, records carry vessel-only truths composed with
    empty disc/fovea regions, or no truth at all if 1st_manual is absent.
    """
    root = Path(root)
    if split not in ("train", "test"):
        raise DataError(f"split must be 'train' or 'test', got {split!r}")
    base = root / ("training" if split == "train" else "test")
    images_dir = base / "images"
    mask_dir = base / "mask"
    if not images_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"{base}: expected images/ and mask/ subfolders")
    images = _index_by_id(images_dir)
    masks = _index_by_id(mask_dir)
    manual_dir = base / "1st_manual"
    manuals = _index_by_id(manual_dir) if manual_dir.is_dir() else {}
    odf_dir = base / "od_fovea"
    od_fovea = _index_by_id(odf_dir) if odf_dir.is_dir() else {}

    records = []
    for rec_id, img_path in images.items():
        if rec_id not in masks:
            raise DataError(f"missing mask file for image id {rec_id} in {mask_dir}")
        raw = read_pnm(img_path)
        if raw.ndim != 3:
            raise DataError(f"{img_path}: expected a colour PPM")
        image = image_from_raster(raw)
        mask = read_pnm(masks[rec_id]) > 127
        truth = None
        if rec_id in manuals:
            vessel = read_pnm(manuals[rec_id]) > 127
            od = np.zeros_like(vessel)
            fovea = np.zeros_like(vessel)
            if rec_id in od_fovea:
                regions = read_pnm(od_fovea[rec_id])
                od = regions == LABEL_OPTIC_DISC
                fovea = regions == LABEL_FOVEA
            truth = compose_truth(vessel, od, fovea, mask)
        records.append(FundusRecord(rec_id, image, mask, truth))
    if not records:
        raise DataError(f"no images found in {images_dir}")
    return records


def load_labeled_dir(root):
    """Load a flat synthetic-layout dataset: root/{images,mask,truth}."""
    root = Path(root)
    for sub in ("images", "mask", "truth"):
        if not (root / sub).is_dir():
            raise DataError(f"{root}: expected an {sub}/ subfolder")
    images = _index_by_id(root / "images")
    masks = _index_by_id(root / "mask")
    truths = _index_by_id(root / "truth")
    records = []
    for rec_id, img_path in images.items():
        if rec_id not in masks:
            raise DataError(f"missing mask file for image id {rec_id}")
        if rec_id not in truths:
            raise DataError(f"missing truth file for image id {rec_id}")
        image = image_from_raster(read_pnm(img_path))
        mask = read_pnm(masks[rec_id]) > 127
        truth = read_pnm(truths[rec_id])
        if truth.max() > 3:
            raise DataError(f"{truths[rec_id]}: label ids must be in 0..3")
        records.append(FundusRecord(rec_id, image, mask, truth.astype(np.uint8)))
    if not records:
        raise DataError(f"no images found under {root}")
    return records


def load_dataset(root):
    """Auto-detect DRIVE layout (training/ and test/) vs flat labeled layout."""
    root = Path(root)
    if (root / "images").is_dir():
        return load_labeled_dir(root)
    if (root / "training").is_dir():
        return load_drive(root, "train")
    raise DataError(f"{root}: unrecognized dataset layout")
