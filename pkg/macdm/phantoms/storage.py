from __future__ import annotations

import io
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import ValidationError

from macdm.core.exceptions import DatasetError
from macdm.core.hashing import sha256_bytes, sha256_file
from macdm.schemas.dataset import DatasetManifest, RecordEntry

from .triplet import Corpus, LabeledTriplet

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SUBDIRS = ("images", "bone", "lesion")


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def encode_image(image: np.ndarray) -> np.ndarray:
    """[0, 1] float -> uint8 by linear scaling and rounding."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_mask(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) > 0).astype(np.uint8) * 255


def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, array.astype(np.float32), allow_pickle=False)
    return buf.getvalue()


def _record_files(triplet: LabeledTriplet, entry: RecordEntry, lossless: bool) -> Dict[str, tuple]:
    files = {
        "image": (entry.image, _png_bytes(encode_image(triplet.image))),
        "bone": (entry.bone, _png_bytes(encode_mask(triplet.bone_mask))),
        "lesion": (entry.lesion, _png_bytes(encode_mask(triplet.lesion_mask))),
    }
    if lossless:
        files["float_image"] = (f"float/{triplet.id}.npy", _npy_bytes(triplet.image))
    return files


def atomic_directory(target: Path, fill: Callable[[Path], None], overwrite: bool = False) -> Path:
    """
    Populate a sibling temp directory, then rename it onto `target`.

    Readers never observe a half-written directory; a failure leaves `target` untouched.
    """
    target = Path(target)
    if target.exists() and not overwrite:
        raise DatasetError(f"output directory {target} already exists")
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}."))
    try:
        fill(staging)
        if target.exists():
            retired = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}.old."))
            os.replace(target, retired / target.name)
            os.replace(staging, target)
            shutil.rmtree(retired, ignore_errors=True)
        else:
            os.replace(staging, target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return target


def save_dataset(
    corpus: Corpus,
    directory: Path,
    lossless: bool = False,
    overwrite: bool = False,
    extra_files: Optional[Dict[str, bytes]] = None,
) -> DatasetManifest:
    """
    Write PNGs plus manifest.json with per-file sha256; returns the written manifest.

    `extra_files` (relative name -> bytes) land in the same atomic rename, e.g. sampler sidecars.
    """
    written: Dict[str, RecordEntry] = {}

    def fill(root: Path) -> None:
        for sub in SUBDIRS + (("float",) if lossless else ()):
            (root / sub).mkdir()
        for triplet, entry in zip(corpus.triplets, corpus.manifest.records):
            checksums = {}
            files = _record_files(triplet, entry, lossless)
            for key, (relpath, payload) in files.items():
                (root / relpath).write_bytes(payload)
                checksums[key] = sha256_bytes(payload)
            written[entry.id] = entry.model_copy(
                update={
                    "checksums": checksums,
                    "float_image": files["float_image"][0] if lossless else None,
                }
            )
        manifest = corpus.manifest.model_copy(
            update={"records": [written[e.id] for e in corpus.manifest.records]}
        )
        (root / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        for name, payload in (extra_files or {}).items():
            (root / name).write_bytes(payload)

    atomic_directory(Path(directory), fill, overwrite=overwrite)
    logger.info("wrote %d records to %s", len(corpus), directory)
    return read_manifest(Path(directory))


def read_manifest(directory: Path) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no {MANIFEST_NAME} in {directory}")
    try:
        return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc


def _read_checked(root: Path, entry: RecordEntry, key: str, relpath: str, verify: bool) -> Path:
    path = root / relpath
    if not path.exists():
        raise DatasetError(f"missing {key} file {relpath}", entry.id)
    if verify:
        expected = entry.checksums.get(key)
        if expected is None:
            raise DatasetError(f"no checksum recorded for {key}", entry.id)
        if sha256_file(path) != expected:
            raise DatasetError(f"checksum mismatch for {relpath}", entry.id)
    return path


def _decode_png(path: Path, record_id: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode {path.name}: {exc}", record_id) from exc


def load_dataset(directory: Path, verify: bool = True) -> Corpus:
    """Decode a dataset directory; any missing or corrupt file names its record id."""
    root = Path(directory)
    manifest = read_manifest(root)
    triplets = []
    for entry in manifest.records:
        image_path = _read_checked(root, entry, "image", entry.image, verify)
        bone_path = _read_checked(root, entry, "bone", entry.bone, verify)
        lesion_path = _read_checked(root, entry, "lesion", entry.lesion, verify)
        if entry.float_image is not None:
            float_path = _read_checked(root, entry, "float_image", entry.float_image, verify)
            image = np.load(float_path, allow_pickle=False).astype(np.float32)
        else:
            image = _decode_png(image_path, entry.id).astype(np.float32) / 255.0
        bone = _decode_png(bone_path, entry.id) > 127
        lesion = _decode_png(lesion_path, entry.id) > 127
        if image.shape != (manifest.resolution, manifest.resolution):
            raise DatasetError(
                f"resolution {image.shape} differs from manifest {manifest.resolution}", entry.id
            )
        triplets.append(
            LabeledTriplet(
                id=entry.id,
                image=image,
                bone_mask=bone,
                lesion_mask=lesion,
                label=entry.label,
                provenance=entry.provenance,
                source_id=entry.source_id,
            )
        )
    logger.debug("loaded %d records from %s", len(triplets), root)
    return Corpus(manifest, triplets)


def manifest_hash(directory: Path) -> str:
    """sha256 of a dataset's manifest.json; the manifest pins every file checksum."""
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no {MANIFEST_NAME} in {directory}")
    return sha256_file(path)
