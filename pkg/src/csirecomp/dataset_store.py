"""Bit-exact dataset and checkpoint persistence.

A dataset directory holds a JSON manifest plus flat little-endian binary
arrays:

* ``csi.bin``    complex64, layout [sample][k][n][m] (interleaved 32-bit
  real/imag floats)
* ``bfm.bin``    complex64, layout [sample][k][m][s_col]
* ``images.bin`` uint8, layout [sample][h][w][3]

The manifest records shapes, the generator config and its hash, per-file
byte lengths and SHA-256 checksums, and (once known) split indices and
normalization statistics. The manifest is written last so an interrupted
write never leaves a loadable directory, and no array is used before its
checksum verifies. Checkpoints use the same idea: a JSON manifest plus one
flat blob holding every tensor of a model state.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from . import bfm_core
from .sim_scene import CsiSample, SceneConfig

SCHEMA_VERSION = 1

CSI_DTYPE = np.dtype("<c8")
IMG_DTYPE = np.dtype("u1")


class DatasetError(Exception):
    """Base class for dataset-directory problems."""


class MissingFileError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class SchemaVersionError(DatasetError):
    pass


class LengthError(DatasetError):
    pass


class ModalityError(DatasetError):
    """A requested modality (e.g. images) is absent from the dataset."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: SceneConfig) -> str:
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _atomic_write_json(path: Path, data: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True))
    tmp.rename(path)


@dataclasses.dataclass
class DatasetManifest:
    """Typed view of the on-disk manifest."""

    schema_version: int
    k: int
    m: int
    n: int
    s_cols: int
    image_height: int
    image_width: int
    sample_count: int
    files: Dict[str, dict]
    config: Optional[dict] = None
    config_hash: Optional[str] = None
    rng_seed: Optional[int] = None
    images_absent: bool = False
    split: Optional[dict] = None
    norm_stats: Optional[dict] = None

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported schema version {d.get('schema_version')}, expected {SCHEMA_VERSION}"
            )
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{key: d[key] for key in d if key in known})


def manifest_path(directory) -> Path:
    return Path(directory) / "manifest.json"


def write_dataset(
    directory,
    pairs: Iterable[Tuple["SceneState", CsiSample]],
    config: SceneConfig,
    compute_bfm: bool = True,
) -> DatasetManifest:
    """Stream (state, csi) pairs into a dataset directory.

    Arrays are written incrementally; the manifest lands last, so a partial
    write is never mistaken for a valid dataset.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csi_path = directory / "csi.bin"
    bfm_path = directory / "bfm.bin"
    img_path = directory / "images.bin"

    s_cols = min(config.n_tx, config.n_rx)
    count = 0
    with open(csi_path, "wb") as f_csi, open(bfm_path, "wb") as f_bfm, open(
        img_path, "wb"
    ) as f_img:
        for state, csi in pairs:
            f_csi.write(np.ascontiguousarray(csi.csi, dtype=CSI_DTYPE).tobytes())
            if compute_bfm:
                bfm = bfm_core.emulate_bfm(csi)
                f_bfm.write(np.ascontiguousarray(bfm.bfm, dtype=CSI_DTYPE).tobytes())
            f_img.write(np.ascontiguousarray(state.image, dtype=IMG_DTYPE).tobytes())
            count += 1

    if not compute_bfm:
        bfm_path.unlink()

    files = {}
    for path in [csi_path, img_path] + ([bfm_path] if compute_bfm else []):
        files[path.name] = {"bytes": path.stat().st_size, "sha256": _sha256(path)}

    manifest = DatasetManifest(
        schema_version=SCHEMA_VERSION,
        k=config.n_subcarriers,
        m=config.n_tx,
        n=config.n_rx,
        s_cols=s_cols,
        image_height=config.image_height,
        image_width=config.image_width,
        sample_count=count,
        files=files,
        config=dataclasses.asdict(config),
        config_hash=config_hash(config),
        rng_seed=config.rng_seed,
        images_absent=False,
    )
    _atomic_write_json(manifest_path(directory), manifest.to_json_dict())
    return manifest


def read_manifest(directory) -> DatasetManifest:
    path = manifest_path(directory)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    return DatasetManifest.from_json_dict(json.loads(path.read_text()))


def _verified_bytes(directory: Path, name: str, entry: dict) -> bytes:
    path = directory / name
    if not path.exists():
        raise MissingFileError(f"dataset file missing: {path}")
    size = path.stat().st_size
    if size != entry["bytes"]:
        raise LengthError(
            f"{name}: manifest declares {entry['bytes']} bytes, file has {size}"
        )
    digest = _sha256(path)
    if digest != entry["sha256"]:
        raise ChecksumError(f"{name}: checksum mismatch")
    return path.read_bytes()


@dataclasses.dataclass
class DatasetBundle:
    """In-memory dataset: raw arrays plus manifest."""

    manifest: DatasetManifest
    csi: np.ndarray                    # (n, K, N, M) complex64
    bfm: Optional[np.ndarray]          # (n, K, M, S_cols) complex64
    images: Optional[np.ndarray]       # (n, H, W, 3) uint8

    @property
    def has_images(self) -> bool:
        return self.images is not None

    def bfm_or_emulate(self) -> np.ndarray:
        """Stored feedback matrices, or emulate them from CSI on demand."""
        if self.bfm is None:
            return bfm_core.emulate_bfm_batch(self.csi)
        return self.bfm


def read_dataset(directory) -> DatasetBundle:
    """Load a dataset directory, verifying every checksum before use."""
    directory = Path(directory)
    man = read_manifest(directory)
    n, k, m, n_rx, s = man.sample_count, man.k, man.m, man.n, man.s_cols

    expected_csi = n * k * n_rx * m * CSI_DTYPE.itemsize
    if man.files["csi.bin"]["bytes"] != expected_csi:
        raise LengthError(
            f"csi.bin: manifest shapes imply {expected_csi} bytes, "
            f"registry has {man.files['csi.bin']['bytes']}"
        )
    csi = np.frombuffer(_verified_bytes(directory, "csi.bin", man.files["csi.bin"]), dtype=CSI_DTYPE)
    csi = csi.reshape(n, k, n_rx, m)

    bfm = None
    if "bfm.bin" in man.files:
        expected_bfm = n * k * m * s * CSI_DTYPE.itemsize
        if man.files["bfm.bin"]["bytes"] != expected_bfm:
            raise LengthError(
                f"bfm.bin: manifest shapes imply {expected_bfm} bytes, "
                f"registry has {man.files['bfm.bin']['bytes']}"
            )
        bfm = np.frombuffer(_verified_bytes(directory, "bfm.bin", man.files["bfm.bin"]), dtype=CSI_DTYPE)
        bfm = bfm.reshape(n, k, m, s)

    images = None
    if not man.images_absent:
        expected_img = n * man.image_height * man.image_width * 3
        if man.files["images.bin"]["bytes"] != expected_img:
            raise LengthError(
                f"images.bin: manifest shapes imply {expected_img} bytes, "
                f"registry has {man.files['images.bin']['bytes']}"
            )
        images = np.frombuffer(
            _verified_bytes(directory, "images.bin", man.files["images.bin"]), dtype=IMG_DTYPE
        ).reshape(n, man.image_height, man.image_width, 3)

    return DatasetBundle(manifest=man, csi=csi, bfm=bfm, images=images)


def update_manifest(directory, split: Optional[dict] = None, norm_stats: Optional[dict] = None) -> DatasetManifest:
    """Attach split indices and/or normalization statistics to a dataset."""
    directory = Path(directory)
    man = read_manifest(directory)
    if split is not None:
        man.split = split
    if norm_stats is not None:
        man.norm_stats = norm_stats
    _atomic_write_json(manifest_path(directory), man.to_json_dict())
    return man


def import_external_csi(
    csi_file,
    out_directory,
    k: int,
    n_rx: int,
    n_tx: int,
) -> DatasetManifest:
    """Build an images-absent dataset directory around an external csi.bin.

    The file must hold complex64 little-endian samples laid out as
    [sample][k][n][m]; the sample count is inferred from the byte length
    and must divide exactly.
    """
    csi_file = Path(csi_file)
    out_directory = Path(out_directory)
    if not csi_file.exists():
        raise MissingFileError(f"CSI file not found: {csi_file}")
    record_bytes = k * n_rx * n_tx * CSI_DTYPE.itemsize
    total = csi_file.stat().st_size
    if total == 0 or total % record_bytes != 0:
        raise LengthError(
            f"{csi_file.name}: {total} bytes is not a multiple of the "
            f"{record_bytes}-byte record implied by (K={k}, N={n_rx}, M={n_tx})"
        )
    count = total // record_bytes

    out_directory.mkdir(parents=True, exist_ok=True)
    target = out_directory / "csi.bin"
    if target.resolve() != csi_file.resolve():
        target.write_bytes(csi_file.read_bytes())

    manifest = DatasetManifest(
        schema_version=SCHEMA_VERSION,
        k=k,
        m=n_tx,
        n=n_rx,
        s_cols=min(n_tx, n_rx),
        image_height=0,
        image_width=0,
        sample_count=count,
        files={"csi.bin": {"bytes": total, "sha256": _sha256(target)}},
        config=None,
        config_hash=None,
        rng_seed=None,
        images_absent=True,
    )
    _atomic_write_json(manifest_path(out_directory), manifest.to_json_dict())
    return manifest


def materialize_bfm(directory) -> DatasetManifest:
    """Compute and store bfm.bin for a dataset that lacks it."""
    directory = Path(directory)
    bundle = read_dataset(directory)
    if bundle.bfm is not None:
        return bundle.manifest
    bfm = bfm_core.emulate_bfm_batch(bundle.csi).astype(CSI_DTYPE)
    path = directory / "bfm.bin"
    path.write_bytes(np.ascontiguousarray(bfm).tobytes())
    man = bundle.manifest
    man.files["bfm.bin"] = {"bytes": path.stat().st_size, "sha256": _sha256(path)}
    _atomic_write_json(manifest_path(directory), man.to_json_dict())
    return man


# --- checkpoints -----------------------------------------------------------

_DTYPE_TAGS = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
}


def save_checkpoint(directory, tensors: Dict[str, np.ndarray], meta: dict) -> None:
    """Persist named tensors as one flat little-endian blob plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob_path = directory / "checkpoint.bin"
    entries = []
    offset = 0
    with open(blob_path, "wb") as f:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if str(arr.dtype) not in _DTYPE_TAGS:
                raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
            raw = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[str(arr.dtype)]).tobytes()
            f.write(raw)
            entries.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": str(arr.dtype),
                    "offset": offset,
                    "bytes": len(raw),
                }
            )
            offset += len(raw)
    manifest = dict(meta)
    manifest["tensors"] = entries
    manifest["blob_bytes"] = offset
    manifest["blob_sha256"] = _sha256(blob_path)
    _atomic_write_json(directory / "checkpoint.json", manifest)


def load_checkpoint(directory) -> Tuple[Dict[str, np.ndarray], dict]:
    """Load a checkpoint, verifying the blob checksum first."""
    directory = Path(directory)
    man_path = directory / "checkpoint.json"
    blob_path = directory / "checkpoint.bin"
    if not man_path.exists() or not blob_path.exists():
        raise MissingFileError(f"checkpoint files missing under {directory}")
    manifest = json.loads(man_path.read_text())
    blob = blob_path.read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise LengthError(
            f"checkpoint.bin: manifest declares {manifest['blob_bytes']} bytes, file has {len(blob)}"
        )
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise ChecksumError("checkpoint.bin: checksum mismatch")
    tensors = {}
    for entry in manifest["tensors"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["bytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(entry["dtype"])
    return tensors, manifest
