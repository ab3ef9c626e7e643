"""Model persistence: JSON manifest plus a binary coordinate sidecar.

The sidecar holds all float arrays as little-endian 64-bit values in
row-major order, concatenated; the manifest records each array's name,
shape and byte offset alongside dimensions, singular values, entity
ids, orientation and fit metadata. Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ca import CAModel
from .errors import InvalidParameter

FORMAT_VERSION = 1

_ARRAY_FIELDS = ("singular_values", "row_masses", "col_masses",
                 "row_coords", "col_coords")


def save_model(model: CAModel, json_path) -> Path:
    """Write ``model`` to ``json_path`` plus a ``.bin`` sidecar next to it."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = json_path.with_suffix(".bin")
    layout = []
    offset = 0
    with open(sidecar, "wb") as fh:
        for name in _ARRAY_FIELDS:
            arr = np.ascontiguousarray(getattr(model, name), dtype="<f8")
            fh.write(arr.tobytes())
            layout.append({
                "name": name,
                "dtype": "<f8",
                "shape": list(arr.shape),
                "offset": offset,
            })
            offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "k": model.k,
        "shape": list(model.shape),
        "singular_values": model.singular_values.tolist(),
        "orientation": model.orientation,
        "anchor_note": model.anchor_note,
        "fit_meta": model.fit_meta,
        "sidecar": sidecar.name,
        "sidecar_bytes": offset,
        "arrays": layout,
        "row_ids": model.row_ids,
        "col_ids": model.col_ids,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return json_path


def load_model(json_path) -> CAModel:
    json_path = Path(json_path)
    with open(json_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise InvalidParameter(
            f"{json_path}: unsupported model format "
            f"{manifest.get('format_version')!r}")
    sidecar = json_path.parent / manifest["sidecar"]
    blob = sidecar.read_bytes()
    if len(blob) != manifest["sidecar_bytes"]:
        raise InvalidParameter(f"{sidecar}: sidecar size mismatch")
    arrays = {}
    for spec in manifest["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=spec["dtype"], count=count,
                            offset=spec["offset"])
        arrays[spec["name"]] = arr.reshape(shape).copy()
    return CAModel(
        singular_values=arrays["singular_values"],
        row_coords=arrays["row_coords"],
        col_coords=arrays["col_coords"],
        row_masses=arrays["row_masses"],
        col_masses=arrays["col_masses"],
        row_ids=list(manifest["row_ids"]),
        col_ids=list(manifest["col_ids"]),
        orientation=[int(s) for s in manifest["orientation"]],
        anchor_note=manifest["anchor_note"],
        fit_meta=manifest["fit_meta"],
    )
