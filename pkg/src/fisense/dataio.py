"""On-disk formats: IDX image/label pairs, model documents, record CSVs.

IDX follows the classic big-endian layout (magic 2051 for uint8 image
tensors, 2049 for label vectors); pixels map to [0, 1] by dividing by 255.
Models serialize to a versioned JSON document whose floats round-trip
bit-exactly (shortest-repr encoding on write, exact binary64 parse on
read). Record CSVs have a fixed header and repr-precision decimals so
identical runs produce identical bytes.
"""

import csv
import json
import struct

import numpy as np

from .classifier import Activation, ClassifierModel, LabeledDataset, Layer
from .influence import InfluenceRecord

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
MODEL_FORMAT_VERSION = 1
RECORD_FIELDS = (
    "sample_id",
    "target",
    "fi",
    "jacobian_norm",
    "cook_max",
    "y_true",
    "y_pred",
    "p_pred",
    "residual_ratio",
)


# ==================== idx ====================


def read_idx(images_path, labels_path):
    """Load an IDX image/label file pair into a LabeledDataset."""
    with open(images_path, "rb") as f:
        head = f.read(16)
        if len(head) < 16:
            raise ValueError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(
                f"{images_path}: bad image magic {magic}, expected {IDX_IMAGE_MAGIC}"
            )
        body = f.read()
    expected = count * rows * cols
    if len(body) != expected:
        raise ValueError(
            f"{images_path}: truncated or oversized payload "
            f"({len(body)} bytes, expected {expected})"
        )
    images = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        head = f.read(8)
        if len(head) < 8:
            raise ValueError(f"{labels_path}: truncated IDX header")
        magic, label_count = struct.unpack(">II", head)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(
                f"{labels_path}: bad label magic {magic}, expected {IDX_LABEL_MAGIC}"
            )
        label_body = f.read()
    if len(label_body) != label_count:
        raise ValueError(f"{labels_path}: truncated or oversized payload")
    if label_count != count:
        raise ValueError(
            f"image/label count mismatch: {count} images vs {label_count} labels"
        )
    labels = np.frombuffer(label_body, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(
        images.reshape(count, rows * cols), labels, image_shape=(rows, cols)
    )


def write_idx(dataset, images_path, labels_path):
    """Write a dataset as an IDX pair; pixels quantize to round(255 * v)."""
    if dataset.image_shape is None or len(dataset.image_shape) != 2:
        raise ValueError("write_idx needs a 2-d image_shape (rows, cols)")
    rows, cols = dataset.image_shape
    n = len(dataset)
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    if np.any(dataset.labels > 255):
        raise ValueError("IDX labels are single bytes; labels exceed 255")
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# ==================== model documents ====================


def save_model(model, path):
    doc = {
        "format": "fisense-model",
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": [model.input_dim] + [l.weight.shape[0] for l in model.layers],
        "layers": [
            {
                "activation": l.activation.value,
                "weight": l.weight.tolist(),
                "bias": l.bias.tolist(),
            }
            for l in model.layers
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path):
    """Parse a model document; version and activation names are validated
    before any layer is constructed."""
    with open(path) as f:
        doc = json.load(f)  # malformed text raises a parse error here
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(
            f"model format version {version} unsupported; this build reads "
            f"version {MODEL_FORMAT_VERSION}"
        )
    layers = []
    for i, spec in enumerate(doc.get("layers", [])):
        name = spec.get("activation")
        try:
            act = Activation(name)
        except ValueError:
            raise ValueError(f"layer {i}: unknown activation {name!r}") from None
        layers.append(
            Layer(np.array(spec["weight"], dtype=np.float64),
                  np.array(spec["bias"], dtype=np.float64), act)
        )
    if not layers:
        raise ValueError(f"{path}: model document contains no layers")
    return ClassifierModel(layers)


# ==================== record csvs ====================


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(records, path):
    """Fixed-header CSV, repr-precision floats, empty cells for missing
    measures; byte-deterministic for identical record lists."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow(
                [
                    _cell(r.sample_id),
                    _cell(r.target),
                    _cell(r.fi),
                    _cell(r.jacobian_norm),
                    _cell(r.cook_max),
                    _cell(r.y_true),
                    _cell(r.y_pred),
                    _cell(r.p_pred),
                    _cell(r.residual_ratio),
                ]
            )


def read_records(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(RECORD_FIELDS):
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            if len(row) != len(RECORD_FIELDS):
                raise ValueError(f"{path}: malformed row {row}")
            sid, target, fi_s, jac_s, cook_s, yt, yp, pp, rr = row
            out.append(
                InfluenceRecord(
                    sample_id=int(sid),
                    target=target,
                    fi=float(fi_s) if fi_s else None,
                    jacobian_norm=float(jac_s) if jac_s else None,
                    cook_max=float(cook_s) if cook_s else None,
                    y_true=int(yt) if yt else None,
                    y_pred=int(yp),
                    p_pred=float(pp),
                    residual_ratio=float(rr),
                )
            )
    return out


def write_grid_csv(grid, path):
    """2-d array as bare CSV rows with repr-precision decimals."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("grid must be 2-d")
    with open(path, "w") as f:
        for row in grid:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def write_table(path, header, rows):
    """Small headed CSV; cells are written as given (pre-format floats
    with repr for byte-stable output)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
