"""Box geometry and the annotation data model.

Boxes are center based, ``(cx, cy, w, h)`` in pixels. Annotation files are
JSON documents of the form::

    {"images": [{"id": "img0", "width": 640, "height": 480,
                 "annotations": [{"class": 0, "bbox": [cx, cy, w, h]},
                                 {"class": 1, "point": [px, py]}]}]}

A box annotation may carry an optional ``"source"`` tag (``"prediction"`` or
``"st_box"``) recording where it came from.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)


class AnnotationFormatError(ValueError):
    """Raised when an annotation or predictions document does not parse.

    ``location`` is a JSON-path-like pointer to the offending field.
    """

    def __init__(self, message: str, location: str = "$"):
        super().__init__(f"{location}: {message}")
        self.location = location


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class CenterBox:
    """Axis-aligned box given by its center and size, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            _check_finite(name, getattr(self, name))
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def corners(self) -> tuple[float, float, float, float]:
        """Return ``(x1, y1, x2, y2)``."""
        hw, hh = self.w / 2.0, self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "CenterBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def moved_to(self, cx: float, cy: float) -> "CenterBox":
        return CenterBox(cx, cy, self.w, self.h)


@dataclass(frozen=True)
class PointAnnotation:
    px: float
    py: float

    def __post_init__(self):
        _check_finite("px", self.px)
        _check_finite("py", self.py)


@dataclass(frozen=True)
class Annotation:
    """A class label with exactly one of a box or a point."""

    class_id: int
    box: CenterBox | None = None
    point: PointAnnotation | None = None
    source: str | None = None

    def __post_init__(self):
        if isinstance(self.class_id, bool) or not isinstance(self.class_id, int) or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id!r}")
        if (self.box is None) == (self.point is None):
            raise ValueError("annotation needs exactly one of box or point")

    @property
    def is_box(self) -> bool:
        return self.box is not None

    @property
    def is_point(self) -> bool:
        return self.point is not None


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id!r} needs positive size")
        object.__setattr__(self, "annotations", tuple(self.annotations))

    def replace_annotations(self, annotations: Iterable[Annotation]) -> "ImageRecord":
        return ImageRecord(self.image_id, self.width, self.height, tuple(annotations))

    def out_of_bounds(self) -> list[int]:
        """Indices of annotations that stick out of the image frame."""
        bad = []
        for k, ann in enumerate(self.annotations):
            if ann.box is not None:
                x1, y1, x2, y2 = ann.box.corners()
                inside = x1 >= 0 and y1 >= 0 and x2 <= self.width and y2 <= self.height
            else:
                p = ann.point
                inside = 0 <= p.px <= self.width and 0 <= p.py <= self.height
            if not inside:
                bad.append(k)
        return bad


Dataset = Sequence[ImageRecord]


def iou(a: CenterBox, b: CenterBox) -> float:
    """Intersection over union of two boxes. Touching edges give 0."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def concentric_iou(w1: float, h1: float, w2: float, h2: float) -> float:
    """IOU of two boxes sharing the same center."""
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def iter_annotations(images: Dataset) -> Iterator[tuple[ImageRecord, int, Annotation]]:
    for image in images:
        for k, ann in enumerate(image.annotations):
            yield image, k, ann


def box_sizes(images: Dataset, class_id: int) -> list[tuple[float, float]]:
    """All ``(w, h)`` of box annotations of one class, in dataset order."""
    return [
        (ann.box.w, ann.box.h)
        for _, _, ann in iter_annotations(images)
        if ann.class_id == class_id and ann.box is not None
    ]


def class_ids(images: Dataset, boxes_only: bool = False) -> list[int]:
    ids = {
        ann.class_id
        for _, _, ann in iter_annotations(images)
        if not boxes_only or ann.box is not None
    }
    return sorted(ids)


# -- JSON (de)serialization ------------------------------------------------


def _number(value: Any, location: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise AnnotationFormatError(f"expected a number, got {value!r}", location)
    value = float(value)
    if not math.isfinite(value):
        raise AnnotationFormatError("number must be finite", location)
    return value


def _numbers(value: Any, n: int, location: str) -> list[float]:
    if not isinstance(value, list) or len(value) != n:
        raise AnnotationFormatError(f"expected a list of {n} numbers", location)
    return [_number(v, f"{location}[{i}]") for i, v in enumerate(value)]


def _annotation_from_json(obj: Any, location: str) -> Annotation:
    if not isinstance(obj, dict):
        raise AnnotationFormatError("annotation must be an object", location)
    cls = obj.get("class")
    if isinstance(cls, bool) or not isinstance(cls, int) or cls < 0:
        raise AnnotationFormatError("'class' must be a non-negative integer", f"{location}.class")
    has_box, has_point = "bbox" in obj, "point" in obj
    if has_box == has_point:
        raise AnnotationFormatError("need exactly one of 'bbox' or 'point'", location)
    source = obj.get("source")
    if source is not None and not isinstance(source, str):
        raise AnnotationFormatError("'source' must be a string", f"{location}.source")
    try:
        if has_box:
            box = CenterBox(*_numbers(obj["bbox"], 4, f"{location}.bbox"))
            return Annotation(cls, box=box, source=source)
        point = PointAnnotation(*_numbers(obj["point"], 2, f"{location}.point"))
        return Annotation(cls, point=point, source=source)
    except AnnotationFormatError:
        raise
    except ValueError as exc:
        raise AnnotationFormatError(str(exc), location) from exc


def _positive_int(value: Any, location: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise AnnotationFormatError("expected a positive integer", location)
    return value


def dataset_from_json(doc: Any) -> list[ImageRecord]:
    """Build image records from a parsed annotation document."""
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise AnnotationFormatError("document must be an object with an 'images' list")
    images = []
    seen = set()
    for i, img in enumerate(doc["images"]):
        loc = f"$.images[{i}]"
        if not isinstance(img, dict):
            raise AnnotationFormatError("image entry must be an object", loc)
        image_id = img.get("id")
        if not isinstance(image_id, str):
            raise AnnotationFormatError("'id' must be a string", f"{loc}.id")
        if image_id in seen:
            raise AnnotationFormatError(f"duplicate image id {image_id!r}", f"{loc}.id")
        seen.add(image_id)
        width = _positive_int(img.get("width"), f"{loc}.width")
        height = _positive_int(img.get("height"), f"{loc}.height")
        anns = img.get("annotations", [])
        if not isinstance(anns, list):
            raise AnnotationFormatError("'annotations' must be a list", f"{loc}.annotations")
        record = ImageRecord(
            image_id,
            width,
            height,
            tuple(_annotation_from_json(a, f"{loc}.annotations[{k}]") for k, a in enumerate(anns)),
        )
        outside = record.out_of_bounds()
        if outside:
            logger.warning("image %s: annotations %s extend beyond the image frame", image_id, outside)
        images.append(record)
    return images


def annotation_to_json(ann: Annotation) -> dict:
    out: dict[str, Any] = {"class": ann.class_id}
    if ann.box is not None:
        b = ann.box
        out["bbox"] = [b.cx, b.cy, b.w, b.h]
    else:
        out["point"] = [ann.point.px, ann.point.py]
    if ann.source is not None:
        out["source"] = ann.source
    return out


def dataset_to_json(images: Dataset) -> dict:
    return {
        "images": [
            {
                "id": img.image_id,
                "width": img.width,
                "height": img.height,
                "annotations": [annotation_to_json(a) for a in img.annotations],
            }
            for img in images
        ]
    }


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(
            f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})"
        ) from exc


def load_dataset(path: str | os.PathLike) -> list[ImageRecord]:
    return dataset_from_json(read_json(path))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_dataset(path: str | os.PathLike, images: Dataset) -> None:
    atomic_write_text(path, dumps_json(dataset_to_json(images)))
