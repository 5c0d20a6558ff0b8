"""Procedural scenes: patterned rectangles on a zero background.

Each object is an axis-aligned rectangle whose fill pattern and intensity
encode its class: pattern cycles through solid / horizontal stripes /
checkerboard, and every third class dims the intensity level, so any
class count stays visually distinguishable. Classification is therefore
solvable from pixels inside the box, while exact localization needs the
box extremities. That tension is what the attention comparison is about.

Placement draws sizes and positions uniformly in pixels and retries until
the new rectangle overlaps every accepted one with IoU <= 0.3 (so no
object is mostly hidden by a later one). Ground-truth sizes shrink by a
relative 1e-6 to stay strictly inside the open unit interval that the
box head's sigmoid can reach.
"""

import numpy as np

from . import _kernels
from .matching import GroundTruthSet
from .rng import Rng

EDGE_SHRINK = 1e-6
MAX_OVERLAP_IOU = 0.3
PLACEMENT_RETRIES = 200


class SceneError(RuntimeError):
    pass


def class_pattern(class_index):
    """(pattern id, intensity level) for a class."""
    return class_index % 3, 1.0 / (1.0 + class_index // 3)


def generate_scene(config, seed):
    """One (image, GroundTruthSet) pair, fully determined by the seed."""
    rng = Rng(seed)
    size = config.image_size
    min_px = max(2, round(config.min_extent * size))
    max_px = round(config.max_extent * size)
    count = rng.integers(config.min_objects, config.max_objects + 1)

    rects = []
    classes = []
    for _ in range(count):
        placed = False
        for _ in range(PLACEMENT_RETRIES):
            w = rng.integers(min_px, max_px + 1)
            h = rng.integers(min_px, max_px + 1)
            x0 = rng.integers(0, size - w + 1)
            y0 = rng.integers(0, size - h + 1)
            candidate = _norm_box(x0, y0, w, h, size, shrink=0.0)
            if all(
                _kernels.iou_matrix(candidate[None, :], r[None, :])[0, 0] <= MAX_OVERLAP_IOU
                for r in rects
            ):
                rects.append(candidate)
                classes.append(rng.integers(0, config.num_classes))
                placed = True
                break
        if not placed:
            raise SceneError(
                f"could not place object {len(rects) + 1} of {count} after "
                f"{PLACEMENT_RETRIES} retries (seed {seed})"
            )

    image = np.zeros((size, size))
    x0s, y0s, ws, hs, patterns, levels = [], [], [], [], [], []
    for box, cls in zip(rects, classes):
        x0 = int(round((box[0] - box[2] / 2) * size))
        y0 = int(round((box[1] - box[3] / 2) * size))
        pat, level = class_pattern(cls)
        x0s.append(x0)
        y0s.append(y0)
        ws.append(int(round(box[2] * size)))
        hs.append(int(round(box[3] * size)))
        patterns.append(pat)
        levels.append(level)
    if rects:
        _kernels.rasterize_boxes(
            image,
            np.array(x0s),
            np.array(y0s),
            np.array(ws),
            np.array(hs),
            np.array(patterns),
            np.array(levels),
        )

    truth_boxes = np.array(
        [[b[0], b[1], b[2] * (1.0 - EDGE_SHRINK), b[3] * (1.0 - EDGE_SHRINK)] for b in rects]
    ).reshape(-1, 4)
    return image, GroundTruthSet(truth_boxes, np.array(classes, dtype=np.int64))


def _norm_box(x0, y0, w, h, size, shrink):
    return np.array(
        [
            (x0 + w / 2.0) / size,
            (y0 + h / 2.0) / size,
            (w / size) * (1.0 - shrink),
            (h / size) * (1.0 - shrink),
        ]
    )
