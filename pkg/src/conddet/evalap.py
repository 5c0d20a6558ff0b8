"""Average-precision evaluation over synthetic scenes.

Detections are ranked by class score; at each IoU threshold they greedily
claim the best-overlapping unmatched ground truth of their class. AP per
class is the mean of interpolated precision over 101 evenly spaced recall
points, averaged over classes that have at least one ground-truth object.
``ap50`` is the IoU 0.5 figure, ``ap`` the mean over 0.50:0.05:0.95.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

IOU_THRESHOLDS = np.arange(0.50, 0.96, 0.05)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class Detection:
    scene: int
    class_index: int
    score: float
    box: np.ndarray  # (4,) cxcywh


def detections_from_outputs(scene_index, outputs):
    """All N*C scored boxes from the final decoder layer of one forward."""
    logits = outputs.logits[-1].data
    boxes = outputs.boxes[-1].data
    scores = 1.0 / (1.0 + np.exp(-logits))
    out = []
    for q in range(logits.shape[0]):
        for c in range(logits.shape[1]):
            out.append(Detection(scene_index, c, float(scores[q, c]), boxes[q].copy()))
    return out


def _class_ap(detections, gt_by_scene, total_gt, threshold):
    """AP of one class at one IoU threshold via the 101-point interpolation."""
    if total_gt == 0:
        return None
    if not detections:
        return 0.0
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, detections[i].scene, i))
    matched = {scene: np.zeros(len(boxes), dtype=bool) for scene, boxes in gt_by_scene.items()}
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = detections[i]
        boxes = gt_by_scene.get(det.scene)
        if boxes is None or len(boxes) == 0:
            continue
        ious = _kernels.iou_matrix(det.box[None, :], boxes)[0]
        ious[matched[det.scene]] = -1.0
        best = int(np.argmax(ious))
        if ious[best] >= threshold:
            matched[det.scene][best] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / (np.arange(len(order)) + 1.0)
    recall = cum_tp / total_gt
    interp = np.zeros(RECALL_POINTS.size)
    for k, r in enumerate(RECALL_POINTS):
        mask = recall >= r - 1e-12
        interp[k] = precision[mask].max() if mask.any() else 0.0
    return float(interp.mean())


def average_precision(detections, truths, num_classes, thresholds=IOU_THRESHOLDS):
    """Mean AP per threshold over classes with ground truth.

    detections: list of Detection. truths: list of GroundTruthSet, one per
    scene, indexed by Detection.scene. Returns (per-threshold list, ap50).
    """
    if not truths:
        raise ValueError("evaluation needs at least one scene")
    per_threshold = []
    for thr in thresholds:
        class_aps = []
        for c in range(num_classes):
            dets_c = [d for d in detections if d.class_index == c]
            gt_by_scene = {}
            total = 0
            for s, truth in enumerate(truths):
                sel = truth.classes == c
                gt_by_scene[s] = truth.boxes[sel]
                total += int(sel.sum())
            ap = _class_ap(dets_c, gt_by_scene, total, thr)
            if ap is not None:
                class_aps.append(ap)
        per_threshold.append(float(np.mean(class_aps)) if class_aps else 0.0)
    return per_threshold


def evaluate_ap(model, scenes):
    """{"ap50", "ap"} over (image, GroundTruthSet) pairs."""
    detections = []
    truths = []
    for idx, (image, truth) in enumerate(scenes):
        outputs = model.forward(image)
        detections.extend(detections_from_outputs(idx, outputs))
        truths.append(truth)
    per_threshold = average_precision(detections, truths, model.cfg.scene.num_classes)
    return {"ap50": per_threshold[0], "ap": float(np.mean(per_threshold))}
