"""Training loop, metrics/checkpoint output, and the convergence
comparison between the two cross-attention variants.

Determinism contract: (seed, config) fully determines the run. The scene
for iteration t comes from a seed derived from (config seed, "scene", t),
so resuming from a checkpoint regenerates exactly the scenes a straight
run would have seen; no RNG state needs saving. The learning-rate drop is
applied statelessly per iteration for the same reason.

The metrics CSV contains only run-determined columns; wall-clock time is
kept on the in-memory records (and the log line) but never written to the
CSV, which must be byte-identical across reruns.
"""

import dataclasses
import os
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import decode_text, encode_text, load_checkpoint, save_checkpoint
from .config import ConfigError, config_from_json
from .evalap import evaluate_ap
from .matching import LossWeights, set_loss
from .model import DetectionModel
from .optim import AdamW
from .rng import derive_seed
from .scenes import generate_scene
from .tensor import NonFiniteError

METRICS_HEADER = "iteration,total_loss,class_loss,l1_loss,giou_loss,ap50,ap"


class TrainAbort(RuntimeError):
    pass


@dataclass
class MetricsRecord:
    iteration: int
    total_loss: float
    class_loss: float
    l1_loss: float
    giou_loss: float
    ap50: float = None
    ap: float = None
    wall_clock: float = 0.0

    def csv_row(self):
        ap50 = "" if self.ap50 is None else repr(self.ap50)
        ap = "" if self.ap is None else repr(self.ap)
        return (
            f"{self.iteration},{self.total_loss!r},{self.class_loss!r},"
            f"{self.l1_loss!r},{self.giou_loss!r},{ap50},{ap}"
        )


@dataclass
class TrainResult:
    model: DetectionModel
    records: list
    losses: list  # total loss at every iteration, logged or not
    metrics: dict  # final AP figures when eval_scenes > 0, else {}
    checkpoint_path: str = None
    metrics_path: str = None


def loss_weights(cfg):
    alpha, gamma = cfg.effective_focal()
    return LossWeights(
        w_class=cfg.w_class,
        w_l1=cfg.w_l1,
        w_giou=cfg.w_giou,
        focal_alpha=alpha,
        focal_gamma=gamma,
    )


def evaluation_scenes(cfg):
    return [
        generate_scene(cfg.scene, derive_seed(cfg.seed, "eval", i))
        for i in range(cfg.eval_scenes)
    ]


def build_optimizer(model, cfg):
    return AdamW(
        model.parameter_groups(cfg.lr_transformer, cfg.lr_reference),
        weight_decay=cfg.weight_decay,
    )


def save_run_checkpoint(path, model, opt, cfg, iteration):
    arrays = model.export_arrays()
    arrays.update(opt.state_arrays())
    arrays["meta.iteration"] = np.array(float(iteration))
    arrays["meta.config_json"] = encode_text(cfg.to_json())
    save_checkpoint(path, arrays)


def load_run_checkpoint(path):
    """(arrays, embedded TrainConfig, iteration) from a checkpoint file."""
    arrays = load_checkpoint(path)
    if "meta.config_json" not in arrays or "meta.iteration" not in arrays:
        raise ConfigError(f"{path}: checkpoint lacks embedded config metadata")
    cfg = config_from_json(decode_text(arrays["meta.config_json"]))
    return arrays, cfg, int(arrays["meta.iteration"])


def model_from_checkpoint(path):
    arrays, cfg, iteration = load_run_checkpoint(path)
    model = DetectionModel(cfg)
    model.load_arrays(arrays)
    return model, cfg, iteration


def _check_resume_config(cfg, ckpt_cfg):
    a = dataclasses.asdict(cfg)
    b = dataclasses.asdict(ckpt_cfg)
    a.pop("iterations")
    b.pop("iterations")
    if a != b:
        diff = [k for k in a if a[k] != b[k]]
        raise ConfigError(f"resume config differs from checkpoint config in {diff}")


def train(cfg, out_dir=None, resume_from=None, log=None, checkpoint_at=None):
    """Run the training loop; returns a TrainResult.

    out_dir, when given, receives metrics.csv and checkpoint.cdtr.
    resume_from continues bit-exactly from a checkpoint written by a run
    with the same config (iteration count may differ). checkpoint_at=m
    additionally snapshots checkpoint_iter<m>.cdtr once m iterations have
    completed; resuming from it replays the rest of the run exactly
    because the schedule is stateless and scene seeds are per-iteration.
    """
    cfg.validate()
    if checkpoint_at is not None and not 0 < checkpoint_at <= cfg.iterations:
        raise ConfigError("checkpoint_at must lie in (0, iterations]")
    weights = loss_weights(cfg)
    model = DetectionModel(cfg)
    opt = build_optimizer(model, cfg)
    start = 0
    if resume_from is not None:
        arrays, ckpt_cfg, start = load_run_checkpoint(resume_from)
        _check_resume_config(cfg, ckpt_cfg)
        model.load_arrays(arrays)
        opt.load_state(arrays)
    base_lr = {g["name"]: g["lr"] for g in opt.groups}

    records = []
    losses = []
    t0 = time.monotonic()
    for it in range(start, cfg.iterations):
        factor = 0.1 if it >= cfg.lr_drop_iteration else 1.0
        for group in opt.groups:
            group["lr"] = base_lr[group["name"]] * factor
        image, truth = generate_scene(cfg.scene, derive_seed(cfg.seed, "scene", it))
        try:
            outputs = model.forward(image)
            total, parts = set_loss(outputs, truth, weights)
        except NonFiniteError as e:
            raise TrainAbort(f"non-finite loss at iteration {it}: {e}") from e
        value = total.item()
        losses.append(value)
        opt.zero_grad()
        total.backward()
        try:
            opt.step()
        except NonFiniteError as e:
            raise TrainAbort(f"non-finite gradient at iteration {it}: {e}") from e
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            rec = MetricsRecord(
                iteration=it,
                total_loss=value,
                class_loss=parts["class"],
                l1_loss=parts["l1"],
                giou_loss=parts["giou"],
                wall_clock=time.monotonic() - t0,
            )
            records.append(rec)
            if log:
                log(
                    f"iter {it} loss {value:.4f} (cls {parts['class']:.4f} "
                    f"l1 {parts['l1']:.4f} giou {parts['giou']:.4f}) "
                    f"[{rec.wall_clock:.1f}s]"
                )
        if checkpoint_at is not None and it + 1 == checkpoint_at and out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            snap = os.path.join(out_dir, f"checkpoint_iter{it + 1}.cdtr")
            save_run_checkpoint(snap, model, opt, cfg, it + 1)

    final_metrics = {}
    if cfg.eval_scenes > 0:
        final_metrics = evaluate_ap(model, evaluation_scenes(cfg))
        if records:
            records[-1].ap50 = final_metrics["ap50"]
            records[-1].ap = final_metrics["ap"]
        if log:
            log(f"eval ap50 {final_metrics['ap50']:.4f} ap {final_metrics['ap']:.4f}")

    result = TrainResult(model, records, losses, final_metrics)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.metrics_path = os.path.join(out_dir, "metrics.csv")
        with open(result.metrics_path, "w", encoding="ascii") as fh:
            fh.write(METRICS_HEADER + "\n")
            for rec in records:
                fh.write(rec.csv_row() + "\n")
        result.checkpoint_path = os.path.join(out_dir, "checkpoint.cdtr")
        save_run_checkpoint(result.checkpoint_path, model, opt, cfg, cfg.iterations)
    return result


def iterations_to_threshold(losses, threshold, window=25):
    """First iteration whose trailing-window mean loss is <= threshold.

    Returns -1 when the run never gets there. The window smooths the
    single-scene loss noise so the crossing reflects the trend.
    """
    if len(losses) < window:
        return -1
    csum = np.concatenate([[0.0], np.cumsum(losses)])
    means = (csum[window:] - csum[:-window]) / window
    hits = np.nonzero(means <= threshold)[0]
    return int(hits[0] + window - 1) if hits.size else -1


def compare_convergence(base_cfg, seeds, threshold, out_dir=None, window=25, log=None):
    """Train the conditional and additive variants on matched seeds.

    Every toggle except the attention variant is shared. Reports per-seed
    iterations-to-threshold on the smoothed total loss and final AP(0.5),
    plus medians and a textual verdict. Runs that never reach the
    threshold count as infinite for the median.
    """
    if len(seeds) < 3:
        raise ConfigError("convergence comparison needs at least 3 seeds")
    rows = []
    for seed in seeds:
        for variant in ("conditional", "additive"):
            cfg = dataclasses.replace(base_cfg, attention=variant, seed=seed)
            cfg.scene = dataclasses.replace(base_cfg.scene)
            if log:
                log(f"training {variant} variant, seed {seed}")
            result = train(cfg, log=log)
            rows.append(
                {
                    "seed": seed,
                    "variant": variant,
                    "iterations_to_threshold": iterations_to_threshold(
                        result.losses, threshold, window
                    ),
                    "final_loss": result.losses[-1] if result.losses else float("nan"),
                    "ap50": result.metrics.get("ap50", float("nan")),
                    "ap": result.metrics.get("ap", float("nan")),
                }
            )

    def median_iters(variant):
        vals = [
            np.inf if r["iterations_to_threshold"] < 0 else r["iterations_to_threshold"]
            for r in rows
            if r["variant"] == variant
        ]
        return float(np.median(vals))

    def median_ap(variant):
        return float(np.median([r["ap50"] for r in rows if r["variant"] == variant]))

    report = {
        "rows": rows,
        "threshold": threshold,
        "median_iterations": {v: median_iters(v) for v in ("conditional", "additive")},
        "median_ap50": {v: median_ap(v) for v in ("conditional", "additive")},
    }
    mi = report["median_iterations"]
    ma = report["median_ap50"]
    faster = (
        "conditional reaches the loss threshold faster"
        if mi["conditional"] < mi["additive"]
        else "conditional does NOT reach the loss threshold faster"
    )
    report["verdict"] = (
        f"{faster}: median iterations {mi['conditional']:.0f} vs {mi['additive']:.0f}; "
        f"median AP50 {ma['conditional']:.4f} vs {ma['additive']:.4f}"
    )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "comparison.csv")
        with open(csv_path, "w", encoding="ascii") as fh:
            fh.write("seed,variant,iterations_to_threshold,final_loss,ap50,ap\n")
            for r in rows:
                fh.write(
                    f"{r['seed']},{r['variant']},{r['iterations_to_threshold']},"
                    f"{r['final_loss']!r},{r['ap50']!r},{r['ap']!r}\n"
                )
        with open(os.path.join(out_dir, "verdict.txt"), "w", encoding="ascii") as fh:
            fh.write(report["verdict"] + "\n")
    return report
