"""Command-line entry points.

Subcommands: train, eval, dump-attn, gradcheck, oracle-check, compare.
Every command exits nonzero on a contract violation and prints the
violated invariant on stderr.
"""

import argparse
import sys

from . import verify
from ._kernels import NUMBA_ACTIVE
from .attnmaps import dump_attention
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .evalap import evaluate_ap
from .rng import derive_seed
from .scenes import SceneError, generate_scene
from .tensor import TensorError
from .train import TrainAbort, compare_convergence, model_from_checkpoint, train

USER_ERRORS = (ConfigError, CheckpointError, SceneError, TensorError, TrainAbort,
               ValueError, OSError)


def _cmd_train(args):
    cfg = load_config(args.config)
    result = train(cfg, out_dir=args.out, resume_from=args.resume, log=print)
    last = result.records[-1] if result.records else None
    if last is not None:
        print(f"final iteration {last.iteration}: total loss {last.total_loss:.6f}")
    if result.metrics:
        print(f"ap50 {result.metrics['ap50']:.4f}  ap {result.metrics['ap']:.4f}")
    print(f"wrote {result.metrics_path} and {result.checkpoint_path}")
    return 0


def _cmd_eval(args):
    model, cfg, iteration = model_from_checkpoint(args.checkpoint)
    if args.scenes < 1:
        raise ConfigError("evaluation needs at least one scene")
    scenes = [
        generate_scene(cfg.scene, derive_seed(args.seed, "eval", i))
        for i in range(args.scenes)
    ]
    metrics = evaluate_ap(model, scenes)
    print(f"checkpoint at iteration {iteration}, {args.scenes} scenes")
    print(f"ap50 {metrics['ap50']:.6f}")
    print(f"ap   {metrics['ap']:.6f}")
    return 0


def _cmd_dump_attn(args):
    model, cfg, _ = model_from_checkpoint(args.checkpoint)
    image, _ = generate_scene(cfg.scene, derive_seed(args.seed, "eval", 0))
    files = dump_attention(model, image, args.query, args.out)
    print(f"wrote {len(files)} map files to {args.out}")
    return 0


def _cmd_gradcheck(args):
    failed = []

    def report(name, err, tol):
        ok = err < tol
        print(f"{'PASS' if ok else 'FAIL'} {name}: rel err {err:.3e} (tol {tol:.0e})")
        if not ok:
            failed.append(name)

    module = args.module
    if module in (None, "ops"):
        for name, err in verify.run_op_gradchecks().items():
            smooth = next(s for n, s, _, _ in verify.OP_CASES if n == name)
            report(f"op {name}", err, verify.SMOOTH_TOL if smooth else verify.KINKED_TOL)
    if module in (None, "posenc"):
        report("posenc", verify.posenc_gradcheck(seed=3), verify.SMOOTH_TOL)
    if module in (None, "matching"):
        worst = max(verify.matching_loss_gradcheck(seed) for seed in range(5))
        report("matching loss", worst, verify.KINKED_TOL)
    if module in (None, "pipeline"):
        compared = skipped = 0
        worst = 0.0
        for seed in range(args.seeds):
            w, c, k = verify.pipeline_gradcheck(seed)
            worst = max(worst, w)
            compared += c
            skipped += k
        print(f"pipeline: {compared} coordinates compared, "
              f"{skipped} skipped (kink inside stencil)")
        report(f"pipeline x{args.seeds} seeds", worst, verify.KINKED_TOL)
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_oracle_check(args):
    checked, failures = verify.run_matching_oracle()
    if failures:
        print(
            "assignment oracle mismatch (solver vs exhaustive) at "
            f"(K, N, case): {failures[:5]}",
            file=sys.stderr,
        )
        return 1
    print(f"PASS oracle-check: {checked} matrices, solver == exhaustive search")
    return 0


def _cmd_compare(args):
    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    report = compare_convergence(
        cfg, seeds, args.threshold, out_dir=args.out, window=args.window, log=print
    )
    print(report["verdict"])
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="conddet",
        description="Set-prediction rectangle detector with additive or "
        "decoupled content/spatial cross-attention.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on generated scenes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenes", type=int, required=True)
    e.add_argument("--seed", type=int, required=True)
    e.set_defaults(fn=_cmd_eval)

    d = sub.add_parser("dump-attn", help="export attention maps as PGM + CSV")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--query", type=int, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=_cmd_dump_attn)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--module", choices=["ops", "posenc", "matching", "pipeline"],
                   default=None, help="restrict to one suite (default: all)")
    g.add_argument("--seeds", type=int, default=20,
                   help="seed count for the pipeline suite")
    g.set_defaults(fn=_cmd_gradcheck)

    o = sub.add_parser("oracle-check", help="assignment solver vs exhaustive search")
    o.set_defaults(fn=_cmd_oracle_check)

    c = sub.add_parser("compare", help="conditional vs additive convergence")
    c.add_argument("--config", required=True)
    c.add_argument("--seeds", required=True, help="comma-separated, e.g. 0,1,2")
    c.add_argument("--threshold", type=float, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--window", type=int, default=25,
                   help="trailing-mean window for the threshold crossing")
    c.set_defaults(fn=_cmd_compare)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not NUMBA_ACTIVE:
        print("note: compiled kernels disabled, using plain numpy fallback")
    try:
        return args.fn(args)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
