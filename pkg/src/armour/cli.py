"""Command-line entry point: ``armour <subcommand> [options]``.

Exit codes: 0 success, 1 domain error (bad weights, failed check, ...),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Iterable, Sequence

import numpy as np

from . import armw
from .analysis import (
    DEFAULT_EPSILON,
    SpecError,
    compare_param_counts,
    get_arch,
    load_arch_file,
    model_flop_count,
    redundancy_over_layers,
)
from .attention import (
    AttentionConfig,
    AttentionVariant,
    AttentionWeights,
    StrictWeightsError,
    init_weights,
)
from .bench import compare as bench_compare
from .gradcheck import DEFAULT_TOLERANCE, check_attention, check_levit
from .levit import LevitBlockConfig, LevitBlockWeights, LevitVariant, init_block_weights
from .tensor_core import DimensionError, InvalidMaskError
from .toy_train import (
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_SEED,
    ToyTask,
    TrainingError,
    entanglement_probe,
    train,
)

DOMAIN_ERRORS = (
    armw.ArmwFormatError, SpecError, StrictWeightsError, DimensionError,
    InvalidMaskError, TrainingError, ValueError, OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"\n{self.prog}: error: {message}\n")


class _CheckFailed(Exception):
    pass


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, int) and not isinstance(v, bool):
        return f"{v:,}"
    return str(v)


def _table(rows: Sequence[dict], cols: Sequence[str]) -> list[str]:
    cells = [[_fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(cols)]
    line = lambda vals: "  ".join(v.rjust(w) if i else v.ljust(w)
                                  for i, (v, w) in enumerate(zip(vals, widths)))
    return [line(cols), line(["-" * w for w in widths])] + [line(r) for r in cells]


class Emitter:
    def __init__(self, fmt: str, out_path: str | None):
        self.fmt = fmt
        self.lines: list[str] = []
        self.out_path = out_path

    def record(self, obj: dict, text: Iterable[str]) -> None:
        if self.fmt == "jsonl":
            self.lines.append(json.dumps(obj, sort_keys=True))
        else:
            self.lines.extend(text)

    def flush(self) -> None:
        body = "\n".join(self.lines) + ("\n" if self.lines else "")
        if self.out_path:
            with open(self.out_path, "w") as fh:
                fh.write(body)
        else:
            sys.stdout.write(body)


# --------------------------------------------------------------------------
# argument helpers


def _ints(text: str, n: int, what: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated integers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated integers, got {text!r}")
    return vals


def _attn_variants(text: str) -> list[AttentionVariant]:
    if text == "all":
        return list(AttentionVariant)
    try:
        return [AttentionVariant.parse(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _levit_variants(text: str) -> list[LevitVariant]:
    if text == "all":
        return list(LevitVariant)
    try:
        return [LevitVariant.parse(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _attn_cfg(variant, dims: str, bias: bool = True) -> AttentionConfig:
    L, d, h = _ints(dims, 3, "--dims")
    try:
        return AttentionConfig(variant, L, d, h, use_bias=bias)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _levit_cfg(variant, dims: str, bias: bool = True) -> LevitBlockConfig:
    n, d, hgt, wid, c = _ints(dims, 5, "--levit")
    try:
        return LevitBlockConfig(variant, n, d, hgt, wid, c, use_bias=bias)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _arch(args):
    return load_arch_file(args.arch_file) if args.arch_file else get_arch(args.arch)


# --------------------------------------------------------------------------
# subcommands


def cmd_gradcheck(args, em: Emitter) -> None:
    reports = []
    for seed in range(args.seed, args.seed + args.repeats):
        if args.levit:
            for v in _levit_variants(args.variant):
                reports.append(check_levit(_levit_cfg(v, args.levit), seed, args.tolerance, args.step))
        else:
            for v in _attn_variants(args.variant):
                reports.append(check_attention(_attn_cfg(v, args.dims), seed, args.tolerance, args.step))
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        worst = max(r.errors, key=r.errors.get)
        em.record(r.to_dict(), [
            f"{status} {r.target}/{r.variant} seed={r.seed} max_rel_err={r.max_error:.3e} "
            f"(worst: {worst}; tol {r.tolerance:g})"
        ])
    if not all(r.passed for r in reports):
        raise _CheckFailed("gradient check failed")


def cmd_analyze(args, em: Emitter) -> None:
    named = armw.load(args.weights)
    pairs = []
    for item in args.pairs.split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise UsageError(f"--pairs entries look like wq:wk, got {item!r}")
        pairs.append(tuple(parts))
    for pair in pairs:
        r = redundancy_over_layers(named, pair, args.epsilon, mode=args.mode,
                                   heads=args.heads, normalize=args.normalize)
        text = [f"{r.pair}: fraction_below={r.fraction_below:.6f} "
                f"({r.below_count}/{r.element_count}, epsilon={r.epsilon:g})"]
        text += ["  " + line for line in _table(r.per_layer, ["layer", "fraction_below", "element_count"])]
        em.record(r.to_dict(), text)


def cmd_paramcount(args, em: Emitter) -> None:
    spec = _arch(args)
    r = compare_param_counts(spec, args.variant)
    text = [f"architecture {r.arch}, attention variant {r.variant}"]
    text += _table(r.breakdown, ["name", "kind", "variant", "count", "each", "total"])
    text += [
        f"baseline (regular) total: {r.baseline_total:,} ({r.baseline_total / 1e6:.1f}M)",
        f"{r.variant} total: {r.total:,} ({r.total / 1e6:.1f}M)",
        f"delta: {r.delta:+,} ({r.delta_pct:+.1f}%)",
    ]
    em.record(r.to_dict(), text)


def cmd_flops(args, em: Emitter) -> None:
    spec = _arch(args).with_variant(args.variant)
    r = model_flop_count(spec, args.seq_len)
    d = r.to_dict()
    text = [f"architecture {r.arch}, L={r.seq_len} (MACs per instance)"]
    text += _table(d["blocks"], ["name", "kind", "count", "projection_macs", "attention_macs",
                                 "output_macs", "other_macs", "total"])
    text.append(f"model total MACs: {r.total:,}")
    em.record(d, text)


def cmd_bench(args, em: Emitter) -> None:
    if args.levit:
        cfgs = [_levit_cfg(v, args.levit) for v in _levit_variants(args.variant)]
    else:
        cfgs = [_attn_cfg(v, args.dims) for v in _attn_variants(args.variant)]
    reports = bench_compare(cfgs, args.iters, args.seed, args.warmup)
    rows = []
    for r in reports:
        row = {"variant": r.variant, "median_ms": r.median * 1e3, "p10_ms": r.p10 * 1e3,
               "p90_ms": r.p90 * 1e3, "proj_macs": r.macs["projection"], "total_macs": r.macs["total"]}
        if r.transpose_median is not None:
            row["transpose_ms"] = r.transpose_median * 1e3
        rows.append(row)
        em.record(r.to_dict(), [])
    if em.fmt == "text":
        cols = ["variant", "median_ms", "p10_ms", "p90_ms", "proj_macs", "total_macs"]
        if any("transpose_ms" in r for r in rows):
            cols.append("transpose_ms")
        em.lines.append(f"{reports[0].target} dims={reports[0].dims} warmup={reports[0].warmup} "
                        f"iters={reports[0].iters} seed={args.seed}")
        em.lines.extend(_table(rows, cols))


def cmd_train(args, em: Emitter) -> None:
    variants = _attn_variants(args.variant)
    task = ToyTask(seed=args.task_seed)
    records = {}
    for v in variants:
        log = None
        if args.verbose:
            def log(s, v=v):
                print(f"[{v}] epoch {s.epoch}: train_loss={s.train_loss:.4f} "
                      f"eval_loss={s.eval_loss:.4f} acc={s.eval_accuracy:.3f}", file=sys.stderr)
        rec = train(v, task, args.epochs, args.lr, args.seed, args.batch_size, log=log)
        records[v] = rec
        if args.out:
            path = args.out
            if len(variants) > 1:
                stem, dot, ext = args.out.rpartition(".")
                path = f"{stem}.{v.value}.{ext}" if dot else f"{args.out}.{v.value}"
            rec.save(path)
        d = rec.to_dict()
        text = [f"variant={rec.variant} params={rec.param_count:,} seed={rec.seed} lr={rec.lr:g} "
                f"epochs={rec.epochs}"]
        rows = [{k: x for k, x in row.items() if x is not None} for row in d["history"]]
        text += _table(rows, ["epoch", "train_loss", "eval_loss", "eval_accuracy", "wall_seconds"])
        em.record(d, text)
    if AttentionVariant.REGULAR in records and AttentionVariant.ARMOUR in records:
        probe = entanglement_probe(records[AttentionVariant.REGULAR], records[AttentionVariant.ARMOUR])
        text = ["entanglement probe (layer0, epsilon=1e-2):"]
        text += [f"  {r.pair}: {r.fraction_below:.6f}" for r in probe.rows]
        em.record(probe.to_dict(), text)


def _weights_for(args) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(args.seed)
    if args.levit:
        (v,) = _levit_variants(args.variant)
        cfg = _levit_cfg(v, args.levit)
        return init_block_weights(cfg, rng).to_named("block")
    (v,) = _attn_variants(args.variant)
    cfg = _attn_cfg(v, args.dims)
    named = {}
    for i in range(args.layers):
        named.update(init_weights(cfg, rng).to_named(f"layer{i}"))
    return named


def cmd_weights(args, em: Emitter) -> None:
    dtype = {"f32": np.float32, "f64": np.float64}[args.dtype]
    if args.action == "export":
        if not args.out:
            raise UsageError("weights export needs --out <file.armw>")
        named = _weights_for(args)
        armw.save(args.out, named, dtype=dtype)
        em.out_path = None
        em.record({"kind": "weights", "action": "export", "path": args.out, "count": len(named)},
                  [f"wrote {len(named)} tensors to {args.out}"])
        return
    if not args.path:
        raise UsageError("weights import needs a container path")
    named = armw.load(args.path)
    if args.variant and (args.dims or args.levit):
        if args.levit:
            (v,) = _levit_variants(args.variant)
            LevitBlockWeights.from_named(named, _levit_cfg(v, args.levit), "block")
        else:
            (v,) = _attn_variants(args.variant)
            cfg = _attn_cfg(v, args.dims)
            for prefix in sorted({k.rsplit(".", 1)[0] for k in named}):
                AttentionWeights.from_named(named, cfg, prefix)
    if args.out:
        armw.save(args.out, named)
        em.out_path = None
    rows = [{"name": k, "dtype": str(a.dtype), "shape": "x".join(map(str, a.shape))} for k, a in named.items()]
    em.record({"kind": "weights", "action": "import", "path": args.path, "tensors": rows},
              [f"{args.path}: {len(named)} tensors"] + _table(rows, ["name", "dtype", "shape"]))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--out", default=None, help="write output here instead of stdout")
    common.add_argument("--format", choices=("text", "jsonl"), default="text")

    parser = _Parser(prog="armour", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gradcheck", parents=[common], help="tape gradients vs finite differences")
    p.add_argument("--variant", default="all")
    p.add_argument("--dims", default="4,8,2", help="L,d,h")
    p.add_argument("--levit", default=None, help="N,D,H,W,C: check LeViT block variants instead")
    p.add_argument("--repeats", type=int, default=1, help="consecutive seeds to check")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze", parents=[common], help="weight redundancy of projection pairs")
    p.add_argument("--weights", required=True)
    p.add_argument("--pairs", default="wq:wk,wq:wv")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--mode", choices=("whole", "per_head"), default="whole")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--normalize", action="store_true", help="scale each matrix by its max |w| first")
    p.set_defaults(func=cmd_analyze)

    for name, func, help_ in (("paramcount", cmd_paramcount, "analytic parameter totals"),
                              ("flops", cmd_flops, "analytic MAC counts")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--arch", default="deit-ti")
        p.add_argument("--arch-file", default=None)
        p.add_argument("--variant", default="armour" if name == "paramcount" else "regular")
        if name == "flops":
            p.add_argument("--seq-len", type=int, default=197)
        p.set_defaults(func=func)

    p = sub.add_parser("bench", parents=[common], help="forward-pass timing across variants")
    p.add_argument("--variant", default="regular,armour,kv_shared")
    p.add_argument("--dims", default="197,192,3", help="L,d,h")
    p.add_argument("--levit", default=None, help="N,D,H,W,C: time LeViT block variants instead")
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--warmup", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", parents=[common], help="toy training run")
    p.add_argument("--variant", default="regular")
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("weights", parents=[common], help="export/import ARMW containers")
    p.add_argument("action", choices=("export", "import"))
    p.add_argument("path", nargs="?", default=None, help="container to import")
    p.add_argument("--variant", default=None)
    p.add_argument("--dims", default=None, help="L,d,h")
    p.add_argument("--levit", default=None, help="N,D,H,W,C")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.set_defaults(func=cmd_weights)
    for sp in sub.choices.values():
        sp.set_defaults(subparser=sp)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "weights" and args.action == "export":
        args.variant = args.variant or "regular"
        args.dims = args.dims or "197,192,3"
    # train writes its record to --out itself; reports then go to stdout
    out = None if args.command == "train" else args.out
    em = Emitter(args.format, out)
    try:
        args.func(args, em)
    except UsageError as exc:
        args.subparser.print_help(sys.stderr)
        print(f"armour {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except _CheckFailed as exc:
        em.flush()
        print(f"armour {args.command}: {exc}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        print(f"armour {args.command}: error: {exc}", file=sys.stderr)
        return 1
    em.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
