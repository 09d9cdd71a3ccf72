"""Command-line harness.

Subcommands: train, quantize, eval, cost, bench, pack.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
``BITTURBO_THREADS`` caps sweep worker count.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bitkernel.costing import cost_report
from .codec import PackedDecoder
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .container import (
    ContainerError,
    LoadedModel,
    load_model,
    save_ensemble,
    save_model,
    save_packed,
)
from .ensemble import EnsembleModel, train_bag
from .quantize import QuantMode
from .sweep import ModelEvaluator, run_sweep, sweep_csv
from .train import train_full


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; flags are validation
        raise UsageError(message)


def _read_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_config(path)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    if args.mode:
        cfg.mode = args.mode
    cfg.validate()
    mode = cfg.quant_mode()
    cfg_text = cfg.serialize()
    if args.bag > 1:
        if not mode.packable:
            raise UsageError("--bag needs a binary or ternary mode")
        ens, curve = train_bag(cfg, mode, args.bag)
        save_ensemble(args.out, ens.members, cfg_text, curve)
    else:
        model, curve = train_full(cfg)
        save_model(args.out, model, cfg_text, curve)
    with open(args.out + ".curve.csv", "w", encoding="utf-8") as fh:
        fh.write(curve)
    print(f"wrote {args.out}")
    return 0


def cmd_quantize(args) -> int:
    from .codec import apply_post_quant
    loaded = load_model(args.model)
    if loaded.kind != "single":
        raise UsageError("quantize expects a single-decoder model file")
    if loaded.mode.kind != "real":
        raise UsageError(f"model is already {loaded.mode}; post-quantization needs a real-mode model")
    apply_post_quant(loaded.model, args.bits)
    save_model(args.out, loaded.model, loaded.config_text, loaded.curve_text)
    print(f"wrote {args.out} (quant{args.bits})")
    return 0


def _evaluator_for(loaded: LoadedModel, extra: list[str], backend: str | None) -> ModelEvaluator:
    if extra:
        if loaded.kind != "single":
            raise UsageError("--ensemble combines single-decoder model files")
        members = [loaded.model]
        for path in extra:
            other = load_model(path)
            if other.kind != "single":
                raise UsageError(f"{path}: --ensemble members must be single-decoder files")
            if other.geometry != loaded.geometry:
                raise UsageError(f"{path}: ensemble member geometry differs (K/M/F must match)")
            if not np.array_equal(other.model.interleaver.perm, loaded.model.interleaver.perm):
                raise UsageError(f"{path}: ensemble member interleaver differs")
            members.append(other.model)
        return ModelEvaluator(EnsembleModel(members))
    if loaded.kind == "ensemble":
        return ModelEvaluator(EnsembleModel(loaded.members))
    if loaded.kind == "packed":
        ev = ModelEvaluator(loaded.encoder_host, packed=loaded.packed, backend=backend)
        return ev
    return ModelEvaluator(loaded.model)


def cmd_eval(args) -> int:
    loaded = load_model(args.model)
    try:
        cfg = parse_config(loaded.config_text) if loaded.config_text else ExperimentConfig()
    except ConfigError:
        cfg = ExperimentConfig()
    if args.snr_start is not None:
        cfg.snr_start = args.snr_start
    if args.snr_end is not None:
        cfg.snr_end = args.snr_end
    if args.snr_step is not None:
        cfg.snr_step = args.snr_step
    if args.blocks is not None:
        cfg.blocks_per_point = args.blocks
    if args.target_bit_errors is not None:
        cfg.target_bit_errors = args.target_bit_errors
    if cfg.blocks_per_point < 1:
        raise UsageError("--blocks must be >= 1")
    if cfg.snr_step <= 0:
        raise UsageError("--snr-step must be positive")
    ev = _evaluator_for(loaded, args.ensemble, args.backend)
    results = run_sweep(ev, cfg.snr_points(), args.seed, cfg.blocks_per_point, cfg.target_bit_errors)
    csv = sweep_csv(results)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv)
    return 0


def cmd_cost(args) -> int:
    loaded = load_model(args.model)
    if loaded.kind == "packed":
        host = loaded.encoder_host
        layers = host.decoder_cost_layers()
        enc_layers = host.encoder_cost_layers()
        bag = 1
    else:
        model = loaded.model
        layers = model.decoder_cost_layers()
        enc_layers = model.encoder_cost_layers()
        bag = len(loaded.members) if loaded.kind == "ensemble" else 1
    rep = cost_report(layers, loaded.mode, bag_size=bag)
    total_params = rep.params + sum(l.params for l in enc_layers)
    print("decoder cost report")
    for line in rep.lines():
        print("  " + line)
    print(f"  total params (enc+dec): {total_params}")
    csv = (
        "mode,bag,params,storage_bits,flops_real,bitops,memory_saving_x,speedup_x\n"
        f"{rep.mode},{rep.bag_size},{rep.params},{rep.storage_bits},"
        f"{rep.flops_real},{rep.bitops},{rep.memory_saving_x:g},{rep.speedup_x:g}\n"
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv)
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_decode, bench_kernels, flops_line
    loaded = load_model(args.model)
    if loaded.kind == "packed":
        packed = loaded.packed
        model = loaded.encoder_host
    else:
        if loaded.kind != "single":
            raise UsageError("bench expects a single binary/ternary model or a packed file")
        if not loaded.mode.packable:
            raise UsageError(f"bench needs a binary or ternary model, got {loaded.mode}")
        model = loaded.model
        packed = model.freeze_for_edge()
    rep = bench_kernels(packed, batch=args.batch, reps=args.iters, backend=args.backend)
    for line in rep.lines():
        print(line)
    if loaded.kind == "single":
        tp, tf = bench_decode(model, packed, batch=args.batch, backend=args.backend)
        print(f"full decode: packed {tp * 1e3:.1f} ms/batch, float {tf * 1e3:.1f} ms/batch, {tf / tp:.1f}x")
    print(flops_line(model))
    return 0


def cmd_pack(args) -> int:
    loaded = load_model(args.model)
    if loaded.kind != "single":
        raise UsageError("pack expects a single-decoder model file")
    if not loaded.mode.packable:
        raise UsageError(f"pack needs a binary or ternary model, got {loaded.mode}")
    packed = loaded.model.freeze_for_edge()
    save_packed(args.out, loaded.model, packed, loaded.config_text, loaded.curve_text)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="bitturbo", description="turbo-style neural channel codes, compressed for the edge")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a container")
    t.add_argument("--config", default=None, help="key = value config file")
    t.add_argument("--mode", choices=["real", "binary", "ternary"], default=None)
    t.add_argument("--bag", type=int, default=1, help="train a bag of this many decoders")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    q = sub.add_parser("quantize", help="post-training quantization of a real model")
    q.add_argument("--model", required=True)
    q.add_argument("--bits", type=int, required=True, choices=[1, 2, 4, 8])
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_quantize)

    e = sub.add_parser("eval", help="BER/BLER sweep to CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--ensemble", nargs="*", default=[], help="additional member model files")
    e.add_argument("--snr-start", type=float, default=None)
    e.add_argument("--snr-end", type=float, default=None)
    e.add_argument("--snr-step", type=float, default=None)
    e.add_argument("--blocks", type=int, default=None)
    e.add_argument("--target-bit-errors", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--backend", default=None, choices=["ext", "python"])
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("cost", help="parameter/storage/compute report")
    c.add_argument("--model", required=True)
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_cost)

    b = sub.add_parser("bench", help="packed vs float throughput")
    b.add_argument("--model", required=True)
    b.add_argument("--iters", type=int, default=5)
    b.add_argument("--batch", type=int, default=16)
    b.add_argument("--backend", default=None, choices=["ext", "python"])
    b.set_defaults(fn=cmd_bench)

    k = sub.add_parser("pack", help="freeze a binary/ternary decoder for the edge")
    k.add_argument("--model", required=True)
    k.add_argument("--out", required=True)
    k.set_defaults(fn=cmd_pack)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (UsageError, ConfigError, ContainerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # genuine runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
