"""Command-line front end.

    nesyarith gen-data   --config cfg.json --out data.tsv
    nesyarith train      --config cfg.json [--out-dir runs]
    nesyarith train-e2e  --config cfg.json [--out-dir runs]
    nesyarith eval       --config cfg.json --condition hybrid
    nesyarith gradcheck  [--corrupt TENSOR]

Exit codes: 0 success, 2 config error, 3 runtime error.  ``--threads`` caps
BLAS threads and must be handled before numpy loads, which is why all heavy
imports live inside the command functions.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from collections import Counter

from .config import ConfigError, config_hash, load_config, stream_rng

_EVAL_CONDITIONS = ("solver", "hybrid", "hybrid-alt", "e2e", "oracle-hybrid", "llm")


class RuntimeFailure(RuntimeError):
    """Command-level failure that should exit with status 3."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nesyarith")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap BLAS/OpenMP threads (0 = library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override config values by dotted path")

    p = sub.add_parser("gen-data", help="dump a TSV dataset sample")
    common(p)
    p.add_argument("--out", default="dataset.tsv")

    for name in ("train", "train-e2e"):
        p = sub.add_parser(name, help=f"run {name} loop")
        common(p)
        p.add_argument("--out-dir", default="runs")

    p = sub.add_parser("eval", help="evaluate a condition over nesting levels")
    common(p)
    p.add_argument("--condition", required=True, choices=_EVAL_CONDITIONS)
    p.add_argument("--out-dir", default="runs")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--corrupt", default=None, metavar="TENSOR",
                   help="deliberately corrupt one gradient (negative control)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        cfg = load_config(args.config, args.set)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(cfg, args.out)
        if args.command == "train":
            return _cmd_train(cfg, args.out_dir, e2e=False)
        if args.command == "train-e2e":
            return _cmd_train(cfg, args.out_dir, e2e=True)
        if args.command == "eval":
            return _cmd_eval(cfg, args.condition, args.out_dir)
    except RuntimeFailure as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    raise AssertionError(f"unhandled command {args.command}")  # pragma: no cover


def _make_run_dir(out_dir: str, cfg: dict) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(out_dir, f"{stamp}-{config_hash(cfg)}")
    path = base
    suffix = 1
    while os.path.exists(path):
        path = f"{base}-{suffix}"
        suffix += 1
    os.makedirs(path)
    with open(os.path.join(path, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"run_dir={path}")
    return path


def _model_config(cfg: dict, teacher_forcing: bool = False):
    from .neural.params import ModelConfig, PEMode

    m = cfg["model"]
    try:
        return ModelConfig(
            d_model=m["d_model"],
            n_heads=m["n_heads"],
            d_ff=m["d_ff"],
            vocab_size=m["vocab_size"],
            max_positions=m["max_positions"],
            pe_mode=PEMode(m["pe_mode"]),
            max_decode_len=m["max_decode_len"],
            dropout=m["dropout"],
            scale_embedding=m["scale_embedding"],
            teacher_forcing=teacher_forcing,
        )
    except ValueError as err:
        raise RuntimeFailure(f"bad model config: {err}") from err


def _gen_config(cfg: dict, nesting: int = 1):
    from .datagen import GenConfig

    d = cfg["data"]
    return GenConfig(
        nesting=nesting,
        max_operand_digits=d["max_operand_digits"],
        max_result_digits=d["max_result_digits"],
        seed=d["seed"],
    )


def _ratios(cfg: dict) -> tuple[int, int, int]:
    return tuple(cfg["data"]["ratios"])  # validated to length 3


def _cmd_gen_data(cfg: dict, out_path: str) -> int:
    from . import datagen as dg
    from . import expr as ex

    d = cfg["data"]
    task = dg.Task(d["dump_task"])
    rng = stream_rng(d["seed"], "data")
    base = _gen_config(cfg)
    cfg_by_nesting = {
        n: dg.GenConfig(nesting=n, max_operand_digits=base.max_operand_digits,
                        max_result_digits=base.max_result_digits, seed=base.seed)
        for n in d["dump_nesting"]
    }
    nestings = list(d["dump_nesting"])
    rows = []
    counts: Counter = Counter()
    for _ in range(d["dump_rows"]):
        nesting = nestings[int(rng.integers(0, len(nestings)))]
        e = dg.sample_expression(rng, cfg_by_nesting[nesting])
        split = dg.assign_split(ex.render(e), _ratios(cfg))
        rows.append(dg.make_example(e, task, split))
        counts[(split.value, nesting)] += 1
    n = dg.write_dataset(out_path, rows)
    for (split, nesting), c in sorted(counts.items()):
        print(f"{split}\tnesting={nesting}\t{c}")
    print(f"wrote {n} rows to {out_path}")
    return 0


def _sample_mixed_train_batch(rng, task, pool, cfg, batch_size):
    """Per-slot choice between pool full-path examples and fresh samples."""
    from . import datagen as dg

    fraction = cfg["data"]["pool_fraction"]
    n_pool = 0
    if task is dg.Task.SUBEXPR and pool.examples and fraction > 0:
        n_pool = int((rng.random(batch_size) < fraction).sum())
    batch = []
    if n_pool:
        picks = rng.integers(0, len(pool.examples), size=n_pool)
        batch.extend(pool.examples[int(i)] for i in picks)
    if batch_size - n_pool:
        batch.extend(
            dg.sample_batch(
                rng, task, [1, 2], batch_size - n_pool, dg.Split.TRAIN,
                ratios=_ratios(cfg), reserved=pool.reserved,
                gen_cfg=_gen_config(cfg),
            )
        )
    return batch


def _cmd_train(cfg: dict, out_dir: str, e2e: bool) -> int:
    import numpy as np

    from . import datagen as dg
    from .neural.decoding import generate
    from .neural.params import init_params, save_checkpoint
    from .neural.training import NonFiniteLossError, init_adam, training_step

    t = cfg["train"]
    task = dg.Task.END_TO_END if e2e else dg.Task.SUBEXPR
    run_dir = _make_run_dir(out_dir, cfg)
    mcfg = _model_config(cfg, teacher_forcing=t["teacher_forcing"])

    data_rng = stream_rng(cfg["data"]["seed"], "data")
    pool = dg.build_training_pool(data_rng, cfg["data"]["pool_size"], _gen_config(cfg, 2))
    val_batch = dg.sample_batch(
        data_rng, task, [1, 2], t["val_batch_size"], dg.Split.VAL,
        ratios=_ratios(cfg), reserved=pool.reserved, gen_cfg=_gen_config(cfg),
    )

    params = init_params(mcfg, stream_rng(t["seed"], "model-init"))
    adam = init_adam(params, lr=t["lr"])
    step_rng = stream_rng(t["seed"], "label-pe")

    loss_rows: list[str] = []
    val_rows: list[str] = []
    for step in range(1, t["steps"] + 1):
        batch = _sample_mixed_train_batch(data_rng, task, pool, cfg, t["batch_size"])
        try:
            params, adam, loss = training_step(params, adam, batch, mcfg, step_rng)
        except NonFiniteLossError as err:
            raise RuntimeFailure(f"non-finite loss at step {step}: {err}") from err
        if step % t["log_every"] == 0 or step == t["steps"]:
            loss_rows.append(f"{step},{loss:.6f}")
            print(f"step {step} loss {loss:.6f}")
        if t["val_every"] and step % t["val_every"] == 0:
            val_rng = stream_rng(t["seed"], "sampling", extra=step)
            hits = sum(
                generate(params, mcfg, exm.input_text, "greedy", val_rng) == exm.target_text
                for exm in val_batch
            )
            acc = hits / len(val_batch)
            val_rows.append(f"{step},{acc:.4f}")
            print(f"step {step} val_seq_acc {acc:.4f}")
        if t["checkpoint_every"] and step % t["checkpoint_every"] == 0:
            save_checkpoint(params, mcfg, os.path.join(run_dir, f"checkpoint_{step:07d}.nsar"))

    final_path = t["checkpoint_path"] or os.path.join(run_dir, "checkpoint.nsar")
    save_checkpoint(params, mcfg, final_path)
    with open(os.path.join(run_dir, "loss.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        fh.write("\n".join(loss_rows) + ("\n" if loss_rows else ""))
    with open(os.path.join(run_dir, "val.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,seq_acc\n")
        fh.write("\n".join(val_rows) + ("\n" if val_rows else ""))
    print(f"checkpoint={final_path}")
    return 0


def _load_eval_checkpoint(cfg: dict):
    from .neural.params import CorruptCheckpointError, load_checkpoint

    path = cfg["eval"]["checkpoint"] or cfg["train"]["checkpoint_path"]
    if not path:
        raise RuntimeFailure("no checkpoint configured (set eval.checkpoint)")
    if not os.path.exists(path):
        raise RuntimeFailure(f"missing checkpoint {path!r}")
    try:
        return load_checkpoint(path)
    except CorruptCheckpointError as err:
        raise RuntimeFailure(f"corrupt checkpoint {path!r}: {err}") from err


def _cmd_eval(cfg: dict, condition: str, out_dir: str) -> int:
    from . import datagen as dg
    from . import evalharness as eh
    from .hybrid import CombinerVariant, OracleErrorModel, make_oracle_port, write_traces
    from .neural.decoding import make_neural_port

    e = cfg["eval"]
    run_dir = _make_run_dir(out_dir, cfg)
    data_rng = stream_rng(cfg["data"]["seed"], "data")
    pool = dg.build_training_pool(data_rng, cfg["data"]["pool_size"], _gen_config(cfg, 2))
    rng = stream_rng(e["seed"], "sampling")
    if condition == "hybrid":
        variant = CombinerVariant.DEFAULT
    elif condition == "hybrid-alt":
        variant = CombinerVariant.ALT
    else:
        variant = CombinerVariant(e["combiner_variant"])
    common = dict(
        nesting_list=e["nesting_list"],
        n_batches=e["n_batches"],
        batch_size=e["batch_size"],
        rng=rng,
        ratios=_ratios(cfg),
        reserved=pool.reserved,
    )
    dump: list | None = [] if e["dump_sequences"] else None
    traces: list | None = [] if e["dump_traces"] else None

    if condition == "solver":
        params, mcfg = _load_eval_checkpoint(cfg)
        records = eh.evaluate_solver(
            params, mcfg, multi=e["solver_multi"], n_outputs=e["n_outputs"],
            gen_cfg=_gen_config(cfg), condition="solver", dump=dump, **common,
        )
    elif condition == "e2e":
        params, mcfg = _load_eval_checkpoint(cfg)
        records = eh.evaluate_solver(
            params, mcfg, multi=False, task=dg.Task.END_TO_END,
            gen_cfg=_gen_config(cfg), condition="e2e", dump=dump, **common,
        )
    elif condition in ("hybrid", "hybrid-alt"):
        params, mcfg = _load_eval_checkpoint(cfg)
        records = eh.evaluate_hybrid(
            make_neural_port(params, mcfg), variant, n_outputs=e["n_outputs"],
            gen_cfg=_gen_config(cfg), condition=condition, traces=traces,
            dump=dump, **common,
        )
    elif condition == "oracle-hybrid":
        model = OracleErrorModel(
            p_malformed=e["oracle_p_malformed"],
            p_wrong_result=e["oracle_p_wrong_result"],
            p_wrong_target=e["oracle_p_wrong_target"],
            result_noise_range=e["oracle_noise_range"],
        )
        oracle_rng = stream_rng(e["seed"], "oracle")
        port = make_oracle_port(model)
        records = eh.evaluate_hybrid(
            lambda text, n, _rng: port(text, n, oracle_rng),
            variant, n_outputs=e["n_outputs"], gen_cfg=_gen_config(cfg),
            condition="oracle-hybrid", traces=traces, dump=dump, **common,
        )
    elif condition == "llm":
        from .llm import AuthError, EndpointConfig, NetworkError, RateLimitedError, evaluate_llm

        ll = cfg["llm"]
        try:
            endpoint = EndpointConfig.from_env(
                model=ll["model"], max_tokens=ll["max_tokens"],
                temperature=ll["temperature"], timeout=ll["timeout"],
                max_attempts=ll["max_attempts"],
            )
            records = evaluate_llm(
                endpoint, e["nesting_list"], n_batches=cfg["llm"]["n_batches"],
                batch_size=cfg["llm"]["batch_size"], rng=rng,
                ratios=_ratios(cfg), reserved=pool.reserved,
            )
        except (ValueError, AuthError, NetworkError, RateLimitedError) as err:
            raise RuntimeFailure(str(err)) from err
    else:  # pragma: no cover - argparse restricts choices
        raise AssertionError(condition)

    csv_text = eh.emit_report(records, "csv")
    md_text = eh.emit_report(records, "markdown")
    with open(os.path.join(run_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    with open(os.path.join(run_dir, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(md_text)
    if traces is not None:
        write_traces(os.path.join(run_dir, "traces.jsonl"), traces)
    if dump is not None:
        eh.write_sequence_dump(os.path.join(run_dir, "sequences.jsonl"), dump)
    print(md_text)
    return 0


def _cmd_gradcheck(args) -> int:
    from .neural.training import gradient_check

    try:
        err = gradient_check(corrupt_tensor=args.corrupt)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"max relative error {err:.2g}")
    if err <= 1e-3:
        print("gradcheck PASS")
        return 0
    print("gradcheck FAIL")
    return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
