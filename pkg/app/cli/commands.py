import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from app.common.errors import ConfigurationError, InputError
from app.common.logging.logging_config import configure_logging, get_logger
from app.services.analysis import (
    DensityReport,
    NasStrategy,
    coverage,
    density,
    density_report,
    fit_power_law,
    load_points,
    memory_traffic_model,
    normalise_taus,
    select_heads,
    sweep_tau,
    write_sweep,
)
from app.services.baselines import PolicyKind, evaluate_policies, write_results
from app.services.config.config_models import TotalConfig
from app.services.config.config_service import ConfigService
from app.services.di.container import configure_container
from app.services.kvcache import DecodeState, decode_step, export_trace, memory_report, trace_to_z
from app.services.model import Checkpoint, Transformer
from app.services.tasks import eval_set, load_examples, make_source
from app.services.tensor_core import Rng, no_grad
from app.services.training import TrainMode, hard_gate_config, train

logger = get_logger(__name__)


def _fixed(value: Any) -> Any:
    """Round every float to 9 significant digits so outputs diff cleanly."""
    if isinstance(value, dict):
        return {k: _fixed(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_fixed(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(f"{float(value):.9g}")
    if isinstance(value, np.integer):
        return int(value)
    return value


def emit(payload: dict[str, Any], path: Optional[str | Path] = None) -> None:
    text = json.dumps(_fixed(payload), sort_keys=True)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    sys.stdout.write(text + "\n")


def _setup(args: argparse.Namespace) -> tuple[ConfigService, TotalConfig]:
    service = configure_container(args.config)
    config = service.get()
    configure_logging(config.app.log_level)
    return service, config


def _parse_taus(raw: str) -> list[float]:
    try:
        return [float(t) for t in raw.split(",") if t.strip()]
    except ValueError as e:
        raise ConfigurationError(f"--taus must be a comma-separated list of numbers: {raw!r}") from e


def _eval_batch(args: argparse.Namespace, config: TotalConfig, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    if getattr(args, "eval_set", None):
        return load_examples(args.eval_set)
    return eval_set(config.task, vocab_size)


def build_training_model(config: TotalConfig, mode: TrainMode, init_checkpoint: Optional[str], rng: Rng) -> Transformer:
    """Fresh model, or the branch point of a continued-training run."""
    if init_checkpoint is None:
        return Transformer(config.model, config.gate, rng.spawn())

    checkpoint = Checkpoint.load(init_checkpoint)
    model = checkpoint.to_model()
    model.gate = config.gate
    if mode is not TrainMode.DENSE:
        model.set_attention(config.model.attention, config.model.head_overrides)
        model.reset_predictors(config.gate.init_bias, rng.spawn(), kind=config.gate.predictor_kind)
    logger.info("branched_from_checkpoint", path=str(init_checkpoint), step=checkpoint.step, mode=mode.value)
    return model


def cmd_train(args: argparse.Namespace) -> int:
    service, config = _setup(args)
    mode = TrainMode(args.mode)
    if mode.needs_init_checkpoint and not args.init_checkpoint:
        raise ConfigurationError(f"--mode {mode.value} continues training and needs --init-checkpoint")

    seed = config.app.seed if args.seed is None else args.seed
    rng = Rng(seed)
    train_cfg = config.train.model_copy(update={"mode": mode})
    model = build_training_model(config, mode, args.init_checkpoint, rng)
    source = make_source(config.task, train_cfg.batch_size, model.config.vocab_size)

    checkpoint, log = train(model, source, train_cfg, config.gate, rng)

    out = Path(args.out)
    checkpoint.save(out / "checkpoint.spkv")
    log.save(out / "train_log.jsonl")
    service.snapshot(out)
    emit(
        {
            "mode": mode.value,
            "steps": checkpoint.step,
            "final_loss": log[-1].loss if len(log) else None,
            "checkpoint": str(out / "checkpoint.spkv"),
            "digest": checkpoint.digest(),
        }
    )
    return 0


def cmd_sweep_tau(args: argparse.Namespace) -> int:
    service, config = _setup(args)
    taus = normalise_taus(_parse_taus(args.taus))
    model = Checkpoint.load(args.checkpoint).to_model()
    tokens, mask = _eval_batch(args, config, model.config.vocab_size)

    frame = sweep_tau(model, tokens, mask, taus, model.gate)
    path = write_sweep(frame, args.out)
    service.snapshot(path.parent)
    emit({"out": str(path), "rows": frame.to_dict(orient="records")})
    return 0


def cmd_cache_sim(args: argparse.Namespace) -> int:
    service, config = _setup(args)
    if args.prompt_tokens < 1 or args.gen_tokens < 0:
        raise ConfigurationError("--prompt-tokens must be >= 1 and --gen-tokens >= 0")
    if not 0.0 <= args.tau <= 1.0:
        raise ConfigurationError(f"--tau must lie in [0, 1], got {args.tau}")

    model = Checkpoint.load(args.checkpoint).to_model()
    total = args.prompt_tokens + args.gen_tokens
    if total > model.config.max_seq_len:
        raise InputError(f"{total} tokens exceed max_seq_len={model.config.max_seq_len}")

    rng = Rng(config.app.seed if args.seed is None else args.seed)
    sequence = [int(t) for t in rng.integers(model.config.vocab_size, (args.prompt_tokens,))]
    state = DecodeState(model, config.cache, tau=args.tau, record_trace=True)
    logits = [decode_step(state, token) for token in sequence]
    for _ in range(args.gen_tokens):
        sequence.append(int(np.argmax(logits[-1])))
        logits.append(decode_step(state, sequence[-1]))
    decoded = np.stack(logits)

    with no_grad():
        full, _ = model.forward(np.array(sequence)[None, :], hard_gate_config(state.gate, args.tau))
    residual = float(np.max(np.abs(full.data[0] - decoded)))

    report = memory_report(state)
    gated = state.gated_streams()
    z = trace_to_z(state.trace)
    measured = density(z, window=state.gate.window, gated=gated)
    ratio = memory_traffic_model(measured, z.shape[-1], state.gate.window)
    if args.trace_out:
        service.snapshot(export_trace(state.trace, args.trace_out).parent)
    out = Path(args.out) if args.out else None
    if out is not None:
        service.snapshot(out)

    emit(
        {
            "memory_report": report.model_dump(),
            "oracle_residual": residual,
            "traffic_ratio": ratio,
            "tau": args.tau,
            "tokens": len(logits),
        },
        out / "cache_sim.json" if out is not None else None,
    )
    return 0


def cmd_density_report(args: argparse.Namespace) -> int:
    service, config = _setup(args)
    model = Checkpoint.load(args.checkpoint).to_model()
    tokens, _ = _eval_batch(args, config, model.config.vocab_size)
    report = density_report(model, tokens, tau=args.tau, metadata={"checkpoint": str(args.checkpoint)})
    path = report.save(args.out)
    service.snapshot(path.parent)
    emit({"out": str(path), "rho": report.rho, "matrix": report.matrix})
    return 0


def cmd_nas(args: argparse.Namespace) -> int:
    service, _ = _setup(args)
    report = DensityReport.load(args.report)
    strategy = NasStrategy(args.strategy)
    selection = select_heads(strategy, args.budget, report, report.n_layers, report.n_heads, Rng(args.seed))
    emit(
        {
            "strategy": strategy.value,
            "budget": args.budget,
            "heads": [list(h) for h in selection.heads],
            "coverage": coverage(selection, report),
        },
        args.out,
    )
    if args.out:
        service.snapshot(Path(args.out).parent)
    return 0


def cmd_baselines(args: argparse.Namespace) -> int:
    service, config = _setup(args)
    model = Checkpoint.load(args.checkpoint).to_model()
    tokens, _ = _eval_batch(args, config, model.config.vocab_size)
    if args.limit is not None:
        tokens = tokens[: args.limit]

    overrides = {k: v for k, v in (("budget_fraction", args.budget_fraction), ("keep_fraction", args.keep_fraction)) if v is not None}
    policies = [config.baselines.model_copy(update={"kind": PolicyKind(kind), **overrides}) for kind in args.policy]
    results = evaluate_policies(model, list(tokens), policies)
    path = write_results(results, args.out)
    service.snapshot(path.parent)

    frame = pd.DataFrame([r.model_dump() for r in results])
    summary = frame.groupby("policy", sort=False)[["density", "nll", "delta_nll_vs_dense"]].mean()
    emit({"out": str(path), "summary": summary.reset_index().to_dict(orient="records")})
    return 0


def cmd_fit_scaling(args: argparse.Namespace) -> int:
    service, _ = _setup(args)
    compute, nll = load_points(args.points)
    fit = fit_power_law(compute, nll)
    emit({**fit.as_dict(), "n_points": int(compute.size)}, args.out)
    if args.out:
        service.snapshot(Path(args.out).parent)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkv", description="Self-pruned KV attention lab")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None, help="YAML config file (defaults to the bundled settings)")
        sub.set_defaults(handler=handler)
        return sub

    sub = add("train", cmd_train, "Train a model in one of the protocol modes")
    sub.add_argument("--mode", required=True, choices=[m.value for m in TrainMode])
    sub.add_argument("--out", required=True, help="Output directory")
    sub.add_argument("--init-checkpoint", default=None)
    sub.add_argument("--seed", type=int, default=None)

    sub = add("sweep-tau", cmd_sweep_tau, "Density and NLL across inference thresholds")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--taus", required=True, help="Comma-separated thresholds in [0, 1]")
    sub.add_argument("--eval-set", default=None, help="JSONL examples; defaults to the configured task")
    sub.add_argument("--out", required=True, help="CSV path")

    sub = add("cache-sim", cmd_cache_sim, "Decode through the paged cache and check it against a full forward")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--prompt-tokens", type=int, required=True)
    sub.add_argument("--gen-tokens", type=int, default=0)
    sub.add_argument("--tau", type=float, required=True)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--trace-out", default=None, help="Write the gate trace as JSONL")
    sub.add_argument("--out", default=None, help="Output directory for the result JSON")

    sub = add("density-report", cmd_density_report, "Per-head gate density of a checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--tau", type=float, default=None)
    sub.add_argument("--eval-set", default=None)
    sub.add_argument("--out", required=True, help="DensityReport JSON path")

    sub = add("nas", cmd_nas, "Choose global heads under a budget")
    sub.add_argument("--report", required=True)
    sub.add_argument("--strategy", required=True, choices=[s.value for s in NasStrategy])
    sub.add_argument("--budget", type=int, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None)

    sub = add("baselines", cmd_baselines, "Chunked-prefill eviction baselines on a dense checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--policy", nargs="+", required=True, choices=[p.value for p in PolicyKind])
    sub.add_argument("--budget-fraction", type=float, default=None)
    sub.add_argument("--keep-fraction", type=float, default=None)
    sub.add_argument("--eval-set", default=None)
    sub.add_argument("--limit", type=int, default=None, help="Evaluate only the first N sequences")
    sub.add_argument("--out", required=True, help="Results JSONL path")

    sub = add("fit-scaling", cmd_fit_scaling, "Fit L(C) = L_inf + A * C^-alpha")
    sub.add_argument("--points", required=True, help="CSV with flops and nll columns")
    sub.add_argument("--out", default=None)

    return parser
