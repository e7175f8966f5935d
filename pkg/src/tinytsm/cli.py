"""Command-line entry point: ``tinytsm {generate,train,forecast,evaluate,param-count}``.

Every subcommand takes an optional JSON config validated against a schema;
failures exit nonzero with one JSON object on stderr, schema failures
carrying a JSON-pointer ``path``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

CONFIG_VERSION = 1

_INT_PAIR = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": ["toy", "full"]},
        "patch_len": {"type": "integer", "minimum": 1},
        "hidden_size": {"type": "integer", "minimum": 2},
        "n_temporal_layers": {"type": "integer", "minimum": 0},
        "n_spatial_layers": {"type": "integer", "minimum": 0},
        "n_heads": {"type": "integer", "minimum": 1},
        "ffn_mult": {"type": "number", "exclusiveMinimum": 0},
        "max_context": {"type": "integer", "minimum": 1},
        "max_horizon": {"type": "integer", "minimum": 1},
        "n_pad_tokens": {"type": "integer", "minimum": 0},
        "head_horizon_per_patch": {"type": ["integer", "null"], "minimum": 1},
    },
}

INFERENCE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "use_mirror": {"type": "boolean"},
        "noise_ensembles": {"type": "integer", "minimum": 0},
        "noise_frac": {"type": "number", "minimum": 0},
        "augment_channels": {"type": "array", "items": {"enum": ["signed_square", "signed_sqrt", "smooth5"]}},
        "sifi_stride": {"oneOf": [{"type": "integer", "minimum": 1}, {"const": "auto"}]},
    },
}

SCHEMAS = {
    "generate": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "version": {"const": CONFIG_VERSION},
            "n_series": {"type": "integer", "minimum": 1},
            "seq_len_range": _INT_PAIR,
            "p_no_index": {"type": "number", "minimum": 0, "maximum": 1},
            "base_unit": {"type": "string"},
            "augmentation": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "n_expansions_range": _INT_PAIR,
                    "mix_sparsity": {"type": "integer", "minimum": 1},
                    "pool_subsample": {"type": "integer", "minimum": 1},
                    "n_base_range": _INT_PAIR,
                    "real_mix_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                    "p_calendar": {"type": "number", "minimum": 0, "maximum": 1},
                    "max_channels": {"type": ["integer", "null"], "minimum": 1},
                },
            },
        },
    },
    "train": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "version": {"const": CONFIG_VERSION},
            "model": MODEL_SCHEMA,
            "train": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "batch_size": {"type": "integer", "minimum": 1},
                    "learning_rate": {"type": "number", "minimum": 0},
                    "betas": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    "eps": {"type": "number", "exclusiveMinimum": 0},
                    "weight_decay": {"type": "number", "minimum": 0},
                    "max_horizon": {"type": "integer", "minimum": 1, "maximum": 960},
                    "coarse_grid_strides": {"type": "array", "items": {"enum": [1, 2, 4, 8, 16, 32, 64, 128]}},
                    "coarse_grid_prob": {"type": "number", "minimum": 0, "maximum": 1},
                    "huber_delta": {"type": "number", "exclusiveMinimum": 0},
                    "horizon_law": {"enum": ["uniform", "log-uniform"]},
                    "steps": {"type": "integer", "minimum": 0},
                    "checkpoint_every": {"type": "integer", "minimum": 0},
                    "target_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
                    "lr_schedule": {"enum": ["constant", "cosine"]},
                    "warmup_steps": {"type": "integer", "minimum": 0},
                    "min_lr_ratio": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
            "stream": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "seq_len_range": _INT_PAIR,
                    "n_channels": {"type": "integer", "minimum": 1},
                    "window": {"type": "integer", "minimum": 2},
                    "obs_noise_prob": {"type": "number", "minimum": 0, "maximum": 1},
                    "single_period_prob": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
            "objective": {"enum": ["dense", "test_at_end"]},
        },
    },
    "forecast": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"version": {"const": CONFIG_VERSION}, "inference": INFERENCE_SCHEMA},
    },
    "evaluate": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "version": {"const": CONFIG_VERSION},
            "context_len": {"type": "integer", "minimum": 1},
            "horizon": {"type": "integer", "minimum": 1, "maximum": 960},
            "season": {"type": "integer", "minimum": 1},
            "synthetic": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "n": {"type": "integer", "minimum": 1},
                    "kind": {"enum": ["seasonal", "mixed"]},
                    "seed": {"type": "integer", "minimum": 0},
                },
            },
            "inference": INFERENCE_SCHEMA,
            "plots": {"type": "boolean"},
        },
    },
    "param-count": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"version": {"const": CONFIG_VERSION}, "model": MODEL_SCHEMA},
    },
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, path: str | None = None):
        super().__init__(message)
        self.kind, self.message, self.path = kind, message, path

    def payload(self) -> dict:
        out = {"error": self.kind, "message": self.message}
        if self.path is not None:
            out["path"] = self.path
        return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError("config", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError("config", f"invalid JSON: {exc}") from None
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        pointer = "/" + "/".join(str(p) for p in e.absolute_path)
        raise CliError("schema", e.message, pointer)
    return cfg


def model_config(spec: dict | None):
    from .model import ModelConfig

    spec = dict(spec or {})
    preset = spec.pop("preset", "toy")
    try:
        return (ModelConfig.toy if preset == "toy" else ModelConfig.full)(**spec)
    except ValueError as exc:
        raise CliError("config", str(exc), "/model") from None


def inference_config(spec: dict | None, seed: int):
    from .inference import InferenceConfig

    return InferenceConfig(**(spec or {}), seed=seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args, cfg) -> dict:
    from .series import write_dataset
    from .synthts import AugmentationConfig, generate, sample_batch_params

    aug_spec = dict(cfg.get("augmentation", {}))
    for key in ("n_expansions_range", "n_base_range"):
        if key in aug_spec:
            aug_spec[key] = tuple(aug_spec[key])
    aug = AugmentationConfig(**aug_spec)
    rng = np.random.default_rng(args.seed)
    n = args.n if args.n is not None else cfg.get("n_series", 1)
    out = []
    for _ in range(n):
        params = sample_batch_params(rng, p_no_index=cfg.get("p_no_index", 0.2),
                                     seq_len_range=tuple(cfg.get("seq_len_range", (256, 2048))),
                                     base_unit=cfg.get("base_unit"))
        out.append(generate(aug, params, rng=rng))
    write_dataset(out, args.out, format=args.format)
    return {"written": str(args.out), "n_series": n}


def cmd_train(args, cfg) -> dict:
    import torch

    from .model import TinyTSM, save_params
    from .series import read_dataset
    from .synthts import StreamConfig, SynthStream
    from .training import TrainConfig, WindowStream, train, train_test_at_end

    torch.manual_seed(args.seed)
    mcfg = model_config(cfg.get("model"))
    tspec = dict(cfg.get("train", {}))
    tcfg = TrainConfig(**tspec, seed=args.seed, loss_curve_path=args.loss_curve, checkpoint_path=args.out)
    sspec = cfg.get("stream", {})
    if args.data:
        stream = WindowStream(read_dataset(args.data), sspec.get("window", 512), tcfg.batch_size, args.seed)
    else:
        scfg = StreamConfig(batch_size=tcfg.batch_size,
                            seq_len_range=tuple(sspec.get("seq_len_range", (320, 640))),
                            n_channels=sspec.get("n_channels", 3),
                            obs_noise_prob=sspec.get("obs_noise_prob", 0.0),
                            single_period_prob=sspec.get("single_period_prob", 0.0))
        stream = SynthStream(scfg, args.seed)
    model = TinyTSM(mcfg, seed=args.seed)
    fn = train_test_at_end if cfg.get("objective") == "test_at_end" else train
    result = fn(model, stream, tcfg)
    save_params(model, args.out)
    return {"checkpoint": str(args.out), "steps": len(result.curve),
            "final_loss": result.curve[-1]["loss"] if result.curve else None}


def cmd_forecast(args, cfg) -> dict:
    from .inference import predict
    from .model import load_params
    from .series import read_dataset

    _, model = load_params(args.checkpoint)
    icfg = inference_config(cfg.get("inference"), args.seed)
    series = read_dataset(args.data)
    out = Path(args.out)
    written = []
    for i, s in enumerate(series):
        path = out if len(series) == 1 else out.with_name(f"{out.stem}_{i}{out.suffix}")
        res = predict(model, s, args.horizon, icfg)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *res.channels])
            for t in range(args.horizon):
                w.writerow([t, *(repr(float(v)) for v in res.values[:, t])])
        side = path.with_suffix(".provenance.json")
        side.write_text(json.dumps({"horizon": args.horizon, "channels": res.channels, **res.provenance}, indent=2))
        written += [str(path), str(side)]
    return {"written": written}


def cmd_evaluate(args, cfg) -> dict:
    from .harness import EvalTask, emit_plots, run_eval, synthetic_tasks
    from .series import read_dataset

    horizon = cfg.get("horizon", 48)
    context = cfg.get("context_len", 512)
    if args.data:
        tasks = []
        for i, s in enumerate(read_dataset(args.data)):
            season = cfg.get("season", s.metadata.get("season"))
            tasks.append(EvalTask(f"task-{i:04d}", s, min(context, len(s) - horizon), horizon, season))
    else:
        syn = cfg.get("synthetic", {})
        tasks = synthetic_tasks(syn.get("n", 50), syn.get("kind", "seasonal"), context, horizon,
                                seed=syn.get("seed", 12345))
    report = run_eval(args.checkpoint, tasks, inference_config(cfg.get("inference"), args.seed), out_dir=args.out)
    if cfg.get("plots", False):
        emit_plots(report, None, args.out)
    summary = report.summary()
    return {"report": str(Path(args.out) / "report.csv"), "overall": summary["overall"],
            "failed": len(report.failed)}


def cmd_param_count(args, cfg) -> dict:
    from .model import param_count

    spec = dict(cfg.get("model", {}))
    if args.preset:
        spec["preset"] = args.preset
    return param_count(model_config(spec))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "param-count": cmd_param_count,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tinytsm", description="Small patched time-series forecaster: data, training, evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")

    g = sub.add_parser("generate", help="write synthetic series to a dataset file")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, help="number of series (overrides n_series)")
    g.add_argument("--format", choices=["json", "csv"], default="json")

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--loss-curve", help="loss-curve CSV path")
    t.add_argument("--data", help="dataset file to draw training windows from (default: synthetic stream)")

    f = sub.add_parser("forecast", help="forecast every series of a dataset")
    common(f)
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--horizon", type=int, required=True)
    f.add_argument("--out", required=True, help="forecast CSV path")

    e = sub.add_parser("evaluate", help="relative MSE/MAE against seasonal naive")
    common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint path, or 'naive' for the baseline itself")
    e.add_argument("--data", help="dataset file (default: synthetic holdout)")
    e.add_argument("--out", required=True, help="report directory")

    c = sub.add_parser("param-count", help="print parameter counts per module")
    common(c)
    c.add_argument("--preset", choices=["toy", "full"])
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.command)
        result = COMMANDS[args.command](args, cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except CliError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
