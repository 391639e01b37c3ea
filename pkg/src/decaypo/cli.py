"""Command-line entry point wiring all modules into reproducible runs.

One binary, one dispatch: train, build-pairs, sample, eval,
analyze {kl-position | ref-margin | prob-position | length-bias}, mdp-verify.
Exit codes: 0 success, 1 validation error (diagnostic names the key/flag),
2 runtime failure. All output files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, data, mdp
from .config import (ConfigError, Option, resolve, seed_substream,
                     write_resolved_snapshot)
from .losses import LossConfig, METHODS
from .model import PolicyModel, make_sequence, sample as sample_tokens, token_logprobs
from .schedules import KINDS as SCHEDULE_KINDS, DecaySchedule
from .training import (Checkpoint, TrainConfig, evaluate_winrate,
                       load_checkpoint, save_checkpoint, train)


def _atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _atomic_call(path, writer) -> None:
    """Run writer(tmp_path) then rename into place."""
    tmp = f"{path}.tmp.{os.getpid()}"
    writer(tmp)
    os.replace(tmp, path)


ARCH_OPTS = [
    Option("dim", "int", 64, help="model width"),
    Option("context", "int", 256, help="maximum context length"),
    Option("blocks", "int", 2, help="residual block count"),
]

LOSS_OPTS = [
    Option("method", "str", "d2po", help=f"one of {', '.join(METHODS)}"),
    Option("beta", "float", 0.1, help="implicit-reward temperature"),
    Option("schedule", "str", "exponential",
           help=f"decay schedule: {', '.join(SCHEDULE_KINDS)}"),
    Option("gamma", "float", 0.98, help="decay schedule parameter"),
    Option("origin", "str", "prompt_start",
           help="decay origin: prompt_start or answer_start"),
    Option("tau", "float", 0.1, help="ipo regularization"),
    Option("lambda-w", "float", 1.0, help="kto desirable weight"),
    Option("lambda-l", "float", 1.0, help="kto undesirable weight"),
    Option("lambda-orpo", "float", 1.0, help="orpo penalty weight"),
    Option("target-margin", "float", 0.0, help="simpo target margin"),
]

ORACLE_OPTS = [
    Option("oracle-kind", "str", "target_match"),
    Option("brevity-coefficient", "float", 0.0),
    Option("n-prompts", "int", 64),
    Option("min-target-len", "int", 4),
    Option("max-target-len", "int", 16),
]


def _loss_config(r: dict, root_seed: int) -> LossConfig:
    if r["schedule"] not in SCHEDULE_KINDS:
        raise ConfigError(f"key 'schedule': unknown schedule {r['schedule']!r}")
    if r["method"] not in METHODS:
        raise ConfigError(f"key 'method': unknown method {r['method']!r}")
    return LossConfig(
        method=r["method"], beta=r["beta"],
        schedule=DecaySchedule(kind=r["schedule"], gamma=r["gamma"], origin=r["origin"]),
        tau=r["tau"], lambda_w=r["lambda-w"], lambda_l=r["lambda-l"],
        lambda_orpo=r["lambda-orpo"], target_margin=r["target-margin"],
        sampo_seed=seed_substream(root_seed, "sampo"))


def _model_from(r: dict, key: str, root_seed: int) -> Checkpoint:
    if r.get(key):
        return load_checkpoint(r[key])
    model = PolicyModel(dim=r["dim"], context=r["context"], blocks=r["blocks"],
                        seed=seed_substream(root_seed, "init"))
    return Checkpoint(model=model, step=0, seed=model.seed)


def _oracle_from(r: dict):
    corpus = data.synthetic_corpus(
        r["n-prompts"], seed_substream(r["seed"], "data"),
        r["min-target-len"], r["max-target-len"])
    oracle = data.RewardOracle(kind=r["oracle-kind"], targets=corpus,
                               brevity_coefficient=r["brevity-coefficient"])
    return corpus, oracle


def _snapshot(r: dict, command: str) -> None:
    out = r.get("out")
    if out:
        write_resolved_snapshot(f"{out}.resolved.cfg", command, r)


# ---------------------------------------------------------------------------
# command runners

def _cmd_train(r: dict) -> int:
    pairs = data.load_pairs(r["pairs"])
    loss_cfg = _loss_config(r, r["seed"])
    cfg = TrainConfig(loss=loss_cfg, base_lr=r["base-lr"],
                      lr_multiplier=r["lr-multiplier"], batch_size=r["batch-size"],
                      warmup_fraction=r["warmup-fraction"], epochs=r["epochs"],
                      max_steps=r["max-steps"], seed=r["seed"],
                      max_response_len=r["max-response-len"],
                      weight_decay=r["weight-decay"], grad_clip=r["grad-clip"])
    init = _model_from(r, "init", r["seed"])
    reference = load_checkpoint(r["reference"]) if r.get("reference") else \
        Checkpoint(init.model.copy(), init.step, init.seed)
    ckpt, metrics = train(cfg, pairs, init, reference)
    skipped = sum(m.get("skipped", 0) for m in metrics)
    if skipped:
        print(f"warning: skipped {skipped} context-overflow examples", file=sys.stderr)
    lines = [json.dumps({"step": m["step"], "loss": m["loss"], "margin": m["margin"],
                         "grad_norm": m["grad_norm"], "lr": m["lr"]})
             for m in metrics]
    _atomic_write_text(r["metrics"], "".join(line + "\n" for line in lines))
    _atomic_call(r["out"], lambda p: save_checkpoint(ckpt, p))
    _snapshot(r, "train")
    return 0


def _cmd_build_pairs(r: dict) -> int:
    corpus, oracle = _oracle_from(r)
    ckpt = _model_from(r, "model", r["seed"])
    pairs, skipped = data.build_onpolicy_pairs(
        ckpt.model, oracle, list(corpus), K=r["k"], temperature=r["temperature"],
        seed=seed_substream(r["seed"], "sampling"), max_len=r["max-len"])
    _atomic_call(r["out"], lambda p: data.save_pairs(pairs, p))
    _snapshot(r, "build-pairs")
    print(json.dumps({"pairs": len(pairs), "skipped": skipped}))
    return 0


def _cmd_sample(r: dict) -> int:
    ckpt = load_checkpoint(r["model"])
    prompt = [256] + list(r["prompt"].encode("utf-8"))
    seq = sample_tokens(ckpt.model, prompt, r["temperature"], r["max-len"],
                        seed_substream(r["seed"], "sampling"))
    text = data.response_bytes(seq).decode("utf-8", errors="replace")
    if r.get("out"):
        _atomic_write_text(r["out"], text + "\n")
        _snapshot(r, "sample")
    print(text)
    return 0


def _cmd_eval(r: dict) -> int:
    _, oracle = _oracle_from(r)
    candidate = load_checkpoint(r["candidate"])
    baseline = load_checkpoint(r["baseline"])
    win, tie, lose = evaluate_winrate(
        candidate, baseline, oracle, list(oracle.targets), r["temperature"],
        seed_substream(r["seed"], "sampling"), max_len=r["max-len"])
    total = win + tie + lose
    result = {"win": win, "tie": tie, "lose": lose,
              "winrate": (win + tie / 2.0) / total if total else 0.0}
    if r.get("out"):
        _atomic_write_text(r["out"], json.dumps(result) + "\n")
        _snapshot(r, "eval")
    print(json.dumps(result))
    return 0


def _sequences(pairs, which: str = "chosen"):
    return [make_sequence(p.prompt, getattr(p, which)) for p in pairs]


def _cmd_kl_position(r: dict) -> int:
    policy = load_checkpoint(r["policy"]).model
    reference = load_checkpoint(r["reference"]).model
    pairs = data.load_pairs(r["pairs"])
    curve = analysis.kl_per_position(policy, reference, _sequences(pairs), r["max-pos"])
    _atomic_call(r["out"], lambda p: analysis.write_curve_csv(p, curve))
    _snapshot(r, "analyze-kl-position")
    return 0


def _cmd_prob_position(r: dict) -> int:
    model = load_checkpoint(r["model"]).model
    pairs = data.load_pairs(r["pairs"])
    curve = analysis.prob_per_position(model, _sequences(pairs), r["max-pos"])
    _atomic_call(r["out"], lambda p: analysis.write_curve_csv(p, curve))
    _snapshot(r, "analyze-prob-position")
    return 0


def _cmd_ref_margin(r: dict) -> int:
    reference = load_checkpoint(r["reference"]).model
    pairs = data.load_pairs(r["pairs"])
    hist = analysis.ref_margin_density(reference, pairs, r["bins"])
    _atomic_call(r["out"], lambda p: analysis.write_histogram_csv(p, hist))
    _snapshot(r, "analyze-ref-margin")
    return 0


def _cmd_length_bias(r: dict) -> int:
    policy = load_checkpoint(r["policy"]).model
    ref_model = load_checkpoint(r["reference"]).model if r.get("reference") else policy
    pairs = data.load_pairs(r["pairs"])
    cfg = _loss_config(r, r["seed"])
    scored = []
    for i, p in enumerate(pairs):
        seq_w = make_sequence(p.prompt, p.chosen)
        seq_l = make_sequence(p.prompt, p.rejected)
        if max(seq_w.prompt_len + seq_w.response_len,
               seq_l.prompt_len + seq_l.response_len) > policy.context:
            continue
        scored.append(analysis.PairScore(
            chosen_logps=token_logprobs(policy, seq_w),
            rejected_logps=token_logprobs(policy, seq_l),
            chosen_ref_logps=token_logprobs(ref_model, seq_w),
            rejected_ref_logps=token_logprobs(ref_model, seq_l),
            prompt_len=seq_w.prompt_len, example_id=i))
    rows = analysis.loss_by_length_gap(cfg, scored, r["gap-bins"])
    lines = ["gap_lo,gap_hi,mean_loss,count"]
    lines += [f"{row.gap_lo!r},{row.gap_hi!r},{row.mean_loss!r},{row.count}"
              for row in rows]
    _atomic_write_text(r["out"], "\n".join(lines) + "\n")
    _snapshot(r, "analyze-length-bias")
    return 0


def _cmd_mdp_verify(r: dict) -> int:
    lines = ["seed,gamma,delta1,delta2,delta3,subopt,term1,term2,bound,tv,holds"]
    violations = 0
    for seed in range(r["seeds"]):
        m = mdp.random_mdp(r["states"], r["actions"], r["horizon"],
                           r["reward-bound"], seed)
        pi_ref = mdp.uniform_policy(m)
        _, pi_star = mdp.soft_value_iteration(m, pi_ref, r["beta"], 1.0)
        for gamma in r["gammas"]:
            _, pi = mdp.soft_value_iteration(m, pi_ref, r["beta"], gamma)
            rep = mdp.suboptimality_bound(m, pi_star, pi, gamma)
            holds = int(rep.subopt <= rep.bound_total + 1e-9)
            violations += 1 - holds
            lines.append(",".join([
                str(seed), repr(gamma), repr(rep.delta1), repr(rep.delta2),
                repr(rep.delta3), repr(rep.subopt), repr(rep.bound_term1),
                repr(rep.bound_term2), repr(rep.bound_total),
                repr(rep.tv_expectation), str(holds)]))
    _atomic_write_text(r["out"], "\n".join(lines) + "\n")
    _snapshot(r, "mdp-verify")
    print(json.dumps({"rows": r["seeds"] * len(r["gammas"]),
                      "violations": violations}))
    return 0


COMMANDS = {
    "train": (
        LOSS_OPTS + ARCH_OPTS + [
            Option("pairs", "str", required=True, help="preference pairs JSONL"),
            Option("init", "str", help="initial checkpoint (fresh model if absent)"),
            Option("reference", "str", help="reference checkpoint (defaults to init)"),
            Option("out", "str", "model.ckpt"),
            Option("metrics", "str", "metrics.jsonl"),
            Option("base-lr", "float", 5e-7),
            Option("lr-multiplier", "float", 1e3),
            Option("batch-size", "int", 32),
            Option("warmup-fraction", "float", 0.10),
            Option("epochs", "int", 1),
            Option("max-steps", "int"),
            Option("seed", "int", 0),
            Option("max-response-len", "int", 256),
            Option("weight-decay", "float", 0.0),
            Option("grad-clip", "float"),
        ], _cmd_train),
    "build-pairs": (
        ARCH_OPTS + ORACLE_OPTS + [
            Option("model", "str", help="sampling checkpoint (fresh model if absent)"),
            Option("out", "str", "pairs.jsonl"),
            Option("k", "int", 5, help="samples per prompt"),
            Option("temperature", "float", 0.8),
            Option("max-len", "int", 256),
            Option("seed", "int", 0),
        ], _cmd_build_pairs),
    "sample": (
        [
            Option("model", "str", required=True),
            Option("prompt", "str", required=True),
            Option("temperature", "float", 0.8),
            Option("max-len", "int", 256),
            Option("seed", "int", 0),
            Option("out", "str"),
        ], _cmd_sample),
    "eval": (
        ORACLE_OPTS + [
            Option("candidate", "str", required=True),
            Option("baseline", "str", required=True),
            Option("temperature", "float", 0.8),
            Option("max-len", "int", 256),
            Option("seed", "int", 0),
            Option("out", "str"),
        ], _cmd_eval),
    "analyze-kl-position": (
        [
            Option("policy", "str", required=True),
            Option("reference", "str", required=True),
            Option("pairs", "str", required=True),
            Option("max-pos", "int", 64),
            Option("out", "str", "kl_position.csv"),
            Option("seed", "int", 0),
        ], _cmd_kl_position),
    "analyze-prob-position": (
        [
            Option("model", "str", required=True),
            Option("pairs", "str", required=True),
            Option("max-pos", "int", 64),
            Option("out", "str", "prob_position.csv"),
            Option("seed", "int", 0),
        ], _cmd_prob_position),
    "analyze-ref-margin": (
        [
            Option("reference", "str", required=True),
            Option("pairs", "str", required=True),
            Option("bins", "int", 20),
            Option("out", "str", "ref_margin.csv"),
            Option("seed", "int", 0),
        ], _cmd_ref_margin),
    "analyze-length-bias": (
        LOSS_OPTS + [
            Option("policy", "str", required=True),
            Option("reference", "str"),
            Option("pairs", "str", required=True),
            Option("gap-bins", "ints", [-64, -16, -4, 0, 4, 16, 64]),
            Option("out", "str", "length_bias.csv"),
            Option("seed", "int", 0),
        ], _cmd_length_bias),
    "mdp-verify": (
        [
            Option("seeds", "int", 100),
            Option("gammas", "floats", [0.5, 0.9, 0.95, 0.98, 1.0]),
            Option("states", "int", 4),
            Option("actions", "int", 3),
            Option("horizon", "int", 8),
            Option("reward-bound", "float", 1.0),
            Option("beta", "float", 0.3),
            Option("out", "str", "mdp_verify.csv"),
            Option("seed", "int", 0),
        ], _cmd_mdp_verify),
}

_ANALYZE = {
    "kl-position": "analyze-kl-position",
    "prob-position": "analyze-prob-position",
    "ref-margin": "analyze-ref-margin",
    "length-bias": "analyze-length-bias",
}

_ARG_TYPES = {"int": int, "float": float, "str": str}


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage errors as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _add_options(parser: argparse.ArgumentParser, options) -> None:
    parser.add_argument("--config", default=None,
                        help="configuration file (flags override file values)")
    for opt in options:
        if opt.typ in _ARG_TYPES:
            typ = _ARG_TYPES[opt.typ]
        elif opt.typ == "floats":
            typ = lambda s: [float(v) for v in s.split(",") if v.strip()]
        else:
            typ = lambda s: [int(v) for v in s.split(",") if v.strip()]
        parser.add_argument(f"--{opt.name}", type=typ, default=None, help=opt.help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decaypo",
                     description="Preference-optimization laboratory with "
                                 "temporally decayed token weighting")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "build-pairs", "sample", "eval", "mdp-verify"):
        _add_options(sub.add_parser(name, prog=f"decaypo {name}"), COMMANDS[name][0])
    analyze = sub.add_parser("analyze")
    asub = analyze.add_subparsers(dest="analysis", required=True)
    for short, full in _ANALYZE.items():
        _add_options(asub.add_parser(short, prog=f"decaypo analyze {short}"),
                     COMMANDS[full][0])
    return parser


def run_command(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    if command == "analyze":
        command = _ANALYZE[args.analysis]
    options, runner = COMMANDS[command]
    cli_values = {o.name: getattr(args, o.name.replace("-", "_")) for o in options}
    resolved = resolve(command, options, cli_values, args.config)
    return runner(resolved)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        return run_command(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
