"""Command-line entry point (``selfplay-wm``)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import env_configs, load_config, policy_spec, section
from .envs import EnvConfig, EnvKind, generate, render_symbols
from .errors import SelfPlayError
from .evaluation import (
    EvalSuite,
    RemoteLogProbProvider,
    UniformLogProbProvider,
    lift_suite,
    pass_at_k_oracle,
    ppl_of_lines,
    random_walk_success_probability,
    run_eval,
    uniform_for,
    write_report,
)
from .llm_client import ChatClient
from .pipeline import build_dataset, collect_triples, load_trajectory, reachable_pairs, write_dataset
from .utils import derive_seed, read_jsonl, sha256_file, write_json, write_jsonl
from .world_model import TransitionModel

log = logging.getLogger("selfplay_wm")


def _out_dir(args, cfg, command: str) -> Path:
    out = Path(args.out or cfg.get("out") or Path("runs") / command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, cfg: dict, files: Sequence[str], extra: Optional[dict] = None) -> None:
    write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": cfg,
        "files": {name: sha256_file(out / name) for name in files},
        **(extra or {}),
    })


def _instances(cfg: dict, count, seed: int):
    """``count`` may be an int (derived seeds) or an explicit seed list."""
    configs = env_configs(cfg)
    if isinstance(count, int):
        seeds = [derive_seed(seed, 1, i) for i in range(count)]
    else:
        seeds = [int(s) for s in count]
    return [(c, s) for c in configs for s in seeds]


# -- commands -------------------------------------------------------------


def cmd_gen_data(args, cfg) -> int:
    ds = section(cfg, "dataset")
    out = _out_dir(args, cfg, "gen-data")
    result = build_dataset(
        env_configs(cfg), policy_spec(cfg), ds["mode"], ds["target_count"], seed=cfg["seed"],
        template_mode=ds["template_mode"], with_coordinates=ds["with_coordinates"],
        strict=ds["strict_format"], jobs=cfg["jobs"], max_episodes=ds["max_episodes"])
    result.manifest["config"] = {k: v for k, v in cfg.items() if k not in ("jobs", "out")}
    write_dataset(result, out)
    print(f"kept {len(result.records)} rejected {len(result.rejected)} -> {out / 'dataset.jsonl'}")
    return 0


def cmd_eval(args, cfg) -> int:
    ev = section(cfg, "eval")
    out = _out_dir(args, cfg, "eval")
    spec = policy_spec(cfg)
    suite = EvalSuite(_instances(cfg, ev["instances"], cfg["seed"]), ev["n"], tuple(ev["k_values"]),
                      spec, seed=cfg["seed"])
    model = None
    if spec.variant == "planner":
        table = section(cfg, "worldmodel")["table"]
        if not table:
            raise SelfPlayError("planner policy needs worldmodel.table")
        model = TransitionModel.load(table)
    report, _ = run_eval(suite, model=model, jobs=cfg["jobs"])
    write_report(report, out)
    extra = {}
    if spec.variant == "random" and ev["dp_oracle"]:
        probs = [random_walk_success_probability(generate(c, s)) for c, s in suite.instances]
        oracle = {str(k): sum(pass_at_k_oracle(p, k) for p in probs) / len(probs) for k in suite.k_values}
        extra["dp_oracle_pass_at_k"] = oracle
        write_json(out / "dp_oracle.json", oracle)
    files = ["report.json", "instances.csv", "pass_at_k.csv"] + (["dp_oracle.json"] if extra else [])
    _manifest(out, "eval", cfg, files)
    for k, v in report.pass_at.items():
        line = f"pass@{k} {v:.4f}"
        if extra:
            line += f" (dp oracle {extra['dp_oracle_pass_at_k'][str(k)]:.4f})"
        print(line)
    return 0


def _triples_rows(triples):
    return [{"state": s, "action": a, "next_state": s2} for s, a, s2 in triples]


def _read_triples(path):
    return [(r["state"], r["action"], r["next_state"]) for r in read_jsonl(path)]


def cmd_wm_fit(args, cfg) -> int:
    wm = section(cfg, "worldmodel")
    out = _out_dir(args, cfg, "worldmodel-fit")
    instances = _instances(cfg, wm["instances"], cfg["seed"])
    kinds = {c.kind for c, _ in instances}
    if len(kinds) != 1:
        raise SelfPlayError("fit one environment kind per table")
    triples = []
    for i, (c, s) in enumerate(instances):
        required = reachable_pairs(generate(c, s)) if wm["coverage"] else None
        budget = 10 ** 6 if wm["coverage"] else max(1, wm["steps"] // (len(instances) * c.max_turns))
        got, _ = collect_triples(c, s, budget, derive_seed(cfg["seed"], 2, i), required=required,
                                 explore_starts=bool(wm["coverage"]))
        triples += got
    model = TransitionModel(kind=kinds.pop().value).fit(triples)
    model.save(out / "table.tsv")
    write_jsonl(out / "triples.jsonl", _triples_rows(triples))
    _manifest(out, "worldmodel fit", cfg, ["table.tsv", "triples.jsonl"],
              {"entries": model.n_entries_, "triples": len(triples), "deterministic": model.is_deterministic_})
    print(f"{len(triples)} triples, {model.n_entries_} entries, deterministic={model.is_deterministic_}")
    return 0


def cmd_wm_accuracy(args, cfg) -> int:
    wm = section(cfg, "worldmodel")
    if not wm["table"] or not wm["heldout"]:
        raise SelfPlayError("set worldmodel.table and worldmodel.heldout")
    out = _out_dir(args, cfg, "worldmodel-accuracy")
    acc = TransitionModel.load(wm["table"]).score(_read_triples(wm["heldout"]))
    write_json(out / "accuracy.json", {"accuracy": acc})
    _manifest(out, "worldmodel accuracy", cfg, ["accuracy.json"])
    print(f"accuracy {acc:.6f}")
    return 0


def cmd_wm_plan_eval(args, cfg) -> int:
    wm = section(cfg, "worldmodel")
    out = _out_dir(args, cfg, "worldmodel-plan-eval")
    report = lift_suite(wm["num_instances"], wm["n_random"], seed=cfg["seed"], jobs=cfg["jobs"])
    write_json(out / "lift.json", report.to_dict())
    _manifest(out, "worldmodel plan-eval", cfg, ["lift.json"])
    print(f"planner pass@1 {report.planner_pass1:.4f}; random pass@k "
          + ", ".join(f"{k}:{v:.4f}" for k, v in report.random_pass_at.items())
          + f"; lift {'holds' if report.lift else 'FAILS'}")
    return 0 if report.lift else 1


def _ppl_texts(pp: dict, seed: int) -> list[str]:
    if pp["input"]:
        blocks = Path(pp["input"]).read_text(encoding="utf-8").split("\n\n")
        return [b.strip("\n") for b in blocks if b.strip()]
    cfg = EnvConfig(pp["kind"])
    return [render_symbols(generate(cfg, derive_seed(seed, 3, i))) for i in range(pp["generate"])]


def cmd_ppl(args, cfg) -> int:
    pp = section(cfg, "ppl")
    out = _out_dir(args, cfg, "ppl")
    kind = EnvKind.parse(pp["kind"])
    if pp["provider"] == "uniform":
        provider = UniformLogProbProvider(pp["vocab_size"]) if pp["vocab_size"] else uniform_for(kind)
    elif pp["provider"] == "remote":
        spec = policy_spec(cfg)
        provider = RemoteLogProbProvider(ChatClient(spec.base_url, spec.model, api_key_env=spec.api_key_env,
                                                    timeout=spec.timeout, max_retries=spec.max_retries))
    else:
        raise SelfPlayError(f"unknown ppl provider {pp['provider']!r}")
    result = ppl_of_lines(_ppl_texts(pp, cfg["seed"]), provider, pp["unit"],
                          kind if pp["unit"] == "symbol" else None)
    write_json(out / "ppl.json", result)
    _manifest(out, "ppl", cfg, ["ppl.json"])
    print(f"mean ppl {result['mean_ppl']:.6g} over {result['count']} texts")
    return 0


def cmd_play_trace(args, cfg) -> int:
    rows = read_jsonl(args.trace)
    if not 0 <= args.index < len(rows):
        raise SelfPlayError(f"trajectory index {args.index} out of range (0..{len(rows) - 1})")
    traj = rows[args.index]
    print(f"env={traj['env']['kind']} seed={traj['seed']} policy={traj['policy']} "
          f"end={traj['end_reason']} success={traj['final_success']}")
    for i, t in enumerate(load_trajectory(traj), 1):
        print(f"\n=== Turn {i} ===")
        print(t["state_text"])
        print("--- output ---")
        print(t["raw_output"])
        print(f"--- actions: {' || '.join(t['actions'] or [])} | reward {t['reward']:g}"
              + (f" | error {t['error']}" if t["error"] else ""))
    if traj["turns"] and traj["turns"][-1]["state_after"]:
        print("\n=== Final ===")
        print(traj["turns"][-1]["state_after"]["grid"])
    return 0


# -- parser ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (dotted path, YAML value); repeatable")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfplay-wm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="collect trajectories and write a masked SFT dataset")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("eval", help="Pass@k and efficiency statistics for a policy")
    _common(p)
    p.set_defaults(func=cmd_eval)

    wm = sub.add_parser("worldmodel", help="tabular transition model")
    wsub = wm.add_subparsers(dest="wm_command", required=True)
    for name, func, text in (("fit", cmd_wm_fit, "fit a table on random self-play"),
                             ("accuracy", cmd_wm_accuracy, "held-out successor accuracy"),
                             ("plan-eval", cmd_wm_plan_eval, "planner vs random Pass@k lift suite")):
        p = wsub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("ppl", help="perplexity of state texts")
    _common(p)
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("play-trace", help="print a stored trajectory turn by turn")
    _common(p)
    p.add_argument("trace", help="trajectories.jsonl")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_play_trace)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        if args.out is not None:
            cfg["out"] = args.out
        return args.func(args, cfg)
    except (SelfPlayError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
