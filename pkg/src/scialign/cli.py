"""Command-line entry points for every pipeline stage.

Commands: gen-data, train-reward, eval-reward, sft, oft, bench, ri-report,
lambda-sweep, ablate-oft.  Each command resolves configuration (defaults <
config file < --set overrides), writes a resolved snapshot into the run
directory, executes the stage, and appends one entry to the run ledger.
Stage outputs are append-only: re-running a stage that already produced
artifacts requires --force or a fresh run id.  Re-running gen-data with an
unchanged config detects the identical output and reports a no-op.
"""

from __future__ import annotations

import argparse
import io
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import dpo as dpo_mod
from . import flow as flow_mod
from . import reward_model as rm
from .adapters import DetectorClient, HttpJudge, SubjectClient
from .config import LAMBDA_SWEEP_GRID, ConfigError, RunConfig, load_config
from .sde import ChurnParams
from .world import World, WorldConfig, build_dataset, build_tuples, load_manifest


class CliError(RuntimeError):
    pass


def _ledger_append(cfg: RunConfig, command: str, artifacts: list[Path]) -> None:
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    entry = {
        "run_id": cfg["run_id"],
        "command": command,
        "config_hash": cfg.config_hash(),
        "artifacts": [str(p) for p in artifacts],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(run_dir / "ledger.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _prepare_stage(cfg: RunConfig, command: str, stage: str, force: bool) -> Path:
    stage_dir = cfg.run_dir / stage
    if stage_dir.exists() and any(stage_dir.iterdir()):
        if not force:
            raise CliError(
                f"stage directory {stage_dir} already has artifacts; "
                f"pass --force or use a new run id"
            )
        shutil.rmtree(stage_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_snapshot(cfg.run_dir / f"config_{command}.txt")
    return stage_dir


def _world_config(cfg: RunConfig) -> WorldConfig:
    return WorldConfig(
        seed=int(cfg["world.seed"]),
        train_per_combo=int(cfg["world.train_per_combo"]),
        test_per_combo=int(cfg["world.test_per_combo"]),
    )


def _manifest_text(world: World, wcfg: WorldConfig) -> str:
    buf = io.StringIO()
    tuples = build_tuples(world, wcfg)
    for i, t in enumerate(tuples):
        stem = f"{t.task_id}_{t.subject}_{t.condition.replace(' ', '-')}_{i:05d}"
        t.explicit_path = f"images/{stem}_e.png"
        t.superficial_path = f"images/{stem}_s.png"
        buf.write(json.dumps(t.to_record(), sort_keys=True) + "\n")
    return buf.getvalue()


def cmd_gen_data(cfg: RunConfig, args) -> list[Path]:
    world = World()
    wcfg = _world_config(cfg)
    dataset_dir = cfg.run_dir / "dataset"
    manifest_path = dataset_dir / "manifest.jsonl"
    if manifest_path.exists():
        if _manifest_text(world, wcfg) == manifest_path.read_text():
            print(f"gen-data: {manifest_path} already matches this config; no-op")
            return [dataset_dir]
        if not args.force:
            raise CliError(
                f"{manifest_path} exists with different content; pass --force "
                f"or use a new run id"
            )
        shutil.rmtree(dataset_dir)
    cfg.save_snapshot(cfg.run_dir / "config_gen-data.txt")
    manifest = build_dataset(world, wcfg, dataset_dir)
    counts = {s: len([t for t in manifest.tuples if t.split == s]) for s in manifest.splits}
    print(f"gen-data: wrote {len(manifest.tuples)} tuples to {dataset_dir} {counts}")
    return [dataset_dir]


def _load_dataset(cfg: RunConfig):
    dataset_dir = cfg.run_dir / "dataset"
    if not (dataset_dir / "manifest.jsonl").exists():
        raise CliError(f"no dataset at {dataset_dir}; run gen-data first")
    return load_manifest(dataset_dir)


def _reward_hyper(cfg: RunConfig) -> rm.RewardHyper:
    return rm.RewardHyper(
        batch_size=int(cfg["reward.batch_size"]),
        learning_rate=float(cfg["reward.learning_rate"]),
        weight_decay=float(cfg["reward.weight_decay"]),
        steps=int(cfg["reward.steps"]),
        warmup_steps=int(cfg["reward.warmup_steps"]),
        lambda_weight=float(cfg["reward.lambda_weight"]),
        schedule=str(cfg["reward.schedule"]),
        seed=int(cfg["reward.seed"]),
    )


def cmd_train_reward(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    stage = _prepare_stage(cfg, "train-reward", "reward", args.force)
    config = rm.DualEncoderConfig(
        vocab=manifest.vocabulary,
        embed_dim=int(cfg["reward.embed_dim"]),
        temperature_init=float(cfg["reward.temperature_init"]),
        seed=int(cfg["reward.seed"]),
    )
    model, _ = rm.train_reward_model(manifest, config, _reward_hyper(cfg),
                                     metrics_path=stage / "metrics.jsonl")
    ckpt = model.save(stage / "checkpoint.npz")
    print(f"train-reward: saved {ckpt}")
    return [ckpt, stage / "metrics.jsonl"]


def cmd_eval_reward(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.run_dir / "reward/checkpoint.npz"
    if not ckpt_path.exists():
        raise CliError(f"no reward checkpoint at {ckpt_path}")
    model = rm.RewardModel.load(ckpt_path)
    split = args.split or str(cfg["bench.split"])
    report = rm.evaluate_accuracy(model, manifest, split)
    out = cfg.run_dir / "reward" / f"eval_{split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    cfg.save_snapshot(cfg.run_dir / "config_eval-reward.txt")
    print(f"eval-reward[{split}]: overall={report.overall:.2f} "
          f"per_domain={report.per_domain}")
    return [out]


def _sft_hyper(cfg: RunConfig) -> flow_mod.SftHyper:
    return flow_mod.SftHyper(
        batch_size=int(cfg["sft.batch_size"]),
        learning_rate=float(cfg["sft.learning_rate"]),
        steps=int(cfg["sft.steps"]),
        grad_accum=int(cfg["sft.grad_accum"]),
        warmup_steps=int(cfg["sft.warmup_steps"]),
        seed=int(cfg["sft.seed"]),
        data_mode=str(cfg["sft.data_mode"]),
    )


def cmd_sft(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    tag = args.tag or "sft"
    stage = _prepare_stage(cfg, f"sft-{tag}" if tag != "sft" else "sft", tag, args.force)
    init_from = None
    init_path = str(cfg["sft.init_from"])
    if init_path:
        init_from = flow_mod.VelocityModel.load(init_path)
    config = flow_mod.VelocityModelConfig(vocab=manifest.vocabulary,
                                          seed=int(cfg["sft.seed"]))
    model, _ = flow_mod.train_sft(manifest, config, _sft_hyper(cfg),
                                  init_from=init_from,
                                  metrics_path=stage / "metrics.jsonl")
    ckpt = model.save(stage / "checkpoint.npz")
    print(f"sft[{tag}]: saved {ckpt}")
    return [ckpt, stage / "metrics.jsonl"]


def _oft_config(cfg: RunConfig) -> dpo_mod.OftConfig:
    return dpo_mod.OftConfig(
        beta=float(cfg["oft.beta"]),
        batch_size=int(cfg["oft.batch_size"]),
        learning_rate=float(cfg["oft.learning_rate"]),
        steps=int(cfg["oft.steps"]),
        grad_accum=int(cfg["oft.grad_accum"]),
        prompts_per_epoch=int(cfg["oft.prompts_per_epoch"]),
        prompt_pool_size=int(cfg["oft.prompt_pool_size"]),
        images_per_prompt=int(cfg["oft.images_per_prompt"]),
        n_sample_steps=int(cfg["oft.n_sample_steps"]),
        churn=ChurnParams(
            s_churn=float(cfg["oft.s_churn"]),
            s_min=float(cfg["oft.s_min"]),
            s_max=float(cfg["oft.s_max"]),
            s_noise=float(cfg["oft.s_noise"]),
        ),
        mask_padding=float(cfg["oft.mask_padding"]),
        use_mask=bool(cfg["oft.use_mask"]),
        step_subsample=cfg["oft.step_subsample"],
        eval_every=int(cfg["oft.eval_every"]),
        eval_prompts=int(cfg["oft.eval_prompts"]),
        eval_images_per_prompt=int(cfg["oft.eval_images_per_prompt"]),
        eval_n_steps=int(cfg["oft.eval_n_steps"]),
        seed=int(cfg["oft.seed"]),
    )


def _prompt_pool(manifest, size: int, seed: int) -> list[str]:
    prompts = sorted({t.implicit_prompt for t in manifest.split("train")})
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB00C]))
    if len(prompts) > size:
        idx = rng.choice(len(prompts), size=size, replace=False)
        prompts = [prompts[i] for i in sorted(idx)]
    return prompts


def _box_fn(args, world: World):
    if getattr(args, "detector_url", None):
        detector = DetectorClient(args.detector_url)
        if getattr(args, "subject_url", None):
            extractor = SubjectClient(args.subject_url)
            return lambda image, prompt: detector.best_box(image, extractor.extract(prompt))
        return lambda image, prompt: detector.best_box(image, world.subject_of(prompt))
    return None  # ground-truth detector


def cmd_oft(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    stage = _prepare_stage(cfg, "oft", args.tag or "oft", args.force)
    sft_path = Path(args.sft) if args.sft else cfg.run_dir / "sft/checkpoint.npz"
    reward_path = Path(args.reward) if args.reward else cfg.run_dir / "reward/checkpoint.npz"
    for path, name in ((sft_path, "sft"), (reward_path, "reward")):
        if not path.exists():
            raise CliError(f"missing upstream {name} checkpoint at {path}")
    sft_model = flow_mod.VelocityModel.load(sft_path)
    reward = rm.RewardModel.load(reward_path)
    oft_cfg = _oft_config(cfg)
    pool = _prompt_pool(manifest, oft_cfg.prompt_pool_size, oft_cfg.seed)
    model, _ = dpo_mod.oft_train(sft_model, reward, pool, oft_cfg,
                                 box_fn=_box_fn(args, World()),
                                 metrics_path=stage / "metrics.jsonl")
    ckpt = model.save(stage / "checkpoint.npz")
    print(f"oft: saved {ckpt}")
    return [ckpt, stage / "metrics.jsonl"]


def _generator_for(ckpt_path: Path, n_steps: int):
    model = flow_mod.VelocityModel.load(ckpt_path)

    def generate(prompt: str, seed: int):
        return flow_mod.ode_sample(model, prompt, n_steps, seed)

    return generate


def cmd_bench(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    world = World()
    split = args.split or str(cfg["bench.split"])
    tuples = manifest.split(split)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.run_dir / "sft/checkpoint.npz"
    if not ckpt_path.exists():
        raise CliError(f"no generator checkpoint at {ckpt_path}")
    model_id = args.model_id or ckpt_path.parent.name
    generator = _generator_for(ckpt_path, int(cfg["bench.n_steps"]))
    images_per_prompt = int(cfg["bench.images_per_prompt"])
    out_dir = cfg.run_dir / "bench"
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_snapshot(cfg.run_dir / "config_bench.txt")
    if args.prompt_source not in ("implicit", "explicit", "superficial"):
        raise CliError(f"unknown prompt source {args.prompt_source!r}")
    if args.score == "reward":
        reward_path = Path(args.reward) if args.reward else cfg.run_dir / "reward/checkpoint.npz"
        if not reward_path.exists():
            raise CliError(f"no reward checkpoint at {reward_path}")
        reward = rm.RewardModel.load(reward_path)
        score = bench_mod.reward_benchmark(
            generator, tuples, images_per_prompt, reward,
            seed=int(cfg["bench.seed"]), condition_source=args.prompt_source)
        out = out_dir / f"reward_{model_id}_{split}_{args.prompt_source}.json"
        out.write_text(json.dumps({
            "reward_score": score, "model_id": model_id, "split": split,
            "prompt_source": args.prompt_source,
            "images_per_prompt": images_per_prompt}, indent=2, sort_keys=True) + "\n")
        print(f"bench[reward,{args.prompt_source}] {model_id} on {split}: {score:.4f}")
        return [out]
    judge_kind = args.judge or str(cfg["bench.judge"])
    if judge_kind == "oracle":
        judge = bench_mod.OracleJudge(world)
    elif judge_kind == "http":
        url = args.judge_url or str(cfg["bench.judge_url"])
        if not url:
            raise CliError("http judge requested but no judge url configured")
        judge = HttpJudge(url)
    else:
        raise CliError(f"unknown judge {judge_kind!r}")
    report = bench_mod.run_benchmark(
        generator, tuples, images_per_prompt, judge, world,
        seed=int(cfg["bench.seed"]), model_id=model_id, split=split,
        condition_source=args.prompt_source)
    out = report.save(out_dir / f"report_{model_id}_{split}_{args.prompt_source}.json")
    print(f"bench[{judge_kind},{args.prompt_source}] {model_id} on {split}: "
          f"{report.normalized_overall:.2f} per_domain={report.per_domain}")
    return [out]


def _score_from(value: str) -> float:
    path = Path(value)
    if path.exists():
        payload = json.loads(path.read_text())
        for key in ("reward_score", "normalized_overall"):
            if key in payload:
                return float(payload[key])
        raise CliError(f"no score field in {path}")
    try:
        return float(value)
    except ValueError:
        raise CliError(f"{value!r} is neither a number nor an existing report") from None


def cmd_ri_report(cfg: RunConfig, args) -> list[Path]:
    base_ip = _score_from(args.base_ip)
    base_ep = _score_from(args.base_ep)
    fine_ip = _score_from(args.fine_ip)
    try:
        ri = bench_mod.relative_improvement(base_ip, base_ep, fine_ip)
    except ValueError as err:
        raise CliError(str(err)) from None
    out = cfg.run_dir / "ri_report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({
        "base_ip": base_ip, "base_ep": base_ep, "fine_ip": fine_ip,
        "relative_improvement": ri, "relative_improvement_pct": 100.0 * ri,
    }, indent=2, sort_keys=True) + "\n")
    cfg.save_snapshot(cfg.run_dir / "config_ri-report.txt")
    print(f"ri-report: RI = {100.0 * ri:.2f}%")
    return [out]


def cmd_lambda_sweep(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    stage = _prepare_stage(cfg, "lambda-sweep", "lambda_sweep", args.force)
    hyper = _reward_hyper(cfg)
    rows = []
    for lam in LAMBDA_SWEEP_GRID:
        hy = rm.RewardHyper(**{**hyper.__dict__, "lambda_weight": lam})
        config = rm.DualEncoderConfig(vocab=manifest.vocabulary,
                                      embed_dim=int(cfg["reward.embed_dim"]),
                                      temperature_init=float(cfg["reward.temperature_init"]),
                                      seed=int(cfg["reward.seed"]))
        model, _ = rm.train_reward_model(manifest, config, hy)
        row = {"lambda": lam}
        for split in ("test_simple", "test_complex"):
            row[split] = rm.evaluate_accuracy(model, manifest, split).overall
        rows.append(row)
        print(f"lambda-sweep: lambda={lam:<5} simple={row['test_simple']:.2f} "
              f"complex={row['test_complex']:.2f}")
    out = stage / "sweep.json"
    out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    width = max(len(f"{r['lambda']}") for r in rows)
    table = ["lambda".ljust(width) + "  test_simple  test_complex"]
    for r in rows:
        table.append(f"{str(r['lambda']).ljust(width)}  {r['test_simple']:11.2f}  "
                     f"{r['test_complex']:12.2f}")
    (stage / "sweep.txt").write_text("\n".join(table) + "\n")
    print("\n".join(table))
    return [out, stage / "sweep.txt"]


def cmd_ablate_oft(cfg: RunConfig, args) -> list[Path]:
    manifest = _load_dataset(cfg)
    stage = _prepare_stage(cfg, "ablate-oft", "ablate_oft", args.force)
    reward_path = Path(args.reward) if args.reward else cfg.run_dir / "reward/checkpoint.npz"
    sft_path = Path(args.sft) if args.sft else cfg.run_dir / "sft/checkpoint.npz"
    base_path = Path(args.base) if args.base else cfg.run_dir / "base/checkpoint.npz"
    for path, name in ((reward_path, "reward"), (sft_path, "sft"), (base_path, "base")):
        if not path.exists():
            raise CliError(f"missing upstream {name} checkpoint at {path}")
    reward = rm.RewardModel.load(reward_path)
    oft_cfg = _oft_config(cfg)
    pool = _prompt_pool(manifest, oft_cfg.prompt_pool_size, oft_cfg.seed)
    grid = {
        "sft_oft_masked": (sft_path, {"use_mask": True}),
        "oft_only": (base_path, {"use_mask": True}),
        "no_mask_standard_lr": (sft_path, {"use_mask": False}),
        "no_mask_half_lr": (sft_path, {"use_mask": False,
                                       "learning_rate": oft_cfg.learning_rate / 2}),
    }
    summary = {}
    artifacts = []
    for name, (start, patch) in grid.items():
        variant = dpo_mod.OftConfig(**{**oft_cfg.__dict__, **patch})
        start_model = flow_mod.VelocityModel.load(start)
        _, metrics = dpo_mod.oft_train(start_model, reward, pool, variant,
                                       metrics_path=stage / f"{name}.jsonl")
        evals = [(r["step"], r["eval_reward"]) for r in metrics.rows if "eval_reward" in r]
        summary[name] = {"start_eval": evals[0][1], "final_eval": evals[-1][1],
                         "curve": evals}
        artifacts.append(stage / f"{name}.jsonl")
        print(f"ablate-oft[{name}]: start={evals[0][1]:.4f} final={evals[-1][1]:.4f}")
    out = stage / "summary.json"
    out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    artifacts.append(out)
    return artifacts


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-reward": cmd_train_reward,
    "eval-reward": cmd_eval_reward,
    "sft": cmd_sft,
    "oft": cmd_oft,
    "bench": cmd_bench,
    "ri-report": cmd_ri_report,
    "lambda-sweep": cmd_lambda_sweep,
    "ablate-oft": cmd_ablate_oft,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scialign",
                                     description="science-alignment toy pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", default=None, help="config file path")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--force", action="store_true",
                       help="allow overwriting existing stage artifacts")

    for name in COMMANDS:
        p = sub.add_parser(name)
        common(p)
        if name == "eval-reward":
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--split", default=None)
        if name == "sft":
            p.add_argument("--tag", default=None, help="stage name (default sft)")
        if name == "oft":
            p.add_argument("--tag", default=None)
            p.add_argument("--sft", default=None, help="sft checkpoint path")
            p.add_argument("--reward", default=None, help="reward checkpoint path")
            p.add_argument("--detector-url", default=None)
            p.add_argument("--subject-url", default=None)
        if name == "bench":
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--model-id", default=None)
            p.add_argument("--split", default=None)
            p.add_argument("--judge", default=None, choices=(None, "oracle", "http"))
            p.add_argument("--judge-url", default=None)
            p.add_argument("--score", default="judge", choices=("judge", "reward"))
            p.add_argument("--reward", default=None)
            p.add_argument("--prompt-source", default="implicit")
        if name == "ri-report":
            p.add_argument("--base-ip", required=True)
            p.add_argument("--base-ep", required=True)
            p.add_argument("--fine-ip", required=True)
        if name == "ablate-oft":
            p.add_argument("--sft", default=None)
            p.add_argument("--reward", default=None)
            p.add_argument("--base", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 1
        key, value = item.split("=", 1)
        if key.strip() in overrides:
            print(f"error: duplicate override {key.strip()!r}", file=sys.stderr)
            return 1
        overrides[key.strip()] = value.strip()
    try:
        cfg = load_config(args.config, overrides)
        artifacts = COMMANDS[args.command](cfg, args)
        _ledger_append(cfg, args.command, artifacts)
    except (CliError, ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
