"""Command line: gen-corpus, train, eval, ablate, selfcheck.

Configuration is a flat UTF-8 file of ``key = value`` lines (``#`` starts a
comment). Flags override the file; the file overrides the defaults below.
Every command writes into a fresh timestamped directory under ``--out`` and
echoes the resolved configuration there as ``config.txt``.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error,
3 numerical failure (including a failed self-check).
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import CorpusSpec, generate_corpus, load_corpus, make_splits, random_split_spec, save_corpus
from .errors import DegeneratePair, ExhaustionError, FormatError, NumericalError, ValidationError
from .model import (
    Hyperparams,
    init_encoder,
    load_checkpoint,
    pretrain_classifier,
    save_checkpoint,
    train,
    write_training_log,
)
from .retrieval import (
    AblationConfig,
    build_questions,
    corpus_features,
    curve_rows,
    evaluate,
    question_hash,
    run_ablation,
    write_ablation_svg,
    write_audit_csv,
    write_recall_svg,
    write_results_csv,
)

log = logging.getLogger("analogylab")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    # corpus
    num_categories: int = 12
    num_properties: int = 8
    exemplars_per_cell: int = 6
    image_size: int = 24
    jitter_px: float = 2.0
    jitter_scale: float = 0.1
    noise: float = 0.05
    # splits
    n_unseen_categories: int = 2
    n_heldout_types: int = 6
    test_exemplars: int = 2
    split_seed: int = 0
    # training
    loss_mode: str = "double"
    m: float = 0.4
    m_pos: float = 0.2
    m_neg: float = 0.4
    lr: float = 0.05
    lr_decay: float = 0.5
    decay_every: float = 0.25
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 5000
    freeze_mode: str = "fc_plus_lastconv"
    pos_fraction: float = 0.5
    hard_fraction: float = 0.5
    classifier_steps: int = 1500
    # evaluation
    n_questions: int = 1000
    distractor_sizes: tuple = (100,)
    ks: tuple = (1, 2, 5, 10, 20, 50)
    regimes: tuple = ("seen", "unseen")
    unseen_mode: str = "types"
    # ablation
    seeds: tuple = (0, 1, 2)
    # run
    seed: int = 0
    threads: int = 1

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            num_categories=self.num_categories,
            num_properties=self.num_properties,
            exemplars_per_cell=self.exemplars_per_cell,
            image_size=self.image_size,
            jitter_px=self.jitter_px,
            jitter_scale=self.jitter_scale,
            noise=self.noise,
            seed=self.seed,
        )

    def hyper(self) -> Hyperparams:
        names = {f.name for f in fields(Hyperparams)}
        return Hyperparams(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def render(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"


def _convert(name: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(t) for t in items)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        return type(default)(text)
    except ValueError as exc:
        raise ValidationError(f"config key {name!r}: cannot parse {text!r}") from exc


def parse_config_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base or RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _convert(key, value, getattr(cfg, key))
    return dataclasses.replace(cfg, **updates)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# flag name -> config key, for the per-command overrides
FLAG_KEYS = {
    "seed": "seed",
    "threads": "threads",
    "loss": "loss_mode",
    "m": "m",
    "mp": "m_pos",
    "mn": "m_neg",
    "freeze": "freeze_mode",
    "steps": "steps",
    "distractors": "distractor_sizes",
    "n_questions": "n_questions",
    "unseen_mode": "unseen_mode",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = _convert(key, value, getattr(cfg, key)) if isinstance(value, str) else value
    cfg = dataclasses.replace(cfg, **updates)
    if cfg.threads < 1:
        raise ValidationError("threads must be >= 1")
    cfg.hyper()  # validates margins and optimiser settings up front
    cfg.corpus_spec()
    return cfg


def make_run_dir(out: str, command: str, cfg: RunConfig) -> Path:
    stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run = Path(out) / f"{command}-{stamp}"
    run.mkdir(parents=True, exist_ok=False)
    (run / "config.txt").write_text(cfg.render(), encoding="utf-8")
    return run


def _corpus(args, cfg: RunConfig):
    if getattr(args, "corpus", None):
        path = Path(args.corpus)
        if not path.is_file():
            raise FileNotFoundError(f"corpus file not found: {path}")
        return load_corpus(path)
    return generate_corpus(cfg.corpus_spec())


def _splits(corpus, cfg: RunConfig):
    split = random_split_spec(
        corpus.spec, cfg.n_unseen_categories, cfg.n_heldout_types, cfg.test_exemplars, cfg.split_seed
    )
    return make_splits(corpus, split)


def _checkpoint(path: str, corpus):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint file not found: {p}")
    return load_checkpoint(p, expected=init_encoder(corpus.spec.image_size))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args, cfg: RunConfig, run: Path) -> int:
    corpus = generate_corpus(cfg.corpus_spec())
    path = run / "corpus.vslc"
    save_corpus(corpus, path)
    print(f"{len(corpus)} images -> {path}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, run: Path) -> int:
    corpus = _corpus(args, cfg)
    splits = _splits(corpus, cfg)
    if args.baseline == "classifier":
        params = pretrain_classifier(splits, steps=cfg.classifier_steps, seed=cfg.seed)
        save_checkpoint(params, run / "classifier.vslg")
        print(f"classifier baseline -> {run / 'classifier.vslg'}")
        return EXIT_OK
    hyper = cfg.hyper()
    every = max(1, hyper.steps // 10)

    def progress(row):
        if row.step % every == 0 or row.step == hyper.steps - 1:
            print(
                f"step {row.step:5d}  loss {row.loss:.4f}  pos {row.pos_dist_mean:.3f}  neg {row.neg_dist_mean:.3f}",
                flush=True,
            )

    params, rows = train(splits, hyper, progress=progress)
    save_checkpoint(params, run / "checkpoint.vslg")
    write_training_log(rows, run / "training_log.csv")
    print(f"checkpoint -> {run / 'checkpoint.vslg'}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, run: Path) -> int:
    corpus = _corpus(args, cfg)
    splits = _splits(corpus, cfg)
    if args.baseline == "random":
        features, arm = None, "random"
    else:
        if args.checkpoint:
            params = _checkpoint(args.checkpoint, corpus)
        elif args.baseline == "classifier":
            params = pretrain_classifier(splits, steps=cfg.classifier_steps, seed=cfg.seed)
        else:
            raise ValidationError("eval needs --checkpoint, or --baseline classifier|random")
        features = corpus_features(corpus, params, splits.channel_means)
        arm = args.baseline or "model"
    rows = []
    for regime in cfg.regimes:
        curves = {}
        for n in cfg.distractor_sizes:
            rng = np.random.default_rng([cfg.seed, n, 0 if regime == "seen" else 1])
            qs = build_questions(splits, regime, cfg.n_questions, n, rng, cfg.unseen_mode)
            ks = [k for k in cfg.ks if k <= n + 1]
            curve = evaluate(features, qs, ks, rng=np.random.default_rng([cfg.seed, n, 2]))
            curves[f"D={n}"] = curve
            rows += curve_rows(curve, regime, arm if arm != "model" else cfg.loss_mode, cfg.freeze_mode, cfg.seed)
            write_audit_csv(curve, run / f"audit_{regime}_{n}.csv")
            summary = "  ".join(f"r@{k}={curve.at(k):.3f}" for k in ks)
            print(f"{regime:6s} D={n:<5d} questions {question_hash(qs)}  {summary}")
        write_recall_svg(curves, run / f"recall_{regime}.svg", title=f"{arm}, {regime}")
    write_results_csv(rows, run / "results.csv")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig, run: Path) -> int:
    corpus = _corpus(args, cfg)
    config = AblationConfig(
        corpus=corpus.spec,
        n_unseen_categories=cfg.n_unseen_categories,
        n_heldout_types=cfg.n_heldout_types,
        test_exemplars=cfg.test_exemplars,
        split_seed=cfg.split_seed,
        hyper=cfg.hyper(),
        seeds=cfg.seeds,
        regimes=cfg.regimes,
        unseen_mode=cfg.unseen_mode,
        n_questions=cfg.n_questions,
        distractor_size=cfg.distractor_sizes[0],
        ks=cfg.ks,
    )
    report = run_ablation(config, corpus=corpus, progress=lambda s: print(s, flush=True))
    for (seed, regime), h in sorted(report.question_hashes.items()):
        print(f"questions seed {seed} {regime}: {h}")
    write_results_csv(report.rows, run / "ablation.csv")
    write_ablation_svg(report, run / "ablation.svg", cfg.regimes)
    k = 10 if 10 in cfg.ks else cfg.ks[-1]
    for regime in cfg.regimes:
        for lm in config.loss_modes:
            for fm in config.freeze_modes:
                print(f"{regime:6s} {lm:6s} {fm:17s} mean r@{k} = {report.mean_recall(regime, lm, fm, k):.4f}")
    return EXIT_OK


def cmd_selfcheck(args, cfg: RunConfig, run: Path) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck(corrupt_layer=args.corrupt_layer)
    lines = [f"{'PASS' if r.ok else 'FAIL'}  {r.name} ({r.seconds:.1f}s): {r.detail}" for r in results]
    print("\n".join(lines))
    (run / "selfcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERICAL


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selfcheck": cmd_selfcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="analogylab", description="Visual-analogy embedding lab.")
    sub = parser.add_subparsers(dest="command", required=True)
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat 'key = value' config file")
    shared.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
    shared.add_argument("--out", default="runs", help="parent directory for the run directory")
    shared.add_argument("--threads", type=int, help="BLAS thread cap (default 1)")

    sub.add_parser("gen-corpus", parents=[shared], help="render and save a corpus")

    p = sub.add_parser("train", parents=[shared], help="train an encoder")
    p.add_argument("--corpus", help="corpus file (default: render from config)")
    p.add_argument("--loss", choices=["single", "double"])
    p.add_argument("--m", type=float, help="single margin")
    p.add_argument("--mp", type=float, help="positive margin (double)")
    p.add_argument("--mn", type=float, help="negative margin (double)")
    p.add_argument("--freeze", choices=["fc_only", "fc_plus_lastconv", "all"])
    p.add_argument("--steps", type=int)
    p.add_argument("--baseline", choices=["classifier"], help="pretrain the classifier baseline instead")

    p = sub.add_parser("eval", parents=[shared], help="recall@k curves")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["classifier", "random"])
    p.add_argument("--distractors", help="comma-separated distractor sizes, e.g. 100,500,1000,2000")
    p.add_argument("--n-questions", dest="n_questions", type=int)
    p.add_argument("--unseen-mode", dest="unseen_mode", choices=["types", "categories"])

    p = sub.add_parser("ablate", parents=[shared], help="single/double x freeze-mode grid")
    p.add_argument("--corpus")
    p.add_argument("--steps", type=int)
    p.add_argument("--n-questions", dest="n_questions", type=int)
    p.add_argument("--unseen-mode", dest="unseen_mode", choices=["types", "categories"])

    p = sub.add_parser("selfcheck", parents=[shared], help="gradient, loss and sampler checks")
    p.add_argument("--corrupt-layer", dest="corrupt_layer", help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        for attr in ("corpus", "checkpoint"):
            path = getattr(args, attr, None)
            if path and not Path(path).is_file():
                raise FileNotFoundError(f"{attr} file not found: {path}")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            run = make_run_dir(args.out, args.command, cfg)
            print(f"run directory: {run}")
            return COMMANDS[args.command](args, cfg, run)
    except (ValidationError, ExhaustionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, DegeneratePair) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
