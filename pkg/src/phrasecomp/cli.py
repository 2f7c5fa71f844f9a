"""Command-line surface: train, grid, eval, ensemble, score, neighbors,
export.

Runs are configured by a flat key=value file plus CLI-flag overrides; the
resolved configuration is echoed (as ``# key=value`` lines on stderr) and
hashed into every report header, so any output can be traced back to the
exact run that produced it.  Exit codes: 0 success, 1 runtime error,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import dataclass, fields

from . import __version__
from .corpus import (
    build_counts,
    build_feature_table,
    parse_tuple_file,
    read_disambig_file,
    read_rating_file,
    select_candidates,
    split_corpus,
)
from .errors import ConfigError, CorpusFormatError, PhrasecompError
from .evaluation import (
    DISAMBIG_AVERAGED,
    DISAMBIG_PER_RATING,
    bootstrap_ci,
    ensemble_scores,
    eval_compositionality,
    eval_disambiguation,
    format_score,
    nearest_neighbors,
    spearman,
)
from .model import Model, atomic_write, export_text, load_model, save_model
from .trainer import TrainConfig, grid_search, train


@dataclass
class RunConfig:
    """Everything a run needs, as flat primitive values.

    Seeds are explicit (fixed defaults, never wall clock), so a config
    uniquely determines every output byte.
    """

    tuples: str = ""
    ratings: str = ""
    disambig: str = ""
    model_in: str = ""
    model_out: str = ""
    log_out: str = ""
    dump_out: str = ""
    report_out: str = ""
    dim: int = 25
    batch_size: int = 100
    learning_rate: float = 0.05
    l2_lambda: float = 1e-6
    threshold: int = 10
    max_epochs: int = 50
    seed: int = 1
    split: str = "0.8,0.1,0.1"
    fix_alpha: str = ""          # "" adaptive, else a float like 0.5 or 1.0
    negatives: str = "epoch"     # resample per epoch, or "fixed" once per run
    backend: str = "auto"
    bootstrap: int = 1000
    level: float = 0.95
    trace_phrases: str = ""      # "verb object,verb object,..."
    trace_out: str = ""

    def split_ratios(self) -> tuple[float, float, float]:
        parts = self.split.split(",")
        if len(parts) != 3:
            raise ConfigError(f"split must be three comma-separated ratios, got {self.split!r}")
        try:
            return tuple(float(p) for p in parts)  # type: ignore[return-value]
        except ValueError:
            raise ConfigError(f"split ratios must be numbers, got {self.split!r}") from None

    def fix_alpha_value(self) -> float | None:
        if self.fix_alpha == "":
            return None
        try:
            return float(self.fix_alpha)
        except ValueError:
            raise ConfigError(f"fix_alpha must be a number, got {self.fix_alpha!r}") from None

    def train_config(self) -> TrainConfig:
        if self.negatives not in ("epoch", "fixed"):
            raise ConfigError(f"negatives must be 'epoch' or 'fixed', got {self.negatives!r}")
        return TrainConfig(
            dim=self.dim,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            l2_lambda=self.l2_lambda,
            threshold=self.threshold,
            max_epochs=self.max_epochs,
            seed=self.seed,
            resample_negatives=self.negatives == "epoch",
            fix_alpha=self.fix_alpha_value(),
            backend=self.backend,
        )

    def items(self) -> list[tuple[str, str]]:
        return sorted((f.name, str(getattr(self, f.name))) for f in fields(self))

    def digest(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.items())
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


_INT_KEYS = {"dim", "batch_size", "threshold", "max_epochs", "seed", "bootstrap"}
_FLOAT_KEYS = {"learning_rate", "l2_lambda", "level"}


def load_config_file(path) -> RunConfig:
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    with open(path, "r", encoding="utf-8") as stream:
        for lineno, line in enumerate(stream, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _INT_KEYS:
                    setattr(cfg, key, int(value))
                elif key in _FLOAT_KEYS:
                    setattr(cfg, key, float(value))
                else:
                    setattr(cfg, key, value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return cfg


def _resolve_config(args) -> RunConfig:
    cfg = load_config_file(args.config) if getattr(args, "config", None) else RunConfig()
    for f in fields(RunConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            setattr(cfg, f.name, override)
    if not 0.0 < cfg.level < 1.0:
        raise ConfigError(f"level must be in (0, 1), got {cfg.level}")
    if cfg.bootstrap < 100:
        raise ConfigError(f"bootstrap must be >= 100 replicates, got {cfg.bootstrap}")
    return cfg


def _echo_config(cfg: RunConfig) -> None:
    for key, value in cfg.items():
        print(f"# {key}={value}", file=sys.stderr)


def _require_file(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"{what} path is not set")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _run_stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PhrasecompError as exc:
        raise type(exc)(f"{stage}: {exc}") from exc


def _report_header(cfg: RunConfig) -> list[str]:
    return [
        f"# phrasecomp {__version__}",
        f"# seed={cfg.seed}",
        f"# config={cfg.digest()}",
    ]


def _emit_report(cfg: RunConfig, lines: list[str]) -> None:
    text = "\n".join(_report_header(cfg) + lines) + "\n"
    sys.stdout.write(text)
    if cfg.report_out:
        atomic_write(cfg.report_out, text.encode("utf-8"))


def _write_text(path: str, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _parse_trace_phrases(cfg: RunConfig, corpus) -> list[tuple[int, int]]:
    track = []
    if cfg.trace_phrases:
        for chunk in cfg.trace_phrases.split(","):
            words = chunk.split()
            if len(words) != 2:
                raise ConfigError(f"trace phrase must be 'verb object', got {chunk!r}")
            track.append((corpus.lexicon.verbs.get(words[0]), corpus.lexicon.nouns.get(words[1])))
    return track


def _build_training_inputs(cfg: RunConfig):
    _require_file(cfg.tuples, "tuples")
    corpus = _run_stage("ingest", parse_tuple_file, cfg.tuples)
    corpus = _run_stage("split", split_corpus, corpus, cfg.split_ratios(), cfg.seed)
    _run_stage("count", build_counts, corpus)
    candidates = _run_stage("candidates", select_candidates, corpus, cfg.threshold)
    features = _run_stage("features", build_feature_table, corpus.lexicon, candidates)
    return corpus, candidates, features


def _training_log_text(cfg: RunConfig, result) -> str:
    lines = _report_header(cfg)
    lines.append("# epoch\ttrain_cost\tdev_score\tmean_alpha")
    for row in result.log:
        lines.append(f"{row.epoch}\t{row.train_cost:.10g}\t{row.dev_score:.10g}\t{row.mean_alpha:.10g}")
    return "\n".join(lines) + "\n"


def cmd_train(cfg: RunConfig, args) -> int:
    if not cfg.model_out:
        raise ConfigError("model_out path is not set")
    corpus, candidates, features = _build_training_inputs(cfg)
    track = _parse_trace_phrases(cfg, corpus)
    result = _run_stage("train", train, corpus, features, cfg.train_config(), track or None)
    model = Model(params=result.params, lexicon=corpus.lexicon, candidates=candidates, features=features)
    _run_stage("save", save_model, model, cfg.model_out)
    if cfg.log_out:
        _write_text(cfg.log_out, _training_log_text(cfg, result))
    if cfg.trace_out and track:
        names = [chunk.strip() for chunk in cfg.trace_phrases.split(",")]
        lines = _report_header(cfg)
        for epoch, alphas in result.alpha_trace:
            for name, alpha in zip(names, alphas):
                lines.append(f"{epoch}\t{name}\t{alpha:.10g}")
        _write_text(cfg.trace_out, "\n".join(lines) + "\n")
    print(
        f"trained {len(result.log)} epoch(s); best epoch {result.best_epoch} "
        f"(dev {result.best_score:.4f}); {len(candidates)} candidate phrases; "
        f"model -> {cfg.model_out}",
        file=sys.stderr,
    )
    return 0


def cmd_grid(cfg: RunConfig, args) -> int:
    rates = [float(x) for x in args.rates.split(",")] if args.rates else [cfg.learning_rate]
    lams = [float(x) for x in args.l2_grid.split(",")] if args.l2_grid else [cfg.l2_lambda]
    corpus, candidates, features = _build_training_inputs(cfg)
    result = _run_stage("grid", grid_search, corpus, features, cfg.train_config(), rates, lams)
    lines = []
    for cell in result.cells:
        lines.append(
            f"cell\t{cell.learning_rate:g}\t{cell.l2_lambda:g}\t{cell.dev_score:.10g}"
            f"\t{cell.best_epoch}\t{cell.epochs_run}"
        )
    best = result.best_config
    lines.append(f"best\t{best.learning_rate:g}\t{best.l2_lambda:g}\t{result.best_result.best_score:.10g}")
    _emit_report(cfg, lines)
    if cfg.model_out:
        model = Model(params=result.best_result.params, lexicon=corpus.lexicon,
                      candidates=candidates, features=features)
        _run_stage("save", save_model, model, cfg.model_out)
    return 0


def _dataset_tag(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _eval_comp(cfg: RunConfig, model: Model) -> tuple[list[str], dict[str, float]]:
    _require_file(cfg.ratings, "ratings")
    dataset = read_rating_file(cfg.ratings, tag=_dataset_tag(cfg.ratings))
    res = eval_compositionality(model, dataset)
    pairs = [(gold, alpha) for _, _, gold, alpha, _ in res.items]
    ci = bootstrap_ci(pairs, cfg.bootstrap, cfg.level, cfg.seed)
    line = f"comp\t{dataset.tag}\t{res.rho:.6f}\t{ci.lo:.6f}\t{ci.hi:.6f}\t{res.coverage:.4f}"
    return [line], res.score_table()


_MODE_NAMES = {"a": DISAMBIG_AVERAGED, "b": DISAMBIG_PER_RATING}


def _eval_disambig(cfg: RunConfig, model: Model, mode_flag: str) -> tuple[list[str], dict[str, float]]:
    _require_file(cfg.disambig, "disambig")
    dataset = read_disambig_file(cfg.disambig, tag=_dataset_tag(cfg.disambig))
    modes = ["a", "b"] if mode_flag == "both" else [mode_flag]
    lines = []
    table: dict[str, float] = {}
    for short in modes:
        res = eval_disambiguation(model, dataset, _MODE_NAMES[short])
        ci = bootstrap_ci(res.points, cfg.bootstrap, cfg.level, cfg.seed)
        lines.append(
            f"disambig-{_MODE_NAMES[short]}\t{dataset.tag}\t{res.rho:.6f}"
            f"\t{ci.lo:.6f}\t{ci.hi:.6f}\t{res.coverage:.4f}"
        )
        table = res.score_table()
    return lines, table


def cmd_eval(cfg: RunConfig, args) -> int:
    _require_file(cfg.model_in, "model")
    model = load_model(cfg.model_in)
    if args.task == "comp":
        lines, table = _eval_comp(cfg, model)
    else:
        lines, table = _eval_disambig(cfg, model, args.mode)
    _emit_report(cfg, lines)
    if cfg.dump_out:
        dump_lines = _report_header(cfg) + [f"{key}\t{score:.17g}" for key, score in table.items()]
        _write_text(cfg.dump_out, "\n".join(dump_lines) + "\n")
    return 0


def read_dump(path) -> dict[str, float]:
    """Per-item score dump: phrase<TAB>score lines, '#' comments."""
    table: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as stream:
        for lineno, line in enumerate(stream, start=1):
            stripped = line.rstrip("\r\n")
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.rpartition("\t")
            if not sep:
                raise CorpusFormatError(f"{path}:{lineno}: expected phrase<TAB>score")
            try:
                table[key] = float(value)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: score {value!r} is not a number") from None
    return table


def cmd_ensemble(cfg: RunConfig, args) -> int:
    if len(args.dumps) < 2:
        raise ConfigError("ensemble needs at least two dump files")
    tables = [read_dump(_require_file(p, "dump")) for p in args.dumps]
    merged, dropped = ensemble_scores(tables)
    tag = "ensemble:" + "+".join(_dataset_tag(p) for p in args.dumps)

    lines = []
    if args.task == "comp":
        _require_file(cfg.ratings, "ratings")
        dataset = read_rating_file(cfg.ratings, tag=_dataset_tag(cfg.ratings))
        points = []
        matched = 0
        for verb, obj, ratings in dataset.items:
            key = f"{verb} {obj}"
            if key in merged:
                matched += 1
                points.append((float(sum(ratings) / len(ratings)), merged[key]))
        if len(points) < 2:
            raise ConfigError("fewer than two rating items match the ensembled dumps")
        rho = spearman([p[0] for p in points], [p[1] for p in points])
        ci = bootstrap_ci(points, cfg.bootstrap, cfg.level, cfg.seed)
        lines.append(f"comp\t{tag}\t{rho:.6f}\t{ci.lo:.6f}\t{ci.hi:.6f}\t{matched / len(dataset.items):.4f}")
    else:
        _require_file(cfg.disambig, "disambig")
        dataset = read_disambig_file(cfg.disambig, tag=_dataset_tag(cfg.disambig))
        modes = ["a", "b"] if args.mode == "both" else [args.mode]
        for short in modes:
            points = []
            matched = 0
            for verb, subj, obj, landmark, ratings in dataset.groups:
                key = f"{verb} {subj} {obj} {landmark}"
                if key not in merged:
                    continue
                matched += 1
                if _MODE_NAMES[short] == DISAMBIG_AVERAGED:
                    points.append((float(sum(ratings) / len(ratings)), merged[key]))
                else:
                    points.extend((float(r), merged[key]) for r in ratings)
            if len(points) < 2:
                raise ConfigError("fewer than two disambiguation groups match the ensembled dumps")
            rho = spearman([p[0] for p in points], [p[1] for p in points])
            ci = bootstrap_ci(points, cfg.bootstrap, cfg.level, cfg.seed)
            lines.append(
                f"disambig-{_MODE_NAMES[short]}\t{tag}\t{rho:.6f}"
                f"\t{ci.lo:.6f}\t{ci.hi:.6f}\t{matched / len(dataset.groups):.4f}"
            )
    if dropped:
        lines.append(f"# dropped {len(dropped)} phrase(s) missing from some dump")
    if args.table:
        lines.extend(f"{key}\t{format_score(score)}" for key, score in merged.items())
    _emit_report(cfg, lines)
    if cfg.dump_out:
        dump_lines = _report_header(cfg) + [f"{key}\t{score:.17g}" for key, score in merged.items()]
        _write_text(cfg.dump_out, "\n".join(dump_lines) + "\n")
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    _require_file(cfg.model_in, "model")
    model = load_model(cfg.model_in)
    if args.per_verb is not None:
        from .evaluation import per_verb_average_alpha, per_verb_report

        averages = per_verb_average_alpha(model, min_object_types=args.per_verb)
        for line in per_verb_report(averages):
            print(line)
        return 0
    phrases = list(args.phrases)
    if args.phrases_file:
        with open(_require_file(args.phrases_file, "phrases"), "r", encoding="utf-8") as stream:
            phrases.extend(line.strip() for line in stream if line.strip() and not line.startswith("#"))
    if not phrases:
        raise ConfigError("no phrases given (pass 'verb object' arguments or --phrases-file)")
    for phrase in phrases:
        words = phrase.split()
        if len(words) != 2:
            raise ConfigError(f"a phrase is 'verb object', got {phrase!r}")
        alpha = model.phrase_alpha(words[0], words[1])
        print(f"{words[0]} {words[1]}\t{format_score(alpha)}")
    return 0


def cmd_neighbors(cfg: RunConfig, args) -> int:
    _require_file(cfg.model_in, "model")
    model = load_model(cfg.model_in)
    query = tuple(args.query.split())
    if len(query) not in (2, 3):
        raise ConfigError(f"query must be 'verb object' or 'subject verb object', got {args.query!r}")
    if args.pool:
        pool = []
        with open(_require_file(args.pool, "pool"), "r", encoding="utf-8") as stream:
            for line in stream:
                words = tuple(line.split())
                if words:
                    pool.append(words)
    else:
        if len(query) != 2:
            raise ConfigError("SVO queries need an explicit --pool file")
        lex = model.lexicon
        pool = [
            (lex.verbs.decode(int(v)), lex.nouns.decode(int(o)))
            for v, o in model.candidates.pairs
        ]
    for phrase, sim in nearest_neighbors(model, query, args.k, pool):
        print(f"{phrase}\t{sim:.6f}")
    return 0


def cmd_export(cfg: RunConfig, args) -> int:
    _require_file(cfg.model_in, "model")
    model = load_model(cfg.model_in)
    if args.out:
        import io

        buffer = io.StringIO()
        export_text(model, buffer)
        _write_text(args.out, buffer.getvalue())
    else:
        export_text(model, sys.stdout)
    return 0


def _add_config_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--tuples", help="tuple corpus path")
    sub.add_argument("--ratings", help="compositionality rating file")
    sub.add_argument("--disambig", help="disambiguation rating file")
    sub.add_argument("--model-in", dest="model_in", help="model file to load")
    sub.add_argument("--model-out", dest="model_out", help="model file to write")
    sub.add_argument("--log-out", dest="log_out", help="training log path")
    sub.add_argument("--dump-out", dest="dump_out", help="per-item score dump path")
    sub.add_argument("--report-out", dest="report_out", help="also write the report here")
    sub.add_argument("--dim", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--l2", dest="l2_lambda", type=float)
    sub.add_argument("--threshold", type=int, help="candidate threshold: keep phrases seen > this many times")
    sub.add_argument("--max-epochs", dest="max_epochs", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--split", help="train,dev,test ratios, e.g. 0.8,0.1,0.1")
    sub.add_argument("--fix-alpha", dest="fix_alpha", choices=["0.5", "1.0"],
                     help="freeze every compositionality score (baselines)")
    sub.add_argument("--negatives", choices=["epoch", "fixed"], help="resample corruptions per epoch, or once")
    sub.add_argument("--backend", choices=["auto", "c", "numpy"])
    sub.add_argument("--bootstrap", type=int, help="bootstrap replicates for confidence intervals")
    sub.add_argument("--level", type=float, help="confidence level, e.g. 0.95")
    sub.add_argument("--trace-phrases", dest="trace_phrases", help="'verb object,verb object' to trace")
    sub.add_argument("--trace-out", dest="trace_out", help="alpha trajectory output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phrasecomp",
        description="Train and probe adaptive verb-object phrase embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"phrasecomp {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("train", help="ingest, split, train, save a model")
    _add_config_options(sub)
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser("grid", help="hyperparameter grid search with early stopping")
    _add_config_options(sub)
    sub.add_argument("--rates", help="comma-separated learning rates, e.g. 0.01,0.02,0.05")
    sub.add_argument("--l2-grid", dest="l2_grid", help="comma-separated L2 coefficients")
    sub.set_defaults(func=cmd_grid)

    sub = commands.add_parser("eval", help="evaluate a model on a rating dataset")
    _add_config_options(sub)
    sub.add_argument("--task", choices=["comp", "disambig"], required=True)
    sub.add_argument("--mode", choices=["a", "b", "both"], default="both",
                     help="disambig rating handling: a=averaged, b=per rating")
    sub.set_defaults(func=cmd_eval)

    sub = commands.add_parser("ensemble", help="average score dumps and re-evaluate against gold")
    _add_config_options(sub)
    sub.add_argument("dumps", nargs="*", help="two or more per-item score dumps")
    sub.add_argument("--task", choices=["comp", "disambig"], required=True)
    sub.add_argument("--mode", choices=["a", "b", "both"], default="both")
    sub.add_argument("--table", action="store_true", help="also print the averaged scores (2 decimals)")
    sub.set_defaults(func=cmd_ensemble)

    sub = commands.add_parser("score", help="print compositionality scores for phrases")
    _add_config_options(sub)
    sub.add_argument("phrases", nargs="*", help="phrases as 'verb object' strings")
    sub.add_argument("--phrases-file", dest="phrases_file", help="file with one 'verb object' per line")
    sub.add_argument("--per-verb", dest="per_verb", type=int, metavar="MIN_OBJECTS",
                     help="instead: average score per verb with > MIN_OBJECTS candidate objects")
    sub.set_defaults(func=cmd_score)

    sub = commands.add_parser("neighbors", help="nearest phrases by embedding cosine")
    _add_config_options(sub)
    sub.add_argument("--query", required=True, help="'verb object' or 'subject verb object'")
    sub.add_argument("-k", type=int, default=5)
    sub.add_argument("--pool", help="file of candidate phrases, one per line (defaults to all candidates)")
    sub.set_defaults(func=cmd_neighbors)

    sub = commands.add_parser("export", help="dump model parameters as text")
    _add_config_options(sub)
    sub.add_argument("--out", help="output path (default: stdout)")
    sub.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        _echo_config(cfg)
        return args.func(cfg, args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"phrasecomp: error: {exc}", file=sys.stderr)
        return 2
    except PhrasecompError as exc:
        print(f"phrasecomp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
