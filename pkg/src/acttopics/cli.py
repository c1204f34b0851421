"""Command-line pipeline: ingest -> fit -> assign -> eval.

Every command is reproducible: with identical inputs, flags and --seed the
output files are byte-identical across runs (the run manifest is the one
exception; it records wall-clock time). All randomness flows from the single
--seed; derived seeds use fixed offsets (chain i of a multi-chain fit uses
seed + i, fold-in during assign uses the command's own --seed).

Exit codes: 0 success, 2 input/format error, 3 numerical or degeneracy error.

Options can also come from a config file (--config) of `key = value` lines,
where keys are the long option names; explicit flags win over the config.
The ACTTOPICS_OUTDIR environment variable supplies the default --out-dir for
eval reports.
"""

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__, catmix, evaluation, lda
from .corpus import (
    Corpus,
    corpus_from_actfile,
    corpus_from_actfile_topk,
    corpus_from_labfile,
    load_corpus,
    save_corpus,
)
from .errors import DegenerateTopicError, IngestError, LoadError

logger = logging.getLogger(__name__)

OUTDIR_ENV = "ACTTOPICS_OUTDIR"


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 2."""


@dataclass
class RunConfig:
    """Resolved settings for one command, as recorded in the run manifest."""

    command: str
    actfile: str | None = None
    labfile: str | None = None
    corpus: str | None = None
    model_file: str | None = None
    assignments: str | None = None
    class_names: str | None = None
    threshold: float | None = None
    top_k: int | None = None
    model: str | None = None
    topics: int | None = None
    alpha: str | None = None
    gamma: str | None = None
    smoothing: float = 1e-6
    tol: float = 1e-6
    max_iter: int = 500
    burn_in: int = 200
    samples: int = 10
    thin: int = 10
    sweeps: int = 100
    chains: int = 1
    seed: int = 0
    out: str | None = None
    out_dir: str | None = None
    report_format: str = "text"
    normalize: bool = False
    label_order: str | None = None
    nicknames: str | None = None


# ---------------------------------------------------------------------------
# small helpers


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_manifest(cfg: RunConfig, inputs: list, outputs: list,
                    started: float, manifest_path: str) -> None:
    payload = {
        "command": cfg.command,
        "config": {k: v for k, v in dataclasses.asdict(cfg).items() if v is not None},
        "inputs": {path: _sha256(path) for path in inputs},
        "library_version": __version__,
        "seed": cfg.seed,
        "started_unix": started,
        "elapsed_seconds": time.time() - started,
        "outputs": sorted(outputs),
    }
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_hyper_vector(text: str, length: int, name: str):
    """A single float means symmetric; a comma list gives the full vector."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise CliError(f"bad --{name} value {text!r}: expected float or comma list") from None
    if len(values) == 1:
        return np.full(length, values[0])
    if len(values) != length:
        raise CliError(f"--{name} has {len(values)} entries, expected 1 or {length}")
    return np.asarray(values)


def _parse_nicknames(text: str) -> dict:
    out = {}
    for piece in text.split(","):
        key, sep, value = piece.partition("=")
        if not sep:
            raise CliError(f"bad --nicknames entry {piece!r}, expected TOPIC=NAME")
        try:
            out[int(key)] = value
        except ValueError:
            raise CliError(f"bad topic id in --nicknames entry {piece!r}") from None
    return out


def _require(value, flag: str):
    if value is None:
        raise CliError(f"missing required option {flag}")
    return value


def _model_kind(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("#catmix "):
        return "catmix"
    if first.startswith("#lda "):
        return "lda"
    raise LoadError(f"{path}:1: not a model file (header {first.rstrip()!r})")


def _format_ext(fmt: str) -> str:
    return {"text": "txt", "csv": "csv", "latex": "tex"}[fmt]


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> int:
    started = time.time()
    out = _require(cfg.out, "--out")
    if (cfg.actfile is None) == (cfg.labfile is None):
        raise CliError("need exactly one of --actfile or --labfile")
    if cfg.labfile is not None:
        if cfg.threshold is not None or cfg.top_k is not None:
            raise CliError("--threshold/--top-k apply only to --actfile input")
        corpus = corpus_from_labfile(cfg.labfile)
        inputs = [cfg.labfile]
    else:
        if (cfg.threshold is None) == (cfg.top_k is None):
            raise CliError("need exactly one of --threshold or --top-k with --actfile")
        inputs = [cfg.actfile]
        if cfg.threshold is not None:
            if cfg.class_names is not None:
                raise CliError("--class-names applies only to --top-k featurization")
            corpus = corpus_from_actfile(cfg.actfile, cfg.threshold)
        else:
            names = None
            if cfg.class_names is not None:
                with open(cfg.class_names, encoding="utf-8") as fh:
                    names = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
                inputs.append(cfg.class_names)
            corpus = corpus_from_actfile_topk(cfg.actfile, cfg.top_k, names)
    save_corpus(corpus, out)
    _write_manifest(cfg, inputs, [out], started, out + ".manifest.json")
    print(f"ingested {len(corpus.docs)} docs, vocabulary {len(corpus.vocabulary)}, "
          f"{corpus.meta.get('empty_docs', '0')} empty")
    return 0


def _fit_lda_chains(corpus: Corpus, cfg: RunConfig, hyper) -> tuple:
    """Fit cfg.chains independent chains (seed + i) in parallel, keep the one
    with the best training log-likelihood, ties to the lowest chain index."""

    def one(i: int):
        return lda.fit_lda(corpus, cfg.topics, hyper, burn_in=cfg.burn_in,
                           samples=cfg.samples, thin=cfg.thin, seed=cfg.seed + i)

    if cfg.chains == 1:
        models = [one(0)]
    else:
        with concurrent.futures.ThreadPoolExecutor(
                max_workers=min(cfg.chains, os.cpu_count() or 1)) as pool:
            models = list(pool.map(one, range(cfg.chains)))
    scores = [lda.training_log_likelihood(m, corpus) for m in models]
    best = int(np.argmax(scores))
    return models[best], scores, best


def cmd_fit(cfg: RunConfig) -> int:
    started = time.time()
    corpus_path = _require(cfg.corpus, "--corpus")
    model = _require(cfg.model, "--model")
    topics = _require(cfg.topics, "--topics")
    if model not in ("catmix", "lda"):
        raise CliError(f"unknown model family {model!r}, expected catmix or lda")
    out = cfg.out
    if out is None:
        out = os.path.join(os.environ.get(OUTDIR_ENV) or ".", f"model.{model}")
    if cfg.chains != 1 and model != "lda":
        raise CliError("--chains applies only to --model lda")
    if cfg.chains < 1:
        raise CliError("--chains must be >= 1")
    corpus = load_corpus(corpus_path)
    outputs = [out]

    if model == "catmix":
        params, _, trace = catmix.fit_em(
            corpus, topics, init=cfg.seed, tol=cfg.tol,
            max_iter=cfg.max_iter, smoothing=cfg.smoothing)
        catmix.save_catmix(params, out)
        trace_path = out + ".trace.tsv"
        with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"#trace v1 model=catmix T={topics} seed={cfg.seed} reason={trace.reason}\n")
            fh.write("iter\tlog_likelihood\n")
            for i, ll in enumerate(trace.log_likelihood, start=1):
                fh.write(f"{i}\t{ll:.17g}\n")
        outputs.append(trace_path)
        print(f"catmix T={topics}: {trace.n_iter} iterations ({trace.reason}), "
              f"log-likelihood {trace.log_likelihood[-1]:.6f}")
    else:
        nv = len(corpus.vocabulary)
        alpha = _parse_hyper_vector(cfg.alpha, topics, "alpha") if cfg.alpha else None
        gamma = _parse_hyper_vector(cfg.gamma, nv, "gamma") if cfg.gamma else None
        if alpha is not None or gamma is not None:
            defaults = lda.LdaHyper.symmetric(topics, nv)
            hyper = lda.LdaHyper(alpha if alpha is not None else defaults.alpha,
                                 gamma if gamma is not None else defaults.gamma)
        else:
            hyper = None
        model_obj, scores, best = _fit_lda_chains(corpus, cfg, hyper)
        lda.save_lda(model_obj, out)
        sweeps_path = out + ".sweeps.tsv"
        with open(sweeps_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"#sweeps v1 model=lda T={topics} seed={cfg.seed} "
                     f"burn_in={cfg.burn_in} samples={cfg.samples} thin={cfg.thin} "
                     f"chains={cfg.chains}\n")
            fh.write("chain\tseed\ttrain_log_likelihood\tselected\n")
            for i, score in enumerate(scores):
                fh.write(f"{i}\t{cfg.seed + i}\t{score:.17g}\t{int(i == best)}\n")
        outputs.append(sweeps_path)
        print(f"lda T={topics}: {cfg.chains} chain(s), kept chain {best} "
              f"(train log-likelihood {scores[best]:.6f})")

    _write_manifest(cfg, [corpus_path], outputs, started, out + ".manifest.json")
    return 0


def cmd_assign(cfg: RunConfig) -> int:
    started = time.time()
    out = _require(cfg.out, "--out")
    corpus_path = _require(cfg.corpus, "--corpus")
    model_path = _require(cfg.model_file, "--model")
    corpus = load_corpus(corpus_path)
    kind = _model_kind(model_path)
    if kind == "catmix":
        params = catmix.load_catmix(model_path)
        posterior = catmix.e_step(corpus, params)
        n_topics = params.n_topics
    else:
        model = lda.load_lda(model_path)
        n_topics = model.n_topics
        stored = {doc_id: i for i, doc_id in enumerate(model.doc_ids)}
        rows = []
        for doc in corpus.docs:
            if doc.doc_id in stored:
                rows.append(model.doc_theta[stored[doc.doc_id]])
            else:
                rows.append(lda.infer_doc_theta(model, doc, sweeps=cfg.sweeps, seed=cfg.seed))
        posterior = np.vstack(rows)
    hard = evaluation.hard_assign(posterior)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#assign v1 T={n_topics} D={len(corpus.docs)} model={kind}\n")
        for doc, top, row in zip(corpus.docs, hard, posterior):
            fh.write(f"{doc.doc_id}\t{int(top)}\t{catmix.format_floats(row)}\n")
    _write_manifest(cfg, [corpus_path, model_path], [out], started, out + ".manifest.json")
    print(f"assigned {len(corpus.docs)} docs over {n_topics} topics")
    return 0


def _read_assignments(path: str) -> tuple:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split()
        if len(header) < 3 or header[0] != "#assign" or header[1] != "v1":
            raise LoadError(f"{path}:1: not an assignments file")
        fields = dict(piece.partition("=")[::2] for piece in header[2:])
        try:
            n_topics = int(fields["T"])
        except (KeyError, ValueError):
            raise LoadError(f"{path}:1: missing or bad T= in header") from None
        rows = {}
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LoadError(f"{path}:{lineno}: expected 3 tab-separated fields")
            doc_id, top_s, _ = parts
            try:
                top = int(top_s)
            except ValueError:
                raise LoadError(f"{path}:{lineno}: bad topic id {top_s!r}") from None
            if doc_id in rows:
                raise LoadError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            rows[doc_id] = top
    return n_topics, rows


def cmd_eval(cfg: RunConfig) -> int:
    started = time.time()
    corpus_path = _require(cfg.corpus, "--corpus")
    assign_path = _require(cfg.assignments, "--assignments")
    out_dir = cfg.out_dir or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(out_dir, exist_ok=True)
    fmt = cfg.report_format
    if fmt not in evaluation.FORMATS:
        raise CliError(f"unknown --format {fmt!r}, expected one of {evaluation.FORMATS}")
    ext = _format_ext(fmt)

    corpus = load_corpus(corpus_path)
    n_topics, assigned = _read_assignments(assign_path)
    missing = [d.doc_id for d in corpus.docs if d.doc_id not in assigned]
    if missing:
        raise LoadError(f"{assign_path}: no assignment for doc {missing[0]!r} "
                        f"({len(missing)} missing)")
    assignments = [assigned[d.doc_id] for d in corpus.docs]
    labels = [d.gold_label for d in corpus.docs]
    nicknames = _parse_nicknames(cfg.nicknames) if cfg.nicknames else None
    label_order = None
    if cfg.label_order:
        label_order = [p.strip() for p in cfg.label_order.split(",") if p.strip()]

    inputs = [corpus_path, assign_path]
    outputs = []
    have_labels = any(lab is not None for lab in labels)
    if have_labels:
        try:
            table = evaluation.contingency(assignments, labels, label_order,
                                           n_topics=n_topics)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        table = evaluation.ContingencyTable(table.labels, table.counts,
                                            table.skipped, nicknames)
        cont_path = os.path.join(out_dir, f"contingency.{ext}")
        with open(cont_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(evaluation.render_contingency(table, fmt, normalize=cfg.normalize))
        metrics_path = os.path.join(out_dir, "metrics.txt")
        with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"docs = {len(corpus.docs)}\n")
            fh.write(f"labeled = {table.total}\n")
            fh.write(f"skipped = {table.skipped}\n")
            fh.write(f"purity = {evaluation.purity(table):.6f}\n")
            fh.write(f"nmi = {evaluation.nmi(table):.6f}\n")
        outputs += [cont_path, metrics_path]
    else:
        print("warning: no gold labels in corpus; writing topics-only report",
              file=sys.stderr)

    if cfg.model_file:
        kind = _model_kind(cfg.model_file)
        phi = (catmix.load_catmix(cfg.model_file).beta if kind == "catmix"
               else lda.load_lda(cfg.model_file).phi)
        if phi.shape[1] != len(corpus.vocabulary):
            raise CliError(
                f"model covers V={phi.shape[1]} tokens but corpus has V={len(corpus.vocabulary)}")
        report = evaluation.topic_report(phi, corpus.vocabulary, cfg.top_k or 6)
        feat_path = os.path.join(out_dir, f"top_features.{ext}")
        with open(feat_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(evaluation.render_top_features(report, fmt, nicknames))
        outputs.append(feat_path)
        inputs.append(cfg.model_file)

    _write_manifest(cfg, inputs, outputs, started,
                    os.path.join(out_dir, "manifest.json"))
    for path in outputs:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and config-file handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acttopics",
        description="Topic models over bags of activations or predicted labels.",
    )
    parser.add_argument("--version", action="version", version=f"acttopics {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add_common(p):
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--seed", type=int, help="master seed (default 0)")

    p_ingest = sub.add_parser("ingest", help="featurize raw activation/label files into a corpus")
    add_common(p_ingest)
    p_ingest.add_argument("--actfile", help="activation file (#actfile v1)")
    p_ingest.add_argument("--labfile", help="label file (#labfile v1)")
    p_ingest.add_argument("--threshold", type=float,
                          help="keep units with activation strictly greater than this")
    p_ingest.add_argument("--top-k", type=int, dest="top_k",
                          help="treat records as dense scores, keep the top-k classes")
    p_ingest.add_argument("--class-names", dest="class_names",
                          help="file with one class name per line for --top-k")
    p_ingest.add_argument("--out", help="corpus file to write")
    p_ingest.set_defaults(func=cmd_ingest)

    p_fit = sub.add_parser("fit", help="fit a catmix or lda model on a corpus")
    add_common(p_fit)
    p_fit.add_argument("--corpus", help="corpus file")
    p_fit.add_argument("--model", choices=["catmix", "lda"], help="model family")
    p_fit.add_argument("--topics", type=int, help="number of topics T")
    p_fit.add_argument("--smoothing", type=float, help="catmix m-step smoothing (default 1e-6)")
    p_fit.add_argument("--tol", type=float, help="catmix convergence tolerance (default 1e-6)")
    p_fit.add_argument("--max-iter", type=int, dest="max_iter",
                       help="catmix iteration cap (default 500)")
    p_fit.add_argument("--alpha", help="lda doc-topic prior: float or comma list of T floats")
    p_fit.add_argument("--gamma", help="lda topic-token prior: float or comma list of V floats")
    p_fit.add_argument("--burn-in", type=int, dest="burn_in",
                       help="lda burn-in sweeps (default 200)")
    p_fit.add_argument("--samples", type=int, help="lda samples to average (default 10)")
    p_fit.add_argument("--thin", type=int, help="lda sweeps between samples (default 10)")
    p_fit.add_argument("--chains", type=int,
                       help="independent lda chains (seed+i); keeps the best (default 1)")
    p_fit.add_argument("--out",
                       help=f"model file to write (default model.<family> in ${OUTDIR_ENV} or .)")
    p_fit.set_defaults(func=cmd_fit)

    p_assign = sub.add_parser("assign", help="per-doc topic posteriors and hard assignments")
    add_common(p_assign)
    p_assign.add_argument("--corpus", help="corpus file")
    p_assign.add_argument("--model", dest="model_file", help="fitted model file")
    p_assign.add_argument("--sweeps", type=int,
                          help="fold-in sweeps for docs unseen at fit time (default 100)")
    p_assign.add_argument("--out", help="assignments file to write")
    p_assign.set_defaults(func=cmd_assign)

    p_eval = sub.add_parser("eval", help="density table, purity, NMI and top features")
    add_common(p_eval)
    p_eval.add_argument("--corpus", help="corpus file with gold labels")
    p_eval.add_argument("--assignments", help="assignments file from `assign`")
    p_eval.add_argument("--model", dest="model_file",
                        help="model file for the top-features report")
    p_eval.add_argument("--out-dir", dest="out_dir",
                        help=f"report directory (default ${OUTDIR_ENV} or .)")
    p_eval.add_argument("--format", dest="report_format", choices=list(evaluation.FORMATS),
                        help="report format (default text)")
    p_eval.add_argument("--top-k", type=int, dest="top_k",
                        help="components per topic in the top-features report (default 6)")
    p_eval.add_argument("--normalize", action="store_true", default=None,
                        help="render row percentages instead of raw counts")
    p_eval.add_argument("--label-order", dest="label_order",
                        help="comma-separated gold label column order")
    p_eval.add_argument("--nicknames", help="topic nicknames, e.g. '0=food,3=restaurant'")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise CliError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from None
    return values


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _apply_config(args: argparse.Namespace, parser_actions) -> None:
    """Fill in options the command line left unset from the config file."""
    if not getattr(args, "config", None):
        return
    values = _read_config_file(args.config)
    actions = {a.dest: a for a in parser_actions
               if a.dest not in ("help", "config", "command", "func")}
    for key, raw in values.items():
        if key not in actions:
            raise CliError(f"config key {key!r} is not an option of this command")
        if getattr(args, key, None) is not None:
            continue  # explicit flag wins
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in _BOOL_VALUES:
                raise CliError(f"config key {key!r}: expected true/false, got {raw!r}")
            setattr(args, key, _BOOL_VALUES[raw.lower()])
        elif action.choices is not None and raw not in action.choices:
            raise CliError(f"config key {key!r}: {raw!r} not one of {sorted(action.choices)}")
        else:
            try:
                setattr(args, key, action.type(raw) if action.type else raw)
            except ValueError:
                raise CliError(f"config key {key!r}: bad value {raw!r}") from None


def _resolve(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    for field in dataclasses.fields(RunConfig):
        if field.name == "command":
            continue
        value = getattr(args, field.name, None)
        if value is not None:
            setattr(cfg, field.name, value)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        # find the subparser that owns this command to honor its option set
        sub_actions = next(
            a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
        )
        _apply_config(args, sub_actions.choices[args.command]._actions)
        return args.func(_resolve(args))
    except (CliError, IngestError, LoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateTopicError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
