"""Command line entry point: ``erdkit {serve,run,train,eval,report,gen-corpus}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import CorpusError, dump_corpus, load_corpus
from .evaluation import RunLog, RunLogError, dumps_report, evaluate_runlog, render_report

log = logging.getLogger("erdkit")


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, files: dict, seed=None, extra=None) -> dict:
    """Record every input/output path with its content hash."""
    doc = {"tool_version": __version__, "seed": seed,
           "files": {role: {"path": str(p), "sha256": sha256_file(p)} for role, p in files.items() if p}}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return doc


def _emit(args, text: str) -> None:
    if not args.quiet:
        print(text, end="" if text.endswith("\n") else "\n")


# ---- subcommands -----------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    from .synth import generate_corpus

    corpus = generate_corpus(n_users=args.n_users, pos_rate=args.pos_rate, min_posts=args.min_posts,
                             max_posts=args.max_posts, marker_strength=args.marker_strength,
                             marker_noise=args.marker_noise, seed=args.seed,
                             name=Path(args.out).stem)
    dump_corpus(corpus, args.out)
    _emit(args, corpus.stats.table_row(corpus.name))
    return 0


_TRAIN_KEYS = ("theta", "lam", "c_fp_train", "tau_act", "window", "lr", "epochs", "max_posts", "split_ratio",
               "selection_weight", "valid_threshold", "min_token_count")


def cmd_train(args) -> int:
    from .predictor import save_model
    from .trainer import TrainConfig, TrainingDiverged, fit, write_history

    cfg = TrainConfig(**{k: getattr(args, k) for k in _TRAIN_KEYS if getattr(args, k) is not None},
                      seed=args.seed, include_titles=not args.no_titles)
    corpus = load_corpus(args.corpus)
    _emit(args, f"{'epoch':>5} {'train_loss':>11} {'valid_loss':>11} {'valid_acc':>10} "
                f"{'ERDE_' + str(int(cfg.theta)):>10} {'ERDE_50':>10}")

    def show(rec):
        _emit(args, f"{rec.epoch:>5} {rec.train_loss:>11.5f} {rec.valid_loss:>11.5f} {rec.valid_accuracy:>10.4f} "
                    f"{rec.valid_erde:>10.5f} {rec.valid_erde_50:>10.5f}")

    try:
        result = fit(corpus, cfg, on_epoch=show)
    except TrainingDiverged as exc:
        write_history(getattr(exc, "history", []), args.history_out)
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    write_history(result.history, args.history_out)
    save_model(result.model, args.model_out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,valid_loss,valid_accuracy,valid_erde,valid_erde_50\n")
            for r in result.history:
                fh.write(f"{r.epoch},{r.train_loss},{r.valid_loss},{r.valid_accuracy},{r.valid_erde},"
                         f"{r.valid_erde_50}\n")
    _emit(args, f"selected epoch {result.best_epoch}; model written to {args.model_out}")
    return 0


def cmd_serve(args) -> int:
    from .server import MockServer, make_http_server

    corpus = load_corpus(args.corpus)
    state_dir = os.environ.get("ERD_STATE_DIR") or args.state_dir
    core = MockServer(corpus, state_dir=state_dir, thetas=args.erde_theta)
    try:
        httpd = make_http_server(core, args.host, args.port)
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    host, port = httpd.server_address[:2]
    _emit(args, f"serving {corpus.name} ({len(corpus)} users, {corpus.max_posts} rounds) on http://{host}:{port}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def cmd_run(args) -> int:
    from .client import ClientError, HttpTransport, Runner
    from .policy import PolicyConfig
    from .predictor import load_scorer

    policy = PolicyConfig(kind=args.policy, threshold=args.threshold, min_delay=args.min_delay,
                          history_len=args.history_len)
    scorer = load_scorer(model=args.model, lexicon=args.lexicon)
    state_dir = os.environ.get("ERD_STATE_DIR")
    state_path = args.state or (Path(state_dir) / f"{args.team}.state.json" if state_dir else None)
    runner = Runner(HttpTransport(args.server), scorer, policy, window=args.window,
                    include_titles=not args.no_titles, state_path=state_path)
    try:
        if args.resume:
            runner.resume()
            report = runner.run()
        else:
            report = runner.run(team=args.team)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.report_out:
        Path(args.report_out).write_text(dumps_report(report), encoding="utf-8")
    _emit(args, render_report(report, args.team))
    return 0


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    runlog = RunLog.load(args.runlog)
    report = evaluate_runlog(runlog, corpus.gold(), thetas=args.erde_theta)
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.manifest:
        write_manifest(args.manifest, {"runlog": args.runlog, "corpus": args.corpus, "report": args.out},
                       seed=args.seed)
    _emit(args, render_report(report, args.name) if args.format == "text" else text)
    return 0


def cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    _emit(args, render_report(report, args.name) if args.format == "text" else dumps_report(report))
    return 0


# ---- parser ----------------------------------------------------------------

def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON file with option defaults for the subcommand")
    p.add_argument("--seed", type=int, default=d if suppress else 0)
    p.add_argument("--quiet", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erdkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"erdkit {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "write a synthetic JSON-lines corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-users", type=int, default=320)
    p.add_argument("--pos-rate", type=float, default=0.128)
    p.add_argument("--min-posts", type=int, default=10)
    p.add_argument("--max-posts", type=int, default=60)
    p.add_argument("--marker-strength", type=float, default=3.0, help="mean marker tokens per positive post")
    p.add_argument("--marker-noise", type=float, default=0.0, help="mean marker tokens per negative post")

    p = add("train", cmd_train, "time-aware training of the bag-of-words model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--history-out", required=True)
    p.add_argument("--csv", help="optional per-epoch CSV for plotting")
    for key in _TRAIN_KEYS:
        typ = int if key in ("window", "epochs", "max_posts", "min_token_count") else float
        flag = "--lambda" if key == "lam" else "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, type=typ, default=None)
    p.add_argument("--no-titles", action="store_true")

    p = add("serve", cmd_serve, "run the mock server over HTTP")
    p.add_argument("--corpus", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--state-dir", default=None)
    p.add_argument("--erde-theta", type=_ints, default=[5, 50])

    p = add("run", cmd_run, "play a full evaluation against a server")
    p.add_argument("--server", required=True)
    p.add_argument("--team", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model")
    g.add_argument("--lexicon")
    p.add_argument("--policy", choices=["simple", "historic"], default="simple")
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--min-delay", type=int, default=10)
    p.add_argument("--history-len", type=int, default=10)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--no-titles", action="store_true")
    p.add_argument("--state", help="run-state file, rewritten after every round")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--report-out")

    p = add("eval", cmd_eval, "score a stored run log against a gold corpus")
    p.add_argument("--runlog", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--erde-theta", type=_ints, default=[5, 50])
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--name", default="run")

    p = add("report", cmd_report, "render a report JSON as tables")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=["json", "text"], default="text")
    p.add_argument("--name", default="run")
    return parser


def _config_defaults(path: str, command: str) -> dict:
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise SystemExit(f"error: {path}: config must be a JSON object")
    out = {}
    for k, v in cfg.items():
        k = k.replace("-", "_")
        if k == "lambda":
            k = "lam"
        if k == "policy" and isinstance(v, dict):
            out.update({"policy": v.get("kind", "simple"), "threshold": v.get("threshold", 0.7),
                        "min_delay": v.get("min_delay", 10), "history_len": v.get("history_len", 10)})
        elif k == "include_titles":
            out["no_titles"] = not v
        else:
            out[k] = v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # find --config and the subcommand without enforcing required options yet
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in choices), None)
    if known.config and command:
        sub = choices[command]
        sub.set_defaults(**_config_defaults(known.config, command))
        # config may provide values for required options
        for action in sub._actions:
            if action.dest in sub._defaults and action.required:
                action.required = False
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                                logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, RunLogError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
