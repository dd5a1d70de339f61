"""Command-line entry point: reproducible corpus synthesis, statistics,
training-example construction, toy training, evaluation, cross-setting
matrices, the evaluation service, and a terminal chat loop.

Flag precedence is flags > config file > defaults; the effective
configuration is printed at startup. Every randomized subcommand requires
an explicit seed, and each subcommand writes only inside its --out
directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import compute_stats, load_fused_corpus, load_ontology, load_tod_corpus, save_corpus
from .evalkit import (
    aggregate_runs,
    cross_setting_eval,
    evaluate_setting,
    format_cross_matrix,
    format_eval_table,
    format_stats_table,
)
from .intent import IntentDetector, KeywordIntentClassifier, load_detector
from .knowledge import Database, MockSearchProvider, load_database
from .pivot import (
    KnowledgeRouter,
    load_examples,
    make_training_examples,
    predict_turns,
    save_examples,
    build_toy_model,
    serialize_example,
    state_exact_match,
    train_pivot,
)
from .backends.toy import ToySequenceModel
from .synthesis import PERSONAS, SynthesisBackends, SynthesisConfig, synthesize_corpus
from .backends import load_registry


class CliError(Exception):
    pass


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _print_effective(args: argparse.Namespace) -> None:
    shown = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    print("config:", json.dumps(shown, default=str, sort_keys=True))


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def _load_detector_arg(path: str | None) -> IntentDetector:
    if path:
        return load_detector(_require_file(path, "detector"))
    print("note: no --detector given, using the built-in keyword heuristic")
    return IntentDetector(classifier=KeywordIntentClassifier())


def _parse_setting_map(pairs: list[str], what: str) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"{what} entries look like setting=path, got {pair!r}")
        setting, _, path = pair.partition("=")
        out[setting] = _require_file(path, f"{what} for {setting}")
    return out


# -- subcommands --------------------------------------------------------------


def cmd_demo_data(args) -> int:
    from .testing import write_database_file, write_ontology_file, write_tod_corpus_file

    out = _out_dir(args.out)
    write_tod_corpus_file(out / "corpus.json", n_dialogs=args.dialogs, seed=args.seed)
    write_ontology_file(out / "ontology.json")
    write_database_file(out / "db.json")
    registry = [
        {
            "name": "chat",
            "kind": "scripted_stub",
            "script": ["you know , i love {persona} little adventures like this ."],
            "cycle": True,
        },
        {
            "name": "user",
            "kind": "scripted_stub",
            "script": [
                "that is so interesting , tell me more .",
                "honestly {goal} has been on my mind all day .",
            ],
            "cycle": True,
        },
        {
            "name": "system",
            "kind": "scripted_stub",
            "script": ["oh that is fun , i read about it recently ."],
            "cycle": True,
        },
        {
            "name": "transition",
            "kind": "scripted_stub",
            "script": ["glad to hear that ! now back to your request ."],
            "cycle": True,
        },
    ]
    _write_json(out / "backends.json", registry)
    print(f"wrote demo corpus, ontology, database, and backend registry to {out}")
    return 0


def cmd_synthesize(args) -> int:
    ontology = load_ontology(_require_file(args.ontology, "ontology"))
    corpus = load_tod_corpus(_require_file(args.input, "input corpus"), ontology)
    registry = load_registry(_require_file(args.backends, "backend registry"))
    detector = _load_detector_arg(args.detector)
    search = MockSearchProvider() if args.search == "mock" else None
    backends = SynthesisBackends(
        chat=registry.get(args.chat_backend),
        user=registry.get(args.user_backend),
        system=registry.get(args.system_backend),
        transition=registry.get(args.transition_backend),
        search=search,
    )
    personas = PERSONAS
    if args.personas:
        lines = _require_file(args.personas, "persona file").read_text().splitlines()
        personas = tuple(line.strip() for line in lines if line.strip())
    config = SynthesisConfig(
        setting=args.setting,
        max_odd_turns=args.max_odd_turns,
        persona_set=personas,
        seed=args.seed,
    )
    result = synthesize_corpus(corpus, config, backends, detector, ontology)

    out = _out_dir(args.out)
    save_corpus(result.dialogs, out / "fused.jsonl")
    with (out / "trace.jsonl").open("w") as fh:
        for trace in result.traces:
            fh.write(json.dumps(trace.to_json(), sort_keys=True, separators=(",", ":")) + "\n")
    _write_json(out / "stats.json", result.stats.to_json())
    _write_json(out / "skips.json", [s.to_json() for s in result.skipped])
    print(format_stats_table({args.setting: result.stats}))
    print(f"fused {len(result.dialogs)} dialogs ({len(result.skipped)} skipped) -> {out}")
    return 0


def cmd_stats(args) -> int:
    stats = {}
    for path in args.input:
        dialogs = load_fused_corpus(_require_file(path, "corpus"))
        stats[Path(path).stem] = compute_stats(dialogs)
    print(format_stats_table(stats))
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "stats.json", {name: s.to_json() for name, s in stats.items()})
    return 0


def _search_provider(args):
    if args.search == "mock":
        return MockSearchProvider()
    if args.search == "none":
        return None
    raise CliError(f"unsupported search provider {args.search!r}")


def cmd_build_examples(args) -> int:
    dialogs = load_fused_corpus(_require_file(args.input, "fused corpus"))
    db = load_database(_require_file(args.db, "database"))
    search = _search_provider(args)
    examples = []
    for dialog in dialogs:
        examples.extend(
            make_training_examples(dialog, db, search, window_k=args.window)
        )
    out = _out_dir(args.out)
    save_examples(examples, out / "examples.jsonl")
    print(f"wrote {len(examples)} training examples -> {out / 'examples.jsonl'}")
    return 0


def cmd_train_toy(args) -> int:
    examples = load_examples(_require_file(args.examples, "examples file"))
    model = build_toy_model(
        examples, embed_dim=args.embed_dim, hidden_dim=args.hidden_dim, seed=args.seed
    )
    early_stop = None
    if args.target_exact_match is not None:
        pairs = [serialize_example(e) for e in examples]

        def early_stop(epoch, report):
            if (epoch + 1) % args.eval_every:
                return False
            score = state_exact_match(model, pairs)
            print(f"epoch {epoch + 1}: loss {report.epoch_losses[-1]:.4f} exact-match {score:.3f}")
            return score >= args.target_exact_match

    report = train_pivot(
        examples,
        model,
        epochs=args.epochs,
        seed=args.seed,
        lr=args.lr,
        batch_size=args.batch_size,
        early_stop=early_stop,
    )
    out = _out_dir(args.out)
    model.save(out / "model.npz")
    _write_json(out / "train_report.json", report.to_json())
    print(
        f"trained {report.epochs} epochs: loss {report.initial_loss:.4f} -> "
        f"{report.final_loss:.4f}; model -> {out / 'model.npz'}"
    )
    return 0


def _predictions_for(model, dialogs, db):
    router = KnowledgeRouter(db=db, search=MockSearchProvider())
    return {d.id: predict_turns(model, d, router) for d in dialogs}


def cmd_evaluate(args) -> int:
    dialogs = load_fused_corpus(_require_file(args.gold, "gold corpus"))
    db = load_database(_require_file(args.db, "database"))
    model = ToySequenceModel.load(_require_file(args.model, "model"))
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise CliError("--seeds must list at least one seed")
    out = _out_dir(args.out)
    reports = []
    for seed in seeds:
        predictions = _predictions_for(model, dialogs, db)
        report = evaluate_setting(dialogs, predictions, db, setting=args.setting, seed=seed)
        reports.append(report)
        _write_json(out / f"report_seed{seed}.json", report.to_json())
    if len(reports) > 1:
        aggregate = aggregate_runs(reports)
        _write_json(out / "aggregate.json", aggregate.to_json())
        print(format_eval_table({args.setting: aggregate}))
    else:
        print(format_eval_table({args.setting: reports[0]}))
    return 0


def cmd_cross_eval(args) -> int:
    golds = {
        setting: load_fused_corpus(path)
        for setting, path in _parse_setting_map(args.gold, "gold corpus").items()
    }
    models = {
        setting: ToySequenceModel.load(path)
        for setting, path in _parse_setting_map(args.model, "model").items()
    }
    db = load_database(_require_file(args.db, "database"))
    runs = {
        train: {
            eval_setting: [_predictions_for(model, golds[eval_setting], db)]
            for eval_setting in golds
        }
        for train, model in models.items()
    }
    matrix = cross_setting_eval(runs, golds, db)
    out = _out_dir(args.out)
    _write_json(out / "cross_matrix.json", matrix.to_json())
    print(format_cross_matrix(matrix))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .pivot.chat import ScriptedSequenceModel
    from .service import EvalService, EventStore, GoalSampler, create_app

    config = json.loads(_require_file(args.models, "model config").read_text())
    db: Database | None = load_database(_require_file(args.db, "database")) if args.db else None

    def make_factory(entry):
        kind = entry.get("kind", "toy")
        if kind == "scripted":
            outputs = entry["outputs"]
            return lambda: (
                ScriptedSequenceModel(outputs, cycle=True),
                KnowledgeRouter(db=db, search=MockSearchProvider()),
            )
        model_path = _require_file(entry["model_path"], f"model for {entry['name']}")
        model = ToySequenceModel.load(model_path)
        return lambda: (model, KnowledgeRouter(db=db, search=MockSearchProvider()))

    models = {entry["name"]: make_factory(entry) for entry in config}
    from .corpus import GoalCard

    cards = [
        GoalCard.from_json(card)
        for card in json.loads(_require_file(args.goals, "goal cards").read_text())
    ]
    sampler = GoalSampler(cards, single_domain=not args.multi_domain_goals, seed=args.seed)
    store = EventStore(Path(args.store) / "events.jsonl")
    service = EvalService(models, sampler, store, session_timeout_s=args.session_timeout)
    app = create_app(service)
    if args.ui:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=args.ui, html=True), name="ui")
    print(f"serving on http://{args.host}:{args.port} (store: {args.store})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_chat(args) -> int:
    from .pivot.chat import ChatSession, chat_turn

    model = ToySequenceModel.load(_require_file(args.model, "model"))
    db = load_database(_require_file(args.db, "database"))
    detector = _load_detector_arg(args.detector)
    router = KnowledgeRouter(db=db, search=MockSearchProvider())
    session = ChatSession(id="terminal", window_k=args.window, detector=detector)
    print("chat ready; empty line or 'quit' exits")
    for line in sys.stdin:
        text = line.strip()
        if not text or text == "quit":
            break
        from .pivot.state import encode_state

        state, knowledge, reply = chat_turn(session, text, model, router)
        print(f"[state {encode_state(state)} | knowledge {knowledge.kind.value}]")
        print(f"bot> {reply}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialogweave",
        description="Fused task/chitchat dialog workbench",
    )
    parser.add_argument("--version", action="version", version=f"dialogweave {__version__}")
    parser.add_argument("--config", help="JSON file of flag defaults (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-data", help="write a small self-contained demo world")
    p.add_argument("--out", required=True)
    p.add_argument("--dialogs", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_demo_data)

    p = sub.add_parser("synthesize", help="weave chitchat into a task corpus")
    p.add_argument("--input", required=True, help="task corpus JSON")
    p.add_argument("--ontology", required=True)
    p.add_argument("--setting", required=True, choices=["initial", "transition", "multiple"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backends", required=True, help="backend registry JSON")
    p.add_argument("--chat-backend", default="chat")
    p.add_argument("--user-backend", default="user")
    p.add_argument("--system-backend", default="system")
    p.add_argument("--transition-backend", default="transition")
    p.add_argument("--detector", help="trained detector file (default: keyword heuristic)")
    p.add_argument("--max-odd-turns", type=int, default=None)
    p.add_argument("--personas", help="file with one persona per line")
    p.add_argument("--search", choices=["none", "mock"], default="mock")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("stats", help="corpus statistics table")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-examples", help="training examples from a fused corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--search", choices=["none", "mock"], default="mock")
    p.set_defaults(func=cmd_build_examples)

    p = sub.add_parser("train-toy", help="train the toy sequence model")
    p.add_argument("--examples", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=48)
    p.add_argument("--hidden-dim", type=int, default=96)
    p.add_argument("--target-exact-match", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=10)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("evaluate", help="score a model on a fused corpus")
    p.add_argument("--gold", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--setting", default="initial")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cross-eval", help="cross-setting combined-score matrix")
    p.add_argument("--gold", nargs="+", required=True, help="setting=path pairs")
    p.add_argument("--model", nargs="+", required=True, help="setting=path pairs")
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("serve", help="run the evaluation service")
    p.add_argument("--store", required=True)
    p.add_argument("--models", required=True, help="model config JSON")
    p.add_argument("--goals", required=True, help="goal card list JSON")
    p.add_argument("--db")
    p.add_argument("--seed", type=int, required=True, help="goal sampler seed")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--session-timeout", type=float, default=3600.0)
    p.add_argument("--multi-domain-goals", action="store_true")
    p.add_argument("--ui", help="static directory to mount at /app")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("chat", help="terminal chat loop against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--detector")
    p.add_argument("--window", type=int, default=2)
    p.set_defaults(func=cmd_chat)

    parser.dw_subparsers = dict(sub.choices)  # type: ignore[attr-defined]
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, _ = parser.parse_known_args(argv)
    if args.config:
        # Subparsers re-apply their own defaults over the parent namespace,
        # so config-file defaults must land on the subparser itself.
        defaults = json.loads(Path(args.config).read_text())
        parser.set_defaults(**defaults)
        subparser = parser.dw_subparsers.get(getattr(args, "command", None))  # type: ignore[attr-defined]
        if subparser is not None:
            subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    else:
        args = parser.parse_args(argv)
    _print_effective(args)
    try:
        return args.func(args)
    except (CliError, Exception) as exc:  # noqa: BLE001 - single reporting point
        if isinstance(exc, KeyboardInterrupt):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
