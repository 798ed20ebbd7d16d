"""Command-line interface: analysis runs, question generation, judging, export."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from .backend import (
    BackendSet,
    HttpBackend,
    RetryingBackend,
    RetryPolicy,
    ScriptedBackend,
    load_script,
)
from .config import RunConfig
from .errors import BundleError, DocumentError, InvalidInput, RamifyError
from .evalharness import (
    Domain,
    build_n2q_items,
    evaluate_questions,
    load_eval_items,
    render_table,
    save_n2q_items,
    save_results,
)
from .orchestrator import load_run, persist_run, run
from .prompts import PromptLibrary, default_library, load_bundle
from .tree import export_graph

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = "ramify/config@1"

_CONFIG_FLAGS = (
    "max_layer",
    "max_nodes",
    "max_aspects",
    "temperature",
    "max_parse_retries",
    "plan_retry_budget",
)


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        choices=("scripted", "http"),
        default="scripted",
        help="completion backend kind (default: scripted)",
    )
    parser.add_argument("--script", help="script file for the scripted backend")
    parser.add_argument("--endpoint", help="chat-completion URL for the http backend")
    parser.add_argument("--model", help="model name for the http backend")
    parser.add_argument(
        "--credential-env",
        help="environment variable holding the bearer token for the http backend",
    )
    parser.add_argument("--templates", help="directory overriding the built-in prompts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramify", description="Layered breadth/depth analysis runner"
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="analyze one query end to end")
    p_run.add_argument("--query", required=True, help="the raw query to analyze")
    p_run.add_argument("--config", help="JSON config file (flags win over it)")
    p_run.add_argument("--max-layer", type=int, dest="max_layer")
    p_run.add_argument("--max-nodes", type=int, dest="max_nodes")
    p_run.add_argument("--max-aspects", type=int, dest="max_aspects")
    p_run.add_argument("--temperature", type=float, dest="temperature")
    p_run.add_argument("--max-parse-retries", type=int, dest="max_parse_retries")
    p_run.add_argument("--plan-retry-budget", type=int, dest="plan_retry_budget")
    p_run.add_argument("--run-date", dest="run_date", help="analysis date as YYYY-MM-DD")
    p_run.add_argument(
        "--deterministic",
        action="store_true",
        help="fixed timestamps and a query-derived run id, for reproducible records",
    )
    p_run.add_argument("--out", help="write the run record JSON here")
    _add_backend_flags(p_run)

    p_n2q = sub.add_parser("n2q", help="turn news texts into analysis questions")
    p_n2q.add_argument("--news", required=True, help="JSON array of {domain, news} objects")
    p_n2q.add_argument("--out", required=True, help="write the question document here")
    p_n2q.add_argument("--temperature", type=float, default=0.0)
    _add_backend_flags(p_n2q)

    p_eval = sub.add_parser("eval", help="judge paired answers and report win rates")
    p_eval.add_argument("--answers", required=True, help="answers document to judge")
    p_eval.add_argument("--out", help="write the results document here")
    p_eval.add_argument("--temperature", type=float, default=0.0)
    _add_backend_flags(p_eval)

    p_export = sub.add_parser("export", help="render a stored run record")
    p_export.add_argument("--run", required=True, help="run record produced by `ramify run`")
    p_export.add_argument(
        "--format", required=True, choices=("dot", "doc", "report"), help="output form"
    )
    p_export.add_argument("--out", help="write here instead of stdout")

    return parser


def load_config_file(path: str) -> dict:
    """Read a partial config document; unknown keys are a usage error."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != CONFIG_SCHEMA:
        raise DocumentError(
            f"config file {path} must carry schema {CONFIG_SCHEMA!r}, got {doc.get('schema')!r}"
        )
    body = {k: v for k, v in doc.items() if k != "schema"}
    known = set(_CONFIG_FLAGS) | {"run_date"}
    unknown = sorted(set(body) - known)
    if unknown:
        raise InvalidInput(f"config file {path} has unknown keys {unknown}")
    return body


def merge_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags; flags win."""
    merged = RunConfig().to_dict()
    file_body: dict = {}
    if getattr(args, "config", None):
        file_body = load_config_file(args.config)
        merged.update(file_body)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    if getattr(args, "run_date", None):
        merged["run_date"] = args.run_date
    elif args.deterministic and "run_date" not in file_body:
        merged["run_date"] = "1970-01-01"
    return RunConfig.from_dict(merged)


def _load_library(args: argparse.Namespace) -> PromptLibrary:
    if getattr(args, "templates", None):
        return load_bundle(args.templates, defaults=default_library())
    return default_library()


def _build_backends(args: argparse.Namespace) -> BackendSet:
    if args.backend == "scripted":
        if not args.script:
            raise InvalidInput("the scripted backend needs --script")
        backend = ScriptedBackend(load_script(args.script))
    else:
        if not args.endpoint or not args.model:
            raise InvalidInput("the http backend needs --endpoint and --model")
        backend = RetryingBackend(
            HttpBackend(
                endpoint=args.endpoint,
                model=args.model,
                credential_env=args.credential_env,
            ),
            RetryPolicy(),
        )
    return BackendSet(reasoning=backend, retrieval=backend)


def _load_news_pairs(path: str) -> list[tuple[Domain, str]]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read news file {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise InvalidInput(f"news file {path} must hold a JSON array")
    pairs = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or set(item) != {"domain", "news"}:
            raise InvalidInput(f"news item {i} must be an object with domain and news")
        try:
            domain = Domain(item["domain"])
        except ValueError:
            names = [d.value for d in Domain]
            raise InvalidInput(
                f"news item {i} domain {item['domain']!r} is not one of {names}"
            ) from None
        if not isinstance(item["news"], str) or not item["news"].strip():
            raise InvalidInput(f"news item {i} text must be a non-empty string")
        pairs.append((domain, item["news"]))
    return pairs


def cmd_run(args: argparse.Namespace) -> int:
    config = merge_config(args)
    backends = _build_backends(args)
    library = _load_library(args)
    record = run(
        args.query,
        backends,
        config=config,
        library=library,
        deterministic=args.deterministic,
    )
    if args.out:
        persist_run(record, args.out)
    print(record.final_report)
    return 0


def cmd_n2q(args: argparse.Namespace) -> int:
    pairs = _load_news_pairs(args.news)
    backends = _build_backends(args)
    library = _load_library(args)
    items = build_n2q_items(
        pairs, backends.reasoning, library, temperature=args.temperature
    )
    save_n2q_items(items, args.out)
    print(f"wrote {len(items)} of {len(pairs)} questions to {args.out}", file=sys.stderr)
    return 0 if items else 1


def cmd_eval(args: argparse.Namespace) -> int:
    items, name_a, name_b = load_eval_items(args.answers)
    backends = _build_backends(args)
    library = _load_library(args)
    table = evaluate_questions(
        items,
        backends.reasoning,
        library,
        name_a=name_a,
        name_b=name_b,
        temperature=args.temperature,
    )
    if args.out:
        save_results(table, args.out)
    print(render_table(table), end="")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    record = load_run(args.run)
    if args.format == "report":
        text = record.final_report
        if not text.endswith("\n"):
            text += "\n"
    else:
        text = export_graph(record.tree, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return 0


_COMMANDS = {"run": cmd_run, "n2q": cmd_n2q, "eval": cmd_eval, "export": cmd_export}

_USAGE_ERRORS = (InvalidInput, DocumentError, BundleError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RamifyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
