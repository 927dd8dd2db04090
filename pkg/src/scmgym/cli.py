"""``gym`` command line: generate, stress, adapt, grade, stats."""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .adapt import (
    mine_negative,
    sample_candidates,
    synthetic_candidates,
    to_kto_corpus,
    to_preference_pair,
    to_rl_record,
    to_sft,
)
from .config import GymConfig
from .exceptions import GymError, JoinError, RewriterError, SkipInstance
from .grade import aggregate, parse_final_answer, score
from .oracle import ALL_TASKS, Task
from .persist import SCHEMA_VERSION, file_sha256, read_json, read_jsonl, write_json, write_jsonl
from .questions import QuestionInstance, generate_instance
from .stressors import (
    VARIANTS,
    ChatCompletionRewriter,
    IdentityRewriter,
    add_redundant,
    build_stress_set,
    make_rewriter,
    omit_instruction,
    rephrase,
    remove_necessary,
)

log = logging.getLogger("scmgym")


class _ErrorCounter(logging.Handler):
    def __init__(self):
        super().__init__(logging.ERROR)
        self.count = 0

    def emit(self, record):
        self.count += 1


# --------------------------------------------------------------------------
# helpers


def _task_index(task: Task) -> int:
    return ALL_TASKS.index(task)


_WORKER_CONFIG: GymConfig | None = None


def _init_worker(config_dict: dict) -> None:
    global _WORKER_CONFIG
    _WORKER_CONFIG = GymConfig.from_dict(config_dict)


def _generate_one(job: tuple[int, str, int]) -> dict:
    seed, task, index = job
    inst = generate_instance(_WORKER_CONFIG, (seed, _task_index(Task(task)), index), task,
                             instance_id=f"{task}-{index:05d}")
    return inst.to_dict()


def generate_corpus(config: GymConfig, *, jobs: int = 1) -> list[dict]:
    """Instance records for every configured task, ordered by task then index."""
    work = [(config.seed, t.value, i) for t in config.task_list for i in range(config.per_task)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(config.to_dict(),)) as pool:
            return list(pool.map(_generate_one, work, chunksize=64))
    _init_worker(config.to_dict())
    return [_generate_one(w) for w in work]


def _load_config(args) -> GymConfig:
    config = GymConfig.load(args.config) if getattr(args, "config", None) else GymConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "tasks", None):
        changes["tasks"] = [t.strip() for t in args.tasks.split(",") if t.strip()]
    if getattr(args, "count", None) is not None:
        changes["per_task" if args.command == "generate" else "stress_per_task"] = args.count
    return config.replace(**changes) if changes else config


def _manifest(command: str, config: GymConfig, out: Path, files: dict[str, str], counts: dict, **extra) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "package_version": __version__,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "seed": config.seed,
        "counts": counts,
        "files": files,
        **extra,
    }


def _load_instances(path: str) -> list[QuestionInstance]:
    return [QuestionInstance.from_dict(r) for r in read_jsonl(path)]


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.manifest:
        manifest = read_json(args.manifest)
        config = GymConfig.from_dict(manifest["config"])
    else:
        config = _load_config(args)
    out = Path(args.out)
    start = time.perf_counter()
    records = generate_corpus(config, jobs=args.jobs)
    digest = write_jsonl(out / "corpus.jsonl", records)
    counts = dict(Counter(r["task"] for r in records))
    write_json(out / "manifest.json", _manifest("generate", config, out, {"corpus.jsonl": digest}, counts))
    log.info("wrote %d instances to %s in %.1fs", len(records), out / "corpus.jsonl", time.perf_counter() - start)
    if args.manifest:
        expected = manifest.get("files", {}).get("corpus.jsonl")
        if expected and expected != digest:
            log.error("regenerated corpus differs from the manifest (sha256 %s != %s)", digest, expected)
    return 0


def _transform(kind: str, inst: QuestionInstance, config: GymConfig, rewriter, key: int) -> QuestionInstance:
    if kind == "rephrased":
        return rephrase(inst, rewriter, attempts=config.rewrite_attempts, allow_fallback=config.allow_fallback)
    if kind == "omitted":
        return omit_instruction(inst, rewriter, attempts=config.rewrite_attempts, allow_fallback=config.allow_fallback)
    if kind == "redundant":
        return add_redundant(inst, None, config.redundant_count, (config.seed, key))
    return remove_necessary(inst, config.removed_count, (config.seed, key))


def _rewriter_for(config: GymConfig):
    if config.rewriter != "llm":
        return make_rewriter(config)
    try:
        return ChatCompletionRewriter.from_config(config)
    except RewriterError as exc:
        if not config.allow_fallback:
            raise
        log.warning("%s; using the rule-based paraphraser", exc)
        return make_rewriter(config.replace(rewriter="rule"))


def cmd_stress(args) -> int:
    config = _load_config(args)
    kind = args.kind
    out = Path(args.out)
    rewriter = _rewriter_for(config) if kind in ("rephrased", "omitted") else None
    if kind == "deconfounding" or not args.input:
        if args.input:
            log.info("deconfounding ignores --input and draws a fresh constrained pool")
        result = build_stress_set(config, kind, config.seed, rewriter=rewriter)
    else:
        by_task: dict[str, list[QuestionInstance]] = {}
        for inst in _load_instances(args.input):
            by_task.setdefault(inst.task.value, []).append(inst)
        result = []
        for task in config.task_list:
            made = []
            for j, inst in enumerate(by_task.get(task.value, [])):
                if len(made) == config.stress_per_task:
                    break
                try:
                    made.append(_transform(kind, inst, config, rewriter, _task_index(task) * 1_000_000 + j))
                except (SkipInstance, GymError) as exc:
                    log.info("skipping %s: %s", inst.id, exc)
            if len(made) < config.stress_per_task:
                log.error("%s: only %d of %d %s instances could be built from the input",
                          task.value, len(made), config.stress_per_task, kind)
            result.extend(made)
    name = f"stress-{kind}.jsonl"
    digest = write_jsonl(out / name, (i.to_dict() for i in result))
    counts = dict(Counter(i.task.value for i in result))
    write_json(out / f"stress-{kind}.manifest.json",
               _manifest("stress", config, out, {name: digest}, counts, kind=kind, input=args.input,
                         input_sha256=file_sha256(args.input) if args.input else None))
    log.info("wrote %d %s instances to %s", len(result), kind, out / name)
    return 0


def cmd_adapt(args) -> int:
    config = _load_config(args)
    method = args.method
    out = Path(args.out)
    instances = _load_instances(args.input)
    if args.limit is not None:
        instances = instances[: args.limit]
    llm = None
    if method != "rl" and config.rewriter == "llm":
        try:
            llm = ChatCompletionRewriter.from_config(config)
        except RewriterError as exc:
            if not config.allow_fallback:
                log.error("%s and fallback is disabled", exc)
                return 1
            log.warning("%s; using template traces and synthetic negatives", exc)
    reasoner = llm or IdentityRewriter()

    def candidates(inst, k):
        return sample_candidates(inst, llm) if llm else synthetic_candidates(inst, (config.seed, k))

    records: list[dict] = []
    if method == "sft":
        records = [to_sft(i, reasoner, attempts=config.rewrite_attempts).to_dict() for i in instances]
    elif method == "rl":
        records = [to_rl_record(i).to_dict() for i in instances]
    elif method == "dpo":
        for k, inst in enumerate(instances):
            positive = to_sft(inst, reasoner, attempts=config.rewrite_attempts)
            negative = mine_negative(inst, candidates(inst, k), length_multiple=config.negative_length_multiple)
            try:
                records.append(to_preference_pair(inst, positive, negative).to_dict())
            except SkipInstance as exc:
                log.warning("skipping %s", exc)
    elif method == "kto":
        positives, negatives = [], []
        for k, inst in enumerate(instances):
            positives.append(to_sft(inst, reasoner, attempts=config.rewrite_attempts))
            for trace in candidates(inst, k):
                neg = mine_negative(inst, [trace], length_multiple=config.negative_length_multiple)
                if neg is not None:
                    negatives.append((inst.id, neg))
        records = [r.to_dict() for r in to_kto_corpus(instances, positives, negatives, seed=config.seed)]
    name = f"{method}.jsonl"
    digest = write_jsonl(out / name, records)
    counts = {"input": len(instances), "records": len(records)}
    if method == "kto":
        counts.update(Counter(r["label"] for r in records))
    write_json(out / f"{method}.manifest.json",
               _manifest("adapt", config, out, {name: digest}, counts, method=method, input=args.input,
                         input_sha256=file_sha256(args.input)))
    log.info("wrote %d %s records to %s", len(records), method, out / name)
    return 0


def grade_responses(corpus: Sequence[QuestionInstance], runs: Sequence[Sequence[dict]], tolerance: float = 0.0):
    """Score raw responses (``instance_id`` + ``response``) against their instances."""
    by_id = {i.id: i for i in corpus}
    orphans = sorted({r["instance_id"] for run in runs for r in run if r["instance_id"] not in by_id})
    if orphans:
        raise JoinError(orphans)
    graded = []
    for run in runs:
        results = []
        for r in run:
            inst = by_id[r["instance_id"]]
            parsed = parse_final_answer(r.get("response"), inst.answer_mode)
            results.append(score(parsed, inst.answer, inst.answer_mode, tolerance, instance_id=inst.id,
                                 precision=int(inst.metadata.get("answer_precision", 4))))
        graded.append(results)
    return graded, aggregate(graded, {i.id: i.task.value for i in corpus})


def cmd_grade(args) -> int:
    config = _load_config(args)
    corpus = _load_instances(args.corpus)
    runs = []
    for path in args.responses:
        rows = read_jsonl(path, require_schema=False)
        groups: dict[object, list[dict]] = {}
        for row in rows:
            groups.setdefault(row.get("run", 0), []).append(row)
        runs.extend(groups[k] for k in sorted(groups, key=str))
    status = 0
    if not runs or not any(runs):
        log.error("no responses to grade")
        runs, status = [[]], 1
    try:
        graded, report = grade_responses(corpus, runs, config.grade_tolerance)
    except JoinError as exc:
        log.error("%s", exc)
        return 1
    out = Path(args.out)
    write_json(out / "report.json", {"schema_version": SCHEMA_VERSION, **report.to_dict()})
    write_jsonl(out / "grades.jsonl", ({"schema_version": SCHEMA_VERSION, "run": k, **g.to_dict()}
                                       for k, run in enumerate(graded) for g in run))
    table = report.format_table()
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return status


def cmd_stats(args) -> int:
    records = read_jsonl(args.input)
    per_task = Counter(r["task"] for r in records)
    probs = [len(r["given_info"]) for r in records]
    nodes = [r["metadata"]["graph"]["node_count"] for r in records]
    summary = {
        "instances": len(records),
        "per_task": dict(per_task),
        "modes": dict(Counter(r["mode"] for r in records)),
        "max_node_count": max(nodes, default=0),
        "mean_node_count": statistics.fmean(nodes) if nodes else 0.0,
        "max_probability_count": max(probs, default=0),
        "mean_probability_count": statistics.fmean(probs) if probs else 0.0,
        "answers": dict(Counter(str(r["answer"]) for r in records if isinstance(r["answer"], str))),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gym", description="Causal-inference question corpora from random binary SCMs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, out_default="out"):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--out", default=out_default, help="output directory")

    g = sub.add_parser("generate", help="generate the base corpus")
    common(g)
    g.add_argument("--tasks", help="comma-separated subset of ATE,CDE,ETT,NDE,NIE,PN,PS")
    g.add_argument("--count", type=int, help="instances per task")
    g.add_argument("--manifest", help="regenerate exactly from an earlier manifest")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stress", help="build one stress-test variant")
    common(s)
    s.add_argument("kind", choices=VARIANTS)
    s.add_argument("--input", help="base corpus to transform (deconfounding ignores it)")
    s.add_argument("--tasks")
    s.add_argument("--count", type=int, help="instances per task")
    s.set_defaults(func=cmd_stress)

    a = sub.add_parser("adapt", help="convert a corpus into training records")
    common(a)
    a.add_argument("method", choices=("sft", "dpo", "kto", "rl"))
    a.add_argument("--input", required=True)
    a.add_argument("--limit", type=int, help="use only the first N instances")
    a.set_defaults(func=cmd_adapt)

    r = sub.add_parser("grade", help="score model responses")
    common(r)
    r.add_argument("--corpus", required=True)
    r.add_argument("responses", nargs="*", help="response files (one per run, or with a 'run' field)")
    r.set_defaults(func=cmd_grade)

    st = sub.add_parser("stats", help="summarise a corpus")
    st.add_argument("--input", required=True)
    st.set_defaults(func=cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    counter = _ErrorCounter()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("scmgym")
    root.addHandler(counter)
    root.addHandler(handler)
    root.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        status = args.func(args)
    except GymError as exc:
        log.error("%s", exc)
        status = 1
    except OSError as exc:
        log.error("%s", exc)
        status = 1
    finally:
        root.removeHandler(counter)
        root.removeHandler(handler)
    if counter.count and not status:
        status = 1
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
