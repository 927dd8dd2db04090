import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from scmgym import GymConfig, LACK_CONDITION, Scm, Task, generate_instance
from scmgym.exceptions import RegenerateInstance, RewriterError, SkipInstance
from scmgym.identify import backdoor_sets
from scmgym.questions import LACK_CONDITION_HINT, compute_answer, unresolved_refs
from scmgym.stressors import (
    VARIANTS,
    ChatCompletionRewriter,
    IdentityRewriter,
    RuleBasedParaphraser,
    add_redundant,
    build_stress_set,
    decimal_multiset,
    make_rewriter,
    omit_instruction,
    rephrase,
    remove_necessary,
)

CONFIG = GymConfig()


@pytest.fixture(scope="module")
def base():
    return [generate_instance(CONFIG, (23, k, i), t) for k, t in enumerate(Task) for i in range(3)]


def test_rule_paraphraser_changes_wording_and_keeps_numbers(base):
    rw = RuleBasedParaphraser()
    for inst in base:
        out = rw.rewrite("", inst.given_info_text)
        assert out != inst.given_info_text
        assert decimal_multiset(out) == decimal_multiset(inst.given_info_text)


def test_rephrase_preserves_answer_and_numbers(base):
    for inst in base:
        new = rephrase(inst, RuleBasedParaphraser())
        assert new.id == f"{inst.id}-rephrased"
        assert new.answer == inst.answer and new.solution == inst.solution
        assert decimal_multiset(new.given_info_text) == decimal_multiset(inst.given_info_text)
        assert new.metadata["variant"] == "rephrased" and new.metadata["source_id"] == inst.id
        assert all(label in new.given_info_text for label in inst.labels)


def test_omit_drops_the_instruction(base):
    for inst in base:
        new = omit_instruction(inst, RuleBasedParaphraser())
        assert new.instruction == ""
        assert inst.instruction not in new.prompt()
        assert new.metadata["task"] == inst.task.value
        assert new.answer == inst.answer


class _Mangler:
    name = "mangler"

    def rewrite(self, system_prompt, content):
        return content.replace("0.", "9.")


def test_invalid_rewrites_fall_back_or_fail(base):
    inst = base[0]
    new = rephrase(inst, _Mangler(), attempts=2)
    assert new.metadata["rewrite_fallback"] and new.metadata["rewriter"] == "rule"
    with pytest.raises(RewriterError):
        rephrase(inst, _Mangler(), attempts=2, allow_fallback=False)


def test_redundant_statements_do_not_change_the_answer(base):
    for k, inst in enumerate(base):
        new = add_redundant(inst, count=2, seed=k)
        assert len(new.given_info) == len(inst.given_info) + 2
        assert compute_answer(new.solution, new.given_info, new.answer_mode, new.precision) == inst.answer
        assert new.answer == inst.answer
        used = set(inst.solution.refs())
        extra = [s for s in new.given_info if s not in inst.given_info]
        assert len(extra) == 2 and not any(s.ref in used for s in extra)


def test_redundant_needs_room():
    inst = generate_instance(CONFIG, (1,), "ATE")
    with pytest.raises(RegenerateInstance):
        add_redundant(inst, count=10_000)


def test_insufficient_removes_needed_statements(base):
    for k, inst in enumerate(base):
        try:
            new = remove_necessary(inst, count=2, seed=k)
        except SkipInstance:
            assert len(inst.given_info) < 2
            continue
        assert new.answer == LACK_CONDITION
        assert len(unresolved_refs(new.solution, new.given_info)) == 2
        assert compute_answer(new.solution, new.given_info, new.answer_mode) == LACK_CONDITION
        assert LACK_CONDITION_HINT in new.prompt()


def test_build_stress_set_shapes(small_config):
    for variant in VARIANTS:
        items = build_stress_set(small_config, variant, seed=1, per_task=2)
        assert len(items) == 14
        assert [i.task.value for i in items] == [t for t in small_config.tasks for _ in range(2)]
        assert all(i.metadata["variant"] == variant for i in items)


def test_deconfounding_set_defeats_the_naive_formula(small_config):
    for inst in build_stress_set(small_config, "deconfounding", seed=2, per_task=1):
        spec = inst.metadata["spec"]
        dag = Scm.from_dict(inst.metadata["scm"]).dag
        assert backdoor_sets(dag, spec["treatment"], spec["outcome"]).backdoor_set
        naive = inst.metadata["naive_value"]
        if inst.answer_mode == "binary":
            assert ("yes" if naive > 0 else "no") != inst.answer
        else:
            assert tuple(round(v, 4) for v in naive) != inst.answer


def test_make_rewriter(monkeypatch):
    assert isinstance(make_rewriter(CONFIG.replace(rewriter="identity")), IdentityRewriter)
    assert isinstance(make_rewriter(CONFIG), RuleBasedParaphraser)
    monkeypatch.delenv("GYM_LLM_URL", raising=False)
    with pytest.raises(RewriterError):
        make_rewriter(CONFIG.replace(rewriter="llm"))


# ---------------------------------------------------------------------------
# chat-completion client against a local server


class _Server:
    def __init__(self, statuses):
        self.statuses = list(statuses)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append((dict(self.headers), body))
                status = outer.statuses.pop(0) if outer.statuses else 200
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                if status == 200:
                    reply = {"choices": [{"message": {"content": " " + body["messages"][1]["content"] + " "}}]}
                    self.wfile.write(json.dumps(reply).encode())

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def test_chat_client_wire_format():
    with _Server([]) as srv:
        client = ChatCompletionRewriter(srv.url, "sekrit", model="m1", temperature=0.3, backoff=0.0)
        assert client.rewrite("sys", "text 0.1234") == "text 0.1234"
    headers, body = srv.requests[0]
    assert headers["Authorization"] == "Bearer sekrit"
    assert body == {"model": "m1", "temperature": 0.3,
                    "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "text 0.1234"}]}


def test_chat_client_retries_server_errors():
    with _Server([500, 429]) as srv:
        client = ChatCompletionRewriter(srv.url, retries=3, backoff=0.0)
        assert client.rewrite("s", "x") == "x"
    assert len(srv.requests) == 3


def test_chat_client_gives_up_on_client_errors():
    with _Server([400, 400]) as srv:
        client = ChatCompletionRewriter(srv.url, retries=3, backoff=0.0)
        with pytest.raises(RewriterError):
            client.rewrite("s", "x")
    assert len(srv.requests) == 1


def test_chat_client_redacts_numbers_in_logs(caplog):
    with _Server([]) as srv:
        client = ChatCompletionRewriter(srv.url, backoff=0.0, verbose=True)
        with caplog.at_level(logging.INFO, logger="scmgym"):
            client.rewrite("s", "p is 0.4321")
    assert "0.4321" not in caplog.text
    assert "<num>" in caplog.text


def test_rephrase_through_the_chat_client(base):
    with _Server([]) as srv:
        client = ChatCompletionRewriter(srv.url, backoff=0.0)
        new = rephrase(base[0], client)
    assert not new.metadata["rewrite_fallback"]
    assert new.metadata["rewriter"] == "llm"
