from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from akm.agents import (
    AgentOutputError,
    AgentSuite,
    UNPARSEABLE_VERDICT_ISSUE,
    UNSPECIFIED_REJECTION_ISSUE,
    build_agent_specs,
    parse_adr_set_reply,
    parse_summary_reply,
    parse_verdict_reply,
    render_adr_set,
    render_summary,
    ReplyParseError,
)
from akm.extractor import PackedContext, PackedFile
from akm.gateway import Gateway, ScriptedBackend, no_sleep
from akm.model import AdrStatus, SourceConfig
from akm.retrieval import EmbeddedDoc, HashingEmbedder
from akm.templates import TemplateError, check_template
from conftest import ACCEPT_REPLY, GENERATOR_REPLY, GENERATOR_REPLY_TWO, SUMMARY_REPLY, adr_block, reject_reply


def make_suite(replies: list[str]) -> tuple[AgentSuite, ScriptedBackend]:
    backend = ScriptedBackend.from_replies(replies)
    return AgentSuite(Gateway(backend, sleep=no_sleep)), backend


def packed(text: str = "print('hi')\n") -> PackedContext:
    from akm.gateway import estimate_tokens
    from akm.extractor import wrap_file

    cost = estimate_tokens(wrap_file("main.py", text))
    return PackedContext(
        included=(PackedFile("main.py", text, cost),),
        excluded_count=0,
        total_token_estimate=cost,
        budget=1000,
    )


class TestSummaryGrammar:
    def test_full_reply_parses(self):
        summary = parse_summary_reply(SUMMARY_REPLY)
        assert summary.overview.startswith("A small command line tool")
        assert [c.name for c in summary.components] == ["cli", "core"]
        assert summary.components[0].responsibility == "parses flags and dispatches commands"
        assert summary.technologies == ("python",)
        assert summary.decision_hints == ("layered module structure",)

    def test_missing_overview_rejected(self):
        reply = SUMMARY_REPLY.replace("OVERVIEW:", "SUMMARY:")
        with pytest.raises(ReplyParseError) as exc:
            parse_summary_reply(reply)
        assert "OVERVIEW" in str(exc.value)

    def test_missing_any_marker_rejected(self):
        for marker in ("COMPONENTS:", "TECHNOLOGIES:", "DECISION_HINTS:"):
            reply = SUMMARY_REPLY.replace(marker, "NOPE:")
            with pytest.raises(ReplyParseError):
                parse_summary_reply(reply)

    def test_markers_out_of_order_rejected(self):
        reply = (
            "COMPONENTS:\n- a: b\nOVERVIEW: hi\nTECHNOLOGIES:\nDECISION_HINTS:\n"
        )
        with pytest.raises(ReplyParseError):
            parse_summary_reply(reply)

    def test_multiline_overview(self):
        reply = SUMMARY_REPLY.replace(
            "OVERVIEW: A small command line tool with a layered design.",
            "OVERVIEW: First line.\nSecond line.",
        )
        summary = parse_summary_reply(reply)
        assert summary.overview == "First line.\nSecond line."

    def test_empty_lists_allowed(self):
        reply = "OVERVIEW: something\nCOMPONENTS:\nTECHNOLOGIES:\nDECISION_HINTS:\n"
        summary = parse_summary_reply(reply)
        assert summary.components == ()
        assert summary.technologies == ()

    def test_component_with_empty_name_rejected(self):
        reply = "OVERVIEW: x\nCOMPONENTS:\n- : dangling\nTECHNOLOGIES:\nDECISION_HINTS:\n"
        with pytest.raises(ReplyParseError):
            parse_summary_reply(reply)

    def test_render_parse_round_trip(self):
        summary = parse_summary_reply(SUMMARY_REPLY, revision=2)
        again = parse_summary_reply(render_summary(summary), revision=2)
        assert again == summary

    def test_revision_threaded(self):
        assert parse_summary_reply(SUMMARY_REPLY, revision=3).revision == 3


class TestVerdictGrammar:
    def test_accept(self):
        verdict = parse_verdict_reply("VERDICT: ACCEPT")
        assert verdict.accepted is True
        assert verdict.issues == ()

    def test_reject_with_issue(self):
        verdict = parse_verdict_reply("VERDICT: REJECT\nISSUE: misses the caching layer")
        assert verdict.accepted is False
        assert verdict.issues == ("misses the caching layer",)

    def test_unparseable_is_reject(self):
        verdict = parse_verdict_reply("looks fine to me")
        assert verdict.accepted is False
        assert verdict.issues == (UNPARSEABLE_VERDICT_ISSUE,)
        assert verdict.raw_response == "looks fine to me"

    def test_bare_reject_gets_placeholder_issue(self):
        verdict = parse_verdict_reply("VERDICT: REJECT")
        assert verdict.issues == (UNSPECIFIED_REJECTION_ISSUE,)

    def test_case_sensitive(self):
        assert parse_verdict_reply("verdict: accept").accepted is False
        assert parse_verdict_reply("VERDICT: Accept").accepted is False

    def test_issue_order_preserved(self):
        verdict = parse_verdict_reply(reject_reply("first", "second"))
        assert verdict.issues == ("first", "second")

    def test_first_verdict_line_wins(self):
        assert parse_verdict_reply("VERDICT: REJECT\nISSUE: x\nVERDICT: ACCEPT").accepted is False

    @given(st.text(max_size=300))
    @settings(max_examples=200, deadline=None)
    def test_fail_closed_property(self, text: str):
        verdict = parse_verdict_reply(text)
        if verdict.accepted:
            assert any(line.strip() == "VERDICT: ACCEPT" for line in text.splitlines())


class TestAdrSetGrammar:
    def test_two_blocks(self):
        draft = parse_adr_set_reply(GENERATOR_REPLY_TWO)
        assert [a.id for a in draft.adrs] == [1, 2]
        assert all(a.status is AdrStatus.PROPOSED for a in draft.adrs)

    def test_block_missing_decision_cites_index(self):
        bad = GENERATOR_REPLY.replace("## Decision", "## Dec")
        with pytest.raises(ReplyParseError) as exc:
            parse_adr_set_reply(bad)
        assert "block 1" in str(exc.value)

    def test_empty_reply_rejected(self):
        with pytest.raises(ReplyParseError):
            parse_adr_set_reply("")
        with pytest.raises(ReplyParseError):
            parse_adr_set_reply("=== ADR ===\n\n=== ADR ===")

    def test_second_block_bad_cites_index_two(self):
        bad = GENERATOR_REPLY + adr_block("Second one").replace("## Consequences", "## Concl")
        with pytest.raises(ReplyParseError) as exc:
            parse_adr_set_reply(bad)
        assert "block 2" in str(exc.value)

    def test_source_config_applied(self):
        draft = parse_adr_set_reply(GENERATOR_REPLY, source_config=SourceConfig.BASELINE)
        assert draft.adrs[0].source_config is SourceConfig.BASELINE

    def test_leading_prose_becomes_generator_notes(self):
        draft = parse_adr_set_reply("Sure, here are the records:\n" + GENERATOR_REPLY)
        assert draft.generator_notes == "Sure, here are the records:"
        assert len(draft.adrs) == 1

    def test_record_like_preamble_rejected(self):
        # A block missing its delimiter must not silently vanish into notes.
        lost_block = GENERATOR_REPLY.replace("=== ADR ===\n", "", 1)
        with pytest.raises(ReplyParseError):
            parse_adr_set_reply(lost_block + adr_block("Second decision"))

    def test_trailing_empty_delimiter_rejected(self):
        with pytest.raises(ReplyParseError) as exc:
            parse_adr_set_reply(GENERATOR_REPLY + "=== ADR ===\n")
        assert "block 2" in str(exc.value)

    def test_render_parse_round_trip(self):
        draft = parse_adr_set_reply(GENERATOR_REPLY_TWO)
        again = parse_adr_set_reply(render_adr_set(draft.adrs))
        assert again.adrs == draft.adrs


class TestAgentCalls:
    def test_summarize_builds_record(self):
        suite, backend = make_suite([SUMMARY_REPLY])
        summary, record = suite.summarize_repo(packed(), iteration=1)
        assert record.stage_name.value == "summarize"
        assert record.agent_name == "repo-summarizer"
        assert "FILE: main.py" in record.prompt
        assert record.response == SUMMARY_REPLY
        assert record.token_estimate > 0

    def test_summarize_parse_error_carries_record(self):
        suite, _ = make_suite(["garbage"])
        with pytest.raises(AgentOutputError) as exc:
            suite.summarize_repo(packed())
        assert exc.value.record.response == "garbage"

    def test_prior_issues_verbatim_in_prompt(self):
        issues = ["missing data layer", "overview is vague & too short"]
        suite, backend = make_suite([SUMMARY_REPLY])
        suite.summarize_repo(packed(), prior_issues=issues, revision=2, iteration=2)
        prompt = backend.requests[0].user_prompt
        for issue in issues:
            assert issue in prompt

    def test_validator_prompt_contains_summary_and_context(self):
        suite, backend = make_suite([SUMMARY_REPLY, ACCEPT_REPLY])
        summary, _ = suite.summarize_repo(packed())
        verdict, record = suite.validate_summary(summary, packed())
        assert verdict.accepted
        prompt = backend.requests[1].user_prompt
        assert render_summary(summary) in prompt
        assert "FILE: main.py" in prompt
        assert record.verdict == verdict

    def test_generator_prompt_contains_issue_feedback(self):
        suite, backend = make_suite([SUMMARY_REPLY, GENERATOR_REPLY])
        summary, _ = suite.summarize_repo(packed())
        suite.generate_adrs(summary, [], prior_issues=["adr 2 contradicts adr 1"], iteration=2)
        assert "adr 2 contradicts adr 1" in backend.requests[1].user_prompt

    def test_adr_validator_sees_drafts(self):
        suite, backend = make_suite([SUMMARY_REPLY, GENERATOR_REPLY, ACCEPT_REPLY])
        summary, _ = suite.summarize_repo(packed())
        draft, _ = suite.generate_adrs(summary, [])
        suite.validate_adrs(draft, summary, [])
        prompt = backend.requests[2].user_prompt
        assert "Use a layered architecture" in prompt

    def test_nearest_existing_decision_lands_in_validator_prompt(self):
        """Oracle: brute-force nearest neighbour of the draft text must appear."""
        embedder = HashingEmbedder()
        texts = [
            "Adopt a message queue between services",
            "Use a layered architecture for the command line tool",
            "Store configuration in environment variables",
            "Serve the API over plain HTTP behind a proxy",
        ]
        existing = [
            EmbeddedDoc.from_vector(f"d{i}", t, embedder.embed(t)) for i, t in enumerate(texts)
        ]
        suite, backend = make_suite([GENERATOR_REPLY, ACCEPT_REPLY])
        summary = parse_summary_reply(SUMMARY_REPLY)
        draft, _ = suite.generate_adrs(summary, [])

        # Independent nearest-neighbour scan over the raw vectors.
        adr = draft.adrs[0]
        query = embedder.embed(f"{adr.title}\n{adr.context}\n{adr.decision}")
        sims = [float(np.dot(np.asarray(d.vector), query)) for d in existing]
        best = existing[int(np.argmax(sims))]

        suite.validate_adrs(draft, summary, existing)
        assert best.text in backend.requests[1].user_prompt

    def test_empty_store_yields_empty_retrieved_section(self):
        suite, backend = make_suite([GENERATOR_REPLY])
        summary = parse_summary_reply(SUMMARY_REPLY)
        suite.generate_adrs(summary, [])
        assert "Existing recorded decisions" not in backend.requests[0].user_prompt

    def test_retrieved_text_verbatim_in_generator_prompt(self):
        text = "Use WebSockets for live updates\nbecause polling was too slow."
        docs = [EmbeddedDoc.from_vector("d0", text, HashingEmbedder().embed(text))]
        suite, backend = make_suite([GENERATOR_REPLY])
        summary = parse_summary_reply(SUMMARY_REPLY)
        suite.generate_adrs(summary, docs)
        assert text in backend.requests[0].user_prompt


class TestTemplates:
    def test_default_specs_load(self):
        specs = build_agent_specs()
        assert set(specs) == {"summarizer", "summary_validator", "adr_generator", "adr_validator", "baseline"}

    def test_unknown_placeholder_is_startup_error(self):
        with pytest.raises(TemplateError):
            check_template("summarizer", "{repo_context} {issues} {bogus}")

    def test_missing_required_placeholder_is_startup_error(self):
        with pytest.raises(TemplateError):
            check_template("summarizer", "no placeholders at all")

    def test_template_override_from_file(self, tmp_path):
        override = tmp_path / "summarizer.txt"
        override.write_text("CUSTOM {repo_context} {issues}", encoding="utf-8")
        specs = build_agent_specs({"summarizer": str(override)})
        assert specs["summarizer"].prompt_template.startswith("CUSTOM")

    def test_braces_in_inserted_values_not_reprocessed(self):
        from akm.templates import render_template

        out = render_template("{repo_context}", {"repo_context": "json has {braces} and {issues}"})
        assert out == "json has {braces} and {issues}"
