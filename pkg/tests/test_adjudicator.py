"""Prompt rendering, reply parsing, and the chain/single adjudication flows."""

import httpx
import pytest

from mhel.adjudicator import (
    NIL_SYSTEM_PROMPT,
    NIL_USER_TEMPLATE,
    ROUTE_CHAIN_EMPTY,
    ROUTE_CHAIN_NIL_NO,
    ROUTE_CHAIN_SELECTED,
    ROUTE_SINGLE_EMPTY,
    ROUTE_SINGLE_SELECTED,
    SELECTION_SCHEMA,
    SELECTION_SYSTEM_PROMPT,
    SELECTION_USER_TEMPLATE,
    AdjudicationResult,
    HttpChatClient,
    PromptContext,
    adjudicate_chain,
    adjudicate_single,
    candidates_json,
    extract_selection,
    parse_binary_answer,
    render_nil_prompt,
    render_selection_prompt,
)
from mhel.encoders import MarkedText
from mhel.errors import ChatBackendError, PromptError
from mhel.kb import EnrichedCandidate
from mhel.mocks import ScriptedChatClient


def _candidate(qid="Q90", label="Paris", **extra):
    base = dict(qid=qid, label=label, score=0.5, label_language_used="en")
    base.update(extra)
    return EnrichedCandidate(**base)


def _ctx(candidates=None, text="A trip to [ENT] Paris [ENT] by rail."):
    return PromptContext(
        language="English",
        document_date="1901",
        genre="newspaper",
        annotated_text=MarkedText(text=text, language="en"),
        candidates=tuple(candidates if candidates is not None else [_candidate()]),
    )


class TestTemplates:
    """The exact wording is load-bearing: replies were tuned against it."""

    def test_nil_system_prompt_frozen(self):
        assert NIL_SYSTEM_PROMPT == (
            "You are a highly precise multilingual information extraction system "
            "specialized in disambiguating entities within noisy historical texts. "
            "Your task is to analyse the text provided by the user and determine if "
            "the reference marked by [ENT] tags can be associated or not to one of "
            "the candidate Wikidata entities provided in the JSON list. Always "
            'respond by saying either "yes" or "no". Do not generate Python code.'
        )

    def test_nil_user_template_frozen(self):
        # note the quirks: singular "entity", lowercase "json"
        assert NIL_USER_TEMPLATE == (
            "Read the input text written in {language}, published in {document_date} "
            "and belonging to the genre of {genre}.\n"
            "\n"
            "Answer if the entity mentioned between the [ENT] tags in the input text "
            "corresponds to one of the candidate Wikidata entity provided in the json. "
            "Give a simple binary answer.\n"
            "\n"
            "Input Text: {annotated_text}\n"
            "\n"
            "Candidates: {candidates_in_json}"
        )

    def test_selection_schema_appears_verbatim(self):
        assert SELECTION_SCHEMA == '{"wikipedia_title": "", "wikidata_id": ""}'
        assert SELECTION_SCHEMA in SELECTION_USER_TEMPLATE

    def test_selection_prompt_key_phrases(self):
        assert SELECTION_SYSTEM_PROMPT.startswith(
            "You are an effective multilingual information extraction system"
        )
        assert "do not generate Python code." in SELECTION_SYSTEM_PROMPT
        assert (
            "Pay attention that the list of candidates may not include the entity "
            "mentioned. If none of the candidates match with high confidence the "
            "entity tagged with [ENT], return an empty json."
        ) in SELECTION_USER_TEMPLATE

    def test_both_templates_share_context_header(self):
        header = (
            "Read the input text written in {language}, published in "
            "{document_date} and belonging to the genre of {genre}."
        )
        assert NIL_USER_TEMPLATE.startswith(header)
        assert SELECTION_USER_TEMPLATE.startswith(header)


class TestCandidatesJson:
    def test_minimal_candidate(self):
        assert candidates_json([_candidate()]) == (
            '[{"wikipedia_title": "Paris", "wikidata_id": "Q90"}]'
        )

    def test_full_candidate_field_order(self):
        rendered = candidates_json(
            [_candidate(description="capital of France",
                        entity_type="LOC", earliest_date="0300")]
        )
        assert rendered == (
            '[{"wikipedia_title": "Paris", "wikidata_id": "Q90", '
            '"description": "capital of France", "entity_type": "LOC", '
            '"earliest_date": "0300"}]'
        )

    def test_non_ascii_passthrough(self):
        rendered = candidates_json([_candidate(label="Grüße")])
        assert "Grüße" in rendered and "\\u" not in rendered

    def test_order_preserved(self):
        rendered = candidates_json([_candidate("Q2", "b"), _candidate("Q1", "a")])
        assert rendered.index('"Q2"') < rendered.index('"Q1"')


class TestRendering:
    def test_roles_and_substitution(self):
        messages = render_nil_prompt(_ctx())
        assert [m["role"] for m in messages] == ["system", "user"]
        assert messages[0]["content"] == NIL_SYSTEM_PROMPT
        user = messages[1]["content"]
        assert "written in English, published in 1901" in user
        assert "genre of newspaper" in user
        assert "Input Text: A trip to [ENT] Paris [ENT] by rail." in user
        assert '"wikidata_id": "Q90"' in user
        assert "{" not in user.replace(candidates_json(_ctx().candidates), "")

    def test_single_pass_substitution(self):
        # placeholder-looking text inside the document must stay literal
        ctx = _ctx(text="See [ENT] {candidates_in_json} [ENT] note.")
        user = render_selection_prompt(ctx)[1]["content"]
        assert "Input Text: See [ENT] {candidates_in_json} [ENT] note." in user

    def test_selection_prompt_contains_schema(self):
        user = render_selection_prompt(_ctx())[1]["content"]
        assert SELECTION_SCHEMA in user

    def test_empty_candidates_rejected(self):
        with pytest.raises(PromptError, match="non-empty candidate"):
            render_nil_prompt(_ctx(candidates=[]))


class TestParseBinaryAnswer:
    @pytest.mark.parametrize(
        "reply, expected",
        [
            ("yes", "yes"),
            ("Yes.", "yes"),
            ("  YES, it matches", "yes"),
            ("no", "no"),
            ("No, none match.", "no"),
            ("I believe the answer is yes", "yes"),
            ("yesterday it rained", "no"),  # whole-token match only
            ("nothing matches", "no"),
            ("", "no"),
            ("42", "no"),
            ("the answer: no. wait, yes", "no"),  # first token wins
        ],
    )
    def test_extraction(self, reply, expected):
        assert parse_binary_answer(reply) == expected


class TestExtractSelection:
    ALLOWED = {"Q7235", "Q90", "Q1"}

    def test_plain_object(self):
        reply = '{"wikipedia_title":"Sophocles","wikidata_id":"Q7235"}'
        assert extract_selection(reply, self.ALLOWED) == "Q7235"

    def test_empty_object_is_nil(self):
        assert extract_selection("{}", self.ALLOWED) is None

    def test_prose_wrapped_object(self):
        reply = 'Sure! Here is the answer:\n{"wikipedia_title": "Paris", "wikidata_id": "Q90"}\nHope that helps.'
        assert extract_selection(reply, self.ALLOWED) == "Q90"

    def test_brace_inside_string_value(self):
        reply = '{"wikipedia_title": "odd } title", "wikidata_id": "Q90"}'
        assert extract_selection(reply, self.ALLOWED) == "Q90"

    def test_escaped_quote_inside_string(self):
        reply = '{"wikipedia_title": "say \\"hi\\"", "wikidata_id": "Q90"}'
        assert extract_selection(reply, self.ALLOWED) == "Q90"

    def test_unknown_qid_rejected(self):
        reply = '{"wikipedia_title": "X", "wikidata_id": "Q999"}'
        assert extract_selection(reply, self.ALLOWED) is None

    def test_title_not_validated(self):
        reply = '{"wikipedia_title": "totally wrong", "wikidata_id": "Q90"}'
        assert extract_selection(reply, self.ALLOWED) == "Q90"

    @pytest.mark.parametrize(
        "reply",
        [
            "no json here",
            "{broken",
            '{"wikidata_id": 90}',
            '{"wikidata_id": ""}',
            '["Q90"]',
            "",
        ],
    )
    def test_degenerate_replies_are_nil(self, reply):
        assert extract_selection(reply, self.ALLOWED) is None

    def test_first_balanced_object_wins(self):
        reply = '{"wikidata_id": "Q999"} then {"wikidata_id": "Q90"}'
        assert extract_selection(reply, self.ALLOWED) is None

    def test_unbalanced_then_balanced(self):
        reply = '{oops then {"wikidata_id": "Q90"} done'
        # outer "{oops…" never balances as JSON; scanner moves to the next brace
        assert extract_selection(reply, self.ALLOWED) == "Q90"


class _Recorder:
    """Chat double that logs every call and replays a script."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def chat(self, messages, temperature=0.0, max_tokens=256, tag=None):
        self.calls.append(
            {"messages": messages, "temperature": temperature,
             "max_tokens": max_tokens, "tag": tag}
        )
        return self.script.pop(0)


class TestChainFlow:
    def test_yes_then_selection(self):
        client = _Recorder(["yes", '{"wikipedia_title":"X","wikidata_id":"Q1"}'])
        result = adjudicate_chain(_ctx([_candidate("Q1", "X")]), client)
        assert result == AdjudicationResult(
            "Q1", ROUTE_CHAIN_SELECTED,
            ("yes", '{"wikipedia_title":"X","wikidata_id":"Q1"}'),
        )
        assert not result.is_nil and result.calls == 2

    def test_no_short_circuits(self):
        client = _Recorder(["no"])
        result = adjudicate_chain(_ctx(), client)
        assert result.is_nil and result.route == ROUTE_CHAIN_NIL_NO
        assert result.calls == 1 and len(client.calls) == 1

    def test_yes_then_empty(self):
        client = _Recorder(["yes", "{}"])
        result = adjudicate_chain(_ctx(), client)
        assert result.is_nil and result.route == ROUTE_CHAIN_EMPTY
        assert result.calls == 2

    def test_call_parameters_forwarded(self):
        client = _Recorder(["yes", "{}"])
        adjudicate_chain(_ctx(), client, max_tokens=99, tag="m7")
        assert [c["temperature"] for c in client.calls] == [0.0, 0.0]
        assert [c["max_tokens"] for c in client.calls] == [99, 99]
        assert [c["tag"] for c in client.calls] == ["m7", "m7"]
        # first call is the binary prompt, second the selection prompt
        assert client.calls[0]["messages"][0]["content"] == NIL_SYSTEM_PROMPT
        assert client.calls[1]["messages"][0]["content"] == SELECTION_SYSTEM_PROMPT

    def test_scripted_client_compatible(self):
        script = ScriptedChatClient(["no"])
        result = adjudicate_chain(_ctx(), script)
        assert result.is_nil and result.route == ROUTE_CHAIN_NIL_NO


class TestSingleFlow:
    def test_selection(self):
        client = _Recorder(['{"wikidata_id":"Q2","wikipedia_title":"Y"}'])
        result = adjudicate_single(_ctx([_candidate("Q2", "Y")]), client)
        assert result.linked_qid == "Q2"
        assert result.route == ROUTE_SINGLE_SELECTED and result.calls == 1

    def test_empty_is_nil(self):
        client = _Recorder(["cannot decide"])
        result = adjudicate_single(_ctx(), client)
        assert result.is_nil and result.route == ROUTE_SINGLE_EMPTY

    def test_only_selection_prompt_sent(self):
        client = _Recorder(["{}"])
        adjudicate_single(_ctx(), client, tag="m3")
        assert len(client.calls) == 1
        assert client.calls[0]["messages"][0]["content"] == SELECTION_SYSTEM_PROMPT
        assert client.calls[0]["tag"] == "m3"


def _http_chat(handler, **kwargs):
    transport = httpx.MockTransport(handler)
    client = httpx.Client(transport=transport, base_url="http://chat.test")
    kwargs.setdefault("retry_backoff", 0.0)
    return HttpChatClient("http://chat.test", client=client, **kwargs)


class TestHttpChatClient:
    MESSAGES = [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}]

    def test_round_trip(self):
        seen = {}

        def handler(request):
            import json as _json

            seen["payload"] = _json.loads(request.content)
            assert request.url.path == "/chat"
            return httpx.Response(200, json={"content": "yes"})

        client = _http_chat(handler)
        assert client.chat(self.MESSAGES, temperature=0.0, max_tokens=64) == "yes"
        assert seen["payload"] == {
            "messages": self.MESSAGES,
            "temperature": 0.0,
            "max_tokens": 64,
        }

    def test_tag_not_sent_on_wire(self):
        def handler(request):
            import json as _json

            assert "tag" not in _json.loads(request.content)
            return httpx.Response(200, json={"content": "ok"})

        assert _http_chat(handler).chat(self.MESSAGES, tag="m1") == "ok"

    def test_empty_messages_rejected(self):
        with pytest.raises(PromptError):
            _http_chat(lambda request: httpx.Response(200, json={"content": "x"})).chat([])

    def test_status_error(self):
        client = _http_chat(lambda request: httpx.Response(500, text="oops"))
        with pytest.raises(ChatBackendError, match="500") as excinfo:
            client.chat(self.MESSAGES)
        assert excinfo.value.context["status"] == 500

    def test_missing_content(self):
        client = _http_chat(lambda request: httpx.Response(200, json={"answer": "yes"}))
        with pytest.raises(ChatBackendError, match="content"):
            client.chat(self.MESSAGES)

    def test_retry_then_success(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            if state["n"] == 1:
                raise httpx.ReadTimeout("slow")
            return httpx.Response(200, json={"content": "no"})

        client = _http_chat(handler)
        assert client.chat(self.MESSAGES) == "no"
        assert client.retries == 1

    def test_double_failure(self):
        def handler(request):
            raise httpx.ConnectError("down")

        with pytest.raises(ChatBackendError, match="after retry"):
            _http_chat(handler).chat(self.MESSAGES)
