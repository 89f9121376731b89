import random

import pytest

from ragdep.embeddings import HashedTrigramEmbedder, cosine
from ragdep.errors import PlaceholderUnfilledError, PoolTooSmallError, TemplateMissingError
from ragdep.gateway import ModelConfig, ModelGateway
from ragdep.retrieval import ContextSlot, ContextSlots
from ragdep.validator import (
    RETRY_SUFFIX,
    SECTION_KINDS,
    ShotExample,
    ValidationPipeline,
    ValidationRecord,
    Verdict,
    build_prompt,
    candidate_summary,
    parse_verdict,
    select_shots,
)

from test_retrieval import build_store, make_candidate

MOCK_CFG = ModelConfig(model_id="mock-validator", endpoint="mock://dependency-rule")


def slots_of(*texts, kind="manual"):
    return ContextSlots(
        slots=tuple(
            ContextSlot(chunk_id=f"s{i}", source_kind=kind, text=t) for i, t in enumerate(texts)
        ),
        top_n=max(len(texts), 1),
    )


def shots_pair():
    return [
        ShotExample(id="ex-1", summary="spring option a.port (value 80) and docker option EXPOSE (value 80)", label=True),
        ShotExample(id="ex-2", summary="spring option x.name (value app) and maven option artifactId (value app)", label=False),
    ]


# --- build_prompt -----------------------------------------------------------------


def test_prompt_has_five_sections_in_order():
    prompt = build_prompt(make_candidate(), slots_of("ctx one", "ctx two"))
    assert tuple(s.kind for s in prompt.sections) == SECTION_KINDS


def test_prompt_context_blocks_numbered_with_source():
    prompt = build_prompt(make_candidate(), slots_of("alpha", "beta", "gamma", "delta", "epsilon"))
    section = prompt.section("retrieved_context")
    for i in range(1, 6):
        assert f"[Context {i} | manual]" in section
    assert section.index("[Context 1") < section.index("[Context 5")


def test_prompt_vanilla_renders_placeholder_line():
    prompt = build_prompt(make_candidate(), ContextSlots())
    assert "No additional context provided." in prompt.section("retrieved_context")


def test_prompt_substitutes_candidate_fields():
    prompt = build_prompt(make_candidate(), ContextSlots())
    definition = prompt.section("dependency_definition")
    assert "name_a: server.port" in definition
    assert "value_b: 8080" in definition
    assert "technology_b: docker" in definition
    assert "{" not in definition.replace("{project", "")  # no leftover placeholders


def test_prompt_refined_with_two_shots():
    prompt = build_prompt(make_candidate(), ContextSlots(), variant="refined", shots=shots_pair())
    definition = prompt.section("dependency_definition")
    assert "isDependency=true" in definition
    assert "isDependency=false" in definition
    assert "a.port" in definition and "artifactId" in definition
    assert len(prompt.shot_examples) == 2


def test_prompt_response_format_names_the_four_fields():
    prompt = build_prompt(make_candidate(), ContextSlots())
    fmt = prompt.section("response_format")
    for field in ("plan", "rationale", "uncertainty", "isDependency"):
        assert f'"{field}"' in fmt


def test_prompt_rejects_one_shot():
    with pytest.raises(ValueError):
        build_prompt(make_candidate(), ContextSlots(), shots=shots_pair()[:1])


def test_prompt_template_missing(tmp_path):
    with pytest.raises(TemplateMissingError):
        build_prompt(make_candidate(), ContextSlots(), templates_dir=tmp_path)


def test_prompt_unfilled_placeholder(tmp_path):
    bad = "\n".join(f"[[{kind}]]\ntext {{mystery_field}}" for kind in SECTION_KINDS)
    (tmp_path / "prompt_base.txt").write_text(bad)
    with pytest.raises(PlaceholderUnfilledError):
        build_prompt(make_candidate(), ContextSlots(), templates_dir=tmp_path)


def test_prompt_template_section_order_enforced(tmp_path):
    shuffled = "\n".join(f"[[{kind}]]\ntext" for kind in reversed(SECTION_KINDS))
    (tmp_path / "prompt_base.txt").write_text(shuffled)
    with pytest.raises(TemplateMissingError):
        build_prompt(make_candidate(), ContextSlots(), templates_dir=tmp_path)


# --- select_shots ------------------------------------------------------------------


def _random_pool(rng, provider, n):
    words = "port server name docker maven redis compose path value expose".split()
    pool = []
    for i in range(n):
        summary = " ".join(rng.choices(words, k=rng.randint(3, 10)))
        pool.append(
            ShotExample(id=f"ex-{i}", summary=summary, label=bool(rng.getrandbits(1)),
                        embedding=provider.embed_one(summary))
        )
    return pool


def test_select_shots_matches_brute_force():
    rng = random.Random(31)
    provider = HashedTrigramEmbedder(dimension=48)
    candidate = make_candidate()
    query = provider.embed_one(candidate_summary(candidate))
    for _ in range(20):
        pool = _random_pool(rng, provider, rng.randint(2, 40))
        got = select_shots(candidate, pool, provider, n=2)
        expected = sorted(pool, key=lambda s: (-cosine(query, s.embedding), s.id))[:2]
        assert [s.id for s in got] == [s.id for s in expected]


def test_select_shots_excludes_candidate_itself():
    provider = HashedTrigramEmbedder(dimension=48)
    candidate = make_candidate()
    summary = candidate_summary(candidate)
    leak = ShotExample(id=candidate.id, summary=summary, label=True, embedding=provider.embed_one(summary))
    pool = [leak] + _random_pool(random.Random(1), provider, 5)
    got = select_shots(candidate, pool, provider, n=2)
    assert candidate.id not in {s.id for s in got}


def test_select_shots_zero_requested():
    provider = HashedTrigramEmbedder(dimension=16)
    assert select_shots(make_candidate(), [], provider, n=0) == []


def test_select_shots_pool_too_small():
    provider = HashedTrigramEmbedder(dimension=16)
    with pytest.raises(PoolTooSmallError):
        select_shots(make_candidate(), _random_pool(random.Random(2), provider, 1), provider, n=2)


# --- parse_verdict -------------------------------------------------------------------


def test_parse_clean_json_ok():
    verdict = parse_verdict('{"plan":"p","rationale":"r","uncertainty":10,"isDependency":true}')
    assert verdict == Verdict(plan="p", rationale="r", uncertainty=10, is_dependency=True, parse_status="ok")


def test_parse_repairs_wrapped_json_with_string_uncertainty():
    text = 'Sure! Here is my answer: {"plan":"p","rationale":"r","uncertainty":"7","isDependency":false} hope that helps'
    verdict = parse_verdict(text)
    assert verdict.parse_status == "repaired"
    assert verdict.uncertainty == 7
    assert verdict.is_dependency is False


def test_parse_out_of_range_uncertainty_defaults():
    verdict = parse_verdict('{"plan":"p","rationale":"r","uncertainty":11,"isDependency":true}')
    assert verdict.parse_status == "defaulted"
    assert verdict.is_dependency is False
    assert verdict.uncertainty == 0


def test_parse_extra_fields_ignored_missing_fields_fail():
    ok = parse_verdict('{"plan":"p","rationale":"r","uncertainty":3,"isDependency":false,"extra":1}')
    assert ok.parse_status == "ok"
    missing = parse_verdict('{"plan":"p","rationale":"r","uncertainty":3}')
    assert missing.parse_status == "defaulted"


def test_parse_boolean_uncertainty_rejected():
    verdict = parse_verdict('{"plan":"p","rationale":"r","uncertainty":true,"isDependency":true}')
    assert verdict.parse_status == "defaulted"


def test_parse_handles_braces_inside_strings():
    text = 'noise {"plan":"use { and } wisely","rationale":"r","uncertainty":2,"isDependency":true} tail'
    verdict = parse_verdict(text)
    assert verdict.parse_status == "repaired"
    assert verdict.plan == "use { and } wisely"


def test_parse_fuzz_never_raises():
    rng = random.Random(41)
    alphabet = '{}[]":,truefalse0123456789planrationale \n\\'
    for _ in range(2000):
        text = "".join(rng.choices(alphabet, k=rng.randint(0, 80)))
        verdict = parse_verdict(text)
        assert isinstance(verdict, Verdict)
        assert 0 <= verdict.uncertainty <= 10


# --- validate_candidate ----------------------------------------------------------------


def test_validate_candidate_with_mock_and_store():
    store = build_store(
        ["the EXPOSE port must match server.port", "unrelated maven notes", "compose reference text"]
    )
    pipeline = ValidationPipeline(ModelGateway())
    from ragdep.evaluation import builtin_variants

    variant = builtin_variants()["2"]
    record = pipeline.validate_candidate(make_candidate(), MOCK_CFG, variant=variant, store=store)
    assert record.verdict.is_dependency is True
    assert record.rag_variant_id == "2"
    assert 0 < len(record.context) <= 5
    assert record.prompt_sha256
    assert record.wall_time_ms >= 0.0


def test_validate_candidate_vanilla_empty_context():
    pipeline = ValidationPipeline(ModelGateway())
    record = pipeline.validate_candidate(make_candidate(), MOCK_CFG, variant=None)
    assert record.rag_variant_id == "w/o"
    assert len(record.context) == 0
    assert record.verdict.parse_status == "ok"


def test_validate_candidate_prose_model_defaults_after_retry():
    class ProseModel:
        def complete(self, prompt):
            return "I believe this is a dependency but cannot say more."

    gateway = ModelGateway(mock=ProseModel())
    pipeline = ValidationPipeline(gateway)
    record = pipeline.validate_candidate(make_candidate(), MOCK_CFG, variant=None)
    assert record.verdict.parse_status == "defaulted"
    assert record.verdict.is_dependency is False
    # first attempt plus one retry with the bare-JSON instruction
    assert len(gateway.entries) == 2
    retry_prompt_hashes = {e.prompt_sha256 for e in gateway.entries}
    assert len(retry_prompt_hashes) == 2


def test_validate_retry_appends_json_only_instruction():
    prompts = []

    class RecordingModel:
        def complete(self, prompt):
            prompts.append(prompt)
            return "no json here"

    pipeline = ValidationPipeline(ModelGateway(mock=RecordingModel()))
    pipeline.validate_candidate(make_candidate(), MOCK_CFG, variant=None)
    assert prompts[1].endswith(RETRY_SUFFIX)


def test_cached_replay_reproduces_identical_records(tmp_path):
    # first pass goes through a live-ish transport; the replay gateway has a
    # dead transport and must rebuild the exact record from the cache
    def transport(url, body, headers, timeout):
        return 200, {
            "choices": [
                {"message": {"content": '{"plan":"p","rationale":"r","uncertainty":8,"isDependency":true}'}}
            ]
        }

    def dead_transport(url, body, headers, timeout):
        raise AssertionError("replay must not touch the network")

    cfg = ModelConfig(model_id="remote-model", endpoint="http://llm")
    first = ValidationPipeline(
        ModelGateway(transport=transport, sleep=lambda s: None, cache_dir=tmp_path / "cache")
    ).validate_candidate(make_candidate(), cfg, variant=None)
    replayed = ValidationPipeline(
        ModelGateway(transport=dead_transport, sleep=lambda s: None, cache_dir=tmp_path / "cache")
    ).validate_candidate(make_candidate(), cfg, variant=None)
    assert replayed.verdict == first.verdict
    assert replayed.prompt_sha256 == first.prompt_sha256
    assert replayed.candidate_id == first.candidate_id
    assert replayed.rag_variant_id == first.rag_variant_id


def test_vanilla_record_invariant_enforced():
    with pytest.raises(ValueError):
        ValidationRecord(
            candidate_id="c",
            model_id="m",
            rag_variant_id="w/o",
            prompt_sha256="x",
            context=slots_of("text"),
            verdict=Verdict("p", "r", 5, True, "ok"),
            wall_time_ms=1.0,
        )


def test_record_uncertainty_range_enforced():
    with pytest.raises(ValueError):
        ValidationRecord(
            candidate_id="c",
            model_id="m",
            rag_variant_id="1",
            prompt_sha256="x",
            context=slots_of("text"),
            verdict=Verdict("p", "r", 12, True, "ok"),
            wall_time_ms=1.0,
        )
