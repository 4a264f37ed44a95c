import math

import pytest
import requests

from babelgen.backend import BackendConfig, HttpBackend
from babelgen.corpus import LabelSpec
from babelgen.prompting import (
    PromptContext,
    parse_generation_output,
    parse_revision_output,
    render_generation_prompt,
    render_revision_prompt,
    render_summary_prompt,
)
from babelgen.simulate import (
    SimBackend,
    SimBehavior,
    SimError,
    SimScript,
    SimServer,
    sim_embed,
    sim_respond,
)

LABEL = LabelSpec("travel", "This intent involves trips and transportation.")


def gen_messages(n=10, language="cy", start=1):
    ctx = PromptContext(
        task="topic",
        label=LABEL,
        demos=[("the ferry leaves at dawn", "cy")],
        target_language=language,
        n_requested=n,
        include_summary=True,
        start_index=start,
    )
    return render_generation_prompt(ctx)


def rev_messages(samples, language="cy"):
    return render_revision_prompt(LABEL, samples, task="topic", language=language)


def script_for(**behavior):
    return SimScript(seed=1, behaviors={("cy", "topic"): SimBehavior(**behavior)})


class TestSimRespond:
    def test_pure_function_byte_identical(self):
        script = script_for(accept_probability=0.5, duplicate_rate=0.2)
        messages = gen_messages()
        assert sim_respond(messages, script) == sim_respond(messages, script)

    def test_generation_emits_requested_count_numbered_from_start(self):
        script = script_for()
        out = sim_respond(gen_messages(n=7, start=15), script)
        lines = out.splitlines()
        assert len(lines) == 7
        assert lines[0].startswith("15. ")
        assert lines[-1].startswith("21. ")
        parsed = parse_generation_output(out, 7)
        assert len(parsed.samples) == 7

    def test_different_rounds_different_samples(self):
        script = script_for()
        first = parse_generation_output(sim_respond(gen_messages(start=1), script), 10).samples
        second = parse_generation_output(sim_respond(gen_messages(start=11), script), 10).samples
        assert not set(first) & set(second)

    def test_duplicate_injection(self):
        script = script_for(duplicate_rate=0.5)
        parsed = parse_generation_output(sim_respond(gen_messages(n=40), script), 40)
        assert len(set(parsed.samples)) < 40

    def test_off_language_injection(self):
        script = script_for(off_language_rate=1.0)
        parsed = parse_generation_output(sim_respond(gen_messages(n=5), script), 5)
        assert all("texto fuera del idioma" in s for s in parsed.samples)

    def test_accept_probability_one_never_rejects(self):
        script = script_for(accept_probability=1.0)
        for seed in (1, 2, 3):
            script.seed = seed
            out = sim_respond(rev_messages([f"s{i}" for i in range(50)]), script)
            assert "REJECT" not in out

    def test_revision_reject_fraction_tracks_probability(self):
        script = SimScript(
            seed=1, behaviors={("cy", "topic"): SimBehavior(accept_probability=0.3457)}
        )
        samples = [f"travel sample {i}" for i in range(700)]
        out = sim_respond(rev_messages(samples), script)
        parsed = parse_revision_output(out, 700)
        reject_fraction = sum(1 for v in parsed.verdicts if v.verdict == "reject") / 700
        # 700 Bernoulli(0.6543) draws: 3 sigma ~= 0.054
        assert abs(reject_fraction - 0.6543) < 0.06
        assert out == sim_respond(rev_messages(samples), script)

    def test_summary_prompt_answered_with_paragraph(self):
        script = script_for()
        out = sim_respond(render_summary_prompt("travel", ["demo one", "demo two"]), script)
        assert out.startswith("This intent involves")
        assert "travel" in out

    def test_uncovered_key_errors(self):
        script = SimScript(seed=0, behaviors={("th", "intent"): SimBehavior()})
        with pytest.raises(SimError, match="no behavior"):
            sim_respond(gen_messages(), script)

    def test_wildcard_fallback(self):
        script = SimScript(seed=0, behaviors={("*", "*"): SimBehavior()})
        assert sim_respond(gen_messages(), script)

    def test_unrecognized_prompt_errors(self):
        from babelgen.prompting import ChatMessage

        with pytest.raises(SimError, match="template family"):
            sim_respond([ChatMessage("user", "what is the weather")], SimScript())


class TestSimEmbed:
    def test_deterministic_unit_vectors(self):
        a = sim_embed("hello", 32)
        assert a == sim_embed("hello", 32)
        assert a != sim_embed("hola", 32)
        assert math.isclose(sum(v * v for v in a), 1.0, abs_tol=1e-9)

    def test_backend_embed_shape_and_validation(self):
        backend = SimBackend(SimScript(embed_dim=16))
        vectors = backend.embed(["a", "b"])
        assert [len(v) for v in vectors] == [16, 16]
        with pytest.raises(ValueError, match="index 1"):
            backend.embed(["a", ""])
        with pytest.raises(ValueError):
            backend.embed([])


class TestSimScriptConfig:
    def test_from_config_round_trip(self):
        script = SimScript.from_config(
            {
                "seed": 9,
                "embed_dim": 8,
                "behaviors": [
                    {"language": "cy", "task": "topic", "accept_probability": 0.25},
                    {"accept_probability": 0.9},
                ],
            }
        )
        assert script.seed == 9
        assert script.behavior_for("cy", "topic").accept_probability == 0.25
        assert script.behavior_for("de", "intent").accept_probability == 0.9

    def test_probability_bounds(self):
        with pytest.raises(ValueError):
            SimBehavior(accept_probability=1.5)


class TestSimServer:
    @pytest.fixture
    def server(self):
        script = SimScript(seed=4, behaviors={("*", "*"): SimBehavior()}, embed_dim=8)
        server = SimServer(script).start()
        yield server
        server.stop()

    def test_chat_route_matches_in_process_backend(self, server):
        script = SimScript(seed=4, behaviors={("*", "*"): SimBehavior()}, embed_dim=8)
        messages = gen_messages(n=4)
        http = HttpBackend(BackendConfig(base_url=server.base_url, model_id="sim"))
        assert http.chat_complete(messages) == SimBackend(script).chat_complete(messages)

    def test_embeddings_route(self, server):
        http = HttpBackend(BackendConfig(base_url=server.base_url, model_id="sim"))
        vectors = http.embed(["one", "two", "one"])
        assert len(vectors) == 3
        assert vectors[0] == vectors[2]
        assert len(vectors[0]) == 8

    def test_unknown_route_404(self, server):
        response = requests.post(f"{server.base_url}/v1/other", json={}, timeout=5)
        assert response.status_code == 404

    def test_bad_prompt_is_400(self, server):
        response = requests.post(
            f"{server.base_url}/v1/chat/completions",
            json={"model": "sim", "messages": [{"role": "user", "content": "free-form"}]},
            timeout=5,
        )
        assert response.status_code == 400
