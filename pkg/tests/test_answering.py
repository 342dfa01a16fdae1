import numpy as np
import pytest

from ira.answering import (
    EnsembleConfig,
    ExamplePool,
    PoolEntry,
    build_answer_prompt,
    ensemble_predict,
    majority_vote,
    predict_answer,
    render_answer_prompt,
    representative_gold,
    select_examples,
    selection_embedding,
)
from ira.dataset import VQAInstance
from ira.errors import EmptyCompletion, MissingField, PoolTooSmall, ServiceError
from ira.prompts import PromptBundle

from conftest import pool_entry_from_fixture, query_instance_from_fixture
from expected_prompts import EXPECTED_PICA, EXPECTED_PROMPTCAP, EXPECTED_PROPHET


class ScriptedGateway:
    """Minimal completion-only gateway double for answer-path tests."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts = []

    def complete(self, req):
        self.prompts.append(req.prompt)
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def make_pool(n, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        vec = rng.standard_normal(dim)
        vec /= np.linalg.norm(vec)
        inst = VQAInstance(
            question_id=f"p{i:02d}",
            image_ref=f"p{i}.jpg",
            question=f"question {i}?",
            gold_answers=[],
            caption=f"caption {i}.",
            tags=["tag"],
            candidates=[("x", 0.5)],
        )
        entries.append(
            PoolEntry(instance=inst, question_embed=vec, caption_embed=None, info=[], gold="x")
        )
    return ExamplePool(entries=entries)


class TestSelectExamples:
    def test_zero_shots(self):
        assert select_examples(make_pool(5), np.ones(8), n=0) == []

    def test_exact_duplicate_ranked_first(self):
        pool = make_pool(10)
        query = pool.entries[7].question_embed.copy()
        top = select_examples(pool, query, n=1)[0]
        assert top.instance.question_id == "p07"

    def test_window_matches_brute_force_oracle(self):
        pool = make_pool(10)
        rng = np.random.default_rng(99)
        query = rng.standard_normal(8)
        ranked_ids = [
            e.instance.question_id
            for e in sorted(
                pool.entries,
                key=lambda e: (
                    -float(
                        np.dot(e.question_embed, query)
                        / (np.linalg.norm(e.question_embed) * np.linalg.norm(query))
                    ),
                    e.instance.question_id,
                ),
            )
        ]
        window = select_examples(pool, query, n=4, offset=1)
        assert [e.instance.question_id for e in window] == ranked_ids[4:8]

    def test_permutation_stable(self):
        pool = make_pool(10)
        rng = np.random.default_rng(5)
        query = rng.standard_normal(8)
        baseline = [e.instance.question_id for e in select_examples(pool, query, n=5)]
        shuffled = ExamplePool(entries=list(reversed(pool.entries)))
        assert [e.instance.question_id for e in select_examples(shuffled, query, n=5)] == baseline

    def test_pool_too_small(self):
        with pytest.raises(PoolTooSmall):
            select_examples(make_pool(5), np.ones(8), n=3, offset=1)

    def test_overlapping_windows_with_stride_one(self):
        pool = make_pool(6)
        rng = np.random.default_rng(3)
        query = rng.standard_normal(8)
        ranked = select_examples(pool, query, n=6)
        window = select_examples(pool, query, n=3, offset=1, stride=1)
        assert [e.instance.question_id for e in window] == [
            e.instance.question_id for e in ranked[1:4]
        ]

    def test_caption_embedding_averaged_in(self):
        q = np.array([1.0, 0.0])
        c = np.array([0.0, 1.0])
        assert np.array_equal(selection_embedding(q, c), np.array([0.5, 0.5]))
        assert np.array_equal(selection_embedding(q, None), q)


class TestRepresentativeGold:
    def test_most_common_wins(self):
        assert representative_gold(["ski", "snow", "ski", "Ski"]) == "ski"

    def test_tie_breaks_by_first_occurrence(self):
        assert representative_gold(["snow", "ski", "ski", "snow"]) == "snow"


class TestBuildAnswerPrompt:
    @pytest.mark.parametrize(
        "variant,expected",
        [("pica", EXPECTED_PICA), ("promptcap", EXPECTED_PROMPTCAP), ("prophet", EXPECTED_PROPHET)],
    )
    def test_reference_examples_byte_exact(self, reasoning_fixture, variant, expected):
        examples = [
            pool_entry_from_fixture(entry, variant, f"ex{i}")
            for i, entry in enumerate(reasoning_fixture["examples"])
        ]
        query = query_instance_from_fixture(reasoning_fixture["query"], variant)
        bundle = build_answer_prompt(
            query,
            query.caption,
            examples,
            list(reasoning_fixture["query"]["info"]),
            variant,
        )
        assert bundle.text == expected

    def test_prophet_confidences_two_decimals(self):
        inst = VQAInstance(
            question_id="q",
            image_ref="q.jpg",
            question="What is this person doing?",
            gold_answers=[],
            caption="A man on skis.",
            candidates=[("ski", 0.99), ("snow", 0.66)],
        )
        bundle = build_answer_prompt(inst, inst.caption, [], [], "prophet")
        assert "Candidates: ski (0.99), snow (0.66)" in bundle.text

    def test_zero_shots_instruction_and_query_only(self):
        inst = VQAInstance(
            question_id="q",
            image_ref="q.jpg",
            question="What?",
            gold_answers=[],
            caption="A photo.",
        )
        bundle = build_answer_prompt(inst, inst.caption, [], ["a fact"], "promptcap")
        assert bundle.text == (
            "Answer the questions using the provided image information, captions and extra "
            "commonsense knowledge. Answers should be no longer than 3 words:\n"
            "Image information: a fact\n"
            "Caption: A photo.\n"
            "Question: What?\n"
            "Answer:"
        )

    def test_empty_info_renders_bare_header(self):
        inst = VQAInstance(
            question_id="q", image_ref="q.jpg", question="What?", gold_answers=[], caption="C."
        )
        bundle = build_answer_prompt(inst, "C.", [], [], "promptcap")
        assert "Image information:\nCaption: C.\n" in bundle.text

    def test_missing_tags_for_pica(self):
        inst = VQAInstance(
            question_id="q", image_ref="q.jpg", question="What?", gold_answers=[], caption="C."
        )
        with pytest.raises(MissingField) as excinfo:
            build_answer_prompt(inst, "C.", [], [], "pica")
        assert excinfo.value.field == "tags"

    def test_missing_candidates_for_prophet(self):
        inst = VQAInstance(
            question_id="q", image_ref="q.jpg", question="What?", gold_answers=[], caption="C."
        )
        with pytest.raises(MissingField) as excinfo:
            build_answer_prompt(inst, "C.", [], [], "prophet")
        assert excinfo.value.field == "candidates"

    def test_slots_rerender_to_text(self, reasoning_fixture):
        for variant in ("pica", "promptcap", "prophet"):
            examples = [
                pool_entry_from_fixture(e, variant, f"ex{i}")
                for i, e in enumerate(reasoning_fixture["examples"])
            ]
            query = query_instance_from_fixture(reasoning_fixture["query"], variant)
            bundle = build_answer_prompt(
                query, query.caption, examples, list(reasoning_fixture["query"]["info"]), variant
            )
            assert render_answer_prompt(bundle.slots) == bundle.text
            assert "{" not in bundle.text

    def test_adding_summary_lengthens_text_only(self):
        inst = VQAInstance(
            question_id="q", image_ref="q.jpg", question="What?", gold_answers=[], caption="C."
        )
        short = build_answer_prompt(inst, "C.", [], ["first fact"], "promptcap")
        longer = build_answer_prompt(inst, "C.", [], ["first fact", "second fact"], "promptcap")
        assert len(longer.text) > len(short.text)
        assert longer.slots["query"]["caption"] == short.slots["query"]["caption"]
        assert longer.slots["query"]["question"] == short.slots["query"]["question"]
        assert longer.slots["examples"] == short.slots["examples"]


class TestPredictAnswer:
    def _bundle(self):
        return PromptBundle(text="Question: What?\nAnswer:")

    def test_plain_answer(self):
        gateway = ScriptedGateway(["cross country ski"])
        assert predict_answer(gateway, self._bundle()) == "cross country ski"

    def test_echoed_answer_prefix_and_stop(self):
        gateway = ScriptedGateway(["Answer: ham\nextra"])
        assert predict_answer(gateway, self._bundle()) == "ham"

    def test_empty_completion(self):
        gateway = ScriptedGateway(["   "])
        with pytest.raises(EmptyCompletion):
            predict_answer(gateway, self._bundle())

    def test_stop_sequence_requested(self):
        gateway = ScriptedGateway(["ok"])

        class Req:
            pass

        predict_answer(gateway, self._bundle())
        # the scripted gateway records prompts; stop sequence is set on the request
        # (covered further by the gateway tests)
        assert gateway.prompts == [self._bundle().text]


class TestMajorityVoteAndEnsemble:
    def test_majority(self):
        assert majority_vote(["ski", "ski", "snow", "ski", "cross country"]) == "ski"

    def test_tie_breaks_to_lowest_offset(self):
        assert majority_vote(["a", "b"]) == "a"

    def test_vote_over_normalized_forms(self):
        assert majority_vote(["The Ham.", "ham", "snow"]) == "The Ham."

    def _query(self):
        return VQAInstance(
            question_id="v",
            image_ref="v.jpg",
            question="query?",
            gold_answers=[],
            caption="query caption.",
            tags=["tag"],
            candidates=[("x", 0.5)],
        )

    def test_t1_reduces_to_predict_answer(self):
        pool = make_pool(8)
        query_embedding = np.ones(8)
        inst = self._query()
        cfg = EnsembleConfig(queries=1, shots=3)
        ensemble_gateway = ScriptedGateway(["ham"])
        prediction = ensemble_predict(
            ensemble_gateway, pool, inst, inst.caption, query_embedding, [], cfg, "promptcap"
        )
        examples = select_examples(pool, query_embedding, 3, offset=0)
        bundle = build_answer_prompt(inst, inst.caption, examples, [], "promptcap")
        single = predict_answer(ScriptedGateway(["ham"]), bundle)
        assert prediction.answer == single
        assert prediction.per_query_answers == ["ham"]
        assert ensemble_gateway.prompts == [bundle.text]

    def test_majority_over_windows(self):
        pool = make_pool(15)
        inst = self._query()
        cfg = EnsembleConfig(queries=5, shots=3)
        gateway = ScriptedGateway(["ski", "ski", "snow", "ski", "cross country"])
        prediction = ensemble_predict(
            gateway, pool, inst, inst.caption, np.ones(8), [], cfg, "promptcap"
        )
        assert prediction.answer == "ski"
        assert len(set(gateway.prompts)) == 5  # disjoint windows give distinct prompts
        assert len(prediction.prompt_hashes) == 5

    def test_identical_predictions_any_t(self):
        for t in (1, 2, 3, 4, 5):
            pool = make_pool(20)
            inst = self._query()
            cfg = EnsembleConfig(queries=t, shots=2)
            gateway = ScriptedGateway(["kite"] * t)
            prediction = ensemble_predict(
                gateway, pool, inst, inst.caption, np.ones(8), [], cfg, "promptcap"
            )
            assert prediction.answer == "kite"

    def test_partial_failures_tolerated(self):
        pool = make_pool(10)
        inst = self._query()
        cfg = EnsembleConfig(queries=3, shots=2)
        gateway = ScriptedGateway([ServiceError(500, "boom"), "snow", "snow"])
        prediction = ensemble_predict(
            gateway, pool, inst, inst.caption, np.ones(8), [], cfg, "promptcap"
        )
        assert prediction.answer == "snow"
        assert prediction.per_query_answers[0] is None

    def test_all_failures_raise(self):
        pool = make_pool(10)
        inst = self._query()
        cfg = EnsembleConfig(queries=2, shots=2)
        gateway = ScriptedGateway([ServiceError(500, "a"), ServiceError(500, "b")])
        with pytest.raises(ServiceError):
            ensemble_predict(
                gateway, pool, inst, inst.caption, np.ones(8), [], cfg, "promptcap"
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EnsembleConfig(queries=0)
        with pytest.raises(ValueError):
            EnsembleConfig(queries=6)
        with pytest.raises(ValueError):
            EnsembleConfig(queries=2, shots=-1)
