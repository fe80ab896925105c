"""Survey templates, batch sampling, agreement statistics, durable store."""

from __future__ import annotations

import json
import random

import pytest

from followupkit.annotation import (
    MODEL_EVAL_TEMPLATE,
    TEMPLATES,
    VALIDATION_TEMPLATE,
    AnnotationError,
    AnnotationResponse,
    AnnotationTask,
    ScaleOption,
    SubmissionError,
    SurveyQuestion,
    SurveyTemplate,
    agreement_report,
    aspect_summary,
    cohen_kappa,
    create_batch,
    one_way_anova,
)
from followupkit.annotation.store import (
    AnnotationStore,
    DuplicateSubmissionError,
    TaskCompleteError,
    UnknownBatchError,
    UnknownTaskError,
)
from followupkit.corpus import Dataset, Exchange, GenerationSet, Triplet


def _yn():
    return (ScaleOption("Yes", 1), ScaleOption("No", 0))


# -- template construction ----------------------------------------------------


def test_template_rejects_duplicate_keys():
    with pytest.raises(AnnotationError, match="duplicate question keys"):
        SurveyTemplate(
            template_id="x",
            questions=(
                SurveyQuestion("a", "A?", _yn()),
                SurveyQuestion("a", "A again?", _yn()),
            ),
        )


def test_template_rejects_duplicate_option_values():
    with pytest.raises(AnnotationError, match="duplicate option values"):
        SurveyTemplate(
            template_id="x",
            questions=(
                SurveyQuestion("a", "A?", (ScaleOption("Yes", 1), ScaleOption("Also yes", 1))),
            ),
        )


def test_template_rejects_unknown_dependency():
    with pytest.raises(AnnotationError, match="unknown key"):
        SurveyTemplate(
            template_id="x",
            questions=(
                SurveyQuestion("a", "A?", _yn()),
                SurveyQuestion("b", "B?", _yn(), conditional_on=("ghost", 1)),
            ),
        )


def test_template_rejects_chained_conditions():
    with pytest.raises(AnnotationError, match="may not chain"):
        SurveyTemplate(
            template_id="x",
            questions=(
                SurveyQuestion("a", "A?", _yn()),
                SurveyQuestion("b", "B?", _yn(), conditional_on=("a", 1)),
                SurveyQuestion("c", "C?", _yn(), conditional_on=("b", 1)),
            ),
        )


def test_template_rejects_impossible_trigger():
    with pytest.raises(AnnotationError, match="impossible value"):
        SurveyTemplate(
            template_id="x",
            questions=(
                SurveyQuestion("a", "A?", _yn()),
                SurveyQuestion("b", "B?", _yn(), conditional_on=("a", 7)),
            ),
        )


def test_validation_template_scales():
    t = TEMPLATES["validation"]
    assert t is VALIDATION_TEMPLATE
    assert [q.key for q in t.questions] == ["validity", "sensitivity", "relatedness"]
    assert t.question("validity").allowed_values() == {0, 1}
    assert t.question("sensitivity").allowed_values() == {0, 1}
    assert t.question("relatedness").allowed_values() == {0, 1, 2, 3}
    assert all(q.conditional_on is None for q in t.questions)


def test_model_eval_template_scales():
    t = TEMPLATES["model_eval"]
    assert t is MODEL_EVAL_TEMPLATE
    keys = [q.key for q in t.questions]
    assert keys == ["validity", "errors", "complexity", "relevance", "informativeness"]
    assert t.question("validity").conditional_on is None
    for key in keys[1:]:
        assert t.question(key).conditional_on == ("validity", 1)
    assert t.question("errors").allowed_values() == {0, 1}
    # the "yes" pole of the errors question means errors are present
    by_label = {o.label: o.value for o in t.question("errors").options}
    assert by_label == {"Contains errors": 1, "No errors": 0}
    for key in ("complexity", "relevance", "informativeness"):
        assert t.question(key).allowed_values() == {0, 1, 2, 3}


def test_template_question_lookup_raises_on_unknown_key():
    with pytest.raises(KeyError):
        VALIDATION_TEMPLATE.question("ghost")


# -- answer validation --------------------------------------------------------


def test_validate_answers_accepts_full_validation_payload():
    VALIDATION_TEMPLATE.validate_answers({"validity": 1, "sensitivity": 0, "relatedness": 3})


def test_validate_answers_unknown_key_wins_over_missing():
    # a payload that is both missing a question and carries a stray key
    # reports the stray key first
    with pytest.raises(SubmissionError) as exc:
        VALIDATION_TEMPLATE.validate_answers({"validity": 1, "mood": 2})
    assert exc.value.code == "unknown_key"
    assert exc.value.field_key == "mood"


def test_validate_answers_missing():
    with pytest.raises(SubmissionError) as exc:
        VALIDATION_TEMPLATE.validate_answers({"validity": 1, "sensitivity": 0})
    assert exc.value.code == "missing"
    assert exc.value.field_key == "relatedness"


def test_validate_answers_off_scale():
    with pytest.raises(SubmissionError) as exc:
        VALIDATION_TEMPLATE.validate_answers({"validity": 1, "sensitivity": 0, "relatedness": 4})
    assert exc.value.code == "off_scale"
    assert exc.value.field_key == "relatedness"


def test_validate_answers_conditional_required_when_trigger_holds():
    with pytest.raises(SubmissionError) as exc:
        MODEL_EVAL_TEMPLATE.validate_answers({"validity": 1})
    assert exc.value.code == "missing"
    assert exc.value.field_key == "errors"


def test_validate_answers_forbidden_when_trigger_absent():
    with pytest.raises(SubmissionError) as exc:
        MODEL_EVAL_TEMPLATE.validate_answers({"validity": 0, "errors": 0})
    assert exc.value.code == "forbidden"
    assert exc.value.field_key == "errors"


def test_validate_answers_invalid_item_skips_all_conditionals():
    MODEL_EVAL_TEMPLATE.validate_answers({"validity": 0})


def test_validate_answers_valid_item_needs_every_aspect():
    MODEL_EVAL_TEMPLATE.validate_answers(
        {"validity": 1, "errors": 0, "complexity": 2, "relevance": 3, "informativeness": 1}
    )


def test_submission_error_is_annotation_error():
    assert issubclass(SubmissionError, AnnotationError)
    assert issubclass(AnnotationError, ValueError)


# -- batch construction -------------------------------------------------------


def _triplet_dataset() -> Dataset:
    records = []
    for i in range(1, 6):
        for j in (1, 2):
            records.append(
                Triplet(
                    id=f"q{i}-{j}",
                    exchange_id=f"e{i}",
                    iq=f"Why does event {i} happen?",
                    ia=f"Because of cause {i}.",
                    fq=f"What about detail {j} of event {i}?",
                    source="human",
                )
            )
    return Dataset(schema="triplets", records=records)


def _exchange_dataset() -> Dataset:
    return Dataset(
        schema="exchanges",
        records=[
            Exchange(id="e1", iq="Why do tides rise?", ia="The moon pulls on the ocean."),
            Exchange(id="e2", iq="Why is the sky blue?", ia="Short wavelengths scatter more."),
        ],
    )


def test_create_batch_is_deterministic_per_seed():
    data = _triplet_dataset()
    a = create_batch(data, sample_size=3, seed=7, template_id="validation")
    b = create_batch(data, sample_size=3, seed=7, template_id="validation")
    assert a == b


def test_create_batch_samples_whole_exchanges():
    data = _triplet_dataset()
    tasks = create_batch(data, sample_size=3, seed=7, template_id="validation")
    # two triplets ride on each sampled exchange
    assert len(tasks) == 6
    picked = {t.exchange_id for t in tasks}
    assert len(picked) == 3
    from collections import Counter

    assert set(Counter(t.exchange_id for t in tasks).values()) == {2}


def test_create_batch_task_ids_are_sequential():
    tasks = create_batch(_triplet_dataset(), sample_size=2, seed=1, template_id="validation")
    assert [t.task_id for t in tasks] == [f"t{i:04d}" for i in range(1, len(tasks) + 1)]


def test_create_batch_triplets_label_by_source():
    tasks = create_batch(_triplet_dataset(), sample_size=1, seed=0, template_id="validation")
    assert {t.model_label for t in tasks} == {"human"}


def test_create_batch_generations_label_by_model():
    gens = [
        GenerationSet(exchange_id="e1", model="alpha", fqs=("How high do tides get?",)),
        GenerationSet(exchange_id="e2", model="beta", fqs=("Why not violet then?",)),
    ]
    tasks = create_batch(
        gens, sample_size=2, seed=3, template_id="model_eval", exchanges=_exchange_dataset()
    )
    assert {t.model_label for t in tasks} == {"alpha", "beta"}
    by_ex = {t.exchange_id: t for t in tasks}
    assert by_ex["e1"].iq == "Why do tides rise?"
    assert by_ex["e1"].ia == "The moon pulls on the ocean."
    assert by_ex["e1"].fq == "How high do tides get?"


def test_create_batch_generations_require_exchanges():
    gens = [GenerationSet(exchange_id="e1", model="alpha", fqs=("How high?",))]
    with pytest.raises(AnnotationError, match="exchanges dataset"):
        create_batch(gens, sample_size=1, seed=0, template_id="model_eval")


def test_create_batch_rejects_dangling_exchange_id():
    gens = [GenerationSet(exchange_id="e99", model="alpha", fqs=("How high?",))]
    with pytest.raises(AnnotationError, match="e99"):
        create_batch(
            gens, sample_size=1, seed=0, template_id="model_eval", exchanges=_exchange_dataset()
        )


def test_create_batch_rejects_oversized_sample():
    with pytest.raises(AnnotationError, match="exceeds"):
        create_batch(_triplet_dataset(), sample_size=6, seed=0, template_id="validation")


def test_create_batch_rejects_unknown_template():
    with pytest.raises(AnnotationError, match="unknown template"):
        create_batch(_triplet_dataset(), sample_size=1, seed=0, template_id="ghost")


def test_create_batch_rejects_nonpositive_annotator_requirement():
    with pytest.raises(AnnotationError, match="required_annotators"):
        create_batch(
            _triplet_dataset(), sample_size=1, seed=0, template_id="validation",
            required_annotators=0,
        )


def test_create_batch_rejects_non_triplet_dataset():
    with pytest.raises(AnnotationError, match="triplets or generation sets"):
        create_batch(_exchange_dataset(), sample_size=1, seed=0, template_id="validation")


def test_task_public_dict_hides_model_label():
    task = create_batch(_triplet_dataset(), sample_size=1, seed=0, template_id="validation")[0]
    payload = task.public_dict()
    assert set(payload) == {"task_id", "exchange_id", "iq", "ia", "fq", "template_id"}
    assert "model_label" not in json.dumps(payload)
    assert "human" not in json.dumps(payload)


# -- Cohen's kappa ------------------------------------------------------------


def test_kappa_perfect_agreement():
    assert cohen_kappa([1, 0, 2, 1], [1, 0, 2, 1]) == 1.0


def test_kappa_chance_level_fixture():
    # p_o = 0.5 and marginal chance agreement = 0.5, so kappa is exactly 0
    a = [1, 1, 1, 0, 0, 0]
    b = [1, 1, 0, 1, 0, 1]
    assert cohen_kappa(a, b) == pytest.approx(0.0, abs=1e-12)


def test_kappa_symmetry():
    a = [1, 0, 1, 1, 0, 2, 2, 0]
    b = [1, 1, 0, 1, 0, 2, 0, 2]
    assert cohen_kappa(a, b) == pytest.approx(cohen_kappa(b, a), abs=1e-15)


def test_kappa_relabel_invariance():
    a = [1, 0, 1, 1, 0, 0, 1, 0]
    b = [1, 1, 0, 1, 0, 1, 1, 0]
    names = {0: "no", 1: "yes"}
    assert cohen_kappa(a, b) == pytest.approx(
        cohen_kappa([names[x] for x in a], [names[x] for x in b]), abs=1e-15
    )


def test_kappa_constant_identical_raters():
    # both raters always say yes: chance agreement is total, kappa is 1
    assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 1.0


def test_kappa_constant_disjoint_raters():
    assert cohen_kappa([0, 0, 0], [1, 1, 1]) == pytest.approx(0.0, abs=1e-15)


def test_kappa_independent_raters_near_zero():
    rng = random.Random(20260816)
    n = 10000
    a = [rng.randrange(2) for _ in range(n)]
    b = [rng.randrange(2) for _ in range(n)]
    assert abs(cohen_kappa(a, b)) < 0.05


def test_kappa_rejects_length_mismatch():
    with pytest.raises(ValueError, match="equal length"):
        cohen_kappa([1, 0], [1])


def test_kappa_rejects_empty():
    with pytest.raises(ValueError, match="nonempty"):
        cohen_kappa([], [])


def test_kappa_matches_scipy_contingency_formula():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = random.Random(99)
    for _ in range(50):
        n = rng.randrange(4, 40)
        k = rng.randrange(2, 5)
        a = [rng.randrange(k) for _ in range(n)]
        b = [rng.randrange(k) for _ in range(n)]
        got = cohen_kappa(a, b)
        # independent oracle: build the confusion matrix and apply the
        # marginal-product chance correction directly
        labels = sorted(set(a) | set(b))
        idx = {lab: i for i, lab in enumerate(labels)}
        m = [[0] * len(labels) for _ in labels]
        for x, y in zip(a, b):
            m[idx[x]][idx[y]] += 1
        p_o = sum(m[i][i] for i in range(len(labels))) / n
        row = [sum(r) / n for r in m]
        col = [sum(m[i][j] for i in range(len(labels))) / n for j in range(len(labels))]
        p_e = sum(r * c for r, c in zip(row, col))
        if p_e == 1.0:
            assert got == 1.0
        else:
            assert got == pytest.approx((p_o - p_e) / (1.0 - p_e), abs=1e-12)
    del scipy_stats


# -- agreement reports --------------------------------------------------------


def _val_tasks(n: int, required: int = 2) -> list[AnnotationTask]:
    return [
        AnnotationTask(
            task_id=f"t{i:04d}",
            exchange_id=f"e{i}",
            iq="Why does iron rust?",
            ia="Oxygen reacts with the metal.",
            fq=f"What slows the reaction down in case {i}?",
            model_label="m1" if i % 2 else "m2",
            template_id="validation",
            required_annotators=required,
        )
        for i in range(1, n + 1)
    ]


def _response(task_id, annotator, validity, sensitivity=0, relatedness=2):
    return AnnotationResponse(
        task_id=task_id,
        annotator_id=annotator,
        answers={"validity": validity, "sensitivity": sensitivity, "relatedness": relatedness},
    )


def test_agreement_perfect_and_chance_level_pair():
    tasks = _val_tasks(6)
    a_validity = [1, 1, 1, 0, 0, 0]
    b_validity = [1, 1, 0, 1, 0, 1]
    related = [3, 3, 2, 2, 1, 1]
    responses = []
    for t, av, bv, rel in zip(tasks, a_validity, b_validity, related):
        responses.append(_response(t.task_id, "a1", av, sensitivity=0, relatedness=rel))
        responses.append(_response(t.task_id, "a2", bv, sensitivity=0, relatedness=rel))
    report = agreement_report(tasks, responses, VALIDATION_TEMPLATE)
    assert report["annotators"] == ["a1", "a2"]
    assert set(report["questions"]) == {"validity", "sensitivity", "relatedness"}
    validity = report["questions"]["validity"]
    assert set(validity["pairs"]) == {"a1|a2"}
    assert validity["pairs"]["a1|a2"] == pytest.approx(0.0, abs=1e-12)
    assert validity["mean_kappa"] == pytest.approx(0.0, abs=1e-12)
    # identical constant answers hit the total-chance-agreement convention
    assert report["questions"]["sensitivity"]["pairs"]["a1|a2"] == 1.0
    assert report["questions"]["relatedness"]["pairs"]["a1|a2"] == 1.0


def test_agreement_three_annotators_mean_over_pairs():
    tasks = _val_tasks(4, required=3)
    validity = {
        "a1": [1, 1, 0, 0],
        "a2": [1, 1, 0, 0],
        "a3": [1, 0, 1, 0],
    }
    responses = [
        _response(t.task_id, ann, v)
        for ann, vals in validity.items()
        for t, v in zip(tasks, vals)
    ]
    report = agreement_report(tasks, responses, VALIDATION_TEMPLATE)
    pairs = report["questions"]["validity"]["pairs"]
    assert set(pairs) == {"a1|a2", "a1|a3", "a2|a3"}
    assert pairs["a1|a2"] == 1.0
    assert pairs["a1|a3"] == pytest.approx(0.0, abs=1e-12)
    assert pairs["a2|a3"] == pytest.approx(0.0, abs=1e-12)
    assert report["questions"]["validity"]["mean_kappa"] == pytest.approx(1 / 3, abs=1e-12)


def test_agreement_rejects_incomplete_batch_listing_task_ids():
    tasks = _val_tasks(3)
    responses = [
        _response("t0001", "a1", 1),
        _response("t0001", "a2", 1),
        _response("t0002", "a1", 1),
    ]
    with pytest.raises(AnnotationError, match=r"batch incomplete.*t0002, t0003"):
        agreement_report(tasks, responses, VALIDATION_TEMPLATE)


def test_agreement_rejects_single_annotator():
    tasks = _val_tasks(2, required=1)
    responses = [_response(t.task_id, "solo", 1) for t in tasks]
    with pytest.raises(AnnotationError, match="at least two annotators"):
        agreement_report(tasks, responses, VALIDATION_TEMPLATE)


def test_agreement_rejects_zero_pair_overlap():
    # two annotators, each covering a disjoint half of the batch
    tasks = _val_tasks(2, required=1)
    responses = [_response("t0001", "a1", 1), _response("t0002", "a2", 1)]
    with pytest.raises(AnnotationError, match="overlap"):
        agreement_report(tasks, responses, VALIDATION_TEMPLATE)


def _eval_response(task_id, annotator, answers):
    return AnnotationResponse(task_id=task_id, annotator_id=annotator, answers=answers)


def _eval_tasks(n: int, required: int = 2) -> list[AnnotationTask]:
    return [
        AnnotationTask(
            task_id=f"t{i:04d}",
            exchange_id=f"e{i}",
            iq="Why does bread rise?",
            ia="Yeast makes gas bubbles.",
            fq=f"What happens without kneading in case {i}?",
            model_label="gen-a" if i % 2 else "gen-b",
            template_id="model_eval",
            required_annotators=required,
        )
        for i in range(1, n + 1)
    ]


def test_agreement_conditional_questions_shrink_overlap():
    tasks = _eval_tasks(4)
    full_a = {"validity": 1, "errors": 0, "complexity": 3, "relevance": 2, "informativeness": 3}
    full_b = {"validity": 1, "errors": 0, "complexity": 2, "relevance": 2, "informativeness": 3}
    full_a2 = {"validity": 1, "errors": 1, "complexity": 2, "relevance": 2, "informativeness": 1}
    full_b2 = {"validity": 1, "errors": 1, "complexity": 3, "relevance": 2, "informativeness": 1}
    responses = [
        _eval_response("t0001", "a1", dict(full_a)),
        _eval_response("t0001", "a2", dict(full_b)),
        # split verdicts: only one side supplies the conditional keys
        _eval_response("t0002", "a1", dict(full_a)),
        _eval_response("t0002", "a2", {"validity": 0}),
        _eval_response("t0003", "a1", {"validity": 0}),
        _eval_response("t0003", "a2", {"validity": 0}),
        _eval_response("t0004", "a1", dict(full_a2)),
        _eval_response("t0004", "a2", dict(full_b2)),
    ]
    report = agreement_report(tasks, responses, MODEL_EVAL_TEMPLATE)
    # validity kappa over all four tasks: p_o = 3/4, p_e = 1/2
    assert report["questions"]["validity"]["pairs"]["a1|a2"] == pytest.approx(0.5, abs=1e-12)
    # conditional keys only overlap on t0001 and t0004
    errors = report["questions"]["errors"]["pairs"]["a1|a2"]
    assert errors == 1.0  # labels (0,1) vs (0,1)
    complexity = report["questions"]["complexity"]["pairs"]["a1|a2"]
    assert complexity == pytest.approx(-1.0, abs=1e-12)  # (3,2) vs (2,3)
    assert report["questions"]["relevance"]["pairs"]["a1|a2"] == 1.0


def test_agreement_mean_kappa_none_when_conditional_never_overlaps():
    tasks = _eval_tasks(2)
    responses = [
        _eval_response("t0001", "a1", {"validity": 0}),
        _eval_response("t0001", "a2", {"validity": 0}),
        _eval_response("t0002", "a1", {"validity": 0}),
        _eval_response("t0002", "a2", {"validity": 0}),
    ]
    report = agreement_report(tasks, responses, MODEL_EVAL_TEMPLATE)
    assert report["questions"]["validity"]["mean_kappa"] == 1.0
    for key in ("errors", "complexity", "relevance", "informativeness"):
        assert report["questions"][key]["pairs"] == {}
        assert report["questions"][key]["mean_kappa"] is None


# -- aspect summaries ---------------------------------------------------------


def test_aspect_summary_groups_by_model_label():
    tasks = _val_tasks(2)  # t0001 -> m1, t0002 -> m2
    responses = [
        _response("t0001", "a1", 1, sensitivity=0, relatedness=3),
        _response("t0001", "a2", 1, sensitivity=0, relatedness=2),
        _response("t0002", "a1", 0, sensitivity=1, relatedness=1),
        _response("t0002", "a2", 1, sensitivity=0, relatedness=1),
    ]
    out = aspect_summary(tasks, responses, VALIDATION_TEMPLATE)
    assert sorted(out) == ["m1", "m2"]
    m1 = out["m1"]
    assert m1["validity"] == {"mean": 1, "variance": 0, "n": 2}
    assert m1["relatedness"]["mean"] == pytest.approx(2.5)
    assert m1["relatedness"]["variance"] == pytest.approx(0.25)
    assert m1["relatedness"]["n"] == 2
    m2 = out["m2"]
    assert m2["validity"]["mean"] == pytest.approx(0.5)
    assert m2["sensitivity"]["mean"] == pytest.approx(0.5)
    assert m2["relatedness"] == {"mean": 1, "variance": 0, "n": 2}


def test_aspect_summary_zero_n_conditional_aspect():
    tasks = _eval_tasks(2)  # t0001 -> gen-a, t0002 -> gen-b
    responses = [
        _eval_response("t0001", "a1", {"validity": 1, "errors": 0, "complexity": 2,
                                       "relevance": 3, "informativeness": 2}),
        _eval_response("t0002", "a1", {"validity": 0}),
    ]
    out = aspect_summary(tasks, responses, MODEL_EVAL_TEMPLATE)
    assert out["gen-a"]["complexity"] == {"mean": 2, "variance": 0, "n": 1}
    assert out["gen-b"]["validity"] == {"mean": 0, "variance": 0, "n": 1}
    # the invalid verdict contributes nothing to the conditional aspects
    assert out["gen-b"]["errors"] == {"mean": None, "variance": None, "n": 0}
    assert out["gen-b"]["informativeness"]["n"] == 0


def test_aspect_summary_rejects_unknown_task():
    tasks = _val_tasks(1)
    responses = [_response("t0042", "a1", 1)]
    with pytest.raises(AnnotationError, match="unknown task"):
        aspect_summary(tasks, responses, VALIDATION_TEMPLATE)


# -- one-way ANOVA ------------------------------------------------------------


def test_anova_shifted_groups_fixture():
    res = one_way_anova([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    assert res.f_statistic == pytest.approx(3.0, abs=1e-12)
    assert res.df_between == 2
    assert res.df_within == 6
    scipy_stats = pytest.importorskip("scipy.stats")
    expect = scipy_stats.f_oneway([1, 2, 3], [2, 3, 4], [3, 4, 5])
    assert res.f_statistic == pytest.approx(expect.statistic, rel=1e-12)
    assert res.p_value == pytest.approx(expect.pvalue, rel=1e-9)


def test_anova_identical_groups():
    res = one_way_anova([[2, 2, 2], [2, 2, 2]])
    assert res.f_statistic == 0.0
    assert res.p_value == 1.0


def test_anova_constant_groups_with_distinct_means():
    res = one_way_anova([[1, 1], [2, 2]])
    assert res.f_statistic == float("inf")
    assert res.p_value == 0.0


def test_anova_rejects_single_group():
    with pytest.raises(ValueError, match="two groups"):
        one_way_anova([[1, 2, 3]])


def test_anova_rejects_singleton_group():
    with pytest.raises(ValueError, match="two observations"):
        one_way_anova([[1, 2], [5]])


def test_anova_matches_scipy_on_random_groups():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = random.Random(271828)
    for _ in range(30):
        groups = [
            [rng.gauss(rng.uniform(-1, 1), 1.0) for _ in range(rng.randrange(2, 9))]
            for _ in range(rng.randrange(2, 5))
        ]
        res = one_way_anova(groups)
        expect = scipy_stats.f_oneway(*groups)
        assert res.f_statistic == pytest.approx(expect.statistic, rel=1e-9)
        assert res.p_value == pytest.approx(expect.pvalue, rel=1e-9, abs=1e-12)


# -- durable store ------------------------------------------------------------


VAL_OK = {"validity": 1, "sensitivity": 0, "relatedness": 2}


def _store_tasks(n: int, required: int = 2) -> list[AnnotationTask]:
    return _val_tasks(n, required=required)


def test_store_namespaces_task_ids_by_batch(tmp_path):
    store = AnnotationStore(tmp_path)
    bid = store.create_batch(_store_tasks(2), "validation")
    assert bid == "b0001"
    assert [t.task_id for t in store.batch_tasks(bid)] == ["b0001-t0001", "b0001-t0002"]
    assert store.create_batch(_store_tasks(1), "validation") == "b0002"
    assert store.batch_ids() == ["b0001", "b0002"]


def test_store_rejects_unknown_template_and_empty_batch(tmp_path):
    store = AnnotationStore(tmp_path)
    with pytest.raises(AnnotationError, match="unknown template"):
        store.create_batch(_store_tasks(1), "ghost")
    with pytest.raises(AnnotationError, match="at least one task"):
        store.create_batch([], "validation")


def test_store_unknown_batch_lookups(tmp_path):
    store = AnnotationStore(tmp_path)
    with pytest.raises(UnknownBatchError):
        store.batch_tasks("b0404")
    with pytest.raises(UnknownBatchError):
        store.template_for("b0404")
    with pytest.raises(UnknownBatchError):
        store.next_task("a1", "b0404")


def test_next_task_prefers_fewest_responses(tmp_path):
    store = AnnotationStore(tmp_path)
    bid = store.create_batch(_store_tasks(2, required=3), "validation")
    # fresh store: ties break by creation order
    assert store.next_task("a1", bid).task_id == "b0001-t0001"
    store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    store.submit(AnnotationResponse("b0001-t0001", "a2", dict(VAL_OK)))
    # (2 responses, 0 responses): the untouched task wins for a newcomer
    assert store.next_task("a3", bid).task_id == "b0001-t0002"
    # an annotator never gets a task twice
    assert store.next_task("a1", bid).task_id == "b0001-t0002"


def test_next_task_skips_full_tasks_and_finishes_with_none(tmp_path):
    store = AnnotationStore(tmp_path)
    bid = store.create_batch(_store_tasks(2, required=1), "validation")
    store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    # t0001 is full, so even an annotator who never saw it moves on
    assert store.next_task("a2", bid).task_id == "b0001-t0002"
    store.submit(AnnotationResponse("b0001-t0002", "a2", dict(VAL_OK)))
    assert store.next_task("a3", bid) is None
    assert store.next_task("a1") is None  # scope defaults to every batch


def test_submit_reports_completion(tmp_path):
    store = AnnotationStore(tmp_path)
    store.create_batch(_store_tasks(1, required=3), "validation")
    r1 = store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    r2 = store.submit(AnnotationResponse("b0001-t0001", "a2", dict(VAL_OK)))
    r3 = store.submit(AnnotationResponse("b0001-t0001", "a3", dict(VAL_OK)))
    assert r1 == {"status": "accepted", "task_complete": False}
    assert r2 == {"status": "accepted", "task_complete": False}
    assert r3 == {"status": "accepted", "task_complete": True}


def test_submit_rejects_duplicates_completions_and_unknowns(tmp_path):
    store = AnnotationStore(tmp_path)
    store.create_batch(_store_tasks(1, required=1), "validation")
    store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    with pytest.raises(DuplicateSubmissionError):
        store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    with pytest.raises(TaskCompleteError):
        store.submit(AnnotationResponse("b0001-t0001", "a2", dict(VAL_OK)))
    with pytest.raises(UnknownTaskError):
        store.submit(AnnotationResponse("b0001-t9999", "a1", dict(VAL_OK)))


def test_submit_validation_failure_writes_nothing(tmp_path):
    store = AnnotationStore(tmp_path)
    store.create_batch(_store_tasks(1), "validation")
    with pytest.raises(SubmissionError) as exc:
        store.submit(AnnotationResponse("b0001-t0001", "a1", {"validity": 1}))
    assert exc.value.code == "missing"
    assert not store.log_path.exists()
    # the slot stays open for a corrected submission
    assert store.next_task("a1").task_id == "b0001-t0001"


def test_store_snapshot_cadence(tmp_path):
    store = AnnotationStore(tmp_path)
    store.create_batch(_store_tasks(13, required=2), "validation")
    count = 0
    for i in range(1, 14):
        for ann in ("a1", "a2"):
            store.submit(AnnotationResponse(f"b0001-t{i:04d}", ann, dict(VAL_OK)))
            count += 1
            if count == 24:
                assert not store.snapshot_path.exists()
            if count == 25:
                assert json.loads(store.snapshot_path.read_text()) == {"applied": 25}
    # 26th submission does not move the snapshot
    assert json.loads(store.snapshot_path.read_text()) == {"applied": 25}
    assert count == 26


def test_store_replays_log_after_restart(tmp_path):
    store = AnnotationStore(tmp_path)
    bid = store.create_batch(_store_tasks(2, required=2), "validation")
    store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK), elapsed_seconds=4.5))
    store.submit(AnnotationResponse("b0001-t0001", "a2", dict(VAL_OK)))
    store.submit(AnnotationResponse("b0001-t0002", "a1", dict(VAL_OK)))

    reborn = AnnotationStore(tmp_path)
    assert reborn.batch_ids() == [bid]
    got = reborn.batch_responses(bid)
    assert len(got) == 3
    assert got[0].elapsed_seconds == 4.5
    # progress is preserved: only the second slot of t0002 is open
    assert reborn.next_task("a2", bid).task_id == "b0001-t0002"
    with pytest.raises(DuplicateSubmissionError):
        reborn.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    reborn.submit(AnnotationResponse("b0001-t0002", "a2", dict(VAL_OK)))
    assert reborn.next_task("a1", bid) is None


def test_store_tolerates_truncated_log_tail(tmp_path):
    store = AnnotationStore(tmp_path)
    store.create_batch(_store_tasks(2, required=2), "validation")
    store.submit(AnnotationResponse("b0001-t0001", "a1", dict(VAL_OK)))
    store.submit(AnnotationResponse("b0001-t0001", "a2", dict(VAL_OK)))
    with store.log_path.open("a", encoding="utf-8") as fh:
        fh.write('{"task_id": "b0001-t0002", "annotator_id": "a1", "ans')  # crash mid-write

    reborn = AnnotationStore(tmp_path)
    assert len(reborn.batch_responses("b0001")) == 2
    # the half-written response never happened, so the slot is open
    assert reborn.next_task("a1", "b0001").task_id == "b0001-t0002"


def test_store_agreement_and_summary_round_trip(tmp_path):
    store = AnnotationStore(tmp_path)
    bid = store.create_batch(_store_tasks(2, required=2), "validation")
    for task_id in ("b0001-t0001", "b0001-t0002"):
        for ann in ("a1", "a2"):
            store.submit(AnnotationResponse(task_id, ann, dict(VAL_OK)))
    report = store.agreement(bid)
    assert report["annotators"] == ["a1", "a2"]
    assert report["questions"]["validity"]["pairs"]["a1|a2"] == 1.0
    summary = store.summary(bid)
    assert summary["m1"]["validity"] == {"mean": 1, "variance": 0, "n": 2}


def test_store_export_csv_blanks_skipped_conditionals(tmp_path):
    store = AnnotationStore(tmp_path)
    bid = store.create_batch(_eval_tasks(2, required=1), "model_eval")
    store.submit(
        AnnotationResponse(
            "b0001-t0001",
            "a1",
            {"validity": 1, "errors": 0, "complexity": 2, "relevance": 3, "informativeness": 1},
            elapsed_seconds=7.0,
        )
    )
    store.submit(AnnotationResponse("b0001-t0002", "a1", {"validity": 0}, elapsed_seconds=2.0))
    csv_text = store.export_csv(bid)
    lines = csv_text.strip().split("\n")
    assert lines[0] == (
        "task_id,exchange_id,model_label,annotator_id,elapsed_seconds,"
        "validity,errors,complexity,relevance,informativeness"
    )
    assert lines[1] == "b0001-t0001,e1,gen-a,a1,7.0,1,0,2,3,1"
    assert lines[2] == "b0001-t0002,e2,gen-b,a1,2.0,0,,,,"
