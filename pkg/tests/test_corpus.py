import json
import random

import pytest

from followupkit import corpus
from followupkit.corpus import (
    CorpusError,
    Dataset,
    Triplet,
    clean_dataset,
    deduplicate,
    exchanges_from_triplets,
    flag_sensitive_candidates,
    load_dataset,
    load_removal_list,
    merge,
    normalize_fq,
    serialize,
    stats,
)


def write_lines(path, objs):
    with path.open("w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")
    return path


def triplet_line(i, ex=None, iq=None, ia=None, fq=None, source="human"):
    return {
        "id": f"t{i}",
        "exchange_id": ex or f"e{i}",
        "iq": iq or f"why is thing {i} so?",
        "ia": ia or f"because of reason {i}.",
        "fq": fq or f"what drives reason {i}?",
        "source": source,
    }


# -- loading -----------------------------------------------------------------


def test_load_empty_file_gives_zero_records(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("", encoding="utf-8")
    for schema in ("triplets", "exchanges", "generations"):
        assert len(load_dataset(p, schema)) == 0


def test_load_single_triplet(tmp_path):
    p = write_lines(tmp_path / "one.jsonl", [triplet_line(1)])
    ds = load_dataset(p, "triplets")
    assert len(ds) == 1
    assert ds.records[0].fq == "what drives reason 1?"


def test_load_missing_field_names_line_and_field(tmp_path):
    bad = triplet_line(1)
    del bad["fq"]
    p = write_lines(tmp_path / "bad.jsonl", [triplet_line(2), bad])
    with pytest.raises(CorpusError) as err:
        load_dataset(p, "triplets")
    assert "line 2" in str(err.value)
    assert "fq" in str(err.value)


def test_load_blank_field_rejected(tmp_path):
    p = write_lines(tmp_path / "blank.jsonl", [triplet_line(1, iq="   ")])
    with pytest.raises(CorpusError) as err:
        load_dataset(p, "triplets")
    assert "iq" in str(err.value)


def test_load_malformed_json_names_line(tmp_path):
    p = tmp_path / "mangled.jsonl"
    p.write_text(json.dumps(triplet_line(1)) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(CorpusError) as err:
        load_dataset(p, "triplets")
    assert "line 2" in str(err.value)


def test_load_duplicate_id_rejected(tmp_path):
    p = write_lines(tmp_path / "dup.jsonl", [triplet_line(1), triplet_line(1, ex="e9")])
    with pytest.raises(CorpusError, match="duplicate id"):
        load_dataset(p, "triplets")


def test_load_unknown_source_rejected(tmp_path):
    p = write_lines(tmp_path / "src.jsonl", [triplet_line(1, source="martian")])
    with pytest.raises(CorpusError, match="source"):
        load_dataset(p, "triplets")


def test_load_dangling_exchange_checked_against_universe(tmp_path):
    p = write_lines(tmp_path / "dangling.jsonl", [triplet_line(1, ex="ghost")])
    exchanges = Dataset("exchanges", [corpus.Exchange("e1", "q?", "a.")])
    with pytest.raises(CorpusError, match="ghost"):
        load_dataset(p, "triplets", exchanges=exchanges)
    # without a universe the reference is taken on faith
    assert len(load_dataset(p, "triplets")) == 1


def test_load_generations_duplicate_set_and_fq(tmp_path):
    gen = {"exchange_id": "e1", "model": "m", "fqs": ["a?", "b?"]}
    p = write_lines(tmp_path / "g.jsonl", [gen, gen])
    with pytest.raises(CorpusError, match="duplicate"):
        load_dataset(p, "generations")
    p2 = write_lines(
        tmp_path / "g2.jsonl", [{"exchange_id": "e1", "model": "m", "fqs": ["a?", "a?"]}]
    )
    with pytest.raises(CorpusError, match="duplicate"):
        load_dataset(p2, "generations")


def test_round_trip_is_fixed_point(tmp_path):
    objs = [triplet_line(i) for i in range(1, 6)]
    p1 = write_lines(tmp_path / "a.jsonl", objs)
    ds1 = load_dataset(p1, "triplets")
    p2 = tmp_path / "b.jsonl"
    serialize(ds1, p2)
    ds2 = load_dataset(p2, "triplets")
    assert ds1.records == ds2.records
    p3 = tmp_path / "c.jsonl"
    serialize(ds2, p3)
    assert p2.read_bytes() == p3.read_bytes()


# -- normalize_fq ------------------------------------------------------------


def test_normalize_strips_enumeration():
    assert normalize_fq("1. What role do particles play?") == "What role do particles play?"


def test_normalize_clean_input_unchanged():
    assert normalize_fq("What role do particles play?") == "What role do particles play?"


def test_normalize_empty_after_stripping_errors():
    with pytest.raises(CorpusError):
        normalize_fq("- ")


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("- What is rust?", "What is rust?"),
        ("• What is rust?", "What is rust?"),
        ("2) What is rust?", "What is rust?"),
        ("(3) What is rust?", "What is rust?"),
        ('"What is rust?"', "What is rust?"),
        ("“What is rust?”", "What is rust?"),
        ("3. - “What is rust?”", "What is rust?"),
        ("What  is\trust?", "What is rust?"),
        ("What is 'rust'?", "What is 'rust'?"),
    ],
)
def test_normalize_examples(raw, expected):
    assert normalize_fq(raw) == expected


def test_normalize_idempotent_on_random_decorations():
    rng = random.Random(7)
    bullets = ["- ", "* ", "• ", "1. ", "12) ", "(3) ", "> "]
    for _ in range(100):
        core = " ".join(rng.choice(["what", "why", "how", "is", "rust", "glass"]) for _ in range(rng.randint(2, 6))) + "?"
        raw = "".join(rng.choice(bullets) for _ in range(rng.randint(0, 3))) + core
        if rng.random() < 0.5:
            raw = f'"{raw}"'
        once = normalize_fq(raw)
        assert normalize_fq(once) == once


# -- dedup -------------------------------------------------------------------


def test_dedup_removes_later_occurrence():
    shared = dict(iq="why x?", ia="because y.", fq="what is y?")
    ds = Dataset(
        "triplets",
        [
            Triplet("a", "e1", **shared, source="human"),
            Triplet("b", "e1", iq="why z?", ia="since w.", fq="what is w?", source="human"),
            Triplet("c", "e1", **shared, source="human"),
        ],
    )
    kept, removed = deduplicate(ds)
    assert [t.id for t in kept.records] == ["a", "b"]
    assert removed == ["c"]


def test_dedup_no_repeats_removes_nothing():
    ds = Dataset("triplets", [Triplet(f"t{i}", "e1", f"q{i}?", f"a{i}.", f"f{i}?", "human") for i in range(4)])
    kept, removed = deduplicate(ds)
    assert removed == []
    assert kept.records == ds.records


def test_dedup_normalizes_whitespace_and_unicode():
    a = Triplet("a", "e1", "why  is\tthe sky blue?", "light   scatters.", "how much light?", "human")
    b = Triplet("b", "e1", "why is the sky blue?", "light scatters.", "how much light?", "human")
    kept, removed = deduplicate(Dataset("triplets", [a, b]))
    assert removed == ["b"]
    # NFC: decomposed e + combining acute equals precomposed
    c = Triplet("c", "e2", "café why?", "so.", "what?", "human")
    d = Triplet("d", "e2", "café why?", "so.", "what?", "human")
    kept, removed = deduplicate(Dataset("triplets", [c, d]))
    assert removed == ["d"]


def test_dedup_idempotent(synthetic_corpus):
    ds = load_dataset(synthetic_corpus["corpus"], "triplets")
    once, removed1 = deduplicate(ds)
    twice, removed2 = deduplicate(once)
    assert removed2 == []
    assert twice.records == once.records
    assert len(removed1) == synthetic_corpus["expected"]["duplicates_removed"]


# -- removal lists and flagging ----------------------------------------------


def test_removal_list_parsing(tmp_path):
    p = tmp_path / "ids.txt"
    p.write_text("# header\n\nt1\nt2  \n# trailing\n", encoding="utf-8")
    assert load_removal_list(p) == ["t1", "t2"]


def test_apply_removal_list_empty_is_identity():
    ds = Dataset("triplets", [Triplet("a", "e1", "q?", "a.", "f?", "human")])
    out = corpus.apply_removal_list(ds, [], "quality")
    assert out.records == ds.records


def test_apply_removal_list_unknown_ids_error():
    ds = Dataset("triplets", [Triplet("a", "e1", "q?", "a.", "f?", "human")])
    with pytest.raises(CorpusError) as err:
        corpus.apply_removal_list(ds, ["zz", "aa"], "quality")
    assert "aa" in str(err.value) and "zz" in str(err.value)


def test_flag_sensitive_token_boundaries():
    ds = Dataset(
        "triplets",
        [
            Triplet("a", "e1", "why crime rises?", "a.", "f?", "human"),
            Triplet("b", "e2", "q?", "the crimean peninsula.", "f?", "human"),
            Triplet("c", "e3", "q?", "a.", "is CRIME counted?", "human"),
        ],
    )
    flagged = flag_sensitive_candidates(ds, ["crime"])
    assert flagged == [("a", ["crime"]), ("c", ["crime"])]
    assert flag_sensitive_candidates(ds, ["self-harm"]) == []


# -- end-to-end cleaning on the synthetic corpus ------------------------------


def test_clean_dataset_expected_arithmetic(synthetic_corpus):
    ds = load_dataset(synthetic_corpus["corpus"], "triplets")
    quality = load_removal_list(synthetic_corpus["quality"])
    sensitive = load_removal_list(synthetic_corpus["sensitive"])
    cleaned, report = clean_dataset(ds, quality, sensitive)
    exp = synthetic_corpus["expected"]
    assert report.input_count == exp["input_count"]
    assert report.duplicates_removed == exp["duplicates_removed"]
    assert report.quality_removed == exp["quality_removed"]
    assert report.sensitive_removed == exp["sensitive_removed"]
    assert report.retained == exp["retained"]
    assert report.retained == report.input_count - report.duplicates_removed - report.quality_removed - report.sensitive_removed
    assert len(report.removed_ids) == report.input_count - report.retained
    st = stats(cleaned)
    assert st.unique_pair_count == exp["unique_pairs"]
    assert st.triplet_count == exp["retained"]


def test_cleaning_report_serializes():
    ds = Dataset("triplets", [Triplet("a", "e1", "q?", "a.", "f?", "human")])
    _, report = clean_dataset(ds, [], [])
    doc = report.to_dict()
    assert doc["retained"] == 1 and doc["removed_ids"] == []


# -- merge and stats ----------------------------------------------------------


def _ds(*triplets):
    return Dataset("triplets", list(triplets))


def test_merge_with_empty_is_identity():
    human = _ds(Triplet("a", "e1", "q?", "a.", "f?", "human"))
    merged = merge(human, _ds())
    assert merged.records == human.records


def test_merge_id_collision_errors():
    a = _ds(Triplet("a", "e1", "q?", "a.", "f?", "human"))
    b = _ds(Triplet("a", "e1", "q?", "a.", "g?", "synthetic"))
    with pytest.raises(CorpusError, match="collision"):
        merge(a, b)


def test_merge_drops_cross_set_duplicates_and_orders():
    human = _ds(
        Triplet("h1", "e2", "q2?", "a2.", "f2?", "human"),
        Triplet("h2", "e1", "q1?", "a1.", "f1?", "human"),
    )
    synthetic = _ds(
        Triplet("s1", "e2", "q2?", "a2.", "f2?", "synthetic"),  # duplicate content
        Triplet("s2", "e1", "q1?", "a1.", "new fq?", "synthetic"),
    )
    merged = merge(human, synthetic)
    assert [t.id for t in merged.records] == ["h1", "h2", "s2"]
    assert stats(merged).triplet_count <= len(human) + len(synthetic)
    disjoint = merge(human, _ds(Triplet("s9", "e3", "q3?", "a3.", "f3?", "synthetic")))
    assert stats(disjoint).triplet_count == len(human) + 1


def test_stats_counts_and_mean():
    assert stats(_ds()).triplet_count == 0
    assert stats(_ds()).fq_per_pair_mean == 0.0
    ds = _ds(
        Triplet("a", "e1", "q1?", "a1.", "f1?", "human"),
        Triplet("b", "e1", "q1?", "a1.", "f2?", "human"),
        Triplet("c", "e1", "q1?", "a1.", "f3?", "synthetic"),
        Triplet("d", "e2", "q2?", "a2.", "f4?", "human"),
    )
    st = stats(ds)
    assert st.unique_pair_count == 2
    assert st.fq_per_pair_mean == 2.0
    assert st.source_breakdown == {"human": 3, "synthetic": 1}


def test_stats_mean_rounded_to_4_places():
    triplets = [Triplet(f"t{i}", f"e{i % 3}", f"q{i % 3}?", "a.", f"f{i}?", "human") for i in range(7)]
    st = stats(Dataset("triplets", triplets))
    assert st.fq_per_pair_mean == round(7 / 3, 4)


def test_exchanges_from_triplets():
    ds = _ds(
        Triplet("a", "e1", "q1?", "a1.", "f1?", "human"),
        Triplet("b", "e1", "q1?", "a1.", "f2?", "human"),
        Triplet("c", "e2", "q2?", "a2.", "f3?", "human"),
    )
    ex = exchanges_from_triplets(ds)
    assert ex.schema == "exchanges"
    assert [(e.id, e.iq) for e in ex.records] == [("e1", "q1?"), ("e2", "q2?")]
