import numpy as np
import pytest

from conex.similarity import (
    JobTraceProfile,
    TraceError,
    classify_similar,
    numeric_similarity,
    parse_trace,
    profile_from_lines,
    sequence_similarity,
    similarity,
    similarity_matrix,
    term_set_similarity,
)

EXAMPLE = ['foo(1,"b")', 'bar("b",True)', 'foo(2,"b")', 'foo(3,"c")']


def test_example_tuple():
    p = profile_from_lines(EXAMPLE)
    assert p.calls == ("foo", "bar", "foo", "foo")
    assert p.terms == {"foo": frozenset({"b", "c"}), "bar": frozenset({"b"})}
    assert p.term_freq["foo"] == pytest.approx({"b": 2 / 3, "c": 1 / 3}, abs=1e-12)
    assert p.term_freq["bar"] == {"b": 1.0}
    assert p.numeric_means == {("foo", 0): 2.0}


def test_example_tuple_two_decimal_rounding():
    # truncated to two decimals the frequencies read b 0.66, c 0.33
    p = profile_from_lines(EXAMPLE)
    assert int(p.term_freq["foo"]["b"] * 100) / 100 == 0.66
    assert int(p.term_freq["foo"]["c"] * 100) / 100 == 0.33


def test_sample_trace_file(samples):
    p = parse_trace(samples / "traces" / "example_tuple.trace")
    assert p.job_id == "example_tuple"
    assert p.to_dict()["D"] == {"foo[0]": 2.0}


def test_empty_trace(tmp_path):
    path = tmp_path / "empty.trace"
    path.write_text("\n# only a comment\n")
    with pytest.raises(TraceError, match="empty"):
        parse_trace(path)


def test_malformed_line_reports_position():
    with pytest.raises(TraceError, match=":2:"):
        profile_from_lines(["ok(1)", "not a call"], "job")


def test_singleton_trace():
    p = profile_from_lines(["x(5)"])
    assert p.calls == ("x",)
    assert p.numeric_means == {("x", 0): 5.0}
    assert "x" not in p.terms and "x" not in p.term_freq


def test_argument_parsing():
    p = profile_from_lines(['open("a,b", O_RDONLY, 0x10, [1, 2], {k: v}) = 3', "12 read(3, NULL, -1.5e2)"])
    assert p.terms["open"] == frozenset({"a,b", "O_RDONLY", "[1, 2]", "{k: v}"})
    assert p.numeric_means[("open", 2)] == 16.0
    assert p.numeric_means[("read", 2)] == -150.0
    assert "NULL" not in p.terms.get("read", frozenset())


def test_self_similarity_is_one():
    p = profile_from_lines(EXAMPLE)
    s = similarity(p, p)
    assert s.overall == 1.0 and s.parts == (1.0, 1.0, 1.0, 1.0)


def test_numeric_part_half():
    a = profile_from_lines(['foo(2, "b")'])
    b = profile_from_lines(['foo(4, "b")'])
    s = similarity(a, b)
    assert s.numeric_means == 0.5
    assert (s.sequence, s.term_sets, s.term_freq) == (1.0, 1.0, 1.0)
    assert s.overall == pytest.approx(0.875)


def test_term_set_jaccard_half():
    a = profile_from_lines(['foo("b")', 'foo("c")'])
    b = profile_from_lines(['foo("b")', 'foo("b")'])
    assert term_set_similarity(a, b) == 0.5


def test_numeric_edge_cases():
    zero = profile_from_lines(["f(0)"])
    assert numeric_similarity(zero, zero) == 1.0
    neg = profile_from_lines(["f(-2)"])
    pos = profile_from_lines(["f(2)"])
    assert numeric_similarity(neg, pos) == 0.0
    bare = profile_from_lines(['f("x")'])
    assert numeric_similarity(bare, bare) == 1.0
    assert numeric_similarity(bare, pos) == 0.0


def test_sequence_ngrams():
    assert sequence_similarity("abcd", "abcd") == 1.0
    assert sequence_similarity(list("abcab"), list("abcab")) == 1.0
    # 3-grams: {abc, bcd} vs {abc, bce} -> 1/3
    assert sequence_similarity(list("abcd"), list("abce")) == pytest.approx(1 / 3)
    # k shrinks to the shorter sequence
    assert sequence_similarity(["a"], ["a", "b", "c"]) == pytest.approx(1 / 3)


def test_disjoint_profiles():
    a = profile_from_lines(['foo(1, "x")', "foo(2)"])
    b = profile_from_lines(['bar(9, "y")', "baz(3)"])
    s = similarity(a, b)
    assert s.sequence == 0 and s.term_sets == 0
    assert s.overall <= 0.25


def _random_profile(rng, job_id):
    names = ["read", "write", "open", "mmap", "close"]
    terms = ["a", "b", "c", "O_RDONLY", "AT_FDCWD"]
    lines = []
    for _ in range(int(rng.integers(1, 25))):
        name = names[int(rng.integers(len(names)))]
        args = []
        for _ in range(int(rng.integers(0, 4))):
            if rng.random() < 0.5:
                args.append(str(int(rng.integers(-50, 50))))
            else:
                args.append(f'"{terms[int(rng.integers(len(terms)))]}"')
        lines.append(f"{name}({', '.join(args)})")
    return profile_from_lines(lines, job_id)


def test_symmetry_and_bounds_fuzz():
    rng = np.random.default_rng(42)
    for i in range(1000):
        a, b = _random_profile(rng, "a"), _random_profile(rng, "b")
        ab, ba = similarity(a, b), similarity(b, a)
        assert ab == ba
        assert all(0.0 <= x <= 1.0 for x in ab.parts + (ab.overall,))
        assert similarity(a, a).overall == 1.0


def test_profile_invariants_fuzz():
    rng = np.random.default_rng(7)
    for i in range(200):
        p = _random_profile(rng, "p")
        for s, freq in p.term_freq.items():
            assert sum(freq.values()) == pytest.approx(1.0, abs=1e-9)
            assert set(freq) <= p.terms[s]


def test_classification_boundary():
    m = np.array([[1.0, 0.77], [0.77, 1.0]])
    assert classify_similar(m, ["a", "b"]) == {"a": set(), "b": set()}
    assert classify_similar(m, ["a", "b"], inclusive=True) == {"a": {"b"}, "b": {"a"}}
    assert classify_similar(np.array([[1.0, 0.7700001], [0.7700001, 1.0]]), ["a", "b"])["a"] == {"b"}


def test_classification_groups():
    assert classify_similar(np.ones((3, 3)), ["a", "b", "c"]) == {"a": {"b", "c"}, "b": {"a", "c"}, "c": {"a", "b"}}
    m = np.array([[1, 0.9, 0.5], [0.9, 1, 0.5], [0.5, 0.5, 1]])
    assert classify_similar(m, ["a", "b", "c"]) == {"a": {"b"}, "b": {"a"}, "c": set()}
    with pytest.raises(ValueError, match="symmetric"):
        classify_similar(np.array([[1, 0.9], [0.1, 1]]))


def test_matrix_from_samples(samples):
    profiles = [parse_trace(p) for p in sorted((samples / "traces").glob("*.trace"))]
    m = similarity_matrix(profiles)
    assert np.allclose(m, m.T) and np.all(np.diag(m) == 1.0)
    ids = [p.job_id for p in profiles]
    groups = classify_similar(m, ids)
    assert "grep" in groups["wordcount"]
    assert not groups["terasort"]


def test_profile_to_dict():
    d = profile_from_lines(EXAMPLE, "ex").to_dict()
    assert d["A"] == ["foo", "bar", "foo", "foo"]
    assert d["B"] == {"bar": ["b"], "foo": ["b", "c"]}
    assert isinstance(profile_from_lines(EXAMPLE), JobTraceProfile)
