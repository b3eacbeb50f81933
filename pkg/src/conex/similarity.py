"""Job similarity from system-call traces.

A trace is one call per line, ``name(arg1, arg2, ...)`` with an optional
strace-style ``= result`` suffix.  Quoted arguments are string terms, bare
words are categorical terms, numerals are numeric.  The boolean literals
``True``/``False`` (and ``NULL``) are flags, not terms, and are ignored.

A job is summarized as four parts:

A  the call sequence
B  per syscall, the set of string/categorical terms
C  per syscall, the relative frequency of each term
D  per (syscall, argument position), the mean of numeric arguments

Two jobs are compared part by part and the four scores are averaged.
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_NGRAM = 3
DEFAULT_THRESHOLD = 0.77

_CALL = re.compile(r"^\s*(?:\d+\s+)?([A-Za-z_][\w.]*)\((.*)\)\s*(?:=.*)?$")
_NUMBER = re.compile(r"^[-+]?(?:0[xX][0-9a-fA-F]+|\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)$")
_FLAGS = {"True", "False", "true", "false", "NULL"}


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class JobTraceProfile:
    job_id: str
    calls: tuple[str, ...]  # A
    terms: Mapping[str, frozenset[str]]  # B
    term_freq: Mapping[str, Mapping[str, float]]  # C
    numeric_means: Mapping[tuple[str, int], float]  # D; positions are 0-based
    syscalls: frozenset[str] = field(default=frozenset())

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "A": list(self.calls),
            "B": {s: sorted(t) for s, t in sorted(self.terms.items())},
            "C": {s: dict(sorted(f.items())) for s, f in sorted(self.term_freq.items())},
            "D": {f"{s}[{pos}]": m for (s, pos), m in sorted(self.numeric_means.items())},
        }


@dataclass(frozen=True)
class SimilarityScore:
    overall: float
    sequence: float
    term_sets: float
    term_freq: float
    numeric_means: float

    @property
    def parts(self) -> tuple[float, float, float, float]:
        return (self.sequence, self.term_sets, self.term_freq, self.numeric_means)


def _split_args(text: str) -> list[str]:
    """Split on top-level commas, respecting quotes and brackets."""
    args, buf, depth, quote, escaped = [], [], 0, None, False
    for ch in text:
        if quote:
            buf.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
        elif ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 0:
            args.append("".join(buf).strip())
            buf = []
            continue
        buf.append(ch)
    if quote or depth:
        raise TraceError(f"unbalanced quotes or brackets in {text!r}")
    tail = "".join(buf).strip()
    if tail or args:
        args.append(tail)
    return args


def _classify(arg: str) -> tuple[str, object] | None:
    if len(arg) >= 2 and arg[0] == arg[-1] and arg[0] in "\"'":
        return "term", arg[1:-1]
    if _NUMBER.match(arg):
        return "num", float(int(arg, 16)) if arg.lower().startswith(("0x", "-0x", "+0x")) else float(arg)
    if arg in _FLAGS or not arg:
        return None
    return "term", arg


def profile_from_lines(lines: Iterable[str], job_id: str = "job") -> JobTraceProfile:
    calls: list[str] = []
    counts: dict[str, Counter] = defaultdict(Counter)
    numbers: dict[tuple[str, int], list[float]] = defaultdict(list)
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _CALL.match(line.rstrip("\n"))
        if m is None:
            raise TraceError(f"{job_id}:{lineno}: malformed trace line {line.strip()!r}")
        name, argtext = m.group(1), m.group(2)
        calls.append(name)
        counts.setdefault(name, Counter())
        for pos, arg in enumerate(_split_args(argtext)):
            kind = _classify(arg)
            if kind is None:
                continue
            if kind[0] == "term":
                counts[name][kind[1]] += 1
            else:
                numbers[(name, pos)].append(kind[1])
    if not calls:
        raise TraceError(f"{job_id}: empty trace")
    terms = {s: frozenset(c) for s, c in counts.items() if c}
    freq = {}
    for s, c in counts.items():
        total = sum(c.values())
        if total:
            freq[s] = {t: n / total for t, n in c.items()}
    means = {k: math.fsum(v) / len(v) for k, v in numbers.items()}
    return JobTraceProfile(job_id, tuple(calls), terms, freq, means, frozenset(calls))


def parse_trace(path: str | Path, job_id: str | None = None) -> JobTraceProfile:
    path = Path(path)
    with open(path, encoding="utf-8", errors="replace") as fh:
        return profile_from_lines(fh, job_id or path.stem)


def _ngrams(seq: Sequence[str], k: int) -> Counter:
    return Counter(tuple(seq[i : i + k]) for i in range(len(seq) - k + 1))


def sequence_similarity(a: Sequence[str], b: Sequence[str], k: int = DEFAULT_NGRAM) -> float:
    """Multiset Jaccard over k-grams; k shrinks to the shorter sequence."""
    k = max(1, min(k, len(a), len(b)))
    ga, gb = _ngrams(a, k), _ngrams(b, k)
    union = sum((ga | gb).values())
    if union == 0:
        return 1.0
    return sum((ga & gb).values()) / union


def _jaccard(x: frozenset, y: frozenset) -> float:
    union = x | y
    if not union:
        return 1.0
    return len(x & y) / len(union)


def term_set_similarity(p1: JobTraceProfile, p2: JobTraceProfile) -> float:
    syscalls = sorted(p1.syscalls | p2.syscalls)
    scores = []
    for s in syscalls:
        if s not in p1.syscalls or s not in p2.syscalls:
            scores.append(0.0)
        else:
            scores.append(_jaccard(p1.terms.get(s, frozenset()), p2.terms.get(s, frozenset())))
    return math.fsum(scores) / len(scores)


def term_freq_similarity(p1: JobTraceProfile, p2: JobTraceProfile) -> float:
    syscalls = sorted(p1.syscalls | p2.syscalls)
    scores = []
    for s in syscalls:
        if s not in p1.syscalls or s not in p2.syscalls:
            scores.append(0.0)
            continue
        f1, f2 = p1.term_freq.get(s, {}), p2.term_freq.get(s, {})
        terms = sorted(set(f1) | set(f2))
        if not terms:
            scores.append(1.0)
            continue
        diff = math.fsum(abs(f1.get(t, 0.0) - f2.get(t, 0.0)) for t in terms) / len(terms)
        scores.append(1.0 - diff)
    return math.fsum(scores) / len(scores)


def numeric_similarity(p1: JobTraceProfile, p2: JobTraceProfile) -> float:
    keys = sorted(set(p1.numeric_means) | set(p2.numeric_means))
    if not keys:
        return 1.0
    scores = []
    for key in keys:
        if key not in p1.numeric_means or key not in p2.numeric_means:
            scores.append(0.0)
            continue
        m1, m2 = p1.numeric_means[key], p2.numeric_means[key]
        top = max(abs(m1), abs(m2))
        s = 1.0 if top == 0 else 1.0 - abs(m1 - m2) / top
        scores.append(min(1.0, max(0.0, s)))
    return math.fsum(scores) / len(scores)


def similarity(p1: JobTraceProfile, p2: JobTraceProfile, k: int = DEFAULT_NGRAM) -> SimilarityScore:
    parts = (
        sequence_similarity(p1.calls, p2.calls, k),
        term_set_similarity(p1, p2),
        term_freq_similarity(p1, p2),
        numeric_similarity(p1, p2),
    )
    overall = min(1.0, max(0.0, math.fsum(parts) / 4))
    return SimilarityScore(overall, *parts)


def similarity_matrix(profiles: Sequence[JobTraceProfile], k: int = DEFAULT_NGRAM) -> np.ndarray:
    n = len(profiles)
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = similarity(profiles[i], profiles[j], k).overall
    return m


def classify_similar(
    scores: np.ndarray | Sequence[Sequence[float]],
    job_ids: Sequence[str] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    inclusive: bool = False,
) -> dict[str, set[str]]:
    """For each job, the other jobs whose pairwise score is above ``threshold``.

    No transitive closure is taken.  ``inclusive`` switches the comparison
    from ``>`` to ``>=``.
    """
    m = np.asarray(scores, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("score matrix must be square")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError("score matrix must be symmetric")
    ids = list(job_ids) if job_ids is not None else [str(i) for i in range(len(m))]
    out = {}
    for i, a in enumerate(ids):
        row = m[i]
        hits = row >= threshold if inclusive else row > threshold
        out[a] = {ids[j] for j in range(len(ids)) if j != i and hits[j]}
    return out
