"""Porter suffix-stripping stemmer (classic 1980 rule set).

Kept dependency-free so token normalization needs no external data.
Tokens shorter than three characters and tokens containing ``_`` (negation
markers like ``not_good`` keep their prefix; only the base is stemmed by
the pipeline) pass through unchanged.
"""

from __future__ import annotations

_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return True if i == 0 else not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Count VC sequences: [C](VC)^m[V]."""
    m = 0
    i = 0
    n = len(stem)
    while i < n and _is_consonant(stem, i):
        i += 1
    while True:
        while i < n and not _is_consonant(stem, i):
            i += 1
        if i >= n:
            return m
        m += 1
        while i < n and _is_consonant(stem, i):
            i += 1
        if i >= n:
            return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    # consonant-vowel-consonant where the final consonant is not w, x or y
    if len(word) < 3:
        return False
    if not _is_consonant(word, len(word) - 3):
        return False
    if _is_consonant(word, len(word) - 2):
        return False
    if not _is_consonant(word, len(word) - 1):
        return False
    return word[-1] not in "wxy"


def _replace_suffix(word: str, suffix: str, replacement: str, min_measure: int) -> str | None:
    """Apply suffix -> replacement when m(stem) > min_measure, else None."""
    if not word.endswith(suffix):
        return None
    stem = word[: len(word) - len(suffix)]
    if _measure(stem) > min_measure:
        return stem + replacement
    return word  # suffix matched, rule condition failed: stop scanning


_STEP2 = (
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("bli", "ble"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ("logi", "log"),
)

_STEP3 = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
)

_STEP4 = (
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
)


def stem(word: str) -> str:
    if len(word) <= 2 or "_" in word:
        return word
    w = word

    # step 1a: plurals
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif not w.endswith("ss") and w.endswith("s"):
        w = w[:-1]

    # step 1b: -ed / -ing
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    else:
        stripped = None
        if w.endswith("ed") and _has_vowel(w[:-2]):
            stripped = w[:-2]
        elif w.endswith("ing") and _has_vowel(w[:-3]):
            stripped = w[:-3]
        if stripped is not None:
            w = stripped
            if w.endswith(("at", "bl", "iz")):
                w += "e"
            elif _ends_double_consonant(w) and w[-1] not in "lsz":
                w = w[:-1]
            elif _measure(w) == 1 and _ends_cvc(w):
                w += "e"

    # step 1c: terminal y -> i when the stem has a vowel
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    # step 2
    for suffix, repl in _STEP2:
        updated = _replace_suffix(w, suffix, repl, 0)
        if updated is not None:
            w = updated
            break

    # step 3
    for suffix, repl in _STEP3:
        updated = _replace_suffix(w, suffix, repl, 0)
        if updated is not None:
            w = updated
            break

    # step 4: drop the suffix entirely when m > 1
    for suffix in _STEP4:
        if w.endswith(suffix):
            stem_part = w[: len(w) - len(suffix)]
            if suffix == "ion":
                if stem_part and stem_part[-1] in "st" and _measure(stem_part) > 1:
                    w = stem_part
            elif _measure(stem_part) > 1:
                w = stem_part
            break

    # step 5a: remove final e
    if w.endswith("e"):
        m = _measure(w[:-1])
        if m > 1 or (m == 1 and not _ends_cvc(w[:-1])):
            w = w[:-1]

    # step 5b: -ll -> -l when m > 1
    if w.endswith("ll") and _measure(w[:-1]) > 1:
        w = w[:-1]

    return w


def stem_fixpoint(word: str, max_rounds: int = 10) -> str:
    """Apply the rule set until the word stops changing.

    A single pass is not idempotent (e.g. a stem ending in a lone ``s``
    loses it on re-application), so the pipeline and the lexicon loader
    both normalize to the fixed point; that makes re-tokenizing pipeline
    output a no-op.
    """
    for _ in range(max_rounds):
        shorter = stem(word)
        if shorter == word:
            return word
        word = shorter
    return word
