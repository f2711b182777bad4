"""Synthetic template corpus for the exemplar-benefit experiment.

Functions come in families.  Every member of a family shares a code skeleton
built from family-specific identifiers and a comment template; the template
has one slot that is filled with the identifier that varies between members
(the member's argument name).  The right comment for a member is therefore
"the family template with my identifier in the slot", which a retrieved
sibling's comment shows almost verbatim.  With few members per family and
long templates, a model that only reads the code cannot learn most templates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import RawSample

_SYLLABLES = (
    "ba be bi bo bu da de di do du fa fe fi fo fu ga ge gi go gu ka ke ki ko ku "
    "la le li lo lu ma me mi mo mu na ne ni no nu pa pe pi po pu ra re ri ro ru "
    "sa se si so su ta te ti to tu va ve vi vo vu za ze zi zo zu"
).split()

_TYPES = ("int", "long", "String", "Object", "boolean", "double")


def _words(rng: np.random.Generator, n: int, syllables: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_SYLLABLES, size=syllables))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass(frozen=True)
class Family:
    verb: str
    receiver: str
    call: str
    helper: str
    return_type: str
    template: tuple[str, ...]  # comment words, "{}" marks the slot


def make_families(
    n_families: int,
    rng: np.random.Generator,
    code_pool: int = 40,
    comment_pool: int = 400,
    template_len: tuple[int, int] = (5, 8),
) -> list[Family]:
    """Families whose code identifiers are a distinct 4-combination from a shared pool.

    No single identifier marks a family; only the combination does.
    """
    taken: set[str] = set()
    code_words = _words(rng, code_pool, 2, taken)
    pool = _words(rng, comment_pool, 2, taken)
    families = []
    seen: set[tuple[str, ...]] = set()
    while len(families) < n_families:
        combo = tuple(str(w) for w in rng.choice(code_words, size=4, replace=False))
        if combo in seen:
            continue
        seen.add(combo)
        verb, receiver, call, helper = combo
        length = int(rng.integers(template_len[0], template_len[1] + 1))
        words = list(rng.choice(pool, size=length, replace=False))
        words.insert(int(rng.integers(1, length + 1)), "{}")
        families.append(Family(verb, receiver, call, helper, str(rng.choice(_TYPES)), tuple(words)))
    return families


def make_sample(family: Family, slot: str, arg_type: str) -> RawSample:
    helper = family.helper[0].upper() + family.helper[1:]
    code = (
        f"public {family.return_type} {family.verb}{helper}({arg_type} {slot}) {{\n"
        f"    return {family.receiver}.{family.call}({family.helper}, {slot});\n"
        f"}}"
    )
    comment = " ".join(slot if w == "{}" else w for w in family.template)
    comment = comment[0].upper() + comment[1:] + "."
    return RawSample(code, f"/**\n * {comment}\n */")


def template_corpus(
    n_pairs: int = 2000,
    n_families: int = 700,
    n_slots: int = 20,
    code_pool: int = 200,
    comment_pool: int = 60,
    template_len: tuple[int, int] = (8, 12),
    seed: int = 0,
) -> list[RawSample]:
    """``n_pairs`` samples spread round-robin over ``n_families`` families, in shuffled order."""
    rng = np.random.default_rng(seed)
    families = make_families(n_families, rng, code_pool, comment_pool, template_len)
    slots = _words(rng, n_slots, 3, {w for fam in families for w in fam.template})
    samples = []
    for i in range(n_pairs):
        family = families[i % n_families]
        samples.append(make_sample(family, str(rng.choice(slots)), str(rng.choice(_TYPES))))
    order = rng.permutation(n_pairs)
    return [samples[i] for i in order]
