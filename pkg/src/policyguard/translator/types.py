from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

from ..logic import TRUE, Implies, Term, print_term


@dataclass(frozen=True)
class ClaimPair:
    """A premise/conclusion pair over the policy vocabulary.

    ``confidence`` stays ``None`` until redundant translation scores it;
    ``votes`` then keeps the unreduced (supporting, total) counts so that
    3/3 is reported as such rather than as 1/1.  An empty premise is the
    literal ``true``.
    """

    premise: Term
    conclusion: Term
    confidence: Fraction | None = None
    source_text: str = ""
    votes: tuple[int, int] | None = None

    def confidence_json(self) -> dict | None:
        if self.confidence is None:
            return None
        if self.votes is not None:
            return {"num": self.votes[0], "den": self.votes[1]}
        return {"num": self.confidence.numerator, "den": self.confidence.denominator}

    @property
    def confidence_text(self) -> str:
        c = self.confidence_json()
        return "undecided" if c is None else f"{c['num']}/{c['den']}"

    def implication(self) -> Term:
        return Implies(self.premise, self.conclusion)

    def with_confidence(self, confidence: Fraction) -> "ClaimPair":
        return replace(self, confidence=Fraction(confidence))

    @property
    def has_premise(self) -> bool:
        return self.premise != TRUE

    def sort_key(self) -> tuple[str, str]:
        return (print_term(self.premise), print_term(self.conclusion))

    def to_json(self) -> dict:
        out: dict = {"premise": print_term(self.premise), "conclusion": print_term(self.conclusion)}
        if self.confidence is not None:
            out["confidence"] = self.confidence_json()
        return out


@dataclass(frozen=True)
class Translation:
    pairs: tuple[ClaimPair, ...] = ()
    untranslatable: tuple[str, ...] = ()
    backend: str = ""

    def to_json(self) -> dict:
        return {
            "pairs": [{"premise": print_term(p.premise), "conclusion": print_term(p.conclusion)} for p in self.pairs],
            "untranslatable": list(self.untranslatable),
        }


def qa_text(question: str, answer: str) -> str:
    """The text handed to translators for a question/answer pair."""
    return f"Question: {question.strip()}\nAnswer: {answer.strip()}"
