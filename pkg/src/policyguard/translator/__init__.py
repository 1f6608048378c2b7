from .backends import Backend, HttpBackend, ScriptedBackend, extract_fenced, fixture_key, load_prompt
from .core import (
    DEFAULT_REPAIR_BUDGET,
    TranslatorPool,
    build_unit,
    coerce_edit,
    formalize_span,
    parse_bool_term,
    parse_translation_block,
    parse_unit_block,
    repair,
    revise_answer,
    translate_claims,
)
from .types import ClaimPair, Translation, qa_text

__all__ = [
    "Backend",
    "ClaimPair",
    "DEFAULT_REPAIR_BUDGET",
    "HttpBackend",
    "ScriptedBackend",
    "Translation",
    "TranslatorPool",
    "build_unit",
    "coerce_edit",
    "extract_fenced",
    "fixture_key",
    "formalize_span",
    "load_prompt",
    "parse_bool_term",
    "parse_translation_block",
    "parse_unit_block",
    "qa_text",
    "repair",
    "revise_answer",
    "translate_claims",
]
