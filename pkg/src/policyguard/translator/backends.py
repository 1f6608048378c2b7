"""Translator backends: scripted fixtures for offline runs, HTTP for live models.

A backend answers five kinds of request.  Outputs are either structured
dicts (scripted fixtures) or the text of a fenced block (HTTP); the gate in
:mod:`policyguard.translator.core` accepts both.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from importlib import resources
from pathlib import Path
from typing import Any, Protocol, Union

from ..errors import BackendUnavailable, MalformedOutput
from ..logic import print_declaration
from ..model import PolicyModel

log = logging.getLogger(__name__)

RawOutput = Union[str, dict]

TASKS = ("translate", "formalize", "repair", "revise", "policy_repair")


def fixture_key(*parts: str) -> str:
    """Digest used to key scripted fixtures (sha256 of the parts joined by U+001F)."""
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


class Backend(Protocol):
    name: str

    def translate(self, text: str, model: PolicyModel) -> RawOutput: ...

    def formalize(self, span: str, context: PolicyModel) -> RawOutput: ...

    def repair(self, invalid_output: str, diagnostic: str) -> str: ...

    def revise(self, question: str, answer: str, feedback: str) -> str: ...

    def repair_policy(self, model: PolicyModel, rule_id: str, feedback: str) -> RawOutput: ...


class ScriptedBackend:
    """Deterministic backend that looks answers up by input digest.

    A fixture directory holds ``translate.json``, ``formalize.json``,
    ``repair.json``, ``revise.json`` and ``policy_repair.json``; each maps a
    :func:`fixture_key` digest to the output.  Missing files are empty.
    """

    def __init__(self, fixtures: dict[str, dict[str, Any]] | None = None, name: str = "scripted"):
        self.name = name
        self.fixtures: dict[str, dict[str, Any]] = {t: {} for t in TASKS}
        for task, table in (fixtures or {}).items():
            if task not in self.fixtures:
                raise ValueError(f"unknown fixture table {task!r}")
            self.fixtures[task].update(table)
        self.calls: dict[str, int] = {t: 0 for t in TASKS}

    @classmethod
    def from_dir(cls, path: str | os.PathLike, name: str | None = None) -> "ScriptedBackend":
        path = Path(path)
        if not path.is_dir():
            raise BackendUnavailable(f"fixture directory {path} does not exist")
        tables = {}
        for task in TASKS:
            f = path / f"{task}.json"
            if f.exists():
                tables[task] = json.loads(f.read_text(encoding="utf-8"))
        return cls(tables, name=name or f"scripted:{path}")

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for task, table in self.fixtures.items():
            if table:
                (path / f"{task}.json").write_text(
                    json.dumps(table, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8"
                )

    # -- fixture authoring

    def add_translation(self, text: str, pairs: list[tuple[str, str]], untranslatable: list[str] = ()) -> None:
        self.fixtures["translate"][fixture_key(text)] = {
            "pairs": [{"premise": p, "conclusion": c} for p, c in pairs],
            "untranslatable": list(untranslatable),
        }

    def add_formalization(self, span: str, unit: RawOutput) -> None:
        self.fixtures["formalize"][fixture_key(span)] = unit

    def add_repair(self, invalid_output: str, repaired: str) -> None:
        self.fixtures["repair"][fixture_key(invalid_output)] = repaired

    def add_revision(self, question: str, answer: str, revised: str) -> None:
        self.fixtures["revise"][fixture_key(question, answer)] = revised

    def add_policy_repair(self, rule_id: str, feedback: str, edit: RawOutput) -> None:
        self.fixtures["policy_repair"][fixture_key(rule_id, feedback)] = edit

    # -- lookups

    def _lookup(self, task: str, *parts: str):
        self.calls[task] += 1
        key = fixture_key(*parts)
        try:
            return self.fixtures[task][key]
        except KeyError:
            raise BackendUnavailable(f"{self.name}: no {task} fixture for digest {key[:12]}") from None

    def translate(self, text: str, model: PolicyModel) -> RawOutput:
        return self._lookup("translate", text)

    def formalize(self, span: str, context: PolicyModel) -> RawOutput:
        return self._lookup("formalize", span)

    def repair(self, invalid_output: str, diagnostic: str) -> str:
        return self._lookup("repair", invalid_output)

    def revise(self, question: str, answer: str, feedback: str) -> str:
        return self._lookup("revise", question, answer)

    def repair_policy(self, model: PolicyModel, rule_id: str, feedback: str) -> RawOutput:
        return self._lookup("policy_repair", rule_id, feedback)


# ------------------------------------------------------------------- HTTP

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)


def extract_fenced(text: str) -> str:
    """Content of the fenced code blocks in ``text``; prose is dropped."""
    blocks = [m.group(2) for m in _FENCE.finditer(text)]
    if not blocks:
        raise MalformedOutput("response has no fenced block", ["no fenced block in response"])
    return "\n".join(blocks)


def load_prompt(name: str, prompts_dir: str | os.PathLike | None = None) -> str:
    if prompts_dir is not None:
        p = Path(prompts_dir) / f"{name}.txt"
        if p.exists():
            return p.read_text(encoding="utf-8")
    return resources.files("policyguard.translator").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def fill(template: str, **slots: str) -> str:
    """Substitute ``{slot}`` markers; other braces are left alone."""
    for key, value in slots.items():
        template = template.replace("{" + key + "}", value)
    return template


def render_vocabulary(model: PolicyModel) -> str:
    lines = [print_declaration(d) for d in model.datatypes]
    for v in model.variables:
        lines.append(f"(declare-const {v.name} {v.sort.name}) ; {v.description}")
    return "\n".join(lines)


class HttpBackend:
    """Client for an OpenAI-compatible chat-completions endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        temperature: float = 0.0,
        max_tokens: int = 2048,
        prompts_dir: str | os.PathLike | None = None,
        prompt_overrides: dict[str, str] | None = None,
        domain: str = "",
        source_text: str = "",
        client=None,
        timeout: float = 120.0,
        name: str | None = None,
    ):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.prompts_dir = prompts_dir
        self.prompt_overrides = dict(prompt_overrides or {})
        self.domain = domain
        self.source_text = source_text
        self.name = name or f"http:{model}"
        self._client = client or httpx.Client(timeout=timeout)

    def prompt(self, task: str) -> str:
        if task in self.prompt_overrides:
            return self.prompt_overrides[task]
        return load_prompt(task, self.prompts_dir)

    def chat(self, prompt: str) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        try:
            resp = self._client.post(self.endpoint, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"{self.name}: {exc}") from None
        if resp.status_code != 200:
            raise BackendUnavailable(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise BackendUnavailable(f"{self.name}: unexpected response body") from None

    def translate(self, text: str, model: PolicyModel) -> RawOutput:
        prompt = fill(self.prompt("translate"), vocabulary=render_vocabulary(model), text=text)
        return extract_fenced(self.chat(prompt))

    def formalize(self, span: str, context: PolicyModel) -> RawOutput:
        prompt = fill(self.prompt("formalize"), context=render_vocabulary(context), span=span)
        return extract_fenced(self.chat(prompt))

    def repair(self, invalid_output: str, diagnostic: str) -> str:
        prompt = fill(self.prompt("repair"), invalid=invalid_output, diagnostic=diagnostic)
        return extract_fenced(self.chat(prompt))

    def revise(self, question: str, answer: str, feedback: str) -> str:
        prompt = fill(
            self.prompt("revise_answer"),
            domain=self.domain,
            source_text=self.source_text,
            question=question,
            original_answer=answer,
            feedback=feedback,
        )
        return self.chat(prompt).strip()

    def repair_policy(self, model: PolicyModel, rule_id: str, feedback: str) -> RawOutput:
        rule = model.rule(rule_id)
        prompt = fill(
            self.prompt("repair_policy"),
            vocabulary=render_vocabulary(model),
            rule_id=rule_id,
            rule=rule.smtlib,
            feedback=feedback,
        )
        return extract_fenced(self.chat(prompt))

