"""Satisfiability, entailment, models and unsat cores through an SMT-LIB2 child process.

One :class:`Solver` owns one solver process.  Every query starts from
``(reset)`` so no state leaks between queries.  Assertions are sent as named
terms and unsat cores are mapped back to the caller's labels.
"""

from __future__ import annotations

import logging
import os
import selectors
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Iterator, Mapping, Sequence, Union

from .errors import ProtocolError, SolverCrash
from .logic import (
    BOOL,
    INT,
    Not,
    Sort,
    Term,
    Value,
    evaluate,
    format_value,
    print_declaration,
    print_term,
)
from .logic import sexp
from .logic.evaluate import EvaluationError
from .model import PolicyModel

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0
_MARKER = "<<policyguard-end>>"


def default_solver_command() -> list[str]:
    exe = shutil.which("z3")
    if exe is None:
        try:
            import z3  # the z3-solver wheel ships the binary

            cand = os.path.join(os.path.dirname(z3.__file__), "bin", "z3")
            if os.path.exists(cand):
                exe = cand
        except ImportError:
            pass
    if exe is None:
        raise SolverCrash("no SMT solver found; install z3 or set solver.command")
    return [exe, "-in", "-smt2"]


@dataclass(frozen=True)
class AlgebraicNumber:
    """A solver value with no exact rational form (e.g. an irrational root)."""

    text: str

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class Assignment:
    values: Mapping[str, Union[Value, AlgebraicNumber]]
    # variables the solver left unconstrained; completed with sort defaults
    arbitrary: frozenset[str] = frozenset()

    def __getitem__(self, name: str):
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def get(self, name: str, default=None):
        return self.values.get(name, default)

    def satisfies(self, term: Term) -> bool:
        """Evaluate ``term`` exactly; raises ``EvaluationError`` if undecidable here."""
        return bool(evaluate(term, self.values))

    def to_json(self) -> dict[str, str]:
        return {k: format_value(v) if not isinstance(v, AlgebraicNumber) else v.text for k, v in self.values.items()}

    def describe(self) -> str:
        return ", ".join(f"{k}={v}" for k, v in self.to_json().items())


@dataclass(frozen=True)
class Sat:
    assignment: Assignment


@dataclass(frozen=True)
class Unsat:
    core: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Unknown:
    reason: str = ""


SolverVerdict = Union[Sat, Unsat, Unknown]


@dataclass(frozen=True)
class Entailed:
    core: frozenset[str]


@dataclass(frozen=True)
class NotEntailed:
    witness: Assignment


EntailmentResult = Union[Entailed, NotEntailed, Unknown]


def rule_label(rule_id: str) -> str:
    return f"rule:{rule_id}"


def rules_in(core: Iterable[str]) -> list[str]:
    return sorted(label[5:] for label in core if label.startswith("rule:"))


@dataclass
class SolverConfig:
    command: list[str] | None = None
    logic: str = "ALL"
    timeout: float = DEFAULT_TIMEOUT
    # solver-specific option used to pass the per-query limit in ms
    timeout_option: str = ":timeout"
    grace: float = 5.0
    extra_options: list[str] = field(default_factory=list)


class Solver:
    """A single-threaded SMT-LIB2 session; calls are serialized by a lock."""

    def __init__(self, config: SolverConfig | None = None, transcript: str | os.PathLike | IO[str] | None = None):
        self.config = config or SolverConfig()
        self.command = list(self.config.command or default_solver_command())
        self._proc: subprocess.Popen | None = None
        self._stderr: IO[bytes] | None = None
        self._buf = b""
        self._lock = threading.Lock()
        self._own_transcript = False
        self._transcript: IO[str] | None = None
        self.queries = 0
        if transcript is not None:
            self.set_transcript(transcript)

    # -- lifecycle

    def set_transcript(self, transcript: str | os.PathLike | IO[str] | None) -> None:
        if self._own_transcript and self._transcript is not None:
            self._transcript.close()
        self._own_transcript = False
        if transcript is None or hasattr(transcript, "write"):
            self._transcript = transcript  # type: ignore[assignment]
        else:
            self._transcript = open(transcript, "a", encoding="utf-8")
            self._own_transcript = True

    def _start(self) -> None:
        self._stderr = tempfile.TemporaryFile()
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self._stderr,
                bufsize=0,
            )
        except OSError as exc:
            raise SolverCrash(f"cannot start solver {self.command[0]!r}: {exc}") from None
        self._buf = b""

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is not None:
            try:
                proc.stdin.write(b"(exit)\n")
                proc.stdin.close()
                proc.wait(timeout=2)
            except Exception:  # noqa: BLE001
                proc.kill()
                proc.wait()
        if self._stderr is not None:
            self._stderr.close()
            self._stderr = None
        if self._own_transcript and self._transcript is not None:
            self._transcript.close()
            self._transcript = None

    def __enter__(self) -> "Solver":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:  # noqa: BLE001
            pass

    # -- wire

    def _stderr_text(self) -> str:
        if self._stderr is None:
            return ""
        self._stderr.seek(0)
        return self._stderr.read().decode("utf-8", "replace")

    def _send(self, text: str) -> None:
        if self._proc is None:
            self._start()
        assert self._proc is not None
        if self._transcript is not None:
            self._transcript.write(text)
        try:
            self._proc.stdin.write(text.encode("utf-8"))
        except (BrokenPipeError, OSError):
            err = self._stderr_text()
            self._kill()
            raise SolverCrash("solver process died", err) from None

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def _receive(self, deadline: float) -> str:
        """Read until the echo marker; returns the text before it."""
        assert self._proc is not None
        fd = self._proc.stdout.fileno()
        sel = selectors.DefaultSelector()
        sel.register(fd, selectors.EVENT_READ)
        try:
            while True:
                idx = self._buf.find(_MARKER.encode())
                if idx >= 0:
                    out = self._buf[:idx]
                    rest = self._buf[idx + len(_MARKER):]
                    # tolerate solvers that quote echo output
                    if rest.startswith(b'"'):
                        rest = rest[1:]
                    if out.endswith(b'"'):
                        out = out[:-1]
                    nl = rest.find(b"\n")
                    self._buf = rest[nl + 1:] if nl >= 0 else b""
                    text = out.decode("utf-8", "replace")
                    if self._transcript is not None and text.strip():
                        self._transcript.write("".join(f"; > {line}\n" for line in text.strip().splitlines()))
                    return text
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError
                if not sel.select(remaining):
                    continue
                chunk = os.read(fd, 65536)
                if not chunk:
                    err = self._stderr_text()
                    self._kill()
                    raise SolverCrash("solver process closed its output", err)
                self._buf += chunk
        finally:
            sel.close()

    def _roundtrip(self, commands: str, deadline: float) -> list:
        self._send(commands + f'(echo "{_MARKER}")\n')
        text = self._receive(deadline)
        try:
            nodes = sexp.read_all(text)
        except Exception as exc:  # noqa: BLE001
            raise ProtocolError(f"unparsable solver reply: {text!r}") from exc
        for n in nodes:
            if n[0] == sexp.LIST and n[1] and n[1][0][1] == "error":
                msg = n[1][1][1] if len(n[1]) > 1 else text
                raise ProtocolError(f"solver error: {msg}")
        return nodes

    # -- queries

    def check(
        self,
        model: PolicyModel,
        extra: Sequence[Term | tuple[str, Term]] = (),
        want_core: bool = False,
        timeout: float | None = None,
    ) -> SolverVerdict:
        """Check ``model.rules ∧ extra``.

        Rules are labelled ``rule:<id>``; unlabelled extras ``extra:<i>``.
        """
        labelled: list[tuple[str, Term]] = [(rule_label(r.id), r.term) for r in model.rules]
        for i, item in enumerate(extra):
            if isinstance(item, tuple):
                labelled.append(item)
            else:
                labelled.append((f"extra:{i}", item))
        with self._lock:
            return self._check(model, labelled, want_core, self.config.timeout if timeout is None else timeout)

    def _check(self, model: PolicyModel, labelled, want_core: bool, timeout: float) -> SolverVerdict:
        self.queries += 1
        wire_to_label: dict[str, str] = {}
        lines = [
            "(reset)",
            "(set-option :produce-models true)",
        ]
        if want_core:
            lines.append("(set-option :produce-unsat-cores true)")
        lines += self.config.extra_options
        if timeout and self.config.timeout_option:
            lines.append(f"(set-option {self.config.timeout_option} {max(1, int(timeout * 1000))})")
        lines.append(f"(set-logic {self.config.logic})")
        lines += [print_declaration(d) for d in model.declarations()]
        for n, (label, term) in enumerate(labelled):
            if term.sort != BOOL:
                raise ValueError(f"assertion {label} is not Bool-sorted")
            if want_core:
                wire = f"a!{n}"
                wire_to_label[wire] = label
                lines.append(f"(assert (! {print_term(term)} :named {wire}))")
            else:
                lines.append(f"(assert {print_term(term)})")
        lines.append("(check-sat)")
        deadline = time.monotonic() + timeout + self.config.grace
        try:
            reply = self._roundtrip("\n".join(lines) + "\n", deadline)
            status = _status(reply)
            if status == "sat":
                nodes = self._roundtrip("(get-model)\n", deadline)
                return Sat(_assignment(nodes, model))
            if status == "unsat":
                if not want_core:
                    return Unsat()
                nodes = self._roundtrip("(get-unsat-core)\n", deadline)
                core = _core(nodes, wire_to_label)
                return Unsat(core)
            reason = ""
            try:
                nodes = self._roundtrip("(get-info :reason-unknown)\n", deadline)
                reason = _flatten(nodes)
            except ProtocolError:
                pass
            return Unknown(reason or "unknown")
        except TimeoutError:
            log.warning("solver exceeded %.1fs wall clock; restarting", timeout)
            self._kill()
            return Unknown(f"timeout after {timeout:g}s")

    def entails(
        self,
        model: PolicyModel,
        hypotheses: Term,
        consequence: Term,
        timeout: float | None = None,
    ) -> EntailmentResult:
        """Does ``model ∧ hypotheses ⊨ consequence``?"""
        verdict = self.check(
            model,
            [("hypotheses", hypotheses), ("consequence", Not(consequence))],
            want_core=True,
            timeout=timeout,
        )
        if isinstance(verdict, Unsat):
            return Entailed(verdict.core)
        if isinstance(verdict, Sat):
            return NotEntailed(verdict.assignment)
        return verdict

    def is_sat(self, model: PolicyModel, extra: Sequence[Term] = (), timeout: float | None = None) -> bool | None:
        v = self.check(model, extra, timeout=timeout)
        if isinstance(v, Unknown):
            return None
        return isinstance(v, Sat)


# ----------------------------------------------------------- reply parsing


def _status(nodes: list) -> str:
    atoms = [n[1] for n in nodes if n[0] == sexp.ATOM]
    for a in atoms:
        if a in ("sat", "unsat", "unknown"):
            return a
    raise ProtocolError(f"no check-sat status in reply: {nodes!r}")


def _flatten(nodes) -> str:
    out = []

    def walk(n):
        if n[0] == sexp.LIST:
            for c in n[1]:
                walk(c)
        else:
            out.append(n[1])

    for n in nodes:
        walk(n)
    return " ".join(x for x in out if not x.startswith(":"))


def _core(nodes: list, wire_to_label: Mapping[str, str]) -> frozenset[str]:
    if len(nodes) != 1 or nodes[0][0] != sexp.LIST:
        raise ProtocolError(f"unexpected unsat core reply: {nodes!r}")
    labels = set()
    for n in nodes[0][1]:
        if n[0] != sexp.ATOM or n[1] not in wire_to_label:
            raise ProtocolError(f"unknown core label {n[1]!r}")
        labels.add(wire_to_label[n[1]])
    return frozenset(labels)


def default_value(sort: Sort, model: PolicyModel) -> Value:
    if sort == BOOL:
        return False
    if sort == INT:
        return 0
    if sort.is_datatype:
        for d in model.datatypes:
            if d.name == sort.name:
                return d.constructors[0]
    return Fraction(0)


def _assignment(nodes: list, model: PolicyModel) -> Assignment:
    sorts = {v.name: v.sort for v in model.variables}
    entries = nodes
    if len(nodes) == 1 and nodes[0][0] == sexp.LIST:
        entries = nodes[0][1]
        if entries and entries[0][0] == sexp.ATOM and entries[0][1] == "model":
            entries = entries[1:]
    values: dict[str, Value | AlgebraicNumber] = {}
    for e in entries:
        if e[0] != sexp.LIST or len(e[1]) != 5 or e[1][0][1] != "define-fun":
            continue
        name = e[1][1][1]
        if name not in sorts or e[1][2][1]:  # skip labels and functions with arguments
            continue
        values[name] = parse_value(e[1][4], sorts[name])
    arbitrary = []
    for v in model.variables:
        if v.name not in values:
            values[v.name] = default_value(v.sort, model)
            arbitrary.append(v.name)
    ordered = {v.name: values[v.name] for v in model.variables}
    return Assignment(ordered, frozenset(arbitrary))


def parse_value(node, sort: Sort) -> Value | AlgebraicNumber:
    v = _value(node)
    if isinstance(v, AlgebraicNumber):
        return v
    if sort == BOOL:
        if not isinstance(v, bool):
            raise ProtocolError(f"expected Bool value, got {v!r}")
        return v
    if sort.is_datatype:
        if not isinstance(v, str):
            raise ProtocolError(f"expected constructor, got {v!r}")
        return v
    if isinstance(v, (bool, str)):
        raise ProtocolError(f"expected numeric value, got {v!r}")
    if sort == INT:
        if Fraction(v).denominator != 1:
            raise ProtocolError(f"non-integral Int value {v}")
        return int(v)
    return Fraction(v)


def _value(node):
    kind, val = node[0], node[1]
    if kind == sexp.ATOM:
        if val == "true":
            return True
        if val == "false":
            return False
        if val.isdigit():
            return int(val)
        try:
            return Fraction(val)
        except ValueError:
            return val
    if kind != sexp.LIST or not val:
        raise ProtocolError(f"unexpected value node {node!r}")
    head = val[0][1]
    args = val[1:]
    if head == "-" and len(args) == 1:
        inner = _value(args[0])
        return inner if isinstance(inner, AlgebraicNumber) else -inner
    if head == "/" and len(args) == 2:
        a, b = _value(args[0]), _value(args[1])
        if isinstance(a, AlgebraicNumber) or isinstance(b, AlgebraicNumber):
            return AlgebraicNumber(_flatten([node]))
        return Fraction(a) / Fraction(b)
    if head == "as" and len(args) == 2:
        return _value(args[0])
    return AlgebraicNumber(_flatten([node]))


def witness_holds(assignment: Assignment, terms: Iterable[Term]) -> bool | None:
    """Independent check that ``assignment`` satisfies every term (None if undecidable)."""
    try:
        return all(assignment.satisfies(t) for t in terms)
    except EvaluationError:
        return None
