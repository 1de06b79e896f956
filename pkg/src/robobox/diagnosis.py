"""Rule-based fault diagnosis: a function-symbol-free Horn-clause engine.

Rules are written in the classic ``head :- b1, b2.`` syntax with
uppercase-initial variables and lowercase constants. The engine runs
bottom-up to a least fixpoint (semi-naive), which always terminates
because there are no function symbols. Monitor output feeds the fact
base through declarative symptom mappings, and any derived atom whose
predicate is listed in the ``% hypotheses:`` header is reported as a
fault hypothesis to explore.
"""

from __future__ import annotations

import logging
import queue
import re
import threading
from dataclasses import dataclass, field

import yaml

from .config import ParseError, _load_yaml_mapping, _require_keys

logger = logging.getLogger(__name__)

_TERM_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_HYPOTHESES_RE = re.compile(r"^%\s*hypotheses\s*:\s*(.*)$")

COMPARATORS = ("eq", "ne", "lt", "gt")


class DiagnosisError(Exception):
    pass


class RuleSyntaxError(DiagnosisError):
    pass


class UnsafeRule(DiagnosisError):
    """A head variable does not appear in the body (range restriction)."""


class UnknownPredicate(DiagnosisError):
    pass


def is_variable(term: str) -> bool:
    return bool(term) and (term[0].isupper() or term[0] == "_")


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple = ()

    def __str__(self):
        if not self.args:
            return self.predicate
        return f"{self.predicate}({', '.join(self.args)})"

    @property
    def is_ground(self) -> bool:
        return all(not is_variable(a) for a in self.args)

    def variables(self) -> set:
        return {a for a in self.args if is_variable(a)}

    def substitute(self, binding: dict) -> "Atom":
        return Atom(self.predicate, tuple(binding.get(a, a) for a in self.args))


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple = ()

    def __str__(self):
        if not self.body:
            return f"{self.head}."
        return f"{self.head} :- {', '.join(str(a) for a in self.body)}."


@dataclass(frozen=True)
class RuleSet:
    rules: tuple
    facts: tuple  # ground atoms stated directly in the file
    hypotheses: tuple  # predicates that count as fault hypotheses


def _parse_atom(text: str) -> Atom:
    text = text.strip()
    if "(" not in text:
        if not _TERM_RE.match(text):
            raise RuleSyntaxError(f"bad atom {text!r}")
        return Atom(text)
    if not text.endswith(")"):
        raise RuleSyntaxError(f"bad atom {text!r}")
    name, args_text = text[:-1].split("(", 1)
    name = name.strip()
    if not _TERM_RE.match(name) or is_variable(name):
        raise RuleSyntaxError(f"bad predicate {name!r}")
    args = tuple(a.strip() for a in args_text.split(","))
    for arg in args:
        if not _TERM_RE.match(arg):
            raise RuleSyntaxError(f"bad term {arg!r} in {text!r}")
    return Atom(name, args)


def _split_body(text: str) -> list:
    # body atoms are comma-separated; commas also appear inside parens
    parts, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if current:
        parts.append("".join(current))
    return [p for p in (part.strip() for part in parts) if p]


def parse_rules(text: str) -> RuleSet:
    """Parse a rules file: ``% hypotheses:`` header, facts and rules.

    Every statement ends with ``.``; ``%`` starts a comment. Facts are
    bodyless ground statements. Rules must be range-restricted: every
    head variable appears somewhere in the body.
    """
    hypotheses: list = []
    stripped_lines = []
    for line in text.splitlines():
        match = _HYPOTHESES_RE.match(line.strip())
        if match:
            hypotheses.extend(t.strip() for t in match.group(1).split(",") if t.strip())
            continue
        if "%" in line:
            line = line[: line.index("%")]
        stripped_lines.append(line)
    rules, facts = [], []
    for statement in "\n".join(stripped_lines).split("."):
        statement = statement.strip()
        if not statement:
            continue
        if ":-" in statement:
            head_text, body_text = statement.split(":-", 1)
            head = _parse_atom(head_text)
            body = tuple(_parse_atom(part) for part in _split_body(body_text))
            if not body:
                raise RuleSyntaxError(f"rule {head} has an empty body")
            body_vars = set().union(*(a.variables() for a in body))
            unbound = head.variables() - body_vars
            if unbound:
                raise UnsafeRule(f"rule {head}: head variables {sorted(unbound)} not bound in body")
            rules.append(Rule(head, body))
        else:
            atom = _parse_atom(statement)
            if not atom.is_ground:
                raise UnsafeRule(f"fact {atom} contains variables")
            facts.append(atom)
    return RuleSet(rules=tuple(rules), facts=tuple(facts), hypotheses=tuple(hypotheses))


def _match(atom: Atom, fact: Atom, binding: dict):
    """Extend a binding so atom matches the ground fact, or None."""
    if atom.predicate != fact.predicate or len(atom.args) != len(fact.args):
        return None
    extended = dict(binding)
    for pattern, value in zip(atom.args, fact.args):
        if is_variable(pattern):
            bound = extended.get(pattern)
            if bound is None:
                extended[pattern] = value
            elif bound != value:
                return None
        elif pattern != value:
            return None
    return extended


def infer(rules, facts) -> set:
    """Least model of the positive program, semi-naive evaluation.

    Returns the full fixpoint (given facts included). Terminates on any
    input: the Herbrand base of a function-free program is finite.
    """
    model = set(facts)
    by_pred: dict = {}
    for fact in model:
        by_pred.setdefault(fact.predicate, set()).add(fact)

    def join(body, index, binding, delta, delta_slot, produced):
        if index == len(body):
            return
        atom = body[index]
        if index == delta_slot:
            candidates = delta & by_pred.get(atom.predicate, set())
        else:
            candidates = by_pred.get(atom.predicate, set())
        for fact in candidates:
            extended = _match(atom, fact, binding)
            if extended is None:
                continue
            if index + 1 == len(body):
                produced.append(extended)
            else:
                join(body, index + 1, extended, delta, delta_slot, produced)

    delta = set(model)
    while delta:
        fresh = set()
        for rule in rules:
            # each derivation must use at least one delta fact: pivot on every slot
            for slot in range(len(rule.body)):
                bindings: list = []
                join(rule.body, 0, {}, delta, slot, bindings)
                for binding in bindings:
                    derived = rule.head.substitute(binding)
                    if derived not in model:
                        fresh.add(derived)
        for fact in fresh:
            model.add(fact)
            by_pred.setdefault(fact.predicate, set()).add(fact)
        delta = fresh
    return model


def query(rules, facts, goal: Atom) -> list:
    """All ground substitutions for a goal, sorted lexicographically.

    The goal predicate must be known: mentioned by a rule or a fact.
    """
    known = {r.head.predicate for r in rules}
    known.update(a.predicate for r in rules for a in r.body)
    known.update(f.predicate for f in facts)
    if goal.predicate not in known:
        raise UnknownPredicate(f"unknown predicate {goal.predicate!r}")
    model = infer(rules, facts)
    results = []
    for fact in model:
        binding = _match(goal, fact, {})
        if binding is not None:
            results.append(binding)
    results.sort(key=lambda b: tuple(b.get(a, a) for a in goal.args))
    return results


@dataclass(frozen=True)
class SymptomMapping:
    """Bridge from one monitor output to an asserted symptom atom."""

    component: str
    monitor: str
    output: str
    comparator: str
    value: object
    template: Atom  # may contain $robot / $component placeholders as args

    def matches(self, observed) -> bool:
        if self.comparator == "eq":
            return observed == self.value
        if self.comparator == "ne":
            return observed != self.value
        if self.comparator == "lt":
            return isinstance(observed, (int, float)) and observed < self.value
        if self.comparator == "gt":
            return isinstance(observed, (int, float)) and observed > self.value
        return False

    def ground(self, robot_id: str) -> Atom:
        args = []
        for arg in self.template.args:
            if arg == "$robot":
                args.append(robot_id)
            elif arg == "$component":
                args.append(self.component)
            else:
                args.append(arg)
        atom = Atom(self.template.predicate, tuple(args))
        if not atom.is_ground:
            raise ParseError(f"mapping template {self.template} does not ground fully")
        return atom


def _parse_template(text: str) -> Atom:
    # placeholders are not legal rule terms, so shield them during parsing
    shielded = text.replace("$robot", "zz_robot_zz").replace("$component", "zz_component_zz")
    atom = _parse_atom(shielded.strip())
    args = tuple(
        a.replace("zz_robot_zz", "$robot").replace("zz_component_zz", "$component") for a in atom.args
    )
    return Atom(atom.predicate, args)


def load_symptom_mappings(text: str) -> list:
    doc = _load_yaml_mapping(text, "symptom mappings")
    _require_keys(doc, ("mappings",), (), "symptom mappings")
    if not isinstance(doc["mappings"], list):
        raise ParseError("symptom mappings: mappings must be a list")
    mappings = []
    for mdoc in doc["mappings"]:
        _require_keys(mdoc, ("when", "assert"), (), "symptom mapping")
        when = mdoc["when"]
        _require_keys(when, ("component", "monitor", "output", "comparator", "value"), (), "mapping when")
        if when["comparator"] not in COMPARATORS:
            raise ParseError(f"mapping comparator {when['comparator']!r} not one of {COMPARATORS}")
        mappings.append(
            SymptomMapping(
                component=when["component"],
                monitor=when["monitor"],
                output=when["output"],
                comparator=when["comparator"],
                value=when["value"],
                template=_parse_template(mdoc["assert"]),
            )
        )
    return mappings


@dataclass
class FactBase:
    """Ground atoms plus where each one came from."""

    facts: set = field(default_factory=set)
    provenance: dict = field(default_factory=dict)  # Atom -> "static" | (comp, monitor, output)

    def assert_static(self, atom: Atom):
        self.facts.add(atom)
        self.provenance.setdefault(atom, "static")

    def assert_symptom(self, atom: Atom, key: tuple):
        self.facts.add(atom)
        self.provenance[atom] = key

    def retract_symptoms(self, key: tuple) -> list:
        stale = [a for a, origin in self.provenance.items() if origin == key]
        for atom in stale:
            self.facts.discard(atom)
            del self.provenance[atom]
        return stale


def apply_symptom_mappings(mappings, status, facts: FactBase) -> FactBase:
    """Fold one status message into the fact base.

    Facts previously asserted for the same (component, monitor, output)
    are retracted first, so a recovered output clears its symptom.
    """
    for output in status.health_status:
        facts.retract_symptoms((status.component, status.monitor_name, output))
    for mapping in mappings:
        if mapping.component != status.component or mapping.monitor != status.monitor_name:
            continue
        observed = status.health_status.get(mapping.output)
        if mapping.output in status.health_status and mapping.matches(observed):
            atom = mapping.ground(status.robot_id)
            facts.assert_symptom(atom, (status.component, status.monitor_name, mapping.output))
    return facts


@dataclass(frozen=True)
class Hypothesis:
    atom: str
    supporting_facts: tuple

    def to_doc(self) -> dict:
        return {"atom": self.atom, "supportingFacts": list(self.supporting_facts)}


def _support_for(atom: Atom, rules, model) -> tuple:
    """One rule instantiation whose body holds in the model, as strings."""
    for rule in rules:
        bindings: list = []

        def walk(index, binding):
            if bindings:
                return
            if index == len(rule.body):
                bindings.append(binding)
                return
            for fact in model:
                extended = _match(rule.body[index], fact, binding)
                if extended is not None:
                    walk(index + 1, extended)

        head_binding = _match(rule.head, atom, {})
        if head_binding is None:
            continue
        walk(0, head_binding)
        if bindings:
            return tuple(sorted(str(b.substitute(bindings[0])) for b in rule.body))
    return ()


class DiagnosisService:
    """Owns the fact base; consumes status messages, serves snapshots.

    One background thread folds incoming statuses into the fact base
    and recomputes the fixpoint; readers always see the snapshot taken
    at the last completed fixpoint.
    """

    def __init__(self, ruleset: RuleSet, mappings, status_queue: queue.Queue):
        self.ruleset = ruleset
        self.mappings = list(mappings)
        self.status_queue = status_queue
        self.facts = FactBase()
        for atom in ruleset.facts:
            self.facts.assert_static(atom)
        self._snapshot: list = []
        self._snapshot_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="diagnosis", daemon=True)
        self._recompute()

    def start(self):
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout)

    def _run(self):
        while not self._stop.is_set():
            try:
                status = self.status_queue.get(timeout=0.05)
            except queue.Empty:
                continue
            self.ingest_status(status)

    def ingest_status(self, status) -> None:
        before = set(self.facts.facts)
        apply_symptom_mappings(self.mappings, status, self.facts)
        if self.facts.facts != before:
            self._recompute()

    def _recompute(self):
        model = infer(self.ruleset.rules, self.facts.facts)
        hypotheses = []
        for atom in sorted(model, key=str):
            if atom.predicate in self.ruleset.hypotheses:
                support = _support_for(atom, self.ruleset.rules, model)
                if not support and atom in self.facts.facts:
                    support = (str(atom),)
                hypotheses.append(Hypothesis(atom=str(atom), supporting_facts=support))
        with self._snapshot_lock:
            self._snapshot = hypotheses

    def hypotheses(self) -> list:
        with self._snapshot_lock:
            return list(self._snapshot)

    def symptom_facts(self) -> list:
        return sorted(str(a) for a, origin in self.facts.provenance.items() if origin != "static")
