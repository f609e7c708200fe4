"""Readers for the three user-facing input formats.

Graph text (UTF-8)::

    # comments run to the end of the line
    X -> Y
    P -> K
    Z            # a bare name declares an isolated node

SCM config (JSON)::

    {"nodes": {
        "X": {"domain": [0, 1], "parents": [], "cpt": {"": [0.3, 0.7]}},
        "Y": {"domain": ["lo", "hi"], "parents": ["X"],
              "cpt": {"0": [0.9, 0.1], "1": [0.2, 0.8]}}}}

``parents`` fixes the parent order; every row of ``cpt`` is keyed by the
comma-joined parent values in that order (``""`` for a root) and lists
P(node = v | parents) for each ``v`` in ``domain``.

Batch file (JSON lines), one sample per line::

    {"teacher": [1.0, 0.2, -0.5], "student": [0.1, 0.0, 0.3], "label": 0}
    {"teacher": [0.0, 0.4, 2.0], "student": [0.2, 0.1, 1.0], "label": "bg", "background_index": 2}

``background_index`` defaults to the last class.
"""

from __future__ import annotations

import itertools
import json
import re
from pathlib import Path

import numpy as np

from .causal import CausalDag, Cpt, DiscreteScm, GraphError, ScmError
from .core_math import InvalidInputError
from .kd_losses import BACKGROUND, SampleBatch


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line


_NAME = r"[A-Za-z_][A-Za-z0-9_.']*"
_EDGE = re.compile(rf"^({_NAME})\s*->\s*({_NAME})$")
_BARE = re.compile(rf"^({_NAME})$")


def parse_graph(text: str, source: str | None = None) -> CausalDag:
    nodes, edges = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _EDGE.match(line)
        if m:
            edges.append((m.group(1), m.group(2)))
            continue
        m = _BARE.match(line)
        if m:
            nodes.append(m.group(1))
            continue
        raise ParseError(f"expected 'A -> B', got {raw.strip()!r}", lineno, source)
    try:
        return CausalDag(nodes, edges)
    except GraphError as exc:
        raise ParseError(str(exc), None, source) from exc


def read_graph(path: str | Path) -> CausalDag:
    path = Path(path)
    return parse_graph(path.read_text(encoding="utf-8"), str(path))


def _row_key(values) -> str:
    return ",".join(str(v) for v in values)


def scm_from_config(config: dict, source: str | None = None) -> DiscreteScm:
    if not isinstance(config, dict) or not isinstance(config.get("nodes"), dict) or not config["nodes"]:
        raise ParseError("SCM config needs a non-empty 'nodes' object", None, source)
    spec = config["nodes"]
    domains, parents = {}, {}
    for name, entry in spec.items():
        if not isinstance(entry, dict):
            raise ParseError(f"node {name!r}: expected an object", None, source)
        dom = entry.get("domain")
        if not isinstance(dom, list) or not dom:
            raise ParseError(f"node {name!r}: 'domain' must be a non-empty list", None, source)
        if len({str(v) for v in dom}) != len(dom):
            raise ParseError(f"node {name!r}: duplicate domain values", None, source)
        domains[name] = tuple(dom)
        par = entry.get("parents", [])
        if not isinstance(par, list) or any(p not in spec for p in par):
            raise ParseError(f"node {name!r}: 'parents' must list declared nodes", None, source)
        parents[name] = tuple(par)
    try:
        dag = CausalDag(spec, [(p, n) for n in spec for p in parents[n]])
    except GraphError as exc:
        raise ParseError(str(exc), None, source) from exc

    cpts = {}
    for name, entry in spec.items():
        rows = entry.get("cpt")
        if not isinstance(rows, dict):
            raise ParseError(f"node {name!r}: 'cpt' must be an object", None, source)
        combos = list(itertools.product(*(domains[p] for p in parents[name])))
        expected = {_row_key(c) for c in combos}
        if set(rows) != expected:
            missing = sorted(expected - set(rows))
            extra = sorted(set(rows) - expected)
            raise ParseError(f"node {name!r}: CPT rows missing {missing} / unexpected {extra}", None, source)
        shape = tuple(len(domains[p]) for p in parents[name]) + (len(domains[name]),)
        table = np.empty(shape)
        for idx, combo in zip(itertools.product(*(range(len(domains[p])) for p in parents[name])), combos):
            row = rows[_row_key(combo)]
            if not isinstance(row, list) or len(row) != len(domains[name]):
                raise ParseError(f"node {name!r}: row {_row_key(combo)!r} needs {len(domains[name])} entries",
                                 None, source)
            try:
                table[idx] = [float(v) for v in row]
            except (TypeError, ValueError):
                raise ParseError(f"node {name!r}: non-numeric CPT entry", None, source) from None
        cpts[name] = Cpt(parents[name], table)
    try:
        return DiscreteScm(dag, domains, cpts)
    except ScmError as exc:
        raise ParseError(str(exc), None, source) from exc


def read_scm(path: str | Path) -> DiscreteScm:
    path = Path(path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, str(path)) from exc
    return scm_from_config(config, str(path))


def _real_list(value, field: str, lineno: int, source) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ParseError(f"'{field}' must be a non-empty list of numbers", lineno, source)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"'{field}' must contain only numbers", lineno, source)
        out.append(float(v))
    return out


def parse_batch(text: str, source: str | None = None) -> SampleBatch:
    teacher, student, labels, bgs = [], [], [], []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno, source) from None
        if not isinstance(rec, dict):
            raise ParseError("each line must be a JSON object", lineno, source)
        unknown = set(rec) - {"teacher", "student", "label", "background_index"}
        if unknown:
            raise ParseError(f"unknown fields {sorted(unknown)}", lineno, source)
        for key in ("teacher", "student", "label"):
            if key not in rec:
                raise ParseError(f"missing field {key!r}", lineno, source)
        t = _real_list(rec["teacher"], "teacher", lineno, source)
        s = _real_list(rec["student"], "student", lineno, source)
        if len(t) != len(s):
            raise ParseError("teacher and student lengths differ", lineno, source)
        if width is None:
            width = len(t)
        elif len(t) != width:
            raise ParseError(f"expected {width} classes, got {len(t)}", lineno, source)
        lab = rec["label"]
        if isinstance(lab, bool) or not (isinstance(lab, int) or lab == BACKGROUND):
            raise ParseError(f"'label' must be an integer or {BACKGROUND!r}", lineno, source)
        bg = rec.get("background_index", width - 1)
        if isinstance(bg, bool) or not isinstance(bg, int) or not 0 <= bg < width:
            raise ParseError("'background_index' must be a class index", lineno, source)
        if isinstance(lab, int) and not 0 <= lab < width:
            raise ParseError(f"label {lab} out of range", lineno, source)
        if isinstance(lab, int) and lab == bg:
            raise ParseError(f"foreground label {lab} equals the background index; use {BACKGROUND!r}",
                             lineno, source)
        teacher.append(t)
        student.append(s)
        labels.append(lab)
        bgs.append(bg)
    if not labels:
        raise ParseError("batch file has no samples", None, source)
    try:
        return SampleBatch.from_labels(np.array(teacher), np.array(student), labels, np.array(bgs))
    except InvalidInputError as exc:
        raise ParseError(str(exc), None, source) from exc


def read_batch(path: str | Path) -> SampleBatch:
    path = Path(path)
    return parse_batch(path.read_text(encoding="utf-8"), str(path))


def scm_to_config(scm: DiscreteScm) -> dict:
    """Inverse of :func:`scm_from_config`."""
    nodes = {}
    for name in scm.order:
        cpt = scm.cpts[name]
        rows = {}
        for idx in itertools.product(*(range(len(scm.domains[p])) for p in cpt.parents)):
            key = _row_key(scm.domains[p][i] for p, i in zip(cpt.parents, idx))
            rows[key] = [float(v) for v in cpt.table[idx]]
        nodes[name] = {"domain": list(scm.domains[name]), "parents": list(cpt.parents), "cpt": rows}
    return {"nodes": nodes}
