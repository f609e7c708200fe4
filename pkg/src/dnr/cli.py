"""``dnr`` command line.

Subcommands::

    dnr decompose BATCH.jsonl [--preset coco] [--temperature T]
    dnr gradcheck [--trials 100] [--seed 0]
    dnr causal (--fixture NAME | --graph FILE) [--scm FILE] QUERY X Y [--given K[=v],...] [--set Z,...]
    dnr toy [--config FILE] [--variant dnr] [--rho 0.4]
    dnr ablate [--config FILE] [--rho 0.4] [--seeds 20] [--workers 1]
    dnr paradox [--config FILE] [--rhos 0,0.4,0.8] [--seeds 20]

``QUERY`` is one of ``dsep``, ``backdoor``, ``general-backdoor`` or
``adjust``. ``adjust`` needs an SCM: ``--scm`` loads one, and with
``--fixture`` a random parameterization is drawn from ``--seed``.

Output goes to stdout as a table, or to ``--output`` as JSON records;
``--format`` overrides either default. JSON keys are sorted and floats are
written at full precision, so reruns are byte-identical.

CSV columns:

* decompose: sample, label, foreground, tdd, fbd_pos, fbd_neg, fcd_pos,
  fcd_neg, p_not_target, p_not_bg, vanilla_kd, recombined
* gradcheck: trial, n_samples, n_classes, temperature, n_foreground, rel_error
* causal: path, kind, open, confounder, steps
* toy: class, role, accuracy
* ablate: variant, kd, tdd, fbd_pos, fbd_neg, fcd, mean, stderr, failures, n_seeds
* paradox: rho, variant, mean, stderr, failures, n_seeds

Toy config (JSON, every section optional)::

    {"task": {"feature_dim": 16, ...},
     "teacher": {"corruption_rate": 0.4, "temperature": 1.0},
     "train": {"lr_all": 0.05, "variant": "dnr", "hyper": {"preset": "coco"}}}

Exit codes: 0 success, 2 unreadable arguments or input files, 3 invalid
values or zero-probability conditioning, 4 training divergence, 5 a
failed check.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import causal
from .core_math import InvalidInputError
from .io import ParseError, read_batch, read_graph, read_scm
from .kd_losses import (
    DNR_TERMS,
    DnRHyperparams,
    decompose,
    dnr_gradient,
    dnr_loss_from_batch,
    finite_difference_gradient,
    gradient_relative_error,
    random_batch,
    remerge,
)
from .toy import (
    TABLE3_VARIANTS,
    SyntheticTaskSpec,
    TeacherSpec,
    TrainConfig,
    TrainingDivergedError,
    Variant,
    paired_greater,
    run_ablation,
    run_paradox,
    run_pipeline,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_DIVERGED = 4
EXIT_CHECK_FAILED = 5

GRADCHECK_TOLERANCE = 1e-5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class Report:
    columns: list[str]
    rows: list[dict]
    summary: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK


# -- rendering ----------------------------------------------------------------

def _clean(value):
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return _clean(value.item())
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _cell(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return "nan" if not math.isfinite(value) else f"{value:.6g}"
    if value is None:
        return "-"
    return str(value)


def render_records(report: Report) -> str:
    return json.dumps(_clean({"rows": report.rows, "summary": report.summary}), sort_keys=True, indent=2) + "\n"


def render_csv(report: Report) -> str:
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=report.columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in report.rows:
        writer.writerow({k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row.get(k), float)
                             else row[k]) for k in report.columns})
    return buf.getvalue()


def render_table(report: Report) -> str:
    lines = []
    if report.rows:
        cells = [[_cell(r.get(c)) for c in report.columns] for r in report.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(report.columns)]
        lines.append("  ".join(c.ljust(w) for c, w in zip(report.columns, widths)).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells)
    for key in sorted(report.summary):
        value = report.summary[key]
        if isinstance(value, (dict, list)):
            value = json.dumps(_clean(value), sort_keys=True)
        lines.append(f"{key}: {_cell(value)}")
    return "\n".join(lines) + "\n"


RENDERERS = {"table": render_table, "csv": render_csv, "records": render_records}


# -- shared option parsing ------------------------------------------------------

def _hyper(args) -> DnRHyperparams:
    h = DnRHyperparams.preset(args.preset)
    overrides = {k: getattr(args, k) for k in ("alpha", "beta", "temperature") if getattr(args, k, None) is not None}
    if getattr(args, "loss_weight", None) is not None:
        overrides["loss_weight"] = args.loss_weight
    return replace(h, **overrides) if overrides else h


def _csv_list(text: str | None) -> list[str]:
    if not text:
        return []
    return [p.strip() for p in text.split(",") if p.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in _csv_list(text)]
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {text!r}", EXIT_PARSE) from None


def _read_json(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}", EXIT_PARSE) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: {exc.msg}", EXIT_PARSE) from None
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object", EXIT_PARSE)
    return data


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise CliError(f"{where}: unknown keys {sorted(unknown)}", EXIT_PARSE)
    return cls(**values)


def load_toy_config(path: str | None, args) -> tuple[SyntheticTaskSpec, TeacherSpec, TrainConfig]:
    """Config sections overlaid on the dataclass defaults, then command-line flags on top."""
    data = _read_json(path) if path else {}
    unknown = set(data) - {"task", "teacher", "train"}
    if unknown:
        raise CliError(f"config: unknown sections {sorted(unknown)}", EXIT_PARSE)
    train = dict(data.get("train", {}))
    hyper_cfg = dict(train.pop("hyper", {}))
    preset = hyper_cfg.pop("preset", None) or args.preset
    hyper = replace(DnRHyperparams.preset(preset), **hyper_cfg) if hyper_cfg else DnRHyperparams.preset(preset)
    if args.preset_given:
        hyper = DnRHyperparams.preset(args.preset)
    if getattr(args, "loss_weight", None) is not None:
        hyper = replace(hyper, loss_weight=args.loss_weight)
    if "variant" in train:
        train["variant"] = Variant.parse(str(train["variant"]))
    if getattr(args, "variant", None):
        train["variant"] = Variant.parse(args.variant)
    task = _build(SyntheticTaskSpec, dict(data.get("task", {})), "task")
    teacher = _build(TeacherSpec, dict(data.get("teacher", {})), "teacher")
    cfg = _build(TrainConfig, {**train, "hyper": hyper}, "train")
    if getattr(args, "rho", None) is not None:
        teacher = replace(teacher, corruption_rate=args.rho)
    return replace(task, seed=args.seed), replace(teacher, seed=args.seed), replace(cfg, seed=args.seed)


# -- subcommands ----------------------------------------------------------------

def cmd_decompose(args) -> Report:
    try:
        batch = read_batch(args.batch)
    except OSError as exc:
        raise CliError(f"{args.batch}: {exc.strerror}", EXIT_PARSE) from None
    h = _hyper(args)
    dec = decompose(batch, h.temperature)
    recombined = dec.recombined()
    rows = []
    for i in range(batch.n_samples):
        fg = bool(dec.is_foreground[i])
        rows.append({
            "sample": i,
            "label": int(batch.labels[i]) if fg else "bg",
            "foreground": fg,
            "tdd": float(dec.tdd[i]),
            "fbd_pos": float(dec.fbd_pos[i]),
            "fbd_neg": float(dec.fbd_neg[i]),
            "fcd_pos": float(dec.fcd_pos[i]),
            "fcd_neg": float(dec.fcd_neg[i]),
            "p_not_target": float(dec.p_not_target[i]),
            "p_not_bg": float(dec.p_not_bg_pos[i] if fg else dec.p_not_bg_neg[i]),
            "vanilla_kd": float(dec.vanilla_kd[i]),
            "recombined": float(recombined[i]),
        })
    loss = remerge(dec, h, DNR_TERMS)
    summary = {
        "alpha": h.alpha, "beta": h.beta, "temperature": h.temperature, "loss_weight": h.loss_weight,
        "dnr_loss": loss,
        "weighted_dnr_loss": h.loss_weight * loss,
        "vanilla_kd_mean": float(dec.vanilla_kd.mean()),
        "identity_residual": dec.identity_residual(),
        "n_foreground": dec.n_foreground,
        "n_background": dec.n_background,
    }
    return Report(list(rows[0]), rows, summary)


def cmd_gradcheck(args) -> Report:
    if args.trials < 0:
        raise CliError("--trials must be non-negative", EXIT_INVALID)
    base = _hyper(args)
    rng = np.random.default_rng(args.seed)
    rows, worst = [], 0.0
    for trial in range(args.trials):
        n = int(rng.integers(1, 9))
        c = int(rng.integers(3, 11))
        T = float(rng.choice([1.0, 5.0, 10.0]))
        batch = random_batch(rng, n, c)
        h = replace(base, temperature=T)
        err = gradient_relative_error(dnr_gradient(batch, h),
                                      finite_difference_gradient(dnr_loss_from_batch, batch, h, args.step))
        worst = max(worst, err)
        rows.append({"trial": trial, "n_samples": n, "n_classes": c, "temperature": T,
                     "n_foreground": int(batch.is_foreground.sum()), "rel_error": err})
    passed = worst <= GRADCHECK_TOLERANCE
    summary = {"trials": args.trials, "max_rel_error": worst, "tolerance": GRADCHECK_TOLERANCE,
               "passed": passed, "seed": args.seed}
    columns = ["trial", "n_samples", "n_classes", "temperature", "n_foreground", "rel_error"]
    return Report(columns, rows if args.verbose or _format(args) != "table" else [], summary,
                  EXIT_OK if passed else EXIT_CHECK_FAILED)


def _parse_given(text: str | None) -> tuple[list[str], dict[str, str]]:
    names, values = [], {}
    for part in _csv_list(text):
        name, eq, value = part.partition("=")
        name = name.strip()
        names.append(name)
        if eq:
            values[name] = value.strip()
    return names, values


def _coerce(scm, node: str, text: str):
    for v in scm.domains[node]:
        if str(v) == text:
            return v
    raise CliError(f"value {text!r} not in domain of {node} {list(scm.domains[node])}", EXIT_INVALID)


def _step_notes(g, path, given) -> str:
    notes = []
    for i in range(1, len(path.nodes) - 1):
        node = path.nodes[i]
        if path.is_collider(i):
            opened = node in given or bool(g.descendants(node) & given)
            notes.append(f"{node}: collider, {'opened' if opened else 'blocks'}")
        else:
            notes.append(f"{node}: {'blocks (conditioned)' if node in given else 'passes'}")
    return "; ".join(notes)


def _path_row(g, cls_, given) -> dict:
    return {"path": str(cls_.path), "kind": cls_.kind.value, "open": cls_.open_given_conditioning,
            "confounder": cls_.confounder, "steps": _step_notes(g, cls_.path, given)}


def cmd_causal(args) -> Report:
    if sum(map(bool, (args.fixture, args.graph))) > 1 or not (args.fixture or args.graph or args.scm):
        raise CliError("give one of --fixture or --graph (or --scm alone)", EXIT_PARSE)
    if args.fixture and args.scm:
        raise CliError("--scm carries its own graph; drop --fixture", EXIT_PARSE)
    scm = None
    try:
        if args.fixture:
            fixture = causal.get_fixture(args.fixture)
            g = fixture.dag
            if args.query == "adjust":
                scm = fixture.scm(args.seed)
        if args.graph:
            g = read_graph(args.graph)
        if args.scm:
            scm = read_scm(args.scm)
            if args.graph and scm.dag != g:
                raise CliError("the SCM's graph differs from --graph", EXIT_INVALID)
            g = scm.dag
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_PARSE) from None
    except OSError as exc:
        raise CliError(f"{exc.filename}: {exc.strerror}", EXIT_PARSE) from None
    if args.query == "adjust" and scm is None:
        raise CliError("adjust needs --scm or --fixture", EXIT_PARSE)

    x, y = args.x, args.y
    given_names, given_values = _parse_given(args.given)
    given = frozenset(given_names)
    adjust_set = _csv_list(args.set)
    g._require(x, y, *given, *adjust_set)
    summary = {"query": args.query, "x": x, "y": y, "given": sorted(given)}

    if args.query == "dsep":
        sep = causal.is_d_separated(g, x, y, given)
        rows = [_path_row(g, c, given) for c in causal.classify_paths(g, x, y, given) if c.open_given_conditioning]
        summary["answer"] = "independent" if sep else "dependent"
        return Report(["path", "kind", "open", "confounder", "steps"], rows, summary)

    if args.query == "backdoor":
        z = frozenset(adjust_set)
        paths = causal.classic_backdoor_paths(g, x, y)
        rows = [_path_row(g, causal.classify_path(g, p, z), z) for p in paths]
        ok = causal.satisfies_backdoor_criterion(g, x, y, z)
        summary.update(adjustment_set=sorted(z), criterion_satisfied=ok, n_backdoor_paths=len(paths))
        return Report(["path", "kind", "open", "confounder", "steps"], rows, summary)

    if args.query == "general-backdoor":
        found = causal.general_backdoor_paths(g, x, y, given)
        rows = [_path_row(g, c, given) for c in found]
        summary.update(n_paths=len(found), confounders=sorted({c.confounder for c in found}))
        return Report(["path", "kind", "open", "confounder", "steps"], rows, summary)

    # adjust
    missing = [n for n in given_names if n not in given_values]
    if missing:
        raise CliError(f"adjust needs values for covariates {missing} (use --given K=1)", EXIT_PARSE)
    w = {n: _coerce(scm, n, v) for n, v in given_values.items()}
    rows = []
    for xv in scm.domains[x]:
        est = causal.backdoor_adjust(scm, x, xv, y, adjust_set, w)
        oracle = causal.interventional(scm, y, {x: xv}, w)
        for yv, e, o in zip(scm.domains[y], est, oracle):
            rows.append({"x": str(xv), "y": str(yv), "adjusted": float(e), "oracle": float(o),
                         "abs_diff": abs(float(e) - float(o))})
    summary.update(adjustment_set=adjust_set, covariates={k: str(v) for k, v in w.items()},
                   criterion_satisfied=causal.satisfies_backdoor_criterion(g, x, y, adjust_set),
                   max_abs_diff=max(r["abs_diff"] for r in rows))
    if args.fixture and not args.scm:
        summary["scm_seed"] = args.seed
    return Report(["x", "y", "adjusted", "oracle", "abs_diff"], rows, summary)


def _config_summary(spec, t_spec, cfg) -> dict:
    return {"seed": cfg.seed, "variant": cfg.variant.name, "corruption_rate": t_spec.corruption_rate,
            "alpha": cfg.hyper.alpha, "beta": cfg.hyper.beta, "temperature": cfg.hyper.temperature,
            "loss_weight": cfg.hyper.loss_weight}


def cmd_toy(args) -> Report:
    spec, t_spec, cfg = load_toy_config(args.config, args)
    report = run_pipeline(spec, t_spec, cfg)
    novel, base = set(spec.novel_ids), set(spec.base_ids)
    rows = [{"class": c, "role": "novel" if c in novel else "base" if c in base else "background",
             "accuracy": a} for c, a in sorted(report.per_class_accuracy.items())]
    summary = {**_config_summary(spec, t_spec, cfg), "novel_mean": report.novel_mean,
               "base_mean": report.base_mean, "background_accuracy": report.background_accuracy,
               "overall": report.overall}
    return Report(["class", "role", "accuracy"], rows, summary)


def _seeds(args) -> list[int]:
    if args.seeds < 1:
        raise CliError("--seeds must be positive", EXIT_INVALID)
    return list(range(args.seed, args.seed + args.seeds))


def cmd_ablate(args) -> Report:
    spec, t_spec, cfg = load_toy_config(args.config, args)
    variants = [Variant.parse(v) for v in _csv_list(args.variants)] if args.variants else list(TABLE3_VARIANTS)
    table = run_ablation(spec, t_spec, cfg, variants, _seeds(args), args.workers)
    rows = []
    for v, r in zip(variants, table.rows):
        rows.append({"variant": r.variant, "kd": v.use_kd_vanilla, "tdd": v.use_tdd, "fbd_pos": v.use_fbd_pos,
                     "fbd_neg": v.use_fbd_neg, "fcd": v.use_fcd, "mean": r.mean, "stderr": r.stderr,
                     "failures": r.failures, "n_seeds": len(r.seeds), "novel_accuracy": list(r.novel_accuracy)})
    summary = _config_summary(spec, t_spec, cfg)
    del summary["variant"]
    summary["seeds"] = _seeds(args)
    names = [r.variant for r in table.rows]
    if "fbd++fbd-+fcd" in names and "kd" in names:
        test = paired_greater(table.row("dnr").novel_accuracy, table.row("kd").novel_accuracy)
        summary["dnr_minus_kd"] = test.mean_difference
        summary["dnr_gt_kd_p_value"] = test.p_value
    failures = sum(r.failures for r in table.rows)
    return Report(["variant", "kd", "tdd", "fbd_pos", "fbd_neg", "fcd", "mean", "stderr", "failures", "n_seeds"],
                  rows, summary, EXIT_DIVERGED if failures else EXIT_OK)


def cmd_paradox(args) -> Report:
    spec, t_spec, cfg = load_toy_config(args.config, args)
    rhos = _float_list(args.rhos)
    if not rhos:
        raise CliError("--rhos needs at least one value", EXIT_PARSE)
    tables = run_paradox(spec, t_spec, cfg, rhos, _seeds(args), args.workers)
    rows = []
    for rho, table in zip(rhos, tables):
        for r in table.rows:
            rows.append({"rho": rho, "variant": r.variant, "mean": r.mean, "stderr": r.stderr,
                         "failures": r.failures, "n_seeds": len(r.seeds), "novel_accuracy": list(r.novel_accuracy)})
    summary = {"seeds": _seeds(args), "alpha": cfg.hyper.alpha, "beta": cfg.hyper.beta,
               "temperature": cfg.hyper.temperature, "loss_weight": cfg.hyper.loss_weight}
    failures = sum(r["failures"] for r in rows)
    return Report(["rho", "variant", "mean", "stderr", "failures", "n_seeds"], rows, summary,
                  EXIT_DIVERGED if failures else EXIT_OK)


# -- argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_PARSE)


def _add_common(p, hyper_flags: bool = False):
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--preset", choices=sorted(("coco", "voc")), default="coco",
                   help="hyper-parameter preset (default coco)")
    p.add_argument("--format", choices=sorted(RENDERERS), default=None,
                   help="default: table on stdout, records with --output")
    p.add_argument("--output", "-o", default=None, help="write output here instead of stdout")
    if hyper_flags:
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--temperature", "-T", type=float)


def _add_toy(p, rho_flag: bool = True):
    p.add_argument("--config", help="JSON toy config")
    p.add_argument("--loss-weight", dest="loss_weight", type=float, help="override lambda")
    if rho_flag:
        p.add_argument("--rho", type=float, help="teacher corruption rate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dnr", description="Disentangled distillation losses, causal queries and toy experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="per-sample loss decomposition of a batch file")
    p.add_argument("batch")
    _add_common(p, hyper_flags=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("gradcheck", help="analytic gradient vs central differences")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--verbose", "-v", action="store_true", help="list every trial in table output")
    _add_common(p, hyper_flags=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("causal", help="d-separation, backdoor paths and adjustment")
    p.add_argument("query", choices=["dsep", "backdoor", "general-backdoor", "adjust"])
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--fixture", choices=sorted(causal.all_fixtures()))
    p.add_argument("--graph", help="edge-list text file")
    p.add_argument("--scm", help="JSON SCM config")
    p.add_argument("--given", default="", help="conditioning set, e.g. K or K=1,W=0")
    p.add_argument("--set", default="", help="adjustment set, e.g. F,T")
    _add_common(p)
    p.set_defaults(func=cmd_causal)

    p = sub.add_parser("toy", help="one two-stage training run")
    p.add_argument("--variant", help="none, kd, dnr or terms joined by '+', e.g. tdd+fbd++fcd")
    _add_toy(p)
    _add_common(p)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("ablate", help="component ablation over seeds")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds, starting at --seed")
    p.add_argument("--variants", help="comma-separated variants (default: all eight rows)")
    p.add_argument("--workers", type=int, default=1)
    _add_toy(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("paradox", help="no KD vs vanilla KD vs D&R across corruption rates")
    p.add_argument("--rhos", default="0,0.4,0.8")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    _add_toy(p, rho_flag=False)
    _add_common(p)
    p.set_defaults(func=cmd_paradox)
    return parser


def _format(args) -> str:
    return args.format or ("records" if args.output else "table")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.preset_given = any(a == "--preset" or a.startswith("--preset=") for a in argv)
        report = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TrainingDivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except causal.ConditioningError as exc:
        print(f"conditioning error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InvalidInputError, causal.GraphError, causal.ScmError, ValueError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID

    text = RENDERERS[_format(args)](report)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
