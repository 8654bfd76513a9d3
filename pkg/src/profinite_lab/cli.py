"""Command line entry point: ``profinite-lab run`` and ``profinite-lab retract``.

Each scenario returns a mapping of named checks to observed outcomes plus
JSON details.  The outcomes each scenario should produce live in this module
(``EXPECTED``), so the library itself never asserts.  Reports contain no
timing data and sort all keys, so equal parameters give byte-identical JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import __version__
from .counterexample import covers, lift, space
from .freeab import oracle_equivalence_sweep
from .retraction import (
    RetractionError,
    retraction_check,
    retraction_corpus,
    synthesize_retraction,
)
from .serialize import morphism_from_json, morphism_to_json, point_from_json
from .tower import (
    INF,
    ClosedConstraint,
    Point,
    TowerError,
    closed_subtower,
    disjoint_union,
    nat_infinity,
    nat_point,
    singleton_tower,
    surjective_to_depth,
)

SCHEMA_VERSION = 1
MIN_DEPTH, MAX_DEPTH = 1, 64
HOLDS = "holds"
FAILS = "fails"

_VERDICT = {"type": "string", "enum": [HOLDS, FAILS]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "tool", "params", "ok", "scenarios"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "tool": {"type": "object", "required": ["name", "version"]},
        "params": {
            "type": "object",
            "required": ["depth", "bound", "seed", "instances", "terms", "scenarios"],
            "properties": {"depth": {"type": "integer", "minimum": MIN_DEPTH, "maximum": MAX_DEPTH}},
        },
        "ok": {"type": "boolean"},
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "ok", "observed", "expected", "details"],
                "properties": {
                    "name": {"type": "string"},
                    "ok": {"type": "boolean"},
                    "observed": {"type": "object", "additionalProperties": _VERDICT},
                    "expected": {"type": "object", "additionalProperties": _VERDICT},
                    "details": {"type": "object"},
                },
            },
        },
    },
}


class CliError(ValueError):
    pass


@dataclass
class Params:
    depth: int = 12
    bound: int = 8
    seed: int = 0
    instances: int = 10
    terms: int = 5

    def to_json(self) -> dict:
        return {"depth": self.depth, "bound": self.bound, "seed": self.seed, "instances": self.instances, "terms": self.terms}


@dataclass
class ScenarioResult:
    name: str
    observed: Dict[str, str]
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def expected(self) -> Dict[str, str]:
        return EXPECTED[self.name]

    @property
    def ok(self) -> bool:
        return self.observed == self.expected

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "ok": self.ok,
            "observed": dict(sorted(self.observed.items())),
            "expected": dict(sorted(self.expected.items())),
            "details": self.details,
        }


def _status(flag: bool) -> str:
    return HOLDS if flag else FAILS


# --------------------------------------------------------------------------
# scenarios


def scenario_not_jointly_epic(p: Params) -> ScenarioResult:
    fam, tags = covers.sample_family()
    w = covers.non_joint_cover_witness(fam, tags, p.depth)
    sample_ok = covers.reverify_omitted(fam, w).holds and w.omitted == 3
    corpus_details: List[dict] = []
    corpus_ok = True
    for k, (f, t) in enumerate(covers.family_corpus(p.seed, 100)):
        try:
            cw = covers.non_joint_cover_witness(f, t, max(p.depth, 16))
            good = covers.reverify_omitted(f, cw).holds
            corpus_details.append({"family": k, "members": len(f.members), "omitted": cw.omitted, "reverified": good})
        except covers.TagError as exc:
            good = False
            corpus_details.append({"family": k, "tag_error": str(exc)})
        corpus_ok = corpus_ok and good
    return ScenarioResult(
        "not-jointly-epic",
        {"sample_omits_3": _status(sample_ok), "corpus_witnessed_and_reverified": _status(corpus_ok)},
        {"sample": w.to_json(), "corpus": corpus_details},
    )


def _retraction_examples(depth: int) -> Dict[str, Any]:
    out = {}
    nat = nat_infinity()
    union, inl, _ = disjoint_union(nat, singleton_tower())
    r = synthesize_retraction(inl, nat_point(INF, nat), 3 * depth, depth)
    out["N_inf into N_inf + pt"] = retraction_check(r, inl, depth)
    two, incl = closed_subtower(ClosedConstraint(nat, predicate=lambda n, x: x in (0, INF), name="{0,inf}"), surjective_from=1)
    pt = Point(two, lambda n: INF, name="inf")
    r2 = synthesize_retraction(incl, pt, 3 * depth, depth)
    out["{0,inf} into N_inf"] = retraction_check(r2, incl, depth)
    return out


def scenario_retraction_synthesis(p: Params) -> ScenarioResult:
    examples = _retraction_examples(p.depth)
    failures: List[dict] = []
    corpus = retraction_corpus(p.seed, 200, 8, min(10, p.depth))
    for k, case in enumerate(corpus):
        try:
            r = synthesize_retraction(case.iota, case.point, 3 * case.depth, case.depth)
            v = retraction_check(r, case.iota, case.depth)
            if not v.holds:
                failures.append({"case": k, "verdict": v.to_json()})
        except (RetractionError, TowerError) as exc:
            failures.append({"case": k, "error": str(exc)})
    return ScenarioResult(
        "retraction-synthesis",
        {"examples": _status(all(v.holds for v in examples.values())), "corpus": _status(not failures)},
        {"examples": {k: v.to_json() for k, v in sorted(examples.items())}, "corpus_size": len(corpus), "failures": failures},
    )


def scenario_invariant_failure(p: Params) -> ScenarioResult:
    setup, cands = covers.candidate_corpus(p.seed, 200)
    kinds: Dict[str, int] = {}
    missing: List[str] = []
    for cand in cands:
        try:
            f = covers.slice_retraction_failure(cand, p.depth, setup)
            kinds[f.kind] = kinds.get(f.kind, 0) + 1
        except (AssertionError, TowerError) as exc:
            missing.append(f"{cand.name}: {exc}")
    return ScenarioResult(
        "invariant-failure",
        {"every_candidate_has_witness": _status(not missing)},
        {"candidates": len(cands), "witness_kinds": dict(sorted(kinds.items())), "missing": missing},
    )


def scenario_noo_proj_lift(p: Params) -> ScenarioResult:
    depth = min(p.depth, 10)
    cases = [("concrete", lift.concrete_instance())] + [(f"random{k}", inst) for k, inst in enumerate(lift.instance_corpus(p.seed, p.instances))]
    results = []
    all_ok = True
    for name, inst in cases:
        res = lift.run_pipeline(inst, depth)
        good = res.report.all_equal and all(v.holds for v in res.checks.values())
        all_ok = all_ok and good
        results.append({"name": name, "ok": good, "verdicts": dict(sorted(res.report.kinds.items())), "checks": {k: v.status for k, v in sorted(res.checks.items())}})
    return ScenarioResult("noo-proj-lift", {"all_lifts_verified": _status(all_ok)}, {"depth": depth, "instances": results})


def scenario_main_counterexample(p: Params) -> ScenarioResult:
    _, pi, _ = space.build_X()
    val = space.validate_X(p.depth)
    fibre = space.fibre_over_infinity(p.depth)
    iso = space.iso_away_check(p.bound, p.depth)
    surj = surjective_to_depth(pi, p.depth)
    finite = []
    for k in range(p.bound + 1):
        stage = space.point_stage(k)
        oracle = space.section_oracle(max(6, k + 1))
        d = space.section_dichotomy(stage, space.point_sum(stage, [(1, k, 1)], oracle), space.point_sum(stage, [(1, INF, 0)], oracle), oracle)
        finite.append(d.kind)
    inf_stage = space.point_stage(INF)
    oracle = space.section_oracle(6)
    forced = {
        "x-second-component-0": space.section_dichotomy(
            inf_stage, space.point_sum(inf_stage, [(1, INF, 0)], oracle), space.point_sum(inf_stage, [(1, INF, 0)], oracle), oracle
        ),
        "y-second-component-1": space.section_dichotomy(
            inf_stage, space.point_sum(inf_stage, [(1, INF, 1)], oracle), space.point_sum(inf_stage, [(1, INF, 1)], oracle), oracle
        ),
    }
    search = space.generic_section_search()
    observed = {
        "X_valid": _status(val.holds),
        "fibre_over_inf_inf_has_2_points": _status(len(fibre) == 2),
        "other_fibres_singletons": _status(iso.holds),
        "pi_surjective": _status(surj.holds),
        "finite_stages_not_infinity": _status(all(k == space.NOT_INFINITY for k in finite)),
        "forced_cases_infinity": _status(all(d.kind == space.IS_INFINITY for d in forced.values())),
        "generic_stage_has_no_section": _status(not search.equal_sections),
    }
    details = {
        "validate_X": val.to_json(),
        "fibre_over_inf_inf": [[_label(x) for x in pt] for pt in fibre],
        "iso_away": iso.to_json(),
        "pi_surjective": surj.to_json(),
        "finite_stage_verdicts": finite,
        "forced": {k: v.to_json() for k, v in sorted(forced.items())},
        "generic_search": search.to_json(),
    }
    return ScenarioResult("main-counterexample", observed, details)


def _label(x):
    from .finset import label_to_json

    return label_to_json(x)


def scenario_eq_coprod_oracle(p: Params) -> ScenarioResult:
    report = oracle_equivalence_sweep(p.terms)
    return ScenarioResult("eq-coprod-oracle", {"agrees_with_brute_force": _status(report.agrees)}, report.to_json())


SCENARIOS: Dict[str, Callable[[Params], ScenarioResult]] = {
    "not-jointly-epic": scenario_not_jointly_epic,
    "retraction-synthesis": scenario_retraction_synthesis,
    "invariant-failure": scenario_invariant_failure,
    "noo-proj-lift": scenario_noo_proj_lift,
    "main-counterexample": scenario_main_counterexample,
    "eq-coprod-oracle": scenario_eq_coprod_oracle,
}

EXPECTED: Dict[str, Dict[str, str]] = {
    "not-jointly-epic": {"sample_omits_3": HOLDS, "corpus_witnessed_and_reverified": HOLDS},
    "retraction-synthesis": {"examples": HOLDS, "corpus": HOLDS},
    "invariant-failure": {"every_candidate_has_witness": HOLDS},
    "noo-proj-lift": {"all_lifts_verified": HOLDS},
    "main-counterexample": {
        "X_valid": HOLDS,
        "fibre_over_inf_inf_has_2_points": HOLDS,
        "other_fibres_singletons": HOLDS,
        "pi_surjective": HOLDS,
        "finite_stages_not_infinity": HOLDS,
        "forced_cases_infinity": HOLDS,
        "generic_stage_has_no_section": HOLDS,
    },
    "eq-coprod-oracle": {"agrees_with_brute_force": HOLDS},
}


# --------------------------------------------------------------------------
# driver


def depth_cap() -> int:
    raw = os.environ.get("PROFINITE_LAB_MAX_DEPTH")
    if raw is None:
        return MAX_DEPTH
    try:
        cap = int(raw)
    except ValueError as exc:
        raise CliError(f"PROFINITE_LAB_MAX_DEPTH must be an integer, got {raw!r}") from exc
    return max(MIN_DEPTH, min(cap, MAX_DEPTH))


def check_params(p: Params) -> Params:
    if not MIN_DEPTH <= p.depth <= MAX_DEPTH:
        raise CliError(f"depth must lie in [{MIN_DEPTH}, {MAX_DEPTH}], got {p.depth}")
    if not 1 <= p.bound <= MAX_DEPTH:
        raise CliError(f"bound must lie in [1, {MAX_DEPTH}], got {p.bound}")
    if p.instances < 0:
        raise CliError("instances must be non-negative")
    if not 0 <= p.terms <= 5:
        raise CliError("terms must lie in [0, 5]")
    p.depth = min(p.depth, depth_cap())
    return p


def run(scenarios: Sequence[str], params: Params) -> dict:
    """Run the named scenarios (in sorted order) and assemble the report."""
    unknown = [s for s in scenarios if s not in SCENARIOS]
    if unknown:
        raise CliError(f"unknown scenario(s): {', '.join(unknown)}; known: {', '.join(sorted(SCENARIOS))}")
    params = check_params(params)
    results = [SCENARIOS[name](params) for name in sorted(set(scenarios))]
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "profinite-lab", "version": __version__},
        "params": {**params.to_json(), "scenarios": sorted(set(scenarios))},
        "ok": all(r.ok for r in results),
        "scenarios": [r.to_json() for r in results],
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def report_to_text(report: dict) -> str:
    lines = [f"profinite-lab {report['tool']['version']} (schema {report['schema_version']})"]
    lines.append("params: " + ", ".join(f"{k}={v}" for k, v in sorted(report["params"].items()) if k != "scenarios"))
    for sc in report["scenarios"]:
        lines.append(f"[{'ok' if sc['ok'] else 'UNEXPECTED'}] {sc['name']}")
        for check, status in sc["observed"].items():
            want = sc["expected"].get(check)
            mark = "" if status == want else f" (expected {want})"
            lines.append(f"    {check}: {status}{mark}")
    lines.append(f"overall: {'ok' if report['ok'] else 'UNEXPECTED'}")
    return "\n".join(lines)


def _load(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def retract_command(embedding: str, point: str, depth: int) -> dict:
    """Synthesize a retraction for a serialized embedding and point."""
    if not MIN_DEPTH <= depth <= MAX_DEPTH:
        raise CliError(f"depth must lie in [{MIN_DEPTH}, {MAX_DEPTH}], got {depth}")
    depth = min(depth, depth_cap())
    iota = morphism_from_json(_load(embedding))
    pt = point_from_json(_load(point), iota.source)
    r = synthesize_retraction(iota, pt, 3 * depth, depth)
    verdict = retraction_check(r, iota, depth)
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "profinite-lab", "version": __version__},
        "depth": depth,
        "retraction": morphism_to_json(r, depth),
        "verdict": verdict.to_json(),
        "ok": verdict.holds,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="profinite-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run verification scenarios")
    r.add_argument("--scenario", action="append", dest="scenarios", metavar="NAME", help="scenario to run (repeatable; default: all)")
    r.add_argument("--depth", type=int, default=12)
    r.add_argument("--bound", type=int, default=8)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--instances", type=int, default=10, help="random lift instances")
    r.add_argument("--terms", type=int, default=5, help="term bound for the oracle sweep")
    r.add_argument("--format", choices=("json", "text"), default="text")
    r.add_argument("--output", help="write the report here instead of stdout")
    t = sub.add_parser("retract", help="synthesize a retraction from JSON files")
    t.add_argument("--embedding", required=True)
    t.add_argument("--point", required=True)
    t.add_argument("--depth", type=int, default=12)
    sub.add_parser("list", help="list scenario names")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(sorted(SCENARIOS)))
            return 0
        if args.command == "retract":
            out = retract_command(args.embedding, args.point, args.depth)
            print(report_to_json(out))
            return 0 if out["ok"] else 1
        params = Params(args.depth, args.bound, args.seed, args.instances, args.terms)
        report = run(args.scenarios or sorted(SCENARIOS), params)
        text = report_to_json(report) if args.format == "json" else report_to_text(report)
        if args.output:
            with open(args.output, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0 if report["ok"] else 1
    except (CliError, RetractionError, TowerError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
