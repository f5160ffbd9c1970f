"""Command-line pipeline: analyze bundles, emit plans, materialize, simulate.

Subcommands: inspect, group, conflict, subspace, plan (A+B+C composed),
decompose, simulate, report.  Exit codes: 0 success, 1 input/validation
error, 2 numerical/analysis error.  All configuration flows through flags;
the only environment knob is GDPS_THREADS, which changes parallelism but
never results.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import conflict as cf
from . import decompose as dc
from . import grouping as gr
from . import report as rp
from . import subspace as sb
from . import synth as sy
from .bundle import bundle_fingerprint, read_bundle, read_matrix_file
from .errors import AnalysisError, GdpsError, TrainingDivergence, ValidationError


class _UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _parse_thresholds(text: str) -> cf.RatioThresholds:
    try:
        low, high = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise _UsageError(f"--thresholds expects 'low,high', got {text!r}") from exc
    return cf.RatioThresholds(low=low, high=high)


def _parse_groups(text: str, n_tasks: int):
    groups = []
    for part in text.split("|"):
        idx = [int(x) for x in part.split(",") if x != ""]
        if any(not 0 <= i < n_tasks for i in idx):
            raise _UsageError(f"--groups indices out of range for {n_tasks} tasks: {part!r}")
        groups.append(idx)
    return groups


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _stage(name: str, exc: Exception) -> GdpsError:
    wrapped = type(exc)(f"[stage: {name}] {exc}")
    wrapped.__cause__ = exc
    return wrapped


def _load_bundle(path: str):
    try:
        bundle = read_bundle(path)
        return bundle, bundle_fingerprint(path)
    except GdpsError as exc:
        raise _stage("bundle-load", exc) from exc


def _resolve_layer(bundle, layer: str | None) -> str:
    if layer is None:
        return bundle.layers[0]
    if layer not in bundle.layers:
        raise ValidationError(f"layer {layer!r} not in bundle; available: {list(bundle.layers)}")
    return layer


def cmd_inspect(args) -> int:
    bundle, fp = _load_bundle(args.bundle)
    info = {
        "fingerprint": fp,
        "tasks": list(bundle.tasks),
        "layers": [
            {"id": lay, "cols": bundle.layer_dim(lay)} for lay in bundle.layers
        ],
        "entries": [
            {"task": t, "layer": lay, "rows": bundle.matrix(t, lay).rows}
            for t in bundle.tasks
            for lay in bundle.layers
        ],
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    if args.out:
        _write(Path(args.out) / "inspect.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_group(args) -> int:
    bundle, _ = _load_bundle(args.bundle)
    layer = _resolve_layer(bundle, args.layer)
    try:
        sim = gr.similarity_matrix(bundle, layer)
        dist = gr.to_distance(sim)
        plan = gr.consensus_group(bundle, layer, k=args.k_groups, seed=args.seed)
        merges = gr.linkage_merges(dist)
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("grouping", exc) from exc
    out = Path(args.out)
    _write(out / "grouping.json", json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "similarity.csv", rp.similarity_csv(sim.tasks, sim.s))
    _write(out / "distance.csv", rp.similarity_csv(dist.tasks, dist.d))
    _write(out / "merges.csv", rp.merges_csv(merges))
    print(f"method={plan.method} k={plan.k}")
    for i, g in enumerate(plan.groups):
        print(f"group {i}: {', '.join(g)}")
    for w in plan.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_conflict(args) -> int:
    bundle, _ = _load_bundle(args.bundle)
    candidates = args.layers.split(",") if args.layers else None
    thresholds = _parse_thresholds(args.thresholds)
    try:
        report = cf.conflict_report(bundle, candidates, thresholds, seed=args.seed)
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("conflict", exc) from exc
    _write(Path(args.out) / "conflict.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    for lc in report.layers:
        print(
            f"{lc.layer}: s_self={lc.s_self:.4f} s_cross={lc.s_cross:.4f} "
            f"delta={lc.delta:.4f} purity={lc.purity:.4f}"
        )
    print(f"delta={report.delta:.6f} branch=({cf.ratio_branch(report.delta, thresholds)}) "
          f"shared_ratio={report.shared_ratio}")
    return 0


def cmd_subspace(args) -> int:
    bundle, _ = _load_bundle(args.bundle)
    layer = _resolve_layer(bundle, args.layer)
    try:
        report = sb.subspace_report(
            bundle, layer, k=args.top_k, lam=args.lam, normalize_rows=args.normalize_rows
        )
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("subspace", exc) from exc
    out = Path(args.out)
    _write(out / "subspace.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "spectrum.csv", report.spectrum_csv())
    print(f"layer={layer} k={report.k} top1_share={report.top1_share:.4f} gini={report.gini:.4f}")
    for t, p in zip(report.tasks, report.proportions):
        print(f"p[{t}] = {p:.4f}")
    return 0


def _run_plan_pipeline(bundle, fingerprint, args):
    layer = _resolve_layer(bundle, args.layer)
    candidates = args.layers.split(",") if args.layers else list(bundle.layers)
    thresholds = _parse_thresholds(args.thresholds)
    if len(bundle.tasks) < 2:
        raise ValidationError(">= 2 tasks required for cross-task analysis")

    try:
        sim = gr.similarity_matrix(bundle, layer)
        dist = gr.to_distance(sim)
        grouping = gr.consensus_group(bundle, layer, k=args.k_groups, seed=args.seed)
        merges = gr.linkage_merges(dist)
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("grouping", exc) from exc

    try:
        conflict = cf.conflict_report(bundle, candidates, thresholds, seed=args.seed)
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("conflict", exc) from exc

    try:
        subspace = sb.subspace_report(
            bundle, layer, k=args.top_k, lam=args.lam, normalize_rows=args.normalize_rows
        )
        p_g = sb.group_energy(subspace.proportions, grouping, bundle.tasks)
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("subspace", exc) from exc

    ratio_override = getattr(args, "ratio", None)
    shared_ratio = ratio_override if ratio_override else conflict.shared_ratio
    noise_scale = args.noise
    coupling_note = None
    if getattr(args, "cca_noise_coupling", False):
        n = len(bundle.tasks)
        off = [subspace.cca[i, j] for i in range(n) for j in range(n) if i != j]
        factor = max(0.0, 1.0 - float(np.mean(off))) if off else 1.0
        noise_scale = args.noise * factor
        coupling_note = (
            f"private-init noise scaled by (1 - mean off-diagonal rho) = {factor:.6f}"
        )

    try:
        plan = dc.make_plan(
            grouping=grouping,
            shared_ratio=shared_ratio,
            d_model=args.d_model,
            d_ff=args.d_ff,
            p_g=tuple(float(x) for x in p_g),
            r=args.private_rank if args.private_rank and args.private_rank > 0 else None,
            noise_scale=noise_scale,
            seed=args.seed,
            activation=args.activation,
        )
    except GdpsError as exc:
        raise _stage("plan-build", exc) from exc

    warnings = list(grouping.warnings) + list(conflict.warnings) + list(subspace.warnings)
    if ratio_override:
        warnings.append(
            f"shared_ratio {ratio_override} forced by flag; measured delta "
            f"{conflict.delta:.6f} maps to {conflict.shared_ratio}"
        )
    if coupling_note:
        warnings.append(coupling_note)
    if sim.degenerate_count:
        warnings.append(
            f"{sim.degenerate_count} degenerate (zero-norm) mean-gradient pairs in the similarity matrix"
        )
    flags = {
        "bundle": str(args.bundle),
        "layer": layer,
        "layers": ",".join(candidates),
        "k_groups": args.k_groups,
        "thresholds": args.thresholds,
        "top_k": args.top_k,
        "lambda": args.lam,
        "seed": args.seed,
        "noise": args.noise,
        "d_model": args.d_model,
        "d_ff": args.d_ff,
        "activation": args.activation,
        "normalize_rows": bool(args.normalize_rows),
        "private_rank": args.private_rank or 0,
        "ratio": getattr(args, "ratio", None) or 0.0,
        "cca_noise_coupling": bool(getattr(args, "cca_noise_coupling", False)),
    }
    report = rp.PipelineReport(
        bundle_fingerprint=fingerprint,
        tasks=bundle.tasks,
        layer=layer,
        similarity=sim.s,
        distance=dist.d,
        merges=merges,
        grouping=grouping,
        conflict=conflict,
        subspace=subspace,
        plan=plan,
        flags=flags,
        warnings=tuple(warnings),
    )
    return plan, report


def cmd_plan(args) -> int:
    bundle, fp = _load_bundle(args.bundle)
    plan, report = _run_plan_pipeline(bundle, fp, args)
    out = Path(args.out)
    _write(out / "plan.json", json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "report.json", report.to_json())
    _write(out / "report.md", report.to_markdown())
    print(f"groups: {[list(g) for g in plan.grouping.groups]} (method={plan.grouping.method})")
    print(f"delta={report.conflict.delta:.6f} shared_ratio={plan.shared_ratio}")
    print(f"d_s={plan.d_s} d_p={plan.d_p} r={plan.r} p_g={[round(x, 4) for x in plan.p_g]}")
    print(f"wrote {out / 'plan.json'}, {out / 'report.json'}, {out / 'report.md'}")
    return 0


def cmd_decompose(args) -> int:
    plan_path = Path(args.plan)
    if not plan_path.is_file():
        raise ValidationError(f"plan file not found: {plan_path}")
    try:
        plan = dc.DecompositionPlan.from_dict(json.loads(plan_path.read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"unreadable plan {plan_path}: {exc}") from exc
    if args.noise is not None or args.seed is not None:
        plan = dataclasses.replace(
            plan,
            noise_scale=plan.noise_scale if args.noise is None else args.noise,
            seed=plan.seed if args.seed is None else args.seed,
        )

    w1 = read_matrix_file(args.w1).astype(np.float64)
    w2 = read_matrix_file(args.w2).astype(np.float64)
    d_ff, d_model = w1.shape
    if w2.shape != (d_model, d_ff) or (d_model, d_ff) != (plan.d_model, plan.d_ff):
        print(
            f"shape mismatch: w1 {w1.shape}, w2 {w2.shape}, "
            f"plan expects w1 ({plan.d_ff}, {plan.d_model}), w2 ({plan.d_model}, {plan.d_ff})",
            file=sys.stderr,
        )
        return 2
    weights = dc.UnifiedFfnWeights(d_model=d_model, d_ff=d_ff, w1=w1, w2=w2)

    try:
        ffn = dc.assemble(
            weights, plan, private_rank=args.private_rank if args.private_rank else None
        )
        w_equiv = dc.equiv_weight(weights)
        _, _, w_shared_equiv = dc.shared_factors(w_equiv, plan)
        res_norm = float(np.linalg.norm(w_equiv - w_shared_equiv))
        rel = res_norm / max(float(np.linalg.norm(w_equiv)), 1e-300)
    except ValidationError:
        raise
    except GdpsError as exc:
        raise _stage("decompose", exc) from exc

    out = Path(args.out)
    dc.save_ffn(ffn, out)
    print(f"shared_up {ffn.shared_up.shape}, shared_down {ffn.shared_down.shape}")
    for g in range(len(ffn.private_up)):
        print(f"group {g}: up {ffn.private_up[g].shape}, down {ffn.private_down[g].shape}")
    print(f"residual frobenius norm = {res_norm:.3e} (relative {rel:.3e})")
    print(f"wrote specialized block to {out}")
    return 0


def cmd_simulate(args) -> int:
    seeds = [int(s) for s in str(args.seeds).split(",") if s != ""]
    if not seeds:
        raise _UsageError("--seeds must list at least one integer")
    groups = _parse_groups(args.groups, args.tasks)
    modes = ["unified", "specialized"] if args.mode == "both" else [args.mode]
    out = Path(args.out)

    runs = []
    logs = {}
    for seed in seeds:
        suite = sy.make_suite(
            args.tasks,
            groups,
            args.theta,
            seed=seed,
            noise=args.target_noise,
        )
        model = sy.make_model(
            suite, d_model=args.d_model, d_ff=args.d_ff, seed=seed, activation=args.activation
        )
        entry = {"seed": seed, "theta": args.theta}
        plan = None
        if "specialized" in modes:
            bundle = sy.collect_bundle(model, suite, n_samples=args.samples, seed=seed)
            plan_args = argparse.Namespace(
                layer=None,
                layers=None,
                thresholds=args.thresholds,
                k_groups=len(groups),
                top_k=args.top_k,
                lam=args.lam,
                seed=seed,
                noise=args.noise,
                d_model=args.d_model,
                d_ff=args.d_ff,
                activation=args.activation,
                normalize_rows=False,
                private_rank=args.private_rank,
                ratio=None,
                cca_noise_coupling=False,
                bundle="<in-memory>",
            )
            plan, _ = _run_plan_pipeline_from_memory(bundle, plan_args)
            entry["plan"] = plan.to_dict()
        for mode in modes:
            try:
                log = sy.train(
                    model,
                    suite,
                    mode,
                    plan=plan if mode == "specialized" else None,
                    steps=args.steps,
                    lr=args.lr,
                    batch_size=args.batch_size,
                    seed=seed,
                )
            except TrainingDivergence as exc:
                entry[mode] = {"diverged": str(exc)}
                print(f"seed {seed} {mode}: diverged ({exc})", file=sys.stderr)
                continue
            logs[(seed, mode)] = log
            entry[mode] = log.summary_dict()
            _write(out / f"log_{mode}_{seed}.csv", log.to_csv())
        if ("specialized" in modes and "unified" in modes
                and (seed, "specialized") in logs and (seed, "unified") in logs):
            delta = sy.similarity_delta(logs[(seed, "specialized")], logs[(seed, "unified")])
            entry["similarity_delta"] = {t: float(v) for t, v in delta.items()}
            entry["similarity_delta_mean"] = float(np.mean(list(delta.values())))
        runs.append(entry)

    summary = {
        "params": {
            "theta": args.theta,
            "tasks": args.tasks,
            "groups": args.groups,
            "steps": args.steps,
            "lr": args.lr,
            "batch_size": args.batch_size,
            "samples": args.samples,
            "seeds": seeds,
            "mode": args.mode,
            "d_model": args.d_model,
            "d_ff": args.d_ff,
            "activation": args.activation,
            "target_noise": args.target_noise,
        },
        "runs": runs,
    }
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write(out / "summary.md", _simulate_markdown(summary))
    print(_simulate_markdown(summary))
    return 0


def _run_plan_pipeline_from_memory(bundle, args):
    import hashlib

    fp = hashlib.sha256(
        b"".join(
            bundle.matrix(t, lay).data.tobytes()
            for t in bundle.tasks
            for lay in bundle.layers
        )
    ).hexdigest()
    return _run_plan_pipeline(bundle, fp, args)


def _simulate_markdown(summary: dict) -> str:
    p = summary["params"]
    lines = [
        "# Simulation summary",
        "",
        f"- theta = {p['theta']} deg, tasks = {p['tasks']}, groups = {p['groups']}",
        f"- steps = {p['steps']}, lr = {p['lr']}, seeds = {p['seeds']}",
        "",
        "| seed | unified final loss | specialized final loss | winner | mean cosine delta |",
        "|---|---|---|---|---|",
    ]
    for run in summary["runs"]:
        uni = run.get("unified", {})
        spec = run.get("specialized", {})
        u = uni.get("final_mean_loss")
        s = spec.get("final_mean_loss")
        if u is not None and s is not None:
            winner = "specialized" if s < u else "unified"
        else:
            winner = "n/a"
        delta = run.get("similarity_delta_mean")
        lines.append(
            f"| {run['seed']} | {u if u is not None else 'div/na'} "
            f"| {s if s is not None else 'div/na'} | {winner} "
            f"| {delta if delta is not None else 'n/a'} |"
        )
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    inputs = [x for x in str(args.inputs).split(",") if x]
    plans = []
    sims = []
    for raw in inputs:
        path = Path(raw)
        if path.is_dir():
            for candidate in ("report.json", "summary.json"):
                if (path / candidate).is_file():
                    path = path / candidate
                    break
        if not path.is_file():
            raise ValidationError(f"input not found: {raw}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"unreadable JSON in {path}: {exc}") from exc
        if "conflict" in data:
            plans.append((str(path), data))
        elif "runs" in data:
            sims.append((str(path), data))
        else:
            raise ValidationError(f"{path}: not a recognized plan report or simulate summary")

    out = Path(args.out)
    lines = ["# Consolidated report", ""]
    consolidated = {"plans": [], "simulations": []}

    for i, (src, data) in enumerate(plans):
        c = data["conflict"]
        thresholds = cf.RatioThresholds(
            low=c["thresholds"]["low"],
            high=c["thresholds"]["high"],
            ratios=tuple(c["thresholds"]["ratios"]),
        )
        branch = cf.ratio_branch(c["delta"], thresholds)
        lines += [
            f"## Plan {i}: `{src}`",
            "",
            f"- delta = {c['delta']:.6f}",
            f"- branch fired: {branch}",
            f"- shared_ratio = {c['shared_ratio']}",
            f"- grouping: {data['grouping']['groups']} (method={data['grouping']['method']})",
            "",
        ]
        consolidated["plans"].append(
            {"source": src, "delta": c["delta"], "branch": branch,
             "shared_ratio": c["shared_ratio"], "grouping": data["grouping"]}
        )
        tasks = data["tasks"]
        _write(out / f"similarity_{i}.csv", rp.similarity_csv(tasks, data["similarity"]))
        _write(out / f"merges_{i}.csv", rp.merges_csv(data["merges"]))
        sigma = np.asarray(data["subspace"]["sigma"], dtype=np.float64)
        energies = sigma**2
        total = energies.sum() if energies.sum() > 0 else 1.0
        spec_lines = ["index,sigma,energy_share"]
        for j, s in enumerate(sigma):
            spec_lines.append(f"{j},{s!r},{energies[j] / total!r}")
        _write(out / f"spectrum_{i}.csv", "\n".join(spec_lines) + "\n")

    if sims:
        lines += ["## Simulations", ""]
        header = "| seed |" + "".join(
            f" unified {i} | specialized {i} |" for i in range(len(sims))
        )
        rule = "|---|" + "---|---|" * len(sims)
        lines += [header, rule]
        all_seeds = sorted(
            {run["seed"] for _, data in sims for run in data["runs"]}
        )
        for seed in all_seeds:
            row = f"| {seed} |"
            for _, data in sims:
                run = next((r for r in data["runs"] if r["seed"] == seed), {})
                uni = run.get("unified", {}).get("final_mean_loss", "n/a")
                spec = run.get("specialized", {}).get("final_mean_loss", "n/a")
                row += f" {uni} | {spec} |"
            lines.append(row)
        lines.append("")
        for src, data in sims:
            consolidated["simulations"].append({"source": src, "params": data["params"]})

    text = "\n".join(lines) + "\n"
    if args.format == "md":
        _write(out / "consolidated.md", text)
        print(text)
    elif args.format == "json":
        _write(out / "consolidated.json", json.dumps(consolidated, indent=2, sort_keys=True) + "\n")
    else:
        rows = ["kind,source,delta,branch,shared_ratio,seed,unified,specialized"]
        for p_ in consolidated["plans"]:
            rows.append(
                f"plan,{p_['source']},{p_['delta']!r},\"{p_['branch']}\","
                f"{p_['shared_ratio']},,,"
            )
        for src_, data in sims:
            for run in data["runs"]:
                uni = run.get("unified", {}).get("final_mean_loss", "")
                spec = run.get("specialized", {}).get("final_mean_loss", "")
                rows.append(f"simulate,{src_},,,,{run['seed']},{uni},{spec}")
        _write(out / "consolidated.csv", "\n".join(rows) + "\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="gdps", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, bundle=True):
        if bundle:
            p.add_argument("--bundle", required=True, help="bundle directory")
        p.add_argument("--seed", type=int, default=2343)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("inspect", help="summarize a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("group", help="Method A: cluster tasks")
    common(p)
    p.add_argument("--layer", default=None)
    p.add_argument("--k-groups", type=int, default=2)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("conflict", help="Method B: conflict scores and ratio")
    common(p)
    p.add_argument("--layers", default=None, help="comma-separated candidate layers")
    p.add_argument("--thresholds", default="0.05,0.15")
    p.set_defaults(func=cmd_conflict)

    p = sub.add_parser("subspace", help="Method C: joint spectrum and CCA")
    common(p)
    p.add_argument("--layer", default=None)
    p.add_argument("--top-k", type=int, default=sb.DEFAULT_TOP_K)
    p.add_argument("--lambda", dest="lam", type=float, default=sb.DEFAULT_LAMBDA)
    p.add_argument("--normalize-rows", action="store_true")
    p.set_defaults(func=cmd_subspace)

    p = sub.add_parser("plan", help="compose Methods A+B+C into a decomposition plan")
    common(p)
    p.add_argument("--layer", default=None)
    p.add_argument("--layers", default=None)
    p.add_argument("--k-groups", type=int, default=2)
    p.add_argument("--thresholds", default="0.05,0.15")
    p.add_argument("--top-k", type=int, default=sb.DEFAULT_TOP_K)
    p.add_argument("--lambda", dest="lam", type=float, default=sb.DEFAULT_LAMBDA)
    p.add_argument("--normalize-rows", action="store_true")
    p.add_argument("--noise", type=float, default=dc.DEFAULT_NOISE_SCALE)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--d-ff", type=int, default=32)
    p.add_argument("--activation", choices=dc.ACTIVATIONS, default=dc.DEFAULT_ACTIVATION)
    p.add_argument("--private-rank", type=int, default=0)
    p.add_argument("--ratio", type=float, default=None,
                   help="force the shared ratio instead of deriving it from delta")
    p.add_argument("--cca-noise-coupling", action="store_true",
                   help="scale private-init noise by (1 - mean off-diagonal CCA rho)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("decompose", help="materialize a plan on unified weights")
    p.add_argument("--w1", required=True, help=".gdm file, d_ff x d_model")
    p.add_argument("--w2", required=True, help=".gdm file, d_model x d_ff")
    p.add_argument("--plan", required=True, help="plan.json from `gdps plan`")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--private-rank", type=int, default=0)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("simulate", help="train unified vs specialized on a synthetic suite")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--tasks", type=int, default=4)
    p.add_argument("--groups", default="0|1,2,3", help="task indices, groups separated by |")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--samples", type=int, default=32, help="gradient samples per task")
    p.add_argument("--seeds", default="2343")
    p.add_argument("--mode", choices=["unified", "specialized", "both"], default="both")
    p.add_argument("--thresholds", default="0.05,0.15")
    p.add_argument("--top-k", type=int, default=sb.DEFAULT_TOP_K)
    p.add_argument("--lambda", dest="lam", type=float, default=sb.DEFAULT_LAMBDA)
    p.add_argument("--noise", type=float, default=dc.DEFAULT_NOISE_SCALE)
    p.add_argument("--target-noise", type=float, default=0.05)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--d-ff", type=int, default=32)
    p.add_argument("--activation", choices=dc.ACTIVATIONS, default=dc.DEFAULT_ACTIVATION)
    p.add_argument("--private-rank", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="consolidate prior outputs into one report")
    p.add_argument("--inputs", required=True, help="comma-separated output files or dirs")
    p.add_argument("--format", choices=["json", "md", "csv"], default="md")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 2
    except GdpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
