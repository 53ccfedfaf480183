"""Experiment runner: config-driven dispatch into the library.

One entry point (``lqgvtr``) reads a JSON/TOML config and/or flags, runs one
experiment kind, and writes CSV/JSON artifacts plus a manifest with the
config hash and per-output checksums.  Identical config + seed reproduces
byte-identical CSV outputs; the manifest timestamp is the only field allowed
to differ between reruns.

Kinds: solve, validate, warmup, vtr-run, gap, minimax, reduction,
clip-probe, regret-sweep, summarize.
"""

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, benchmarks, harness, lqg, model_class, vtr

__all__ = ["ExperimentConfig", "run", "summarize", "main", "SchemaMismatch"]

KINDS = ("solve", "validate", "warmup", "vtr-run", "gap", "minimax",
         "reduction", "clip-probe", "regret-sweep", "summarize")


class SchemaMismatch(ValueError):
    """Trace files passed to summarize do not share a schema."""


# ---------------------------------------------------------------------------
# Config

_DEFAULTS = {
    "kind": None,
    "class": None,
    "cost": None,
    "true_model": None,
    "horizon": 2000,
    "reps": 8,
    "seed": 0,
    "seeds": 1,
    "out": "out",
    "mc_check": False,
    "beta_scale": None,
    "learner": None,
    "policy": "lqg_vtr",
    "l_values": list(range(2, 31)),
    "warmup_lengths": [2000, 8000, 32000],
    "model": None,
}


class ExperimentConfig:
    """Resolved experiment description (flags > file > defaults)."""

    def __init__(self, doc):
        unknown = set(doc) - set(_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(_DEFAULTS)
        merged.update({k: v for k, v in doc.items() if v is not None})
        self.doc = merged
        if merged["kind"] not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, "
                             f"got {merged['kind']!r}")
        hs = merged["horizon"]
        if isinstance(hs, (list, tuple)):
            hs = [int(h) for h in hs]
            if any(b <= a for a, b in zip(hs, hs[1:])):
                raise ValueError("horizon list must be strictly increasing")
            self.horizons = hs
        else:
            self.horizons = [int(hs)]
        self.kind = merged["kind"]

    def __getitem__(self, key):
        return self.doc[key]

    def canonical(self):
        """Stable JSON form used for hashing."""
        return json.dumps(self.doc, sort_keys=True, default=str)

    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _read_config_file(path):
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _max_workers():
    raw = os.environ.get("LQGVTR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    """Order-preserving map, optionally threaded (LQGVTR_THREADS)."""
    workers = _max_workers()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Ingestion

def _class_doc(cfg):
    """Parsed class-spec document with any config-level cost override."""
    with open(cfg["class"]) as fh:
        doc = json.load(fh)
    if cfg["cost"] is not None:
        doc["cost"] = cfg["cost"]
    return doc


def _load_class(cfg):
    spec = cfg["class"]
    if spec is None:
        raise ValueError("config needs a 'class' entry")
    if isinstance(spec, str) and spec.startswith("builtin:"):
        return benchmarks.builtin_class(spec.split(":", 1)[1])
    return model_class.load_class(_class_doc(cfg))


def _true_solved(simclass, cfg):
    tid = cfg["true_model"]
    if tid is None:
        raise ValueError("config needs 'true_model' for this kind")
    return simclass.solved_by_id(tid)


def _learner_config(cfg):
    doc = dict(cfg["learner"] or {})
    if cfg["beta_scale"] is not None:
        doc["beta_scale"] = float(cfg["beta_scale"])
    return vtr.LearnerConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# Output helpers

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return "%d" % x
    if isinstance(x, (float, np.floating)):
        return "%.12g" % x
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _json_default(obj):
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _Emitter:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.outputs = []

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    def manifest(self, cfg, seeds):
        doc = {
            "version": __version__,
            "kind": cfg.kind,
            "config": cfg.doc,
            "config_hash": cfg.config_hash(),
            "seeds": list(seeds),
            "outputs": {name: _sha256(os.path.join(self.out_dir, name))
                        for name in self.outputs},
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return doc


def _seed_list(cfg):
    base = int(cfg["seed"])
    return [base + i for i in range(int(cfg["seeds"]))]


# ---------------------------------------------------------------------------
# Kind handlers

def _kind_solve(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    rows = []
    doc = {}
    for sid, solved in zip(simclass.ids, simclass.solved):
        entry = {
            "J_star": solved.J_star,
            "P_norm": float(np.linalg.norm(solved.P, 2)),
            "Sigma_norm": float(np.linalg.norm(solved.Sigma, 2)),
            "K_norm": float(np.linalg.norm(solved.K, 2)),
            "L_norm": float(np.linalg.norm(solved.L, 2)),
        }
        if cfg["mc_check"]:
            mean, se, _ = lqg.rollout_policy(
                solved.system, cost, lqg.StaticFilterPolicy(solved),
                int(cfg["horizon"]), np.random.SeedSequence(int(cfg["seed"])),
                reps=int(cfg["reps"]))
            avg = mean / (int(cfg["horizon"]) + 1)
            entry["mc_avg_cost"] = avg
            entry["mc_se"] = se / (int(cfg["horizon"]) + 1)
            entry["mc_tolerance"] = max(0.01 * solved.J_star,
                                        3 * entry["mc_se"])
        doc[sid] = entry
        rows.append([sid, entry["J_star"], entry["P_norm"],
                     entry["Sigma_norm"], entry["K_norm"], entry["L_norm"]])
    _write_json(em.path("solve.json"), doc)
    _write_csv(em.path("solve.csv"),
               ["model", "J_star", "P_norm", "Sigma_norm", "K_norm", "L_norm"],
               rows)


def _kind_validate(cfg, em):
    spec = cfg["class"]
    if isinstance(spec, str) and spec.startswith("builtin:"):
        simclass = benchmarks.builtin_class(spec.split(":", 1)[1])
        reports = simclass.reports + [r for _, r in simclass.pruned]
    else:
        doc = _class_doc(cfg)
        if "members" in doc:
            # validate every candidate individually so an all-fail class
            # still yields a report instead of an empty-class error
            cost = lqg.CostSpec(doc["cost"]["Q"], doc["cost"]["R"])
            members = [lqg.LqgSystem(m["A"], m["B"], m["C"],
                                     name=m.get("name", f"m{i}"))
                       for i, m in enumerate(doc["members"])]
            reports = [model_class.validate_assumptions(s, cost)
                       for s in members]
        else:
            simclass = model_class.load_class(doc)
            reports = simclass.reports + [r for _, r in simclass.pruned]
    doc = {}
    rows = []
    for rep in reports:
        doc[rep.name] = {
            "passed": rep.passed,
            "checks": [{"name": n, "passed": ok, "detail": d}
                       for n, ok, d in rep.checks],
            "certified": rep.certified,
        }
        rows.append([rep.name, rep.passed,
                     ";".join(n for n, ok, _ in rep.checks if not ok)])
    _write_json(em.path("validate.json"), doc)
    _write_csv(em.path("validate.csv"), ["model", "passed", "failures"], rows)


def _kind_warmup(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    truth = _true_solved(simclass, cfg)
    lengths = [int(t) for t in cfg["warmup_lengths"]]
    seeds = _seed_list(cfg)
    lcfg = _learner_config(cfg)
    base = vtr.resolve_config(lcfg, simclass, cost,
                              max(int(h) for h in cfg.horizons))
    H_tilde = base["H_tilde"] if isinstance(base, dict) else base.H_tilde

    def job(args):
        T_w, seed = args
        env = lqg.LqgEnv(truth.system, np.random.default_rng(seed))
        est = vtr.warmup_markov(env, T_w, H_tilde, sigma_u=lcfg.sigma_u)
        err = float(np.linalg.norm(
            est.M_hat - vtr.markov_parameters(truth, H_tilde), 2))
        radius = 3.0 * est.error_scale()
        pr = vtr.prune_class(simclass, est, radius)
        return [T_w, seed, err, est.residual_trace_mean, radius,
                int(cfg["true_model"] in pr.kept_ids), len(pr.kept_ids),
                pr.inflations]

    rows = _parallel_map(job, [(T, s) for T in lengths for s in seeds])
    _write_csv(em.path("warmup.csv"),
               ["T_w", "seed", "markov_error", "residual_trace", "radius",
                "retained_true", "kept", "inflations"], rows)


def _kind_vtr_run(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    truth = _true_solved(simclass, cfg)
    lcfg = _learner_config(cfg)
    H = int(cfg.horizons[-1])
    seed = int(cfg["seed"])
    env = lqg.LqgEnv(truth.system, np.random.default_rng(seed))
    res = vtr.run_lqg_vtr(simclass, cost, env, H, lcfg)
    res.trace.write_csv(em.path("trace.csv"))
    _write_json(em.path("episodes.json"), {
        "episodes": res.episodes,
        "halted": res.halted,
        "params": {k: v for k, v in res.params.to_dict().items()
                   if isinstance(v, (int, float, str))},
        "prune": {"kept": res.prune.kept_ids,
                  "radius": res.prune.radius_used,
                  "inflations": res.prune.inflations},
        "final_model": res.state.optimistic_id,
        "final_regret": res.trace.final_regret(),
    })


def _kind_gap(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    truth = _true_solved(simclass, cfg)
    pol = _policy_from_config(cfg, simclass, cost)
    rows = []
    reports = []
    for H in cfg.horizons:
        rep = harness.evaluate_gap(pol, truth, cost, int(H),
                                   reps=int(cfg["reps"]),
                                   seed=int(cfg["seed"]))
        reports.append(rep.to_dict())
        rows.append([H, rep.V_pi, rep.V_star, rep.gap, rep.std_error,
                     rep.gap / math.sqrt(H), rep.gap / H])
    _write_csv(em.path("gap.csv"),
               ["H", "V_pi", "V_star", "gap", "std_error", "gap_per_sqrtH",
                "gap_per_H"], rows)
    _write_json(em.path("gap.json"), {"reports": reports})


def _policy_from_config(cfg, simclass, cost):
    name = cfg["policy"]
    if name == "lqg_vtr":
        return harness.PolicySpec.lqg_vtr(simclass, _learner_config(cfg))
    if name == "zero":
        return harness.PolicySpec.zero()
    if name == "minimax":
        report = harness.minimax_static_policy(simclass, cost)
        return report.policy
    if isinstance(name, str) and name.startswith("ce:"):
        return harness.PolicySpec.certainty_equivalent(
            simclass.solved_by_id(name.split(":", 1)[1]),
            description=name)
    raise ValueError(f"unknown policy {name!r}")


def _kind_minimax(cfg, em):
    simclass = _load_class(cfg)
    report = harness.minimax_static_policy(simclass, simclass.cost)
    _write_json(em.path("minimax.json"), report.to_dict())
    rows = [[report.ids[j]] + list(report.table[j]) + [report.worst[j]]
            for j in range(len(report.ids))]
    _write_csv(em.path("minimax.csv"),
               ["controller"] + [f"truth_{i}" for i in report.ids] + ["worst"],
               rows)


def _kind_reduction(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    ids = ([cfg["true_model"]] if cfg["true_model"] is not None
           else simclass.ids)
    rows = []
    doc = {}
    for sid in ids:
        rep = harness.reduction_diagnostic(simclass.solved_by_id(sid), cost,
                                           cfg.horizons)
        doc[sid] = rep.to_dict()
        for H, d in zip(rep.H_values, rep.differences):
            rows.append([sid, H, d])
    _write_csv(em.path("reduction.csv"), ["model", "H", "difference"], rows)
    _write_json(em.path("reduction.json"), doc)


def _kind_clip_probe(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    truth = _true_solved(simclass, cfg)
    solved_opt = truth
    policy = lqg.StaticFilterPolicy(truth)
    _, _, traj = lqg.rollout_policy(
        truth.system, cost, policy, max(cfg.horizons),
        np.random.SeedSequence(int(cfg["seed"])), reps=1)
    table = vtr.clipping_error_probe(truth, solved_opt, cost, traj,
                                     cfg["l_values"])
    rows = [[l, table[l]] for l in sorted(table)]
    _write_csv(em.path("clip_probe.csv"), ["l", "max_gap"], rows)


def _kind_regret_sweep(cfg, em):
    simclass = _load_class(cfg)
    cost = simclass.cost
    truth = _true_solved(simclass, cfg)
    lcfg = _learner_config(cfg)
    seeds = _seed_list(cfg)

    def job(args):
        H, seed = args
        env = lqg.LqgEnv(truth.system, np.random.default_rng(seed))
        res = vtr.run_lqg_vtr(simclass, cost, env, int(H), lcfg)
        return (H, seed, res)

    results = _parallel_map(job, [(H, s) for H in cfg.horizons
                                  for s in seeds])
    rows = []
    for H, seed, res in results:
        rows.append([H, seed, res.trace.final_regret(), len(res.episodes),
                     int(res.halted), res.state.optimistic_id,
                     res.params.K_bar])
        res.trace.write_csv(em.path(f"trace_H{H}_seed{seed}.csv"))
    _write_csv(em.path("sweep.csv"),
               ["H", "seed", "final_regret", "episodes", "halted",
                "final_model", "K_bar"], rows)


_HANDLERS = {
    "solve": _kind_solve,
    "validate": _kind_validate,
    "warmup": _kind_warmup,
    "vtr-run": _kind_vtr_run,
    "gap": _kind_gap,
    "minimax": _kind_minimax,
    "reduction": _kind_reduction,
    "clip-probe": _kind_clip_probe,
    "regret-sweep": _kind_regret_sweep,
}


def run(cfg):
    """Execute one experiment; returns the manifest dict.

    On failure writes ``error.json`` into the output directory and re-raises.
    """
    em = _Emitter(cfg["out"])
    stale = os.path.join(cfg["out"], "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    try:
        _HANDLERS[cfg.kind](cfg, em)
    except Exception as exc:
        _write_json(os.path.join(cfg["out"], "error.json"), {
            "error": type(exc).__name__,
            "message": str(exc),
            "kind": cfg.kind,
        })
        raise
    return em.manifest(cfg, _seed_list(cfg))


# ---------------------------------------------------------------------------
# Summaries

def _read_trace(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.genfromtxt(fh, delimiter=",")
    if data.ndim == 1:
        data = data.reshape(1, -1)
    return header, data


def summarize(paths):
    """Aggregate regret traces: per-horizon stats and a log-log slope fit.

    Groups traces by their step count, takes the final cumulative regret of
    each, and fits log(median regret) against log(H) by least squares.
    A single horizon yields an undefined slope (``None``, flagged by
    ``slope_defined``); the fit's own standard error needs at least three
    horizons and is ``None`` below that.
    """
    if not paths:
        raise ValueError("summarize needs at least one trace file")
    header0 = None
    groups = {}
    for path in paths:
        header, data = _read_trace(path)
        if header0 is None:
            header0 = header
        elif header != header0:
            raise SchemaMismatch(
                f"{path} columns {header} != {header0}")
        try:
            col = header.index("cumulative_regret")
        except ValueError:
            raise SchemaMismatch(f"{path} lacks a cumulative_regret column")
        H = data.shape[0]
        groups.setdefault(H, []).append(float(data[-1, col]))

    Hs = sorted(groups)
    table = []
    for H in Hs:
        vals = np.asarray(groups[H])
        se = (float(vals.std(ddof=1) / math.sqrt(len(vals)))
              if len(vals) > 1 else 0.0)
        table.append({
            "H": H, "n": len(vals), "mean": float(vals.mean()),
            "median": float(np.median(vals)), "se": se,
        })

    if len(Hs) >= 2 and all(row["median"] > 0 for row in table):
        x = np.log([row["H"] for row in table])
        y = np.log([row["median"] for row in table])
        X = np.column_stack([np.ones_like(x), x])
        coef, res, _, _ = np.linalg.lstsq(X, y, rcond=None)
        slope = float(coef[1])
        if len(Hs) > 2:
            rss = float(res[0]) if res.size else float(
                np.sum((y - X @ coef) ** 2))
            sxx = float(np.sum((x - x.mean()) ** 2))
            slope_se = math.sqrt(max(rss / (len(Hs) - 2), 0.0) / sxx)
        else:
            slope_se = None
    else:
        slope, slope_se = None, None

    return {
        "per_H": table,
        "slope": slope,
        "slope_se": slope_se,
        "slope_defined": slope is not None,
    }


# ---------------------------------------------------------------------------
# Entry point

def _build_parser():
    ap = argparse.ArgumentParser(
        prog="lqgvtr",
        description="Config-driven experiments for the control/learning "
                    "toolkit.")
    ap.add_argument("traces", nargs="*",
                    help="trace CSVs (kind=summarize only)")
    ap.add_argument("--config", help="JSON/TOML config file")
    ap.add_argument("--kind", choices=KINDS)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--seeds", type=int, help="number of consecutive seeds")
    ap.add_argument("--horizon",
                    help="horizon or comma-separated increasing list")
    ap.add_argument("--reps", type=int)
    ap.add_argument("--out")
    ap.add_argument("--mc-check", action="store_true", default=None)
    ap.add_argument("--beta-scale", type=float)
    return ap


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.kind is None and args.traces and args.traces[0] in KINDS:
        args.kind = args.traces.pop(0)
    doc = _read_config_file(args.config) if args.config else {}
    overrides = {
        "kind": args.kind,
        "seed": args.seed,
        "seeds": args.seeds,
        "reps": args.reps,
        "out": args.out,
        "mc_check": args.mc_check,
        "beta_scale": args.beta_scale,
    }
    if args.horizon is not None:
        parts = str(args.horizon).split(",")
        overrides["horizon"] = ([int(p) for p in parts] if len(parts) > 1
                                else int(parts[0]))
    doc.update({k: v for k, v in overrides.items() if v is not None})

    kind = doc.get("kind")
    try:
        if kind == "summarize":
            if not args.traces:
                raise ValueError("kind=summarize needs trace file arguments")
            out = summarize(args.traces)
            json.dump(out, sys.stdout, indent=2)
            sys.stdout.write("\n")
            return 0
        cfg = ExperimentConfig(doc)
        run(cfg)
        return 0
    except Exception as exc:
        sys.stderr.write(json.dumps({
            "error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
