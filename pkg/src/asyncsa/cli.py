"""Command-line runner: ``asyncsa run | audit | oracle``."""
import argparse
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
import hashlib
import json
import os
import sys

import numpy as np

from . import mdp
from .config import (ExperimentConfig, build_bias, build_field, build_model, build_noise,
                     build_scheduler)
from .errors import AssumptionViolation, ConfigError, KernelValidityError
from .inclusion import FlowSampler, euler_flow, kushner_clark_sup
from .mean_field import OmegaBox, ScaledField, check_sa_map
from .rng import substream
from .sa_engine import AsyncSA, write_metadata
from .scheduler import ConstantKernel, min_update_proportion, occupancy, stationary_distribution
from .stepsize import analytic_ratio_bound, ratio_bound
from .two_timescale import FastLimitOracle, JointFamily, TwoTimescaleSA, ratio_trend, tracking_error

STATUSES = ("verified", "empirically-supported", "unverifiable", "violated")


def file_sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _x0(cfg, k):
    return np.zeros(k) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)


def _box(cfg):
    return None if cfg.box is None else (np.asarray(cfg.box[0], float), np.asarray(cfg.box[1], float))


def _run_single(cfg, seed, out):
    field = build_field(cfg.field)
    family, kernel = build_scheduler(cfg.scheduler, field.dim)
    engine = AsyncSA(field, cfg.slow_schedule(), kernel, family, build_noise(cfg.noise),
                     build_bias(cfg.bias), _box(cfg), cfg.tie_policy)
    log = engine.run(_x0(cfg, field.dim), cfg.n_steps, seed)
    path = os.path.join(out, f"trajectory_seed{seed}.csv")
    log.to_csv(path, cfg.thin)
    starts = [n for n in (10, 100, 1000, 10000, 100000) if n < log.n_steps
              and log.tau_bar[n] + 1.0 <= log.tau_bar[-1]]
    occ = occupancy(log.subset[1:], family)
    diag = {
        "final_x": log.x[-1].tolist(),
        "final_norm": float(np.linalg.norm(log.x[-1])),
        "tau_bar": float(log.tau_bar[-1]),
        "noise_sup_T1": {str(n): kushner_clark_sup(log, 1.0, n).noise_sup for n in starts},
        "nu_fraction": occ.nu_fraction.tolist(),
    }
    return diag, [path]


def _run_two_timescale(cfg, seed, out):
    F = build_field(cfg.field)
    G = build_field(cfg.fast_field)
    k, l = F.dim, G.dim
    sched = cfg.scheduler or {}
    pairs = sched.get("pairs", [[list(range(k)), list(range(l))]])
    family = JointFamily(tuple((tuple(a), tuple(b)) for a, b in pairs), k, l)
    P = np.asarray(sched.get("kernel", np.full((len(family), len(family)), 1.0 / len(family))), dtype=float)
    engine = TwoTimescaleSA(F, G, cfg.slow_schedule(), cfg.fast_schedule_obj(), ConstantKernel(P), family,
                            build_noise(cfg.noise), build_noise(cfg.fast_noise), build_bias(cfg.bias),
                            tie_policy=cfg.tie_policy)
    x0 = _x0(cfg, k)
    y0 = np.zeros(l) if cfg.y0 is None else np.asarray(cfg.y0, dtype=float)
    log = engine.run(x0, y0, cfg.n_steps, seed)
    path = os.path.join(out, f"coupled_seed{seed}.csv")
    log.to_csv(path, cfg.thin)
    first, last = ratio_trend(log.ratio)
    diag = {"final_x": log.x[-1].tolist(), "final_y": log.y[-1].tolist(),
            "ratio_final": float(log.ratio[-1]), "ratio_first_decade_max": first,
            "ratio_last_decade_max": last}
    # linear fast field G = C x + D y + e has Lambda(x) = -D^-1 (C x + e) when D is Hurwitz
    D = G.A[:, k:]
    if np.all(np.linalg.eigvals(D).real < 0):
        C, e = G.A[:, :k], G.b
        oracle = FastLimitOracle(lambda x: -np.linalg.solve(D, C @ x + e))
        diag["tracking_error"] = tracking_error(log.y[-1], log.x[-1], oracle)
    return diag, [path]


def _run_mdp(cfg, seed, out):
    model = build_model(cfg.model)
    if cfg.noise is not None:
        model.reward_noise = build_noise(cfg.noise)
    opt = mdp.value_iteration(model, 1e-10)
    res = mdp.learn(model, cfg.n_steps, seed, cfg.epsilon, cfg.fast_schedule_obj(), cfg.slow_schedule(),
                    cfg.checkpoint_every, cfg.freeze_policy, tie_policy=cfg.tie_policy)
    metrics = mdp.checkpoint_metrics(model, res, opt.V)
    path = os.path.join(out, f"checkpoints_seed{seed}.csv")
    mdp.write_checkpoints(path, metrics)
    pair_path = os.path.join(out, f"pairs_seed{seed}.csv")
    with open(pair_path, "w") as fh:
        fh.write("n,state,action,reward\n")
        for n in range(0, res.actions.size, cfg.thin):
            fh.write(f"{n + 1},{res.states[n]},{res.actions[n]},{res.rewards[n]:.17g}\n")
    diag = {
        "final_Q": res.Q.tolist(), "final_pi": res.pi.tolist(),
        "max_value_gap": float(metrics[-1, 2]), "W": float(metrics[-1, 1]),
        "tracking_error": float(metrics[-1, 3]), "clamps": res.clamps,
        "eta_hat": float(mdp.eta_hat(model, cfg.epsilon, res.policies)),
        "ratio_final": float(res.ratio[-1]),
    }
    return diag, [path, pair_path]


def _run_flow(cfg, seed, out):
    base = build_field(cfg.field)
    flow = cfg.flow or {}
    box = OmegaBox(float(flow.get("epsilon", 1.0)), base.dim)
    sampler = FlowSampler(ScaledField(base, box), float(flow.get("dt", 0.01)), flow.get("policy", "fixed-omega"),
                          float(flow.get("horizon", 10.0)), flow.get("omega"))
    bundle = euler_flow(sampler, _x0(cfg, base.dim), int(flow.get("n_selections", 4)), substream(seed, "flow"))
    path = os.path.join(out, f"flow_seed{seed}.csv")
    with open(path, "w") as fh:
        fh.write(",".join(["path", "t"] + [f"x_{i + 1}" for i in range(base.dim)]) + "\n")
        for j, p in enumerate(bundle.paths):
            for t, x in zip(bundle.times, p):
                fh.write(",".join([str(j), format(t, ".17g")] + [format(v, ".17g") for v in x]) + "\n")
    diag = {"terminal": [p[-1].tolist() for p in bundle.paths], "blown_up": bundle.blown_up.tolist()}
    return diag, [path]


RUNNERS = {"single-sa": _run_single, "two-timescale": _run_two_timescale, "mdp-learn": _run_mdp,
           "di-flow": _run_flow}


def run_seed(cfg_dict, seed, out):
    """Run one replicate; returns a JSON-ready record (never raises on assumption violations)."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        diag, files = RUNNERS[cfg.kind](cfg, seed, out)
        ok, error = True, None
    except (AssumptionViolation, KernelValidityError) as exc:
        diag, files, ok, error = {}, [], False, str(exc)
    write_metadata(os.path.join(out, f"metadata_seed{seed}.json"), seed, cfg_dict)
    record = {"seed": seed, "ok": ok, "error": error, "diagnostics": diag,
              "files": {os.path.basename(f): file_sha256(f) for f in files}}
    with open(os.path.join(out, f"diagnostics_seed{seed}.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def _median(records, key):
    vals = [r["diagnostics"][key] for r in records if r["ok"] and key in r["diagnostics"]]
    return float(np.median(vals)) if vals else None


def run(cfg, threads=1):
    """Run every seed; returns ``(exit_code, summary)``."""
    if cfg.kind == "audit":
        report = audit(cfg)
        return (1 if report["violated"] else 0), report
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    d = cfg.to_dict()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_seed, [d] * len(cfg.seeds), cfg.seeds, [out] * len(cfg.seeds)))
    else:
        records = [run_seed(d, s, out) for s in cfg.seeds]
    keys = ("final_norm", "max_value_gap", "tracking_error", "W", "ratio_final", "eta_hat")
    summary = {
        "created": datetime.now(timezone.utc).isoformat(),
        "kind": cfg.kind,
        "seeds": cfg.seeds,
        "n_ok": sum(r["ok"] for r in records),
        "medians": {k: _median(records, k) for k in keys if _median(records, k) is not None},
        "failures": {str(r["seed"]): r["error"] for r in records if not r["ok"]},
        "file_hashes": {str(r["seed"]): r["files"] for r in records},
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return (0 if summary["n_ok"] > 0 else 1), summary


def _item(status, **evidence):
    assert status in STATUSES
    return {"status": status, **evidence}


def _audit_schedule(sched, label):
    return _item("verified", method="closed-form family", analytic_A_half=analytic_ratio_bound(sched, 0.5),
                 empirical_A_half=ratio_bound(sched, 0.5, 10 ** 5).value, assumption=label)


def audit(cfg):
    """Per-assumption statuses with evidence; ``violated`` lists failed items."""
    items = {}
    items["A2 step sizes"] = _audit_schedule(cfg.slow_schedule(), "A2")
    if cfg.fast_schedule is not None:
        items["B2 fast step sizes"] = _audit_schedule(cfg.fast_schedule_obj(), "B2")
        items["B2(c) pairing"] = _item("verified", slow=cfg.schedule, fast=cfg.fast_schedule)
    if cfg.model is not None:
        model = build_model({**cfg.model}) if "random" in cfg.model or "path" in cfg.model \
            else mdp.MdpModel.from_dict(cfg.model, check=False)
        S, A = model.n_states, model.n_actions
        try:
            model.check_chain()
            rng = substream(cfg.seeds[0], "audit")
            grid = [np.full((S, A), 1.0 / A)] + [rng.dirichlet(np.ones(A), size=S) for _ in range(20)]
            for s_pure in range(A):
                pure = np.zeros((S, A))
                pure[:, s_pure] = 1.0
                grid.append(pure)
            eta = mdp.eta_hat(model, cfg.epsilon, grid)
            items["A4/B4 scheduling chain"] = _item("verified", eta_hat=eta, epsilon=cfg.epsilon,
                                                     grid_size=len(grid))
        except AssumptionViolation as exc:
            items["A4/B4 scheduling chain"] = _item("violated", message=str(exc))
        items["B6 fast equilibrium"] = _item("verified", contraction_constant=model.beta,
                                             method="h(pi, .) is a beta-contraction in sup norm")
        items["B1(a) boundedness"] = _item("empirically-supported", q_box=model.q_bound,
                                           method="per-entry clamp with logged events")
        items["A5/B5 reward noise"] = _item("verified", noise=model.reward_noise.to_dict())
    if cfg.field is not None:
        field = build_field(cfg.field)
        probes = list(substream(cfg.seeds[0], "probes").normal(size=(5, field.dim))) + [np.zeros(field.dim)]
        rep = check_sa_map(field, probes)
        items["SA map criteria"] = _item(rep.status, growth_ratio=rep.growth_ratio, usc_ok=rep.usc_ok)
        # built-in noise families are bounded or gaussian, so every moment condition holds
        items["A5 noise"] = _item("verified", noise=build_noise(cfg.noise).to_dict())
        items["A1(a) boundedness"] = (_item("empirically-supported", box=cfg.box, method="hard stop on exit")
                                      if cfg.box is not None else _item("unverifiable"))
        bias = build_bias(cfg.bias)
        items["A1(b) bias"] = _item("verified" if bias.coefficient == 0 or bias.rate > 0 else "violated",
                                    bias=bias.to_dict())
    if cfg.scheduler is not None and cfg.kind != "two-timescale":
        sched = cfg.scheduler
        k = build_field(cfg.field).dim if cfg.field is not None else \
            1 + max(i for subset in sched["family"] for i in subset)
        try:
            family, kernel = build_scheduler(sched, k)
            pi = stationary_distribution(kernel, family, np.zeros(k))
            eta = min_update_proportion(kernel, family, [np.zeros(k)])
            items["A4 scheduling chain"] = _item("verified", stationary=pi.tolist(), eta=eta)
        except (AssumptionViolation, KernelValidityError) as exc:
            items["A4 scheduling chain"] = _item("violated", message=str(exc))
    violated = sorted(k for k, v in items.items() if v["status"] == "violated")
    return {"items": items, "violated": violated}


def oracle(model, policy=None):
    opt = mdp.value_iteration(model, 1e-10)
    pi = np.full((model.n_states, model.n_actions), 1.0 / model.n_actions) if policy is None \
        else np.asarray(policy, dtype=float)
    return {"V_star": opt.V.tolist(), "optimal_actions": opt.optimal_actions,
            "V_pi": mdp.value_function(model, pi).tolist(), "Q_pi": mdp.q_values(model, pi).tolist()}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="asyncsa")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "audit"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, help="override the seed list with one seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("oracle")
    p.add_argument("--config", help="config with a model section")
    p.add_argument("--model", help="model JSON file")
    p.add_argument("--policy", help="JSON file with an S x A policy (default uniform)")
    args = parser.parse_args(argv)

    try:
        if args.command == "oracle":
            if args.model:
                model = mdp.MdpModel.load(args.model)
            elif args.config:
                model = build_model(ExperimentConfig.load(args.config).model)
            else:
                parser.error("oracle needs --model or --config")
            policy = None
            if args.policy:
                with open(args.policy) as fh:
                    policy = json.load(fh)
            print(json.dumps(oracle(model, policy), indent=2))
            return 0
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        if args.out:
            cfg.out_dir = args.out
        if args.command == "audit":
            report = audit(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
            return 1 if report["violated"] else 0
        code, summary = run(cfg, args.threads)
        print(json.dumps({k: summary[k] for k in summary if k != "file_hashes"}, indent=2, sort_keys=True))
        return code
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
