"""Command-line entry point: configuration, run manifests and artifacts.

Every subcommand reads one JSON config, writes its CSV/JSON artifacts and a
``manifest.json`` into ``--out`` and exits with 0 (checks passed), 2 (a check
failed) or 1 (error).  A manifest can be passed back as ``--config`` to replay
the run; outputs are bitwise identical.
"""
import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import jsonschema
import numpy as np

from . import verify
from .errors import ConfigError
from .limit_sde import simulate_P
from .master_eq import policy_from_surface, solve_master
from .model import PRESETS, preset_scenario
from .nash import equilibrium_policy, solve_nash, value_gap
from .nplayer import simulate
from .policy import ConstantPolicy, ZeroPolicy

ARTIFACT_VERSION = 1
SUBCOMMANDS = ("solve-master", "simulate-sde", "simulate-n", "solve-nash", "value-gap",
               "verify-moments", "verify-bounds", "verify-remainder", "study-convergence",
               "best-response")

_num = {"type": "number"}
_int = {"type": "integer"}
_nums = {"type": "array", "items": _num}
_ints = {"type": "array", "items": _int}
_policy = {"enum": ["zero", "constant", "master", "nash"]}

SCHEMA = {
    "type": "object",
    "required": ["d", "T", "epsilon", "kappa", "delta", "scenario"],
    "properties": {
        "d": _int, "T": _num, "epsilon": _num, "kappa": _num, "delta": _num,
        "scenario": {"enum": list(PRESETS)},
        "params": {"type": "object", "additionalProperties": _num},
        "noise_convention": {"enum": ["eps2", "eps"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "verification": {"type": "object", "additionalProperties": False, "properties": {
            "eps_exp": _num, "ell": _int, "lam": _num, "M": _int,
            "N_list": _ints, "probe_times": _nums}},
        "master": {"type": "object", "additionalProperties": False, "properties": {
            "dx": _num, "dt": _num, "save_every": _int, "csv_every": _int}},
        "sde": {"type": "object", "additionalProperties": False, "properties": {
            "p0": _nums, "dt": _num, "n_paths": _int, "control": {"enum": ["none", "master"]},
            "csv_every": _int}},
        "nplayer": {"type": "object", "additionalProperties": False, "properties": {
            "N": _int, "x0": _ints, "y0": _nums, "paths": _int, "policy": _policy,
            "rate": _num, "refresh": _num, "iota": {"enum": [0, 1]}, "tagged": _int}},
        "nash": {"type": "object", "additionalProperties": False, "properties": {
            "N": _int, "dy": _num, "dt": _num, "scheme": {"enum": ["euler", "ssprk3"]}}},
        "moments": {"type": "object", "additionalProperties": False, "properties": {
            "N": _int, "mu": _nums, "ell": _int, "i": _int, "j": _int, "powers": _ints,
            "N_list": _ints, "eta": _num}},
        "bounds": {"type": "object", "additionalProperties": False, "properties": {
            "N": _int, "x0": _ints, "policy": _policy, "M": _int, "refresh": _num,
            "tau_mode": {"enum": ["localised", "support", "none"]}, "kappas": _nums}},
        "convergence": {"type": "object", "additionalProperties": False, "properties": {
            "N_list": _ints, "M": _int, "M_sde": _int, "p0": _nums, "probe_times": _nums,
            "sde_dt": _num}},
        "best_response": {"type": "object", "additionalProperties": False, "properties": {
            "N": _int, "l": _int, "x0": _ints, "y0": _nums, "count": _int, "size": _num,
            "M": _int}},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "master": {"dx": 0.01, "csv_every": 50},
    "sde": {"dt": 1e-3, "n_paths": 100, "control": "master", "csv_every": 10},
    "nplayer": {"N": 8, "paths": 10, "policy": "master", "rate": 1.0, "refresh": 0.02, "iota": 0},
    "nash": {"N": 2, "dy": 0.5, "scheme": "ssprk3"},
    "moments": {"N": 2, "ell": 1, "i": 0, "powers": [2, 4], "eta": 0.5},
    "bounds": {"N": 16, "policy": "zero", "M": 200, "refresh": 0.05, "tau_mode": "support"},
    "convergence": {"N_list": [8, 32, 128], "M": 2000, "probe_times": None, "sde_dt": 1e-3},
    "best_response": {"N": 2, "l": 0, "count": 5, "size": 0.5, "M": 1000},
}


@dataclass
class RunPlan:
    spec: object
    verification: verify.VerificationConfig
    sections: dict
    seed: int
    config: dict
    digest: str = ""


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_config(source):
    """JSON config from a path or a dict; a manifest is unwrapped to its config."""
    if isinstance(source, dict):
        raw = source
    else:
        if not os.path.exists(source):
            raise ConfigError(f"config file {source!r} does not exist")
        with open(source) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON: {e}") from None
    if isinstance(raw, dict) and "artifact_version" in raw and "config" in raw:
        raw = raw["config"]
    return raw


def parse_config(source, seed=None, noise_convention=None):
    """Validate a config and build a :class:`RunPlan`.

    Schema errors report the JSON path of the offending field; model invariants
    are checked here so that nothing invalid reaches a solver.
    """
    raw = json.loads(_canonical(load_config(source)))
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = jsonschema.exceptions.best_match(errors)
        raise ConfigError(e.message, e.absolute_path)
    if seed is not None:
        raw["seed"] = int(seed)
    if noise_convention is not None:
        raw["noise_convention"] = noise_convention
    raw.setdefault("seed", 0)
    raw.setdefault("noise_convention", "eps2")

    d, eps, delta = raw["d"], raw["epsilon"], raw["delta"]
    if not 0 < eps < 1:
        raise ConfigError(f"epsilon={eps} violates 0 < epsilon < 1", ["epsilon"])
    if d < 2:
        raise ConfigError(f"d={d} violates d >= 2", ["d"])
    if not 0 < delta < 1 / (4 * math.sqrt(d)):
        raise ConfigError(f"delta={delta} violates 0 < delta < 1/(4 sqrt(d)) = {1 / (4 * math.sqrt(d)):.6g}",
                          ["delta"])
    if raw["kappa"] < 0:
        raise ConfigError(f"kappa={raw['kappa']} violates kappa >= 0", ["kappa"])
    if raw["T"] <= 0:
        raise ConfigError(f"T={raw['T']} violates T > 0", ["T"])
    ver = raw.get("verification", {})
    if "eps_exp" in ver and not 0 < ver["eps_exp"] < 0.25:
        raise ConfigError(f"eps_exp={ver['eps_exp']} violates 0 < eps_exp < 1/4", ["verification", "eps_exp"])

    params = dict(raw.get("params", {}))
    if raw["scenario"] in ("constant-cost", "zero-cost"):
        params["d"] = d
    try:
        spec = preset_scenario(raw["scenario"], T=raw["T"], epsilon=eps, kappa=raw["kappa"], delta=delta,
                               noise_convention=raw["noise_convention"], **params)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), ["scenario"]) from None
    if spec.d != d:
        raise ConfigError(f"scenario {raw['scenario']!r} has d={spec.d}, config says d={d}", ["d"])
    try:
        vcfg = verify.VerificationConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in ver.items()})
    except ValueError as e:
        raise ConfigError(str(e), ["verification"]) from None

    sections = {name: {**DEFAULTS[name], **raw.get(name, {})} for name in DEFAULTS}
    return RunPlan(spec=spec, verification=vcfg, sections=sections, seed=int(raw["seed"]),
                   config=raw, digest=hashlib.sha256(_canonical(raw).encode()).hexdigest())


# ------------------------------------------------------------------ pipelines


class _Run:
    def __init__(self, plan, out, threads=1):
        self.plan = plan
        self.spec = plan.spec
        self.out = out
        self.threads = threads
        self.outputs = []
        self._surface = None

    def path(self, name):
        p = os.path.join(self.out, name)
        self.outputs.append(name)
        return p

    def surface(self):
        if self._surface is None:
            m = self.plan.sections["master"]
            self._surface = solve_master(self.spec, m["dx"], dt=m.get("dt"), save_every=m.get("save_every"))
        return self._surface

    def policy(self, name, N, rate=1.0):
        if name == "zero":
            return ZeroPolicy(self.spec.d)
        if name == "constant":
            return ConstantPolicy(self.spec.d, rate)
        if name == "master":
            return policy_from_surface(self.surface())
        nash = self.plan.sections["nash"]
        return equilibrium_policy(solve_nash(self.spec, N, dt=nash.get("dt"), dy=nash["dy"],
                                             scheme=nash["scheme"]))

    def record(self, v, stem):
        if v.get("_samples"):
            self.outputs.append(stem + ".csv")
        self.outputs.append(stem + ".json")
        verify.write_verdict(v, os.path.join(self.out, stem))
        return bool(v["pass"])


def _x0(sec, N, d):
    if sec.get("x0") is not None:
        x0 = np.asarray(sec["x0"], dtype=int)
        if x0.shape != (N,):
            raise ConfigError(f"x0 must list N={N} states", ["x0"])
        return x0
    return verify.initial_states(N, np.full(d, 1.0 / d))


def cmd_solve_master(run):
    U = run.surface()
    U.save(run.path("surface.npz"))
    U.to_csv(run.path("surface.csv"), every=run.plan.sections["master"]["csv_every"])
    return True


def cmd_simulate_sde(run):
    sec = run.plan.sections["sde"]
    d = run.spec.d
    p0 = np.asarray(sec.get("p0") or np.full(d, 1.0 / d))
    U = run.surface() if sec["control"] == "master" else None
    path = simulate_P(run.spec, U, p0, sec["dt"], run.plan.seed, n_paths=sec["n_paths"])
    run.outputs += ["sde.csv", "sde.json"]
    path.write(os.path.join(run.out, "sde"), run.spec, every=sec["csv_every"])
    return True


def cmd_simulate_n(run):
    sec = run.plan.sections["nplayer"]
    N, d = sec["N"], run.spec.d
    x0 = _x0(sec, N, d)
    pol = run.policy(sec["policy"], N, sec["rate"])
    costs = []
    for m in range(sec["paths"]):
        tr = simulate(run.spec, N, pol, x0, sec.get("y0"), iota=sec["iota"], tagged=sec.get("tagged"),
                      seed=run.plan.seed, path=m, refresh=sec["refresh"])
        stem = f"trajectory_{m:04d}"
        tr.write(os.path.join(run.out, stem), run.spec)
        run.outputs += [stem + ".csv", stem + ".json"]
        costs.append(tr.cost)
    with open(run.path("costs.csv"), "w") as fh:
        fh.write("path," + ",".join(f"J{l}" for l in range(N)) + "\n")
        for m, c in enumerate(costs):
            fh.write(f"{m}," + ",".join(repr(float(v)) for v in c) + "\n")
    return True


def cmd_solve_nash(run):
    sec = run.plan.sections["nash"]
    sol = solve_nash(run.spec, sec["N"], dt=sec.get("dt"), dy=sec["dy"], scheme=sec["scheme"])
    sol.save(run.path("nash.npz"))
    sol.to_csv(run.path("nash.csv"))
    return True


def cmd_value_gap(run):
    sec = run.plan.sections["nash"]
    ver = run.plan.verification
    U = run.surface()
    rows = []
    for N in ver.N_list:
        sol = solve_nash(run.spec, N, dt=sec.get("dt"), dy=sec["dy"], scheme=sec["scheme"])
        g = value_gap(sol, U, eps_exp=ver.eps_exp, ell=ver.ell)
        for region in ("all", "unit", "relaxed", "strict"):
            rows.append({"N": N, "region": region, "raw_sup": g[region]["raw_sup"],
                         "weighted_sup": g[region]["weighted_sup"], "nodes": g[region]["nodes"]})
    ok = True
    for region, key in (("unit", "raw_sup"), ("unit", "weighted_sup"), ("relaxed", "raw_sup"),
                        ("relaxed", "weighted_sup"), ("all", "weighted_sup")):
        vals = [r[key] for r in rows if r["region"] == region]
        if all(v is not None for v in vals):
            ok &= all(b <= a * 1.1 for a, b in zip(vals, vals[1:]))
    v = verify.verdict("value_gap", {"N_list": list(ver.N_list), "dx": U.dx, "dy": sec["dy"]},
                       {"rows": rows}, {"trend": "non-increasing", "slack": 0.10,
                                        "checked": ["unit", "relaxed", "all(weighted)"]}, ok, rows)
    return run.record(v, "value_gap")


def cmd_verify_moments(run):
    sec = run.plan.sections["moments"]
    d = run.spec.d
    mu = sec.get("mu") or [1.0 / d] * d
    j = sec.get("j", 1 if sec["i"] != 1 else 0)
    o = verify.multinomial_moment_oracle(sec["N"], mu, sec["ell"], sec["i"], j, powers=tuple(sec["powers"]))
    tol = 1e-12
    checks = {}
    if sec["ell"] == 1:
        checks["centered_zero"] = abs(o["centered"]) <= tol
        checks["cross_exact"] = abs(o["cross"] + 1.0 / sec["N"]) <= tol
    if sec["ell"] == 2:
        checks["ell2_bound"] = abs(o["centered"]) <= o["bound_ell2"] + tol
    checks["cross_bound"] = abs(o["cross"]) <= o["cross_bound_stated"] + tol
    ok = all(checks.values())
    v = verify.verdict("multinomial_moments", {"N": sec["N"], "mu": list(mu), "ell": sec["ell"],
                                               "i": sec["i"], "j": j},
                       {**o, "checks": checks}, {"abs_tol": tol}, ok)
    ok &= run.record(v, "moments")
    if sec.get("N_list"):
        h = verify.hoeffding_tail_check(sec["N_list"], mu, sec["ell"], sec["eta"], sec["i"])
        ok &= run.record(h, "hoeffding")
    return ok


def cmd_verify_bounds(run):
    sec = run.plan.sections["bounds"]
    ver = run.plan.verification
    N, d = sec["N"], run.spec.d
    x0 = _x0(sec, N, d)
    pol = run.policy(sec["policy"], N)
    seed = run.plan.seed
    w = verify.weight_moment_check(run.spec, N, pol, x0, ell=ver.ell, eps_exp=ver.eps_exp, M=sec["M"],
                                   seed=seed, tau_mode=sec["tau_mode"], refresh=sec["refresh"])
    e = verify.exp_bound_check(run.spec, N, pol, x0, lam=ver.lam, eps_exp=ver.eps_exp, M=sec["M"],
                               seed=seed, tau_mode=sec["tau_mode"], refresh=sec["refresh"])
    ok = run.record(w, "weight_moments")
    ok &= run.record(e, "exp_bound")
    if sec.get("kappas"):
        k = verify.paired_exp_comparison(run.spec, N, pol, x0, tuple(sec["kappas"]), lam=ver.lam,
                                         M=sec["M"], seed=seed, tau_mode=sec["tau_mode"],
                                         eps_exp=ver.eps_exp)
        ok &= run.record(k, "exp_bound_kappa")
    return ok


def cmd_verify_remainder(run):
    ver = run.plan.verification
    U = run.surface()
    v = verify.nash_remainder_check(U, run.spec, ver.N_list, times=ver.probe_times)
    return run.record(v, "remainder")


def cmd_study_convergence(run):
    sec = run.plan.sections["convergence"]
    d = run.spec.d
    p0 = sec.get("p0") or list(np.full(d, 1.0 / d))
    v = verify.weak_convergence_study(run.spec, run.surface(), sec["N_list"], sec["M"],
                                      probe_times=sec.get("probe_times"), p0=p0, seed=run.plan.seed,
                                      M_sde=sec.get("M_sde"), sde_dt=sec["sde_dt"],
                                      nash_dy=run.plan.sections["nash"]["dy"], workers=run.threads)
    ok = run.record(v, "convergence_samples")
    with open(run.path("convergence.csv"), "w") as fh:
        fh.write("N,t,policy,ks_max,mean_N,se_N,mean_P,se_P\n")
        for r in v["statistics"]["rows"]:
            fh.write(f"{r['N']},{r['t']!r},{r['policy']},{r['ks_max']!r},{r['mean_N']!r},"
                     f"{r['se_N']!r},{r['mean_P']!r},{r['se_P']!r}\n")
    return ok


def cmd_best_response(run):
    sec = run.plan.sections["best_response"]
    N, d = sec["N"], run.spec.d
    x0 = _x0(sec, N, d)
    pol = run.policy("nash", N)
    pert = verify.random_perturbations(pol, N, d, sec["l"], sec["count"], sec["size"], run.plan.seed + 1)
    v = verify.best_response_check(pol, run.spec, N, sec["l"], pert, x0, sec.get("y0"), M=sec["M"],
                                   seed=run.plan.seed)
    return run.record(v, "best_response")


COMMANDS = {
    "solve-master": cmd_solve_master, "simulate-sde": cmd_simulate_sde, "simulate-n": cmd_simulate_n,
    "solve-nash": cmd_solve_nash, "value-gap": cmd_value_gap, "verify-moments": cmd_verify_moments,
    "verify-bounds": cmd_verify_bounds, "verify-remainder": cmd_verify_remainder,
    "study-convergence": cmd_study_convergence, "best-response": cmd_best_response,
}


def run(subcommand, plan, out, threads=1):
    """Execute a pipeline; returns ``(passed, manifest)``."""
    if subcommand not in COMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    os.makedirs(out, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    r = _Run(plan, out, threads)
    passed = COMMANDS[subcommand](r)
    manifest = {
        "artifact_version": ARTIFACT_VERSION, "subcommand": subcommand,
        "config_digest": plan.digest, "seed": plan.seed, "config": plan.config,
        "parameters": {"spec": plan.spec.to_dict(), "sigma2": plan.spec.sigma2,
                       "verification": {k: getattr(plan.verification, k)
                                        for k in plan.verification.__dataclass_fields__},
                       "sections": plan.sections},
        "outputs": sorted(set(r.outputs)), "passed": bool(passed),
        "timestamps": {"started": started, "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=verify._jsonable)
    return passed, manifest


def build_parser():
    ap = argparse.ArgumentParser(prog="wfmfg", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON config or a previous manifest.json")
    ap.add_argument("--seed", type=int, default=None, help="64-bit root seed (overrides the config)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for independent ensembles")
    ap.add_argument("--noise-convention", choices=("eps2", "eps"), default=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", ["seed"])
        plan = parse_config(args.config, seed=args.seed, noise_convention=args.noise_convention)
        passed, _ = run(args.subcommand, plan, args.out, threads=max(1, args.threads))
    except Exception as e:  # surfaced with context, exit code 1
        print(f"wfmfg {args.subcommand}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"wfmfg {args.subcommand}: {'pass' if passed else 'FAIL'} -> {args.out}")
    return 0 if passed else 2
