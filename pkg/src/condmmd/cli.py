"""Command-line interface: ``condmmd {estimate,test,experiment,toy}``.

Data come either from two CSV files (``--input-p``/``--input-q``) with a
header ``x1..xd,y1..yp`` or from a named synthetic scenario. Every flag may
also be given in a JSON/YAML file passed with ``--config`` (keys are the flag
names with underscores); flags on the command line win.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
Results go to ``--out`` or standard output; progress goes to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import kernels as kern
from .cmmd import CmmdConfig, discrete_cmmd_sq, estimate
from .datagen import SCENARIOS, ScenarioConfig, toy_tables
from .doubly_robust import PropensityModel
from .embeddings import PairedDataset
from .exceptions import InputError, NumericError
from .testing import ALGORITHMS, TestConfig, run_test

__all__ = ["main", "read_dataset", "write_dataset", "build_parser", "trial_seeds"]

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
FLOAT_FORMAT = ".17g"
_ESTIMATOR_FLAGS = ("naive", "joint_mmd", "dr")


# -- CSV ------------------------------------------------------------------


def read_dataset(path):
    """Read a ``x1..xd,y1..yp`` CSV file into a :class:`PairedDataset`."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    expected = [f"x{k + 1}" for k in range(len(xcols))] + [f"y{k + 1}" for k in range(len(ycols))]
    if not xcols or not ycols or header != expected:
        raise InputError(f"{path}:1: header must be x1..xd,y1..yp, got {','.join(header)}")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
        if not all(np.isfinite(vals)):
            raise InputError(f"{path}:{lineno}: non-finite value")
        values.append(vals)
    if not values:
        raise InputError(f"{path}: no data rows")
    A = np.array(values)
    return PairedDataset(A[:, xcols], A[:, ycols])


def write_dataset(data, path_or_file):
    """Write ``data`` as CSV with 17 significant digits (round-trips exactly)."""
    d, p = data.covariates.shape[1], data.outcomes.shape[1]
    header = [f"x{k + 1}" for k in range(d)] + [f"y{k + 1}" for k in range(p)]
    A = np.hstack([data.covariates, data.outcomes])

    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in A:
            w.writerow([format(v, FLOAT_FORMAT) for v in row])

    if hasattr(path_or_file, "write"):
        dump(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            dump(fh)


def read_propensity_table(path):
    """CSV with header ``x1..xd,e`` mapping covariate values to propensities."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows or not rows[0] or rows[0][-1].strip() != "e":
        raise InputError(f"{path}:1: propensity header must be x1..xd,e")
    table = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
        table[tuple(vals[:-1])] = vals[-1]
    return PropensityModel.tabulated(table)


# -- configuration --------------------------------------------------------


def _lambda(v):
    if v is None or v == "cv":
        return v
    try:
        return float(v)
    except (TypeError, ValueError):
        raise InputError(f"ridge parameter must be a number or 'cv', got {v!r}") from None


def _floats(v):
    """Accept ``1``, ``"0,1,2"`` or ``[0, 1, 2]``."""
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    if isinstance(v, str):
        try:
            return [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise InputError(f"expected a comma separated list of numbers, got {v!r}") from None
    return [float(v)]


def _kernel(value, bandwidth):
    if isinstance(value, str) and value.lstrip().startswith("{"):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise InputError(f"bad kernel JSON {value!r}: {exc}") from None
    spec = kern.kernel_from_config(value)
    if bandwidth is not None and isinstance(spec, kern.Gaussian):
        spec = kern.Gaussian(bandwidth if bandwidth == kern.MEDIAN else float(bandwidth))
    return spec


def _propensity(value):
    if value is None:
        return None
    if isinstance(value, dict):
        return PropensityModel.from_config(value)
    value = str(value)
    if value.startswith("constant:"):
        return PropensityModel.constant(_number(value.split(":", 1)[1], "propensity"))
    if value.startswith("file:"):
        return read_propensity_table(value.split(":", 1)[1])
    return PropensityModel.from_config({"type": "analytic", "name": value})


def _number(v, name):
    try:
        return float(v)
    except (TypeError, ValueError):
        raise InputError(f"{name} must be a number, got {v!r}") from None


def _load_config_file(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = yaml.safe_load(text) if not path.endswith(".json") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InputError(f"config {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


DEFAULTS = {
    "level": "1",
    "estimator": "naive",
    "kernel_x": "gaussian",
    "kernel_y": "gaussian",
    "bandwidth": None,
    "lambda_p": 0.1,
    "lambda_q": 0.1,
    "lambda_dr": "cv",
    "alpha_mix": None,
    "algorithm": None,
    "propensity": None,
    "significance": 0.05,
    "bootstrap": 200,
    "trials": 10,
    "seed": 0,
    "out": None,
    "format": None,
    "n": 100,
    "m": None,
    "theta": "0",
    "dim": "1",
    "null": False,
    "n_jobs": 1,
    "input_p": None,
    "input_q": None,
    "scenario": None,
}


def _merge(args):
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            cfg[key] = v
    return cfg


def _statistic_config(cfg, level):
    est = cfg["estimator"]
    if est not in _ESTIMATOR_FLAGS:
        raise InputError(f"estimator must be one of {_ESTIMATOR_FLAGS}, got {est!r}")
    alpha = cfg["alpha_mix"]
    return CmmdConfig(
        level=level,
        kernel_x=_kernel(cfg["kernel_x"], cfg["bandwidth"]),
        kernel_y=_kernel(cfg["kernel_y"], cfg["bandwidth"]),
        lambda_p=_lambda(cfg["lambda_p"]),
        lambda_q=_lambda(cfg["lambda_q"]),
        lambda_dr=_lambda(cfg["lambda_dr"]),
        alpha=None if alpha is None else _number(alpha, "alpha_mix"),
        estimator=est,
        # choosing the joint-MMD estimator asserts equal covariate marginals
        shared_marginal=est == "joint_mmd",
    )


def _int(v, name):
    f = _number(v, name)
    if f != int(f):
        raise InputError(f"{name} must be an integer, got {v!r}")
    return int(f)


def _scenario(cfg, theta=None, dim=None, seed=0):
    theta_v = _floats(cfg["theta"])[0] if theta is None else theta
    dim_v = _int(_floats(cfg["dim"])[0], "dim") if dim is None else dim
    return ScenarioConfig(
        scenario=cfg["scenario"],
        n=_int(cfg["n"], "n"),
        m=None if cfg["m"] is None else _int(cfg["m"], "m"),
        seed=int(seed),
        theta=theta_v,
        dim=dim_v,
        null=bool(cfg["null"]),
    )


def trial_seeds(master, trial):
    """``(data_seed, test_seed)`` for trial ``trial`` under ``master``."""
    a, b = np.random.SeedSequence([int(master), int(trial)]).generate_state(2)
    return int(a), int(b)


def _data(cfg):
    """Return ``(dataP, dataQ, scenario or None, test seed)``."""
    has_files = cfg["input_p"] is not None or cfg["input_q"] is not None
    has_scenario = cfg["scenario"] is not None
    if has_files == has_scenario:
        raise InputError("give either --input-p/--input-q or --scenario, not both or neither")
    seed = _int(cfg["seed"], "seed")
    if has_files:
        if cfg["input_p"] is None or cfg["input_q"] is None:
            raise InputError("both --input-p and --input-q are required")
        return read_dataset(cfg["input_p"]), read_dataset(cfg["input_q"]), None, seed
    data_seed, test_seed = trial_seeds(seed, 0)
    sc = _scenario(cfg, seed=data_seed)
    P, Q = sc.generate()
    return P, Q, sc, test_seed


def _default_propensity(cfg, scenario):
    prop = _propensity(cfg["propensity"])
    if prop is None and scenario is not None:
        prop = scenario.default_propensity()
    return prop


def _algorithm(cfg, scenario):
    alg = cfg["algorithm"]
    if alg is None:
        alg = "propensity" if scenario is not None and not scenario.shared_marginal else "pooled"
    if alg not in ALGORITHMS:
        raise InputError(f"algorithm must be one of {ALGORITHMS}, got {alg!r}")
    return alg


def _levels(cfg):
    levels = _floats(cfg["level"])
    if not levels:
        raise InputError("at least one level is required")
    return levels


# -- output ---------------------------------------------------------------


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        try:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise InputError(f"cannot write {out}: {exc.strerror or exc}") from None


def _json(doc):
    return json.dumps(doc, indent=2) + "\n"


def _csv(rows, header, comment=None):
    buf = io.StringIO()
    if comment is not None:
        buf.write("# " + json.dumps(comment, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(v, FLOAT_FORMAT) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _source(cfg, scenario):
    if scenario is None:
        return {"input_p": cfg["input_p"], "input_q": cfg["input_q"]}
    return {"scenario": scenario.to_dict()}


def _estimate_doc(est, cfg, scenario, seed, propensity):
    c = est.config
    n, m = est.sample_sizes
    return {
        "cmmd_squared": est.value,
        "level": c.level,
        "estimator": c.estimator,
        "n": n,
        "m": m,
        "kernels": {"x": kern.kernel_to_config(c.kernel_x), "y": kern.kernel_to_config(c.kernel_y)},
        "lambda": {"p": c.lambda_p, "q": c.lambda_q, "dr": c.lambda_dr},
        "alpha": c.alpha,
        "propensity": None if propensity is None else propensity.to_config(),
        "seed": seed,
        "data": _source(cfg, scenario),
    }


# -- commands -------------------------------------------------------------


def cmd_estimate(cfg):
    P, Q, scenario, seed = _data(cfg)
    prop = _default_propensity(cfg, scenario)
    docs = []
    for level in _levels(cfg):
        est = estimate(P, Q, _statistic_config(cfg, level), prop)
        docs.append(_estimate_doc(est, cfg, scenario, _int(cfg["seed"], "seed"), prop))
    if (cfg["format"] or "json") == "csv":
        keys = ["cmmd_squared", "level", "estimator", "n", "m"]
        rows = [[d[k] for k in keys] for d in docs]
        comment = [{k: d[k] for k in d if k not in keys} for d in docs]
        return _csv(rows, keys, comment)
    return _json(docs[0] if len(docs) == 1 else docs)


def _test_config(cfg, level, scenario, seed, propensity):
    return TestConfig(
        statistic=_statistic_config(cfg, level),
        significance=_number(cfg["significance"], "significance"),
        n_bootstrap=_int(cfg["bootstrap"], "bootstrap"),
        seed=seed,
        algorithm=_algorithm(cfg, scenario),
        propensity=propensity,
        n_jobs=_int(cfg["n_jobs"], "n_jobs"),
    )


def cmd_test(cfg):
    P, Q, scenario, seed = _data(cfg)
    prop = _default_propensity(cfg, scenario)
    docs = []
    for level in _levels(cfg):
        tcfg = _test_config(cfg, level, scenario, seed, prop)
        res = run_test(P, Q, tcfg)
        doc = res.to_dict()
        doc.update(
            n=P.n,
            m=Q.n,
            propensity=None if prop is None else prop.to_config(),
            data=_source(cfg, scenario),
        )
        docs.append(doc)
    if (cfg["format"] or "json") == "csv":
        keys = ["statistic", "p_value", "reject", "significance", "algorithm", "B", "seed"]
        rows = [[d[k] for k in keys] for d in docs]
        return _csv(rows, keys, [d["statistic_config"] for d in docs])
    return _json(docs[0] if len(docs) == 1 else docs)


def cmd_experiment(cfg):
    if cfg["scenario"] is None or cfg["input_p"] is not None or cfg["input_q"] is not None:
        raise InputError("experiment needs --scenario and no input files")
    master = _int(cfg["seed"], "seed")
    trials = _int(cfg["trials"], "trials")
    if trials < 1:
        raise InputError("trials must be >= 1")
    thetas = _floats(cfg["theta"])
    dims = [_int(d, "dim") for d in _floats(cfg["dim"])]
    levels = _levels(cfg)
    grid = [(th, d) for th in thetas for d in dims]
    for th, d in grid:
        _scenario(cfg, theta=th, dim=d)  # validate early
    prop_cfg = _propensity(cfg["propensity"])
    n_jobs = _int(cfg["n_jobs"], "n_jobs")

    def one(job):
        gi, trial = job
        th, d = grid[gi]
        data_seed, test_seed = trial_seeds(master, trial)
        sc = _scenario(cfg, theta=th, dim=d, seed=data_seed)
        P, Q = sc.generate()
        prop = prop_cfg if prop_cfg is not None else sc.default_propensity()
        out = []
        for level in levels:
            tcfg = _test_config(dict(cfg, n_jobs=1), level, sc, test_seed, prop)
            out.append(run_test(P, Q, tcfg).reject)
        return job, out

    jobs = [(gi, t) for gi in range(len(grid)) for t in range(trials)]
    rejects = {}
    total = len(jobs)
    if n_jobs == 1:
        results = map(one, jobs)
    else:
        pool = ThreadPoolExecutor(max_workers=n_jobs)
        results = pool.map(one, jobs)
    try:
        for k, (job, out) in enumerate(results, start=1):
            rejects[job] = out
            print(f"[{k}/{total}] grid point {job[0]} trial {job[1]} done", file=sys.stderr)
    finally:
        if n_jobs != 1:
            pool.shutdown()

    header = ["scenario", "theta", "dim", "n", "m", "level", "estimator", "algorithm",
              "trials", "B", "rejection_rate"]
    sc0 = _scenario(cfg, theta=grid[0][0], dim=grid[0][1])
    alg = _algorithm(cfg, sc0)
    rows = []
    for gi, (th, d) in enumerate(grid):
        for li, level in enumerate(levels):
            rate = float(np.mean([rejects[(gi, t)][li] for t in range(trials)]))
            rows.append([
                cfg["scenario"], float(th), d, sc0.n, sc0.m if sc0.m is not None else sc0.n,
                float(level), _statistic_config(cfg, level).estimator, alg, trials,
                _int(cfg["bootstrap"], "bootstrap"), rate,
            ])
    rows.sort(key=lambda r: (r[1], r[2], r[5]))
    resolved = {
        "seed": master,
        "significance": _number(cfg["significance"], "significance"),
        "statistic": _statistic_config(cfg, levels[0]).to_dict(),
        "propensity": None if prop_cfg is None else prop_cfg.to_config(),
        "null": bool(cfg["null"]),
    }
    if (cfg["format"] or "csv") == "json":
        return _json({"config": resolved, "rows": [dict(zip(header, r)) for r in rows]})
    return _csv(rows, header, resolved)


def toy_table():
    """Squared CMMD at levels 0, 1, 2 for each candidate model of the toy example."""
    P, candidates = toy_tables()
    return {
        f"Q{i + 1}": {str(s): discrete_cmmd_sq(P, Q, s) for s in (0, 1, 2)}
        for i, Q in enumerate(candidates)
    }


def _discrete_sample(model, size):
    """Exact-frequency sample of ``size`` points from a discrete model."""
    X, Y = [], []
    for j, mu in enumerate(model.marginal):
        nj = int(round(mu * size))
        for i, c in enumerate(model.cond_table[:, j]):
            k = int(round(c * nj))
            X += [j] * k
            Y += [i] * k
    return PairedDataset(np.array(X, dtype=float), np.array(Y, dtype=float))


def export_toy(directory, size=100):
    """Write the toy models as exact-frequency CSV samples ``P.csv``, ``Q1.csv``..."""
    import os

    P, candidates = toy_tables()
    os.makedirs(directory, exist_ok=True)
    write_dataset(_discrete_sample(P, size), os.path.join(directory, "P.csv"))
    for i, Q in enumerate(candidates):
        write_dataset(_discrete_sample(Q, size), os.path.join(directory, f"Q{i + 1}.csv"))


def cmd_toy(cfg):
    if cfg.get("export"):
        export_toy(cfg["export"])
    table = toy_table()
    if (cfg["format"] or "json") == "csv":
        rows = [[name] + [vals[str(s)] for s in (0, 1, 2)] for name, vals in table.items()]
        return _csv(rows, ["model", "level_0", "level_1", "level_2"])
    return _json({"kernels": {"x": {"type": "delta"}, "y": {"type": "delta"}}, "table": table})


# -- argument parsing -----------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON or YAML file with default values for any flag")
    a("--input-p", help="CSV sample from P (header x1..xd,y1..yp)")
    a("--input-q", help="CSV sample from Q")
    a("--scenario", choices=SCENARIOS, help="synthetic scenario instead of CSV input")
    a("--theta", help="scenario parameter; comma separated list for experiment grids")
    a("--dim", help="dimension for the multidim scenario; list allowed for experiments")
    a("-n", "--n", help="sample size of P for scenarios")
    a("-m", "--m", help="sample size of Q for scenarios (default: n)")
    a("--null", action="store_true", default=None, help="null variant of the scenario")
    a("--level", help="smoothing level s, or a comma separated list")
    a("--estimator", choices=_ESTIMATOR_FLAGS)
    a("--kernel-x", help="kernel name (gaussian, linear, polynomial, delta) or JSON object")
    a("--kernel-y", help="kernel name or JSON object")
    a("--bandwidth", help="Gaussian bandwidth value or 'median'")
    a("--lambda-p", help="ridge parameter for P, or 'cv'")
    a("--lambda-q", help="ridge parameter for Q, or 'cv'")
    a("--lambda-dr", help="ridge parameter of the doubly robust regression, or 'cv'")
    a("--alpha-mix", help="mixture weight of P in the pooled covariance")
    a("--algorithm", choices=ALGORITHMS)
    a("--propensity", help="built-in name, constant:VALUE or file:PATH (CSV x1..xd,e)")
    a("--significance")
    a("--bootstrap", help="number of bootstrap replicates B")
    a("--trials", help="trials per grid point (experiment)")
    a("--seed", help="master seed")
    a("--n-jobs", help="worker threads")
    a("--out", help="output file (default: standard output)")
    a("--format", choices=("json", "csv"))

    parser = argparse.ArgumentParser(prog="condmmd", description="Conditional MMD estimation and testing.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[common], help="estimate squared CMMD")
    sub.add_parser("test", parents=[common], help="bootstrap two-sample conditional test")
    sub.add_parser("experiment", parents=[common], help="rejection rates over a scenario grid")
    toy = sub.add_parser("toy", help="discrete three-state example table")
    toy.add_argument("--format", choices=("json", "csv"))
    toy.add_argument("--out")
    toy.add_argument("--export", help="also write exact-frequency CSV samples to this directory")
    return parser


_COMMANDS = {"estimate": cmd_estimate, "test": cmd_test, "experiment": cmd_experiment}


_NEGATIVE = re.compile(r"^-\.?\d")


def _attach_negative_values(argv):
    """Turn ``--theta -1,0,1`` into ``--theta=-1,0,1`` so argparse keeps the value."""
    out = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NEGATIVE.match(tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    argv = _attach_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if args.command == "toy":
            cfg = {"format": args.format, "export": args.export}
            text = cmd_toy(cfg)
            _emit(text, args.out)
            return EXIT_OK
        cfg = _merge(args)
        text = _COMMANDS[args.command](cfg)
        _emit(text, cfg["out"])
        return EXIT_OK
    except InputError as exc:
        print(f"condmmd: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"condmmd: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
