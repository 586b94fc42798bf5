"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 configuration or usage error,
3 data error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import dataset, forest, metrics, neural, oracle
from .dataset import DataError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("lacforest")


class ConfigError(ValueError):
    pass


def load_schema():
    return json.loads(resources.files("lacforest").joinpath("run_config.schema.json").read_text())


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _setup_out(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return out


def _write_manifest(out, command, cfg, seed, artifacts):
    doc = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "artifacts": {k: str(v) for k, v in sorted(artifacts.items())},
    }
    (Path(out) / "run_manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _close_log():
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()


# -- synth ----------------------------------------------------------------------------


def cmd_synth(args):
    doc = _read_json(args.spec)
    try:
        spec = dataset.synthetic_spec_from_dict(doc)
        split = doc.get("split", {})
        if args.seed is not None:
            spec = dataset.SyntheticSpec(spec.d, spec.clusters, args.seed)
        cfg = dataset.ShiftSplitConfig(
            theta=float(split.get("theta", 0.5)),
            n_l=int(split.get("n_l", 500)),
            n_u=int(split.get("n_u", 1000)),
            n_test=int(split.get("n_test", 100)),
            seed=spec.seed,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from None
    if not 0.0 < cfg.theta < 1.0:
        raise ConfigError("split.theta must lie in (0, 1)")
    out = _setup_out(args.out)
    full = dataset.generate_synthetic(spec)
    aug = [full.kappa + 1] if np.any(full.y == full.kappa + 1) else None
    sp = dataset.make_shift_split(full, cfg, augmented_classes=aug)
    arts = _write_split(out, sp)
    _write_manifest(out, "synth", doc, spec.seed, arts)
    log.info("synthetic data written to %s", out)
    return EXIT_OK


def _write_split(out, sp):
    arts = {"train": out / "train.csv", "unlabeled": out / "unlabeled.csv", "test": out / "test.csv"}
    k = sp.S_l.kappa
    dataset.write_csv(arts["train"], sp.S_l.X, dataset.label_names(sp.S_l.y, sp.S_l.label_map, k), sp.S_l.feature_names)
    dataset.write_csv(arts["unlabeled"], sp.S_u.X, None, sp.S_u.feature_names)
    dataset.write_csv(arts["test"], sp.S_test.X, dataset.label_names(sp.S_test.y, sp.S_test.label_map, k), sp.S_test.feature_names)
    meta = {
        "augmented_source_classes": [int(a) for a in sp.augmented_classes],
        "label_map": sp.S_l.label_map,
        "realized_theta_unlabeled": sp.realized_theta_u,
        "realized_theta_test": sp.realized_theta_test,
    }
    arts["split_meta"] = out / "split.json"
    arts["split_meta"].write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return arts


# -- split -----------------------------------------------------------------------------


def cmd_split(args):
    if not 0.0 < args.theta < 1.0:
        raise ConfigError("--theta must lie in (0, 1)")
    if not 0.0 < args.fraction < 1.0:
        raise ConfigError("--fraction must lie in (0, 1)")
    full = dataset.load_csv(args.source, args.label_column)
    cfg = dataset.ShiftSplitConfig(args.fraction, args.theta, args.n_l, args.n_u, args.n_test, args.seed)
    out = _setup_out(args.out)
    sp = dataset.make_shift_split(full, cfg)
    arts = _write_split(out, sp)
    _write_manifest(out, "split", vars_clean(args), args.seed, arts)
    return EXIT_OK


def vars_clean(args):
    return {k: v for k, v in vars(args).items() if k != "func" and not callable(v)}


# -- train -----------------------------------------------------------------------------


def _merged_config(args):
    cfg = _read_json(args.config) if args.config else {}
    cfg = copy.deepcopy(cfg)
    for key in ("mode", "theta", "seed", "m", "threads", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    validate_config(cfg)
    return cfg


def _train_data(cfg):
    data = cfg.get("data", {})
    if "train" not in data or "unlabeled" not in data:
        raise ConfigError("config.data needs 'train' and 'unlabeled' paths")
    S_l = dataset.load_csv(data["train"], data.get("label_column", "label"))
    S_u = dataset.load_csv(data["unlabeled"])
    if S_u.d != S_l.d:
        raise DataError("train and unlabeled files have different feature counts")
    (Xl, Xu), _, ranges = dataset.normalize_unit_interval([S_l.X, S_u.X])
    manifest = dataset.make_manifest(S_l.feature_names, S_l.label_map, ranges)
    S_l = dataset.LabeledSet(Xl, S_l.y, S_l.kappa, S_l.label_map, S_l.feature_names)
    S_u = dataset.UnlabeledSet(Xu, S_u.feature_names)
    return S_l, S_u, manifest


def _neural_settings(cfg, seed):
    nc = cfg.get("neural", {})
    tc = neural.TrainConfig(
        epochs=nc.get("epochs", 500),
        batch_l=nc.get("batch_l", 512),
        batch_u=nc.get("batch_u", 512),
        lambda_ce=nc.get("lambda_ce", 1.0),
        lr_init=nc.get("lr_init", 1e-2),
        lr_final=nc.get("lr_final", 1e-3),
        weight_decay=nc.get("weight_decay", 5e-3),
        seed=seed,
    )
    enc = neural.EncoderConfig(nc.get("encoder_dim"), nc.get("activation", "identity"), nc.get("hidden_dim"))
    return tc, enc, nc.get("m", 3), nc.get("depth", 6)


def _fit(cfg, S_l, S_u, theta, seed, manifest=None, threads=1):
    """Train the configured model; returns (model, epoch log or None)."""
    if cfg.get("mode", "forest") == "neural":
        tc, enc, m, depth = _neural_settings(cfg, seed)
        return neural.train_neural(S_l, S_u, theta, tc, m=m, depth=depth, encoder=enc, manifest=manifest)
    model = forest.train_lacforest(
        S_l, S_u, theta, m=cfg.get("m", 100), tau=cfg.get("tau"), gamma=cfg.get("gamma", 0.01),
        seed=seed, threads=threads, manifest=manifest,
    )
    return model, None


def cmd_train(args):
    cfg = _merged_config(args)
    seed = cfg.get("seed", 0)
    S_l, S_u, manifest = _train_data(cfg)
    out = _setup_out(cfg.get("out", "run"))
    log.info("training %s model: n_l=%d n_u=%d d=%d", cfg.get("mode", "forest"), len(S_l), len(S_u), S_l.d)
    model, epochs = _fit(cfg, S_l, S_u, cfg["theta"], seed, manifest, cfg.get("threads", 1))
    arts = {"model": out / "model.json"}
    arts["model"].write_text(model.to_json() + "\n")
    if epochs is not None:
        arts["train_log"] = out / "train_log.csv"
        neural.write_epoch_log(arts["train_log"], epochs)
    _write_manifest(out, "train", cfg, seed, arts)
    log.info("model written to %s", arts["model"])
    return EXIT_OK


# -- eval ------------------------------------------------------------------------------


def load_model(path):
    doc = _read_json(path)
    fmt = doc.get("format")
    if fmt == "lacforest":
        return forest.LACForestModel.from_dict(doc)
    if fmt == "neural-lacforest":
        return neural.NeuralForestModel.from_dict(doc)
    raise ConfigError(f"{path}: unknown model format {fmt!r}")


def evaluate_model(model, X, y):
    preds = model.predict(X)
    scores = model.augmented_score(X)
    return preds, scores, metrics.evaluate(preds, y, scores, model.kappa)


def cmd_eval(args):
    model = load_model(args.model)
    man = model.manifest or {}
    test = dataset.load_csv(args.test, args.label_column, label_map=man.get("label_map") or None)
    if test.d != model.d:
        raise DataError(f"test data has {test.d} features, model expects {model.d}")
    X = dataset.apply_ranges(test.X, man["normalization"]) if man.get("normalization") else test.X
    out = _setup_out(args.out)
    preds, scores, report = evaluate_model(model, X, test.y)
    arts = {"report": out / "report.json", "predictions": out / "predictions.csv"}
    arts["report"].write_text(report.to_json() + "\n")
    with arts["predictions"].open("w", encoding="utf-8") as fh:
        fh.write("index,prediction,augmented_score\n")
        for i, (p, s) in enumerate(zip(preds, scores)):
            fh.write(f"{i},{int(p)},{float(s)!r}\n")
    _write_manifest(out, "eval", vars_clean(args), None, arts)
    print(json.dumps({k: getattr(report, k) for k in ("accuracy", "macro_f1", "detection_auc")}))
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------------


def _sweep_source(cfg):
    data = cfg.get("data", {})
    if "synthetic" in data:
        full = dataset.generate_synthetic(dataset.synthetic_spec_from_dict(data["synthetic"]))
        aug = [full.kappa + 1] if np.any(full.y == full.kappa + 1) else None
        return full, aug
    if "source" in data:
        return dataset.load_csv(data["source"], data.get("label_column", "label")), None
    raise ConfigError("sweep needs config.data.synthetic or config.data.source")


def cmd_sweep(args):
    cfg = _merged_config(args)
    sw = cfg.get("sweep")
    if not sw:
        raise ConfigError("config has no 'sweep' block")
    axis = sw["axis"]
    if axis in ("lambda_ce", "depth") and cfg.get("mode", "forest") != "neural":
        raise ConfigError(f"axis {axis!r} requires mode 'neural'")
    seeds = sw.get("seeds", [cfg.get("seed", 0)])
    full, aug = _sweep_source(cfg)
    split = cfg.get("split", {})
    out = _setup_out(cfg.get("out", "sweep"))
    rows = []
    for value in sw["grid"]:
        for seed in seeds:
            run = copy.deepcopy(cfg)
            theta = cfg["theta"]
            n_u = split.get("n_u", 1000)
            if axis == "theta":
                theta = float(value)
                if not 0.0 < theta < 1.0:
                    raise ConfigError("theta grid values must lie in (0, 1)")
            elif axis == "n_u":
                n_u = int(value)
            elif axis == "lambda_ce":
                run.setdefault("neural", {})["lambda_ce"] = float(value)
            else:
                run.setdefault("neural", {})["depth"] = int(value)
            sc = dataset.ShiftSplitConfig(
                split.get("augmented_class_fraction", 0.5), theta, split.get("n_l", 500), n_u,
                split.get("n_test", 100), seed,
            )
            sp = dataset.make_shift_split(full, sc, augmented_classes=aug)
            model, _ = _fit(run, sp.S_l, sp.S_u, theta, seed, threads=cfg.get("threads", 1))
            _, _, rep = evaluate_model(model, sp.S_test.X, sp.S_test.y)
            rows.append((axis, value, seed, rep.accuracy, rep.macro_f1, rep.detection_auc))
            log.info("%s=%s seed=%d acc=%.4f", axis, value, seed, rep.accuracy)
    path = out / "sweep.csv"
    with path.open("w", encoding="utf-8") as fh:
        fh.write("axis,value,seed,accuracy,macro_f1,detection_auc\n")
        for a, v, s, acc, f1, auc in rows:
            fh.write(f"{a},{v!r},{s},{acc!r},{f1!r},{'' if auc is None else repr(auc)}\n")
    _write_manifest(out, "sweep", cfg, cfg.get("seed", 0), {"sweep": path})
    return EXIT_OK


# -- check -----------------------------------------------------------------------------


def check_gradients(n_configs=20, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        params, (X_l, y_l, X_u, kappa, theta, lam, act) = oracle.random_tiny_problem(rng)
        _, grads = neural.gradients(params, X_l, y_l, X_u, kappa, theta, lam, act)
        errs = oracle.gradient_check(params, grads, X_l, y_l, X_u, kappa, theta, lam, act)
        worst = max(worst, max(errs.values()))
    return {"name": "gradients", "passed": bool(worst < tol), "max_relative_error": float(worst), "tolerance": tol, "configs": n_configs}


def check_simplex(n=500, seed=0, tol=1e-3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = rng.dirichlet(np.ones(int(rng.integers(2, 6))))
        worst = max(worst, abs(oracle.optimal_squared_loss_bruteforce(p) - oracle.closed_form_loss(p)))
    return {"name": "simplex-lemma", "passed": bool(worst < tol), "max_abs_error": float(worst), "tolerance": tol, "distributions": n}


def random_node(rng, max_rows=200, max_features=5):
    """Random node with coarse feature values (many ties) and global counts."""
    d = int(rng.integers(1, max_features + 1))
    n_rows = int(rng.integers(2, max_rows + 1))
    n_l = int(rng.integers(0, n_rows))
    n_u = n_rows - n_l
    kappa = int(rng.integers(1, 4))
    levels = int(rng.integers(2, 25))
    X_l = rng.integers(0, levels, (n_l, d)) / levels
    X_u = rng.integers(0, levels, (n_u, d)) / levels
    y_l = rng.integers(1, kappa + 1, n_l)
    feats = rng.choice(d, int(rng.integers(1, d + 1)), replace=False)
    g_l = n_l + int(rng.integers(0, 300))
    g_u = n_u + int(rng.integers(0, 300))
    gamma = float(rng.uniform(0.001, 0.15))
    theta = float(rng.uniform(0.05, 0.95))
    return X_l, y_l, X_u, feats, gamma, g_l, g_u, theta, kappa


def check_splits(n=1000, seed=0):
    from .impurity import best_split

    rng = np.random.default_rng(seed)
    mismatches = feasible = 0
    for _ in range(n):
        args = random_node(rng)
        a = best_split(*args)
        b = oracle.exhaustive_best_split(*args)
        mismatches += int(a != b)
        feasible += a is not None
    return {"name": "oracle-splits", "passed": mismatches == 0, "mismatches": mismatches, "nodes": n, "feasible_nodes": feasible}


GRID = (100, 400, 1600, 6400)


def check_convergence(trials=200, seed=0):
    results = []
    for name, run in (
        ("hard", lambda: oracle.vartheta_convergence_experiment(oracle.lemma_population(), GRID + (10000,), trials, seed)),
        ("soft", lambda: oracle.soft_vartheta_convergence_experiment(oracle.SoftTreePopulation(), GRID + (10000,), trials, seed)),
    ):
        curve = run()
        ratios = curve.ratios(GRID)
        med = curve.at(10000)[1]
        ok = bool(med < 0.05 and all(1.4 <= r <= 3.0 for r in ratios))
        results.append({"curve": name, "median_at_1e4": med, "ratios": ratios, "passed": ok, "rows": curve.rows})
    return {"name": "convergence", "passed": all(r["passed"] for r in results), "curves": results}


CHECKS = {
    "gradients": check_gradients,
    "convergence": check_convergence,
    "oracle-splits": check_splits,
    "simplex-lemma": check_simplex,
}


def cmd_check(args):
    names = list(CHECKS) if args.which == "all" else [args.which]
    report = []
    for name in names:
        kwargs = {}
        if args.quick:
            kwargs = {
                "gradients": {"n_configs": 3},
                "convergence": {},
                "oracle-splits": {"n": 100},
                "simplex-lemma": {"n": 20},
            }[name]
        res = CHECKS[name](**kwargs)
        report.append(res)
        shown = {k: v for k, v in res.items() if k not in ("name", "passed", "curves")}
        print(f"{'PASS' if res['passed'] else 'FAIL'} {name}" + (f": {json.dumps(shown)}" if shown else ""))
        if name == "convergence":
            for c in res["curves"]:
                print(f"    {c['curve']}: median@1e4={c['median_at_1e4']:.4g} ratios={[round(r, 3) for r in c['ratios']]}")
    if args.out:
        out = _setup_out(args.out)
        (out / "check_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        for res in report:
            if res["name"] == "convergence":
                for c in res["curves"]:
                    oracle.ConvergenceCurve(c["rows"]).write_csv(out / f"convergence_{c['curve']}.csv")
    return EXIT_OK if all(r["passed"] for r in report) else EXIT_CHECK


# -- parser ----------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="lacforest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic class-shift dataset")
    s.add_argument("spec", help="JSON synthetic spec")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="class-shift split of a labeled CSV")
    s.add_argument("source")
    s.add_argument("--label-column", default="label")
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--fraction", type=float, default=0.5, help="fraction of source classes made augmented")
    s.add_argument("--n-l", type=int, default=500)
    s.add_argument("--n-u", type=int, default=1000)
    s.add_argument("--n-test", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    for name, fn, helptext in (("train", cmd_train, "train a model"), ("sweep", cmd_sweep, "parameter sweep")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=name == "sweep")
        s.add_argument("--mode", choices=["forest", "neural"])
        s.add_argument("--theta", type=float)
        s.add_argument("--m", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out")
        s.set_defaults(func=fn)

    s = sub.add_parser("eval", help="evaluate a model on a labeled test CSV")
    s.add_argument("model")
    s.add_argument("test")
    s.add_argument("--label-column", default="label")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("check", help="run verification checks")
    s.add_argument("which", choices=list(CHECKS) + ["all"])
    s.add_argument("--quick", action="store_true", help="smaller sample sizes")
    s.add_argument("--out")
    s.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        _close_log()


if __name__ == "__main__":
    sys.exit(main())
