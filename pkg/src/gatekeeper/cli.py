"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 verification
contract not met.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import attacks, verification
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .experiment import (ContractError, DataError, make_key, make_run_dir, make_signature, prepare,
                         save_outcome, train, write_json, write_run)
from .numeric import Rng
from .signature import CapacityError
from .training import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONTRACT = 0, 2, 3, 4

log = logging.getLogger("gatekeeper")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except CheckpointError as exc:
        raise DataError(f"{path}: {type(exc).__name__}: {exc}") from None


def _context(args):
    """Checkpoint, its resolved config, and the rebuilt data splits."""
    ckpt = _load(args.checkpoint)
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif ckpt.config is not None:
        cfg = ExperimentConfig.from_dict(ckpt.config)
    else:
        raise ConfigurationError("checkpoint carries no config; pass --config")
    return ckpt, cfg, prepare(cfg)


def _require_owner(ckpt):
    if ckpt.key is None or ckpt.signature is None:
        raise ConfigurationError("this command needs a protected checkpoint holding a key and a signature")


def _save_attacked(run_dir, model, key, sig, trigger, cfg, metrics=None):
    save_checkpoint(os.path.join(run_dir, "attacked.ckpt"), model, key, sig, trigger, cfg.to_dict(), metrics)


# ---------------------------------------------------------------------------
# train / inspect
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = ExperimentConfig.load(args.config)
    if args.scheme:
        cfg.protection.scheme = args.scheme
        cfg.check()
    if args.seed is not None:
        cfg.training.seed = args.seed
    run = make_run_dir(args.out, "train")
    out = train(cfg)
    save_outcome(run, out)
    hist = out.result.history
    cols = sorted({k for h in hist for k in h})
    with open(os.path.join(run, "history.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(hist)
    write_run(run, cfg, {"metrics": out.metrics, "history": hist})
    print(f"run directory: {run}")
    for k, v in out.metrics.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_inspect(args):
    ckpt = _load(args.checkpoint)
    summary = {
        "model": ckpt.model.config(),
        "num_parameters": ckpt.model.num_parameters(),
        "has_key": ckpt.key is not None,
        "key": None if ckpt.key is None else ckpt.key.metadata(),
        "signature": None if ckpt.signature is None else {"text": ckpt.signature.text,
                                                           "bits": ckpt.signature.n_bits},
        "trigger_size": None if ckpt.trigger is None else len(ckpt.trigger),
        "metrics": ckpt.metrics,
    }
    run = make_run_dir(args.out, "inspect")
    write_json(os.path.join(run, "report.json"), summary)
    if ckpt.config is not None:
        write_json(os.path.join(run, "resolved_config.json"), ckpt.config)
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------

def cmd_attack(args):
    ckpt, cfg, prep = _context(args)
    _require_owner(ckpt)
    a = cfg.attack
    key, sig, model = ckpt.key, ckpt.signature, ckpt.model
    run = make_run_dir(args.out, f"attack-{args.kind}")
    train_steps = int((ckpt.metrics or {}).get("steps", 0))
    budget = int(round(a.finetune_fraction * train_steps))
    seed = a.seed if args.seed is None else args.seed

    if args.kind == "prune":
        rates = args.rates if args.rates is not None else a.prune_rates
        rows = attacks.prune_sweep(model, rates, key, sig, prep.test, prep.trigger)
        attacks.write_sweep_csv(os.path.join(run, "sweep.csv"), rows)
        write_run(run, cfg, {"kind": "prune", "rows": rows})
        for r in rows:
            print(f"rate {r['parameter']:.2f}: test {r['test_acc']:.4f} sign {r['sign_acc']:.4f}")
        return EXIT_OK

    if args.kind == "flipsigns":
        fractions = args.fractions if args.fractions is not None else a.flip_fractions
        rows = []
        for f in fractions:
            attacked, _, _, steps = attacks.flip_signs(
                model, key, sig, f, prep.val, max_steps=a.flip_max_steps, lr=cfg.training.lr,
                batch_size=cfg.training.batch, sign_weight=cfg.training.sign_weight, trigger=prep.trigger,
                trigger_batch=cfg.training.trigger, seed=seed, clip_norm=cfg.training.clip_norm)
            t, tr, s = attacks.measure(attacked, key, sig, prep.test, prep.trigger)
            rows.append({"parameter": f, "test_acc": t, "trigger_acc": tr, "sign_acc": s, "steps": steps})
            print(f"flip {f:.2f}: test {t:.4f} steps {steps}")
        attacks.write_sweep_csv(os.path.join(run, "sweep.csv"), rows)
        write_run(run, cfg, {"kind": "flipsigns", "rows": rows})
        return EXIT_OK

    if args.kind == "finetune":
        steps = args.steps if args.steps is not None else (a.finetune_steps if a.finetune_steps is not None
                                                           else budget)
        lr = cfg.training.lr * a.finetune_lr_scale
        attacked = attacks.finetune_attack(model, prep.val, steps, lr=lr, batch_size=cfg.training.batch,
                                           seed=seed, clip_norm=cfg.training.clip_norm)
        rep = attacks.report("finetune", {"steps": steps, "lr": lr, "seed": seed}, model, attacked, key, sig,
                             prep.test, prep.trigger, steps)
        _save_attacked(run, attacked, key, sig, ckpt.trigger, cfg)
    else:
        steps = args.steps if args.steps is not None else (a.overwrite_steps if a.overwrite_steps is not None
                                                           else budget)
        new_key = make_key(prep, model, seed)
        new_sig = make_signature(cfg, model.hidden_size, a.overwrite_signature)
        attacked = attacks.overwrite_attack(model, new_key, new_sig, prep.val, steps, lr=cfg.training.lr,
                                            batch_size=cfg.training.batch, trigger=prep.trigger,
                                            trigger_batch=cfg.training.trigger, seed=seed,
                                            clip_norm=cfg.training.clip_norm)
        t, _, s = attacks.measure(attacked, new_key, new_sig, prep.test)
        rep = attacks.report("overwrite", {"steps": steps, "seed": seed}, model, attacked, key, sig, prep.test,
                             prep.trigger, steps, attacker_test_acc=t, attacker_sign_acc=s)
        _save_attacked(run, attacked, new_key, new_sig, ckpt.trigger, cfg)
    write_run(run, cfg, rep)
    print(rep.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def cmd_verify(args):
    kind = args.kind
    if kind == "whitebox":
        return _verify_whitebox(args)
    if kind == "blackbox":
        return _verify_blackbox(args)
    if kind == "secrecy":
        return _verify_secrecy(args)
    ckpt, cfg, prep = _context(args)
    _require_owner(ckpt)
    v = cfg.verify
    run = make_run_dir(args.out, f"verify-{kind}")
    n = v.n_counterfeit if args.n_counterfeit is None else args.n_counterfeit
    if kind == "keys":
        study = verification.counterfeit_study(ckpt.model, ckpt.key, n, Rng(v.counterfeit_seed), prep.test,
                                               prep.trigger, corpus=prep.train.inputs, embedding=_emb(ckpt.model))
        summ = study.summary()
        summ["counterfeit_accs"] = study.counterfeit_accs
        write_run(run, cfg, {"keys": summ})
        print(f"genuine accuracy {study.genuine_acc:.4f}")
        c = summ["counterfeit"]
        if c["count"]:
            print(f"counterfeit accuracy mean {c['mean']:.4f} min {c['min']:.4f} max {c['max']:.4f} over {c['count']}")
            if study.genuine_acc - c["mean"] < v.min_counterfeit_gap:
                raise ContractError("counterfeit keys are not degraded enough")
        return EXIT_OK
    # gates
    rng = Rng(v.counterfeit_seed)
    fakes = [verification.make_counterfeit(ckpt.key, rng.spawn(), prep.train.inputs, _emb(ckpt.model))
             for _ in range(max(n, 1))]
    T = prep.test.seq_len
    rows = verification.gate_comparison_rows(ckpt.model, ckpt.key, fakes, T, v.gate_bins)
    verification.write_rows_csv(os.path.join(run, "gates.csv"), rows,
                                ("bin_left", "bin_right", "density_genuine", "density_counterfeit"))
    g = verification.high_gate_mass(ckpt.model, ckpt.key, T)
    c = float(np.mean([verification.high_gate_mass(ckpt.model, k, T) for k in fakes]))
    write_run(run, cfg, {"gates": {"high_mass_genuine": g, "high_mass_counterfeit": c, "bins": v.gate_bins}})
    print(f"gate mass in [0.9, 1]: genuine {g:.4f} counterfeit {c:.4f}")
    if not g > c:
        raise ContractError("genuine key does not open the gate more than counterfeits")
    return EXIT_OK


def _emb(model):
    return model.params["embedding.weight"].value if model.has_embedding else None


def _verify_whitebox(args):
    ckpt = _load(args.checkpoint)
    key = ckpt.key
    if args.key_from:
        key = _load(args.key_from).key
    ref = ckpt.signature if args.signature_from is None else _load(args.signature_from).signature
    if ref is None:
        raise ConfigurationError("no reference signature: the checkpoint holds none, pass --signature-from")
    try:
        acc, text = verification.verify_whitebox(ckpt.model, ref, key)
    except verification.MissingKeyError as exc:
        raise ConfigurationError(str(exc)) from None
    run = make_run_dir(args.out, "verify-whitebox")
    cfg = ExperimentConfig.from_dict(ckpt.config) if ckpt.config else ExperimentConfig()
    write_run(run, cfg, {"whitebox": {"bit_accuracy": acc, "decoded": text, "reference": ref.text,
                                      "bits": ref.n_bits}})
    print(f"decoded signature: {text!r}")
    print(f"bit accuracy: {acc:.4f}")
    if acc < cfg.verify.min_bit_accuracy:
        raise ContractError(f"bit accuracy {acc:.4f} below {cfg.verify.min_bit_accuracy}")
    return EXIT_OK


def _verify_blackbox(args):
    ckpt = _load(args.checkpoint)
    trigger = ckpt.trigger if args.trigger_from is None else _load(args.trigger_from).trigger
    if trigger is None or len(trigger) == 0:
        raise DataError("no trigger set available: the checkpoint holds none, pass --trigger-from")
    key = None if args.no_key else ckpt.key
    oracle = verification.predictions_oracle(ckpt.model, key)
    matches, p = verification.verify_blackbox_pvalue(oracle, trigger, ckpt.model.num_classes)
    cfg = ExperimentConfig.from_dict(ckpt.config) if ckpt.config else ExperimentConfig()
    run = make_run_dir(args.out, "verify-blackbox")
    write_run(run, cfg, {"blackbox": {"matches": matches, "total": len(trigger), "p_value": p}})
    print(f"trigger matches: {matches}/{len(trigger)}")
    print(f"p-value: {p:.3e}")
    if p >= cfg.verify.p_threshold:
        raise ContractError(f"p-value {p:.3e} does not reach {cfg.verify.p_threshold:g}")
    return EXIT_OK


def _verify_secrecy(args):
    if not args.baseline:
        raise ConfigurationError("verify secrecy needs --baseline")
    ckpt, base = _load(args.checkpoint), _load(args.baseline)
    cfg = ExperimentConfig.from_dict(ckpt.config) if ckpt.config else ExperimentConfig()
    try:
        rep = verification.secrecy_check(ckpt.model, base.model, cfg.verify.secrecy_threshold)
    except verification.ArchitectureMismatchError as exc:
        raise ConfigurationError(str(exc)) from None
    run = make_run_dir(args.out, "verify-secrecy")
    write_run(run, cfg, rep.to_dict())
    for name, layer in rep.layers.items():
        print(f"{name}: KS {layer['ks']:.4f}")
    if not rep.passed:
        raise ContractError("weight distributions differ from the baseline")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatekeeper", description="Key-gated RNN ownership protection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config")
    t.add_argument("--config", required=True)
    t.add_argument("--scheme", choices=("public", "private", "baseline"))
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="runs")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack a protected checkpoint")
    a.add_argument("kind", choices=("prune", "finetune", "overwrite", "flipsigns"))
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--config")
    a.add_argument("--rates", type=_floats)
    a.add_argument("--fractions", type=_floats)
    a.add_argument("--steps", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--out", default="runs")
    a.set_defaults(func=cmd_attack)

    v = sub.add_parser("verify", help="verify ownership of a checkpoint")
    v.add_argument("kind", choices=("whitebox", "blackbox", "keys", "secrecy", "gates"))
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--config")
    v.add_argument("--key-from")
    v.add_argument("--signature-from")
    v.add_argument("--trigger-from")
    v.add_argument("--baseline")
    v.add_argument("--no-key", action="store_true")
    v.add_argument("--n-counterfeit", type=int)
    v.add_argument("--out", default="runs")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("inspect", help="summarise a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", default="runs")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CapacityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
