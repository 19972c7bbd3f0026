"""Command line interface.

Every subcommand accepts ``--config FILE``, ``--preset NAME`` and repeated
``--set key=value`` overrides. On failure a single line
``error<TAB><ErrorType><TAB><message>`` is written to stderr and the exit
code is non-zero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import erf
from .bank import BankSnapshot, FeatureBankSet, atomic_write_text
from .exceptions import CFBError, ValidationError
from .experiments import ABLATION_AXES, ablate, format_table, history_lines, read_jsonl, to_jsonl
from .filtering import decisions_to_jsonl, filter_predictions
from .metrics import filter_confusion
from .scoring import k_from_ratio
from .sim import SimState, SurrogateDetector, gen_stream, run_burn_in
from .threshold import ThresholdTracker

EXIT_ERROR = 1
EXIT_USAGE = 2


def _resolved(args, require_seed=True) -> dict:
    file_values = cfgmod.load_file(args.config) if args.config else None
    return cfgmod.resolve(file_values, args.set or (), preset=args.preset, require_seed=require_seed)


def _write_config_sidecar(path, cfg):
    atomic_write_text(f"{path}.config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    cfg = _resolved(args)
    stream = gen_stream(cfgmod.stream_config(cfg))
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {
        "labeled.erf": erf.from_stream(stream, roles=("labeled",)),
        "stream.erf": erf.from_stream(stream, roles=("stream",)),
        "unlabeled.erf": erf.from_stream(stream, roles=("unlabeled",)),
        "test.erf": erf.from_stream(stream, roles=("test",)),
    }
    for name, ds in outputs.items():
        path = os.path.join(args.out_dir, name)
        erf.write_erf(path, ds)
        print(f"wrote {path} ({len(ds)} records)")
    atomic_write_text(os.path.join(args.out_dir, "config.json"), json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_burnin(args) -> int:
    cfg = _resolved(args)
    C = cfg["stream.num_id_classes"]
    if args.labeled:
        ds = erf.parse_erf(args.labeled)
        recs = ds.labeled()
        X = ds.features(recs)
        y = np.array([r.class_id for r in recs], dtype=int)
        bad = sorted({int(c) for c in y if c >= C})
        if bad:
            raise ValidationError(f"labeled classes {bad} exceed stream.num_id_classes={C}")
        D = ds.dimension
    else:
        stream = gen_stream(cfgmod.stream_config(cfg))
        lab = stream.select("labeled", 0)
        X, y, D = stream.features[lab], stream.class_id[lab], stream.config.dimension
    tcfg = cfgmod.train_config(cfg)
    init = SurrogateDetector(np.zeros((C, D)), tcfg.temperature)
    state = SimState(init.copy(), init.copy(), FeatureBankSet(C, cfg["bank.capacity"], D),
                     ema_alpha=tcfg.ema_alpha, loss_weight=tcfg.loss_weight)
    run_burn_in(state, X, y, tcfg.burn_in_epochs, lr=tcfg.burn_in_lr, batch_size=tcfg.batch_size,
                rng=np.random.default_rng([cfg["seed"], 1]))
    snap = state.bank_set.snapshot()
    snap.save(args.snapshot_out)
    _write_config_sidecar(args.snapshot_out, cfg)
    print(f"wrote {args.snapshot_out}")
    cold = state.bank_set.cold_classes()
    if cold:
        lens = {c: len(state.bank_set.bank(c)) for c in cold}
        print(f"warning: banks not warm after burn-in: {lens} of capacity {cfg['bank.capacity']}; "
              "the OOD gate stays disabled until every bank is full", file=sys.stderr)
    if args.pseudo_out:
        if args.unlabeled:
            uds = erf.parse_erf(args.unlabeled)
            recs = uds.pseudo() or uds.records
        else:
            stream = gen_stream(cfgmod.stream_config(cfg))
            recs = erf.from_stream(stream, roles=("unlabeled",), epoch=1).records
        out = erf.ErfDataset(D)
        if recs:
            pred, conf, _ = state.teacher.predict_batch(np.stack([r.feature for r in recs]))
            for r, p, q in zip(recs, pred, conf):
                out.records.append(erf.ErfRecord(r.record_id, "pseudo", int(p), min(1.0, float(q)), r.gt_ood, r.feature))
        erf.write_erf(args.pseudo_out, out)
        _write_config_sidecar(args.pseudo_out, cfg)
        print(f"wrote {args.pseudo_out} ({len(out)} records)")
    return 0


def cmd_filter(args) -> int:
    cfg = _resolved(args, require_seed=False)
    bank_set = BankSnapshot.load(args.snapshot).restore()
    ds = erf.parse_erf(args.pseudo)
    if ds.dimension != bank_set.dimension:
        raise ValidationError(f"ERF dimension {ds.dimension} != snapshot dimension {bank_set.dimension}")
    preds = ds.predictions()
    fcfg = cfgmod.filter_config(cfg)
    k = k_from_ratio(bank_set.capacity, cfg["knn_ratio"])
    policy = fcfg.policy(args.total_steps)
    decisions = filter_predictions(
        preds, bank_set, k, cfg["metric"], policy, cfg["filter.conf_tau"], args.step,
        tracker=ThresholdTracker(k, cfg["metric"]), n_jobs=cfg["n_jobs"],
    )
    atomic_write_text(args.out, decisions_to_jsonl(decisions))
    _write_config_sidecar(args.out, cfg)
    kept = sum(d.kept for d in decisions)
    print(f"wrote {args.out}: {kept}/{len(decisions)} kept")
    if not bank_set.is_warm():
        print(f"warning: cold banks {bank_set.cold_classes()}; OOD gate bypassed (warm-up)", file=sys.stderr)
    conf = filter_confusion(decisions, [p.gt_ood for p in preds])
    if conf.total:
        print(json.dumps(conf.to_dict()))
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolved(args)
    lines = history_lines(cfg)
    atomic_write_text(args.out, to_jsonl(lines))
    print(f"wrote {args.out}")
    if args.plot_dir:
        from .plots import write_plots

        for p in write_plots(lines, args.plot_dir):
            print(f"wrote {p}")
    summary = lines[-1]
    print(format_table([{"value": os.path.basename(args.out), **summary}]), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolved(args)
    seeds = [cfg["seed"] + i for i in range(args.seeds)]
    rows = ablate(args.axis, cfg, seeds)
    table = format_table(rows)
    header = f"# axis={args.axis} seeds={seeds[0]}..{seeds[-1]} (median over {len(seeds)} seeds)\n"
    if args.out:
        atomic_write_text(args.out, header + table)
        _write_config_sidecar(args.out, cfg)
    if args.json:
        atomic_write_text(args.json, to_jsonl([{"type": "config", "config": cfg}] + rows))
    print(header + table, end="")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.histories:
        lines = read_jsonl(path)
        summary = next((r for r in lines if r.get("type") == "summary"), None)
        config = next((r["config"] for r in lines if r.get("type") == "config"), {})
        if summary is None:
            raise ValidationError(f"{path}: no summary record")
        label = os.path.basename(path)
        if args.label_key:
            label = " ".join(f"{k}={config.get(k)}" for k in args.label_key)
        rows.append({"value": label, **summary})
    text = format_table(rows)
    if args.out:
        atomic_write_text(args.out, text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="named override set applied before --config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    parser = argparse.ArgumentParser(prog="cfb-filter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write synthetic ERF datasets")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("burnin", parents=[common], help="burn-in + bank warm-up; writes a bank snapshot")
    p.add_argument("--labeled", help="labeled ERF (default: generated from the config)")
    p.add_argument("--snapshot-out", required=True)
    p.add_argument("--unlabeled", help="ERF of unlabeled features to label with the teacher")
    p.add_argument("--pseudo-out", help="write teacher predictions as a pseudo ERF")
    p.set_defaults(func=cmd_burnin)

    p = sub.add_parser("filter", parents=[common], help="gate pseudo predictions against a bank snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--pseudo", required=True, help="ERF with pseudo rows")
    p.add_argument("--out", required=True, help="decisions JSONL")
    p.add_argument("--step", type=float, default=0, help="schedule position t")
    p.add_argument("--total-steps", type=int, default=1, help="schedule length T")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", parents=[common], help="full burn-in + mutual-learning run")
    p.add_argument("--out", required=True, help="history JSONL")
    p.add_argument("--plot-dir", help="also write SVG plots here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", parents=[common], help="sweep one axis and print a comparison table")
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds starting at seed")
    p.add_argument("--out", help="write the table here")
    p.add_argument("--json", help="write rows as JSONL here")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="compare summary metrics across history files")
    p.add_argument("histories", nargs="+")
    p.add_argument("--label-key", action="append", help="label rows by these config keys")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CFBError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error\t{type(exc).__name__}\t{msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
