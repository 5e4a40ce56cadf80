"""Single command-line entry point wiring all modules into reproducible runs.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error. Every
artifact-producing subcommand drops a run-manifest JSON beside its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt
from . import config as C
from . import data as D
from . import encoders as E
from . import evaluate as V
from . import gradcheck as G
from . import resplit as R
from . import synth as S
from . import train as TR
from .encoders import EncoderDims, ImageProvider

log = logging.getLogger("cfvqa")


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # the CLI contract is exit 1 on validation errors; argparse defaults to 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError(f"--set needs key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _file_cfg(path: str | None) -> dict[str, str]:
    return C.load_kv(path) if path else {}


def _provider(features: str | None, images: str | None) -> ImageProvider:
    feats = E.load_features(features) if features else {}
    return ImageProvider(features=feats, pixel_root=images)


def _load_type_map(path: str | None) -> dict[str, str] | None:
    return C.load_kv(path) if path else None


# --- subcommand handlers ------------------------------------------------------

def cmd_ingest(args) -> int:
    fmap = _file_cfg(args.fields)
    field_map = {k.split(".", 1)[1]: v for k, v in fmap.items() if k.startswith("fields.")}
    report = D.load_dataset(args.data, field_map or None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.write_canonical(report.samples, out)
    print(f"ingested {len(report.samples)} samples "
          f"({report.skipped} skipped: {dict(report.skip_reasons)}) -> {out}")
    if args.audit:
        table = D.prior_table(D.with_split(report.samples, args.split), key_mode=args.key)
        D.write_prior_csv(table, args.audit)
        print(f"prior audit -> {args.audit}")
    C.write_run_manifest(out.parent, "ingest",
                         {"data": args.data, "fields": args.fields or "", "out": str(out),
                          "key": args.key, "split": args.split},
                         seed=None, inputs={"data": args.data})
    return 0


def cmd_audit(args) -> int:
    samples = D.with_split(D.read_canonical(args.data), args.split)
    table = D.prior_table(samples, key_mode=args.key)
    ranked = sorted(table.counts,
                    key=lambda k: -max(table.dominance(k, s)[1] for s in table.counts[k]))
    shown = 0
    for key in ranked:
        for split in sorted(table.counts[key]):
            top_answer, top, rest = table.dominance(key, split)
            if shown < args.top:
                print(f"{key!r} [{split}] -> {top_answer!r} dominates {top}:{rest}")
                shown += 1
    if args.out:
        D.write_prior_csv(table, args.out)
        print(f"full audit -> {args.out}")
        C.write_run_manifest(Path(args.out).parent, "audit",
                             {"data": args.data, "key": args.key, "split": args.split,
                              "out": args.out},
                             seed=None, inputs={"data": args.data})
    return 0


def cmd_resplit(args) -> int:
    samples = D.read_canonical(args.input)
    train, test, result = R.resplit_dataset(samples, test_fraction=args.test_fraction,
                                            seed=C.module_seed(args.seed, "resplit"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.write_canonical(train, out / "train.jsonl")
    D.write_canonical(test, out / "test.jsonl")
    R.write_stats_json(result, out / "stats.json")
    report = R.split_report(train, test)
    R.write_report_csv(report, out / "report.csv")
    R.write_report_svg(report, out / "report.svg")
    C.write_run_manifest(out, "resplit",
                         {"input": args.input, "test_fraction": args.test_fraction,
                          "seed": args.seed, "out": str(out)},
                         seed=args.seed, inputs={"input": args.input})
    s = result.stats
    print(f"resplit: {len(train)} train / {len(test)} test "
          f"(target fraction {args.test_fraction}, achieved {s['test_fraction_achieved']:.3f}, "
          f"repaired {s['repaired_group_count']} groups) -> {out}")
    return 0


SYNTH_SCHEMA = {
    "synth.templates": (int, 8),
    "synth.answers_per_template": (int, 2),
    "synth.feature_dim": (int, 64),
    "synth.snr": (float, S.DEFAULT_SNR),
    "synth.rho": (float, 0.9),
    "synth.invert_test": (bool, True),
    "synth.train_count": (int, 2000),
    "synth.test_count": (int, 500),
    "synth.seed": (int, 0),
}


def _synth_config(resolved: dict) -> S.SynthConfig:
    return S.SynthConfig(
        n_templates=resolved["synth.templates"],
        answers_per_template=resolved["synth.answers_per_template"],
        feature_dim=resolved["synth.feature_dim"],
        snr=resolved["synth.snr"],
        rho=resolved["synth.rho"],
        invert_test=resolved["synth.invert_test"],
        n_train=resolved["synth.train_count"],
        n_test=resolved["synth.test_count"],
        seed=C.module_seed(resolved["synth.seed"], "synth"),
    )


def cmd_synth(args) -> int:
    resolved = C.resolve(SYNTH_SCHEMA, _file_cfg(args.config), _overrides(args.set))
    cfg = _synth_config(resolved)
    data = S.generate(cfg)
    paths = S.write_synth(data, args.out)
    C.write_run_manifest(args.out, "synth", resolved, seed=resolved["synth.seed"],
                         inputs={"config": args.config} if args.config else {})
    print(f"synth: {len(data.train)} train / {len(data.test)} test samples "
          f"(bayes accuracy ~{cfg.bayes_accuracy:.3f}) -> {paths['train'].parent}")
    return 0


TRAIN_SCHEMA = {
    "train.data": (str, None),
    "train.features": (str, ""),
    "train.images": (str, ""),
    "train.epochs": (int, 30),
    "train.batch_size": (int, 32),
    "train.lr": (float, 1e-3),
    "train.optimizer": (str, "adam"),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.lambda_k": (float, 1.0),
    "train.lambda_q": (float, 1.0),
    "train.lambda_v": (float, 1.0),
    "train.lambda_cf": (float, 1.0),
    "train.fusion": (str, "sum"),
    "train.bias_mode": (str, "question"),
    "train.seed": (int, 0),
    "model.d_e": (int, 64),
    "model.d_q": (int, 128),
    "model.d_v": (int, 128),
    "model.d_k": (int, 128),
    "model.image_input_dim": (int, 0),  # 0: infer from the first image vector
}


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.data:
        overrides["train.data"] = args.data
    if args.features:
        overrides["train.features"] = args.features
    resolved = C.resolve(TRAIN_SCHEMA, _file_cfg(args.config), overrides)
    samples = D.with_split(D.read_canonical(resolved["train.data"]), D.SPLIT_TRAIN)
    provider = _provider(resolved["train.features"] or None, resolved["train.images"] or None)
    cfg = TR.TrainConfig(
        epochs=resolved["train.epochs"], batch_size=resolved["train.batch_size"],
        lr=resolved["train.lr"], optimizer=resolved["train.optimizer"],
        beta1=resolved["train.beta1"], beta2=resolved["train.beta2"],
        eps=resolved["train.eps"],
        lambda_k=resolved["train.lambda_k"], lambda_q=resolved["train.lambda_q"],
        lambda_v=resolved["train.lambda_v"], lambda_cf=resolved["train.lambda_cf"],
        fusion=resolved["train.fusion"], bias_mode=resolved["train.bias_mode"],
        seed=C.module_seed(resolved["train.seed"], "train"),
        dims=EncoderDims(d_e=resolved["model.d_e"], d_q=resolved["model.d_q"],
                         d_v=resolved["model.d_v"], d_k=resolved["model.d_k"],
                         image_input_dim=resolved["model.image_input_dim"]),
    )
    result = TR.train(samples, provider, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save_checkpoint(result.model, out / "ckpt")
    TR.write_metrics_csv(result.metrics, out / "metrics.csv")
    inputs = {"data": resolved["train.data"]}
    if resolved["train.features"]:
        inputs["features"] = resolved["train.features"]
    C.write_run_manifest(out, "train", resolved, seed=resolved["train.seed"], inputs=inputs)
    final = result.metrics[-1]
    print(f"train: {cfg.epochs} epochs, final loss {final['loss']:.4f}, "
          f"train acc (biased) {final['acc_biased']:.3f} -> {out / 'ckpt'}(.manifest/.bin)")
    return 0


def cmd_eval(args) -> int:
    model = ckpt.load_checkpoint(args.ckpt)
    samples = D.with_split(D.read_canonical(args.data), D.SPLIT_TEST)
    provider = _provider(args.features, args.images)
    report = V.evaluate(model, samples, provider, mode=args.mode,
                        type_map=_load_type_map(args.type_map),
                        dataset_tag=args.tag or Path(args.data).stem)
    V.write_report_json(report, args.out)
    C.write_run_manifest(Path(args.out).parent, f"eval-{args.mode}",
                         {"ckpt": args.ckpt, "data": args.data, "mode": args.mode,
                          "out": args.out},
                         seed=None, inputs={"data": args.data})
    print(f"eval[{args.mode}]: overall {report.overall:.3f} on {report.total} samples -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    rep_b = V.EvalReport.from_dict(json.loads(Path(args.biased).read_text(encoding="utf-8")))
    rep_d = V.EvalReport.from_dict(json.loads(Path(args.debiased).read_text(encoding="utf-8")))
    rows = V.compare(rep_b, rep_d)
    V.write_compare_csv(rows, args.out_csv)
    C.atomic_write_text(args.out_md, V.format_compare_markdown(rows))
    print(V.format_compare_markdown(rows))
    return 0


def cmd_explain(args) -> int:
    model = ckpt.load_checkpoint(args.ckpt)
    samples = D.read_canonical(args.data)
    provider = _provider(args.features, args.images)
    chosen = [s for s in samples if s.id == args.id] if args.id else samples[:1]
    if not chosen:
        raise CliError(f"sample id {args.id!r} not found in {args.data}")
    record = V.explain(model, chosen[0], provider.get(chosen[0].image_ref), top_k=args.top_k)
    C.atomic_write_text(args.out, json.dumps(record, indent=2, ensure_ascii=False) + "\n")
    print(json.dumps(record, indent=2, ensure_ascii=False))
    return 0


def cmd_gradcheck(args) -> int:
    result = G.run_suite(seed=C.module_seed(args.seed, "gradcheck"), count=args.count,
                         eps=args.eps, tol=args.tol)
    print(f"gradcheck: {result['count']} networks, {result['params_checked']} parameter tensors, "
          f"max rel err {result['max_rel_err']:.2e} (worst: {result['worst_case']}) "
          f"in {result['seconds']:.1f}s")
    if not result["ok"]:
        print(f"gradcheck FAILED tolerance {args.tol}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="cfvqa", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="convert a source QA file to canonical JSONL")
    sp.add_argument("--data", required=True)
    sp.add_argument("--fields", help="field-map config (fields.* keys)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--audit", help="also write a prior-audit CSV here")
    sp.add_argument("--key", default=D.KEY_EXACT_QUESTION,
                    choices=[D.KEY_EXACT_QUESTION, D.KEY_QUESTION_TYPE])
    sp.add_argument("--split", default="all", help="split tag used in the audit")
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("audit", help="question->answer prior dominance report")
    sp.add_argument("--data", required=True)
    sp.add_argument("--key", default=D.KEY_EXACT_QUESTION,
                    choices=[D.KEY_EXACT_QUESTION, D.KEY_QUESTION_TYPE])
    sp.add_argument("--split", default="all")
    sp.add_argument("--top", type=int, default=10)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_audit)

    sp = sub.add_parser("resplit", help="greedy changing-priors re-split")
    sp.add_argument("--input", required=True)
    sp.add_argument("--test-fraction", type=float, default=0.3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_resplit)

    sp = sub.add_parser("synth", help="generate a synthetic skewed corpus")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", help="train the three-branch causal model")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--data", help="override train.data")
    sp.add_argument("--features", help="override train.features")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="accuracy report for one prediction mode")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--features")
    sp.add_argument("--images")
    sp.add_argument("--mode", choices=["biased", "debiased"], required=True)
    sp.add_argument("--type-map", help="config mapping source types to report rows")
    sp.add_argument("--tag")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("compare", help="side-by-side biased vs debiased table")
    sp.add_argument("--biased", required=True)
    sp.add_argument("--debiased", required=True)
    sp.add_argument("--out-csv", default="compare.csv")
    sp.add_argument("--out-md", default="compare.md")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("explain", help="per-sample biased/bias/debiased decomposition")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--features")
    sp.add_argument("--images")
    sp.add_argument("--id", help="sample id (default: first sample)")
    sp.add_argument("--top-k", type=int, default=5)
    sp.add_argument("--out", default="explain.json")
    sp.set_defaults(fn=cmd_explain)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, C.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures: I/O, training, infeasible splits
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
