"""Command-line entry points: synth, train, eval, stats, gradcheck, params.

Exit codes: 0 success, 1 validation/config error, 2 numeric failure
(training divergence or a failed gradient check). Every run prints its
resolved configuration and seed before doing work; given the same seed,
config, and inputs, single-threaded runs are bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import data as data_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .errors import ConfigError, NumericError, TdlError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to 1."""

    def error(self, message):
        raise ConfigError(message)


def _print_resolved(config: dict, seed) -> None:
    print("resolved config:")
    print(json.dumps(config, indent=2, sort_keys=True, default=str))
    print(f"seed: {seed}")


def _load_train_config(path) -> model_mod.TdlConfig:
    """Read a TdlConfig from JSON or from key=value lines (dotted keys
    nest, values parse as JSON literals when possible)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    else:
        obj = {}
        for ln, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value")
            key, _, value = line.partition("=")
            try:
                parsed = json.loads(value.strip())
            except json.JSONDecodeError:
                parsed = value.strip()
            node = obj
            parts = key.strip().split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = parsed
    return model_mod.TdlConfig.from_dict(obj)


def _map_maybe_parallel(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def run_synth(args) -> int:
    try:
        spec_obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON: {exc}") from exc
    spec = data_mod.SynthSpec.from_dict(spec_obj)
    _print_resolved(spec.to_dict(), args.seed)

    features, annotations = data_mod.synth_dataset(spec, args.seed)
    out_dir = Path(args.out)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)

    def write_one(pair):
        seq, ann = pair
        data_mod.write_feature_file(seq, out_dir / "features" / f"{seq.sample_id}.tdlf")
        data_mod.save_annotation_file(ann, out_dir / "annotations" / f"{ann.sample_id}.json")

    _map_maybe_parallel(write_one, list(zip(features, annotations)), args.threads)
    samples = [
        {"id": seq.sample_id,
         "features": f"features/{seq.sample_id}.tdlf",
         "annotations": f"annotations/{seq.sample_id}.json"}
        for seq in features
    ]
    manifest = out_dir / "manifest.json"
    manifest.write_text(
        json.dumps({"samples": samples}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    stats = data_mod.dataset_stats(annotations)
    print(f"wrote {len(samples)} utterances to {out_dir}")
    print(f"fake frames: {stats.frame_fake_pct:.2f} %  "
          f"fake utterances: {stats.utterance_fake_pct:.2f} %")
    return EXIT_OK


def _load_split(data_dir, config: model_mod.TdlConfig):
    features, annotations = data_mod.load_dataset(data_dir)
    pairs = []
    for seq, ann in zip(features, annotations):
        if seq.dim != config.feat_dim:
            raise ConfigError(
                f"{seq.sample_id}: feature dim {seq.dim} does not match the "
                f"model feat_dim {config.feat_dim}"
            )
        padded = data_mod.pad_features(seq, config.t_max)
        labels = data_mod.compile_frame_labels(
            ann, config.label_resolution_s, config.label_len,
            config.label_setting,
        )
        pairs.append((padded, labels))
    return pairs


def run_train(args) -> int:
    config = _load_train_config(args.config)
    _print_resolved(config.to_dict(), config.seed)
    train_set = _load_split(args.train, config)
    dev_set = _load_split(args.dev, config)
    init_model = None
    if args.resume:
        init_model = model_mod.load_checkpoint(args.resume)
        print(f"resuming from {args.resume} at epoch {init_model.epoch}")

    result = model_mod.train(config, train_set, dev_set, init_model=init_model)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "best.tdlc").write_bytes(result.best_checkpoint)
    model_mod.save_checkpoint(result.last_model, out_dir / "last.tdlc")
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    for record in result.records:
        print(f"epoch {record.epoch:3d}  loss {record.mean_total:.6f}  "
              f"bce {record.mean_bce:.6f}  esm {record.mean_esm_total:.6f}  "
              f"lr {record.learning_rate:.2e}  dev EER {record.dev_eer_pct:.3f} %")
    if result.diverged:
        print("training diverged: loss went non-finite; "
              "last good checkpoint written", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"best dev EER {result.best_dev_eer:.3f} % at epoch {result.best_epoch}")
    print(f"checkpoints in {out_dir}")
    return EXIT_OK


def run_eval(args) -> int:
    model = model_mod.load_checkpoint(args.checkpoint)
    config = model.config
    _print_resolved(config.to_dict(), config.seed)
    features, annotations = data_mod.load_dataset(args.test)

    def score_one(pair):
        seq, ann = pair
        if seq.dim != config.feat_dim:
            raise ConfigError(
                f"{seq.sample_id}: feature dim {seq.dim} does not match the "
                f"checkpoint feat_dim {config.feat_dim}"
            )
        padded = data_mod.pad_features(seq, config.t_max)
        labels = data_mod.compile_frame_labels(
            ann, config.label_resolution_s, config.label_len,
            config.label_setting,
        )
        return model_mod.predict(model, padded, labels.true_labels), labels

    scored = _map_maybe_parallel(score_one, list(zip(features, annotations)),
                                 args.threads)
    pool = metrics_mod.pool_predictions([s for s, _ in scored],
                                        [lab for _, lab in scored])
    report = metrics_mod.compute_report(pool, threshold=args.threshold)
    text, json_str = metrics_mod.render_report(
        report, metadata={"checkpoint": str(args.checkpoint),
                          "test_dir": str(args.test)},
    )
    Path(args.report).write_text(json_str, encoding="utf-8")
    print(text, end="")
    print(f"report written to {args.report}")
    return EXIT_OK


def run_stats(args) -> int:
    _print_resolved({"data": str(args.data), "resolution_s": args.resolution},
                    "none")
    _, annotations = data_mod.load_dataset(args.data)
    stats = data_mod.dataset_stats(annotations, args.resolution)
    print(f"{'subset':>12} {'frame-level':>12} {'utterance-level':>16}")
    print(f"{Path(str(args.data)).name:>12} {stats.frame_fake_pct:>12.2f} "
          f"{stats.utterance_fake_pct:>16.2f}")
    print(f"utterances: {stats.num_utterances}  frames: {stats.num_frames}")
    return EXIT_OK


def run_gradcheck(args) -> int:
    _print_resolved({"size": args.size, "tolerance": args.tolerance}, args.seed)
    report = model_mod.gradcheck_battery(args.size, args.seed, args.tolerance)
    for entry in report.entries:
        status = "ok" if entry.passed else "FAIL"
        print(f"{status:>4}  {entry.name:<28} max rel err {entry.max_rel_err:.3e} "
              f"({entry.coords_checked} coords)")
    print(f"max relative error: {report.max_rel_err:.3e} "
          f"(tolerance {report.tolerance:.1e})")
    if not report.passed:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradient check passed")
    return EXIT_OK


def run_params(args) -> int:
    config = _load_train_config(args.config)
    _print_resolved(config.to_dict(), config.seed)
    model = model_mod.build_model(config)
    rows, total = model_mod.param_count_table(model)
    print(f"{'layer':<12} {'parameters':>12} {'thousands':>12}")
    for name, count in rows:
        print(f"{name:<12} {count:>12d} {count / 1000.0:>12.1f}")
    print(f"{'total':<12} {total:>12d} {total / 1000.0:>12.1f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tdl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="TdlConfig JSON or key=value")
    p.add_argument("--train", required=True, help="training dataset directory")
    p.add_argument("--dev", required=True, help="dev dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=run_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="test dataset directory")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=run_eval)

    p = sub.add_parser("stats", help="dataset fake-class statistics")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--resolution", type=float, default=data_mod.DEFAULT_RESOLUTION_S)
    p.set_defaults(func=run_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--size", choices=sorted(model_mod.GRADCHECK_CONFIGS),
                   default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=run_gradcheck)

    p = sub.add_parser("params", help="per-layer parameter count table")
    p.add_argument("--config", required=True)
    p.set_defaults(func=run_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TdlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
