"""Command-line entry points, configuration, and report emission.

Subcommands: train-teacher, quantize, dfq, eval, report-similarity.
Exit codes: 0 success, 2 usage/config errors, 3 runtime/numeric errors.
Verbosity via the ADADFQ_LOG environment variable (DEBUG/INFO/WARNING).

The dfq command is structurally data-free: it reads only the teacher
checkpoint (class count, input dimension, weights, BN statistics) and never
opens any dataset file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt
from .adaptability import GameHyperparams, disagreement_vector
from .data import (
    Dataset,
    SeededRng,
    apply_standardization,
    load_csv,
    make_blobs,
    make_rings,
    sample_noise_and_labels,
    save_csv,
    standardize,
)
from .errors import AdadfqError, CheckpointFormatError, ConfigError, ContractError
from .game import TRACE_FIELDS, GameConfig, equilibrium_report, run_game
from .nn import AdamOptimizer, ConditionalGenerator, make_mlp
from .quant import QuantSpec, build_quantized_student
from .tensor import Tensor, backward, log_softmax, zero_grads

log = logging.getLogger("adadfq")


@dataclass
class RunConfig:
    """Flat, human-editable run configuration; unspecified fields keep the
    defaults below. Unknown keys are rejected before any compute."""

    dataset: str = "blobs"
    csv_path: str = ""
    label_column: str = "label"
    classes: int = 4
    per_class: int = 500
    dim: int = 8
    spread: float = 1.3
    teacher_hidden: str = "64,64"
    teacher_epochs: int = 60
    teacher_lr: float = 1e-3
    teacher_batch: int = 64
    bits: int = 3
    epochs: int = 400
    iterations_per_epoch: int = 50
    batch_size: int = 16
    noise_dim: int = 64
    embed_dim: int = 8
    gen_hidden: str = "64,64"
    gen_lr: float = 1e-3
    cal_lr: float = 1e-4
    cal_momentum: float = 0.9
    cal_weight_decay: float = 1e-4
    alpha_ds: float = 0.2
    alpha_as: float = 0.1
    lambda_l: float = 0.1
    lambda_u: float = 0.8
    beta: float = 1.0
    gamma: float = 1.0
    aux_ce: float = 0.0
    sample_dump: int = 64
    seed: int = 0

    def hidden_widths(self, raw: str) -> tuple[int, ...]:
        try:
            return tuple(int(w) for w in raw.split(",") if w.strip())
        except ValueError:
            raise ConfigError(f"bad hidden-width list {raw!r}") from None

    def config_hash(self) -> str:
        canon = "\n".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def game_config(self) -> GameConfig:
        return GameConfig(
            epochs=self.epochs,
            iterations_per_epoch=self.iterations_per_epoch,
            batch_size=self.batch_size,
            noise_dim=self.noise_dim,
            gen_lr=self.gen_lr,
            cal_lr=self.cal_lr,
            cal_momentum=self.cal_momentum,
            cal_weight_decay=self.cal_weight_decay,
            hyper=GameHyperparams(
                alpha_ds=self.alpha_ds,
                alpha_as=self.alpha_as,
                lambda_l=self.lambda_l,
                lambda_u=self.lambda_u,
                beta=self.beta,
                gamma=self.gamma,
            ),
            seed=self.seed,
            bits=self.bits,
            aux_ce_weight=self.aux_ce,
        )


def parse_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            try:
                setattr(cfg, key, types[key](value))
            except ValueError:
                raise ConfigError(
                    f"{path}:{line_no}: cannot parse {value!r} as {types[key].__name__}"
                ) from None
    cfg.game_config()  # validate hyperparameter combinations up front
    return cfg


def _build_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "blobs":
        return make_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, cfg.seed)
    if cfg.dataset == "rings":
        return make_rings(cfg.classes, cfg.per_class, cfg.seed)
    if cfg.dataset == "csv":
        if not cfg.csv_path:
            raise ConfigError("dataset=csv needs csv_path")
        if not os.path.exists(cfg.csv_path):
            raise FileNotFoundError(f"dataset file not found: {cfg.csv_path}")
        full = load_csv(cfg.csv_path, cfg.label_column)
        # deterministic stratified split on the standardized rows
        rng = SeededRng(cfg.seed).substream("data")
        from .data import _stratified_split

        train, test = _stratified_split(full.features, full.labels, full.provenance, rng)
        train.norm_stats = full.norm_stats
        return train, test
    raise ConfigError(f"unknown dataset kind {cfg.dataset!r}")


def _forward_batched(net, features: np.ndarray, batch: int = 256) -> np.ndarray:
    outs = []
    for start in range(0, features.shape[0], batch):
        outs.append(net.forward(Tensor(features[start : start + batch])).data)
    return np.concatenate(outs)


def evaluate_network(net, ds: Dataset) -> dict:
    logits = _forward_batched(net, ds.features)
    if logits.shape[1] != ds.num_classes:
        raise ContractError(
            f"network has {logits.shape[1]} classes, dataset has {ds.num_classes}"
        )
    pred = np.argmax(logits, axis=1)
    correct = pred == ds.labels
    num_classes = ds.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    for t, p in zip(ds.labels, pred):
        confusion[t, p] += 1
    per_class = {
        str(c): float(correct[ds.labels == c].mean()) if np.any(ds.labels == c) else None
        for c in range(num_classes)
    }
    return {
        "accuracy": float(correct.mean()),
        "per_class_accuracy": per_class,
        "confusion": confusion.tolist(),
        "num_samples": int(ds.num_samples),
    }


def train_teacher_network(train: Dataset, cfg: RunConfig):
    """Supervised pretraining of the full-precision network with label
    cross-entropy and Adam."""
    rng = SeededRng(cfg.seed)
    hidden = cfg.hidden_widths(cfg.teacher_hidden)
    net = make_mlp(train.dim, hidden, train.num_classes, rng.substream("teacher_init"))
    opt = AdamOptimizer(net.parameters(), lr=cfg.teacher_lr)
    order_rng = rng.substream("teacher_order")
    onehot = np.eye(train.num_classes)[train.labels]
    n = train.num_samples
    net.train()
    for epoch in range(cfg.teacher_epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, cfg.teacher_batch):
            idx = order[start : start + cfg.teacher_batch]
            if idx.size < 2:
                continue  # batch norm needs at least two samples
            x = Tensor(train.features[idx])
            y = Tensor(onehot[idx])
            logits = net.forward(x)
            loss = -(y * log_softmax(logits)).sum(axis=1).mean()
            zero_grads(net.parameters())
            backward(loss)
            opt.step()
        log.debug("teacher epoch %d done", epoch)
    net.eval()
    return net, hidden


def _write_json(path, obj) -> None:
    ckpt.atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True))


def _dump_float(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_teacher(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    os.makedirs(args.out_dir, exist_ok=True)
    train_raw, test_raw = _build_dataset(cfg)
    save_csv(train_raw, os.path.join(args.out_dir, "train.csv"), cfg.label_column)
    save_csv(test_raw, os.path.join(args.out_dir, "test.csv"), cfg.label_column)

    train_std, stats = standardize(train_raw)
    test_std = apply_standardization(test_raw, stats)
    net, hidden = train_teacher_network(train_std, cfg)

    metrics = {
        "train": evaluate_network(net, train_std),
        "test": evaluate_network(net, test_std),
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }
    meta = {
        "seed": cfg.seed,
        "epochs": cfg.teacher_epochs,
        "config_hash": cfg.config_hash(),
        "dataset": train_raw.provenance,
    }
    ckpt.save_teacher(os.path.join(args.out_dir, "teacher.json"), net, hidden,
                      norm_stats=stats, metadata=meta)
    _write_json(os.path.join(args.out_dir, "teacher_metrics.json"), metrics)
    print(json.dumps({"test_accuracy": metrics["test"]["accuracy"]}))
    return 0


def _load_eval_dataset(path: str, label_column: str, doc: dict) -> Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    stats = ckpt.norm_stats_from(doc)
    return load_csv(path, label_column, stats=stats)


def cmd_quantize(args) -> int:
    teacher, doc = ckpt.load_checkpoint(args.ckpt)
    if doc["kind"] != "teacher":
        raise CheckpointFormatError(f"{args.ckpt}: expected a teacher checkpoint")
    spec = QuantSpec(bits=args.bits)
    student = build_quantized_student(teacher, spec)

    ds = _load_eval_dataset(args.dataset, args.label_column, doc)
    # Observe activation ranges over the provided data, then freeze and score.
    student.train()
    for start in range(0, ds.num_samples, 256):
        student.forward(Tensor(ds.features[start : start + 256]))
    student.eval()
    report = {
        "bits": args.bits,
        "naive_quantized": evaluate_network(student, ds),
        "teacher": evaluate_network(teacher, ds),
    }
    os.makedirs(args.out_dir, exist_ok=True)
    hidden = doc["architecture"]["hidden"]
    ckpt.save_student(
        os.path.join(args.out_dir, f"student_naive_{args.bits}bit.json"),
        student, tuple(hidden), norm_stats=ckpt.norm_stats_from(doc),
        metadata={"source": "naive", "bits": args.bits},
    )
    _write_json(os.path.join(args.out_dir, "quantize_report.json"), report)
    print(json.dumps({
        "teacher_accuracy": report["teacher"]["accuracy"],
        "naive_accuracy": report["naive_quantized"]["accuracy"],
    }))
    return 0


def _write_trace_csv(path, rows) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for r in rows:
            d = r.as_dict()
            writer.writerow([
                d[k] if isinstance(d[k], int) else _dump_float(d[k]) for k in TRACE_FIELDS
            ])
    os.replace(tmp, path)


def _pds_matrix(teacher, student, features: np.ndarray) -> np.ndarray:
    z_p = _forward_batched(teacher, features)
    z_q = _forward_batched(student, features)
    return disagreement_vector(Tensor(z_p), Tensor(z_q)).data


def _l1_similarity(pds: np.ndarray) -> np.ndarray:
    return np.abs(pds[:, None, :] - pds[None, :, :]).sum(axis=2)


def _write_matrix_csv(path, matrix: np.ndarray) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([_dump_float(v) for v in row])
    os.replace(tmp, path)


def cmd_dfq(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.bits is not None:
        cfg.bits = args.bits
    teacher, doc = ckpt.load_checkpoint(args.ckpt)
    if doc["kind"] != "teacher":
        raise CheckpointFormatError(f"{args.ckpt}: expected a teacher checkpoint")
    arch = doc["architecture"]
    num_classes = arch["num_classes"]
    input_dim = arch["input_dim"]

    rng = SeededRng(cfg.seed)
    generator = ConditionalGenerator(
        cfg.noise_dim, num_classes, input_dim, rng.substream("generator_init"),
        embed_dim=cfg.embed_dim, hidden=cfg.hidden_widths(cfg.gen_hidden),
    )
    student = build_quantized_student(teacher, QuantSpec(bits=cfg.bits))

    os.makedirs(args.out_dir, exist_ok=True)
    game_cfg = cfg.game_config()
    trace = run_game(generator, teacher, student, game_cfg)
    _write_trace_csv(os.path.join(args.out_dir, "trace.csv"), trace)

    window = max(1, len(trace) // 4)
    report = equilibrium_report(trace, window)
    _write_json(os.path.join(args.out_dir, "equilibrium.json"), report.as_dict())

    hidden = tuple(arch["hidden"])
    ckpt.save_student(
        os.path.join(args.out_dir, f"student_dfq_{cfg.bits}bit.json"),
        student, hidden, norm_stats=ckpt.norm_stats_from(doc),
        metadata={"source": "dfq", "bits": cfg.bits, "seed": cfg.seed,
                  "config_hash": cfg.config_hash()},
    )

    # final generated-sample dump plus their pairwise p_ds distances
    generator.eval()
    student.eval()
    dump_rng = SeededRng(cfg.seed ^ 0x5A5A5A5A)
    z, y = sample_noise_and_labels(dump_rng, cfg.sample_dump, cfg.noise_dim, num_classes)
    samples = generator.forward(z, y).data
    dump_path = os.path.join(args.out_dir, "samples.csv")
    tmp = dump_path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "label"] + [f"x{i}" for i in range(input_dim)])
        for i, (row, label) in enumerate(zip(samples, np.argmax(y.data, axis=1))):
            writer.writerow([i, int(label)] + [_dump_float(v) for v in row])
    os.replace(tmp, dump_path)

    pds = _pds_matrix(teacher, student, samples)
    _write_matrix_csv(os.path.join(args.out_dir, "similarity.csv"), _l1_similarity(pds))

    print(json.dumps({
        "iterations": len(trace),
        "mean_delta_sum": report.mean_delta_sum,
        "equilibrium": report.equilibrium,
    }))
    return 0


def cmd_eval(args) -> int:
    net, doc = ckpt.load_checkpoint(args.ckpt)
    ds = _load_eval_dataset(args.dataset, args.label_column, doc)
    report = evaluate_network(net, ds)
    if args.out:
        _write_json(args.out, report)
    print(json.dumps({"accuracy": report["accuracy"]}))
    return 0


def cmd_report_similarity(args) -> int:
    teacher, tdoc = ckpt.load_checkpoint(args.ckpt)
    student, _ = ckpt.load_checkpoint(args.student_ckpt)
    if not os.path.exists(args.samples):
        raise FileNotFoundError(f"sample dump not found: {args.samples}")
    with open(args.samples, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row[2:]] for row in reader]
    features = np.asarray(rows)
    if features.shape[1] != teacher.input_dim:
        raise ContractError(
            f"sample dump width {features.shape[1]} does not match network input {teacher.input_dim}"
        )
    pds = _pds_matrix(teacher, student, features)
    _write_matrix_csv(args.out, _l1_similarity(pds))
    print(json.dumps({"samples": int(features.shape[0]), "out": args.out}))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adadfq",
        description="Desk-scale data-free quantization laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="pretrain the full-precision network")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("quantize", help="naive post-training quantization baseline")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dfq", help="data-free calibration via the zero-sum game")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--bits", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_dfq)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report-similarity", help="pairwise L1 distances between p_ds vectors")
    p.add_argument("--samples", required=True)
    p.add_argument("--ckpt", required=True, help="teacher checkpoint")
    p.add_argument("--student-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report_similarity)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("ADADFQ_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AdadfqError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
