"""Command-line entry point.

Every setting can come from a flat ``key=value`` config file (``--config``)
and be overridden by a flag of the same name (underscores become dashes).
Exit codes: 0 success, 1 invalid configuration, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autodiff import finite_difference_report
from .embeddings import coverage_stats, load_embedding_file, write_embeddings
from .errors import ConfigError, MVCNNError
from .mutual import complete_all, write_provenance
from .network import MVCNN, NetworkConfig, build_model
from .pretrain import PretrainConfig, build_noise_distribution, run_pretraining
from .text import Dataset, Vocabulary, load_corpus, load_tsv
from .training import TrainConfig, evaluate, train_supervised

log = logging.getLogger("mvcnn")

COMMANDS = ("stats", "mutual-learn", "pretrain", "train", "eval", "gradcheck")


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, str, path, paths, ints, bool
    default: object
    help: str
    flag: str | None = None

    @property
    def option(self) -> str:
        return self.flag or "--" + self.name.replace("_", "-")


KEYS = (
    Key("seed", "int", None, "random seed (required for train and pretrain)"),
    Key("tweet_normalize", "bool", False, "apply tweet normalization to all text"),
    Key("checkpoint", "path", None, "checkpoint to write (train, pretrain) or read (eval)"),
    Key("init_checkpoint", "path", None, "train: start from this (pretrained) checkpoint"),
    Key("embeddings", "paths", (), "embedding text files, one channel each"),
    Key("train", "path", None, "training set, label<TAB>text"),
    Key("dev", "path", None, "development set for model selection"),
    Key("test", "path", None, "test set"),
    Key("data", "path", None, "eval: dataset to score"),
    Key("corpus", "path", None, "unlabeled corpus, one sentence per line"),
    Key("output_dir", "path", None, "mutual-learn: directory for completed embeddings"),
    Key("report", "path", None, "train: write the epoch report here (default stdout)"),
    Key("mutual_learning", "bool", True, "impute unknown words across embedding versions"),
    Key("ridge", "float", None, "projection ridge penalty (default 1e-3 * |shared vocab|)"),
    Key("lr", "float", 0.01, "AdaGrad learning rate"),
    Key("batch_size", "int", 50, "mini-batch size"),
    Key("dropout_keep", "float", 0.8, "dropout keep probability before the output layer"),
    Key("l2", "float", 5e-3, "L2 weight"),
    Key("l2_embeddings", "bool", False, "also regularize the embedding tables"),
    Key("max_epochs", "int", 25, "maximum training epochs"),
    Key("patience", "int", 10, "epochs without dev improvement before stopping"),
    Key("layers", "int", 2, "number of convolution layers"),
    Key("filter_sizes", "ints", (3, 5, 7, 9), "filter widths, comma separated"),
    Key("kernels", "int", 5, "kernels per filter size"),
    Key("k_top", "int", 4, "pooled length at the top layer"),
    Key("hidden_dim", "int", None, "sentence representation size (default: embedding dim)"),
    Key("dim", "int", 50, "embedding dim when no embedding files are given"),
    Key("channels", "int", 1, "channel count when no embedding files are given"),
    Key("init_range", "float", 0.1, "uniform init range for unknown words"),
    Key("context", "int", 3, "pretraining context half-width t"),
    Key("noise_k", "int", 10, "noise samples per true word"),
    Key("noise_alpha", "float", 0.75, "noise distribution exponent"),
    Key("pretrain_epochs", "int", 5, "pretraining epochs"),
    Key("pretrain_lr", "float", 0.01, "pretraining learning rate"),
    Key("precision", "int", 64, "floating point width, 64 or 32"),
    Key("gradcheck_tol", "float", 1e-4, "gradcheck: maximum relative error"),
)
KEY_BY_NAME = {k.name: k for k in KEYS}


def _parse_value(key: Key, raw):
    if key.kind == "bool":
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if key.kind == "int":
        return int(raw)
    if key.kind == "float":
        return float(raw)
    if key.kind == "ints":
        if isinstance(raw, (list, tuple)):
            return tuple(int(x) for x in raw)
        return tuple(int(x) for x in str(raw).split(",") if x.strip())
    if key.kind == "paths":
        if isinstance(raw, (list, tuple)):
            return tuple(raw)
        return tuple(x.strip() for x in str(raw).split(",") if x.strip())
    return str(raw)


def read_config_file(path) -> tuple[dict, list[str]]:
    values, problems = {}, []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{path}:{lineno}: expected key=value")
            continue
        k, v = (x.strip() for x in line.split("=", 1))
        key = KEY_BY_NAME.get(k.replace("-", "_"))
        if key is None:
            problems.append(f"{path}:{lineno}: unknown key {k!r}")
            continue
        try:
            values[key.name] = _parse_value(key, v)
        except ValueError as e:
            problems.append(f"{path}:{lineno}: {k}: {e}")
    return values, problems


class RunConfig:
    """Effective settings: built-in defaults < config file < flags."""

    def __init__(self, values: dict, explicit: set[str]):
        self._values = values
        self.explicit = explicit

    def __getattr__(self, name):
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def items(self):
        return self._values.items()

    def network_config(self, c: int, d: int, num_classes: int) -> NetworkConfig:
        return NetworkConfig(c=c, d=d, num_layers=self.layers, filter_sizes=self.filter_sizes,
                             kernels_per_size=self.kernels, k_top=self.k_top,
                             hidden_dim=self.hidden_dim, num_classes=num_classes,
                             dropout_keep_prob=self.dropout_keep)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, dropout_keep_prob=self.dropout_keep, l2_lambda=self.l2,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, seed=self.seed,
                           l2_embeddings=self.l2_embeddings)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(t=self.context, noise_k=self.noise_k, epochs=self.pretrain_epochs,
                              lr=self.pretrain_lr, alpha=self.noise_alpha,
                              init_range=self.init_range)

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


_REQUIRED = {
    "stats": ("embeddings",),
    "mutual-learn": ("embeddings", "output_dir"),
    "pretrain": ("corpus", "checkpoint", "seed"),
    "train": ("train", "checkpoint", "seed"),
    "eval": ("checkpoint",),
    "gradcheck": (),
}
_INPUT_PATHS = ("init_checkpoint", "train", "dev", "test", "data", "corpus")


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    problems = []
    values = {k.name: k.default for k in KEYS}
    explicit = set()
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError([f"config file not found: {args.config}"])
        file_vals, file_problems = read_config_file(args.config)
        values.update(file_vals)
        explicit.update(file_vals)
        problems += file_problems
    for key in KEYS:
        raw = getattr(args, key.name, None)
        if raw is None:
            continue
        try:
            values[key.name] = _parse_value(key, raw)
            explicit.add(key.name)
        except ValueError as e:
            problems.append(f"{key.option}: {e}")

    for name in _REQUIRED[command]:
        if values[name] in (None, ()):
            problems.append(f"{command}: missing required setting {KEY_BY_NAME[name].option}")
    if command == "mutual-learn" and 0 < len(values["embeddings"]) < 2:
        problems.append("mutual-learn: needs at least two embedding files")
    if command == "stats" and not any(values[k] for k in ("train", "dev", "test", "data", "corpus")):
        problems.append("stats: give a vocabulary source (--train/--dev/--test/--data/--corpus)")
    if command == "eval" and not (values["data"] or values["test"]):
        problems.append("eval: missing required setting --data")
    paths = [values[k] for k in _INPUT_PATHS if values[k]] + list(values["embeddings"])
    if command == "eval" and values["checkpoint"]:
        paths.append(values["checkpoint"])
    for p in paths:
        if not Path(p).is_file():
            problems.append(f"file not found: {p}")
    if values["precision"] not in (32, 64):
        problems.append("--precision must be 32 or 64")
    for name in ("lr", "l2", "pretrain_lr"):
        if values[name] < 0:
            problems.append(f"{KEY_BY_NAME[name].option} must be >= 0")
    if not 0 < values["dropout_keep"] <= 1:
        problems.append("--dropout-keep must be in (0, 1]")
    for name in ("batch_size", "layers", "kernels", "k_top", "dim", "channels", "context",
                 "noise_k", "max_epochs", "patience"):
        if values[name] < 1:
            problems.append(f"{KEY_BY_NAME[name].option} must be >= 1")
    fs = values["filter_sizes"]
    if not fs or min(fs) < 1 or any(a >= b for a, b in zip(fs, fs[1:])):
        problems.append("--filter-sizes must be positive and strictly increasing")
    if problems:
        raise ConfigError(problems)
    return RunConfig(values, explicit)


# --- helpers -----------------------------------------------------------------

def _load_split(path, split, cfg: RunConfig, num_classes=None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        try:
            return load_tsv(fh, num_classes=num_classes, split=split, tweet=cfg.tweet_normalize)
        except MVCNNError as e:
            raise type(e)(f"{path}: {e}") from None


def _datasets(cfg: RunConfig) -> dict[str, Dataset]:
    out = {}
    for split in ("train", "dev", "test"):
        if getattr(cfg, split):
            out[split] = _load_split(getattr(cfg, split), split, cfg)
    if out:
        k = max(ds.num_classes for ds in out.values())
        for ds in out.values():
            ds.num_classes = k
    return out


def _corpus(cfg: RunConfig) -> list[list[str]]:
    if not cfg.corpus:
        return []
    with open(cfg.corpus, encoding="utf-8") as fh:
        return load_corpus(fh, tweet=cfg.tweet_normalize)


def _versions(cfg: RunConfig):
    return [load_embedding_file(p) for p in cfg.embeddings]


def _fresh_model(cfg: RunConfig, vocab: Vocabulary, num_classes: int,
                 rng: np.random.Generator) -> MVCNN:
    versions = _versions(cfg)
    imputed = None
    if len(versions) >= 2 and cfg.mutual_learning:
        imputed = complete_all(versions, cfg.ridge)
        log.info("mutual learning imputed %d entries", imputed.imputed_count())
    if versions:
        c, d = len(versions), versions[0].dim
    else:
        c, d = cfg.channels, cfg.dim
    net = cfg.network_config(c, d, num_classes)
    return build_model(vocab, net, rng, versions=versions or None, imputed=imputed,
                       init_range=cfg.init_range, dtype=cfg.dtype)


def _echo(cfg: RunConfig, command: str, stream=None) -> None:
    """Write the effective settings to stderr, one ``# key = value`` per line."""
    stream = stream or sys.stderr
    stream.write(f"# mvcnn {command}\n")
    for k, v in cfg.items():
        shown = ",".join(map(str, v)) if isinstance(v, tuple) else v
        stream.write(f"# {k} = {shown}\n")


# --- commands ----------------------------------------------------------------

def cmd_stats(cfg: RunConfig) -> int:
    sents = _corpus(cfg)
    for ds in _datasets(cfg).values():
        sents += ds.sentences
    if cfg.data:
        sents += _load_split(cfg.data, "data", cfg).sentences
    vocab = set(w for s in sents for w in s)
    stats = coverage_stats(_versions(cfg), vocab)
    print(stats.format())
    return 0


def cmd_mutual_learn(cfg: RunConfig) -> int:
    versions = _versions(cfg)
    completed = complete_all(versions, cfg.ridge)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ver in completed.versions:
        with open(out / f"{ver.name}.txt", "w", encoding="utf-8", newline="\n") as fh:
            write_embeddings(ver, fh)
    with open(out / "provenance.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_provenance(completed, fh)
    print(f"vocabulary {len(completed.vocab)}  imputed entries {completed.imputed_count()}")
    for (i, j), pm in sorted(completed.projections.items()):
        print(f"projection {pm.source}->{pm.target}  shared {pm.n_train}  "
              f"residual {pm.train_residual:.6g}")
    return 0


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def cmd_pretrain(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    corpus = _corpus(cfg)
    if not corpus:
        raise MVCNNError(f"{cfg.corpus}: corpus is empty")
    datasets = _datasets(cfg)
    vocab = Vocabulary.build(corpus + [s for ds in datasets.values() for s in ds.sentences])
    num_classes = max([ds.num_classes for ds in datasets.values()] + [2])
    model = _fresh_model(cfg, vocab, num_classes, rng)
    result = run_pretraining([vocab.encode(s) for s in corpus], model, cfg.pretrain_config(), rng)
    for e, loss in enumerate(result.epoch_losses, 1):
        print(f"epoch\t{e}\tnce_loss\t{loss:.6f}")
    data = ckpt.dumps(model)
    Path(cfg.checkpoint).write_bytes(data)
    print(f"checkpoint {cfg.checkpoint} sha256 {_digest(data)}")
    return 0


def _reset_output_layer(model: MVCNN, num_classes: int, rng: np.random.Generator) -> None:
    from .autodiff import Parameter

    h = model.config.hidden_dim
    bound = np.sqrt(6.0 / (num_classes + h))
    model.config.num_classes = num_classes
    model.out_W = Parameter(rng.uniform(-bound, bound, size=(num_classes, h)))
    model.out_b = Parameter(np.zeros(num_classes))


def cmd_train(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    datasets = _datasets(cfg)
    num_classes = datasets["train"].num_classes
    if cfg.init_checkpoint:
        model = ckpt.load_checkpoint(cfg.init_checkpoint)
        arch = {"layers", "filter_sizes", "kernels", "k_top", "hidden_dim", "dim", "channels"}
        if cfg.explicit & arch:
            log.warning("architecture settings are taken from %s; ignoring %s",
                        cfg.init_checkpoint, sorted(cfg.explicit & arch))
        if model.config.num_classes != num_classes:
            log.warning("checkpoint has %d classes, data has %d: output layer reinitialized",
                        model.config.num_classes, num_classes)
            _reset_output_layer(model, num_classes, rng)
        missing = {w for ds in datasets.values() for s in ds.sentences for w in s} - set(model.table.vocab.words)
        if missing:
            log.warning("%d word(s) not in the checkpoint vocabulary map to <unk>", len(missing))
    else:
        sents = _corpus(cfg) + [s for ds in datasets.values() for s in ds.sentences]
        model = _fresh_model(cfg, Vocabulary.build(sents), num_classes, rng)
    report, blob = train_supervised(model, datasets, cfg.train_config())
    Path(cfg.checkpoint).write_bytes(blob)
    text = report.to_text()
    if cfg.report:
        Path(cfg.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"checkpoint {cfg.checkpoint} sha256 {_digest(blob)}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    model = ckpt.load_checkpoint(cfg.checkpoint)
    path = cfg.data or cfg.test
    ds = _load_split(path, "eval", cfg)
    acc = evaluate(model, ds)
    print(f"accuracy {acc:.6g}")
    return 0


def gradcheck_model(cfg: RunConfig | None = None, seed: int = 0, s: int = 5):
    """Toy model for gradient checking: c=2, d=4, two layers, sizes 3 and 5,
    two kernels each, unless ``cfg`` explicitly overrides them."""
    from .synthetic import vocabulary_words

    explicit = cfg.explicit if cfg is not None else set()
    pick = lambda name, toy: getattr(cfg, name) if name in explicit else toy  # noqa: E731
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.build([vocabulary_words(20)])
    net = NetworkConfig(c=pick("channels", 2), d=pick("dim", 4), num_layers=pick("layers", 2),
                        filter_sizes=pick("filter_sizes", (3, 5)), kernels_per_size=pick("kernels", 2),
                        k_top=pick("k_top", 4), hidden_dim=pick("hidden_dim", None), num_classes=3)
    model = build_model(vocab, net, rng, init_range=0.5)
    ids = rng.integers(2, len(vocab), size=s)
    return model, ids, rng


def gradcheck_reports(model: MVCNN, ids: np.ndarray, rng: np.random.Generator,
                      l2: float = 5e-3, max_coords: int = 12, eps: float = 1e-5,
                      order: int = 2, smooth_retries: int = 0) -> dict:
    """Finite-difference reports for the supervised loss (with a fixed
    dropout mask and L2) and for the pretraining NCE loss."""
    from .autodiff import l2_regularize, l2_value
    from .pretrain import PretrainTables, draw_noise, nce_step, nce_value

    mask = (rng.random(model.config.hidden_dim) < 0.8) / 0.8
    label = int(rng.integers(model.config.num_classes))
    reg = model.regularized_parameters()
    params = model.named_parameters()

    def supervised():
        loss, _ = model.loss_and_backward(ids, label, mask=mask)
        return loss + l2_regularize(reg, l2)

    def supervised_value():
        return model.loss(ids, label, mask=mask) + l2_value(reg, l2)

    fd = dict(max_coords=max_coords, rng=rng, eps=eps, order=order, smooth_retries=smooth_retries)
    sup = finite_difference_report(supervised, params, value_fn=supervised_value, **fd)

    V = len(model.table.vocab)
    tables = PretrainTables.random(V, model.config.hidden_dim, rng, 0.5)
    dist = build_noise_distribution([ids], V)
    pos = len(ids) // 2
    noise = draw_noise(dist, int(ids[pos]), 10, rng)
    all_params = list(params.values()) + tables.parameters()

    def pretraining():
        return nce_step(model, tables, ids, pos, noise, dist.probs, 3)

    def pretraining_value():
        return nce_value(model, tables, ids, pos, noise, dist.probs, 3)

    pre = finite_difference_report(pretraining, all_params, value_fn=pretraining_value, **fd)
    return {"supervised": sup, "pretraining": pre}


def gradcheck_errors(model: MVCNN, ids: np.ndarray, rng: np.random.Generator,
                     **kw) -> dict[str, float]:
    """Max relative error per loss; see :func:`gradcheck_reports`."""
    return {k: r.max_rel_error for k, r in gradcheck_reports(model, ids, rng, **kw).items()}


def cmd_gradcheck(cfg: RunConfig) -> int:
    model, ids, rng = gradcheck_model(cfg, seed=cfg.seed if cfg.seed is not None else 0)
    errs = gradcheck_errors(model, ids, rng, l2=cfg.l2)
    worst = max(errs.values())
    for name, e in errs.items():
        print(f"{name}\tmax_rel_error\t{e:.3e}")
    print(f"max_rel_error {worst:.3e} tolerance {cfg.gradcheck_tol:g}")
    return 0 if worst < cfg.gradcheck_tol else 2


HANDLERS = {
    "stats": cmd_stats,
    "mutual-learn": cmd_mutual_learn,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def _fmt_default(key: Key) -> str:
    if isinstance(key.default, tuple):
        return ",".join(map(str, key.default)) or "none"
    return "none" if key.default is None else str(key.default).lower() if key.kind == "bool" else str(key.default)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value config file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    group = common.add_argument_group("settings (config-file key = flag without dashes)")
    for key in KEYS:
        text = f"{key.help} [key: {key.name}, default: {_fmt_default(key)}]"
        if key.kind == "bool":
            group.add_argument(key.option, dest=key.name, action="store_const", const=True,
                               default=None, help=text)
        elif key.kind == "paths":
            group.add_argument(key.option, dest=key.name, nargs="+", metavar="PATH",
                               default=None, help=text)
        else:
            group.add_argument(key.option, dest=key.name, default=None,
                               metavar=key.kind.upper(), help=text)
    epilog = "config keys and defaults:\n" + "\n".join(
        f"  {k.name} = {_fmt_default(k)}" for k in KEYS)
    parser = argparse.ArgumentParser(
        prog="mvcnn", description="Multichannel variable-size CNN sentence classifier.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "stats": "vocabulary coverage of each embedding version",
        "mutual-learn": "impute unknown words across embedding versions",
        "pretrain": "unsupervised NCE pretraining on a corpus",
        "train": "supervised training with dev-set model selection",
        "eval": "accuracy of a checkpoint on a dataset",
        "gradcheck": "finite-difference check of all gradients",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.command, args)
    except ConfigError as e:
        for p in e.problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    _echo(cfg, args.command)
    try:
        return HANDLERS[args.command](cfg)
    except (MVCNNError, ValueError, KeyError, FloatingPointError, ArithmeticError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
