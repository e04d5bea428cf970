"""Command-line front end: decompose, simulate, train, enhance, evaluate, experiment."""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ttnet.audio.features import FeatureGeometry
from ttnet.audio.pipeline import EnhancementModel, corpus_dataset, fit_stats
from ttnet.audio.scene import SINR_SNR_PRESETS, conditions, load_scene_spec, make_scene, reference_clean, simulate_multichannel
from ttnet.audio.wavio import Waveform, read_wav, write_wav
from ttnet.experiment import ExperimentConfig, ResultRow, format_table, judge, run_experiment
from ttnet.metrics import segmental_snr, si_sdr
from ttnet.nn import TrainConfig, build_network, count_params, train
from ttnet.tensor import ShapeError
from ttnet.tt import ModeFactorization, dense_param_count, reconstruct, save_tt, tt_param_count, tt_svd_decompose

log = logging.getLogger("ttnet")

MANIFEST_FORMAT = "ttnet.manifest"


class CliError(Exception):
    """A user-facing failure reported as one line with a nonzero exit status."""


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise CliError(f"expected a list of integers, got {text!r}") from None


def parse_modes(text: str) -> tuple[tuple, tuple]:
    """``"32,64:32,64"`` -> input modes and output modes."""
    if ":" not in text:
        raise CliError(f"--modes must look like IN:OUT, e.g. 32,64:32,64 (got {text!r})")
    left, right = text.split(":", 1)
    ins, outs = _ints(left), _ints(right)
    if len(ins) != len(outs) or not ins:
        raise CliError(f"input and output mode lists differ in length: {ins} vs {outs}")
    return ins, outs


def parse_ranks(text: Optional[str], order: int) -> Optional[tuple]:
    """Full rank list ``1,r2,..,1`` or just the ``order - 1`` inner ranks."""
    if text is None:
        return None
    ranks = _ints(text)
    if len(ranks) == order - 1:
        ranks = (1, *ranks, 1)
    if len(ranks) != order + 1:
        raise CliError(f"need {order - 1} inner ranks or {order + 1} boundary-inclusive ranks, got {ranks}")
    return ranks


# decompose


def cmd_decompose(args) -> int:
    path = Path(args.weights)
    if not path.exists():
        raise CliError(f"weights file not found: {path}")
    try:
        w = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    if w.ndim != 2:
        raise CliError(f"{path}: expected a 2-D weight matrix, got shape {w.shape}")
    ins, outs = parse_modes(args.modes)
    fact = ModeFactorization(ins, outs, parse_ranks(args.ranks, len(ins)))
    if (fact.in_dim, fact.out_dim) != w.shape:
        raise CliError(f"modes give a {fact.in_dim}x{fact.out_dim} matrix but {path} is {w.shape[0]}x{w.shape[1]}")
    tt = tt_svd_decompose(w, fact, rel_tol=args.tol)
    err = float(np.linalg.norm(reconstruct(tt) - w) / max(np.linalg.norm(w), np.finfo(float).tiny))
    if args.out:
        save_tt(args.out, tt)
    tt_n, dense_n = tt_param_count(tt), dense_param_count(fact)
    print(f"ranks\t{','.join(map(str, tt.ranks))}")
    print(f"tt_params\t{tt_n}")
    print(f"dense_params\t{dense_n}")
    print(f"compression\t{dense_n / tt_n:.4f}")
    print(f"relative_error\t{err:.6e}")
    return 0


# simulate


def _wav_pair(out: Path, split: str, index: int, noisy, clean) -> dict:
    noisy_path = Path(split) / f"utt{index:04d}_noisy.wav"
    clean_path = Path(split) / f"utt{index:04d}_clean.wav"
    write_wav(out / noisy_path, noisy)
    write_wav(out / clean_path, clean)
    return {"noisy": str(noisy_path), "clean": str(clean_path)}


def cmd_simulate(args) -> int:
    spec = load_scene_spec(args.scene)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    for split in ("train", "test"):
        (out / split).mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "seed": spec.seed,
        "channels": spec.channels,
        "sample_rate": spec.sample_rate,
        "presets": [{"sinr_db": sinr, "snr_db": snr} for sinr, snr in SINR_SNR_PRESETS],
        "train": [],
        "test": [],
    }
    train_conds = conditions(spec, spec.n_train)
    test_conds = conditions(spec, spec.n_test, offset=spec.n_train)
    if spec.test_snr_db is not None:
        test_conds = [(spec.test_snr_db, None)] * spec.n_test
    index = 0
    for split, conds in (("train", train_conds), ("test", test_conds)):
        for snr, sinr in conds:
            scene = make_scene(spec, index, snr, sinr)
            entry = _wav_pair(out, split, index, simulate_multichannel(scene), reference_clean(scene))
            entry.update(snr_db=snr, sinr_db=scene.sinr_db)
            manifest[split].append(entry)
            index += 1
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {index} utterances ({spec.channels} channels) to {out}")
    return 0


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise CliError(f"{path}: not a simulate manifest")
    return manifest, path.parent


def _read(path: Path) -> list[Waveform]:
    if not path.exists():
        raise CliError(f"WAV file not found: {path}")
    return read_wav(path)


def manifest_pairs(manifest: dict, root: Path, split: str) -> list:
    return [(_read(root / e["noisy"]), _read(root / e["clean"])[0]) for e in manifest[split]]


# train


def load_arch(path) -> tuple[dict, list[dict]]:
    """Architecture file: a ``[model]`` section plus ``[layer1]``, ``[layer2]``, ... in order."""
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise CliError(f"architecture file not found: {path}")
    if "model" not in parser:
        raise CliError(f"{path}: missing [model] section")
    model = dict(parser["model"])
    names = sorted((s for s in parser.sections() if s.startswith("layer")), key=lambda s: int(s[5:] or 0))
    if not names:
        raise CliError(f"{path}: no [layerN] sections")
    layers = []
    for name in names:
        sec = parser[name]
        kind = sec.get("kind", "dense")
        spec = {"kind": kind, "activation": sec.get("activation", "relu")}
        if kind == "dense":
            spec.update(in_dim=sec.getint("in_dim"), out_dim=sec.getint("out_dim"))
        elif kind == "tt":
            spec["input_modes"] = _ints(sec["input_modes"])
            spec["output_modes"] = _ints(sec["output_modes"])
            spec["ranks"] = parse_ranks(sec.get("ranks"), len(spec["input_modes"]))
        else:
            raise CliError(f"{path}: [{name}] has unknown kind {kind!r}")
        layers.append(spec)
    return model, layers


def cmd_train(args) -> int:
    manifest, root = load_manifest(args.manifest)
    model_sec, specs = load_arch(args.arch)
    if args.ranks is not None:
        for spec in specs:
            if spec["kind"] == "tt":
                spec["ranks"] = parse_ranks(args.ranks, len(spec["input_modes"]))
    channels = args.channels if args.channels is not None else int(model_sec.get("channels", manifest["channels"]))
    context = args.context if args.context is not None else int(model_sec.get("context", 5))
    geometry = FeatureGeometry(
        context=context,
        channels=channels,
        mode=model_sec.get("mode", "dense"),
        max_bin=int(model_sec.get("max_bin", 256)),
    )
    if channels > manifest["channels"]:
        raise CliError(f"manifest has {manifest['channels']} channels, {channels} requested")
    pairs = [(noisy[:channels], clean) for noisy, clean in manifest_pairs(manifest, root, "train")]
    net = build_network(specs, args.seed)
    if net.input_dim != geometry.input_dim or net.output_dim != geometry.output_dim:
        raise CliError(
            f"architecture maps {net.input_dim}->{net.output_dim} but the features are "
            f"{geometry.input_dim}->{geometry.output_dim} (bins {geometry.n_bins}, context {context}, channels {channels})"
        )
    stats = fit_stats([p[0] for p in pairs], [p[1] for p in pairs])
    ds = corpus_dataset(pairs, stats, geometry)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed)
    out = Path(args.out)
    loss_path = Path(args.loss_log) if args.loss_log else out.with_suffix(".loss.tsv")
    out.parent.mkdir(parents=True, exist_ok=True)
    loss_path.parent.mkdir(parents=True, exist_ok=True)
    with open(loss_path, "w") as fh:

        def record(epoch, loss):
            fh.write(f"{epoch}\t{loss:.17g}\n")
            fh.flush()
            log.info("epoch %d loss %.6f", epoch, loss)

        train(net, ds.inputs, ds.targets, cfg, callback=record)
    name = args.name or model_sec.get("name", out.stem)
    EnhancementModel(net, geometry, stats, name).save(out)
    print(f"{name}\tparams\t{count_params(net)}\tframes\t{len(ds)}")
    return 0


# enhance / evaluate


def _load_model(path) -> EnhancementModel:
    if not Path(path).exists():
        raise CliError(f"model not found: {path}")
    return EnhancementModel.load(path)


def cmd_enhance(args) -> int:
    model = _load_model(args.model)
    noisy = [w for p in args.noisy for w in _read(Path(p))]
    if len(noisy) < model.geometry.channels:
        raise CliError(f"model needs {model.geometry.channels} channels, got {len(noisy)}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_wav(args.out, model.enhance(noisy[: model.geometry.channels]))
    return 0


def _score(pairs) -> tuple[float, float]:
    sd, seg = [], []
    for est, ref in pairs:
        if len(est) != len(ref):
            raise CliError(f"length mismatch: {len(est)} vs {len(ref)} samples")
        sd.append(si_sdr(est, ref))
        seg.append(segmental_snr(est, ref))
    return float(np.mean(sd)), float(np.mean(seg))


def cmd_evaluate(args) -> int:
    rows = []
    if args.enhanced or args.clean:
        if not (args.enhanced and args.clean) or len(args.enhanced) != len(args.clean):
            raise CliError("--enhanced and --clean must be given the same number of times")
        pairs = [(_read(Path(e))[0], _read(Path(c))[0]) for e, c in zip(args.enhanced, args.clean)]
        rows.append(ResultRow(args.name, len(_read(Path(args.enhanced[0]))), 0, *_score(pairs)))
    if args.manifest:
        manifest, root = load_manifest(args.manifest)
        test = manifest_pairs(manifest, root, args.split)
        rows.append(ResultRow("noisy", manifest["channels"], 0, *_score([(n[0], c) for n, c in test])))
        for path in args.model or []:
            model = _load_model(path)
            b = model.geometry.channels
            scored = [(model.enhance(n[:b]), c) for n, c in test]
            rows.append(ResultRow(model.name, b, model.n_params, *_score(scored)))
    elif args.model:
        raise CliError("--model needs --manifest to know which mixtures to enhance")
    if not rows:
        raise CliError("nothing to evaluate: give --manifest or --enhanced/--clean")
    table = format_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    return 0


# experiment


def load_experiment_config(path: Optional[str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise CliError(f"experiment config not found: {path}")
    if "experiment" not in parser:
        raise CliError(f"{path}: missing [experiment] section")
    for key, text in parser["experiment"].items():
        if not hasattr(cfg, key):
            raise CliError(f"{path}: unknown experiment key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            value = parser["experiment"].getboolean(key)
        elif isinstance(current, tuple):
            value = tuple(type(current[0])(float(v)) if current else float(v) for v in text.replace(",", " ").split())
        else:
            value = type(current)(text)
        setattr(cfg, key, value)
    return cfg


def cmd_experiment(args) -> int:
    cfg = load_experiment_config(args.config)
    for key in ("seed", "epochs"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    if args.channels is not None:
        cfg.channels = _ints(args.channels)
    result = run_experiment(cfg)
    sys.stdout.write(result.table())
    verdicts = judge(result)
    for v in verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}\t{v.name}\t{v.detail}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.tsv").write_text(result.table())
        with open(out / "losses.tsv", "w") as fh:
            for row in result.rows:
                for epoch, loss in enumerate(row.losses, 1):
                    fh.write(f"{row.model}\t{row.channels}\t{epoch}\t{loss:.17g}\n")
        (out / "result.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    return 0 if all(v.passed for v in verdicts) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttnet", description="Tensor-train speech enhancement toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decompose", help="TT-SVD a dense weight matrix stored as .npy")
    d.add_argument("weights")
    d.add_argument("--modes", required=True, help="input and output modes, e.g. 32,64:32,64")
    d.add_argument("--ranks", help="inner ranks (e.g. 4) or full list (1,4,1); default unlimited")
    d.add_argument("--tol", type=float, default=0.0, help="relative Frobenius tolerance")
    d.add_argument("--out", help="write the TT checkpoint here")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("simulate", help="render a scene file into WAV pairs and a manifest")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a regression model on a simulated corpus")
    t.add_argument("manifest")
    t.add_argument("--arch", required=True, help="architecture file with [model] and [layerN] sections")
    t.add_argument("--out", required=True, help="model checkpoint path (.npz)")
    t.add_argument("--context", type=int, help="context radius M (2M+1 frames)")
    t.add_argument("--channels", type=int, help="number of input channels B")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ranks", help="override inner ranks of every TT layer")
    t.add_argument("--loss-log", help="per-epoch loss file (default: <out>.loss.tsv)")
    t.add_argument("--name", help="model name shown in tables")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="enhance a noisy (multi-channel) WAV with a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--noisy", required=True, nargs="+", help="WAV file(s); channels are taken in order")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enhance)

    v = sub.add_parser("evaluate", help="SI-SDR / segmental SNR table")
    v.add_argument("--manifest", help="score models on this corpus")
    v.add_argument("--split", default="test", choices=("train", "test"))
    v.add_argument("--model", action="append", help="model checkpoint (repeatable)")
    v.add_argument("--enhanced", action="append", help="enhanced WAV (repeatable, paired with --clean)")
    v.add_argument("--clean", action="append", help="clean reference WAV (repeatable)")
    v.add_argument("--name", default="input", help="row name for --enhanced/--clean pairs")
    v.add_argument("--out", help="also write the table here")
    v.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run the dense vs TT trade-off experiment")
    x.add_argument("--config", help="INI file with an [experiment] section")
    x.add_argument("--seed", type=int)
    x.add_argument("--epochs", type=int)
    x.add_argument("--channels", help="channel counts, e.g. 1,2")
    x.add_argument("--out", help="directory for table.tsv, losses.tsv and result.json")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ShapeError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
