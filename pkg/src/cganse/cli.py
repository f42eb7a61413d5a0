"""Command-line front end: ``cganse <command> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime failures.
Every run appends one JSON line (resolved config, input hash, wall time) to a
run log.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import corpus, dnnse, mmse, pix2pix
from .asv import AsvConfig, run_protocol
from .checkpoint import CheckpointError, ModelCheckpoint
from .corpus import NOISE_TYPES, Manifest, load_wav, save_wav
from .dsp import GAN_ROWS, analyze
from .metrics import build_report


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    seed: int = 0
    # pix2pix
    epochs: int = 10
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    g_steps: int = 2
    l1_weight: float = 100.0
    side: int = 64
    cap: int = 128
    # dnnse
    dnn_epochs: int = 30
    dnn_batch_size: int = 1024
    dnn_lr: float = 0.1
    dnn_momentum: float = 0.9
    dnn_hidden: int = 1024
    val_fraction: float = 0.1
    # asv
    ubm_components: int = 64
    ubm_iters: int = 5
    ubm_final_iters: int = 5
    relevance: float = 16.0
    # data selection
    train_split: str = "enhancer_train"
    test_split: str = "test"

    def update(self, pairs, origin):
        types = {f.name: type(getattr(self, f.name)) for f in fields(self)}
        for key, raw in pairs:
            if key not in types:
                raise UsageError(f"{origin}: unknown config key {key!r}")
            try:
                setattr(self, key, types[key](raw))
            except ValueError:
                raise UsageError(f"{origin}: bad value {raw!r} for {key}") from None
        return self


def parse_config_text(text, origin="config"):
    """``key = value`` lines; ``#`` starts a comment."""
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def resolve_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        cfg.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)), str(path))
    overrides = []
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides.append((k.strip(), v.strip()))
    if getattr(args, "seed", None) is not None:
        overrides.append(("seed", str(args.seed)))
    return cfg.update(overrides, "--set")


# ---------------------------------------------------------------- run log

def _blob_hash(data):
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hash(paths):
    """Git-style content hash over a set of files (tree of blob hashes)."""
    h = hashlib.sha1()
    for p in sorted(str(p) for p in paths):
        h.update(f"{Path(p).name} {_blob_hash(Path(p).read_bytes())}\n".encode())
    return h.hexdigest()


def manifest_inputs(path):
    m = Manifest.read(path, check_files=False)
    return [Path(path)] + [m.path(e) for e in m if m.path(e).exists()]


def append_run_log(path, record):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------- enhancers

class Enhancer:
    """Picklable front-end: loads its checkpoint lazily in each process."""

    def __init__(self, method, ckpt=None):
        if method not in ("none", "mmse", "pix2pix", "dnnse"):
            raise UsageError(f"unknown enhancement method {method!r}")
        if method in ("pix2pix", "dnnse"):
            if not ckpt:
                raise UsageError(f"method {method} needs a checkpoint")
            if not Path(ckpt).is_file():
                raise UsageError(f"checkpoint {ckpt} not found")
        self.method, self.ckpt = method, ckpt
        self._loaded = None

    def __getstate__(self):
        return {"method": self.method, "ckpt": self.ckpt, "_loaded": None}

    def _load(self):
        if self._loaded is None:
            ck = ModelCheckpoint.load(self.ckpt)
            if self.method == "pix2pix":
                self._loaded = (ck, pix2pix.generator_from_checkpoint(ck))
            else:
                self._loaded = (ck, dnnse.net_from_checkpoint(ck))
        return self._loaded

    def __call__(self, w):
        if self.method == "none":
            return w
        if self.method == "mmse":
            return mmse.enhance_mmse(w)
        ck, model = self._load()
        if self.method == "pix2pix":
            return pix2pix.enhance_pix2pix(w, ck, model)
        return dnnse.enhance_dnnse(w, ck, model)


def parse_front_end(spec):
    """``name=method[:ckpt]`` or ``method[:ckpt]``; returns (name, Enhancer|None)."""
    name, _, rest = spec.rpartition("=")
    method, _, ckpt = rest.partition(":")
    name = name or method
    enh = Enhancer(method, ckpt or None)
    return name, None if method == "none" else enh


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    if args.speakers < 2 or args.utts < 1:
        raise UsageError("need --speakers >= 2 and --utts >= 1")
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise corpus.CorpusError(f"{out} exists and is not a directory")
    m = corpus.synth_corpus(out, args.speakers, args.utts, cfg.seed, args.syllables)
    print(f"wrote {len(m)} utterances to {out / 'manifest.jsonl'}")
    return [], {"utterances": len(m)}


def _parse_snrs(text):
    try:
        snrs = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad SNR list {text!r}") from None
    if not snrs:
        raise UsageError("empty SNR list")
    return snrs


def cmd_mix(args, cfg):
    noises = [n.strip() for n in args.noise.split(",") if n.strip()]
    if args.noise == "all":
        noises = list(NOISE_TYPES)
    for n in noises:
        if n not in NOISE_TYPES:
            raise UsageError(f"unknown noise type {n!r}; choose from {', '.join(NOISE_TYPES)}")
    snrs = _parse_snrs(args.snr)
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest {args.manifest} not found")
    src = Manifest.read(args.manifest)
    clean = Manifest([e for e in src if e.condition is None], src.root)
    splits = set(args.splits.split(",")) if args.splits else None
    out = Path(args.out)
    mixed = [corpus.mix_manifest(clean, out, n, snrs, cfg.seed, splits) for n in noises]
    merged = corpus.merge_manifests(clean, *mixed, root=out)
    merged.save(out / "manifest.jsonl")
    n_mixed = sum(len(m) for m in mixed)
    print(f"wrote {n_mixed} mixtures ({len(noises)} noise types x {len(snrs)} SNRs) to {out / 'manifest.jsonl'}")
    return manifest_inputs(args.manifest), {"mixtures": n_mixed}


def training_waves(manifest, front_end, split):
    """(noisy, clean) waveform pairs of the training split for a front-end:
    ``ns:<noise>`` keeps one noise type, ``ng`` keeps every type present."""
    if front_end == "ng":
        keep = None
    elif front_end.startswith("ns:") and front_end[3:] in NOISE_TYPES:
        keep = front_end[3:]
    else:
        raise UsageError(f"front-end must be 'ng' or 'ns:<noise>', got {front_end!r}")
    by_id = manifest.by_id()
    entries = [e for e in manifest if e.condition is not None and e.split == split
               and (keep is None or e.noise_type == keep)]
    if not entries:
        raise UsageError(f"no mixtures in split {split!r} for front-end {front_end}")
    waves = []
    for e in entries:
        if e.clean_id not in by_id:
            raise corpus.CorpusError(f"{e.utterance_id}: clean reference {e.clean_id!r} missing")
        waves.append((manifest.load(e), manifest.load(by_id[e.clean_id])))
    return waves, sorted({e.noise_type for e in entries})


def cmd_train(args, cfg):
    if not args.out:
        raise UsageError("--out checkpoint path is required")
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest {args.manifest} not found")
    manifest = Manifest.read(args.manifest)
    waves, noises = training_waves(manifest, args.front_end, cfg.train_split)
    loss_log = Path(args.loss_log or str(args.out) + ".loss.txt")
    lines = []
    if args.method == "pix2pix":
        tc = pix2pix.TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size, g_steps_per_iter=cfg.g_steps,
            l1_weight=cfg.l1_weight, lr=cfg.lr, beta1=cfg.beta1, seed=cfg.seed, side=cfg.side, cap=cfg.cap,
            front_end_kind="noise-general" if args.front_end == "ng" else "noise-specific",
        )
        pairs, norm = pix2pix.prepare_pairs(waves, cfg.side)
        ck = pix2pix.train(pairs, tc, norm, log=lambda r: lines.append(r.line()))
        header = "iteration d_loss g_adv g_l1"
    else:
        dc = dnnse.DnnSeConfig(cfg.dnn_epochs, cfg.dnn_batch_size, cfg.dnn_lr, cfg.dnn_momentum,
                               cfg.val_fraction, cfg.seed, cfg.dnn_hidden)
        ck = dnnse.train_dnnse(dnnse.prepare_data(waves), dc,
                               log=lambda r: lines.append(f"{r.epoch} {r.train_mse:.6f} {r.val_mse:.6f} {r.lr:.6g}"))
        header = "epoch train_mse val_mse lr"
    ck.extra = {**ck.extra, "front_end": args.front_end, "noise_types": noises, "n_utterances": len(waves)}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ck.save(args.out)
    loss_log.write_text(header + "\n" + "".join(l + "\n" for l in lines), encoding="utf-8")
    print(f"trained {args.method} ({args.front_end}, noises: {', '.join(noises)}) on {len(waves)} mixtures -> {args.out}")
    return manifest_inputs(args.manifest), {"noise_types": noises, "n_utterances": len(waves)}


def cmd_enhance(args, cfg):
    enh = Enhancer(args.method, args.ckpt)
    src = Path(getattr(args, "in"))
    if not src.is_file():
        raise UsageError(f"input {src} not found")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    if args.method == "none":
        shutil.copyfile(src, args.out)
    else:
        w = load_wav(src)
        save_wav(args.out, enh(w))
    inputs = [src] + ([Path(args.ckpt)] if args.ckpt else [])
    return inputs, {}


def cmd_eval(args, cfg):
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest {args.manifest} not found")
    front_ends = dict(parse_front_end(s) for s in args.front_ends.split(",") if s.strip())
    if not front_ends:
        raise UsageError("no front-ends given")
    m = Manifest.read(args.manifest)
    clean = Manifest([e for e in m if e.condition is None], m.root)
    noisy = Manifest([e for e in m if e.condition is not None and e.split == cfg.test_split], m.root)
    if not len(noisy):
        raise UsageError(f"no mixtures in split {cfg.test_split!r}")
    report = build_report(noisy, clean, front_ends, jobs=args.jobs)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_table("stoi"))
    ckpts = [Path(e.ckpt) for e in front_ends.values() if e is not None and e.ckpt]
    return manifest_inputs(args.manifest) + ckpts, {"front_ends": sorted(front_ends)}


def cmd_asv(args, cfg):
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest {args.manifest} not found")
    name, enh = parse_front_end(args.enhancer)
    m = Manifest.read(args.manifest)
    clean = Manifest([e for e in m if e.condition is None], m.root)
    noisy = Manifest([e for e in m if e.condition is not None], m.root)
    acfg = AsvConfig(cfg.ubm_components, cfg.ubm_iters, cfg.ubm_final_iters, cfg.relevance)
    table = run_protocol(clean, noisy, enh, args.protocol, acfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_csv(), encoding="utf-8")
    scores = Path(args.scores or str(out) + ".scores")
    scores.mkdir(parents=True, exist_ok=True)
    for key in table.trials:
        tag = key if isinstance(key, str) else f"{key[0]}_{key[1]:g}dB"
        (scores / f"{tag}.txt").write_text(table.score_lines(key), encoding="utf-8")
    sys.stdout.write(table.to_csv())
    inputs = manifest_inputs(args.manifest) + ([Path(enh.ckpt)] if enh is not None and enh.ckpt else [])
    return inputs, {"front_end": name, "protocol": args.protocol}


# ---------------------------------------------------------------- spectrogram images

DYNAMIC_RANGE_DB = 80.0


def spectrogram_image(w):
    """8-bit log-magnitude image, 256 rows with the lowest frequency at the
    bottom and one column per frame; silence maps to black."""
    mag = analyze(w).mag[:GAN_ROWS]
    top = mag.max()
    if top <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    db = 20.0 * np.log10(np.maximum(mag / top, 10 ** (-DYNAMIC_RANGE_DB / 20)))
    img = np.round((db + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB * 255.0)
    return np.flipud(img).astype(np.uint8)


def pgm_bytes(img):
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def cmd_specgram(args, cfg):
    src = Path(getattr(args, "in"))
    if not src.is_file():
        raise UsageError(f"input {src} not found")
    img = spectrogram_image(load_wav(src))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise UsageError("PNG output needs Pillow; use a .pgm path") from None
        Image.fromarray(img, mode="L").save(out, format="PNG")
    else:
        out.write_bytes(pgm_bytes(img))
    return [src], {"width": img.shape[1], "height": img.shape[0]}


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="cganse", description="Speech enhancement and evaluation pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--run-log", help="JSON-lines run log (default: runs.jsonl beside the output)")
        return sp

    sp = common(sub.add_parser("synth", help="render a synthetic speaker corpus"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--speakers", type=int, required=True)
    sp.add_argument("--utts", type=int, required=True)
    sp.add_argument("--syllables", type=int, default=6)

    sp = common(sub.add_parser("mix", help="add noise at a list of SNRs"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--noise", required=True, help="noise type, comma list, or 'all'")
    sp.add_argument("--snr", required=True, help="comma-separated SNRs in dB")
    sp.add_argument("--out", required=True)
    sp.add_argument("--splits", help="comma list of splits to mix (default all)")

    sp = common(sub.add_parser("train", help="train an enhancement front-end"))
    sp.add_argument("--method", choices=("pix2pix", "dnnse"), required=True)
    sp.add_argument("--front-end", required=True, help="ng or ns:<noise>")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.add_argument("--loss-log")

    sp = common(sub.add_parser("enhance", help="enhance one WAV file"))
    sp.add_argument("--method", required=True, help="none, mmse, pix2pix or dnnse")
    sp.add_argument("--ckpt")
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)

    sp = common(sub.add_parser("eval", help="STOI / segSNR / LSD report over the test grid"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--front-ends", required=True, help="comma list of [name=]method[:ckpt]")
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1)

    sp = common(sub.add_parser("asv", help="GMM-UBM verification EER grid"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--protocol", choices=("clean", "multi"), default="clean")
    sp.add_argument("--enhancer", default="none", help="[name=]method[:ckpt]")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scores", help="directory for per-cell score files")

    sp = common(sub.add_parser("specgram", help="log-magnitude spectrogram image"))
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    return p


COMMANDS = {
    "synth": cmd_synth, "mix": cmd_mix, "train": cmd_train, "enhance": cmd_enhance,
    "eval": cmd_eval, "asv": cmd_asv, "specgram": cmd_specgram,
}


def main(argv=None):
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        inputs, info = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"cganse: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, CheckpointError) as exc:
        print(f"cganse: error: {exc}", file=sys.stderr)
        return 1
    record = {
        "command": args.command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("command",)},
        "config": asdict(cfg),
        "input_hash": input_hash(inputs) if inputs else None,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        **info,
    }
    out = Path(args.out) if getattr(args, "out", None) else Path(".")
    log = Path(args.run_log) if args.run_log else (out if out.is_dir() else out.parent) / "runs.jsonl"
    try:
        append_run_log(log, record)
    except OSError as exc:
        print(f"cganse: cannot write run log: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
