import json
from pathlib import Path

import numpy as np
import pytest

from cganse import cli
from cganse.corpus import Manifest, Waveform, load_wav, save_wav
from cganse.dsp import analyze


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(d / "clean"), "--speakers", "6", "--utts", "3",
                     "--seed", "4", "--syllables", "3"]) == 0
    assert cli.main(["mix", "--manifest", str(d / "clean" / "manifest.jsonl"), "--noise", "white,cantine_like",
                     "--snr", "0,10", "--seed", "1", "--out", str(d / "mix")]) == 0
    return d


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_counts_and_reproducible(tmp_path):
    assert run("synth", "--out", tmp_path / "a", "--speakers", 2, "--utts", 3, "--seed", 7, "--syllables", 2) == 0
    assert run("synth", "--out", tmp_path / "b", "--speakers", 2, "--utts", 3, "--seed", 7, "--syllables", 2) == 0
    a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "manifest.jsonl").read_bytes()
    assert len(a.decode().splitlines()) == 6
    log = [json.loads(l) for l in (tmp_path / "a" / "runs.jsonl").read_text().splitlines()]
    assert log[0]["command"] == "synth" and log[0]["config"]["seed"] == 7
    assert log[0]["wall_time_s"] >= 0


def test_synth_invalid_dir(tmp_path, capsys):
    f = tmp_path / "file"
    f.write_text("x")
    assert run("synth", "--out", f, "--speakers", 2, "--utts", 1) != 0
    assert "error" in capsys.readouterr().err


def test_mix_conditions(corpus_dir, tmp_path):
    m = Manifest.read(corpus_dir / "mix" / "manifest.jsonl")
    mixed = [e for e in m if e.condition is not None]
    clean = [e for e in m if e.condition is None]
    assert len(mixed) == 2 * 2 * len(clean)
    per_utt = {}
    for e in mixed:
        per_utt.setdefault((e.clean_id, e.noise_type), set()).add(e.snr_db)
    assert all(v == {0.0, 10.0} for v in per_utt.values())
    src = corpus_dir / "clean" / "manifest.jsonl"
    assert run("mix", "--manifest", src, "--noise", "white", "--snr", "0,5,10,15,20",
               "--splits", "test", "--out", tmp_path / "g") == 0
    g = Manifest.read(tmp_path / "g" / "manifest.jsonl")
    tests = [e for e in g if e.condition is None and e.split == "test"]
    assert len([e for e in g if e.condition is not None]) == 5 * len(tests)


def test_mix_unknown_noise_exit_2(corpus_dir, tmp_path, capsys):
    assert run("mix", "--manifest", corpus_dir / "clean" / "manifest.jsonl", "--noise", "traffic",
               "--snr", "0", "--out", tmp_path) == 2
    assert "traffic" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, corpus_dir):
    assert run("bogus") == 2
    assert run("synth", "--speakers", 2) == 2
    wav = corpus_dir / "clean" / "wav"
    some = sorted(wav.iterdir())[0]
    assert run("enhance", "--method", "pix2pix", "--in", some, "--out", tmp_path / "o.wav") == 2
    assert run("enhance", "--method", "pix2pix", "--ckpt", tmp_path / "nope", "--in", some,
               "--out", tmp_path / "o.wav") == 2
    assert run("train", "--method", "pix2pix", "--front-end", "ng",
               "--manifest", corpus_dir / "mix" / "manifest.jsonl") == 2
    assert run("train", "--method", "pix2pix", "--front-end", "ns:traffic",
               "--manifest", corpus_dir / "mix" / "manifest.jsonl", "--out", tmp_path / "c") == 2


def test_config_file_and_unknown_keys(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nepochs = 3\nlr = 0.001  # inline\n\nseed=5\n")
    args = cli.build_parser().parse_args(["synth", "--out", "x", "--speakers", "2", "--utts", "1",
                                          "--config", str(cfg), "--set", "epochs=4"])
    c = cli.resolve_config(args)
    assert (c.epochs, c.lr, c.seed) == (4, 0.001, 5)
    bad = tmp_path / "bad.cfg"
    bad.write_text("epoch = 3\n")
    assert run("synth", "--out", tmp_path / "z", "--speakers", 2, "--utts", 1, "--config", bad) == 2
    assert run("synth", "--out", tmp_path / "z", "--speakers", 2, "--utts", 1, "--set", "lr=fast") == 2
    assert not (tmp_path / "z").exists()


def test_enhance_none_copies_and_lengths(corpus_dir, tmp_path):
    src = sorted((corpus_dir / "mix" / "wav").iterdir())[0]
    assert run("enhance", "--method", "none", "--in", src, "--out", tmp_path / "n.wav") == 0
    assert (tmp_path / "n.wav").read_bytes() == src.read_bytes()
    assert run("enhance", "--method", "mmse", "--in", src, "--out", tmp_path / "m.wav") == 0
    assert len(load_wav(tmp_path / "m.wav")) == len(load_wav(src))


def test_train_front_end_selection(corpus_dir, tmp_path):
    from cganse.checkpoint import ModelCheckpoint
    man = corpus_dir / "mix" / "manifest.jsonl"
    small = ["--set", "epochs=1", "--set", "side=16", "--set", "cap=8"]
    assert run("train", "--method", "pix2pix", "--front-end", "ng", "--manifest", man,
               "--out", tmp_path / "ng.ck", *small) == 0
    assert run("train", "--method", "pix2pix", "--front-end", "ns:white", "--manifest", man,
               "--out", tmp_path / "ns.ck", *small) == 0
    ng = ModelCheckpoint.load(tmp_path / "ng.ck")
    ns = ModelCheckpoint.load(tmp_path / "ns.ck")
    assert ng.extra["noise_types"] == ["cantine_like", "white"]
    assert ns.extra["noise_types"] == ["white"]
    assert ng.extra["n_utterances"] == 2 * ns.extra["n_utterances"]
    loss = (tmp_path / "ns.ck.loss.txt").read_text().splitlines()
    assert loss[0] == "iteration d_loss g_adv g_l1" and len(loss) > 1
    assert len(loss[1].split()) == 4

    src = sorted((corpus_dir / "mix" / "wav").iterdir())[0]
    assert run("enhance", "--method", "pix2pix", "--ckpt", tmp_path / "ns.ck", "--in", src,
               "--out", tmp_path / "p.wav") == 0
    assert len(load_wav(tmp_path / "p.wav")) == len(load_wav(src))


def test_train_dnnse(corpus_dir, tmp_path):
    man = corpus_dir / "mix" / "manifest.jsonl"
    assert run("train", "--method", "dnnse", "--front-end", "ns:white", "--manifest", man,
               "--out", tmp_path / "d.ck", "--set", "dnn_epochs=2", "--set", "dnn_hidden=32") == 0
    lines = (tmp_path / "d.ck.loss.txt").read_text().splitlines()
    assert lines[0] == "epoch train_mse val_mse lr" and len(lines) == 3
    src = sorted((corpus_dir / "mix" / "wav").iterdir())[0]
    assert run("enhance", "--method", "dnnse", "--ckpt", tmp_path / "d.ck", "--in", src,
               "--out", tmp_path / "d.wav") == 0
    assert len(load_wav(tmp_path / "d.wav")) == len(load_wav(src))


def test_eval_csv_and_table(corpus_dir, tmp_path, capsys):
    man = corpus_dir / "mix" / "manifest.jsonl"
    out = tmp_path / "r.csv"
    assert run("eval", "--manifest", man, "--front-ends", "none,mmse", "--out", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "front_end,noise,snr,stoi,seg_snr,lsd"
    # 2 front-ends x 2 noises x (2 SNRs + mean)
    assert len(rows) == 1 + 2 * 2 * 3
    table = capsys.readouterr().out
    assert "front_end" in table and "mmse" in table
    rec = json.loads((tmp_path / "runs.jsonl").read_text().splitlines()[-1])
    assert rec["command"] == "eval" and len(rec["input_hash"]) == 40


def test_asv_outputs(corpus_dir, tmp_path):
    man = corpus_dir / "mix" / "manifest.jsonl"
    out = tmp_path / "eer.csv"
    assert run("asv", "--manifest", man, "--protocol", "clean", "--out", out,
               "--set", "ubm_components=8", "--set", "ubm_final_iters=1") == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "noise,0,10,clean,mean"
    assert {l.split(",")[0] for l in lines[1:]} == {"cantine_like", "white"}
    scores = sorted(p.name for p in (tmp_path / "eer.csv.scores").iterdir())
    assert "clean.txt" in scores and "white_0dB.txt" in scores
    first = (tmp_path / "eer.csv.scores" / "white_0dB.txt").read_text().splitlines()[0].split()
    assert first[1] in ("target", "impostor")


def test_specgram(tmp_path):
    n = 16000
    save_wav(tmp_path / "z.wav", Waveform(np.zeros(n)))
    assert run("specgram", "--in", tmp_path / "z.wav", "--out", tmp_path / "z.pgm") == 0
    blob = (tmp_path / "z.pgm").read_bytes()
    t = analyze(Waveform(np.zeros(n))).n_frames
    head = f"P5\n{t} 256\n255\n".encode()
    assert blob.startswith(head)
    assert set(blob[len(head):]) == {0} and len(blob) == len(head) + 256 * t

    rng = np.random.default_rng(0)
    tt = np.arange(n) / 16000
    sig = 0.3 * np.sin(2 * np.pi * 500 * tt) + 1e-3 * rng.standard_normal(n)
    save_wav(tmp_path / "s.wav", Waveform(sig))
    assert run("specgram", "--in", tmp_path / "s.wav", "--out", tmp_path / "a.pgm") == 0
    assert run("specgram", "--in", tmp_path / "s.wav", "--out", tmp_path / "b.pgm") == 0
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    img = cli.spectrogram_image(load_wav(tmp_path / "s.wav"))
    # 500 Hz = bin 16; frequency ascends upward so it sits near the bottom row
    row = int(np.argmax(img[:, t // 2]))
    assert row == 255 - 16
    pytest.importorskip("PIL")
    assert run("specgram", "--in", tmp_path / "s.wav", "--out", tmp_path / "s.png") == 0
    from PIL import Image
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "s.png")), img)


def test_input_hash_is_git_blob_style(tmp_path):
    p = tmp_path / "f"
    p.write_bytes(b"hello\n")
    # `git hash-object` of "hello\n"
    assert cli._blob_hash(p.read_bytes()) == "ce013625030ba8dba906f756967f9e9ca394464a"
