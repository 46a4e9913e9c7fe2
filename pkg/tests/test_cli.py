import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from dataforge.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(42)

    img = str(root / "img.png")
    Image.fromarray(rng.integers(0, 256, size=(224, 224), dtype=np.uint8), "L").save(img)
    wav = str(root / "utt.npy")
    np.save(wav, rng.normal(scale=0.1, size=32000).astype(np.float32))  # 2 s

    # enough audio to train a small codebook stack
    train_wav = str(root / "train.npy")
    np.save(train_wav, rng.normal(scale=0.1, size=16000 * 4).astype(np.float32))

    manifest = str(root / "manifest.jsonl")
    entries = [
        {"id": "i0", "kind": "image_caption", "text": "a cat", "paths": [img],
         "width": 224, "height": 224, "clip_score": 0.3, "language": "en",
         "direction": "to_text"},
        {"id": "t0", "kind": "text", "text": "language data " * 10},
        {"id": "s0", "kind": "speech_transcript", "text": "hello", "paths": [wav],
         "duration_s": 2.0, "direction": "to_text"},
    ]
    with open(manifest, "w") as fh:
        for doc in entries:
            fh.write(json.dumps(doc) + "\n")
    return {"root": root, "manifest": manifest, "train_wav": train_wav}


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def test_full_cli_flow(workspace, capsys, tmp_path):
    root = workspace["root"]
    vocab = str(root / "layout.json")
    rvq = str(root / "rvq.bin")
    samples = str(root / "samples.jsonl")
    shards_dir = str(root / "shards")

    code, doc = run_cli(capsys, "build-vocab", "--out", vocab)
    assert code == 0 and doc["total_size"] == 260 + 12292

    code, doc = run_cli(
        capsys, "train-rvq", "--audio", workspace["train_wav"],
        "--layers", "4", "--codebook-size", "16", "--iters", "10", "--out", rvq,
    )
    assert code == 0 and doc["layers"] == 4 and doc["codebook_size"] == 16

    code, doc = run_cli(
        capsys, "tokenize", "--manifest", workspace["manifest"], "--vocab", vocab,
        "--rvq", rvq, "--stage", "II", "--seed", "5", "--out", samples,
    )
    assert code == 0 and doc["samples"] == 3 and doc["dropped"] == []

    code, doc = run_cli(
        capsys, "pack", "--samples", samples, "--vocab", vocab,
        "--ratios", "1:1:0:1", "--num-batches", "3", "--out-dir", shards_dir,
    )
    assert code == 0 and doc["batches"] == 3
    shard_paths = doc["shards"]
    assert shard_paths

    code, doc = run_cli(capsys, "validate", *shard_paths, "--vocab", vocab)
    assert code == 0 and doc["ok"]

    code, doc = run_cli(capsys, "stats", *shard_paths, "--vocab", vocab)
    assert code == 0 and doc["batches"] == 3

    tokens_file = str(root / "tokens.json")
    with open(samples) as fh:
        first = json.loads(fh.readline())
    with open(tokens_file, "w") as fh:
        json.dump(first["tokens"], fh)
    code, doc = run_cli(capsys, "detokenize", "--tokens", tokens_file, "--vocab", vocab)
    assert code == 0 and doc["segments"]


def test_cli_determinism(workspace, capsys):
    root = workspace["root"]
    vocab = str(root / "layout.json")
    rvq = str(root / "rvq.bin")
    digests = []
    for tag in ("r1", "r2"):
        samples = str(root / f"samples-{tag}.jsonl")
        shards_dir = str(root / f"shards-{tag}")
        code, _ = run_cli(
            capsys, "tokenize", "--manifest", workspace["manifest"], "--vocab", vocab,
            "--rvq", rvq, "--stage", "I", "--seed", "11", "--out", samples,
        )
        assert code == 0
        code, doc = run_cli(
            capsys, "pack", "--samples", samples, "--vocab", vocab,
            "--ratios", "1:1:0:1", "--num-batches", "3", "--out-dir", shards_dir,
        )
        assert code == 0
        blob = b"".join(open(p, "rb").read() for p in doc["shards"])
        digests.append(hashlib.sha256(blob).hexdigest())
    assert digests[0] == digests[1]


def test_validate_exit_code_on_corruption(workspace, capsys):
    root = workspace["root"]
    vocab = str(root / "layout.json")
    shard = str(root / "shards" / "shard-00000.bin")
    corrupt = str(root / "corrupt.bin")
    raw = bytearray(open(shard, "rb").read())
    raw[-100] ^= 0x55
    open(corrupt, "wb").write(bytes(raw))
    code, doc = run_cli(capsys, "validate", corrupt, "--vocab", vocab)
    assert code == 1
    assert not doc["ok"]


def test_config_error_exit_code(capsys, tmp_path):
    code = main(["build-vocab", "--text-size", "0", "--out", str(tmp_path / "x.json")])
    assert code == 2
    code = main(["tokenize", "--manifest", str(tmp_path / "missing.jsonl"),
                 "--vocab", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o.jsonl")])
    assert code == 2


def test_config_file_defaults(workspace, capsys, tmp_path):
    root = workspace["root"]
    vocab = str(root / "layout.json")
    config = str(tmp_path / "config.json")
    with open(config, "w") as fh:
        json.dump({"stage": "III", "seed": 3}, fh)
    samples = str(tmp_path / "samples.jsonl")
    code, _ = run_cli(
        capsys, "--config", config, "tokenize", "--manifest", workspace["manifest"],
        "--vocab", vocab, "--rvq", str(root / "rvq.bin"), "--out", samples,
    )
    assert code == 0
    # Stage III switches the ASR template
    with open(samples) as fh:
        docs = [json.loads(line) for line in fh]
    speech_doc = [d for d in docs if d["source_type"] == "speech_text"][0]
    from dataforge import ByteTextCodec

    codec = ByteTextCodec()
    text_ids = [t for t in speech_doc["tokens"] if t < 256]
    assert "The transcription of this speech is:" in codec.decode(text_ids)
