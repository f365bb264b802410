"""Synthetic paired corpora generated from a shared low-dimensional latent.

Each pair draws a latent vector ``z``; the audio view is ``z @ A`` and the
text view ``z @ B`` for fixed random maps ``A`` and ``B``, plus per-frame
Gaussian noise. Perfect alignment is achievable, which makes these corpora
useful as an end-to-end oracle for training.
"""
import argparse
import os

import numpy as np

from .data_model import (Dataset, EmbeddingSequence, Modality, NoiseTier, PairedExample, Split,
                         write_embedding_file, write_manifest)


def _views(rng, latent, maps, noise, max_frames):
    seqs = []
    for z in latent:
        t = int(rng.integers(1, max_frames + 1))
        frames = z @ maps + noise * rng.standard_normal((t, maps.shape[1]))
        seqs.append(frames.astype(np.float32))
    return seqs


def make_pairs(n_pairs=256, latent_dim=16, audio_dim=2048, text_dim=768, noise=0.05,
               text_noise=None, seed=0, max_frames=4, map_seed=None):
    """Return ``(audio_seqs, text_seqs)`` lists of float32 ``T x F`` arrays."""
    rng = np.random.default_rng(seed)
    map_rng = np.random.default_rng(seed if map_seed is None else map_seed)
    audio_map = map_rng.standard_normal((latent_dim, audio_dim)) / np.sqrt(latent_dim)
    text_map = map_rng.standard_normal((latent_dim, text_dim)) / np.sqrt(latent_dim)
    latent = rng.standard_normal((n_pairs, latent_dim))
    audio = _views(rng, latent, audio_map, noise, max_frames)
    text = _views(rng, latent, text_map, noise if text_noise is None else text_noise, max_frames)
    return audio, text


def default_splits(n_pairs, n_val=32, n_test=32):
    n_train = n_pairs - n_val - n_test
    return [Split.TRAIN] * n_train + [Split.VALIDATION] * n_val + [Split.TEST] * n_test


def make_dataset(name="synthetic", n_pairs=256, splits=None, noise_tier=NoiseTier.CLEAN,
                 id_prefix="", **kw):
    """In-memory synthetic :class:`Dataset`; one caption per audio, 192/32/32 split by default."""
    audio, text = make_pairs(n_pairs=n_pairs, **kw)
    splits = default_splits(n_pairs) if splits is None else splits
    examples = []
    for i, (a, t, sp) in enumerate(zip(audio, text, splits)):
        aid = f"{id_prefix}a{i:05d}"
        examples.append(PairedExample(
            f"{id_prefix}p{i:05d}",
            EmbeddingSequence(aid, Modality.AUDIO, a),
            EmbeddingSequence(f"{id_prefix}t{i:05d}", Modality.TEXT, t),
            aid, sp))
    return Dataset(name, examples, noise_tier)


def write_corpus(out_dir, name, dataset):
    """Write a dataset's embeddings under ``out_dir/name/`` plus ``out_dir/name.jsonl``."""
    sub = os.path.join(out_dir, name)
    os.makedirs(sub, exist_ok=True)
    records = []
    for ex in dataset.examples:
        a_rel = os.path.join(name, f"{ex.audio.item_id}.xmeb")
        t_rel = os.path.join(name, f"{ex.text.item_id}.xmeb")
        write_embedding_file(os.path.join(out_dir, a_rel), ex.audio)
        write_embedding_file(os.path.join(out_dir, t_rel), ex.text)
        records.append({"pair_id": ex.pair_id, "audio_id": ex.label, "audio_embedding": a_rel,
                        "text_id": ex.text.item_id, "text_embedding": t_rel, "split": ex.split.value})
    path = os.path.join(out_dir, f"{name}.jsonl")
    write_manifest(path, records)
    return path


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m xmodal.synthetic",
                                 description="Write synthetic clean/noisy manifests for trying the CLI.")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pairs", type=int, default=256)
    ap.add_argument("--noisy-pairs", type=int, default=0, help="also write a noisy corpus of this size")
    ap.add_argument("--audio-dim", type=int, default=2048)
    ap.add_argument("--text-dim", type=int, default=768)
    args = ap.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    common = dict(audio_dim=args.audio_dim, text_dim=args.text_dim, map_seed=args.seed)
    clean = make_dataset("clean", args.pairs, seed=args.seed, **common)
    print(write_corpus(args.out_dir, "clean", clean))
    if args.noisy_pairs:
        noisy = make_dataset("noisy", args.noisy_pairs, splits=[Split.TRAIN] * args.noisy_pairs,
                             noise_tier=NoiseTier.NOISY, id_prefix="n", seed=args.seed + 1,
                             noise=0.3, **common)
        print(write_corpus(args.out_dir, "noisy", noisy))


if __name__ == "__main__":
    main()
