import math

import numpy as np
from oracles import brute_force_codes, vq_fd_worst
import pytest
import torch

from chainact.codecs import Latent, serialize_abstracted
from chainact.errors import ConfigError, EmptyCodebook, InvalidCode, UntrainedModel
from chainact.latent_vq import (
    GROUP_SIZES,
    MOTIFS,
    VQConfig,
    VQModel,
    checkpoint_from_json,
    checkpoint_json,
    codebook_bytes,
    decode_factors,
    decode_latent,
    encode_actions,
    encode_codes,
    factors_to_features,
    label_windows,
    load_checkpoint,
    motif_corpus,
    motif_window,
    perplexity,
    quantize,
    reconstruction_rate,
    save_checkpoint,
    train_vq,
    trajectory_windows,
    vq_loss,
    window_factors,
)

MOTIF_CFG = VQConfig(codebook_size=16, epochs=200, seed=0)


@pytest.fixture(scope="module")
def motif_model():
    train, _ = motif_corpus(repeats=40, seed=0)
    return train_vq(train, MOTIF_CFG)


def random_factors(rng, n, L):
    return np.stack([rng.integers(0, s, size=(n, L)) for s in GROUP_SIZES], axis=-1)


# -- quantize --------------------------------------------------------------


def test_quantize_matches_linear_scan(rng):
    codebook = torch.from_numpy(rng.normal(size=(64, 32)))
    z = torch.from_numpy(rng.normal(size=(1000, 32)))
    code, z_q = quantize(z, codebook)
    assert np.array_equal(code.numpy(), brute_force_codes(z.numpy(), codebook.numpy()))
    assert torch.equal(z_q, codebook[code])


def test_quantize_edge_cases(rng):
    cb = torch.from_numpy(rng.normal(size=(10, 4)))
    code, zq = quantize(cb[7].clone(), cb)
    assert int(code) == 7 and float((zq - cb[7]).pow(2).sum()) == 0.0
    assert int(quantize(torch.ones(4), cb[:1])[0]) == 0
    dup = torch.stack([cb[3], cb[3], cb[1]])
    assert int(quantize(cb[3].clone(), dup)[0]) == 0  # lowest index wins ties
    with pytest.raises(EmptyCodebook):
        quantize(torch.ones(4), torch.zeros(0, 4))


# -- loss ------------------------------------------------------------------


def test_fresh_reconstruction_is_near_uniform(rng):
    torch.manual_seed(0)
    model = VQModel(VQConfig())
    t = torch.from_numpy(random_factors(rng, 256, 8))
    rec = vq_loss(model, t).rec.item()
    uniform = 8 * sum(math.log(n) for n in GROUP_SIZES)
    assert abs(rec - uniform) <= 0.1 * uniform


def test_loss_decomposition(rng):
    cfg = VQConfig(codebook_size=8, embedding_dim=4, hidden=(16,), window=4, commitment_beta=0.37)
    model = VQModel(cfg).double()
    t = torch.from_numpy(random_factors(rng, 32, 4))
    loss = vq_loss(model, t)
    with torch.no_grad():
        assert loss.total.item() == (loss.rec + loss.codebook_term + cfg.commitment_beta * loss.commit_term).item()

    # independent numpy oracle for every term
    x = factors_to_features(t.numpy())
    with torch.no_grad():
        z = model.encode(torch.from_numpy(x)).numpy()
        cb = model.codebook.numpy()
        code = ((z[:, None] - cb[None]) ** 2).sum(-1).argmin(1)
        logits = model.decode(torch.from_numpy(cb[code])).numpy()
    gap = ((z - cb[code]) ** 2).sum() / 32
    ce, off = 0.0, 0
    for g, n in enumerate(GROUP_SIZES):
        lg = logits[..., off:off + n]
        lse = np.log(np.exp(lg - lg.max(-1, keepdims=True)).sum(-1)) + lg.max(-1)
        ce += (lse - np.take_along_axis(lg, t.numpy()[..., g:g + 1], -1)[..., 0]).sum()
        off += n
    assert loss.codebook_term.item() == pytest.approx(gap, rel=1e-12)
    assert loss.commit_term.item() == pytest.approx(gap, rel=1e-12)
    assert loss.rec.item() == pytest.approx(ce / 32, rel=1e-12)


def test_zero_gap_terms():
    cfg = VQConfig(codebook_size=4, embedding_dim=3, hidden=(8,), window=2)
    model = VQModel(cfg).double()
    t = torch.zeros(1, 2, 4, dtype=torch.long)
    from chainact.latent_vq import _features_tensor

    with torch.no_grad():
        model.codebook[2] = model.encode(_features_tensor(t, model))[0]
    loss = vq_loss(model, t)
    assert loss.codebook_term.item() == 0.0 and loss.commit_term.item() == 0.0


def test_gradients_match_finite_differences():
    assert vq_fd_worst() <= 1e-4


# -- training --------------------------------------------------------------


def test_motif_training_health(motif_model):
    model, curve = motif_model
    held, _ = motif_corpus(repeats=20, seed=99)
    assert reconstruction_rate(model, held) >= 0.9
    codes = encode_codes(model, held)
    assert perplexity(np.bincount(codes, minlength=16)) >= 4
    assert curve.perplexity[-1] >= 4 and len(curve.loss) == MOTIF_CFG.epochs


def test_training_is_deterministic(motif_model):
    train, _ = motif_corpus(repeats=40, seed=0)
    again, _ = train_vq(train, MOTIF_CFG)
    assert codebook_bytes(again) == codebook_bytes(motif_model[0])
    assert checkpoint_json(again) == checkpoint_json(motif_model[0])


def test_single_code_single_motif():
    windows = np.stack([window_factors(motif_window("strafe", 0))] * 50)
    model, _ = train_vq(windows, VQConfig(codebook_size=1, epochs=40))
    assert reconstruction_rate(model, windows) >= 0.99


def test_decode_encode_self_consistency(motif_model):
    model, _ = motif_model
    held, _ = motif_corpus(repeats=20, seed=5)
    live = sorted(set(encode_codes(model, held).tolist()))
    for k in live:
        assert encode_actions(model, decode_latent(model, k)) == Latent(k)


def test_tokenizer_interface(motif_model):
    model, _ = motif_model
    w = motif_window("forward", 0)
    A = encode_actions(model, w)
    assert isinstance(A, Latent) and 0 <= A.code < 16
    assert len(decode_latent(model, A)) == 8
    assert serialize_abstracted(Latent(2)) == "<|reserved_token_2|>"
    with pytest.raises(InvalidCode):
        decode_factors(model, 16)
    with pytest.raises(UntrainedModel):
        encode_actions(VQModel(MOTIF_CFG), w)
    with pytest.raises(ConfigError):
        encode_actions(model, w[:3])


def test_checkpoint_roundtrip(motif_model, tmp_path):
    model, _ = motif_model
    path = tmp_path / "vq.json"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert codebook_bytes(back) == codebook_bytes(model)
    held, _ = motif_corpus(repeats=5, seed=3)
    assert np.array_equal(encode_codes(back, held), encode_codes(model, held))
    bad = checkpoint_json(model).replace('"embedding_dim": 32', '"embedding_dim": 16')
    with pytest.raises(ConfigError):
        checkpoint_from_json(bad)


def test_config_validation():
    for bad in ({"codebook_size": 0}, {"embedding_dim": 0}, {"commitment_beta": 0.0}, {"window": 0}):
        with pytest.raises(ConfigError):
            VQConfig(**bad)


def test_trajectory_windows_and_labels(motif_model):
    model, _ = motif_model
    acts = motif_window("forward", 0) + motif_window("noop", 0)[:3]
    wins = trajectory_windows(acts, 8)
    assert [len(w) for w in wins] == [8, 8]
    labels = label_windows(model, acts)
    assert [w for w, _ in labels] == [range(0, 8), range(8, 11)]
    dense = label_windows(model, acts, stride=1)
    assert len(dense) == 11 and dense[0][1] == labels[0][1]


def test_motif_corpus_shape():
    w, y = motif_corpus(repeats=4)
    assert w.shape == (20, 8, 4) and sorted(set(y.tolist())) == list(range(len(MOTIFS)))
