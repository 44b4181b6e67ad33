import numpy as np
import pytest
import torch

import oracle
from convflip.efr_tx import EfrHyperParams, EfrTX, condition_inputs, decide, forward_instance, sinusoid_table
from convflip.erc_mmn import ErcHyperParams, ErcMMN, forward_dialogue, masked_attention, memory_read


def randomize(model, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.5)
    return model


def tiny_erc(**kw):
    base = dict(hidden_width=8, input_width=6, hops=2, dropout=0.0, max_roles=3, high_precision=True)
    base.update(kw)
    return ErcHyperParams(**base)


def tiny_efr(**kw):
    base = dict(model_width=8, encoder_layers=2, attention_heads=2, feedforward_width=12, dropout=0.0, high_precision=True)
    base.update(kw)
    return EfrHyperParams(**base)


# ------------------------------------------------------------------ memory primitives


def test_masked_attention_matches_oracle():
    rng = np.random.default_rng(0)
    slots, q = rng.standard_normal((5, 4)), rng.standard_normal(4)
    for t in range(1, 6):
        beta, out = masked_attention(torch.tensor(slots), torch.tensor(q), t)
        want_b, want_o = oracle.masked_attention(slots, q, t)
        np.testing.assert_allclose(beta.numpy(), want_b, atol=1e-12)
        np.testing.assert_allclose(out.numpy(), want_o, atol=1e-12)


def test_masked_attention_single_slot():
    slots = torch.randn(4, 3, dtype=torch.float64)
    beta, out = masked_attention(slots, torch.randn(3, dtype=torch.float64), 1)
    assert beta.tolist() == [1.0, 0.0, 0.0, 0.0]
    assert torch.equal(out, slots)


def test_masked_attention_bypass_and_bounds():
    slots = torch.randn(4, 3, dtype=torch.float64)
    _, out = masked_attention(slots, torch.randn(3, dtype=torch.float64), 2)
    assert torch.equal(out[2:], slots[2:])
    with pytest.raises(ValueError):
        masked_attention(slots, slots[0], 0)
    with pytest.raises(ValueError):
        masked_attention(slots, slots[0], 5)


def test_memory_read_rejects_zero_hops():
    gru = torch.nn.GRU(3, 3, batch_first=True)
    with pytest.raises(ValueError):
        memory_read(torch.zeros(2, 3), torch.zeros(3), 1, 0, [gru], [None], [None])


def test_hops_and_speakers_must_be_valid():
    with pytest.raises(ValueError):
        ErcHyperParams(hops=0)
    m = ErcMMN(tiny_erc(max_roles=2))
    with pytest.raises(ValueError, match="unknown speaker role"):
        m(torch.zeros(2, 6, dtype=torch.float64), [0, 2])
    with pytest.raises(ValueError, match="shape"):
        m(torch.zeros(2, 5, dtype=torch.float64), [0, 1])


# ------------------------------------------------------------------ ERC oracle


@pytest.mark.parametrize("share_hops", [True, False])
@pytest.mark.parametrize("hops", [1, 3])
def test_erc_matches_oracle(share_hops, hops):
    hp = tiny_erc(hops=hops, share_hops=share_hops)
    model = randomize(ErcMMN(hp), 7).eval()
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 6))
    roles = [0, 1, 0, 2, 1]
    with torch.no_grad():
        got = model(torch.tensor(x), roles).numpy()
    want = oracle.erc_forward(model.state_dict(), x, roles, hops, share_hops)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_erc_without_global_context_matches_oracle():
    hp = tiny_erc(global_context=False)
    model = randomize(ErcMMN(hp), 3).eval()
    x = np.random.default_rng(2).standard_normal((4, 6))
    with torch.no_grad():
        got = model(torch.tensor(x), [0, 1, 1, 0]).numpy()
    np.testing.assert_allclose(got, oracle.erc_forward(model.state_dict(), x, [0, 1, 1, 0], 2, global_context=False), atol=1e-12)


def test_erc_probabilities_rows():
    model = ErcMMN(tiny_erc())
    p = forward_dialogue(model, np.random.default_rng(0).standard_normal((4, 6)), ["A", "B", "A", "C"])
    assert p.shape == (4, 7)
    np.testing.assert_allclose(p.sum(dim=1).numpy(), 1.0, atol=1e-12)


def test_classifier_widths_at_default_size():
    assert ErcHyperParams().classifier_dims == (1536, 768, 384, 7)


def test_label_memory_uses_gold_when_given():
    hp = tiny_erc(label_memory=True)
    model = randomize(ErcMMN(hp), 5).eval()
    x = torch.randn(4, 6, dtype=torch.float64)
    with torch.no_grad():
        a = model(x, [0, 1, 0, 1], [0, 1, 2, 3])
        b = model(x, [0, 1, 0, 1], [6, 5, 4, 3])
    assert torch.equal(a[0], b[0])
    assert not torch.allclose(a[1:], b[1:])


# ------------------------------------------------------------------ EFR oracle


def test_sinusoid_table():
    np.testing.assert_allclose(sinusoid_table(5, 8).numpy(), oracle.sinusoids(5, 8), atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_efr_matches_oracle(k):
    hp = tiny_efr()
    model = randomize(EfrTX(hp), k).eval()
    x = np.random.default_rng(k).standard_normal((k, 8))
    with torch.no_grad():
        got = model(torch.tensor(x)).numpy()
    np.testing.assert_allclose(got, oracle.efr_forward(model.state_dict(), x, 2, 2), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("mode", ["early", "late"])
def test_efr_conditioning_matches_oracle(mode):
    hp = tiny_efr(conditioning=mode, label_source="gold")
    model = randomize(EfrTX(hp), 11).eval()
    x = np.random.default_rng(4).standard_normal((4, 8))
    emotions = [5, 1, 1, 6]
    ind = np.eye(7)[emotions]
    with torch.no_grad():
        got = model(torch.tensor(x), torch.tensor(emotions)).numpy()
    want = oracle.efr_forward(model.state_dict(), x, 2, 2, ind, early=(mode == "early"))
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_conditioning_widths():
    assert EfrTX(EfrHyperParams(encoder_layers=1)).classifier_width == 1536
    late = EfrTX(EfrHyperParams(encoder_layers=1, conditioning="late", label_source="gold"))
    assert late.classifier_width == 1550
    early = EfrTX(EfrHyperParams(encoder_layers=1, conditioning="early", label_source="predicted"))
    assert (early.input_proj.in_features, early.input_proj.out_features) == (775, 768)
    x = torch.zeros(3, 768)
    assert condition_inputs(x, torch.tensor([0, 1, 2]), "early").vectors.shape == (3, 775)
    assert condition_inputs(x, torch.tensor([0, 1, 2]), "late").width_delta == 14


def test_conditioning_needs_labels():
    with pytest.raises(ValueError):
        EfrHyperParams(conditioning="late")
    m = EfrTX(tiny_efr(conditioning="late", label_source="gold"))
    with pytest.raises(ValueError, match="requires emotion labels"):
        m(torch.zeros(3, 8, dtype=torch.float64))


def test_efr_input_checks():
    m = EfrTX(tiny_efr())
    with pytest.raises(ValueError, match="width"):
        m(torch.zeros(3, 7, dtype=torch.float64))
    with pytest.raises(ValueError, match="outside"):
        m(torch.zeros(6, 8, dtype=torch.float64))


def test_learning_rate_defaults():
    assert EfrHyperParams().lr == 5e-8
    assert EfrHyperParams(conditioning="late", label_source="gold").lr == 5e-7
    assert EfrHyperParams(conditioning="late", label_source="predicted").lr == 5e-8


def test_decide_tie_is_non_trigger():
    assert decide(torch.tensor([[0.5, 0.5], [0.4, 0.6], [0.6, 0.4]])) == [False, True, False]


def test_efr_rows_are_distributions():
    p = forward_instance(EfrTX(tiny_efr()), np.random.default_rng(0).standard_normal((4, 8)))
    np.testing.assert_allclose(p.sum(dim=1).numpy(), 1.0, atol=1e-12)
