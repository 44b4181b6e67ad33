"""Reusable numerical checks: finite-difference gradients, structural invariants, overfit runs."""

import time

import numpy as np
import torch
import torch.nn.functional as F

from convflip import metrics
from convflip.dialogue import Dialogue, Emotion, detect_flips
from convflip.efr_tx import Batch, EfrHyperParams, EfrTX, efr_loss, forward_instance, predict_triggers, train_efr
from convflip.embeddings import EmbeddingStore
from convflip.erc_mmn import ErcHyperParams, ErcMMN, forward_dialogue, masked_attention, predict_emotions, train_erc
from convflip.instances import compile_corpus, context_window
from convflip.multitask import (
    MultiExample,
    MultiHyperParams,
    MultiMMN,
    forward_multi,
    multi_batch_loss,
    predict_multi,
    train_multi,
)


def numpy_weights(model, seed, scale=0.5):
    """Overwrite every parameter with seeded Gaussian values (torch RNG not involved)."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            p.copy_(torch.as_tensor(rng.standard_normal(tuple(p.shape)) * scale, dtype=p.dtype))
    return model


# ------------------------------------------------------------------ gradient checks


# central differences at eps=1e-6 in double precision leave ~1e-9 of absolute noise per group
VANISHING = 1e-6


def group_relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||).

    Groups whose gradient vanishes identically (the attention key bias, by softmax shift
    invariance) have nothing to be relative to; their absolute difference is returned.
    """
    diff = float((analytic - numeric).norm())
    scale = max(float(analytic.norm()), float(numeric.norm()))
    return diff / scale if scale > VANISHING else diff


def finite_difference_errors(model, loss_fn, eps=1e-6):
    model.zero_grad()
    loss_fn().backward()
    out = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone()
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * eps)
            out[name] = group_relative_error(analytic, numeric)
    return out


def erc_gradient_errors(seed=0):
    hp = ErcHyperParams(hidden_width=8, input_width=8, hops=2, share_hops=False, max_roles=2, dropout=0.0, high_precision=True)
    model = numpy_weights(ErcMMN(hp), seed).eval()
    rng = np.random.default_rng(seed + 1)
    # two 3-utterance dialogues so that both speaker cells see a nonzero previous state
    data = [
        (torch.as_tensor(rng.standard_normal((3, 8))), roles, torch.as_tensor(rng.integers(0, 7, 3)))
        for roles in ([0, 1, 0], [1, 0, 1])
    ]

    def loss():
        return sum(F.cross_entropy(model(x, r), y, reduction="sum") for x, r, y in data)

    return finite_difference_errors(model, loss)


def efr_gradient_errors(seed=0, conditioning="none"):
    source = "absent" if conditioning == "none" else "gold"
    hp = EfrHyperParams(
        model_width=8, encoder_layers=1, attention_heads=1, feedforward_width=16, dropout=0.0,
        conditioning=conditioning, label_source=source, high_precision=True,
    )
    model = numpy_weights(EfrTX(hp), seed).eval()
    rng = np.random.default_rng(seed + 1)
    x = torch.as_tensor(rng.standard_normal((2, 3, 8)))
    emotions = torch.as_tensor(rng.integers(0, 7, (2, 3))) if hp.uses_labels else None
    batch = Batch(x, emotions, torch.tensor([[0, 1, 0], [1, 0, 1]]), torch.ones(2, dtype=torch.float64))
    return finite_difference_errors(model, lambda: efr_loss(model(batch.x, batch.emotions), batch))


def multi_gradient_errors(seed=0):
    trunk = ErcHyperParams(hidden_width=8, input_width=8, hops=1, max_roles=2, dropout=0.0, high_precision=True)
    model = numpy_weights(MultiMMN(MultiHyperParams(trunk, window=2)), seed).eval()
    rng = np.random.default_rng(seed + 1)
    ex = MultiExample(
        torch.as_tensor(rng.standard_normal((3, 8))), [0, 1, 0], torch.tensor([5, 1, 1]), (3,), (torch.tensor([1, 0]),)
    )
    return finite_difference_errors(model, lambda: multi_batch_loss(model, [ex])[0])


# ------------------------------------------------------------------ structural invariants


def random_dialogue(rng, n=None):
    n = int(rng.integers(2, 9)) if n is None else n
    speakers = [str(s) for s in rng.choice(list("ABC"), n)]
    emotions = [Emotion(int(e)) for e in rng.integers(0, 7, n)]
    return Dialogue.build("r", [(s, f"utt {i}", e) for i, (s, e) in enumerate(zip(speakers, emotions))])


def check_prefix_normalization(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    slots = torch.as_tensor(rng.standard_normal((n, 5)))
    t = int(rng.integers(1, n + 1))
    beta, out = masked_attention(slots, torch.as_tensor(rng.standard_normal(5)), t)
    assert abs(float(beta[:t].sum()) - 1.0) < 1e-12
    assert bool((beta[:t] >= 0).all()) and bool((beta[t:] == 0).all())
    assert torch.equal(out[t:], slots[t:])


def check_causality(seed):
    rng = np.random.default_rng(seed)
    hp = ErcHyperParams(hidden_width=8, input_width=6, hops=int(rng.integers(1, 4)), max_roles=3, dropout=0.0,
                        label_memory=bool(rng.integers(0, 2)), share_hops=bool(rng.integers(0, 2)))
    model = numpy_weights(ErcMMN(hp), seed).eval()
    n = int(rng.integers(2, 8))
    x = torch.as_tensor(rng.standard_normal((n, 6)), dtype=torch.float32)
    roles = [int(r) for r in rng.integers(0, 3, n)]
    j = int(rng.integers(1, n))  # 0-based first perturbed row
    y = x.clone()
    y[j:] += torch.as_tensor(rng.standard_normal((n - j, 6)), dtype=torch.float32)
    with torch.no_grad():
        a, b = model(x, roles), model(y, roles)
    assert torch.equal(a[:j], b[:j])


def check_flip_mask(seed):
    rng = np.random.default_rng(seed)
    hp = EfrHyperParams(model_width=8, encoder_layers=1, attention_heads=2, feedforward_width=8, dropout=0.0)
    model = numpy_weights(EfrTX(hp), seed)
    k, b = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    x = torch.as_tensor(rng.standard_normal((b, k, 8)), dtype=torch.float32)
    labels = torch.as_tensor(rng.integers(0, 2, (b, k)))
    model.zero_grad()
    efr_loss(model(x), Batch(x, None, labels, torch.zeros(b))).backward()
    assert all(bool((p.grad == 0).all()) for p in model.parameters())
    # in a mixed batch, labels of masked rows do not reach the gradient
    mask = torch.as_tensor(rng.integers(0, 2, b), dtype=torch.float32)
    mask[0] = 1.0
    grads = []
    for lab in (labels, torch.where(mask[:, None] > 0, labels, 1 - labels)):
        model.zero_grad()
        efr_loss(model(x), Batch(x, None, lab, mask)).backward()
        grads.append([p.grad.clone() for p in model.parameters()])
    assert all(torch.equal(g1, g2) for g1, g2 in zip(*grads))


def check_window_containment(seed):
    rng = np.random.default_rng(seed)
    d = random_dialogue(rng)
    window = int(rng.integers(1, 6))
    hp = EfrHyperParams(model_width=8, encoder_layers=1, attention_heads=1, feedforward_width=8, dropout=0.0, window=window)
    model = numpy_weights(EfrTX(hp), seed, scale=2.0)
    vecs = rng.standard_normal((len(d), 8))
    trunk = ErcHyperParams(hidden_width=8, input_width=8, hops=1, max_roles=3, dropout=0.0)
    multi = numpy_weights(MultiMMN(MultiHyperParams(trunk, window=window)), seed, scale=2.0)
    store = EmbeddingStore({(d.id, u.index): vecs[u.index - 1] for u in d.utterances})
    for anns in (predict_triggers(model, d, vecs, detect_flips(d)), predict_multi(multi, d, store)[1]):
        for a in anns:
            assert a.trigger_indices <= set(context_window(a.target_index, window))


def check_row_sums(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    x = rng.standard_normal((n, 8))
    speakers = [str(s) for s in rng.choice(list("ABC"), n)]
    erc = numpy_weights(ErcMMN(ErcHyperParams(hidden_width=8, input_width=8, hops=2, max_roles=3, dropout=0.0)), seed)
    efr = numpy_weights(EfrTX(EfrHyperParams(model_width=8, encoder_layers=2, attention_heads=2, feedforward_width=8)), seed)
    multi = numpy_weights(MultiMMN(MultiHyperParams(erc.hp)), seed)
    rows = [forward_dialogue(erc, x, speakers), forward_instance(efr, x[-min(n, 5):])]
    e, t = forward_multi(multi, x, speakers)
    rows += [e, *t]
    for r in rows:
        assert float((r.sum(dim=-1) - 1).abs().max()) < 1e-6


INVARIANTS = {
    "masked-attention prefix normalization": check_prefix_normalization,
    "emotion model causality": check_causality,
    "flip-mask zero gradient": check_flip_mask,
    "predicted triggers inside window": check_window_containment,
    "probability rows sum to one": check_row_sums,
}


# ------------------------------------------------------------------ overfit runs


def _every(n, fn):
    def cb(model, entry):
        return entry["epoch"] % n == 0 and fn(model)

    return cb


def erc_training_f1(model, corpus, store):
    gold, pred = [], []
    for d in corpus.dialogues:
        gold += [int(u.emotion) for u in d.utterances]
        pred += [int(e) for e in predict_emotions(model, d, store)]
    return metrics.classification_report(gold, pred, list(range(7))).weighted_f1


def efr_training_f1(model, corpus, vectors):
    pred = {d.id: predict_triggers(model, d, vectors[d.id], detect_flips(d)) for d in corpus.dialogues}
    return metrics.efr_dialogue_report(corpus.annotations, pred, model.hp.window).trigger_f1


def multi_training_f1(model, corpus, store):
    gold, pred, trig = [], [], {}
    for d in corpus.dialogues:
        emotions, trig[d.id] = predict_multi(model, d, store)
        gold += [int(u.emotion) for u in d.utterances]
        pred += emotions
    erc = metrics.classification_report(gold, pred, list(range(7))).weighted_f1
    return erc, metrics.efr_dialogue_report(corpus.annotations, trig, model.hp.window).trigger_f1


def overfit_erc(corpus, lr=1e-3, max_epochs=300, target=0.95):
    store, best, start = EmbeddingStore(), {"f1": 0.0}, time.perf_counter()

    def done(model):
        best["f1"] = erc_training_f1(model, corpus, store)
        return best["f1"] >= target

    _, log = train_erc(corpus, store, ErcHyperParams(learning_rate=lr, max_epochs=max_epochs), callback=_every(5, done))
    return {"f1": best["f1"], "epochs": len(log), "seconds": time.perf_counter() - start}


def overfit_efr(corpus, lr=1e-4, max_epochs=300, target=0.95):
    store, best, start = EmbeddingStore(), {"f1": 0.0}, time.perf_counter()
    vectors = {d.id: store.dialogue_matrix(d) for d in corpus.dialogues}

    def done(model):
        best["f1"] = efr_training_f1(model, corpus, vectors)
        return best["f1"] >= target

    hp = EfrHyperParams(learning_rate=lr, max_epochs=max_epochs)
    _, log = train_efr(compile_corpus(corpus, hp.window), vectors, hp, callback=_every(5, done))
    return {"f1": best["f1"], "epochs": len(log), "seconds": time.perf_counter() - start}


def overfit_multi(corpus, lr=1e-3, max_epochs=300, target=0.90):
    store, best, start = EmbeddingStore(), {"f1": (0.0, 0.0)}, time.perf_counter()

    def done(model):
        best["f1"] = multi_training_f1(model, corpus, store)
        return min(best["f1"]) >= target

    hp = MultiHyperParams(ErcHyperParams(learning_rate=lr, max_epochs=max_epochs))
    _, log = train_multi(corpus, store, hp, callback=_every(5, done))
    return {"erc_f1": best["f1"][0], "trigger_f1": best["f1"][1], "epochs": len(log), "seconds": time.perf_counter() - start}
