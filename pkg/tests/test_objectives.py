"""Noun masking and the four-term objective."""

import itertools
import math

import pytest
import torch

from roomref.batching import class_index, collate, prepare_sample
from roomref.encoding import MASK_ID, NUM_SPECIALS
from roomref.errors import ConfigError
from roomref.model import ModelOutput, init_model
from roomref.objectives import (
    IGNORE_INDEX,
    LossBundle,
    LossTargets,
    LossWeights,
    MaskingPolicy,
    apply_noun_masking,
    combine_terms,
    compute_loss,
)

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def encoded(small_corpus, vocab, tiny_model_cfg):
    """One prepared sample plus its token sequence, for masking tests."""
    record = small_corpus.records[0]
    scene = small_corpus.scenes[record.scene_id]
    labels = {o.object_id: o.class_label for o in scene.objects}
    c2i = class_index(small_corpus.catalog)
    sample = prepare_sample(record, scene, labels, vocab, tiny_model_cfg, c2i)
    return sample


@pytest.fixture(scope="module")
def loss_inputs(small_corpus, vocab, tiny_model_cfg):
    """Forward pass output and full targets over a small batch."""
    c2i = class_index(small_corpus.catalog)
    samples = []
    for record in small_corpus.records[:8]:
        scene = small_corpus.scenes[record.scene_id]
        labels = {o.object_id: o.class_label for o in scene.objects}
        samples.append(
            prepare_sample(
                record, scene, labels, vocab, tiny_model_cfg, c2i,
                masking=MaskingPolicy(select_p=1.0), mask_seed=17 + len(samples),
            )
        )
    batch, target_index, binary_labels, text_class, mlm_labels = collate(samples)
    model = init_model(tiny_model_cfg, seed=3)
    out = model(batch)
    targets = LossTargets(
        target_index=target_index,
        binary_labels=binary_labels,
        text_class=text_class,
        mlm_labels=mlm_labels,
    )
    return out, targets


# ----------------------------------------------------------------- masking


def test_masking_policy_validation():
    MaskingPolicy().validate()
    with pytest.raises(ConfigError):
        MaskingPolicy(select_p=1.5).validate()
    with pytest.raises(ConfigError):
        MaskingPolicy(mask_p=0.7, random_p=0.1, keep_p=0.1).validate()
    with pytest.raises(ConfigError):
        MaskingPolicy(mask_p=1.1, random_p=-0.2, keep_p=0.1).validate()


def test_masking_deterministic(encoded, vocab):
    a = apply_noun_masking(encoded.seq, MaskingPolicy(), vocab.size, seed=4)
    b = apply_noun_masking(encoded.seq, MaskingPolicy(), vocab.size, seed=4)
    assert a == b


def test_only_noun_positions_change(encoded, vocab):
    policy = MaskingPolicy(select_p=1.0)
    for seed in range(30):
        corrupted, labels = apply_noun_masking(encoded.seq, policy, vocab.size, seed)
        nouns = set(encoded.seq.noun_positions)
        for pos, (before, after) in enumerate(zip(encoded.seq.ids, corrupted.ids)):
            if pos not in nouns:
                assert before == after
                assert labels[pos] == IGNORE_INDEX


def test_labels_hold_original_ids(encoded, vocab):
    policy = MaskingPolicy(select_p=1.0)
    corrupted, labels = apply_noun_masking(encoded.seq, policy, vocab.size, seed=9)
    for pos in encoded.seq.noun_positions:
        assert labels[pos] == encoded.seq.ids[pos]
    assert len(labels) == encoded.seq.length


def test_select_p_zero_is_identity(encoded, vocab):
    corrupted, labels = apply_noun_masking(
        encoded.seq, MaskingPolicy(select_p=0.0), vocab.size, seed=2
    )
    assert corrupted.ids == encoded.seq.ids
    assert all(l == IGNORE_INDEX for l in labels)


def test_replacement_tokens_never_special(encoded, vocab):
    policy = MaskingPolicy(select_p=1.0, mask_p=0.0, random_p=1.0, keep_p=0.0)
    for seed in range(20):
        corrupted, _ = apply_noun_masking(encoded.seq, policy, vocab.size, seed)
        for pos in encoded.seq.noun_positions:
            assert corrupted.ids[pos] >= NUM_SPECIALS


def test_pure_mask_policy(encoded, vocab):
    policy = MaskingPolicy(select_p=1.0, mask_p=1.0, random_p=0.0, keep_p=0.0)
    corrupted, labels = apply_noun_masking(encoded.seq, policy, vocab.size, seed=5)
    for pos in encoded.seq.noun_positions:
        assert corrupted.ids[pos] == MASK_ID
        assert labels[pos] == encoded.seq.ids[pos]


def test_keep_policy_sets_labels_without_changing_tokens(encoded, vocab):
    policy = MaskingPolicy(select_p=1.0, mask_p=0.0, random_p=0.0, keep_p=1.0)
    corrupted, labels = apply_noun_masking(encoded.seq, policy, vocab.size, seed=5)
    assert corrupted.ids == encoded.seq.ids
    for pos in encoded.seq.noun_positions:
        assert labels[pos] == encoded.seq.ids[pos]


def test_tiny_vocab_rejected(encoded):
    with pytest.raises(ConfigError):
        apply_noun_masking(encoded.seq, MaskingPolicy(), NUM_SPECIALS, seed=0)


def test_masking_statistics(small_corpus, vocab, tiny_model_cfg):
    """Selection and corruption fractions match the policy within 3 sigma."""
    policy = MaskingPolicy()
    c2i = class_index(small_corpus.catalog)
    eligible = selected = masked = randomized = kept = 0
    draw = 0
    for record in small_corpus.records:
        scene = small_corpus.scenes[record.scene_id]
        labels = {o.object_id: o.class_label for o in scene.objects}
        sample = prepare_sample(record, scene, labels, vocab, tiny_model_cfg, c2i)
        for rep in range(240):
            corrupted, mlm = apply_noun_masking(sample.seq, policy, vocab.size, seed=draw)
            draw += 1
            for pos in sample.seq.noun_positions:
                eligible += 1
                if mlm[pos] == IGNORE_INDEX:
                    continue
                selected += 1
                if corrupted.ids[pos] == MASK_ID:
                    masked += 1
                elif corrupted.ids[pos] == sample.seq.ids[pos]:
                    kept += 1
                else:
                    randomized += 1
    assert eligible > 100_000

    def within(count, n, p):
        sigma = math.sqrt(p * (1 - p) / n)
        return abs(count / n - p) <= 3 * sigma

    assert within(selected, eligible, policy.select_p)
    assert within(masked, selected, policy.mask_p)
    assert within(kept, selected, policy.keep_p)
    # random replacements can land on the original token, so a 0.1 draw
    # shows up as "kept"; bound the shortfall by the collision rate
    n_words = vocab.size - NUM_SPECIALS
    assert randomized / selected >= policy.random_p * (1 - 2 / n_words) - 3 * math.sqrt(
        policy.random_p * (1 - policy.random_p) / selected
    )


# -------------------------------------------------------------- LossWeights


def test_default_weights_match_objective():
    w = LossWeights()
    assert (w.w_ref, w.w_clf, w.w_text, w.w_mask) == (1.0, 0.5, 0.5, 0.5)
    assert w.enabled_terms() == ("ref", "clf", "text", "mask")


def test_from_terms():
    w = LossWeights.from_terms(("ref", "mask"))
    assert w.enable_ref and w.enable_mask
    assert not w.enable_clf and not w.enable_text
    with pytest.raises(ConfigError):
        LossWeights.from_terms(("ref", "banana"))


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(w_clf=-0.5).validate()


def test_all_disabled_rejected():
    with pytest.raises(ConfigError):
        LossWeights(
            enable_ref=False, enable_clf=False, enable_text=False, enable_mask=False
        ).validate()


# ------------------------------------------------------------ compute_loss


def test_weighted_sum_example():
    values = {
        "ref": torch.tensor(1.0),
        "clf": torch.tensor(0.8),
        "text": torch.tensor(0.2),
        "mask": torch.tensor(0.1),
    }
    total = combine_terms(values, LossWeights())
    assert float(total) == pytest.approx(1.55)


def test_total_identity_all_toggle_combinations(loss_inputs):
    """total == sum of enabled weighted terms, for the full toggle grid."""
    out, targets = loss_inputs
    for clf, text, mask in itertools.product((False, True), repeat=3):
        weights = LossWeights(enable_clf=clf, enable_text=text, enable_mask=mask)
        bundle = compute_loss(out, targets, weights)
        expected = bundle.l_ref.clone()
        if clf:
            expected = expected + 0.5 * bundle.l_clf
        if text:
            expected = expected + 0.5 * bundle.l_text
        if mask:
            expected = expected + 0.5 * bundle.l_mask
        assert torch.equal(bundle.total, expected)
        assert float(bundle.total.detach()) >= 0.0


def test_disabled_terms_are_zero(loss_inputs):
    out, targets = loss_inputs
    bundle = compute_loss(out, targets, LossWeights.from_terms(("ref",)))
    assert float(bundle.l_clf) == 0.0
    assert float(bundle.l_text) == 0.0
    assert float(bundle.l_mask) == 0.0
    assert torch.equal(bundle.total, bundle.l_ref)


def test_term_values_stable_across_toggles(loss_inputs):
    """Enabled term values do not depend on which other terms are on."""
    out, targets = loss_inputs
    solo = compute_loss(out, targets, LossWeights.from_terms(("ref",)))
    full = compute_loss(out, targets, LossWeights())
    assert torch.equal(solo.l_ref, full.l_ref)


def test_missing_targets_name_the_term(loss_inputs):
    out, targets = loss_inputs
    cases = [
        ("ref", LossTargets(binary_labels=targets.binary_labels,
                            text_class=targets.text_class,
                            mlm_labels=targets.mlm_labels)),
        ("clf", LossTargets(target_index=targets.target_index,
                            text_class=targets.text_class,
                            mlm_labels=targets.mlm_labels)),
        ("text", LossTargets(target_index=targets.target_index,
                             binary_labels=targets.binary_labels,
                             mlm_labels=targets.mlm_labels)),
        ("mask", LossTargets(target_index=targets.target_index,
                             binary_labels=targets.binary_labels,
                             text_class=targets.text_class)),
    ]
    for term, incomplete in cases:
        with pytest.raises(ConfigError, match=term):
            compute_loss(out, incomplete, LossWeights())


def test_saturated_reference_softmax():
    """A +20 margin on the true object drives the ref loss below 1e-8."""
    scores = torch.tensor([[20.0, 0.0, 0.0, 0.0]])
    out = ModelOutput(
        features=torch.zeros(1, 1, 1),
        reference_scores=scores,
        binary_logits=torch.zeros(1, 4, 2),
        text_logits=torch.zeros(1, 3),
        mlm_logits=torch.zeros(1, 1, 6),
        object_mask=torch.ones(1, 4, dtype=torch.bool),
        utterance_mask=torch.ones(1, 1, dtype=torch.bool),
    )
    targets = LossTargets(target_index=torch.tensor([0]))
    bundle = compute_loss(out, targets, LossWeights.from_terms(("ref",)))
    assert float(bundle.l_ref) < 1e-8


def test_reference_loss_matches_manual_softmax(loss_inputs):
    out, targets = loss_inputs
    bundle = compute_loss(out, targets, LossWeights.from_terms(("ref",)))
    scores = out.reference_scores.masked_fill(~out.object_mask, float("-inf"))
    log_probs = torch.log_softmax(scores, dim=1)
    manual = -log_probs[torch.arange(scores.shape[0]), targets.target_index].mean()
    assert torch.allclose(bundle.l_ref, manual)


def test_padded_objects_excluded_from_clf(loss_inputs):
    """Flipping logits at padded slots must not move the clf loss."""
    out, targets = loss_inputs
    base = compute_loss(out, targets, LossWeights.from_terms(("ref", "clf")))
    poisoned_logits = out.binary_logits.clone()
    poisoned_logits[~out.object_mask] = 1e6
    poisoned = ModelOutput(
        features=out.features,
        reference_scores=out.reference_scores,
        binary_logits=poisoned_logits,
        text_logits=out.text_logits,
        mlm_logits=out.mlm_logits,
        object_mask=out.object_mask,
        utterance_mask=out.utterance_mask,
    )
    again = compute_loss(poisoned, targets, LossWeights.from_terms(("ref", "clf")))
    assert torch.equal(base.l_clf, again.l_clf)


def test_clf_is_scene_size_invariant_mean():
    """Per-sample mean first: object-rich rows do not dominate."""
    logits = torch.zeros(2, 3, 2)
    logits[0, 0] = torch.tensor([0.0, 4.0])
    out = ModelOutput(
        features=torch.zeros(2, 1, 1),
        reference_scores=torch.zeros(2, 3),
        binary_logits=logits,
        text_logits=torch.zeros(2, 3),
        mlm_logits=torch.zeros(2, 1, 6),
        object_mask=torch.tensor([[True, False, False], [True, True, True]]),
        utterance_mask=torch.ones(2, 1, dtype=torch.bool),
    )
    labels = torch.tensor([[1, 0, 0], [0, 0, 0]])
    targets = LossTargets(
        target_index=torch.tensor([0, 0]), binary_labels=labels,
    )
    bundle = compute_loss(out, targets, LossWeights.from_terms(("ref", "clf")))
    row0 = -math.log(math.exp(4.0) / (1 + math.exp(4.0)))
    row1 = -math.log(0.5)
    assert float(bundle.l_clf) == pytest.approx((row0 + row1) / 2.0, rel=1e-6)


def test_mask_loss_zero_when_nothing_selected(loss_inputs):
    out, targets = loss_inputs
    empty = LossTargets(
        target_index=targets.target_index,
        binary_labels=targets.binary_labels,
        text_class=targets.text_class,
        mlm_labels=torch.full_like(targets.mlm_labels, IGNORE_INDEX),
    )
    bundle = compute_loss(out, empty, LossWeights())
    assert float(bundle.l_mask) == 0.0


def test_mask_loss_global_mean(loss_inputs):
    out, targets = loss_inputs
    bundle = compute_loss(out, targets, LossWeights())
    b, u, v = out.mlm_logits.shape
    flat = targets.mlm_labels.reshape(-1)
    selected = flat != IGNORE_INDEX
    manual = torch.nn.functional.cross_entropy(
        out.mlm_logits.reshape(b * u, v)[selected], flat[selected]
    )
    assert torch.allclose(bundle.l_mask, manual)


def test_scalars_are_plain_floats(loss_inputs):
    out, targets = loss_inputs
    scalars = compute_loss(out, targets, LossWeights()).scalars()
    assert set(scalars) == {"l_ref", "l_clf", "l_text", "l_mask", "total"}
    assert all(isinstance(v, float) for v in scalars.values())


def test_loss_differentiable(loss_inputs, tiny_model_cfg, small_corpus, vocab):
    """Gradients flow to parameters through the combined objective."""
    c2i = class_index(small_corpus.catalog)
    samples = []
    for record in small_corpus.records[:4]:
        scene = small_corpus.scenes[record.scene_id]
        labels = {o.object_id: o.class_label for o in scene.objects}
        samples.append(
            prepare_sample(record, scene, labels, vocab, tiny_model_cfg, c2i,
                           masking=MaskingPolicy(select_p=1.0), mask_seed=1)
        )
    batch, target_index, binary_labels, text_class, mlm_labels = collate(samples)
    model = init_model(tiny_model_cfg, seed=0)
    out = model(batch)
    targets = LossTargets(
        target_index=target_index, binary_labels=binary_labels,
        text_class=text_class, mlm_labels=mlm_labels,
    )
    bundle = compute_loss(out, targets, LossWeights())
    bundle.total.backward()
    grads = [p.grad for p in model.parameters() if p.grad is not None]
    assert grads
    assert any(float(g.abs().sum()) > 0 for g in grads)
