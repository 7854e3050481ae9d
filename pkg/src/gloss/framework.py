"""Joint training of classification and explanation generation.

The core idea: a frozen pre-trained classifier maps explanations (golden
or generated) to label distributions. From the three distributions in
play per example we extract the probability each assigns to the true
label and combine the gaps into a per-example explanation factor

    factor = |p_classified - p_gold| + |p_classified - p_pred|

which weights that example's loss inside a minimum-risk objective:

    total_i = w_loss * L_i + w_risk * (L_i * factor_i)

with L_i = classification loss + generation loss. At the default 1:1
weights the logged breakdown satisfies L = L_p + L_e and
L_final = L + L_MRT exactly. With weights (1, 0) the trainer degenerates
to the plain supervised baseline, sharing one code path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Adam, Tensor
from .data import (CorpusSplit, N_CLASSES, POLARITIES, SUBSCORE_LETTERS,
                   Vocab, pad_batch)
from .metrics import corpus_bleu, topk_accuracy
from .models import (ClassifierNumeric, ClassifierText, CvaeConfig,
                     EncoderConfig, FORM_BY_SCHEMA, ModelBundle,
                     polarity_control)


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""


# -- scalar contract: ground-truth probabilities and the explanation factor -----


def extract_gold_prob(prob_vector, true_label: int) -> float:
    """The probability a normalized distribution assigns to the true class."""
    probs = np.asarray(prob_vector, dtype=np.float64)
    if not 0 <= true_label < probs.shape[-1]:
        raise IndexError(f"label {true_label} out of range [0, {probs.shape[-1]})")
    return float(probs[true_label])


@dataclass
class ProbTriple:
    """Ground-truth probabilities under the predictor, the explanation
    classifier on generated explanations, and the classifier on golden
    explanations."""

    p_pred: float
    p_classified: float
    p_gold: float


def explanation_factor(triple: ProbTriple) -> float:
    """|p_classified - p_gold| + |p_classified - p_pred|, in [0, 2)."""
    return abs(triple.p_classified - triple.p_gold) + abs(triple.p_classified - triple.p_pred)


def mrt_loss(loss: float, factor: float) -> float:
    """Risk-weighted loss for one example."""
    return loss * factor


def final_loss(loss: float, risk_loss: float,
               weights: tuple[float, float] = (1.0, 1.0)) -> float:
    """Weighted sum of the plain loss and the risk-weighted loss."""
    return weights[0] * loss + weights[1] * risk_loss


def _factor_vector(p_classified: Tensor, p_gold: Tensor, p_pred: Tensor) -> Tensor:
    return ad.absolute(p_classified - p_gold) + ad.absolute(p_classified - p_pred)


# -- configuration ----------------------------------------------------------------


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    schema: str
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 5
    seed: int = 0
    predictor_freeze_threshold: float | None = None
    ef_gradient_mode: str = ""  # "soft" or "stop"; schema default if empty
    loss_weights: tuple[float, float] = (1.0, 1.0)
    kl_anneal_frac: float = 0.2

    def __post_init__(self):
        if self.schema not in FORM_BY_SCHEMA:
            raise ValueError(f"unknown schema {self.schema!r}")
        if not self.ef_gradient_mode:
            # constant-weight risk for both forms: letting gradients flow
            # through the classifier drags generated explanations toward
            # label-consistent prototypes instead of the golden ones, which
            # measurably wrecks sub-field accuracy; "soft" stays available
            # as an ablation switch
            self.ef_gradient_mode = "stop"
        if self.ef_gradient_mode not in ("soft", "stop"):
            raise ValueError(f"ef_gradient_mode must be 'soft' or 'stop'")
        if self.predictor_freeze_threshold is not None and self.predictor_freeze_threshold < 0:
            raise ValueError("freeze threshold must be >= 0")
        if min(self.loss_weights) < 0 or max(self.loss_weights) <= 0:
            raise ValueError("loss weights must be nonnegative and not all zero")
        self.loss_weights = (float(self.loss_weights[0]), float(self.loss_weights[1]))

    @classmethod
    def for_schema(cls, schema: str, **overrides) -> "TrainConfig":
        defaults = {"batch_size": 32 if schema == "pcmag" else 64}
        defaults.update(overrides)
        return cls(schema=schema, **defaults)


@dataclass
class LossBreakdown:
    """Per-batch (or per-epoch) scalar means of every loss component."""

    l_p: float
    l_e: float
    ef: float
    l_mrt: float

    @property
    def l(self) -> float:
        return self.l_p + self.l_e

    @property
    def l_final(self) -> float:
        return self.l + self.l_mrt

    def log_record(self) -> dict:
        return {"L_p": self.l_p, "L_e": self.l_e, "L": self.l,
                "EF_mean": self.ef, "L_MRT": self.l_mrt, "L_final": self.l_final}


@dataclass
class TrainResult:
    bundle: ModelBundle
    epochs: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    frozen_at_epoch: int | None = None


# -- classifier pre-training -------------------------------------------------------


def _freeze(classifier) -> None:
    classifier.frozen = True
    for tensor in classifier.parameters().values():
        tensor.requires_grad = False


def _classifier_logits(classifier, examples, form: str, vocab: Vocab | None) -> Tensor:
    if form == "numeric":
        scores = np.array([ex.subscores for ex in examples], dtype=np.int64)
        return classifier.logits_hard(scores)
    comments = [pad_batch([vocab.encode(getattr(ex, pol)) for ex in examples])
                for pol in POLARITIES]
    return classifier.logits_hard(comments)


def _classifier_probs(classifier, examples, form: str, vocab: Vocab | None) -> Tensor:
    return ad.softmax(_classifier_logits(classifier, examples, form, vocab))


def _batched_probs(fn, examples, batch_size: int = 256) -> np.ndarray:
    rows = []
    with ad.no_grad():
        for start in range(0, len(examples), batch_size):
            rows.append(fn(examples[start:start + batch_size]).data)
    return np.concatenate(rows, axis=0)


def pretrain_classifier(split: CorpusSplit, schema: str, seed: int = 0,
                        vocab: Vocab | None = None, lr: float = 2e-3,
                        batch_size: int = 128, max_epochs: int = 40,
                        patience: int = 5, emb_dim: int | None = None,
                        hidden: int | None = None):
    """Train the explanation classifier on golden explanations, then freeze it.

    Stops once dev accuracy has not improved for ``patience`` consecutive
    epochs, restores the best epoch's weights, and reports dev/test
    accuracy. Test accuracy on golden explanations is the oracle number a
    perfect generator could reach.
    """
    form = FORM_BY_SCHEMA[schema]
    rng = np.random.default_rng(seed)
    n_classes = N_CLASSES[schema]
    if form == "numeric":
        classifier = ClassifierNumeric(rng, n_classes, emb_dim=emb_dim or 16,
                                       hidden=hidden or 64)
    else:
        if vocab is None:
            raise ValueError("text classifier needs a vocabulary")
        classifier = ClassifierText(rng, len(vocab), n_classes,
                                    emb_dim=emb_dim or 32, hidden=hidden or 48)

    params = classifier.parameters()
    optimizer = Adam(params, lr=lr)
    labels = {name: np.array([ex.label for ex in part])
              for name, part in (("train", split.train), ("dev", split.dev))}

    def dev_top1() -> float:
        probs = _batched_probs(
            lambda exs: _classifier_probs(classifier, exs, form, vocab), split.dev)
        return topk_accuracy(probs, labels["dev"], 1)

    best_acc = -1.0
    best_state = None
    bad_epochs = 0
    epochs_run = 0
    for epoch in range(max_epochs):
        epoch_rng = np.random.default_rng([seed, 11, epoch])
        order = epoch_rng.permutation(len(split.train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = [split.train[i] for i in idx]
            logits = _classifier_logits(classifier, batch, form, vocab)
            loss = ad.cross_entropy(logits, labels["train"][idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        epochs_run = epoch + 1
        acc = dev_top1()
        if acc > best_acc:
            best_acc = acc
            best_state = {k: t.data.copy() for k, t in params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= patience:
                break
    if best_state is not None:
        for key, tensor in params.items():
            tensor.data[...] = best_state[key]
    _freeze(classifier)

    report = {"dev_top1": best_acc, "epochs_trained": epochs_run}
    for name, part in (("dev", split.dev), ("test", split.test)):
        probs = _batched_probs(
            lambda exs: _classifier_probs(classifier, exs, form, vocab), part)
        part_labels = np.array([ex.label for ex in part])
        report[f"{name}_top1"] = topk_accuracy(probs, part_labels, 1)
        report[f"{name}_top3"] = topk_accuracy(probs, part_labels, 3)
    return classifier, report


# -- training ---------------------------------------------------------------------


def _predictor_param_names(bundle: ModelBundle) -> list[str]:
    return [f"predictor.{k}" for k in bundle.predictor.parameters()]


def _gold_prob_cache(bundle: ModelBundle, classifier, examples) -> np.ndarray:
    """Classifier's true-class probability on golden explanations, cached
    once per run (the classifier is frozen, so the values never change)."""
    labels = np.array([ex.label for ex in examples])
    probs = _batched_probs(
        lambda exs: _classifier_probs(classifier, exs, bundle.form, bundle.vocab),
        examples)
    return probs[np.arange(len(examples)), labels]


def _dev_stats(bundle: ModelBundle, examples, batch_size: int = 256):
    labels = np.array([ex.label for ex in examples])
    prob_rows = []
    lp_sum = 0.0
    with ad.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start:start + batch_size]
            logits = bundle.predictor.logits(bundle.encode_reviews(batch))
            lp = ad.cross_entropy(logits, labels[start:start + batch_size],
                                  reduction="none")
            lp_sum += float(lp.data.sum())
            prob_rows.append(ad.softmax(logits).data)
    probs = np.concatenate(prob_rows, axis=0)
    return (topk_accuracy(probs, labels, 1), topk_accuracy(probs, labels, 3),
            lp_sum / len(examples))


def train(bundle: ModelBundle, split: CorpusSplit, config: TrainConfig,
          classifier=None, mode: str = "gef", log_path=None,
          optimizer: Adam | None = None, start_epoch: int = 0) -> TrainResult:
    """Run the joint trainer in "gef" or "baseline" mode.

    Baseline mode forces loss weights (1, 0) and never touches the
    classifier; it is the same code path with the risk branch inert, so
    ablations compare identical arithmetic. Epoch RNG streams are derived
    from (seed, epoch), which makes checkpoint-resume bitwise exact.
    """
    if mode not in ("gef", "baseline"):
        raise ValueError(f"unknown mode {mode!r}")
    if config.schema != bundle.schema:
        raise ValueError("config schema does not match bundle schema")
    weights = config.loss_weights if mode == "gef" else (1.0, 0.0)
    use_factor = mode == "gef"
    if use_factor:
        if classifier is None:
            raise ValueError("gef mode requires a pre-trained classifier")
        if not classifier.frozen:
            raise ValueError("classifier must be frozen before gef training")

    params = bundle.parameters()
    if optimizer is None:
        optimizer = Adam(params, lr=config.lr)
    result = TrainResult(bundle=bundle)
    train_labels = np.array([ex.label for ex in split.train])
    gold_cache = (_gold_prob_cache(bundle, classifier, split.train)
                  if use_factor else None)

    n_batches = (len(split.train) + config.batch_size - 1) // config.batch_size
    total_steps = max(1, config.epochs * n_batches)
    anneal_steps = max(1, int(config.kl_anneal_frac * total_steps))
    predictor_frozen = set(_predictor_param_names(bundle)) <= optimizer.frozen
    best_dev_lp = np.inf
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    try:
        for epoch in range(start_epoch, config.epochs):
            epoch_rng = np.random.default_rng([config.seed, 23, epoch])
            factor_rng = np.random.default_rng([config.seed, 29, epoch])
            order = epoch_rng.permutation(len(split.train))
            sums = {"l_p": 0.0, "l_e": 0.0, "ef": 0.0, "l_mrt": 0.0}
            seen = 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                batch = [split.train[i] for i in idx]
                labels = train_labels[idx]
                beta = min(1.0, optimizer.step_count / anneal_steps)

                v_e = bundle.encode_reviews(batch)
                logits = bundle.predictor.logits(v_e)
                lp_vec = ad.cross_entropy(logits, labels, reduction="none")
                le_vec = _generation_loss(bundle, v_e, batch, beta, epoch_rng)
                loss_vec = lp_vec + le_vec

                if use_factor:
                    factor_vec, mrt_vec = _risk_terms(
                        bundle, classifier, v_e, logits, labels, batch,
                        loss_vec, gold_cache[idx], config.ef_gradient_mode,
                        factor_rng)
                    sums["ef"] += float(factor_vec.data.sum())
                    sums["l_mrt"] += float(mrt_vec.data.sum())
                else:
                    mrt_vec = None

                if weights[1] == 0.0:
                    total = ad.mul(loss_vec, Tensor(weights[0])).mean()
                else:
                    total = (ad.mul(loss_vec, Tensor(weights[0]))
                             + ad.mul(mrt_vec, Tensor(weights[1]))).mean()
                if not np.isfinite(total.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {optimizer.step_count}")

                optimizer.zero_grad()
                total.backward()
                optimizer.step()

                result.step_losses.append(float(total.data))
                sums["l_p"] += float(lp_vec.data.sum())
                sums["l_e"] += float(le_vec.data.sum())
                seen += len(batch)

            breakdown = LossBreakdown(
                l_p=sums["l_p"] / seen, l_e=sums["l_e"] / seen,
                ef=sums["ef"] / seen, l_mrt=sums["l_mrt"] / seen)
            dev_acc, dev_top3, dev_lp = _dev_stats(bundle, split.dev)
            record = {"epoch": epoch, **breakdown.log_record(),
                      "dev_acc": dev_acc, "dev_top3": dev_top3}
            result.epochs.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()

            if not predictor_frozen:
                best_dev_lp = min(best_dev_lp, dev_lp)
                threshold = config.predictor_freeze_threshold
                if threshold is None and bundle.form == "text":
                    # generation loss dwarfs classification loss for text, so
                    # the predictor stops once train L_p nears the dev optimum
                    threshold = 1.05 * best_dev_lp
                if threshold is not None and breakdown.l_p < threshold:
                    optimizer.set_frozen(_predictor_param_names(bundle))
                    predictor_frozen = True
                    result.frozen_at_epoch = epoch
    except ad.NonFiniteError as err:
        raise TrainingDiverged(str(err)) from err
    finally:
        if log_fh:
            log_fh.close()
    return result


def _generation_loss(bundle: ModelBundle, v_e: Tensor, batch, beta: float,
                     rng: np.random.Generator) -> Tensor:
    """Per-example explanation loss: five-head cross entropy, or the
    KL-annealed variational bound summed over the three comments."""
    if bundle.form == "numeric":
        subs = np.array([ex.subscores for ex in batch], dtype=np.int64)
        le_vec = None
        for f, head_logits in enumerate(bundle.generator.logits(v_e)):
            ce = ad.cross_entropy(head_logits, subs[:, f], reduction="none")
            le_vec = ce if le_vec is None else le_vec + ce
        return le_vec
    le_vec = None
    for polarity in POLARITIES:
        ids, mask = bundle.comment_batch(batch, polarity)
        recon, kl = bundle.generator.elbo_per_example(
            v_e, polarity_control(polarity), ids, mask, rng)
        part = recon + ad.mul(kl, Tensor(beta))
        le_vec = part if le_vec is None else le_vec + part
    return le_vec


def _risk_terms(bundle: ModelBundle, classifier, v_e: Tensor, logits: Tensor,
                labels: np.ndarray, batch, loss_vec: Tensor,
                gold_probs: np.ndarray, gradient_mode: str,
                rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Explanation factor and risk-weighted loss for one batch.

    In "soft" mode the classifier consumes the generator's output
    distributions (expected embeddings), so gradients reach the generator
    through p_classified. In "stop" mode generated explanations are
    decoded hard and the factor acts as a constant per-example weight.
    """
    p_pred = ad.pick(ad.softmax(logits), labels).detach()
    p_gold = Tensor(gold_probs)

    if bundle.form == "numeric":
        if gradient_mode == "soft":
            dists = bundle.generator.probs(v_e)
            p_cls = ad.pick(classifier.probs_soft(dists), labels)
        else:
            with ad.no_grad():
                scores = bundle.generator.scores(v_e)
                p_cls = ad.pick(classifier.probs_hard(scores), labels)
    else:
        if gradient_mode == "soft":
            soft_comments = []
            for polarity in POLARITIES:
                ids, mask = bundle.comment_batch(batch, polarity)
                dists, soft_mask = bundle.generator.teacher_soft_dists(
                    v_e, polarity_control(polarity), ids, mask, rng)
                soft_comments.append((dists, soft_mask))
            p_cls = ad.pick(classifier.probs_soft(soft_comments), labels)
        else:
            with ad.no_grad():
                decoded = []
                for polarity in POLARITIES:
                    token_lists = bundle.generator.decode(
                        v_e, polarity_control(polarity), rng)
                    decoded.append(pad_batch(token_lists))
                p_cls = ad.pick(classifier.probs_hard(decoded), labels)

    factor_vec = _factor_vector(p_cls, p_gold, p_pred)
    return factor_vec, ad.mul(loss_vec, factor_vec)


# -- evaluation -------------------------------------------------------------------


def predict_probs(bundle: ModelBundle, examples, batch_size: int = 128) -> np.ndarray:
    """Predictor's label distributions for a list of examples."""
    return _batched_probs(
        lambda exs: bundle.predictor.probs(bundle.encode_reviews(exs)),
        examples, batch_size)


def generate_explanations(bundle: ModelBundle, examples, rng: np.random.Generator,
                          batch_size: int = 128):
    """Generated explanations for a list of examples.

    Numeric form returns an (n, 5) int array of scores; text form a dict
    mapping polarity to decoded token-id lists.
    """
    if bundle.form == "numeric":
        out = []
        with ad.no_grad():
            for start in range(0, len(examples), batch_size):
                v_e = bundle.encode_reviews(examples[start:start + batch_size])
                out.append(bundle.generator.scores(v_e))
        return np.concatenate(out, axis=0)
    decoded = {pol: [] for pol in POLARITIES}
    with ad.no_grad():
        for start in range(0, len(examples), batch_size):
            v_e = bundle.encode_reviews(examples[start:start + batch_size])
            for polarity in POLARITIES:
                decoded[polarity].extend(
                    bundle.generator.decode(v_e, polarity_control(polarity), rng))
    return decoded


def evaluate(bundle: ModelBundle, examples, classifier=None, seed: int = 0,
             batch_size: int = 128) -> dict:
    """Accuracy (and BLEU or sub-field accuracy) report for one split."""
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    labels = np.array([ex.label for ex in examples])
    probs = predict_probs(bundle, examples, batch_size)
    report: dict = {
        "top1": topk_accuracy(probs, labels, 1),
        "top3": topk_accuracy(probs, labels, 3),
    }
    rng = np.random.default_rng([seed, 31])
    if bundle.form == "numeric":
        golden = np.array([ex.subscores for ex in examples])
        predicted = generate_explanations(bundle, examples, rng, batch_size)
        report["fields"] = {
            letter: 100.0 * float((predicted[:, f] == golden[:, f]).mean())
            for f, letter in enumerate(SUBSCORE_LETTERS)
        }
    else:
        decoded = generate_explanations(bundle, examples, rng, batch_size)
        bleu = {}
        all_cands, all_refs = [], []
        for polarity in POLARITIES:
            cands = [bundle.vocab.decode(ids) for ids in decoded[polarity]]
            refs = [getattr(ex, polarity) for ex in examples]
            bleu[polarity] = corpus_bleu(cands, refs)
            all_cands.extend(cands)
            all_refs.extend(refs)
        bleu["aggregate"] = corpus_bleu(all_cands, all_refs)
        report["bleu"] = bleu
    if classifier is not None:
        oracle_probs = _batched_probs(
            lambda exs: _classifier_probs(classifier, exs, bundle.form, bundle.vocab),
            examples, batch_size)
        report["oracle"] = {
            "top1": topk_accuracy(oracle_probs, labels, 1),
            "top3": topk_accuracy(oracle_probs, labels, 3),
        }
    return report


# -- persistence ------------------------------------------------------------------


def save_bundle(path, bundle: ModelBundle, optimizer: Adam | None = None,
                extra_meta: dict | None = None) -> None:
    arrays = {f"model.{k}": t.data for k, t in bundle.parameters().items()}
    meta = bundle.meta()
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        meta["optimizer"] = {"step_count": optimizer.step_count, "lr": optimizer.lr,
                             "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                             "eps": optimizer.eps,
                             "frozen": sorted(optimizer.frozen)}
    if extra_meta:
        meta.update(extra_meta)
    checkpoint.save(path, arrays, meta)


def load_bundle(path) -> tuple[ModelBundle, dict, dict]:
    """Rebuild a bundle from its checkpoint; returns (bundle, meta, arrays)."""
    arrays, meta = checkpoint.load(path)
    if meta is None or meta.get("kind") != "bundle":
        raise checkpoint.CheckpointError(f"{path} is not a model bundle checkpoint")
    bundle = ModelBundle.from_meta(meta)
    bundle.load_arrays(arrays, prefix="model.")
    return bundle, meta, arrays


def resume_optimizer(bundle: ModelBundle, meta: dict, arrays: dict) -> Adam:
    opt_meta = meta["optimizer"]
    optimizer = Adam(bundle.parameters(), lr=opt_meta["lr"], beta1=opt_meta["beta1"],
                     beta2=opt_meta["beta2"], eps=opt_meta["eps"])
    optimizer.load_state_arrays(arrays, opt_meta["step_count"])
    optimizer.set_frozen(opt_meta.get("frozen", ()))
    return optimizer


def save_classifier(path, classifier, schema: str, vocab: Vocab | None = None,
                    report: dict | None = None) -> None:
    meta = {"kind": "classifier", "schema": schema, "form": FORM_BY_SCHEMA[schema]}
    if isinstance(classifier, ClassifierText):
        meta["vocab"] = vocab.itos
        meta["dims"] = {"emb_dim": classifier.embed.w.shape[1],
                        "hidden": classifier.rnn.fwd.n_hidden}
    else:
        meta["dims"] = {"emb_dim": classifier.emb_dim,
                        "hidden": classifier.hidden.w.shape[1]}
    if report:
        meta["report"] = report
    arrays = {k: t.data for k, t in classifier.parameters().items()}
    checkpoint.save(path, arrays, meta)


def load_classifier(path):
    """Load a frozen classifier; returns (classifier, vocab_or_None, meta)."""
    arrays, meta = checkpoint.load(path)
    if meta is None or meta.get("kind") != "classifier":
        raise checkpoint.CheckpointError(f"{path} is not a classifier checkpoint")
    schema = meta["schema"]
    rng = np.random.default_rng(0)
    vocab = None
    if meta["form"] == "text":
        vocab = Vocab(itos=list(meta["vocab"]))
        classifier = ClassifierText(rng, len(vocab), N_CLASSES[schema],
                                    emb_dim=meta["dims"]["emb_dim"],
                                    hidden=meta["dims"]["hidden"])
    else:
        classifier = ClassifierNumeric(rng, N_CLASSES[schema],
                                       emb_dim=meta["dims"]["emb_dim"],
                                       hidden=meta["dims"]["hidden"])
    classifier.load_arrays(arrays)
    _freeze(classifier)
    return classifier, vocab, meta
