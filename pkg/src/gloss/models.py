"""Neural components: encoders, predictor, explanation generators, classifier.

Every model here is a thin composition of autodiff ops. A bundle ties
together the text encoder, the label predictor, and an explanation
generator (five score heads for numeric explanations, a conditional VAE
for text comments). The explanation classifier is a separate model that
maps explanations back to overall labels and stays frozen once
pre-trained.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (BOS, EOS, N_CLASSES, PAD, POLARITIES, SUBSCORE_FIELDS,
                   Vocab, pad_batch)

ENCODER_KINDS = ("bow", "gru", "lstm", "cnn")
N_CONTROLS = 3  # positive / negative / neutral control signals


class Module:
    """Parameter container; collects tensors from attributes recursively."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                out[name] = value
            elif isinstance(value, Module):
                for key, tensor in value.parameters().items():
                    out[f"{name}.{key}"] = tensor
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for key, tensor in item.parameters().items():
                            out[f"{name}.{i}.{key}"] = tensor
                    elif isinstance(item, Tensor):
                        out[f"{name}.{i}"] = item
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, tensor in self.parameters().items():
            source = arrays[prefix + name]
            if source.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {prefix + name}")
            tensor.data[...] = source


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        self.w = Tensor(_xavier(rng, n_in, n_out), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.w)
        return y + self.b if self.b is not None else y


class Embedding(Module):
    """Randomly initialized token embeddings (no pre-trained import path)."""

    def __init__(self, rng, n_rows: int, dim: int, scale: float = 0.1):
        self.w = Tensor(rng.normal(0.0, scale, size=(n_rows, dim)), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return ad.embedding_lookup(self.w, ids)


class GRU(Module):
    def __init__(self, rng, n_in: int, n_hidden: int):
        self.n_hidden = n_hidden
        self.w_x = Tensor(_xavier(rng, n_in, 3 * n_hidden), requires_grad=True)
        self.b_x = Tensor(np.zeros(3 * n_hidden), requires_grad=True)
        self.w_h = Tensor(_xavier(rng, n_hidden, 2 * n_hidden), requires_grad=True)
        self.w_hn = Tensor(_xavier(rng, n_hidden, n_hidden), requires_grad=True)

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        nh = self.n_hidden
        gx = ad.matmul(x, self.w_x) + self.b_x
        gh = ad.matmul(h, self.w_h)
        z = ad.sigmoid(ad.slice_axis(gx, 1, 0, nh) + ad.slice_axis(gh, 1, 0, nh))
        r = ad.sigmoid(ad.slice_axis(gx, 1, nh, 2 * nh) + ad.slice_axis(gh, 1, nh, 2 * nh))
        cand = ad.tanh(ad.slice_axis(gx, 1, 2 * nh, 3 * nh) + ad.matmul(ad.mul(r, h), self.w_hn))
        return cand + ad.mul(z, h - cand)

    def run(self, steps: list[Tensor], mask: np.ndarray, reverse: bool = False) -> Tensor:
        """Final hidden state over a padded batch; masked steps carry state."""
        batch = steps[0].shape[0]
        h = Tensor(np.zeros((batch, self.n_hidden)))
        order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
        for t in order:
            h_new = self.step(steps[t], h)
            m = Tensor(mask[:, t:t + 1])
            h = h + ad.mul(m, h_new - h)
        return h


class LSTM(Module):
    def __init__(self, rng, n_in: int, n_hidden: int):
        self.n_hidden = n_hidden
        self.w_x = Tensor(_xavier(rng, n_in, 4 * n_hidden), requires_grad=True)
        self.w_h = Tensor(_xavier(rng, n_hidden, 4 * n_hidden), requires_grad=True)
        self.b = Tensor(np.zeros(4 * n_hidden), requires_grad=True)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        nh = self.n_hidden
        gates = ad.matmul(x, self.w_x) + ad.matmul(h, self.w_h) + self.b
        i = ad.sigmoid(ad.slice_axis(gates, 1, 0, nh))
        f = ad.sigmoid(ad.slice_axis(gates, 1, nh, 2 * nh))
        o = ad.sigmoid(ad.slice_axis(gates, 1, 2 * nh, 3 * nh))
        g = ad.tanh(ad.slice_axis(gates, 1, 3 * nh, 4 * nh))
        c_new = ad.mul(f, c) + ad.mul(i, g)
        return ad.mul(o, ad.tanh(c_new)), c_new

    def run(self, steps: list[Tensor], mask: np.ndarray) -> Tensor:
        batch = steps[0].shape[0]
        h = Tensor(np.zeros((batch, self.n_hidden)))
        c = Tensor(np.zeros((batch, self.n_hidden)))
        for t in range(len(steps)):
            h_new, c_new = self.step(steps[t], h, c)
            m = Tensor(mask[:, t:t + 1])
            h = h + ad.mul(m, h_new - h)
            c = c + ad.mul(m, c_new - c)
        return h


class BiGRU(Module):
    def __init__(self, rng, n_in: int, n_hidden: int):
        self.fwd = GRU(rng, n_in, n_hidden)
        self.bwd = GRU(rng, n_in, n_hidden)

    def run(self, steps: list[Tensor], mask: np.ndarray) -> Tensor:
        return ad.concat([self.fwd.run(steps, mask),
                          self.bwd.run(steps, mask, reverse=True)], axis=1)


def _embed_steps(embed: Embedding, ids: np.ndarray) -> list[Tensor]:
    """One embedding lookup per timestep (cheap scatter in backward)."""
    return [embed(ids[:, t]) for t in range(ids.shape[1])]


def _slice_steps(emb3: Tensor) -> list[Tensor]:
    """Split a (B, T, E) tensor into per-step (B, E) tensors."""
    batch, steps, dim = emb3.shape
    return [ad.slice_axis(emb3, 1, t, t + 1).reshape(batch, dim) for t in range(steps)]


def _masked_mean(emb3: Tensor, mask: np.ndarray) -> Tensor:
    weights = mask[:, :, None]
    lengths = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    summed = ad.mul(emb3, Tensor(weights)).sum(axis=1)
    return ad.mul(summed, Tensor(1.0 / lengths))


# -- encoders ------------------------------------------------------------------


@dataclass
class EncoderConfig:
    """Architecture and sizes of the review encoder."""

    kind: str
    vocab_size: int
    embedding_dim: int = 100
    hidden_dim: int = 128
    cnn_filters: int | None = None
    cnn_filter_sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if min(self.vocab_size, self.embedding_dim, self.hidden_dim) < 1:
            raise ValueError("encoder dimensions must be positive")
        if self.kind == "cnn":
            if self.cnn_filters is None:
                self.cnn_filters = 256
            if self.cnn_filter_sizes is None:
                self.cnn_filter_sizes = (3, 4, 5, 6)
            self.cnn_filter_sizes = tuple(self.cnn_filter_sizes)
            if self.cnn_filters < 1 or not self.cnn_filter_sizes:
                raise ValueError("cnn encoder needs filters and filter sizes")
        elif self.cnn_filters is not None or self.cnn_filter_sizes is not None:
            raise ValueError("cnn fields are only valid for kind='cnn'")

    def as_dict(self) -> dict:
        out = asdict(self)
        if self.cnn_filter_sizes is not None:
            out["cnn_filter_sizes"] = list(self.cnn_filter_sizes)
        return out


def _check_nonempty(mask: np.ndarray) -> None:
    if mask.shape[1] == 0 or mask.sum(axis=1).min() == 0:
        raise ValueError("encoder input contains an empty sequence")


class BowEncoder(Module):
    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        self.embed = Embedding(rng, config.vocab_size, config.embedding_dim)
        self.proj = Linear(rng, config.embedding_dim, config.hidden_dim)

    def __call__(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        _check_nonempty(mask)
        return ad.tanh(self.proj(_masked_mean(self.embed(ids), mask)))


class RecurrentEncoder(Module):
    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        self.embed = Embedding(rng, config.vocab_size, config.embedding_dim)
        rnn_cls = GRU if config.kind == "gru" else LSTM
        self.rnn = rnn_cls(rng, config.embedding_dim, config.hidden_dim)

    def __call__(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        _check_nonempty(mask)
        return self.rnn.run(_embed_steps(self.embed, ids), mask)


class CnnEncoder(Module):
    """Multi-width convolution over embeddings, max-pooled then projected."""

    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        self.embed = Embedding(rng, config.vocab_size, config.embedding_dim)
        self.kernels = [
            Linear(rng, w * config.embedding_dim, config.cnn_filters)
            for w in config.cnn_filter_sizes
        ]
        self.proj = Linear(rng, config.cnn_filters * len(config.cnn_filter_sizes),
                           config.hidden_dim)

    def __call__(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        _check_nonempty(mask)
        widest = max(self.config.cnn_filter_sizes)
        if ids.shape[1] < widest:
            pad = widest - ids.shape[1]
            ids = np.concatenate([ids, np.full((ids.shape[0], pad), PAD, dtype=ids.dtype)], axis=1)
            mask = np.concatenate([mask, np.zeros((mask.shape[0], pad))], axis=1)
        emb = self.embed(ids)
        steps = ids.shape[1]
        pooled = []
        for width, kernel in zip(self.config.cnn_filter_sizes, self.kernels):
            n_windows = steps - width + 1
            window = ad.concat(
                [ad.slice_axis(emb, 1, j, j + n_windows) for j in range(width)], axis=2)
            feats = ad.relu(kernel(window))
            # a window is valid only when fully inside the sequence, so
            # padding can never win the max; rows shorter than the filter
            # fall back to their first window
            valid = mask[:, :n_windows].copy()
            for j in range(1, width):
                valid *= mask[:, j:j + n_windows]
            valid[valid.sum(axis=1) == 0, 0] = 1.0
            feats = feats + Tensor((valid[:, :, None] - 1.0) * 1e9)
            pooled.append(feats.max(axis=1))
        return ad.tanh(self.proj(ad.concat(pooled, axis=1)))


def build_encoder(config: EncoderConfig, rng) -> Module:
    if config.kind == "bow":
        return BowEncoder(config, rng)
    if config.kind in ("gru", "lstm"):
        return RecurrentEncoder(config, rng)
    return CnnEncoder(config, rng)


# -- predictor and numeric generator --------------------------------------------


class Predictor(Module):
    """Linear head mapping the review representation to label probabilities."""

    def __init__(self, rng, hidden_dim: int, n_classes: int):
        self.n_classes = n_classes
        self.out = Linear(rng, hidden_dim, n_classes)

    def logits(self, v_e: Tensor) -> Tensor:
        return self.out(v_e)

    def probs(self, v_e: Tensor) -> Tensor:
        return ad.softmax(self.logits(v_e))


class NumericGenerator(Module):
    """Five independent 6-way score heads over the review representation."""

    def __init__(self, rng, hidden_dim: int, n_fields: int = len(SUBSCORE_FIELDS),
                 n_levels: int = 6):
        self.n_fields = n_fields
        self.n_levels = n_levels
        self.heads = [Linear(rng, hidden_dim, n_levels) for _ in range(n_fields)]

    def logits(self, v_e: Tensor) -> list[Tensor]:
        return [head(v_e) for head in self.heads]

    def probs(self, v_e: Tensor) -> list[Tensor]:
        return [ad.softmax(l) for l in self.logits(v_e)]

    def scores(self, v_e: Tensor) -> np.ndarray:
        """Per-field argmax scores, shape (batch, n_fields)."""
        return np.stack([l.argmax(axis=1) for l in self.logits(v_e)], axis=1)


# -- conditional VAE for text explanations ---------------------------------------


@dataclass
class CvaeConfig:
    """Latent/control sizes and the decode-length cap for comment generation."""

    latent_dim: int = 64
    control_dim: int = 16
    decoder_hidden: int = 128
    comment_hidden: int = 64
    embedding_dim: int = 64
    mlp_hidden: int = 64
    max_len: int = 75

    def __post_init__(self):
        if min(self.latent_dim, self.control_dim, self.decoder_hidden,
               self.comment_hidden, self.embedding_dim, self.mlp_hidden,
               self.max_len) < 1:
            raise ValueError("cvae dimensions must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


class TextCvae(Module):
    """Comment generator conditioned on the review vector and a polarity signal.

    Training maximizes a variational bound: a recognition network encodes
    the golden comment into a latent, the decoder reconstructs the comment
    under teacher forcing, and a KL term ties the recognition posterior to
    a prior network that only sees the condition. At test time the latent
    comes from the prior and decoding is greedy.
    """

    def __init__(self, rng, vocab_size: int, cond_input_dim: int, config: CvaeConfig):
        self.config = config
        self.vocab_size = vocab_size
        cond_dim = config.control_dim + cond_input_dim
        self.embed = Embedding(rng, vocab_size, config.embedding_dim)
        self.ctrl = Embedding(rng, N_CONTROLS, config.control_dim)
        self.comment_enc = BiGRU(rng, config.embedding_dim, config.comment_hidden)
        self.prior_hidden = Linear(rng, cond_dim, config.mlp_hidden)
        self.prior_out = Linear(rng, config.mlp_hidden, 2 * config.latent_dim)
        self.recog_hidden = Linear(rng, cond_dim + 2 * config.comment_hidden,
                                   config.mlp_hidden)
        self.recog_out = Linear(rng, config.mlp_hidden, 2 * config.latent_dim)
        self.dec_init = Linear(rng, config.latent_dim + cond_dim, config.decoder_hidden)
        self.dec = GRU(rng, config.embedding_dim + config.control_dim,
                       config.decoder_hidden)
        self.dec_out = Linear(rng, config.decoder_hidden, vocab_size)

    # condition c = [control embedding ; review vector]
    def condition(self, v_e: Tensor, control: int) -> Tensor:
        batch = v_e.shape[0]
        ctrl = self.ctrl(np.full(batch, control, dtype=np.int64))
        return ad.concat([ctrl, v_e], axis=1)

    def _split_gaussian(self, packed: Tensor) -> tuple[Tensor, Tensor]:
        z = self.config.latent_dim
        return ad.slice_axis(packed, 1, 0, z), ad.slice_axis(packed, 1, z, 2 * z)

    def prior(self, cond: Tensor) -> tuple[Tensor, Tensor]:
        return self._split_gaussian(self.prior_out(ad.tanh(self.prior_hidden(cond))))

    def posterior(self, cond: Tensor, comment_ids: np.ndarray,
                  comment_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        enc = self.comment_enc.run(_embed_steps(self.embed, comment_ids), comment_mask)
        packed = self.recog_out(ad.tanh(self.recog_hidden(ad.concat([enc, cond], axis=1))))
        return self._split_gaussian(packed)

    @staticmethod
    def gaussian_kl(mu_q: Tensor, logvar_q: Tensor,
                    mu_p: Tensor, logvar_p: Tensor) -> Tensor:
        """Per-example KL(q || p) between diagonal Gaussians; exact 0 at q = p."""
        dmu = mu_q - mu_p
        ratio = ad.exp(logvar_q - logvar_p)
        scaled = ad.mul(ad.mul(dmu, dmu), ad.exp(ad.neg(logvar_p)))
        per_dim = (logvar_p - logvar_q) + ratio + scaled - Tensor(1.0)
        return ad.mul(per_dim.sum(axis=1), Tensor(0.5))

    def _decode_hidden(self, z: Tensor, cond: Tensor) -> Tensor:
        return ad.tanh(self.dec_init(ad.concat([z, cond], axis=1)))

    def _step_logits(self, token_emb: Tensor, ctrl_emb: Tensor, h: Tensor) -> tuple[Tensor, Tensor]:
        h = self.dec.step(ad.concat([token_emb, ctrl_emb], axis=1), h)
        return self.dec_out(h), h

    def _teacher_io(self, comment_ids: np.ndarray, comment_mask: np.ndarray):
        """Decoder inputs (BOS-shifted) and targets (EOS-terminated)."""
        batch, steps = comment_ids.shape
        if steps + 1 > self.config.max_len + 1:
            raise ValueError(f"comment length {steps} exceeds decode cap {self.config.max_len}")
        lengths = comment_mask.sum(axis=1).astype(np.int64)
        dec_in = np.full((batch, steps + 1), PAD, dtype=np.int64)
        dec_in[:, 0] = BOS
        dec_in[:, 1:] = comment_ids
        targets = np.full((batch, steps + 1), PAD, dtype=np.int64)
        targets[:, :steps] = comment_ids
        targets[np.arange(batch), lengths] = EOS
        t_mask = np.zeros((batch, steps + 1))
        for i, n in enumerate(lengths):
            t_mask[i, :n + 1] = 1.0
        return dec_in, targets, t_mask

    def elbo_per_example(self, v_e: Tensor, control: int, comment_ids: np.ndarray,
                         comment_mask: np.ndarray, rng: np.random.Generator,
                         ) -> tuple[Tensor, Tensor]:
        """Teacher-forced reconstruction and KL, each shape (batch,)."""
        cond = self.condition(v_e, control)
        mu_p, logvar_p = self.prior(cond)
        mu_q, logvar_q = self.posterior(cond, comment_ids, comment_mask)
        eps = Tensor(rng.standard_normal(mu_q.shape))
        z = mu_q + ad.mul(ad.exp(ad.mul(logvar_q, Tensor(0.5))), eps)
        kl = self.gaussian_kl(mu_q, logvar_q, mu_p, logvar_p)

        dec_in, targets, t_mask = self._teacher_io(comment_ids, comment_mask)
        ctrl_emb = self.ctrl(np.full(v_e.shape[0], control, dtype=np.int64))
        h = self._decode_hidden(z, cond)
        recon = Tensor(np.zeros(v_e.shape[0]))
        for t in range(dec_in.shape[1]):
            logits, h = self._step_logits(self.embed(dec_in[:, t]), ctrl_emb, h)
            ce = ad.cross_entropy(logits, targets[:, t], reduction="none")
            recon = recon + ad.mul(ce, Tensor(t_mask[:, t]))
        return recon, kl

    def elbo(self, v_e: Tensor, control: int, comment_ids: np.ndarray,
             comment_mask: np.ndarray, rng: np.random.Generator,
             ) -> tuple[Tensor, Tensor, Tensor]:
        """Batch-mean (loss, kl, reconstruction) with loss = kl + reconstruction."""
        recon, kl = self.elbo_per_example(v_e, control, comment_ids, comment_mask, rng)
        kl_mean = kl.mean()
        recon_mean = recon.mean()
        return kl_mean + recon_mean, kl_mean, recon_mean

    def teacher_soft_dists(self, v_e: Tensor, control: int, comment_ids: np.ndarray,
                           comment_mask: np.ndarray, rng: np.random.Generator,
                           ) -> tuple[Tensor, np.ndarray]:
        """Per-position vocabulary distributions under teacher forcing.

        Returns the (B, T+1, V) distribution tensor and the matching mask
        over real comment-token positions (the trailing EOS slot is
        masked out).
        """
        cond = self.condition(v_e, control)
        mu_q, logvar_q = self.posterior(cond, comment_ids, comment_mask)
        eps = Tensor(rng.standard_normal(mu_q.shape))
        z = mu_q + ad.mul(ad.exp(ad.mul(logvar_q, Tensor(0.5))), eps)
        dec_in, _, _ = self._teacher_io(comment_ids, comment_mask)
        ctrl_emb = self.ctrl(np.full(v_e.shape[0], control, dtype=np.int64))
        h = self._decode_hidden(z, cond)
        dists = []
        batch = v_e.shape[0]
        for t in range(dec_in.shape[1]):
            logits, h = self._step_logits(self.embed(dec_in[:, t]), ctrl_emb, h)
            dists.append(ad.softmax(logits).reshape(batch, 1, self.vocab_size))
        soft_mask = np.concatenate([comment_mask, np.zeros((batch, 1))], axis=1)
        return ad.concat(dists, axis=1), soft_mask

    def decode(self, v_e: Tensor, control: int, rng: np.random.Generator,
               max_len: int | None = None, z_mode: str = "mean") -> list[list[int]]:
        """Greedy decoding until EOS or the cap, latent taken from the prior.

        The golden explanation is absent at test time, so the latent comes
        from the prior network: its mean by default (deterministic), or a
        reparameterized sample with ``z_mode="sample"``.
        """
        max_len = self.config.max_len if max_len is None else max_len
        with ad.no_grad():
            cond = self.condition(v_e, control)
            mu_p, logvar_p = self.prior(cond)
            if z_mode == "sample":
                eps = Tensor(rng.standard_normal(mu_p.shape))
                z = mu_p + ad.mul(ad.exp(ad.mul(logvar_p, Tensor(0.5))), eps)
            elif z_mode == "mean":
                z = mu_p
            else:
                raise ValueError(f"unknown z_mode {z_mode!r}")
            h = self._decode_hidden(z, cond)
            batch = v_e.shape[0]
            ctrl_emb = self.ctrl(np.full(batch, control, dtype=np.int64))
            tokens = np.full(batch, BOS, dtype=np.int64)
            finished = np.zeros(batch, dtype=bool)
            out: list[list[int]] = [[] for _ in range(batch)]
            for _ in range(max_len):
                logits, h = self._step_logits(self.embed(tokens), ctrl_emb, h)
                tokens = logits.argmax(axis=1)
                for i in range(batch):
                    if finished[i]:
                        continue
                    if tokens[i] == EOS:
                        finished[i] = True
                    else:
                        out[i].append(int(tokens[i]))
                if finished.all():
                    break
        return out


# -- explanation classifier -------------------------------------------------------


class ClassifierNumeric(Module):
    """Maps five sub-field scores to an overall label.

    Each (field, score) pair owns its own embedding row; "cabin staff = 3"
    and "food = 3" are different evidence. Soft inputs are distributions
    over the six scores per field, consumed as expected embeddings so the
    forward pass stays differentiable through a generator.
    """

    def __init__(self, rng, n_classes: int, emb_dim: int = 16, hidden: int = 64,
                 n_fields: int = len(SUBSCORE_FIELDS), n_levels: int = 6):
        self.n_fields = n_fields
        self.n_levels = n_levels
        self.emb_dim = emb_dim
        self.embed = Embedding(rng, n_fields * n_levels, emb_dim)
        self.hidden = Linear(rng, n_fields * emb_dim, hidden)
        self.out = Linear(rng, hidden, n_classes)
        self.frozen = False

    def _head(self, flat: Tensor) -> Tensor:
        return self.out(ad.tanh(self.hidden(flat)))

    def logits_hard(self, subscores: np.ndarray) -> Tensor:
        subscores = np.asarray(subscores, dtype=np.int64)
        if subscores.ndim != 2 or subscores.shape[1] != self.n_fields:
            raise ValueError(f"expected (batch, {self.n_fields}) scores")
        offsets = np.arange(self.n_fields) * self.n_levels
        flat = self.embed(subscores + offsets).reshape(
            subscores.shape[0], self.n_fields * self.emb_dim)
        return self._head(flat)

    def logits_soft(self, dists: list[Tensor]) -> Tensor:
        if len(dists) != self.n_fields:
            raise ValueError(f"expected {self.n_fields} score distributions")
        parts = []
        for field, dist in enumerate(dists):
            rows = ad.slice_axis(self.embed.w, 0, field * self.n_levels,
                                 (field + 1) * self.n_levels)
            parts.append(ad.matmul(dist, rows))
        return self._head(ad.concat(parts, axis=1))

    def probs_hard(self, subscores: np.ndarray) -> Tensor:
        return ad.softmax(self.logits_hard(subscores))

    def probs_soft(self, dists: list[Tensor]) -> Tensor:
        return ad.softmax(self.logits_soft(dists))


class ClassifierText(Module):
    """Maps the three polarity comments to an overall label.

    One shared bidirectional recurrent layer reads each comment; its final
    states concatenate with the comment's mean embedding (skip connection)
    and the three comment vectors feed one output layer.
    """

    def __init__(self, rng, vocab_size: int, n_classes: int,
                 emb_dim: int = 32, hidden: int = 48):
        self.vocab_size = vocab_size
        self.embed = Embedding(rng, vocab_size, emb_dim)
        self.rnn = BiGRU(rng, emb_dim, hidden)
        self.out = Linear(rng, 3 * (2 * hidden + emb_dim), n_classes)
        self.frozen = False

    def _comment_vec(self, emb3: Tensor, mask: np.ndarray) -> Tensor:
        state = self.rnn.run(_slice_steps(emb3), mask)
        return ad.concat([state, _masked_mean(emb3, mask)], axis=1)

    def logits_hard(self, comments: list[tuple[np.ndarray, np.ndarray]]) -> Tensor:
        if len(comments) != 3:
            raise ValueError("expected exactly three comments")
        vecs = [self._comment_vec(self.embed(ids), mask) for ids, mask in comments]
        return self.out(ad.concat(vecs, axis=1))

    def logits_soft(self, comments: list[tuple[Tensor, np.ndarray]]) -> Tensor:
        if len(comments) != 3:
            raise ValueError("expected exactly three comments")
        vecs = []
        for dists, mask in comments:
            emb3 = ad.matmul(dists, self.embed.w)
            vecs.append(self._comment_vec(emb3, mask))
        return self.out(ad.concat(vecs, axis=1))

    def probs_hard(self, comments: list[tuple[np.ndarray, np.ndarray]]) -> Tensor:
        return ad.softmax(self.logits_hard(comments))

    def probs_soft(self, comments: list[tuple[Tensor, np.ndarray]]) -> Tensor:
        return ad.softmax(self.logits_soft(comments))


def classify_explanations(classifier, explanation, form: str, soft: bool) -> Tensor:
    """Frozen-classifier forward over an explanation, hard or soft.

    Numeric form: ``explanation`` is a (batch, 5) int array of scores, or a
    list of five (batch, 6) distribution tensors when ``soft``. Text form:
    a list of three (ids, mask) pairs, with ids replaced by (batch, T, V)
    distribution tensors when ``soft``.
    """
    if form == "numeric":
        return classifier.probs_soft(explanation) if soft else classifier.probs_hard(explanation)
    if form == "text":
        return classifier.probs_soft(explanation) if soft else classifier.probs_hard(explanation)
    raise ValueError(f"unknown explanation form {form!r}")


# -- bundle ----------------------------------------------------------------------


FORM_BY_SCHEMA = {"pcmag": "text", "skytrax": "numeric"}


class ModelBundle(Module):
    """Encoder + predictor + explanation generator for one schema."""

    def __init__(self, schema: str, vocab: Vocab, encoder_config: EncoderConfig,
                 cvae_config: CvaeConfig | None, seed: int):
        self.schema = schema
        self.form = FORM_BY_SCHEMA[schema]
        self.vocab = vocab
        self.encoder_config = encoder_config
        self.cvae_config = cvae_config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = build_encoder(encoder_config, rng)
        self.predictor = Predictor(rng, encoder_config.hidden_dim, N_CLASSES[schema])
        if self.form == "numeric":
            self.generator: Module = NumericGenerator(rng, encoder_config.hidden_dim)
        else:
            if cvae_config is None:
                raise ValueError("text schema requires a cvae config")
            self.generator = TextCvae(rng, len(vocab), encoder_config.hidden_dim,
                                      cvae_config)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, module in (("encoder", self.encoder),
                               ("predictor", self.predictor),
                               ("generator", self.generator)):
            for key, tensor in module.parameters().items():
                out[f"{prefix}.{key}"] = tensor
        return out

    def encode_reviews(self, examples) -> Tensor:
        ids, mask = pad_batch([self.vocab.encode(ex.review) for ex in examples])
        return self.encoder(ids, mask)

    def comment_batch(self, examples, polarity: str) -> tuple[np.ndarray, np.ndarray]:
        comments = [getattr(ex, polarity) for ex in examples]
        return pad_batch([self.vocab.encode(c) for c in comments])

    def meta(self) -> dict:
        out = {
            "kind": "bundle",
            "schema": self.schema,
            "seed": self.seed,
            "encoder": self.encoder_config.as_dict(),
            "vocab": self.vocab.itos,
        }
        if self.cvae_config is not None:
            out["cvae"] = self.cvae_config.as_dict()
        return out

    @classmethod
    def from_meta(cls, meta: dict) -> "ModelBundle":
        enc = dict(meta["encoder"])
        if enc.get("cnn_filter_sizes") is not None:
            enc["cnn_filter_sizes"] = tuple(enc["cnn_filter_sizes"])
        cvae = CvaeConfig(**meta["cvae"]) if "cvae" in meta else None
        return cls(meta["schema"], Vocab(itos=list(meta["vocab"])),
                   EncoderConfig(**enc), cvae, seed=meta["seed"])


def polarity_control(polarity: str) -> int:
    return POLARITIES.index(polarity)
