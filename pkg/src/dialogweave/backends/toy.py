"""Desk-scale conditional sequence model with hand-rolled gradients.

An embedding + GRU scorer (well under 1M parameters) that computes the
mean negative log-likelihood of a target token sequence given a tagged
condition, trains with AdamW, and decodes greedily. Everything is float64
numpy, so analytic gradients can be validated against central finite
differences and runs are bit-reproducible given a seed.

The gate projections are stored fused (one input matrix for all three
gates, one recurrent matrix for the update/reset pair) so the per-token
work is a couple of matrix-vector products; input and output projections
are batched over the whole sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ..text import detokenize, tokenize
from .base import BackendError, GenRequest, Segment

PAD = "<pad>"
SEP = "<sep>"
EOS = "<eos>"
SPECIALS = (PAD, SEP, EOS)

# Markers that serialized training pairs and tagged segments may introduce.
STANDARD_MARKERS = (
    "<user>",
    "<system>",
    "<state>",
    "<knowledge>",
    "<context>",
    "<goal>",
    "<persona>",
)


class VocabularyError(BackendError):
    pass


class TrainingError(BackendError):
    pass


class Vocab:
    def __init__(self, tokens: Sequence[str]) -> None:
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        for special in SPECIALS:
            if special not in self.index:
                raise VocabularyError(f"vocabulary missing special token {special}")

    @classmethod
    def build(cls, token_seqs: Iterable[Sequence[str]], extra: Sequence[str] = ()) -> "Vocab":
        seen: dict[str, None] = {}
        for seq in token_seqs:
            for token in seq:
                seen.setdefault(token, None)
        tokens = list(SPECIALS) + [m for m in STANDARD_MARKERS if m not in seen]
        tokens += [t for t in extra if t not in seen and t not in tokens]
        tokens += [t for t in seen if t not in SPECIALS]
        return cls(tokens)

    def encode(self, tokens: Sequence[str], strict: bool = True) -> list[int]:
        """Token ids; unknown tokens raise when strict, else are dropped
        (inference-time leniency for arbitrary user input)."""
        ids = []
        for token in tokens:
            index = self.index.get(token)
            if index is None:
                if strict:
                    raise VocabularyError(f"unknown token {token!r}")
                continue
            ids.append(index)
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def __len__(self) -> int:
        return len(self.tokens)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def condition_tokens(segments: Sequence[Segment]) -> list[str]:
    """Flatten tagged segments to a token stream, each segment prefixed by
    its tag marker."""
    out: list[str] = []
    for segment in segments:
        out.append(f"<{segment.tag.value}>")
        out.extend(tokenize(segment.text))
    return out


def _as_tokens(value: str | Sequence[str] | Sequence[Segment]) -> list[str]:
    if isinstance(value, str):
        return tokenize(value)
    value = list(value)
    if value and isinstance(value[0], Segment):
        return condition_tokens(value)  # type: ignore[arg-type]
    return [str(t) for t in value]


@dataclass
class _ForwardCache:
    ids: list[int]
    X: np.ndarray        # (T, d) embedded inputs
    H_prev: np.ndarray   # (T, H) hidden state entering each step
    Z: np.ndarray        # (T, H) update gates
    R: np.ndarray        # (T, H) reset gates
    HH: np.ndarray       # (T, H) candidate states
    states: np.ndarray   # (T, H) hidden state after each step


class ToySequenceModel:
    """GRU language model scoring targets conditioned on a prefix.

    The condition and target are joined by a separator token; the loss is
    the mean NLL over the target tokens plus the end marker. The output
    projection starts near zero, so a fresh model is near-uniform over the
    vocabulary.
    """

    def __init__(self, vocab: Vocab, embed_dim: int = 48, hidden_dim: int = 96, seed: int = 0) -> None:
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        V, d, H = len(vocab), embed_dim, hidden_dim
        b_gates = np.zeros(3 * H)
        b_gates[:H] = -1.0  # update gate starts low: carry state by default
        self.params: dict[str, np.ndarray] = {
            "E": rng.normal(0.0, 0.1, size=(V, d)),
            # Gate blocks along columns: [update | reset | candidate].
            "W_gates": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, 3 * H)),
            # Recurrent blocks: [update | reset]; the candidate has its own.
            "U_zr": rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, 2 * H)),
            "U_h": rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, H)),
            "b_gates": b_gates,
            "W_o": rng.normal(0.0, 0.01, size=(H, V)),
            "b_o": np.zeros(V),
        }

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward -----------------------------------------------------------

    def _run(self, ids: Sequence[int]) -> _ForwardCache:
        p = self.params
        H = self.hidden_dim
        T = len(ids)
        X = p["E"][list(ids)]
        gates_x = X @ p["W_gates"] + p["b_gates"]
        U_zr, U_h = p["U_zr"], p["U_h"]
        H_prev = np.empty((T, H))
        Z = np.empty((T, H))
        R = np.empty((T, H))
        HH = np.empty((T, H))
        states = np.empty((T, H))
        h = np.zeros(H)
        for t in range(T):
            H_prev[t] = h
            zr = _sigmoid(gates_x[t, : 2 * H] + h @ U_zr)
            z, r = zr[:H], zr[H:]
            hh = np.tanh(gates_x[t, 2 * H :] + (r * h) @ U_h)
            h = (1.0 - z) * h + z * hh
            Z[t], R[t], HH[t], states[t] = z, r, hh, h
        return _ForwardCache(ids=list(ids), X=X, H_prev=H_prev, Z=Z, R=R, HH=HH, states=states)

    def _log_probs(self, hidden: np.ndarray) -> np.ndarray:
        logits = hidden @ self.params["W_o"] + self.params["b_o"]
        logits -= logits.max(axis=-1, keepdims=True)
        return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))

    def next_token_distribution(self, prefix: Sequence[str]) -> np.ndarray:
        """Probability vector over the vocabulary after consuming prefix."""
        ids = self.vocab.encode(_as_tokens(list(prefix)))
        if not ids:
            raise BackendError("prefix must be nonempty")
        cache = self._run(ids)
        return np.exp(self._log_probs(cache.states[-1]))

    def _prepare(self, condition, target) -> tuple[list[int], list[int], int]:
        cond_ids = self.vocab.encode(_as_tokens(condition)) if condition else []
        target_tokens = _as_tokens(target)
        if not target_tokens:
            raise BackendError("target is empty after tokenization")
        tgt_ids = self.vocab.encode(target_tokens)
        sep = self.vocab.index[SEP]
        return cond_ids, tgt_ids, sep

    def conditional_nll(self, condition, target) -> float:
        """Mean NLL per target token (end marker included). An empty
        condition scores the target unconditionally."""
        cond_ids, tgt_ids, sep = self._prepare(condition, target)
        feed = cond_ids + [sep] + tgt_ids
        targets_out = tgt_ids + [self.vocab.index[EOS]]
        cache = self._run(feed)
        start = len(cond_ids)
        log_probs = self._log_probs(cache.states[start:])
        loss = -log_probs[np.arange(len(targets_out)), targets_out].mean()
        if not np.isfinite(loss):
            raise TrainingError("non-finite loss")
        return float(loss)

    # -- backward ----------------------------------------------------------

    def conditional_nll_with_grads(self, condition, target) -> tuple[float, dict[str, np.ndarray]]:
        cond_ids, tgt_ids, sep = self._prepare(condition, target)
        feed = cond_ids + [sep] + tgt_ids
        targets_out = np.array(tgt_ids + [self.vocab.index[EOS]])
        cache = self._run(feed)
        start = len(cond_ids)
        n_out = len(targets_out)
        T = len(feed)
        p = self.params
        H = self.hidden_dim

        out_states = cache.states[start:]
        log_probs = self._log_probs(out_states)
        loss = float(-log_probs[np.arange(n_out), targets_out].mean())
        if not np.isfinite(loss):
            raise TrainingError("non-finite loss")

        probs = np.exp(log_probs)
        dlogits = probs
        dlogits[np.arange(n_out), targets_out] -= 1.0
        dlogits /= n_out

        grads: dict[str, np.ndarray] = {
            "W_o": out_states.T @ dlogits,
            "b_o": dlogits.sum(axis=0),
        }
        dstates = np.zeros((T, H))
        dstates[start:] = dlogits @ p["W_o"].T

        U_zr_T = p["U_zr"].T
        U_h_T = p["U_h"].T
        DA = np.empty((T, 3 * H))  # gate pre-activation gradients per step
        dh = np.zeros(H)
        for t in range(T - 1, -1, -1):
            dh = dh + dstates[t]
            h_prev, z, r, hh = cache.H_prev[t], cache.Z[t], cache.R[t], cache.HH[t]
            dz = dh * (hh - h_prev)
            dhh = dh * z
            dh_prev = dh * (1.0 - z)

            da_h = dhh * (1.0 - hh * hh)
            drh = da_h @ U_h_T
            dr = drh * h_prev
            dh_prev = dh_prev + drh * r

            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            DA[t, :H] = da_z
            DA[t, H : 2 * H] = da_r
            DA[t, 2 * H :] = da_h
            dh_prev = dh_prev + DA[t, : 2 * H] @ U_zr_T
            dh = dh_prev

        grads["W_gates"] = cache.X.T @ DA
        grads["b_gates"] = DA.sum(axis=0)
        grads["U_zr"] = cache.H_prev.T @ DA[:, : 2 * H]
        grads["U_h"] = (cache.R * cache.H_prev).T @ DA[:, 2 * H :]
        dX = DA @ p["W_gates"].T
        dE = np.zeros_like(p["E"])
        np.add.at(dE, cache.ids, dX)
        grads["E"] = dE
        return loss, grads

    # -- decoding ----------------------------------------------------------

    def generate_tokens(self, condition, max_tokens: int = 32) -> list[str]:
        """Greedy decode until the end marker or the token budget. The end
        marker is suppressed at the first step so the output is nonempty;
        unknown condition tokens are dropped rather than rejected."""
        cond_ids = self.vocab.encode(_as_tokens(condition), strict=False) if condition else []
        sep = self.vocab.index[SEP]
        eos = self.vocab.index[EOS]
        p = self.params
        H = self.hidden_dim
        U_zr, U_h = p["U_zr"], p["U_h"]
        h = np.zeros(H)
        out_ids: list[int] = []
        feed = cond_ids + [sep]
        gates_feed = p["E"][feed] @ p["W_gates"] + p["b_gates"]

        def step(gates_x: np.ndarray, h: np.ndarray) -> np.ndarray:
            zr = _sigmoid(gates_x[: 2 * H] + h @ U_zr)
            z, r = zr[:H], zr[H:]
            hh = np.tanh(gates_x[2 * H :] + (r * h) @ U_h)
            return (1.0 - z) * h + z * hh

        for t in range(len(feed)):
            h = step(gates_feed[t], h)
        while len(out_ids) < max_tokens:
            logits = h @ p["W_o"] + p["b_o"]
            order = np.argsort(-logits)
            nxt = int(order[0])
            if nxt == eos and not out_ids:
                nxt = int(order[1])
            if nxt == eos:
                break
            out_ids.append(nxt)
            gates_x = p["E"][nxt] @ p["W_gates"] + p["b_gates"]
            h = step(gates_x, h)
        return self.vocab.decode(out_ids)

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays = {f"param_{k}": v for k, v in self.params.items()}
        meta = json.dumps(
            {"embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim, "seed": self.seed}
        )
        np.savez(
            path,
            tokens=np.array(self.vocab.tokens),
            meta=np.array(meta),
            **arrays,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ToySequenceModel":
        data = np.load(str(path), allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        vocab = Vocab([str(t) for t in data["tokens"]])
        model = cls(vocab, meta["embed_dim"], meta["hidden_dim"], meta.get("seed", 0))
        for key in model.params:
            model.params[key] = data[f"param_{key}"]
        return model


class ToyBackend:
    """Registry adapter exposing a toy model through the generate contract."""

    def __init__(self, model: ToySequenceModel, name: str = "local_toy") -> None:
        self.model = model
        self.name = name

    def generate(self, req: GenRequest) -> str:
        tokens = self.model.generate_tokens(condition_tokens(list(req.segments)), req.max_tokens)
        text = detokenize(tokens)
        if not text:
            raise BackendError(f"backend {self.name!r} produced an empty utterance")
        return text


def conditional_nll(model: ToySequenceModel, condition, target) -> float:
    """Module-level form of the conditional likelihood: ``condition`` may
    be tagged segments, a token list, or raw text; likewise ``target``."""
    return model.conditional_nll(condition, target)


@dataclass
class TrainReport:
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)
    epochs: int = 0
    seed: int = 0
    n_examples: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss

    def to_json(self) -> dict:
        return {
            "initial_loss": self.initial_loss,
            "epoch_losses": list(self.epoch_losses),
            "final_loss": self.final_loss,
            "epochs": self.epochs,
            "seed": self.seed,
            "n_examples": self.n_examples,
        }


class AdamW:
    """Decoupled weight decay Adam; constant learning rate."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0) -> None:
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, param in self.params.items():
            g = grads[key]
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            m_hat = self.m[key] / (1 - b1 ** self.t)
            v_hat = self.v[key] / (1 - b2 ** self.t)
            if self.weight_decay:
                param -= self.lr * self.weight_decay * param
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit(
    model: ToySequenceModel,
    examples: Sequence[tuple],
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    batch_size: int = 8,
    weight_decay: float = 0.0,
    early_stop: Callable[[int, TrainReport], bool] | None = None,
) -> TrainReport:
    """Minimize the summed per-example conditional NLL with AdamW.

    The report records the pre-training mean loss and the running mean
    loss of each epoch. Zero epochs computes only the initial loss.
    ``early_stop(epoch_index, report)`` may end training early.
    """
    if not examples:
        raise TrainingError("fit needs at least one example")
    pairs = [(_as_tokens(c), _as_tokens(t)) for c, t in examples]
    initial = float(np.mean([model.conditional_nll(c, t) for c, t in pairs]))
    report = TrainReport(initial_loss=initial, seed=seed, n_examples=len(pairs))
    optimizer = AdamW(model.params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        losses = []
        try:
            for batch_start in range(0, len(order), batch_size):
                batch = order[batch_start : batch_start + batch_size]
                grads_sum: dict[str, np.ndarray] | None = None
                for idx in batch:
                    cond, tgt = pairs[idx]
                    loss, grads = model.conditional_nll_with_grads(cond, tgt)
                    losses.append(loss)
                    if grads_sum is None:
                        grads_sum = grads
                    else:
                        for key in grads_sum:
                            grads_sum[key] += grads[key]
                assert grads_sum is not None
                for key in grads_sum:
                    grads_sum[key] /= len(batch)
                optimizer.step(grads_sum)
        except TrainingError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingError(f"training diverged at epoch {epoch}")
        report.epoch_losses.append(mean_loss)
        report.epochs = epoch + 1
        if early_stop is not None and early_stop(epoch, report):
            break
    return report
