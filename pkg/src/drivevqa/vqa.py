"""Question answering over driving frames.

A small convolutional encoder projects the frame to the fusion width, a
two-layer LSTM over the tokenized question produces a vector of the same
width, the two are fused by elementwise multiplication, and a two-hidden-
layer tanh classifier with dropout ranks every candidate answer under a
softmax.  Desk-scale dimensions are the defaults; the paper-scale profile
(4096-d image features, 1024-d fusion, 512 LSTM units, 1000 candidates)
is just a different VqaConfig.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .dataset import (AnswerVocab, QARecord, QuestionVocab, QA_TEMPLATES,
                      build_vocabs, tokenize)
from .render import Frame, read_frame
from .track import CATEGORIES


class EmptyQuestion(ValueError):
    """The question tokenizes to nothing."""


class UnknownAnswer(ValueError):
    """A manifest answer is missing from the candidate vocabulary."""


@dataclass
class VqaConfig:
    image_size: int = 64
    image_channels: int = 1
    conv_channels: tuple[int, ...] = (8, 16, 32)
    image_feature_dim: int = 256     # E: penultimate image feature width
    fusion_dim: int = 128            # F: shared image/question width
    question_hidden: int = 64        # H per LSTM layer (2 layers)
    embed_dim: int = 32
    classifier_hidden: int = 128     # width of each of the 2 tanh layers
    dropout_p: float = 0.5
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        for name in ("image_feature_dim", "fusion_dim", "question_hidden",
                     "embed_dim", "classifier_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


PAPER_PROFILE = VqaConfig(image_size=480, image_channels=3,
                          conv_channels=(16, 32, 64, 128),
                          image_feature_dim=4096, fusion_dim=1024,
                          question_hidden=512, embed_dim=128,
                          classifier_hidden=1000)


@dataclass(frozen=True)
class Prediction:
    items: tuple[tuple[str, float], ...]  # (answer, probability), descending

    @property
    def answer(self) -> str:
        return self.items[0][0]

    @property
    def probability(self) -> float:
        return self.items[0][1]


def fuse(v_i: np.ndarray, v_q: np.ndarray) -> np.ndarray:
    """Elementwise product of image and question features."""
    v_i = np.asarray(v_i)
    v_q = np.asarray(v_q)
    if v_i.shape != v_q.shape:
        raise nn.ShapeMismatch(f"fuse: {v_i.shape} vs {v_q.shape}")
    return v_i * v_q


class VqaModel:
    def __init__(self, cfg: VqaConfig, question_vocab: QuestionVocab,
                 answer_vocab: AnswerVocab, dtype=nn.DTYPE):
        self.cfg = cfg
        self.qvocab = question_vocab
        self.avocab = answer_vocab
        rng = nn.make_rng(cfg.seed)
        self.rng_dropout = nn.make_rng(cfg.seed + 1)
        chans = [cfg.image_channels, *cfg.conv_channels]
        self.convs = [nn.Conv2d(a, b, 3, stride=2, padding="same",
                                activation="relu", rng=rng, dtype=dtype)
                      for a, b in zip(chans, chans[1:])]
        side = cfg.image_size
        for _ in self.convs:
            side = -(-side // 2)
        self.flat_dim = cfg.conv_channels[-1] * side * side
        self.fc_image = nn.Dense(self.flat_dim, cfg.image_feature_dim, "relu",
                                 rng=rng, dtype=dtype)
        self.proj_image = nn.Dense(cfg.image_feature_dim, cfg.fusion_dim,
                                   "linear", rng=rng, dtype=dtype)
        self.embed = nn.Embedding(question_vocab.size, cfg.embed_dim,
                                  rng=rng, dtype=dtype)
        self.lstm1 = nn.LSTM(cfg.embed_dim, cfg.question_hidden, rng=rng, dtype=dtype)
        self.lstm2 = nn.LSTM(cfg.question_hidden, cfg.question_hidden,
                             rng=rng, dtype=dtype)
        self.proj_question = nn.Dense(4 * cfg.question_hidden, cfg.fusion_dim,
                                      "linear", rng=rng, dtype=dtype)
        self.cls1 = nn.Dense(cfg.fusion_dim, cfg.classifier_hidden, "tanh",
                             rng=rng, dtype=dtype)
        self.cls2 = nn.Dense(cfg.classifier_hidden, cfg.classifier_hidden, "tanh",
                             rng=rng, dtype=dtype)
        self.out = nn.Dense(cfg.classifier_hidden, answer_vocab.size, "linear",
                            rng=rng, dtype=dtype)

    # -- layer plumbing -----------------------------------------------------

    def named_layers(self) -> dict[str, nn.Layer]:
        named = {f"conv{i}": c for i, c in enumerate(self.convs)}
        named.update(fc_image=self.fc_image, proj_image=self.proj_image,
                     embed=self.embed, lstm1=self.lstm1, lstm2=self.lstm2,
                     proj_question=self.proj_question,
                     cls1=self.cls1, cls2=self.cls2, out=self.out)
        return named

    def layers(self):
        return list(self.named_layers().values())

    def zero_grads(self):
        for layer in self.layers():
            layer.zero_grads()

    def param_count(self) -> int:
        return nn.param_count(self.layers())

    # -- forward passes -----------------------------------------------------

    def frames_to_batch(self, frames: list[Frame]) -> np.ndarray:
        batch = np.stack([f.data.transpose(2, 0, 1) for f in frames])
        return batch.astype(np.float32)

    def encode_image(self, x: np.ndarray):
        """(batch, channels, size, size) -> (batch, fusion_dim), with caches."""
        caches = []
        for conv in self.convs:
            x, cache = conv.forward(x)
            caches.append(cache)
        shape_before_flat = x.shape
        flat = x.reshape(x.shape[0], -1)
        e, cache_fc = self.fc_image.forward(flat)
        v, cache_proj = self.proj_image.forward(e)
        return v, (caches, shape_before_flat, cache_fc, cache_proj)

    def encode_image_back(self, dv, cache):
        conv_caches, shape_before_flat, cache_fc, cache_proj = cache
        de = self.proj_image.backward(dv, cache_proj)
        dflat = self.fc_image.backward(de, cache_fc)
        dx = dflat.reshape(shape_before_flat)
        for conv, ccache in zip(reversed(self.convs), reversed(conv_caches)):
            dx = conv.backward(dx, ccache)
        return dx

    def encode_question(self, question: str):
        """Embed, run both LSTM layers, project [h1, c1, h2, c2] to the
        fusion width; (1, fusion_dim) plus caches."""
        ids = self.qvocab.encode(question)
        if not ids:
            raise EmptyQuestion(f"question {question!r} has no tokens")
        ids = np.asarray([ids])
        emb, cache_emb = self.embed.forward(ids)
        hs1, (h1, c1), cache1 = self.lstm1.forward(emb)
        hs2, (h2, c2), cache2 = self.lstm2.forward(hs1)
        summary = np.concatenate([h1, c1, h2, c2], axis=1)
        v, cache_proj = self.proj_question.forward(summary)
        return v, (cache_emb, cache1, cache2, cache_proj)

    def encode_question_back(self, dv, cache):
        cache_emb, cache1, cache2, cache_proj = cache
        dsummary = self.proj_question.backward(dv, cache_proj)
        h = self.cfg.question_hidden
        dh1, dc1 = dsummary[:, :h], dsummary[:, h:2 * h]
        dh2, dc2 = dsummary[:, 2 * h:3 * h], dsummary[:, 3 * h:]
        dhs1, _, _ = self.lstm2.backward(None, cache2, dh2, dc2)
        demb, _, _ = self.lstm1.backward(dhs1, cache1, dh1, dc1)
        self.embed.backward(demb, cache_emb)

    def classify(self, v_r: np.ndarray, train: bool = False):
        """Two tanh layers with dropout, then softmax over the candidates."""
        h1, c1 = self.cls1.forward(v_r)
        d1, m1 = nn.dropout(h1, self.cfg.dropout_p, train, self.rng_dropout)
        h2, c2 = self.cls2.forward(d1)
        d2, m2 = nn.dropout(h2, self.cfg.dropout_p, train, self.rng_dropout)
        logits, c3 = self.out.forward(d2)
        probs = nn.softmax(logits)
        return probs, (c1, m1, c2, m2, c3)

    def classify_back(self, dlogits, cache):
        c1, m1, c2, m2, c3 = cache
        dd2 = self.out.backward(dlogits, c3)
        dh2 = nn.dropout_backward(dd2, m2)
        dd1 = self.cls2.backward(dh2, c2)
        dh1 = nn.dropout_backward(dd1, m1)
        return self.cls1.backward(dh1, c1)

    # -- inference ----------------------------------------------------------

    def forward_eval(self, frames: list[Frame], question: str) -> np.ndarray:
        x = self.frames_to_batch(frames)
        v_i, _ = self.encode_image(x)
        v_q, _ = self.encode_question(question)
        v_r = fuse(v_i, np.repeat(v_q, len(frames), axis=0))
        probs, _ = self.classify(v_r, train=False)
        return probs

    def predict(self, frame: Frame, question: str, k: int = 5) -> Prediction:
        return predict_topk(frame, question, self, k)

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        nn.save_checkpoint(out_dir / "model.ckpt",
                           nn.collect_params(self.named_layers()))
        (out_dir / "question_vocab.txt").write_text(
            "\n".join(self.qvocab.to_lines()) + "\n", encoding="utf-8")
        (out_dir / "answer_vocab.txt").write_text(
            "\n".join(self.avocab.to_lines()) + "\n", encoding="utf-8")
        (out_dir / "config.json").write_text(json.dumps(asdict(self.cfg)), "utf-8")

    @classmethod
    def load(cls, out_dir) -> "VqaModel":
        out_dir = Path(out_dir)
        cfg_raw = json.loads((out_dir / "config.json").read_text())
        cfg_raw["conv_channels"] = tuple(cfg_raw["conv_channels"])
        cfg = VqaConfig(**cfg_raw)
        qvocab = QuestionVocab.from_lines(
            (out_dir / "question_vocab.txt").read_text().splitlines())
        avocab = AnswerVocab.from_lines(
            (out_dir / "answer_vocab.txt").read_text().splitlines())
        model = cls(cfg, qvocab, avocab)
        nn.restore_params(model.named_layers(),
                          nn.load_checkpoint(out_dir / "model.ckpt"))
        return model


# ---------------------------------------------------------------------------
# training

def load_frames(records: list[QARecord]) -> dict[str, Frame]:
    return {rec.frame_id: read_frame(rec.frame_path) for rec in records}


def train_vqa(records: list[QARecord], qvocab: QuestionVocab,
              avocab: AnswerVocab, cfg: VqaConfig | None = None,
              epochs: int | None = None, seed: int | None = None,
              frames: dict[str, Frame] | None = None,
              progress=None) -> tuple[VqaModel, list[float]]:
    """Minimize answer cross-entropy on the train split; returns the model
    and the per-epoch mean loss log."""
    cfg = cfg or VqaConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    n_epochs = cfg.epochs if epochs is None else epochs
    train_records = [r for r in records if r.split == "train"] or list(records)
    for rec in train_records:
        if rec.answer not in avocab:
            raise UnknownAnswer(f"answer not in vocabulary: {rec.answer!r}")
    model = VqaModel(cfg, qvocab, avocab)
    if not train_records or n_epochs == 0:
        return model, []
    frames = frames or load_frames(train_records)
    images = model.frames_to_batch([frames[r.frame_id] for r in train_records])
    targets = np.asarray([avocab.index_of(r.answer) for r in train_records])
    questions = [r.question for r in train_records]

    opt = nn.Adam(model.layers(), cfg.lr)
    shuffle_rng = nn.make_rng(cfg.seed + 2)
    loss_log: list[float] = []
    n = len(train_records)
    for epoch in range(n_epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x = images[idx]
            y = targets[idx]
            batch_questions = [questions[i] for i in idx]

            model.zero_grads()
            v_i, cache_img = model.encode_image(x)
            unique = sorted(set(batch_questions))
            q_vecs, q_caches = {}, {}
            for q in unique:
                q_vecs[q], q_caches[q] = model.encode_question(q)
            v_q = np.concatenate([q_vecs[q] for q in batch_questions], axis=0)
            v_r = fuse(v_i, v_q)
            probs, cache_cls = model.classify(v_r, train=True)
            losses.append(nn.cross_entropy(probs, y))

            dlogits = nn.softmax_xent_grad(probs, y)
            dv_r = model.classify_back(dlogits, cache_cls)
            dv_i = dv_r * v_q
            dv_q = dv_r * v_i
            model.encode_image_back(dv_i, cache_img)
            for q in unique:
                rows = [i for i, bq in enumerate(batch_questions) if bq == q]
                model.encode_question_back(dv_q[rows].sum(axis=0, keepdims=True),
                                           q_caches[q])
            opt.step()
        loss_log.append(float(np.mean(losses)))
        if progress is not None:
            progress(epoch, loss_log[-1])
    return model, loss_log


# ---------------------------------------------------------------------------
# prediction and evaluation

def predict_topk(frame: Frame, question: str, model: VqaModel, k: int = 5) -> Prediction:
    """Eval-mode ranked answers; ties broken toward the lower vocab index."""
    probs = model.forward_eval([frame], question)[0]
    k = min(k, len(probs))
    order = np.lexsort((np.arange(len(probs)), -probs))
    items = tuple((model.avocab.answers[i], float(probs[i])) for i in order[:k])
    return Prediction(items=items)


def evaluate(records: list[QARecord], model,
             frames: dict[str, Frame] | None = None) -> dict:
    """Accuracy, per-category counts, mean top-1 softmax and the confusion
    matrix of the five canonical answers (plus an "other" bucket)."""
    test = [r for r in records if r.split == "test"] or list(records)
    frames = frames or load_frames(test)
    target_answers = [QA_TEMPLATES[c][1] for c in CATEGORIES]
    answer_to_cat = {QA_TEMPLATES[c][1]: c for c in CATEGORIES}
    per_cat = {c: {"correct": 0, "total": 0, "prob_sum": 0.0} for c in CATEGORIES}
    confusion = {c: {p: 0 for p in [*CATEGORIES, "other"]} for c in CATEGORIES}
    correct = 0
    for rec in test:
        pred = model.predict(frames[rec.frame_id], rec.question, 5)
        stats = per_cat[rec.category]
        stats["total"] += 1
        stats["prob_sum"] += pred.probability
        if pred.answer == rec.answer:
            stats["correct"] += 1
            correct += 1
        confusion[rec.category][answer_to_cat.get(pred.answer, "other")] += 1
    total = len(test)
    report = {
        "total": total,
        "correct": correct,
        "accuracy": correct / total if total else 0.0,
        "per_category": {
            c: {
                "correct": s["correct"],
                "total": s["total"],
                "mean_top1_prob": s["prob_sum"] / s["total"] if s["total"] else 0.0,
            } for c, s in per_cat.items()
        },
        "confusion": confusion,
        "target_answers": target_answers,
    }
    return report


def format_report(report: dict) -> str:
    lines = [
        f"overall_accuracy {report['accuracy']:.4f} "
        f"({report['correct']}/{report['total']})",
        "",
        f"{'category':<14} {'correct':>7} {'total':>5} {'mean_top1_prob':>15}",
    ]
    for cat in CATEGORIES:
        s = report["per_category"][cat]
        lines.append(f"{cat:<14} {s['correct']:>7} {s['total']:>5} "
                     f"{s['mean_top1_prob']:>15.4f}")
    lines.append("")
    header = " ".join(f"{c[:10]:>11}" for c in [*CATEGORIES, "other"])
    lines.append(f"{'confusion':<14} {header}")
    for cat in CATEGORIES:
        row = report["confusion"][cat]
        cells = " ".join(f"{row[p]:>11}" for p in [*CATEGORIES, "other"])
        lines.append(f"{cat:<14} {cells}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")
