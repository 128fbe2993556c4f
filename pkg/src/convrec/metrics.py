"""Automatic evaluation: Recall@k, Distinct-n, Item-F1, Average Item Number.

All metrics are pure functions of their inputs. Distinct-n ships in two
normalizations because published numbers are ambiguous about the denominator
(values above 100 rule out the plain ratio): the "ratio" variant divides
distinct n-grams by total n-grams, the "per_response" variant divides by the
number of responses. Both are reported x100.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import TrainingTriplet
from .tokenizer import split_text

K_DEFAULT = (1, 5, 10, 50)
N_DEFAULT = (2, 3, 4)


def recall_at_k(
    ranked: Sequence[Sequence[str]],
    gold: Sequence[set[str] | frozenset[str]],
    k: int,
) -> float | None:
    """Per-gold-item hit rate within the top-k; triplets with empty gold are skipped."""
    hits = total = 0
    for ranked_items, gold_items in zip(ranked, gold):
        if not gold_items:
            continue
        top = set(ranked_items[:k])
        for g in gold_items:
            total += 1
            hits += int(g in top)
    return hits / total if total else None


def _ngrams(tokens: Sequence[str], n: int):
    return (tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def distinct_n(responses: Sequence[Sequence[str]], n: int) -> tuple[float | None, float | None]:
    """(ratio variant, per-response variant), both x100.

    ratio: distinct n-grams / total n-grams. per_response: distinct n-grams /
    number of responses. None when no response is long enough.
    """
    seen: set[tuple[str, ...]] = set()
    total = 0
    for tokens in responses:
        for gram in _ngrams(tokens, n):
            seen.add(gram)
            total += 1
    if total == 0:
        return None, None
    ratio = 100.0 * len(seen) / total
    per_response = 100.0 * len(seen) / len(responses) if responses else None
    return ratio, per_response


def item_f1(
    generated: Sequence[Sequence[str]],
    reference: Sequence[Sequence[str]],
    placeholder: str,
) -> float | None:
    """F1 of response-level contains-a-recommendation labels, generated vs reference."""
    tp = fp = fn = 0
    any_positive = False
    for gen_tokens, ref_tokens in zip(generated, reference):
        g = placeholder in gen_tokens
        r = placeholder in ref_tokens
        any_positive = any_positive or g or r
        tp += int(g and r)
        fp += int(g and not r)
        fn += int(r and not g)
    if not any_positive:
        return None
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def avg_item_number(generated: Sequence[Sequence[str]], placeholder: str) -> float | None:
    """Mean placeholder count per generated response, x100 (counted before filling)."""
    if not generated:
        return None
    counts = [sum(1 for tok in tokens if tok == placeholder) for tokens in generated]
    return 100.0 * sum(counts) / len(counts)


@dataclass
class MetricReport:
    recall: dict[int, float | None] = field(default_factory=dict)
    dist: dict[int, float | None] = field(default_factory=dict)
    dist_per_response: dict[int, float | None] = field(default_factory=dict)
    item_f1: float | None = None
    ain: float | None = None
    evaluated_triplets: int = 0
    generated_responses: int = 0

    def to_dict(self) -> dict:
        return {
            "recommendation": {f"recall@{k}": v for k, v in self.recall.items()},
            "generation": {
                **{f"dist-{n}": v for n, v in self.dist.items()},
                **{f"dist-{n}_per_response": v for n, v in self.dist_per_response.items()},
                "item_f1": self.item_f1,
                "ain": self.ain,
            },
            "counts": {
                "evaluated_triplets": self.evaluated_triplets,
                "generated_responses": self.generated_responses,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        def fmt(v):
            return "null" if v is None else f"{v:.2f}"

        rows = [("metric", "value")]
        for k in sorted(self.recall):
            rows.append((f"R@{k}", fmt(100.0 * self.recall[k] if self.recall[k] is not None else None)))
        for n in sorted(self.dist):
            rows.append((f"Dist-{n}", fmt(self.dist[n])))
        for n in sorted(self.dist_per_response):
            rows.append((f"Dist-{n}/resp", fmt(self.dist_per_response[n])))
        rows.append(("Item-F1", fmt(100.0 * self.item_f1 if self.item_f1 is not None else None)))
        rows.append(("AIN", fmt(self.ain)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate(
    bundle,
    triplets: Sequence[TrainingTriplet],
    k_list: Sequence[int] = K_DEFAULT,
    n_list: Sequence[int] = N_DEFAULT,
    max_len: int = 40,
    strategy: str = "greedy",
) -> MetricReport:
    """Run retrieval and generation over the test triplets and assemble metrics.

    ``bundle`` needs ``rank_items(context, k)`` returning ranked (id, score)
    pairs, ``generate_response(context, ...)`` returning token ids, and a
    tokenizer. Deterministic under greedy decoding.
    """
    dialogue = [t for t in triplets if not t.is_augmented]
    placeholder = bundle.tokenizer.vocab[bundle.tokenizer.placeholder_id]
    max_k = max(k_list) if k_list else 0

    ranked: list[list[str]] = []
    gold: list[frozenset[str]] = []
    generated: list[list[str]] = []
    reference: list[list[str]] = []
    for t in dialogue:
        if t.gold_items:
            result = bundle.rank_items(t.context, max_k)
            ranked.append([item_id for item_id, _ in result.top_k])
            gold.append(t.gold_items)
        token_ids = bundle.generate_response(t.context, max_len=max_len, strategy=strategy)
        hidden = {bundle.tokenizer.pad_id, bundle.tokenizer.bos_id, bundle.tokenizer.eos_id}
        generated.append([bundle.tokenizer.vocab[i] for i in token_ids if i not in hidden])
        reference.append(split_text(t.target))

    report = MetricReport(
        evaluated_triplets=len(gold),
        generated_responses=len(generated),
    )
    for k in k_list:
        report.recall[k] = recall_at_k(ranked, gold, k)
    for n in n_list:
        ratio, per_resp = distinct_n(generated, n)
        report.dist[n] = ratio
        report.dist_per_response[n] = per_resp
    report.item_f1 = item_f1(generated, reference, placeholder)
    report.ain = avg_item_number(generated, placeholder)
    return report

