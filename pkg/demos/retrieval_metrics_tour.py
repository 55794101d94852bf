"""Retrieval metrics on toy rankings, then on a real trained embedding.

Run:  python3 demos/retrieval_metrics_tour.py
"""

import numpy as np

from cipbench import encoder
from cipbench.data import SyntheticSpec, generate, split
from cipbench.losses import LossConfig
from cipbench.retrieval import (
    average_precision, evaluate_run, f1_at, ndcg, pool_descriptors, pr_auc, rank,
)
from cipbench.trainer import TrainConfig, train

# Metrics take a binary relevance list in rank order, best first.
for rel in ([1, 1, 1, 0, 0], [1, 0, 1, 0, 0], [0, 0, 1, 1, 1]):
    print(f"relevance {rel}:  AP={average_precision(rel):.4f}  "
          f"PR-AUC={pr_auc(rel):.4f}  NDCG={ndcg(rel):.4f}  F1={f1_at(rel):.4f}")

# Leave-one-out retrieval over a trained embedding: every object descriptor
# (mean of its view embeddings) queries all the others; same label counts
# as relevant.
dataset = split(generate(SyntheticSpec(
    num_classes=10, objects_per_class=24, views_per_object=8, input_dim=24,
    class_separation=2.0, object_noise_std=0.7, view_noise_std=0.35, seed=0,
)), 0.5, 0)
result = train(dataset, TrainConfig(
    batch_size=50, epochs=30, seed=0, loss=LossConfig.from_name("cip+softmax"),
    hidden_dims=(32,), embedding_dim=16, init_std=0.3,
))

test = dataset.subset("test")
features, _ = encoder.forward_batch(result.params, test.inputs)
descriptors, labels, _ = pool_descriptors(features, test.object_ids, test.labels)
summary = evaluate_run(rank(descriptors, labels))

print(f"\ntrained embedding, {summary.total_queries} leave-one-out queries "
      f"({summary.skipped_queries} skipped):")
print("  micro:", {k: round(v, 4) for k, v in summary.micro.to_dict().items() if k != "aggregation"})
print("  macro:", {k: round(v, 4) for k, v in summary.macro.to_dict().items() if k != "aggregation"})

# Raw inputs as a reference point: the embedding should do better.
raw_desc, raw_labels, _ = pool_descriptors(test.inputs, test.object_ids, test.labels)
raw = evaluate_run(rank(raw_desc, raw_labels))
print(f"  raw-input MAP for comparison: {raw.micro.map:.4f}")
