"""Build a kb from semantic vectors, query it and gate the retrieved context."""

import os
import tempfile

import numpy as np

from mtsc.data import SyntheticDatasetSpec, generate_dataset
from mtsc.models import MTSCModel, run_batch
from mtsc.rag import KnowledgeBase, augment_semantics, kb_retrieve, load_kb, save_kb
from mtsc.rng import RngHandle

test = generate_dataset(SyntheticDatasetSpec(0, 0, 200, seed=3))["test"]
model = MTSCModel(rng=RngHandle(3))
sv = run_batch(model, test.inputs(), 6.0, 16, None)["sv"]

kb = KnowledgeBase("local")
kb.extend(sv[:150], sv[:150])
path = os.path.join(tempfile.mkdtemp(), "local.kb")
save_kb(kb, path)
kb = load_kb(path)
print(f"kb with {len(kb)} entries saved to {path}")

q = sv[160]
hits = kb_retrieve(kb, q, k=3)
for h in hits:
    print(f"  entry {h.entry.insert_index:3d}  cosine {h.similarity:+.3f}  label {test.label[h.entry.insert_index]}")
print(f"query label {test.label[160]}")

mixed = augment_semantics(q, hits, lambda_gate=0.3)
print(f"|q| {np.linalg.norm(q):.3f}  |augmented| {np.linalg.norm(mixed):.3f}")
