import numpy as np
import pytest

from mtsc.data import ANSWER_SHIFT, PAD, SyntheticDatasetSpec, generate_dataset
from mtsc.experiments.config import load_config
from mtsc.experiments.pipeline import make_data
from mtsc.models import ModalitySample

SPEC = SyntheticDatasetSpec(n_train=103, n_val=31, n_test=27, seed=5)


@pytest.fixture(scope="module")
def splits():
    return generate_dataset(SPEC)


def test_same_spec_same_digest(splits):
    again = generate_dataset(SPEC)
    for name in splits:
        assert splits[name].digest() == again[name].digest()


def test_seed_changes_data(splits):
    other = generate_dataset(SyntheticDatasetSpec(103, 31, 27, seed=6))
    assert other["train"].digest() != splits["train"].digest()


def test_split_sizes_and_ids(splits):
    assert [len(splits[s]) for s in ("train", "val", "test")] == [103, 31, 27]
    ids = [set(splits[s].ids.tolist()) for s in splits]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_split_contents_disjoint(splits):
    train = {r.tobytes() for r in splits["train"].image}
    assert not any(r.tobytes() in train for r in splits["test"].image)


@pytest.mark.parametrize("name", ["train", "val", "test"])
def test_class_balance(splits, name):
    counts = np.bincount(splits[name].label, minlength=10)
    assert counts.max() - counts.min() <= 1


def test_payloads_valid(splits):
    d = splits["train"]
    for i in range(len(d)):
        ModalitySample("image", d.image[i]).validate()
        ModalitySample("text", d.text[i]).validate()
        ModalitySample("audio", d.audio[i]).validate()


def test_caption_lengths(splits):
    d = splits["train"]
    lengths = (d.caption != PAD).sum(axis=1)
    assert lengths.min() >= 4 and lengths.max() <= 8
    assert np.all(d.caption < 64)


def test_vqa_answer_rule(splits):
    d = splits["test"]
    np.testing.assert_array_equal(d.answer, (d.label + np.asarray(ANSWER_SHIFT)[d.question]) % 10)


def test_audio_tone_tracks_class(splits):
    d = splits["train"]
    peak = np.abs(np.fft.rfft(d.audio, axis=1))[:, 1:].argmax(axis=1) + 1
    np.testing.assert_array_equal(peak, 2 + 3 * d.label)


def test_unknown_grammar():
    with pytest.raises(ValueError):
        generate_dataset(SyntheticDatasetSpec(grammar="fancy"))


def test_experiment_data_streams():
    cfg = load_config()
    a, b = make_data(cfg, 0), make_data(cfg, 0)
    assert a.public.digest() == b.public.digest() and a.test.digest() == b.test.digest()
    pub = {r.tobytes() for r in a.public.image}
    assert not any(r.tobytes() in pub for shard in a.shards for r in shard.image)
    assert sum(len(s) for s in a.shards) == cfg.data.n_client
    assert make_data(cfg, 1).test.digest() != a.test.digest()
