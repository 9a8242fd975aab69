import numpy as np
import pytest

from oracles import vote_direct
from tarseg.glyphs import SYMBOLS
from tarseg.pipeline import file_tag, run_pipeline, symbol_name
from tarseg.pyramid import ConfigError
from tarseg.recognizer import END
from tarseg.seghead import ensemble
from tarseg.tar import RefineConfig, binarize
from tarseg.weights import MissingWeight, ModelWeights


def _weights(seed=0):
    return ModelWeights.random(4, 8, 6, 4, len(SYMBOLS), 4, 4, seed=seed)


def _image(h=16, w=16, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (3, h, w)).astype(np.float32)


def test_forced_symbol_gives_one_mask_per_step():
    w = _weights()
    w.recognizer.out_b[5] = 1e4
    res = run_pipeline(_image(), w, max_steps=4)
    assert res.symbols == [5] * 4
    assert [inst.index for inst in res.instances] == [0, 1, 2, 3]
    for inst in res.instances:
        assert inst.mask.shape == (16, 16) and inst.pseudo.shape == (16, 16)
        assert set(np.unique(inst.mask)) <= {0, 1}
        assert len(inst.level_masks) == 3 and len(inst.seg_loss) == 3


def test_end_first_gives_no_instances():
    w = _weights()
    w.recognizer.out_b[END] = 1e4
    res = run_pipeline(_image(), w, max_steps=4)
    assert res.instances == []
    s = res.summary()
    assert s["ended"] and s["instances"] == [] and len(s["levels"]) == 3


def test_instance_count_matches_trace():
    res = run_pipeline(_image(seed=3), _weights(seed=3), max_steps=6)
    steps = res.traces[0].steps
    expected = len(steps) - (1 if steps and steps[-1].symbol == END else 0)
    assert len(res.instances) == expected
    for trace in res.traces[1:]:
        assert len(trace.steps) == len(res.instances)


def test_final_mask_and_pseudo_are_level_votes():
    w = _weights(seed=1)
    w.recognizer.out_b[7] = 1e4
    res = run_pipeline(_image(seed=1), w, max_steps=2)
    for inst in res.instances:
        np.testing.assert_array_equal(inst.mask, ensemble(*inst.level_masks, 16, 16))
        bins = [binarize(p) for p in inst.level_pseudo]
        np.testing.assert_array_equal(inst.pseudo, vote_direct(*bins))


def test_deterministic_and_thread_independent():
    w = _weights(seed=2)
    img = _image(16, 32, seed=2)
    a = run_pipeline(img, w, max_steps=3)
    b = run_pipeline(img, w, max_steps=3, threads=3)
    assert a.summary() == b.summary()
    for x, y in zip(a.instances, b.instances):
        assert x.mask.tobytes() == y.mask.tobytes() and x.pseudo.tobytes() == y.pseudo.tobytes()


def test_no_refinement_pseudo_from_attention():
    w = _weights(seed=4)
    w.recognizer.out_b[9] = 1e4
    res = run_pipeline(_image(seed=4), w, 1, RefineConfig(iters_stage1=0, iters_stage2=0))
    inst = res.instances[0]
    assert all(p.min() == 0.0 and p.max() <= 1.0 for p in inst.level_pseudo)


def test_bad_inputs():
    with pytest.raises(ValueError):
        run_pipeline(np.zeros((16, 16)), _weights())
    with pytest.raises(ConfigError):
        run_pipeline(_image(12, 16), _weights())


def test_missing_weight_names_entry():
    d = _weights().to_dict()
    name = sorted(d)[0]
    del d[name]
    with pytest.raises(MissingWeight) as exc:
        ModelWeights.from_dict(d)
    assert name in str(exc.value)


def test_symbol_names_and_tags():
    assert symbol_name(END) == "</s>"
    assert file_tag(SYMBOLS.index("A")) == "A"
    assert file_tag(END) == f"id{END}"
    assert symbol_name(999) == "#999"
