import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qpv.errors import ConfigurationError
from qpv.estimator import F0Tracker, QPVocoder, check_corpus, check_tracks, check_waveform
from qpv.features import CorpusRecipe, synth_corpus


class TestValidation:
    def test_waveform(self):
        assert check_waveform([1, 2, 3]).dtype == np.float64
        for bad in ([], [[1.0, 2.0]], [0.0, np.inf]):
            with pytest.raises(ValueError):
                check_waveform(bad)

    def test_tracks(self):
        with pytest.raises(TypeError):
            check_tracks([np.zeros(3)])
        with pytest.raises(ValueError):
            check_tracks([])

    def test_corpus_pairs(self):
        u = synth_corpus(CorpusRecipe(n_utterances=1, duration_s=0.1), 0)[0]
        out = check_corpus([(u.audio, u.track)])
        assert out[0].name == "utt000" and np.array_equal(out[0].audio, u.audio)


class TestF0Tracker:
    def test_params_and_clone(self):
        t = F0Tracker(f0_min=70.0)
        assert t.get_params()["f0_min"] == 70.0
        assert clone(t).get_params() == t.get_params()

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            F0Tracker().transform(np.zeros(2048))

    def test_sine(self):
        x = np.sin(2 * np.pi * 220.5 * np.arange(22050) / 22050)
        f0 = F0Tracker().fit(x).transform(x)
        assert f0.ndim == 1 and np.all(np.abs(f0 - 220.5) <= 220.5 * 0.01)

    def test_list_input(self):
        xs = [np.zeros(4096), np.sin(2 * np.pi * 150 * np.arange(4096) / 22050)]
        out = F0Tracker().fit_transform(xs)
        assert len(out) == 2 and np.all(out[0] == 0) and np.all(out[1] > 0)

    def test_bad_range(self):
        with pytest.raises(ConfigurationError):
            F0Tracker(f0_min=500, f0_max=100).fit()


class TestQPVocoder:
    def test_params_and_clone(self):
        v = QPVocoder(channels=8, structure="parallel")
        assert clone(v).get_params() == v.get_params()
        assert v.experiment(10).generator.structure == "parallel"

    def test_layouts(self):
        assert [m.kind for m in QPVocoder(structure="stacked-fa").experiment(10).generator.macroblocks] == ["fixed", "adaptive"]
        assert QPVocoder(structure="single").experiment(10).generator.n_blocks == 4

    def test_bad_structure(self):
        with pytest.raises(ConfigurationError):
            QPVocoder(structure="ring").experiment(10)

    def test_predict_before_fit(self):
        u = synth_corpus(CorpusRecipe(n_utterances=1, duration_s=0.1), 0)[0]
        with pytest.raises(NotFittedError):
            QPVocoder().predict(u.track)

    def test_fit_predict_score(self):
        corpus = synth_corpus(CorpusRecipe(n_utterances=2, duration_s=0.2), 0)
        v = QPVocoder(n_adaptive=1, n_fixed=1, channels=2, disc_channels=2, total_iters=2, warmup_iters=1, batch_len=1320, batch_size=1)
        v.fit(corpus)
        assert len(v.history_) == 2 and v.n_aux_channels_ == 10
        wave = v.predict(corpus[0].track, f0_ratio=2.0)
        assert wave.shape == (corpus[0].track.n_samples,)
        assert len(v.predict([u.track for u in corpus])) == 2
        s = v.score(corpus)
        assert s <= 0.0
        with pytest.raises(ValueError):
            v.predict(corpus[0].track, f0_ratio=0.0)
