"""Detector semantics: matching rules, sliding window, reset, replay."""

import numpy as np
import pytest

from querygame.attacks import AttackSpec, default_budget, make_session
from querygame.detectors import (BlacklightDetector, LinfDetector, LshDetector,
                                 QueryCache, Verdict, Evidence, linf_check,
                                 make_detector)
from querygame.querylog import QueryRecord, load_query_log, replay_verdicts, save_query_log

THRESHOLD = 8.0 / 255.0


def random_images(rng, n, shape=(8, 8, 3)):
    return rng.random((n, *shape)).astype(np.float32)


def test_verdict_requires_evidence_iff_flagged():
    with pytest.raises(ValueError):
        Verdict(True, None)
    with pytest.raises(ValueError):
        Verdict(False, Evidence(0, 0.0))


class TestLinf:
    def test_identical_query_flags_with_distance_zero(self, rng):
        det = LinfDetector()
        image = random_images(rng, 1)[0]
        assert not det.check(image).flagged
        verdict = det.check(image.copy())
        assert verdict.flagged
        assert verdict.evidence.statistic == 0.0

    def test_sixteen_over_255_is_benign(self, rng):
        det = LinfDetector()
        base = np.full((4, 4, 3), 0.5, dtype=np.float32)
        for i in range(5):
            shifted = base.copy()
            shifted[i % 4, 0, 0] += np.float32((i + 1) * 16 / 255)
            det.check(np.clip(shifted, 0, 1))
        far = base.copy()
        far[3, 3, 2] = 0.5 + np.float32(16 / 255)
        # differs from every cached image by at least 16/255 somewhere
        assert not det.check(far).flagged

    def test_matches_brute_force_window_oracle(self, rng):
        """200-query stream: verdicts equal an all-pairs-within-window oracle."""
        window = 12
        threshold = 0.85  # tuned so the random stream yields both outcomes
        det = LinfDetector(window=window, threshold=threshold)
        stream = random_images(rng, 200, shape=(4, 4, 3))
        history = []
        verdicts = []
        for query in stream:
            expected = any(
                max(abs(float(a) - float(b))
                    for a, b in zip(query.reshape(-1), past.reshape(-1))) <= threshold
                for past in history[-window:])
            flagged = det.check(query).flagged
            assert flagged == expected
            verdicts.append(flagged)
            history.append(query)
        assert any(verdicts) and not all(verdicts)

    def test_shape_mismatch_is_an_error(self, rng):
        det = LinfDetector()
        det.check(random_images(rng, 1)[0])
        with pytest.raises(ValueError, match="shape"):
            det.check(rng.random((4, 4, 3)).astype(np.float32))

    def test_functional_form_inserts_regardless_of_verdict(self, rng):
        cache = QueryCache(window=3)
        image = random_images(rng, 1)[0]
        linf_check(image, cache)
        linf_check(image, cache)  # flagged, still inserted
        assert len(cache) == 2


class TestLsh:
    def test_identical_query_flags(self, rng):
        det = LshDetector(seed=1)
        image = rng.random((32, 32, 3)).astype(np.float32)
        assert not det.check(image).flagged
        verdict = det.check(image.copy())
        assert verdict.flagged
        assert verdict.evidence.statistic == 0.0

    def test_negative_threshold_never_flags(self, rng):
        det = LshDetector(hamming_threshold=-1, seed=1)
        image = rng.random((32, 32, 3)).astype(np.float32)
        det.check(image)
        assert not det.check(image.copy()).flagged

    def test_thousand_random_cross_class_pairs_zero_flags(self, cifar, rng):
        """Empirical false-positive sweep fixing the default parameters."""
        det = LshDetector(seed=7)
        labels = cifar.test.labels
        flags = 0
        for _ in range(1000):
            i = int(rng.integers(0, len(labels)))
            j = int(rng.integers(0, len(labels)))
            if labels[i] == labels[j]:
                continue
            det.reset()
            det.check(cifar.test.images[i])
            flags += det.check(cifar.test.images[j]).flagged
        assert flags == 0

    def test_fingerprint_is_deterministic(self, rng):
        det = LshDetector(seed=3)
        image = rng.random((32, 32, 3)).astype(np.float32)
        assert np.array_equal(det.fingerprint_of(image), det.fingerprint_of(image))


class TestBlacklight:
    def test_identical_query_flags_with_full_overlap(self, rng):
        det = BlacklightDetector(seed=2)
        image = rng.random((32, 32, 3)).astype(np.float32)
        assert not det.check(image).flagged
        verdict = det.check(image.copy())
        assert verdict.flagged
        assert verdict.evidence.statistic == len(det.fingerprint_of(image))

    def test_consecutive_pgd_candidates_collide(self, natural_model, split):
        """Round-1 and round-2 PGD candidates are flagged under defaults."""
        spec = AttackSpec("pgd", default_budget("pgd", max_rounds=2))
        for i in range(5):
            example = split.attack_seeds[i]
            session = make_session(spec, example.image, example.label, seed=i)
            det = BlacklightDetector(seed=100 + i)
            first = session.next_round(natural_model)
            second = session.next_round(natural_model)
            assert not det.check(first.candidate).flagged
            assert det.check(second.candidate).flagged

    def test_salt_survives_reset(self, rng):
        det = BlacklightDetector(seed=5)
        salt = det.salt
        det.check(rng.random((32, 32, 3)).astype(np.float32))
        det.reset()
        assert det.salt == salt
        assert len(det.cache) == 0

    def test_unbounded_index_matches_windowed_scan(self, rng):
        """The inverted-index path and the cache-scan path agree."""
        stream = random_images(rng, 40, shape=(32, 32, 3))
        stream[10] = stream[3]
        stream[25] = stream[24]
        unbounded = BlacklightDetector(window=None, seed=9)
        windowed = BlacklightDetector(window=100, seed=9)
        for query in stream:
            a = unbounded.check(query)
            b = windowed.check(query)
            assert a.flagged == b.flagged
            if a.flagged:
                assert a.evidence == b.evidence


@pytest.mark.parametrize("name", ["linf", "lsh", "blacklight"])
class TestSlidingWindow:
    def make(self, name, window):
        return make_detector(name, seed=11, window=window)

    def test_duplicate_within_window_flags(self, name, rng):
        det = self.make(name, window=6)
        image = rng.random((32, 32, 3)).astype(np.float32)
        det.check(image)
        for query in random_images(rng, 4, shape=(32, 32, 3)):
            det.check(query)
        assert det.check(image.copy()).flagged

    def test_duplicate_beyond_window_is_not_flagged(self, name, rng):
        det = self.make(name, window=6)
        image = rng.random((32, 32, 3)).astype(np.float32)
        det.check(image)
        for query in random_images(rng, 7, shape=(32, 32, 3)):
            det.check(query)
        assert not det.check(image.copy()).flagged

    def test_reset_then_first_query_is_benign(self, name, rng):
        det = self.make(name, window=6)
        image = rng.random((32, 32, 3)).astype(np.float32)
        det.check(image)
        det.check(image.copy())
        det.reset()
        det.reset()  # idempotent
        assert not det.check(image.copy()).flagged

    def test_replay_reproduces_verdicts(self, name, rng, tmp_path):
        det = self.make(name, window=8)
        stream = random_images(rng, 12, shape=(32, 32, 3))
        stream[5] = stream[2]
        records = [QueryRecord(0, i, "benign", img) for i, img in enumerate(stream)]
        original = [det.check(r.image).flagged for r in records]
        assert any(original)
        path = tmp_path / "log.npz"
        save_query_log(path, records)
        det.reset()
        replayed = [v.flagged for v in replay_verdicts(det, load_query_log(path))]
        assert replayed == original


def test_make_detector_none():
    assert make_detector("none") is None
    assert make_detector(None) is None


def test_make_detector_unknown_name():
    with pytest.raises(ValueError, match="unknown detector"):
        make_detector("perceptual")
