"""
Tests for reverse-process sampling and aggregation
"""
import numpy as np
import pytest

from src.algorithms.sampler import aggregate, load_samples, sample, save_samples
from src.algorithms.schedule import make_cosine, uniform_subset
from src.models.domain import SampleSet, SamplerType, one_hot
from src.models.errors import CheckpointError
from src.nets.prior_net import UniformPrior
from src.utils.rng import RngStreams


class FixedPrior:
    """Frozen prior returning a stored field"""

    frozen = True

    def __init__(self, probs: np.ndarray):
        self.probs = probs
        self.num_classes = probs.shape[1]

    def predict(self, image):
        return self.probs


class OracleDenoiser:
    """Predicts the exact v for a known clean label field"""

    def __init__(self, y_star: np.ndarray, sch):
        self.y_star = y_star
        self.sch = sch

    def predict_v(self, s_t, image, prior, t):
        a = np.sqrt(self.sch.rho_bar[t])
        b = self.sch.sigma_bar[t]
        r0 = self.y_star - prior
        eps = (s_t - prior - a * r0) / b
        return a * eps - b * r0


class ZeroDenoiser:
    def predict_v(self, s_t, image, prior, t):
        return np.zeros_like(s_t)


@pytest.fixture
def problem():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, (1, 8, 8))
    y_star = one_hot(labels, 2).astype(np.float64)
    logits = rng.standard_normal(y_star.shape)
    prior = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    image = rng.standard_normal((1, 1, 8, 8))
    return labels, y_star, prior, image


class TestSample:
    """sample() behaviour"""

    @pytest.mark.parametrize("S", [4, 10, 25])
    def test_oracle_ddim_recovers_labels(self, problem, S):
        labels, y_star, prior, image = problem
        sch = make_cosine(100)
        result = sample(
            FixedPrior(prior), OracleDenoiser(y_star, sch), image, M=1,
            steps=uniform_subset(100, S), sch=sch, sampler=SamplerType.DDIM, seed=0,
        )
        pred = aggregate(result, tau_out=0.1)
        assert (pred.mask == labels).mean() >= 0.99

    def test_injection_per_step(self, problem):
        _, _, prior, image = problem
        sch = make_cosine(50)
        for sampler in SamplerType:
            result = sample(FixedPrior(prior), ZeroDenoiser(), image, M=2,
                            steps=uniform_subset(50, 5), sch=sch, sampler=sampler)
            assert result.injections == [5, 5]

    def test_literal_posterior_skips_injection(self, problem):
        _, _, prior, image = problem
        sch = make_cosine(50)
        result = sample(FixedPrior(prior), ZeroDenoiser(), image, M=1, steps=uniform_subset(50, 5),
                        sch=sch, sampler=SamplerType.DDPM_FIXED, posterior="literal")
        assert result.injections == [0]

    def test_deterministic_in_seed(self, problem):
        _, _, prior, image = problem
        sch = make_cosine(50)
        kwargs = dict(M=3, steps=uniform_subset(50, 10), sch=sch, sampler=SamplerType.DDPM_TILDE)
        a = sample(FixedPrior(prior), ZeroDenoiser(), image, seed=7, **kwargs)
        b = sample(FixedPrior(prior), ZeroDenoiser(), image, seed=7, **kwargs)
        c = sample(FixedPrior(prior), ZeroDenoiser(), image, seed=8, **kwargs)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.samples.tobytes() != c.samples.tobytes()

    def test_independent_of_worker_count(self, problem):
        _, _, prior, image = problem
        sch = make_cosine(50)
        kwargs = dict(M=4, steps=uniform_subset(50, 6), sch=sch, sampler=SamplerType.DDPM_FIXED, seed=3)
        serial = sample(FixedPrior(prior), ZeroDenoiser(), image, max_workers=1, **kwargs)
        threaded = sample(FixedPrior(prior), ZeroDenoiser(), image, max_workers=3, **kwargs)
        assert serial.samples.tobytes() == threaded.samples.tobytes()

    def test_trajectories_differ(self, problem):
        _, _, prior, image = problem
        sch = make_cosine(50)
        result = sample(FixedPrior(prior), ZeroDenoiser(), image, M=2, steps=uniform_subset(50, 5),
                        sch=sch, sampler=SamplerType.DDIM)
        assert not np.array_equal(result.samples[0], result.samples[1])

    def test_requires_frozen_prior(self, problem):
        _, _, prior, image = problem
        unfrozen = FixedPrior(prior)
        unfrozen.frozen = False
        with pytest.raises(ValueError):
            sample(unfrozen, ZeroDenoiser(), image, M=1, steps=[10], sch=make_cosine(10))

    def test_bad_arguments(self, problem):
        _, _, prior, image = problem
        sch = make_cosine(10)
        with pytest.raises(ValueError):
            sample(FixedPrior(prior), ZeroDenoiser(), image, M=0, steps=[10], sch=sch)
        with pytest.raises(ValueError):
            sample(FixedPrior(prior), ZeroDenoiser(), image, M=1, steps=[5, 3], sch=sch)
        with pytest.raises(ValueError):
            sample(FixedPrior(prior), ZeroDenoiser(), image, M=1, steps=[11], sch=sch)

    def test_uniform_prior_shape(self):
        prior = UniformPrior(3).predict(np.zeros((2, 1, 4, 4)))
        assert prior.shape == (2, 3, 4, 4)
        np.testing.assert_allclose(prior, 1.0 / 3.0)


class RecordingDenoiser:
    """Smooth nonlinear v that records every state it is queried with"""

    def __init__(self):
        self.seen = []

    def predict_v(self, s_t, image, prior, t):
        self.seen.append((int(t), s_t.copy()))
        return 0.5 * np.sin(3.0 * s_t) + 0.01 * t


def _plain_ddpm(x_T, denoiser, steps, alpha_bar, sampler, noise_for):
    """
    Textbook DDPM on x = s - 1/C with a v-predicting network

    Returns the list of (t, x_t) visited and the final x_0.
    """
    visited = []
    x = x_T
    back = list(reversed(steps)) + [0]
    for t, t_prev in zip(back[:-1], back[1:]):
        visited.append((t, x.copy()))
        ab, ab_prev = alpha_bar[t], alpha_bar[t_prev]
        alpha = ab / ab_prev
        beta = 1.0 - alpha
        v = denoiser(x, t)
        x0 = np.sqrt(ab) * x - np.sqrt(1.0 - ab) * v
        mean = (np.sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + (np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)) * x
        var = beta if sampler is SamplerType.DDPM_FIXED else beta * (1.0 - ab_prev) / (1.0 - ab)
        x = mean + np.sqrt(var) * noise_for(t, x.shape) if var > 0 else mean
    return visited, x


class TestVanillaEquivalence:
    """A uniform prior turns the sampler into a plain DDPM centered at 1/C"""

    @pytest.mark.parametrize("sampler", [SamplerType.DDPM_TILDE, SamplerType.DDPM_FIXED])
    @pytest.mark.parametrize("S", [20, 5])
    def test_matches_textbook_chain(self, sampler, S):
        T, C, M, seed = 20, 2, 2, 7
        sch = make_cosine(T)
        steps = uniform_subset(T, S)
        image = np.zeros((1, 1, 4, 4))
        recorder = RecordingDenoiser()
        result = sample(UniformPrior(C), recorder, image, M=M, steps=steps, sch=sch, sampler=sampler, seed=seed)

        streams = RngStreams(seed)
        center = 1.0 / C
        per_trajectory = len(steps)
        for m in range(M):
            x_T = streams.normal((1, C, 4, 4), "trajectory", m, "init")

            def noise_for(t, shape, m=m):
                return streams.stream("trajectory", m, "noise", t).standard_normal(shape)

            def v_of(x, t):
                return 0.5 * np.sin(3.0 * (x + center)) + 0.01 * t

            visited, x_0 = _plain_ddpm(x_T, v_of, steps, sch.rho_bar, sampler, noise_for)
            seen = recorder.seen[m * per_trajectory:(m + 1) * per_trajectory]
            assert [t for t, _ in seen] == [t for t, _ in visited]
            for (_, s_t), (_, x_t) in zip(seen, visited):
                np.testing.assert_allclose(s_t - center, x_t, rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(result.samples[m], x_0 + center, rtol=1e-5, atol=1e-5)


class TestAggregate:
    """aggregate() and the sample archive"""

    def test_mean_of_softmax(self):
        samples = np.zeros((2, 1, 2, 1, 1), dtype=np.float32)
        samples[0, 0, 0] = 1.0
        samples[1, 0, 1] = 1.0
        pred = aggregate(SampleSet(samples, steps=[1], sampler=SamplerType.DDIM, seed=0), tau_out=0.1)
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0)
        np.testing.assert_allclose(pred.probs[0, :, 0, 0], [0.5, 0.5])
        assert pred.mask[0, 0, 0] == 0

    def test_sharpening(self):
        samples = np.zeros((1, 1, 2, 1, 1), dtype=np.float32)
        samples[0, 0, 1] = 0.8
        set_ = SampleSet(samples, steps=[1], sampler=SamplerType.DDIM, seed=0)
        assert aggregate(set_, tau_out=0.1).probs[0, 1, 0, 0] > aggregate(set_, tau_out=1.0).probs[0, 1, 0, 0]

    def test_tau_must_be_positive(self):
        set_ = SampleSet(np.zeros((1, 1, 2, 1, 1)), steps=[1], sampler=SamplerType.DDIM, seed=0)
        with pytest.raises(ValueError):
            aggregate(set_, tau_out=0.0)

    def test_archive_round_trip(self, tmp_path):
        samples = np.random.default_rng(0).standard_normal((2, 1, 2, 4, 4)).astype(np.float32)
        original = SampleSet(samples, steps=[5, 10], sampler=SamplerType.DDPM_TILDE, seed=4, injections=[2, 2])
        path = save_samples(tmp_path / "s.pgrdsmpl", original, extra={"run": "pgrd"})
        loaded = load_samples(path)
        assert loaded.samples.tobytes() == samples.tobytes()
        assert loaded.metadata() == original.metadata()

    def test_archive_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgrdsmpl"
        path.write_bytes(b"NOTSMPL!" + bytes(16))
        with pytest.raises(CheckpointError):
            load_samples(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
