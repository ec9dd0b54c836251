import hypothesis
import pytest

from coedg.dataset import SynthConfig, synth_dataset

hypothesis.settings.register_profile(
    "default", max_examples=60, deadline=None
)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def small_synth():
    """120-sample synthetic dataset shared by pipeline-level tests."""
    return synth_dataset(
        SynthConfig(n_samples=120, n_categories=6, labeled_fraction=0.15), seed=7
    )


@pytest.fixture(scope="session")
def acceptance_synth():
    """The dataset configuration the acceptance run uses (seed 0 instance)."""
    return synth_dataset(
        SynthConfig(n_samples=500, n_categories=8, labeled_fraction=0.1), seed=0
    )
