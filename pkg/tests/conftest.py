import numpy as np
import pytest

from curlswhey.core import make_rng
from curlswhey.harness import build_zoo
from curlswhey.models import Dataset, make_blob_dataset, mlp_classifier, train


@pytest.fixture(scope="session")
def blob_dataset():
    return make_blob_dataset(0)


@pytest.fixture(scope="session")
def zoo(blob_dataset):
    return build_zoo(blob_dataset, 0)


@pytest.fixture(scope="session")
def two_class_dataset():
    """Small separable 2-class set with boundaries within FGSM reach."""
    return make_blob_dataset(3, n_classes=2, train_per_class=150, test_per_class=60,
                             prototype_low=0.465, prototype_high=0.535, noise_std=0.06)


@pytest.fixture(scope="session")
def easy_two_class_dataset():
    """Widely separated 2-class set; trivially separable, clean convergence."""
    return make_blob_dataset(3, n_classes=2, train_per_class=150, test_per_class=60,
                             prototype_low=0.25, prototype_high=0.75, noise_std=0.1)


@pytest.fixture(scope="session")
def two_class_model(two_class_dataset):
    model = mlp_classifier(8, 8, 3, 2, seed=9, hidden=24)
    train(model, two_class_dataset, 35, 0.08, make_rng(12))
    assert model.test_accuracy is not None and model.test_accuracy >= 0.95
    return model


def dataset_sample(dataset: Dataset, models, per_class: int) -> np.ndarray:
    from curlswhey.harness import sample_attack_set

    return sample_attack_set(dataset, models, per_class)
