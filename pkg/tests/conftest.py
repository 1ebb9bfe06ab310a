import pytest

from eventanon.events import AugmentationConfig, EventDataset
from eventanon.models import AnonymizerConfig, ClassifierConfig
from eventanon.synthetic import SyntheticDatasetSpec, generate_synthetic_dataset
from eventanon.training import StageConfig, TrainSettings, build_state, set_deterministic


def pytest_configure(config):
    set_deterministic(True)


@pytest.fixture(scope="session")
def tiny_dataset():
    spec = SyntheticDatasetSpec(n_subjects=4, n_target_classes=2, samples_per_pair=6, resolution=(8, 8),
                                events_per_sample=400, seed=11)
    return EventDataset.from_samples(generate_synthetic_dataset(spec), val_per_pair=2, seed=0)


@pytest.fixture
def tiny_state(tiny_dataset):
    return build_state(tiny_dataset, AnonymizerConfig(hidden_width=4), ClassifierConfig(width=4), seed=0)


@pytest.fixture
def tiny_settings():
    return TrainSettings(augmentation=AugmentationConfig(horizontal_flip=True))


def stage(kind, epochs=1, **kw):
    return StageConfig(stage=kind, epochs=epochs, lr_aux=1e-3, ids_per_batch=4, samples_per_id=4, batch_size=8, **kw)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN  (deselected, or errored before reporting)")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
