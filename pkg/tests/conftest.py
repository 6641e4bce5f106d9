import numpy as np
import pytest

from csirecomp import dataset_store, sim_scene


NOISE_OFF_DB = 300.0  # effectively noise-free while keeping snr_db finite


@pytest.fixture(scope="session")
def desk_config():
    return sim_scene.SceneConfig()


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    """120-sample desk-scale dataset shared by storage/training/CLI tests."""
    out = tmp_path_factory.mktemp("data") / "tiny"
    config = sim_scene.SceneConfig(rng_seed=7)
    dataset_store.write_dataset(out, sim_scene.generate_dataset(config, 120), config)
    return out


def random_csi_slices(count, n_rx=4, n_tx=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, n_rx, n_tx)) + 1j * rng.standard_normal(
        (count, n_rx, n_tx)
    )
