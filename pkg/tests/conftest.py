import numpy as np
import pytest

from dmmaction import PipelineConfig, SynthSpec, generate_synthetic_dataset, read_manifest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def desk_config(**overrides):
    """Small fast config shared by the pipeline-level tests."""
    base = dict(
        poses=("standing",),
        angles=(0.0, 30.0),
        depth_windows=(5,),
        rgb_windows=(10,),
        clip_len=8,
        render_size=(32, 32),
        depth_bin_mm=40.0,
        depth_bin_count=64,
        flow_iterations=30,
        network_preset="desk",
        svm_epochs=300,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two-action, four-subject, one-camera dataset; session cached."""
    root = tmp_path_factory.mktemp("synthdata")
    spec = SynthSpec(actions=("slide", "bob"), subjects=4, cameras=1, frames=20)
    manifest = generate_synthetic_dataset(root, spec, seed=1)
    return read_manifest(manifest)
