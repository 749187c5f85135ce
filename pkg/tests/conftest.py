import numpy as np
import pytest

from edloc.core import (
    AttentionBundle,
    EditMask,
    FeatureBundle,
    InstructionSpec,
    LatentRecord,
    NoiseSchedule,
    TokenLayout,
)


@pytest.fixture
def tiny_layout() -> TokenLayout:
    return TokenLayout(n_txt=3, n_img=4, grid_h=2, grid_w=2, d=2,
                       n_layers=2, n_timesteps=3, n_heads=2).validate()


@pytest.fixture
def tiny_schedule() -> NoiseSchedule:
    return NoiseSchedule(sigma=(1.0, 0.5, 0.0))


@pytest.fixture
def tiny_instruction() -> InstructionSpec:
    return InstructionSpec(task="addition", selected_text_indices=(0, 2), label="tiny")


def make_attention(layout, layer=0, timestep=0, stream="target", fill=0.1):
    ca = np.full((layout.n_img, layout.n_txt), fill, dtype=np.float32)
    sa = (np.eye(layout.n_img) * fill).astype(np.float32)
    return AttentionBundle(layer=layer, timestep=timestep, stream=stream, ca=ca, sa=sa)


def make_features(layout, layer=0, timestep=0, stream="target", seed=0):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(layout.n_img, layout.d)).astype(np.float32)
    return FeatureBundle(layer=layer, timestep=timestep, stream=stream, f=f)


def make_latent(layout, role="source", timestep=None, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(layout.n_img, layout.d)).astype(np.float32)
    return LatentRecord(role=role, timestep=timestep, z=z)


def make_mask(bits, stream="combined", stage="task_combined", timestep=None, layer=None):
    return EditMask(stream=stream, stage=stage,
                    bits=np.asarray(bits, dtype=np.uint8), timestep=timestep, layer=layer)
