import pytest
import torch

from roomref.artifacts import GroundingData
from roomref.encoding import build_vocab
from roomref.errors import DensityError
from roomref.model import ModelConfig
from roomref.perception import NoiseModel, simulate_predictions
from roomref.scenes import GenConfig, generate_scene
from roomref.seeding import derive_seed
from roomref.utterances import generate_corpus, template_lexicon

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def gen_cfg():
    return GenConfig()


@pytest.fixture(scope="session")
def scene(gen_cfg):
    return generate_scene(gen_cfg, 42)


@pytest.fixture(scope="session")
def scene_pool(gen_cfg):
    # skip unlucky packings, as corpus generation does
    scenes = []
    seed = 120
    while len(scenes) < 40:
        try:
            scenes.append(generate_scene(gen_cfg, seed))
        except DensityError:
            pass
        seed += 1
    return scenes


@pytest.fixture(scope="session")
def small_corpus(gen_cfg):
    scenes, records = generate_corpus(gen_cfg, 20, 8, seed=11)
    predictions = simulate_predictions(
        scenes, NoiseModel.noisy(), gen_cfg.catalog, derive_seed(11, "perception")
    )
    return GroundingData(
        scenes={s.scene_id: s for s in scenes},
        records=records,
        catalog=gen_cfg.catalog,
        scene_order=[s.scene_id for s in scenes],
        predictions=predictions,
    )


@pytest.fixture(scope="session")
def vocab(gen_cfg):
    return build_vocab(gen_cfg.catalog, template_lexicon())


@pytest.fixture(scope="session")
def tiny_model_cfg(vocab, gen_cfg):
    return ModelConfig(
        vocab_size=vocab.size,
        n_classes=len(gen_cfg.catalog),
        d_model=36,
        n_layers=2,
        n_heads=3,
        ff_dim=72,
        dropout=0.1,
        max_len=256,
    )
