import json
import shutil
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))  # expected_prompts / helper modules

from ira.answering import PoolEntry
from ira.dataset import VQAInstance
from ira.gateway import ModelGateway, stub_endpoints

DATA_DIR = Path(__file__).parent / "data"
DATASET_DIR = DATA_DIR / "dataset"


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    """Keep cache/api-key env vars from leaking into tests."""
    monkeypatch.delenv("IRA_CACHE_DIR", raising=False)
    monkeypatch.delenv("IRA_API_KEY", raising=False)


@pytest.fixture
def stub_gateway():
    return ModelGateway(stub_endpoints(seed=7, embed_dim=16))


@pytest.fixture
def reasoning_fixture():
    return json.loads((DATA_DIR / "reasoning_examples.json").read_text(encoding="utf-8"))


def pool_entry_from_fixture(entry: dict, variant: str, qid: str) -> PoolEntry:
    """Pool entry for a structured reasoning-example fixture block."""
    instance = VQAInstance(
        question_id=qid,
        image_ref=f"{qid}.jpg",
        question=entry["question"],
        gold_answers=[],
        caption=entry["captions"][variant],
        tags=entry.get("tags"),
        candidates=[tuple(c) for c in entry.get("candidates", [])] or None,
        split="train",
    )
    return PoolEntry(
        instance=instance,
        question_embed=np.zeros(4),
        caption_embed=None,
        info=list(entry["info"]),
        gold=entry["answer"],
    )


def query_instance_from_fixture(query: dict, variant: str) -> VQAInstance:
    return VQAInstance(
        question_id="query",
        image_ref="query.jpg",
        question=query["question"],
        gold_answers=[],
        caption=query["captions"][variant],
        tags=query.get("tags"),
        candidates=[tuple(c) for c in query.get("candidates", [])] or None,
        split="val",
    )


def write_config(
    tmp_path: Path,
    *,
    dataset_dir: Path = DATASET_DIR,
    seed: int = 0,
    output_name: str = "out",
    **pipeline_overrides,
) -> Path:
    """Write a stub-backed config file pointing at the bundled 5-instance fixture."""
    output_dir = tmp_path / output_name
    pipeline = {
        "k": 3,
        "shots": 2,
        "ensemble_queries": 1,
        "variant": "pica",
        "filter_mode": "ensemble",
        "seed": seed,
        "workers": 1,
    }
    pipeline.update(pipeline_overrides)
    config = {
        "dataset": {"dir": str(dataset_dir), "format": "okvqa"},
        "endpoints": {
            role: {
                "base_url": f"stub:{seed}",
                "model_name": "stub-model",
                **({"embed_dim": 16} if role.startswith("embed") else {}),
            }
            for role in ("completion", "vqa", "caption", "embed_text", "embed_image")
        },
        "pipeline": pipeline,
        "output_dir": str(output_dir),
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path


@pytest.fixture
def fixture_config(tmp_path):
    return write_config(tmp_path)


def copy_dataset(tmp_path: Path) -> Path:
    target = tmp_path / "dataset"
    shutil.copytree(DATASET_DIR, target)
    return target
