from pathlib import Path

import pytest
import yaml

from chainrag.config import Gateways, PipelineConfig
from chainrag.corpus import ingest_dataset
from chainrag.gateway import MockGateway
from chainrag.pipeline import Dataset
from chainrag.retrieval import Retriever
from chainrag.synthetic import make_suite, scripted_generator, scripted_reranker, suite_config, write_suite

DATA = Path(__file__).parent / "data"


def dataset_from(records, tmp_path, name="suite"):
    path = write_suite(tmp_path / f"{name}.jsonl", records)
    corpus, questions = ingest_dataset(path, "synthetic")
    return Dataset(name, corpus, questions, Retriever(corpus.chunks))


def scripted_gateways(records):
    return Gateways(
        reranker=MockGateway(responder=scripted_reranker(records), model_id="mock-reranker"),
        generator=MockGateway(responder=scripted_generator(records), model_id="mock-generator"),
    )


@pytest.fixture
def suite():
    return make_suite(10, 3)


@pytest.fixture
def adversarial_suite():
    return make_suite(10, 3, adversarial=True)


@pytest.fixture
def suite_dataset(suite, tmp_path):
    return dataset_from(suite, tmp_path)


@pytest.fixture
def config():
    return PipelineConfig(sample_size=None, concurrency=4)


def mock_config(path, suite_path, reranker="scripted", generator="scripted", **extra):
    """Write a YAML config whose gateways are scripted mocks over ``suite_path``."""
    data = dict(suite_config(suite_path, reranker, generator), **extra)
    Path(path).write_text(yaml.safe_dump(data))
    return Path(path)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
