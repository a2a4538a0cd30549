"""Shared fixtures: offline providers, extracted-knowledge builders and configs."""

import json
import socket
from pathlib import Path

import pytest

from mag_rag.corpus import ExtractedKnowledge, Layer, SourceDocument, render_sections
from mag_rag.prompts import EXTRACTION, load_prompts

REPO_ROOT = Path(__file__).resolve().parents[1]
TOY_CORPUS = REPO_ROOT / "corpus"
FAKE_SCRIPT = REPO_ROOT / "configs" / "fake_script.json"


def make_knowledge(doc_id: str, keywords: dict[Layer, str] | None = None) -> ExtractedKnowledge:
    """Knowledge with distinct per-layer text and (by default) per-layer keywords."""
    keywords = keywords or {}
    return ExtractedKnowledge(
        doc_id=doc_id,
        terminological_description=f"{doc_id} problem type",
        example_information=f"{doc_id} example scenario",
        system_model=f"{doc_id} system model",
        optimization_formulation=f"{doc_id} optimization formulation",
        optimization_algorithm=f"{doc_id} optimization algorithm",
        keywords_per_section={
            layer: (keywords.get(layer, f"{doc_id} {layer.value} keyword"),) for layer in Layer
        },
    )


def extraction_script(documents: list[SourceDocument]) -> dict[str, str]:
    """Script answering each document's exact extraction request with distinct sections."""
    prompt = load_prompts()[EXTRACTION]
    script = {}
    for doc in documents:
        _, user = prompt.render(title=doc.title, body=doc.body)
        script[user] = render_sections(make_knowledge(doc.doc_id))
    return script


@pytest.fixture
def knowledge_factory():
    return make_knowledge


@pytest.fixture
def fake_script() -> dict[str, str]:
    return json.loads(FAKE_SCRIPT.read_text(encoding="utf-8"))


@pytest.fixture
def toy_corpus() -> Path:
    return TOY_CORPUS


@pytest.fixture
def offline_config(tmp_path) -> Path:
    """A config file using the scripted chat fake and hash embeddings."""
    config_path = tmp_path / "magrag.toml"
    config_path.write_text(
        "\n".join(
            [
                "epsilon = 0.8",
                "k = 3",
                f'results_dir = "{(tmp_path / "results").as_posix()}"',
                "",
                "[chat]",
                'provider = "fake"',
                'model = "scripted"',
                f'script = "{FAKE_SCRIPT.as_posix()}"',
                "backoff = 0.0",
                "",
                "[embedding]",
                'provider = "fake"',
                "dimension = 16",
                "backoff = 0.0",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return config_path


@pytest.fixture
def no_network(monkeypatch):
    """Fail any attempt to open an outbound connection; yields the attempts seen."""
    attempts: list[object] = []

    def refuse(self, address, *args, **kwargs):
        attempts.append(address)
        raise OSError(f"network access attempted: {address!r}")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    yield attempts
    assert attempts == []


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """Keep user config files and API keys out of tests."""
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "xdg"))
    monkeypatch.delenv("MAGRAG_CONFIG", raising=False)
    monkeypatch.chdir(tmp_path)
