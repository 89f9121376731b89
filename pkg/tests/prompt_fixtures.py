"""Deterministic inputs for the frozen prompt goldens."""

from pathlib import Path

from ragdep.confignet import detect_candidates, parse_artifact
from ragdep.retrieval import ContextSlot, ContextSlots
from ragdep.validator import ShotExample

REPO = Path(__file__).parent.parent
DEMO_PROJECT = REPO / "data" / "demo_project"
GOLDENS = Path(__file__).parent / "goldens"


def port_candidate():
    """The cross-technology port pair from the two-file demo project."""
    options = parse_artifact(
        "demo",
        "src/main/resources/application.yml",
        (DEMO_PROJECT / "src/main/resources/application.yml").read_text(),
    )
    options += parse_artifact("demo", "Dockerfile", (DEMO_PROJECT / "Dockerfile").read_text())
    (candidate,) = detect_candidates(options)
    return candidate


def fixed_slots(n=5):
    texts = [
        ("manual", "EXPOSE informs the runtime that the container listens on the specified port."),
        ("manual", "server.port configures the TCP port of the embedded web server; default 8080."),
        ("stackoverflow", "The container port in the mapping must equal server.port or requests time out."),
        ("web_search", "Keep the EXPOSE line and the published port equal to the application's port."),
        ("github_repo", "Each module builds its own image; compose wires modules and databases together."),
    ]
    return ContextSlots(
        slots=tuple(
            ContextSlot(chunk_id=f"fixed#{i}", source_kind=kind, text=text)
            for i, (kind, text) in enumerate(texts[:n])
        ),
        top_n=n,
    )


def fixed_shots():
    return [
        ShotExample(
            id="shot-a",
            summary="spring option management.server.port (value 9090) in application.yml and "
            "docker-compose option services.admin.environment.MANAGEMENT_PORT (value 9090) in docker-compose.yml",
            label=True,
        ),
        ShotExample(
            id="shot-b",
            summary="spring option spring.application.name (value mall) in application.yml and "
            "docker-compose option services.mall.container_name (value mall) in docker-compose.yml",
            label=False,
        ),
    ]
