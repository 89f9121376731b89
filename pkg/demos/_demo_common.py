"""Shared plumbing for the demo scripts."""

from pathlib import Path

from ragdep import detect_candidates, parse_artifact

REPO = Path(__file__).resolve().parent.parent
PROJECT = REPO / "data" / "demo_project"


def port_candidate():
    """The server.port / EXPOSE pair from the demo project."""
    options = []
    for file_path in ("src/main/resources/application.yml", "Dockerfile"):
        options.extend(parse_artifact("demo", file_path, (PROJECT / file_path).read_text()))
    (candidate,) = detect_candidates(options)
    return candidate
