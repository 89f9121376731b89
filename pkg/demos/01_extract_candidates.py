#!/usr/bin/env python3
"""Walk a two-file project and surface its cross-technology dependency candidate.

The demo project pairs a Spring Boot application.yml with a Dockerfile.
Both specify port 8080; value-equality linking flags exactly that pair and
nothing else (the stoplist and port-aware normalization suppress the
coincidental matches).
"""

from pathlib import Path

from ragdep import detect_candidates, normalize_value, parse_artifact

REPO = Path(__file__).resolve().parent.parent
PROJECT = REPO / "data" / "demo_project"

options = []
for file_path in ("src/main/resources/application.yml", "Dockerfile"):
    content = (PROJECT / file_path).read_text()
    parsed = parse_artifact("demo", file_path, content)
    options.extend(parsed)
    print(f"{file_path}: {len(parsed)} options")
    for option in parsed:
        print(f"  line {option.line:>2}  {option.name} = {option.raw_value!r}"
              f"  ({option.normalized.kind}: {option.normalized.canonical})")

print("\nValue normalization is name-aware; the same literal can differ in kind:")
for raw, name in (("8080", "server.port"), ("8080", "batch.size"), ("512m", "jvm.heap")):
    nv = normalize_value(raw, name)
    print(f"  {raw!r} under {name!r} -> kind={nv.kind}, canonical={nv.canonical}")

candidates = detect_candidates(options)
print(f"\n{len(candidates)} dependency candidate(s):")
for cand in candidates:
    a, b = cand.option_a, cand.option_b
    print(f"  {cand.id}  cross_technology={cand.is_cross_technology}")
    print(f"    {a.technology}:{a.file_path}:{a.line}  {a.name} = {a.raw_value}")
    print(f"    {b.technology}:{b.file_path}:{b.line}  {b.name} = {b.raw_value}")
