import itertools
import random
from pathlib import Path

import pytest

from ragdep.confignet import (
    DEFAULT_STOPLIST,
    ConfigOption,
    ValueStoplist,
    candidate_from_dict,
    candidate_id,
    candidate_to_dict,
    detect_candidates,
    normalize_value,
    parse_artifact,
)
from ragdep.errors import MalformedArtifactError, UnsupportedFormatError

FIXTURES = Path(__file__).parent.parent / "data" / "demo_project"

APP_YML = (FIXTURES / "src/main/resources/application.yml").read_text()
DOCKERFILE = (FIXTURES / "Dockerfile").read_text()


def opt(name, value, file="application.yml", tech="spring", project="p", line=1):
    return ConfigOption(
        project=project,
        file_path=file,
        technology=tech,
        name=name,
        raw_value=value,
        normalized=normalize_value(value, name),
        line=line,
    )


# --- parse_artifact -----------------------------------------------------------


def test_parse_spring_yaml_port_option():
    options = parse_artifact("demo", "src/main/resources/application.yml", APP_YML)
    named = {o.name: o for o in options}
    assert named["server.port"].raw_value == "8080"
    assert named["server.port"].technology == "spring"
    assert named["server.port"].normalized.kind == "port"
    assert named["server.port"].line == 2
    assert named["spring.application.name"].raw_value == "app"


def test_parse_empty_yaml_yields_no_options():
    assert parse_artifact("demo", "application.yml", "") == []


def test_parse_dockerfile_instructions():
    options = parse_artifact("demo", "Dockerfile", DOCKERFILE)
    named = {o.name: o for o in options}
    assert named["EXPOSE"].raw_value == "8080"
    assert named["EXPOSE"].technology == "docker"
    assert "ENV.JAR_FILE" not in named
    assert named["ARG.JAR_FILE"].raw_value == "target/*.jar"
    assert named["FROM"].raw_value == "openjdk:11-jdk-slim"


def test_parse_dockerfile_env_forms_and_continuations():
    content = "ENV APP_HOME=/srv/app JAVA_OPTS='-Xmx1g'\nENV MODE production\nLABEL maintainer=dev \\\n      stage=prod\nEXPOSE 8080 9090\n"
    options = parse_artifact("demo", "Dockerfile", content)
    named = {(o.name, o.raw_value) for o in options}
    assert ("ENV.APP_HOME", "/srv/app") in named
    assert ("ENV.JAVA_OPTS", "-Xmx1g") in named
    assert ("ENV.MODE", "production") in named
    assert ("LABEL.maintainer", "dev") in named
    assert ("LABEL.stage", "prod") in named
    exposes = [o for o in options if o.name == "EXPOSE"]
    assert [o.raw_value for o in exposes] == ["8080", "9090"]
    assert all(o.line == 5 for o in exposes)


def test_parse_properties():
    content = "# comment\nserver.port=8080\nspring.profiles.active: dev\nflag\n"
    options = parse_artifact("demo", "config/app.properties", content)
    assert [(o.name, o.raw_value, o.line) for o in options] == [
        ("server.port", "8080", 2),
        ("spring.profiles.active", "dev", 3),
        ("flag", "", 4),
    ]
    assert options[0].technology == "properties"


def test_parse_compose_lists_get_bracket_indices():
    content = "services:\n  web:\n    image: demo:latest\n    ports:\n      - \"8080:8080\"\n      - \"9090:9090\"\n"
    options = parse_artifact("demo", "docker-compose.yml", content)
    named = {o.name: o for o in options}
    assert named["services.web.ports[0]"].raw_value == "8080:8080"
    assert named["services.web.ports[1]"].raw_value == "9090:9090"
    assert named["services.web.image"].technology == "docker-compose"


def test_parse_pom_structural_subset():
    content = """<?xml version="1.0"?>
<project xmlns="http://maven.apache.org/POM/4.0.0">
  <groupId>com.example</groupId>
  <artifactId>mall-admin</artifactId>
  <version>1.0.0</version>
  <properties>
    <java.version>17</java.version>
  </properties>
  <dependencies>
    <dependency>
      <groupId>org.springframework.boot</groupId>
      <artifactId>spring-boot-starter-web</artifactId>
      <version>2.7.4</version>
    </dependency>
  </dependencies>
  <build>
    <finalName>mall-admin</finalName>
    <plugins>
      <plugin>
        <groupId>org.apache.maven.plugins</groupId>
        <artifactId>maven-compiler-plugin</artifactId>
        <version>3.10.1</version>
      </plugin>
    </plugins>
  </build>
</project>
"""
    options = parse_artifact("demo", "pom.xml", content)
    named = {o.name: o.raw_value for o in options}
    assert named["groupId"] == "com.example"
    assert named["artifactId"] == "mall-admin"
    assert named["version"] == "1.0.0"
    assert named["properties.java.version"] == "17"
    assert named["dependencies.org.springframework.boot.spring-boot-starter-web.version"] == "2.7.4"
    assert named["build.finalName"] == "mall-admin"
    assert named["build.plugins.org.apache.maven.plugins.maven-compiler-plugin.version"] == "3.10.1"
    assert all(o.technology == "maven" for o in options)


def test_unsupported_format_rejected():
    with pytest.raises(UnsupportedFormatError):
        parse_artifact("demo", "settings.gradle", "whatever")


def test_malformed_yaml_carries_line():
    with pytest.raises(MalformedArtifactError) as err:
        parse_artifact("demo", "application.yml", "a:\n  - b\n c: ]\n")
    assert err.value.line is not None


def test_malformed_pom_carries_line():
    with pytest.raises(MalformedArtifactError) as err:
        parse_artifact("demo", "pom.xml", "<project><groupId>x</project>")
    assert err.value.line == 1


def test_parsing_is_deterministic_document_order():
    first = parse_artifact("demo", "application.yml", APP_YML)
    second = parse_artifact("demo", "application.yml", APP_YML)
    assert first == second
    assert [o.line for o in first] == sorted(o.line for o in first)


# --- normalize_value ----------------------------------------------------------


def test_normalize_port_with_name_context():
    assert normalize_value("8080", name="server.port").kind == "port"
    assert normalize_value("8080", name="EXPOSE").kind == "port"
    assert normalize_value("8080", name="retry.count").kind == "number"
    # out of port range, even in port context
    assert normalize_value("70000", name="server.port").kind == "number"


def test_normalize_trims_and_unquotes():
    assert normalize_value("  'app' ") == normalize_value("app")
    assert normalize_value('"\'x\'"').canonical == "x"


def test_normalize_size_to_bytes():
    # oracle: unit table, 512 * 1024**2
    assert normalize_value("512m").canonical == str(512 * 1024**2)
    assert normalize_value("512m").kind == "size"
    assert normalize_value("2k").canonical == str(2 * 1024)
    assert normalize_value("1g").canonical == str(1024**3)


def test_normalize_duration_to_milliseconds():
    assert normalize_value("5s") == normalize_value("5000ms")
    assert normalize_value("1min").canonical == "60000"


def test_normalize_classification_order():
    assert normalize_value("TRUE").kind == "boolean"
    assert normalize_value("007").canonical == "7"
    assert normalize_value("target/*.jar").kind == "path"
    assert normalize_value("./conf").kind == "path"
    assert normalize_value("http://example.org/x").kind == "url"
    assert normalize_value("jdbc:mysql://db:3306/mall").kind == "url"
    assert normalize_value("hello world").kind == "string"


def test_normalize_canonical_is_idempotent():
    for raw in ["8080", " 'App' ", "512m", "5s", "TRUE", "tArGet/File", "0.50"]:
        first = normalize_value(raw)
        again = normalize_value(first.canonical)
        assert again.canonical == first.canonical


# --- detect_candidates ----------------------------------------------------------


def test_detect_fig_pair_cross_technology():
    options = parse_artifact("demo", "src/main/resources/application.yml", APP_YML)
    options += parse_artifact("demo", "Dockerfile", DOCKERFILE)
    candidates = detect_candidates(options)
    assert len(candidates) == 1
    (cand,) = candidates
    assert {cand.option_a.name, cand.option_b.name} == {"server.port", "EXPOSE"}
    assert cand.is_cross_technology


def test_stoplist_excludes_boolean_values():
    options = [opt("a", "true", file="f1"), opt("b", "true", file="f2")]
    assert detect_candidates(options) == []


def test_stoplist_is_configurable():
    options = [opt("a", "true", file="f1"), opt("b", "true", file="f2")]
    relaxed = ValueStoplist(values=frozenset(), exclude_booleans=False)
    assert len(detect_candidates(options, relaxed)) == 1


def test_four_files_same_value_give_six_pairs():
    # brute force over C(4,2)
    options = [opt(f"metric.port{i}", "9090", file=f"f{i}.properties", tech="properties") for i in range(4)]
    candidates = detect_candidates(options)
    assert len(candidates) == 6
    brute = {
        frozenset([(a.file_path, a.name), (b.file_path, b.name)])
        for a, b in itertools.combinations(options, 2)
    }
    got = {
        frozenset(
            [(c.option_a.file_path, c.option_a.name), (c.option_b.file_path, c.option_b.name)]
        )
        for c in candidates
    }
    assert got == brute


def test_same_file_same_name_pairs_excluded():
    options = [opt("EXPOSE", "8080", file="Dockerfile", tech="docker", line=4),
               opt("EXPOSE", "8080", file="Dockerfile", tech="docker", line=9)]
    assert detect_candidates(options) == []


def test_candidate_id_symmetric_and_unique():
    a = opt("server.port", "9999", file="f1")
    b = opt("EXPOSE", "9999", file="f2", tech="docker")
    assert candidate_id("p", a, b) == candidate_id("p", b, a)
    candidates = detect_candidates([a, b])
    ids = [c.id for c in candidates]
    assert len(ids) == len(set(ids))


def test_port_vs_plain_number_do_not_link():
    options = [opt("server.port", "8080", file="f1"), opt("batch.size", "8080", file="f2")]
    assert detect_candidates(options) == []


def test_multi_project_options_rejected():
    options = [opt("a", "x", project="p1", file="f1"), opt("b", "x", project="p2", file="f2")]
    with pytest.raises(ValueError):
        detect_candidates(options)


def _random_options(rng, n):
    options = []
    values = ["9090", "app", "/data", "x" + str(rng.randint(0, 6)), "42", "9090"]
    for i in range(n):
        name_pool = ["server.port", "EXPOSE", "cache.size", f"svc.opt{rng.randint(0, 9)}", "a.b"]
        options.append(
            opt(
                rng.choice(name_pool),
                rng.choice(values),
                file=f"f{rng.randint(0, 8)}.properties",
                tech=rng.choice(["spring", "docker", "maven", "properties"]),
                line=i + 1,
            )
        )
    return options


def _brute_force_pairs(options, stoplist):
    count = 0
    pairs = set()
    for a, b in itertools.combinations(options, 2):
        if a.normalized != b.normalized:
            continue
        if stoplist.matches(a.normalized):
            continue
        if a.file_path == b.file_path and a.name == b.name:
            continue
        count += 1
        pairs.add(candidate_id(a.project, a, b))
    return count, pairs


def test_candidate_count_matches_quadratic_oracle():
    rng = random.Random(7)
    for _ in range(50):
        options = _random_options(rng, rng.randint(0, 200))
        candidates = detect_candidates(options)
        expected_count, expected_ids = _brute_force_pairs(options, DEFAULT_STOPLIST)
        assert len(candidates) == expected_count
        assert {c.id for c in candidates} == expected_ids
        assert [c.id for c in candidates] == sorted(c.id for c in candidates)


# --- wire format round trip -----------------------------------------------------


def test_candidate_round_trip_preserves_fields():
    options = parse_artifact("demo", "src/main/resources/application.yml", APP_YML)
    options += parse_artifact("demo", "Dockerfile", DOCKERFILE)
    (cand,) = detect_candidates(options)
    back = candidate_from_dict(candidate_to_dict(cand))
    assert back == cand
