"""Multi-technology config parsing and value-equality dependency candidates.

Supported artifacts: Spring Boot ``application*.yml``/``.yaml``, Java
``.properties``, ``Dockerfile``, ``docker-compose.yml``, and Maven
``pom.xml``. Every scalar leaf becomes a :class:`ConfigOption` with a
dotted hierarchical name; pairs of options whose normalized values are
equal become :class:`DependencyCandidate` objects for downstream
validation.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from typing import Iterable, Optional
from xml.parsers import expat

import yaml

from .errors import MalformedArtifactError, UnsupportedFormatError

TECH_SPRING = "spring"
TECH_DOCKER = "docker"
TECH_COMPOSE = "docker-compose"
TECH_MAVEN = "maven"
TECH_PROPERTIES = "properties"

VALUE_KINDS = ("number", "boolean", "string", "size", "duration", "port", "path", "url")

# Dockerfile instructions that yield options. ENV/ARG/LABEL append the key
# to the instruction name ("ENV.JAR_FILE"); the rest use the bare instruction.
_DOCKER_KEYED = ("ENV", "ARG", "LABEL")
_DOCKER_PLAIN = ("FROM", "EXPOSE", "WORKDIR", "COPY", "ADD", "CMD")


@dataclass(frozen=True)
class NormalizedValue:
    """Canonical form of a raw config value; equality = kind and canonical."""

    kind: str
    canonical: str


@dataclass(frozen=True)
class ConfigOption:
    """One scalar config entry extracted from an artifact."""

    project: str
    file_path: str
    technology: str
    name: str
    raw_value: str
    normalized: NormalizedValue
    line: int

    def __post_init__(self):
        if not self.name or re.search(r"\s", self.name):
            raise ValueError(f"option name must be non-empty without whitespace: {self.name!r}")
        if self.line < 1:
            raise ValueError(f"line must be >= 1, got {self.line}")
        if PurePosixPath(self.file_path).is_absolute():
            raise ValueError(f"file_path must be relative to the project root: {self.file_path}")


@dataclass(frozen=True)
class DependencyCandidate:
    """An unordered pair of options suspected to depend on each other."""

    id: str
    option_a: ConfigOption
    option_b: ConfigOption
    detection: str = "value_equality"
    is_cross_technology: bool = False


@dataclass(frozen=True)
class ValueStoplist:
    """Canonical values excluded from candidate detection."""

    values: frozenset = frozenset()
    exclude_booleans: bool = True

    def matches(self, nv: NormalizedValue) -> bool:
        if self.exclude_booleans and nv.kind == "boolean":
            return True
        return nv.canonical in self.values


DEFAULT_STOPLIST = ValueStoplist(
    values=frozenset({"", "0", "1", "localhost", "/", "latest", "utf-8"}),
    exclude_booleans=True,
)


# --- value normalization ----------------------------------------------------

_INT_RE = re.compile(r"^[+-]?\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+)$")
_SIZE_RE = re.compile(r"^(\d+(?:\.\d+)?)(k|m|g)$")
_DURATION_RE = re.compile(r"^(\d+(?:\.\d+)?)(ms|s|min)$")
_URL_RE = re.compile(r"^[a-z][a-z0-9+.-]*(:[a-z0-9+.-]+)?://\S+$")

_SIZE_FACTOR = {"k": 1024, "m": 1024**2, "g": 1024**3}
_DURATION_FACTOR = {"ms": 1, "s": 1000, "min": 60_000}


def _clean(raw: str) -> str:
    """Trim and strip matching outer quote layers until stable."""
    s = raw
    while True:
        s = s.strip()
        if len(s) >= 2 and s[0] == s[-1] and s[0] in ("'", '"'):
            s = s[1:-1]
            continue
        return s


def normalize_value(raw: str, name: str = "") -> NormalizedValue:
    """Classify and canonicalize a raw value.

    ``name`` is the owning option's name; integers between 1 and 65535 under
    a port-like name ("port"/"PORT"/"EXPOSE") classify as ``port`` rather
    than ``number``. Total function: anything unrecognized is a ``string``.
    """
    s = _clean(raw).lower()
    if s in ("true", "false"):
        return NormalizedValue("boolean", s)
    if _INT_RE.match(s):
        value = int(s)
        port_context = "port" in name.lower() or "EXPOSE" in name
        if port_context and 1 <= value <= 65535:
            return NormalizedValue("port", str(value))
        return NormalizedValue("number", str(value))
    if _DECIMAL_RE.match(s):
        return NormalizedValue("number", repr(float(s)))
    m = _SIZE_RE.match(s)
    if m:
        return NormalizedValue("size", str(int(round(float(m.group(1)) * _SIZE_FACTOR[m.group(2)]))))
    m = _DURATION_RE.match(s)
    if m:
        return NormalizedValue("duration", str(int(round(float(m.group(1)) * _DURATION_FACTOR[m.group(2)]))))
    # URL before path: every scheme://... contains "/" and would be
    # swallowed by the path rule otherwise.
    if _URL_RE.match(s):
        return NormalizedValue("url", s)
    if "/" in s or s.startswith("."):
        return NormalizedValue("path", s)
    return NormalizedValue("string", s)


# --- artifact parsing -------------------------------------------------------


def classify_file(file_path: str) -> tuple[str, str]:
    """Map a file name to (format, technology) or raise UnsupportedFormatError."""
    base = PurePosixPath(str(file_path).replace("\\", "/")).name.lower()
    if base == "pom.xml":
        return "pom", TECH_MAVEN
    if base == "dockerfile" or base.endswith(".dockerfile"):
        return "dockerfile", TECH_DOCKER
    if base in ("docker-compose.yml", "docker-compose.yaml", "compose.yml", "compose.yaml"):
        return "compose", TECH_COMPOSE
    if base.startswith("application") and (base.endswith(".yml") or base.endswith(".yaml")):
        return "yaml", TECH_SPRING
    if base.endswith(".properties"):
        return "properties", TECH_PROPERTIES
    raise UnsupportedFormatError(f"unsupported config artifact: {file_path}")


def parse_artifact(project: str, file_path: str, content: str) -> list[ConfigOption]:
    """Parse one artifact into options, in document order.

    Raises UnsupportedFormatError for unknown file kinds and
    MalformedArtifactError (with a line number) on syntax errors.
    """
    fmt, tech = classify_file(file_path)
    rel = str(file_path).replace("\\", "/").lstrip("/")
    if fmt in ("yaml", "compose"):
        leaves = _yaml_leaves(content)
    elif fmt == "properties":
        leaves = _properties_leaves(content)
    elif fmt == "dockerfile":
        leaves = _dockerfile_leaves(content)
    else:
        leaves = _pom_leaves(content)
    return [
        ConfigOption(
            project=project,
            file_path=rel,
            technology=tech,
            name=name,
            raw_value=value,
            normalized=normalize_value(value, name),
            line=line,
        )
        for name, value, line in leaves
    ]


def _safe_key(key: str) -> str:
    """Option names may not contain whitespace; collapse it inside keys."""
    return "_".join(str(key).split()) or "_"


def _yaml_leaves(content: str) -> list[tuple[str, str, int]]:
    try:
        root = yaml.compose(content)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = (mark.line + 1) if mark is not None else None
        raise MalformedArtifactError(f"invalid YAML: {exc}", line=line) from exc
    leaves: list[tuple[str, str, int]] = []
    if root is not None:
        _walk_yaml(root, "", leaves)
    return leaves


def _walk_yaml(node, prefix: str, out: list) -> None:
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = _safe_key(key_node.value)
            path = f"{prefix}.{key}" if prefix else key
            _walk_yaml(value_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _walk_yaml(item, f"{prefix}[{i}]" if prefix else f"[{i}]", out)
    else:  # scalar leaf; node.value keeps the text as written
        out.append((prefix or "_", str(node.value), node.start_mark.line + 1))


def _properties_leaves(content: str) -> list[tuple[str, str, int]]:
    leaves = []
    for lineno, rawline in enumerate(content.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#") or line.startswith("!"):
            continue
        m = re.match(r"^([^=:\s]+)\s*[=:]?\s*(.*)$", line)
        if not m:
            raise MalformedArtifactError(f"invalid properties line: {rawline!r}", line=lineno)
        leaves.append((_safe_key(m.group(1)), m.group(2).strip(), lineno))
    return leaves


def _dockerfile_logical_lines(content: str):
    """Yield (first_line_number, joined_text) honoring backslash continuations."""
    pending: list[str] = []
    start = 0
    for lineno, raw in enumerate(content.splitlines(), start=1):
        stripped = raw.strip()
        if not pending and (not stripped or stripped.startswith("#")):
            continue
        if not pending:
            start = lineno
        if stripped.endswith("\\"):
            pending.append(stripped[:-1].strip())
            continue
        pending.append(stripped)
        yield start, " ".join(pending)
        pending = []
    if pending:
        yield start, " ".join(pending)


def _dockerfile_leaves(content: str) -> list[tuple[str, str, int]]:
    leaves = []
    for lineno, text in _dockerfile_logical_lines(content):
        parts = text.split(None, 1)
        instruction = parts[0].upper()
        args = parts[1].strip() if len(parts) > 1 else ""
        if instruction in _DOCKER_KEYED:
            for key, value in _parse_docker_pairs(args, legacy_space=instruction == "ENV"):
                leaves.append((f"{instruction}.{_safe_key(key)}", value, lineno))
        elif instruction == "EXPOSE":
            for port in args.split():
                leaves.append(("EXPOSE", port, lineno))
        elif instruction in _DOCKER_PLAIN:
            if args:
                leaves.append((instruction, args, lineno))
    return leaves


def _parse_docker_pairs(args: str, legacy_space: bool) -> list[tuple[str, str]]:
    """Parse ENV/ARG/LABEL arguments: `k=v [k=v ...]` or legacy `ENV k v`."""
    if "=" not in args:
        if legacy_space:
            parts = args.split(None, 1)
            if len(parts) == 2:
                return [(parts[0], parts[1])]
        return [(args, "")] if args else []
    pairs = []
    for token in _split_docker_tokens(args):
        if "=" in token:
            key, _, value = token.partition("=")
            pairs.append((key, _clean(value)))
    return pairs


def _split_docker_tokens(args: str) -> list[str]:
    """Split on spaces outside single/double quotes."""
    tokens, buf, quote = [], [], ""
    for ch in args:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = ""
        elif ch in ("'", '"'):
            buf.append(ch)
            quote = ch
        elif ch.isspace():
            if buf:
                tokens.append("".join(buf))
                buf = []
        else:
            buf.append(ch)
    if buf:
        tokens.append("".join(buf))
    return tokens


@dataclass
class _XmlNode:
    tag: str
    line: int
    text: str = ""
    children: list = field(default_factory=list)

    def find(self, tag: str) -> Optional["_XmlNode"]:
        return next((c for c in self.children if c.tag == tag), None)

    def findall(self, tag: str) -> list["_XmlNode"]:
        return [c for c in self.children if c.tag == tag]

    def child_text(self, tag: str) -> str:
        node = self.find(tag)
        return node.text.strip() if node is not None else ""


def _parse_xml(content: str) -> _XmlNode:
    """Minimal expat tree with per-element line numbers (namespace-agnostic)."""
    root: list[_XmlNode] = []
    stack: list[_XmlNode] = []
    parser = expat.ParserCreate()

    def start(tag, _attrs):
        node = _XmlNode(tag=tag.split(":")[-1], line=parser.CurrentLineNumber)
        (stack[-1].children if stack else root).append(node)
        stack.append(node)

    def end(_tag):
        stack.pop()

    def chars(data):
        if stack:
            stack[-1].text += data

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(content, True)
    except expat.ExpatError as exc:
        raise MalformedArtifactError(f"invalid XML: {exc}", line=exc.lineno) from exc
    if not root:
        raise MalformedArtifactError("empty XML document", line=1)
    return root[0]


def _pom_leaves(content: str) -> list[tuple[str, str, int]]:
    """Structural subset of a POM: coordinates, properties, deps, plugins, finalName."""
    project = _parse_xml(content)
    leaves = []
    for tag in ("groupId", "artifactId", "version"):
        node = project.find(tag)
        if node is not None and node.text.strip():
            leaves.append((tag, node.text.strip(), node.line))
    props = project.find("properties")
    if props is not None:
        for prop in props.children:
            leaves.append((f"properties.{_safe_key(prop.tag)}", prop.text.strip(), prop.line))
    deps = project.find("dependencies")
    if deps is not None:
        leaves.extend(_coordinate_leaves(deps.findall("dependency"), "dependencies"))
    build = project.find("build")
    if build is not None:
        final_name = build.find("finalName")
        if final_name is not None:
            leaves.append(("build.finalName", final_name.text.strip(), final_name.line))
        plugins = build.find("plugins")
        if plugins is not None:
            leaves.extend(_coordinate_leaves(plugins.findall("plugin"), "build.plugins"))
    leaves.sort(key=lambda item: item[2])
    return leaves


def _coordinate_leaves(nodes: list[_XmlNode], prefix: str) -> list[tuple[str, str, int]]:
    leaves = []
    for node in nodes:
        group = node.child_text("groupId")
        artifact = node.child_text("artifactId")
        version = node.find("version")
        if not artifact:
            continue
        coordinate = f"{prefix}.{_safe_key(group) or '_'}.{_safe_key(artifact)}"
        if version is not None and version.text.strip():
            leaves.append((f"{coordinate}.version", version.text.strip(), version.line))
    return leaves


# --- candidate detection ----------------------------------------------------


def candidate_id(project: str, option_a: ConfigOption, option_b: ConfigOption) -> str:
    """Stable id over the unordered pair of option coordinates."""
    coords = sorted(
        f"{o.file_path}|{o.name}|{o.line}" for o in (option_a, option_b)
    )
    digest = hashlib.sha256("\n".join([project, *coords]).encode("utf-8")).hexdigest()
    return f"dep-{digest[:16]}"


def detect_candidates(
    options: Iterable[ConfigOption],
    stoplist: ValueStoplist = DEFAULT_STOPLIST,
) -> list[DependencyCandidate]:
    """Pair up options with equal normalized values.

    Pairs living in the same file under the same name are vacuous and
    skipped, as are stoplisted values. Output is sorted by candidate id.
    """
    options = list(options)
    projects = {o.project for o in options}
    if len(projects) > 1:
        raise ValueError(f"options span multiple projects: {sorted(projects)}")
    groups: dict[NormalizedValue, list[ConfigOption]] = {}
    for option in options:
        if stoplist.matches(option.normalized):
            continue
        groups.setdefault(option.normalized, []).append(option)
    candidates = []
    for members in groups.values():
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                a, b = members[i], members[j]
                if a.file_path == b.file_path and a.name == b.name:
                    continue
                candidates.append(
                    DependencyCandidate(
                        id=candidate_id(a.project, a, b),
                        option_a=a,
                        option_b=b,
                        is_cross_technology=a.technology != b.technology,
                    )
                )
    candidates.sort(key=lambda c: c.id)
    return candidates


# --- wire format (shared with the dataset files) -----------------------------


def option_to_dict(option: ConfigOption) -> dict:
    return {
        "file": option.file_path,
        "technology": option.technology,
        "name": option.name,
        "value": option.raw_value,
        "line": option.line,
    }


def option_from_dict(project: str, data: dict) -> ConfigOption:
    value = str(data["value"])
    name = str(data["name"])
    return ConfigOption(
        project=project,
        file_path=str(data["file"]),
        technology=str(data["technology"]),
        name=name,
        raw_value=value,
        normalized=normalize_value(value, name),
        line=int(data.get("line", 1)),
    )


def candidate_to_dict(candidate: DependencyCandidate) -> dict:
    return {
        "id": candidate.id,
        "project": candidate.option_a.project,
        "option_a": option_to_dict(candidate.option_a),
        "option_b": option_to_dict(candidate.option_b),
        "detection": candidate.detection,
        "is_cross_technology": candidate.is_cross_technology,
    }


def candidate_from_dict(data: dict) -> DependencyCandidate:
    project = str(data["project"])
    a = option_from_dict(project, data["option_a"])
    b = option_from_dict(project, data["option_b"])
    return DependencyCandidate(
        id=str(data["id"]),
        option_a=a,
        option_b=b,
        detection=str(data.get("detection", "value_equality")),
        is_cross_technology=a.technology != b.technology,
    )
