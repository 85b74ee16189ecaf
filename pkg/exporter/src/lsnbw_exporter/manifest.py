"""Export manifests: what was converted, from where, and the result hash."""

from dataclasses import dataclass, field

from .errors import ExportError


@dataclass
class ExportManifest:
    source_model: str
    archive_sha256: str
    mapping: dict = field(default_factory=dict)   # source name -> archive name
    shapes: dict = field(default_factory=dict)    # archive name -> shape tuple

    def __post_init__(self):
        dests = list(self.mapping.values())
        if len(set(dests)) != len(dests):
            raise ExportError("manifest mapping is not injective")
        if set(self.shapes) != set(dests):
            raise ExportError("manifest must record a shape for every mapped tensor")


def manifest_path_for(archive_path) -> str:
    return f"{archive_path}.manifest"


def write_manifest(manifest: ExportManifest, path) -> None:
    lines = [f"source_model = {manifest.source_model}",
             f"archive_sha256 = {manifest.archive_sha256}"]
    for source, dest in manifest.mapping.items():
        dims = "x".join(str(d) for d in manifest.shapes[dest])
        lines.append(f"tensor {dest} <- {source} : {dims}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> ExportManifest:
    header = {}
    mapping = {}
    shapes = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("tensor "):
                try:
                    body = line[len("tensor "):]
                    names, dims = (part.strip() for part in body.rsplit(":", 1))
                    dest, source = (part.strip() for part in names.split("<-"))
                    shape = tuple(int(d) for d in dims.split("x"))
                except ValueError:
                    raise ExportError(f"bad manifest tensor line: {raw!r}") from None
                mapping[source] = dest
                shapes[dest] = shape
            elif " = " in line:
                key, value = line.split(" = ", 1)
                header[key] = value
            else:
                raise ExportError(f"bad manifest line: {raw!r}")
    try:
        return ExportManifest(source_model=header["source_model"],
                              archive_sha256=header["archive_sha256"],
                              mapping=mapping, shapes=shapes)
    except KeyError as exc:
        raise ExportError(f"manifest missing field {exc}") from None
