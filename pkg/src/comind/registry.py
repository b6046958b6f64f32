"""Image artifact library for one episode workspace.

Inputs get ``IMG_###`` identities, generated figures get ``GEN_###``, both
zero-padded, assigned in registration order and capped at 999 per series by
the three-digit format.  Every artifact is normalized to a PNG file in the
workspace next to an append-only ``manifest.jsonl``, so re-opening the
workspace reconstructs the registry exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

MANIFEST_NAME = "manifest.jsonl"
SERIES_CAP = 999

_SOURCE_PREFIX = {"input": "IMG", "generated": "GEN"}


class RegistryError(Exception):
    pass


class UndecodableImage(RegistryError):
    pass


class WorkspaceWriteFailure(RegistryError):
    pass


class SeriesExhausted(RegistryError):
    pass


class UnknownId(RegistryError):
    pass


@dataclass
class ImageArtifact:
    id: str
    source: str  # "input" | "generated"
    path: str  # workspace-relative file name
    created_at_seq: int
    note: str = ""


class ArtifactRegistry:
    def __init__(self, workspace: Path | str) -> None:
        self.workspace = Path(workspace)
        try:
            self.workspace.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise WorkspaceWriteFailure(str(exc)) from exc
        self._artifacts: dict[str, ImageArtifact] = {}
        self._order: list[str] = []
        self._counts = {"input": 0, "generated": 0}
        manifest = self.workspace / MANIFEST_NAME
        if manifest.exists():
            self._load_manifest(manifest)

    def _load_manifest(self, manifest: Path) -> None:
        for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                artifact = ImageArtifact(
                    id=obj["id"],
                    source=obj["source"],
                    path=obj["path"],
                    created_at_seq=obj["created_at_seq"],
                    note=obj.get("note", ""),
                )
            except (KeyError, ValueError) as exc:
                raise RegistryError(f"{manifest}:{line_no}: bad manifest line: {exc}") from exc
            if not (self.workspace / artifact.path).exists():
                raise RegistryError(f"manifest lists missing file: {artifact.path}")
            self._artifacts[artifact.id] = artifact
            self._order.append(artifact.id)
            self._counts[artifact.source] += 1

    def register_input(self, image_bytes: bytes, note: str = "") -> ImageArtifact:
        return self._register("input", image_bytes, note, created_at_seq=-1)

    def register_generated(self, image_bytes: bytes, note: str = "", seq: int = -1) -> ImageArtifact:
        return self._register("generated", image_bytes, note, created_at_seq=seq)

    def _register(self, source: str, image_bytes: bytes, note: str, created_at_seq: int) -> ImageArtifact:
        if not image_bytes:
            raise UndecodableImage("empty image bytes")
        number = self._counts[source] + 1
        if number > SERIES_CAP:
            raise SeriesExhausted(f"{_SOURCE_PREFIX[source]} series holds at most {SERIES_CAP}")
        artifact_id = f"{_SOURCE_PREFIX[source]}_{number:03d}"
        file_name = f"{artifact_id}.png"
        png_bytes = _to_png(image_bytes)
        try:
            (self.workspace / file_name).write_bytes(png_bytes)
        except OSError as exc:
            raise WorkspaceWriteFailure(str(exc)) from exc
        artifact = ImageArtifact(
            id=artifact_id, source=source, path=file_name, created_at_seq=created_at_seq, note=note
        )
        self._append_manifest(artifact)
        self._artifacts[artifact_id] = artifact
        self._order.append(artifact_id)
        self._counts[source] = number
        return artifact

    def _append_manifest(self, artifact: ImageArtifact) -> None:
        line = json.dumps(
            {
                "id": artifact.id,
                "source": artifact.source,
                "path": artifact.path,
                "created_at_seq": artifact.created_at_seq,
                "note": artifact.note,
            },
            ensure_ascii=False,
            separators=(",", ":"),
        )
        try:
            with (self.workspace / MANIFEST_NAME).open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise WorkspaceWriteFailure(str(exc)) from exc

    def resolve(self, artifact_id: str) -> ImageArtifact:
        try:
            return self._artifacts[artifact_id]
        except KeyError:
            raise UnknownId(artifact_id) from None

    def resolve_bytes(self, artifact_id: str) -> bytes:
        artifact = self.resolve(artifact_id)
        return (self.workspace / artifact.path).read_bytes()

    def list_available(self) -> list[ImageArtifact]:
        return [self._artifacts[artifact_id] for artifact_id in self._order]

    def __contains__(self, artifact_id: str) -> bool:
        return artifact_id in self._artifacts


def _to_png(image_bytes: bytes) -> bytes:
    """Validate the raster and normalize to PNG (original bytes are kept
    verbatim when they already are a PNG)."""
    try:
        with Image.open(io.BytesIO(image_bytes)) as img:
            fmt = img.format
            img.load()
            if fmt == "PNG":
                return image_bytes
            out = io.BytesIO()
            converted = img.convert("RGBA") if img.mode in ("P", "LA") else img
            converted.save(out, format="PNG")
            return out.getvalue()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"not a decodable raster image: {exc}") from exc
