# normunit/utils/artifacts.py
import hashlib
import json
import logging
import shutil
from pathlib import Path

from normunit.utils.errors import MissingArtifactError
from normunit.utils.file_formats import read_json, write_json

logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.json'
HASHES_FILE = 'hashes.json'


def fingerprint(payload):
    """sha256 of the canonical JSON encoding of ``payload``."""
    encoded = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(encoded.encode('utf-8')).hexdigest()


def file_digest(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


class StageArtifact:
    """One stage output directory: ``<root>/<stage>/<fingerprint[:16]>``."""

    def __init__(self, root, stage, fingerprint_value, config):
        self.stage = stage
        self.fingerprint = fingerprint_value
        self.config = config
        self.path = Path(root) / stage / fingerprint_value[:16]

    def file(self, *parts):
        return self.path.joinpath(*parts)

    @property
    def complete(self):
        return self.file(HASHES_FILE).exists()

    def begin(self):
        """Start from an empty directory and record the resolved config."""
        if self.path.exists():
            logger.info(f"Stage '{self.stage}' clearing earlier output at {self.path}")
            shutil.rmtree(self.path)
        self.path.mkdir(parents=True)
        write_json(self.file(CONFIG_FILE), {
            'stage': self.stage,
            'fingerprint': self.fingerprint,
            'config': self.config
        })
        logger.info(f"Stage '{self.stage}' writing to {self.path}")
        return self

    def seal(self):
        """Write the content hash manifest; marks the artifact complete."""
        hashes = {
            str(path.relative_to(self.path)): file_digest(path)
            for path in sorted(self.path.rglob('*'))
            if path.is_file() and path.name != HASHES_FILE
        }
        write_json(self.file(HASHES_FILE), hashes)
        logger.info(f"Stage '{self.stage}' sealed with {len(hashes)} files")
        return hashes

    def hashes(self):
        return read_json(self.file(HASHES_FILE))

    def content_hash(self):
        """Digest over the sealed per-file hashes; equal for byte-identical outputs."""
        return fingerprint(self.hashes())

    def require(self):
        """
        Ensure the artifact exists.

        Raises:
            MissingArtifactError: Naming the subcommand that produces it
        """
        if not self.complete:
            raise MissingArtifactError(self.stage, self.path)
        return self


class ArtifactStore:
    """Content-addressed stage directories under an output root."""

    def __init__(self, root):
        self.root = Path(root)

    def stage(self, stage, config, upstream=()):
        """
        Resolve the artifact for ``stage`` given its config block and upstream artifacts.

        Args:
            stage: Producing subcommand name
            config: JSON-serializable config relevant to the stage
            upstream: Upstream StageArtifacts whose fingerprints feed this one

        Returns:
            StageArtifact (not necessarily existing on disk)
        """
        payload = {
            'stage': stage,
            'config': config,
            'upstream': {artifact.stage: artifact.fingerprint for artifact in upstream}
        }
        return StageArtifact(self.root, stage, fingerprint(payload), payload)
