"""
Manifest Module - run manifests that make every command reproducible.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

from services import TOOL_VERSION
from storage import file_sha256


@dataclass
class RunManifest:
    command: str
    config: Dict
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    version: str = TOOL_VERSION

    def add_inputs(self, paths: Iterable[Optional[str]]) -> None:
        """Hash input files, keyed by the path as given."""
        for path in paths:
            if path and os.path.isfile(path):
                self.inputs[path] = file_sha256(path)
            elif path and os.path.isdir(path):
                for name in sorted(os.listdir(path)):
                    full = os.path.join(path, name)
                    if os.path.isfile(full):
                        self.inputs[full] = file_sha256(full)

    def add_artifacts(self, paths: Iterable[str]) -> None:
        """Hash written files, keyed by file name so output directories can differ."""
        for path in paths:
            self.artifacts[os.path.basename(path)] = file_sha256(path)

    def to_dict(self) -> Dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "artifacts": dict(sorted(self.artifacts.items())),
            "version": self.version,
        }
