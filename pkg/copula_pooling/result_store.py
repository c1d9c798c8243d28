import json
import logging
import os
import shutil
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

# --- Constants & Configuration ---
SCHEMA_VERSION = "1.0"
CODE_VERSION = "1.0.0"
MIN_FREE_SPACE_MB = 10
BACKUP_COUNT = 5
MANIFEST_FILE_NAME = "manifest.json"

class InsufficientStorageError(Exception):
    """Raised when disk space is below the safe threshold."""
    pass

class ResultWriteError(Exception):
    """Raised when a result file cannot be written."""
    pass

class ResultStore:
    """
    Writes run outputs under one directory:
    - atomic persistence (tmp file, fsync, os.replace)
    - storage guard before every write
    - schema-stamped manifest with rolling backups when a directory is reused
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.logger = logging.getLogger("ResultStore")
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    # --- Writes ---

    def write_text(self, name: str, text: str) -> Path:
        if not self._check_disk_space():
            raise InsufficientStorageError(f"Available disk space is below {MIN_FREE_SPACE_MB}MB.")
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        temp_file = target.parent / f"{target.name}.tmp"
        self._write_to_disk(temp_file, target, text)
        return target

    def write_json(self, name: str, payload: Any) -> Path:
        return self.write_text(name, json.dumps(payload, indent=2, sort_keys=False) + "\n")

    def write_manifest(self, payload: Dict[str, Any]) -> Path:
        """
        Stamps schema/code version and timestamp, backs up any previous manifest, writes atomically.
        """
        final_payload = {
            "schema_version": SCHEMA_VERSION,
            "code_version": CODE_VERSION,
            "written_at": datetime.now(timezone.utc).isoformat(),
            **payload,
        }
        self._manage_backups(self.path(MANIFEST_FILE_NAME))
        return self.write_json(MANIFEST_FILE_NAME, final_payload)

    def _write_to_disk(self, temp_file: Path, target: Path, text: str):
        """Physical write operations."""
        try:
            with open(temp_file, "w", encoding="utf-8", newline="") as f:
                f.write(text)
                f.flush()
                # Force write to physical disk
                os.fsync(f.fileno())

            # Atomic swap
            os.replace(temp_file, target)
            self.logger.debug(f"Atomic write successful: {target}")

        except Exception as e:
            if temp_file.exists():
                os.remove(temp_file)
            raise ResultWriteError(f"Failed to write {target}: {e}")

    # --- Reads ---

    def read_text(self, name: str) -> str:
        with open(self.path(name), "r", encoding="utf-8", newline="") as f:
            return f.read()

    def read_json(self, name: str) -> Any:
        return json.loads(self.read_text(name))

    def read_manifest(self) -> Optional[Dict[str, Any]]:
        """Loaded manifest, or None when missing. Warns on a schema mismatch."""
        if not self.path(MANIFEST_FILE_NAME).exists():
            return None
        data = self.read_json(MANIFEST_FILE_NAME)
        found = data.get("schema_version", "unknown")
        if found != SCHEMA_VERSION:
            self.logger.warning(f"Manifest schema {found} differs from {SCHEMA_VERSION}")
        return data

    def backups(self) -> List[Path]:
        return sorted(self.root.glob(f"{MANIFEST_FILE_NAME}.backup_*"), key=lambda p: p.name)

    # --- Guards ---

    def _check_disk_space(self) -> bool:
        """Checks if there is at least MIN_FREE_SPACE_MB available."""
        try:
            _, _, free = shutil.disk_usage(self.root)
            free_mb = free // (1024 * 1024)
            return free_mb >= MIN_FREE_SPACE_MB
        except Exception as e:
            self.logger.warning(f"Could not check disk space: {e}. Proceeding blindly.")
            return True

    def _manage_backups(self, target: Path):
        """Copies an existing manifest aside, keeping the newest BACKUP_COUNT copies."""
        if not target.exists():
            return

        timestamp = datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S_%f")
        backup_path = target.parent / f"{target.name}.backup_{timestamp}"

        try:
            shutil.copy2(target, backup_path)

            backups = self.backups()
            while len(backups) > BACKUP_COUNT:
                oldest = backups.pop(0)
                os.remove(oldest)

        except Exception as e:
            self.logger.error(f"Backup failed: {e}")
