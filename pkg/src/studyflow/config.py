"""Server configuration: JSON file plus environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

ENV_ADDR = "STUDYFLOW_ADDR"
ENV_ADMIN_TOKEN = "STUDYFLOW_ADMIN_TOKEN"
ENV_DATA_DIR = "STUDYFLOW_DATA_DIR"
ENV_TTL = "STUDYFLOW_SUSPENSION_TTL_SECONDS"


@dataclass
class ServerConfig:
    address: str = "127.0.0.1:8000"
    data_dir: str = "./studyflow-data"
    suspension_ttl_seconds: float = 86400.0
    admin_token: str = ""
    # Fixture names and/or paths to study manifest files to serve.
    studies: list[str] = field(default_factory=lambda: ["example-study", "example", "depth3"])
    # Test mode honors the X-Studyflow-Seed request header so step-local
    # randomness can be forced deterministically.
    test_mode: bool = False
    # Test hook: retain consumed pages instead of forgetting them. Exists so
    # the leak detector can be shown to catch the failure it guards against.
    disable_page_forget: bool = False
    # Optional directory of static dashboard assets served under /admin/ui.
    dashboard_dir: str | None = None

    @property
    def host(self) -> str:
        return self.address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.address.rsplit(":", 1)[1])

    @classmethod
    def load(cls, path: str | Path | None = None,
             overrides: Mapping[str, Any] | None = None) -> "ServerConfig":
        """Config file values, then environment, then explicit overrides."""
        data: dict[str, Any] = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                data.update(json.load(fh))
        if ENV_ADDR in os.environ:
            data["address"] = os.environ[ENV_ADDR]
        if ENV_ADMIN_TOKEN in os.environ:
            data["admin_token"] = os.environ[ENV_ADMIN_TOKEN]
        if ENV_DATA_DIR in os.environ:
            data["data_dir"] = os.environ[ENV_DATA_DIR]
        if ENV_TTL in os.environ:
            data["suspension_ttl_seconds"] = float(os.environ[ENV_TTL])
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = value
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)
