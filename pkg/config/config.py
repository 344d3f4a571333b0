import os
from pathlib import Path

import yaml

from helper.errors import ConfigFileError

ENV_PREFIX = "CONSENT_"
DEFAULT_PATH = Path(__file__).parent.parent / "config.yml"


class Config:
    """
    Settings read from config.yml and addressed by dotted keys.

    Passing data skips the file entirely; tests build configs that way.
    """

    def __init__(self, config_path=None, data=None):
        self.config_path = Path(config_path or DEFAULT_PATH)
        self._settings = data if data is not None else self._read()

    def _read(self):
        if not self.config_path.exists():
            from .default import create_default_config
            create_default_config(self.config_path)
        try:
            with open(self.config_path, 'r', encoding='utf-8') as file:
                return yaml.safe_load(file) or {}
        except yaml.YAMLError as e:
            raise ConfigFileError(f"{self.config_path} is not valid YAML: {e}")

    def get(self, key_path, default=None):
        """Value at a dotted key such as 'beacon.advertising_interval_ms', or default."""
        node = self._settings
        for key in key_path.split('.'):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def update(self, key_path, value):
        """Set a dotted key, creating sections on the way, and write the file."""
        *sections, leaf = key_path.split('.')
        node = self._settings
        for key in sections:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[leaf] = value
        with open(self.config_path, 'w', encoding='utf-8') as file:
            yaml.safe_dump(self._settings, file, default_flow_style=False, allow_unicode=True)


_config_instance = None


def get_config():
    """Process-wide Config read from the default path on first use."""
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance


def load_env_variables():
    env_path = DEFAULT_PATH.parent / ".env"
    if env_path.exists():
        from dotenv import load_dotenv
        load_dotenv(env_path)


def env_override(name, default=None):
    """Value of CONSENT_<NAME> from the environment, or default."""
    return os.environ.get(f"{ENV_PREFIX}{name.upper()}", default)
