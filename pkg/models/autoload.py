"""
Plugin Auto-loader
Loads consent transports from plugins/ by type and name
"""

import importlib
import logging
from pathlib import Path


class AutoLoader:
    """Dynamic plugin loader; plugins live in plugins/<type>_<name>.py."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.loaded_plugins = {}
        self.plugin_info = {}

    def load_plugin(self, plugin_type, plugin_name):
        """
        Load a plugin dynamically.

        Args:
            plugin_type (str): Type of plugin (transport)
            plugin_name (str): Name of the plugin (beacon, registry)

        Returns:
            module: Loaded plugin module or None if failed
        """
        plugin_key = f"{plugin_type}_{plugin_name}"
        if plugin_key in self.loaded_plugins:
            return self.loaded_plugins[plugin_key]

        try:
            plugin_module = importlib.import_module(f"plugins.{plugin_key}")
        except ImportError as e:
            self.logger.warning(f"Failed to load plugin {plugin_key}: {e}")
            return None

        self.loaded_plugins[plugin_key] = plugin_module
        if hasattr(plugin_module, 'get_info'):
            self.plugin_info[plugin_key] = plugin_module.get_info()
        self.logger.info(f"Loaded plugin: {plugin_key}")
        return plugin_module

    def get_available_plugins(self, plugin_type=None):
        """Names of plugins found on disk, optionally filtered by type."""
        plugins_dir = Path(__file__).parent.parent / "plugins"
        available = []
        for plugin_file in sorted(plugins_dir.glob("*.py")):
            if plugin_file.name.startswith("__"):
                continue
            name = plugin_file.stem
            if plugin_type:
                if not name.startswith(f"{plugin_type}_"):
                    continue
                name = name[len(plugin_type) + 1:]
            available.append(name)
        return available

    def get_plugin_info(self, plugin_type, plugin_name):
        plugin_key = f"{plugin_type}_{plugin_name}"
        if plugin_key not in self.loaded_plugins:
            self.load_plugin(plugin_type, plugin_name)
        return self.plugin_info.get(plugin_key)


def load_transport(name):
    """Transport plugin module for 'beacon' or 'registry'; raises ValueError otherwise."""
    module = AutoLoader().load_plugin('transport', name)
    if module is None or not hasattr(module, 'deliver'):
        raise ValueError(f"Unknown transport '{name}'")
    return module
