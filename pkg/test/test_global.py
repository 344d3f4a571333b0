#!/usr/bin/env python3
"""
Global Test Suite for the IoT Consent Framework
Environment, configuration and layout checks for all components
"""

import os
import sys
import unittest
import tempfile
import shutil
from pathlib import Path
import yaml

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))


def safe_import(module_name, class_name=None):
    """Safely import modules and return None if not available."""
    try:
        module = __import__(module_name, fromlist=[class_name] if class_name else [])
        return getattr(module, class_name) if class_name else module
    except (ImportError, AttributeError):
        return None


def _check_module_availability(module_name, class_name=None):
    """Helper function to check if a module/class is available and return status."""
    component = safe_import(module_name, class_name)
    if component:
        print(f"✅ {module_name}{f'.{class_name}' if class_name else ''}: Available")
        return True
    print(f"❌ {module_name}{f'.{class_name}' if class_name else ''}: Not Available")
    return False


class GlobalTestSuite(unittest.TestCase):
    """Shared temporary environment for the global checks."""

    @classmethod
    def setUpClass(cls):
        """Set up test environment once for all tests."""
        print("🧪 Setting up Global Test Environment...")
        cls.test_dir = tempfile.mkdtemp()
        cls.original_cwd = os.getcwd()

        cls.test_config = {
            'app': {'name': 'IoT Consent Framework Test', 'version': '1.0.0-test'},
            'logging': {'level': 'DEBUG', 'file': 'logs/test.log', 'console': False},
            'beacon': {'advertising_interval_ms': 250, 'drop_probability': 0.0, 'range_margin_m': 0.0},
            'registry': {'poll_period_ms': 2000, 'lookahead_m': 0.0, 'grid_cell_m': 0},
            'simulation': {'seed': 0, 'transport': 'beacon', 'sweep_period_ms': 1000},
        }
        cls.config_file = Path(cls.test_dir) / 'config.yml'
        with open(cls.config_file, 'w') as f:
            yaml.dump(cls.test_config, f)
        print(f"✅ Test environment created: {cls.test_dir}")

    @classmethod
    def tearDownClass(cls):
        """Clean up test environment."""
        os.chdir(cls.original_cwd)
        try:
            shutil.rmtree(cls.test_dir)
            print("✅ Test environment cleaned up")
        except Exception as e:
            print(f"⚠️  Failed to clean up test directory: {e}")

    def setUp(self):
        os.chdir(self.test_dir)
        Path('logs').mkdir(exist_ok=True)


class TestModuleAvailability(GlobalTestSuite):
    """Test availability of all framework modules."""

    def test_core_modules(self):
        modules = [
            ('config.config', 'Config'),
            ('models.policy', 'Policy'),
            ('models.state', 'SystemState'),
            ('models.receipt', 'ReceiptLog'),
            ('utils.semantics', 'SemanticsEngine'),
            ('utils.beacon', 'BeaconEndpoint'),
            ('utils.registry', 'RegistryStore'),
            ('utils.pdc', 'PersonalDataCustodian'),
            ('utils.scenario', 'ScenarioSimulator'),
        ]
        missing = [name for name, cls in modules if not _check_module_availability(name, cls)]
        self.assertEqual(missing, [], f"Core modules unavailable: {missing}")

    def test_transport_plugins(self):
        from models.autoload import AutoLoader

        loader = AutoLoader()
        available = loader.get_available_plugins('transport')
        print(f"🔌 Transports: {available}")
        self.assertIn('beacon', available)
        self.assertIn('registry', available)
        for name in ('beacon', 'registry'):
            info = loader.get_plugin_info('transport', name)
            self.assertEqual(info['type'], 'transport')


class TestConfiguration(GlobalTestSuite):
    """Test configuration functionality."""

    def test_config_reads_dot_paths(self):
        from config.config import Config

        config = Config(self.config_file)
        self.assertEqual(config.get('beacon.advertising_interval_ms'), 250)
        self.assertEqual(config.get('registry.missing', 'fallback'), 'fallback')
        self.assertIsNone(config.get('nothing.here'))

    def test_config_update_and_save(self):
        from config.config import Config

        path = Path(self.test_dir) / 'updated.yml'
        shutil.copy(self.config_file, path)
        config = Config(path)
        config.update('simulation.seed', 42)
        self.assertEqual(Config(path).get('simulation.seed'), 42)

    def test_default_config_created_when_missing(self):
        from config.config import Config

        path = Path(self.test_dir) / 'fresh' / 'config.yml'
        config = Config(path)
        self.assertTrue(path.exists())
        self.assertEqual(config.get('simulation.sweep_period_ms'), 1000)
        self.assertEqual(config.get('pdc.retries'), 3)

    def test_invalid_yaml_raises_config_error(self):
        from config.config import Config
        from helper.errors import ConfigFileError

        path = Path(self.test_dir) / 'broken.yml'
        path.write_text("beacon: [unclosed\n", encoding='utf-8')
        with self.assertRaises(ConfigFileError) as ctx:
            Config(path)
        self.assertEqual(ctx.exception.error_code, 'CONFIG_INVALID')

    def test_update_creates_missing_sections(self):
        from config.config import Config

        path = Path(self.test_dir) / 'sections.yml'
        config = Config(path, data={})
        config.update('registry.grid_cell_m', 25)
        self.assertEqual(Config(path).get('registry.grid_cell_m'), 25)

    def test_env_override_prefix(self):
        from config.config import env_override

        os.environ['CONSENT_SEED'] = '9'
        try:
            self.assertEqual(env_override('seed'), '9')
        finally:
            del os.environ['CONSENT_SEED']
        self.assertEqual(env_override('seed', 'none'), 'none')


class TestLogging(GlobalTestSuite):
    """Test logging setup."""

    def test_setup_logging_creates_log_directory(self):
        from config.config import Config
        from app import setup_logging

        config = Config(data={'logging': {'level': 'INFO', 'file': str(Path(self.test_dir) / 'deep' / 'x.log'),
                                          'console': False}})
        logger = setup_logging(config)
        self.assertIsNotNone(logger)
        self.assertTrue((Path(self.test_dir) / 'deep').is_dir())


class TestFileSystem(GlobalTestSuite):
    """Test file system structure."""

    def test_directory_structure(self):
        base_path = Path(__file__).parent.parent
        required = ['assets/scenarios', 'config', 'helper', 'models', 'plugins', 'service', 'utils', 'test']
        missing = [d for d in required if not (base_path / d).exists()]
        self.assertEqual(missing, [])

    def test_bundled_scenarios(self):
        base_path = Path(__file__).parent.parent / 'assets' / 'scenarios'
        for name in ('anpr_basic', 'anpr_refuse', 'mall_walk', 'meeting_room'):
            self.assertTrue((base_path / f'{name}.json').exists(), name)

    def test_config_files(self):
        base_path = Path(__file__).parent.parent
        for file_name in ('config.yml', '.env.example', 'requirements.txt', 'tokens.example.yml'):
            self.assertTrue((base_path / file_name).exists(), file_name)


def run_global_tests():
    """Run the complete global test suite."""
    print("=" * 80)
    print("🧪 IOT CONSENT FRAMEWORK - GLOBAL TEST SUITE")
    print("=" * 80)

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for test_class in (TestModuleAvailability, TestConfiguration, TestLogging, TestFileSystem):
        suite.addTests(loader.loadTestsFromTestCase(test_class))

    runner = unittest.TextTestRunner(verbosity=2, stream=sys.stdout)
    result = runner.run(suite)

    print()
    print("=" * 80)
    print(f"Tests run: {result.testsRun}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")
    return result.wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_global_tests() else 1)
