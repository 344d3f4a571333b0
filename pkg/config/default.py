import yaml
from pathlib import Path

DEFAULT_CONFIG = {
    'app': {
        'name': 'IoT Consent Framework',
        'version': '1.0.0'
    },
    'logging': {
        'level': 'INFO',
        'file': 'logs/consent.log',
        'console': True
    },
    'semantics': {
        'gateway_knows_check': False
    },
    'beacon': {
        'advertising_interval_ms': 250,
        'drop_probability': 0.0,
        'range_margin_m': 0.0
    },
    'registry': {
        'host': '127.0.0.1',
        'port': 8080,
        'url': 'http://127.0.0.1:8080',
        'tokens_file': 'tokens.yml',
        'token': None,
        'poll_period_ms': 2000,
        'lookahead_m': 0.0,
        'backoff_max_ms': 30000,
        'grid_cell_m': 0,
        'timeout_s': 5.0
    },
    'pdc': {
        'rules_file': 'rules.json',
        'retries': 3,
        'gateway': 'my-phone',
        'position': [0, 0],
        'identifiers': {}
    },
    'simulation': {
        'seed': 0,
        'transport': 'beacon',
        'sweep_period_ms': 1000,
        'consent_pull_period_ms': 1000,
        'out': 'output/trace.jsonl'
    }
}


def create_default_config(config_path):
    """Create a default config.yml file if it doesn't exist."""
    config_path = Path(config_path)
    config_path.parent.mkdir(parents=True, exist_ok=True)

    with open(config_path, 'w', encoding='utf-8') as file:
        yaml.dump(DEFAULT_CONFIG, file, default_flow_style=False, allow_unicode=True)

    print(f"Default configuration created at: {config_path}")
