from flask import Flask, request, jsonify
import logging

from helper.errors import RegistryError
from models.state import Declaration, DeviceId, Position
from utils.registry import ConsentRecord, RegistryStore

logger = logging.getLogger(__name__)


def bearer_token():
    """Token from an 'Authorization: Bearer <token>' header, or None."""
    header = request.headers.get('Authorization', '')
    scheme, _, token = header.partition(' ')
    if scheme.lower() != 'bearer' or not token.strip():
        return None
    return token.strip()


def parse_device_id(text):
    try:
        return DeviceId.from_hex(text)
    except ValueError:
        raise RegistryError(400, f"Invalid device id '{text}'")


def create_app(store: RegistryStore):
    """Build the registry HTTP/JSON API around a store."""
    app = Flask(__name__)
    app.config['REGISTRY_STORE'] = store

    @app.errorhandler(RegistryError)
    def registry_error(e):
        if e.status >= 500:
            logger.error(f"Registry failure: {e.message}")
        return jsonify({'error': e.message}), e.status

    @app.route('/devices/<device_id>', methods=['PUT'])
    def put_device(device_id):
        data = request.get_json(silent=True)
        if not isinstance(data, dict):
            return jsonify({'error': 'JSON body is required'}), 400
        try:
            decl = Declaration.from_dict({**data, 'device_id': device_id})
        except (KeyError, TypeError, ValueError) as e:
            return jsonify({'error': f'Invalid declaration: {e}'}), 400
        record = store.put_device(decl, bearer_token())
        return jsonify(record.to_dict())

    @app.route('/devices/<device_id>', methods=['GET'])
    def get_device(device_id):
        return jsonify(store.get_device(parse_device_id(device_id)).to_dict())

    @app.route('/devices/<device_id>', methods=['DELETE'])
    def delete_device(device_id):
        record = store.delete_device(parse_device_id(device_id), bearer_token())
        return jsonify({'success': True, 'device_id': record.device_id.hex()})

    @app.route('/devices', methods=['GET'])
    def nearby():
        try:
            x = float(request.args['x'])
            y = float(request.args['y'])
            radius = float(request.args.get('radius', 0))
        except (KeyError, ValueError):
            return jsonify({'error': 'x, y and radius must be numbers'}), 400
        records = store.nearby(Position.from_meters(x, y), radius)
        return jsonify({'devices': [r.to_dict() for r in records]})

    @app.route('/consents', methods=['POST'])
    def post_consent():
        data = request.get_json(silent=True)
        if not isinstance(data, dict):
            return jsonify({'error': 'JSON body is required'}), 400
        try:
            record = ConsentRecord.from_dict(data)
        except (KeyError, TypeError, ValueError) as e:
            return jsonify({'error': f'Invalid consent: {e}'}), 400
        stored = store.post_consent(record, bearer_token())
        return jsonify(stored.to_dict()), 201

    @app.route('/consents', methods=['GET'])
    def get_consents():
        device_id = request.args.get('device_id')
        if not device_id:
            return jsonify({'error': 'device_id is required'}), 400
        try:
            since = int(request.args.get('since', 0))
        except ValueError:
            return jsonify({'error': 'since must be an integer timestamp'}), 400
        records = store.get_consents(parse_device_id(device_id), since, bearer_token())
        return jsonify({'consents': [r.to_dict() for r in records]})

    return app
