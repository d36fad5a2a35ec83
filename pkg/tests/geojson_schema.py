"""Minimal RFC 7946 schema, used as an independent check on exported documents."""

import jsonschema

_position = {"type": "array", "minItems": 2, "maxItems": 3,
             "items": {"type": "number"},
             "prefixItems": [{"type": "number", "minimum": -180, "maximum": 180},
                             {"type": "number", "minimum": -90, "maximum": 90}]}

_geometry = {
    "oneOf": [
        {"type": "object", "required": ["type", "coordinates"],
         "properties": {"type": {"const": "Point"}, "coordinates": _position}},
        {"type": "object", "required": ["type", "coordinates"],
         "properties": {"type": {"const": "LineString"},
                        "coordinates": {"type": "array", "minItems": 2, "items": _position}}},
    ]
}

FEATURE_COLLECTION = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["type", "features"],
    "properties": {
        "type": {"const": "FeatureCollection"},
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "geometry", "properties"],
                "properties": {
                    "type": {"const": "Feature"},
                    "geometry": _geometry,
                    "properties": {"type": ["object", "null"]},
                    "id": {"type": ["string", "number"]},
                },
            },
        },
    },
}


def validate(doc):
    jsonschema.validate(doc, FEATURE_COLLECTION, cls=jsonschema.Draft202012Validator)
