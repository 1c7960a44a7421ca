//! OpenAPI-style description of the JSON API, served at `/api/schema`.

use serde_json::{json, Value};

pub fn api_schema() -> Value {
    let error = json!({
        "type": "object",
        "required": ["error", "detail"],
        "properties": {
            "error": {"type": "string", "description": "machine-readable code"},
            "detail": {"type": "string"}
        }
    });
    json!({
        "openapi": "3.0.3",
        "info": {"title": "mpseg", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/api/health": {"get": {"responses": {
                "200": {"$ref": "#/components/schemas/Health"},
                "503": {"$ref": "#/components/schemas/Health"}
            }}},
            "/api/segment": {"post": {
                "requestBody": {"multipart/form-data": {
                    "file": "PNG or JPEG image, at least 32x32",
                    "threshold": "optional probability in (0, 1); also accepted as ?threshold="
                }},
                "responses": {
                    "200": {"$ref": "#/components/schemas/SegmentResponse"},
                    "400": {"$ref": "#/components/schemas/Error"},
                    "413": {"$ref": "#/components/schemas/Error"},
                    "503": {"$ref": "#/components/schemas/Error"}
                }
            }},
            "/api/study/sessions": {"post": {
                "requestBody": {"$ref": "#/components/schemas/CreateSession"},
                "responses": {"201": {"$ref": "#/components/schemas/SessionCreated"}, "400": {"$ref": "#/components/schemas/Error"}}
            }},
            "/api/study/sessions/{id}/next": {"get": {"responses": {
                "200": {"$ref": "#/components/schemas/NextTrial"},
                "404": {"$ref": "#/components/schemas/Error"}
            }}},
            "/api/study/sessions/{id}/responses": {"post": {
                "requestBody": {"$ref": "#/components/schemas/SubmitResponse"},
                "responses": {
                    "200": {"$ref": "#/components/schemas/ResponseAccepted"},
                    "400": {"$ref": "#/components/schemas/Error"},
                    "404": {"$ref": "#/components/schemas/Error"},
                    "409": {"$ref": "#/components/schemas/Error"}
                }
            }},
            "/api/study/sessions/{id}/report": {"get": {"responses": {
                "200": {"$ref": "#/components/schemas/StudyReport"},
                "404": {"$ref": "#/components/schemas/Error"},
                "409": {"$ref": "#/components/schemas/Error"}
            }}}
        },
        "components": {"schemas": {
            "Error": error,
            "Health": {
                "type": "object",
                "required": ["status", "model_id", "version"],
                "properties": {
                    "status": {"type": "string", "enum": ["ok", "model_not_loaded"]},
                    "model_id": {"type": ["string", "null"]},
                    "version": {"type": "string"}
                }
            },
            "SegmentResponse": {
                "type": "object",
                "required": ["mask", "width", "height", "coverage_fraction", "particle_count", "threshold_used", "model_id", "elapsed_ms"],
                "properties": {
                    "mask": {"type": "string", "description": "base64 PNG, 8-bit grey, 255 = microplastic, same size as the upload"},
                    "width": {"type": "integer"},
                    "height": {"type": "integer"},
                    "coverage_fraction": {"type": "number"},
                    "particle_count": {"type": "integer", "description": "8-connected foreground components"},
                    "threshold_used": {"type": "number"},
                    "model_id": {"type": "string"},
                    "elapsed_ms": {"type": "number"}
                }
            },
            "CreateSession": {
                "type": "object",
                "required": ["real_manifest", "generated_manifest", "n_per_class", "seed"],
                "properties": {
                    "real_manifest": {"type": "string", "description": "server-side manifest path"},
                    "generated_manifest": {"type": "string"},
                    "n_per_class": {"type": "integer"},
                    "seed": {"type": "integer"}
                }
            },
            "SessionCreated": {
                "type": "object",
                "required": ["session_id", "n_trials"],
                "properties": {"session_id": {"type": "string"}, "n_trials": {"type": "integer"}}
            },
            "NextTrial": {
                "type": "object",
                "required": ["done"],
                "properties": {
                    "done": {"type": "boolean"},
                    "trial_index": {"type": "integer"},
                    "n_trials": {"type": "integer"},
                    "answered": {"type": "integer"},
                    "image_png_base64": {"type": "string"}
                }
            },
            "SubmitResponse": {
                "type": "object",
                "required": ["trial_index", "answer"],
                "properties": {
                    "trial_index": {"type": "integer"},
                    "answer": {"type": "string", "enum": ["REAL", "GENERATED"]}
                }
            },
            "ResponseAccepted": {
                "type": "object",
                "required": ["answered", "n_trials"],
                "properties": {"answered": {"type": "integer"}, "n_trials": {"type": "integer"}}
            },
            "StudyReport": {
                "type": "object",
                "required": ["accuracy", "correct", "n_trials", "per_class", "confusion"],
                "properties": {
                    "accuracy": {"type": "number"},
                    "correct": {"type": "integer"},
                    "n_trials": {"type": "integer"},
                    "per_class": {"type": "object"},
                    "confusion": {"type": "array", "description": "rows truth REAL, GENERATED; columns answer REAL, GENERATED"}
                }
            }
        }}
    })
}
