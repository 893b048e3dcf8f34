"""JSON Schema documents for the CLI's machine-readable outputs.

These are plain dicts so callers can validate CLI output with any JSON
Schema implementation; the package itself never needs one at runtime.
"""

_MANIFEST = {
    "type": "object",
    "required": ["tool", "version", "command"],
    "properties": {
        "tool": {"const": "ltrf"},
        "version": {"type": "string"},
        "command": {"type": "string"},
        "arguments": {"type": "object"},
    },
}

_HEX_VECTOR = {"type": "string", "pattern": "^[0-9a-f]{64}$"}

_INTERVAL = {
    "type": "object",
    "required": ["id", "header", "blocks", "working_set", "closed", "is_call"],
    "properties": {
        "id": {"type": "integer", "minimum": 0},
        "header": {"type": "integer", "minimum": 0},
        "blocks": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "working_set": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "closed": {"type": "boolean"},
        "is_call": {"type": "boolean"},
    },
}

INTERVALS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["manifest", "block_count", "intervals", "markers", "conflicts"],
    "properties": {
        "manifest": _MANIFEST,
        "source": {"type": "string"},
        "max_regs": {"type": "integer", "minimum": 1},
        "boundary_mode": {"enum": ["interval", "strand"]},
        "block_count": {"type": "integer", "minimum": 0},
        "intervals": {"type": "array", "items": _INTERVAL},
        "markers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["instruction", "interval"],
                "properties": {
                    "instruction": {"type": "integer", "minimum": 0},
                    "interval": {"type": "integer", "minimum": 0},
                    "working_set_vector": _HEX_VECTOR,
                    "live_in_vector": _HEX_VECTOR,
                },
            },
        },
        "conflicts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "code_size_bits": {
            "type": "object",
            "required": ["embedded", "explicit"],
            "properties": {
                "embedded": {"type": "integer", "minimum": 0},
                "explicit": {"type": "integer", "minimum": 0},
            },
        },
    },
}

RENUMBER_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "manifest",
        "ranges",
        "assignment",
        "conflicts_before",
        "conflicts_after",
        "program",
    ],
    "properties": {
        "manifest": _MANIFEST,
        "source": {"type": "string"},
        "banks": {"type": "integer", "minimum": 1},
        "bank_map": {"enum": ["mod", "div"]},
        "max_regs": {"type": "integer", "minimum": 1},
        "ranges": {"type": "integer", "minimum": 0},
        "uncolored": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "assignment": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "conflicts_before": {
            "type": "array",
            "items": {"type": "integer", "minimum": 0},
        },
        "conflicts_after": {
            "type": "array",
            "items": {"type": "integer", "minimum": 0},
        },
        "program": {"type": "string"},
    },
}

_SIM_RESULT = {
    "type": "object",
    "required": ["design", "multiplier", "instructions", "cycles", "ipc"],
    "properties": {
        "design": {"enum": ["BL", "RFC", "LTRF", "LTRF_PLUS", "LTRF_CONF"]},
        "multiplier": {"type": "string"},
        "instructions": {"type": "integer", "minimum": 0},
        "cycles": {"type": "integer", "minimum": 0},
        "ipc": {"type": "number", "minimum": 0},
        "ipc_exact": {"type": "string"},
        "main_rf_accesses": {"type": "integer", "minimum": 0},
        "cache_accesses": {"type": "integer", "minimum": 0},
        "cache_hits": {"type": "integer", "minimum": 0},
        "cache_hit_rate": {"type": ["number", "null"]},
        "prefetch_count": {"type": "integer", "minimum": 0},
        "fetched_registers": {"type": "integer", "minimum": 0},
        "written_back_registers": {"type": "integer", "minimum": 0},
        "demand_main_rf_in_interval": {"type": "integer", "minimum": 0},
        "activations": {"type": "integer", "minimum": 0},
        "deactivations": {"type": "integer", "minimum": 0},
        "prefetch_latency_histogram": {"type": "object"},
        "conflict_histogram": {"type": "object"},
    },
}

SIMULATE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["manifest", "input_kind", "results"],
    "properties": {
        "manifest": _MANIFEST,
        "input": {"type": "string"},
        "input_kind": {"enum": ["program", "trace"]},
        "warps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "results": {"type": "array", "items": _SIM_RESULT},
        "tolerable_latency": {
            "type": "object",
            "additionalProperties": {"type": "string"},
        },
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["manifest", "runs"],
    "properties": {
        "manifest": _MANIFEST,
        "runs": {"type": "array", "items": _SIM_RESULT},
        "tolerable_latency": {
            "type": "object",
            "additionalProperties": {"type": "string"},
        },
    },
}
