"""Clinical assistant stack: FHIR R4 tools over MCP, persona-aware agent, streaming chat service."""

__version__ = "0.1.0"
